"""Deterministic synthetic fragmentation spectra.

Fragments are the connected pieces left after cutting up to
``max_bond_breaks`` acyclic bonds.  Each fragment gives one peak at its
neutral mass plus the adduct shift.  Intensities tilt towards light
fragments as collision energy grows, and the intact precursor decays with
collision energy, so the intensity-weighted mean m/z falls with energy.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

from .chem import MolecularGraph, parse_smiles, read_molecule_file, scaffold_key
from .spectra import Peak, Spectrum, SpectrumMetadata, write_msp

__all__ = [
    "OracleConfig",
    "Fragment",
    "enumerate_fragments",
    "molecule_mass",
    "simulate_spectrum",
    "generate_dataset",
    "DatasetSummary",
    "MONOISOTOPIC_MASSES",
    "ADDUCT_SHIFTS",
]

MONOISOTOPIC_MASSES = {
    "C": 12.000,
    "H": 1.00783,
    "N": 14.00307,
    "O": 15.99491,
    "S": 31.97207,
    "P": 30.97376,
    "F": 18.99840,
    "Cl": 34.96885,
    "Br": 78.91834,
    "I": 126.90447,
}

ADDUCT_SHIFTS = {
    "[M+H]+": 1.00728,
    "[M+Na]+": 22.98922,
}


@dataclass(frozen=True)
class OracleConfig:
    max_bond_breaks: int = 2
    ce_softness: float = 0.05
    precursor_decay: float = 40.0
    adduct_mass_shift: dict = field(default_factory=lambda: dict(ADDUCT_SHIFTS))
    monoisotopic_masses: dict = field(default_factory=lambda: dict(MONOISOTOPIC_MASSES))
    collision_type: str = "HCD"

    def __post_init__(self):
        if self.max_bond_breaks < 0:
            raise ValueError("max_bond_breaks must be >= 0")
        if not (self.ce_softness > 0 and self.precursor_decay > 0):
            raise ValueError("ce_softness and precursor_decay must be positive")
        if any(not m > 0 for m in self.monoisotopic_masses.values()):
            raise ValueError("masses must be positive")


@dataclass(frozen=True)
class Fragment:
    atom_subset: frozenset
    mass: float
    breaks_used: int


def _atoms_mass(graph: MolecularGraph, subset, masses: dict) -> float:
    h = masses["H"]
    return sum(masses[graph.atoms[i].element] + h * graph.atoms[i].implicit_h_count for i in sorted(subset))


def molecule_mass(graph: MolecularGraph, masses: dict | None = None) -> float:
    return _atoms_mass(graph, range(graph.n_atoms), masses or MONOISOTOPIC_MASSES)


def _components(graph: MolecularGraph, removed: set[int]) -> list[frozenset]:
    seen: set[int] = set()
    comps = []
    for start in range(graph.n_atoms):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nb, k in graph.neighbors(node):
                if k not in removed and nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
        seen |= comp
        comps.append(frozenset(comp))
    return comps


def enumerate_fragments(
    graph: MolecularGraph, max_bond_breaks: int = 2, masses: dict | None = None
) -> list[Fragment]:
    """Distinct fragments from deleting every subset of at most ``max_bond_breaks`` acyclic bonds.

    ``breaks_used`` is the number of cut bonds on the fragment boundary,
    the fewest deletions that isolate it.  Sorted by descending mass, then
    by atom indices.
    """
    masses = masses or MONOISOTOPIC_MASSES
    cleavable = [k for k, b in enumerate(graph.bonds) if not b.in_ring]
    found: dict[frozenset, int] = {}
    for k in range(min(max_bond_breaks, len(cleavable)) + 1):
        for cut in itertools.combinations(cleavable, k):
            for comp in _components(graph, set(cut)):
                if comp not in found:
                    boundary = sum(1 for b in graph.bonds if (b.begin in comp) != (b.end in comp))
                    found[comp] = boundary
    frags = [Fragment(c, _atoms_mass(graph, c, masses), n) for c, n in found.items()]
    frags.sort(key=lambda f: (-f.mass, sorted(f.atom_subset)))
    return frags


def simulate_spectrum(
    graph: MolecularGraph,
    metadata: SpectrumMetadata | None = None,
    config: OracleConfig | None = None,
    *,
    collision_energy: float | None = None,
    adduct: str = "[M+H]+",
    compound_id: str = "",
) -> Spectrum:
    """Synthetic centroided spectrum of ``graph`` under ``metadata``.

    If ``metadata`` is omitted it is built from ``collision_energy`` and
    ``adduct`` with the precursor m/z computed from the molecule mass.
    """
    config = config or OracleConfig()
    if metadata is None:
        if collision_energy is None:
            raise ValueError("either metadata or collision_energy is required")
        metadata = make_metadata(graph, collision_energy, adduct, config)
    if metadata.adduct not in config.adduct_mass_shift:
        raise KeyError(f"unknown adduct {metadata.adduct!r}")
    if metadata.collision_energy < 0:
        raise ValueError("collision energy must be nonnegative")
    shift = config.adduct_mass_shift[metadata.adduct]
    ce = metadata.collision_energy
    frags = enumerate_fragments(graph, config.max_bond_breaks, config.monoisotopic_masses)
    precursor = frags[0].mass if frags else molecule_mass(graph, config.monoisotopic_masses)
    intact = frozenset(range(graph.n_atoms))
    raw = []
    for f in frags:
        w = math.exp(config.ce_softness * ce * (1.0 - f.mass / precursor)) * 2.0 ** (-f.breaks_used)
        if f.atom_subset == intact:
            w *= math.exp(-ce / config.precursor_decay)
        raw.append((f.mass + shift, w))
    top = max(w for _, w in raw)
    peaks = [Peak(mz, w / top) for mz, w in sorted(raw)]
    return Spectrum(
        peaks=peaks,
        metadata=metadata,
        compound_id=compound_id,
        smiles=graph.source_text,
    )


def make_metadata(
    graph: MolecularGraph, collision_energy: float, adduct: str, config: OracleConfig | None = None
) -> SpectrumMetadata:
    config = config or OracleConfig()
    if adduct not in config.adduct_mass_shift:
        raise KeyError(f"unknown adduct {adduct!r}")
    return SpectrumMetadata(
        collision_energy=float(collision_energy),
        adduct=adduct,
        collision_type=config.collision_type,
        precursor_mz=molecule_mass(graph, config.monoisotopic_masses) + config.adduct_mass_shift[adduct],
    )


@dataclass
class DatasetSummary:
    n_molecules: int
    n_spectra: int
    spectra_per_scaffold: dict

    @property
    def n_scaffolds(self) -> int:
        return len(self.spectra_per_scaffold)


def generate_dataset(
    molecule_file,
    ce_grid,
    adducts,
    config: OracleConfig | None = None,
    out_path=None,
) -> DatasetSummary:
    """Write one synthetic spectrum per (molecule, energy, adduct) to an MSP file."""
    config = config or OracleConfig()
    ce_grid = list(ce_grid)
    adducts = list(adducts)
    if not ce_grid:
        raise ValueError("collision energy grid is empty")
    if not adducts:
        raise ValueError("adduct list is empty")
    if out_path is None:
        raise ValueError("out_path is required")
    records = read_molecule_file(molecule_file)
    spectra = []
    per_scaffold: Counter = Counter()
    for mol_id, smiles in records:
        try:
            graph = parse_smiles(smiles)
        except ValueError as exc:
            raise ValueError(f"molecule {mol_id!r}: {exc}") from exc
        key = scaffold_key(graph)
        for ce in ce_grid:
            for adduct in adducts:
                s = simulate_spectrum(graph, make_metadata(graph, ce, adduct, config), config, compound_id=mol_id)
                s.name = mol_id
                spectra.append(s)
                per_scaffold[key] += 1
    write_msp(out_path, spectra)
    return DatasetSummary(len(records), len(spectra), dict(sorted(per_scaffold.items())))
