"""Random drug-like molecules for synthetic datasets.

Molecules are assembled from a small library of ring systems, linkers and
substituents, so scaffolds repeat across the corpus while substitution
patterns vary.  A fraction of the corpus is acyclic chains.
"""
from __future__ import annotations

import numpy as np

from .chem import SmilesError, canonical_key, parse_smiles

__all__ = ["RING_SYSTEMS", "SUBSTITUENTS", "LINKERS", "random_molecule", "generate_corpus"]

# ring atoms as tokens; "{a}" marks ring-closure labels, attach = positions
# that carry a hydrogen and may take a substituent
RING_SYSTEMS = {
    "benzene": (["c{a}", "c", "c", "c", "c", "c{a}"], [0, 1, 2, 3, 4, 5]),
    "pyridine": (["c{a}", "c", "c", "n", "c", "c{a}"], [0, 1, 2, 4, 5]),
    "pyrimidine": (["c{a}", "c", "n", "c", "n", "c{a}"], [0, 1, 3, 5]),
    "thiophene": (["c{a}", "c", "c", "s", "c{a}"], [0, 1, 2, 4]),
    "furan": (["c{a}", "c", "c", "o", "c{a}"], [0, 1, 2, 4]),
    "pyrrole": (["c{a}", "c", "c", "[nH]", "c{a}"], [0, 1, 2, 4]),
    "cyclohexane": (["C{a}", "C", "C", "C", "C", "C{a}"], [0, 1, 2, 3, 4, 5]),
    "cyclopentane": (["C{a}", "C", "C", "C", "C{a}"], [0, 1, 2, 3, 4]),
    "cyclopropane": (["C{a}", "C", "C{a}"], [0, 1, 2]),
    "piperidine": (["C{a}", "C", "C", "N", "C", "C{a}"], [0, 1, 2, 3, 4, 5]),
    "morpholine": (["C{a}", "C", "O", "C", "C", "N{a}"], [0, 1, 3, 4, 5]),
    "oxolane": (["C{a}", "C", "C", "O", "C{a}"], [0, 1, 2, 4]),
    "piperazine": (["C{a}", "C", "N", "C", "C", "N{a}"], [0, 1, 2, 3, 4, 5]),
    "naphthalene": (["c{a}", "c", "c", "c{b}", "c", "c", "c", "c", "c{b}", "c{a}"], [0, 1, 2, 4, 5, 6, 7]),
    "indole": (["c{a}", "c", "c", "c{b}", "c", "c", "[nH]", "c{b}", "c{a}"], [0, 1, 2, 4, 5]),
    "cyclohexene": (["C{a}", "C", "C", "C=", "C", "C{a}"], [0, 1, 2, 4, 5]),
}

SUBSTITUENTS = [
    "C",
    "CC",
    "CCC",
    "C(C)C",
    "O",
    "OC",
    "OCC",
    "N",
    "NC",
    "N(C)C",
    "F",
    "Cl",
    "Br",
    "I",
    "C(F)(F)F",
    "C#N",
    "C(=O)O",
    "C(=O)OC",
    "C(=O)N",
    "C(=O)C",
    "C=O",
    "S",
    "SC",
    "CO",
    "CCO",
    "CN",
    "NC(=O)C",
    "S(=O)(=O)N",
    "S(=O)(=O)C",
    "OC(F)(F)F",
    "P(=O)(O)O",
]

LINKERS = ["", "C", "CC", "O", "N", "C(=O)", "C(=O)N", "NC(=O)", "OC", "CO", "S", "CCC", "C=C", "NC"]

_CHAIN_ATOMS = ["C", "C", "C", "C", "N", "O", "S"]


def _ring_smiles(name: str, labels: tuple[str, str], subs: dict[int, str]) -> str:
    tokens, _ = RING_SYSTEMS[name]
    out = []
    for k, tok in enumerate(tokens):
        tok = tok.replace("{a}", labels[0]).replace("{b}", labels[1])
        out.append(tok)
        if k in subs:
            out.append(f"({subs[k]})")
    return "".join(out)


def _label(k: int) -> str:
    return str(k) if k < 10 else f"%{k}"


def _chain(rng: np.random.Generator) -> str:
    n = int(rng.integers(3, 9))
    atoms = []
    for i in range(n):
        atom = _CHAIN_ATOMS[rng.integers(len(_CHAIN_ATOMS))] if 0 < i < n - 1 else "C"
        atoms.append(atom)
    parts = [atoms[0]]
    for atom in atoms[1:]:
        if rng.random() < 0.3:
            parts.append(f"({SUBSTITUENTS[rng.integers(len(SUBSTITUENTS))]})")
        parts.append(atom)
    return "".join(parts)


def random_molecule(rng: np.random.Generator, max_ring_systems: int = 2, acyclic_fraction: float = 0.1) -> str:
    """One random SMILES built from the fragment library."""
    if rng.random() < acyclic_fraction:
        return _chain(rng)
    names = list(RING_SYSTEMS)
    n_systems = int(rng.integers(1, max_ring_systems + 1))
    systems = [names[rng.integers(len(names))] for _ in range(n_systems)]
    counter = iter(range(1, 99))

    def build(idx: int) -> str:
        name = systems[idx]
        _, attach = RING_SYSTEMS[name]
        labels = (_label(next(counter)), _label(next(counter)))
        free = list(attach)
        rng.shuffle(free)
        subs: dict[int, str] = {}
        if idx + 1 < len(systems):
            linker = LINKERS[rng.integers(len(LINKERS))]
            subs[free.pop()] = linker + build(idx + 1)
        n_subs = int(rng.integers(0, min(3, len(free)) + 1))
        for _ in range(n_subs):
            subs[free.pop()] = SUBSTITUENTS[rng.integers(len(SUBSTITUENTS))]
        return _ring_smiles(name, labels, subs)

    return build(0)


def generate_corpus(
    n: int,
    seed: int = 0,
    max_heavy_atoms: int = 28,
    max_ring_systems: int = 2,
    acyclic_fraction: float = 0.1,
) -> list[tuple[str, str]]:
    """``n`` distinct valid molecules as ``(id, smiles)`` records."""
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    records = []
    attempts = 0
    while len(records) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise RuntimeError("could not generate enough distinct molecules")
        smiles = random_molecule(rng, max_ring_systems, acyclic_fraction)
        try:
            graph = parse_smiles(smiles)
        except SmilesError:
            continue
        if graph.n_atoms > max_heavy_atoms:
            continue
        key = canonical_key(graph)
        if key in seen:
            continue
        seen.add(key)
        records.append((f"mol{len(records):05d}", smiles))
    return records
