"""Molecular graphs from a SMILES subset, Murcko scaffolds and canonical keys.

Supported grammar: organic-subset atoms (B is not supported), bracket atoms
with explicit hydrogen count and formal charge, bond symbols ``- = # :``,
branches and ring closures (``1``-``9`` and ``%nn``).  Stereochemistry,
isotopes, wildcards and multi-fragment input are rejected.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

__all__ = [
    "Atom",
    "Bond",
    "MolecularGraph",
    "SmilesError",
    "UnsupportedFeatureError",
    "ValenceError",
    "parse_smiles",
    "murcko_scaffold",
    "canonical_key",
    "scaffold_key",
    "read_molecule_file",
    "write_molecule_file",
    "permute_graph",
    "ELEMENTS",
    "BOND_ORDERS",
]

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H")
BOND_ORDERS = ("single", "double", "triple", "aromatic")

# allowed valences for neutral atoms, ascending
_VALENCES = {
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "S": (2, 4, 6),
    "P": (3, 5),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "H": (1,),
}
_AROMATIC_ORGANIC = {"c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_BOND_VALENCE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}

_BRACKET_RE = re.compile(
    r"^(?P<isotope>\d+)?(?P<symbol>Cl|Br|[A-Z][a-z]?|[cnosp])"
    r"(?P<chiral>@+)?(?P<hcount>H\d*)?(?P<charge>[+-]+\d*)?(?P<cls>:\d+)?$"
)


class SmilesError(ValueError):
    """Malformed SMILES text."""


class UnsupportedFeatureError(SmilesError):
    """Valid SMILES that uses a feature outside the supported subset."""


class ValenceError(SmilesError):
    """An atom carries more bonds than its element allows."""


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    implicit_h_count: int = 0
    in_ring: bool = False
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = "single"
    in_ring: bool = False

    @property
    def endpoints(self) -> frozenset:
        return frozenset((self.begin, self.end))

    def other(self, idx: int) -> int:
        return self.end if idx == self.begin else self.begin


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_text: str = ""
    _adjacency: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        seen = set()
        for k, b in enumerate(self.bonds):
            if b.begin == b.end:
                raise ValueError(f"bond {k} is a self-loop on atom {b.begin}")
            if not (0 <= b.begin < len(self.atoms) and 0 <= b.end < len(self.atoms)):
                raise ValueError(f"bond {k} endpoint out of range")
            if b.endpoints in seen:
                raise ValueError(f"duplicate bond between {b.begin} and {b.end}")
            seen.add(b.endpoints)
            adj[b.begin].append((b.end, k))
            adj[b.end].append((b.begin, k))
        object.__setattr__(self, "_adjacency", tuple(tuple(a) for a in adj))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> tuple[tuple[int, int], ...]:
        """``(neighbor index, bond index)`` pairs of atom ``i``."""
        return self._adjacency[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency[i])

    def bond_between(self, i: int, j: int) -> Bond | None:
        for nb, k in self._adjacency[i]:
            if nb == j:
                return self.bonds[k]
        return None

    def is_connected(self) -> bool:
        if not self.atoms:
            return True
        seen = {0}
        stack = [0]
        while stack:
            for nb, _ in self._adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.atoms)

    def formula(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for a in self.atoms:
            counts[a.element] = counts.get(a.element, 0) + 1
            if a.implicit_h_count:
                counts["H"] = counts.get("H", 0) + a.implicit_h_count
        return counts


def _charge_adjusted(element: str, charge: int) -> tuple[int, ...]:
    base = _VALENCES[element]
    if charge == 0:
        return base
    if element == "C":
        return tuple(v - abs(charge) for v in base if v - abs(charge) >= 0)
    return tuple(v + charge for v in base if v + charge >= 0)


def _tokenize(text: str) -> Iterator[tuple[str, str, int]]:
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise SmilesError(f"unclosed bracket atom at position {i}")
            yield "bracket", text[i + 1 : end], i
            i = end + 1
        elif text.startswith(("Cl", "Br"), i):
            yield "atom", text[i : i + 2], i
            i += 2
        elif ch in "CNOSPFI":
            yield "atom", ch, i
            i += 1
        elif ch in _AROMATIC_ORGANIC:
            yield "atom", ch, i
            i += 1
        elif ch in _BOND_SYMBOLS:
            yield "bond", ch, i
            i += 1
        elif ch in "/\\":
            raise UnsupportedFeatureError(f"directional bond '{ch}' at position {i}")
        elif ch == "@":
            raise UnsupportedFeatureError(f"chirality marker at position {i}")
        elif ch in "()":
            yield ch, ch, i
            i += 1
        elif ch.isdigit():
            yield "ring", ch, i
            i += 1
        elif ch == "%":
            if i + 2 >= n or not text[i + 1 : i + 3].isdigit():
                raise SmilesError(f"malformed ring label at position {i}")
            yield "ring", text[i + 1 : i + 3], i
            i += 3
        elif ch == ".":
            raise UnsupportedFeatureError(f"multi-fragment SMILES ('.' at position {i})")
        elif ch == "*":
            raise UnsupportedFeatureError(f"wildcard atom at position {i}")
        elif ch in "B":
            raise SmilesError(f"unsupported element 'B' at position {i}")
        else:
            raise SmilesError(f"unexpected character {ch!r} at position {i}")


def _parse_bracket(body: str, pos: int) -> dict:
    m = _BRACKET_RE.match(body)
    if not m:
        raise SmilesError(f"malformed bracket atom [{body}] at position {pos}")
    if m.group("isotope"):
        raise UnsupportedFeatureError(f"isotope label in [{body}] at position {pos}")
    if m.group("chiral"):
        raise UnsupportedFeatureError(f"chirality marker in [{body}] at position {pos}")
    symbol = m.group("symbol")
    aromatic = symbol in _AROMATIC_ORGANIC
    element = _AROMATIC_ORGANIC[symbol] if aromatic else symbol
    if element not in ELEMENTS:
        raise SmilesError(f"unsupported element {element!r} at position {pos}")
    hcount = 0
    if m.group("hcount"):
        digits = m.group("hcount")[1:]
        hcount = int(digits) if digits else 1
    charge = 0
    ctext = m.group("charge")
    if ctext:
        sign = 1 if ctext[0] == "+" else -1
        if len(ctext) > 1 and ctext[1:].isdigit():
            charge = sign * int(ctext[1:])
        elif set(ctext) == {ctext[0]}:
            charge = sign * len(ctext)
        else:
            raise SmilesError(f"malformed charge in [{body}] at position {pos}")
    return {
        "element": element,
        "aromatic": aromatic,
        "hcount": hcount,
        "charge": charge,
        "bracket": True,
    }


def _ring_bonds(n_atoms: int, edges: list[tuple[int, int]]) -> list[bool]:
    """Flag each edge that lies on a cycle (i.e. is not a bridge)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    disc = [-1] * n_atoms
    low = [0] * n_atoms
    is_bridge = [False] * len(edges)
    timer = 0
    for root in range(n_atoms):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, parent_edge, it = stack[-1]
            advanced = False
            for nb, k in it:
                if k == parent_edge:
                    continue
                if disc[nb] < 0:
                    disc[nb] = low[nb] = timer
                    timer += 1
                    stack.append((nb, k, iter(adj[nb])))
                    advanced = True
                    break
                low[node] = min(low[node], disc[nb])
            if not advanced:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        is_bridge[parent_edge] = True
    return [not br for br in is_bridge]


def parse_smiles(text: str) -> MolecularGraph:
    """Parse ``text`` into a :class:`MolecularGraph`.

    Raises
    ------
    SmilesError
        Malformed input, unsupported element, unbalanced branches or
        unmatched ring closures.
    UnsupportedFeatureError
        Stereochemistry, isotopes, wildcards or multiple fragments.
    ValenceError
        An atom exceeds its maximum valence.
    """
    if not text or not text.isascii():
        raise SmilesError("SMILES must be nonempty ASCII text")
    text = text.strip()
    atoms: list[dict] = []
    # (a, b, explicit order or None)
    edges: list[tuple[int, int, str | None]] = []
    branch_stack: list[int] = []
    ring_open: dict[str, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending_bond: str | None = None

    def add_edge(a: int, b: int, order: str | None, pos: int) -> None:
        if a == b:
            raise SmilesError(f"ring closure bonds atom to itself at position {pos}")
        for x, y, _ in edges:
            if {x, y} == {a, b}:
                raise SmilesError(f"duplicate bond between atoms {a} and {b} at position {pos}")
        edges.append((a, b, order))

    for kind, tok, pos in _tokenize(text):
        if kind in ("atom", "bracket"):
            if kind == "atom":
                aromatic = tok in _AROMATIC_ORGANIC
                info = {
                    "element": _AROMATIC_ORGANIC.get(tok, tok),
                    "aromatic": aromatic,
                    "hcount": 0,
                    "charge": 0,
                    "bracket": False,
                }
            else:
                info = _parse_bracket(tok, pos)
            atoms.append(info)
            idx = len(atoms) - 1
            if prev is not None:
                add_edge(prev, idx, pending_bond, pos)
            elif pending_bond is not None:
                raise SmilesError(f"bond symbol with no preceding atom at position {pos}")
            prev = idx
            pending_bond = None
        elif kind == "bond":
            if prev is None or pending_bond is not None:
                raise SmilesError(f"misplaced bond symbol at position {pos}")
            pending_bond = _BOND_SYMBOLS[tok]
        elif kind == "(":
            if prev is None:
                raise SmilesError(f"branch opened before any atom at position {pos}")
            branch_stack.append(prev)
        elif kind == ")":
            if not branch_stack:
                raise SmilesError(f"unbalanced parentheses: unexpected ')' at position {pos}")
            if pending_bond is not None:
                raise SmilesError(f"dangling bond before ')' at position {pos}")
            prev = branch_stack.pop()
        elif kind == "ring":
            if prev is None:
                raise SmilesError(f"ring closure before any atom at position {pos}")
            if tok in ring_open:
                other, order, _ = ring_open.pop(tok)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise SmilesError(f"conflicting ring-closure bond orders for label {tok}")
                add_edge(other, prev, order or pending_bond, pos)
            else:
                ring_open[tok] = (prev, pending_bond, pos)
            pending_bond = None

    if branch_stack:
        raise SmilesError("unbalanced parentheses: unclosed '('")
    if ring_open:
        label, (_, _, pos) = next(iter(ring_open.items()))
        raise SmilesError(f"unmatched ring-closure digit {label} opened at position {pos}")
    if pending_bond is not None:
        raise SmilesError("dangling bond at end of SMILES")
    if not atoms:
        raise SmilesError("no atoms in SMILES")

    ring_flags = _ring_bonds(len(atoms), [(a, b) for a, b, _ in edges])
    bonds = []
    for (a, b, order), ring in zip(edges, ring_flags):
        if order is None:
            both_aromatic = atoms[a]["aromatic"] and atoms[b]["aromatic"]
            order = "aromatic" if both_aromatic and ring else "single"
        bonds.append(Bond(a, b, order, ring))

    bond_sum = [0] * len(atoms)
    atom_ring = [False] * len(atoms)
    for b in bonds:
        for end in (b.begin, b.end):
            bond_sum[end] += _BOND_VALENCE[b.order]
            atom_ring[end] = atom_ring[end] or b.in_ring

    out = []
    for i, info in enumerate(atoms):
        el = info["element"]
        valences = _charge_adjusted(el, info["charge"])
        if not valences:
            raise ValenceError(f"atom {i} ({el}) cannot carry charge {info['charge']}")
        used = bond_sum[i] + info["hcount"]
        pi = 1 if info["aromatic"] and el in ("C", "N", "P") else 0
        if info["bracket"]:
            if used > valences[-1]:
                raise ValenceError(f"atom {i} ({el}) exceeds maximum valence {valences[-1]}")
            h = info["hcount"]
        else:
            target = next((v for v in valences if v >= used + pi), None)
            if target is None:
                raise ValenceError(f"atom {i} ({el}) exceeds maximum valence {valences[-1]}")
            h = target - used - pi
        if info["aromatic"] and not atom_ring[i]:
            raise SmilesError(f"aromatic atom {i} is not in a ring")
        out.append(Atom(el, info["charge"], h, atom_ring[i], info["aromatic"]))

    graph = MolecularGraph(tuple(out), tuple(bonds), text)
    if not graph.is_connected():
        raise SmilesError("molecule is not connected")
    return graph


def _subgraph(graph: MolecularGraph, keep: Iterable[int], source_text: str = "") -> MolecularGraph:
    keep = sorted(set(keep))
    index = {old: new for new, old in enumerate(keep)}
    extra_h = [0] * graph.n_atoms
    bonds = []
    for b in graph.bonds:
        if b.begin in index and b.end in index:
            bonds.append(replace(b, begin=index[b.begin], end=index[b.end]))
        elif b.begin in index:
            extra_h[b.begin] += _BOND_VALENCE[b.order]
        elif b.end in index:
            extra_h[b.end] += _BOND_VALENCE[b.order]
    atoms = tuple(
        replace(graph.atoms[i], implicit_h_count=graph.atoms[i].implicit_h_count + extra_h[i])
        for i in keep
    )
    return MolecularGraph(atoms, tuple(bonds), source_text)


def murcko_scaffold(graph: MolecularGraph) -> MolecularGraph:
    """Ring systems plus linkers, by iterative pruning of acyclic leaf atoms.

    Removed substituent bonds are replaced by hydrogens on the kept atom.
    Acyclic molecules give the empty graph.
    """
    if not any(a.in_ring for a in graph.atoms):
        return MolecularGraph((), (), "")
    alive = set(range(graph.n_atoms))
    degree = [graph.degree(i) for i in range(graph.n_atoms)]
    queue = [i for i in alive if degree[i] <= 1 and not graph.atoms[i].in_ring]
    while queue:
        i = queue.pop()
        if i not in alive:
            continue
        alive.discard(i)
        for nb, _ in graph.neighbors(i):
            if nb in alive:
                degree[nb] -= 1
                if degree[nb] <= 1 and not graph.atoms[nb].in_ring:
                    queue.append(nb)
    return _subgraph(graph, alive)


def _atom_label(atom: Atom) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    charge = f"{atom.formal_charge:+d}" if atom.formal_charge else ""
    return f"{sym}{charge}H{atom.implicit_h_count}"


_ORDER_CODE = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


def _refine(graph: MolecularGraph, ranks: list[int]) -> list[int]:
    """Refine atom ranks by sorted neighbor (rank, bond order) signatures to a fixpoint."""
    n = graph.n_atoms
    while True:
        sigs = [
            (
                ranks[i],
                tuple(sorted((ranks[nb], graph.bonds[k].order) for nb, k in graph.neighbors(i))),
            )
            for i in range(n)
        ]
        order = sorted(set(sigs))
        lookup = {s: r for r, s in enumerate(order)}
        new = [lookup[s] for s in sigs]
        if len(order) == len(set(ranks)):
            return new
        ranks = new


def _serialize(graph: MolecularGraph, ranks: list[int]) -> str:
    pos = sorted(range(graph.n_atoms), key=lambda i: ranks[i])
    where = {atom: k for k, atom in enumerate(pos)}
    labels = ".".join(_atom_label(graph.atoms[i]) for i in pos)
    edges = sorted(
        (min(where[b.begin], where[b.end]), max(where[b.begin], where[b.end]), _ORDER_CODE[b.order])
        for b in graph.bonds
    )
    return labels + "|" + ",".join(f"{a}{o}{b}" for a, b, o in edges)


def _search(graph: MolecularGraph, ranks: list[int]) -> str:
    ranks = _refine(graph, ranks)
    if len(set(ranks)) == graph.n_atoms:
        return _serialize(graph, ranks)
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = min(r for r, c in counts.items() if c > 1)
    best = None
    for i in range(graph.n_atoms):
        if ranks[i] != tied:
            continue
        # individualize atom i: it precedes the rest of its class
        trial = [2 * r + (1 if (r == tied and j != i) else 0) for j, r in enumerate(ranks)]
        s = _search(graph, trial)
        if best is None or s < best:
            best = s
    return best


def canonical_key(graph: MolecularGraph) -> str:
    """Text key identical for all atom orderings of the same graph ("" if empty)."""
    if graph.n_atoms == 0:
        return ""
    init = [
        (a.element, graph.degree(i), a.formal_charge, a.aromatic)
        for i, a in enumerate(graph.atoms)
    ]
    order = sorted(set(init))
    ranks = [order.index(v) for v in init]
    return _search(graph, ranks)


def scaffold_key(smiles_or_graph: str | MolecularGraph) -> str:
    graph = parse_smiles(smiles_or_graph) if isinstance(smiles_or_graph, str) else smiles_or_graph
    return canonical_key(murcko_scaffold(graph))


def permute_graph(graph: MolecularGraph, perm: list[int]) -> MolecularGraph:
    """Relabel atoms so that old atom ``perm[k]`` becomes new atom ``k``."""
    if sorted(perm) != list(range(graph.n_atoms)):
        raise ValueError("perm must be a permutation of atom indices")
    new_index = {old: new for new, old in enumerate(perm)}
    atoms = tuple(graph.atoms[old] for old in perm)
    bonds = tuple(replace(b, begin=new_index[b.begin], end=new_index[b.end]) for b in graph.bonds)
    return MolecularGraph(atoms, bonds, graph.source_text)


def read_molecule_file(path) -> list[tuple[str, str]]:
    """Read ``<id>\\t<smiles>`` records, skipping blank lines and ``#`` comments."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValueError(f"{path}:{lineno}: expected '<id>\\t<smiles>'")
            records.append((parts[0], parts[1]))
    return records


def write_molecule_file(path, records: Iterable[tuple[str, str]], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for mol_id, smiles in records:
            fh.write(f"{mol_id}\t{smiles}\n")
