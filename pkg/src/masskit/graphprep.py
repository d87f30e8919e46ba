"""Transformer-ready graph tensors: readout node, shortest paths, edge paths."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .chem import BOND_ORDERS, MolecularGraph

__all__ = [
    "EncodingConfig",
    "PreparedGraph",
    "VocabularyError",
    "floyd_warshall",
    "reconstruct_edge_path",
    "prepare",
    "NODE_FEATURES",
    "EDGE_FEATURES",
]

NODE_FEATURES = ("element", "charge", "h_count", "degree", "aromatic", "in_ring")
EDGE_FEATURES = ("order", "in_ring")

UNREACHABLE = np.iinfo(np.int64).max // 4


class VocabularyError(ValueError):
    """A graph feature value is missing from the encoding vocabulary."""

    def __init__(self, feature: str, value):
        super().__init__(f"value {value!r} of feature {feature!r} is not in the vocabulary")
        self.feature = feature
        self.value = value


def _default_node_vocab() -> dict:
    return {
        "element": ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H"],
        "charge": [-1, 0, 1],
        "h_count": [0, 1, 2, 3, 4],
        "degree": [0, 1, 2, 3, 4, 5, 6],
        "aromatic": [False, True],
        "in_ring": [False, True],
    }


def _default_edge_vocab() -> dict:
    return {"order": list(BOND_ORDERS), "in_ring": [False, True]}


@dataclass
class EncodingConfig:
    """Clamps and feature vocabularies used to index embedding tables.

    Degree values above the largest ``degree`` vocabulary entry are clamped
    to it; every other feature must match its vocabulary exactly.
    """

    max_spd: int = 16
    max_path_len: int = 16
    node_vocab: dict = field(default_factory=_default_node_vocab)
    edge_vocab: dict = field(default_factory=_default_edge_vocab)
    use_degree: bool = True

    def __post_init__(self):
        if self.max_spd < 1 or self.max_path_len < 1:
            raise ValueError("max_spd and max_path_len must be >= 1")
        for vocab, names in ((self.node_vocab, NODE_FEATURES), (self.edge_vocab, EDGE_FEATURES)):
            for name in names:
                values = vocab.get(name)
                if not values:
                    raise ValueError(f"vocabulary for feature {name!r} is missing or empty")
                if len(set(map(repr, values))) != len(values):
                    raise ValueError(f"vocabulary for feature {name!r} has duplicate values")

    # sizes including reserved slots
    def node_table_size(self, name: str) -> int:
        """Rows of the ``name`` embedding table; the last row is the readout slot."""
        return len(self.node_vocab[name]) + 1

    @property
    def n_edge_types(self) -> int:
        return len(self.edge_vocab["order"]) * len(self.edge_vocab["in_ring"])

    @property
    def edge_sentinel(self) -> int:
        return self.n_edge_types

    @property
    def n_spd_buckets(self) -> int:
        return self.max_spd + 3

    @property
    def readout_bucket(self) -> int:
        return self.max_spd + 1

    @property
    def unreachable_bucket(self) -> int:
        return self.max_spd + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        """Short stable hash of the config, used as a cache key."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def edge_type(self, order: str, in_ring: bool) -> int:
        try:
            o = self.edge_vocab["order"].index(order)
        except ValueError:
            raise VocabularyError("order", order) from None
        try:
            r = self.edge_vocab["in_ring"].index(in_ring)
        except ValueError:
            raise VocabularyError("in_ring", in_ring) from None
        return o * len(self.edge_vocab["in_ring"]) + r


@dataclass
class PreparedGraph:
    """Integer tensors for one molecule; node 0 is the readout node.

    ``node_feature_indices`` has one column per entry of ``NODE_FEATURES``
    (the degree column duplicates ``degree_index``).
    """

    n_nodes: int
    node_feature_indices: np.ndarray  # (n, len(NODE_FEATURES))
    spd_bucket: np.ndarray  # (n, n)
    edge_path_indices: np.ndarray  # (n, n, max_path_len)
    path_len: np.ndarray  # (n, n) true distances, 0 for readout pairs
    degree_index: np.ndarray  # (n,)
    elements: tuple = ()

    @property
    def n_atoms(self) -> int:
        return self.n_nodes - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "node_feature_indices": self.node_feature_indices,
            "spd_bucket": self.spd_bucket,
            "edge_path_indices": self.edge_path_indices,
            "path_len": self.path_len,
            "degree_index": self.degree_index,
        }


def floyd_warshall(graph: MolecularGraph) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs unit-weight shortest paths.

    Returns ``(dist, pred)``; ``pred[i, j]`` is the node preceding ``j`` on
    the chosen shortest path from ``i`` (``-1`` on the diagonal and for
    unreachable pairs).  Intermediate nodes are tried in ascending order and
    only strictly shorter routes replace a stored one.
    """
    n = graph.n_atoms
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    pred = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    for b in graph.bonds:
        dist[b.begin, b.end] = dist[b.end, b.begin] = 1
        pred[b.begin, b.end] = b.begin
        pred[b.end, b.begin] = b.end
    for k in range(n):
        # row/column k are fixed during step k because dist[k, k] == 0
        via = dist[:, k : k + 1] + dist[k : k + 1, :]
        better = via < dist
        dist = np.where(better, via, dist)
        pred = np.where(better, pred[k : k + 1, :], pred)
    return dist, pred


def reconstruct_edge_path(
    graph: MolecularGraph,
    pred: np.ndarray,
    i: int,
    j: int,
    config: EncodingConfig | None = None,
) -> list[int]:
    """Edge-type indices along the stored shortest path from atom ``i`` to ``j``.

    Atom indices refer to the molecular graph (no readout node); negative
    indices are rejected since the readout node has no edge paths.
    """
    config = config or EncodingConfig()
    n = graph.n_atoms
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"edge paths are only defined between real atoms, got ({i}, {j})")
    if i == j:
        raise ValueError("edge path requires i != j")
    nodes = [j]
    while nodes[-1] != i:
        p = int(pred[i, nodes[-1]])
        if p < 0:
            raise ValueError(f"atoms {i} and {j} are not connected")
        nodes.append(p)
    nodes.reverse()
    path = []
    for a, b in zip(nodes, nodes[1:]):
        bond = graph.bond_between(a, b)
        path.append(config.edge_type(bond.order, bond.in_ring))
    return path


def _index(vocab: dict, name: str, value) -> int:
    values = vocab[name]
    for k, v in enumerate(values):
        if v == value and type(v) is type(value):
            return k
    raise VocabularyError(name, value)


def prepare(graph: MolecularGraph, config: EncodingConfig | None = None) -> PreparedGraph:
    """Build the readout-augmented :class:`PreparedGraph` for ``graph``."""
    config = config or EncodingConfig()
    n_atoms = graph.n_atoms
    n = n_atoms + 1
    nv = config.node_vocab
    max_degree = max(nv["degree"])

    feats = np.empty((n, len(NODE_FEATURES)), dtype=np.int64)
    for f, name in enumerate(NODE_FEATURES):
        feats[0, f] = len(nv[name])
    for i, atom in enumerate(graph.atoms):
        deg = min(graph.degree(i), max_degree)
        values = {
            "element": atom.element,
            "charge": atom.formal_charge,
            "h_count": atom.implicit_h_count,
            "degree": deg,
            "aromatic": atom.aromatic,
            "in_ring": atom.in_ring,
        }
        for f, name in enumerate(NODE_FEATURES):
            feats[i + 1, f] = _index(nv, name, values[name])
    degree_index = feats[:, NODE_FEATURES.index("degree")].copy()

    dist, pred = floyd_warshall(graph)
    spd = np.empty((n, n), dtype=np.int64)
    spd[1:, 1:] = np.where(dist >= UNREACHABLE, config.unreachable_bucket, np.minimum(dist, config.max_spd))
    spd[0, :] = config.readout_bucket
    spd[:, 0] = config.readout_bucket
    spd[0, 0] = 0

    path_len = np.zeros((n, n), dtype=np.int64)
    path_len[1:, 1:] = np.where(dist >= UNREACHABLE, 0, dist)

    P = config.max_path_len
    paths = np.full((n, n, P), config.edge_sentinel, dtype=np.int64)
    for i in range(n_atoms):
        for j in range(n_atoms):
            if i == j or dist[i, j] >= UNREACHABLE:
                continue
            edge_path = reconstruct_edge_path(graph, pred, i, j, config)[:P]
            paths[i + 1, j + 1, : len(edge_path)] = edge_path

    return PreparedGraph(
        n_nodes=n,
        node_feature_indices=feats,
        spd_bucket=spd,
        edge_path_indices=paths,
        path_len=path_len,
        degree_index=degree_index,
        elements=tuple(a.element for a in graph.atoms),
    )
