"""On-disk cache of prepared graphs.

Entries are keyed by (molecule id, encoding fingerprint).  One ``.npz``
file per fingerprint holds every cached molecule; the SMILES each entry
was built from is stored too, so an edited molecule file invalidates the
affected entries instead of serving stale tensors.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping

import numpy as np

from .chem import parse_smiles
from .graphprep import EncodingConfig, PreparedGraph, prepare

__all__ = ["GraphCache", "prepare_all"]

_FIELDS = ("node_feature_indices", "spd_bucket", "edge_path_indices", "path_len", "degree_index")


def prepare_all(smiles_by_id: Mapping[str, str], encoding: EncodingConfig, workers: int = 1) -> dict[str, PreparedGraph]:
    """Prepare every molecule, optionally on a thread pool; order follows the input."""
    ids = list(smiles_by_id)

    def one(cid: str) -> PreparedGraph:
        try:
            return prepare(parse_smiles(smiles_by_id[cid]), encoding)
        except ValueError as exc:
            raise ValueError(f"molecule {cid!r}: {exc}") from exc

    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            graphs = list(pool.map(one, ids))
    else:
        graphs = [one(c) for c in ids]
    return dict(zip(ids, graphs))


class GraphCache:
    def __init__(self, directory, encoding: EncodingConfig):
        self.directory = Path(directory)
        self.encoding = encoding
        self.path = self.directory / f"prepared-{encoding.fingerprint()}.npz"

    def _load(self) -> tuple[dict[str, PreparedGraph], dict[str, str]]:
        if not self.path.exists():
            return {}, {}
        graphs, sources = {}, {}
        with np.load(self.path, allow_pickle=False) as data:
            ids = [str(x) for x in data["__ids__"]]
            smiles = [str(x) for x in data["__smiles__"]]
            for k, (cid, smi) in enumerate(zip(ids, smiles)):
                arrs = {f: data[f"{k}.{f}"] for f in _FIELDS}
                elements = tuple(str(e) for e in data[f"{k}.elements"])
                graphs[cid] = PreparedGraph(int(arrs["node_feature_indices"].shape[0]), elements=elements, **arrs)
                sources[cid] = smi
        return graphs, sources

    def _save(self, graphs: Mapping[str, PreparedGraph], sources: Mapping[str, str]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        ids = sorted(graphs)
        payload = {"__ids__": np.array(ids, dtype=str), "__smiles__": np.array([sources[c] for c in ids], dtype=str)}
        for k, cid in enumerate(ids):
            g = graphs[cid]
            for f, arr in g.arrays().items():
                payload[f"{k}.{f}"] = arr
            payload[f"{k}.elements"] = np.array(g.elements, dtype=str)
        tmp = self.path.with_name(self.path.name + ".tmp.npz")
        np.savez(tmp, **payload)
        os.replace(tmp, self.path)

    def get(self, smiles_by_id: Mapping[str, str], workers: int = 1) -> tuple[dict[str, PreparedGraph], int]:
        """Prepared graphs for all ids plus the number freshly computed."""
        graphs, sources = self._load()
        missing = {cid: smi for cid, smi in smiles_by_id.items() if sources.get(cid) != smi}
        if missing:
            graphs.update(prepare_all(missing, self.encoding, workers))
            sources.update(missing)
            self._save(graphs, sources)
        return {cid: graphs[cid] for cid in smiles_by_id}, len(missing)
