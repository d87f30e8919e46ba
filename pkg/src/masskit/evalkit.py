"""Evaluation protocols: spectrum similarity, candidate ranking,
collision-energy sweeps and heteroatom attention ratios."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .graphprep import PreparedGraph
from .model import AttentionMap
from .spectra import BinnedSpectrum, SpectrumMetadata, weighted_mean_mz

__all__ = [
    "SimilarityReport",
    "similarity_eval",
    "LibraryEntry",
    "ScaffoldOverlapError",
    "MissingCandidateError",
    "build_reference_set",
    "QueryResult",
    "RankingReport",
    "rank_queries",
    "CESweepRow",
    "CESweepTable",
    "ce_sweep",
    "ce_trend",
    "AttentionStats",
    "heteroatom_ratios",
    "heteroatom_attention",
]

PredictFn = Callable[[Sequence], np.ndarray]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


# ---------------------------------------------------------------- similarity


@dataclass
class SimilarityReport:
    per_spectrum: np.ndarray
    compound_ids: list[str]

    @property
    def mean(self) -> float:
        return float(self.per_spectrum.mean())

    @property
    def sd(self) -> float:
        return float(self.per_spectrum.std())

    def per_compound(self) -> dict[str, float]:
        groups: dict[str, list[float]] = defaultdict(list)
        for cid, s in zip(self.compound_ids, self.per_spectrum):
            groups[cid].append(float(s))
        return {cid: float(np.mean(v)) for cid, v in sorted(groups.items())}

    @property
    def compound_mean(self) -> float:
        return float(np.mean(list(self.per_compound().values())))

    @property
    def compound_sd(self) -> float:
        return float(np.std(list(self.per_compound().values())))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "mean", "sd", "n"])
            w.writerow(["spectrum", repr(self.mean), repr(self.sd), len(self.per_spectrum)])
            w.writerow(["compound", repr(self.compound_mean), repr(self.compound_sd), len(self.per_compound())])


def similarity_eval(model: PredictFn, records: Sequence) -> SimilarityReport:
    """Cosine similarity of each prediction with its target spectrum."""
    if not records:
        raise ValueError("cannot evaluate an empty split")
    pred = _unit_rows(model(records))
    target = _unit_rows(np.stack([r.target for r in records]))
    sims = np.einsum("ij,ij->i", pred, target)
    return SimilarityReport(sims, [r.compound_id for r in records])


def aggregate_seeds(reports: Sequence[SimilarityReport]) -> tuple[float, float]:
    """Mean and standard deviation of per-checkpoint mean similarities."""
    means = np.array([r.mean for r in reports])
    return float(means.mean()), float(means.std())


# ---------------------------------------------------------------- ranking


class ScaffoldOverlapError(ValueError):
    pass


class MissingCandidateError(ValueError):
    pass


@dataclass
class LibraryEntry:
    compound_id: str
    metadata: SpectrumMetadata
    vector: np.ndarray
    source: str = "real"
    entry_id: str = ""


def build_reference_set(
    heldout: Sequence,
    model: PredictFn,
    decoys: Sequence,
    scaffold_of: Mapping[str, str] | None = None,
) -> list[LibraryEntry]:
    """Predicted spectra for held-out compounds plus real decoy spectra.

    One prediction is made per distinct (compound, metadata) pair among
    ``heldout``.  When ``scaffold_of`` is given, any scaffold shared
    between held-out compounds and decoys raises :class:`ScaffoldOverlapError`.
    """
    held_ids = {r.compound_id for r in heldout}
    decoy_ids = {r.compound_id for r in decoys}
    shared = held_ids & decoy_ids
    if shared:
        raise ScaffoldOverlapError(f"compounds present in both held-out and decoy sets: {sorted(shared)[:5]}")
    if scaffold_of is not None:
        overlap = {scaffold_of[c] for c in held_ids} & {scaffold_of[c] for c in decoy_ids}
        if overlap:
            raise ScaffoldOverlapError(f"{len(overlap)} scaffold(s) shared between held-out and decoy compounds")
    unique = {}
    for r in heldout:
        key = (r.compound_id, r.spectrum.metadata)
        if key not in unique:
            unique[key] = r
    todo = list(unique.values())
    refs = []
    if todo:
        preds = model(todo)
        for r, vec in zip(todo, preds):
            refs.append(LibraryEntry(r.compound_id, r.spectrum.metadata, vec, "predicted", f"pred:{r.compound_id}"))
    for k, r in enumerate(decoys):
        refs.append(LibraryEntry(r.compound_id, r.spectrum.metadata, r.target, "real", f"real:{r.compound_id}:{k}"))
    return refs


@dataclass
class QueryResult:
    query_id: str
    compound_id: str
    n_candidates: int
    rank: float
    normalized_rank: float
    top5: bool


@dataclass
class RankingReport:
    queries: list[QueryResult] = field(default_factory=list)

    @property
    def mean_normalized_rank(self) -> float:
        return float(np.mean([q.normalized_rank for q in self.queries])) if self.queries else float("nan")

    @property
    def top5_fraction(self) -> float:
        return float(np.mean([q.top5 for q in self.queries])) if self.queries else float("nan")

    def write_csv(self, detail_path, summary_path) -> None:
        with open(detail_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "compound_id", "n_candidates", "rank", "normalized_rank", "top5"])
            for q in self.queries:
                w.writerow([q.query_id, q.compound_id, q.n_candidates, repr(q.rank), repr(q.normalized_rank), int(q.top5)])
        with open(summary_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_queries", "mean_normalized_rank", "top5_fraction"])
            w.writerow([len(self.queries), repr(self.mean_normalized_rank), repr(self.top5_fraction)])


def _same_condition(a: SpectrumMetadata, b: SpectrumMetadata, ce_tolerance: float) -> bool:
    return (
        a.adduct == b.adduct
        and a.collision_type == b.collision_type
        and abs(a.collision_energy - b.collision_energy) <= ce_tolerance
    )


def rank_queries(
    queries: Sequence,
    references: Sequence[LibraryEntry],
    ce_tolerance: float = 0.0,
    workers: int = 1,
) -> RankingReport:
    """Rank each query's true compound among metadata-matched references.

    ``queries`` are records with ``compound_id``, ``target`` and
    ``spectrum.metadata``.  Rank is 1-based with ties sharing the average
    rank; normalized rank is ``(rank - 1) / n_candidates``; the top-5% flag
    is ``rank <= ceil(0.05 * n_candidates)``.  With ``workers > 1`` queries
    are scored on a thread pool; results keep query order.
    """
    ref_units = _unit_rows(np.stack([r.vector for r in references])) if references else np.zeros((0, 0))

    def one(qi: int, q) -> QueryResult:
        md = q.spectrum.metadata
        cand = [k for k, r in enumerate(references) if _same_condition(md, r.metadata, ce_tolerance)]
        true = [k for k in cand if references[k].compound_id == q.compound_id]
        qid = getattr(q, "query_id", None) or f"{q.compound_id}@{md.collision_energy:g}/{md.adduct}#{qi}"
        if len(true) != 1:
            raise MissingCandidateError(
                f"query {qid}: expected exactly one true candidate, found {len(true)}"
            )
        sims = ref_units[cand] @ _unit_rows(q.target[None, :])[0]
        s_true = sims[cand.index(true[0])]
        higher = int(np.count_nonzero(sims > s_true))
        ties = int(np.count_nonzero(sims == s_true)) - 1
        rank = 1.0 + higher + ties / 2.0
        n = len(cand)
        return QueryResult(qid, q.compound_id, n, rank, (rank - 1.0) / n, rank <= math.ceil(0.05 * n))

    if workers > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(queries)), queries))
    else:
        results = [one(qi, q) for qi, q in enumerate(queries)]
    return RankingReport(results)


# ---------------------------------------------------------------- collision energy


@dataclass
class CESweepRow:
    compound_id: str
    collision_energy: float
    source: str
    weighted_mean_mz: float


@dataclass
class CESweepTable:
    rows: list[CESweepRow] = field(default_factory=list)

    def extend(self, other: "CESweepTable") -> None:
        self.rows.extend(other.rows)

    def select(self, source: str) -> list[CESweepRow]:
        return [r for r in self.rows if r.source == source]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["compound_id", "collision_energy", "source", "weighted_mean_mz"])
            for r in self.rows:
                w.writerow([r.compound_id, repr(r.collision_energy), r.source, repr(r.weighted_mean_mz)])


def ce_sweep(
    model,
    compound_id: str,
    prepared: PreparedGraph,
    ce_grid: Sequence[float],
    template: SpectrumMetadata,
    real: Mapping[float, BinnedSpectrum] | None = None,
) -> CESweepTable:
    """Predicted weighted mean m/z across ``ce_grid`` for one compound.

    ``model`` needs a ``predict_spectrum(prepared, metadata)`` method.
    Real spectra keyed by collision energy are added as ``source='real'``.
    """
    grid = list(ce_grid)
    if not grid:
        raise ValueError("collision energy grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("collision energy grid must be ascending")
    table = CESweepTable()
    for ce in grid:
        md = SpectrumMetadata(float(ce), template.adduct, template.collision_type, template.precursor_mz)
        pred = model.predict_spectrum(prepared, md)
        wm = weighted_mean_mz(pred) if pred.bins.sum() > 0 else float("nan")
        table.rows.append(CESweepRow(compound_id, float(ce), "predicted", wm))
        if real and ce in real:
            table.rows.append(CESweepRow(compound_id, float(ce), "real", weighted_mean_mz(real[ce])))
    return table


def ce_trend(table: CESweepTable, source: str = "predicted") -> float:
    """Spearman correlation between energy and weighted mean m/z, pooled over compounds."""
    rows = [r for r in table.select(source) if np.isfinite(r.weighted_mean_mz)]
    if len(rows) < 2:
        return float("nan")
    return float(spearmanr([r.collision_energy for r in rows], [r.weighted_mean_mz for r in rows])[0])


# ---------------------------------------------------------------- attention


@dataclass
class AttentionStats:
    mean_attention: dict[str, float]
    ratios: dict[str, float]
    n_molecules: dict[str, int]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element", "mean_attention", "ratio_vs_carbon", "n_molecules"])
            for el in sorted(self.mean_attention):
                ratio = self.ratios.get(el)
                w.writerow([el, repr(self.mean_attention[el]), "" if ratio is None else repr(ratio), self.n_molecules.get(el, 0)])


def heteroatom_ratios(maps: Iterable[AttentionMap]) -> AttentionStats:
    """Per-element attention relative to carbon within each molecule.

    Only molecules containing both carbon and element E contribute to the
    E:C ratio; ratios are averaged across those molecules.
    """
    per_elem_att: dict[str, list[float]] = defaultdict(list)
    per_elem_ratio: dict[str, list[float]] = defaultdict(list)
    for amap in maps:
        w = np.asarray(amap.weights, dtype=np.float64)
        elements = list(amap.elements)
        if len(elements) != len(w):
            raise ValueError("attention map and element list differ in length")
        by_elem: dict[str, list[Fraction]] = defaultdict(list)
        for el, x in zip(elements, w):
            by_elem[el].append(Fraction(float(x)))
        # exact rational means so a uniform map gives ratios of exactly 1
        means = {el: sum(v) / len(v) for el, v in by_elem.items()}
        for el, m in means.items():
            per_elem_att[el].append(float(m))
        if "C" not in means or means["C"] <= 0:
            continue
        for el, m in means.items():
            if el != "C":
                per_elem_ratio[el].append(float(m / means["C"]))
    return AttentionStats(
        {el: float(np.mean(v)) for el, v in sorted(per_elem_att.items())},
        {el: float(sum(map(Fraction, v)) / len(v)) for el, v in sorted(per_elem_ratio.items())},
        {el: len(v) for el, v in sorted(per_elem_ratio.items())},
    )


def heteroatom_attention(model, graphs: Iterable[PreparedGraph]) -> AttentionStats:
    """Attention ratios over a dataset; ``model`` needs ``attention_map(prepared)``."""
    return heteroatom_ratios(model.attention_map(g) for g in graphs)

