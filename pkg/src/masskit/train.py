"""Scaffold splitting, AdamW, plateau scheduling and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .chem import parse_smiles, scaffold_key
from .graphprep import EncodingConfig, PreparedGraph, prepare
from .model import ModelConfig, ModelParams, collate, forward, init_params, iter_minibatches, predict_batches
from .spectra import MetadataScheme, Spectrum, bin_spectrum, encode_metadata

__all__ = [
    "SPLITS",
    "SplitAssignment",
    "scaffold_split",
    "OptimizerState",
    "adamw_step",
    "PlateauState",
    "plateau_schedule",
    "TrainConfig",
    "Record",
    "build_records",
    "cosine_loss",
    "mean_cosine_similarity",
    "TrainResult",
    "train_loop",
    "write_metric_log",
    "model_grad_check",
]

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------- splitting


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    scaffold_of: dict[str, str]
    fractions: dict[str, float]

    def ids(self, split: str) -> list[str]:
        return [cid for cid, s in self.assignment.items() if s == split]

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS + ("excluded",)}
        for s in self.assignment.values():
            out[s] += 1
        return out

    def scaffolds(self, split: str) -> set[str]:
        return {self.scaffold_of[cid] for cid in self.ids(split)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["compound_id", "split", "scaffold"])
            for cid in sorted(self.assignment):
                w.writerow([cid, self.assignment[cid], self.scaffold_of[cid]])

    @classmethod
    def read_csv(cls, path) -> "SplitAssignment":
        assignment, scaffold_of = {}, {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                assignment[row["compound_id"]] = row["split"]
                scaffold_of[row["compound_id"]] = row["scaffold"]
        return cls(assignment, scaffold_of, _achieved(assignment))


def _achieved(assignment: Mapping[str, str]) -> dict[str, float]:
    kept = [s for s in assignment.values() if s != "excluded"]
    n = max(len(kept), 1)
    return {s: sum(1 for k in kept if k == s) / n for s in SPLITS}


def scaffold_split(
    compounds: Mapping[str, str] | Iterable[tuple[str, str]],
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
    heldout_scaffolds: Iterable[str] = (),
    seed: int = 0,
    scaffolds: Mapping[str, str] | None = None,
) -> SplitAssignment:
    """Assign whole scaffold groups to train/val/test.

    ``compounds`` maps compound id to SMILES.  Groups are shuffled with
    ``seed`` and each goes to the split furthest below its target compound
    count.  Compounds whose scaffold is in ``heldout_scaffolds`` are marked
    ``excluded``.  Precomputed scaffold keys may be passed as ``scaffolds``.
    """
    items = list(compounds.items()) if isinstance(compounds, Mapping) else list(compounds)
    if not items:
        raise ValueError("compound list is empty")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    heldout = set(heldout_scaffolds)
    scaffold_of = {}
    for cid, smiles in items:
        scaffold_of[cid] = scaffolds[cid] if scaffolds and cid in scaffolds else scaffold_key(parse_smiles(smiles))
    groups: dict[str, list[str]] = defaultdict(list)
    assignment = {}
    for cid, _ in items:
        key = scaffold_of[cid]
        if key in heldout:
            assignment[cid] = "excluded"
        else:
            groups[key].append(cid)
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    total = sum(len(v) for v in groups.values())
    targets = [f * total for f in fractions]
    counts = [0, 0, 0]
    for k in order:
        members = groups[keys[k]]
        deficits = [targets[s] - counts[s] for s in range(3)]
        best = int(np.argmax(deficits))
        counts[best] += len(members)
        for cid in members:
            assignment[cid] = SPLITS[best]
    assignment = {cid: assignment[cid] for cid, _ in items}
    return SplitAssignment(assignment, scaffold_of, _achieved(assignment))


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _array(p):
    return p.data if isinstance(p, Tensor) else p


def adamw_step(params: Mapping, grads: Mapping[str, np.ndarray], state: OptimizerState) -> None:
    """One AdamW update in place, with weight decay decoupled from the moments."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise ad.NonFiniteError(f"gradient of {name!r} has {bad} non-finite entries at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        w = _array(p)
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m = state.m[name]
        v = state.v[name]
        if state.weight_decay:
            w *= 1.0 - state.lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- scheduler


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping; ``mode='max'`` for similarity metrics.

    ``decay='multiplicative'`` scales the rate by ``factor``; ``'linear'``
    subtracts ``linear_step`` (a fraction of the initial rate) instead.
    """

    lr: float
    patience: int = 5
    factor: float = 0.5
    mode: str = "max"
    min_delta: float = 1e-4
    lr_min: float = 1e-6
    decay: str = "multiplicative"
    linear_step: float = 0.1
    initial_lr: float | None = None
    best: float | None = None
    bad_epochs: int = 0
    seen: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        if self.decay not in ("multiplicative", "linear"):
            raise ValueError("decay must be 'multiplicative' or 'linear'")
        if self.initial_lr is None:
            self.initial_lr = self.lr


def plateau_schedule(state: PlateauState, history: Sequence[float]) -> float:
    """Consume metrics not yet seen by ``state`` and return the new rate."""
    if not len(history):
        raise ValueError("metric history is empty")
    for value in history[state.seen :]:
        state.seen += 1
        if state.best is None:
            state.best = value
            state.bad_epochs = 0
            continue
        gain = value - state.best if state.mode == "max" else state.best - value
        if gain >= state.min_delta:
            state.best = value
            state.bad_epochs = 0
            continue
        state.bad_epochs += 1
        if state.bad_epochs >= state.patience:
            if state.decay == "multiplicative":
                new = state.lr * state.factor
            else:
                new = state.lr - state.linear_step * state.initial_lr
            state.lr = max(new, state.lr_min)
            state.bad_epochs = 0
    return state.lr


# ---------------------------------------------------------------- data


@dataclass
class Record:
    compound_id: str
    graph: PreparedGraph
    metadata_vec: np.ndarray
    target: np.ndarray
    precursor_mz: float
    spectrum: Spectrum | None = None


def build_records(
    spectra: Sequence[Spectrum],
    smiles_by_id: Mapping[str, str] | None,
    encoding: EncodingConfig,
    scheme: MetadataScheme,
    n_bins: int = 1000,
    bin_width: float = 1.0,
    mz_min: float = 0.0,
    cache: dict | None = None,
) -> list[Record]:
    """Pair spectra with prepared graphs, binned targets and metadata vectors.

    SMILES come from ``smiles_by_id`` or, failing that, the spectrum's own
    ``smiles`` field.  ``cache`` maps compound id to an existing
    :class:`PreparedGraph` and is filled in as graphs are prepared.
    """
    cache = {} if cache is None else cache
    records = []
    for s in spectra:
        cid = s.compound_id
        if cid not in cache:
            smiles = (smiles_by_id or {}).get(cid) or s.smiles
            if not smiles:
                raise KeyError(f"no SMILES for compound {cid!r}")
            cache[cid] = prepare(parse_smiles(smiles), encoding)
        target = bin_spectrum(s, bin_width, mz_min, n_bins).bins
        records.append(
            Record(cid, cache[cid], encode_metadata(s.metadata, scheme), target, s.metadata.precursor_mz, s)
        )
    return records


# ---------------------------------------------------------------- loss


def cosine_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean cosine distance between rows of ``pred`` and ``target``."""
    target = np.asarray(target, dtype=pred.data.dtype)
    tnorm = np.linalg.norm(target, axis=-1, keepdims=True)
    unit = target / np.where(tnorm > 0, tnorm, 1.0)
    dot = ad.reduce_sum(ad.mul(pred, unit), axis=-1)
    tiny = np.finfo(pred.data.dtype).tiny ** 0.5
    norm = ad.sqrt(ad.add(ad.reduce_sum(ad.mul(pred, pred), axis=-1), tiny))
    return ad.reduce_mean(ad.sub(1.0, ad.div(dot, norm)))


def _row_cosine(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pn = np.linalg.norm(pred, axis=-1)
    tn = np.linalg.norm(target, axis=-1)
    dot = np.einsum("ij,ij->i", pred, target)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = dot / (pn * tn)
    return np.where((pn > 0) & (tn > 0), sim, 0.0)


def mean_cosine_similarity(records: Sequence[Record], params: ModelParams, config: ModelConfig, batch_size: int = 64) -> float:
    if not records:
        return float("nan")
    pred = predict_batches(
        [r.graph for r in records],
        [r.metadata_vec for r in records],
        params,
        config,
        [r.precursor_mz for r in records],
        batch_size,
    )
    return float(_row_cosine(pred, np.stack([r.target for r in records])).mean())


# ---------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    initial_lr: float = 1e-3
    weight_decay: float = 1e-4
    scheduler_patience: int = 5
    scheduler_factor: float = 0.5
    scheduler_decay: str = "multiplicative"
    dropout_p: float = 0.0
    seed: int = 0
    early_stop_patience: int = 0
    max_steps: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ValueError("scheduler_factor must be in (0, 1)")
        if self.scheduler_patience < 1:
            raise ValueError("scheduler_patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    log: list[dict]
    best_epoch: int
    best_val: float
    steps: int


def write_metric_log(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_cosine_sim", "lr"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_cosine_sim"]), repr(r["lr"])])


def train_loop(
    train_records: Sequence[Record],
    val_records: Sequence[Record],
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: ModelParams | None = None,
    log_path=None,
    progress=None,
) -> TrainResult:
    """Minibatch cosine-distance training with AdamW and plateau decay.

    Everything random derives from ``train_config.seed``: initialization,
    the shuffle stream and the dropout stream.  Training stops after
    ``epochs``, after ``max_steps`` optimizer steps if set, or when the
    validation similarity has not improved for ``early_stop_patience``
    epochs if set.  ``val_records`` may be empty, in which case the
    training similarity drives checkpoint selection and the scheduler.
    """
    if not train_records:
        raise ValueError("training split is empty")
    cfg = model_config
    if train_config.dropout_p != cfg.dropout_p:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "dropout_p": train_config.dropout_p, "encoding": cfg.encoding})
    dtype = np.float32 if train_config.dtype == "float32" else np.float64
    prev_dtype = ad.get_default_dtype()
    ad.set_default_dtype(dtype)
    try:
        return _train(train_records, val_records, cfg, train_config, params, dtype, log_path, progress)
    finally:
        ad.set_default_dtype(prev_dtype)


def _train(train_records, val_records, cfg, train_config, params, dtype, log_path, progress) -> TrainResult:
    if params is None:
        params = init_params(cfg, train_config.seed, dtype=dtype)
    shuffle_rng = np.random.default_rng([train_config.seed, 1])
    dropout_rng = np.random.default_rng([train_config.seed, 2])
    opt = OptimizerState(lr=train_config.initial_lr, weight_decay=train_config.weight_decay)
    sched = PlateauState(
        lr=train_config.initial_lr,
        patience=train_config.scheduler_patience,
        factor=train_config.scheduler_factor,
        decay=train_config.scheduler_decay,
    )
    monitor = val_records if val_records else train_records

    val = mean_cosine_similarity(monitor, params, cfg)
    best_val = val
    best = params.copy_arrays()
    best_epoch = 0
    history: list[float] = []
    log = [{"epoch": 0, "train_loss": float("nan"), "val_cosine_sim": val, "lr": opt.lr}]
    steps = 0
    stale = 0
    graphs = [r.graph for r in train_records]
    metas = np.stack([r.metadata_vec for r in train_records])
    targets = np.stack([r.target for r in train_records])
    precs = np.array([r.precursor_mz for r in train_records])
    done = False
    for epoch in range(1, train_config.epochs + 1):
        losses, sizes = [], []
        for idx in iter_minibatches(len(train_records), train_config.batch_size, shuffle_rng):
            batch = collate([graphs[i] for i in idx], metas[idx], cfg, precs[idx])
            params.zero_grad()
            with Tape() as tape:
                loss = cosine_loss(forward(batch, params, cfg, True, dropout_rng), targets[idx])
            if not np.isfinite(loss.item()):
                ids = [train_records[i].compound_id for i in idx]
                raise ad.NonFiniteError(f"non-finite loss at epoch {epoch}, batch compounds {ids}")
            tape.backward(loss)
            adamw_step(params, params.grads(), opt)
            losses.append(loss.item())
            sizes.append(len(idx))
            steps += 1
            if train_config.max_steps and steps >= train_config.max_steps:
                done = True
                break
        train_loss = float(np.dot(losses, sizes) / np.sum(sizes))
        val = mean_cosine_similarity(monitor, params, cfg)
        history.append(val)
        log.append({"epoch": epoch, "train_loss": train_loss, "val_cosine_sim": val, "lr": opt.lr})
        if progress is not None:
            progress(log[-1])
        if val > best_val:
            best_val, best, best_epoch, stale = val, params.copy_arrays(), epoch, 0
        else:
            stale += 1
        opt.lr = plateau_schedule(sched, history)
        if done or (train_config.early_stop_patience and stale >= train_config.early_stop_patience):
            break
    if log_path is not None:
        write_metric_log(log_path, log)
    best_params = ModelParams.from_arrays(best)
    return TrainResult(params, best_params, log, best_epoch, best_val, steps)


# ---------------------------------------------------------------- gradient check

GRAD_CHECK_SMILES = ("CC(=O)Nc1ccc(O)cc1", "OCC1CCNC1", "ClC=CC#N")


def model_grad_check(
    model_config: ModelConfig,
    smiles: Sequence[str] = GRAD_CHECK_SMILES,
    seed: int = 0,
    eps: float = 1e-4,
) -> float:
    """Max relative error of tape gradients vs central differences, in 64-bit.

    Every parameter entry is perturbed; the loss is the mean cosine distance
    of a small batch against random nonnegative targets.  Dropout is off.
    """
    prev = ad.get_default_dtype()
    ad.set_default_dtype(np.float64)
    try:
        cfg = ModelConfig.from_dict({**model_config.to_dict(), "dropout_p": 0.0, "encoding": model_config.encoding})
        rng = np.random.default_rng([seed, 3])
        graphs = [prepare(parse_smiles(s), cfg.encoding) for s in smiles]
        meta = rng.uniform(0.0, 1.0, size=(len(graphs), cfg.metadata_dim))
        targets = rng.uniform(0.0, 1.0, size=(len(graphs), cfg.output_bins)) * (rng.uniform(size=(len(graphs), cfg.output_bins)) < 0.3)
        params = init_params(cfg, seed, dtype=np.float64)
        # spread the zero-initialized biases so their gradients are exercised off the symmetric point
        for name, t in params.items():
            if not t.data.any():
                t.data[...] = rng.normal(0.0, 0.1, size=t.data.shape)
        batch = collate(graphs, meta, cfg, np.full(len(graphs), 500.0))

        def loss():
            return cosine_loss(forward(batch, params, cfg, False, None), targets)

        return ad.grad_check(loss, params.tensors(), eps)
    finally:
        ad.set_default_dtype(prev)
