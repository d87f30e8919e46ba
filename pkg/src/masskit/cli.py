"""Command-line front end: ``python -m masskit <command>``.

Every command reads an optional JSON run config (``--config``), applies
flag overrides, validates inputs before computing anything, and writes
CSV/MSP/checkpoint outputs (plus SVG figures with ``--svg``) under
``--out-dir``.  The effective config is echoed to ``<command>.config.json``.

Exit codes: 0 success, 1 failed check, 2 usage or config error,
3 missing input, 4 invalid data.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .cache import GraphCache
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .chem import SmilesError, parse_smiles, read_molecule_file, scaffold_key, write_molecule_file
from .config import ConfigError, RunConfig, load_run_config
from .corpus import generate_corpus
from .evalkit import (
    CESweepTable,
    MissingCandidateError,
    ScaffoldOverlapError,
    aggregate_seeds,
    build_reference_set,
    ce_sweep,
    ce_trend,
    heteroatom_attention,
    rank_queries,
    similarity_eval,
)
from .fragsim import generate_dataset, make_metadata, simulate_spectrum
from .graphprep import VocabularyError, prepare
from .model import Predictor
from .plotting import ce_density_table, render_bar_svg, render_mirror_svg, write_density_csv
from .spectra import (
    BinnedSpectrum,
    MetadataError,
    MSPFormatError,
    Peak,
    Spectrum,
    SpectrumMetadata,
    bin_spectrum,
    read_msp,
    write_msp,
)
from .train import Record, SplitAssignment, build_records, model_grad_check, scaffold_split, train_loop

__all__ = ["main", "build_parser", "CliError", "MissingInputError"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 1, 2, 3, 4


class CliError(Exception):
    exit_code = EXIT_FAIL


class MissingInputError(CliError):
    exit_code = EXIT_MISSING


_DATA_ERRORS = (SmilesError, MSPFormatError, MetadataError, VocabularyError, CheckpointError, ScaffoldOverlapError, MissingCandidateError)

_D = RunConfig()


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="PATH", default=None, help="JSON run config (default: built-in defaults)")
    g.add_argument("--out-dir", metavar="DIR", default=None, help=f"directory for all inputs and outputs (default: {_D.out_dir})")
    g.add_argument("--seed", type=int, default=None, help=f"global seed (default: {_D.seed})")
    g.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker cap; falls back to MASSKIT_THREADS, then config threads, then 1 (default: unset)",
    )
    g.add_argument("--svg", action="store_true", help="also write SVG figures (default: off)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masskit",
        description="Graph-transformer MS/MS spectrum prediction on a synthetic fragmentation corpus.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p)
        return p

    p = add("gen-data", "generate a molecule corpus and synthetic spectra")
    p.add_argument("--n-molecules", type=int, default=None, help=f"corpus size (default: {_D.generation.n_molecules})")
    p.add_argument("--molecules", metavar="PATH", default=None, help="use this molecule file instead of generating one (default: generate)")

    p = add("split", "scaffold split of the molecule file")
    p.add_argument("--heldout-scaffolds", metavar="PATH", default=None, help="file with one scaffold SMILES per line to exclude (default: none)")

    p = add("train", "train a model on the train split")
    p.add_argument("--epochs", type=int, default=None, help=f"training epochs (default: {_D.train.epochs})")
    p.add_argument("--lr", type=float, default=None, help=f"initial learning rate (default: {_D.train.initial_lr:g})")
    p.add_argument("--batch-size", type=int, default=None, help=f"minibatch size (default: {_D.train.batch_size})")

    p = add("predict", "predict one spectrum from a SMILES string")
    p.add_argument("--smiles", required=True, help="input molecule (required)")
    p.add_argument("--ce", type=float, required=True, help="collision energy (required)")
    p.add_argument("--adduct", default=_D.metadata.adducts[0], help=f"precursor adduct (default: {_D.metadata.adducts[0]})")
    p.add_argument("--collision-type", default=None, help=f"collision type (default: {_D.oracle.collision_type})")
    p.add_argument("--precursor-mz", type=float, default=None, help="precursor m/z (default: molecule mass plus adduct shift)")
    p.add_argument("--output", metavar="PATH", default="prediction.msp", help="MSP output file (default: prediction.msp)")

    p = add("eval-sim", "cosine similarity of predictions on a split")
    p.add_argument("--split", default=None, help=f"split to evaluate (default: {_D.eval.split})")
    p.add_argument(
        "--checkpoint", metavar="PATH", action="append", default=None,
        help=f"checkpoint(s); repeat to aggregate seeds (default: {_D.data.checkpoint})",
    )

    p = add("rank", "rank held-out compounds against predicted and decoy spectra")
    p.add_argument("--split", default=None, help=f"held-out split (default: {_D.eval.split})")
    p.add_argument("--n-heldout", type=int, default=None, help=f"number of held-out compounds, 0 for all (default: {_D.eval.n_heldout})")
    p.add_argument("--ce-tolerance", type=float, default=None, help=f"collision energy match tolerance (default: {_D.eval.ce_tolerance:g})")

    p = add("ce-sweep", "predicted mean m/z across a collision energy grid")
    p.add_argument("--split", default=None, help=f"split to sweep (default: {_D.eval.split})")
    p.add_argument("--compound", action="append", default=None, help="compound id; repeatable (default: every compound in the split)")

    p = add("attention", "heteroatom attention ratios versus carbon")
    p.add_argument("--split", default=None, help=f"split to analyse (default: {_D.eval.split})")

    p = add("grad-check", "compare tape gradients with central differences")
    p.add_argument("--layers", type=int, default=2, help="transformer layers (default: 2)")
    p.add_argument("--hidden-dim", type=int, default=16, help="hidden width (default: 16)")
    p.add_argument("--heads", type=int, default=2, help="attention heads (default: 2)")
    p.add_argument("--bins", type=int, default=64, help="output bins (default: 64)")
    p.add_argument("--eps", type=float, default=1e-4, help="finite-difference step (default: 0.0001)")
    p.add_argument("--tolerance", type=float, default=1e-3, help="pass threshold on max relative error (default: 0.001)")
    return parser


# ---------------------------------------------------------------- helpers


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    extra = {
        "n_molecules": "generation.n_molecules",
        "epochs": "train.epochs",
        "lr": "train.initial_lr",
        "batch_size": "train.batch_size",
        "split": "eval.split",
        "n_heldout": "eval.n_heldout",
        "ce_tolerance": "eval.ce_tolerance",
        "heldout_scaffolds": "data.heldout_scaffolds",
    }
    for attr, key in extra.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return load_run_config(args.config, overrides)


def _threads(args, cfg: RunConfig) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("MASSKIT_THREADS"):
        try:
            n = int(os.environ["MASSKIT_THREADS"])
        except ValueError:
            raise ConfigError(f"MASSKIT_THREADS must be an integer, got {os.environ['MASSKIT_THREADS']!r}") from None
    else:
        n = cfg.threads or 1
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _need(*paths: Path) -> None:
    for p in paths:
        if not Path(p).exists():
            raise MissingInputError(f"missing input: {p}")


def _echo(cfg: RunConfig, command: str) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.config.json").write_text(cfg.to_json(), encoding="utf-8")


def _load_dataset(cfg: RunConfig, threads: int) -> tuple[dict, list[Record], SplitAssignment]:
    mol_path, spec_path, split_path = cfg.path(cfg.data.molecules), cfg.path(cfg.data.spectra), cfg.path(cfg.data.split)
    _need(mol_path, spec_path, split_path)
    smiles = dict(read_molecule_file(mol_path))
    spectra = read_msp(spec_path)
    split = SplitAssignment.read_csv(split_path)
    unknown = sorted({s.compound_id for s in spectra} - set(smiles))
    if unknown:
        raise CliError(f"spectra reference compounds missing from {mol_path}: {unknown[:5]}")
    graphs, _ = GraphCache(cfg.path(cfg.data.cache_dir), cfg.encoding).get(smiles, threads)
    records = build_records(
        spectra, smiles, cfg.encoding, cfg.metadata, cfg.binning.n_bins, cfg.binning.bin_width, cfg.binning.mz_min, cache=graphs
    )
    return smiles, records, split


def _in_split(records, split: SplitAssignment, name: str) -> list[Record]:
    if name not in ("train", "val", "test", "excluded"):
        raise ConfigError(f"unknown split {name!r}")
    return [r for r in records if split.assignment.get(r.compound_id) == name]


def _predictor(cfg: RunConfig, path=None) -> Predictor:
    ckpt_path = cfg.path(path or cfg.data.checkpoint)
    _need(ckpt_path)
    ckpt = load_checkpoint(ckpt_path, expected_encoding=cfg.encoding)
    return Predictor(ckpt.params, ckpt.model_config, ckpt.metadata_scheme)


def _write_rows(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig, threads: int) -> int:
    out = Path(cfg.out_dir)
    mol_path = cfg.path(cfg.data.molecules)
    if args.molecules:
        _need(Path(args.molecules))
        records = read_molecule_file(args.molecules)
        out.mkdir(parents=True, exist_ok=True)
        if Path(args.molecules).resolve() != mol_path.resolve():
            write_molecule_file(mol_path, records)
    else:
        records = generate_corpus(cfg.generation.n_molecules, cfg.seed, cfg.generation.max_heavy_atoms)
        out.mkdir(parents=True, exist_ok=True)
        write_molecule_file(mol_path, records)
    summary = generate_dataset(mol_path, cfg.generation.ce_grid, cfg.generation.adducts, cfg.oracle, cfg.path(cfg.data.spectra))
    _write_rows(out / "dataset_summary.csv", ["scaffold", "n_spectra"], sorted(summary.spectra_per_scaffold.items()))
    print(f"{summary.n_molecules} molecules, {summary.n_spectra} spectra, {summary.n_scaffolds} scaffolds")
    return EXIT_OK


def _read_heldout(cfg: RunConfig) -> list[str]:
    if not cfg.data.heldout_scaffolds:
        return []
    path = cfg.path(cfg.data.heldout_scaffolds)
    _need(path)
    keys = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if line and not line.startswith("#"):
            try:
                keys.append(scaffold_key(parse_smiles(line)))
            except SmilesError as exc:
                raise SmilesError(f"{path}:{lineno}: {exc}") from None
    return keys


def cmd_split(args, cfg: RunConfig, threads: int) -> int:
    mol_path = cfg.path(cfg.data.molecules)
    _need(mol_path)
    heldout = _read_heldout(cfg)
    split = scaffold_split(read_molecule_file(mol_path), cfg.generation.split_fractions, heldout, cfg.seed)
    split.write_csv(cfg.path(cfg.data.split))
    counts = split.counts()
    print(" ".join(f"{k}={counts.get(k, 0)}" for k in ("train", "val", "test", "excluded")))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, threads: int) -> int:
    _, records, split = _load_dataset(cfg, threads)
    train, val = _in_split(records, split, "train"), _in_split(records, split, "val")
    if not train:
        raise CliError("training split is empty")
    mcfg = cfg.model_config()

    def progress(row):
        print(f"epoch {row['epoch']}: train_loss={row['train_loss']:.5f} val_cosine_sim={row['val_cosine_sim']:.5f} lr={row['lr']:g}")

    result = train_loop(train, val, mcfg, cfg.train_config(), log_path=Path(cfg.out_dir) / "metrics.csv", progress=progress)
    save_checkpoint(
        cfg.path(cfg.data.checkpoint),
        result.best_params,
        mcfg,
        cfg.metadata,
        extra={"best_epoch": result.best_epoch, "best_val_cosine_sim": result.best_val, "steps": result.steps, "seed": cfg.seed},
    )
    print(f"best epoch {result.best_epoch}, val cosine similarity {result.best_val:.4f}")
    return EXIT_OK


def _binned_to_spectrum(pred: BinnedSpectrum, md: SpectrumMetadata, name: str, smiles: str) -> Spectrum:
    top = pred.bins.max()
    if not top > 0:
        raise CliError("model predicted an all-zero spectrum")
    peaks = [Peak(float(pred.centers[k]), float(pred.bins[k] / top)) for k in np.flatnonzero(pred.bins > 0)]
    return Spectrum(peaks, md, name, name=name, smiles=smiles)


def cmd_predict(args, cfg: RunConfig, threads: int) -> int:
    model = _predictor(cfg)
    graph = parse_smiles(args.smiles)
    ctype = args.collision_type or cfg.oracle.collision_type
    if args.precursor_mz is not None:
        md = SpectrumMetadata(args.ce, args.adduct, ctype, args.precursor_mz)
    else:
        base = make_metadata(graph, args.ce, args.adduct, cfg.oracle)
        md = SpectrumMetadata(base.collision_energy, base.adduct, ctype, base.precursor_mz)
    pred = model.predict_spectrum(prepare(graph, model.config.encoding), md)
    out = cfg.path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_msp(out, [_binned_to_spectrum(pred, md, "prediction", args.smiles)])
    if args.svg:
        oracle = bin_spectrum(simulate_spectrum(graph, md, cfg.oracle), cfg.binning.bin_width, cfg.binning.mz_min, cfg.binning.n_bins)
        render_mirror_svg(oracle, pred, out.with_suffix(".svg"), f"{args.smiles} at CE {args.ce:g}: oracle (top) vs predicted (bottom)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval_sim(args, cfg: RunConfig, threads: int) -> int:
    paths = args.checkpoint or [cfg.data.checkpoint]
    models = [_predictor(cfg, p) for p in paths]
    _, records, split = _load_dataset(cfg, threads)
    recs = _in_split(records, split, cfg.eval.split)
    if not recs:
        raise CliError(f"split {cfg.eval.split!r} is empty")
    out = Path(cfg.out_dir)
    reports = [similarity_eval(m, recs) for m in models]
    reports[0].write_csv(out / "similarity.csv")
    rows = []
    for p, rep in zip(paths, reports):
        rows.append([p, len(recs), repr(rep.mean), repr(rep.sd), repr(rep.compound_mean), repr(rep.compound_sd)])
    _write_rows(out / "similarity_summary.csv", ["checkpoint", "n_spectra", "mean", "sd", "compound_mean", "compound_sd"], rows)
    if len(reports) > 1:
        mean, sd = aggregate_seeds(reports)
        _write_rows(out / "similarity_seeds.csv", ["n_checkpoints", "mean", "sd"], [[len(reports), repr(mean), repr(sd)]])
        print(f"cosine similarity over {len(reports)} checkpoints: {mean:.4f} +/- {sd:.4f}")
    else:
        print(f"cosine similarity on {cfg.eval.split}: {reports[0].mean:.4f} +/- {reports[0].sd:.4f}")
    return EXIT_OK


def cmd_rank(args, cfg: RunConfig, threads: int) -> int:
    model = _predictor(cfg)
    _, records, split = _load_dataset(cfg, threads)
    held = _in_split(records, split, cfg.eval.split)
    ids = sorted({r.compound_id for r in held})
    if cfg.eval.n_heldout:
        keep = set(ids[: cfg.eval.n_heldout])
        held = [r for r in held if r.compound_id in keep]
    if not held:
        raise CliError(f"split {cfg.eval.split!r} is empty")
    decoys = [r for r in records if split.assignment.get(r.compound_id) in ("train", "val")]
    refs = build_reference_set(held, model, decoys, split.scaffold_of)
    report = rank_queries(held, refs, cfg.eval.ce_tolerance, workers=threads)
    out = Path(cfg.out_dir)
    report.write_csv(out / "ranking_detail.csv", out / "ranking_summary.csv")
    print(f"{len(report.queries)} queries: mean normalized rank {report.mean_normalized_rank:.4f}, top-5% {report.top5_fraction:.4f}")
    return EXIT_OK


def cmd_ce_sweep(args, cfg: RunConfig, threads: int) -> int:
    model = _predictor(cfg)
    _, records, split = _load_dataset(cfg, threads)
    recs = _in_split(records, split, cfg.eval.split)
    ids = sorted({r.compound_id for r in recs})
    if args.compound:
        missing = sorted(set(args.compound) - set(ids))
        if missing:
            raise MissingInputError(f"compounds not in split {cfg.eval.split!r}: {missing}")
        ids = list(dict.fromkeys(args.compound))
    if not ids:
        raise CliError(f"split {cfg.eval.split!r} is empty")
    by_id: dict[str, list[Record]] = {}
    for r in recs:
        by_id.setdefault(r.compound_id, []).append(r)
    out = Path(cfg.out_dir)
    table = CESweepTable()
    for cid in ids:
        first = by_id[cid][0]
        real = {
            r.spectrum.metadata.collision_energy: BinnedSpectrum(r.target, cfg.binning.bin_width, cfg.binning.mz_min)
            for r in by_id[cid]
            if r.spectrum.metadata.adduct == first.spectrum.metadata.adduct
        }
        sweep = ce_sweep(model, cid, first.graph, sorted(cfg.eval.ce_grid), first.spectrum.metadata, real)
        table.extend(sweep)
        if args.svg and args.compound:
            for ce in sorted(real):
                md = first.spectrum.metadata
                pred = model.predict_spectrum(first.graph, SpectrumMetadata(ce, md.adduct, md.collision_type, md.precursor_mz))
                render_mirror_svg(real[ce], pred, out / f"mirror_{cid}_ce{ce:g}.svg", f"{cid} at CE {ce:g}: real (top) vs predicted (bottom)")
    table.write_csv(out / "ce_sweep.csv")
    trend_rows = []
    for source in ("predicted", "real"):
        rows = table.select(source)
        if rows:
            ce_values, edges, counts = ce_density_table(
                [r.collision_energy for r in rows], [r.weighted_mean_mz for r in rows], cfg.eval.density_mz_width
            )
            write_density_csv(out / f"ce_density_{source}.csv", ce_values, edges, counts)
            trend_rows.append([source, len(rows), repr(ce_trend(table, source))])
    _write_rows(out / "ce_trend.csv", ["source", "n_rows", "spearman"], trend_rows)
    print(f"Spearman(CE, predicted mean m/z) = {ce_trend(table):.4f} over {len(ids)} compounds")
    return EXIT_OK


def cmd_attention(args, cfg: RunConfig, threads: int) -> int:
    model = _predictor(cfg)
    _, records, split = _load_dataset(cfg, threads)
    graphs = {}
    for r in _in_split(records, split, cfg.eval.split):
        graphs.setdefault(r.compound_id, r.graph)
    if not graphs:
        raise CliError(f"split {cfg.eval.split!r} is empty")
    stats = heteroatom_attention(model, [graphs[c] for c in sorted(graphs)])
    out = Path(cfg.out_dir)
    stats.write_csv(out / "attention.csv")
    if args.svg and stats.ratios:
        els = sorted(stats.ratios)
        render_bar_svg(els, [stats.ratios[e] for e in els], out / "attention.svg", "attention relative to carbon", "ratio vs C")
    for el in sorted(stats.ratios):
        print(f"{el}: {stats.ratios[el]:.3f} ({stats.n_molecules[el]} molecules)")
    return EXIT_OK


def cmd_grad_check(args, cfg: RunConfig, threads: int) -> int:
    from .model import ModelConfig

    mcfg = ModelConfig(
        num_layers=args.layers,
        hidden_dim=args.hidden_dim,
        attn_dim_per_head=max(1, args.hidden_dim // args.heads),
        num_heads=args.heads,
        ffn_dim=2 * args.hidden_dim,
        mlp_hidden_dims=[2 * args.hidden_dim],
        output_bins=args.bins,
        metadata_dim=cfg.metadata.dim,
        encoding=cfg.encoding,
    )
    err = model_grad_check(mcfg, seed=cfg.seed, eps=args.eps)
    ok = err < args.tolerance
    print(f"max relative error {err:.3e} ({'PASS' if ok else 'FAIL'} vs {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval-sim": cmd_eval_sim,
    "rank": cmd_rank,
    "ce-sweep": cmd_ce_sweep,
    "attention": cmd_attention,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        threads = _threads(args, cfg)
        if args.command != "grad-check":
            _echo(cfg, args.command)
        return COMMANDS[args.command](args, cfg, threads)
    except ConfigError as exc:
        print(f"masskit: error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"masskit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (*_DATA_ERRORS, ValueError, KeyError) as exc:
        print(f"masskit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
