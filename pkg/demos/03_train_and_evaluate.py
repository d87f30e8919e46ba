"""Train a small model and run the evaluation suite on held-out scaffolds.

A reduced version of the desk-scale experiment: 250 generated molecules,
five collision energies, a scaffold split, a short training run, then
cosine similarity against the mean-spectrum baseline, library ranking
against decoys, the collision-energy trend and heteroatom attention.
Takes a couple of minutes on one core.

Run: python demos/03_train_and_evaluate.py
"""
import time
from pathlib import Path

import numpy as np

from masskit.chem import write_molecule_file
from masskit.corpus import generate_corpus
from masskit.evalkit import (
    CESweepTable,
    build_reference_set,
    ce_sweep,
    ce_trend,
    heteroatom_attention,
    rank_queries,
    similarity_eval,
)
from masskit.fragsim import generate_dataset
from masskit.graphprep import EncodingConfig
from masskit.model import ModelConfig, Predictor
from masskit.plotting import render_bar_svg
from masskit.spectra import MetadataScheme, read_msp
from masskit.train import TrainConfig, build_records, scaffold_split, train_loop

out = Path("demo_out")
out.mkdir(exist_ok=True)
grid = [10.0, 50.0, 100.0, 150.0, 200.0]

# %% data
mols = generate_corpus(250, seed=0)
write_molecule_file(out / "molecules.tsv", mols)
summary = generate_dataset(out / "molecules.tsv", grid, ["[M+H]+"], out_path=out / "spectra.msp")
print(f"{summary.n_molecules} molecules, {summary.n_spectra} spectra, {summary.n_scaffolds} scaffolds")

smiles = dict(mols)
split = scaffold_split(smiles, (0.7, 0.1, 0.2), seed=0)
records = build_records(read_msp(out / "spectra.msp"), smiles, EncodingConfig(), MetadataScheme())
parts = {s: [r for r in records if split.assignment[r.compound_id] == s] for s in ("train", "val", "test")}
print({s: len(v) for s, v in parts.items()}, "spectra per split")

# %% training
cfg = ModelConfig(
    num_layers=2, hidden_dim=64, attn_dim_per_head=16, num_heads=4, ffn_dim=128,
    mlp_hidden_dims=[512, 512], output_bins=1000, head_norm=True, output_bias_init=1.0,
)
t = time.perf_counter()
result = train_loop(
    parts["train"], parts["val"], cfg, TrainConfig(epochs=20, batch_size=32),
    progress=lambda row: print(f"  epoch {row['epoch']:2d}  val cosine {row['val_cosine_sim']:.4f}") if row["epoch"] % 5 == 0 else None,
)
model = Predictor(result.best_params, cfg)
print(f"trained in {time.perf_counter() - t:.0f}s, best epoch {result.best_epoch}")

# %% similarity vs a constant predictor
mean_spec = np.mean([r.target for r in parts["train"]], axis=0)
baseline = similarity_eval(lambda recs: np.tile(mean_spec, (len(recs), 1)), parts["test"])
sim = similarity_eval(model, parts["test"])
print(f"\ntest cosine similarity {sim.mean:.3f} +/- {sim.sd:.3f}  (mean-spectrum baseline {baseline.mean:.3f})")

# %% library search: held-out predictions among real train/val spectra
refs = build_reference_set(parts["test"], model, parts["train"] + parts["val"], split.scaffold_of)
ranking = rank_queries(parts["test"], refs)
print(f"ranking: mean normalized rank {ranking.mean_normalized_rank:.3f}, top-5% {ranking.top5_fraction:.3f}")

# %% collision-energy trend of the predictions
table = CESweepTable()
seen = set()
for r in parts["test"]:
    if r.compound_id not in seen:
        seen.add(r.compound_id)
        table.extend(ce_sweep(model, r.compound_id, r.graph, grid, r.spectrum.metadata))
print(f"Spearman(CE, predicted mean m/z) = {ce_trend(table):.3f}")

# %% where does the readout look?
graphs = {r.compound_id: r.graph for r in parts["test"]}
stats = heteroatom_attention(model, [graphs[c] for c in sorted(graphs)])
for el in sorted(stats.ratios):
    print(f"  {el}: {stats.ratios[el]:.2f}x carbon ({stats.n_molecules[el]} molecules)")
els = sorted(stats.ratios)
render_bar_svg(els, [stats.ratios[e] for e in els], out / "attention_ratios.svg", "readout attention relative to carbon", "ratio vs C")
