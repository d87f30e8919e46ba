"""Graph-transformer prediction of tandem mass spectra from molecular graphs.

Submodules
----------
chem
    SMILES parsing, molecular graphs, Murcko scaffolds.
graphprep
    Shortest paths and structural encodings consumed by the model.
autodiff
    Small reverse-mode tape over numpy arrays.
model
    Graph transformer with spatial and edge-path attention bias.
spectra
    Peaks, binning, metadata encoding, cosine similarity, MSP files.
fragsim
    Synthetic bond-cleavage oracle used to build training corpora.
train
    Scaffold split, AdamW, plateau schedule, training loop.
evalkit
    Similarity, library ranking, collision-energy trend, attention ratios.
cli
    ``masskit`` command-line front end.
"""
from .chem import MolecularGraph, parse_smiles, scaffold_key
from .evalkit import build_reference_set, ce_sweep, ce_trend, heteroatom_attention, rank_queries, similarity_eval
from .fragsim import OracleConfig, generate_dataset, simulate_spectrum
from .graphprep import EncodingConfig, PreparedGraph, floyd_warshall, prepare
from .model import ModelConfig, ModelParams, Predictor, attention_map, init_params, predict
from .spectra import BinnedSpectrum, MetadataScheme, Spectrum, SpectrumMetadata, bin_spectrum, cosine_distance, cosine_similarity, read_msp, write_msp
from .train import TrainConfig, build_records, scaffold_split, train_loop

__version__ = "0.1.0"

__all__ = [
    "MolecularGraph",
    "parse_smiles",
    "scaffold_key",
    "EncodingConfig",
    "PreparedGraph",
    "floyd_warshall",
    "prepare",
    "ModelConfig",
    "ModelParams",
    "Predictor",
    "init_params",
    "predict",
    "attention_map",
    "Spectrum",
    "SpectrumMetadata",
    "BinnedSpectrum",
    "MetadataScheme",
    "bin_spectrum",
    "cosine_distance",
    "cosine_similarity",
    "read_msp",
    "write_msp",
    "OracleConfig",
    "simulate_spectrum",
    "generate_dataset",
    "TrainConfig",
    "build_records",
    "scaffold_split",
    "train_loop",
    "similarity_eval",
    "build_reference_set",
    "rank_queries",
    "ce_sweep",
    "ce_trend",
    "heteroatom_attention",
    "__version__",
]
