"""Corpus handling, experiment pipeline and the command-line interface."""
from .corpus import Corpus, Split, bundled_corpus_path, load_corpus, split_corpus
from .experiment import ExperimentConfig, resolve_variant, run_experiment, run_grid_search

__all__ = [
    "Corpus",
    "ExperimentConfig",
    "Split",
    "bundled_corpus_path",
    "load_corpus",
    "resolve_variant",
    "run_experiment",
    "run_grid_search",
    "split_corpus",
]
