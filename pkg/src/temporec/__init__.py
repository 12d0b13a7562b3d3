"""Temporal evaluation protocols and recency-aware multi-objective training for
implicit-feedback recommenders."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .corpus import Corpus, InteractionLog, build_corpus, parse_interactions, preprocess
from .experiment import report, run_experiment
from .metrics import MetricReport, build_recency_weights, evaluate, recency_value
from .protocols import assemble_phase_sets
from .synthetic import DriftCorpusSpec, generate_drift_corpus
from .trainer import TrainConfig, train

__all__ = [
    "Corpus",
    "DriftCorpusSpec",
    "ExperimentConfig",
    "InteractionLog",
    "MetricReport",
    "TrainConfig",
    "assemble_phase_sets",
    "build_corpus",
    "build_recency_weights",
    "evaluate",
    "generate_drift_corpus",
    "load_config",
    "parse_interactions",
    "preprocess",
    "recency_value",
    "report",
    "run_experiment",
    "train",
]
