"""Synthetic corpus, singer-disjoint folds and cross-validation runner."""

from .synth import SURROGATE_CLASSES, DEFAULT_RATES, SynthSpec, render_track, synth_corpus
from .folds import Fold, FoldPlan, singer_class_counts, make_folds
from .runner import (
    CONDITIONS,
    ExperimentError,
    DecodeConfig,
    ExperimentSettings,
    FeatureCache,
    run_fold,
    run_experiment,
    results_csv,
    classwise_csv,
    write_results,
)
