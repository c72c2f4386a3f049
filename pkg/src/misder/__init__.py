"""Misinformation detection with dynamic environmental representations.

A lightweight text detector is warmed up jointly with a global environmental
prompt, then frozen while per-period prompts and a time-series model over
them are learned; the forecast prompt for the next period classifies future
articles.
"""

__version__ = "0.1.0"

from .data import NewsArticle, TemporalDataset, Vocabulary  # noqa: F401
from .estimator import MisderClassifier  # noqa: F401
from .experiments import (SweepReport, case_trace, drop_rate_experiment,  # noqa: F401
                          evaluate_future, interval_sweep, k_sweep,
                          run_variant_suite)
from .metrics import MetricReport, metric_report  # noqa: F401
from .train import (RunArtifacts, RunConfig, predict_future, run_pipeline,  # noqa: F401
                    timing_ledger)
