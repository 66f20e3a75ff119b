"""Experiment configuration, batch evaluation, orchestration and export."""

from abris.harness.config import ExperimentConfig, default_config, load_config, parse_config
from abris.harness.evaluation import BatchModel, CountingModel, batch_evaluate
from abris.harness.experiment import RunManifest, rng_streams, run_experiment, run_sweep
from abris.harness.export import export_records, reuse_trace
