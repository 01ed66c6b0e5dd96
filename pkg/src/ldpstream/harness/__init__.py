from .experiment import (ExperimentConfig, RunResult, load_config, mismatch_matrix,
                         read_metrics_csv, run_experiment, run_grid, run_single,
                         write_metrics_csv)
from .simulate import FrequencyPopulation, NumericPopulation, StreamSource, run_stream

__all__ = [
    "ExperimentConfig", "FrequencyPopulation", "NumericPopulation", "RunResult", "StreamSource",
    "load_config", "mismatch_matrix", "read_metrics_csv", "run_experiment", "run_grid",
    "run_single", "run_stream", "write_metrics_csv",
]
