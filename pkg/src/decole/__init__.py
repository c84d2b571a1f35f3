"""Group-aware detection of mislabeled instances in binary-labeled data."""

from .classifier import (
    DiffractedOracle,
    LogisticClassifier,
    LogisticHyper,
    OracleClassifier,
    crossval_predict_proba,
    logistic_factory,
)
from .dataset import (
    ClusterSpec,
    CsvSchema,
    Dataset,
    DataError,
    NoiseSpec,
    SpecError,
    generate_synthetic,
    inject_noise,
    load_csv,
    save_csv,
)
from .detectors import (
    DetectionResult,
    cl_detect,
    coteaching_detect,
    decole_detect,
    random_detect,
)
from .experiments import ExperimentConfig, run_experiment, verify_theorem1, verify_theorem2
from .metrics import aggregate_ci, evaluate

__all__ = [
    "ClusterSpec", "CsvSchema", "DataError", "Dataset", "DetectionResult", "DiffractedOracle",
    "ExperimentConfig", "LogisticClassifier", "LogisticHyper", "NoiseSpec", "OracleClassifier",
    "SpecError", "aggregate_ci", "cl_detect", "coteaching_detect", "crossval_predict_proba",
    "decole_detect", "evaluate", "generate_synthetic", "inject_noise", "load_csv",
    "logistic_factory", "random_detect", "run_experiment", "save_csv", "verify_theorem1",
    "verify_theorem2",
]
