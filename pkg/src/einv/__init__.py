"""Effect-invariance tests and invariance-based policy learning across environments."""
from .data import Dataset, export_csv, format_subset, ingest_csv, parse_subset, read_covariates
from .dr import DRConfig, dr_einv_test, dr_einv_tests
from .exceptions import EinvError
from .few_shot import FewShotModel, few_shot_fit, unconstrained_fit
from .kernels import BACKEND
from .policies import CateGreedyPolicy, ConstantPolicy, LogisticPolicy, UniformPolicy, bernoulli
from .report import TestReport
from .synth import ScmConfig, oracle_value, sample_dataset
from .wald import wald_einv_test
from .zero_shot import CateModel, ZeroShotConfig, fit_pooled_cate, zero_shot_pipeline

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CateGreedyPolicy",
    "CateModel",
    "ConstantPolicy",
    "DRConfig",
    "Dataset",
    "EinvError",
    "FewShotModel",
    "LogisticPolicy",
    "ScmConfig",
    "TestReport",
    "UniformPolicy",
    "ZeroShotConfig",
    "bernoulli",
    "dr_einv_test",
    "dr_einv_tests",
    "export_csv",
    "few_shot_fit",
    "fit_pooled_cate",
    "format_subset",
    "ingest_csv",
    "oracle_value",
    "parse_subset",
    "read_covariates",
    "sample_dataset",
    "unconstrained_fit",
    "wald_einv_test",
    "zero_shot_pipeline",
]
