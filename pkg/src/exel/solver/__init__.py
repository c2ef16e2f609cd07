from ._backend import BACKEND
from .core import (
    CVResult,
    NotConvergedWarning,
    OracleConfig,
    OracleResult,
    RegressionProblem,
    Solution,
    SolverConfig,
    cross_validate,
    default_grid,
    fold_indices,
    group_penalty,
    group_prox,
    ideal_support_oracle,
    kkt_residual,
    lambda_max,
    lambda_path,
    objective,
    solve,
    spectral_norm,
    support_of,
)
