"""Null-model plugins for the test engine."""

from .group_sparse import (
    GroupQuantities,
    GroupSparseData,
    GroupSparseModel,
    GroupSparseParams,
)
from .logistic import LogisticData, LogisticModel, LogisticParams
from .mixture import (
    CopyProposal,
    MixtureData,
    MixtureModel,
    MixtureParams,
    TwoModeLaplace,
    allocation_probabilities,
    fit_piecewise_quadratic_proposal,
    log_joint_and_gradient,
    mean_conditional,
    two_mode_laplace,
    variance_conditional,
    weight_conditional,
)
from .rank1 import Rank1Data, Rank1Model, Rank1Params, ReparamState, reparam_log_posterior
from .spline import (
    KnotConditional,
    SplineData,
    SplineModel,
    SplineParams,
    design_matrix,
    gamma_conditional,
    joint_log_density,
    knot_conditional,
)

__all__ = [
    "GroupQuantities",
    "GroupSparseData",
    "GroupSparseModel",
    "GroupSparseParams",
    "LogisticData",
    "LogisticModel",
    "LogisticParams",
    "CopyProposal",
    "MixtureData",
    "MixtureModel",
    "MixtureParams",
    "TwoModeLaplace",
    "allocation_probabilities",
    "fit_piecewise_quadratic_proposal",
    "log_joint_and_gradient",
    "mean_conditional",
    "two_mode_laplace",
    "variance_conditional",
    "weight_conditional",
    "Rank1Data",
    "Rank1Model",
    "Rank1Params",
    "ReparamState",
    "reparam_log_posterior",
    "KnotConditional",
    "SplineData",
    "SplineModel",
    "SplineParams",
    "design_matrix",
    "gamma_conditional",
    "joint_log_density",
    "knot_conditional",
]
