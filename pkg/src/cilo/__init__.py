"""Consistent integrated learning and optimization for linear contextual LPs."""
from .errors import (
    BudgetInfeasible,
    CiloError,
    DimensionMismatch,
    DirectionUndefined,
    DualUnbounded,
    EmptyCandidateSet,
    EmptyGrid,
    FeasibilityResampleExceeded,
    InfeasiblePolyhedron,
    NumericalFailure,
    OnBoundary,
    SingularSystem,
)
from .geometry import (
    Basis,
    Polyhedron,
    ball_radius,
    enumerate_vertices,
    lp_minimize,
    lp_minimize_batch,
    lp_minimize_budget,
    optimal_face,
    optimal_face_worst_case,
)
from .losses import (
    beta_bounds,
    cilo_loss,
    decisions,
    gamma_hats,
    regret,
    slo_loss,
    spo_plus_loss,
    target_loss,
)
from .model import Dataset, FeatureMap, FixedBasisHypothesis, LinearHypothesis, feature_matrix, predict
from .optimize import GDConfig, TrainResult, gd_backtracking, train_cilo, train_slo, train_spo_plus
from .smoothing import (
    MomentProjector,
    SmoothedCilo,
    boundary_escape,
    log_cilo,
    project_moment_set,
    prox_pair,
    s_cilo,
)

__version__ = "0.1.0"
