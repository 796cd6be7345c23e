"""Intrinsic geometry of convex graph hypersurfaces: distances, comparison
angles, the quadruple condition, and convexity-preserving regularisation."""

from .curvature import (
    Quadruple,
    QuadrupleAggregate,
    QuadrupleReport,
    SearchOptions,
    Verdict,
    check_quadruple,
    comparison_angle,
    quadruple_excess,
    sample_quadruple_condition,
    search_violation,
)
from .errors import (
    ChartRadiusError,
    ConfigValidationError,
    ConvexCurvError,
    DegenerateSpanError,
    DomainError,
    EvaluationError,
    PreconditionError,
    TriangleInequalityError,
    UnreliableEvaluationError,
    UnsupportedOperationError,
)
from .functions import (
    Ball,
    ConvexBody,
    FunctionSpec,
    Halfspace,
    LogSumExp,
    LowerBoundaryChart,
    MaxAffine,
    NormScaled,
    QuadraticForm,
    Region,
    Restricted,
    Sublevel,
    convexity_check,
    evaluate,
    lipschitz_estimate,
    lower_boundary_function,
    restrict_to_span,
    spec_from_dict,
    subgradient,
)
from .geometry import PolygonalPath, lift, path_lift_length, polygonal_path_eval, segment_lift_length
from .metric import DistanceEstimate, DistanceOptions, GraphSurface, distance_matrix, intrinsic_distance, refine_path
from .regularization import (
    InfSupConvolution,
    InfSupParams,
    MollifierParams,
    Mollified,
    inf_sup_convolution,
    mollifier_weight,
    mollify,
    regularization_report,
)

__version__ = "0.1.0"
