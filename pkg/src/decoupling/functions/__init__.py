from .expr import (
    AbsCoord,
    Affine,
    Blackbox,
    Const,
    Constraint,
    DistancePenalty,
    Expr,
    IndicatorRegion,
    IndicatorSublevel,
    MaxOf,
    Norm2,
    NormInf,
    QuadForm,
    ReciprocalCoord,
    ScaleNonneg,
    SumOf,
    convexity_spot_check,
    evaluate,
)
from .sets import (
    AxisNormalCone,
    BoxSet,
    DualSet,
    MinkowskiSum,
    PolytopeV,
    ScaledBall,
    SinglePoint,
    minkowski,
)
from .calculus import (
    ExactnessUnavailable,
    MembershipVerdict,
    NotConvexError,
    OutOfDomain,
    direction_grid,
    directional_derivative,
    exact_subdifferential,
    frechet_membership_test,
)
from .family import FunctionFamily, check_standing_assumptions, upper_sum
