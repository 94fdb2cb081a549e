"""finrig: numerical Finsler geometry and affine-rigidity evidence.

Derives the canonical spray and nonlinear connection of a Finsler norm given
in chart coordinates, certifies the pointwise dimension of the subspace field
spanned by the stable hull of the horizontal fields, samples holonomy orbits
on the indicatrix, and classifies manifold self-maps as affinities,
homotheties or isometries.
"""

__version__ = "0.1.0"

from .errors import (
    ChartExit,
    ConfigError,
    ConsistencyError,
    FinrigError,
    MetricDegenerate,
    OutsideChart,
    SlitViolation,
    StepLimitExceeded,
)
from .geometry import (
    BundleTangentVector,
    ChartDomain,
    FinslerMetric,
    SlitTangentPoint,
    SprayData,
    dF,
    evaluate_metric,
    fundamental_tensor,
    horizontal_lift,
    liouville_field,
    spray_coefficients,
    vertical_lift,
)
from .dynamics import (
    ArcSegment,
    BundleVectorField,
    GeodesicSegment,
    IntegratorConfig,
    LineSegment,
    PiecewiseCurve,
    circle_loop,
    flow_pushforward,
    geodesic,
    horizontal_lift_field,
    integrate_flow,
    lie_bracket,
    liouville_vector_field,
    parallel_transport,
    polygon_loop,
    rectangle_loop,
    spray_field,
    transport_batch,
    vertical_lift_field,
)
from .rank import (
    BELOW_MAX,
    CERTIFIED_MAX,
    INCONCLUSIVE,
    GeneratorBudget,
    RankCertificate,
    SamplePlan,
    bracket_generators,
    flow_generators,
    numerical_rank,
    rank_map,
    stable_hull_dimension,
    vertical_projection_rank,
)
from .holonomy import (
    NOT_TRANSITIVE,
    TRANSITIVE_EVIDENCE,
    LoopFamily,
    OrbitSample,
    holonomy_orbit,
    loop_transport,
    orbit_dimension,
    sample_loop,
    transitivity_verdict,
)
from .rigidity import (
    ManifoldMap,
    RigidityReport,
    TransformationVerdict,
    assemble_report,
    check_affinity,
    classify_transformation,
    linear_map,
    rotation_map,
)
from .zoo import (
    CATALOG,
    ZooEntry,
    make_metric,
    r2_field_vectors,
    r2_orbit_trace,
    r2_rank_map,
    zoo_entries,
)
from .report import RunConfig, dump_report, run_analysis
