"""Bundle adjustment with a multigrid-preconditioned camera solve."""

from .balio import BalFormatError, read_bal, write_bal
from .blockmat import (
    BlockDiagMatrix,
    BlockSparseMatrix,
    DenseTall,
    IndefiniteBlockError,
    multiply,
    triple_product,
    write_matrix_market,
)
from .metrics import (
    IncomparableRuns,
    IterationRow,
    RunMetrics,
    metrics_from_report,
    summary_csv,
    truncate_to_common_objective,
)
from .multigrid import (
    Aggregation,
    ChebyshevSmoother,
    MgHierarchy,
    StrengthMatrix,
    aggregate,
    build_hierarchy,
    build_prolongation,
    estimate_lambda_max,
    hierarchy_stats,
    mgcycle,
    operator_strength,
    visibility_strength,
)
from .precond import (
    DEFAULT_CLUSTER_CAP,
    PointBlockJacobi,
    VisibilityJacobi,
    pbj_setup,
    visibility_cluster,
    vj_setup,
)
from .problem import (
    CAMERA_SIZE,
    POINT_SIZE,
    BehindCameraError,
    BundleProblem,
    Camera,
    JacobianBlocks,
    Observation,
    evaluate,
    gauge_nullspace,
    gauge_point_motion,
    huber,
    loss_value,
    loss_weight,
    project,
    residual,
)
from .schur import (
    Damping,
    SchurSystem,
    back_substitute,
    build_system,
    choose_mode,
    covisibility_block_count,
    model_decrease,
    schur_explicit,
)
from .solver import (
    CgDivergence,
    CgReport,
    ForcingCriterion,
    IterationRecord,
    NonlinearReport,
    PreconditionerNotSPD,
    SolveConfig,
    TrustRegion,
    lm_solve,
    pcg,
)
from .synth import (
    Box,
    CityModel,
    GroundTruth,
    NoiseSpec,
    VisibilityResult,
    compute_visibility,
    generate_city,
    generate_problem,
    perturb,
    point_visible,
    sample_cameras,
    sample_points,
)

__version__ = "0.1.0"
