"""Goal-oriented adaptive FEM: meshes, spaces, estimators, marking, driver."""

from goafem.driver import (
    ConvergenceRecord,
    DriverError,
    RunConfig,
    fit_rate,
    read_records,
    run_goafem,
    verify_goal_bound,
    write_records,
)
from goafem.estimators import (
    EstimatorError,
    GradientLoad,
    IndicatorField,
    OscillationField,
    ScalarLoad,
    SemilinearDual,
    SemilinearPrimal,
    WeightedGradientDual,
    combine,
    estimate_poisson,
    oscillation,
    weighted_indicator,
)
from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    FeSpaceError,
    assemble_load_gradient,
    assemble_load_scalar,
    assemble_load_weighted_gradient,
    assemble_mass_weighted,
    assemble_stiffness,
    eval_element,
    interpolate,
    prolongate,
    prolongation_matrix,
)
from goafem.marking import (
    MarkRequest,
    MarkingError,
    builtin_weight,
    mark_doerfler,
    mark_equidistribution,
    mark_general,
    mark_goafem,
    mark_maximum,
    strategy_keys,
)
from goafem.mesh import (
    MarkedSet,
    MeshError,
    Patch,
    RefinementMap,
    Triangulation,
    is_refinement_of,
    l_shape,
    load_mesh,
    make_initial_mesh,
    patch_of,
    refine_nvb,
    save_mesh,
    uniform_refine,
    unit_square,
)
from goafem.problems import (
    GoalProblem,
    ProblemError,
    problem_lshape_quadratic,
    problem_manufactured,
    problem_ms_linear,
    problem_semilinear,
)
from goafem.quadrature import QuadratureRule, edge_rule, triangle_rule
from goafem.solver import (
    SolveReport,
    SolverError,
    SpdOperator,
    newton_semilinear,
    solve_dirichlet,
    solve_spd,
)
