"""The adaptive loop: SOLVE, ESTIMATE, MARK, REFINE, with records and rates."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from goafem.fespace import FeSpace
from goafem.marking import MarkRequest, mark_goafem
from goafem.mesh import refine_nvb
from goafem.problems import GoalProblem, by_name

CSV_HEADER = "level,nElements,dofs,cumulativeDofs,eta,zeta,estimator,goalValue,nMarked"


class DriverError(RuntimeError):
    """Invalid run configuration or violated run-level contract."""


@dataclass(frozen=True)
class RunConfig:
    """Configuration of one adaptive run."""

    problem: str
    degree: int = 1
    theta: float = 0.5
    strategy: str = "doerfler-smaller"
    combination: str | None = None
    max_levels: int | None = None
    max_cumulative_dofs: int = 300_000
    estimator_floor: float = 1e-12
    rel_tol: float = 1e-10
    name: str = ""

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise DriverError("degree must be 1, 2 or 3")
        if not 0.0 < self.theta <= 1.0:
            raise DriverError("theta must lie in (0, 1]")
        if self.max_levels is not None and self.max_levels < 0:
            raise DriverError("max_levels must be nonnegative")
        if not self.name:
            object.__setattr__(self, "name", self.problem)


@dataclass(frozen=True)
class ConvergenceRecord:
    """One row per adaptive level."""

    level: int
    n_elements: int
    dofs: int
    cumulative_dofs: int
    eta: float
    zeta: float
    estimator: float  # eta * zeta
    goal_value: float
    n_marked: int
    solver_summary: tuple = field(default=(), compare=False)

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.level),
                str(self.n_elements),
                str(self.dofs),
                str(self.cumulative_dofs),
                repr(self.eta),
                repr(self.zeta),
                repr(self.estimator),
                repr(self.goal_value),
                str(self.n_marked),
            ]
        )


@dataclass
class LevelTrace:
    """Per-level objects kept when tracing a run (for property suites)."""

    space: FeSpace
    primal: object
    dual: object
    mu: object
    nu: object
    eta: object
    zeta: object
    marked: object  # MarkedSet or None on the final level


def run_goafem(config: RunConfig, problem: GoalProblem | None = None,
               csv_path=None, trace: bool = False):
    """Run the adaptive loop; returns records (and level traces if requested).

    Per level the driver executes SOLVE (primal, then the possibly
    primal-dependent dual), ESTIMATE, MARK, REFINE in order.  It stops when
    the estimator product falls to the configured floor (a zero product
    means the goal is exact), or when a stop criterion triggers.  A record
    is emitted for every completed ESTIMATE step, the final one included,
    and flushed immediately when a CSV path is given.
    """
    if problem is None:
        problem = by_name(config.problem, config.combination)
    elif config.combination and config.combination != problem.combination:
        raise DriverError(
            "config combination contradicts the combination of the given problem"
        )
    request = MarkRequest.from_key(config.strategy, config.theta)

    records: list[ConvergenceRecord] = []
    traces: list[LevelTrace] = []
    mesh = problem.initial_mesh
    cumulative = 0
    out = None
    if csv_path is not None:
        out = Path(csv_path).open("w")
        out.write(CSV_HEADER + "\n")
    try:
        level = 0
        while True:
            space = FeSpace(mesh, config.degree)
            ctx = problem.setup(space)
            u, rep_u = problem.solve_primal(ctx)
            z, rep_z = problem.solve_dual(ctx, u)
            mu, nu, eta, zeta = problem.combined_indicators(ctx, u, z)
            goal_value = problem.goal(ctx, u)
            cumulative += space.dim
            product = eta.total * zeta.total

            stop = (
                product <= config.estimator_floor
                or (config.max_levels is not None and level >= config.max_levels)
                or cumulative >= config.max_cumulative_dofs
            )
            marked = None
            if not stop:
                marked = mark_goafem(eta, zeta, request)
            record = ConvergenceRecord(
                level=level,
                n_elements=mesh.n_elements,
                dofs=space.dim,
                cumulative_dofs=cumulative,
                eta=eta.total,
                zeta=zeta.total,
                estimator=product,
                goal_value=goal_value,
                n_marked=0 if marked is None else len(marked),
                solver_summary=(rep_u.iterations, rep_u.relative_residual,
                                rep_z.iterations, rep_z.relative_residual),
            )
            records.append(record)
            if out is not None:
                out.write(record.csv_row() + "\n")
                out.flush()
            if trace:
                traces.append(LevelTrace(space, u, z, mu, nu, eta, zeta, marked))
            if stop:
                break
            mesh = refine_nvb(mesh, marked)
            level += 1
    finally:
        if out is not None:
            out.close()
    return (records, traces) if trace else records


def write_records(records, path) -> None:
    """Write records in the driver CSV format."""
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path) -> list[ConvergenceRecord]:
    """Read a driver CSV back into records (solver summaries are empty)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DriverError(f"{path}: not a driver CSV (bad header)")
    records = []
    for line in lines[1:]:
        f = line.split(",")
        records.append(
            ConvergenceRecord(
                level=int(f[0]), n_elements=int(f[1]), dofs=int(f[2]),
                cumulative_dofs=int(f[3]), eta=float(f[4]), zeta=float(f[5]),
                estimator=float(f[6]), goal_value=float(f[7]), n_marked=int(f[8]),
            )
        )
    return records


def fit_rate(records, window: float = 0.5) -> float:
    """Least-squares slope of log(estimator) vs log(cumulative DOFs).

    The fit uses the trailing ``window`` fraction of the records (at least
    four of them).
    """
    if not 0.0 < window <= 1.0:
        raise DriverError("window must lie in (0, 1]")
    n = len(records)
    k = max(4, int(np.ceil(window * n)))
    if k > n:
        raise DriverError("fewer than four records in the fitting window")
    tail = records[n - k:]
    products = np.array([r.estimator for r in tail])
    cost = np.array([r.cumulative_dofs for r in tail], dtype=float)
    if np.any(products <= 0.0):
        raise DriverError("estimator products must be positive for a rate fit")
    x = np.log(cost)
    if np.allclose(x, x[0]):
        raise DriverError("degenerate window: all abscissae equal")
    slope, _ = np.polyfit(x, np.log(products), 1)
    return float(slope)


def verify_goal_bound(records, exact_goal: float):
    """Per-level ratios |G_exact - G_l| / (eta_l zeta_l) and their maximum."""
    ratios = []
    for r in records:
        err = abs(exact_goal - r.goal_value)
        if r.estimator == 0.0:
            if err > 1e-12 * max(1.0, abs(exact_goal)):
                raise DriverError(
                    f"level {r.level}: zero estimator but goal error {err:.3e}; "
                    "the goal-error bound is falsified"
                )
            ratios.append(0.0)
        else:
            ratios.append(err / r.estimator)
    return ratios, max(ratios) if ratios else 0.0
