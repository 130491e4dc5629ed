import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from diffpy.polelift.vehicle import actuation_envelope

logger = logging.getLogger(__name__)

SLACK_UNIT_SCALE = 1e6
SLACK_PRIORITY = 1e7
DEFAULT_SLACK_WEIGHT = SLACK_UNIT_SCALE**2 * SLACK_PRIORITY
DEFAULT_SLACK_BOUND = 1e6
RATIO_TOLERANCE = 1e-12
MULTIPLIER_TOLERANCE = 1e-10
ITERATION_FACTOR = 10


class QpIterationError(RuntimeError):
    """Raised when the active-set method exceeds its iteration cap."""

    def __init__(self, iterations, working_set, residual):
        super().__init__(
            f"Active-set QP did not converge in {iterations} working-set changes "
            f"(working set {sorted(working_set)}, equality residual {residual:.3e})."
        )
        self.iterations = iterations
        self.working_set = working_set
        self.residual = residual


@dataclass(frozen=True)
class AllocationWeights:
    """
    Diagonal weights of the allocation objective y^T H y.

    Attributes
    ----------
    h_main float
        weight of the main-propeller squared speeds
    h_aux float
        weight of the auxiliary-propeller squared speeds
    h_slack float
        weight of the wrench slack, (unit scale)^2 times the priority factor
    slack_bound float
        zeta, the box bound of every slack variable

    """

    h_main: float = 1.0
    h_aux: float = 4.0
    h_slack: float = DEFAULT_SLACK_WEIGHT
    slack_bound: float = DEFAULT_SLACK_BOUND

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"Allocation weight {name} must be positive, got {value}.")


@dataclass(frozen=True, eq=False)
class QpProblem:
    """
    min y^T H y subject to matrix @ y == target and lower <= y <= upper, H = diag(hessian).

    the first n_actuators entries of y are squared rotor speeds, the rest is the wrench slack
    """

    matrix: np.ndarray
    hessian: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    target: np.ndarray
    n_actuators: int

    def __post_init__(self):
        if np.any(self.hessian <= 0):
            raise ValueError("QP weights must be strictly positive.")
        if np.any(self.lower >= self.upper):
            raise ValueError("QP bounds must satisfy lower < upper componentwise.")
        if self.matrix.shape != (self.target.size, self.hessian.size):
            raise ValueError(
                f"QP matrix shape {self.matrix.shape} does not match {self.target.size} equalities "
                f"and {self.hessian.size} variables."
            )

    @property
    def size(self):
        return self.hessian.size

    def objective(self, y):
        return float(y @ (self.hessian * y))


@dataclass(frozen=True, eq=False)
class QpSolution:
    """
    Minimizer of a QpProblem.

    Attributes
    ----------
    y numpy.ndarray
        the stacked (w, delta)
    multipliers numpy.ndarray
        lambda, the equality multipliers of the final reduced solve
    stationarity, primal, complementarity float
        residuals as reported by kkt_verify
    iterations int
        number of working-set changes
    working_set_size int

    """

    y: np.ndarray
    multipliers: np.ndarray
    n_actuators: int
    stationarity: float
    primal: float
    complementarity: float
    iterations: int
    working_set_size: int

    @property
    def w(self):
        return self.y[: self.n_actuators]

    @property
    def slack(self):
        return self.y[self.n_actuators :]


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    dual: float
    primal: float
    complementarity: float

    @property
    def max_residual(self):
        return max(self.stationarity, self.dual, self.primal, self.complementarity)


def build_qp(allocation, target, weights, bounds, main_mask=None):
    """
    Slack-augmented allocation problem.

    Parameters
    ----------
    allocation numpy.ndarray
        the 6xn allocation matrix A_b
    target array_like
        the desired wrench u_b,des
    weights AllocationWeights
        the objective weights
    bounds tuple of array_like
        (w_min, w_max), the squared-speed bounds
    main_mask array_like of bool
        True for main-propeller columns, defaults to the first four columns

    Returns
    -------
    a QpProblem over y = (w, delta) with the equality [A_b I] y = u_b,des

    """
    allocation = np.asarray(allocation, dtype=float)
    n_rows, n_actuators = allocation.shape
    if main_mask is None:
        main_mask = np.arange(n_actuators) < 4
    main_mask = np.asarray(main_mask, dtype=bool)
    w_min, w_max = (np.broadcast_to(np.asarray(b, dtype=float), (n_actuators,)) for b in bounds)
    actuator_weights = np.where(main_mask, weights.h_main, weights.h_aux)
    hessian = np.concatenate([actuator_weights, np.full(n_rows, weights.h_slack)])
    zeta = np.full(n_rows, weights.slack_bound)
    return QpProblem(
        matrix=np.hstack([allocation, np.eye(n_rows)]),
        hessian=hessian,
        lower=np.concatenate([w_min, -zeta]),
        upper=np.concatenate([w_max, zeta]),
        target=np.asarray(target, dtype=float).copy(),
        n_actuators=n_actuators,
    )


def _reduced_multipliers(M_free, h_free, rhs):
    """
    Solve M_F diag(1/h_F) M_F^T lam = -2 rhs with Jacobi scaling and one refinement step.
    """
    S = (M_free / h_free) @ M_free.T
    scale = 1.0 / np.sqrt(np.maximum(np.diag(S), np.finfo(float).tiny))
    S_scaled = S * scale[:, None] * scale[None, :]
    b = -2.0 * rhs * scale
    try:
        z = scipy.linalg.solve(S_scaled, b, assume_a="pos")
        z += scipy.linalg.solve(S_scaled, b - S_scaled @ z, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        logger.warning("reduced KKT matrix is singular, falling back to least squares")
        z = np.linalg.lstsq(S_scaled, b, rcond=None)[0]
    return z * scale


def _scaled_gradient(problem, y, multipliers):
    gradient = 2.0 * problem.hessian * y + problem.matrix.T @ multipliers
    return gradient / (2.0 * problem.hessian * np.maximum(1.0, np.abs(y)))


class ActiveSetSolver:
    """
    Primal active-set method for diagonal H, one equality block and box bounds, warm-started between calls.

    Parameters
    ----------
    iteration_factor int
        the cap on working-set changes is iteration_factor times the number of variables

    """

    def __init__(self, iteration_factor=ITERATION_FACTOR):
        self.iteration_factor = iteration_factor
        self.warm_start = None

    def reset(self):
        self.warm_start = None

    def solve(self, problem):
        solution = solve_qp(problem, self.warm_start, self.iteration_factor)
        self.warm_start = solution.w.copy()
        return solution

    __call__ = solve


def solve_qp(problem, warm_start=None, iteration_factor=ITERATION_FACTOR):
    """
    Global minimizer of a slack-augmented allocation QP.

    Parameters
    ----------
    problem QpProblem
        the problem, its trailing variables must be the identity slack columns
    warm_start array_like
        the actuator part of a previous solution, defaults to the lower bounds
    iteration_factor int
        the cap on working-set changes is iteration_factor times the number of variables

    Returns
    -------
    a QpSolution

    the iterate stays feasible throughout: the actuator part starts clipped to the bounds and the slack closes the
    equality. Variables at a bound form the working set; blocking variables are added and the one with the most
    violated bound multiplier is released. We raise a QpIterationError when the cap is reached.

    """
    n = problem.size
    k = problem.n_actuators
    lower, upper, h, M = problem.lower, problem.upper, problem.hessian, problem.matrix
    span = np.maximum(1.0, upper - lower)
    y = np.empty(n)
    y[:k] = lower[:k] if warm_start is None else np.clip(warm_start, lower[:k], upper[:k])
    y[k:] = problem.target - M[:, :k] @ y[:k]
    if np.any(y[k:] < lower[k:]) or np.any(y[k:] > upper[k:]):
        raise ValueError(
            f"Wrench target {problem.target} cannot be absorbed within the slack bound. "
            f"Please rerun with a larger slack bound."
        )
    fixed = np.zeros(n, dtype=bool)
    fixed[:k] = (y[:k] == lower[:k]) | (y[:k] == upper[:k])
    multipliers = np.zeros(M.shape[0])
    max_changes = iteration_factor * n
    changes = 0
    while True:
        free = ~fixed
        rhs = problem.target - M[:, fixed] @ y[fixed]
        multipliers = _reduced_multipliers(M[:, free], h[free], rhs)
        candidate = -0.5 * (M[:, free].T @ multipliers) / h[free]
        step = candidate - y[free]
        free_index = np.flatnonzero(free)
        alpha, blocking, at_upper = 1.0, None, False
        for position, index in enumerate(free_index):
            target_value = y[index] + step[position]
            tolerance = RATIO_TOLERANCE * span[index]
            if target_value < lower[index] - tolerance:
                ratio, hits_upper = (lower[index] - y[index]) / step[position], False
            elif target_value > upper[index] + tolerance:
                ratio, hits_upper = (upper[index] - y[index]) / step[position], True
            else:
                continue
            ratio = max(0.0, ratio)
            if ratio < alpha:
                alpha, blocking, at_upper = ratio, index, hits_upper
        if blocking is not None:
            y[free] += alpha * step
            y[blocking] = upper[blocking] if at_upper else lower[blocking]
            fixed[blocking] = True
        else:
            y[free] = candidate
            scaled = _scaled_gradient(problem, y, multipliers)
            at_lower = fixed & (y <= lower)
            violation = np.where(at_lower, -scaled, scaled)
            violation = np.where(fixed, violation, -np.inf)
            release = int(np.argmax(violation))
            if violation[release] <= MULTIPLIER_TOLERANCE:
                break
            fixed[release] = False
        changes += 1
        if changes > max_changes:
            residual = float(np.max(np.abs(M @ y - problem.target)))
            raise QpIterationError(changes, set(np.flatnonzero(fixed).tolist()), residual)
    y[:k] = np.clip(y[:k], lower[:k], upper[:k])
    y[k:] = problem.target - M[:, :k] @ y[:k]
    report = kkt_verify(problem, y, multipliers)
    return QpSolution(
        y=y,
        multipliers=multipliers,
        n_actuators=k,
        stationarity=report.stationarity,
        primal=report.primal,
        complementarity=report.complementarity,
        iterations=changes,
        working_set_size=int(fixed.sum()),
    )


def kkt_verify(problem, solution, multipliers=None):
    """
    Independent optimality check of a candidate solution.

    Parameters
    ----------
    problem QpProblem
        the problem
    solution QpSolution or numpy.ndarray
        the candidate, either a QpSolution or the stacked y
    multipliers numpy.ndarray
        the equality multipliers, taken from the solution or recovered from the reduced KKT system of the
        coordinates found at their bounds

    Returns
    -------
    a KktReport, stationarity, dual feasibility and complementarity in the units of y relative to max(1, |y_i|),
    primal as the larger of the absolute equality residual and the absolute bound violation

    bound multipliers are read off the gradient 2Hy + M^T lam on the coordinates at a bound and are zero on the
    free ones, so complementarity only weighs the gap of coordinates taken as active
    """
    if isinstance(solution, QpSolution):
        y = solution.y
        multipliers = solution.multipliers if multipliers is None else multipliers
    else:
        y = np.asarray(solution, dtype=float)
    lower, upper = problem.lower, problem.upper
    span = np.maximum(1.0, upper - lower)
    at_lower = y <= lower + RATIO_TOLERANCE * span
    at_upper = ~at_lower & (y >= upper - RATIO_TOLERANCE * span)
    free = ~(at_lower | at_upper)
    if multipliers is None:
        fixed = ~free
        rhs = problem.target - problem.matrix[:, fixed] @ y[fixed]
        multipliers = _reduced_multipliers(problem.matrix[:, free], problem.hessian[free], rhs)
    scaled = _scaled_gradient(problem, y, multipliers)
    stationarity = float(np.max(np.abs(scaled[free]), initial=0.0))
    bound_multipliers = np.where(at_lower, scaled, np.where(at_upper, -scaled, 0.0))
    dual = float(max(np.max(-bound_multipliers), 0.0))
    gap = np.where(at_lower, y - lower, np.where(at_upper, upper - y, 0.0)) / np.maximum(1.0, np.abs(y))
    complementarity = float(np.max(np.abs(bound_multipliers) * np.abs(gap), initial=0.0))
    equality = np.max(np.abs(problem.matrix @ y - problem.target))
    bound_violation = max(np.max(lower - y), np.max(y - upper), 0.0)
    return KktReport(stationarity, dual, float(max(equality, bound_violation)), complementarity)


@dataclass(frozen=True, eq=False)
class AllocationAudit:
    matrix: np.ndarray
    rank: int
    singular_values: np.ndarray
    nullspace: np.ndarray
    envelope: float
    worst_kkt_residual: float
    worst_slack_ratio: float
    n_instances: int


def allocation_audit(params, weights=None, n_instances=100, rng=None):
    """
    Structural and numerical audit of the allocation for a vehicle.

    Parameters
    ----------
    params VehicleParams
        the vehicle
    weights AllocationWeights
        the objective weights, defaults to AllocationWeights()
    n_instances int
        number of random wrenches inside the actuation envelope to allocate
    rng numpy.random.Generator
        the source of the random wrenches

    Returns
    -------
    an AllocationAudit with rank, singular values, nullspace basis, envelope, the worst KKT residual and the
    worst ratio |delta| / max(1, |u|) over the random wrenches

    """
    weights = AllocationWeights() if weights is None else weights
    rng = np.random.default_rng(0) if rng is None else rng
    A = params.allocation_matrix
    singular_values = scipy.linalg.svdvals(A)
    rank = int(np.sum(singular_values > 1e-8 * singular_values.max()))
    nullspace = scipy.linalg.null_space(A, rcond=1e-8)
    envelope = actuation_envelope(A, params.w_max, params.main_mask)
    worst_kkt, worst_slack = 0.0, 0.0
    solver = ActiveSetSolver()
    for _ in range(n_instances):
        target = A @ rng.uniform(params.w_min, params.w_max)
        problem = build_qp(A, target, weights, (params.w_min, params.w_max), params.main_mask)
        solution = solver.solve(problem)
        worst_kkt = max(worst_kkt, kkt_verify(problem, solution).max_residual)
        worst_slack = max(worst_slack, np.linalg.norm(solution.slack) / max(1.0, np.linalg.norm(target)))
    return AllocationAudit(A, rank, singular_values, nullspace, envelope, worst_kkt, worst_slack, n_instances)
