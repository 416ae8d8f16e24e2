"""Block coordinate descent for the weighted group lasso objective

    0.5 * ||C x - rhs||^2 + alpha * sum_g ||C_g x_g||

plus first-order optimality certification, discrepancy-principle selection of
``alpha``, and a pursuit-style solve by geometric ``alpha`` continuation.

Each block update is exact: with ``P_g`` the orthogonal projector onto
``range(C_g)`` and ``r`` the partial residual excluding group ``g``, the block
minimizer satisfies ``C_g x_g = max(0, 1 - alpha / ||P_g r||) * P_g r`` and is
recovered through the cached thin SVD (minimum-norm when rank-deficient).

Sweeps run in fixed ascending group order.  By default the solver alternates
full sweeps with sweeps restricted to the currently active groups, which is
equivalent at the fixed points and much faster on sparse solutions; a solve
only reports convergence after a full sweep meets both stopping criteria and
the KKT residual passes ``kkt_tol``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from weakref import WeakKeyDictionary

import numpy as np

from .core import GroupStructure, ProblemInstance, SolveResult, active_groups

__all__ = [
    "SolverConfig",
    "objective",
    "alpha_max",
    "group_update",
    "bcd_solve",
    "kkt_residual",
    "MorozovSelection",
    "morozov_select_alpha",
    "PursuitStage",
    "PursuitResult",
    "pursuit_solve",
]

#: Below this block-image norm a group counts as inactive in the KKT residual.
ZERO_NORM_GUARD = 1e-14

#: Restricted (active-set) sweeps stop at this multiple of the configured
#: tolerances; the following full sweep re-certifies at the configured level.
INNER_RELAX = 100.0


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """Stopping thresholds and iteration budget for :func:`bcd_solve`."""

    tol_objective: float = 1e-10
    tol_x: float = 1e-8
    max_sweeps: int = 10_000
    kkt_tol: float = 1e-6
    use_active_set: bool = True
    resync_every: int = 100

    def __post_init__(self):
        if min(self.tol_objective, self.tol_x, self.kkt_tol) <= 0:
            raise ValueError("all tolerances must be positive")
        if self.max_sweeps < 1 or self.resync_every < 1:
            raise ValueError("iteration budgets must be positive")


_PROBLEM_CACHE: "WeakKeyDictionary" = WeakKeyDictionary()


def _group_ops(problem: ProblemInstance):
    """Per-group contiguous operators (Q^T, Q, minimum-norm solve matrix)."""
    ops = _PROBLEM_CACHE.get(problem)
    if ops is None:
        ops = []
        for g, f in zip(problem.groups.groups, problem.group_factors):
            r = f.rank
            qt = np.ascontiguousarray(f.u[:, :r].T)
            q = np.ascontiguousarray(f.u[:, :r])
            solve = np.ascontiguousarray(f.vt[:r].T / f.s[:r]) if r else np.zeros((g.size, 0))
            ops.append((g, qt, q, solve))
        _PROBLEM_CACHE[problem] = ops
    return ops


def _assemble(blocks, groups: GroupStructure) -> np.ndarray:
    x = np.zeros(groups.n)
    for g, block in zip(groups.groups, blocks):
        if block is not None:
            x[g] = block
    return x


def objective(problem: ProblemInstance, alpha: float, x: np.ndarray) -> float:
    """Value of the weighted group lasso objective at ``x``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.groups.n,):
        raise ValueError(f"x must have length {problem.groups.n}")
    res = problem.C @ x - problem.rhs
    penalty = 0.0
    for g, f in zip(problem.groups.groups, problem.group_factors):
        penalty += float(np.linalg.norm(f.s * (f.vt @ x[g])))
    return 0.5 * float(res @ res) + alpha * penalty


def alpha_max(problem: ProblemInstance) -> float:
    """Smallest ``alpha`` at which ``x = 0`` is optimal: ``max_g ||P_g rhs||``."""
    best = 0.0
    for _, qt, _, _ in _group_ops(problem):
        t = qt @ problem.rhs
        best = max(best, float(np.sqrt(t @ t)))
    return best


def group_update(problem: ProblemInstance, g_index: int, r: np.ndarray, alpha: float) -> np.ndarray:
    """Exact block minimizer of ``0.5||r - C_g x_g||^2 + alpha ||C_g x_g||``.

    ``r`` is the partial residual excluding group ``g``.  Returns the zero
    block when ``||P_g r|| <= alpha``, otherwise the (minimum-norm) solution of
    ``C_g x_g = (1 - alpha/||P_g r||) P_g r``.
    """
    f = problem.group_factors[g_index]
    size = problem.groups.groups[g_index].size
    t = f.project_coeffs(np.asarray(r, dtype=np.float64))
    nt = float(np.linalg.norm(t))
    if nt <= alpha or nt == 0.0:
        return np.zeros(size)
    return f.solve_from_coeffs((1.0 - alpha / nt) * t)


def kkt_residual(problem: ProblemInstance, alpha: float, x: np.ndarray) -> float:
    """Scaled first-order optimality residual at ``x``.

    Active groups contribute the normalized gradient norm of the smooth+penalty
    stationarity condition; inactive groups contribute the scaled excess of
    ``||P_g r||`` over ``alpha``.  Groups with ``||C_g x_g||`` below
    ``ZERO_NORM_GUARD`` are treated as inactive.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    r = problem.C @ x - problem.rhs
    worst = 0.0
    for g, f in zip(problem.groups.groups, problem.group_factors):
        xg = x[g]
        w = f.s * (f.vt @ xg)  # coefficients of C_g x_g in the left basis
        nz = float(np.linalg.norm(w))
        if np.any(xg) and nz >= ZERO_NORM_GUARD:
            ct_r = f.vt.T @ (f.s * (f.u.T @ r))
            ct_z = f.vt.T @ (f.s * w)
            grad = ct_r + alpha * ct_z / nz
            ct_rhs = f.vt.T @ (f.s * (f.u.T @ problem.rhs))
            term = float(np.linalg.norm(grad)) / (1.0 + float(np.linalg.norm(ct_rhs)))
        else:
            nt = float(np.linalg.norm(f.project_coeffs(r)))
            excess = max(0.0, nt - alpha)
            term = excess / alpha if alpha > 0 else excess
        worst = max(worst, term)
    return worst


def bcd_solve(
    problem: ProblemInstance,
    alpha: float,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
) -> SolveResult:
    """Minimize the objective by cyclic block coordinate descent.

    Terminates when a full sweep achieves both a relative objective decrease
    at most ``tol_objective`` and a relative block change at most ``tol_x``
    and the KKT residual is within ``kkt_tol``; otherwise runs until
    ``max_sweeps`` and returns ``converged=False``.  Warm startable via
    ``x0`` (entries outside every group are fixed at zero).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    cfg = config if config is not None else SolverConfig()
    ops = _group_ops(problem)
    groups = problem.groups
    n_groups = groups.num_groups
    rhs = problem.rhs

    blocks = [None] * n_groups
    z = [None] * n_groups
    pen = np.zeros(n_groups)
    nx = np.zeros(n_groups)
    if x0 is not None:
        x_start = np.zeros(groups.n)
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (groups.n,):
            raise ValueError(f"x0 must have length {groups.n}")
        for gi, (g, _, _, _) in enumerate(ops):
            xg = x0[g]
            if np.any(xg):
                blocks[gi] = xg.copy()
                zg = problem.C[:, g] @ xg
                z[gi] = zg
                pen[gi] = float(np.linalg.norm(zg))
                nx[gi] = float(np.linalg.norm(xg))
                x_start[g] = xg
        r = rhs - problem.C @ x_start
    else:
        r = rhs.copy()

    def sweep(ids):
        """One pass over ``ids`` in order; returns the largest block change."""
        max_change = 0.0
        for gi in ids:
            g, qt, q, solve = ops[gi]
            zi = z[gi]
            if zi is None:
                t = qt @ r
                nt = math.sqrt(float(t @ t)) if t.size else 0.0
                if nt <= alpha:
                    continue
                coef = (1.0 - alpha / nt) * t
                xg = solve @ coef
                zg = q @ coef
                r[:] -= zg
                blocks[gi] = xg
                z[gi] = zg
                pen[gi] = nt - alpha
                norm_new = math.sqrt(float(xg @ xg))
                nx[gi] = norm_new
                if norm_new > max_change:
                    max_change = norm_new
            else:
                r[:] += zi
                t = qt @ r
                nt = math.sqrt(float(t @ t)) if t.size else 0.0
                if nt <= alpha:
                    change = nx[gi]
                    blocks[gi] = None
                    z[gi] = None
                    pen[gi] = 0.0
                    nx[gi] = 0.0
                else:
                    coef = (1.0 - alpha / nt) * t
                    xg = solve @ coef
                    zg = q @ coef
                    r[:] -= zg
                    d = xg - blocks[gi]
                    change = math.sqrt(float(d @ d))
                    blocks[gi] = xg
                    z[gi] = zg
                    pen[gi] = nt - alpha
                    nx[gi] = math.sqrt(float(xg @ xg))
                if change > max_change:
                    max_change = change
        return max_change

    def resync():
        """Recompute the residual and block images from scratch (drift control)."""
        x_now = _assemble(blocks, groups)
        r[:] = rhs - problem.C @ x_now
        for gi, (g, _, _, _) in enumerate(ops):
            if blocks[gi] is not None:
                zg = problem.C[:, g] @ blocks[gi]
                z[gi] = zg
                pen[gi] = float(np.linalg.norm(zg))

    def current_objective():
        return 0.5 * float(r @ r) + alpha * float(pen.sum())

    def met(obj_prev, obj_now, max_change, relax=1.0):
        decrease = obj_prev - obj_now
        rel_dec = decrease / max(abs(obj_prev), 1e-300)
        scale = float(nx.max(initial=0.0))
        rel_change = 0.0 if max_change == 0.0 else max_change / max(scale, max_change)
        return rel_dec <= relax * cfg.tol_objective and rel_change <= relax * cfg.tol_x

    obj = current_objective()
    sweeps = 0
    converged = False
    last_candidate = None
    while sweeps < cfg.max_sweeps:
        obj_prev = obj
        max_change = sweep(range(n_groups))
        sweeps += 1
        if sweeps % cfg.resync_every == 0:
            resync()
        obj = current_objective()
        if obj > obj_prev + 1e-10 * (1.0 + abs(obj_prev)):
            raise AssertionError(
                f"objective increased across a sweep ({obj_prev!r} -> {obj!r})"
            )
        if met(obj_prev, obj, max_change):
            resync()
            obj = current_objective()
            x_now = _assemble(blocks, groups)
            kkt = kkt_residual(problem, alpha, x_now)
            if kkt <= cfg.kkt_tol:
                converged = True
                break
            if last_candidate is not None and last_candidate == (obj, max_change):
                break  # exact fixed point that still fails certification
            last_candidate = (obj, max_change)
            continue
        if cfg.use_active_set:
            ids = [gi for gi in range(n_groups) if blocks[gi] is not None]
            while sweeps < cfg.max_sweeps:
                if not ids:
                    break
                obj_prev = obj
                max_change = sweep(ids)
                sweeps += 1
                if sweeps % cfg.resync_every == 0:
                    resync()
                obj = current_objective()
                if obj > obj_prev + 1e-10 * (1.0 + abs(obj_prev)):
                    raise AssertionError(
                        f"objective increased across a sweep ({obj_prev!r} -> {obj!r})"
                    )
                if met(obj_prev, obj, max_change, relax=INNER_RELAX):
                    break
                ids = [gi for gi in ids if blocks[gi] is not None]

    resync()
    x = _assemble(blocks, groups)
    return _finalize(problem, alpha, x, sweeps, converged)


def _finalize(problem, alpha, x, iterations, converged) -> SolveResult:
    obj = objective(problem, alpha, x)
    disc_t = float(np.linalg.norm(problem.C @ x - problem.rhs))
    disc_o = None
    if problem.A is not None and problem.b is not None:
        disc_o = float(np.linalg.norm(problem.A @ x - problem.b))
    return SolveResult(
        x=x,
        alpha=float(alpha),
        objective=obj,
        discrepancy_transformed=disc_t,
        discrepancy_original=disc_o,
        iterations=iterations,
        converged=converged,
        active_groups=active_groups(x, problem.groups),
        kkt_residual=kkt_residual(problem, alpha, x),
    )


@dataclass(frozen=True, eq=False)
class MorozovSelection:
    """Outcome of the discrepancy-principle search.

    Iterating yields ``(alpha, result)`` so the selection unpacks like a pair;
    ``bracketed`` is False when the target interval was unattainable and the
    best boundary value is returned instead.
    """

    alpha: float
    result: SolveResult
    bracketed: bool
    n_solves: int
    alpha_max: float
    delta: float
    tau: float
    space: str

    def __iter__(self):
        return iter((self.alpha, self.result))


def _discrepancy(problem, result, space, A, b):
    if space == "transformed":
        return result.discrepancy_transformed
    return float(np.linalg.norm(A @ result.x - b))


def morozov_select_alpha(
    problem: ProblemInstance,
    A: np.ndarray | None = None,
    b: np.ndarray | None = None,
    delta: float = 0.0,
    tau: float = 1.05,
    alpha_range: tuple | None = None,
    config: SolverConfig | None = None,
    space: str = "original",
    max_bisections: int = 40,
    probe_max_sweeps: int = 600,
) -> MorozovSelection:
    """Search ``log alpha`` for a discrepancy in ``[delta, tau*delta]``.

    The discrepancy is measured in the original space ``||A x - b||`` by
    default (``space="transformed"`` switches to ``||C x - rhs||``).  Alpha
    is halved from ``alpha_max`` with warm starts until the bracket is
    crossed, then bisected.  Probe solves run on a capped sweep budget; the
    accepted alpha is always re-certified at the full budget before being
    returned.  Returns a flagged boundary selection when the bracket cannot
    be attained within ``max_bisections`` solves.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if space not in ("original", "transformed"):
        raise ValueError(f"unknown discrepancy space {space!r}")
    if space == "original":
        A = problem.A if A is None else np.asarray(A, dtype=np.float64)
        b = problem.b if b is None else np.asarray(b, dtype=np.float64)
        if A is None or b is None:
            raise ValueError("original-space selection needs the (A, b) pair")
    amax = alpha_max(problem)
    if amax == 0.0:
        raise ValueError("alpha_max is zero (rhs projects to zero on every group)")
    lo_limit = 1e-8 * amax
    hi = amax
    if alpha_range is not None:
        lo_limit, hi = float(alpha_range[0]), float(alpha_range[1])
        if not 0 < lo_limit < hi:
            raise ValueError("alpha_range must satisfy 0 < lo < hi")
        if hi < amax:
            raise ValueError(f"alpha_range upper end must be >= alpha_max={amax:.6e}")

    base_cfg = config if config is not None else SolverConfig()
    probe_cfg = dataclasses.replace(
        base_cfg, max_sweeps=min(base_cfg.max_sweeps, probe_max_sweeps)
    )

    evaluated = []  # (alpha, result, disc)

    def solve_at(a, warm, cfg):
        res = bcd_solve(problem, a, warm, cfg)
        d = _discrepancy(problem, res, space, A, b)
        evaluated.append((a, res, d))
        return res, d

    def selection(a, res, bracketed):
        return MorozovSelection(
            alpha=float(a),
            result=res,
            bracketed=bracketed,
            n_solves=len(evaluated),
            alpha_max=amax,
            delta=delta,
            tau=tau,
            space=space,
        )

    def certify(a, res, d):
        """Finish an in-bracket probe at the full budget; None if it drifts out."""
        if res.converged or probe_cfg.max_sweeps >= base_cfg.max_sweeps:
            return selection(a, res, True), (a, res, d)
        res2, d2 = solve_at(a, res.x, base_cfg)
        if delta <= d2 <= tau * delta:
            return selection(a, res2, True), (a, res2, d2)
        return None, (a, res2, d2)

    def flagged_best():
        def miss(d):
            return max(delta - d, d - tau * delta, 0.0)

        a, res, d = min(evaluated, key=lambda e: (miss(e[2]), -e[0]))
        if not res.converged and probe_cfg.max_sweeps < base_cfg.max_sweeps:
            res, d = solve_at(a, res.x, base_cfg)
        return selection(a, res, False)

    res_hi, d_hi = solve_at(hi, None, base_cfg)
    if delta <= d_hi <= tau * delta:
        return selection(hi, res_hi, True)
    if d_hi < delta:
        # Even the zero solution over-fits the noise estimate; nothing to do.
        return selection(hi, res_hi, False)

    # Continuation: decrease alpha with warm starts until the discrepancy
    # drops into (or through) the bracket, then bisect inside the last
    # interval.  A log-log secant on the last two probes predicts the
    # crossing; the step is clamped to [1/8, 1/1.3] per stage.
    hi_state = (hi, res_hi, d_hi)
    prev = None
    lo_state = None
    stalls = 0
    target = delta * math.sqrt(tau)
    while len(evaluated) < max_bisections:
        a_hi, _, d_hi_now = hi_state
        factor = 2.0
        if prev is not None:
            a_p, d_p = prev
            num = math.log(d_hi_now) - math.log(d_p)
            den = math.log(a_hi) - math.log(a_p)
            if den != 0 and num / den > 0.05:
                a_pred = math.exp(math.log(a_hi) + (math.log(target) - math.log(d_hi_now)) / (num / den))
                factor = min(8.0, max(1.3, a_hi / a_pred))
        a = a_hi / factor
        if a < lo_limit:
            return flagged_best()  # bracket unattainable above the alpha floor
        res, d = solve_at(a, hi_state[1].x, probe_cfg)
        if delta <= d <= tau * delta:
            done, state = certify(a, res, d)
            if done is not None:
                return done
            a, res, d = state
        if d < delta:
            lo_state = (a, res, d)
            break
        # Still above the bracket; detect a discrepancy floor (no progress).
        stalls = stalls + 1 if d > 0.995 * hi_state[2] else 0
        if stalls >= 3:
            return flagged_best()
        prev = (a_hi, d_hi_now)
        hi_state = (a, res, d)
    if lo_state is None:
        return flagged_best()

    while len(evaluated) < max_bisections:
        mid = math.sqrt(lo_state[0] * hi_state[0])
        warm_from = (
            lo_state
            if abs(math.log(mid / lo_state[0])) <= abs(math.log(hi_state[0] / mid))
            else hi_state
        )
        res_mid, d_mid = solve_at(mid, warm_from[1].x, probe_cfg)
        if delta <= d_mid <= tau * delta:
            done, state = certify(mid, res_mid, d_mid)
            if done is not None:
                return done
            mid, res_mid, d_mid = state
        if d_mid > tau * delta:
            hi_state = (mid, res_mid, d_mid)
        else:
            lo_state = (mid, res_mid, d_mid)
    return flagged_best()


@dataclass(frozen=True, eq=False)
class PursuitStage:
    alpha: float
    active_groups: tuple
    discrepancy_transformed: float


@dataclass(frozen=True, eq=False)
class PursuitResult:
    """Continuation output approximating the equality-constrained pursuit."""

    result: SolveResult
    alpha_final: float
    stages: tuple
    feasible: bool
    stop_reason: str  # "feasible" | "alpha_underflow" | "zero_rhs" | "trivial_epsilon"


def pursuit_solve(
    problem: ProblemInstance,
    epsilon: float,
    config: SolverConfig | None = None,
    shrink: float = 0.5,
    alpha_floor_ratio: float = 1e-12,
) -> PursuitResult:
    """Drive the data misfit below ``epsilon * ||rhs||`` by halving ``alpha``.

    Starts from ``alpha_max`` (where the zero vector is optimal) and
    warm-starts each stage from the previous solution.  Stops when the
    transformed discrepancy is small enough or ``alpha`` underflows
    ``alpha_floor_ratio * alpha_max``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < shrink < 1:
        raise ValueError("shrink must be in (0, 1)")
    rhs_norm = float(np.linalg.norm(problem.rhs))
    amax = alpha_max(problem)
    if rhs_norm == 0.0 or amax == 0.0:
        zero = _finalize(problem, max(amax, 1e-300), np.zeros(problem.groups.n), 0, True)
        return PursuitResult(
            result=zero, alpha_final=amax, stages=(), feasible=True, stop_reason="zero_rhs"
        )
    start = _finalize(problem, amax, np.zeros(problem.groups.n), 0, True)
    if start.discrepancy_transformed <= epsilon * rhs_norm:
        return PursuitResult(
            result=start,
            alpha_final=amax,
            stages=(),
            feasible=True,
            stop_reason="trivial_epsilon",
        )
    stages = []
    warm = start.x
    alpha = amax
    last = start
    while True:
        alpha = alpha * shrink
        if alpha < alpha_floor_ratio * amax:
            return PursuitResult(
                result=last,
                alpha_final=last.alpha,
                stages=tuple(stages),
                feasible=False,
                stop_reason="alpha_underflow",
            )
        last = bcd_solve(problem, alpha, warm, config)
        warm = last.x
        stages.append(
            PursuitStage(
                alpha=alpha,
                active_groups=last.active_groups,
                discrepancy_transformed=last.discrepancy_transformed,
            )
        )
        if last.discrepancy_transformed <= epsilon * rhs_norm:
            return PursuitResult(
                result=last,
                alpha_final=alpha,
                stages=tuple(stages),
                feasible=True,
                stop_reason="feasible",
            )
