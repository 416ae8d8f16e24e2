"""Numerical certification of the recovery guarantees on concrete instances.

Checks the linear-independence and disjoint-group-image assumptions, then
verifies single-group pursuit recovery, recovery of disjoint groups, and the
shrinkage law relating the regularized minimizer to the planted source.  The
equality-constrained pursuit program is approximated by alpha continuation
(:func:`wglasso.solver.pursuit_solve`); the known continuation alpha is undone
through the shrinkage factor before solutions are compared.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import GroupStructure, ProblemInstance, subvector
from .solver import SolverConfig, bcd_solve, pursuit_solve

__all__ = [
    "AssumptionCheck",
    "TheoremReport",
    "check_pairwise_independence",
    "group_image",
    "check_disjoint_images",
    "verify_single_group_pursuit",
    "verify_disjoint_recovery",
    "verify_gamma_scaling",
    "random_gaussian_instance",
    "orthogonal_block_instance",
    "default_verification_suite",
    "suite_passed",
]

#: Relative magnitude below which a matrix entry counts as zero when group
#: images are formed.  Exact zeros only arise in constructed instances.
IMAGE_TOL = 1e-10


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    margin: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "margin": self.margin}


@dataclass(frozen=True)
class TheoremReport:
    """Verdict of one theorem check on one concrete instance.

    ``verdict`` is ``"pass"``, ``"fail"`` or ``"not_applicable"`` (the latter
    when a required assumption does not hold, so the recovery outcome is
    informational only).
    """

    theorem_id: str
    instance_summary: dict
    assumptions_checked: tuple
    verdict: str
    error_metrics: dict

    def to_dict(self) -> dict:
        return {
            "theorem_id": self.theorem_id,
            "instance_summary": self.instance_summary,
            "assumptions_checked": [a.to_dict() for a in self.assumptions_checked],
            "verdict": self.verdict,
            "error_metrics": self.error_metrics,
        }


def check_pairwise_independence(C, groups: GroupStructure, g1: int, g2: int, tol: float = IMAGE_TOL):
    """Joint linear independence of the columns of two groups.

    Passes when the smallest singular value of the concatenated column block
    exceeds ``tol`` times the largest; the margin is that singular-value
    ratio.
    """
    if g1 == g2:
        raise ValueError("g1 and g2 must differ")
    C = np.asarray(C, dtype=np.float64)
    block = C[:, np.concatenate([groups.groups[g1], groups.groups[g2]])]
    s = np.linalg.svd(block, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False, 0.0
    if block.shape[1] > block.shape[0]:
        return False, 0.0  # more columns than rows can never be independent
    margin = float(s[-1] / s[0])
    return margin > tol, margin


def group_image(C, groups: GroupStructure, g: int, tol: float = IMAGE_TOL) -> frozenset:
    """Ids of groups reachable in the support of ``C^T C_g x_g``.

    For generic ``x_g`` the reachable support is the union of the column
    supports of ``M = C^T C_g``; a group belongs to the image when any of its
    rows of ``M`` carries an entry above ``tol`` times the largest entry.
    """
    C = np.asarray(C, dtype=np.float64)
    M = C.T @ C[:, groups.groups[g]]
    top = np.max(np.abs(M)) if M.size else 0.0
    if top == 0.0:
        warnings.warn(
            f"group {g} maps to zero under C^T C; its image is empty", stacklevel=2
        )
        return frozenset()
    rows = np.max(np.abs(M), axis=1)
    return frozenset(
        gi for gi, idx in enumerate(groups.groups) if np.max(rows[idx]) > tol * top
    )


def check_disjoint_images(
    C,
    groups: GroupStructure,
    J,
    tol: float = IMAGE_TOL,
    draws: int = 10,
    seed=0,
):
    """Pairwise disjointness of the group images over ``J``.

    Also verifies, on ``draws`` random block draws per group, that the
    supports of ``C^T C_g x_g`` are pairwise disjoint across ``J`` (restricted
    to indices covered by groups, matching the image semantics).  Returns
    ``(passed, witness)`` where the witness names the first offending
    ``(g1, g2, shared_group)`` triple.
    """
    J = [int(g) for g in J]
    if len(J) < 2:
        return True, None
    C = np.asarray(C, dtype=np.float64)
    images = {g: group_image(C, groups, g, tol) for g in J}
    for i, g1 in enumerate(J):
        for g2 in J[i + 1 :]:
            shared = images[g1] & images[g2]
            if shared:
                return False, (g1, g2, min(shared))

    rng = np.random.default_rng(seed)
    reached = {}
    for g in J:
        idx = groups.groups[g]
        hit = np.zeros(groups.num_groups, dtype=bool)
        for _ in range(draws):
            v = C.T @ (C[:, idx] @ rng.standard_normal(idx.size))
            top = np.max(np.abs(v))
            if top == 0.0:
                continue
            for gi, gidx in enumerate(groups.groups):
                if np.max(np.abs(v[gidx])) > tol * top:
                    hit[gi] = True
        reached[g] = hit
    for i, g1 in enumerate(J):
        for g2 in J[i + 1 :]:
            both = reached[g1] & reached[g2]
            if both.any():
                return False, (g1, g2, int(np.nonzero(both)[0][0]))
    return True, None


def _plant(groups: GroupStructure, assignments: dict) -> np.ndarray:
    x = np.zeros(groups.n)
    for g, block in assignments.items():
        block = np.asarray(block, dtype=np.float64)
        if not np.any(block):
            raise ValueError(f"planted block for group {g} must be nonzero")
        x[groups.groups[g]] = block
    return x


def verify_single_group_pursuit(
    C,
    groups: GroupStructure,
    g_star: int,
    x_star_g,
    epsilon: float = 1e-4,
    config: SolverConfig | None = None,
    rel_tol: float = 1e-5,
    independence_tol: float = IMAGE_TOL,
) -> TheoremReport:
    """Exact-data recovery of a source supported on a single group.

    Builds ``rhs = C x*``, runs the continuation pursuit, and requires the
    recovered support to be exactly ``{g_star}`` with relative error at most
    ``rel_tol`` once the final continuation shrinkage is undone.
    """
    C = np.asarray(C, dtype=np.float64)
    x_star = _plant(groups, {g_star: x_star_g})
    problem = ProblemInstance.from_matrix(C, C @ x_star, groups)

    checks = []
    for h in range(groups.num_groups):
        if h == g_star:
            continue
        ok, margin = check_pairwise_independence(C, groups, g_star, h, independence_tol)
        checks.append(AssumptionCheck(f"independence({g_star},{h})", ok, margin))
    assumptions_ok = all(c.passed for c in checks)

    pursuit = pursuit_solve(problem, epsilon, config)
    signal = float(np.linalg.norm(C[:, groups.groups[g_star]] @ np.asarray(x_star_g, dtype=np.float64)))
    gamma = 1.0 - pursuit.alpha_final / signal if signal > 0 else 0.0
    support = tuple(pursuit.result.active_groups)
    support_ok = support == (g_star,)
    if gamma > 0:
        rel_err = float(
            np.linalg.norm(pursuit.result.x / gamma - x_star) / np.linalg.norm(x_star)
        )
    else:
        rel_err = float("inf")
    passed = assumptions_ok and support_ok and pursuit.feasible and rel_err <= rel_tol
    verdict = "pass" if passed else ("fail" if assumptions_ok else "not_applicable")
    return TheoremReport(
        theorem_id="single_group_pursuit",
        instance_summary={
            "q": int(C.shape[0]),
            "n": int(C.shape[1]),
            "num_groups": groups.num_groups,
            "g_star": int(g_star),
            "continuation_stages": len(pursuit.stages),
        },
        assumptions_checked=tuple(checks),
        verdict=verdict,
        error_metrics={
            "relative_error": rel_err,
            "support_mismatch": 0 if support_ok else 1,
            "gamma": gamma,
            "alpha_final": pursuit.alpha_final,
            "recovered_support": list(support),
        },
    )


def verify_disjoint_recovery(
    C,
    groups: GroupStructure,
    J,
    x_star_blocks,
    epsilon: float = 1e-4,
    config: SolverConfig | None = None,
    rel_tol: float = 1e-5,
    tol: float = IMAGE_TOL,
) -> TheoremReport:
    """Exact-data recovery of a source supported on disjoint-image groups.

    The disjoint-image assumption is certified first; when it fails the
    verdict is ``not_applicable`` and the recovery outcome is recorded for
    information only.  Per-group errors are measured after undoing the final
    continuation shrinkage group by group (each planted group sees its own
    shrinkage factor ``1 - alpha / ||C_g x*_g||``).
    """
    J = [int(g) for g in J]
    if len(J) < 2:
        raise ValueError("J must contain at least two groups")
    C = np.asarray(C, dtype=np.float64)
    blocks = {g: np.asarray(xb, dtype=np.float64) for g, xb in zip(J, x_star_blocks)}
    x_star = _plant(groups, blocks)
    problem = ProblemInstance.from_matrix(C, C @ x_star, groups)

    disjoint_ok, witness = check_disjoint_images(C, groups, J, tol)
    checks = (
        AssumptionCheck(
            "disjoint_group_images", disjoint_ok, 1.0 if disjoint_ok else 0.0
        ),
    )

    pursuit = pursuit_solve(problem, epsilon, config)
    support = tuple(pursuit.result.active_groups)
    support_ok = support == tuple(sorted(J))
    per_group = {}
    worst = 0.0
    for g in J:
        signal = float(np.linalg.norm(C[:, groups.groups[g]] @ blocks[g]))
        gamma = 1.0 - pursuit.alpha_final / signal if signal > 0 else 0.0
        xg = subvector(pursuit.result.x, groups.groups[g])
        if gamma > 0:
            err = float(np.linalg.norm(xg / gamma - blocks[g]) / np.linalg.norm(blocks[g]))
        else:
            err = float("inf")
        per_group[str(g)] = err
        worst = max(worst, err)
    recovery_ok = support_ok and pursuit.feasible and worst <= rel_tol
    if not disjoint_ok:
        verdict = "not_applicable"
    else:
        verdict = "pass" if recovery_ok else "fail"
    return TheoremReport(
        theorem_id="disjoint_group_recovery",
        instance_summary={
            "q": int(C.shape[0]),
            "n": int(C.shape[1]),
            "num_groups": groups.num_groups,
            "J": J,
            "continuation_stages": len(pursuit.stages),
        },
        assumptions_checked=checks,
        verdict=verdict,
        error_metrics={
            "max_relative_error": worst,
            "per_group_relative_error": per_group,
            "support_mismatch": 0 if support_ok else 1,
            "recovered_support": list(support),
            "alpha_final": pursuit.alpha_final,
            "witness": list(witness) if witness else None,
        },
    )


def verify_gamma_scaling(
    C,
    groups: GroupStructure,
    g_star: int,
    x_star_g,
    alpha_fractions=(0.1, 0.5, 0.9),
    config: SolverConfig | None = None,
    rel_tol: float = 1e-6,
) -> TheoremReport:
    """Shrinkage law for single-group sources under exact data.

    For ``alpha = f * ||C_g* x*_g*||`` the regularized minimizer must equal
    ``(1 - f) x*`` to ``rel_tol``; fractions at or above one fall outside the
    guarantee and are checked against the zero vector instead.
    """
    C = np.asarray(C, dtype=np.float64)
    fractions = [float(f) for f in alpha_fractions]
    if any(f <= 0 for f in fractions):
        raise ValueError("alpha fractions must be positive")
    x_star = _plant(groups, {g_star: x_star_g})
    problem = ProblemInstance.from_matrix(C, C @ x_star, groups)
    signal = float(np.linalg.norm(C[:, groups.groups[g_star]] @ np.asarray(x_star_g, dtype=np.float64)))
    norm_star = float(np.linalg.norm(x_star))

    deviations = {}
    worst = 0.0
    for f in fractions:
        res = bcd_solve(problem, f * signal, None, config)
        expected = max(0.0, 1.0 - f) * x_star
        dev = float(np.linalg.norm(res.x - expected) / norm_star)
        deviations[repr(f)] = dev
        worst = max(worst, dev)
    in_range = all(0 < f < 1 for f in fractions)
    checks = (
        AssumptionCheck(
            "fractions_in_theorem_range",
            in_range,
            min(1.0 - f for f in fractions),
        ),
    )
    dev_ok = worst <= rel_tol
    if in_range:
        verdict = "pass" if dev_ok else "fail"
    else:
        verdict = "not_applicable" if dev_ok else "fail"
    return TheoremReport(
        theorem_id="gamma_scaling",
        instance_summary={
            "q": int(C.shape[0]),
            "n": int(C.shape[1]),
            "num_groups": groups.num_groups,
            "g_star": int(g_star),
            "fractions": fractions,
        },
        assumptions_checked=checks,
        verdict=verdict,
        error_metrics={"max_deviation": worst, "per_fraction_deviation": deviations},
    )


def _uniform_groups(num_groups: int, group_size: int) -> GroupStructure:
    idx = [
        np.arange(j * group_size, (j + 1) * group_size, dtype=np.intp)
        for j in range(num_groups)
    ]
    return GroupStructure(groups=tuple(idx), n=num_groups * group_size)


def random_gaussian_instance(q: int = 12, num_groups: int = 10, group_size: int = 3, seed=0):
    """Dense i.i.d. Gaussian matrix with uniform contiguous groups."""
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((q, num_groups * group_size))
    return C, _uniform_groups(num_groups, group_size)


def orthogonal_block_instance(
    num_groups: int = 8, block_dim: int = 3, group_size: int = 3, seed=0
):
    """Instance whose group column blocks span mutually orthogonal subspaces.

    Each group is ``Q_j G_j`` with the ``Q_j`` slices of one orthogonal matrix
    and ``G_j`` dense Gaussian, so ``C^T C`` is block diagonal and every group
    image is the group itself.
    """
    q = num_groups * block_dim
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((q, q)))
    cols = []
    for j in range(num_groups):
        G = rng.standard_normal((block_dim, group_size))
        cols.append(Q[:, j * block_dim : (j + 1) * block_dim] @ G)
    return np.hstack(cols), _uniform_groups(num_groups, group_size)


def default_verification_suite(
    pursuit_instances: int = 100,
    gamma_instances: int = 20,
    disjoint_instances: int = 20,
    config: SolverConfig | None = None,
    base_seed: int = 0,
):
    """Run the full theorem suite on seeded random instances.

    Returns the list of :class:`TheoremReport`; instances whose assumptions
    fail are reported ``not_applicable`` and do not count against the suite.
    """
    reports = []
    for i in range(pursuit_instances):
        seed = base_seed + i
        C, groups = random_gaussian_instance(12, 10, 3, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        g_star = int(rng.integers(groups.num_groups))
        x_g = rng.standard_normal(3)
        reports.append(
            verify_single_group_pursuit(C, groups, g_star, x_g, config=config)
        )
    for i in range(gamma_instances):
        seed = base_seed + 10_000 + i
        C, groups = random_gaussian_instance(12, 10, 3, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        g_star = int(rng.integers(groups.num_groups))
        x_g = rng.standard_normal(3)
        reports.append(
            verify_gamma_scaling(C, groups, g_star, x_g, (0.1, 0.5, 0.9), config=config)
        )
    for i in range(disjoint_instances):
        seed = base_seed + 20_000 + i
        C, groups = orthogonal_block_instance(8, 3, 3, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        size = 2 if i % 2 == 0 else 3
        J = sorted(int(g) for g in rng.choice(groups.num_groups, size=size, replace=False))
        blocks = [rng.standard_normal(3) for _ in J]
        reports.append(
            verify_disjoint_recovery(C, groups, J, blocks, config=config)
        )
    return reports


def suite_passed(reports) -> bool:
    """True when no report failed (``not_applicable`` is informational)."""
    return all(r.verdict != "fail" for r in reports)
