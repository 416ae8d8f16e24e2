"""Seeded problem builders shared by tests and the oracle generator.

The acceptance suite freezes oracle values against instances built here, so
the construction must never change without regenerating the frozen data
(``python tests/generate_oracles.py``).
"""

import numpy as np

from wglasso import GroupStructure, ProblemInstance


def dense_problem(seed, q=8, n=12, num_groups=4):
    """Random dense instance with ``alpha = 0.3 * ||C^T rhs||_inf``."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 77)))
    C = rng.standard_normal((q, n))
    rhs = rng.standard_normal(q)
    size = n // num_groups
    groups = GroupStructure(
        groups=tuple(np.arange(j * size, (j + 1) * size) for j in range(num_groups)),
        n=n,
    )
    alpha = 0.3 * float(np.max(np.abs(C.T @ rhs)))
    return C, rhs, alpha, groups


def dense_problem_instance(seed, q=8, n=12, num_groups=4):
    C, rhs, alpha, groups = dense_problem(seed, q, n, num_groups)
    return ProblemInstance.from_matrix(C, rhs, groups), alpha


def singleton_problem(seed, q=8, n=12):
    """Instance where every group has a single member (plain weighted lasso)."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 78)))
    C = rng.standard_normal((q, n))
    rhs = rng.standard_normal(q)
    groups = GroupStructure(groups=tuple(np.array([i]) for i in range(n)), n=n)
    alpha = 0.3 * float(np.max(np.abs(C.T @ rhs)))
    return C, rhs, alpha, groups


def objective_direct(C, rhs, groups, alpha, x):
    """Objective evaluated with plain column slicing (independent of solvers)."""
    res = C @ x - rhs
    pen = sum(float(np.linalg.norm(C[:, g] @ x[g])) for g in groups.groups)
    return 0.5 * float(res @ res) + alpha * pen
