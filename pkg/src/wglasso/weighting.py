"""Weighting operators and problem composition.

The transformed problem replaces the raw system ``A x = b`` with
``C x = B b`` where ``C = B A``.  Two realizations of ``B`` are supported:
the identity (standardized formulation on the raw lead field) and the rank-k
truncated Moore-Penrose pseudoinverse of ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroupStructure, LeadField, ProblemInstance
from .errors import RankError

__all__ = [
    "WeightingOperator",
    "identity_weighting",
    "truncated_pseudoinverse",
    "default_truncation_rank",
    "compose_problem",
    "replace_measurement",
]

IDENTITY = "identity"
TRUNCATED = "truncated_pseudoinverse"


def _matrix_of(A) -> np.ndarray:
    if isinstance(A, LeadField):
        return A.entries
    return np.asarray(A, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class WeightingOperator:
    """Dense realization of the data-space weighting map."""

    kind: str
    k: int | None
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in (IDENTITY, TRUNCATED):
            raise ValueError(f"unknown weighting kind: {self.kind!r}")
        mat = np.array(self.matrix, dtype=np.float64)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def q_rows(self) -> int:
        return self.matrix.shape[0]


def identity_weighting(m: int) -> WeightingOperator:
    """The do-nothing weighting: ``B = I_m``."""
    return WeightingOperator(kind=IDENTITY, k=None, matrix=np.eye(m))


def default_truncation_rank(m: int, n: int) -> int:
    """Default truncation rank: 150 vectors at 228 channels, scaled to ``m``.

    The reference operating point keeps 150 of 228 singular directions; the
    default preserves that proportion for other montages, clamped to the
    feasible range ``[1, min(m, n)]``.
    """
    k = int(round(150.0 * m / 228.0))
    return max(1, min(k, m, n))


def truncated_pseudoinverse(A, k: int, rank_tol: float = 1e-12) -> WeightingOperator:
    """Rank-``k`` pseudoinverse ``sum_{i<=k} v_i u_i^T / s_i`` of the lead field.

    Raises :class:`RankError` when ``k`` exceeds the numerical rank
    (``s_k <= rank_tol * s_1``).
    """
    mat = _matrix_of(A)
    m, n = mat.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must be in [1, {min(m, n)}], got {k}")
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    effective = int(np.count_nonzero(s > rank_tol * s[0])) if s[0] > 0 else 0
    if k > effective:
        raise RankError(
            f"k={k} exceeds the numerical rank {effective} of the matrix",
            effective_rank=effective,
        )
    B = (vt[:k].T / s[:k]) @ u[:, :k].T
    return WeightingOperator(kind=TRUNCATED, k=k, matrix=B)


def compose_problem(
    A,
    B: WeightingOperator,
    b: np.ndarray,
    groups: GroupStructure,
    validate: bool = False,
) -> ProblemInstance:
    """Materialize ``C = B A`` and ``rhs = B b`` with cached group factors."""
    mat = _matrix_of(A)
    b = np.asarray(b, dtype=np.float64)
    m, n = mat.shape
    if B.matrix.shape[1] != m:
        raise ValueError(
            f"weighting expects {B.matrix.shape[1]} channels, lead field has {m}"
        )
    if b.shape != (m,):
        raise ValueError(f"measurement must have length {m}, got {b.shape}")
    if groups.n != n:
        raise ValueError(f"group structure covers {groups.n} unknowns, matrix has {n}")
    C = B.matrix @ mat
    rhs = B.matrix @ b
    return ProblemInstance.from_matrix(
        C,
        rhs,
        groups,
        A=mat,
        b=b,
        weighting_kind=B.kind,
        weighting_k=B.k,
        validate=validate,
    )


def replace_measurement(
    problem: ProblemInstance, B: WeightingOperator, b: np.ndarray
) -> ProblemInstance:
    """New instance for fresh data, reusing ``C`` and the group factors."""
    b = np.asarray(b, dtype=np.float64)
    if B.matrix.shape[1] != b.shape[0]:
        raise ValueError("measurement length does not match the weighting operator")
    if B.kind != problem.weighting_kind or B.k != problem.weighting_k:
        raise ValueError("weighting operator does not match the composed problem")
    return problem.with_rhs(B.matrix @ b, b=b)
