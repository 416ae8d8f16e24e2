"""Core domain types: group structures, lead fields, problem and result records.

All containers are frozen dataclasses whose array fields are made read-only at
construction time, so instances can be shared freely between threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GroupStructure",
    "LeadField",
    "DipoleSource",
    "GroupFactor",
    "ProblemInstance",
    "SolveResult",
    "make_dipole_groups",
    "subvector",
    "scatter",
    "active_groups",
    "factorize_group",
]

#: Relative singular-value cutoff below which a direction of a group block is
#: treated as numerically absent (rank detection in :func:`factorize_group`).
RANK_TOL = 1e-10

#: A group counts as active when its block norm exceeds this fraction of the
#: largest block norm (scale-invariant support definition).
ACTIVITY_REL_TOL = 1e-8


def _readonly(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Partition (possibly partial) of the unknown-vector indices into groups.

    Parameters
    ----------
    groups : tuple of int arrays
        Ordered index vectors, 0-based into the unknown vector.
    n : int
        Total dimension of the unknown vector.

    Groups must be non-empty, pairwise disjoint and within ``[0, n)``.  They
    need not cover all indices; the solver fixes uncovered indices at zero.
    """

    groups: tuple
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension n must be positive, got {self.n}")
        normalized = []
        for i, g in enumerate(self.groups):
            idx = np.asarray(g, dtype=np.intp)
            if idx.ndim != 1 or idx.size == 0:
                raise ValueError(f"group {i} must be a non-empty 1-D index vector")
            if idx.min() < 0 or idx.max() >= self.n:
                raise ValueError(
                    f"group {i} has indices outside [0, {self.n}): {idx.tolist()}"
                )
            idx = idx.copy()
            idx.setflags(write=False)
            normalized.append(idx)
        all_idx = np.concatenate(normalized) if normalized else np.empty(0, np.intp)
        if np.unique(all_idx).size != all_idx.size:
            raise ValueError("groups must be pairwise disjoint")
        object.__setattr__(self, "groups", tuple(normalized))

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple:
        return tuple(int(g.size) for g in self.groups)

    @property
    def covers_all(self) -> bool:
        return sum(self.sizes) == self.n


@dataclass(frozen=True, eq=False)
class LeadField:
    """Dense forward matrix mapping source components to channel measurements.

    Columns are component-major: columns ``3j, 3j+1, 3j+2`` hold the x/y/z
    moment directions of source position ``j``.  Realistic montages are
    underdetermined (fewer channels than source components); tiny synthetic
    fields may be square or tall, so the shape is not enforced here.
    """

    entries: np.ndarray
    column_layout: str = "component-major"

    def __post_init__(self):
        arr = _readonly(self.entries)
        if arr.ndim != 2:
            raise ValueError("lead field must be a 2-D matrix")
        if not np.all(np.isfinite(arr)):
            raise ValueError("lead field contains non-finite entries")
        object.__setattr__(self, "entries", arr)

    @property
    def num_channels(self) -> int:
        return self.entries.shape[0]

    @property
    def num_components(self) -> int:
        return self.entries.shape[1]

    @property
    def num_positions(self) -> int:
        return self.entries.shape[1] // 3

    @property
    def underdetermined(self) -> bool:
        """True for the intended regime: more source components than channels."""
        m, n = self.entries.shape
        return m < n


@dataclass(frozen=True, eq=False)
class DipoleSource:
    """A planted current dipole: position (mm), moment vector, and the id of
    the group holding its three moment components."""

    position: np.ndarray
    moment: np.ndarray
    group_id: int

    def __post_init__(self):
        pos = _readonly(self.position)
        mom = _readonly(self.moment)
        if pos.shape != (3,) or mom.shape != (3,):
            raise ValueError("position and moment must be 3-vectors")
        if not np.any(mom):
            raise ValueError("a planted source must have a nonzero moment")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment", mom)


@dataclass(frozen=True, eq=False)
class GroupFactor:
    """Thin SVD of one group block ``C_g = u @ diag(s) @ vt``.

    ``u`` holds all ``min(q, |g|)`` left vectors so the block is reconstructed
    exactly; projections and solves use only the leading ``rank`` triplets,
    where ``rank`` counts singular values above ``RANK_TOL * s[0]``.
    """

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    rank: int

    @property
    def basis(self) -> np.ndarray:
        """Orthonormal basis of the numerical range of the block."""
        return self.u[:, : self.rank]

    def project_coeffs(self, r: np.ndarray) -> np.ndarray:
        """Coefficients of the orthogonal projection of ``r`` onto the range."""
        return self.u[:, : self.rank].T @ r

    def solve_from_coeffs(self, t: np.ndarray) -> np.ndarray:
        """Minimum-norm ``x_g`` with ``C_g x_g = basis @ t``."""
        return self.vt[: self.rank].T @ (t / self.s[: self.rank])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def factorize_group(C: np.ndarray, indices: np.ndarray) -> GroupFactor:
    """Factor the sub-columns of ``C`` selected by ``indices``."""
    block = np.ascontiguousarray(C[:, indices])
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    if s.size and s[0] > 0:
        rank = int(np.count_nonzero(s > RANK_TOL * s[0]))
    else:
        rank = 0
    u.setflags(write=False)
    s.setflags(write=False)
    vt.setflags(write=False)
    return GroupFactor(u=u, s=s, vt=vt, rank=rank)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Composed problem ``min 0.5||C x - rhs||^2 + alpha * sum_g ||C_g x_g||``.

    Holds the dense composed matrix, the transformed data vector, the group
    structure, and cached per-group factorizations.  When the instance was
    composed from an original pair ``(A, b)``, those are kept for reporting
    discrepancies in the original measurement space.
    """

    C: np.ndarray
    rhs: np.ndarray
    groups: GroupStructure
    group_factors: tuple
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    weighting_kind: str | None = None
    weighting_k: int | None = None

    def __post_init__(self):
        C = _readonly(self.C)
        rhs = _readonly(self.rhs)
        if C.ndim != 2 or rhs.ndim != 1 or rhs.size != C.shape[0]:
            raise ValueError("C must be (q, n) and rhs a length-q vector")
        if C.shape[1] != self.groups.n:
            raise ValueError(
                f"C has {C.shape[1]} columns but group structure expects {self.groups.n}"
            )
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "rhs", rhs)
        if self.A is not None:
            object.__setattr__(self, "A", _readonly(self.A))
        if self.b is not None:
            object.__setattr__(self, "b", _readonly(self.b))

    @classmethod
    def from_matrix(
        cls,
        C,
        rhs,
        groups: GroupStructure,
        A=None,
        b=None,
        weighting_kind=None,
        weighting_k=None,
        validate: bool = False,
    ) -> "ProblemInstance":
        """Build an instance from a dense matrix, factorizing every group.

        ``validate=True`` additionally checks the factorization invariants
        (exact reconstruction, orthonormal basis).
        """
        C = np.asarray(C, dtype=np.float64)
        rhs = np.asarray(rhs, dtype=np.float64)
        if C.ndim != 2 or C.shape[1] != groups.n:
            raise ValueError(
                f"C must have {groups.n} columns to match the group structure"
            )
        if rhs.shape != (C.shape[0],):
            raise ValueError(f"rhs must have length {C.shape[0]}")
        factors = tuple(factorize_group(C, g) for g in groups.groups)
        inst = cls(
            C=C,
            rhs=rhs,
            groups=groups,
            group_factors=factors,
            A=A,
            b=b,
            weighting_kind=weighting_kind,
            weighting_k=weighting_k,
        )
        if validate:
            inst.validate_factors()
        return inst

    def validate_factors(self, recon_tol: float = 1e-12, ortho_tol: float = 1e-12):
        """Check reconstruction and orthonormality of the cached factors."""
        for g, f in zip(self.groups.groups, self.group_factors):
            block = self.C[:, g]
            scale = np.linalg.norm(block)
            err = np.linalg.norm(f.reconstruct() - block)
            if err > recon_tol * max(scale, 1.0):
                raise AssertionError(
                    f"group factorization reconstruction error {err:.3e} exceeds tolerance"
                )
            q = f.basis
            gram_err = np.max(np.abs(q.T @ q - np.eye(f.rank))) if f.rank else 0.0
            if gram_err > ortho_tol:
                raise AssertionError(
                    f"group basis not orthonormal (max deviation {gram_err:.3e})"
                )

    def with_rhs(self, rhs, b=None) -> "ProblemInstance":
        """Cheap copy with a new data vector, sharing matrix and factors."""
        return dataclasses.replace(self, rhs=_readonly(rhs), b=b)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Minimizer and diagnostics returned by the solvers."""

    x: np.ndarray
    alpha: float
    objective: float
    discrepancy_transformed: float
    iterations: int
    converged: bool
    active_groups: tuple
    kkt_residual: float
    discrepancy_original: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x))

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "objective": self.objective,
            "discrepancy_transformed": self.discrepancy_transformed,
            "discrepancy_original": self.discrepancy_original,
            "iterations": self.iterations,
            "converged": self.converged,
            "active_groups": list(self.active_groups),
            "kkt_residual": self.kkt_residual,
            "x": self.x.tolist(),
        }
        return d


def make_dipole_groups(num_positions: int) -> GroupStructure:
    """Group structure for ``num_positions`` dipoles, three components each.

    Group ``j`` holds indices ``{3j, 3j+1, 3j+2}`` (component-major layout).
    """
    if num_positions < 1:
        raise ValueError(f"num_positions must be >= 1, got {num_positions}")
    groups = tuple(np.arange(3 * j, 3 * j + 3, dtype=np.intp) for j in range(num_positions))
    return GroupStructure(groups=groups, n=3 * num_positions)


def subvector(x: np.ndarray, g) -> np.ndarray:
    """Entries of ``x`` at the indices of group ``g``, in group order."""
    x = np.asarray(x)
    idx = np.asarray(g, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(
            f"group indices out of range for a vector of length {x.shape[0]}"
        )
    return x[idx]


def scatter(blocks, groups: GroupStructure) -> np.ndarray:
    """Assemble a full vector from per-group blocks (zeros elsewhere)."""
    x = np.zeros(groups.n)
    for g, block in zip(groups.groups, blocks):
        x[g] = block
    return x


def active_groups(x: np.ndarray, groups: GroupStructure, rel_tol: float = ACTIVITY_REL_TOL) -> tuple:
    """Ids of groups with ``||x_g|| > rel_tol * max_g ||x_g||`` (empty for x = 0)."""
    norms = np.array([np.linalg.norm(subvector(x, g)) for g in groups.groups])
    top = norms.max(initial=0.0)
    if top == 0.0:
        return ()
    return tuple(int(i) for i in np.nonzero(norms > rel_tol * top)[0])
