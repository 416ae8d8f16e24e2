"""Evaluation quantities and the randomized experiment runner.

Turns minimizers into estimated dipoles and scores them against the planted
truth: localization error (DLE, mm), orientation error (DOE, rad), depth
below the scalp sphere, and the grid-limited lower bound on the localization
error.  :func:`run_experiment` drives seeded end-to-end trials over one or
two weighting operators on identical data and aggregates the per-trial rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, fields

import numpy as np

from .core import (
    DipoleSource,
    GroupStructure,
    ProblemInstance,
    active_groups,
    make_dipole_groups,
    subvector,
)
from .forward import (
    DEFAULT_CONDUCTIVITY,
    DEFAULT_SCALP_RADIUS,
    DEFAULT_SHELL_FRACTION,
    HeadGeometry,
    build_lead_field,
    place_electrodes,
    sample_source_grid,
    simulate_measurement,
)
from .solver import SolverConfig, morozov_select_alpha
from .weighting import IDENTITY, TRUNCATED, default_truncation_rank

__all__ = [
    "EstimatedDipole",
    "MatchResult",
    "TrialRow",
    "ExperimentConfig",
    "ExperimentReport",
    "extract_dipoles",
    "dle",
    "doe",
    "match_sources",
    "depth",
    "theoretical_min_dle",
    "summarize_rows",
    "noise_delta",
    "run_experiment",
    "CSV_HEADER",
]

CSV_HEADER = (
    "trial,weighting,source_idx,true_x,true_y,true_z,est_x,est_y,est_z,"
    "dle_mm,doe_rad,true_depth_mm,est_depth_mm,alpha,discrepancy,converged"
)


@dataclass(frozen=True, eq=False)
class EstimatedDipole:
    """One recovered dipole read off a minimizer."""

    position: np.ndarray
    moment: np.ndarray
    amplitude: float
    group_id: int

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("an estimated dipole must have positive amplitude")


def extract_dipoles(
    x: np.ndarray,
    groups: GroupStructure,
    inverse_grid: np.ndarray,
    count: int,
) -> list:
    """Top ``count`` active groups of ``x`` as estimated dipoles.

    Groups are ranked by block norm; fewer dipoles are returned when fewer
    groups are active.  Position ``j`` of the inverse grid corresponds to
    group ``j``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    grid = np.asarray(inverse_grid, dtype=np.float64)
    ids = active_groups(x, groups)
    if not ids:
        return []
    ranked = sorted(
        ids,
        key=lambda gi: (-float(np.linalg.norm(subvector(x, groups.groups[gi]))), gi),
    )
    out = []
    for gi in ranked[:count]:
        moment = np.array(subvector(x, groups.groups[gi]))
        out.append(
            EstimatedDipole(
                position=grid[gi],
                moment=moment,
                amplitude=float(np.linalg.norm(moment)),
                group_id=gi,
            )
        )
    return out


def dle(true_position, estimated_position) -> float:
    """Euclidean distance between true and estimated positions (mm)."""
    a = np.asarray(true_position, dtype=np.float64)
    b = np.asarray(estimated_position, dtype=np.float64)
    return float(np.linalg.norm(a - b))


def doe(true_moment, estimated_moment) -> float:
    """Angle between moment vectors in radians, in ``[0, pi]``."""
    a = np.asarray(true_moment, dtype=np.float64)
    b = np.asarray(estimated_moment, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("orientation error is undefined for zero moments")
    return float(np.arccos(np.clip((a @ b) / (na * nb), -1.0, 1.0)))


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (true_idx, est_idx)
    unmatched_true: tuple
    unmatched_estimated: tuple


def match_sources(true_positions, estimated_positions) -> MatchResult:
    """Assignment between small source lists minimizing total distance.

    Exhaustive over permutations; both lists are limited to four entries.
    Entries left over on the longer side are reported unmatched.
    """
    true_positions = [np.asarray(p, dtype=np.float64) for p in true_positions]
    est_positions = [np.asarray(p, dtype=np.float64) for p in estimated_positions]
    nt, ne = len(true_positions), len(est_positions)
    if nt > 4 or ne > 4:
        raise ValueError("match_sources handles at most four sources per side")
    if nt == 0 or ne == 0:
        return MatchResult((), tuple(range(nt)), tuple(range(ne)))
    k = min(nt, ne)
    best_pairs, best_cost = None, math.inf
    if ne >= nt:
        for perm in itertools.permutations(range(ne), k):
            cost = sum(dle(true_positions[i], est_positions[perm[i]]) for i in range(k))
            if cost < best_cost:
                best_cost, best_pairs = cost, tuple((i, perm[i]) for i in range(k))
    else:
        for perm in itertools.permutations(range(nt), k):
            cost = sum(dle(true_positions[perm[j]], est_positions[j]) for j in range(k))
            if cost < best_cost:
                best_cost, best_pairs = cost, tuple((perm[j], j) for j in range(k))
    matched_t = {t for t, _ in best_pairs}
    matched_e = {e for _, e in best_pairs}
    return MatchResult(
        pairs=tuple(sorted(best_pairs)),
        unmatched_true=tuple(i for i in range(nt) if i not in matched_t),
        unmatched_estimated=tuple(j for j in range(ne) if j not in matched_e),
    )


def depth(position, geometry) -> float:
    """Distance from a position to the scalp sphere (mm)."""
    radius = geometry.scalp_radius if isinstance(geometry, HeadGeometry) else float(geometry)
    r = float(np.linalg.norm(np.asarray(position, dtype=np.float64)))
    if r > radius * (1 + 1e-12):
        raise ValueError("position lies outside the scalp sphere")
    return radius - min(r, radius)


def theoretical_min_dle(true_position, inverse_grid) -> float:
    """Distance from the true position to the nearest inverse-grid point."""
    grid = np.asarray(inverse_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] == 0:
        raise ValueError("inverse grid must be a non-empty (p, 3) array")
    p = np.asarray(true_position, dtype=np.float64)
    return float(np.min(np.linalg.norm(grid - p, axis=1)))


@dataclass(frozen=True)
class TrialRow:
    """One (trial, weighting, source) record of an experiment."""

    trial: int
    weighting: str
    source_idx: int
    true_x: float
    true_y: float
    true_z: float
    est_x: float
    est_y: float
    est_z: float
    dle_mm: float
    doe_rad: float
    true_depth_mm: float
    est_depth_mm: float
    alpha: float
    discrepancy: float
    converged: bool
    theoretical_min_dle_mm: float = float("nan")
    bracketed: bool = False
    iterations: int = 0
    error: str = ""

    def csv_line(self) -> str:
        cells = [
            str(self.trial),
            self.weighting,
            str(self.source_idx),
            repr(self.true_x),
            repr(self.true_y),
            repr(self.true_z),
            repr(self.est_x),
            repr(self.est_y),
            repr(self.est_z),
            repr(self.dle_mm),
            repr(self.doe_rad),
            repr(self.true_depth_mm),
            repr(self.est_depth_mm),
            repr(self.alpha),
            repr(self.discrepancy),
            str(self.converged),
        ]
        return ",".join(cells)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Knobs of one randomized experiment (desk-scale defaults)."""

    trials: int = 50
    sources_per_trial: int = 1
    electrode_count: int = 64
    scalp_radius: float = DEFAULT_SCALP_RADIUS
    conductivity: float = DEFAULT_CONDUCTIVITY
    source_shell_fraction: float = DEFAULT_SHELL_FRACTION
    true_grid_size: int = 600
    inverse_grid_size: int = 600
    min_separation: float = 2.0
    min_electrode_distance: float = 15.0
    noise_level: float = 0.01
    weightings: tuple = ((IDENTITY, None), (TRUNCATED, None))
    tau: float = 1.05
    delta_mode: str = "known_noise"  # or "estimated"
    delta_floor_rel: float = 1e-8
    discrepancy_space: str = "transformed"
    max_bisections: int = 40
    solver: SolverConfig = SolverConfig()
    moment_scale: float = 1.0
    sources_on_inverse_grid: bool = False

    def __post_init__(self):
        if self.trials < 1 or self.sources_per_trial < 1:
            raise ValueError("trials and sources_per_trial must be >= 1")
        if self.sources_per_trial > 4:
            raise ValueError("at most four sources per trial are supported")
        if self.delta_mode not in ("known_noise", "estimated"):
            raise ValueError(f"unknown delta_mode {self.delta_mode!r}")
        for kind, _ in self.weightings:
            if kind not in (IDENTITY, TRUNCATED):
                raise ValueError(f"unknown weighting kind {kind!r}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "solver"}
        d["weightings"] = [list(w) for w in self.weightings]
        d["solver"] = {
            f.name: getattr(self.solver, f.name) for f in fields(self.solver)
        }
        return d


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Config echo, per-trial rows, and summary statistics."""

    config: dict
    master_seed: int
    rows: tuple
    summary: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "master_seed": self.master_seed,
            "summary": self.summary,
            "rows": [r.to_dict() for r in self.rows],
        }

    def csv_lines(self):
        yield CSV_HEADER
        for row in self.rows:
            yield row.csv_line()


def summarize_rows(rows) -> dict:
    """Aggregate statistics per weighting kind, recomputable from the rows."""
    out = {}
    kinds = sorted({r.weighting for r in rows})
    for kind in kinds:
        sub = [r for r in rows if r.weighting == kind]
        ok = [r for r in sub if not r.error and math.isfinite(r.dle_mm)]
        dles = np.array([r.dle_mm for r in ok])
        does = np.array([r.doe_rad for r in ok if math.isfinite(r.doe_rad)])
        mins = np.array([r.theoretical_min_dle_mm for r in ok])
        out[kind] = {
            "rows": len(sub),
            "scored": len(ok),
            "failed": len([r for r in sub if r.error]),
            "mean_dle_mm": float(np.mean(dles)) if dles.size else float("nan"),
            "median_dle_mm": float(np.median(dles)) if dles.size else float("nan"),
            "mean_doe_rad": float(np.mean(does)) if does.size else float("nan"),
            "mean_theoretical_min_dle_mm": float(np.mean(mins)) if mins.size else float("nan"),
            "converged": len([r for r in sub if r.converged]),
            "bracketed": len([r for r in sub if r.bracketed]),
        }
    return out


def _solving_operator(kind, k, lead_field):
    """Data-space map actually used when solving (rows of the composed matrix).

    For the identity kind this is the identity.  For the truncated kind the
    runner solves with ``B' = S_k^{-1} U_k^T`` instead of the full
    ``V_k S_k^{-1} U_k^T``: the two matrices differ by the orthonormal factor
    ``V_k`` on the left, so the composed objective is the same function of
    ``x`` while every residual vector lives in ``k`` dimensions instead of
    ``n``.  Returns ``(B_matrix, k_used)``.
    """
    m, n = lead_field.entries.shape
    if kind == IDENTITY:
        return np.eye(m), None
    k = k if k else default_truncation_rank(m, n)
    u, s, _ = np.linalg.svd(lead_field.entries, full_matrices=False)
    if s[k - 1] <= 1e-12 * s[0]:
        raise ValueError(f"truncation rank {k} exceeds the numerical rank")
    return u[:, :k].T / s[:k, None], k


def noise_delta(
    space: str,
    delta_mode: str,
    noise_level: float,
    B_matrix: np.ndarray,
    noisy: np.ndarray,
    clean: np.ndarray | None = None,
    floor_rel: float = 1e-8,
) -> float:
    """Noise-norm estimate in the requested discrepancy space.

    Known-noise mode uses the realized perturbation exactly (mapped through
    the weighting in the transformed space); estimated mode scales the data
    norm by the noise level (times ``||B||_F / sqrt(m)`` in the transformed
    space, the expected amplification of white noise).  A relative floor
    keeps the principle meaningful on noiseless data.
    """
    if delta_mode == "known_noise" and clean is None:
        raise ValueError("known-noise delta needs the clean measurement")
    m = noisy.shape[0]
    if space == "transformed":
        if delta_mode == "known_noise":
            delta = float(np.linalg.norm(B_matrix @ (noisy - clean)))
        else:
            amp = float(np.linalg.norm(B_matrix, "fro")) / math.sqrt(m)
            delta = noise_level * float(np.linalg.norm(noisy)) * amp
        floor = floor_rel * float(np.linalg.norm(B_matrix @ noisy))
    else:
        if delta_mode == "known_noise":
            delta = float(np.linalg.norm(noisy - clean))
        else:
            delta = noise_level * float(np.linalg.norm(noisy))
        floor = floor_rel * float(np.linalg.norm(noisy))
    return max(delta, floor)


def run_experiment(config: ExperimentConfig, master_seed: int = 0) -> ExperimentReport:
    """Seeded end-to-end trials over the configured weighting operators.

    Per trial: plant sources on the true grid (or on the inverse grid when
    ``sources_on_inverse_grid`` is set), simulate noisy data once, then for
    every weighting operator select alpha by the discrepancy principle, solve,
    extract and match dipoles, and record one row per planted source.  Rows
    come out sorted by (trial, weighting, source); trial-level failures are
    recorded in the row rather than raised.
    """
    ss = np.random.SeedSequence(master_seed)
    grid_true_ss, grid_inv_ss, *trial_ss = ss.spawn(2 + config.trials)

    electrodes = place_electrodes(config.electrode_count, config.scalp_radius)
    inverse_grid = sample_source_grid(
        config.inverse_grid_size,
        config.scalp_radius,
        config.source_shell_fraction,
        config.min_separation,
        0.0,
        None,
        seed=grid_inv_ss,
    )
    true_grid = sample_source_grid(
        config.true_grid_size,
        config.scalp_radius,
        config.source_shell_fraction,
        config.min_separation,
        config.min_electrode_distance,
        electrodes,
        seed=grid_true_ss,
    )
    # inverse-crime guard: the data-generating grid must share no position
    # with the reconstruction grid
    cross = np.linalg.norm(true_grid[:, None, :] - inverse_grid[None, :, :], axis=-1)
    if cross.min() <= 0.0:
        raise RuntimeError("true and inverse grids share a position")

    geo_inv = HeadGeometry(
        config.scalp_radius, config.conductivity, electrodes, inverse_grid,
        config.min_separation,
    )
    geo_true = HeadGeometry(
        config.scalp_radius, config.conductivity, electrodes, true_grid,
        config.min_separation,
    )
    field_inv = build_lead_field(geo_inv)
    field_true = build_lead_field(geo_true)
    groups = make_dipole_groups(config.inverse_grid_size)

    operators = []
    placeholder = np.zeros(config.electrode_count)
    for kind, k in config.weightings:
        B_matrix, k_used = _solving_operator(kind, k, field_inv)
        base = ProblemInstance.from_matrix(
            B_matrix @ field_inv.entries,
            B_matrix @ placeholder,
            groups,
            A=field_inv.entries,
            b=placeholder,
            weighting_kind=kind,
            weighting_k=k_used,
        )
        operators.append((kind, B_matrix, base))

    sample_grid = inverse_grid if config.sources_on_inverse_grid else true_grid
    sample_field = field_inv if config.sources_on_inverse_grid else field_true
    sample_size = sample_grid.shape[0]

    rows = []
    for t in range(config.trials):
        rng = np.random.default_rng(trial_ss[t])
        pos_idx = rng.choice(sample_size, size=config.sources_per_trial, replace=False)
        moments = rng.standard_normal((config.sources_per_trial, 3))
        moments *= config.moment_scale / np.linalg.norm(moments, axis=1)[:, None]
        sources = [
            DipoleSource(position=sample_grid[j], moment=moments[i], group_id=int(j))
            for i, j in enumerate(pos_idx)
        ]
        meas = simulate_measurement(sample_field, sources, config.noise_level, seed=rng)
        true_positions = [s.position for s in sources]
        true_depths = [depth(p, geo_inv) for p in true_positions]
        floor_dles = [theoretical_min_dle(p, inverse_grid) for p in true_positions]

        for kind, B_matrix, base in operators:
            try:
                problem = base.with_rhs(B_matrix @ meas.noisy, b=meas.noisy)
                delta = noise_delta(
                    config.discrepancy_space,
                    config.delta_mode,
                    config.noise_level,
                    B_matrix,
                    meas.noisy,
                    meas.clean,
                    config.delta_floor_rel,
                )
                selection = morozov_select_alpha(
                    problem,
                    delta=delta,
                    tau=config.tau,
                    config=config.solver,
                    space=config.discrepancy_space,
                    max_bisections=config.max_bisections,
                )
                result = selection.result
                estimates = extract_dipoles(
                    result.x, groups, inverse_grid, config.sources_per_trial
                )
                match = match_sources(
                    true_positions, [e.position for e in estimates]
                )
                est_of = dict(match.pairs)
                for s_idx, src in enumerate(sources):
                    est = estimates[est_of[s_idx]] if s_idx in est_of else None
                    rows.append(
                        TrialRow(
                            trial=t,
                            weighting=kind,
                            source_idx=s_idx,
                            true_x=float(src.position[0]),
                            true_y=float(src.position[1]),
                            true_z=float(src.position[2]),
                            est_x=float(est.position[0]) if est else float("nan"),
                            est_y=float(est.position[1]) if est else float("nan"),
                            est_z=float(est.position[2]) if est else float("nan"),
                            dle_mm=dle(src.position, est.position) if est else float("nan"),
                            doe_rad=doe(src.moment, est.moment) if est else float("nan"),
                            true_depth_mm=true_depths[s_idx],
                            est_depth_mm=depth(est.position, geo_inv) if est else float("nan"),
                            alpha=selection.alpha,
                            discrepancy=(
                                result.discrepancy_original
                                if result.discrepancy_original is not None
                                else result.discrepancy_transformed
                            ),
                            converged=result.converged,
                            theoretical_min_dle_mm=floor_dles[s_idx],
                            bracketed=selection.bracketed,
                            iterations=result.iterations,
                        )
                    )
            except Exception as exc:  # record, do not abort the batch
                for s_idx, src in enumerate(sources):
                    rows.append(
                        TrialRow(
                            trial=t,
                            weighting=kind,
                            source_idx=s_idx,
                            true_x=float(src.position[0]),
                            true_y=float(src.position[1]),
                            true_z=float(src.position[2]),
                            est_x=float("nan"),
                            est_y=float("nan"),
                            est_z=float("nan"),
                            dle_mm=float("nan"),
                            doe_rad=float("nan"),
                            true_depth_mm=true_depths[s_idx],
                            est_depth_mm=float("nan"),
                            alpha=float("nan"),
                            discrepancy=float("nan"),
                            converged=False,
                            theoretical_min_dle_mm=floor_dles[s_idx],
                            bracketed=False,
                            iterations=0,
                            error=f"{type(exc).__name__}: {exc}",
                        )
                    )

    rows.sort(key=lambda r: (r.trial, r.weighting, r.source_idx))
    return ExperimentReport(
        config=config.to_dict(),
        master_seed=int(master_seed),
        rows=tuple(rows),
        summary=summarize_rows(rows),
    )
