"""Synthetic spherical-head forward model.

Electrodes live on a sphere, candidate sources strictly inside it, and the
kernel is the analytic infinite-homogeneous-medium dipole potential with an
average-reference convention.  True and inverse source grids are sampled with
independent seeds so reconstructions are never evaluated against the exact
discrete model that generated the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DipoleSource, LeadField
from .errors import CapacityError, SingularityError

__all__ = [
    "HeadGeometry",
    "MeasurementSet",
    "place_electrodes",
    "sample_source_grid",
    "dipole_lead_columns",
    "build_lead_field",
    "simulate_measurement",
    "DEFAULT_SCALP_RADIUS",
    "DEFAULT_SHELL_FRACTION",
    "DEFAULT_CONDUCTIVITY",
]

DEFAULT_SCALP_RADIUS = 90.0  # mm
DEFAULT_SHELL_FRACTION = 0.85
DEFAULT_CONDUCTIVITY = 3.3e-4  # S/mm


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HeadGeometry:
    """Electrode montage on a sphere plus one grid of candidate sources."""

    scalp_radius: float
    conductivity: float
    electrode_positions: np.ndarray
    source_positions: np.ndarray
    min_separation: float = 0.0

    def __post_init__(self):
        elec = _readonly(self.electrode_positions)
        src = _readonly(self.source_positions)
        if elec.ndim != 2 or elec.shape[1] != 3:
            raise ValueError("electrode_positions must be (m, 3)")
        if src.ndim != 2 or src.shape[1] != 3:
            raise ValueError("source_positions must be (p, 3)")
        radii = np.linalg.norm(elec, axis=1)
        if np.any(np.abs(radii - self.scalp_radius) > 1e-9 * self.scalp_radius):
            raise ValueError("every electrode must lie on the scalp sphere")
        src_norm = np.linalg.norm(src, axis=1)
        if np.any(src_norm >= self.scalp_radius):
            raise ValueError("every source position must lie strictly inside the scalp")
        if self.min_separation > 0 and src.shape[0] > 1:
            d = np.linalg.norm(src[:, None, :] - src[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            if d.min() < self.min_separation:
                raise ValueError(
                    f"source positions closer than min_separation={self.min_separation}"
                )
        object.__setattr__(self, "electrode_positions", elec)
        object.__setattr__(self, "source_positions", src)

    @property
    def num_electrodes(self) -> int:
        return self.electrode_positions.shape[0]

    @property
    def num_sources(self) -> int:
        return self.source_positions.shape[0]


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Clean and noise-perturbed channel data for one simulated activation."""

    clean: np.ndarray
    noisy: np.ndarray
    noise_level: float
    noise_seed: int

    def __post_init__(self):
        object.__setattr__(self, "clean", _readonly(self.clean))
        object.__setattr__(self, "noisy", _readonly(self.noisy))

    @property
    def noise_norm(self) -> float:
        """Norm of the realized perturbation (known-noise delta for Morozov)."""
        return float(np.linalg.norm(self.noisy - self.clean))


def place_electrodes(count: int, radius: float = DEFAULT_SCALP_RADIUS) -> np.ndarray:
    """Deterministic Fibonacci spiral lattice of ``count`` points on the sphere."""
    if count < 4:
        raise ValueError(f"electrode count must be >= 4, got {count}")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / count
    rho = np.sqrt(1.0 - z * z)
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden_angle * i
    points = radius * np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
    # Snap norms exactly onto the sphere to make the geometry invariant robust.
    points *= radius / np.linalg.norm(points, axis=1)[:, None]
    return points


def sample_source_grid(
    count: int,
    scalp_radius: float = DEFAULT_SCALP_RADIUS,
    source_shell_fraction: float = DEFAULT_SHELL_FRACTION,
    min_separation: float = 0.0,
    min_electrode_distance: float = 0.0,
    electrode_positions: np.ndarray | None = None,
    seed=None,
    max_attempts: int = 1_000_000,
) -> np.ndarray:
    """Rejection-sample ``count`` uniform points in the source ball.

    Points must keep ``min_separation`` between themselves and, when electrode
    positions are supplied, ``min_electrode_distance`` from every electrode.
    Deterministic given the seed.  Raises :class:`CapacityError` naming the
    dominant constraint when the attempt budget runs out.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if min_separation < 0:
        raise ValueError("min_separation must be >= 0")
    ball_radius = source_shell_fraction * scalp_radius
    rng = np.random.default_rng(seed)
    electrodes = None
    if electrode_positions is not None and min_electrode_distance > 0:
        electrodes = np.asarray(electrode_positions, dtype=np.float64)

    accepted = np.empty((count, 3))
    n_acc = 0
    rejected = {"ball": 0, "separation": 0, "electrode_distance": 0}
    attempts = 0
    while n_acc < count:
        if attempts >= max_attempts:
            worst = max(rejected, key=rejected.get)
            raise CapacityError(
                f"placed {n_acc}/{count} sources in {attempts} attempts; "
                f"constraint '{worst}' dominated rejections {rejected}"
            )
        attempts += 1
        p = rng.uniform(-ball_radius, ball_radius, size=3)
        if p @ p > ball_radius * ball_radius:
            rejected["ball"] += 1
            continue
        if n_acc and min_separation > 0:
            d2 = np.sum((accepted[:n_acc] - p) ** 2, axis=1)
            if d2.min() < min_separation * min_separation:
                rejected["separation"] += 1
                continue
        if electrodes is not None:
            d2 = np.sum((electrodes - p) ** 2, axis=1)
            if d2.min() < min_electrode_distance * min_electrode_distance:
                rejected["electrode_distance"] += 1
                continue
        accepted[n_acc] = p
        n_acc += 1
    return accepted


def dipole_lead_columns(
    electrode_positions: np.ndarray,
    r0: np.ndarray,
    conductivity: float = DEFAULT_CONDUCTIVITY,
) -> np.ndarray:
    """Average-referenced potentials of the three basis dipoles at ``r0``.

    Entry ``(e, c)`` before referencing is the ``c`` component of
    ``(r_e - r0) / (4 pi sigma ||r_e - r0||^3)``, the infinite-medium scalar
    potential of a unit dipole along axis ``c``.  The per-column mean over
    electrodes is subtracted because the underlying potential is only defined
    up to a constant.
    """
    electrodes = np.asarray(electrode_positions, dtype=np.float64)
    r0 = np.asarray(r0, dtype=np.float64)
    diff = electrodes - r0
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < 1e-9):
        raise SingularityError(
            f"source at {r0.tolist()} coincides with an electrode (distance < 1e-9)"
        )
    block = diff / (4.0 * np.pi * conductivity * dist**3)[:, None]
    return block - block.mean(axis=0)


def build_lead_field(geometry: HeadGeometry) -> LeadField:
    """Assemble the lead field of a geometry, position by position."""
    m = geometry.num_electrodes
    p = geometry.num_sources
    entries = np.empty((m, 3 * p))
    for j in range(p):
        entries[:, 3 * j : 3 * j + 3] = dipole_lead_columns(
            geometry.electrode_positions,
            geometry.source_positions[j],
            geometry.conductivity,
        )
    return LeadField(entries=entries)


def simulate_measurement(
    true_lead_field: LeadField,
    sources,
    noise_level: float,
    seed=None,
) -> MeasurementSet:
    """Superpose the planted sources and add seeded Gaussian noise.

    The per-channel noise standard deviation is
    ``noise_level * ||clean|| / sqrt(m)`` so the expected relative
    perturbation equals ``noise_level``.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("at least one source is required")
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    A = true_lead_field.entries
    m = A.shape[0]
    clean = np.zeros(m)
    for s in sources:
        if not isinstance(s, DipoleSource):
            raise TypeError("sources must be DipoleSource instances")
        j = s.group_id
        clean += A[:, 3 * j : 3 * j + 3] @ s.moment
    if noise_level == 0.0:
        noisy = clean.copy()
    else:
        rng = np.random.default_rng(seed)
        sigma = noise_level * np.linalg.norm(clean) / np.sqrt(m)
        noisy = clean + sigma * rng.standard_normal(m)
    seed_int = int(seed) if isinstance(seed, (int, np.integer)) else -1
    return MeasurementSet(
        clean=clean, noisy=noisy, noise_level=noise_level, noise_seed=seed_int
    )


def stacked_index_map(num_positions: int) -> np.ndarray:
    """Permutation from component-major columns to the stacked convention.

    ``perm[i]`` is the stacked-layout index (all x components first, then all
    y, then all z) of component-major column ``i``: component ``c`` of
    position ``j`` sits at ``3j + c`` here and at ``j + c * p`` there.
    """
    j, c = np.divmod(np.arange(3 * num_positions), 3)
    return j + c * num_positions
