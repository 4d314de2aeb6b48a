"""Grid geometry, index sets, velocity models and incoming waves.

Array convention used throughout the package: a field on the interior set
``I`` is an ``(n, n)`` array indexed ``[i1 - 1, i2 - 1]``; a field on the
extended set ``I^{h+eta}`` is an ``(L, L)`` array with ``L = n + 2 + 2b``
indexed ``[i1 + b, i2 + b]``.  Axis 0 is ``x1`` (the sweep direction).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

TRUNCATION = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the unit square plus its PML frame."""

    omega: float
    n: int
    b: int
    C_pml: float = 10.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.b < 2:
            raise ValueError(f"PML needs at least 2 layers, got b={self.b}")
        if self.n < 2 * self.b + 2:
            raise ValueError(
                f"n={self.n} too small for b={self.b}: need n >= 2b+2 = {2 * self.b + 2}"
            )
        if self.C_pml < 0:
            raise ValueError("C_pml must be non-negative")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def eta(self) -> float:
        return self.b * self.h

    @property
    def L(self) -> int:
        """Points per side of the extended grid ``I^{h+eta}``."""
        return self.n + 2 + 2 * self.b

    @property
    def N(self) -> int:
        return self.n * self.n

    @property
    def interior(self) -> "IndexSet":
        return IndexSet("I", 1, self.n)

    @property
    def padded(self) -> "IndexSet":
        return IndexSet("I_h", 0, self.n + 1)

    @property
    def extended(self) -> "IndexSet":
        return IndexSet("I_h_eta", -self.b, self.n + 1 + self.b)

    @property
    def ring(self) -> "IndexSet":
        return IndexSet("boundary_ring", -self.b - 1, self.n + 2 + self.b)

    def coords(self, index_set: "IndexSet | None" = None) -> np.ndarray:
        """1D grid coordinates ``i * h`` along either axis of ``index_set``."""
        s = index_set or self.interior
        return np.arange(s.lo, s.hi + 1) * self.h

    def interior_slice(self) -> tuple[slice, slice]:
        """Slices selecting ``I`` inside an extended ``(L, L)`` array."""
        s = slice(self.b + 1, self.b + 1 + self.n)
        return s, s

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Zero-pad an ``(n, n)`` interior array to the extended grid."""
        out = np.zeros((self.L, self.L), dtype=np.result_type(values, np.float64))
        out[self.interior_slice()] = values
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return values[self.interior_slice()]


def make_grid(omega: float, ppw: float = 8, b: int = 8, C_pml: float = 10.0) -> GridSpec:
    """Smallest grid with ``h = 1/(n+1)`` at most one ``ppw``-th of a wavelength."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    if ppw < 3:
        raise ValueError(f"need at least 3 points per wavelength, got {ppw}")
    points = ppw * omega / (2 * math.pi)
    n = max(int(math.ceil(points - 1e-9)) - 1, 1)
    if n < 2 * b + 2:
        raise ValueError(
            f"domain too small for slicing: n={n} < 2b+2={2 * b + 2}; "
            "raise omega or ppw, or lower b"
        )
    return GridSpec(omega=float(omega), n=n, b=b, C_pml=float(C_pml))


@dataclass(frozen=True)
class IndexSet:
    """Square index set ``{i : lo <= i1, i2 <= hi}``.

    For ``kind == "boundary_ring"`` the bounds describe the outer square and the
    set is its one-point-thick perimeter.
    """

    kind: str
    lo: int
    hi: int

    KINDS = ("I", "I_h", "I_h_eta", "boundary_ring")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown index set kind {self.kind!r}")
        if self.hi < self.lo:
            raise ValueError("empty index set")

    @property
    def side(self) -> int:
        return self.hi - self.lo + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.side, self.side)

    def __len__(self) -> int:
        if self.kind == "boundary_ring":
            return self.side**2 - (self.side - 2) ** 2
        return self.side**2

    def __contains__(self, idx) -> bool:
        i1, i2 = idx
        inside = self.lo <= i1 <= self.hi and self.lo <= i2 <= self.hi
        if self.kind != "boundary_ring":
            return inside
        return inside and (i1 in (self.lo, self.hi) or i2 in (self.lo, self.hi))

    def to_json(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ComplexField:
    """Complex samples over a square index set, stored row-major (``x1`` slow)."""

    index_set: IndexSet
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.complex128)
        if self.index_set.kind == "boundary_ring":
            raise ValueError("fields live on square index sets")
        if data.shape != self.index_set.shape:
            raise ValueError(
                f"data shape {data.shape} does not match {self.index_set.kind} "
                f"shape {self.index_set.shape}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return self.data.size


MIN_VELOCITY = 0.25
M_MIN = 1.0 - 1.0 / MIN_VELOCITY**2


@dataclass(frozen=True)
class PerturbationField:
    """``m = 1 - 1/c^2`` sampled on ``I``; zero everywhere else by construction."""

    grid: GridSpec
    m: np.ndarray
    velocity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"m must have shape {(self.grid.n, self.grid.n)}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("m has non-finite entries")
        # m < 1 is a real positive velocity; the lower bound keeps c = O(1)
        if m.size and np.max(m) >= 1:
            raise ValueError(f"max m = {np.max(m):.3g} must be < 1 (velocity must be real and positive)")
        if m.size and np.min(m) < M_MIN:
            raise ValueError(f"min m = {np.min(m):.3g} is below {M_MIN} (velocity under {MIN_VELOCITY})")
        m[np.abs(m) < TRUNCATION] = 0.0
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def zero(cls, grid: GridSpec) -> "PerturbationField":
        return cls(grid, np.zeros((grid.n, grid.n)))

    @classmethod
    def from_velocity(cls, grid: GridSpec, c: np.ndarray) -> "PerturbationField":
        c = np.asarray(c, dtype=np.float64)
        if np.any(c <= 0):
            raise ValueError(f"velocity must be positive, min c = {c.min():.3g}")
        return cls(grid, 1.0 - 1.0 / c**2, velocity=c)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.m)

    def extended(self) -> np.ndarray:
        return self.grid.extend(self.m)


def _interior_mesh(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    x = grid.coords()
    return np.meshgrid(x, x, indexing="ij")


def gaussian_velocity(
    grid: GridSpec,
    centers: Sequence[Sequence[float]],
    amplitudes: Sequence[float],
    widths: Sequence[float],
) -> PerturbationField:
    """Sum-of-Gaussians velocity ``c = 1 + sum_k a_k exp(-|x - c_k|^2 / (2 w_k^2))``.

    Negative amplitudes slow the medium down (converging lens).
    """
    if not (len(centers) == len(amplitudes) == len(widths)):
        raise ValueError("centers, amplitudes and widths must have equal length")
    x1, x2 = _interior_mesh(grid)
    c = np.ones_like(x1)
    for (c1, c2), a, w in zip(centers, amplitudes, widths):
        if w <= 0:
            raise ValueError("Gaussian widths must be positive")
        c += a * np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * w * w))
        edge = min(c1, 1 - c1, c2, 1 - c2)
        tail = abs(a) * math.exp(-edge * edge / (2 * w * w)) if edge > 0 else abs(a)
        if tail > 1e-8:
            logger.warning("Gaussian at (%.3g, %.3g) is %.2e at the boundary", c1, c2, tail)
    if c.size and c.min() <= 0:
        raise ValueError(f"velocity must stay positive, min c = {c.min():.3g}")
    return PerturbationField.from_velocity(grid, c)


def _edge_taper(t: np.ndarray, band: float = 0.1) -> np.ndarray:
    """C1 window: 0 on the boundary, 1 on ``[band, 1 - band]``."""
    d = np.clip(np.minimum(t, 1 - t) / band, 0.0, 1.0)
    return np.sin(0.5 * np.pi * d) ** 2


def _smooth_noise(seed: int, correlation_length: float, x1: np.ndarray, x2: np.ndarray):
    """Gaussian-filtered white noise on the periodic unit square.

    Built in Fourier space so the continuum field does not depend on the
    sampling grid; PCG64 (numpy ``default_rng``) drives the coefficients.
    """
    kmax = max(1, int(math.ceil(6.0 / (2 * math.pi * correlation_length))))
    k = np.arange(-kmax, kmax + 1)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((k.size, k.size)) + 1j * rng.standard_normal((k.size, k.size))
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    coef *= np.exp(-0.5 * (2 * math.pi * correlation_length) ** 2 * (k1**2 + k2**2))

    def evaluate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        e1 = np.exp(2j * np.pi * np.outer(a, k))
        e2 = np.exp(2j * np.pi * np.outer(b, k))
        return (e1 @ coef @ e2.T).real

    ref = np.linspace(0.0, 1.0, 257)
    scale = np.max(np.abs(evaluate(ref, ref)))
    return evaluate(x1, x2) / scale


def random_velocity(
    grid: GridSpec, seed: int, contrast: float, correlation_length: float
) -> PerturbationField:
    """Smooth random velocity equal to 1 on the boundary of the unit square.

    ``c = 1 + contrast * taper(x) * noise(x)`` with ``max |noise| = 1`` on a
    fixed reference lattice, so the field is identical across resolutions.
    """
    if correlation_length <= 0:
        raise ValueError("correlation_length must be positive")
    if contrast == 0:
        return PerturbationField.zero(grid)
    x = grid.coords()
    noise = _smooth_noise(seed, correlation_length, x, x)
    taper = np.outer(_edge_taper(x), _edge_taper(x))
    c = 1.0 + contrast * taper * noise
    if c.min() <= 0:
        raise ValueError(f"contrast {contrast} makes the velocity non-positive")
    return PerturbationField.from_velocity(grid, c)


def random_centers(seed: int, count: int, margin: float = 0.15) -> list[tuple[float, float]]:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(margin, 1 - margin, size=(count, 2))
    return [tuple(p) for p in pts.tolist()]


# Velocity families used in the scattering experiments. The exact fields are
# not published; these are calibrated stand-ins with the described character.
FIELD_PRESETS: dict[str, dict] = {
    "i": {"kind": "gaussian", "centers": [[0.5, 0.5]], "amplitudes": [-0.25], "widths": [0.1]},
    "ii": {"kind": "gaussian", "centers": [[0.5, 0.5]], "amplitudes": [0.25], "widths": [0.1]},
    "iii": {"kind": "random_gaussians", "count": 32, "seed": 1, "amplitudes": [-0.3], "widths": [0.02]},
    "iv": {"kind": "random", "seed": 7, "contrast": 0.5, "correlation_length": 0.05},
}

VELOCITY_KEYS = {
    "kind", "preset", "centers", "amplitudes", "widths", "seed", "contrast",
    "correlation_length", "count",
}


def velocity_from_config(grid: GridSpec, spec: dict | str | None) -> PerturbationField:
    """Build a perturbation field from a JSON-style description or preset name."""
    if spec is None:
        return PerturbationField.zero(grid)
    if isinstance(spec, str):
        spec = {"preset": spec}
    unknown = set(spec) - VELOCITY_KEYS
    if unknown:
        raise ValueError(f"unknown velocity keys: {sorted(unknown)}")
    if "preset" in spec:
        name = spec["preset"]
        if name not in FIELD_PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(FIELD_PRESETS)}")
        merged = dict(FIELD_PRESETS[name])
        merged.update({k: v for k, v in spec.items() if k != "preset"})
        spec = merged
    kind = spec.get("kind", "homogeneous")
    if kind == "homogeneous":
        return PerturbationField.zero(grid)
    if kind == "gaussian":
        return gaussian_velocity(grid, spec["centers"], spec["amplitudes"], spec["widths"])
    if kind == "random_gaussians":
        count = int(spec.get("count", 32))
        centers = spec.get("centers") or random_centers(int(spec.get("seed", 0)), count)
        amps = list(spec.get("amplitudes", [-0.3]))
        widths = list(spec.get("widths", [0.02]))
        amps = amps * len(centers) if len(amps) == 1 else amps
        widths = widths * len(centers) if len(widths) == 1 else widths
        return gaussian_velocity(grid, centers, amps, widths)
    if kind == "random":
        return random_velocity(
            grid,
            seed=int(spec.get("seed", 0)),
            contrast=float(spec.get("contrast", 0.5)),
            correlation_length=float(spec.get("correlation_length", 0.05)),
        )
    raise ValueError(f"unknown velocity kind {kind!r}")


def plane_wave(grid: GridSpec, direction: Sequence[float] = (0.0, -1.0)) -> ComplexField:
    """``exp(i omega r . p)`` on ``I``; the default direction points downward."""
    r = np.asarray(direction, dtype=np.float64)
    if r.shape != (2,) or abs(np.hypot(*r) - 1) > 1e-12:
        raise ValueError("direction must be a unit 2-vector")
    x = grid.coords()
    phase1 = np.exp(1j * grid.omega * r[0] * x)
    phase2 = np.exp(1j * grid.omega * r[1] * x)
    return ComplexField(grid.interior, np.outer(phase1, phase2))
