"""Compact stencils as stand-alone Helmholtz discretizations.

Solves ``(-Delta - omega^2) u = delta(x - x0)`` with ``x0 = (0.5, 0.5)`` on
the unit square, either with the sparsifying stencil pair ``(alpha, beta)``
or with the quasi-stabilized FEM 9-point stencil, and measures the phase
error against the free-space Green's function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from lssweep.kernel import KernelTable, green2d
from lssweep.problem import ComplexField, GridSpec
from lssweep.sparsify import (
    assemble_f,
    build_boundary_pml_table,
    coef_to_csr,
    compute_interior_stencil,
)

SCHEMES = ("sparsify", "qsfem")
CENTER = (0.5, 0.5)
UNSAFE_PHASE = 0.45


@dataclass(frozen=True)
class QsfemStencil:
    A0: float
    A1: float
    A2: float
    kappa: float

    def matrix(self) -> np.ndarray:
        a0, a1, a2 = self.A0, self.A1, self.A2
        return np.array([[a2, a1, a2], [a1, a0, a1], [a2, a1, a2]])

    @property
    def weights(self) -> np.ndarray:
        """Length-9 weights in the package's offset order."""
        return self.matrix().reshape(-1)


def qsfem_stencil(kappa: float) -> QsfemStencil:
    """Stencil that reproduces plane waves at angles pi/16 and 3 pi/16 exactly.

    With ``A0 = 4`` the two plane-wave conditions are linear in ``A1, A2``;
    Cramer's rule gives the expressions below.
    """
    if not 0 < kappa < math.pi:
        raise ValueError(f"kappa = {kappa} must lie in (0, pi)")
    c1 = math.cos(kappa * math.cos(math.pi / 16))
    s1 = math.cos(kappa * math.sin(math.pi / 16))
    c2 = math.cos(kappa * math.cos(3 * math.pi / 16))
    s2 = math.cos(kappa * math.sin(3 * math.pi / 16))
    den = c2 * s2 * (c1 + s1) - c1 * s1 * (c2 + s2)
    if abs(den) < 1e-14:
        raise ValueError(f"QSFEM denominator vanishes at kappa = {kappa}")
    A1 = 2 * (c1 * s1 - c2 * s2) / den
    A2 = (c2 + s2 - c1 - s1) / den
    return QsfemStencil(4.0, A1, A2, kappa)


def homogeneous_grid(omega: float, ppw: float, b: int = 8, C_pml: float = 10.0,
                     depth_factor: int = 2, strength_factor: float = 2.0) -> GridSpec:
    """Grid for the point-source problem: a deeper, stronger PML than the scattering solver uses.

    The gentler-per-layer ramp keeps boundary reflection below the phase error.
    """
    n = math.ceil(ppw * omega / (2 * math.pi) - 1e-9) - 1
    if n % 2 == 0:
        raise ValueError(f"n = {n} is even; the source at (0.5, 0.5) needs an odd n")
    return GridSpec(omega, n, depth_factor * b, strength_factor * C_pml)


def _center_index(grid: GridSpec) -> int:
    return (grid.n + 1) // 2


def delta_source(grid: GridSpec) -> np.ndarray:
    """Discrete unit point source at the domain center (weight ``1/h^2``) on ``I``."""
    f = np.zeros((grid.n, grid.n))
    c = _center_index(grid) - 1
    f[c, c] = 1 / grid.h**2
    return f


def green_on_interior(grid: GridSpec, center=CENTER) -> np.ndarray:
    """``G(p_i - x0)`` on ``I``; the source point itself gets the cell-averaged value."""
    x = grid.coords()
    d = np.stack(np.meshgrid(x - center[0], x - center[1], indexing="ij"), axis=-1)
    r = np.hypot(d[..., 0], d[..., 1])
    out = np.empty(r.shape, dtype=np.complex128)
    nz = r > 0
    out[nz] = green2d(grid.omega, d[nz])
    if not nz.all():
        out[~nz] = KernelTable(grid.omega, grid.h, 1).center / grid.h**2
    return out


def _direct_solve(grid: GridSpec, weights: np.ndarray, rhs: np.ndarray, C: float | None = None) -> np.ndarray:
    """Interior rows ``weights^* u_mu`` on ``I^h`` plus PML rows; direct sparse LU."""
    pml = build_boundary_pml_table(grid, C)
    coef = np.empty((grid.L, grid.L, 9), dtype=np.complex128)
    coef[:] = np.conj(weights)
    coef[pml.mask] = np.conj(pml.gamma[pml.mask])
    try:
        lu = spla.splu(coef_to_csr(coef).tocsc())
    except RuntimeError as exc:
        raise RuntimeError(f"direct factorization failed: {exc}") from exc
    u = lu.solve(rhs.reshape(-1)).reshape(grid.L, grid.L)
    return grid.restrict(u)


def solve_homogeneous(scheme: str, omega: float, ppw: float, b: int = 8, C_pml: float = 10.0,
                      depth_factor: int = 2, strength_factor: float = 2.0) -> ComplexField:
    """Point-source field on ``I`` computed with ``scheme`` (``"sparsify"`` or ``"qsfem"``)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    grid = homogeneous_grid(omega, ppw, b, C_pml, depth_factor, strength_factor)
    f = delta_source(grid)
    if scheme == "sparsify":
        st = compute_interior_stencil(grid.omega, grid.h, grid.n)
        u = _direct_solve(grid, st.alpha, assemble_f(grid, f, st.beta))
    else:
        q = qsfem_stencil(grid.omega * grid.h)
        u0 = _direct_solve(grid, q.weights, grid.extend(f * grid.h**2))
        u = qsfem_scale(grid, u0) * u0
    return ComplexField(grid.interior, u)


def annulus_mask(grid: GridSpec, inner: float, outer: float, center=CENTER) -> np.ndarray:
    """Points of ``I`` whose distance to ``center`` lies in ``[inner, outer]`` wavelengths."""
    lam = 2 * math.pi / grid.omega
    x = grid.coords()
    r = np.hypot(x[:, None] - center[0], x[None, :] - center[1]) / lam
    return (r >= inner) & (r <= outer)


def qsfem_scale(grid: GridSpec, u0: np.ndarray) -> float:
    """Real factor matching ``u0`` to ``G`` in least squares over 2 to 4 wavelengths out.

    Kept real so the fit cannot absorb a phase error.
    """
    sel = annulus_mask(grid, 2.0, 4.0)
    G = green_on_interior(grid)[sel]
    v = u0[sel]
    return float(np.vdot(v, G).real / np.vdot(v, v).real)


@dataclass
class PhaseErrorReport:
    """Phase error ``delta`` in cycles on ``I`` (NaN on the excluded source block)."""

    delta: np.ndarray
    max_error: float
    relative_error: float
    per_wavelength: float
    waves: float
    median_shift: float
    unsafe: int

    def summary(self) -> dict:
        return {
            "max_abs_phase_error": self.max_error,
            "relative_phase_error": self.relative_error,
            "phase_error_per_wavelength": self.per_wavelength,
            "waves_across_domain": self.waves,
            "median_shift": self.median_shift,
            "unwrap_unsafe_points": self.unsafe,
        }


def phase_error(u, omega: float, center=CENTER, grid: GridSpec | None = None) -> PhaseErrorReport:
    """``delta = arg(u conj(G)) / 2 pi`` after removing the median global phase.

    ``relative_error`` divides by the number of waves across the unit domain;
    ``per_wavelength`` divides by the largest source distance in wavelengths.
    Points with ``|delta| >= 0.45`` are counted as unwrap-unsafe, not fixed.
    """
    data = np.asarray(getattr(u, "data", u))
    n = data.shape[0]
    if grid is None:
        grid = GridSpec(omega, n, 2)
    x = grid.coords()
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    keep = (np.abs(X1 - center[0]) > 1.5 * grid.h) | (np.abs(X2 - center[1]) > 1.5 * grid.h)
    ratio = np.zeros_like(data, dtype=np.complex128)
    G = green2d(omega, np.stack([X1[keep] - center[0], X2[keep] - center[1]], axis=-1))
    ratio[keep] = data[keep] * np.conj(G)
    raw = np.angle(ratio[keep]) / (2 * math.pi)
    shift = float(np.median(raw))
    delta = np.full(data.shape, np.nan)
    delta[keep] = np.angle(ratio[keep] * np.exp(-2j * math.pi * shift)) / (2 * math.pi)
    d = np.abs(delta[keep])
    waves = omega / (2 * math.pi)
    rmax = float(np.hypot(X1[keep] - center[0], X2[keep] - center[1]).max())
    mx = float(d.max())
    return PhaseErrorReport(
        delta=delta,
        max_error=mx,
        relative_error=mx / waves,
        per_wavelength=mx / (rmax * waves),
        waves=waves,
        median_shift=shift,
        unsafe=int(np.count_nonzero(d >= UNSAFE_PHASE)),
    )


def reflection_proxy(omega: float, ppw: float, b: int, C_pml: float, margin: float = 1.0,
                     ref_depth: int = 48, ref_C: float = 20.0) -> float:
    """Boundary reflection of a ``(b, C_pml)`` PML, relative to ``|G|``, within ``margin`` wavelengths of the edge.

    The point-source field of the sparsifying scheme is compared with the same
    scheme closed by a much deeper reference PML.  Both share the interior
    discretization error, so the difference isolates the reflection.
    """
    n = homogeneous_grid(omega, ppw, b, C_pml, 1, 1.0).n
    st = compute_interior_stencil(omega, 1 / (n + 1), n)

    def solve(grid):
        return _direct_solve(grid, st.alpha, assemble_f(grid, delta_source(grid), st.beta))

    grid = GridSpec(omega, n, b, C_pml)
    u = solve(grid)
    u_ref = solve(GridSpec(omega, n, max(b, min(ref_depth, (n - 2) // 2)), ref_C))
    G = green_on_interior(grid)
    lam = 2 * math.pi / omega
    x = grid.coords()
    dist = np.minimum(x, 1 - x)
    sel = np.minimum(dist[:, None], dist[None, :]) <= margin * lam
    return float(np.max(np.abs(u[sel] - u_ref[sel]) / np.abs(G[sel])))
