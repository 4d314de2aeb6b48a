"""Compact-stencil sparse surrogate ``H u = f`` of the Lippmann-Schwinger system.

Stencil weights are stored as length-9 vectors over the 3x3 neighborhood in
row-major offset order ``(-1,-1), (-1,0), ..., (1,1)`` (``d1`` slow).  A row
of ``H`` applies the *conjugate* weights, i.e. it reads ``alpha^* u_mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from lssweep.kernel import KernelTable
from lssweep.problem import GridSpec, PerturbationField

OFFSETS = np.array([(d1, d2) for d1 in (-1, 0, 1) for d2 in (-1, 0, 1)])

_S = 1 / math.sqrt(2)
# N, S, W, E, NW, NE, SW, SE
DIRECTIONS = np.array(
    [(0, 1), (0, -1), (-1, 0), (1, 0), (-_S, _S), (_S, _S), (-_S, -_S), (_S, -_S)],
    dtype=np.float64,
)


class StencilError(RuntimeError):
    pass


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate each stencil so its largest entry is real and positive.

    Near-ties in magnitude resolve to the first index so the choice does not
    flip under rounding noise.
    """
    mag = np.abs(v)
    big = mag >= (1 - 1e-8) * mag.max(axis=-1, keepdims=True)
    k = np.argmax(big, axis=-1)
    pivot = np.take_along_axis(v, k[..., None], axis=-1)
    return v * (np.abs(pivot) / pivot)


# ---------------------------------------------------------------------------
# interior stencils


@dataclass(frozen=True)
class InteriorStencil:
    alpha: np.ndarray
    beta: np.ndarray
    residual: float
    relative_residual: float
    gram_eigenvalues: np.ndarray = field(repr=False)

    def matrix(self, which: str = "alpha") -> np.ndarray:
        return getattr(self, which).reshape(3, 3)


def _complement_windows(kernel: KernelTable, n: int, rows: slice):
    """Rows ``j1`` (in ``rows``) of ``K_{mu, mu^c}`` as a ``(9, r, 2n+1)`` array."""
    kb = kernel.block(n + 1)
    lo, hi = rows.start, rows.stop
    out = np.empty((9, hi - lo, 2 * n + 1), dtype=np.complex128)
    for a, (a1, a2) in enumerate(OFFSETS):
        # k_{a-j} = k_{j-a}; column j sits at kb[j - a + n + 1].
        out[a] = kb[lo + 1 - a1 : hi + 1 - a1, 1 - a2 : 2 * n + 2 - a2]
    # drop the columns j in mu
    c0, c1 = max(n - 1, lo), min(n + 2, hi)
    if c0 < c1:
        out[:, c0 - lo : c1 - lo, n - 1 : n + 2] = 0
    return out


def _stream(kernel, n, chunk, fn):
    side = 2 * n + 1
    for lo in range(0, side, chunk):
        fn(_complement_windows(kernel, n, slice(lo, min(lo + chunk, side))))


def compute_interior_stencil(
    omega: float, h: float, n: int, kernel: KernelTable | None = None, chunk: int = 64
) -> InteriorStencil:
    """Unit stencil ``alpha`` minimizing ``||alpha^* K_{mu, mu^c}||`` and ``beta = K_{mu,mu}^* alpha``.

    ``mu^c`` is the full square ``{-n..n}^2`` minus ``mu``; the 9x9 Gram matrix is
    accumulated in row chunks so memory stays O(n).
    """
    if not omega * h < math.pi:
        raise ValueError(f"omega*h = {omega * h:.3g} must be < pi")
    if kernel is None:
        kernel = KernelTable(omega, h, n + 1)
    gram = np.zeros((9, 9), dtype=np.complex128)

    def acc(win):
        nonlocal gram
        X = win.reshape(9, -1)
        gram += X @ X.conj().T

    _stream(kernel, n, chunk, acc)
    gram = 0.5 * (gram + gram.conj().T)
    lam, vec = np.linalg.eigh(gram)
    if lam[1] - lam[0] <= 1e-14 * abs(lam[-1]):
        raise StencilError("smallest Gram eigenvalue is degenerate; stencil is not unique")
    alpha = _fix_phase(vec[:, 0])

    res2 = 0.0

    def resid(win):
        nonlocal res2
        r = np.tensordot(alpha.conj(), win, axes=(0, 0))
        res2 += float(np.vdot(r, r).real)

    _stream(kernel, n, chunk, resid)
    residual = math.sqrt(res2)

    a = OFFSETS
    Kmm = kernel(a[:, None, 0] - a[None, :, 0], a[:, None, 1] - a[None, :, 1])
    beta = Kmm.conj().T @ alpha
    return InteriorStencil(
        alpha=alpha,
        beta=beta,
        residual=residual,
        relative_residual=residual / math.sqrt(max(lam[-1], 0.0)),
        gram_eigenvalues=lam,
    )


# ---------------------------------------------------------------------------
# PML stencils


@dataclass(frozen=True)
class SigmaProfile:
    """Quadratic damping ramps ``sigma(x)`` left of ``left_end`` and right of ``right_start``."""

    omega: float
    C: float
    left_end: float
    right_start: float
    eta_left: float
    eta_right: float

    @classmethod
    def for_grid(cls, grid: GridSpec, C: float | None = None) -> "SigmaProfile":
        C = grid.C_pml if C is None else C
        return cls(grid.omega, C, -grid.h, 1 + grid.h, grid.eta, grid.eta)

    @classmethod
    def left_ramp(cls, omega: float, C: float, edge: float, eta: float) -> "SigmaProfile":
        return cls(omega, C, edge, math.inf, eta, 0.0)

    @property
    def h(self) -> float:
        return self.eta_left or self.eta_right

    @property
    def bounds(self) -> tuple[float, float]:
        return self.left_end - self.eta_left, self.right_start + self.eta_right

    def sigma(self, x):
        x = np.asarray(x, dtype=np.float64)
        s = np.zeros_like(x)
        scale = self.C / self.omega
        left = x <= self.left_end
        if self.eta_left > 0:
            s = np.where(left, -scale * ((x - self.left_end) / self.eta_left) ** 2, s)
        right = x >= self.right_start
        if self.eta_right > 0 and np.isfinite(self.right_start):
            s = np.where(right, scale * ((x - self.right_start) / self.eta_right) ** 2, s)
        return s

    def stretch(self, x):
        return np.asarray(x, dtype=np.float64) + 1j * self.sigma(x)

    def local(self, x, h: float) -> np.ndarray:
        """Stretched neighbor coordinates ``d h + i sigma(x + d h)``, ``d = -1, 0, 1``.

        The real part is taken relative to ``x``: a real translation only
        rescales plane-wave columns and leaves the stencil unchanged.
        """
        x = np.asarray(x, dtype=np.float64)[..., None]
        d = np.array([-1.0, 0.0, 1.0]) * h
        return d + 1j * self.sigma(x + d)


def stretched_coords(profile: SigmaProfile, p) -> tuple[complex, complex]:
    lo, hi = profile.bounds
    p = np.asarray(p, dtype=np.float64)
    tol = 1e-12 * max(1.0, abs(hi))
    if np.any(p < lo - tol) or np.any(p > hi + tol):
        raise ValueError(f"point {p.tolist()} outside the stretched domain [{lo}, {hi}]")
    z = profile.stretch(p)
    return complex(z[0]), complex(z[1])


def neighborhood_points(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """Combine per-axis 3-point coordinates into ``(..., 9, 2)`` neighborhood points."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    p1 = np.repeat(z1, 3, axis=-1)
    p2 = np.tile(z2, 3)
    p1, p2 = np.broadcast_arrays(p1, p2)
    return np.stack([p1, p2], axis=-1)


def modified_plane_wave_matrix(points, omega_local, R: np.ndarray = DIRECTIONS) -> np.ndarray:
    """Columns ``exp(i omega_local r . x)`` at complex points; shape ``(..., 9, |R|)``."""
    points = np.asarray(points, dtype=np.complex128)
    w = np.asarray(omega_local, dtype=np.float64)[..., None, None]
    phase = points @ R.T.astype(np.complex128)
    return np.exp(1j * w * phase)


def compute_pml_stencil(F: np.ndarray, check: bool = True) -> np.ndarray:
    """Unit 9-vector orthogonal to the 8 plane-wave columns of ``F`` (batched).

    Columns are normalized first; this leaves the orthogonal complement
    unchanged and keeps the factorization well scaled inside strongly damped
    layers.  The last column of a complete Householder QR spans the same line
    as the 9th left singular vector and is several times cheaper to get.
    """
    F = np.asarray(F, dtype=np.complex128)
    Fn = F / np.linalg.norm(F, axis=-2, keepdims=True)
    Q, R = np.linalg.qr(Fn, mode="complete")
    if check:
        r = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
        if np.any(r.min(axis=-1) <= 1e-8 * r.max(axis=-1)):
            raise StencilError("plane-wave matrix is rank deficient (degenerate stretching)")
    gamma = _fix_phase(Q[..., :, -1])
    if check:
        res = np.linalg.norm(np.einsum("...i,...ij->...j", gamma.conj(), Fn), axis=-1)
        if np.any(res > 1e-10):
            raise StencilError(f"annihilation residual {res.max():.2e} exceeds 1e-10")
    return gamma


def annihilation_residual(gamma: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``||gamma^* F||`` with unit-normalized columns of ``F``."""
    Fn = F / np.linalg.norm(F, axis=-2, keepdims=True)
    return np.linalg.norm(np.einsum("...i,...ij->...j", np.conj(gamma), Fn), axis=-1)


def _axis_classes(grid: GridSpec):
    """Map extended-grid axis indices to a canonical left-side index and flip flag."""
    i = np.arange(-grid.b, grid.n + 2 + grid.b)
    flip = i >= grid.n + 2
    t = np.where(flip, grid.n + 1 - i, np.minimum(i, 0))
    return t, flip


def _flip(stencils: np.ndarray, flip1, flip2) -> np.ndarray:
    s = stencils.reshape(stencils.shape[:-1] + (3, 3)).copy()
    f1 = np.broadcast_to(flip1, s.shape[:-2])
    f2 = np.broadcast_to(flip2, s.shape[:-2])
    s[f1] = s[f1][..., ::-1, :]
    s[f2] = s[f2][..., :, ::-1]
    return s.reshape(stencils.shape)


def pml_stencil_at(grid: GridSpec, i1: int, i2: int, omega_local: float | None = None) -> np.ndarray:
    """Direct stencil computation at one extended-grid point (no symmetry reuse)."""
    prof = SigmaProfile.for_grid(grid)
    z1 = prof.local(i1 * grid.h, grid.h)
    z2 = prof.local(i2 * grid.h, grid.h)
    w = grid.omega if omega_local is None else omega_local
    F = modified_plane_wave_matrix(neighborhood_points(z1, z2), w)
    return compute_pml_stencil(F)


@dataclass
class PmlStencilTable:
    """Stencils for the PML frame ``I^{h+eta} minus I^h``.

    ``gamma[a1, a2]`` holds the stencil for extended index ``(a1 - b, a2 - b)``;
    rows inside ``I^h`` are zero.  ``corner`` is the directly computed block.
    """

    grid: GridSpec
    gamma: np.ndarray
    mask: np.ndarray
    corner: np.ndarray

    def stencil(self, i1: int, i2: int) -> np.ndarray:
        b = self.grid.b
        if not self.mask[i1 + b, i2 + b]:
            raise KeyError(f"({i1}, {i2}) is not a PML point")
        return self.gamma[i1 + b, i2 + b]


def _canonical_block(grid: GridSpec, omega_local, prof1: SigmaProfile, t1, prof2, t2):
    h = grid.h
    z1 = prof1.local(np.asarray(t1) * h, h)
    z2 = prof2.local(np.asarray(t2) * h, h)
    Z1 = np.broadcast_to(z1[:, None, :], (len(t1), len(t2), 3))
    Z2 = np.broadcast_to(z2[None, :, :], (len(t1), len(t2), 3))
    pts = neighborhood_points(Z1, Z2)
    w = np.asarray(omega_local, dtype=np.float64)
    if w.ndim:
        w = w[:, None, None]
        pts = pts[None]
    F = modified_plane_wave_matrix(pts, w)
    return compute_pml_stencil(F)


def build_boundary_pml_table(grid: GridSpec, C: float | None = None) -> PmlStencilTable:
    """Compute one corner block directly; fill the frame by translation and reflection."""
    b = grid.b
    prof = SigmaProfile.for_grid(grid, C)
    t = np.arange(-b, 1)
    corner = _canonical_block(grid, grid.omega, prof, t, prof, t)  # (b+1, b+1, 9)

    cls, flip = _axis_classes(grid)
    idx = cls + b
    gamma = corner[idx[:, None], idx[None, :]]
    gamma = _flip(gamma, flip[:, None], flip[None, :])
    L = grid.L
    inner = np.zeros(L, dtype=bool)
    inner[b : b + grid.n + 2] = True
    mask = ~(inner[:, None] & inner[None, :])
    gamma[~mask] = 0
    return PmlStencilTable(grid=grid, gamma=gamma, mask=mask, corner=corner)


class AuxStencilTable:
    """Frequency-sampled stencils for auxiliary (moving) PML layers.

    Local squared frequencies ``omega^2 (1 - m)`` are snapped to ``n`` uniform
    samples over ``[omega^2 (1 - max m), omega^2 (1 - min m)]``.  Stencils are
    computed on first use, keyed by ramp depth, sample and canonical ``x2`` class.
    """

    def __init__(self, grid: GridSpec, m: PerturbationField | np.ndarray | None = None,
                 num_samples: int | None = None, C: float | None = None):
        self.grid = grid
        self.C = grid.C_pml if C is None else C
        if m is None:
            mvals = np.zeros(1)
        else:
            mvals = m.m if isinstance(m, PerturbationField) else np.asarray(m)
        # m vanishes outside I, so 0 always belongs to the sampled range.
        lo = grid.omega**2 * (1 - max(mvals.max(), 0.0))
        hi = grid.omega**2 * (1 - min(mvals.min(), 0.0))
        count = num_samples or grid.n
        if hi - lo <= 1e-14 * grid.omega**2:
            self.samples = np.array([grid.omega**2])
        else:
            self.samples = np.linspace(lo, hi, count)
        # (depth, sample, x2 class) -> (depth, 9); filled on demand
        self._cache: dict[tuple[int, int, int], np.ndarray] = {}
        self._x2 = _axis_classes(grid)
        self._prof2 = SigmaProfile.for_grid(grid, self.C)

    def lookup(self, omega2) -> np.ndarray:
        """Index of the nearest sample; exact ties go to the lower sample."""
        s = self.samples
        w = np.asarray(omega2, dtype=np.float64)
        if s.size == 1:
            return np.zeros(w.shape, dtype=np.intp)
        step = (s[-1] - s[0]) / (s.size - 1)
        x = (w - s[0]) / step
        k = np.ceil(x - 0.5).astype(np.intp)
        return np.clip(k, 0, s.size - 1)

    def ramp(self, depth: int) -> SigmaProfile:
        h = self.grid.h
        return SigmaProfile.left_ramp(self.grid.omega, self.C, (depth - 1) * h, depth * h)

    def _compute(self, depth: int, pairs: np.ndarray) -> np.ndarray:
        """Stencils ``(len(pairs), depth, 9)`` for ``(sample, x2 class)`` pairs."""
        h = self.grid.h
        z1 = self.ramp(depth).local(np.arange(depth) * h, h)
        z2 = self._prof2.local(pairs[:, 1] * h, h)
        shape = (len(pairs), depth, 3)
        pts = neighborhood_points(np.broadcast_to(z1[None], shape), np.broadcast_to(z2[:, None], shape))
        w = np.sqrt(self.samples[pairs[:, 0]])[:, None]
        return compute_pml_stencil(modified_plane_wave_matrix(pts, w))

    def _ensure(self, depth: int, pairs: np.ndarray) -> None:
        missing = [p for p in map(tuple, pairs.tolist()) if (depth,) + p not in self._cache]
        if missing:
            vals = self._compute(depth, np.array(missing))
            for p, v in zip(missing, vals):
                self._cache[(depth,) + p] = v

    def block(self, depth: int, k: int) -> np.ndarray:
        """Stencils ``(depth, b + 1, 9)`` for ramp layers ``0..depth-1`` and canonical ``x2`` classes ``-b..0``."""
        b = self.grid.b
        pairs = np.array([(int(k), t) for t in range(-b, 1)])
        self._ensure(depth, pairs)
        return np.stack([self._cache[(depth,) + tuple(p)] for p in pairs.tolist()], axis=1)

    def stencils(self, depth: int, m_layers: np.ndarray) -> np.ndarray:
        """Stencils for an auxiliary slab of ``depth`` layers with perturbation ``m_layers`` ``(depth, L)``.

        Each point needs only its own (sample, class) pair; inside the global
        ``x2`` PML ``m`` vanishes, so most samples are only ever used with the
        interior class.
        """
        g = self.grid
        ks = self.lookup(g.omega**2 * (1 - m_layers))
        t2, flip2 = self._x2
        key = ks * (g.b + 1) + (t2 + g.b)[None, :]
        uniq, inv = np.unique(key, return_inverse=True)
        pairs = np.stack([uniq // (g.b + 1), uniq % (g.b + 1) - g.b], axis=1)
        self._ensure(depth, pairs)
        table = np.stack([self._cache[(depth,) + tuple(p)] for p in pairs.tolist()])
        out = table[inv.reshape(ks.shape), np.arange(depth)[:, None]]
        return _flip(out, False, flip2[None, :])

    def exact_stencils(self, depth: int, m_layers: np.ndarray) -> np.ndarray:
        """Same as :meth:`stencils` but with the exact local frequency at every point."""
        g = self.grid
        h = g.h
        w = g.omega * np.sqrt(1 - m_layers)
        t2, flip2 = self._x2
        z1 = self.ramp(depth).local(np.arange(depth) * h, h)
        z2 = self._prof2.local(t2 * h, h)
        pts = neighborhood_points(z1[:, None, :], z2[None, :, :])
        out = compute_pml_stencil(modified_plane_wave_matrix(pts, w))
        return _flip(out, False, flip2[None, :])


def build_frequency_samples(grid: GridSpec, m, num_samples: int | None = None) -> AuxStencilTable:
    return AuxStencilTable(grid, m, num_samples)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class SparseSystem:
    """``H`` over the extended grid, rows and columns linearized as ``a1 * L + a2``."""

    grid: GridSpec
    coef: np.ndarray  # (L, L, 9) row weights applied to u_{i+d}
    matrix: sp.csr_matrix

    @property
    def L(self) -> int:
        return self.grid.L

    def block(self, rows: slice, cols: slice) -> sp.csr_matrix:
        """Block between x1-layer ranges ``rows`` and ``cols`` (each a slice of ``a1``)."""
        L = self.L
        r = slice(rows.start * L, rows.stop * L)
        c = slice(cols.start * L, cols.stop * L)
        return self.matrix[r, c]


def coef_to_csr(coef: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix from per-row 3x3 weights; neighbors off the grid are dropped."""
    L1, L2 = coef.shape[:2]
    a1, a2 = np.meshgrid(np.arange(L1), np.arange(L2), indexing="ij")
    rows, cols, vals = [], [], []
    for k, (d1, d2) in enumerate(OFFSETS):
        b1, b2 = a1 + d1, a2 + d2
        ok = (b1 >= 0) & (b1 < L1) & (b2 >= 0) & (b2 < L2)
        rows.append((a1 * L2 + a2)[ok])
        cols.append((b1 * L2 + b2)[ok])
        vals.append(coef[..., k][ok])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    order = np.lexsort((cols, rows))
    n = L1 * L2
    return sp.csr_matrix((vals[order], (rows[order], cols[order])), shape=(n, n))


def shifted(a: np.ndarray, d1: int, d2: int) -> np.ndarray:
    """``out[i] = a[i + d]`` with zeros beyond the edges."""
    out = np.zeros_like(a)
    L1, L2 = a.shape[:2]
    src1 = slice(max(d1, 0), L1 + min(d1, 0))
    dst1 = slice(max(-d1, 0), L1 + min(-d1, 0))
    src2 = slice(max(d2, 0), L2 + min(d2, 0))
    dst2 = slice(max(-d2, 0), L2 + min(-d2, 0))
    out[dst1, dst2] = a[src1, src2]
    return out


def interior_coefficients(grid: GridSpec, m_ext: np.ndarray, st: InteriorStencil) -> np.ndarray:
    w2 = grid.omega**2
    coef = np.empty(m_ext.shape + (9,), dtype=np.complex128)
    for k, (d1, d2) in enumerate(OFFSETS):
        coef[..., k] = np.conj(st.alpha[k]) + w2 * np.conj(st.beta[k]) * shifted(m_ext, d1, d2)
    return coef


def assemble_H(grid: GridSpec, m, interior: InteriorStencil, pml: PmlStencilTable) -> SparseSystem:
    m_ext = m.extended() if isinstance(m, PerturbationField) else grid.extend(np.asarray(m))
    coef = interior_coefficients(grid, m_ext, interior)
    coef[pml.mask] = np.conj(pml.gamma[pml.mask])
    return SparseSystem(grid=grid, coef=coef, matrix=coef_to_csr(coef))


def assemble_f(grid: GridSpec, g, alpha: np.ndarray) -> np.ndarray:
    """``f_i = alpha^* g_{mu_i}`` on ``I^h``, zero in the PML frame; shape ``(L, L)``."""
    g = getattr(g, "data", g)
    g_ext = grid.extend(np.asarray(g, dtype=np.complex128))
    f = np.zeros_like(g_ext)
    for k, (d1, d2) in enumerate(OFFSETS):
        f += np.conj(alpha[k]) * shifted(g_ext, d1, d2)
    b, n = grid.b, grid.n
    keep = np.zeros(grid.L, dtype=bool)
    keep[b : b + n + 2] = True
    f[~(keep[:, None] & keep[None, :])] = 0
    return f
