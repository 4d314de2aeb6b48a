"""Free-space Green's function and the FFT-applied operator ``I + omega^2 K M``."""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np
import scipy.fft
from scipy import special

from lssweep.problem import ComplexField, GridSpec, PerturbationField


def green2d(omega: float, x) -> complex | np.ndarray:
    """``(i/4) H0^(1)(omega |x|)`` for a point (or trailing-axis array of points) ``x``."""
    x = np.asarray(x, dtype=np.float64)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise ValueError("Green's function is singular at x = 0")
    val = 0.25j * special.hankel1(0, omega * r)
    return complex(val) if val.ndim == 0 else val


def _radial_cell_integral(omega: float, R: np.ndarray) -> np.ndarray:
    # int_0^R G(r) r dr, from d/dz[z H1(z)] = z H0(z) and z Y1(z) -> -2/pi.
    return 0.25j * (R * special.hankel1(1, omega * R) / omega + 2j / (math.pi * omega**2))


def central_weight(omega: float, h: float, order: int = 32) -> complex:
    """Integral of ``G`` over the grid cell ``[-h/2, h/2]^2``.

    G is radial, so in polar coordinates the radial integral has a closed form
    and only the smooth angular integral over one octant needs quadrature.
    """
    if not omega * h < math.pi:
        raise ValueError(f"omega*h = {omega * h:.3g} must be < pi")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    theta = (nodes + 1) * (math.pi / 8)
    R = 0.5 * h / np.cos(theta)
    return complex(8 * (math.pi / 8) * np.sum(weights * _radial_cell_integral(omega, R)))


def next_fast_size(n: int) -> int:
    """Smallest integer >= n whose prime factors are all <= 7."""
    m = max(int(n), 1)
    while True:
        k = m
        for p in (2, 3, 5, 7):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 1


class KernelTable:
    """Nystrom weights ``k_d = G(d h) h^2`` for ``|d1|, |d2| <= extent``.

    Weights are evaluated once per distinct ``d1^2 + d2^2`` so the table is
    exactly even and octant-symmetric.
    """

    def __init__(self, omega: float, h: float, extent: int):
        if extent < 1:
            raise ValueError("extent must be >= 1")
        self.omega = float(omega)
        self.h = float(h)
        self.extent = int(extent)
        d = np.arange(extent + 1)
        r2 = d[:, None] ** 2 + d[None, :] ** 2
        uniq, inv = np.unique(r2[r2 > 0], return_inverse=True)
        vals = 0.25j * special.hankel1(0, self.omega * self.h * np.sqrt(uniq)) * self.h**2
        quad = np.empty(r2.shape, dtype=np.complex128)
        quad[r2 > 0] = vals[inv]
        quad[0, 0] = central_weight(self.omega, self.h)
        self.quadrant = quad

    @classmethod
    def for_grid(cls, grid: GridSpec) -> "KernelTable":
        # n + 1 covers both the convolution (n - 1) and the stencil fit (n + 1).
        return cls(grid.omega, grid.h, grid.n + 1)

    @property
    def center(self) -> complex:
        return complex(self.quadrant[0, 0])

    def __call__(self, d1, d2):
        return self.quadrant[np.abs(d1), np.abs(d2)]

    def block(self, extent: int) -> np.ndarray:
        """``k_d`` for ``d`` in ``[-extent, extent]^2``, indexed ``[d1 + extent, d2 + extent]``."""
        if extent > self.extent:
            raise ValueError(f"table extent {self.extent} < requested {extent}")
        d = np.abs(np.arange(-extent, extent + 1))
        return self.quadrant[np.ix_(d, d)]


class DenseOperator:
    """Matrix-free ``A = I + omega^2 K M`` on the interior grid."""

    def __init__(self, kernel: KernelTable, m, workers: int = 1):
        m = m.m if isinstance(m, PerturbationField) else np.asarray(m, dtype=np.float64)
        n = m.shape[0]
        if m.shape != (n, n):
            raise ValueError("m must be a square interior array")
        if kernel.extent < n - 1:
            raise ValueError("kernel table too small for this grid")
        self.kernel = kernel
        self.m = m
        self.omega = kernel.omega
        self.n = n
        self.workers = workers
        self.size = next_fast_size(2 * n - 1)

    @cached_property
    def kernel_hat(self) -> np.ndarray:
        n, P = self.n, self.size
        k = self.kernel.block(n - 1)
        emb = np.zeros((P, P), dtype=np.complex128)
        idx = np.arange(-(n - 1), n) % P
        emb[np.ix_(idx, idx)] = k
        return scipy.fft.fft2(emb, workers=self.workers)

    def apply_K(self, v: np.ndarray) -> np.ndarray:
        n = self.n
        shape = np.shape(v)
        v = np.asarray(v).reshape(n, n)
        vh = scipy.fft.fft2(v, s=(self.size, self.size), workers=self.workers)
        out = scipy.fft.ifft2(vh * self.kernel_hat, workers=self.workers)[:n, :n]
        return out.reshape(shape)

    def apply(self, u: np.ndarray) -> np.ndarray:
        shape = np.shape(u)
        u2 = np.asarray(u).reshape(self.n, self.n)
        out = u2 + self.omega**2 * self.apply_K(self.m * u2)
        return out.reshape(shape)

    __call__ = apply

    def rhs(self, u_inc: np.ndarray) -> np.ndarray:
        u_inc = np.asarray(u_inc).reshape(self.n, self.n)
        return -self.omega**2 * self.apply_K(self.m * u_inc)


def _data(v):
    return v.data if isinstance(v, ComplexField) else np.asarray(v)


def apply_K(kt: KernelTable, v) -> np.ndarray:
    """``(K v)_i = sum_j k_{i-j} v_j`` over the interior grid, via FFT."""
    v = _data(v)
    return DenseOperator(kt, np.zeros(v.shape)).apply_K(v)


def apply_A(op: DenseOperator, u) -> np.ndarray:
    return op.apply(_data(u))


def build_rhs(op: DenseOperator, u_inc) -> np.ndarray:
    """``g = -omega^2 K (m * u_I)`` on the interior grid."""
    return op.rhs(_data(u_inc))
