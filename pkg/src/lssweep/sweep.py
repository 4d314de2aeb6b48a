"""Moving-PML sweeping factorization of the sparse surrogate ``H``.

Slices run along ``x1``.  Each slice ``D_i`` is padded on its left with an
auxiliary PML occupying the previous slice, and the resulting quasi-1D slab
is factored once with banded LU.  Application is one forward and one
backward sweep over the slices.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from lssweep.problem import GridSpec, PerturbationField
from lssweep.sparsify import OFFSETS, AuxStencilTable, SparseSystem, _flip

logger = logging.getLogger(__name__)


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlicePartition:
    """Half-open ``a1`` ranges (extended-grid layer indices, 0-based) of each slice.

    ``pivot`` is the slice where the elimination fronts meet.  With one front
    (left to right) it is the last slice; with two fronts it is the middle one.
    """

    bounds: tuple[tuple[int, int], ...]
    b: int
    pivot: int | None = None

    def __post_init__(self):
        if self.pivot is None:
            object.__setattr__(self, "pivot", len(self.bounds) - 1)
        if not 0 <= self.pivot < len(self.bounds):
            raise ValueError("pivot slice out of range")

    def __len__(self) -> int:
        return len(self.bounds)

    def __iter__(self):
        return iter(self.bounds)

    @property
    def widths(self) -> list[int]:
        return [hi - lo for lo, hi in self.bounds]

    @property
    def fronts(self) -> int:
        return 1 if self.pivot == len(self) - 1 else 2

    def slice(self, i: int) -> slice:
        lo, hi = self.bounds[i]
        return slice(lo, hi)

    def aux_range(self, i: int) -> tuple[int, int]:
        """Layers borrowed as the left auxiliary PML of slice ``i`` (empty if none).

        Slices up to the pivot are eliminated from the left and borrow the
        previous slice; the second slice only borrows the normal (non-PML)
        layers of the first.
        """
        lo = self.bounds[i][0]
        if i == 0 or i > self.pivot:
            return lo, lo
        plo, phi = self.bounds[i - 1]
        if i == 1:
            plo = max(plo, phi - self.b)
        return plo, phi

    def right_aux_range(self, i: int) -> tuple[int, int]:
        """Mirror of :meth:`aux_range` for slices eliminated from the right."""
        hi = self.bounds[i][1]
        last = len(self) - 1
        if i == last or i < self.pivot:
            return hi, hi
        nlo, nhi = self.bounds[i + 1]
        if i + 1 == last:
            nhi = min(nhi, nlo + self.b)
        return nlo, nhi


def partition_slices(grid: GridSpec, single: bool = False, fronts: int = 1) -> SlicePartition:
    """Boundary slices of ``2b`` layers, middle slices of ``b``, remainder merged into the last middle one.

    ``single=True`` returns one slice covering the grid, which turns the sweep
    into a direct solve (used for testing).  ``fronts=2`` eliminates from both
    ends toward the middle slice.
    """
    if fronts not in (1, 2):
        raise ValueError("fronts must be 1 or 2")
    b, L = grid.b, grid.L
    if single:
        return SlicePartition(((0, L),), b)
    middle = L - 4 * b
    if middle < 1:
        raise ValueError(f"no middle slice fits: n={grid.n}, b={b}")
    count = max(1, middle // b)
    bounds = [(0, 2 * b)]
    start = 2 * b
    for k in range(count):
        stop = start + b if k < count - 1 else L - 2 * b
        bounds.append((start, stop))
        start = stop
    bounds.append((L - 2 * b, L))
    pivot = len(bounds) // 2 if fronts == 2 else None
    return SlicePartition(tuple(bounds), b, pivot)


def slab_band(coef: np.ndarray) -> tuple[np.ndarray, int]:
    """LAPACK band storage of a slab operator with ``x1`` fastest.

    ``coef`` has shape ``(w, L, 9)``; unknown ``(t, a2)`` maps to ``a2 * w + t``.
    Neighbors outside the slab are dropped.  Returns ``(ab, k)`` with
    ``kl = ku = k = w + 1`` and ``ab`` sized for ``zgbtrf``.
    """
    w, L = coef.shape[:2]
    k = w + 1
    N = w * L
    ab = np.zeros((3 * k + 1, N), dtype=np.complex128)
    t, a2 = np.meshgrid(np.arange(w), np.arange(L), indexing="ij")
    row = a2 * w + t
    for idx, (d1, d2) in enumerate(OFFSETS):
        tt, aa = t + d1, a2 + d2
        ok = (tt >= 0) & (tt < w) & (aa >= 0) & (aa < L)
        col = aa * w + tt
        ab[2 * k + row[ok] - col[ok], col[ok]] = coef[..., idx][ok]
    return ab, k


class BandedLU:
    """Banded LU with partial pivoting (LAPACK ``zgbtrf``/``zgbtrs``)."""

    def __init__(self, ab: np.ndarray, k: int, label: str = ""):
        rownorm = _band_row_norms(ab, k)
        lu, piv, info = lapack.zgbtrf(ab, k, k, overwrite_ab=1)
        if info < 0:
            raise FactorizationError(f"zgbtrf argument error {info} ({label})")
        diag = np.abs(lu[2 * k])
        bad = np.nonzero(diag < 1e-14 * rownorm)[0]
        if info > 0 or bad.size:
            where = bad[0] if bad.size else info - 1
            raise FactorizationError(f"singular pivot at unknown {where} in {label}")
        self.lu, self.piv, self.k = lu, piv, k

    @property
    def n(self) -> int:
        return self.lu.shape[1]

    @property
    def nbytes(self) -> int:
        return self.lu.nbytes + self.piv.nbytes

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.zgbtrs(self.lu, self.k, self.k, rhs.reshape(self.n, -1), self.piv)
        if info != 0:
            raise FactorizationError(f"zgbtrs failed with info={info}")
        return x.reshape(rhs.shape)


def _band_row_norms(ab: np.ndarray, k: int) -> np.ndarray:
    # entry A[i, j] sits at ab[2k + i - j, j]
    N = ab.shape[1]
    sq = np.zeros(N)
    for r in range(k, 3 * k + 1):
        off = r - 2 * k  # i = j + off
        lo, hi = max(0, -off), min(N, N - off)
        sq[lo + off : hi + off] += np.abs(ab[r, lo:hi]) ** 2
    return np.sqrt(sq)


@dataclass
class SubproblemFactorization:
    """Factored slab for slice ``index``: optional auxiliary PML layers on either side of the slice."""

    index: int
    aux: tuple[int, int]
    main: tuple[int, int]
    lu: BandedLU
    L: int
    right_aux: tuple[int, int] | None = None

    @property
    def depth(self) -> int:
        return self.aux[1] - self.aux[0]

    @property
    def right_depth(self) -> int:
        return 0 if self.right_aux is None else self.right_aux[1] - self.right_aux[0]

    @property
    def width(self) -> int:
        return self.main[1] - self.aux[0] + self.right_depth

    @property
    def dimension(self) -> int:
        return self.width * self.L

    @property
    def bandwidth(self) -> int:
        return 2 * self.lu.k + 1

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """Approximate Schur-complement inverse applied to ``v`` of shape ``(width(D_i), L)``."""
        rhs = np.zeros((self.width, self.L), dtype=np.complex128)
        inner = slice(self.depth, self.width - self.right_depth)
        rhs[inner] = v
        x = self.lu.solve(np.ascontiguousarray(rhs.T).reshape(-1))
        return x.reshape(self.L, self.width).T[inner]


def _m_extended(grid: GridSpec, m) -> np.ndarray:
    if m is None:
        return np.zeros((grid.L, grid.L))
    if isinstance(m, PerturbationField):
        return m.extended()
    return grid.extend(np.asarray(m))


def build_subproblem(
    H: SparseSystem,
    partition: SlicePartition,
    aux_table: AuxStencilTable | None,
    m: PerturbationField | np.ndarray | None,
    i: int,
    exact_frequency: bool = False,
) -> SubproblemFactorization:
    grid = H.grid
    lo, hi = partition.bounds[i]
    a0, a1 = partition.aux_range(i)
    r0, r1 = partition.right_aux_range(i)
    coef = H.coef[a0:r1].copy()
    left, right = a1 - a0, r1 - r0
    if left or right:
        m_ext = _m_extended(grid, m)
        fn = aux_table.exact_stencils if exact_frequency else aux_table.stencils
    if left:
        coef[:left] = np.conj(fn(left, m_ext[a0:a1]))
    if right:
        # mirrored ramp: reverse the layers and flip the stencils along x1
        gam = fn(right, m_ext[r0:r1][::-1])[::-1]
        coef[-right:] = np.conj(_flip(gam, True, False))
    ab, k = slab_band(coef)
    lu = BandedLU(ab, k, label=f"slice {i}")
    return SubproblemFactorization(
        index=i, aux=(a0, a1), main=(lo, hi), lu=lu, L=grid.L, right_aux=(r0, r1) if right else None
    )


class ExactSchurInverse:
    """Exact ``T_[i]``: solve with the slices already eliminated when slice ``i`` is reached (test hook).

    Left of the pivot those are the leading slices, right of it the trailing
    ones, and at the pivot the whole grid.
    """

    def __init__(self, H: SparseSystem, partition: SlicePartition, i: int):
        L = H.L
        lo, hi = partition.bounds[i]
        c = partition.pivot
        self.start = 0 if i <= c else lo
        stop = hi if i < c else L
        self.L, self.lo, self.hi = L, lo, hi
        rng = slice(self.start * L, stop * L)
        self.n = stop - self.start
        self.lu = spla.splu(H.matrix[rng, rng].tocsc())

    def __call__(self, v: np.ndarray) -> np.ndarray:
        rhs = np.zeros((self.n, self.L), dtype=np.complex128)
        inner = slice(self.lo - self.start, self.hi - self.start)
        rhs[inner] = v
        return self.lu.solve(rhs.reshape(-1)).reshape(self.n, self.L)[inner]


@dataclass
class SweepPreconditioner:
    grid: GridSpec
    partition: SlicePartition
    inverses: list
    lower: list = field(repr=False)  # H_[i, i-1]
    upper: list = field(repr=False)  # H_[i, i+1]
    setup_time: float = 0.0

    def solve(self, f: np.ndarray) -> np.ndarray:
        """Approximate ``H^{-1} f`` on the whole extended grid (``(L, L)`` in and out)."""
        P = self.partition
        last, c = len(P) - 1, P.pivot
        u = np.zeros((self.grid.L, self.grid.L), dtype=np.complex128)

        def coupled(block, j, s):
            return (block @ u[P.slice(j)].reshape(-1)).reshape(u[s].shape)

        # forward: both fronts move toward the pivot slice
        for i in range(c):
            s = P.slice(i)
            r = f[s] - coupled(self.lower[i], i - 1, s) if i else f[s]
            u[s] = self.inverses[i](r)
        for i in range(last, c, -1):
            s = P.slice(i)
            r = f[s] - coupled(self.upper[i], i + 1, s) if i < last else f[s]
            u[s] = self.inverses[i](r)
        s = P.slice(c)
        r = f[s].astype(np.complex128)
        if c > 0:
            r = r - coupled(self.lower[c], c - 1, s)
        if c < last:
            r = r - coupled(self.upper[c], c + 1, s)
        u[s] = self.inverses[c](r)
        # backward: outward from the pivot
        for i in range(c - 1, -1, -1):
            s = P.slice(i)
            u[s] -= self.inverses[i](coupled(self.upper[i], i + 1, s))
        for i in range(c + 1, last + 1):
            s = P.slice(i)
            u[s] -= self.inverses[i](coupled(self.lower[i], i - 1, s))
        return u

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Sweep, then restrict to the interior grid ``I``."""
        return self.grid.restrict(self.solve(f))

    __call__ = apply

    @property
    def factor_nbytes(self) -> int:
        return sum(getattr(t, "lu").nbytes for t in self.inverses if isinstance(t, SubproblemFactorization))

    @property
    def factor_entries(self) -> int:
        return sum(t.lu.lu.size for t in self.inverses if isinstance(t, SubproblemFactorization))


def setup(
    H: SparseSystem,
    grid: GridSpec,
    m: PerturbationField | None,
    aux_table: AuxStencilTable | None,
    partition: SlicePartition | None = None,
    exact: bool = False,
    exact_frequency: bool = False,
    fronts: int = 1,
) -> SweepPreconditioner:
    """Factor every slice subproblem.

    ``exact=True`` swaps in the exact Schur-complement inverses, which turns
    the sweep into block Gaussian elimination of ``H`` (a wiring check).
    """
    t0 = time.perf_counter()
    if partition is None:
        partition = partition_slices(grid, fronts=fronts)
    if aux_table is None and len(partition) > 1 and not exact:
        aux_table = AuxStencilTable(grid, m)
    inverses = []
    for i in range(len(partition)):
        if exact:
            inverses.append(ExactSchurInverse(H, partition, i))
        else:
            inverses.append(build_subproblem(H, partition, aux_table, m, i, exact_frequency))
    lower = [None] + [
        H.block(partition.slice(i), partition.slice(i - 1)) for i in range(1, len(partition))
    ]
    upper = [
        H.block(partition.slice(i), partition.slice(i + 1)) for i in range(len(partition) - 1)
    ] + [None]
    P = SweepPreconditioner(grid, partition, inverses, lower, upper)
    P.setup_time = time.perf_counter() - t0
    logger.debug("sweep setup: %d slices in %.3fs", len(partition), P.setup_time)
    return P


def apply(P: SweepPreconditioner, f: np.ndarray) -> np.ndarray:
    return P.apply(f)
