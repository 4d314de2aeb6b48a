"""Brute-force oracle checks on small problems.

Each check builds its reference independently of the fast path it audits
(direct sums instead of FFT, dense SVD instead of the Gram matrix, dense LU
instead of the sweep, freshly assembled plane-wave matrices for the PML
stencils).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from lssweep import sweep
from lssweep.kernel import DenseOperator, KernelTable, central_weight, green2d
from lssweep.problem import GridSpec, velocity_from_config
from lssweep.sparsify import (
    AuxStencilTable,
    SigmaProfile,
    _complement_windows,
    annihilation_residual,
    assemble_H,
    build_boundary_pml_table,
    compute_interior_stencil,
    modified_plane_wave_matrix,
    neighborhood_points,
)


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.threshold)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.3e} (limit {self.threshold:.0e}) {self.detail}".rstrip()


def small_grid(n: int, b: int = 4, ppw: float = 8.0) -> GridSpec:
    return GridSpec(2 * math.pi * (n + 1) / ppw, n, b)


def fft_vs_direct(n: int = 12, seed: int = 0, corrupt_kernel: bool = False) -> CheckResult:
    """FFT convolution against an explicit double sum with freshly evaluated weights."""
    grid = small_grid(n)
    rng = np.random.default_rng(seed)
    m = rng.uniform(-0.5, 0.5, (n, n))
    u = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    kt = KernelTable.for_grid(grid)
    if corrupt_kernel:
        kt.quadrant[2, 1] *= 1.001
    fast = DenseOperator(kt, m)(u)

    idx = np.arange(n)
    d1 = idx[:, None, None, None] - idx[None, None, :, None]
    d2 = idx[None, :, None, None] - idx[None, None, None, :]
    d = np.broadcast_arrays(d1, d2)
    off = (d[0] != 0) | (d[1] != 0)
    K = np.empty(d[0].shape, dtype=np.complex128)
    K[off] = green2d(grid.omega, np.stack([d[0][off], d[1][off]], -1) * grid.h) * grid.h**2
    K[~off] = central_weight(grid.omega, grid.h)
    ref = u + grid.omega**2 * np.einsum("ijkl,kl->ij", K, m * u)
    err = np.linalg.norm(fast - ref) / np.linalg.norm(ref)
    return CheckResult("FFT convolution vs direct sum", err, 1e-12, f"(n={n})")


def gram_vs_svd(n: int = 16) -> CheckResult:
    """Smallest singular value of ``K_{mu, mu^c}`` from the Gram route against a dense SVD."""
    grid = small_grid(n)
    kt = KernelTable.for_grid(grid)
    st = compute_interior_stencil(grid.omega, grid.h, n, kt)
    side = 2 * n + 1
    K = _complement_windows(kt, n, slice(0, side)).reshape(9, -1)
    s = np.linalg.svd(K, compute_uv=False)
    gram_sigma = math.sqrt(max(st.gram_eigenvalues[0], 0.0))
    err = max(abs(st.residual - s[-1]), abs(gram_sigma - s[-1])) / s[-1]
    return CheckResult("Gram alpha vs dense SVD (sigma_min)", err, 1e-8, f"(n={n})")


def sweep_vs_dense(n: int = 22, b: int = 4, fronts: int = 1, preset: str = "i") -> CheckResult:
    """Exact Schur-complement sweep against a dense LU solve of ``H``."""
    from lssweep.solver import StencilSet

    grid = small_grid(n, b)
    m = velocity_from_config(grid, preset)
    S = StencilSet.build(grid)
    H = assemble_H(grid, m, S.interior, S.pml)
    P = sweep.setup(H, grid, m, None, exact=True, fronts=fronts)
    rng = np.random.default_rng(1)
    f = rng.standard_normal((grid.L, grid.L)) + 1j * rng.standard_normal((grid.L, grid.L))
    ref = sla.lu_solve(sla.lu_factor(H.matrix.toarray()), f.reshape(-1)).reshape(f.shape)
    err = np.linalg.norm(P.solve(f) - ref) / np.linalg.norm(ref)
    return CheckResult(f"exact-T sweep vs dense LU ({fronts} front{'s' * (fronts > 1)})", err, 1e-8, f"(n={n})")


def _frame_matrices(grid: GridSpec, C: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    prof = SigmaProfile.for_grid(grid, C)
    idx = np.arange(-grid.b, grid.n + 2 + grid.b)
    z = prof.local(idx * grid.h, grid.h)
    pts = neighborhood_points(z[:, None, :], z[None, :, :])
    return modified_plane_wave_matrix(pts, grid.omega), idx


def gamma_annihilation(n: int = 22, b: int = 4, preset: str = "iii") -> CheckResult:
    """``||gamma^* F||`` for every boundary stencil and every auxiliary stencil a sweep uses."""
    grid = small_grid(n, b)
    pml = build_boundary_pml_table(grid)
    F, _ = _frame_matrices(grid)
    res = annihilation_residual(pml.gamma[pml.mask], F[pml.mask])
    worst = float(res.max())

    m = velocity_from_config(grid, preset)
    aux = AuxStencilTable(grid, m)
    part = sweep.partition_slices(grid)
    m_ext = m.extended()
    prof2 = SigmaProfile.for_grid(grid)
    z2 = prof2.local(np.arange(-b, n + 2 + b) * grid.h, grid.h)
    count = res.size
    for i in range(1, len(part)):
        a0, a1 = part.aux_range(i)
        depth = a1 - a0
        layers = m_ext[a0:a1]
        gam = aux.stencils(depth, layers)
        ks = aux.lookup(grid.omega**2 * (1 - layers))
        w = np.sqrt(aux.samples[ks])
        z1 = aux.ramp(depth).local(np.arange(depth) * grid.h, grid.h)
        pts = neighborhood_points(z1[:, None, :], z2[None, :, :])
        r = annihilation_residual(gam, modified_plane_wave_matrix(pts, w))
        worst = max(worst, float(r.max()))
        count += r.size
    return CheckResult("gamma annihilation residual (all stencils)", worst, 1e-10, f"({count} stencils)")


def run_selftest(corrupt_kernel: bool = False) -> list[CheckResult]:
    return [
        fft_vs_direct(12, corrupt_kernel=corrupt_kernel),
        fft_vs_direct(16, seed=3, corrupt_kernel=corrupt_kernel),
        gram_vs_svd(16),
        sweep_vs_dense(22, fronts=1),
        sweep_vs_dense(22, fronts=2, preset="iii"),
        gamma_annihilation(),
    ]


def main(corrupt_kernel: bool = False, stream=None) -> int:
    import sys

    out = stream or sys.stdout
    t0 = time.perf_counter()
    results = run_selftest(corrupt_kernel)
    for r in results:
        print(r.line(), file=out)
    ok = all(r.passed for r in results)
    print(f"{'all checks passed' if ok else 'SELFTEST FAILED'} in {time.perf_counter() - t0:.1f}s", file=out)
    return 0 if ok else 1
