import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from conftest import grid_at
from lssweep import sweep
from lssweep.problem import GridSpec, PerturbationField, make_grid, velocity_from_config
from lssweep.solver import SparsifySweepPreconditioner, StencilSet
from lssweep.sparsify import AuxStencilTable, assemble_f, assemble_H, build_boundary_pml_table
from lssweep.sweep import BandedLU, FactorizationError, SlicePartition, partition_slices, slab_band


def test_partition_example():
    p = partition_slices(GridSpec(10.0, 18, 4))
    assert p.widths == [8, 4, 4, 4, 8]
    assert p.bounds[0] == (0, 8) and p.bounds[-1] == (20, 28)


def test_partition_remainder_goes_to_last_middle_slice():
    p = partition_slices(GridSpec(10.0, 20, 4))
    assert p.widths == [8, 4, 4, 6, 8]


@given(st.integers(2, 10), st.integers(0, 60))
def test_partition_properties(b, extra):
    g = GridSpec(1.0, 2 * b + 2 + extra, b)
    p = partition_slices(g)
    assert len(p) >= 3
    assert p.bounds[0][0] == 0 and p.bounds[-1][1] == g.L
    assert all(p.bounds[i][1] == p.bounds[i + 1][0] for i in range(len(p) - 1))
    w = p.widths
    assert w[0] == w[-1] == 2 * b
    assert all(x == b for x in w[1:-2])
    middle = g.L - 4 * b
    assert (b <= w[-2] < 2 * b) if middle >= b else w[-2] == middle
    if (g.L - 4 * b) % b == 0:
        assert all(x == b for x in w[1:-1])
    two = partition_slices(g, fronts=2)
    assert two.bounds == p.bounds and two.pivot == len(p) // 2 and two.fronts == 2
    assert p.fronts == 1


def test_aux_ranges():
    p = partition_slices(GridSpec(10.0, 18, 4))
    assert p.aux_range(0) == (0, 0)
    assert p.aux_range(1) == (4, 8)  # normal layers of the first slice only
    assert p.aux_range(2) == (8, 12)
    q = partition_slices(GridSpec(10.0, 18, 4), fronts=2)
    assert q.aux_range(3) == (16, 16)
    assert q.right_aux_range(3) == (20, 24)
    assert q.right_aux_range(1) == (12, 12)


def test_partition_rejects_bad_fronts():
    with pytest.raises(ValueError):
        partition_slices(GridSpec(10.0, 18, 4), fronts=3)
    with pytest.raises(ValueError):
        SlicePartition(((0, 4),), 2, pivot=2)


def test_singular_band_reported():
    coef = np.zeros((3, 6, 9), dtype=np.complex128)
    coef[..., 4] = 1
    coef[1, 2, 4] = 0
    ab, k = slab_band(coef)
    with pytest.raises(FactorizationError, match="slice 7"):
        BandedLU(ab, k, "slice 7")


@pytest.fixture(scope="module")
def small():
    g = grid_at(22, 4)
    S = StencilSet.build(g)
    m = velocity_from_config(g, "iii")
    H = assemble_H(g, m, S.interior, S.pml)
    return g, S, m, H


def test_banded_matches_sparse_solve(small, rng):
    g, _, _, H = small
    p = partition_slices(g)
    coef = H.coef[p.slice(0)]
    ab, k = slab_band(coef)
    lu = BandedLU(ab, k)
    w = coef.shape[0]
    v = rng.standard_normal(w * g.L) + 0j
    x = lu.solve(v.copy())
    blk = H.block(p.slice(0), p.slice(0)).toarray()
    # band ordering is x1-fastest; the sparse matrix is x2-fastest
    perm = np.arange(w * g.L).reshape(w, g.L).T.reshape(-1)
    np.testing.assert_allclose(blk[np.ix_(perm, perm)] @ x, v, atol=1e-10)


def test_subproblem_shapes(small):
    g, S, m, H = small
    p = partition_slices(g)
    aux = AuxStencilTable(g, m)
    first = sweep.build_subproblem(H, p, aux, m, 0)
    assert first.depth == 0 and first.width == 2 * g.b and first.dimension == 2 * g.b * g.L
    for i in range(1, len(p)):
        sub = sweep.build_subproblem(H, p, aux, m, i)
        a0, a1 = p.aux_range(i)
        assert sub.dimension == (a1 - a0 + p.widths[i]) * g.L
        assert sub.bandwidth == 2 * (sub.width + 1) + 1


def test_first_subproblem_is_exact_block_inverse(small, rng):
    g, S, m, H = small
    p = partition_slices(g)
    sub = sweep.build_subproblem(H, p, None, m, 0)
    v = rng.standard_normal((p.widths[0], g.L)) + 0j
    blk = H.block(p.slice(0), p.slice(0)).tocsc()
    ref = spla.spsolve(blk, v.reshape(-1)).reshape(v.shape)
    np.testing.assert_allclose(sub(v), ref, rtol=1e-10, atol=1e-12)


def test_zero_field_aux_rows_match_left_edge(small):
    g, S, _, _ = small
    zero = PerturbationField.zero(g)
    H = assemble_H(g, zero, S.interior, S.pml)
    p = partition_slices(g)
    sub_aux = AuxStencilTable(g, zero).stencils(g.b, np.zeros((g.b, g.L)))
    np.testing.assert_allclose(sub_aux, S.pml.gamma[: g.b], atol=1e-12)
    assert H.coef.shape[0] == g.L


def test_setup_deterministic(small):
    g, _, m, H = small
    a = sweep.setup(H, g, m, None)
    b = sweep.setup(H, g, m, None)
    for x, y in zip(a.inverses, b.inverses):
        assert x.lu.lu.tobytes() == y.lu.lu.tobytes()


def test_minimal_three_slice_grid(rng):
    g = GridSpec(2 * math.pi * 11 / 8, 10, 4)
    S = StencilSet.build(g)
    m = PerturbationField.zero(g)
    H = assemble_H(g, m, S.interior, S.pml)
    P = sweep.setup(H, g, m, None)
    assert len(P.partition) == 3
    f = rng.standard_normal((g.L, g.L)) + 0j
    assert np.isfinite(P.solve(f)).all()


def test_apply_linear_and_zero(small, rng):
    g, _, m, H = small
    P = sweep.setup(H, g, m, None)
    assert not P.apply(np.zeros((g.L, g.L))).any()
    f1, f2 = (rng.standard_normal((g.L, g.L)) + 1j * rng.standard_normal((g.L, g.L)) for _ in range(2))
    a, b = 1.5 - 0.5j, 0.25j
    diff = sweep.apply(P, a * f1 + b * f2) - (a * P(f1) + b * P(f2))
    assert np.linalg.norm(diff) <= 1e-12 * np.linalg.norm(P(f1))


def test_single_slice_is_direct_solve(rng):
    g = grid_at(20, 4)
    S = StencilSet.build(g)
    m = velocity_from_config(g, "i")
    H = assemble_H(g, m, S.interior, S.pml)
    P = sweep.setup(H, g, m, None, partition=partition_slices(g, single=True))
    f = rng.standard_normal((g.L, g.L)) + 1j * rng.standard_normal((g.L, g.L))
    ref = sla.solve(H.matrix.toarray(), f.reshape(-1)).reshape(f.shape)
    err = np.linalg.norm(P.apply(f) - g.restrict(ref)) / np.linalg.norm(g.restrict(ref))
    assert err <= 1e-10


@pytest.mark.parametrize("fronts", [1, 2])
@pytest.mark.parametrize("n", [18, 24])
def test_exact_schur_sweep_matches_dense(n, fronts, rng):
    g = grid_at(n, 4)
    S = StencilSet.build(g)
    m = velocity_from_config(g, "iv")
    H = assemble_H(g, m, S.interior, S.pml)
    P = sweep.setup(H, g, m, None, exact=True, fronts=fronts)
    f = rng.standard_normal((g.L, g.L)) + 1j * rng.standard_normal((g.L, g.L))
    ref = sla.solve(H.matrix.toarray(), f.reshape(-1)).reshape(f.shape)
    assert np.linalg.norm(P.solve(f) - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.fixture(scope="module")
def free16():
    g = make_grid(2 * math.pi * 16, 8, 8)
    return g, SparsifySweepPreconditioner(g, PerturbationField.zero(g))


def test_moving_pml_quality(free16, rng):
    # [DERIVED] first run gave 3.9e-4; the stated bound is 1e-2
    g, P = free16
    v = rng.standard_normal((g.n, g.n)) + 1j * rng.standard_normal((g.n, g.n))
    f = assemble_f(g, v, P.alpha)
    r = (P.H.matrix @ P.lift(v).reshape(-1)).reshape(f.shape) - f
    s = g.interior_slice()
    q = np.linalg.norm(r[s]) / np.linalg.norm(f[s])
    assert q <= 1e-2
    assert q <= 1e-3


def test_factor_memory_is_order_b2N(free16):
    # [DERIVED] c = 2.04 at this size; pinned with headroom
    g, P = free16
    assert P.sweep.factor_entries <= 2.5 * g.b**2 * g.N
    assert P.sweep.factor_nbytes > 0


def test_two_fronts_comparable_quality(rng):
    g = grid_at(62, 8)
    m = velocity_from_config(g, "iii")
    out = []
    for fronts in (1, 2):
        P = SparsifySweepPreconditioner(g, m, fronts=fronts)
        v = rng.standard_normal((g.n, g.n)) + 0j
        f = assemble_f(g, v, P.alpha)
        r = (P.H.matrix @ P.lift(v).reshape(-1)).reshape(f.shape) - f
        out.append(np.linalg.norm(r) / np.linalg.norm(f))
    assert max(out) <= 0.1
