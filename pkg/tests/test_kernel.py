import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import grid_at
from lssweep.kernel import (
    DenseOperator,
    KernelTable,
    apply_A,
    apply_K,
    build_rhs,
    central_weight,
    green2d,
    next_fast_size,
)


def mp_green(omega, r):
    with mp.workdps(50):
        return complex(0.25j * mp.hankel1(0, omega * r))


def test_green_against_50_digit_oracle():
    z = np.logspace(-3, 3, 100)
    got = green2d(1.0, np.stack([z, np.zeros_like(z)], -1))
    ref = np.array([mp_green(1.0, t) for t in z])
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=0)


def test_green_table_value_at_one():
    # tabulated J0(1) = 0.7651976866, Y0(1) = 0.0882569642; H0 = J0 + i Y0
    H0 = complex(0.7651976866, 0.0882569642)
    assert green2d(1.0, (1.0, 0.0)) == pytest.approx(0.25j * H0, abs=1e-10)


def test_green_asymptotic_decay():
    val = abs(green2d(100.0, (0.6, 0.8)))
    assert val == pytest.approx(0.25 * math.sqrt(2 / (math.pi * 100)), rel=0.01)


@given(st.floats(0.1, 50), st.floats(-3, 3), st.floats(-3, 3))
def test_green_even(omega, x1, x2):
    if math.hypot(x1, x2) < 1e-6:
        return
    assert green2d(omega, (x1, x2)) == green2d(omega, (-x1, -x2))


def test_green_rejects_origin():
    with pytest.raises(ValueError):
        green2d(1.0, (0.0, 0.0))


# [DERIVED] values from 30-digit tanh-sinh quadrature of G over the cell
@pytest.mark.parametrize(
    "omega, h, ref",
    [
        (2 * math.pi * 16, 1 / 128, 1.3251237445809526e-05 + 1.48701175861971e-05j),
        (2 * math.pi * 4, 1 / 16, 0.00036242986940096474 + 0.0008797089194691376j),
        (2.5, 1.0, 0.005530140438607072 + 0.19055432119277213j),
    ],
)
def test_central_weight_frozen_oracle(omega, h, ref):
    assert central_weight(omega, h) == pytest.approx(ref, rel=1e-10)


def test_central_weight_live_oracle():
    omega, h = 7.0, 0.2
    with mp.workdps(20):
        f = lambda x, y: 0.25j * mp.hankel1(0, omega * mp.sqrt(x * x + y * y))
        ref = complex(4 * mp.quad(f, [0, h / 2], [0, h / 2]))
    assert central_weight(omega, h) == pytest.approx(ref, rel=1e-10)


def test_central_weight_small_h_limit():
    # G ~ -(ln(omega r / 2) + euler_gamma) / (2 pi) + i/4 near 0
    omega, h = 1.0, 1e-3
    a = h / 2
    log_int = h * h * (math.log(a * math.sqrt(2)) - 1.5 + math.pi / 4)  # int of ln|y| over the square
    lead = -(log_int + h * h * (math.log(omega / 2) + np.euler_gamma)) / (2 * math.pi) + 0.25j * h * h
    assert central_weight(omega, h) == pytest.approx(lead, rel=1e-5)


@given(st.floats(1e-3, math.pi - 1e-3))
def test_central_weight_imag_positive(kappa):
    assert central_weight(kappa, 1.0).imag > 0


def test_central_weight_quadrature_converged():
    for kappa in (0.1, 1.0, 3.0):
        a, b = central_weight(kappa, 1.0, 32), central_weight(kappa, 1.0, 64)
        assert abs(a - b) <= 1e-10 * abs(b)


def test_central_weight_requires_resolved_grid():
    with pytest.raises(ValueError):
        central_weight(4.0, 1.0)


def test_kernel_table_symmetry():
    kt = KernelTable(30.0, 0.05, 6)
    blk = kt.block(6)
    assert np.array_equal(blk, blk[::-1, ::-1])
    assert np.array_equal(blk, blk.T)
    assert kt(2, -3) == pytest.approx(green2d(30.0, (0.1, -0.15)) * 0.05**2, rel=1e-14)
    assert kt(0, 0) == kt.center


@pytest.mark.parametrize("n", [7, 100, 128, 331])
def test_next_fast_size(n):
    m = next_fast_size(n)
    assert m >= n
    k = m
    for p in (2, 3, 5, 7):
        while k % p == 0:
            k //= p
    assert k == 1
    assert all(next_fast_size(j) == m for j in range(n, m + 1))


def dense_K(kt: KernelTable, n: int) -> np.ndarray:
    i = np.arange(n)
    d1 = i[:, None, None, None] - i[None, None, :, None]
    d2 = i[None, :, None, None] - i[None, None, None, :]
    return kt(*np.broadcast_arrays(d1, d2)).reshape(n * n, n * n)


@pytest.mark.parametrize("n", [4, 8, 12, 16])
def test_fft_matches_direct_sum(n, rng):
    g = grid_at(max(n, 10), 2)
    kt = KernelTable(g.omega, g.h, n)
    m = rng.uniform(-0.5, 0.5, (n, n))
    u = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    K = dense_K(kt, n)
    op = DenseOperator(kt, m)
    ref_K = (K @ u.reshape(-1)).reshape(n, n)
    assert np.linalg.norm(op.apply_K(u) - ref_K) <= 1e-12 * np.linalg.norm(ref_K)
    ref_A = u + g.omega**2 * (K @ (m * u).reshape(-1)).reshape(n, n)
    assert np.linalg.norm(apply_A(op, u) - ref_A) <= 1e-12 * np.linalg.norm(ref_A)
    ref_g = -g.omega**2 * (K @ (m * u).reshape(-1)).reshape(n, n)
    assert np.linalg.norm(build_rhs(op, u) - ref_g) <= 1e-12 * np.linalg.norm(ref_g)


def test_impulse_response():
    n = 8
    kt = KernelTable(20.0, 1 / 9, n)
    v = np.zeros((n, n))
    v[2, 5] = 1
    out = apply_K(kt, v)
    i = np.arange(n)
    np.testing.assert_allclose(out, kt(i[:, None] - 2, i[None, :] - 5), rtol=1e-12, atol=1e-18)


def test_K_symmetric_bilinear(rng):
    n = 10
    kt = KernelTable(25.0, 1 / 11, n)
    v, w = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(2))
    lhs = np.sum(apply_K(kt, v) * w)
    rhs = np.sum(v * apply_K(kt, w))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_apply_A_identity_linear_deterministic(rng):
    n = 9
    kt = KernelTable(25.0, 0.1, n)
    u, v = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(2))
    assert np.array_equal(DenseOperator(kt, np.zeros((n, n)))(u), u)
    op = DenseOperator(kt, rng.uniform(-0.3, 0.3, (n, n)))
    a, b = 0.7 - 0.2j, -1.3j
    lin = op(a * u + b * v) - (a * op(u) + b * op(v))
    assert np.linalg.norm(lin) <= 1e-13 * np.linalg.norm(op(u))
    assert np.array_equal(op(u), op(u))


def test_rhs_zero_and_single_point(rng):
    n = 8
    kt = KernelTable(20.0, 1 / 9, n)
    u_inc = np.exp(1j * rng.uniform(0, 6, (n, n)))
    assert not DenseOperator(kt, np.zeros((n, n))).rhs(u_inc).any()
    m = np.zeros((n, n))
    m[3, 4] = -0.4
    g = DenseOperator(kt, m).rhs(u_inc)
    i = np.arange(n)
    ref = -(20.0**2) * kt(i[:, None] - 3, i[None, :] - 4) * m[3, 4] * u_inc[3, 4]
    np.testing.assert_allclose(g, ref, rtol=1e-12, atol=1e-18)
