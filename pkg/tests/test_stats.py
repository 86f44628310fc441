"""Probability accounting checked against exact rational arithmetic.

The binomial oracle below works in Fraction space, so every tail value it
produces is exact. The library's float implementation has to agree with it
to near machine precision.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from pairmark.stats import (
    abwe,
    fpr3_bound,
    fpr_report,
    fpr_union,
    psnr,
    quality_metrics,
    solve_thresholds,
    ssim,
    two_tail_prob,
)


def exact_two_tail(n: int, tau1: int, tau2: int) -> Fraction:
    """P[X <= tau1 or X >= tau2] for X ~ Binomial(n, 1/2), exactly."""
    hits = sum(math.comb(n, q) for q in range(0, tau1 + 1))
    hits += sum(math.comb(n, q) for q in range(tau2, n + 1))
    return Fraction(hits, 2**n)


def exact_two_tail_p(n: int, p: float, tau1: int, tau2: int) -> Fraction:
    # Fraction(p) is the exact binary value of the float, the same number
    # the implementation works with.
    pf = Fraction(p)
    total = Fraction(0)
    for q in list(range(0, tau1 + 1)) + list(range(tau2, n + 1)):
        total += math.comb(n, q) * pf**q * (1 - pf) ** (n - q)
    return total


def test_two_tail_matches_oracle_at_reference_point():
    # Frozen reference: the 100-bit tail at the (25, 75) thresholds.
    got = two_tail_prob(100, 0.5, 25, 75)
    exact = exact_two_tail(100, 25, 75)
    assert got == pytest.approx(5.636282034205402e-07, rel=1e-12)
    assert abs(got - float(exact)) <= 1e-12 * float(exact)


def test_two_tail_matches_oracle_on_grid():
    for n in (1, 2, 5, 17, 64, 100):
        for tau1 in range(0, n, max(1, n // 5)):
            for tau2 in range(tau1 + 1, n + 1, max(1, n // 4)):
                got = two_tail_prob(n, 0.5, tau1, tau2)
                exact = float(exact_two_tail(n, tau1, tau2))
                assert got == pytest.approx(exact, rel=1e-10), (n, tau1, tau2)


def test_two_tail_general_p():
    for p in (0.25, 0.37, 0.9):
        for n, tau1, tau2 in ((10, 2, 8), (33, 5, 20), (64, 0, 64)):
            got = two_tail_prob(n, p, tau1, tau2)
            exact = float(exact_two_tail_p(n, p, tau1, tau2))
            assert got == pytest.approx(exact, rel=1e-10), (n, p, tau1, tau2)


def test_two_tail_hand_values():
    assert two_tail_prob(2, 0.5, 0, 2) == pytest.approx(0.5, rel=1e-14)
    assert two_tail_prob(10, 0.5, 9, 10) == pytest.approx(1.0, rel=1e-13)
    assert two_tail_prob(1, 0.5, 0, 1) == pytest.approx(1.0, rel=1e-13)


def test_two_tail_covers_everything():
    # Adjacent thresholds partition the outcomes, so the sum is 1.
    for n, p in ((7, 0.5), (100, 0.31), (1000, 0.37)):
        k = n // 2
        assert two_tail_prob(n, p, k, k + 1) == pytest.approx(1.0, abs=1e-10)


def test_two_tail_monotonicity():
    # Weak monotonicity everywhere; strict where the added pmf term is large
    # enough to register against the float total at all.
    for tau1 in range(0, 40):
        a = two_tail_prob(100, 0.5, tau1, 77)
        b = two_tail_prob(100, 0.5, tau1 + 1, 77)
        assert b >= a
        if 15 <= tau1:
            assert b > a
    for tau2 in range(60, 100):
        a = two_tail_prob(100, 0.5, 23, tau2)
        b = two_tail_prob(100, 0.5, 23, tau2 + 1)
        assert b <= a
        if tau2 < 80:
            assert b < a


def test_two_tail_symmetry_at_half():
    # p = 1/2 makes the two tails of symmetric thresholds equal.
    for n, tau1 in ((50, 11), (101, 33)):
        lower = sum(math.comb(n, q) for q in range(tau1 + 1))
        expected = Fraction(2 * lower, 2**n)
        assert two_tail_prob(n, 0.5, tau1, n - tau1) == pytest.approx(
            float(expected), rel=1e-11
        )


def test_two_tail_input_validation():
    with pytest.raises(ValueError):
        two_tail_prob(0, 0.5, 0, 1)
    with pytest.raises(ValueError):
        two_tail_prob(10, 0.0, 2, 8)
    with pytest.raises(ValueError):
        two_tail_prob(10, 1.0, 2, 8)
    with pytest.raises(ValueError):
        two_tail_prob(10, 0.5, 5, 5)
    with pytest.raises(ValueError):
        two_tail_prob(10, 0.5, 2, 11)
    with pytest.raises(ValueError):
        two_tail_prob(10, 0.5, -1, 5)


def test_fpr_union():
    assert fpr_union([0.1, 0.2]) == pytest.approx(0.3)
    assert fpr_union([0.7, 0.7]) == 1.0
    assert fpr_union([]) == 0.0
    with pytest.raises(ValueError):
        fpr_union([0.1, -0.2])


def test_fpr3_bound():
    assert fpr3_bound(0.1) == pytest.approx(0.3)
    assert fpr3_bound(0.5) == 1.0
    with pytest.raises(ValueError):
        fpr3_bound(-1e-9)


def test_fpr_report_wiring():
    rep = fpr_report(100, 0.5, 23, 77, 10)
    per_user = two_tail_prob(100, 0.5, 23, 77)
    assert rep.n == 100 and rep.m == 10
    assert rep.tau1 == 23 and rep.tau2 == 77
    assert rep.per_user_two_tail == per_user
    assert rep.union_bound_m == pytest.approx(10 * per_user, rel=1e-12)
    assert rep.union_bound_3m == pytest.approx(30 * per_user, rel=1e-12)
    with pytest.raises(ValueError):
        fpr_report(100, 0.5, 23, 77, 0)


def _oracle_thresholds(n, m, domains, target):
    target = Fraction(target)
    for tau1 in range((n - 1) // 2, -1, -1):
        if domains * m * exact_two_tail(n, tau1, n - tau1) <= target:
            return (tau1, n - tau1)
    return None


def test_solve_thresholds_frozen_values():
    assert solve_thresholds(100, 0.5, 10, 1e-6, domains=3) == (22, 78)
    assert solve_thresholds(100, 0.5, 10, 1e-6, domains=1) == (23, 77)
    assert solve_thresholds(100, 0.5, 1, 1e-6, domains=1) == (25, 75)
    assert solve_thresholds(4, 0.5, 1, 0.2, domains=1) == (0, 4)
    assert solve_thresholds(100, 0.5, 1, 1e-300) is None


def test_solve_thresholds_against_oracle():
    for n in (4, 9, 16, 25, 40):
        for m in (1, 3):
            for domains in (1, 3):
                for target in (0.437, 0.1037, 3.3e-3, 7.7e-5, 2.9e-9):
                    got = solve_thresholds(n, 0.5, m, target, domains=domains)
                    want = _oracle_thresholds(n, m, domains, target)
                    assert got == want, (n, m, domains, target)


def test_solve_thresholds_result_is_maximal():
    tau1, tau2 = solve_thresholds(100, 0.5, 10, 1e-6, domains=3)
    assert 30 * exact_two_tail(100, tau1, tau2) <= Fraction(1e-6)
    assert 30 * exact_two_tail(100, tau1 + 1, tau2 - 1) > Fraction(1e-6)


def test_solve_thresholds_input_validation():
    with pytest.raises(ValueError):
        solve_thresholds(100, 0.5, 0, 1e-6)
    with pytest.raises(ValueError):
        solve_thresholds(100, 0.5, 1, 1e-6, domains=0)
    with pytest.raises(ValueError):
        solve_thresholds(100, 0.5, 1, 0.0)


def test_abwe():
    assert abwe(["0000"], ["0101"]) == pytest.approx(0.5)
    assert abwe(["00", "11"], ["01", "11"]) == pytest.approx(0.25)
    assert abwe(["0011", "0101"], ["0111", "1001"]) == pytest.approx(0.375)
    with pytest.raises(ValueError):
        abwe([], [])
    with pytest.raises(ValueError):
        abwe(["01"], ["01", "10"])


def test_psnr():
    x = np.zeros((8, 8, 1))
    assert psnr(x, x) == float("inf")
    assert psnr(x + 0.1, x) == pytest.approx(20.0, rel=1e-12)
    assert psnr(x + 0.5, x) == pytest.approx(-10 * math.log10(0.25), rel=1e-12)
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))


# --- ssim ------------------------------------------------------------------


def _ssim_oracle(x, y):
    """Scalar-loop SSIM with zero-padded 11x11 Gaussian windows."""
    t = np.arange(-5, 6, dtype=np.float64)
    k1 = np.exp(-(t**2) / (2 * 1.5**2))
    k1 /= k1.sum()
    kern = np.outer(k1, k1)
    c1, c2 = 0.01**2, 0.03**2

    planes_x = x[:, :, None] if x.ndim == 2 else x
    planes_y = y[:, :, None] if y.ndim == 2 else y
    h, w, nch = planes_x.shape

    def corr(plane):
        out = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for u in range(-5, 6):
                    for v in range(-5, 6):
                        ii, jj = i + u, j + v
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += kern[u + 5, v + 5] * plane[ii, jj]
                out[i, j] = acc
        return out

    total = 0.0
    for ch in range(nch):
        xc, yc = planes_x[:, :, ch], planes_y[:, :, ch]
        mu_x, mu_y = corr(xc), corr(yc)
        var_x = corr(xc * xc) - mu_x**2
        var_y = corr(yc * yc) - mu_y**2
        cov = corr(xc * yc) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        total += s.sum()
    return total / planes_x.size


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(4)
    x = rng.random((12, 12))
    y = np.clip(x + rng.normal(scale=0.05, size=x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(_ssim_oracle(x, y), abs=1e-8)
    x3 = rng.random((9, 13, 3))
    y3 = np.clip(x3 + rng.normal(scale=0.1, size=x3.shape), 0, 1)
    assert ssim(x3, y3) == pytest.approx(_ssim_oracle(x3, y3), abs=1e-8)


def test_ssim_identity_and_bounds():
    rng = np.random.default_rng(5)
    x = rng.random((16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    y = rng.random((16, 16, 3))
    assert ssim(x, y) < 1.0
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.2, 0.8, size=(10, 10, 3))
    y = np.clip(x + rng.normal(scale=0.05, size=x.shape), 0, 1)
    val, grad = ssim(x, y, return_grad=True)
    assert grad.shape == x.shape
    h = 1e-5
    for _ in range(6):
        d = rng.normal(size=x.shape)
        d /= np.linalg.norm(d.ravel())
        fd = (ssim(x + h * d, y) - ssim(x - h * d, y)) / (2 * h)
        an = float(np.sum(grad * d))
        assert abs(fd - an) <= 1e-6 + 1e-4 * abs(fd)


def test_ssim_gradient_2d_shape():
    rng = np.random.default_rng(7)
    x = rng.random((8, 8))
    y = rng.random((8, 8))
    _, grad = ssim(x, y, return_grad=True)
    assert grad.shape == (8, 8)


def test_quality_metrics():
    rng = np.random.default_rng(8)
    x = rng.random((12, 12, 3))
    y = np.clip(x + 0.01, 0, 1)
    p, s = quality_metrics(x, y)
    assert p == psnr(x, y)
    assert s == ssim(x, y)
