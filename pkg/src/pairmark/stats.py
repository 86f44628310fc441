"""False-positive accounting and image quality metrics.

Tail probabilities are exact binomial sums evaluated in log space and
accumulated with compensated summation, so threshold decisions never rest
on a normal approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve1d

from .core import as_bits, hamming_distance


def _log_pmf(n: int, q: int, p: float) -> float:
    log_comb = math.lgamma(n + 1) - math.lgamma(q + 1) - math.lgamma(n - q + 1)
    return log_comb + q * math.log(p) + (n - q) * math.log1p(-p)


def two_tail_prob(n: int, p: float, tau1: int, tau2: int) -> float:
    """P[X <= tau1 or X >= tau2] for X ~ Binomial(n, p), summed exactly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if not (0 <= tau1 < tau2 <= n):
        raise ValueError(f"need 0 <= tau1 < tau2 <= n, got ({tau1}, {tau2}) with n={n}")
    terms = [math.exp(_log_pmf(n, q, p)) for q in range(0, tau1 + 1)]
    terms += [math.exp(_log_pmf(n, q, p)) for q in range(tau2, n + 1)]
    return min(1.0, math.fsum(terms))


def fpr_union(per_user: Sequence[float]) -> float:
    """Union bound over users: sum of per-user false-positive rates, capped at 1."""
    vals = list(per_user)
    if any(v < 0 for v in vals):
        raise ValueError("rates must be non-negative")
    return min(1.0, math.fsum(vals))


def fpr3_bound(p_hat: float) -> float:
    """Union bound over three comparison domains."""
    if p_hat < 0:
        raise ValueError("rate must be non-negative")
    return min(1.0, 3.0 * p_hat)


@dataclass(frozen=True)
class FprReport:
    n: int
    m: int
    tau1: int
    tau2: int
    per_user_two_tail: float
    union_bound_m: float
    union_bound_3m: float


def fpr_report(n: int, p: float, tau1: int, tau2: int, m: int) -> FprReport:
    """Per-user two-tail rate plus union bounds over m users and 3 domains."""
    if m < 1:
        raise ValueError("m must be >= 1")
    per_user = two_tail_prob(n, p, tau1, tau2)
    union_m = fpr_union([per_user] * m)
    return FprReport(
        n=n,
        m=m,
        tau1=tau1,
        tau2=tau2,
        per_user_two_tail=per_user,
        union_bound_m=union_m,
        union_bound_3m=fpr3_bound(union_m),
    )


def solve_thresholds(
    n: int, p: float, m: int, target_fpr: float, domains: int = 1
) -> Optional[Tuple[int, int]]:
    """Widest symmetric thresholds (tau1, n - tau1) with domains*m*two_tail <= target.

    Returns the maximal tau1, or None when even (0, n) overshoots the target.
    """
    if m < 1 or domains < 1:
        raise ValueError("m and domains must be >= 1")
    if target_fpr <= 0:
        raise ValueError("target_fpr must be positive")
    for tau1 in range((n - 1) // 2, -1, -1):
        bound = domains * m * two_tail_prob(n, p, tau1, n - tau1)
        if bound <= target_fpr:
            return (tau1, n - tau1)
    return None


def abwe(truths: Sequence, extracted: Sequence) -> float:
    """Average bitwise error across (truth, extracted) bit string pairs."""
    truths = list(truths)
    extracted = list(extracted)
    if not truths or len(truths) != len(extracted):
        raise ValueError("need equal, non-empty lists of bit strings")
    total = 0.0
    for t, e in zip(truths, extracted):
        t = as_bits(t)
        total += hamming_distance(t, e) / t.size
    return total / len(truths)


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; inf when identical."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * math.log10(mse)


# 11x11 Gaussian window (sigma 1.5) and unit-range stability constants.
_SSIM_RADIUS = 5
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _ssim_kernel() -> np.ndarray:
    t = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def _blur(plane: np.ndarray) -> np.ndarray:
    # Separable window, zero padding. The operator is symmetric, so it is
    # its own adjoint in the gradient below.
    k = _ssim_kernel()
    out = convolve1d(plane, k, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, k, axis=1, mode="constant", cval=0.0)


def ssim(x: np.ndarray, y: np.ndarray, return_grad: bool = False):
    """Mean SSIM over full-size per-channel maps; optionally d(mssim)/dx.

    Windows are zero-padded at the borders, channels are averaged. Inputs
    are expected in [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    planes_x = x[:, :, None] if x.ndim == 2 else x
    planes_y = y[:, :, None] if y.ndim == 2 else y
    if planes_x.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D input, got shape {x.shape}")

    total = 0.0
    grad = np.zeros_like(planes_x) if return_grad else None
    n_values = planes_x.size
    for ch in range(planes_x.shape[2]):
        xc = planes_x[:, :, ch]
        yc = planes_y[:, :, ch]
        mu_x = _blur(xc)
        mu_y = _blur(yc)
        var_x = _blur(xc * xc) - mu_x**2
        var_y = _blur(yc * yc) - mu_y**2
        cov = _blur(xc * yc) - mu_x * mu_y
        a1 = 2.0 * mu_x * mu_y + _SSIM_C1
        a2 = 2.0 * cov + _SSIM_C2
        b1 = mu_x**2 + mu_y**2 + _SSIM_C1
        b2 = var_x + var_y + _SSIM_C2
        s_map = (a1 * a2) / (b1 * b2)
        total += float(s_map.sum())
        if not return_grad:
            continue
        # Backprop s_map -> (mu_x, var_x, cov) -> x, one term per forward step.
        d_s = np.full_like(s_map, 1.0 / n_values)
        d_a1 = d_s * a2 / (b1 * b2)
        d_a2 = d_s * a1 / (b1 * b2)
        d_b1 = -d_s * s_map / b1
        d_b2 = -d_s * s_map / b2
        d_cov = 2.0 * d_a2
        d_var_x = d_b2
        d_mu_x = 2.0 * mu_y * d_a1 + 2.0 * mu_x * d_b1 - 2.0 * mu_x * d_var_x - mu_y * d_cov
        grad[:, :, ch] = _blur(d_mu_x) + 2.0 * xc * _blur(d_var_x) + yc * _blur(d_cov)

    mssim = total / n_values
    if not return_grad:
        return mssim
    return mssim, (grad[:, :, 0] if x.ndim == 2 else grad)


def quality_metrics(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """(psnr_db, mean_ssim) of x against reference y."""
    return psnr(x, y), ssim(x, y)
