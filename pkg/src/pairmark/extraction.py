"""Blind extraction, attribution, and detection.

A bit reads 0 when the pair's first value is at least the second, else 1;
ties count as 0. Any strictly increasing map applied to all values leaves
the read-out unchanged, and a strictly decreasing one flips every bit,
which is why attribution also watches the upper tail of the hamming
distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .core import Bits, DetectionPolicy, Registry, as_image, _freeze
from .transforms import default_grid, fft_magnitude, fourier_mellin, luminance

DOMAIN_ORDER = ("pixel", "freq", "mellin")


def extract_bits(values: np.ndarray, pairs: np.ndarray) -> Bits:
    """Read one bit per pair from the flattened value array."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (n, 2) index array")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= flat.size):
        raise ValueError(f"pair index out of range for {flat.size} values")
    bits = (flat[pairs[:, 0]] < flat[pairs[:, 1]]).astype(np.uint8)
    return _freeze(bits)


def double_tail_indicator(distance: int, n: int, policy: DetectionPolicy) -> bool:
    """True when the distance falls in [0, tau1] or [tau2, n]."""
    if not 0 <= distance <= n:
        raise ValueError(f"distance {distance} outside [0, {n}]")
    if policy.tau2 > n:
        raise ValueError(f"tau2 {policy.tau2} exceeds n {n}")
    return distance <= policy.tau1 or distance >= policy.tau2


@dataclass(frozen=True)
class AttributionResult:
    """Best-scoring user whose two-tail indicator fired, if any.

    ``distance`` is the winner's hamming distance (or the best observed one
    when nobody matched); ``inverted`` marks an upper-tail match.
    """

    matched_user: Optional[str]
    domain: str
    distance: int
    inverted: bool


def _domain_values(x: np.ndarray, domain: str) -> np.ndarray:
    if domain == "pixel":
        return x
    lum = luminance(x)
    if domain == "freq":
        return fft_magnitude(lum)
    if domain == "mellin":
        return fourier_mellin(lum, default_grid(*lum.shape))
    raise ValueError(f"unknown domain {domain!r}")


def _best_candidate(values, reg: Registry, policy: DetectionPolicy, domain: str):
    """(score, user_index, distance) of the best two-tail hit, plus best distance overall."""
    n = reg.n_bits
    best = None
    best_distance = None
    for idx, user in enumerate(reg.users):
        pairs = user.secret.pairs_for(domain)
        extracted = extract_bits(values, pairs)
        d = int(np.count_nonzero(extracted != user.watermark))
        score = min(d, n - d)
        if best_distance is None or score < min(best_distance, n - best_distance):
            best_distance = d
        if double_tail_indicator(d, n, policy) and (best is None or (score, idx) < best[:2]):
            best = (score, idx, d)
    return best, best_distance


def attribute(x: np.ndarray, reg: Registry, policy: DetectionPolicy) -> AttributionResult:
    """Pixel-domain attribution against every registered user."""
    x = as_image(x)
    if not reg.users:
        return AttributionResult(matched_user=None, domain="pixel", distance=0, inverted=False)
    best, best_distance = _best_candidate(x, reg, policy, "pixel")
    if best is None:
        return AttributionResult(
            matched_user=None, domain="pixel", distance=best_distance, inverted=False
        )
    _, idx, d = best
    return AttributionResult(
        matched_user=reg.users[idx].user_id,
        domain="pixel",
        distance=d,
        inverted=d >= policy.tau2,
    )


def attribute3(x: np.ndarray, reg: Registry, policy: DetectionPolicy) -> AttributionResult:
    """Attribution across pixel, freq, and mellin domains; best score wins.

    Every registered user must carry pairs for all three domains.
    """
    x = as_image(x)
    for user in reg.users:
        if user.secret.freq_pairs is None or user.secret.mellin_pairs is None:
            raise ValueError(f"user {user.user_id} lacks freq/mellin pairs")
    if not reg.users:
        return AttributionResult(matched_user=None, domain="pixel", distance=0, inverted=False)

    winner = None
    fallback_distance = 0
    for rank, domain in enumerate(DOMAIN_ORDER):
        values = _domain_values(x, domain)
        best, best_distance = _best_candidate(values, reg, policy, domain)
        if domain == "pixel":
            fallback_distance = best_distance
        if best is not None:
            score, idx, d = best
            if winner is None or (score, rank, idx) < winner[:3]:
                winner = (score, rank, idx, d, domain)
    if winner is None:
        return AttributionResult(
            matched_user=None, domain="pixel", distance=fallback_distance, inverted=False
        )
    _, _, idx, d, domain = winner
    return AttributionResult(
        matched_user=reg.users[idx].user_id,
        domain=domain,
        distance=d,
        inverted=d >= policy.tau2,
    )


def detect(x: np.ndarray, reg: Registry, policy: DetectionPolicy) -> bool:
    """True when any registered watermark matches; empty registries never match."""
    if not reg.users:
        return False
    triple = all(
        u.secret.freq_pairs is not None and u.secret.mellin_pairs is not None for u in reg.users
    )
    result = attribute3(x, reg, policy) if triple else attribute(x, reg, policy)
    return result.matched_user is not None
