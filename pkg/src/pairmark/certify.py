"""Certified robustness of the pixel-domain read-out against bounded noise.

For pair j let delta_j = |x_a - x_b| / 2. An additive perturbation with
max-norm strictly below delta_j cannot change that pair's sign, because
the two ends move at most delta_j each while the gap is 2*delta_j. Since
all pair indices are distinct, the bound is per-pair independent: with the
deltas sorted ascending, any perturbation with max-norm below the k-th
smallest delta flips fewer than k bits, and an adversary that spends the
whole budget closing each gap achieves exactly the count of deltas it
covers, so the bound is tight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import Bits, as_bits
from .extraction import extract_bits


@dataclass(frozen=True)
class DeltaProfile:
    """Half-gaps sorted ascending; pair_order[k] is the source pair of deltas[k]."""

    deltas: np.ndarray
    pair_order: np.ndarray

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=np.float64)
        order = np.asarray(self.pair_order, dtype=np.int64)
        if deltas.ndim != 1 or deltas.shape != order.shape or deltas.size == 0:
            raise ValueError("deltas and pair_order must be equal-length 1-D arrays")
        if np.any(np.diff(deltas) < 0):
            raise ValueError("deltas must be sorted ascending")
        if np.any(deltas < 0):
            raise ValueError("deltas must be non-negative")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "pair_order", order)


@dataclass(frozen=True)
class Certificate:
    budget: float
    max_flips_exclusive: int


def delta_profile(x: np.ndarray, pairs: np.ndarray) -> DeltaProfile:
    """Sorted half-gaps of the image's pair values (stable order on ties)."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
        raise ValueError("pairs must be a non-empty (n, 2) index array")
    if pairs.min() < 0 or pairs.max() >= flat.size:
        raise ValueError(f"pair index out of range for {flat.size} values")
    deltas = np.abs(flat[pairs[:, 0]] - flat[pairs[:, 1]]) / 2.0
    order = np.argsort(deltas, kind="stable")
    return DeltaProfile(deltas=deltas[order], pair_order=order)


def certified_bits(profile: DeltaProfile, budget: float) -> int:
    """Smallest k with budget < k-th smallest delta: fewer than k bits can flip.

    Returns n + 1 when the budget reaches every delta (no guarantee left).
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    return int(np.searchsorted(profile.deltas, budget, side="right")) + 1


def worst_case_adversary(
    x: np.ndarray, pairs: np.ndarray, bits: Bits, budget: float
) -> Tuple[np.ndarray, int]:
    """Spend the whole budget closing every gap; returns (perturbed image, flips).

    Each pair end moves budget toward the other end, the strongest move a
    max-norm-bounded adversary has against a single pair. Flips are counted
    against the image's own read-out before perturbation.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel().copy()
    pairs = np.asarray(pairs, dtype=np.int64)
    bits = as_bits(bits)
    if bits.size != pairs.shape[0]:
        raise ValueError(f"{bits.size} bits vs {pairs.shape[0]} pairs")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    before = extract_bits(flat, pairs)
    direction = np.sign(flat[pairs[:, 0]] - flat[pairs[:, 1]])
    flat[pairs[:, 0]] -= direction * budget
    flat[pairs[:, 1]] += direction * budget
    perturbed = np.clip(flat.reshape(x.shape), 0.0, 1.0)
    after = extract_bits(perturbed, pairs)
    flips = int(np.count_nonzero(before != after))
    return perturbed, flips
