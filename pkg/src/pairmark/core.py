"""Shared value types: bit strings, images, keys, registry, detection policy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Watermark bit strings are 1-D uint8 arrays with values in {0, 1}.
Bits = np.ndarray
# Images are (H, W, C) float64 arrays, C in {1, 3}, nominal range [0, 1].
Image = np.ndarray


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def as_bits(bits) -> Bits:
    """Coerce a 0/1 sequence or a '0101...' string to a validated bit array."""
    if isinstance(bits, str):
        raw = np.frombuffer(bits.encode("ascii"), dtype=np.uint8)
        arr = raw - np.uint8(ord("0"))
    else:
        arr = np.asarray(bits, dtype=np.uint8).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("bit string must be a non-empty 1-D sequence")
    if np.any(arr > 1):
        raise ValueError("bit string may only contain 0 and 1")
    return _freeze(arr)


def bits_to_str(bits: Bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits))


def hamming_distance(a: Bits, b: Bits) -> int:
    """Number of positions where the two bit strings differ."""
    a = as_bits(a)
    b = as_bits(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))


def complement(bits: Bits) -> Bits:
    """Flip every bit."""
    return _freeze(np.uint8(1) - as_bits(bits))


def as_image(x, copy: bool = False) -> Image:
    """Coerce to a (H, W, C) float64 image, C in {1, 3}. 2-D input gets a channel axis."""
    arr = np.array(x, dtype=np.float64, copy=copy) if copy else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) with C in {{1, 3}}, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"empty image: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def default_mellin_shape(height: int, width: int) -> Tuple[int, int]:
    """Grid shape of the log-polar resample used for the rotation-invariant domain."""
    side = min(height, width)
    return (side, side)


def conjugate_index(k: int, height: int, width: int) -> int:
    """Flat index of the spectrum bin whose value mirrors bin ``k`` for real input."""
    r, c = divmod(int(k), width)
    return ((-r) % height) * width + ((-c) % width)


def _check_pairs(pairs: np.ndarray, size: int, label: str) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
        raise ValueError(f"{label}: expected a non-empty (n, 2) index array")
    if pairs.min() < 0 or pairs.max() >= size:
        raise ValueError(f"{label}: index out of range for flat size {size}")
    flat = pairs.ravel()
    if np.unique(flat).size != flat.size:
        raise ValueError(f"{label}: the 2n indices must be distinct")
    return _freeze(pairs)


@dataclass(frozen=True)
class SecretKey:
    """Per-user pair lists; each list addresses one comparison domain.

    ``pixel_pairs`` index the flattened (H, W, C) image. ``freq_pairs`` index
    the flattened (H, W) luminance magnitude spectrum and must avoid the DC
    bin; no pair may join a bin with its mirror bin, whose magnitudes are
    identical for real input and therefore cannot satisfy any margin.
    ``mellin_pairs`` index the flattened spectrum of the log-polar resample
    under the same exclusions.
    """

    image_shape: Tuple[int, int, int]
    pixel_pairs: np.ndarray
    freq_pairs: Optional[np.ndarray] = None
    mellin_pairs: Optional[np.ndarray] = None

    def __post_init__(self):
        h, w, c = (int(v) for v in self.image_shape)
        if h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"bad image_shape {self.image_shape}")
        object.__setattr__(self, "image_shape", (h, w, c))
        object.__setattr__(
            self, "pixel_pairs", _check_pairs(self.pixel_pairs, h * w * c, "pixel_pairs")
        )
        if self.freq_pairs is not None:
            pairs = _check_pairs(self.freq_pairs, h * w, "freq_pairs")
            _check_spectrum_exclusions(pairs, h, w, "freq_pairs")
            object.__setattr__(self, "freq_pairs", pairs)
        if self.mellin_pairs is not None:
            mh, mw = default_mellin_shape(h, w)
            pairs = _check_pairs(self.mellin_pairs, mh * mw, "mellin_pairs")
            _check_spectrum_exclusions(pairs, mh, mw, "mellin_pairs")
            object.__setattr__(self, "mellin_pairs", pairs)

    @property
    def n_bits(self) -> int:
        return int(self.pixel_pairs.shape[0])

    def pairs_for(self, domain: str) -> np.ndarray:
        table = {"pixel": self.pixel_pairs, "freq": self.freq_pairs, "mellin": self.mellin_pairs}
        if domain not in table:
            raise ValueError(f"unknown domain {domain!r}")
        if table[domain] is None:
            raise ValueError(f"secret has no {domain} pairs")
        return table[domain]

    def domains(self) -> Tuple[str, ...]:
        out = ["pixel"]
        if self.freq_pairs is not None:
            out.append("freq")
        if self.mellin_pairs is not None:
            out.append("mellin")
        return tuple(out)


def _check_spectrum_exclusions(pairs: np.ndarray, h: int, w: int, label: str) -> None:
    if np.any(pairs == 0):
        raise ValueError(f"{label}: DC bin (index 0) is excluded")
    for a, b in pairs:
        if conjugate_index(a, h, w) == b:
            raise ValueError(f"{label}: pair ({a}, {b}) joins mirror bins")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    watermark: Bits
    secret: SecretKey

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        object.__setattr__(self, "watermark", as_bits(self.watermark))
        if self.watermark.size != self.secret.n_bits:
            raise ValueError(
                f"user {self.user_id}: watermark has {self.watermark.size} bits, "
                f"secret encodes {self.secret.n_bits}"
            )
        for dom in ("freq", "mellin"):
            pairs = getattr(self.secret, f"{dom}_pairs")
            if pairs is not None and pairs.shape[0] != self.watermark.size:
                raise ValueError(f"user {self.user_id}: {dom} pair count mismatch")


@dataclass(frozen=True)
class Registry:
    """Immutable user table; ``register_user`` returns an extended copy."""

    n_bits: int
    rng_seed: int
    users: Tuple[UserRecord, ...] = ()

    def __post_init__(self):
        if self.n_bits < 1:
            raise ValueError("n_bits must be >= 1")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate user ids in registry")
        for u in self.users:
            if u.watermark.size != self.n_bits:
                raise ValueError(f"user {u.user_id}: bit count differs from registry n_bits")

    def find(self, user_id: str) -> UserRecord:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise ValueError(f"unknown user {user_id!r}")


@dataclass(frozen=True)
class DetectionPolicy:
    """Two-tail decision thresholds on the pairwise-bit hamming distance.

    A distance d matches when d <= tau1 (direct) or d >= tau2 (inverted,
    e.g. after a sign-flipping attack).p_null is the per-bit match
    probability for unrelated content.
    """

    tau1: int
    tau2: int
    p_null: float = 0.5

    def __post_init__(self):
        if not 0 <= self.tau1 < self.tau2:
            raise ValueError(f"need 0 <= tau1 < tau2, got ({self.tau1}, {self.tau2})")
        if not 0.0 < self.p_null < 1.0:
            raise ValueError("p_null must lie strictly between 0 and 1")
