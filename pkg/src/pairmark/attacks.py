"""Image-level attacks and the white-box gradient attack.

Supported kinds and their sampled parameters (fixed values can be given in
``params`` instead):

  brightness    b ~ U[-20, 20] / 255, added
  contrast_pos  c ~ U[0.5, 2], multiplied
  contrast_neg  c ~ U[-2, -0.5], multiplied (flips every comparison)
  gamma         g ~ U[0.5, 2], power on non-negative values
  sharpness     blur + a*(x - blur), a = 2, 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]]/13
  hue           hue angle shifted by 0.2 rad
  saturation    HSV saturation scaled by 2, clipped
  noise         additive U[-25, 25] / 255
  jpeg          codec round trip at quality 50
  rotation      theta ~ U[-10, 10] degrees about the center, bilinear, edge fill
  translation   integer shift, each offset ~ U{-10..10}, edge fill

Every attack ends with a per-channel renormalization to [0, 1], so plain
value shifts and rescalings cancel out instead of clipping information
away.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import convolve

from .core import Bits, as_bits, as_image
from .embedding import wm_hinge_loss
from .transforms import rotate_about_center

ATTACK_KINDS = (
    "brightness",
    "contrast_pos",
    "contrast_neg",
    "gamma",
    "sharpness",
    "hue",
    "saturation",
    "noise",
    "jpeg",
    "rotation",
    "translation",
)

_SHARPEN_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params, "seed": self.seed})

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        doc = json.loads(text)
        return cls(
            kind=doc["kind"], params=doc.get("params", {}), seed=int(doc.get("seed", 0))
        )


def renormalize(x: np.ndarray) -> np.ndarray:
    """Map each channel affinely onto [0, 1]; constant channels pass through."""
    x = as_image(x, copy=True)
    for c in range(x.shape[2]):
        lo = x[:, :, c].min()
        hi = x[:, :, c].max()
        if hi > lo:
            x[:, :, c] = (x[:, :, c] - lo) / (hi - lo)
    return x


def _rgb_to_hsv(x):
    r, g, b = x[:, :, 0], x[:, :, 1], x[:, :, 2]
    maxc = np.max(x, axis=2)
    minc = np.min(x, axis=2)
    spread = maxc - minc
    sat = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    hue = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    hue = np.where(spread > 0, (hue / 6.0) % 1.0, 0.0)
    return hue, sat, maxc


def _hsv_to_rgb(hue, sat, val):
    i = np.floor(hue * 6.0)
    f = hue * 6.0 - i
    p = val * (1.0 - sat)
    q = val * (1.0 - sat * f)
    t = val * (1.0 - sat * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        (val, t, p),
        (q, val, p),
        (p, val, t),
        (p, q, val),
        (t, p, val),
        (val, p, q),
    ]
    out = np.empty(hue.shape + (3,))
    for ch in range(3):
        out[:, :, ch] = np.select([i == k for k in range(6)], [c[ch] for c in choices])
    return out


def _jpeg_round_trip(x: np.ndarray, quality: int) -> np.ndarray:
    arr = np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)
    mode = "RGB" if arr.shape[2] == 3 else "L"
    img = PILImage.fromarray(arr[:, :, 0] if mode == "L" else arr, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    back = np.asarray(PILImage.open(buf).convert(mode), dtype=np.float64) / 255.0
    return back[:, :, None] if mode == "L" else back


def _translate(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = x.shape[:2]
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return x.copy()
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w]


def apply_attack(
    x: np.ndarray, spec: AttackSpec, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Run one attack on an image in [0, 1]; missing params are sampled from rng."""
    x = as_image(x)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    p = spec.params
    kind = spec.kind

    if kind == "brightness":
        b = p.get("b", rng.uniform(-20.0, 20.0) / 255.0)
        out = x + b
    elif kind == "contrast_pos":
        out = x * p.get("c", rng.uniform(0.5, 2.0))
    elif kind == "contrast_neg":
        out = x * p.get("c", rng.uniform(-2.0, -0.5))
    elif kind == "gamma":
        out = np.clip(x, 0.0, None) ** p.get("g", rng.uniform(0.5, 2.0))
    elif kind == "sharpness":
        a = p.get("a", 2.0)
        blur = np.stack(
            [convolve(x[:, :, c], _SHARPEN_KERNEL, mode="nearest") for c in range(x.shape[2])],
            axis=2,
        )
        out = blur + a * (x - blur)
    elif kind == "hue":
        if x.shape[2] != 3:
            raise ValueError("hue attack needs an RGB image")
        hue, sat, val = _rgb_to_hsv(np.clip(x, 0.0, 1.0))
        shift = p.get("shift", 0.2)
        out = _hsv_to_rgb((hue + shift / (2.0 * np.pi)) % 1.0, sat, val)
    elif kind == "saturation":
        if x.shape[2] != 3:
            raise ValueError("saturation attack needs an RGB image")
        hue, sat, val = _rgb_to_hsv(np.clip(x, 0.0, 1.0))
        out = _hsv_to_rgb(hue, np.clip(sat * p.get("a", 2.0), 0.0, 1.0), val)
    elif kind == "noise":
        delta = p.get("delta", 25.0 / 255.0)
        out = x + rng.uniform(-delta, delta, size=x.shape)
    elif kind == "jpeg":
        out = _jpeg_round_trip(x, int(p.get("quality", 50)))
    elif kind == "rotation":
        theta = p.get("theta", rng.uniform(-10.0, 10.0))
        out = rotate_about_center(x, theta)
    elif kind == "translation":
        dy = int(p.get("dy", rng.integers(-10, 11)))
        dx = int(p.get("dx", rng.integers(-10, 11)))
        out = _translate(x, dy, dx)
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return renormalize(out)


def pgd_attack(
    x: np.ndarray,
    pairs: np.ndarray,
    target: Bits,
    budget: float,
    iters: int = 10,
    lr: float = 0.1,
    margin: float = 0.2,
    lambda_wm: float = 0.9,
    lambda_qual: float = 150.0,
) -> np.ndarray:
    """White-box attack: steer the pair read-out toward ``target`` within an
    l-infinity ball of radius ``budget`` around x.

    Adam steps on the hinge toward the target bits plus an l2 anchor; the
    perturbation is re-projected onto the ball and the image clamped to
    [0, 1] after every step.
    """
    x = as_image(x, copy=True)
    pairs = np.asarray(pairs, dtype=np.int64)
    target = as_bits(target)
    if target.size != pairs.shape[0]:
        raise ValueError(f"{target.size} target bits vs {pairs.shape[0]} pairs")
    if budget < 0:
        raise ValueError("budget must be non-negative")

    adv = x.copy()
    m = np.zeros_like(adv)
    v = np.zeros_like(adv)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        flat = adv.ravel()
        diffs = flat[pairs[:, 0]] - flat[pairs[:, 1]]
        _, ddiff = wm_hinge_loss(diffs, target, margin)
        hinge = np.zeros(adv.size)
        hinge[pairs[:, 0]] = lambda_wm * ddiff
        hinge[pairs[:, 1]] = -lambda_wm * ddiff
        grad = lambda_qual * 2.0 * (adv - x) / adv.size + hinge.reshape(adv.shape)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad**2
        step = lr * (m / (1.0 - beta1**t)) / (np.sqrt(v / (1.0 - beta2**t)) + eps)
        adv = adv - step
        adv = x + np.clip(adv - x, -budget, budget)
        adv = np.clip(adv, 0.0, 1.0)
    return adv
