"""Gradient-based embedding of pairwise sign constraints.

The optimizer pushes each secret pair at least ``margin`` apart in the
direction its bit demands, while a quality term anchors the image to the
original. Spectrum-domain pairs get their own margins: the frequency
domain uses a wider raw-magnitude margin, and the log-polar domain hinges
on log magnitudes, since resampling noise there is relative on strong
bins and negligible in absolute terms on weak ones.

Optimization runs over carrier parameters: either the pixels themselves or
a coarse grid that is bilinearly upsampled, which confines the edit to
smooth low-frequency changes. Parameters are clipped to [0, 1] after every
step; since bilinear upsampling is a convex combination, the rendered
image always stays in range and the final clamp never moves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import stats
from .core import Bits, SecretKey, UserRecord, as_image
from .transforms import (
    LogPolarGrid,
    default_grid,
    fft_magnitude,
    fft_magnitude_vjp,
    log_polar,
    log_polar_vjp,
    luminance,
    luminance_vjp,
)

# Auto-balance cap: at a reference per-pair displacement of margin/2 the
# quality term may contribute at most this fraction of the starting
# watermark loss. Balancing the two terms exactly would let the quality
# pull hold pairs just short of the margin.
_BALANCE_FRACTION = 0.25

# Offset added before taking logs of log-polar spectrum magnitudes. Keeps the
# hinge's chain factor 1/(mag + offset) bounded on near-empty bins.
_MELLIN_LOG_OFFSET = 0.5

QUALITY_KINDS = ("l2", "gradient_l2", "ssim")
CARRIER_KINDS = ("identity", "smooth")


@dataclass(frozen=True)
class EmbedConfig:
    """Knobs for one embedding run.

    ``lambda_t`` / ``lambda_r`` weight the frequency and log-polar spectrum
    constraints; None means "same as lambda_wm" when the domain is enabled
    and 0 otherwise. ``margin_t`` is a raw magnitude margin; ``margin_r``
    is in log-magnitude units (a ratio between the pair's offset values).
    Hinges are optimized at margin * margin_boost but success is judged at
    the plain margin, so the quality pull cannot park pairs a hair short
    of it.
    """

    margin: float = 0.2
    margin_t: float = 0.5
    margin_r: float = 0.3
    lambda_wm: float = 0.9
    lambda_qual: float = 150.0
    lambda_t: Optional[float] = None
    lambda_r: Optional[float] = None
    steps: int = 700
    lr: float = 8e-3
    lr_halving_period: int = 100
    carrier: str = "identity"
    smooth_factor: int = 2
    quality: str = "l2"
    auto_balance: bool = True
    margin_boost: float = 1.05
    domains: Tuple[str, ...] = ("pixel",)

    def __post_init__(self):
        if self.margin <= 0 or self.margin_t <= 0 or self.margin_r <= 0:
            raise ValueError("margins must be positive")
        if self.steps < 1 or self.lr <= 0 or self.lr_halving_period < 1:
            raise ValueError("bad optimizer settings")
        if self.carrier not in CARRIER_KINDS:
            raise ValueError(f"unknown carrier {self.carrier!r}")
        if self.smooth_factor < 1:
            raise ValueError("smooth_factor must be >= 1")
        if self.quality not in QUALITY_KINDS:
            raise ValueError(f"unknown quality loss {self.quality!r}")
        if self.margin_boost < 1.0:
            raise ValueError("margin_boost must be >= 1")
        doms = tuple(self.domains)
        if "pixel" not in doms:
            raise ValueError("the pixel domain is mandatory")
        for d in doms:
            if d not in ("pixel", "freq", "mellin"):
                raise ValueError(f"unknown domain {d!r}")
        object.__setattr__(self, "domains", doms)

    def domain_weights(self) -> Dict[str, float]:
        out = {"pixel": self.lambda_wm}
        if "freq" in self.domains:
            out["freq"] = self.lambda_wm if self.lambda_t is None else self.lambda_t
        if "mellin" in self.domains:
            out["mellin"] = self.lambda_wm if self.lambda_r is None else self.lambda_r
        return out

    def domain_margins(self) -> Dict[str, float]:
        return {"pixel": self.margin, "freq": self.margin_t, "mellin": self.margin_r}


@dataclass(frozen=True)
class EmbedReport:
    success: bool
    iterations_run: int
    final_wm_loss: float
    satisfied_fraction: Dict[str, float]
    psnr_vs_original: float
    lambda_qual_effective: float
    clamp_slack: float


def wm_hinge_loss(diffs: np.ndarray, bits: Bits, margin: float) -> Tuple[float, np.ndarray]:
    """Sum of max(0, margin - s*diff) with s = +1 for bit 0, -1 for bit 1.

    Returns the loss and its gradient with respect to each diff.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    bits = np.asarray(bits)
    if diffs.shape != bits.shape:
        raise ValueError(f"{diffs.shape[0]} diffs vs {bits.shape[0]} bits")
    if margin <= 0:
        raise ValueError("margin must be positive")
    signs = 1.0 - 2.0 * bits
    violation = margin - signs * diffs
    active = violation > 0
    loss = float(violation[active].sum()) if active.any() else 0.0
    grad = np.where(active, -signs, 0.0)
    return loss, grad


def quality_loss(x: np.ndarray, x0: np.ndarray, kind: str) -> Tuple[float, np.ndarray]:
    """Distortion loss and its gradient with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x0.shape}")
    if kind == "l2":
        diff = x - x0
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    if kind == "gradient_l2":
        diff = x - x0
        loss = float(np.mean(diff**2))
        grad = 2.0 * diff / diff.size
        for axis in (0, 1):
            g = np.diff(x, axis=axis) - np.diff(x0, axis=axis)
            loss += float(np.mean(g**2))
            e = 2.0 * g / g.size
            head = [slice(None)] * x.ndim
            tail = [slice(None)] * x.ndim
            head[axis] = slice(1, None)
            tail[axis] = slice(None, -1)
            grad[tuple(head)] += e
            grad[tuple(tail)] -= e
        return loss, grad
    if kind == "ssim":
        mssim, g = stats.ssim(x, x0, return_grad=True)
        return 1.0 - mssim, -g
    raise ValueError(f"unknown quality loss {kind!r}")


# ---------------------------------------------------------------------------
# Carriers


@dataclass(frozen=True)
class _Carrier:
    init: Callable[[np.ndarray], np.ndarray]
    forward: Callable[[np.ndarray], np.ndarray]
    vjp: Callable[[np.ndarray], np.ndarray]


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    if n_in == 1:
        return np.ones((n_out, 1))
    u = np.linspace(0.0, n_in - 1.0, n_out)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, n_in - 2)
    frac = u - i0
    mat = np.zeros((n_out, n_in))
    mat[np.arange(n_out), i0] = 1.0 - frac
    mat[np.arange(n_out), i0 + 1] = frac
    return mat


def make_carrier(kind: str, shape: Tuple[int, int, int], factor: int = 2) -> _Carrier:
    if kind == "identity":
        return _Carrier(
            init=lambda x0: x0.copy(),
            forward=lambda theta: theta,
            vjp=lambda cot: cot,
        )
    if kind != "smooth":
        raise ValueError(f"unknown carrier {kind!r}")
    h, w, _ = shape
    hs = max(2, math.ceil(h / factor))
    ws = max(2, math.ceil(w / factor))
    row_m = _interp_matrix(h, hs)
    col_m = _interp_matrix(w, ws)
    row_p = np.linalg.pinv(row_m)
    col_p = np.linalg.pinv(col_m)

    def init(x0):
        # Least-squares fit of the coarse grid to the original image.
        return np.clip(np.einsum("ph,hwc,qw->pqc", row_p, x0, col_p, optimize=True), 0.0, 1.0)

    def forward(theta):
        return np.einsum("ih,hwc,jw->ijc", row_m, theta, col_m, optimize=True)

    def vjp(cot):
        return np.einsum("ih,ijc,jw->hwc", row_m, cot, col_m, optimize=True)

    return _Carrier(init=init, forward=forward, vjp=vjp)


# ---------------------------------------------------------------------------
# Combined objective


@dataclass
class _Eval:
    loss: float
    grad_theta: np.ndarray
    qual: float
    wm_weighted: float
    wm_opt: Dict[str, float]
    wm_ref: Dict[str, float]
    satisfied: Dict[str, float]

    @property
    def wm_at_margin(self) -> float:
        return sum(self.wm_ref.values())


def _pair_hinge(flat, pairs, bits, opt_margin, success_margin):
    """Hinge at the optimization margin plus bookkeeping at the success margin."""
    diffs = flat[pairs[:, 0]] - flat[pairs[:, 1]]
    loss, ddiff = wm_hinge_loss(diffs, bits, opt_margin)
    loss_ref, _ = wm_hinge_loss(diffs, bits, success_margin)
    signs = 1.0 - 2.0 * np.asarray(bits)
    sat = float(np.mean(signs * diffs >= success_margin * (1.0 - 1e-9)))
    return loss, loss_ref, sat, ddiff


def _scatter_pairs(size, pairs, ddiff):
    cot = np.zeros(size)
    cot[pairs[:, 0]] = ddiff
    cot[pairs[:, 1]] = -ddiff
    return cot


def _evaluate(theta, x0, secret: SecretKey, bits, cfg: EmbedConfig, carrier: _Carrier,
              grid: Optional[LogPolarGrid], lambda_qual_eff: float,
              margin_scale: float = 1.0) -> _Eval:
    x = carrier.forward(theta)
    qual, qual_grad = quality_loss(x, x0, cfg.quality)
    grad_x = lambda_qual_eff * qual_grad
    weights = cfg.domain_weights()
    margins = cfg.domain_margins()

    wm_opt: Dict[str, float] = {}
    wm_ref: Dict[str, float] = {}
    satisfied: Dict[str, float] = {}

    pairs = secret.pixel_pairs
    loss_px, loss_px_ref, sat_px, ddiff = _pair_hinge(
        x.ravel(), pairs, bits, margins["pixel"] * margin_scale, margins["pixel"]
    )
    wm_opt["pixel"] = loss_px
    wm_ref["pixel"] = loss_px_ref
    satisfied["pixel"] = sat_px
    # Scatter into a fresh buffer: mutating grad_x through ravel() would be a
    # no-op whenever the quality gradient comes back non-contiguous.
    grad_x = grad_x + weights["pixel"] * _scatter_pairs(x.size, pairs, ddiff).reshape(x.shape)

    if "freq" in cfg.domains or "mellin" in cfg.domains:
        lum = luminance(x)
        lum_cot = np.zeros_like(lum)
        if "freq" in cfg.domains:
            mag = fft_magnitude(lum)
            pairs = secret.freq_pairs
            loss_t, loss_t_ref, sat_t, ddiff = _pair_hinge(
                mag.ravel(), pairs, bits, margins["freq"] * margin_scale, margins["freq"]
            )
            wm_opt["freq"] = loss_t
            wm_ref["freq"] = loss_t_ref
            satisfied["freq"] = sat_t
            cot = _scatter_pairs(mag.size, pairs, ddiff).reshape(mag.shape)
            lum_cot += weights["freq"] * fft_magnitude_vjp(lum, cot)
        if "mellin" in cfg.domains:
            resampled = log_polar(lum, grid)
            mag = fft_magnitude(resampled)
            # Hinge on log(mag + offset): rotation noise is relative on large
            # bins and tiny in absolute terms on small ones, so a log-scale
            # margin covers both. Log is monotone, so extraction is unchanged.
            vals = np.log(mag + _MELLIN_LOG_OFFSET)
            pairs = secret.mellin_pairs
            loss_r, loss_r_ref, sat_r, ddiff = _pair_hinge(
                vals.ravel(), pairs, bits, margins["mellin"] * margin_scale, margins["mellin"]
            )
            wm_opt["mellin"] = loss_r
            wm_ref["mellin"] = loss_r_ref
            satisfied["mellin"] = sat_r
            cot = _scatter_pairs(vals.size, pairs, ddiff).reshape(mag.shape)
            cot /= mag + _MELLIN_LOG_OFFSET
            lum_cot += weights["mellin"] * log_polar_vjp(
                lum, grid, fft_magnitude_vjp(resampled, cot)
            )
        grad_x += luminance_vjp(x, lum_cot)

    wm_weighted = sum(weights[d] * wm_opt[d] for d in wm_opt)
    total = wm_weighted + lambda_qual_eff * qual
    return _Eval(
        loss=total,
        grad_theta=carrier.vjp(grad_x),
        qual=qual,
        wm_weighted=wm_weighted,
        wm_opt=wm_opt,
        wm_ref=wm_ref,
        satisfied=satisfied,
    )


def total_loss(theta: np.ndarray, x0: np.ndarray, user: UserRecord,
               cfg: EmbedConfig = EmbedConfig()) -> Tuple[float, np.ndarray]:
    """Full objective and its gradient with respect to the carrier parameters."""
    x0 = as_image(x0)
    _check_compatible(x0, user.secret, cfg)
    carrier = make_carrier(cfg.carrier, x0.shape, cfg.smooth_factor)
    grid = default_grid(*x0.shape[:2]) if "mellin" in cfg.domains else None
    ev = _evaluate(theta, x0, user.secret, user.watermark, cfg, carrier, grid, cfg.lambda_qual)
    return ev.loss, ev.grad_theta


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizeResult:
    theta: np.ndarray
    iterations: int
    final_loss: float


def optimize(loss_fn, theta0: np.ndarray, cfg: EmbedConfig = EmbedConfig(),
             project=None) -> OptimizeResult:
    """Adam (beta 0.9/0.999, eps 1e-8) with the learning rate halved on a schedule.

    ``loss_fn(theta)`` returns (loss, grad) or (loss, grad, exit_metric); the
    loop stops as soon as the metric reaches 0. The run is deterministic and
    aborts on a non-finite loss.
    """
    theta = np.array(theta0, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    iterations = 0
    out = loss_fn(theta)
    loss, grad = out[0], out[1]
    metric = out[2] if len(out) > 2 else None
    for t in range(1, cfg.steps + 1):
        if metric is not None and metric <= 0.0:
            break
        if not math.isfinite(loss):
            raise RuntimeError(f"non-finite loss {loss!r} at iteration {iterations}")
        lr = cfg.lr * 0.5 ** ((t - 1) // cfg.lr_halving_period)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad**2
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        if project is not None:
            theta = project(theta)
        iterations = t
        out = loss_fn(theta)
        loss, grad = out[0], out[1]
        metric = out[2] if len(out) > 2 else None
    if not math.isfinite(loss):
        raise RuntimeError(f"non-finite loss {loss!r} at iteration {iterations}")
    return OptimizeResult(theta=theta, iterations=iterations, final_loss=float(loss))


# ---------------------------------------------------------------------------
# Embedding entry point


def _check_compatible(x0, secret: SecretKey, cfg: EmbedConfig) -> None:
    if tuple(secret.image_shape) != x0.shape:
        raise ValueError(f"secret is for shape {secret.image_shape}, image is {x0.shape}")
    for d in cfg.domains:
        secret.pairs_for(d)  # raises when the domain has no pairs


def _reference_quality(x0, secret: SecretKey, bits, cfg: EmbedConfig) -> Tuple[float, float]:
    # Quality loss of the canonical edit: every pixel pair nudged apart by
    # margin/2 in its required direction. Returns the loss value and the
    # largest quality-gradient magnitude on a pair pixel at that point; both
    # set the scale for auto-balance.
    nudged = x0.copy().ravel()
    signs = 1.0 - 2.0 * np.asarray(bits)
    half = cfg.margin / 2.0
    nudged[secret.pixel_pairs[:, 0]] += signs * half
    nudged[secret.pixel_pairs[:, 1]] -= signs * half
    val, grad = quality_loss(nudged.reshape(x0.shape), x0, cfg.quality)
    g_pair = float(np.abs(grad.ravel()[secret.pixel_pairs]).max())
    return val, g_pair


def _smooth_prepass(x0, secret: SecretKey, bits, cfg: EmbedConfig,
                    grid: LogPolarGrid, lambda_qual_eff: float):
    """Satisfy the log-polar constraints through a coarse-grid carrier.

    Rotation resamples the image, which shreds single-pixel spikes but barely
    disturbs band-limited structure. Direct pixel optimization of the mellin
    hinge produces exactly such spikes, so this pass carries the mellin edits
    on a bilinearly upsampled grid first; the main pass then only maintains
    them. Returns the prepass image and the steps it took.
    """
    weights = cfg.domain_weights()
    pre_cfg = replace(
        cfg,
        carrier="smooth",
        domains=("pixel", "mellin"),
        lambda_wm=0.0,
        lambda_r=weights["mellin"],
    )
    carrier = make_carrier("smooth", x0.shape, cfg.smooth_factor)

    def loss_fn(theta):
        ev = _evaluate(theta, x0, secret, bits, pre_cfg, carrier, grid,
                       lambda_qual_eff, margin_scale=cfg.margin_boost)
        return ev.loss, ev.grad_theta, ev.wm_ref["mellin"]

    theta0 = np.clip(carrier.init(x0), 0.0, 1.0)
    result = optimize(loss_fn, theta0, pre_cfg, project=lambda th: np.clip(th, 0.0, 1.0))
    return np.clip(carrier.forward(result.theta), 0.0, 1.0), result.iterations


def embed(x0: np.ndarray, user: UserRecord, cfg: EmbedConfig = EmbedConfig()):
    """Embed the user's watermark into x0; returns (watermarked image, report).

    Success means every enabled domain holds every pair at the full margin
    on the final clamped image, i.e. extraction returns the exact watermark
    with room to spare. With the mellin domain enabled and the identity
    carrier, a smooth prepass runs first (see _smooth_prepass); its steps
    count toward iterations_run.
    """
    x0 = as_image(x0, copy=True)
    if x0.min() < -1e-9 or x0.max() > 1.0 + 1e-9:
        raise ValueError("embed expects pixels in [0, 1]")
    _check_compatible(x0, user.secret, cfg)

    carrier = make_carrier(cfg.carrier, x0.shape, cfg.smooth_factor)
    grid = default_grid(*x0.shape[:2]) if "mellin" in cfg.domains else None
    bits = user.watermark

    lambda_qual_eff = cfg.lambda_qual
    start = _evaluate(
        x0, x0, user.secret, bits, cfg, make_carrier("identity", x0.shape), grid,
        cfg.lambda_qual, margin_scale=cfg.margin_boost,
    )
    if cfg.auto_balance and start.wm_weighted > 0.0:
        q_ref, g_ref = _reference_quality(x0, user.secret, bits, cfg)
        if q_ref > 1e-12:
            cap = _BALANCE_FRACTION * start.wm_weighted / q_ref
            lambda_qual_eff = min(cfg.lambda_qual, cap)
        if g_ref > 1e-12:
            # The quality pull on a pair pixel must stay below the hinge
            # push, or pairs park short of the margin.
            cap = _BALANCE_FRACTION * cfg.lambda_wm / g_ref
            lambda_qual_eff = min(lambda_qual_eff, cap)

    prepass_iters = 0
    start_image = x0
    if "mellin" in cfg.domains and cfg.carrier == "identity":
        start_image, prepass_iters = _smooth_prepass(
            x0, user.secret, bits, cfg, grid, lambda_qual_eff
        )

    def loss_fn(theta):
        ev = _evaluate(
            theta, x0, user.secret, bits, cfg, carrier, grid, lambda_qual_eff,
            margin_scale=cfg.margin_boost,
        )
        return ev.loss, ev.grad_theta, ev.wm_at_margin

    theta0 = np.clip(carrier.init(start_image), 0.0, 1.0)
    result = optimize(loss_fn, theta0, cfg, project=lambda th: np.clip(th, 0.0, 1.0))

    x_wm = np.clip(carrier.forward(result.theta), 0.0, 1.0)
    final = _evaluate(
        x_wm, x0, user.secret, bits, cfg, make_carrier("identity", x0.shape), grid,
        lambda_qual_eff,
    )
    success = all(f >= 1.0 for f in final.satisfied.values())

    flat = x_wm.ravel()
    pairs = user.secret.pixel_pairs
    signs = 1.0 - 2.0 * np.asarray(bits)
    oriented = signs * (flat[pairs[:, 0]] - flat[pairs[:, 1]])
    clamp_slack = max(0.0, 1.0 - float(oriented.min()) / cfg.margin)

    report = EmbedReport(
        success=success,
        iterations_run=prepass_iters + result.iterations,
        final_wm_loss=final.wm_at_margin,
        satisfied_fraction=final.satisfied,
        psnr_vs_original=stats.psnr(x_wm, x0),
        lambda_qual_effective=lambda_qual_eff,
        clamp_slack=clamp_slack,
    )
    return x_wm, report
