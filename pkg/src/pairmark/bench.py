"""Procedural corpus generation and the attack benchmark."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import AttackSpec, apply_attack
from .certify import delta_profile
from .core import DetectionPolicy, Registry
from .embedding import EmbedConfig, _interp_matrix, embed
from .extraction import attribute, attribute3, extract_bits, _domain_values
from .keygen import load_registry
from .stats import abwe, fpr_report, psnr, solve_thresholds, ssim

ENV_THREADS = "STA_THREADS"


def _upsample(grid: np.ndarray, size: int) -> np.ndarray:
    rows = _interp_matrix(size, grid.shape[0])
    cols = _interp_matrix(size, grid.shape[1])
    return np.einsum("ih,hwc,jw->ijc", rows, grid, cols, optimize=True)


def _texture(rng, size):
    out = np.zeros((size, size, 3))
    for cells, weight in ((4, 1.0), (9, 0.5), (17, 0.25)):
        out += weight * _upsample(rng.random((cells, cells, 3)), size)
    return out


def _gradients(rng, size):
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    out = np.empty((size, size, 3))
    for c in range(3):
        a, b = rng.uniform(-1, 1, size=2)
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        sigma = rng.uniform(0.2, 0.6)
        blob = rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        out[:, :, c] = a * yy + b * xx + blob
    return out


def _shapes(rng, size):
    out = _gradients(rng, size) * 0.4
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        # Soft-edged ellipse so the content stays band-limited.
        dist = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        mask = 1.0 / (1.0 + np.exp(np.clip((dist - 1.0) * 12.0, -60.0, 60.0)))
        color = rng.random(3)
        out = out * (1 - mask[:, :, None]) + mask[:, :, None] * color[None, None, :]
    return out


def generate_corpus(count: int, size: int, seed: int) -> List[np.ndarray]:
    """Deterministic RGB test images: textures, gradients, and soft shapes.

    Each channel is affinely stretched to nearly the full [0, 1] range, so
    the per-channel value spread is always at least 0.9.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    makers = (_texture, _gradients, _shapes)
    images = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        img = makers[i % len(makers)](rng, size)
        for c in range(3):
            lo_t = rng.uniform(0.0, 0.04)
            hi_t = rng.uniform(0.96, 1.0)
            plane = img[:, :, c]
            lo, hi = plane.min(), plane.max()
            if hi > lo:
                plane = (plane - lo) / (hi - lo)
            img[:, :, c] = lo_t + plane * (hi_t - lo_t)
        images.append(img)
    return images


@dataclass(frozen=True)
class BenchConfig:
    registry_path: Optional[str] = None
    registry: Optional[Registry] = None
    corpus_dir: Optional[str] = None
    corpus_count: int = 20
    corpus_size: int = 64
    corpus_seed: int = 7
    attacks: Tuple[AttackSpec, ...] = ()
    target_fpr: float = 1e-6
    policy: Optional[DetectionPolicy] = None
    domains: Tuple[str, ...] = ("pixel",)
    embed_cfg: Optional[EmbedConfig] = None
    output_prefix: Optional[str] = None

    @classmethod
    def from_json(cls, path: str) -> "BenchConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ValueError(
                    f"bench config: parse error at line {err.lineno} column {err.colno}: {err.msg}"
                ) from err
        corpus = doc.get("corpus", {})
        policy = None
        if "policy" in doc:
            policy = DetectionPolicy(
                tau1=int(doc["policy"]["tau1"]),
                tau2=int(doc["policy"]["tau2"]),
                p_null=float(doc["policy"].get("p_null", 0.5)),
            )
        attacks = tuple(
            AttackSpec(
                kind=a["kind"], params=a.get("params", {}), seed=int(a.get("seed", 0))
            )
            for a in doc.get("attacks", [])
        )
        return cls(
            registry_path=doc.get("registry"),
            corpus_dir=corpus.get("dir"),
            corpus_count=int(corpus.get("count", 20)),
            corpus_size=int(corpus.get("size", 64)),
            corpus_seed=int(corpus.get("seed", 7)),
            attacks=attacks,
            target_fpr=float(doc.get("target_fpr", 1e-6)),
            policy=policy,
            domains=tuple(doc.get("domains", ["pixel"])),
            output_prefix=doc.get("output"),
        )


@dataclass
class BenchReport:
    policy: DetectionPolicy
    n_images: int
    n_embedded_ok: int
    rows: List[Dict]
    fpr: Dict

    def write(self, prefix: str) -> None:
        doc = {
            "policy": {"tau1": self.policy.tau1, "tau2": self.policy.tau2},
            "n_images": self.n_images,
            "n_embedded_ok": self.n_embedded_ok,
            "fpr": self.fpr,
            "rows": self.rows,
        }
        with open(prefix + ".json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        with open(prefix + ".csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attack", "abwe", "tpr_attr", "tpr_det", "psnr", "ssim", "cert_budget"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["attack"],
                        f"{row['abwe']:.6f}",
                        f"{row['tpr_attr']:.4f}",
                        f"{row['tpr_det']:.4f}",
                        f"{row['psnr']:.3f}",
                        f"{row['ssim']:.5f}",
                        f"{row['cert_budget']:.6f}",
                    ]
                )


def _load_corpus_dir(path: str) -> List[np.ndarray]:
    from .cli import read_image

    names = sorted(f for f in os.listdir(path) if f.lower().endswith(".png"))
    if not names:
        raise ValueError(f"no .png files under {path}")
    return [read_image(os.path.join(path, name)) for name in names]


def _worker_count() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}")


def _min_domain_error(x_att, user, domains) -> float:
    errors = []
    for domain in domains:
        values = _domain_values(x_att, domain)
        extracted = extract_bits(values, user.secret.pairs_for(domain))
        errors.append(np.count_nonzero(extracted != user.watermark) / user.watermark.size)
    return min(errors)


def run_benchmark(cfg: BenchConfig) -> BenchReport:
    """Embed over the corpus, run the attack grid, aggregate per-attack rows."""
    reg = cfg.registry if cfg.registry is not None else load_registry(cfg.registry_path)
    if not reg.users:
        raise ValueError("benchmark needs at least one registered user")
    triple = len(cfg.domains) == 3
    policy = cfg.policy
    if policy is None:
        solved = solve_thresholds(
            reg.n_bits, 0.5, len(reg.users), cfg.target_fpr, domains=3 if triple else 1
        )
        if solved is None:
            raise ValueError(f"target FPR {cfg.target_fpr} unachievable for n={reg.n_bits}")
        policy = DetectionPolicy(tau1=solved[0], tau2=solved[1])

    if cfg.corpus_dir is not None:
        corpus = _load_corpus_dir(cfg.corpus_dir)
    else:
        corpus = generate_corpus(cfg.corpus_count, cfg.corpus_size, cfg.corpus_seed)
    embed_cfg = cfg.embed_cfg or EmbedConfig(domains=cfg.domains)

    def embed_one(item):
        idx, x0 = item
        user = reg.users[idx % len(reg.users)]
        x_wm, report = embed(x0, user, embed_cfg)
        return x0, x_wm, report, user

    workers = _worker_count()
    items = list(enumerate(corpus))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            embedded = list(pool.map(embed_one, items))
    else:
        embedded = [embed_one(item) for item in items]

    cert_budget = float(
        np.mean([delta_profile(x_wm, u.secret.pixel_pairs).deltas[0] for _, x_wm, _, u in embedded])
    )
    attribute_fn = attribute3 if triple else attribute

    def make_row(name: str, attacked: Sequence[np.ndarray], reference: Sequence[np.ndarray]):
        errors = []
        attr_hits = 0
        det_hits = 0
        psnrs = []
        ssims = []
        for (x0, x_wm, _, user), x_att, ref in zip(embedded, attacked, reference):
            errors.append(_min_domain_error(x_att, user, cfg.domains))
            result = attribute_fn(x_att, reg, policy)
            attr_hits += result.matched_user == user.user_id
            det_hits += result.matched_user is not None
            psnrs.append(min(psnr(x_att, ref), 99.0))
            ssims.append(ssim(x_att, ref))
        count = len(embedded)
        return {
            "attack": name,
            "abwe": float(np.mean(errors)),
            "tpr_attr": attr_hits / count,
            "tpr_det": det_hits / count,
            "psnr": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims)),
            "cert_budget": cert_budget,
        }

    originals = [x0 for x0, _, _, _ in embedded]
    marked = [x_wm for _, x_wm, _, _ in embedded]
    rows = [make_row("none", marked, originals)]
    for spec in cfg.attacks:
        attacked = [
            apply_attack(x_wm, spec, rng=np.random.default_rng([spec.seed, i]))
            for i, x_wm in enumerate(marked)
        ]
        rows.append(make_row(spec.kind, attacked, marked))

    fpr = fpr_report(reg.n_bits, 0.5, policy.tau1, policy.tau2, len(reg.users))
    report = BenchReport(
        policy=policy,
        n_images=len(corpus),
        n_embedded_ok=sum(r.success for _, _, r, _ in embedded),
        rows=rows,
        fpr=asdict(fpr),
    )
    if cfg.output_prefix:
        report.write(cfg.output_prefix)
    return report
