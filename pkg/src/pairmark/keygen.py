"""Key generation and registry persistence.

Watermarks are fair coin flips. Secrets are pair lists drawn without
replacement from each enabled domain's index grid, so no index is reused
within a domain. Each user is keyed by the registry seed plus their
insertion position, which keeps registration order-deterministic and
insensitive to other users' draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    Bits,
    Registry,
    SecretKey,
    UserRecord,
    as_bits,
    conjugate_index,
    default_mellin_shape,
)

REGISTRY_VERSION = 1
VALID_DOMAINS = ("pixel", "freq", "mellin")


@dataclass(frozen=True)
class KeygenConfig:
    n_bits: int = 100
    image_shape: Tuple[int, int, int] = (64, 64, 3)
    domains: Tuple[str, ...] = ("pixel",)
    seed: int = 0

    def __post_init__(self):
        if self.n_bits < 1:
            raise ValueError("n_bits must be >= 1")
        h, w, c = self.image_shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"bad image_shape {self.image_shape}")
        doms = tuple(self.domains)
        if "pixel" not in doms:
            raise ValueError("the pixel domain is mandatory")
        for d in doms:
            if d not in VALID_DOMAINS:
                raise ValueError(f"unknown domain {d!r}")
        object.__setattr__(self, "domains", doms)
        # Every addressed pool must supply 2n distinct indices, plus slack for
        # the per-pair mirror-bin exclusion in the spectrum domains.
        mh, mw = default_mellin_shape(h, w)
        pools = {
            "pixel": h * w * c,
            "freq": h * w - 1,
            "mellin": int(np.count_nonzero(_stable_spectrum_mask(mh, mw))),
        }
        slack = {"pixel": 0, "freq": 2, "mellin": 2}
        for d in doms:
            if 2 * self.n_bits + slack[d] > pools[d]:
                raise ValueError(
                    f"n_bits={self.n_bits} too large for {d} pool of {pools[d]} cells"
                )


def sample_watermark(cfg: KeygenConfig, rng: np.random.Generator) -> Bits:
    """Draw n_bits fair coin flips."""
    return as_bits(rng.integers(0, 2, size=cfg.n_bits, dtype=np.uint8))


def _sample_plain_pairs(rng, grid_size: int, n: int) -> np.ndarray:
    idx = rng.choice(grid_size, size=2 * n, replace=False)
    return idx.reshape(n, 2).astype(np.int64)


def _stable_spectrum_mask(h: int, w: int) -> np.ndarray:
    """Boolean mask of bins whose wrapped frequency index stays low on both axes.

    Resampling attacks (rotation especially) perturb high-frequency log-polar
    structure far more than low-frequency structure, so orientation-robust
    pairs are only drawn from this box. The 3x3 block around DC is excluded
    as well: those bins hold the bulk of typical image energy, and pinning a
    fixed ratio against one of them means fabricating or cancelling dominant
    structure.
    """
    cap_r = max(2, h // 8)
    cap_c = max(2, w // 8)
    fr = np.minimum(np.arange(h), h - np.arange(h))
    fc = np.minimum(np.arange(w), w - np.arange(w))
    low = (fr[:, None] <= cap_r) & (fc[None, :] <= cap_c)
    near_dc = (fr[:, None] <= 1) & (fc[None, :] <= 1)
    return (low & ~near_dc).ravel()


def _sample_spectrum_pairs(rng, h: int, w: int, n: int, pool_mask=None) -> np.ndarray:
    # Draw pair members one at a time so a partner can never be the DC bin
    # or the mirror bin of its mate (both would make the pair unsatisfiable).
    if pool_mask is None:
        available = np.ones(h * w, dtype=bool)
        available[0] = False
    else:
        available = pool_mask.copy()
    pairs = np.empty((n, 2), dtype=np.int64)
    for i in range(n):
        pool = np.flatnonzero(available)
        a = int(rng.choice(pool))
        available[a] = False
        mirror = conjugate_index(a, h, w)
        pool = np.flatnonzero(available)
        pool = pool[pool != mirror]
        if pool.size == 0:
            raise ValueError("spectrum grid exhausted while sampling pairs")
        b = int(rng.choice(pool))
        available[b] = False
        pairs[i] = (a, b)
    return pairs


def sample_secret(cfg: KeygenConfig, rng: np.random.Generator) -> SecretKey:
    """Draw one pair list per enabled domain, all indices distinct per domain."""
    h, w, c = cfg.image_shape
    pixel = _sample_plain_pairs(rng, h * w * c, cfg.n_bits)
    freq = _sample_spectrum_pairs(rng, h, w, cfg.n_bits) if "freq" in cfg.domains else None
    mellin = None
    if "mellin" in cfg.domains:
        mh, mw = default_mellin_shape(h, w)
        mask = _stable_spectrum_mask(mh, mw)
        mellin = _sample_spectrum_pairs(rng, mh, mw, cfg.n_bits, pool_mask=mask)
    return SecretKey(
        image_shape=cfg.image_shape, pixel_pairs=pixel, freq_pairs=freq, mellin_pairs=mellin
    )


def new_registry(cfg: KeygenConfig) -> Registry:
    return Registry(n_bits=cfg.n_bits, rng_seed=cfg.seed)


def register_user(reg: Registry, user_id: str, cfg: KeygenConfig) -> Registry:
    """Return a registry extended by one user with fresh watermark and secret."""
    if cfg.n_bits != reg.n_bits:
        raise ValueError(f"config n_bits {cfg.n_bits} != registry n_bits {reg.n_bits}")
    if any(u.user_id == user_id for u in reg.users):
        raise ValueError(f"user {user_id!r} already registered")
    rng = np.random.default_rng([reg.rng_seed, len(reg.users)])
    record = UserRecord(
        user_id=user_id, watermark=sample_watermark(cfg, rng), secret=sample_secret(cfg, rng)
    )
    return Registry(n_bits=reg.n_bits, rng_seed=reg.rng_seed, users=reg.users + (record,))


def _pairs_to_json(pairs: Optional[np.ndarray]):
    return None if pairs is None else [[int(a), int(b)] for a, b in pairs]


def persist_registry(reg: Registry, path: str) -> None:
    """Write the registry as JSON: version, n_bits, seed, users[].

    Each user carries user_id, watermark as a '0101...' string, and a secret
    with image_shape plus per-domain pair lists (freq/mellin optional).
    """
    users = []
    for u in reg.users:
        secret = {
            "image_shape": list(u.secret.image_shape),
            "pixel_pairs": _pairs_to_json(u.secret.pixel_pairs),
        }
        if u.secret.freq_pairs is not None:
            secret["freq_pairs"] = _pairs_to_json(u.secret.freq_pairs)
        if u.secret.mellin_pairs is not None:
            secret["mellin_pairs"] = _pairs_to_json(u.secret.mellin_pairs)
        users.append(
            {
                "user_id": u.user_id,
                "watermark": "".join(str(int(b)) for b in u.watermark),
                "secret": secret,
            }
        )
    doc = {"version": REGISTRY_VERSION, "n_bits": reg.n_bits, "seed": reg.rng_seed, "users": users}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ValueError(f"registry JSON: missing {key!r} in {where}")
    return doc[key]


def load_registry(path: str) -> Registry:
    """Parse and validate a registry JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(
                f"registry JSON: parse error at line {err.lineno} column {err.colno}: {err.msg}"
            ) from err
    if not isinstance(doc, dict):
        raise ValueError("registry JSON: top level must be an object")
    version = _require(doc, "version", "top level")
    if version != REGISTRY_VERSION:
        raise ValueError(f"registry JSON: unsupported version {version!r}")
    n_bits = int(_require(doc, "n_bits", "top level"))
    seed = int(_require(doc, "seed", "top level"))
    users = []
    for i, entry in enumerate(_require(doc, "users", "top level")):
        where = f"users[{i}]"
        secret_doc = _require(entry, "secret", where)
        kwargs = {
            "image_shape": tuple(_require(secret_doc, "image_shape", where)),
            "pixel_pairs": np.asarray(_require(secret_doc, "pixel_pairs", where), dtype=np.int64),
        }
        for opt in ("freq_pairs", "mellin_pairs"):
            if secret_doc.get(opt) is not None:
                kwargs[opt] = np.asarray(secret_doc[opt], dtype=np.int64)
        try:
            secret = SecretKey(**kwargs)
            record = UserRecord(
                user_id=_require(entry, "user_id", where),
                watermark=as_bits(_require(entry, "watermark", where)),
                secret=secret,
            )
        except ValueError as err:
            raise ValueError(f"registry JSON: {where}: {err}") from err
        users.append(record)
    return Registry(n_bits=n_bits, rng_seed=seed, users=tuple(users))
