"""Shared fixtures: small registries and pre-embedded images.

Session scope keeps the embedding work to one pass; everything here is
seeded, so reruns see identical objects.
"""

import numpy as np
import pytest

from pairmark.bench import generate_corpus
from pairmark.embedding import EmbedConfig, embed
from pairmark.keygen import KeygenConfig, new_registry, register_user


def build_registry(cfg: KeygenConfig, n_users: int, prefix: str = "user"):
    reg = new_registry(cfg)
    for i in range(n_users):
        reg = register_user(reg, f"{prefix}{i}", cfg)
    return reg


@pytest.fixture(scope="session")
def pixel_registry():
    cfg = KeygenConfig(n_bits=100, image_shape=(64, 64, 3), domains=("pixel",), seed=1)
    return build_registry(cfg, 10)


@pytest.fixture(scope="session")
def small_pixel_setup():
    """3-user pixel-only registry on 32x32 plus one embed per user."""
    cfg = KeygenConfig(n_bits=25, image_shape=(32, 32, 3), domains=("pixel",), seed=2)
    reg = build_registry(cfg, 3)
    corpus = generate_corpus(3, 32, seed=3)
    embedded = []
    for i, x0 in enumerate(corpus):
        x_wm, report = embed(x0, reg.users[i], EmbedConfig())
        assert report.success
        embedded.append((x0, x_wm, report, reg.users[i]))
    return reg, embedded


@pytest.fixture(scope="session")
def small_triple_setup():
    """2-user triple-domain registry on 32x32 plus one embed per user."""
    cfg = KeygenConfig(
        n_bits=16, image_shape=(32, 32, 3), domains=("pixel", "freq", "mellin"), seed=5
    )
    reg = build_registry(cfg, 2, prefix="u")
    corpus = generate_corpus(2, 32, seed=3)
    embed_cfg = EmbedConfig(domains=("pixel", "freq", "mellin"))
    embedded = []
    for i, x0 in enumerate(corpus):
        x_wm, report = embed(x0, reg.users[i], embed_cfg)
        assert report.success
        embedded.append((x0, x_wm, report, reg.users[i]))
    return reg, embedded
