import json

import numpy as np
import pytest

from pairmark.core import Registry, conjugate_index, default_mellin_shape
from pairmark.keygen import (
    KeygenConfig,
    _sample_spectrum_pairs,
    _stable_spectrum_mask,
    load_registry,
    new_registry,
    persist_registry,
    register_user,
    sample_secret,
    sample_watermark,
)


def test_config_defaults_and_validation():
    cfg = KeygenConfig()
    assert cfg.n_bits == 100
    assert cfg.image_shape == (64, 64, 3)
    assert cfg.domains == ("pixel",)
    with pytest.raises(ValueError):
        KeygenConfig(n_bits=0)
    with pytest.raises(ValueError):
        KeygenConfig(image_shape=(64, 64, 2))
    with pytest.raises(ValueError):
        KeygenConfig(domains=("freq",))
    with pytest.raises(ValueError):
        KeygenConfig(domains=("pixel", "dct"))


def test_config_pixel_capacity_boundary():
    # A (2, 2, 1) image has 4 cells: room for 2 pairs, not 3.
    KeygenConfig(n_bits=2, image_shape=(2, 2, 1))
    with pytest.raises(ValueError):
        KeygenConfig(n_bits=3, image_shape=(2, 2, 1))


def test_config_freq_capacity_boundary():
    # 3x3 spectrum minus DC leaves 8 bins; with slack 2 that is 3 pairs.
    KeygenConfig(n_bits=3, image_shape=(3, 3, 1), domains=("pixel", "freq"))
    with pytest.raises(ValueError):
        KeygenConfig(n_bits=4, image_shape=(3, 3, 1), domains=("pixel", "freq"))


def test_stable_spectrum_mask_shape_and_count():
    mask = _stable_spectrum_mask(64, 64)
    assert mask.shape == (64 * 64,)
    # Wrapped box of half-width 8 is 17 bins per axis; 3x3 near-DC removed.
    assert int(mask.sum()) == 17 * 17 - 9
    assert not mask[0]
    grid = mask.reshape(64, 64)
    assert grid[8, 8]
    assert grid[56, 56]
    assert not grid[9, 0]
    assert not grid[1, 1]
    assert not grid[0, 63]  # wrapped frequency 1 on cols, 0 on rows: near DC


def test_config_mellin_capacity_boundary():
    pool = int(_stable_spectrum_mask(64, 64).sum())
    assert pool == 280
    KeygenConfig(n_bits=139, image_shape=(64, 64, 3), domains=("pixel", "mellin"))
    with pytest.raises(ValueError):
        KeygenConfig(n_bits=140, image_shape=(64, 64, 3), domains=("pixel", "mellin"))


def test_watermark_sampling():
    cfg = KeygenConfig(n_bits=10_000, image_shape=(128, 128, 3))
    bits = sample_watermark(cfg, np.random.default_rng(0))
    again = sample_watermark(cfg, np.random.default_rng(0))
    assert np.array_equal(bits, again)
    assert bits.size == 10_000
    assert 0.48 <= bits.mean() <= 0.52


def test_sample_secret_pixel_partition():
    # n = 2 on a 4-cell image must use every cell exactly once.
    cfg = KeygenConfig(n_bits=2, image_shape=(2, 2, 1))
    secret = sample_secret(cfg, np.random.default_rng(1))
    assert sorted(secret.pixel_pairs.ravel().tolist()) == [0, 1, 2, 3]


def test_sample_secret_distinct_across_seeds():
    cfg = KeygenConfig(n_bits=20, image_shape=(32, 32, 3))
    seen = set()
    for seed in range(1000):
        secret = sample_secret(cfg, np.random.default_rng(seed))
        seen.add(secret.pixel_pairs.tobytes())
    assert len(seen) == 1000


def test_sample_secret_all_domains_property():
    cfg = KeygenConfig(
        n_bits=12, image_shape=(32, 32, 3), domains=("pixel", "freq", "mellin")
    )
    mh, mw = default_mellin_shape(32, 32)
    mask = _stable_spectrum_mask(mh, mw)
    allowed = set(np.flatnonzero(mask).tolist())
    for seed in range(100):
        secret = sample_secret(cfg, np.random.default_rng(seed))
        for pairs, h, w in ((secret.freq_pairs, 32, 32), (secret.mellin_pairs, mh, mw)):
            flat = pairs.ravel()
            assert np.unique(flat).size == flat.size
            assert flat.min() >= 1
            for a, b in pairs:
                assert conjugate_index(int(a), h, w) != int(b)
        for a, b in secret.mellin_pairs:
            assert int(a) in allowed and int(b) in allowed


def test_spectrum_sampler_exhaustion():
    # A 2x2 spectrum has 3 usable bins, one pair consumes 2 of them.
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError, match="exhausted"):
        _sample_spectrum_pairs(rng, 2, 2, 2)


def test_register_user_determinism_and_position_keying():
    cfg = KeygenConfig(n_bits=8, image_shape=(16, 16, 3), seed=42)
    reg_a = register_user(register_user(new_registry(cfg), "alice", cfg), "bob", cfg)
    reg_b = register_user(register_user(new_registry(cfg), "x", cfg), "bob", cfg)
    # Draws hang off (seed, position), not off earlier users' identities.
    assert np.array_equal(reg_a.users[1].watermark, reg_b.users[1].watermark)
    assert np.array_equal(reg_a.users[1].secret.pixel_pairs, reg_b.users[1].secret.pixel_pairs)
    assert not np.array_equal(reg_a.users[0].watermark, reg_a.users[1].watermark)

    again = register_user(register_user(new_registry(cfg), "alice", cfg), "bob", cfg)
    assert np.array_equal(reg_a.users[0].secret.pixel_pairs, again.users[0].secret.pixel_pairs)


def test_register_user_rejects_duplicates_and_mismatch():
    cfg = KeygenConfig(n_bits=8, image_shape=(16, 16, 3))
    reg = register_user(new_registry(cfg), "alice", cfg)
    with pytest.raises(ValueError):
        register_user(reg, "alice", cfg)
    other = KeygenConfig(n_bits=9, image_shape=(16, 16, 3))
    with pytest.raises(ValueError):
        register_user(reg, "bob", other)


def test_registry_round_trip(tmp_path):
    cfg = KeygenConfig(
        n_bits=6, image_shape=(32, 32, 3), domains=("pixel", "freq", "mellin"), seed=9
    )
    reg = new_registry(cfg)
    for name in ("u0", "u1", "u2"):
        reg = register_user(reg, name, cfg)
    path = tmp_path / "reg.json"
    persist_registry(reg, str(path))
    loaded = load_registry(str(path))
    assert loaded.n_bits == reg.n_bits
    assert loaded.rng_seed == reg.rng_seed
    assert len(loaded.users) == 3
    for orig, back in zip(reg.users, loaded.users):
        assert back.user_id == orig.user_id
        assert np.array_equal(back.watermark, orig.watermark)
        assert back.secret.image_shape == orig.secret.image_shape
        assert np.array_equal(back.secret.pixel_pairs, orig.secret.pixel_pairs)
        assert np.array_equal(back.secret.freq_pairs, orig.secret.freq_pairs)
        assert np.array_equal(back.secret.mellin_pairs, orig.secret.mellin_pairs)


def test_registry_round_trip_empty(tmp_path):
    cfg = KeygenConfig(n_bits=5, image_shape=(16, 16, 3))
    path = tmp_path / "empty.json"
    persist_registry(new_registry(cfg), str(path))
    loaded = load_registry(str(path))
    assert loaded.users == ()
    assert loaded.n_bits == 5


def test_load_registry_parse_error_cites_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1, "n_bits": 5,\n  "seed": ')
    with pytest.raises(ValueError) as err:
        load_registry(str(path))
    assert "parse error at line" in str(err.value)


def test_load_registry_missing_key(tmp_path):
    path = tmp_path / "missing.json"
    path.write_text(json.dumps({"version": 1, "seed": 0, "users": []}))
    with pytest.raises(ValueError, match="missing 'n_bits'"):
        load_registry(str(path))


def test_load_registry_bad_version(tmp_path):
    path = tmp_path / "version.json"
    path.write_text(json.dumps({"version": 99, "n_bits": 5, "seed": 0, "users": []}))
    with pytest.raises(ValueError, match="unsupported version"):
        load_registry(str(path))


def test_load_registry_invalid_secret_names_user(tmp_path):
    doc = {
        "version": 1,
        "n_bits": 1,
        "seed": 0,
        "users": [
            {
                "user_id": "u0",
                "watermark": "0",
                "secret": {"image_shape": [2, 2, 1], "pixel_pairs": [[0, 0]]},
            }
        ],
    }
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match=r"users\[0\]"):
        load_registry(str(path))


def test_load_registry_top_level_must_be_object(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ValueError, match="top level"):
        load_registry(str(path))


def test_new_registry_matches_config():
    cfg = KeygenConfig(n_bits=7, image_shape=(16, 16, 3), seed=13)
    reg = new_registry(cfg)
    assert isinstance(reg, Registry)
    assert reg.n_bits == 7
    assert reg.rng_seed == 13
    assert reg.users == ()
