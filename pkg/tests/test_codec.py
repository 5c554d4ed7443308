import numpy as np
import pytest

from steercompose.codec import CodecConfig, decode, encode, latent_mask, rotation
from steercompose.core import ConfigError, DimensionError

PATCH = CodecConfig("patchify", 2)


def test_identity_midpoint():
    z = encode(np.full((4, 4, 3), 0.5))
    assert z.shape == (3, 4, 4) and np.all(z == 0.0)
    assert np.all(decode(np.zeros((3, 4, 4))) == 0.5)


def test_patchify_shape():
    assert encode(np.zeros((4, 4, 3)), PATCH).shape == (12, 2, 2)


@pytest.mark.parametrize("cfg", [CodecConfig(), PATCH, CodecConfig("patchify", 4, seed=9)])
def test_roundtrip(cfg):
    x = np.random.default_rng(0).random((8, 8, 3))
    assert np.abs(decode(encode(x, cfg), cfg) - x).max() <= 1e-6
    z = np.random.default_rng(1).uniform(-1, 1, encode(x, cfg).shape)
    assert np.abs(encode(decode(z, cfg), cfg) - z).max() <= 1e-6


def test_rotation_orthonormal():
    r = rotation(12, 0)
    assert np.abs(r.T @ r - np.eye(12)).max() <= 1e-6


def test_patchify_channels_are_rotated_blocks():
    x = np.random.default_rng(2).random((4, 4, 3))
    z = encode(x, PATCH)
    block = (2 * x[2:4, 0:2] - 1).reshape(-1)  # latent cell (1, 0)
    assert np.allclose(z[:, 1, 0], rotation(12, 0) @ block, atol=1e-12)


@pytest.mark.parametrize("cfg", [CodecConfig(), PATCH])
def test_affine(cfg):
    rng = np.random.default_rng(3)
    x, y = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    a, b = 0.3, 0.6
    base = encode(np.zeros_like(x), cfg)
    lhs = encode(a * x + b * y, cfg) - base
    rhs = a * (encode(x, cfg) - base) + b * (encode(y, cfg) - base)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_errors():
    with pytest.raises(DimensionError):
        encode(np.zeros((5, 4, 3)), PATCH)
    with pytest.raises(DimensionError):
        decode(np.zeros((3, 2, 2)), PATCH)
    with pytest.raises(ConfigError):
        CodecConfig("vae")


def test_latent_mask_or_pools():
    m = np.zeros((4, 4), bool)
    m[3, 3] = True
    assert latent_mask(m, PATCH).tolist() == [[False, False], [False, True]]
    assert np.array_equal(latent_mask(m), m)
