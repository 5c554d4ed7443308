import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steercompose.core import ComposerError, DimensionError
from steercompose.guidance import average_saliency, extended_cfg, normalize01, saliency_map, standard_cfg

# scaling a subnormal by 2.5 rounds, so keep magnitudes in the normal range
vec = arrays(np.float64, (2, 3, 3), elements=st.floats(-10, 10).filter(lambda v: v == 0 or abs(v) > 1e-100))
scales = st.sampled_from([2.5, 5.0])


@given(vec, scales)
def test_cancellation_when_branches_agree(a, s):
    assert np.array_equal(extended_cfg(a, a, a, a, s), a)


@given(vec, vec, scales)
def test_inert_infusion_reduces_to_standard(null, cond, s):
    # inert infusion: eps(c,f) == eps(c) and eps(f) == eps(0)
    assert np.array_equal(extended_cfg(null, cond, null, cond, s), standard_cfg(null, cond, s))


@given(vec, vec, vec)
def test_homogeneous_in_scale(cf, f, c):
    zero = np.zeros_like(cf)
    assert np.array_equal(extended_cfg(zero, cf, f, c, 5.0), 2.0 * extended_cfg(zero, cf, f, c, 2.5))


@given(vec, vec, vec, vec)
def test_guidance_term_homogeneous_with_offset(null, cf, f, c):
    lhs = extended_cfg(null, cf, f, c, 5.0) - null
    rhs = 2.0 * (extended_cfg(null, cf, f, c, 2.5) - null)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-11)


def test_scale_zero_returns_null():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((4, 2))
    assert np.array_equal(extended_cfg(b[0], b[1], b[2], b[3], 0.0), b[0])
    assert np.array_equal(standard_cfg(b[0], b[1], 0.0), b[0])


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        extended_cfg(np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3), 1.0)


def test_saliency_map():
    cf = np.zeros((3, 2, 2))
    cf[:, 0, 1] = [3.0, 4.0, 0.0]
    assert saliency_map(cf, np.zeros_like(cf)).tolist() == [[0, 5], [0, 0]]
    assert np.all(saliency_map(cf, cf) == 0)


def test_average_saliency():
    assert average_saliency([np.ones((2, 2)), 3 * np.ones((2, 2))]).tolist() == [[2, 2], [2, 2]]
    with pytest.raises(ComposerError):
        average_saliency([])


def test_normalize01():
    img, lo, hi = normalize01(np.array([[1.0, 3.0]]))
    assert img.tolist() == [[0, 1]] and (lo, hi) == (1.0, 3.0)
    assert np.all(normalize01(np.full((2, 2), 4.0))[0] == 0)


def test_scalar_stub_examples():
    assert extended_cfg(np.float64(0), np.float64(1), np.float64(0.5), np.float64(0.5), 2.5) == 2.5
    assert standard_cfg(np.float64(0), np.float64(1), 5.0) == 5.0
    assert standard_cfg(np.float64(0.25), np.float64(0.75), 1.0) == 0.75
