"""Lane equivalence: the numba-compiled kernels and the numpy fallbacks must
produce identical results."""

import numpy as np
import pytest

from mobdiff import kernels


@pytest.fixture
def epr_inputs():
    rng = np.random.default_rng(0)
    n, t, ncell = 40, 48, 16
    homes = rng.integers(0, ncell, n).astype(np.int64)
    uniforms = rng.random((n, t, 3))
    move_profile = rng.random(t) * 0.5
    home_profile = rng.random(t) * 0.3
    probs = rng.random((ncell, ncell)) + 0.01
    np.fill_diagonal(probs, 0.0)
    probs /= probs.sum(axis=1, keepdims=True)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    return homes, uniforms, move_profile, home_profile, 1.0, 0.9, 1.4, 0.7, 0.2, cdf


def test_epr_lanes_identical(epr_inputs):
    a = kernels.numpy_lane["epr_sequences"](*epr_inputs)
    b = kernels.active_lane["epr_sequences"](*epr_inputs)
    np.testing.assert_array_equal(a, b)


def test_overlap_lanes_identical():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 9, size=(17, 48)).astype(np.int32)
    b = rng.integers(0, 9, size=(23, 48)).astype(np.int32)
    got_np = kernels.numpy_lane["overlap_counts"](a, b)
    got_active = kernels.active_lane["overlap_counts"](a, b)
    np.testing.assert_array_equal(got_np, got_active)
    # brute-force oracle
    expected = np.array([[(ra == rb).sum() for rb in b] for ra in a])
    np.testing.assert_array_equal(got_np, expected)


def test_conv_cols_lanes_identical():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 12, 7)).astype(np.float32)
    np.testing.assert_array_equal(
        kernels.numpy_lane["conv_cols"](x), kernels.active_lane["conv_cols"](x)
    )
    g = rng.standard_normal((5, 12, 21)).astype(np.float32)
    np.testing.assert_array_equal(
        kernels.numpy_lane["conv_cols_grad"](g), kernels.active_lane["conv_cols_grad"](g)
    )


@pytest.mark.skipif(kernels.numba_lane is None, reason="numba unavailable")
def test_numba_lane_matches_numpy_lane_everywhere(epr_inputs):
    np.testing.assert_array_equal(
        kernels.numba_lane["epr_sequences"](*epr_inputs),
        kernels.numpy_lane["epr_sequences"](*epr_inputs),
    )
    rng = np.random.default_rng(3)
    a = rng.integers(0, 5, size=(8, 24)).astype(np.int32)
    b = rng.integers(0, 5, size=(9, 24)).astype(np.int32)
    np.testing.assert_array_equal(
        kernels.numba_lane["overlap_counts"](a, b),
        kernels.numpy_lane["overlap_counts"](a, b),
    )
    x = rng.standard_normal((3, 8, 4))
    np.testing.assert_array_equal(
        kernels.numba_lane["conv_cols"](x), kernels.numpy_lane["conv_cols"](x)
    )
    g = rng.standard_normal((3, 8, 12))
    np.testing.assert_array_equal(
        kernels.numba_lane["conv_cols_grad"](g), kernels.numpy_lane["conv_cols_grad"](g)
    )


def test_conv_cols_shape_and_padding():
    x = np.arange(2 * 4 * 3, dtype=np.float64).reshape(2, 4, 3)
    cols = kernels.conv_cols(x)
    assert cols.shape == (2, 4, 9)
    np.testing.assert_array_equal(cols[:, 0, :3], 0.0)  # left pad
    np.testing.assert_array_equal(cols[:, -1, 6:], 0.0)  # right pad
    np.testing.assert_array_equal(cols[:, 1, :3], x[:, 0])
    np.testing.assert_array_equal(cols[:, 2, 3:6], x[:, 2])


def test_conv_cols_grad_is_adjoint():
    # <cols(x), g> == <x, cols_grad(g)> for random x, g
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 10, 5))
    g = rng.standard_normal((3, 10, 15))
    lhs = float((kernels.conv_cols(x) * g).sum())
    rhs = float((x * kernels.conv_cols_grad(g)).sum())
    assert abs(lhs - rhs) < 1e-10
