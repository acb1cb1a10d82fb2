import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radprompt.filters import (FILTERS, FilterConfig, apply_filter, discretize_fixed_width, exponential,
                               filter_bank, filter_constants, gradient_magnitude, haar_bands, laplacian_of_gaussian,
                               lbp_riu2, list_filter_channels, log_kernel, logarithm, square, squareroot)


def sym(x, r, c):
    """Symmetric (edge-repeating) extension, evaluated one index at a time."""
    h, w = len(x), len(x[0])

    def fold(i, n):
        period = 2 * n
        i %= period
        return i if i < n else period - 1 - i

    return x[fold(r, h)][fold(c, w)]


def test_discretize_examples():
    d = discretize_fixed_width(np.array([[0.0, 24.0, 25.0, 74.0]]), np.ones((1, 4), dtype=bool))
    assert d.grid.tolist() == [[1, 1, 2, 3]] and d.n_levels == 3
    d = discretize_fixed_width(np.full((3, 3), 5.0), np.ones((3, 3), dtype=bool))
    assert (d.grid == 1).all() and d.n_levels == 1
    with pytest.raises(ValueError):
        discretize_fixed_width(np.zeros((2, 2)), np.zeros((2, 2), dtype=bool))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(-1000, 1000)).map(np.round),
       st.integers(-3000, 3000))
def test_discretize_shift_invariant(x, shift):
    roi = np.ones(x.shape, dtype=bool)
    roi[0, 0] = False
    a = discretize_fixed_width(x, roi)
    b = discretize_fixed_width(x + shift, roi)
    assert np.array_equal(a.grid, b.grid)
    vals = x[roi]
    assert a.n_levels == math.floor((vals.max() - vals.min()) / 25) + 1
    assert (a.grid[~roi] == 0).all() and a.grid[roi].min() == 1


def test_channel_order():
    names = list_filter_channels()
    assert names[0] == "original" and len(names) == 14
    assert names == ["original", "wavelet-LL", "wavelet-LH", "wavelet-HL", "wavelet-HH", "log-sigma-1",
                     "log-sigma-2", "log-sigma-3", "square", "squareroot", "logarithm", "exponential",
                     "gradient", "lbp2d"]
    assert sum(n.startswith("wavelet") for n in names) == 4
    assert [n for n, _ in filter_bank(np.zeros((4, 4)))] == names


def test_unknown_filter():
    with pytest.raises(ValueError, match="unknown filter"):
        apply_filter(np.zeros((3, 3)), "median")


def test_constant_slice_responses():
    c = np.full((9, 9), 321.0)
    log = apply_filter(c, "log").channels
    assert len(log) == 3 and all(np.abs(ch).max() <= 1e-9 for _, ch in log)
    assert np.array_equal(gradient_magnitude(c), np.zeros_like(c))
    codes = lbp_riu2(c)
    assert np.unique(codes).tolist() == [8.0]
    bands = haar_bands(c)
    assert np.array_equal(bands["LL"], c)
    for b in ("LH", "HL", "HH"):
        assert np.array_equal(bands[b], np.zeros_like(c))


def test_haar_against_loops():
    x = np.random.default_rng(0).standard_normal((5, 7))
    xl = x.tolist()
    bands = haar_bands(x)
    for r in range(5):
        for c in range(7):
            a, b = sym(xl, r, c), sym(xl, r, c + 1)
            cc, d = sym(xl, r + 1, c), sym(xl, r + 1, c + 1)
            ref = {"LL": (a + b + cc + d) / 4, "LH": (a - b + cc - d) / 4,
                   "HL": (a + b - cc - d) / 4, "HH": (a - b - cc + d) / 4}
            for k, v in ref.items():
                assert bands[k][r, c] == pytest.approx(v, abs=1e-12)


def test_log_kernel_and_response():
    k = log_kernel(1.0)
    assert k.shape == (9, 9) and abs(k.sum()) < 1e-15
    assert log_kernel(2.0).shape == (17, 17)
    x = np.random.default_rng(1).standard_normal((6, 5))
    xl = x.tolist()
    out = laplacian_of_gaussian(x, 1.0)
    r = 4
    for i in range(6):
        for j in range(5):
            ref = sum(k[u + r, v + r] * sym(xl, i + u, j + v) for u in range(-r, r + 1) for v in range(-r, r + 1))
            assert out[i, j] == pytest.approx(ref, abs=1e-12)


def test_gradient_against_loops():
    x = np.random.default_rng(2).standard_normal((4, 6))
    xl = x.tolist()
    g = gradient_magnitude(x)
    for i in range(4):
        for j in range(6):
            gy = (sym(xl, i + 1, j) - sym(xl, i - 1, j)) / 2
            gx = (sym(xl, i, j + 1) - sym(xl, i, j - 1)) / 2
            assert g[i, j] == pytest.approx(math.hypot(gy, gx), abs=1e-12)


def _lbp_ref(xl, i, j):
    ring = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]
    bits = [1 if sym(xl, i + dr, j + dc) >= xl[i][j] else 0 for dr, dc in ring]
    changes = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
    return sum(bits) if changes <= 2 else 9


@settings(max_examples=30, deadline=None)
@given(arrays(np.int64, (5, 5), elements=st.integers(0, 4)))
def test_lbp_codes(x):
    codes = lbp_riu2(x.astype(np.float64))
    xl = x.tolist()
    assert codes.min() >= 0 and codes.max() <= 9
    for i in range(5):
        for j in range(5):
            assert codes[i, j] == _lbp_ref(xl, i, j)


def test_pointwise_constants():
    x = np.array([[-4.0, 0.0], [1.0, 9.0]])
    c = filter_constants(x)
    assert c["square"] == 1 / 3 and c["squareroot"] == 9.0
    assert np.allclose(square(x), (x / 3) ** 2, rtol=1e-15)
    assert np.allclose(squareroot(x), np.sign(x) * np.sqrt(9 * np.abs(x)), rtol=1e-15)
    assert np.allclose(logarithm(x), np.sign(x) * 9 / math.log(10) * np.log(np.abs(x) + 1), rtol=1e-15)
    assert np.allclose(exponential(x), np.exp(math.log(9) / 9 * x), rtol=1e-15)
    # outputs stay within the input magnitude range
    for f in (square, squareroot, logarithm, exponential):
        assert np.abs(f(x)).max() <= 9.0 + 1e-12
    z = np.zeros((2, 2))
    for f in (square, squareroot, logarithm, gradient_magnitude):
        assert np.array_equal(f(z), z)
    assert np.array_equal(exponential(z), np.ones((2, 2)))


def test_filter_config_round_trip():
    cfg = FilterConfig.from_dict({"log_sigmas": [1, 2], "wavelet_bands": ["LL", "HH"]})
    assert FilterConfig.from_dict(cfg.to_dict()) == cfg
    assert list_filter_channels(cfg)[1:5] == ["wavelet-LL", "wavelet-HH", "log-sigma-1", "log-sigma-2"]
    with pytest.raises(ValueError):
        FilterConfig.from_dict({"wavelet_bands": ["XX"]})


def test_every_filter_keeps_shape():
    x = np.random.default_rng(3).standard_normal((7, 8)) * 100
    for name in FILTERS:
        for _, ch in apply_filter(x, name).channels:
            assert ch.shape == x.shape and np.isfinite(ch).all()
