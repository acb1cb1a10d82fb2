"""Fixed-width gray-level discretization and the 2-D filter bank.

Filter conventions (all recorded in the feature manifest):

* Boundaries are handled by symmetric padding (``d c b a | a b c d``).
* wavelet: single-level undecimated Haar with analysis pair
  ``lo = (x[n] + x[n+1]) / 2`` and ``hi = (x[n] - x[n+1]) / 2``. The first
  letter of a sub-band names the filter along axis 0 (rows), the second along
  axis 1 (columns). With this normalization LL of a constant is that constant.
* log: Laplacian of Gaussian sampled on a (2 * ceil(4 sigma) + 1)^2 support,
  then mean-subtracted so the kernel sums to zero.
* square:      (c x)^2,                  c = 1 / sqrt(max|x|)
* squareroot:  sign(x) sqrt(c |x|),      c = max|x|
* logarithm:   sign(x) c log(|x| + 1),   c = max|x| / log(max|x| + 1)
* exponential: exp(c x),                 c = log(max|x|) / max|x|
  For max|x| == 0 the constants fall back to c = 1 (square, logarithm) and
  c = 0 (squareroot, exponential).
* gradient: magnitude of central differences.
* lbp2d: radius 1, 8 integer neighbours, rotation-invariant uniform codes:
  the number of set bits for patterns with at most two 0/1 transitions,
  otherwise 9. Codes lie in [0, 9].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

FILTERS = ("wavelet", "log", "square", "squareroot", "logarithm", "exponential", "gradient", "lbp2d")
WAVELET_BANDS = ("LL", "LH", "HL", "HH")
LBP_NONUNIFORM = 9


@dataclass(frozen=True)
class FilterConfig:
    log_sigmas: tuple[float, ...] = (1.0, 2.0, 3.0)
    wavelet_bands: tuple[str, ...] = WAVELET_BANDS
    bin_width: float = 25.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "FilterConfig":
        d = dict(d or {})
        bands = tuple(d.get("wavelet_bands", WAVELET_BANDS))
        unknown = set(bands) - set(WAVELET_BANDS)
        if unknown:
            raise ValueError(f"unknown wavelet bands {sorted(unknown)}")
        return cls(
            log_sigmas=tuple(float(s) for s in d.get("log_sigmas", (1.0, 2.0, 3.0))),
            wavelet_bands=bands,
            bin_width=float(d.get("bin_width", 25.0)),
        )

    def to_dict(self) -> dict:
        return {"log_sigmas": list(self.log_sigmas), "wavelet_bands": list(self.wavelet_bands),
                "bin_width": self.bin_width}


@dataclass(frozen=True)
class DiscretizedROI:
    grid: np.ndarray  # bin index per pixel, 0 outside the ROI
    roi: np.ndarray
    n_levels: int


@dataclass(frozen=True)
class FilterBankOutput:
    name: str
    channels: list[tuple[str, np.ndarray]] = field(default_factory=list)


def discretize_fixed_width(slice_: np.ndarray, roi: np.ndarray, width: float = 25.0) -> DiscretizedROI:
    slice_ = np.asarray(slice_, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    if slice_.shape != roi.shape:
        raise ValueError(f"slice {slice_.shape} and roi {roi.shape} differ in shape")
    if not roi.any():
        raise ValueError("empty ROI")
    if not width > 0:
        raise ValueError("bin width must be positive")
    vals = slice_[roi]
    lo = vals.min()
    grid = np.zeros(slice_.shape, dtype=np.int64)
    grid[roi] = np.floor((vals - lo) / width).astype(np.int64) + 1
    return DiscretizedROI(grid, roi, int(grid.max()))


def list_filter_channels(config: FilterConfig = FilterConfig()) -> list[str]:
    names = ["original"]
    names += [f"wavelet-{b}" for b in config.wavelet_bands]
    names += [f"log-sigma-{s:g}" for s in config.log_sigmas]
    names += ["square", "squareroot", "logarithm", "exponential", "gradient", "lbp2d"]
    return names


def _pad(a: np.ndarray, width: int) -> np.ndarray:
    return np.pad(a, width, mode="symmetric")


def haar_bands(x: np.ndarray) -> dict[str, np.ndarray]:
    def split(a, axis):
        nxt = np.concatenate([np.delete(a, 0, axis=axis), np.take(a, [-1], axis=axis)], axis=axis)
        return (a + nxt) / 2.0, (a - nxt) / 2.0

    lo0, hi0 = split(x, 0)
    ll, lh = split(lo0, 1)
    hl, hh = split(hi0, 1)
    return {"LL": ll, "LH": lh, "HL": hl, "HH": hh}


def log_kernel(sigma: float) -> np.ndarray:
    r = int(math.ceil(4.0 * sigma))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    q = (xx ** 2 + yy ** 2) / (2.0 * sigma ** 2)
    k = -(1.0 / (math.pi * sigma ** 4)) * (1.0 - q) * np.exp(-q)
    return k - k.mean()


def laplacian_of_gaussian(x: np.ndarray, sigma: float) -> np.ndarray:
    # scipy's "reflect" mode is the symmetric (edge-repeating) extension
    return ndimage.correlate(x, log_kernel(sigma), mode="reflect")


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x)))


def square(x: np.ndarray) -> np.ndarray:
    m = _max_abs(x)
    c = 1.0 / math.sqrt(m) if m > 0 else 1.0
    return (c * x) ** 2


def squareroot(x: np.ndarray) -> np.ndarray:
    c = _max_abs(x)
    return np.sign(x) * np.sqrt(c * np.abs(x))


def logarithm(x: np.ndarray) -> np.ndarray:
    m = _max_abs(x)
    c = m / math.log(m + 1.0) if m > 0 else 1.0
    return np.sign(x) * c * np.log(np.abs(x) + 1.0)


def exponential(x: np.ndarray) -> np.ndarray:
    m = _max_abs(x)
    c = math.log(m) / m if m > 0 else 0.0
    return np.exp(c * x)


def gradient_magnitude(x: np.ndarray) -> np.ndarray:
    p = _pad(x, 1)
    g0 = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    g1 = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    return np.sqrt(g0 ** 2 + g1 ** 2)


# circular neighbour order starting east, counter-clockwise
_LBP_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def lbp_riu2(x: np.ndarray) -> np.ndarray:
    p = _pad(x, 1)
    h, w = x.shape
    bits = np.stack([p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] >= x for dr, dc in _LBP_OFFSETS])
    bits = bits.astype(np.int64)
    transitions = np.sum(bits != np.roll(bits, -1, axis=0), axis=0)
    ones = bits.sum(axis=0)
    return np.where(transitions <= 2, ones, LBP_NONUNIFORM).astype(np.float64)


_POINTWISE = {
    "square": square,
    "squareroot": squareroot,
    "logarithm": logarithm,
    "exponential": exponential,
    "gradient": gradient_magnitude,
    "lbp2d": lbp_riu2,
}


def apply_filter(slice_: np.ndarray, name: str, config: FilterConfig = FilterConfig()) -> FilterBankOutput:
    if name not in FILTERS:
        raise ValueError(f"unknown filter '{name}'; expected one of {FILTERS}")
    x = np.asarray(slice_, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("filters operate on 2-D slices")
    if name == "wavelet":
        bands = haar_bands(x)
        return FilterBankOutput(name, [(f"wavelet-{b}", bands[b]) for b in config.wavelet_bands])
    if name == "log":
        return FilterBankOutput(
            name, [(f"log-sigma-{s:g}", laplacian_of_gaussian(x, s)) for s in config.log_sigmas]
        )
    return FilterBankOutput(name, [(name, _POINTWISE[name](x))])


def filter_bank(slice_: np.ndarray, config: FilterConfig = FilterConfig()) -> list[tuple[str, np.ndarray]]:
    """All channels, in ``list_filter_channels`` order."""
    x = np.asarray(slice_, dtype=np.float64)
    channels = [("original", x)]
    for name in FILTERS:
        channels.extend(apply_filter(x, name, config).channels)
    return channels


def filter_constants(x: np.ndarray) -> dict[str, float]:
    """Scaling constants the pointwise filters use for this slice."""
    m = _max_abs(x)
    return {
        "square": 1.0 / math.sqrt(m) if m > 0 else 1.0,
        "squareroot": m,
        "logarithm": m / math.log(m + 1.0) if m > 0 else 1.0,
        "exponential": math.log(m) / m if m > 0 else 0.0,
    }
