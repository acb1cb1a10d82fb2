"""2-D texture matrices (GLCM, GLRLM, GLSZM, NGTDM, GLDM) and their features.

Gray levels are the bin indices 1..Ng of a :class:`DiscretizedROI`, with
``Ng = n_levels``. Matrices keep all Ng levels even if some are absent.

Conventions shared by every feature:

* entropies are base 2 with ``0 log 0 = 0``;
* GLCM and GLRLM features are computed per direction and averaged over the
  directions that produced at least one pair or run;
* GLDM features use dependence size ``k + 1`` (the centre pixel counts), so
  the ``1 / j^2`` emphasis terms stay finite when ``k = 0``;
* quantities whose exact value is zero but which pass through ``sqrt``
  (Imc2, MCC) are floored at ``SQRT_FLOOR`` before the root so round-off
  cannot leak in as ``sqrt(1e-16)``.

Degenerate limits (never NaN):

* GLCM with no valid pair in any direction: every feature is 0.
* GLCM Correlation with zero marginal spread: 0. MCC with one gray level: 1.
* NGTDM with no pixel having an in-ROI neighbour: Coarseness 1e6, others 0.
  Coarseness is also 1e6 whenever ``sum(p s) == 0``; Contrast is 0 when fewer
  than two levels are present; Busyness and Strength are 0 on zero
  denominators.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .filters import DiscretizedROI

GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
GLRLM_DIRECTIONS = GLCM_OFFSETS
SQRT_FLOOR = 1e-12
COARSENESS_MAX = 1e6

GLCM_FEATURES = (
    "Autocorrelation", "JointAverage", "ClusterProminence", "ClusterShade", "ClusterTendency",
    "Contrast", "Correlation", "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance",
    "JointEnergy", "JointEntropy", "Imc1", "Imc2", "Idm", "Idmn", "Id", "Idn", "InverseVariance",
    "MaximumProbability", "SumAverage", "SumEntropy", "SumSquares", "MCC",
)
GLRLM_FEATURES = (
    "ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity", "RunLengthNonUniformityNormalized", "RunPercentage", "GrayLevelVariance",
    "RunVariance", "RunEntropy", "LowGrayLevelRunEmphasis", "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis", "ShortRunHighGrayLevelEmphasis", "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
)
GLSZM_FEATURES = (
    "SmallAreaEmphasis", "LargeAreaEmphasis", "GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity", "SizeZoneNonUniformityNormalized", "ZonePercentage", "GrayLevelVariance",
    "ZoneVariance", "ZoneEntropy", "LowGrayLevelZoneEmphasis", "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis", "SmallAreaHighGrayLevelEmphasis", "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
)
NGTDM_FEATURES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")
GLDM_FEATURES = (
    "SmallDependenceEmphasis", "LargeDependenceEmphasis", "GrayLevelNonUniformity",
    "DependenceNonUniformity", "DependenceNonUniformityNormalized", "GrayLevelVariance",
    "DependenceVariance", "DependenceEntropy", "LowGrayLevelEmphasis", "HighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis", "SmallDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis", "LargeDependenceHighGrayLevelEmphasis",
)


class MatrixKind(str, enum.Enum):
    GLCM = "glcm"
    GLRLM = "glrlm"
    GLSZM = "glszm"
    NGTDM = "ngtdm"
    GLDM = "gldm"


FEATURE_NAMES = {
    MatrixKind.GLCM: GLCM_FEATURES,
    MatrixKind.GLRLM: GLRLM_FEATURES,
    MatrixKind.GLSZM: GLSZM_FEATURES,
    MatrixKind.NGTDM: NGTDM_FEATURES,
    MatrixKind.GLDM: GLDM_FEATURES,
}


class NoValidPairsError(ValueError):
    pass


@dataclass(frozen=True)
class TextureMatrix:
    """Raw counts for one matrix kind.

    GLCM and GLRLM hold one (Ng, .) slab per direction, stacked on axis 0.
    NGTDM is (Ng, 3) with columns n_a, p_a, s_a.
    """

    kind: MatrixKind
    matrix: np.ndarray
    params: dict = field(default_factory=dict)
    n_pixels: int = 0


def _bbox(d: DiscretizedROI, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(d.roi)
    if rows.size == 0:
        raise ValueError("empty ROI")
    r0, r1 = rows.min(), rows.max() + 1
    c0, c1 = cols.min(), cols.max() + 1
    grid = np.where(d.roi, d.grid, 0)[r0:r1, c0:c1]
    roi = d.roi[r0:r1, c0:c1]
    if pad:
        grid = np.pad(grid, pad)
        roi = np.pad(roi, pad)
    return grid, roi


def _shifted_pairs(grid: np.ndarray, roi: np.ndarray, dr: int, dc: int):
    h, w = grid.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    a = grid[r0:r1, c0:c1]
    b = grid[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    valid = roi[r0:r1, c0:c1] & roi[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    return a[valid], b[valid]


# ---------------------------------------------------------------- matrices


def glcm(d: DiscretizedROI, offsets=GLCM_OFFSETS, symmetric: bool = True) -> TextureMatrix:
    if any(o == (0, 0) for o in map(tuple, offsets)):
        raise ValueError("GLCM offsets must be non-zero")
    grid, roi = _bbox(d)
    ng = d.n_levels
    out = np.zeros((len(offsets), ng, ng), dtype=np.float64)
    for k, (dr, dc) in enumerate(offsets):
        a, b = _shifted_pairs(grid, roi, dr, dc)
        np.add.at(out[k], (a - 1, b - 1), 1.0)
        if symmetric:
            out[k] += out[k].T.copy()
    if out.sum() == 0:
        raise NoValidPairsError("no valid pairs")
    return TextureMatrix(MatrixKind.GLCM, out, {"offsets": [list(o) for o in offsets], "symmetric": symmetric},
                         int(roi.sum()))


def _lines(grid: np.ndarray, direction) -> list[np.ndarray]:
    dr, dc = direction
    if (dr, dc) == (0, 1):
        return list(grid)
    if (dr, dc) == (1, 0):
        return list(grid.T)
    h, w = grid.shape
    if (dr, dc) == (1, 1):
        return [np.diagonal(grid, k) for k in range(-(h - 1), w)]
    if (dr, dc) == (1, -1):
        flipped = grid[:, ::-1]
        return [np.diagonal(flipped, k) for k in range(-(h - 1), w)]
    raise ValueError(f"unsupported run direction {direction}")


def glrlm(d: DiscretizedROI, angles=GLRLM_DIRECTIONS) -> TextureMatrix:
    grid, roi = _bbox(d)
    ng = d.n_levels
    max_run = max(grid.shape)
    out = np.zeros((len(angles), ng, max_run), dtype=np.float64)
    for k, direction in enumerate(angles):
        for line in _lines(grid, direction):
            if line.size == 0:
                continue
            change = np.flatnonzero(np.diff(line)) + 1
            starts = np.concatenate(([0], change))
            lengths = np.diff(np.concatenate((starts, [line.size])))
            levels = line[starts]
            keep = levels > 0
            np.add.at(out[k], (levels[keep] - 1, lengths[keep] - 1), 1.0)
    return TextureMatrix(MatrixKind.GLRLM, out, {"angles": [list(a) for a in angles]}, int(roi.sum()))


_EIGHT = np.ones((3, 3), dtype=bool)


def glszm(d: DiscretizedROI) -> TextureMatrix:
    grid, roi = _bbox(d)
    ng = d.n_levels
    n = int(roi.sum())
    out = np.zeros((ng, n), dtype=np.float64)
    for level in range(1, ng + 1):
        labels, count = ndimage.label(grid == level, structure=_EIGHT)
        if count == 0:
            continue
        sizes = np.bincount(labels.ravel())[1:]
        np.add.at(out[level - 1], sizes - 1, 1.0)
    return TextureMatrix(MatrixKind.GLSZM, out, {"connectivity": 8}, n)


def _neighbour_offsets(distance: int):
    return [(dr, dc) for dr in range(-distance, distance + 1) for dc in range(-distance, distance + 1)
            if (dr, dc) != (0, 0)]


def ngtdm(d: DiscretizedROI, distance: int = 1) -> TextureMatrix:
    if distance < 1:
        raise ValueError("distance must be positive")
    grid, roi = _bbox(d, pad=distance)
    ng = d.n_levels
    h, w = grid.shape
    total = np.zeros(grid.shape, dtype=np.float64)
    count = np.zeros(grid.shape, dtype=np.float64)
    for dr, dc in _neighbour_offsets(distance):
        src = (slice(distance + dr, h - distance + dr), slice(distance + dc, w - distance + dc))
        dst = (slice(distance, h - distance), slice(distance, w - distance))
        total[dst] += grid[src]
        count[dst] += roi[src]
    valid = roi & (count > 0)
    levels = grid[valid]
    diffs = np.abs(levels - total[valid] / count[valid])
    n_a = np.bincount(levels - 1, minlength=ng).astype(np.float64)[:ng]
    s_a = np.bincount(levels - 1, weights=diffs, minlength=ng)[:ng]
    nvp = n_a.sum()
    p_a = n_a / nvp if nvp > 0 else np.zeros(ng)
    return TextureMatrix(MatrixKind.NGTDM, np.stack([n_a, p_a, s_a], axis=1), {"distance": distance},
                         int(roi.sum()))


def gldm(d: DiscretizedROI, alpha: float = 0.0, distance: int = 1) -> TextureMatrix:
    if distance < 1:
        raise ValueError("distance must be positive")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    grid, roi = _bbox(d, pad=distance)
    ng = d.n_levels
    offsets = _neighbour_offsets(distance)
    h, w = grid.shape
    dep = np.zeros(grid.shape, dtype=np.int64)
    dst = (slice(distance, h - distance), slice(distance, w - distance))
    for dr, dc in offsets:
        src = (slice(distance + dr, h - distance + dr), slice(distance + dc, w - distance + dc))
        dep[dst] += roi[src] & (np.abs(grid[src] - grid[dst]) <= alpha)
    out = np.zeros((ng, len(offsets) + 1), dtype=np.float64)
    np.add.at(out, (grid[roi] - 1, dep[roi]), 1.0)
    return TextureMatrix(MatrixKind.GLDM, out, {"alpha": alpha, "distance": distance}, int(roi.sum()))


# ---------------------------------------------------------------- features


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _glcm_single(P: np.ndarray) -> np.ndarray:
    ng = P.shape[0]
    p = P / P.sum()
    lv = np.arange(1, ng + 1, dtype=np.float64)
    i, j = np.meshgrid(lv, lv, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    ux = float(np.sum(px * lv))
    uy = float(np.sum(py * lv))
    sx = float(np.sqrt(np.sum(px * (lv - ux) ** 2)))
    sy = float(np.sqrt(np.sum(py * (lv - uy) ** 2)))

    kdiff = np.abs(i - j).astype(np.int64)
    pxmy = np.bincount(kdiff.ravel(), weights=p.ravel(), minlength=ng)
    ksum = (i + j).astype(np.int64)
    pxpy = np.bincount(ksum.ravel(), weights=p.ravel(), minlength=2 * ng + 1)
    kd = np.arange(pxmy.size, dtype=np.float64)
    ks = np.arange(pxpy.size, dtype=np.float64)

    autocorr = float(np.sum(p * i * j))
    dev = i + j - ux - uy
    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(p.ravel())
    outer = np.outer(px, py)
    nz = p > 0
    hxy1 = float(-np.sum(p[nz] * np.log2(outer[nz])))
    hxy2 = _entropy(outer.ravel())
    hmax = max(hx, hy)
    imc1 = (hxy - hxy1) / hmax if hmax > 0 else 0.0
    gap = hxy2 - hxy
    imc2 = float(np.sqrt(1.0 - np.exp(-2.0 * gap))) if gap > SQRT_FLOOR else 0.0
    corr = (autocorr - ux * uy) / (sx * sy) if sx * sy > 0 else 0.0
    diff_avg = float(np.sum(kd * pxmy))

    return np.array([
        autocorr,
        ux,
        float(np.sum(dev ** 4 * p)),
        float(np.sum(dev ** 3 * p)),
        float(np.sum(dev ** 2 * p)),
        float(np.sum((i - j) ** 2 * p)),
        corr,
        diff_avg,
        _entropy(pxmy),
        float(np.sum((kd - diff_avg) ** 2 * pxmy)),
        float(np.sum(p ** 2)),
        hxy,
        imc1,
        imc2,
        float(np.sum(p / (1.0 + (i - j) ** 2))),
        float(np.sum(p / (1.0 + (i - j) ** 2 / ng ** 2))),
        float(np.sum(p / (1.0 + np.abs(i - j)))),
        float(np.sum(p / (1.0 + np.abs(i - j) / ng))),
        float(np.sum(pxmy[1:] / kd[1:] ** 2)),
        float(p.max()),
        float(np.sum(ks * pxpy)),
        _entropy(pxpy),
        float(np.sum((i - ux) ** 2 * p)),
        _mcc(p, px, py),
    ])


def _mcc(p: np.ndarray, px: np.ndarray, py: np.ndarray) -> float:
    rows = px > 0
    cols = py > 0
    if rows.sum() < 2:
        return 1.0
    q = p[np.ix_(rows, cols)]
    a = q / np.sqrt(px[rows])[:, None] / np.sqrt(py[cols])[None, :]
    # a a^T is symmetric PSD and similar to the usual Q matrix
    eig = np.sort(np.linalg.eigvalsh(a @ a.T))[::-1]
    lam2 = eig[1]
    return float(np.sqrt(lam2)) if lam2 > SQRT_FLOOR else 0.0


def glcm_features(m: TextureMatrix) -> np.ndarray:
    rows = [_glcm_single(slab) for slab in m.matrix if slab.sum() > 0]
    if not rows:
        return np.zeros(len(GLCM_FEATURES))
    return np.mean(rows, axis=0)


def _size_features(M: np.ndarray, n_pixels: int) -> np.ndarray:
    """Shared formulas for run-length, size-zone and dependence matrices.

    ``M[a, l]`` counts items (runs, zones, pixels) of gray level ``a + 1``
    with size ``l + 1``. Returns the 16 run/zone style quantities.
    """
    ng, nl = M.shape
    total = M.sum()
    p = M / total
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, nl + 1, dtype=np.float64)[None, :]
    pg = p.sum(axis=1)
    ps = p.sum(axis=0)
    mu_i = float(np.sum(p * i))
    mu_j = float(np.sum(p * j))
    return np.array([
        float(np.sum(p / j ** 2)),
        float(np.sum(p * j ** 2)),
        float(np.sum(M.sum(axis=1) ** 2) / total),
        float(np.sum(pg ** 2)),
        float(np.sum(M.sum(axis=0) ** 2) / total),
        float(np.sum(ps ** 2)),
        float(total / n_pixels),
        float(np.sum(p * (i - mu_i) ** 2)),
        float(np.sum(p * (j - mu_j) ** 2)),
        _entropy(p.ravel()),
        float(np.sum(p / i ** 2)),
        float(np.sum(p * i ** 2)),
        float(np.sum(p / (i ** 2 * j ** 2))),
        float(np.sum(p * i ** 2 / j ** 2)),
        float(np.sum(p * j ** 2 / i ** 2)),
        float(np.sum(p * i ** 2 * j ** 2)),
    ])


def glrlm_features(m: TextureMatrix) -> np.ndarray:
    rows = [_size_features(slab, m.n_pixels) for slab in m.matrix if slab.sum() > 0]
    return np.mean(rows, axis=0)


def glszm_features(m: TextureMatrix) -> np.ndarray:
    return _size_features(m.matrix, m.n_pixels)


# GLDM reuses the run/zone formulas minus the percentage term, which is
# identically 1 (every pixel contributes exactly one count).
_GLDM_PICK = [0, 1, 2, 4, 5, 7, 8, 9, 10, 11, 12, 13, 14, 15]


def gldm_features(m: TextureMatrix) -> np.ndarray:
    return _size_features(m.matrix, m.n_pixels)[_GLDM_PICK]


def ngtdm_features(m: TextureMatrix) -> np.ndarray:
    n_a, p_a, s_a = m.matrix[:, 0], m.matrix[:, 1], m.matrix[:, 2]
    nvp = n_a.sum()
    if nvp == 0:
        return np.array([COARSENESS_MAX, 0.0, 0.0, 0.0, 0.0])
    present = p_a > 0
    lv = np.arange(1, len(p_a) + 1, dtype=np.float64)[present]
    p = p_a[present]
    s = s_a[present]
    ngp = p.size
    ps_sum = float(np.sum(p * s))
    s_sum = float(np.sum(s))
    coarseness = 1.0 / ps_sum if ps_sum > 0 else COARSENESS_MAX
    di = lv[:, None] - lv[None, :]
    pp = p[:, None] * p[None, :]
    contrast = float(np.sum(pp * di ** 2)) / (ngp * (ngp - 1)) * s_sum / nvp if ngp > 1 else 0.0
    ip = lv * p
    busy_den = float(np.sum(np.abs(ip[:, None] - ip[None, :])))
    busyness = ps_sum / busy_den if busy_den > 0 else 0.0
    psum = p[:, None] + p[None, :]
    complexity = float(np.sum(np.abs(di) * ((p * s)[:, None] + (p * s)[None, :]) / psum)) / nvp
    strength = float(np.sum(psum * di ** 2)) / s_sum if s_sum > 0 else 0.0
    return np.array([coarseness, contrast, busyness, complexity, strength])


_FEATURE_FUNCS = {
    MatrixKind.GLCM: glcm_features,
    MatrixKind.GLRLM: glrlm_features,
    MatrixKind.GLSZM: glszm_features,
    MatrixKind.NGTDM: ngtdm_features,
    MatrixKind.GLDM: gldm_features,
}


def matrix_features(m: TextureMatrix) -> dict[str, float]:
    values = _FEATURE_FUNCS[m.kind](m)
    return dict(zip(FEATURE_NAMES[m.kind], (float(v) for v in values)))


def texture_features(d: DiscretizedROI) -> dict[str, float]:
    """All 75 texture features keyed ``"<kind>::<feature>"``."""
    out: dict[str, float] = {}
    try:
        glcm_vals = matrix_features(glcm(d))
    except NoValidPairsError:
        glcm_vals = dict.fromkeys(GLCM_FEATURES, 0.0)
    for kind, vals in (
        (MatrixKind.GLCM, glcm_vals),
        (MatrixKind.GLRLM, matrix_features(glrlm(d))),
        (MatrixKind.GLSZM, matrix_features(glszm(d))),
        (MatrixKind.NGTDM, matrix_features(ngtdm(d))),
        (MatrixKind.GLDM, matrix_features(gldm(d))),
    ):
        for name, v in vals.items():
            out[f"{kind.value}::{name}"] = v
    return out
