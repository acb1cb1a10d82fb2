"""Per-nodule radiomics vector: shape, first-order and texture features.

Shape features are computed once on the consensus ROI of the selected slice.
First-order and the five texture classes are computed on the original slice
and on every filter channel, with fixed-width discretization (width 25 by
default). The order of the resulting vector is defined by the
:class:`FeatureManifest`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .filters import FilterConfig, discretize_fixed_width, filter_bank, list_filter_channels
from .preprocess import equivalent_diameter, prepare_record
from .texture import FEATURE_NAMES, MatrixKind, texture_features
from .volume import NoduleRecord

MANIFEST_VERSION = "1.0"

FIRSTORDER_FEATURES = (
    "Energy", "TotalEnergy", "Entropy", "Minimum", "10Percentile", "90Percentile", "Maximum", "Mean",
    "Median", "InterquartileRange", "Range", "MeanAbsoluteDeviation", "RobustMeanAbsoluteDeviation",
    "RootMeanSquared", "Skewness", "Kurtosis", "Variance", "Uniformity",
)
SHAPE_FEATURES = (
    "PixelSurface", "Perimeter", "PerimeterSurfaceRatio", "Sphericity", "EquivalentDiameter",
    "MajorAxisLength", "MinorAxisLength", "Elongation", "MaximumDiameter", "Extent",
)

# How each original-channel feature responds to adding a constant to every
# intensity: "invariant" (unchanged), "shift" (moves by the same constant) or
# "variant". Texture and shape features are all invariant.
_FIRSTORDER_SHIFT = {
    "Energy": "variant", "TotalEnergy": "variant", "RootMeanSquared": "variant",
    "Minimum": "shift", "10Percentile": "shift", "90Percentile": "shift", "Maximum": "shift",
    "Mean": "shift", "Median": "shift",
}


def firstorder_features(slice_: np.ndarray, roi: np.ndarray, bin_width: float = 25.0,
                        pixel_area: float = 1.0) -> dict[str, float]:
    slice_ = np.asarray(slice_, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    x = slice_[roi]
    if x.size == 0:
        raise ValueError("empty ROI")
    n = x.size
    bins = discretize_fixed_width(slice_, roi, bin_width).grid[roi]
    p = np.bincount(bins)[1:] / n
    p = p[p > 0]

    mean = float(np.mean(x))
    flat = x.max() == x.min()
    dev = x - mean
    m2 = 0.0 if flat else float(np.mean(dev ** 2))
    m3 = float(np.mean(dev ** 3))
    m4 = float(np.mean(dev ** 4))
    p10, p25, p50, p75, p90 = (float(v) for v in np.percentile(x, [10, 25, 50, 75, 90]))
    robust = x[(x >= p10) & (x <= p90)]
    energy = float(np.sum(x ** 2))
    return {
        "Energy": energy,
        "TotalEnergy": pixel_area * energy,
        "Entropy": float(-np.sum(p * np.log2(p))),
        "Minimum": float(x.min()),
        "10Percentile": p10,
        "90Percentile": p90,
        "Maximum": float(x.max()),
        "Mean": mean,
        "Median": p50,
        "InterquartileRange": p75 - p25,
        "Range": float(x.max() - x.min()),
        "MeanAbsoluteDeviation": 0.0 if flat else float(np.mean(np.abs(dev))),
        "RobustMeanAbsoluteDeviation": 0.0 if flat else float(np.mean(np.abs(robust - robust.mean()))),
        "RootMeanSquared": math.sqrt(energy / n),
        "Skewness": 0.0 if m2 == 0 else m3 / m2 ** 1.5,
        "Kurtosis": 0.0 if m2 == 0 else m4 / m2 ** 2,
        "Variance": m2,
        "Uniformity": float(np.sum(p ** 2)),
    }


def _perimeter(roi: np.ndarray) -> int:
    """Number of pixel edges separating the ROI from the background."""
    padded = np.pad(roi, 1)
    edges = 0
    for axis in (0, 1):
        edges += int(np.count_nonzero(np.diff(padded.astype(np.int8), axis=axis)))
    return edges


def _max_diameter(rows: np.ndarray, cols: np.ndarray) -> float:
    corners = np.concatenate([
        np.stack([rows + dr, cols + dc], axis=1) for dr in (0, 1) for dc in (0, 1)
    ]).astype(np.float64)
    corners = np.unique(corners, axis=0)
    try:
        pts = corners[ConvexHull(corners).vertices]
    except QhullError:
        pts = corners
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff ** 2, axis=-1))))


def shape2d_features(roi: np.ndarray, spacing: float = 1.0) -> dict[str, float]:
    """2-D shape descriptors of a binary ROI (isotropic ``spacing`` in mm).

    Perimeter counts exposed pixel edges, so a single pixel has perimeter 4.
    Axis lengths are ``4 sqrt(eigenvalue)`` of the pixel-centre covariance;
    elongation is ``sqrt(minor / major)`` and 1 when both are zero.
    """
    roi = np.asarray(roi, dtype=bool)
    rows, cols = np.nonzero(roi)
    if rows.size == 0:
        raise ValueError("empty ROI")
    area = rows.size * spacing ** 2
    perim = _perimeter(roi) * spacing
    coords = np.stack([rows, cols]).astype(np.float64) * spacing
    cov = np.cov(coords, bias=True) if rows.size > 1 else np.zeros((2, 2))
    lam = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    lam_min, lam_max = float(lam[0]), float(lam[1])
    height = (rows.max() - rows.min() + 1) * spacing
    width = (cols.max() - cols.min() + 1) * spacing
    return {
        "PixelSurface": area,
        "Perimeter": perim,
        "PerimeterSurfaceRatio": perim / area,
        "Sphericity": 2.0 * math.sqrt(math.pi * area) / perim,
        "EquivalentDiameter": equivalent_diameter(area),
        "MajorAxisLength": 4.0 * math.sqrt(lam_max),
        "MinorAxisLength": 4.0 * math.sqrt(lam_min),
        "Elongation": math.sqrt(lam_min / lam_max) if lam_max > 0 else 1.0,
        "MaximumDiameter": _max_diameter(rows, cols) * spacing,
        "Extent": area / (height * width),
    }


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    channel: str
    feature_class: str
    feature_name: str
    parameters: dict
    shift_behavior: str

    @property
    def name(self) -> str:
        return f"{self.channel}::{self.feature_class}::{self.feature_name}"


@dataclass(frozen=True)
class FeatureManifest:
    entries: tuple[ManifestEntry, ...]
    filter_config: FilterConfig
    version: str = MANIFEST_VERSION

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "n_features": len(self.entries),
            "filter_config": self.filter_config.to_dict(),
            "channels": list_filter_channels(self.filter_config),
            "conventions": {
                "discretization": "bin = floor((x - min_roi) / width) + 1",
                "intensity_shift": 1000.0,
                "spacing_mm": 1.0,
                "glcm": {"offsets": [[0, 1], [1, 0], [1, 1], [1, -1]], "distance": 1, "symmetric": True,
                         "aggregation": "mean over directions"},
                "glrlm": {"directions": [[0, 1], [1, 0], [1, 1], [1, -1]], "aggregation": "mean over directions"},
                "glszm": {"connectivity": 8},
                "ngtdm": {"distance": 1},
                "gldm": {"distance": 1, "alpha": 0},
                "filters": {
                    "square": "(c x)^2, c = 1/sqrt(max|x|)",
                    "squareroot": "sign(x) sqrt(c|x|), c = max|x|",
                    "logarithm": "sign(x) c log(|x|+1), c = max|x|/log(max|x|+1)",
                    "exponential": "exp(c x), c = log(max|x|)/max|x|",
                    "wavelet": "undecimated single-level Haar, lo=(a+b)/2, hi=(a-b)/2",
                    "log": "zero-mean Laplacian of Gaussian, support 2*ceil(4 sigma)+1",
                    "gradient": "central differences",
                    "lbp2d": "R=1, P=8 integer neighbours, rotation-invariant uniform, codes 0..9",
                    "padding": "symmetric",
                },
            },
            "features": [
                {"name": e.name, "channel": e.channel, "class": e.feature_class, "feature": e.feature_name,
                 "parameters": e.parameters, "shift_behavior": e.shift_behavior}
                for e in self.entries
            ],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_manifest(config: FilterConfig = FilterConfig()) -> FeatureManifest:
    entries = [ManifestEntry("original", "shape2d", f, {}, "invariant") for f in SHAPE_FEATURES]
    for channel in list_filter_channels(config):
        original = channel == "original"
        for f in FIRSTORDER_FEATURES:
            behavior = _FIRSTORDER_SHIFT.get(f, "invariant") if original else "unasserted"
            entries.append(ManifestEntry(channel, "firstorder", f, {"bin_width": config.bin_width}, behavior))
        for kind in MatrixKind:
            for f in FEATURE_NAMES[kind]:
                entries.append(ManifestEntry(channel, kind.value, f, {"bin_width": config.bin_width},
                                             "invariant" if original else "unasserted"))
    return FeatureManifest(tuple(entries), config)


# ---------------------------------------------------------------- extraction


@dataclass(frozen=True)
class RadiomicsVector:
    nodule_id: str
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.names),):
            raise ValueError(f"{self.nodule_id}: {values.size} values for {len(self.names)} names")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValueError(f"{self.nodule_id}: non-finite feature {self.names[int(bad[0])]}")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)


def extract_slice(slice_: np.ndarray, roi: np.ndarray, config: FilterConfig = FilterConfig(),
                  manifest: FeatureManifest | None = None) -> np.ndarray:
    """Feature values for one 2-D slice and ROI, in manifest order."""
    manifest = manifest or build_manifest(config)
    roi = np.asarray(roi, dtype=bool)
    if not roi.any():
        raise ValueError("empty ROI")
    found: dict[str, float] = {}
    for f, v in shape2d_features(roi).items():
        found[f"original::shape2d::{f}"] = v
    for channel, image in filter_bank(slice_, config):
        for f, v in firstorder_features(image, roi, config.bin_width).items():
            found[f"{channel}::firstorder::{f}"] = v
        for key, v in texture_features(discretize_fixed_width(image, roi, config.bin_width)).items():
            found[f"{channel}::{key}"] = v
    return np.array([found[name] for name in manifest.names], dtype=np.float64)


def extract_all(record: NoduleRecord, config: FilterConfig = FilterConfig(),
                manifest: FeatureManifest | None = None) -> RadiomicsVector:
    manifest = manifest or build_manifest(config)
    try:
        vol, mask, k = prepare_record(record)
        values = extract_slice(vol.data[k], mask.data[k], config, manifest)
        return RadiomicsVector(record.nodule_id, tuple(manifest.names), values)
    except ValueError as exc:
        if str(exc).startswith(record.nodule_id):
            raise
        raise ValueError(f"{record.nodule_id}: {exc}") from exc


# ---------------------------------------------------------------- tables


def _check_shared(vectors: Sequence[RadiomicsVector], names: Sequence[str] | None) -> tuple[str, ...]:
    ref = tuple(names) if names is not None else (vectors[0].names if vectors else ())
    for v in vectors:
        if v.names != ref:
            raise ValueError(f"{v.nodule_id}: feature names do not match the table manifest")
    return ref


def format_feature_table(vectors: Sequence[RadiomicsVector], names: Sequence[str] | None = None) -> str:
    names = _check_shared(vectors, names)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["nodule_id", *names])
    for v in sorted(vectors, key=lambda v: v.nodule_id):
        writer.writerow([v.nodule_id, *(repr(float(x)) for x in v.values)])
    return buf.getvalue()


def write_feature_table(vectors: Sequence[RadiomicsVector], path, manifest: FeatureManifest | None = None) -> Path:
    """CSV with one row per nodule; the manifest JSON lands next to it."""
    path = Path(path)
    names = manifest.names if manifest is not None else None
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_feature_table(vectors, names))
    if manifest is not None:
        manifest.write(manifest_path_for(path))
    return path


def manifest_path_for(table_path) -> Path:
    p = Path(table_path)
    return p.with_name(p.stem + ".manifest.json")


def read_feature_table(path) -> list[RadiomicsVector]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "nodule_id":
            raise ValueError(f"{path}: first column must be nodule_id")
        names = tuple(header[1:])
        out = []
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: row for {row[0] if row else '?'} has {len(row)} columns")
            out.append(RadiomicsVector(row[0], names, np.array([float(x) for x in row[1:]])))
    return out


def feature_matrix(vectors: Iterable[RadiomicsVector], ids: Sequence[str]) -> np.ndarray:
    by_id = {v.nodule_id: v for v in vectors}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValueError(f"no radiomics row for nodule {missing[0]}")
    return np.stack([by_id[i].values for i in ids])
