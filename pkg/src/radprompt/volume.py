"""Volumes, masks and nodule records, plus their on-disk formats.

Axis order everywhere is (slice, row, column), i.e. (z, y, x), and ``spacing``
follows the same order. The slice axis (0) is the one annotated slice ranges
refer to.

Volume container: ``<stem>.json`` header plus ``<stem>.raw`` payload.

    {"dims": [nz, ny, nx], "spacing": [sz, sy, sx], "origin": [oz, oy, ox],
     "dtype": "float32", "endianness": "little", "data_file": "<stem>.raw"}

The payload is the C-order array as little-endian 32-bit floats. Masks use the
same container with values restricted to {0, 1}.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class VolumeFormatError(ValueError):
    pass


class Label(enum.IntEnum):
    BENIGN = 0
    UNSURE = 1
    MALIGNANT = 2

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


CLASS_NAMES = [lab.name.lower() for lab in Label]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VoxelVolume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise VolumeFormatError(f"volume must be 3-D with positive dims, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise VolumeFormatError(f"spacing must be 3 positive reals, got {self.spacing}")
        bad = np.flatnonzero(~np.isfinite(data))
        if bad.size:
            raise VolumeFormatError(f"non-finite value at flat index {int(bad[0])}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise VolumeFormatError(f"mask must be 3-D, got shape {data.shape}")
        if data.dtype != bool:
            if not np.isin(data, (0, 1)).all():
                raise VolumeFormatError("mask values must be 0 or 1")
            data = data.astype(bool)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def check_pair(self, volume: VoxelVolume) -> None:
        if self.dims != volume.dims:
            raise VolumeFormatError(f"mask dims {self.dims} do not match volume dims {volume.dims}")


@dataclass(frozen=True)
class NoduleRecord:
    nodule_id: str
    volume: VoxelVolume
    annotator_masks: tuple[BinaryMask, ...]
    scores: tuple[float, ...]
    slice_range: tuple[int, int]
    label: Label = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "annotator_masks", tuple(self.annotator_masks))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        first, last = (int(v) for v in self.slice_range)
        if first > last:
            raise ValueError(f"{self.nodule_id}: inverted slice_range ({first}, {last})")
        if not 0 <= first or last >= self.volume.dims[0]:
            raise ValueError(f"{self.nodule_id}: slice_range ({first}, {last}) outside volume")
        object.__setattr__(self, "slice_range", (first, last))
        for m in self.annotator_masks:
            m.check_pair(self.volume)
        object.__setattr__(self, "label", derive_label(self.scores))


def derive_label(scores: Sequence[float]) -> Label:
    """Map annotation scores (each in [1, 5]) to a class via their mean.

    mean < 2.5 is benign, mean > 3.5 malignant, and the closed interval
    [2.5, 3.5] unsure. The mean is first truncated to one decimal, so 3.51
    counts as 3.5 (unsure) and 2.49 as 2.4 (benign). Only means strictly
    inside (3.5, 3.6) are affected; integer scores from up to six annotators
    never produce one.
    """
    if len(scores) == 0:
        raise ValueError("scores must be non-empty")
    for s in scores:
        if not 1.0 <= float(s) <= 5.0:
            raise ValueError(f"score {s} outside [1, 5]")
    mean = math.fsum(float(s) for s in scores) / len(scores)
    # the small epsilon keeps exact tenths such as 2.6 from truncating to 2.5
    mean = math.floor(mean * 10.0 + 1e-9) / 10.0
    if mean < 2.5:
        return Label.BENIGN
    if mean > 3.5:
        return Label.MALIGNANT
    return Label.UNSURE


def consensus_mask(annotator_masks: Sequence[BinaryMask]) -> BinaryMask:
    """Voxel is foreground when at least half of the annotators marked it."""
    if len(annotator_masks) == 0:
        raise ValueError("at least one annotator mask is required")
    dims = annotator_masks[0].dims
    for m in annotator_masks[1:]:
        if m.dims != dims:
            raise VolumeFormatError(f"annotator mask dims {m.dims} != {dims}")
    votes = np.zeros(dims, dtype=np.int64)
    for m in annotator_masks:
        votes += m.data
    # integer form of votes / n >= 0.5
    return BinaryMask(2 * votes >= len(annotator_masks))


def middle_slice(slice_range: tuple[int, int]) -> int:
    first, last = slice_range
    if first > last:
        raise ValueError(f"inverted slice range ({first}, {last})")
    return (first + last) // 2


# ---------------------------------------------------------------- container I/O


def _header_path(path) -> Path:
    p = Path(path)
    return p if p.suffix == ".json" else p.with_suffix(".json")


def save_volume(volume: VoxelVolume, path) -> Path:
    """Write ``volume`` as ``<stem>.json`` + ``<stem>.raw``; returns the header path."""
    header_path = _header_path(path)
    data_path = header_path.with_suffix(".raw")
    header = {
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "origin": list(volume.origin),
        "dtype": "float32",
        "endianness": "little",
        "data_file": data_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    data_path.write_bytes(volume.data.astype("<f4").tobytes(order="C"))
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


def save_mask(mask: BinaryMask, path, spacing=(1.0, 1.0, 1.0)) -> Path:
    return save_volume(VoxelVolume(mask.data.astype(np.float64), spacing), path)


def load_volume(path) -> VoxelVolume:
    header_path = _header_path(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{header_path}: malformed header ({exc})") from exc
    for key in ("dims", "spacing"):
        if key not in header:
            raise VolumeFormatError(f"{header_path}: header missing '{key}'")
    dims = [int(d) for d in header["dims"]]
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{header_path}: dims must be 3 positive integers, got {dims}")
    if header.get("dtype", "float32") != "float32" or header.get("endianness", "little") != "little":
        raise VolumeFormatError(f"{header_path}: only little-endian float32 payloads are supported")
    data_path = header_path.parent / header.get("data_file", header_path.with_suffix(".raw").name)
    raw = np.frombuffer(data_path.read_bytes(), dtype="<f4")
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise VolumeFormatError(
            f"{header_path}: length mismatch, header dims {dims} need {expected} values, file has {raw.size}"
        )
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        raise VolumeFormatError(f"{header_path}: non-finite value at flat index {int(bad[0])}")
    return VoxelVolume(
        raw.astype(np.float64).reshape(dims),
        tuple(header["spacing"]),
        tuple(header.get("origin", (0.0, 0.0, 0.0))),
    )


def load_mask(path) -> BinaryMask:
    vol = load_volume(path)
    return BinaryMask(vol.data)


# ---------------------------------------------------------------- metadata I/O


def load_scores_csv(path) -> dict[str, list[float]]:
    """Read ``nodule_id, annotator, score`` rows into per-nodule score lists."""
    scores: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"nodule_id", "annotator", "score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = sorted(reader, key=lambda r: (r["nodule_id"], r["annotator"]))
    for row in rows:
        scores.setdefault(row["nodule_id"], []).append(float(row["score"]))
    return scores


def load_records(path, scores_csv=None) -> list[NoduleRecord]:
    """Load nodule metadata JSON; relative paths resolve against the JSON file.

    Each entry: ``{nodule_id, volume_path, mask_paths[], scores[], slice_range}``.
    When ``scores_csv`` is given its scores replace the inline ones.
    """
    path = Path(path)
    entries = json.loads(path.read_text())
    extra = load_scores_csv(scores_csv) if scores_csv else {}
    records = []
    seen = set()
    for entry in entries:
        nid = str(entry["nodule_id"])
        if nid in seen:
            raise ValueError(f"duplicate nodule_id {nid}")
        seen.add(nid)
        try:
            volume = load_volume(path.parent / entry["volume_path"])
            masks = [load_mask(path.parent / p) for p in entry["mask_paths"]]
            scores = extra.get(nid, entry.get("scores", []))
            records.append(NoduleRecord(nid, volume, tuple(masks), tuple(scores), tuple(entry["slice_range"])))
        except (ValueError, KeyError, OSError) as exc:
            raise ValueError(f"nodule {nid}: {exc}") from exc
    return records
