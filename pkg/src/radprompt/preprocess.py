"""Isotropic resampling, intensity shift, nodule cropping and resizing."""

from __future__ import annotations

import math

import numpy as np

from .volume import BinaryMask, NoduleRecord, VoxelVolume, consensus_mask, middle_slice

INTENSITY_SHIFT = 1000.0
DEFAULT_RESIZE = 224


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _target_positions(n_in: int, spacing: float) -> tuple[int, np.ndarray]:
    # Output sample k sits k mm from the first input sample (corner aligned),
    # i.e. at fractional input index k / spacing.
    n_out = max(1, _round_half_up(n_in * spacing))
    return n_out, np.arange(n_out, dtype=np.float64) / spacing


def _linear_axis(a: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    n = a.shape[axis]
    pos = np.clip(pos, 0.0, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    shape = [1] * a.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    a_lo = np.take(a, lo, axis=axis)
    a_hi = np.take(a, hi, axis=axis)
    return a_lo + w * (a_hi - a_lo)


def _nearest_axis(a: np.ndarray, axis: int, pos: np.ndarray) -> np.ndarray:
    n = a.shape[axis]
    idx = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, n - 1)
    return np.take(a, idx, axis=axis)


def resample_isotropic(volume: VoxelVolume, mask: BinaryMask) -> tuple[VoxelVolume, BinaryMask]:
    """Resample to 1 mm spacing: trilinear for the image, nearest for the mask.

    Output dims are ``round(dim * spacing)`` per axis. Samples past the last
    input sample take the edge value.
    """
    mask.check_pair(volume)
    for axis, (n, s) in enumerate(zip(volume.dims, volume.spacing)):
        if n < 2 and s != 1.0:
            raise ValueError(f"axis {axis} has a single sample with spacing {s}; cannot resample")
    if volume.spacing == (1.0, 1.0, 1.0):
        return volume, mask
    img = volume.data
    lab = mask.data
    for axis, s in enumerate(volume.spacing):
        if s == 1.0:
            continue
        _, pos = _target_positions(img.shape[axis], s)
        img = _linear_axis(img, axis, pos)
        lab = _nearest_axis(lab, axis, pos)
    return VoxelVolume(img, (1.0, 1.0, 1.0), volume.origin), BinaryMask(lab)


def shift_intensities(volume: VoxelVolume, shift: float = INTENSITY_SHIFT) -> VoxelVolume:
    return VoxelVolume(volume.data + shift, volume.spacing, volume.origin)


def equivalent_diameter(area: float) -> float:
    return 2.0 * math.sqrt(area / math.pi)


def crop_nodule(slice_: np.ndarray, mask_slice: np.ndarray) -> np.ndarray:
    """Square crop of side round(2 * equivalent diameter) around the mask centroid.

    For even sides the centroid lands on index ``side // 2`` of the crop.
    Regions outside the slice are zero-padded.
    """
    slice_ = np.asarray(slice_, dtype=np.float64)
    mask_slice = np.asarray(mask_slice, dtype=bool)
    if slice_.shape != mask_slice.shape or slice_.ndim != 2:
        raise ValueError(f"slice {slice_.shape} and mask {mask_slice.shape} must be equal 2-D shapes")
    rows, cols = np.nonzero(mask_slice)
    if rows.size == 0:
        raise ValueError("empty mask: cannot crop")
    side = max(1, _round_half_up(2.0 * equivalent_diameter(rows.size)))
    cr = _round_half_up(rows.mean())
    cc = _round_half_up(cols.mean())
    r0 = cr - side // 2
    c0 = cc - side // 2
    out = np.zeros((side, side), dtype=np.float64)
    h, w = slice_.shape
    sr0, sr1 = max(r0, 0), min(r0 + side, h)
    sc0, sc1 = max(c0, 0), min(c0 + side, w)
    if sr0 < sr1 and sc0 < sc1:
        out[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = slice_[sr0:sr1, sc0:sc1]
    return out


def resize_bilinear(crop: np.ndarray, out_size: int = DEFAULT_RESIZE) -> np.ndarray:
    """Bilinear resize to ``out_size`` x ``out_size`` with aligned corners."""
    crop = np.asarray(crop, dtype=np.float64)
    if crop.ndim != 2 or crop.size == 0:
        raise ValueError("crop must be a non-empty 2-D grid")
    if out_size < 1:
        raise ValueError("out_size must be positive")
    if crop.shape == (out_size, out_size):
        return crop.copy()
    out = crop
    for axis in (0, 1):
        n = out.shape[axis]
        if out_size == 1:
            pos = np.array([(n - 1) / 2.0])
        else:
            pos = np.arange(out_size, dtype=np.float64) * (n - 1) / (out_size - 1)
        out = _linear_axis(out, axis, pos)
    return out


def prepare_record(record: NoduleRecord) -> tuple[VoxelVolume, BinaryMask, int]:
    """Consensus mask, 1 mm resampling, +1000 shift and middle-slice pick.

    The annotated slice range is mapped into resampled slice indices before
    the middle is taken. If the consensus mask is empty there, the closest
    non-empty slice inside the range is used instead.
    """
    mask = consensus_mask(record.annotator_masks)
    vol, mask = resample_isotropic(record.volume, mask)
    vol = shift_intensities(vol)
    sz = record.volume.spacing[0]
    last_idx = vol.dims[0] - 1
    first = min(_round_half_up(record.slice_range[0] * sz), last_idx)
    last = min(_round_half_up(record.slice_range[1] * sz), last_idx)
    mid = middle_slice((first, last))
    candidates = sorted(range(first, last + 1), key=lambda k: (abs(k - mid), k))
    for k in candidates:
        if mask.data[k].any():
            return vol, mask, k
    raise ValueError(f"{record.nodule_id}: consensus mask is empty over slices {first}..{last}")


def nodule_crops(record: NoduleRecord, out_size: int = DEFAULT_RESIZE) -> list[np.ndarray]:
    """Resized crops of every nodule-containing slice in the annotated range."""
    vol, mask, _ = prepare_record(record)
    sz = record.volume.spacing[0]
    last_idx = vol.dims[0] - 1
    first = min(_round_half_up(record.slice_range[0] * sz), last_idx)
    last = min(_round_half_up(record.slice_range[1] * sz), last_idx)
    crops = []
    for k in range(first, last + 1):
        if mask.data[k].any():
            crops.append(resize_bilinear(crop_nodule(vol.data[k], mask.data[k]), out_size))
    return crops
