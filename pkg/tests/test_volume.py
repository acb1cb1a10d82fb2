import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_volume, write_records
from radprompt.volume import (BinaryMask, Label, NoduleRecord, VolumeFormatError, VoxelVolume, consensus_mask,
                              derive_label, load_mask, load_records, load_scores_csv, load_volume, middle_slice,
                              save_mask, save_volume)


def test_volume_round_trip_zeros(tmp_path):
    vol = VoxelVolume(np.zeros((4, 4, 4)), (2.0, 1.0, 0.5), (1.0, 2.0, 3.0))
    back = load_volume(save_volume(vol, tmp_path / "v"))
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing and back.origin == vol.origin


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_volume_round_trip_is_bit_exact(nz, ny, nx, seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal((nz, ny, nx)) * 1000).astype(np.float32).astype(np.float64)
    vol = VoxelVolume(data, (1.25, 0.7, 0.7))
    with tempfile.TemporaryDirectory() as d:
        back = load_volume(save_volume(vol, Path(d) / "v"))
    assert back.data.tobytes() == vol.data.tobytes()


def test_length_mismatch(tmp_path):
    header = {"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "float32", "endianness": "little",
              "data_file": "v.raw"}
    (tmp_path / "v.json").write_text(json.dumps(header))
    (tmp_path / "v.raw").write_bytes(np.zeros(7, dtype="<f4").tobytes())
    with pytest.raises(VolumeFormatError, match="length mismatch"):
        load_volume(tmp_path / "v.json")


def test_non_finite_rejected_with_index(tmp_path):
    header = {"dims": [1, 1, 3], "spacing": [1, 1, 1], "data_file": "v.raw"}
    (tmp_path / "v.json").write_text(json.dumps(header))
    (tmp_path / "v.raw").write_bytes(np.array([0, np.nan, 1], dtype="<f4").tobytes())
    with pytest.raises(VolumeFormatError, match="flat index 1"):
        load_volume(tmp_path / "v.json")


def test_malformed_header(tmp_path):
    (tmp_path / "v.json").write_text("{not json")
    with pytest.raises(VolumeFormatError, match="malformed"):
        load_volume(tmp_path / "v.json")


def test_io_does_not_shift(tmp_path):
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = -500
    back = load_volume(save_volume(VoxelVolume(data, (2, 2, 2)), tmp_path / "v"))
    assert back.data[0, 0, 0] == -500.0


def test_invalid_volumes():
    with pytest.raises(VolumeFormatError):
        VoxelVolume(np.zeros((2, 2)))
    with pytest.raises(VolumeFormatError):
        VoxelVolume(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(VolumeFormatError):
        BinaryMask(np.full((2, 2, 2), 2))


def test_mask_round_trip(tmp_path):
    m = BinaryMask(np.arange(8).reshape(2, 2, 2) % 2)
    assert np.array_equal(load_mask(save_mask(m, tmp_path / "m")).data, m.data)


# ---------------------------------------------------------------- label rule


@pytest.mark.parametrize("scores, label", [
    ([2, 2, 3], Label.BENIGN),
    ([4, 4, 5], Label.MALIGNANT),
    ([2.5], Label.UNSURE),
    ([1.0], Label.BENIGN),
    ([2.49], Label.BENIGN),
    ([3.5], Label.UNSURE),
    ([3.51], Label.UNSURE),
    ([5.0], Label.MALIGNANT),
])
def test_label_examples(scores, label):
    assert derive_label(scores) == label


def test_label_matches_thresholds_for_integer_scores():
    # for up to six annotators the one-decimal truncation never moves a mean across a threshold
    for k in range(1, 7):
        for combo in itertools.combinations_with_replacement(range(1, 6), k):
            mean = sum(combo) / k
            want = Label.BENIGN if mean < 2.5 else Label.MALIGNANT if mean > 3.5 else Label.UNSURE
            assert derive_label(combo) == want, combo


def test_label_errors():
    with pytest.raises(ValueError):
        derive_label([])
    with pytest.raises(ValueError):
        derive_label([0.5])
    with pytest.raises(ValueError):
        derive_label([5.5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1.0, 5.0), min_size=1, max_size=8))
def test_label_total_and_monotone(scores):
    lab = derive_label(scores)
    assert lab in (Label.BENIGN, Label.UNSURE, Label.MALIGNANT)
    assert derive_label([min(scores)]) <= derive_label([max(scores)])


# ---------------------------------------------------------------- consensus and middle slice


def _m(*vals):
    return BinaryMask(np.array(vals, dtype=bool).reshape(1, 1, -1))


def test_consensus_examples():
    assert consensus_mask([_m(1), _m(1), _m(0), _m(0)]).data.all()
    assert not consensus_mask([_m(1), _m(0), _m(0), _m(0)]).data.any()
    assert consensus_mask([_m(1, 0)]).data.tolist() == [[[True, False]]]
    with pytest.raises(ValueError):
        consensus_mask([])
    with pytest.raises(VolumeFormatError):
        consensus_mask([_m(1), _m(1, 0)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=6, max_size=6), min_size=1, max_size=5), st.randoms())
def test_consensus_properties(rows, rnd):
    masks = [_m(*r) for r in rows]
    single = masks[0]
    assert np.array_equal(consensus_mask([single] * 3).data, single.data)
    shuffled = masks[:]
    rnd.shuffle(shuffled)
    assert np.array_equal(consensus_mask(masks).data, consensus_mask(shuffled).data)


def test_middle_slice():
    assert middle_slice((10, 14)) == 12
    assert middle_slice((10, 13)) == 11
    assert middle_slice((7, 7)) == 7
    with pytest.raises(ValueError):
        middle_slice((5, 4))


# ---------------------------------------------------------------- records


def test_load_records(tmp_path):
    path = write_records(tmp_path, n=3)
    recs = load_records(path)
    assert [r.nodule_id for r in recs] == ["n000", "n001", "n002"]
    assert [r.label for r in recs] == [Label.BENIGN, Label.UNSURE, Label.MALIGNANT]


def test_scores_csv_overrides(tmp_path):
    path = write_records(tmp_path, n=1)
    csv_path = tmp_path / "scores.csv"
    csv_path.write_text("nodule_id,annotator,score\nn000,a,5\nn000,b,4\n")
    assert load_scores_csv(csv_path) == {"n000": [5.0, 4.0]}
    assert load_records(path, csv_path)[0].label == Label.MALIGNANT


def test_record_errors_name_the_nodule(tmp_path):
    path = write_records(tmp_path, n=2)
    entries = json.loads(path.read_text())
    entries[1]["scores"] = [7]
    path.write_text(json.dumps(entries))
    with pytest.raises(ValueError, match="nodule n001"):
        load_records(path)


def test_record_invariants():
    vol, masks = blob_volume(0)
    with pytest.raises(ValueError, match="inverted"):
        NoduleRecord("x", vol, tuple(masks), (2,), (3, 1))
    with pytest.raises(ValueError, match="outside"):
        NoduleRecord("x", vol, tuple(masks), (2,), (0, 99))
