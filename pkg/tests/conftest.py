import json
from pathlib import Path

import numpy as np
import pytest

from radprompt.rng import Rng
from radprompt.volume import BinaryMask, VoxelVolume, save_mask, save_volume


def blob_volume(seed: int, dims=(6, 20, 20), spacing=(2.0, 1.5, 1.5), radius=4.0, level=-200.0):
    """Noisy lung-like background with a bright ellipsoidal nodule and two annotator masks."""
    rng = Rng(seed)
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    cz, cy, cx = ((n - 1) / 2.0 for n in dims)
    dist = np.sqrt(((z - cz) * spacing[0] / spacing[1]) ** 2 + (y - cy) ** 2 + (x - cx) ** 2)
    data = -850.0 + rng.normal(dims, 40.0)
    inside = dist <= radius
    data[inside] = level + rng.normal((int(inside.sum()),), 60.0)
    # store as float32-representable values so container round trips are exact
    data = data.astype(np.float32).astype(np.float64)
    m1 = dist <= radius
    m2 = dist <= radius - 0.7
    return VoxelVolume(data, spacing), [BinaryMask(m1), BinaryMask(m2)]


def write_records(root: Path, n: int = 2, seed: int = 0) -> Path:
    """Write ``n`` nodules in the container format plus records.json; returns the JSON path."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    score_sets = ([1, 2, 2], [3, 3, 4], [4, 5, 5])
    for i in range(n):
        vol, masks = blob_volume(seed + i, radius=3.5 + 0.5 * (i % 3), level=-300.0 + 150.0 * (i % 3))
        nid = f"n{i:03d}"
        save_volume(vol, root / f"{nid}_ct")
        mask_paths = []
        for a, m in enumerate(masks):
            save_mask(m, root / f"{nid}_mask{a}", vol.spacing)
            mask_paths.append(f"{nid}_mask{a}.json")
        entries.append({"nodule_id": nid, "volume_path": f"{nid}_ct.json", "mask_paths": mask_paths,
                        "scores": score_sets[i % 3], "slice_range": [1, vol.dims[0] - 2]})
    path = root / "records.json"
    path.write_text(json.dumps(entries, indent=2))
    return path


@pytest.fixture
def records_path(tmp_path):
    return write_records(tmp_path / "raw", n=3)


FAST_CONFIG = {"epochs": 3, "folds": 3, "M": 4, "batch_size": 8, "lr0": 0.01}


def run_pipeline(raw: Path, out: Path, config: dict = FAST_CONFIG) -> dict:
    """preprocess -> extract -> train -> evaluate through the CLI; returns the produced paths."""
    from radprompt.cli import main
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "config.json"
    cfg.write_text(json.dumps(config))
    records = str(raw / "records.json")
    paths = {"prep": out / "prep", "features": out / "features.csv", "train": out / "train", "eval": out / "eval"}
    steps = [
        ["preprocess", "--records", records, "--out", str(paths["prep"]), "--size", "32", "--d-e", "8",
         "--config", str(cfg)],
        ["extract", "--records", records, "--out", str(paths["features"]), "--config", str(cfg)],
        ["train", "--features", str(paths["features"]), "--embeddings", str(paths["prep"] / "embeddings.json"),
         "--out", str(paths["train"]), "--config", str(cfg)],
        ["evaluate", "--checkpoint", str(paths["train"] / "fold0" / "checkpoint.json"),
         "--features", str(paths["features"]), "--embeddings", str(paths["prep"] / "embeddings.json"),
         "--out", str(paths["eval"])],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    return paths


# acceptance criteria register (number, title, passed, detail) here
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {n:2d}  {title}: {detail}")
