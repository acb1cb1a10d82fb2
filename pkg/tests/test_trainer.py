import dataclasses
import json
import math

import numpy as np
import pytest

from radprompt.prompt_head import init_params, load_checkpoint
from radprompt.synthetic import make_synthetic
from radprompt.trainer import (Standardizer, TrainConfig, build_encoder, cosine_lr, load_config, run_cv, sgd_step,
                               stratified_folds, sweep, train_head, write_sweep_csv)

FAST = TrainConfig(epochs=4, M=4, batch_size=16, folds=3, lr0=1e-2)


@pytest.fixture(scope="module")
def data():
    return make_synthetic(n=60, n_features=20, d_e=8, d_t=8, seed=3)


def args(ds):
    return ds.ids, ds.labels, ds.pooled, ds.radiomics, ds.embeddings.class_tokens


def test_cosine_lr():
    assert cosine_lr(0, 10, 1e-4) == 1e-4
    assert cosine_lr(10, 10, 1e-4) == 0.0
    assert abs(cosine_lr(5, 10, 1e-4) - 5e-5) <= 1e-12
    for t in range(11):
        assert abs(cosine_lr(t, 10, 0.3) - 0.15 * (1 + math.cos(math.pi * t / 10))) <= 1e-12
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1e-4)


def test_sgd_conventions():
    p = init_params(3, 2, M=2, hidden=2, seed=0)
    p.b1[:] = 1.0
    zero = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    cfg = TrainConfig(momentum=0.5, weight_decay=0.1)
    q, vel = sgd_step(p, zero, {}, cfg, lr=1.0)
    # decay shrinks weights and context but leaves biases alone
    assert np.allclose(q.context, 0.9 * p.context) and np.allclose(q.W1, 0.9 * p.W1)
    assert np.array_equal(q.b1, p.b1)
    ones = {k: np.ones_like(v) for k, v in p.arrays().items()}
    nodecay = dataclasses.replace(cfg, weight_decay=0.0)
    q1, v1 = sgd_step(p, ones, {}, nodecay, lr=0.1)
    q2, v2 = sgd_step(q1, ones, v1, nodecay, lr=0.1)
    assert np.allclose(v2["b2"], 1.5) and np.allclose(q2.b2, p.b2 - 0.1 - 0.15)
    bad = dict(ones, W1=np.full_like(p.W1, np.nan))
    with pytest.raises(FloatingPointError, match="W1"):
        sgd_step(p, bad, {}, cfg, lr=0.1)


def test_stratified_folds():
    labels = np.array([0] * 100 + [1] * 60 + [2] * 40)
    folds = stratified_folds(labels, 5, seed=1)
    assert sorted(np.concatenate(folds).tolist()) == list(range(200))
    for f in folds:
        for c, n in ((0, 100), (1, 60), (2, 40)):
            assert abs((labels[f] == c).sum() - n / 5) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(folds, stratified_folds(labels, 5, seed=1)))
    with pytest.raises(ValueError, match="fewer than k"):
        stratified_folds([0, 0, 0, 1], 2, seed=0)


def test_standardizer_clips_and_handles_constant_columns():
    R = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    s = Standardizer.fit(R, clip=1.0)
    out = s.transform(np.array([[100.0, 5.0]]))
    assert out.tolist() == [[1.0, 0.0]]


def test_normalizer_fitted_on_train_split_only(tmp_path, data):
    cv = run_cv(*args(data), FAST, out_dir=tmp_path)
    R = data.radiomics
    for f in cv.folds:
        assert not set(f.normalizer_ids) & set(f.test_ids)
        assert sorted(f.train_ids + f.test_ids) == sorted(data.ids)
        _, header, extra = load_checkpoint(f.checkpoint)
        rows = [data.ids.index(i) for i in f.normalizer_ids]
        assert np.array_equal(extra["norm_mean"], R[rows].mean(axis=0))
        assert header["test_ids"] == f.test_ids
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    assert agg["n_folds"] == 3 and len(agg["fold_accuracies"]) == 3


def test_small_lr_loss_does_not_increase(data):
    cfg = dataclasses.replace(FAST, lr0=1e-4, epochs=5, batch_size=60)
    enc = build_encoder(cfg, 8, 8)
    r = Standardizer.fit(data.radiomics).transform(data.radiomics)
    _, losses = train_head(data.pooled, r, data.labels, enc, data.embeddings.class_tokens, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_training_is_deterministic(tmp_path, data):
    a = run_cv(*args(data), FAST, out_dir=tmp_path / "a")
    b = run_cv(*args(data), FAST, out_dir=tmp_path / "b")
    assert a.accuracies == b.accuracies
    for k in range(3):
        assert (tmp_path / "a" / f"fold{k}" / "checkpoint.bin").read_bytes() == \
            (tmp_path / "b" / f"fold{k}" / "checkpoint.bin").read_bytes()


def test_sweep_rows(tmp_path, data):
    rows = sweep(*args(data), dataclasses.replace(FAST, epochs=1), grid=(1, 2, 3))
    assert [r["M"] for r in rows] == [1, 2, 3] and all(0 <= r["accuracy"] <= 1 for r in rows)
    lines = write_sweep_csv(rows, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "M,fold,accuracy" and len(lines) == 4


def test_config_loading(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"M": 10, "filters": {"log_sigmas": [1]}}))
    cfg, filters = load_config(p)
    assert cfg.M == 10 and filters == {"log_sigmas": [1]}
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(p)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
