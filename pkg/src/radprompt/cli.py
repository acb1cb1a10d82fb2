"""Command-line entry point: ``radprompt <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (bad file, shape, label or config),
2 failure while computing (for example a non-finite gradient).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import selftest
from .encoders import EmbeddingStore, FrozenTextEncoder, ToyImageEncoder, class_tokens, load_embeddings
from .filters import FilterConfig
from .metrics import compute_metrics
from .preprocess import DEFAULT_RESIZE, nodule_crops, prepare_record
from .prompt_head import load_checkpoint
from .radiomics import build_manifest, extract_all, feature_matrix, read_feature_table, write_feature_table
from .synthetic import make_synthetic
from .trainer import (SWEEP_GRID, Standardizer, TrainConfig, load_config, predict_proba, run_cv, sweep,
                      write_sweep_csv)
from .volume import CLASS_NAMES, VoxelVolume, load_records, save_mask, save_volume

log = logging.getLogger("radprompt")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers


def _config(args) -> tuple[TrainConfig, FilterConfig]:
    if args.config:
        cfg, filters = load_config(args.config)
    else:
        cfg, filters = TrainConfig(), {}
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg, FilterConfig.from_dict(filters)


def write_labels(path, labels: dict[str, int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nodule_id", "label", "class"])
        for nid in sorted(labels):
            w.writerow([nid, labels[nid], CLASS_NAMES[labels[nid]]])
    return path


def read_labels(path) -> dict[str, int]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "nodule_id" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise ValueError(f"{path}: need nodule_id and label columns")
        for row in reader:
            nid = row["nodule_id"]
            if nid in out:
                raise ValueError(f"{path}: duplicate nodule_id {nid}")
            try:
                out[nid] = int(row["label"])
            except ValueError:
                raise ValueError(f"nodule {nid}: label {row['label']!r} is not an integer") from None
    return out


def labels_path_for(table_path) -> Path:
    p = Path(table_path)
    return p.with_name(p.stem + ".labels.csv")


def _load_dataset(args, n_classes: int | None = None):
    """ids, labels, pooled embeddings, raw radiomics and class tokens from files."""
    if not (args.features and args.embeddings):
        raise UsageError("need --features and --embeddings (or --synthetic)")
    vectors = read_feature_table(args.features)
    store = load_embeddings(args.embeddings, n_classes)
    labels = read_labels(args.labels or labels_path_for(args.features))
    ids = sorted(v.nodule_id for v in vectors)
    for nid in ids:
        if nid not in labels:
            raise ValueError(f"nodule {nid}: no label")
        if not 0 <= labels[nid] < store.n_classes:
            raise ValueError(f"nodule {nid}: label {labels[nid]} outside [0, {store.n_classes - 1}]")
    y = np.array([labels[i] for i in ids], dtype=np.int64)
    return ids, y, store.pooled(ids), feature_matrix(vectors, ids), store.class_tokens


def _synthetic(cfg: TrainConfig, args):
    ds = make_synthetic(n=args.n, d_t=cfg.d_t, seed=args.data_seed, class_token_seed=cfg.class_token_seed)
    return ds.ids, ds.labels, ds.pooled, ds.radiomics, ds.embeddings.class_tokens


# ---------------------------------------------------------------- subcommands


def cmd_extract(args) -> int:
    _, fcfg = _config(args)
    records = load_records(args.records, args.scores)
    if not records:
        raise ValueError(f"{args.records}: no nodules")
    manifest = build_manifest(fcfg)
    vectors = [extract_all(rec, fcfg, manifest) for rec in records]
    out = write_feature_table(vectors, args.out, manifest)
    write_labels(labels_path_for(out), {rec.nodule_id: int(rec.label) for rec in records})
    log.info("wrote %d rows x %d features to %s", len(vectors), len(manifest), out)
    return 0


def cmd_preprocess(args) -> int:
    cfg, _ = _config(args)
    records = load_records(args.records, args.scores)
    out = Path(args.out)
    encoder = ToyImageEncoder(args.d_e, args.image_seed)
    store = EmbeddingStore(args.d_e, class_tokens(cfg.class_token_seed, len(CLASS_NAMES), cfg.d_t))
    for rec in records:
        try:
            vol, mask, k = prepare_record(rec)
            crops = nodule_crops(rec, args.size)
        except ValueError as exc:
            raise ValueError(f"nodule {rec.nodule_id}: {exc}") from exc
        nd = out / rec.nodule_id
        save_volume(vol, nd / "volume")
        save_mask(mask, nd / "consensus", vol.spacing)
        save_volume(VoxelVolume(np.stack(crops), (1.0, 1.0, 1.0)), nd / "crops")
        (nd / "slice.json").write_text(json.dumps({"middle_slice": k, "n_crops": len(crops)}) + "\n")
        store.add(rec.nodule_id, np.stack([encoder(c) for c in crops]))
    store.save(out / "embeddings.json")
    write_labels(out / "labels.csv", {rec.nodule_id: int(rec.label) for rec in records})
    log.info("preprocessed %d nodules into %s", len(records), out)
    return 0


def cmd_train(args) -> int:
    cfg, _ = _config(args)
    if args.synthetic:
        ids, y, x, R, ct = _synthetic(cfg, args)
    else:
        ids, y, x, R, ct = _load_dataset(args)
    if ct.shape[1] != cfg.d_t:
        cfg = dataclasses.replace(cfg, d_t=int(ct.shape[1]))
    folds = [int(f) for f in args.folds.split(",")] if args.folds else None
    cv = run_cv(ids, y, x, R, ct, cfg, out_dir=args.out, only_folds=folds, class_names=CLASS_NAMES[:ct.shape[0]])
    agg = cv.aggregate()
    print(f"accuracy {agg['accuracy_mean']:.4f} +/- {agg['accuracy_std']:.4f} over {agg['n_folds']} folds")
    return 0


def cmd_evaluate(args) -> int:
    params, header, arrays = load_checkpoint(args.checkpoint)
    for key in ("norm_mean", "norm_std", "class_tokens"):
        if key not in arrays:
            raise ValueError(f"{args.checkpoint}: checkpoint lacks {key}")
    ct = arrays["class_tokens"]
    ids_all, y_all, x_all, R_all, _ = _load_dataset(args, n_classes=ct.shape[0])
    wanted = args.ids.split(",") if args.ids else header.get("test_ids")
    if not wanted:
        raise UsageError("no evaluation ids: pass --ids or use a checkpoint written by train")
    pos = {nid: i for i, nid in enumerate(ids_all)}
    missing = [nid for nid in wanted if nid not in pos]
    if missing:
        raise ValueError(f"nodule {missing[0]}: not in the evaluation inputs")
    idx = np.array([pos[nid] for nid in wanted])
    if R_all.shape[1] != params.n_features:
        raise ValueError(f"feature table has {R_all.shape[1]} columns, checkpoint expects {params.n_features}")
    enc_cfg = header["encoder"]
    encoder = FrozenTextEncoder(enc_cfg["seed"], enc_cfg["d_t"], enc_cfg["hidden"], enc_cfg["d_e"],
                                gain=enc_cfg["gain"], bias_std=enc_cfg["bias_std"])
    norm = Standardizer(arrays["norm_mean"], arrays["norm_std"], float(header.get("clip", 5.0)))
    probs = predict_proba(params, x_all[idx], norm.transform(R_all[idx]), encoder, ct)
    metrics = compute_metrics(y_all[idx], probs, n_classes=ct.shape[0], class_names=CLASS_NAMES[:ct.shape[0]])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    metrics.write_roc_csv(out / "roc.csv")
    print(f"accuracy {metrics.accuracy:.4f} on {len(wanted)} nodules")
    return 0


def cmd_sweep(args) -> int:
    cfg, _ = _config(args)
    if args.synthetic:
        ids, y, x, R, ct = _synthetic(cfg, args)
    else:
        ids, y, x, R, ct = _load_dataset(args)
    if ct.shape[1] != cfg.d_t:
        cfg = dataclasses.replace(cfg, d_t=int(ct.shape[1]))
    grid = [int(m) for m in args.grid.split(",")] if args.grid else list(SWEEP_GRID)
    rows = sweep(ids, y, x, R, ct, cfg, grid, fold=args.fold)
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"M={r['M']:3d}  accuracy {r['accuracy']:.4f}")
    return 0


def cmd_selftest(args) -> int:
    ok = True
    for name, passed, detail in selftest.run_all():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= bool(passed)
    return 0 if ok else 2


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radprompt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config (training keys plus an optional 'filters' block)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    def data_inputs(sp, synthetic=True):
        sp.add_argument("--features", help="feature CSV written by extract")
        sp.add_argument("--embeddings", help="embedding manifest JSON")
        sp.add_argument("--labels", help="labels CSV (default: <features stem>.labels.csv)")
        if synthetic:
            sp.add_argument("--synthetic", action="store_true", help="use a generated separable dataset")
            sp.add_argument("--n", type=int, default=300, help="synthetic dataset size")
            sp.add_argument("--data-seed", type=int, default=7, help="synthetic dataset seed")

    sp = sub.add_parser("extract", help="volumes + masks -> feature CSV + manifest")
    common(sp)
    sp.add_argument("--records", required=True)
    sp.add_argument("--scores", help="optional nodule_id,annotator,score CSV")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("preprocess", help="records -> resampled volumes, consensus masks, crops, embeddings")
    common(sp)
    sp.add_argument("--records", required=True)
    sp.add_argument("--scores")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=DEFAULT_RESIZE)
    sp.add_argument("--d-e", type=int, default=64)
    sp.add_argument("--image-seed", type=int, default=0)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="stratified cross-validation training")
    common(sp)
    data_inputs(sp)
    sp.add_argument("--folds", help="comma-separated subset of folds to run")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="checkpoint + held-out set -> metrics JSON + ROC CSV")
    data_inputs(sp, synthetic=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--ids", help="comma-separated nodule ids (default: the checkpoint's held-out fold)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="held-out accuracy over a grid of context-token counts")
    common(sp)
    data_inputs(sp)
    sp.add_argument("--grid", help="comma-separated M values (default 10..70 step 10)")
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("selftest", help="run the built-in consistency checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a failure inside the computation
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
