"""``dacat`` command line: gen-data, train, infer, eval, ablate, bench.

Every command is determined by its flags, seed and input files, and writes
plain CSV / binary / JSON outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import ModelConfig, Readout
from .data import (EmbeddingFormatError, AnnotationError, SyntheticConfig, gen_dataset,
                   load_annotations, load_embeddings, write_annotations, write_embeddings)
from .eval.ablation import TrainSettings, ablate_readout, per_phase_table_csv
from .eval.bench import bench_csv, bench_throughput
from .eval.metrics import relaxed_metrics, reports_csv, strict_metrics
from .neural.checkpoint import CheckpointError, load_params, save_params
from .pipeline.engine import run_inference
from .pipeline.model import check_cache_params, check_params
from .pipeline.train import TrainHistory, train_cache_encoder, train_dacat

log = logging.getLogger("dacat")

MANIFEST = "manifest.json"
CACHE_CKPT = "cache.dcpt"
MODEL_CKPT = "dacat.dcpt"
RUN_MANIFEST = "run.json"
DTYPES = {"f32": np.float32, "f64": np.float64}


class CommandError(Exception):
    """User-facing failure; printed without a traceback."""


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CommandError(f"missing {what}: {path}")
    return path


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise CommandError(f"cannot write {path}: {e.strerror}") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CommandError(f"cannot create output directory {out}: {e.strerror}") from None
    return out


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- dataset directory ------------------------------------------------------

def load_dataset_dir(path) -> tuple:
    """Read a dataset directory. Returns (manifest, names, [(X, timeline), ...])."""
    root = Path(path)
    manifest = json.loads(_require(root / MANIFEST, "dataset manifest").read_text())
    K, fps = int(manifest["phases"]), float(manifest.get("fps", 1.0))
    names, data = [], []
    for entry in manifest["videos"]:
        emb = _require(root / entry["embeddings"], "embedding file")
        ann = _require(root / entry["annotations"], "annotation file")
        try:
            X = load_embeddings(emb)
            y = load_annotations(ann, K, fps)
        except (EmbeddingFormatError, AnnotationError) as e:
            raise CommandError(f"malformed dataset: {e}") from None
        if X.shape[0] != len(y):
            raise CommandError(f"malformed dataset: {emb} has {X.shape[0]} frames "
                               f"but {ann} has {len(y)} labels")
        names.append(entry["name"])
        data.append((X.astype(np.float64), y))
    return manifest, names, data


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(K=args.phases, d_raw=args.d_raw, n_videos=args.videos,
                          video_len=args.len, seed=args.seed,
                          interference_rate=args.interference, noise_scale=args.noise,
                          mean_dwell=args.dwell, interference_leak=args.leak,
                          interference_burst=args.burst)
    out = _out_dir(args.out)
    videos = []
    for i, (X, y) in enumerate(gen_dataset(cfg)):
        name = f"video_{i:03d}"
        try:
            write_embeddings(out / f"{name}.dcat", X.astype(np.float32))
            write_annotations(out / f"{name}.csv", y)
        except OSError as e:
            raise CommandError(f"cannot write into {out}: {e.strerror}") from None
        videos.append({"name": name, "embeddings": f"{name}.dcat",
                       "annotations": f"{name}.csv", "frames": len(y)})
    manifest = {"generator": cfg.to_dict(), "phases": cfg.K, "d_raw": cfg.d_raw, "fps": 1.0,
                "seed": args.seed, "interference": args.interference, "videos": videos}
    _write_text(out / MANIFEST, _json(manifest))
    print(f"wrote {len(videos)} videos to {out}")
    return 0


# -- training ---------------------------------------------------------------

def _config_from_args(args, manifest) -> ModelConfig:
    K = int(manifest["phases"])
    if args.phases is not None and args.phases != K:
        raise CommandError(f"--phases {args.phases} does not match dataset ({K} phases)")
    return ModelConfig(d=args.d, d_raw=int(manifest["d_raw"]), K=K, hidden=args.hidden,
                       fusion_mode=args.fusion, interaction=args.interaction,
                       readout=Readout.parse(args.readout), branches=args.branches,
                       capacity=args.capacity, seed=args.seed)


def _load_run(ckpt: Path) -> dict:
    return json.loads(_require(ckpt / RUN_MANIFEST, "run manifest").read_text())


def _load_ckpt(path: Path, what: str) -> dict:
    try:
        return load_params(_require(path, what))
    except CheckpointError as e:
        raise CommandError(f"{path}: {e}") from None


def cmd_train(args) -> int:
    manifest, _, data = load_dataset_dir(args.data)
    config = _config_from_args(args, manifest)
    out = _out_dir(args.out)
    run = {"config": config.to_dict(), "seed": args.seed, "data": str(args.data),
           "dataset": manifest["generator"] if "generator" in manifest else None,
           "stage1": None, "stage2": None}
    if args.stage in ("1", "both"):
        hist = TrainHistory()
        cache = train_cache_encoder(data, config, args.epochs1, segment_len=args.segment1,
                                    lr=args.lr1, weight_decay=args.weight_decay,
                                    seed=args.seed, history=hist)
        save_params(cache, out / CACHE_CKPT)
        run["stage1"] = _stage_record(args.epochs1, args.lr1, args.segment1, args, hist)
    else:
        cache = _load_ckpt(out / CACHE_CKPT, "stage-1 checkpoint")
        prev = out / RUN_MANIFEST
        if prev.exists():
            run["stage1"] = json.loads(prev.read_text()).get("stage1")
    try:
        check_cache_params(config, cache)
    except (ValueError, KeyError) as e:
        raise CommandError(f"config mismatch with checkpoint: {e}") from None
    if args.stage in ("2", "both"):
        hist = TrainHistory()
        params = train_dacat(data, cache, config, args.epochs2, segment_len=args.segment2,
                             lr=args.lr2, weight_decay=args.weight_decay, seed=args.seed,
                             history=hist)
        save_params(params, out / MODEL_CKPT)
        run["stage2"] = _stage_record(args.epochs2, args.lr2, args.segment2, args, hist)
    _write_text(out / RUN_MANIFEST, _json(run))
    print(f"checkpoints written to {out}")
    return 0


def _stage_record(epochs, lr, segment, args, hist: TrainHistory) -> dict:
    return {"epochs": epochs, "lr": lr, "segment_len": segment,
            "weight_decay": args.weight_decay,
            "final_loss": hist.epoch_loss[-1] if hist.epoch_loss else None,
            "final_accuracy": hist.epoch_accuracy[-1] if hist.epoch_accuracy else None}


def _load_model(ckpt_dir) -> tuple:
    ckpt = Path(ckpt_dir)
    run = _load_run(ckpt)
    config = ModelConfig.from_dict(run["config"])
    params = _load_ckpt(ckpt / MODEL_CKPT, "model checkpoint")
    try:
        check_params(config, params)
    except (ValueError, KeyError) as e:
        raise CommandError(f"config mismatch with checkpoint: {e}") from None
    return config, params


# -- inference and evaluation ----------------------------------------------

def _infer_one(job):
    X, params, config, dtype = job
    return run_inference(X, params, config, dtype=dtype).timeline.labels


def _map(fn, jobs, n_workers: int) -> list:
    if n_workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as ex:
        return list(ex.map(fn, jobs))


def cmd_infer(args) -> int:
    config, params = _load_model(args.ckpt)
    manifest, names, data = load_dataset_dir(args.data)
    if int(manifest["phases"]) != config.K:
        raise CommandError("config mismatch: dataset and checkpoint disagree on phase count")
    out = _out_dir(args.out)
    dtype = DTYPES[args.precision]
    preds = _map(_infer_one, [(X, params, config, dtype) for X, _ in data], args.jobs)
    for name, labels in zip(names, preds):
        write_annotations(out / f"{name}.csv", labels)
    print(f"wrote {len(names)} prediction files to {out}")
    return 0


def cmd_eval(args) -> int:
    manifest, names, data = load_dataset_dir(args.data)
    K, fps = int(manifest["phases"]), float(manifest.get("fps", 1.0))
    pred_dir = Path(args.pred)
    strict, relaxed = [], []
    for name, (_, gt) in zip(names, data):
        path = _require(pred_dir / f"{name}.csv", "prediction file")
        try:
            pred = load_annotations(path, K, fps)
        except AnnotationError as e:
            raise CommandError(str(e)) from None
        if len(pred) != len(gt):
            raise CommandError(f"{path}: {len(pred)} frames, ground truth has {len(gt)}")
        strict.append(strict_metrics(pred, gt, K))
        relaxed.append(relaxed_metrics(pred, gt, K, args.window, fps))
    text = reports_csv(names, strict, relaxed)
    _write_text(Path(args.out), text)
    print(text, end="")
    return 0


def _split(data, n_train):
    if n_train is None:
        return data, data
    if not 0 < n_train < len(data):
        raise CommandError(f"--train-videos must lie in [1, {len(data) - 1}]")
    return data[:n_train], data[n_train:]


def cmd_ablate(args) -> int:
    manifest, _, data = load_dataset_dir(args.data)
    ckpt = Path(args.ckpt)
    config = ModelConfig.from_dict(_load_run(ckpt)["config"])
    cache = _load_ckpt(ckpt / CACHE_CKPT, "stage-1 checkpoint")
    train, test = _split(data, args.train_videos)
    settings = TrainSettings(epochs=args.epochs2, segment_len=args.segment2, lr=args.lr2,
                             weight_decay=args.weight_decay)
    results = ablate_readout(train, test, cache, config, settings, seed=args.seed)
    text = per_phase_table_csv(results, config.K, "jaccard", label="readout")
    _write_text(Path(args.out), text)
    print(text, end="")
    return 0


def cmd_bench(args) -> int:
    config = ModelConfig(d=args.d, d_raw=args.d_raw, K=args.phases or 7, hidden=args.hidden,
                         readout=Readout.parse(args.readout), seed=args.seed)
    params = None
    if args.ckpt:
        config, params = _load_model(args.ckpt)
    rows = bench_throughput(params, config, args.lengths, n_frames=args.frames,
                            warmup=args.warmup, seed=args.seed, dtype=DTYPES[args.precision])
    text = bench_csv(rows)
    if args.out:
        _write_text(Path(args.out), text)
    print(text, end="")
    return 0


# -- argument parsing -------------------------------------------------------

def _model_flags(p):
    p.add_argument("--d", type=int, default=16, help="feature dimension")
    p.add_argument("--hidden", type=int, default=32, help="LSTM hidden size")
    p.add_argument("--phases", type=int, default=None)
    p.add_argument("--fusion", choices=["before", "after"], default="after")
    p.add_argument("--interaction", choices=["add", "concat", "ca"], default="ca")
    p.add_argument("--readout", default="adaptive", help="adaptive, all or fixed:k")
    p.add_argument("--branches", choices=["both", "fwb", "acb"], default="both")
    p.add_argument("--capacity", type=int, default=None, help="cache size limit")


def _stage2_flags(p):
    p.add_argument("--epochs2", type=int, default=5)
    p.add_argument("--lr2", type=float, default=1e-5)
    p.add_argument("--segment2", type=int, default=64)
    p.add_argument("--weight-decay", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dacat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    g.add_argument("--out", required=True)
    g.add_argument("--videos", type=int, default=10)
    g.add_argument("--len", type=int, default=280)
    g.add_argument("--phases", type=int, default=7)
    g.add_argument("--d-raw", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--interference", type=float, default=0.2)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--dwell", type=float, default=40.0)
    g.add_argument("--leak", type=float, default=0.0)
    g.add_argument("--burst", type=float, default=1.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    _model_flags(t)
    t.add_argument("--stage", choices=["1", "2", "both"], default="both")
    t.add_argument("--epochs1", type=int, default=5)
    t.add_argument("--lr1", type=float, default=1e-4)
    t.add_argument("--segment1", type=int, default=256)
    _stage2_flags(t)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="online inference, one prediction CSV per video")
    i.add_argument("--data", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--precision", choices=list(DTYPES), default="f64")
    i.add_argument("--jobs", type=int, default=1)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="strict and relaxed metrics")
    e.add_argument("--data", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--window", type=float, default=10.0, help="relaxed window in seconds")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="read-out ablation, per-phase Jaccard CSV")
    a.add_argument("--data", required=True)
    a.add_argument("--ckpt", required=True, help="training output directory")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--train-videos", type=int, default=None,
                   help="first N videos train, the rest test (default: all for both)")
    _stage2_flags(a)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="per-frame latency against cache length")
    b.add_argument("--lengths", type=int, nargs="+", default=[100, 1000, 10000])
    b.add_argument("--d", type=int, default=768)
    b.add_argument("--d-raw", type=int, default=768)
    b.add_argument("--hidden", type=int, default=512)
    b.add_argument("--phases", type=int, default=None)
    b.add_argument("--readout", default="adaptive")
    b.add_argument("--ckpt", default=None)
    b.add_argument("--frames", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--precision", choices=list(DTYPES), default="f64")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as e:
        print(f"dacat {args.command}: error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"dacat {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
