"""Batch command-line interface.

Subcommands: pretrain, finetune, eval, features, gradcheck, bench. Every run
writes a manifest (config snapshot, seed, dataset identifiers, artifact
hashes) sufficient to reproduce its outputs bitwise. Exit codes: 0 success,
1 failed check, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_encoder, bench_quadratic, compare_backends
from .checkpoint import sha256_file
from .checks import full_gradcheck, gradcheck_config
from .config import ConfigError, ModelConfig, TrainConfig, dump_config, load_config
from .data import DataError, DatasetMeta, align_length, load_split, load_tsv
from .features import FEATURE_NAMES, extract
from .kernels import BACKEND
from .model import Model
from .preprocess import SeriesBatch
from .rng import RngState
from .training import (
    DivergenceError,
    evaluate,
    finetune,
    pretrain,
    write_metrics_log,
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out: Path,
    command: str,
    seed: int,
    model_cfg: ModelConfig | None,
    train_cfg: TrainConfig | None,
    datasets: dict[str, str],
    artifacts: list[Path],
    extra: dict[str, str] | None = None,
) -> Path:
    lines = [f"command = {command}", f"seed = {seed}", f"backend = {BACKEND}", f"version = {__version__}"]
    if model_cfg is not None and train_cfg is not None:
        lines.extend(dump_config(model_cfg, train_cfg).strip().splitlines())
    for key, path in datasets.items():
        lines.append(f"data.{key} = {path}")
        lines.append(f"data.{key}.sha256 = {sha256_file(path)}")
    if extra:
        for key, value in extra.items():
            lines.append(f"{key} = {value}")
    for artifact in artifacts:
        lines.append(f"out.{artifact.name} = {artifact}")
        lines.append(f"out.{artifact.name}.sha256 = {sha256_file(artifact)}")
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _write_dataset_manifest(out: Path, metas: list[DatasetMeta]) -> Path:
    path = out / "dataset_manifest.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("name,num_classes,series_length,train_size,test_size,filter\n")
        for meta in metas:
            fh.write(meta.manifest_row() + "\n")
    return path


def _load_manifest_config(checkpoint_path: Path) -> tuple[ModelConfig, TrainConfig, dict[int, int]]:
    manifest = checkpoint_path.parent / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"no manifest next to checkpoint ({manifest}); pass --config instead")
    config_lines = []
    label_map: dict[int, int] = {}
    from dataclasses import fields

    known = {f.name for f in fields(ModelConfig)} | {f.name for f in fields(TrainConfig)}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        key = line.split("=", 1)[0].strip()
        if key in known:
            config_lines.append(line)
        elif key == "label_map" and "=" in line:
            payload = line.split("=", 1)[1].strip()
            if payload:
                for pair in payload.split(","):
                    orig, new = pair.split(":")
                    label_map[int(orig)] = int(new)
    from .config import parse_config_text

    model_cfg, train_cfg = parse_config_text("\n".join(config_lines), preset="paper")
    return model_cfg, train_cfg, label_map


# -- subcommands -----------------------------------------------------------------


def cmd_pretrain(args) -> int:
    model_cfg, train_cfg = load_config(args.config, args.preset)
    train_cfg.seed = args.seed
    out = _out_dir(args)
    meta, corpus = load_tsv(args.corpus, require_classes=False)
    corpus = align_length(corpus, model_cfg.seq_len)
    rng = RngState(args.seed)
    model = Model.init(model_cfg, rng.spawn("init"))
    _log(f"pretraining on {corpus.batch_size} series for {train_cfg.pretrain_epochs} epochs [{BACKEND}]")
    logs = pretrain(corpus, model, train_cfg, rng.spawn("pretrain"))
    ckpt_path = out / "checkpoint.bin"
    metrics_path = out / "metrics.csv"
    model.save(ckpt_path)
    write_metrics_log(metrics_path, logs)
    ds_manifest = _write_dataset_manifest(out, [meta])
    _write_manifest(out, "pretrain", args.seed, model_cfg, train_cfg, {"corpus": args.corpus}, [ckpt_path, metrics_path, ds_manifest])
    _log(f"final mtsm={logs[-1].mtsm} nce={logs[-1].nce}; wrote {ckpt_path}")
    return 0


def cmd_finetune(args) -> int:
    model_cfg, train_cfg = load_config(args.config, args.preset)
    train_cfg.seed = args.seed
    out = _out_dir(args)
    split = load_split(args.train, args.test)
    model_cfg.num_classes = split.meta.num_classes
    train = align_length(split.train, model_cfg.seq_len)
    test = align_length(split.test, model_cfg.seq_len)
    rng = RngState(args.seed)
    model = Model.init(model_cfg, rng.spawn("init"))
    datasets = {"train": args.train, "test": args.test}
    if args.checkpoint:
        model.load(args.checkpoint, allow_missing_head=True)
        datasets["checkpoint"] = args.checkpoint
        _log(f"loaded pretrained weights from {args.checkpoint}")
    _log(f"fine-tuning on {split.meta.name}: {train.batch_size} train / {test.batch_size} test, C={model_cfg.num_classes} [{BACKEND}]")
    logs = finetune(model, train, train_cfg, rng.spawn("finetune"))
    acc, f1, report = evaluate(model, test)
    ckpt_path = out / "checkpoint.bin"
    metrics_path = out / "metrics.csv"
    model.save(ckpt_path)
    write_metrics_log(metrics_path, logs)
    report_path = _write_eval_report(out, acc, f1, report)
    ds_manifest = _write_dataset_manifest(out, [split.meta])
    label_map = ",".join(f"{orig}:{new}" for orig, new in sorted(split.meta.label_map.items()))
    _write_manifest(
        out,
        "finetune",
        args.seed,
        model_cfg,
        train_cfg,
        datasets,
        [ckpt_path, metrics_path, report_path, ds_manifest],
        extra={"label_map": label_map, "dataset": split.meta.name},
    )
    _log(f"test accuracy={acc:.4f} macro_f1={f1:.4f}; wrote {ckpt_path}")
    return 0


def _write_eval_report(out: Path, acc: float, f1: float, report: list[dict]) -> Path:
    path = out / "eval_report.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"accuracy,{acc!r}\nmacro_f1,{f1!r}\n")
        fh.write("class,precision,recall,f1,support\n")
        for row in report:
            fh.write(f"{row['class']},{row['precision']!r},{row['recall']!r},{row['f1']!r},{row['support']}\n")
    return path


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if args.config:
        model_cfg, train_cfg = load_config(args.config, args.preset)
        label_map: dict[int, int] = {}
    else:
        model_cfg, train_cfg, label_map = _load_manifest_config(ckpt_path)
    if model_cfg.num_classes < 2:
        raise ConfigError("eval config has no classifier head (num_classes < 2)")
    out = _out_dir(args)
    meta, test = load_tsv(args.test)
    if label_map:
        inverse = {new: orig for orig, new in meta.label_map.items()}
        try:
            remapped = np.array([label_map[inverse[int(l)]] for l in test.labels], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"test label {exc.args[0]} was never seen in training") from exc
        test = SeriesBatch(test.values, test.valid, remapped)
    test = align_length(test, model_cfg.seq_len)
    model = Model.init(model_cfg, RngState(args.seed).spawn("init"))
    model.load(ckpt_path)
    acc, f1, report = evaluate(model, test)
    print(f"accuracy {acc:.6f}")
    print(f"macro_f1 {f1:.6f}")
    for row in report:
        print(f"class {row['class']}: precision={row['precision']:.4f} recall={row['recall']:.4f} f1={row['f1']:.4f} support={row['support']}")
    report_path = _write_eval_report(out, acc, f1, report)
    ds_manifest = _write_dataset_manifest(out, [meta])
    _write_manifest(out, "eval", args.seed, model_cfg, train_cfg, {"test": args.test, "checkpoint": str(ckpt_path)}, [report_path, ds_manifest])
    return 0


def cmd_features(args) -> int:
    out = _out_dir(args)
    meta, batch = load_tsv(args.data, require_classes=False)
    values = extract(batch).data
    path = out / "features.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(FEATURE_NAMES) + "\n")
        for i in range(batch.batch_size):
            label = 0 if batch.labels is None else int(batch.labels[i])
            fh.write(str(label) + "," + ",".join(repr(v) for v in values[i]) + "\n")
    ds_manifest = _write_dataset_manifest(out, [meta])
    _write_manifest(out, "features", args.seed, None, None, {"data": args.data}, [path, ds_manifest])
    _log(f"wrote {batch.batch_size} feature rows to {path}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        model_cfg, _ = load_config(args.config, args.preset)
    else:
        model_cfg = gradcheck_config()
    report = full_gradcheck(model_cfg, tol=args.tol, seed=args.seed, max_elements=args.max_elements)
    for line in report.summary_lines():
        print(line)
    print(f"gradcheck {'PASSED' if report.passed else 'FAILED'}: {len(report.params)} parameter tensors, "
          f"max relative error {report.max_rel_error:.3e} (tol {args.tol})")
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    model_cfg, _ = load_config(args.config, args.preset)
    rows = bench_encoder(lengths, model_cfg, repeats=args.repeats)
    print(f"backend: {BACKEND}")
    print("tokens,median_seconds,flops_estimate")
    for row in rows:
        print(f"{row.tokens},{row.seconds!r},{row.flops}")
    for a, b in zip(rows, rows[1:]):
        if b.tokens == 2 * a.tokens:
            print(f"# time({b.tokens})/time({a.tokens}) = {b.seconds / a.seconds:.3f}  "
                  f"flops ratio = {b.flops / a.flops:.3f}")
    if args.quadratic:
        t = max(lengths) // 2 or max(lengths)
        q = bench_quadratic([t, 2 * t], repeats=args.repeats)
        print(f"# quadratic stub time({2 * t})/time({t}) = {q[1].seconds / q[0].seconds:.3f}")
    if args.compare_backends:
        print("kernel,numpy_seconds,numba_seconds,speedup")
        for row in compare_backends(model_cfg):
            print(f"{row['kernel']},{row['numpy_s']!r},{row['numba_s']!r},{row['speedup']:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsmem", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--preset", default="desk", choices=("desk", "paper"))
        p.add_argument("--seed", type=int, default=0)
        if out_default is not None:
            p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("pretrain", help="self-supervised pretraining on an unlabeled corpus")
    p.add_argument("--corpus", required=True, help="UCR-style series file (labels ignored)")
    common(p, out_default="runs/pretrain")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="linear probing then full fine-tuning on a labeled split")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint", default=None, help="pretrained checkpoint (from-scratch if omitted)")
    common(p, out_default="runs/finetune")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint")
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint", required=True)
    common(p, out_default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("features", help="emit per-series statistical feature rows")
    p.add_argument("--data", required=True)
    common(p, out_default="runs/features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-elements", type=int, default=None, help="subsample elements per tensor")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="linear-cost benchmark (wall time + FLOP table)")
    p.add_argument("--lengths", default="32,64,128,256")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--quadratic", action="store_true", help="also time the quadratic-attention stub")
    p.add_argument("--compare-backends", action="store_true", help="time numba kernels against numpy fallbacks")
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except DataError as exc:
        _log(f"data error: {exc}")
        return 3
    except FileNotFoundError as exc:
        _log(f"data error: {exc}")
        return 3
    except DivergenceError as exc:
        _log(f"numeric divergence: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
