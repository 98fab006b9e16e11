"""Command-line entry points: gen-data, train, eval, gradcheck, ablate.

Every command reads the flat config format (see config.py), accepts repeated
`--set key=value` overrides, and exits nonzero with a single `error: ...`
line on failure. The LREID_OUT_DIR environment variable overrides the output
directory and nothing else.
"""

import argparse
import os
import sys
from pathlib import Path

from . import tensor as T
from .ablation import format_ablation_table, run_ablation
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_config, serialize_config
from .continual import build_task_stream, run_training
from .data import SyntheticSpec, export_folder, generate_synthetic
from .evaluation import incremental_report
from .gradcheck import run_suite
from .model import StudentTeacherPair
from .records import MetricsLog
from .rng import STREAM_INIT, derive_rng


def _resolve_out_dir(cfg):
    env = os.environ.get("LREID_OUT_DIR")
    if env:
        cfg.out_dir = env
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, args.set or [])


def _report_table(report):
    lines = [f"{'dataset':<10} {'split':<7} {'mAP':>8} {'R-1':>8}", "-" * 36]
    for row in report.rows:
        lines.append(f"{row.name:<10} {row.split:<7} {row.map:>8.4f} {row.rank1:>8.4f}")
    lines.append("-" * 36)
    lines.append(f"{'seen-avg':<18} {report.seen_avg_map:>8.4f} {report.seen_avg_rank1:>8.4f}")
    if any(r.split == "unseen" for r in report.rows):
        lines.append(f"{'unseen-avg':<18} {report.unseen_avg_map:>8.4f} {report.unseen_avg_rank1:>8.4f}")
    return "\n".join(lines)


def cmd_gen_data(args):
    spec = SyntheticSpec(
        ids=args.ids,
        cams=args.cams,
        imgs_per_id_per_cam=args.imgs,
        image_size=args.size,
        brightness=args.brightness,
        translation=args.translation,
        noise=args.noise,
        seed=args.seed,
        split=args.split,
    )
    count = export_folder(generate_synthetic(spec), args.out)
    print(f"wrote {count} images to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    out = _resolve_out_dir(cfg)
    (out / "config.echo").write_text(serialize_config(cfg))
    log = MetricsLog(out / "metrics.jsonl")
    _, _, report, overlap = run_training(cfg, out_dir=out, log=log)
    table = _report_table(report)
    (out / "results.txt").write_text(table + "\n")
    print(table)
    print(f"aux |cos| overlap: {overlap:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args):
    config_text, arrays = load_checkpoint(args.checkpoint)
    cfg = apply_overrides(parse_config(config_text), args.set or [])
    T.set_default_dtype(cfg.precision)
    schedule = build_task_stream(cfg)

    pair = StudentTeacherPair(
        cfg.backbone_config(),
        derive_rng(cfg.seed, STREAM_INIT),
        ema_k=cfg.ema_k,
        clamp_fusion=cfg.clamp_fusion_weights,
    )
    counts = arrays["meta.task_class_counts"]
    for t, count in enumerate(counts):
        pair.register_task_classes(t, int(count), derive_rng(cfg.seed, STREAM_INIT, 1000 + t))
    pair.student.load_state_arrays(arrays, prefix="student.")
    pair.teacher.load_state_arrays(arrays, prefix="teacher.")

    names = {t.name: ("seen", t) for t in schedule.tasks}
    names.update({u.name: ("unseen", u) for u in schedule.unseen})
    if args.data:
        missing = [d for d in args.data if d not in names]
        if missing:
            raise ValueError(f"unknown dataset(s) {missing}; available: {sorted(names)}")
        selected = [names[d] for d in args.data]
    else:
        selected = list(names.values())
    if not selected:
        raise ValueError("no datasets to evaluate")

    model = pair.teacher if cfg.eval_model == "teacher" else pair.student
    report = incremental_report(
        model,
        [t for split, t in selected if split == "seen"],
        [t for split, t in selected if split == "unseen"],
        feature=cfg.eval_feature,
    )
    print(_report_table(report))
    if args.out:
        log = MetricsLog(args.out)
        for row in report.rows:
            log.write({"record": "eval", "dataset": row.name, "split": row.split, "map": row.map, "rank1": row.rank1})
    return 0


def cmd_gradcheck(args):
    results = run_suite(aux_tokens=args.aux_tokens, seeds=tuple(range(args.seeds)))
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<14} max_rel_error={r.max_rel_error:.3e}")
        failed |= not r.passed
    return 1 if failed else 0


def cmd_ablate(args):
    cfg = _load_cfg(args)
    out = _resolve_out_dir(cfg) / "ablate"
    out.mkdir(parents=True, exist_ok=True)
    log = MetricsLog(out / "ablate.jsonl")
    rows = run_ablation(cfg, log=log, out_dir=out)
    table = format_ablation_table(rows)
    (out / "ablate.txt").write_text(table + "\n")
    print(table)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lreid", description="Lifelong identity-retrieval trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic Market-style image folder")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, default=8)
    p.add_argument("--cams", type=int, default=2)
    p.add_argument("--imgs", type=int, default=4, help="images per identity per camera")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--brightness", type=float, default=0.15)
    p.add_argument("--translation", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    for name, func, help_text in (
        ("train", cmd_train, "train the task stream from a config"),
        ("ablate", cmd_ablate, "train the component-toggle lattice and compare"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key=value config file (defaults apply if omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", action="append", help="dataset name (task1, unseen1, ...); default: all")
    p.add_argument("--out", default=None, help="also write eval records to this .jsonl file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss (64-bit)")
    p.add_argument("--aux-tokens", type=int, default=2)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
