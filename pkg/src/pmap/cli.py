"""Command-line entry point.

Every subcommand writes JSON objects, one per line, to stdout.  On failure a
single ``{"error": kind, "message": ...}`` line goes to stderr and the exit
code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .bench import LENGTHS, bench
from .checkpoint import Checkpoint
from .config import DESK_SPLIT, PROFILES, VARIANTS, load_config
from .data import GeneratorConfig, generate, generator_meta, import_arrays, write_dataset
from .errors import ConfigError, PmapError

SPLITS = tuple(zip(("train", "val", "test"), DESK_SPLIT))
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _config(args):
    return load_config(args.config, args.profile, seed=args.seed)


def cmd_gen_data(args) -> int:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        base["seed"] = args.seed
    try:
        gcfg = GeneratorConfig(**base).validate()
    except TypeError as exc:
        raise ConfigError(f"bad generator config: {exc}") from exc
    counts = dict(SPLITS)
    for name in counts:
        value = getattr(args, name)
        if value is not None:
            counts[name] = value
    start = 0
    out = Path(args.out)
    for name, count in counts.items():
        eps = generate(gcfg, start, count)
        write_dataset(eps, out / name, generator_meta(gcfg, name, start))
        _emit({"split": name, "count": count, "start_index": start, "path": str(out / name)})
        start += count
    return 0


def _train_like(args, variant: str | None) -> int:
    from .plotting import training_curves
    from .train import ablate, train

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = open(out / "metrics.jsonl", "w", encoding="utf-8")

    def emit(rec):
        _emit(rec)
        metrics.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        if variant is None:
            ckpt, report = train(cfg, args.data, emit)
        else:
            ckpt, report = ablate(cfg, variant, args.data, emit)
        ckpt.save(out / "checkpoint.pmap")
        summary = report.summary()
        emit(summary)
    finally:
        metrics.close()
    if report.epochs:
        training_curves(report.epochs, out / "curves.png", title=report.variant)
    return 0


def cmd_train(args) -> int:
    return _train_like(args, None)


def cmd_ablate(args) -> int:
    return _train_like(args, args.variant)


def cmd_eval(args) -> int:
    from .train import evaluate

    ckpt = Checkpoint.load(args.checkpoint)
    threshold = ckpt.config.threshold if args.threshold is None else args.threshold
    report = evaluate(ckpt, args.data, threshold)
    _emit(report.summary())
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck_all

    cfg = load_config(args.config, "small", seed=args.seed)
    suite = gradcheck_all(cfg)
    for row in suite.rows():
        _emit(row)
    _emit({"summary": True, "passed": suite.passed, "failures": suite.failures()})
    return 0 if suite.passed else EXIT_FAILURE


def cmd_bench(args) -> int:
    from .plotting import throughput

    rows = [r.as_dict() for r in bench(args.lengths, channels=args.channels, seed=args.seed or 0)]
    for r in rows:
        _emit(r)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        throughput(rows, out / "throughput.png")
    return 0


def cmd_import(args) -> int:
    path = import_arrays(args.npz, args.out)
    _emit({"imported": str(path)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmap", description="Pre-manipulation alignment prediction")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, profile=True):
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--seed", type=int)
        if profile:
            sp.add_argument("--profile", choices=sorted(PROFILES), default="desk")

    sp = sub.add_parser("gen-data", help="generate train/val/test splits")
    common(sp, profile=False)
    sp.add_argument("--out", required=True)
    for name, count in SPLITS:
        sp.add_argument(f"--{name}", type=int, help=f"episode count (default {count})")
    sp.set_defaults(func=cmd_gen_data)

    for name, func in (("train", cmd_train), ("ablate", cmd_ablate)):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--data", required=True, help="directory holding train/ val/ test/")
        sp.add_argument("--out", required=True)
        if name == "ablate":
            sp.add_argument("--variant", required=True, choices=[v for v in VARIANTS if v != "full"])
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="a single dataset directory")
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck")
    common(sp, profile=False)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("bench")
    sp.add_argument("--lengths", type=int, nargs="+", default=list(LENGTHS))
    sp.add_argument("--channels", type=int, default=4)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="directory for bench.csv and throughput.png")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("import", help="convert an .npz of embeddings into a dataset")
    sp.add_argument("--npz", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_import)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PmapError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return EXIT_FAILURE
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}) + "\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
