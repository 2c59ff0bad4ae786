"""Command-line entry point: ``rpclay <command> [--config PATH] [--seed N] [--jobs N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from . import pipeline
from .errors import ConfigError, InvalidParameterError, RpclayError

logger = logging.getLogger("rpclay")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="INI config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="global seed, overrides [run] seed")
    p.add_argument("--jobs", type=int, help="worker cap for stage-internal parallelism")
    p.add_argument("--out", metavar="DIR", help="output directory, overrides [paths] out")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="rpclay", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the forward solver")
    p.add_argument("--case", type=int, action="append", dest="cases",
                   help="impact case id (repeatable; all cases if omitted)")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                   help="override one material parameter, e.g. --set B=150")

    p = sub.add_parser("doe", parents=[common], help="generate a design and run the solver on it")
    p.add_argument("--design", choices=("oat", "factorial"), required=True)

    p = sub.add_parser("screen", parents=[common], help="Pearson screening of a dataset")
    p.add_argument("--dataset", default=None,
                   help="fixture_A1, fixture_B1 or a dataset CSV (default fixture_A1)")

    p = sub.add_parser("train", parents=[common], help="architecture grid and best surrogate per case")
    p.add_argument("--dataset", default=None, help="dataset CSV (default <out>/dataset_factorial.csv)")

    p = sub.add_parser("invert", parents=[common], help="grid sweep through trained surrogates")
    p.add_argument("--models", default=None, help="model directory (default <out>/models)")

    p = sub.add_parser("validate", parents=[common], help="re-run the solver on the top-k candidates")
    p.add_argument("--result", default=None, help="inverse result JSON (default <out>/inverse.json)")

    p = sub.add_parser("ablate", parents=[common], help="reduced-training-set study")
    p.add_argument("--dataset", default=None, help="dataset CSV (default <out>/dataset_factorial.csv)")

    sub.add_parser("pipeline", parents=[common], help="doe, screen, train, invert, validate")
    sub.add_parser("default-config", parents=[common], help="print the default configuration")
    return ap


def _load_config(args) -> cfgmod.PipelineConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.default_config()
    cfg = cfgmod.with_overrides(cfg, seed=args.seed, jobs=args.jobs, out=args.out)
    if cfg.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg


def _parse_sets(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"--set {name}: {val!r} is not a number") from None
    return out


def _run(args) -> str:
    if args.command == "default-config":
        return cfgmod.dumps(cfgmod.default_config()).rstrip("\n")
    cfg = _load_config(args)
    run = pipeline.RunDir(cfg)
    started = pipeline.now()
    cmd = args.command
    extra: dict = {}
    if cmd == "simulate":
        try:
            res = pipeline.simulate_stage(run, _parse_sets(args.set), args.cases)
        except (InvalidParameterError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        text = "\n".join(f"case {c}: depth {r['depth_mm']:.3f} mm, arrested at {1e3 * r['time_s']:.2f} ms"
                         + (" (eroded)" if r["eroded"] else "") for c, r in res.items())
    elif cmd == "doe":
        sset = pipeline.doe_stage(run, args.design)
        extra["rows"] = len(sset)
        text = f"{args.design} design: {len(sset)} parameter sets x {len(cfg.cases)} cases"
        cmd = f"doe_{args.design}"
    elif cmd == "screen":
        rep = pipeline.screen_stage(run, args.dataset)
        lines = [f"{p:12s} " + " ".join(f"{rep.coeffs[(p, c)]:.3f}" for c in rep.cases)
                 for p in rep.parameters]
        text = "\n".join(lines + [f"selected: {', '.join(rep.selected) or '(none)'}"])
    elif cmd == "train":
        out = pipeline.train_stage(run, args.dataset)
        text = "\n".join(
            f"case {c}: best {entries[0].name} val R2 {entries[0].result.validation.r2:.4f} "
            f"RMSE {entries[0].result.validation.rmse:.4f} mm"
            for c, entries in sorted(out["ranked"].items()))
    elif cmd == "invert":
        res = pipeline.invert_stage(run, args.models)
        best = res.top_k[0] if res.top_k else None
        text = f"{len(res.common)} joint candidates"
        if best is not None:
            text += f"; best score {best.score:.4f} mm at B={best.params[0]:.3f} n={best.params[1]:.4f} C={best.params[2]:.4f}"
    elif cmd == "validate":
        rep = pipeline.validate_stage(run, args.result)
        o = rep.optimum
        text = (f"optimum B={o.params[0]:.3f} n={o.params[1]:.4f} C={o.params[2]:.4f}: "
                f"mean relative error {100 * o.mean_rel_error:.2f}%")
        if rep.default is not None:
            text += f" (defaults {100 * rep.default.mean_rel_error:.2f}%)"
    elif cmd == "ablate":
        rep = pipeline.ablate_stage(run, args.dataset)
        text = "\n".join(f"fraction {s['fraction']:.2f}: mean accuracy {100 * s['mean_accuracy']:.2f}%"
                         f" over {s['repeats'] - s['failed']} runs" for s in rep.summary())
    elif cmd == "pipeline":
        summary = pipeline.run_pipeline(run)
        text = pipeline.format_summary(summary)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown command {cmd}")
    run.manifest(cmd, started, extra)
    return text


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = _run(args)
    except ConfigError as exc:
        print(f"rpclay: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        print(f"rpclay: stage {exc.stage} failed: {type(exc.cause).__name__}: {exc.cause}",
              file=sys.stderr)
        return EXIT_STAGE
    except RpclayError as exc:
        print(f"rpclay: stage {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
