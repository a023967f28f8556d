"""Command-line front end.

    bayescope generate --config CFG --out DIR
    bayescope train    --config CFG [--out DIR]
    bayescope predict  --checkpoint CKPT --dataset DATA --out DIR [--passes N] [--seed N] [--parallel N]
    bayescope evaluate --predictions PRED [--dataset DATA] --out DIR
    bayescope repro    SUITE --out DIR [--seed N] [--parallel N] [--config OVERRIDES]

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .errors import BayescopeError, ConfigError, DivergedError, NumericDomainError
from .inference import DEFAULT_PASSES

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("bayescope")


def _config(args) -> experiment.ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = experiment.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_generate(args):
    cfg = _config(args)
    out = Path(args.out or cfg.output_dir)
    experiment.run_generate(cfg, out)
    print(out / experiment.DATASET_CSV)


def cmd_train(args):
    cfg = _config(args)
    out = Path(args.out or cfg.output_dir)
    experiment.run_train(cfg, out)
    print(out / experiment.CHECKPOINT)


def cmd_predict(args):
    if not args.checkpoint or not args.dataset:
        raise ConfigError("predict needs --checkpoint and --dataset")
    if args.passes < 1:
        raise ConfigError("--passes must be >= 1")
    out = Path(args.out or Path(args.checkpoint).parent)
    path = experiment.run_predict(args.checkpoint, args.dataset, out, args.passes, args.seed or 0,
                                  args.parallel, args.split)
    print(path)


def cmd_evaluate(args):
    if not args.predictions:
        raise ConfigError("evaluate needs --predictions")
    out = Path(args.out or Path(args.predictions).parent)
    report = experiment.run_evaluate(args.predictions, args.dataset, out, args.variant)
    print(out / experiment.REPORT)
    print(f"MAE {report.mae:.3f} +/- {report.mae_std:.3f}")


def cmd_repro(args):
    overrides = None
    if args.config:
        with open(args.config) as fh:
            try:
                overrides = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    out = Path(args.out or f"runs/{args.suite}")
    results = experiment.run_repro(args.suite, out, args.seed or 0, args.parallel, overrides)
    for r in results:
        print(f"{r.variant:>11}  MAE {r.report.mae:.3f} +/- {r.report.mae_std:.3f}  "
              f"aleatoric ratio {r.saturation_ratio:.2f}")
    print(out / "summary.csv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayescope", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--parallel", type=int, default=1)

    sp = sub.add_parser("generate", help="generate a synthetic cohort")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train one model variant")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="multi-pass predictions for a dataset")
    common(sp, config=False)
    sp.add_argument("--checkpoint", metavar="PATH")
    sp.add_argument("--dataset", metavar="PATH")
    sp.add_argument("--passes", type=int, default=DEFAULT_PASSES)
    sp.add_argument("--split", choices=["train", "test"], default=None)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="metrics, scatter and profile tables")
    common(sp, config=False)
    sp.add_argument("--predictions", metavar="PATH")
    sp.add_argument("--dataset", metavar="PATH")
    sp.add_argument("--variant", default="unknown")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("repro", help="run all four variants on a suite")
    sp.add_argument("suite", choices=sorted(experiment.SUITE_CHANNELS))
    common(sp)
    sp.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DivergedError, NumericDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, BayescopeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
