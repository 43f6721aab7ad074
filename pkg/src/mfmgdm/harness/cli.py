"""Command-line entry point: ``mfmgdm {benchmark,trace,finance,gen-data,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from ..errors import MgdmError
from .config import ExperimentConfig, load_config

log = logging.getLogger("mfmgdm")

# flags that get a dedicated option; everything else goes through --set key=value
_FLAG_FIELDS = ("model", "energy", "d", "batch_size", "replicas", "target_paths", "steps", "gamma",
                "gamma_scale", "epsilon", "data_file", "transform", "projection")


def _add_common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--out", help="output directory (default results)")
    p.add_argument("--full-scale", action="store_true", help="large benchmark sizes (d=1024, N=M=128) instead of desk scale")
    p.add_argument("--format", choices=["csv", "json", "both"], default="both")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set ar_coefficients=(0.2,-0.1)")
    p.add_argument("-v", "--verbose", action="store_true")
    kinds = {f.name: f for f in fields(ExperimentConfig)}
    for name in _FLAG_FIELDS:
        opt = "--" + name.replace("_", "-")
        if name == "projection":
            p.add_argument(opt, dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(opt, dest=name, default=None, help=f"default {kinds[name].default!r}")
    p.add_argument("--ar", dest="ar_coefficients", default=None, help="AR coefficients, comma separated")


def build_parser():
    parser = argparse.ArgumentParser(prog="mfmgdm", description="Gradient-descent samplers with exact likelihoods.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("benchmark", "minimum reverse KL per mode on a synthetic target"),
        ("trace", "per-step metrics per mode (add --n-sweep for the batch-size sweep)"),
        ("finance", "statistics pipeline on a date,value price file"),
    ]:
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "trace":
            p.add_argument("--n-sweep", action="store_true", help="also run mean-field batches of n_sweep sizes")
    g = sub.add_parser("gen-data", help="write a synthetic price CSV")
    g.add_argument("--rows", type=int, default=2048)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--kind", choices=["stochastic-vol", "random-walk"], default="stochastic-vol")
    g.add_argument("--out", default="synthetic_prices.csv", help="output CSV path")
    s = sub.add_parser("selftest", help="fast internal consistency checks")
    s.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from(args):
    from .config import _parse_value

    overrides = {name: getattr(args, name) for name in _FLAG_FIELDS + ("ar_coefficients",)}
    for name, val in list(overrides.items()):
        if isinstance(val, str):
            parsed = _parse_value(val)
            overrides[name] = parsed
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise MgdmError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().replace("-", "_")] = _parse_value(raw)
    overrides["seed"] = args.seed
    overrides["out"] = args.out
    if args.full_scale:
        overrides["full_scale"] = True
    return load_config(args.config, **overrides)


def _formats(args):
    return ("csv", "json") if args.format == "both" else (args.format,)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except MgdmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    from . import export

    if args.command == "selftest":
        from .selftest import run_selftest

        return 0 if run_selftest() else 1
    if args.command == "gen-data":
        from .datagen import geometric_random_walk, stochastic_vol_prices, write_price_csv

        make = stochastic_vol_prices if args.kind == "stochastic-vol" else geometric_random_walk
        path = write_price_csv(args.out, make(args.rows, seed=args.seed))
        print(f"wrote {args.rows} rows to {path}")
        return 0
    cfg = _config_from(args)
    if args.command == "finance":
        from .finance import run_financial_pipeline

        report = run_financial_pipeline(cfg)
        export.export_finance(report, cfg.out, _formats(args))
        for mode, run in sorted(report.runs.items()):
            print(f"{mode:5s} steps={run['steps']:5d} |mean Phi - alpha|={run['mean_energy_distance']:.4g} "
                  f"(eps {run['epsilon']:.4g}) entropy rate={run['entropy']['rate']:.4f}")
        return 0
    from .experiments import run_kl_trace

    report = run_kl_trace(cfg, n_sweep=args.command == "trace" and args.n_sweep)
    export.export_trace(report, cfg.out, kind=args.command, fmt=_formats(args))
    print(f"{'run':10s} {'N':>4s} {'min KL':>9s} {'+/-':>7s} {'argmin':>6s} {'final KL':>9s} stopped")
    for key, s in sorted(report.summaries.items()):
        print(f"{key:10s} {s.n_particles:4d} {s.min_kl:9.4f} {s.min_kl_se:7.4f} {s.argmin_step:6d} "
              f"{s.final_kl:9.4f} {s.stopped}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
