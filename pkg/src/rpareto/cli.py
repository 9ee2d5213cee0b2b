"""Command line: ``rpareto {generate,fit,benchmark,summarize}``.

Exit status is 0 on success, 1 on usage, configuration or I/O errors and
2 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .gauss_field import NumericalError
from .geometry import ConfigurationError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args) -> harness.ExperimentConfig:
    cfg = (harness.ExperimentConfig.load(args.config) if args.config
           else harness.ExperimentConfig())
    return cfg.with_overrides(seed=args.seed, method=getattr(args, "method", None),
                              beta_boundary=getattr(args, "beta_proposal", None))


def cmd_generate(args) -> int:
    cfg = _config(args)
    ds = harness.generate_dataset(cfg)
    paths = harness.write_dataset(ds, args.out, cfg)
    harness.write_json(harness.metadata(cfg, "generate", m=ds.m, files=sorted(paths)),
                       Path(args.out) / "generate_meta.json")
    print(f"wrote {ds.m} observations to {paths['dataset']}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _config(args)
    sites = cfg.sites()
    obs = harness.read_dataset(args.data, sites) if args.data else None
    result = harness.fit(cfg, obs)
    paths = harness.write_fit(result, cfg, args.out, args.data)
    _print_summary(result.summary)
    print(f"chain written to {paths['chain']}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    if cfg.benchmark.repetitions < 2:
        raise ConfigurationError("benchmark needs at least two repetitions")
    result = harness.benchmark(cfg, threads=args.threads)
    harness.write_benchmark(result, cfg, args.out)
    print(harness.format_rmse_table(result.table))
    if result.failed:
        print(f"failed repetitions (excluded): {result.failed}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    chain = harness.read_chain(args.chain)
    summary = harness.summarize_chain({p: chain[p] for p in harness.PARAMS}, args.burn_in)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        harness.write_summary(summary, Path(args.out) / "summary.csv")
    _print_summary(summary)
    return EXIT_OK


def _print_summary(summary):
    print(f"{'param':8s}{'mean':>12s}{'median':>12s}{'q025':>12s}{'q975':>12s}")
    for p in harness.PARAMS:
        s = summary[p]
        print(f"{p:8s}{s['mean']:12.4f}{s['median']:12.4f}{s['q025']:12.4f}{s['q975']:12.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rpareto", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, method=False):
        p.add_argument("--config", help="JSON experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="master seed (overrides data.seed)")
        p.add_argument("--out", required=True, help="output directory")
        if method:
            p.add_argument("--method", choices=harness.METHODS)
            p.add_argument("--beta-proposal", choices=("reflect", "clamp"))
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("generate", help="simulate a data set")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="run one posterior chain")
    common(p, method=True)
    p.add_argument("--data", help="dataset.csv from generate (simulated afresh if omitted)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("benchmark", help="repeat generate+fit for both methods")
    common(p, method=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("summarize", help="posterior summaries of a chain file")
    p.add_argument("chain", help="chain.csv")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--out", help="directory for summary.csv")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("rpareto: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"rpareto: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"rpareto: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
