"""Command line entry point: ``mlpdyn train|analyze|plot|verify``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys

from .errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="mlpdyn", description="MLP training with learning-dynamics analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train and record instrumentation")
    train.add_argument("--config", help="key = value config file")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    train.add_argument("--resume", help="checkpoint to continue from")

    analyze = sub.add_parser("analyze", help="write metrics.csv, table1.csv, phases.json")
    analyze.add_argument("run_dir")
    analyze.add_argument("--layers", help="comma list of layers (default: all instrumented)")

    plot = sub.add_parser("plot", help="render SVG charts from metrics.csv")
    plot.add_argument("metrics_csv")
    plot.add_argument("--out", help="output directory (default: plots/ next to the CSV)")

    verify = sub.add_parser("verify", help="audit projection and decomposition invariants")
    verify.add_argument("run_dir")
    return parser


def _dispatch(args):
    from .harness import run_analyze, run_plot, run_train, run_verify
    from .harness.config import load_config

    if args.command == "train":
        try:
            config = load_config(args.config, args.set)
        except (KeyError, ValueError) as exc:
            print(f"mlpdyn: {exc}", file=sys.stderr)
            return EXIT_USAGE
        run_dir = run_train(config, resume=args.resume)
        print(run_dir)
    elif args.command == "analyze":
        layers = None
        if args.layers:
            layers = [int(tok) for tok in args.layers.split(",") if tok.strip()]
        for path in run_analyze(args.run_dir, layers).values():
            print(path)
    elif args.command == "plot":
        written, omitted = run_plot(args.metrics_csv, args.out)
        for path in written:
            print(path)
        for family in omitted:
            print(f"omitted {family}: no data")
    else:
        report = run_verify(args.run_dir)
        print("\n".join(report.lines))
        if not report.ok:
            print(f"{report.failures} check(s) failed", file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return _dispatch(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"mlpdyn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mlpdyn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
