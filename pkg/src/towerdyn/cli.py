"""Command-line front end.

``towerdyn <subcommand> --config <path> [--threads N] [--seed S] [--out DIR]``

Exit status: 0 on success, 1 on internal errors, 2 when the map violates a
standing hypothesis (the diagnostic names it), 64 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import STAGES, load_config
from .errors import ConfigError, HypothesisViolation, InvalidMap
from .pipeline import Pipeline, format_report, load_summary

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_HYPOTHESIS = 2
EXIT_CONFIG = 64

SUBCOMMANDS = (*STAGES, "fibfind", "report", "all")

log = logging.getLogger("towerdyn")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="towerdyn", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--out", default=None, help="output directory (overrides OUTPUT_DIR)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv: list[str] | None = None) -> int:
    """Parse arguments, run the subcommand and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        _set_threads(args.threads)
        if args.subcommand == "report":
            try:
                summary = load_summary(cfg.out_dir)
            except FileNotFoundError:
                print(f"error: no summary.json in {cfg.out_dir}; run a stage first",
                      file=sys.stderr)
                return EXIT_INTERNAL
            sys.stdout.write(format_report(summary))
            return EXIT_OK
        pipe = Pipeline(cfg)
        if args.subcommand == "fibfind":
            pipe.fibfind()
            summary = pipe.finish()
        else:
            stages = cfg.stages if args.subcommand == "all" else (args.subcommand,)
            summary = pipe.run(stages)
        sys.stdout.write(format_report(summary))
        return EXIT_OK
    except (ConfigError, InvalidMap) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisViolation as exc:
        print(f"hypothesis violated ({exc.hypothesis}): {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as exit 1
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
