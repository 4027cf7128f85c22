"""``herd-pricer <mode> --config PATH [--seed N] [--out DIR] [--check]``.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 property
violation (only with ``--check``).
"""
from __future__ import annotations

import argparse
import logging
import sys

from .dynamics import DynamicsError
from .experiment import MODES, ConfigError, load_config, run
from .farsighted import FarsightedError, NoThresholdError
from .nash import SolverError
from .signals import SignalError
from .stage_game import ThresholdError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PROPERTY = 4

log = logging.getLogger("herd_pricer")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="herd-pricer", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="flat TOML config, or a manifest.json to re-run")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p.add_argument("--check", action="store_true", help="exit 4 if a checked property fails")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.mode, args.seed)
        if cfg.mode != args.mode:
            raise ConfigError(f"mode: config says {cfg.mode!r} but the command line asked for {args.mode!r}")
        outcome = run(cfg, args.out)
    except (ConfigError, SignalError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, DynamicsError, ThresholdError, NoThresholdError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FarsightedError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("wrote %s (%.3fs)", outcome.out_dir, outcome.manifest.wall_clock_seconds)
    print(outcome.out_dir / "manifest.json")
    if outcome.violations:
        for v in outcome.violations:
            print(f"property violation: {v}", file=sys.stderr)
        if args.check:
            return EXIT_PROPERTY
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
