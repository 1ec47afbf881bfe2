"""``opsize`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .algebra import CapExceededError
from .config import ConfigError, PRESETS, load_config
from .experiments import cmd_otoc, cmd_region, cmd_size_dist, cmd_variance
from .selftest import selftest

log = logging.getLogger("opsize")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

COMMANDS = {
    "size-dist": cmd_size_dist,
    "variance": cmd_variance,
    "region": cmd_region,
    "otoc": cmd_otoc,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment config")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named experiment preset")
    common.add_argument("--seed", type=_u64, help="master seed (u64)")
    common.add_argument("--samples", type=int, metavar="M", help="initial states per time")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="sampling worker threads")

    parser = _Parser(prog="opsize", description="Operator size from quench statistics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
    st = sub.add_parser("selftest", help="run the small-N identity checks")
    st.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "selftest":
        report = selftest(inject_fault=args.inject_fault)
        print(json.dumps(report, indent=2))
        return EXIT_OK if report["passed"] else EXIT_CHECK

    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.out is not None:
        overrides["output"] = {"dir": args.out}
    if args.threads < 1:
        sys.stderr.write("opsize: error: --threads must be >= 1\n")
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, preset=args.preset, overrides=overrides)
        log.info("running %s with config %s", args.command, cfg.config_hash()[:12])
        COMMANDS[args.command](cfg, threads=args.threads)
    except (ConfigError, CapExceededError, ValueError, OSError) as exc:
        sys.stderr.write(f"opsize: error: {exc}\n")
        return EXIT_USAGE
    log.info("wrote outputs to %s", cfg.out)
    print(json.dumps({"command": args.command, "out": str(cfg.out),
                      "config_sha256": cfg.config_hash()}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
