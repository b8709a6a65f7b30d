"""``flltd`` command line: run, compare, validate."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import ConfigError, parse_config
from .data import IDXFormatError

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="flltd", description="Federated learning with loss-trend deviation defense")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--workers", type=int, default=1, help="threads for client training")

    cmp_ = sub.add_parser("compare", help="clean FedAvg vs attacked FedAvg vs attacked FL-LTD")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--workers", type=int, default=1)

    val = sub.add_parser("validate", help="parse and validate a config")
    val.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = parse_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = cfg.replace(seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print("ok")
        return EXIT_OK
    try:
        if args.command == "run":
            art = harness.run(cfg, args.out, workers=args.workers)
            print(json.dumps({k: str(v) for k, v in vars(art).items()}))
        else:
            summary = harness.compare(cfg, args.out, workers=args.workers)
            print(json.dumps(summary, indent=2, sort_keys=True))
    except IDXFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
