"""Command-line entry point: ``manifold-id <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or domain error.
Failures print one JSON object on stderr:
``{"error": <class name>, "message": ..., "exit_code": ...}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from threadpoolctl import threadpool_limits

from .errors import ConfigError, ManifoldIdError
from .workflow import COMMANDS, load_config

THREADS_ENV = "MANIFOLD_ID_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(message)


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_u64, help="top-level seed (overrides config)")
    common.add_argument("--out", help="run directory (overrides config)")
    common.add_argument("--stage", choices=["1", "2", "3", "4", "full"], help="analysis window")
    common.add_argument("--nsim", type=int, help="post burn-in sweeps")
    common.add_argument("--burnin", type=int, help="burn-in sweeps")
    common.add_argument("--L", type=int, dest="L", help="mixture components")
    common.add_argument("--alpha", type=float, help="Dirichlet concentration")
    common.add_argument("--zeta", type=float, help="neighbour agreement probability")
    common.add_argument("--q", type=int, help="neighbours in the agreement term")

    parser = _Parser(prog="manifold-id", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "sample synthetic manifolds into <out>/synth",
        "preprocess": "build the analysis matrix into <out>/preprocess",
        "fit": "run the Gibbs sampler into <out>/fit",
        "postprocess": "partition and ID summaries into <out>/postprocess",
        "spatial": "Moran's I (and optional KS tests) into <out>/spatial",
        "report": "consolidated report into <out>/report",
        "all": "run every stage in order",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "out": args.out,
        "pipeline.stage": args.stage,
        "hidalgo.nsim": args.nsim,
        "hidalgo.burnin": args.burnin,
        "hidalgo.L": args.L,
        "hidalgo.alpha": args.alpha,
        "hidalgo.zeta": args.zeta,
        "hidalgo.q": args.q,
    }


def _fail(exc, code) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path", "line", "stage", "variable", "country"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = os.environ.get(THREADS_ENV)
        if threads is not None:
            try:
                threads = int(threads)
                if threads < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be a positive integer") from None
        cfg = load_config(args.config, _overrides(args))
        with threadpool_limits(limits=threads):
            out = COMMANDS[args.command](cfg)
    except UsageError as exc:
        return _fail(exc, 1)
    except ConfigError as exc:
        return _fail(exc, 1)
    except (ManifoldIdError, ValueError) as exc:
        return _fail(exc, 2)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
