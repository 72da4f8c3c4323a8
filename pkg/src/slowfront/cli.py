"""Command line entry point. Exit codes: 0 success, 1 a check failed or the run
blew up, 2 bad input."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness as hs
from .potential import PotentialError


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise hs.ConfigError(f"cannot read: {e.strerror}") from None
    return hs.parse_config(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slowfront", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one experiment from a JSON config")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="output directory (overrides the config)")

    s = sub.add_parser("speed-sweep", help="kink-antikink speed against separation")
    s.add_argument("config")
    s.add_argument("-o", "--output")

    s = sub.add_parser("covering", help="confined covering of a point set or a field's front set")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--points", help="file with whitespace or comma separated points, or a JSON list")
    g.add_argument("--field", help="field CSV (x, u_1, ...)")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--kappa", type=float, required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--potential", default="quartic")
    s.add_argument("--M0", type=float)
    s.add_argument("-o", "--output")

    s = sub.add_parser("stationary", help="heteroclinic profile between two wells")
    s.add_argument("--potential", default="quartic")
    s.add_argument("--params", default=None, help="JSON object of potential parameters")
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--from", dest="well_from", type=int, default=0)
    s.add_argument("--to", dest="well_to", type=int, default=1)
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("verify", help="re-run checks on a stored trajectory")
    s.add_argument("directory")
    s.add_argument("--check", action="append", default=[], choices=hs.CHECKS)
    return ap


def _out_dir(args, cfg) -> str:
    out = args.output or cfg.output
    if not out:
        raise hs.ConfigError("no output directory given (use -o or the 'output' key)")
    return out


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    try:
        if args.command == "simulate":
            cfg = _load(args.config)
            return hs.cmd_simulate(cfg, _out_dir(args, cfg))
        if args.command == "speed-sweep":
            cfg = _load(args.config)
            return hs.cmd_speed_sweep(cfg, _out_dir(args, cfg))
        if args.command == "covering":
            rep = hs.cmd_covering(args.points, args.field, args.delta, args.kappa, args.eps,
                                  args.potential, args.M0, args.output)
            if not args.output:
                print(json.dumps(rep, indent=1, sort_keys=True))
            return 0 if rep["verdict"]["valid"] else 1
        if args.command == "stationary":
            params = json.loads(args.params) if args.params else None
            hs.cmd_stationary(args.potential, params, args.eps, args.well_from, args.well_to,
                              args.output)
            return 0
        if args.command == "verify":
            ok, verdicts = hs.cmd_verify(args.directory, args.check)
            for v in verdicts:
                print(f"{'PASS' if v['pass'] else 'FAIL'} {v['check']} lhs={v['lhs']} rhs={v['rhs']}")
            return 0 if ok else 1
    except hs.ConfigError as e:
        src = getattr(args, "config", None) or "input"
        print(e.render(src), file=sys.stderr)
        return 2
    except (PotentialError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
