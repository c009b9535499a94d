"""Command-line entry point.

Subcommands::

    cavsme simulate CONFIG [--set key=value ...] [--seed N] [--trajectories N]
                           [--t-end T] [--output-dir DIR] [--workers N]
    cavsme simulate --preset NAME [...]
    cavsme presets list | show NAME
    cavsme oracle upq --mu MU [--phi PHI] [--closed]
    cavsme analytic fig2 --r2t V [--n-atoms N] [--r R] [--points P]

Settings are resolved with the precedence flags > config file > preset.
Progress goes to stderr; stdout carries JSON summaries or CSV tables.
Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import analytic, oracle
from .config import PRESETS, ConfigError, from_preset, load
from .experiments import run, summary_json, write_csv
from .sme import NumericalAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}", None, "<command line>")
        out[key.strip()] = value.strip()
    for flag, key in (("seed", "seed"), ("trajectories", "trajectories"), ("t_end", "t_end"),
                      ("workers", "workers")):
        v = getattr(args, flag)
        if v is not None:
            out[key] = str(v)
    return out


def cmd_simulate(args) -> int:
    if (args.config is None) == (args.preset is None):
        _err("error: give exactly one of CONFIG or --preset")
        return EXIT_CONFIG
    try:
        ov = _overrides(args)
        cfg = load(args.config, ov) if args.config else from_preset(args.preset, ov)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    try:
        result = run(cfg, output_dir=args.output_dir, log=_err)
    except NumericalAbort as exc:
        _err(f"numerical abort: {exc}")
        return EXIT_NUMERIC
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    print(summary_json(result))
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    if args.name not in PRESETS:
        _err(f"unknown preset {args.name!r}")
        return EXIT_CONFIG
    print("\n".join(from_preset(args.name).echo()))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if not args.mu > 0:
        _err("error: --mu must be positive")
        return EXIT_CONFIG
    table = oracle.UTable.build(args.mu, args.phi, exact=not args.closed)
    rows = [[int(k), table.u00[i].real, table.u10[i].real, table.u10[i].imag, table.u11[i].real,
             table.u20[i].real, table.u20[i].imag] for i, k in enumerate(table.k)]
    echo = [f"mu = {args.mu!r}", f"phi = {args.phi!r}", f"exact = {not args.closed}",
            f"tail = {table.tail!r}"]
    write_csv(sys.stdout, ["k", "u00", "re_u10", "im_u10", "u11", "re_u20", "im_u20"], rows, echo)
    return EXIT_OK


def cmd_analytic(args) -> int:
    if not args.r2t > 0 or not args.r > 0 or args.n_atoms < 1:
        _err("error: need --r2t > 0, --r > 0 and --n-atoms >= 1")
        return EXIT_CONFIG
    n = np.arange(args.n_atoms + 1)
    t = args.r2t / args.r ** 2
    dens = analytic.OutcomeDensity(t, analytic.binomial_weights(args.n_atoms), args.r * n)
    s = math.sqrt(t)
    y = np.linspace(dens.means.min() - 5 * s, dens.means.max() + 5 * s, args.points)
    maxima = dens.local_maxima()
    echo = [f"r2t = {args.r2t!r}", f"r = {args.r!r}", f"n_atoms = {args.n_atoms}",
            f"t = {t!r}", f"local_maxima = {len(maxima)}"]
    write_csv(sys.stdout, ["y", "density"], np.column_stack([y, dens.pdf(y)]), echo)
    _err(f"{len(maxima)} local maxima at y = " + ", ".join(f"{m:.4g}" for m in maxima))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavsme", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment and write CSV output")
    p.add_argument("config", nargs="?", help="config file (key = value with [sections])")
    p.add_argument("--preset", help="run a named preset instead of a config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a setting; KEY may be qualified as section.key")
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("presets", help="list or show built-in presets")
    ps = p.add_subparsers(dest="action", required=True)
    ps.add_parser("list")
    show = ps.add_parser("show")
    show.add_argument("name")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("oracle", help="homodyne statistics tables")
    ps = p.add_subparsers(dest="action", required=True)
    upq = ps.add_parser("upq", help="u_pq(k) table as CSV")
    upq.add_argument("--mu", type=float, required=True)
    upq.add_argument("--phi", type=float, default=0.0)
    upq.add_argument("--closed", action="store_true", help="Gaussian limit instead of exact")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("analytic", help="closed-form reference curves")
    ps = p.add_subparsers(dest="action", required=True)
    f2 = ps.add_parser("fig2", help="outcome density of the Dicke collapse")
    f2.add_argument("--r2t", type=float, required=True)
    f2.add_argument("--n-atoms", dest="n_atoms", type=int, default=4)
    f2.add_argument("--r", type=float, default=0.4, help="small-g rate r (default 0.4)")
    f2.add_argument("--points", type=int, default=401)
    p.set_defaults(func=cmd_analytic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
