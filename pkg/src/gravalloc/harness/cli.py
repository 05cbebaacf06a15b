"""Command line interface.

Exit codes: 0 all assertions pass, 2 an assertion failed, 3 censored or
inconclusive only, 1 usage or runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .._validation import ParameterError

EXIT_PASS, EXIT_ERROR, EXIT_FAIL, EXIT_CENSORED = 0, 1, 2, 3
_STATUS_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "censored": EXIT_CENSORED, "error": EXIT_ERROR}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--R", type=float, nargs="+", default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")
    return p


def _emit(args, text):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=lambda x: x.tolist() if hasattr(x, "tolist") else str(x)) + "\n"


def _load_stars(args):
    from ..pointfield import DomainSpec, read_jsonl, sample_poisson

    if args.stars:
        return read_jsonl(args.stars)
    return sample_poisson(DomainSpec(args.dim, args.mode, args.side), args.intensity, args.seed)


def cmd_sample(args):
    field_ = _load_stars(argparse.Namespace(**{**vars(args), "stars": None}))
    if args.out:
        field_.to_jsonl(args.out)
    else:
        sys.stdout.write(_dump({"count": len(field_), "points": field_.points}))
    return EXIT_PASS


def cmd_allocate(args):
    from ..flow import assign_basins

    field_ = _load_stars(args)
    bmap = assign_basins(field_, n=args.grid)
    vols = bmap.volumes()
    lines = ["star,volume"] + [f"{i},{v!r}" for i, v in enumerate(vols)]
    _emit(args, "\n".join(lines) + "\n")
    tol = 0.05 if args.tol is None else args.tol
    frac = float(np.mean(np.abs(vols - 1.0 / field_.intensity) <= tol / field_.intensity))
    sys.stderr.write(f"{len(vols)} cells, {frac:.1%} within {tol:.0%} of the mean volume\n")
    return EXIT_PASS


def cmd_flow(args):
    from ..flow import integrate_flow

    field_ = _load_stars(args)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    traj = integrate_flow(x0, field_, t_max=args.t_max)
    _emit(args, _dump(traj.to_dict()))
    return EXIT_PASS


def cmd_stats(args):
    from ..flow import assign_basins, cell_statistics

    field_ = _load_stars(args)
    bmap = assign_basins(field_, n=args.grid)
    R = args.R[0] if args.R else 1.0
    st = cell_statistics(bmap, field_, args.star, R, seed=args.seed)
    _emit(args, st.to_json() + "\n")
    return EXIT_PASS


def cmd_construct(args):
    from .. import constructions as cons

    R = args.R[0] if args.R else (25.0 if args.which == "galaxy" else 10.0)
    if args.which == "galaxy":
        g = cons.build_galaxy(cons.GalaxyConfig(R=R, gamma=args.gamma, dim=args.dim), seed=args.seed)
        rep = cons.verify_E1(g.force, g.V, args.gamma)
        meta = {"config": json.loads(g.config.to_json()), "eta": g.eta, "surplus": len(g.surplus),
                "background": len(g.background), "report": json.loads(rep.to_json())}
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"record": "header", "schema": 1, "construction": "galaxy", **meta},
                                    sort_keys=True) + "\n")
                for p in g.stars:
                    fh.write("[" + ",".join(format(float(v), ".17g") for v in p) + "]\n")
        sys.stdout.write(_dump(meta))
        return EXIT_PASS
    dim = max(args.dim, 4)
    w = cons.build_wormhole(cons.WormholeConfig(R=R, gamma=args.gamma, dim=dim), seed=args.seed)
    rep = cons.verify_E1(w.force, w.V, args.gamma)
    if args.out:
        w.write_jsonl(args.out)
    sys.stdout.write(_dump({"config": json.loads(w.config.to_json()), "stars": w.size, "stats": w.stats,
                            "report": json.loads(rep.to_json())}))
    return EXIT_PASS


def cmd_verify(args):
    from . import suites

    names = sorted(suites.SUITES) if args.suite == "all" else [args.suite]
    results = [suites.run_suite(n) for n in names]
    payload = {r.name: {"status": r.status, **r.details} for r in results}
    _emit(args, _dump(payload))
    for r in results:
        sys.stderr.write(f"{r.name}: {r.status}\n")
    codes = {r.exit_code for r in results}
    if EXIT_FAIL in codes:
        return EXIT_FAIL
    return EXIT_CENSORED if EXIT_CENSORED in codes else EXIT_PASS


def cmd_rates(args):
    from . import rates

    dims = args.dims or [args.dim]
    _emit(args, rates.rates_csv(rates.rate_table(dims, args.gamma_max, rates.as_fraction(args.step))))
    return EXIT_PASS


def cmd_mc_tail(args):
    from . import tails

    spec = tails.TailSpec(statistic=args.statistic, dim=args.dim, q=args.q, p=args.p)
    ts = np.array([float(t) for t in args.thresholds.split(",")])
    table = tails.mc_tail(spec, ts, args.replicas, seed=args.seed)
    payload = table.to_dict()
    status = "censored" if all(r.censored for r in table.rows) else "pass"
    try:
        fit = tails.fit_tail_form(table, t_min=args.t_min)
        payload["fit"] = asdict(fit)
    except ParameterError as exc:
        payload["fit"] = None
        payload["fit_error"] = str(exc)
        status = "censored"
    _emit(args, _dump(payload))
    return _STATUS_EXIT[status]


def cmd_run(args):
    from .runner import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_json(args.config)
    payload = run_experiment(cfg)
    sys.stdout.write(_dump({"status": payload["status"], "out": cfg.out}))
    return _STATUS_EXIT[payload["status"]]


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="gravalloc", description="Gravitational allocation of Poisson stars.")
    sub = parser.add_subparsers(dest="command", required=True)

    def star_opts(p):
        p.add_argument("--stars", help="JSONL star file; sampled when omitted")
        p.add_argument("--side", type=float, default=4.0)
        p.add_argument("--intensity", type=float, default=1.0)
        p.add_argument("--mode", choices=("torus", "box"), default="torus")

    p = sub.add_parser("sample", parents=[common], help="sample a Poisson star field")
    star_opts(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("allocate", parents=[common], help="basin volumes on a grid")
    star_opts(p)
    p.add_argument("--grid", type=int, default=64)
    p.set_defaults(fn=cmd_allocate)

    p = sub.add_parser("flow", parents=[common], help="integrate one flow curve")
    star_opts(p)
    p.add_argument("--x0", required=True, help="comma separated start point")
    p.add_argument("--t-max", type=float, default=100.0)
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("stats", parents=[common], help="statistics of one cell")
    star_opts(p)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--star", type=int, default=0)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("construct", parents=[common], help="build a galaxy or wormhole configuration")
    p.add_argument("which", choices=("galaxy", "wormhole"))
    p.set_defaults(fn=cmd_construct)

    from .suites import SUITES

    p = sub.add_parser("verify", parents=[common], help="run a self-check suite")
    p.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("rates", parents=[common], help="export rate functions as CSV")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--gamma-max", default="3")
    p.add_argument("--step", default="1/100")
    p.set_defaults(fn=cmd_rates)

    p = sub.add_parser("mc-tail", parents=[common], help="Monte Carlo exceedance table")
    p.add_argument("--statistic", default="force_norm")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--p", type=float, default=10.0)
    p.add_argument("--thresholds", default="1,2,3,4,5,6")
    p.add_argument("--t-min", type=float, default=0.0)
    p.set_defaults(fn=cmd_mc_tail)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(fn=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ParameterError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
