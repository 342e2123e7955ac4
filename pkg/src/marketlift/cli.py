"""``marketlift solve|price|settle|sweep`` command-line entry point.

Exit codes: 0 when every requested solve is Optimal, 2 when at least one
cell is not, 1 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import acuc, bench, dcuc, pricing
from .errors import ConfigError, MarketliftError
from .instance import apply_load_multiplier, parse_instance, truncate_periods
from .solvers import SolverConfig, solve


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text}") from exc


def _parser():
    ap = argparse.ArgumentParser(prog="marketlift", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "price", "settle", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--instance", required=True)
        p.add_argument("--model", choices=("dcuc", "acuc"), default="dcuc")
        p.add_argument("--scheme", default="sdp",
                       help="sdp, fixed-binary, lp-baseline, relaxed-binary, milp "
                            "(comma-separated for sweep)")
        p.add_argument("--multiplier", type=_floats, default=[1.0],
                       help="load multiplier (comma-separated list for sweep)")
        p.add_argument("--periods", type=int, default=None)
        p.add_argument("--triangle", choices=("on", "off"), default="off")
        p.add_argument("--blocks", choices=bench.BLOCK_MODES, default="period")
        p.add_argument("--tol-profile", choices=("default", "tight"), default="default")
        p.add_argument("--backend", choices=("auto", "clarabel", "scs"), default=None)
        p.add_argument("--time-limit", type=float, default=None)
        p.add_argument("--out", default="marketlift-out")
        p.add_argument("--dispatch", default=None,
                       help="feasible ACUC dispatch JSON ({multiplier} is substituted in sweeps)")
        p.add_argument("--format", choices=("csv", "markdown"), default="csv")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _solver(args):
    kw = {}
    if args.backend:
        kw["backend"] = args.backend
    if args.time_limit:
        kw["time_limit"] = args.time_limit
    return SolverConfig.profile(args.tol_profile, **kw)


def _instance(args):
    inst = parse_instance(args.instance)
    if args.periods is not None:
        if not 1 <= args.periods <= inst.periods:
            raise ConfigError(f"--periods must be in 1..{inst.periods}")
        inst = truncate_periods(inst, args.periods)
    if len(args.multiplier) != 1:
        raise ConfigError(f"{args.command} takes a single --multiplier")
    return apply_load_multiplier(inst, args.multiplier[0])


def _build(args, inst):
    triangle = args.triangle == "on"
    s = args.scheme
    if args.model == "dcuc":
        if s == "milp":
            return dcuc.build_dcuc_milp(inst)
        if s == "lp-baseline":
            return dcuc.build_dcuc_lp(inst)
        if s == "sdp":
            return dcuc.build_dcuc_sdp(inst, triangle=triangle, blocks=args.blocks)
        if s == "fixed-binary":
            return dcuc.build_fixed_binary_lp(inst, solve(dcuc.build_dcuc_milp(inst), _solver(args)))
    else:
        if s == "sdp":
            return acuc.build_acuc_sdp(inst, blocks=args.blocks, triangle=triangle)
        if s == "relaxed-binary":
            return acuc.build_relaxed_binary(inst)
    raise ConfigError(f"scheme {s!r} is not available for {args.model}")


def _prices(args, inst, lm, res):
    if args.model == "acuc":
        return pricing.sdp_prices_acuc(res, lm, inst, scheme=args.scheme)
    return pricing.dcuc_prices(res, lm, inst, scheme=args.scheme)


def _write(out, name, doc):
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _single(args):
    inst = _instance(args)
    out = Path(args.out)
    lm = _build(args, inst)
    res = solve(lm, _solver(args))
    summary = {"instance": inst.name, "model": args.model, "scheme": args.scheme,
               "multiplier": args.multiplier[0], "status": res.status.value,
               "objective": res.objective, "rel_gap": res.gap, "backend": res.backend,
               "backend_status": res.backend_status, "seconds": res.seconds}
    print(f"{args.scheme}: {res.status.value} objective={res.objective:.6f} "
          f"({res.backend}, {res.seconds:.1f}s)")
    _write(out, "solve.json", summary)
    if args.command == "solve" or not res.optimal:
        return 0 if res.optimal else 2
    prices = _prices(args, inst, lm, res)
    _write(out, "prices.json", prices.to_dict())
    print(f"prices written to {out / 'prices.json'} "
          f"(closed-form residual {prices.closed_form_residual:.2e})")
    if args.command == "price":
        return 0
    if args.model == "acuc":
        if not args.dispatch:
            raise ConfigError("ACUC settlement needs --dispatch with a feasible dispatch file")
        dispatch, _ = acuc.ingest_feasible_dispatch(args.dispatch, inst)
    else:
        milp = res if args.scheme == "milp" else solve(dcuc.build_dcuc_milp(inst), _solver(args))
        if not milp.optimal:
            print(f"MILP not optimal ({milp.status.value}); nothing to settle")
            return 2
        dispatch = dcuc.dispatch_from_result(inst, milp)
    rep = pricing.settle(inst, dispatch, prices, res.objective)
    rep.to_json(out / "settlement.json")
    rep.to_csv(out / "settlement.csv")
    print(f"total LOC {rep.total_uplift:.2f}, bound gap {rep.bound_gap:.2f}, "
          f"bound satisfied: {rep.bound_satisfied}")
    return 0


def _sweep(args):
    cfg = bench.RunConfig(
        instance=args.instance, model=args.model,
        schemes=tuple(s.strip() for s in args.scheme.split(",") if s.strip()),
        multipliers=tuple(args.multiplier), periods=args.periods, solver=_solver(args),
        out=args.out, triangle=args.triangle == "on", blocks=args.blocks,
        workers=args.workers, dispatch=args.dispatch)

    def progress(m, cells):
        parts = [f"{s}={c.get('status')}" for s, c in cells.items()]
        print(f"multiplier {m:g}: " + ", ".join(parts), flush=True)

    archive = bench.run_sweep(cfg, progress=progress)
    for path in bench.emit_tables(archive, args.format, args.out):
        print(f"wrote {path}")
    ok = all(c["status"] == "Optimal" for c in archive.cells)
    return 0 if ok else 2


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sweep":
            return _sweep(args)
        return _single(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MarketliftError as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        # bad input data is a configuration problem; solver trouble is a failed cell
        return 1 if kind in _INPUT_ERRORS else 2


_INPUT_ERRORS = {"MissingField", "InvariantViolation", "MultipleSlackBuses",
                 "NonPositiveMultiplier", "DisconnectedNetwork", "SingularReducedMatrix",
                 "MissingAcFields", "InfeasibleDispatch", "TriangleBlowup"}


if __name__ == "__main__":
    sys.exit(main())
