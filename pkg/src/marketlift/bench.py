"""Load-multiplier sweeps, the results archive and table emission.

A sweep solves every requested scheme at every multiplier and stores one
cell per ``(multiplier, scheme)`` pair, whatever happened: ``Optimal``,
``Unknown`` (reduced accuracy), ``NoSolution`` (infeasible, numerical
failure, time limit) or ``Error`` (anything else, with the message).
"""

from __future__ import annotations

import csv
import io
import json
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import acuc, dcuc, pricing
from .errors import (ConfigError, EmptyArchive, MarketliftError, NumericalTrouble, TimeLimit,
                     BackendFailure)
from .instance import apply_load_multiplier, parse_instance, truncate_periods
from .solvers import SolverConfig, Status, solve

SCHEMES = {
    "dcuc": ("sdp", "fixed-binary", "lp-baseline"),
    "acuc": ("sdp", "relaxed-binary"),
}
BLOCK_MODES = ("full", "overlap", "period")
TIMING_KEYS = ("seconds", "created")


@dataclass
class RunConfig:
    instance: str
    model: str = "dcuc"
    schemes: tuple = ("sdp", "lp-baseline")
    multipliers: tuple = (1.0,)
    periods: int | None = None
    solver: SolverConfig = field(default_factory=SolverConfig.default)
    out: str | None = None
    triangle: bool = False
    blocks: str = "period"
    workers: int = 1
    dispatch: str | None = None  # ACUC: feasible dispatch file used for settlement

    def validate(self):
        if self.model not in SCHEMES:
            raise ConfigError(f"model must be one of {sorted(SCHEMES)}, got {self.model!r}")
        bad = [s for s in self.schemes if s not in SCHEMES[self.model]]
        if not self.schemes or bad:
            raise ConfigError(f"schemes for {self.model} must be a nonempty subset of "
                              f"{SCHEMES[self.model]}; got {list(self.schemes)}")
        if not self.multipliers or any(not m > 0 for m in self.multipliers):
            raise ConfigError("multipliers must be a nonempty list of positive numbers")
        if self.blocks not in BLOCK_MODES:
            raise ConfigError(f"blocks must be one of {BLOCK_MODES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            inst = parse_instance(self.instance)
        except (OSError, MarketliftError, ValueError) as exc:
            raise ConfigError(f"cannot load instance {self.instance}: {exc}") from exc
        if self.periods is not None and not 1 <= self.periods <= inst.periods:
            raise ConfigError(f"periods must be in 1..{inst.periods}")
        if self.model == "acuc" and not inst.ac_capable:
            raise ConfigError("instance has no AC data")
        return inst

    def as_dict(self):
        return {"instance": str(self.instance), "model": self.model,
                "schemes": list(self.schemes), "multipliers": list(self.multipliers),
                "periods": self.periods, "solver": self.solver.as_dict(),
                "triangle": self.triangle, "blocks": self.blocks, "dispatch": self.dispatch}


class ResultsArchive:
    """Append-only list of sweep cells plus the configuration that produced them."""

    def __init__(self, config: dict | None = None, cells=None):
        self.config = dict(config or {})
        self._cells = list(cells or [])

    @property
    def cells(self):
        return tuple(self._cells)

    def append(self, cell: dict):
        self._cells.append(dict(cell))

    def __len__(self):
        return len(self._cells)

    def cell(self, multiplier, scheme):
        for c in self._cells:
            if c["scheme"] == scheme and abs(c["multiplier"] - multiplier) < 1e-12:
                return c
        raise KeyError((multiplier, scheme))

    def multipliers(self):
        return sorted({c["multiplier"] for c in self._cells})

    def schemes(self):
        seen = []
        for c in self._cells:
            if c["scheme"] not in seen:
                seen.append(c["scheme"])
        return seen

    def to_dict(self):
        return {"config": self.config, "cells": list(self._cells)}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_jsonable) + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls(doc.get("config"), doc.get("cells"))

    def stripped(self):
        """Cells without timing fields, for determinism comparisons."""
        return [_strip(c) for c in self._cells]


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _jsonable(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serializable: {type(o)}")


# -- one multiplier --------------------------------------------------------------

def _cell_status(status: Status) -> str:
    if status == Status.OPTIMAL:
        return "Optimal"
    if status == Status.UNKNOWN:
        return "Unknown"
    return "NoSolution"


def _result_fields(res):
    return {"status": _cell_status(res.status), "objective": res.objective,
            "solver_status": res.status.value, "backend": res.backend,
            "backend_status": res.backend_status, "rel_gap": res.gap,
            "seconds": res.seconds, "message": res.message}


def _guarded(fn):
    """Run one cell; solver failures become NoSolution, other errors become Error."""
    t0 = time.perf_counter()
    try:
        cell = fn()
    except (TimeLimit, NumericalTrouble, BackendFailure) as exc:
        cell = {"status": "NoSolution", "message": f"{type(exc).__name__}: {exc}"}
    except Exception as exc:  # noqa: BLE001 - a cell must never abort the sweep
        cell = {"status": "Error", "message": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(limit=4)}
    cell.setdefault("seconds", time.perf_counter() - t0)
    return cell


def _settle_cell(inst, dispatch, prices, v_rel):
    rep = pricing.settle(inst, dispatch, prices, v_rel)
    return {"prices": prices.to_dict(), "settlement": rep.to_dict(),
            "total_loc": rep.total_uplift, "closed_form_residual": prices.closed_form_residual}


def _dcuc_multiplier(inst, cfg: RunConfig, m):
    out = {}
    milp_res = solve(dcuc.build_dcuc_milp(inst), cfg.solver)
    exact = milp_res.objective if milp_res.optimal else None
    out["milp"] = {**_result_fields(milp_res)}
    dispatch = dcuc.dispatch_from_result(inst, milp_res) if milp_res.optimal else None

    def with_gap(cell, obj):
        if exact is not None and cell["status"] == "Optimal":
            cell["exact"] = exact
            cell["gap"] = dcuc.optimality_gap(exact, obj)
        return cell

    for scheme in cfg.schemes:
        def run(scheme=scheme):
            if scheme == "lp-baseline":
                lm = dcuc.build_dcuc_lp(inst)
                res = solve(lm, cfg.solver)
                cell = with_gap(_result_fields(res), res.objective)
                if res.optimal and dispatch is not None:
                    cell.update(_settle_cell(inst, dispatch, pricing.lp_prices(res, inst, lm),
                                             res.objective))
                return cell
            if scheme == "fixed-binary":
                if not milp_res.optimal:
                    return {"status": "NoSolution", "message": "MILP has no optimal solution"}
                lm = dcuc.build_fixed_binary_lp(inst, milp_res)
                res = solve(lm, cfg.solver)
                cell = with_gap(_result_fields(res), res.objective)
                if res.optimal:
                    cell.update(_settle_cell(inst, dispatch,
                                             pricing.fixed_binary_prices(res, inst, lm),
                                             res.objective))
                return cell
            lm = dcuc.build_dcuc_sdp(inst, triangle=cfg.triangle, blocks=cfg.blocks)
            res = solve(lm, cfg.solver)
            cell = with_gap(_result_fields(res), res.objective)
            if cell.get("gap") is not None and cell["gap"] < 0:
                # a relaxation cannot exceed the optimum: re-solve tighter, keep both
                tight = replace(cfg.solver, conic_feas_tol=1e-10, conic_rel_gap_tol=1e-10)
                res2 = solve(lm, tight)
                cell["first_pass"] = {"objective": cell["objective"], "gap": cell["gap"]}
                cell.update(_result_fields(res2))
                cell["tightened"] = True
                cell.pop("gap", None)
                with_gap(cell, res2.objective)
                res = res2
            if res.optimal and dispatch is not None:
                cell.update(_settle_cell(inst, dispatch, pricing.sdp_prices_dcuc(res, lm, inst),
                                         res.objective))
            return cell
        out[scheme] = _guarded(run)
    return out


def _acuc_multiplier(inst, cfg: RunConfig, m):
    out = {}
    dispatch = None
    if cfg.dispatch:
        path = Path(str(cfg.dispatch).format(multiplier=m))
        if path.exists():
            dispatch, _ = acuc.ingest_feasible_dispatch(path, inst)
    for scheme in cfg.schemes:
        def run(scheme=scheme):
            if scheme == "relaxed-binary":
                res = solve(acuc.build_relaxed_binary(inst), cfg.solver)
                return _result_fields(res)
            lm = acuc.build_acuc_sdp(inst, blocks=cfg.blocks, triangle=cfg.triangle)
            res = solve(lm, cfg.solver)
            cell = _result_fields(res)
            if res.optimal:
                prices = pricing.sdp_prices_acuc(res, lm, inst)
                cell["prices"] = prices.to_dict()
                cell["closed_form_residual"] = prices.closed_form_residual
                if dispatch is not None:
                    cell.update(_settle_cell(inst, dispatch, prices, res.objective))
            return cell
        out[scheme] = _guarded(run)
    return out


def run_sweep(config: RunConfig, progress=None) -> ResultsArchive:
    """Solve every (multiplier, scheme) cell; the archive is rewritten after each multiplier."""
    base = config.validate()
    if config.periods is not None:
        base = truncate_periods(base, config.periods)
    archive = ResultsArchive({**config.as_dict(), "instance_name": base.name,
                              "created": time.strftime("%Y-%m-%dT%H:%M:%S")})
    out_dir = Path(config.out) if config.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    worker = _dcuc_multiplier if config.model == "dcuc" else _acuc_multiplier

    def job(m):
        cells = _guarded(lambda: {"cells": worker(apply_load_multiplier(base, m), config, m)})
        cells = cells.get("cells", cells)
        if "status" in cells:  # the multiplier failed before any scheme ran
            names = (["milp"] if config.model == "dcuc" else []) + list(config.schemes)
            cells = {s: dict(cells) for s in names}
        return cells

    mults = list(config.multipliers)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            results = list(ex.map(job, mults))
    else:
        results = (job(m) for m in mults)
    # single writer, fixed order: the archive does not depend on completion order
    for m, cells in zip(mults, results):
        for scheme in (["milp"] if "milp" in cells else []) + list(config.schemes):
            archive.append({"multiplier": m, "scheme": scheme, **cells[scheme]})
        if out_dir:
            archive.save(out_dir / "archive.json")
        if progress:
            progress(m, cells)
    return archive


# -- tables ----------------------------------------------------------------------

_MARK = {"Optimal": "", "Unknown": "*", "NoSolution": "-", "Error": "!"}


def _fmt(cell, key, digits):
    status = cell.get("status", "Error")
    if status in ("NoSolution", "Error"):
        return _MARK[status]
    val = cell.get(key)
    if val is None:
        return ""
    return f"{val:.{digits}f}{_MARK.get(status, '')}"


def _tables(archive: ResultsArchive):
    mults = archive.multipliers()
    schemes = [s for s in archive.schemes() if s != "milp"]
    model = archive.config.get("model", "dcuc")
    tabs = {}

    def get(m, s):
        try:
            return archive.cell(m, s)
        except KeyError:
            return {"status": "Error"}

    if model == "dcuc":
        gap_schemes = [s for s in schemes if s != "fixed-binary"]
        tabs["gaps"] = (["multiplier"] + [f"{s}_gap_pct" for s in gap_schemes],
                        [[f"{m:g}"] + [_fmt(get(m, s), "gap", 2) for s in gap_schemes]
                         for m in mults])
    loc_schemes = [s for s in schemes if any("total_loc" in get(m, s) for m in mults)]
    if loc_schemes:
        header = ["multiplier"] + [f"{s}_loc" for s in loc_schemes]
        both = "sdp" in loc_schemes and "fixed-binary" in loc_schemes
        if both:
            header.append("sdp_lower")
        rows = []
        for m in mults:
            row = [f"{m:g}"] + [_fmt(get(m, s), "total_loc", 1) for s in loc_schemes]
            if both:
                a, b = get(m, "sdp").get("total_loc"), get(m, "fixed-binary").get("total_loc")
                row.append("" if a is None or b is None else str(a < b).lower())
            rows.append(row)
        tabs["loc"] = (header, rows)
    obj_schemes = (["milp"] if "milp" in archive.schemes() else []) + schemes
    tabs["objectives"] = (["multiplier"] + [f"{s}_objective" for s in obj_schemes],
                          [[f"{m:g}"] + [_fmt(get(m, s), "objective", 1) for s in obj_schemes]
                           for m in mults])
    return tabs


_FOOTNOTE = "* reduced-accuracy solve (Unknown); - no solution; ! error"


def emit_tables(archive: ResultsArchive, fmt="csv", out_dir=".") -> list:
    """Write gap, LOC and objective tables; returns the written paths."""
    if not len(archive):
        raise EmptyArchive("archive has no cells")
    if fmt not in ("csv", "markdown"):
        raise ConfigError(f"table format must be csv or markdown, got {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, rows) in _tables(archive).items():
        if fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            text = buf.getvalue()
            path = out_dir / f"{name}.csv"
        else:
            lines = ["| " + " | ".join(header) + " |",
                     "|" + "|".join("---" for _ in header) + "|"]
            lines += ["| " + " | ".join(r) + " |" for r in rows]
            text = "\n".join(lines) + f"\n\n{_FOOTNOTE}\n"
            path = out_dir / f"{name}.md"
        path.write_text(text)
        paths.append(path)
    return paths
