"""DC unit commitment: shift-factor MILP, LP relaxation, SDP relaxation, fixed-binary LP.

Variable layout (shared by every model built here): for period ``t`` and
generator ``g`` the four variables ``p, u, v, z`` sit at
``4 * (t * G + g) + {0, 1, 2, 3}``.  Slack variables of the SDP model are
appended after them.  Periods and generators are 0-based positions.

Demand parameters are keyed ``("D", k, t)`` with ``k`` the bus position.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (InfeasibleDispatch, MissingMilpSolution, NonPositiveExact,
                     TriangleBlowup)
from .instance import PowerSystemInstance, line_flow_coefficients
from .lifting import Equality, MbqpModel, apply_block_structure, build_dnn_relaxation, strengthen_bounds
from .model import LiftedModel, RhsPolynomial, cid

P, U, V, Z = range(4)
KINDS = ("p", "u", "v", "z")
OPERATIONAL = ("pmin", "pmax", "logic", "ramp_up", "ramp_down", "min_up", "min_down")


def var(inst, kind, g, t):
    return 4 * (t * inst.n_gens + g) + kind


def demand_params(inst: PowerSystemInstance) -> dict:
    D = inst.demand
    return {("D", k, t): float(D[k, t]) for k in range(inst.n_buses) for t in range(inst.periods)}


@dataclass(frozen=True)
class Row:
    cid: object
    coefs: dict
    sense: str
    rhs: RhsPolynomial
    period: int


def generator_rows(gen, g, T, index):
    """Operational rows of one generator; ``index(kind, t)`` maps to a column."""
    z0 = 1.0 if gen.initial_on else 0.0
    p0 = gen.initial_power
    c = RhsPolynomial.const
    for t in range(T):
        p, u, v, z = (index(k, t) for k in range(4))
        yield Row(cid("Operational", "pmin", g, t), {p: 1.0, z: -gen.pmin}, ">=", c(0.0), t)
        yield Row(cid("Operational", "pmax", g, t), {p: 1.0, z: -gen.pmax}, "<=", c(0.0), t)
        if t == 0:
            yield Row(cid("Operational", "logic", g, t), {u: 1.0, v: -1.0, z: -1.0}, "==", c(-z0), t)
            if gen.initial_on:  # a unit that starts off has no ramp history
                yield Row(cid("Operational", "ramp_up", g, t), {p: 1.0, u: -gen.pmin}, "<=",
                          c(p0 + gen.ru), t)
                yield Row(cid("Operational", "ramp_down", g, t),
                          {p: -1.0, z: -gen.rd, v: -gen.pmin}, "<=", c(-p0), t)
        else:
            pp, zp = index(P, t - 1), index(Z, t - 1)
            yield Row(cid("Operational", "logic", g, t), {u: 1.0, v: -1.0, z: -1.0, zp: 1.0},
                      "==", c(0.0), t)
            yield Row(cid("Operational", "ramp_up", g, t),
                      {p: 1.0, pp: -1.0, zp: -gen.ru, u: -gen.pmin}, "<=", c(0.0), t)
            yield Row(cid("Operational", "ramp_down", g, t),
                      {pp: 1.0, p: -1.0, z: -gen.rd, v: -gen.pmin}, "<=", c(0.0), t)
        up = {index(U, tau): 1.0 for tau in range(max(0, t - gen.min_up), t + 1)}
        up[z] = up.get(z, 0.0) - 1.0
        yield Row(cid("Operational", "min_up", g, t), up, "<=", c(0.0), t)
        dn = {index(V, tau): 1.0 for tau in range(max(0, t - gen.min_down), t + 1)}
        dn[z] = dn.get(z, 0.0) + 1.0
        yield Row(cid("Operational", "min_down", g, t), dn, "<=", c(1.0), t)


def line_tag(inst, l):
    line = inst.lines[l]
    tag = (line.from_bus, line.to_bus)
    dup = sum(1 for m in range(l) if (inst.lines[m].from_bus, inst.lines[m].to_bus) == tag)
    return tag + ((dup,) if dup else ())


def network_rows(inst: PowerSystemInstance):
    """Market clearing and monitored-line flow rows with demand-dependent right-hand sides."""
    T, G = inst.periods, inst.n_gens
    F = line_flow_coefficients(inst)  # F[l, k] = B_l (S_ik - S_jk)
    gb = [inst.gen_bus_pos(g) for g in range(G)]
    for t in range(T):
        coefs = {var(inst, P, g, t): 1.0 for g in range(G)}
        terms = {("D", k, t): 1.0 for k in range(inst.n_buses)}
        yield Row(cid("MarketClearing", t), coefs, "==", RhsPolynomial.affine(0.0, terms), t)
    for l, line in enumerate(inst.lines):
        if not line.monitored:
            continue
        tag = line_tag(inst, l)
        for t in range(T):
            coefs = {}
            for g in range(G):
                if F[l, gb[g]] != 0.0:
                    coefs[var(inst, P, g, t)] = F[l, gb[g]]
            terms = {("D", k, t): F[l, k] for k in range(inst.n_buses) if F[l, k] != 0.0}
            yield Row(cid("FlowMin", *tag[:2], t, *tag[2:]), coefs, ">=",
                      RhsPolynomial.affine(line.flow_min, terms), t)
            yield Row(cid("FlowMax", *tag[:2], t, *tag[2:]), dict(coefs), "<=",
                      RhsPolynomial.affine(line.flow_max, terms), t)


def uc_rows(inst):
    yield from network_rows(inst)
    for g, gen in enumerate(inst.generators):
        yield from generator_rows(gen, g, inst.periods, lambda k, t, g=g: var(inst, k, g, t))


def _base_vars(lm: LiftedModel, inst, integer, lifted=False):
    for t in range(inst.periods):
        for g, gen in enumerate(inst.generators):
            lm.add_var(f"p[{gen.id},{t}]", 0.0, np.inf, lifted=lifted)
            for k in "uvz":
                lm.add_var(f"{k}[{gen.id},{t}]", 0.0, 1.0 if not lifted else np.inf,
                           lifted=lifted, integer=integer)


def _objective(inst):
    obj = {}
    for t in range(inst.periods):
        for g, gen in enumerate(inst.generators):
            for kind, cost in zip(range(4), (gen.cp, gen.cu, gen.cv, gen.cz)):
                if cost:
                    obj[var(inst, kind, g, t)] = float(cost)
    return obj


def build_dcuc_milp(inst: PowerSystemInstance, relax=False) -> LiftedModel:
    lm = LiftedModel(name="dcuc-lp" if relax else "dcuc-milp")
    _base_vars(lm, inst, integer=not relax)
    lm.binary = {var(inst, k, g, t) for t in range(inst.periods) for g in range(inst.n_gens)
                 for k in (U, V, Z)}
    lm.objective = _objective(inst)
    lm.params = demand_params(inst)
    for row in uc_rows(inst):
        lm.add_constraint(row.cid, row.coefs, row.sense, row.rhs)
    lm.meta["instance"] = inst.name
    return lm


def build_dcuc_lp(inst: PowerSystemInstance) -> LiftedModel:
    """LP relaxation: binaries continuous in [0, 1]."""
    return build_dcuc_milp(inst, relax=True)


# -- SDP ---------------------------------------------------------------------

def _slack_bound(row: Row, upper, params):
    """Largest value the slack of ``row`` can take given ``0 <= x_i <= upper(i)``."""
    b = row.rhs.value(params)
    if row.sense == "<=":  # s = b - a'x
        return b - sum(a * upper(i) for i, a in row.coefs.items() if a < 0)
    return sum(a * upper(i) for i, a in row.coefs.items() if a > 0) - b  # s = a'x - b


def build_dcuc_mbqp(inst: PowerSystemInstance, binary_ub_rows=False, ub_rlt=True):
    """Slacked equality form of the MILP together with per-variable period labels."""
    names, U_map, periods = [], {}, []
    for t in range(inst.periods):
        for gen in inst.generators:
            names += [f"{k}[{gen.id},{t}]" for k in KINDS]
            periods += [t] * 4
    G, T = inst.n_gens, inst.periods
    binary = set()
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            U_map[var(inst, P, g, t)] = float(gen.pmax)
            binary.update(var(inst, k, g, t) for k in (U, V, Z))
    params = demand_params(inst)
    flow_range = {line_tag(inst, l): float(ln.flow_max - ln.flow_min)
                  for l, ln in enumerate(inst.lines) if ln.monitored}

    def upper(i):
        return 1.0 if i in binary else U_map[i]

    eqs = []
    for row in uc_rows(inst):
        coefs = dict(row.coefs)
        if row.sense != "==":
            if row.cid.kind in ("FlowMin", "FlowMax"):
                bound = flow_range[row.cid.index[:2] + row.cid.index[3:]]
            else:
                bound = _slack_bound(row, upper, params)
        if row.sense != "==" and bound > 0:  # a zero-range slack would pin a PSD coordinate
            s = len(names)
            names.append(f"s[{row.cid}]")
            periods.append(row.period)
            U_map[s] = bound
            coefs[s] = 1.0 if row.sense == "<=" else -1.0
        eqs.append(Equality(row.cid, coefs, row.rhs))
    if binary_ub_rows:
        for t in range(T):
            for g in range(G):
                for k in (U, V, Z):
                    s = len(names)
                    names.append(f"s[ub_{KINDS[k]},{g},{t}]")
                    periods.append(t)
                    U_map[s] = 1.0
                    eqs.append(Equality(cid("Operational", f"ub_{KINDS[k]}", g, t),
                                        {var(inst, k, g, t): 1.0, s: 1.0},
                                        RhsPolynomial.const(1.0), rlt=ub_rlt))
    c = np.zeros(len(names))
    for i, v in _objective(inst).items():
        c[i] = v
    m = MbqpModel(names=names, c=c, equalities=eqs, binary=binary, U=U_map, params=params)
    return m, periods


def triangle_rows(inst, lm: LiftedModel, cap=5000):
    G, T = inst.n_gens, inst.periods
    n_rows = T * 4 * (G * (G - 1) * (G - 2) // 6)
    if n_rows > cap:
        raise TriangleBlowup(f"{n_rows} triangle rows exceed the cap of {cap}")
    for t in range(T):
        for g1, g2, g3 in itertools.combinations(range(G), 3):
            z = {g: var(inst, Z, g, t) for g in (g1, g2, g3)}
            trio = (g1, g2, g3)
            for r, c3 in enumerate(trio):
                a, b = (g for g in trio if g != c3)
                coefs = {(z[a], z[b]): 1.0, z[c3]: 1.0, _cell(z[a], z[c3]): -1.0,
                         _cell(z[b], z[c3]): -1.0}
                lm.add_constraint(cid("Triangle", g1, g2, g3, t, f"edge{r + 1}"), coefs, ">=", 0.0)
            coefs = {(z[g1], z[g2]): 1.0, (z[g1], z[g3]): 1.0, (z[g2], z[g3]): 1.0,
                     z[g1]: -1.0, z[g2]: -1.0, z[g3]: -1.0}
            lm.add_constraint(cid("Triangle", g1, g2, g3, t, "total"), coefs, ">=", -1.0)


def _cell(i, j):
    return (i, j) if i <= j else (j, i)


def period_blocks(periods, T, mode):
    by_t = [[] for _ in range(T)]
    for i, t in enumerate(periods):
        by_t[t].append(i)
    if mode == "period":
        return by_t
    if mode == "overlap":
        return [by_t[0]] + [by_t[t - 1] + by_t[t] for t in range(1, T)]
    raise ValueError(f"unknown block mode {mode!r}")


def build_dcuc_sdp(inst: PowerSystemInstance, triangle=False, blocks="period",
                   binary_ub_rows=False, ub_rlt=True, triangle_cap=5000) -> LiftedModel:
    """Strengthened DNN relaxation of the slacked DCUC model."""
    m, periods = build_dcuc_mbqp(inst, binary_ub_rows=binary_ub_rows, ub_rlt=ub_rlt)
    lm = strengthen_bounds(build_dnn_relaxation(m, name="dcuc-sdp"), m)
    if triangle:
        triangle_rows(inst, lm, cap=triangle_cap)
    if blocks != "full":
        lm = apply_block_structure(lm, period_blocks(periods, inst.periods, blocks))
    lm.meta.update(instance=inst.name, triangle=triangle, blocks=blocks, periods_of_var=periods)
    return lm


# -- dispatch ----------------------------------------------------------------

@dataclass(frozen=True)
class Dispatch:
    """Commitment and production per generator (rows) and period (columns)."""

    p: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    q: np.ndarray | None = None
    source: str = ""

    def cost(self, inst) -> float:
        total = 0.0
        for g, gen in enumerate(inst.generators):
            total += (gen.cp * self.p[g].sum() + gen.cu * self.u[g].sum()
                      + gen.cv * self.v[g].sum() + gen.cz * self.z[g].sum())
        return float(total)

    def column(self, kind, g, t):
        return float(getattr(self, KINDS[kind])[g, t])


def dispatch_from_result(inst, result, source="milp") -> Dispatch:
    if result is None or result.x is None:
        raise MissingMilpSolution("no primal solution available")
    G, T = inst.n_gens, inst.periods
    arr = np.zeros((4, G, T))
    for t in range(T):
        for g in range(G):
            for k in range(4):
                arr[k, g, t] = result.x[var(inst, k, g, t)]
    arr[1:] = np.round(arr[1:])
    return Dispatch(arr[0], arr[1], arr[2], arr[3], source=source)


def check_generator_rows(inst, d: Dispatch, tol=1e-6):
    """Raise InfeasibleDispatch naming the first operational row violated by ``d``."""
    for g, gen in enumerate(inst.generators):
        for k in "uvz":
            vals = getattr(d, k)[g]
            if np.any(np.abs(vals - np.round(vals)) > tol) or np.any((vals < -tol) | (vals > 1 + tol)):
                raise InfeasibleDispatch(f"binary({k},{gen.id})", "value not in {0, 1}")
        if np.any(d.p[g] < -tol):
            raise InfeasibleDispatch(f"nonnegativity(p,{gen.id})")
        for row in generator_rows(gen, g, inst.periods, lambda k, t: (k, t)):
            lhs = sum(a * d.column(k, g, t) for (k, t), a in row.coefs.items())
            rhs = row.rhs.value({})
            viol = {"<=": lhs - rhs, ">=": rhs - lhs, "==": abs(lhs - rhs)}[row.sense]
            if viol > tol * max(1.0, abs(rhs)):
                raise InfeasibleDispatch(str(row.cid), f"lhs={lhs:.9g} rhs={rhs:.9g}")


# -- fixed-binary LP -----------------------------------------------------------

def build_fixed_binary_lp(inst: PowerSystemInstance, milp_result) -> LiftedModel:
    """The MILP with u, v, z replaced by their optimal values; only p remains."""
    if milp_result is None or not getattr(milp_result, "optimal", False) or milp_result.x is None:
        raise MissingMilpSolution("fixed-binary pricing needs an optimal MILP solution")
    d = dispatch_from_result(inst, milp_result)
    G, T = inst.n_gens, inst.periods
    lm = LiftedModel(name="dcuc-fixed-binary")
    col = {}
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            col[var(inst, P, g, t)] = lm.add_var(f"p[{gen.id},{t}]", 0.0, np.inf)
    fixed = {var(inst, k, g, t): d.column(k, g, t) for t in range(T) for g in range(G)
             for k in (U, V, Z)}
    for i, c in _objective(inst).items():
        if i in fixed:
            lm.objective_constant += c * fixed[i]
        else:
            lm.objective[col[i]] = c
    lm.params = demand_params(inst)
    for row in uc_rows(inst):
        shift = sum(a * fixed[i] for i, a in row.coefs.items() if i in fixed)
        coefs = {col[i]: a for i, a in row.coefs.items() if i not in fixed}
        rhs = RhsPolynomial(type(row.rhs.base)(row.rhs.base.constant - shift, row.rhs.base.terms))
        if not coefs:
            r = rhs.value(lm.params)
            ok = {"<=": 0.0 <= r + 1e-9, ">=": 0.0 >= r - 1e-9, "==": abs(r) <= 1e-9}[row.sense]
            if not ok:
                raise InfeasibleDispatch(str(row.cid), "fixed commitment violates the row")
            continue
        lm.add_constraint(row.cid, coefs, row.sense, rhs)
    lm.meta["fixed_dispatch"] = d
    return lm


def optimality_gap(exact: float, relaxed: float) -> float:
    if not exact > 0:
        raise NonPositiveExact(f"exact objective must be positive, got {exact}")
    return 100.0 * (exact - relaxed) / exact
