"""Prices from relaxation duals, generator best responses and settlement.

Every price here is the derivative of a relaxation's optimal value with
respect to a demand parameter, read off the dual solution: for a row with
right-hand side ``b(D)`` and dual ``y = dV/db`` the contribution is
``y * db/dD``.  The DCUC and ACUC closed forms are evaluated independently
from the tagged duals and must agree with that generic gradient.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dcuc import Dispatch, check_generator_rows, generator_rows, line_tag
from .errors import ClosedFormMismatch, IncompletePrices, InfeasibleDispatch, MissingDuals
from .instance import PowerSystemInstance, line_flow_coefficients
from .lifting import envelope_gradient
from .model import LiftedModel, cid, rlt_of
from .solvers import SolverConfig, Status, solve_milp

CLOSED_FORM_TOL = 1e-6


@dataclass
class PriceVector:
    """Bus prices ``real[k, t]`` (and ``reactive[k, t]`` for AC), in $/MWh."""

    real: np.ndarray
    reactive: np.ndarray | None = None
    scheme: str = ""
    closed_form_residual: float = 0.0
    nonlinear_rhs: bool = False  # some priced row has a right-hand side nonlinear in D

    def at(self, k, t):
        return float(self.real[k, t])

    def to_dict(self):
        d = {"scheme": self.scheme, "real": self.real.tolist(),
             "closed_form_residual": self.closed_form_residual,
             "nonlinear_rhs": self.nonlinear_rhs}
        if self.reactive is not None:
            d["reactive"] = self.reactive.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        re_ = d.get("reactive")
        return cls(np.asarray(d["real"], float), None if re_ is None else np.asarray(re_, float),
                   d.get("scheme", ""), float(d.get("closed_form_residual", 0.0)),
                   bool(d.get("nonlinear_rhs", False)))


def _grid(grad, key, N, T):
    return np.array([[grad.get((key, k, t), 0.0) for t in range(T)] for k in range(N)])


def _dual_lookup(result, lm):
    present = {c.cid for c in lm.constraints}

    def y(c):
        if c not in present:
            return 0.0
        if c not in result.duals:
            raise MissingDuals(f"no dual recorded for {c}")
        return result.duals[c]
    return y


def dcuc_closed_form(result, lm: LiftedModel, inst: PowerSystemInstance) -> np.ndarray:
    """Bus prices assembled term by term from the MarketClearing and Flow duals.

    ``r = lam + 2 lam^ sum(D) + sum_l F_lk (xi_min + xi_max)
        + 2 sum_l F_lk (sum_k' F_lk' D_k') (xi^_min + xi^_max)
        + 2 sum_l F_lk (Fmin_l xi^_min + Fmax_l xi^_max)``
    with hatted symbols the duals of the RLT rows (zero when a row is absent).
    """
    y = _dual_lookup(result, lm)
    N, T = inst.n_buses, inst.periods
    D = np.array([[lm.params[("D", k, t)] for t in range(T)] for k in range(N)])
    F = line_flow_coefficients(inst)
    r = np.zeros((N, T))
    for t in range(T):
        mc = cid("MarketClearing", t)
        r[:, t] = y(mc) + 2.0 * y(rlt_of(mc)) * D[:, t].sum()
        for l, line in enumerate(inst.lines):
            if not line.monitored:
                continue
            tag = line_tag(inst, l)
            lo = cid("FlowMin", *tag[:2], t, *tag[2:])
            hi = cid("FlowMax", *tag[:2], t, *tag[2:])
            xi = y(lo) + y(hi)
            xh_lo, xh_hi = y(rlt_of(lo)), y(rlt_of(hi))
            shift = float(F[l] @ D[:, t])
            r[:, t] += F[l] * xi
            r[:, t] += 2.0 * F[l] * shift * (xh_lo + xh_hi)
            r[:, t] += 2.0 * F[l] * (line.flow_min * xh_lo + line.flow_max * xh_hi)
    return r


def _checked(generic, closed, what):
    resid = float(np.max(np.abs(generic - closed))) if generic.size else 0.0
    if not resid <= CLOSED_FORM_TOL:
        raise ClosedFormMismatch(f"{what}: closed form differs from dual gradient by {resid:.3g}")
    return resid


def _nonlinear(lm):
    return any(c.rhs.squared and not c.rhs.is_constant for c in lm.constraints)


def _require(result):
    if result is None or result.status != Status.OPTIMAL or not result.duals:
        status = getattr(getattr(result, "status", None), "value", "missing")
        raise MissingDuals(f"pricing needs an optimal dual solution (status {status})")


def dcuc_prices(result, lm: LiftedModel, inst: PowerSystemInstance, scheme="") -> PriceVector:
    """Generic dual gradient, cross-checked against :func:`dcuc_closed_form`."""
    _require(result)
    grad = envelope_gradient(result, lm)
    generic = _grid(grad, "D", inst.n_buses, inst.periods)
    resid = _checked(generic, dcuc_closed_form(result, lm, inst), "DCUC prices")
    return PriceVector(generic, scheme=scheme or lm.name, closed_form_residual=resid,
                       nonlinear_rhs=_nonlinear(lm))


def sdp_prices_dcuc(sdp_result, lm, inst) -> PriceVector:
    return dcuc_prices(sdp_result, lm, inst, scheme="sdp")


def fixed_binary_prices(lp_result, inst, lm) -> PriceVector:
    """Prices from the LP obtained by pinning the MILP commitment."""
    return dcuc_prices(lp_result, lm, inst, scheme="fixed-binary")


def lp_prices(lp_result, inst, lm) -> PriceVector:
    """Prices from the plain LP relaxation (binaries in [0, 1])."""
    return dcuc_prices(lp_result, lm, inst, scheme="lp-baseline")


def acuc_closed_form(result, lm, inst):
    y = _dual_lookup(result, lm)
    N, T = inst.n_buses, inst.periods
    real, reac = np.zeros((N, T)), np.zeros((N, T))
    for t in range(T):
        agg = cid("AggregateDemand", t)
        agg_q = cid("AggregateDemand", t, "reactive")
        sum_d = sum(lm.params[("D", k, t)] for k in range(N))
        sum_dq = sum(lm.params[("DI", k, t)] for k in range(N))
        for k, bus in enumerate(inst.buses):
            real[k, t] = (y(cid("FlowBalanceAC", bus.id, t, "R"))
                          + y(agg) + 2.0 * y(rlt_of(agg)) * sum_d)
            reac[k, t] = (y(cid("FlowBalanceAC", bus.id, t, "I"))
                          + y(agg_q) + 2.0 * y(rlt_of(agg_q)) * sum_dq)
    return real, reac


def sdp_prices_acuc(sdp_result, lm, inst, scheme="sdp") -> PriceVector:
    """Real and reactive bus prices of an AC relaxation."""
    _require(sdp_result)
    grad = envelope_gradient(sdp_result, lm)
    N, T = inst.n_buses, inst.periods
    gr, gi = _grid(grad, "D", N, T), _grid(grad, "DI", N, T)
    cr, ci = acuc_closed_form(sdp_result, lm, inst)
    resid = max(_checked(gr, cr, "ACUC real prices"), _checked(gi, ci, "ACUC reactive prices"))
    return PriceVector(gr, gi, scheme=scheme, closed_form_residual=resid,
                       nonlinear_rhs=_nonlinear(lm))


# -- best response -------------------------------------------------------------

@dataclass
class BestResponse:
    generator: str
    p: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    q: np.ndarray | None
    profit: float


def best_response(gen, price, horizon, reactive_price=None, config=None) -> BestResponse:
    """Profit-maximizing schedule of one generator facing bus prices ``price[t]``.

    The generator's own operational rows (with its initial state) define the
    feasible set; with ``reactive_price`` a reactive output ``q`` in
    ``[qmin z, qmax z]`` is added and paid at that price.
    """
    T = int(horizon)
    price = np.asarray(price, float)[:T]
    ac = reactive_price is not None
    lm = LiftedModel(name=f"best-response[{gen.id}]")
    cols = {}
    for t in range(T):
        cols[(0, t)] = lm.add_var(f"p[{t}]", 0.0, np.inf)
        for k, nm in ((1, "u"), (2, "v"), (3, "z")):
            cols[(k, t)] = lm.add_var(f"{nm}[{t}]", 0.0, 1.0, integer=True)
        if ac:
            cols[("q", t)] = lm.add_var(f"q[{t}]", -np.inf, np.inf)
    obj = {}
    for t in range(T):
        obj[cols[(0, t)]] = gen.cp - price[t]
        obj[cols[(1, t)]] = gen.cu
        obj[cols[(2, t)]] = gen.cv
        obj[cols[(3, t)]] = gen.cz
        if ac:
            obj[cols[("q", t)]] = -float(reactive_price[t])
            q, z = cols[("q", t)], cols[(3, t)]
            lm.add_constraint(cid("Operational", "qmin", 0, t), {q: 1.0, z: -gen.qmin}, ">=", 0.0)
            lm.add_constraint(cid("Operational", "qmax", 0, t), {q: 1.0, z: -gen.qmax}, "<=", 0.0)
    lm.objective = {k: v for k, v in obj.items() if v}
    for row in generator_rows(gen, 0, T, lambda k, t: cols[(k, t)]):
        lm.add_constraint(row.cid, row.coefs, row.sense, row.rhs)
    config = config or SolverConfig(milp_rel_gap=1e-8)
    res = solve_milp(lm, config)
    res.require_optimal()
    x = res.x
    arr = np.array([[x[cols[(k, t)]] for t in range(T)] for k in range(4)])
    arr[1:] = np.round(arr[1:])
    q = np.array([x[cols[("q", t)]] for t in range(T)]) if ac else None
    return BestResponse(gen.id, arr[0], arr[1], arr[2], arr[3], q, -res.objective)


def _profit(gen, p, u, v, z, price, q=None, rprice=None):
    revenue = float(price @ p) + (float(rprice @ q) if q is not None else 0.0)
    cost = gen.cp * p.sum() + gen.cu * u.sum() + gen.cv * v.sum() + gen.cz * z.sum()
    return revenue, float(cost)


# -- settlement ----------------------------------------------------------------

@dataclass
class GeneratorSettlement:
    generator: str
    bus: int
    payment: float  # sum_t pi^G_gt
    cost: float
    realized_profit: float
    best_profit: float
    uplift: float  # U_g, the lost opportunity cost


@dataclass
class SettlementReport:
    scheme: str
    generators: list
    load_payment: list  # pi^L_t per period
    total_uplift: float
    price_adder: float
    z_feas: float
    v_rel: float
    bound_gap: float
    bound_satisfied: bool
    subgradient_caveat: bool
    payments: list = field(default_factory=list)  # pi^G[g][t]

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path=None):
        buf = io.StringIO()
        cols = ["generator", "bus", "payment", "cost", "realized_profit", "best_profit", "uplift"]
        w = csv.writer(buf)
        w.writerow(["row"] + cols + ["price_adder", "bound_gap", "bound_satisfied"])
        for g in self.generators:
            w.writerow(["generator"] + [getattr(g, c) for c in cols] + ["", "", ""])
        w.writerow(["system", "", "", sum(self.load_payment),
                    sum(g.cost for g in self.generators), "", "", self.total_uplift,
                    self.price_adder, self.bound_gap, self.bound_satisfied])
        if path:
            with open(path, "w", newline="") as fh:
                fh.write(buf.getvalue())
        return buf.getvalue()


def _check_prices(inst, prices, ac):
    shape = (inst.n_buses, inst.periods)
    arrays = [("real", prices.real)] + ([("reactive", prices.reactive)] if ac else [])
    for name, arr in arrays:
        if arr is None:
            raise IncompletePrices(f"{name} prices missing")
        arr = np.asarray(arr)
        if arr.shape != shape or not np.all(np.isfinite(arr)):
            raise IncompletePrices(f"{name} prices must be finite with shape {shape}")


def settle(inst: PowerSystemInstance, dispatch: Dispatch, prices: PriceVector, v_rel: float,
           workers=1, config=None) -> SettlementReport:
    """Lost opportunity costs, payments and the uplift bound check.

    AC settlement (reactive prices present) pays ``q`` at the reactive price
    and requires ``dispatch.q``.
    """
    ac = prices.reactive is not None
    _check_prices(inst, prices, ac)
    if ac and dispatch.q is None:
        raise InfeasibleDispatch("dispatch.q", "reactive output required for AC settlement")
    check_generator_rows(inst, dispatch)
    T = inst.periods
    real = np.asarray(prices.real, float)
    reac = np.asarray(prices.reactive, float) if ac else None

    def one(g):
        gen = inst.generators[g]
        k = inst.gen_bus_pos(g)
        rp = reac[k] if ac else None
        br = best_response(gen, real[k], T, rp, config)
        q = dispatch.q[g] if ac else None
        pay, cost = _profit(gen, dispatch.p[g], dispatch.u[g], dispatch.v[g], dispatch.z[g],
                            real[k], q, rp)
        per_t = real[k] * dispatch.p[g] + (rp * q if ac else 0.0)
        row = GeneratorSettlement(gen.id, gen.bus, pay, cost, pay - cost, br.profit,
                                  br.profit - (pay - cost))
        return row, per_t.tolist()

    idx = range(inst.n_gens)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(one, idx))
    else:
        out = [one(g) for g in idx]
    out.sort(key=lambda r: r[0].generator)
    rows = [r for r, _ in out]
    D = inst.demand
    load = (real * D).sum(axis=0)
    if ac:
        load = load + (reac * inst.demand_reactive).sum(axis=0)
    total_u = float(sum(r.uplift for r in rows))
    z_feas = dispatch.cost(inst)
    gap = z_feas - float(v_rel)
    total_d = float(D.sum())
    return SettlementReport(
        scheme=prices.scheme, generators=rows, load_payment=load.tolist(),
        total_uplift=total_u, price_adder=total_u / total_d if total_d > 0 else math.nan,
        z_feas=z_feas, v_rel=float(v_rel), bound_gap=gap,
        bound_satisfied=bool(total_u <= gap + 1e-6), subgradient_caveat=prices.nonlinear_rhs,
        payments=[p for _, p in out],
    )
