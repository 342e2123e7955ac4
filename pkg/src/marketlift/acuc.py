"""AC unit commitment: rectangular voltage lifting combined with the UC lifting.

Per period ``t`` the voltage matrix ``W_t`` (size ``2N``) is stored as free
scalar variables; ``W[k, k] + W[N+k, N+k]`` is ``|v_k|^2`` and
``W[i, N+j]`` is the cross term ``Re(v_i) Im(v_j)``.  Line admittance is
``G - jb`` with ``b`` the line's ``b_ac`` (the positive series susceptance,
falling back to the DC ``b`` when absent).  Branch flows are in
MW/MVAr: per-unit expressions are multiplied by ``base_mva``.

Reactive output enters the UC lifting as ``q = q_plus - q_minus`` because
every lifted variable must be nonnegative.  Demand parameters are
``("D", k, t)`` for real and ``("DI", k, t)`` for reactive demand.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .dcuc import Dispatch, _slack_bound, check_generator_rows, generator_rows, period_blocks
from .errors import InfeasibleDispatch, MissingAcFields, MissingField, TriangleBlowup
from .lifting import Equality, MbqpModel, apply_block_structure, build_dnn_relaxation, strengthen_bounds
from .model import LiftedModel, MatrixBlock, RhsPolynomial, SocConstraint, cid

INF = float("inf")


def _require_ac(inst):
    if not inst.ac_capable or inst.demand_reactive is None:
        raise MissingAcFields(f"instance {inst.name!r} is not AC-capable")
    for gen in inst.generators:
        if gen.qmin is None or gen.qmax is None:
            raise MissingAcFields(f"generator {gen.id} lacks reactive limits")
    for bus in inst.buses:
        if bus.vmin is None or bus.vmax is None:
            raise MissingAcFields(f"bus {bus.id} lacks voltage limits")


def ac_params(inst):
    D, DI = inst.demand, inst.demand_reactive
    out = {}
    for k in range(inst.n_buses):
        for t in range(inst.periods):
            out[("D", k, t)] = float(D[k, t])
            out[("DI", k, t)] = float(DI[k, t])
    return out


def line_admittance(line):
    """(G, B) of the series admittance ``G + jB``; ``B = -b``."""
    return float(line.g), -float(line.susceptance_ac)


class WIndex:
    """Scalar-variable map of one period's symmetric ``W`` matrix."""

    def __init__(self, lm: LiftedModel, n_bus, t):
        self.n = n_bus
        self.t = t
        d = 2 * n_bus
        self.idx = {}
        for a in range(d):
            for b in range(a, d):
                self.idx[(a, b)] = lm.add_var(f"W[{t}][{a},{b}]", -INF, INF)

    def __call__(self, a, b):
        return self.idx[(a, b) if a <= b else (b, a)]

    def R(self, i, j):
        return self(i, j)

    def I(self, i, j):
        return self(self.n + i, self.n + j)

    def C(self, i, j):
        return self(i, self.n + j)

    def block(self):
        d = 2 * self.n
        return MatrixBlock(tuple(tuple(self(a, b) for b in range(d)) for a in range(d)),
                           name=str(cid("PsdBlock", "W", self.t)))


def _acc(coefs, key, val):
    coefs[key] = coefs.get(key, 0.0) + val


def rect_flow_coefs(w: WIndex, i, j, G, B, base):
    """Coefficient maps over W variables for ``p_ij`` and ``q_ij`` (in MW / MVAr)."""
    p, q = {}, {}
    for key, s in ((w.R(i, i), 1.0), (w.I(i, i), 1.0), (w.R(i, j), -1.0), (w.I(i, j), -1.0)):
        _acc(p, key, base * G * s)
        _acc(q, key, -base * B * s)
    # - B (W^C_ji - W^C_ij) and - G (W^C_ji - W^C_ij)
    for key, s in ((w.C(j, i), 1.0), (w.C(i, j), -1.0)):
        _acc(p, key, -base * B * s)
        _acc(q, key, -base * G * s)
    return p, q


def build_ac_constraints(inst, t, lm: LiftedModel, gen_p, gen_q, ploss):
    """Add the period-``t`` AC rows to ``lm``.

    ``gen_p(g)`` / ``gen_q(g)`` return coefficient maps expressing the
    generator's real / reactive output; ``ploss`` is the loss variable index.
    """
    _require_ac(inst)
    N, base = inst.n_buses, inst.base_mva
    w = WIndex(lm, N, t)
    lm.psd_blocks.append(w.block())
    out_p = [dict() for _ in range(N)]
    out_q = [dict() for _ in range(N)]
    loss = {ploss: 1.0}
    flows = {}
    for l, line in enumerate(inst.lines):
        i, j = inst.bus_pos(line.from_bus), inst.bus_pos(line.to_bus)
        Gij, Bij = line_admittance(line)
        tag = (line.from_bus, line.to_bus, t) + ((l,) if _parallel(inst, l) else ())
        for (a, b, d) in ((i, j, "fwd"), (j, i, "rev")):
            pv = lm.add_var(f"pflow[{l},{d},{t}]", -INF, INF)
            qv = lm.add_var(f"qflow[{l},{d},{t}]", -INF, INF)
            flows[(l, d)] = (pv, qv)
            pc, qc = rect_flow_coefs(w, a, b, Gij, Bij, base)
            pc = {k: -v for k, v in pc.items()}
            qc = {k: -v for k, v in qc.items()}
            pc[pv] = 1.0
            qc[qv] = 1.0
            lm.add_constraint(cid("RectFlow", *tag, f"p_{d}"), pc, "==", 0.0)
            lm.add_constraint(cid("RectFlow", *tag, f"q_{d}"), qc, "==", 0.0)
            _acc(out_p[a], pv, -1.0)
            _acc(out_q[a], qv, -1.0)
            _acc(loss, pv, -1.0)
            if line.s_max is not None:
                lm.soc.append(SocConstraint(cid("Thermal", *tag, d), (pv, qv), float(line.s_max)))
    for k, bus in enumerate(inst.buses):
        diag = {w.R(k, k): 1.0, w.I(k, k): 1.0}
        lm.add_constraint(cid("VoltageEnvelope", bus.id, t, "min"), diag, ">=", bus.vmin ** 2)
        lm.add_constraint(cid("VoltageEnvelope", bus.id, t, "max"), dict(diag), "<=", bus.vmax ** 2)
    lm.add_constraint(cid("LossDef", t), loss, "==", 0.0)
    for k, bus in enumerate(inst.buses):
        pr, qr = dict(out_p[k]), dict(out_q[k])
        for g in inst.gens_at(k):
            for key, v in gen_p(g).items():
                _acc(pr, key, v)
            for key, v in gen_q(g).items():
                _acc(qr, key, v)
        lm.add_constraint(cid("FlowBalanceAC", bus.id, t, "R"), pr, "==",
                          RhsPolynomial.affine(0.0, {("D", k, t): 1.0}))
        lm.add_constraint(cid("FlowBalanceAC", bus.id, t, "I"), qr, "==",
                          RhsPolynomial.affine(0.0, {("DI", k, t): 1.0}))
    return w, flows


def _parallel(inst, l):
    key = {inst.lines[l].from_bus, inst.lines[l].to_bus}
    return sum(1 for ln in inst.lines if {ln.from_bus, ln.to_bus} == key) > 1


# -- SDP -----------------------------------------------------------------------

def q_terms(idx, g, t):
    """``q = q+ - q-`` over whichever parts exist."""
    out = {}
    if ("q+", g, t) in idx:
        out[idx[("q+", g, t)]] = 1.0
    if ("q-", g, t) in idx:
        out[idx[("q-", g, t)]] = -1.0
    return out


def build_acuc_mbqp(inst, binary_ub_rows=False, ub_rlt=True, reactive_rlt=False):
    """UC part of the AC model in slacked equality form (the lifted ``x``)."""
    _require_ac(inst)
    G, T = inst.n_gens, inst.periods
    names, U_map, periods, idx = [], {}, [], {}
    binary = set()

    def new(name, t, ub=None, is_bin=False):
        names.append(name)
        periods.append(t)
        i = len(names) - 1
        if is_bin:
            binary.add(i)
        else:
            U_map[i] = float(ub)
        return i

    total_pmax = sum(g.pmax for g in inst.generators)
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            idx[("p", g, t)] = new(f"p[{gen.id},{t}]", t, gen.pmax)
            for k in "uvz":
                idx[(k, g, t)] = new(f"{k}[{gen.id},{t}]", t, is_bin=True)
            # a zero-range part would pin a coordinate of the PSD block at 0
            if gen.qmax > 0:
                idx[("q+", g, t)] = new(f"q+[{gen.id},{t}]", t, gen.qmax)
            if gen.qmin < 0:
                idx[("q-", g, t)] = new(f"q-[{gen.id},{t}]", t, -gen.qmin)
        idx[("loss", t)] = new(f"ploss[{t}]", t, total_pmax)
    params = ac_params(inst)

    def upper(i):
        return 1.0 if i in binary else U_map[i]

    eqs = []

    def slacked(row_cid, coefs, sense, rhs, t, rlt=True):
        coefs = dict(coefs)
        if sense != "==":
            probe = type("R", (), {"rhs": rhs, "sense": sense, "coefs": coefs})
            bound = _slack_bound(probe, upper, params)
            if bound > 0:  # otherwise the row can only hold with equality
                s = new(f"s[{row_cid}]", t, bound)
                coefs[s] = 1.0 if sense == "<=" else -1.0
        eqs.append(Equality(row_cid, coefs, rhs, rlt=rlt))

    kinds = "puvz"
    for g, gen in enumerate(inst.generators):
        for row in generator_rows(gen, g, T, lambda k, t, g=g: idx[(kinds[k], g, t)]):
            slacked(row.cid, row.coefs, row.sense, row.rhs, row.period)
        for t in range(T):
            q = q_terms(idx, g, t)
            z = idx[("z", g, t)]
            slacked(cid("Operational", "qmin", g, t), {**q, z: -gen.qmin}, ">=",
                    RhsPolynomial.const(0.0), t)
            slacked(cid("Operational", "qmax", g, t), {**q, z: -gen.qmax}, "<=",
                    RhsPolynomial.const(0.0), t)
    if binary_ub_rows:
        for t in range(T):
            for g in range(G):
                for k in "uvz":
                    s = new(f"s[ub_{k},{g},{t}]", t, 1.0)
                    eqs.append(Equality(cid("Operational", f"ub_{k}", g, t),
                                        {idx[(k, g, t)]: 1.0, s: 1.0},
                                        RhsPolynomial.const(1.0), rlt=ub_rlt))
    for t in range(T):
        h = {idx[("p", g, t)]: 1.0 for g in range(G)}
        h[idx[("loss", t)]] = -1.0
        demand = RhsPolynomial.affine(0.0, {("D", k, t): 1.0 for k in range(inst.n_buses)})
        eqs.append(Equality(cid("AggregateDemand", t), h, demand, rlt=True))
        if reactive_rlt:
            hq = {}
            for g in range(G):
                hq.update(q_terms(idx, g, t))
            dq = RhsPolynomial.affine(0.0, {("DI", k, t): 1.0 for k in range(inst.n_buses)})
            eqs.append(Equality(cid("AggregateDemand", t, "reactive"), hq, dq, rlt=True))
    c = np.zeros(len(names))
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            for k, cost in zip("puvz", (gen.cp, gen.cu, gen.cv, gen.cz)):
                c[idx[(k, g, t)]] = cost
    m = MbqpModel(names=names, c=c, equalities=eqs, binary=binary, U=U_map, params=params)
    return m, periods, idx


def build_acuc_sdp(inst, blocks="period", triangle=False, binary_ub_rows=False, ub_rlt=True,
                   reactive_rlt=False, uc_lifting=True) -> LiftedModel:
    """ACUC relaxation: UC lifting plus one ``W_t`` block per period.

    The aggregate real-demand equality appears only through its RLT square;
    the per-bus balance rows already imply it.  With ``uc_lifting=False``
    the RLT rows and binary diagonal links are dropped (diagnostic only).
    """
    m, periods, idx = build_acuc_mbqp(inst, binary_ub_rows, ub_rlt, reactive_rlt)
    lm = strengthen_bounds(build_dnn_relaxation(m, name="acuc-sdp"), m)
    lm.constraints = [c for c in lm.constraints
                      if not (c.cid.kind == "AggregateDemand")]
    if not uc_lifting:
        lm.constraints = [c for c in lm.constraints
                          if c.cid.kind not in ("RltOf", "BinaryDiagLink")]
    if triangle:
        _triangle_ac(inst, lm, idx)
    if blocks != "full":
        lm = apply_block_structure(lm, period_blocks(periods, inst.periods, blocks))
    for t in range(inst.periods):
        build_ac_constraints(
            inst, t, lm,
            gen_p=lambda g, t=t: {idx[("p", g, t)]: 1.0},
            gen_q=lambda g, t=t: q_terms(idx, g, t),
            ploss=idx[("loss", t)],
        )
    lm.meta.update(instance=inst.name, blocks=blocks, index=idx, periods_of_var=periods)
    return lm


def _triangle_ac(inst, lm, idx, cap=5000):
    G, T = inst.n_gens, inst.periods
    n_rows = T * 4 * (G * (G - 1) * (G - 2) // 6)
    if n_rows > cap:
        raise TriangleBlowup(f"{n_rows} triangle rows exceed the cap of {cap}")
    for t in range(T):
        for trio in itertools.combinations(range(G), 3):
            z = {g: idx[("z", g, t)] for g in trio}
            cl = lambda a, b: (min(z[a], z[b]), max(z[a], z[b]))  # noqa: E731
            for r, c3 in enumerate(trio):
                a, b = (g for g in trio if g != c3)
                lm.add_constraint(cid("Triangle", *trio, t, f"edge{r + 1}"),
                                  {cl(a, b): 1.0, z[c3]: 1.0, cl(a, c3): -1.0, cl(b, c3): -1.0},
                                  ">=", 0.0)
            g1, g2, g3 = trio
            lm.add_constraint(cid("Triangle", *trio, t, "total"),
                              {cl(g1, g2): 1.0, cl(g1, g3): 1.0, cl(g2, g3): 1.0,
                               z[g1]: -1.0, z[g2]: -1.0, z[g3]: -1.0}, ">=", -1.0)


def build_relaxed_binary(inst) -> LiftedModel:
    """Baseline: same AC rows, binaries continuous in [0, 1], no UC lifting."""
    _require_ac(inst)
    lm = LiftedModel(name="acuc-relaxed-binary")
    G, T = inst.n_gens, inst.periods
    idx = {}
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            idx[("p", g, t)] = lm.add_var(f"p[{gen.id},{t}]", 0.0, INF)
            for k in "uvz":
                idx[(k, g, t)] = lm.add_var(f"{k}[{gen.id},{t}]", 0.0, 1.0)
            idx[("q", g, t)] = lm.add_var(f"q[{gen.id},{t}]", -INF, INF)
        idx[("loss", t)] = lm.add_var(f"ploss[{t}]", -INF, INF)
    lm.binary = {idx[(k, g, t)] for t in range(T) for g in range(G) for k in "uvz"}
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            for k, cost in zip("puvz", (gen.cp, gen.cu, gen.cv, gen.cz)):
                if cost:
                    lm.objective[idx[(k, g, t)]] = float(cost)
    lm.params = ac_params(inst)
    for g, gen in enumerate(inst.generators):
        for row in generator_rows(gen, g, T, lambda k, t, g=g: idx[("puvz"[k], g, t)]):
            lm.add_constraint(row.cid, row.coefs, row.sense, row.rhs)
        for t in range(T):
            q, z = idx[("q", g, t)], idx[("z", g, t)]
            lm.add_constraint(cid("Operational", "qmin", g, t), {q: 1.0, z: -gen.qmin}, ">=", 0.0)
            lm.add_constraint(cid("Operational", "qmax", g, t), {q: 1.0, z: -gen.qmax}, "<=", 0.0)
    for t in range(T):
        build_ac_constraints(inst, t, lm,
                             gen_p=lambda g, t=t: {idx[("p", g, t)]: 1.0},
                             gen_q=lambda g, t=t: {idx[("q", g, t)]: 1.0},
                             ploss=idx[("loss", t)])
    lm.meta.update(instance=inst.name, index=idx)
    return lm


# -- feasible dispatch files ---------------------------------------------------

def check_reactive_rows(inst, d: Dispatch, tol=1e-6):
    if d.q is None:
        raise InfeasibleDispatch("reactive", "dispatch has no reactive output")
    for g, gen in enumerate(inst.generators):
        for t in range(inst.periods):
            q, z = d.q[g, t], d.z[g, t]
            if q < gen.qmin * z - tol:
                raise InfeasibleDispatch(str(cid("Operational", "qmin", g, t)), f"q={q:.9g}")
            if q > gen.qmax * z + tol:
                raise InfeasibleDispatch(str(cid("Operational", "qmax", g, t)), f"q={q:.9g}")


def dispatch_from_dict(inst, doc, ac=None):
    ac = inst.ac_capable if ac is None else ac
    G, T = inst.n_gens, inst.periods
    arr = {k: np.zeros((G, T)) for k in "puvzq"}
    for g, gen in enumerate(inst.generators):
        per = doc.get(str(gen.id), doc.get(gen.id))
        if per is None:
            raise MissingField(f"dispatch lacks generator {gen.id}")
        for t in range(T):
            rec = per.get(str(t), per.get(t))
            if rec is None:
                raise MissingField(f"dispatch lacks period {t} for generator {gen.id}")
            for k in "puvz" + ("q" if ac else ""):
                if k not in rec:
                    raise MissingField(f"dispatch[{gen.id}][{t}] lacks {k!r}")
                arr[k][g, t] = float(rec[k])
    return Dispatch(arr["p"], arr["u"], arr["v"], arr["z"], arr["q"] if ac else None,
                    source=str(doc.get("source", "")))


def dispatch_to_dict(inst, d: Dispatch) -> dict:
    out = {"source": d.source}
    for g, gen in enumerate(inst.generators):
        out[str(gen.id)] = {
            str(t): {k: float(getattr(d, k)[g, t]) for k in "puvz"}
            | ({"q": float(d.q[g, t])} if d.q is not None else {})
            for t in range(inst.periods)
        }
    return out


def validate_dispatch(inst, d: Dispatch, ac=None, tol=1e-6):
    check_generator_rows(inst, d, tol)
    if inst.ac_capable if ac is None else ac:
        check_reactive_rows(inst, d, tol)


def ingest_feasible_dispatch(path, inst, ac=None):
    """Read, validate and cost a dispatch file; returns ``(dispatch, z_feas)``."""
    doc = json.loads(Path(path).read_text())
    d = dispatch_from_dict(inst, doc, ac)
    validate_dispatch(inst, d, ac)
    return d, d.cost(inst)
