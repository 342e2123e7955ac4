"""Brute-force reference solutions written independently of the package builders."""

import itertools

import numpy as np
from scipy.optimize import linprog


def angle_flow_matrix(inst):
    """F[l, k]: flow on line l per MW injected at bus k and withdrawn at the slack."""
    n = inst.n_buses
    B = np.zeros((n, n))
    for ln in inst.lines:
        i, j = inst.bus_pos(ln.from_bus), inst.bus_pos(ln.to_bus)
        B[[i, j], [i, j]] += ln.b
        B[i, j] -= ln.b
        B[j, i] -= ln.b
    keep = [k for k in range(n) if k != inst.slack]
    F = np.zeros((len(inst.lines), n))
    for k in keep:
        e = np.zeros(n)
        e[k] = 1.0
        theta = np.zeros(n)
        theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], e[keep])
        for l, ln in enumerate(inst.lines):
            F[l, k] = ln.b * (theta[inst.bus_pos(ln.from_bus)] - theta[inst.bus_pos(ln.to_bus)])
    return F


def commitment_ok(gen, z):
    """Startup/shutdown from z and the literal min-up/min-down windows."""
    T = len(z)
    prev = np.concatenate([[1.0 if gen.initial_on else 0.0], z[:-1]])
    u = np.maximum(z - prev, 0)
    v = np.maximum(prev - z, 0)
    for t in range(T):
        if u[max(0, t - gen.min_up): t + 1].sum() > z[t]:
            return None
        if v[max(0, t - gen.min_down): t + 1].sum() > 1 - z[t]:
            return None
    return u, v


def dispatch_lp(inst, z, D=None, prices=None):
    """Cheapest production for a fixed commitment z (G x T), or None if infeasible."""
    G, T = inst.n_gens, inst.periods
    D = inst.demand if D is None else D
    F = angle_flow_matrix(inst)
    uv = [commitment_ok(g, z[i]) for i, g in enumerate(inst.generators)]
    if any(x is None for x in uv):
        return None
    n = G * T
    idx = lambda g, t: t * G + g  # noqa: E731
    c = np.zeros(n)
    fixed = 0.0
    A, b, Aeq, beq = [], [], [], []
    bounds = []
    for t in range(T):
        for g, gen in enumerate(inst.generators):
            c[idx(g, t)] = gen.cp
            u, v = uv[g]
            fixed += gen.cu * u[t] + gen.cv * v[t] + gen.cz * z[g, t]
            bounds.append(None)
            bounds[idx(g, t)] = (gen.pmin * z[g, t], gen.pmax * z[g, t])
    for t in range(T):
        row = np.zeros(n)
        for g in range(G):
            row[idx(g, t)] = 1
        Aeq.append(row)
        beq.append(D[:, t].sum())
        for l, ln in enumerate(inst.lines):
            if ln.flow_max is None:
                continue
            row = np.zeros(n)
            for g in range(G):
                row[idx(g, t)] = F[l, inst.gen_bus_pos(g)]
            base = F[l] @ D[:, t]
            A.append(row)
            b.append(ln.flow_max + base)
            A.append(-row)
            b.append(-(ln.flow_min + base))
        for g, gen in enumerate(inst.generators):
            u, v = uv[g]
            up, dn = np.zeros(n), np.zeros(n)
            up[idx(g, t)] = 1
            dn[idx(g, t)] = -1
            if t == 0:
                if not gen.initial_on:
                    continue
                A.append(up)
                b.append(gen.initial_power + gen.ru + gen.pmin * u[0])
                A.append(dn)
                b.append(-gen.initial_power + gen.rd * z[g, 0] + gen.pmin * v[0])
            else:
                up[idx(g, t - 1)] = -1
                dn[idx(g, t - 1)] = 1
                A.append(up)
                b.append(gen.ru * z[g, t - 1] + gen.pmin * u[t])
                A.append(dn)
                b.append(gen.rd * z[g, t] + gen.pmin * v[t])
    if prices is not None:
        c = c - np.array([prices[inst.gen_bus_pos(g), t] for t in range(T) for g in range(G)])
    r = linprog(c, A_ub=np.array(A) if A else None, b_ub=b if A else None, A_eq=np.array(Aeq),
                b_eq=beq, bounds=bounds, method="highs")
    if r.status != 0:
        return None
    return r.fun + fixed, r.x.reshape(T, G).T


def brute_force_uc(inst, D=None):
    """Optimal cost over every commitment pattern."""
    G, T = inst.n_gens, inst.periods
    best = (np.inf, None, None)
    for bits in itertools.product((0.0, 1.0), repeat=G * T):
        z = np.array(bits).reshape(G, T)
        out = dispatch_lp(inst, z, D)
        if out is not None and out[0] < best[0]:
            best = (out[0], z, out[1])
    return best


def brute_force_best_response(gen, price, horizon):
    """Max over commitments of the single-unit profit at the given price series."""
    best = -np.inf
    for bits in itertools.product((0.0, 1.0), repeat=horizon):
        z = np.array(bits)
        uv = commitment_ok(gen, z)
        if uv is None:
            continue
        u, v = uv
        # profit is separable in p given ramp rows; solve the tiny LP
        n = horizon
        c = -(np.asarray(price) - gen.cp)
        A, b = [], []
        for t in range(n):
            up, dn = np.zeros(n), np.zeros(n)
            up[t], dn[t] = 1, -1
            if t == 0:
                if not gen.initial_on:
                    continue
                A += [up, dn]
                b += [gen.initial_power + gen.ru + gen.pmin * u[0],
                      -gen.initial_power + gen.rd * z[0] + gen.pmin * v[0]]
            else:
                up[t - 1], dn[t - 1] = -1, 1
                A += [up, dn]
                b += [gen.ru * z[t - 1] + gen.pmin * u[t], gen.rd * z[t] + gen.pmin * v[t]]
        r = linprog(c, A_ub=np.array(A) if A else None, b_ub=b if A else None,
                    bounds=[(gen.pmin * z[t], gen.pmax * z[t]) for t in range(n)],
                    method="highs")
        if r.status != 0:
            continue
        profit = -r.fun - gen.cu * u.sum() - gen.cv * v.sum() - gen.cz * z.sum()
        best = max(best, profit)
    return best
