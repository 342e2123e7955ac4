import itertools

import numpy as np
import pytest

from marketlift.errors import BackendFailure
from marketlift.lifting import (Equality, MbqpModel, build_dnn_relaxation, envelope_gradient,
                                strengthen_bounds)
from marketlift.model import LiftedModel, RhsPolynomial, cid
from marketlift.solvers import SolverConfig, Status, solve, solve_conic, solve_milp


def knapsack(rng, n=5):
    w = rng.uniform(1, 10, n)
    val = rng.uniform(1, 10, n)
    lm = LiftedModel(name="knap")
    for i in range(n):
        lm.add_var(f"x{i}", 0, 1, integer=True)
    lm.objective = {i: -val[i] for i in range(n)}
    lm.add_constraint(cid("cap"), {i: w[i] for i in range(n)}, "<=", 0.5 * w.sum())
    return lm, w, val


@pytest.mark.parametrize("seed", range(10))
def test_milp_matches_enumeration(seed):
    lm, w, val = knapsack(np.random.default_rng(seed))
    best = min(-val @ np.array(x) for x in itertools.product((0, 1), repeat=len(w))
               if w @ np.array(x) <= 0.5 * w.sum())
    res = solve_milp(lm)
    assert res.optimal
    assert res.objective == pytest.approx(best, abs=1e-7)


def param_lp():
    """min 2a + 3b  s.t.  a + b == D,  a <= 4,  b >= 1."""
    lm = LiftedModel(name="lp")
    a = lm.add_var("a")
    b = lm.add_var("b")
    lm.objective = {a: 2.0, b: 3.0}
    lm.params = {("D",): 6.0, ("L",): 1.0}
    lm.add_constraint(cid("bal"), {a: 1, b: 1}, "==", RhsPolynomial.affine(0, {("D",): 1}))
    lm.add_constraint(cid("cap"), {a: 1}, "<=", 4.0)
    lm.add_constraint(cid("floor"), {b: 1}, ">=", RhsPolynomial.affine(0, {("L",): 1}))
    return lm


def fd(lm, p, h=1e-3, cfg=None):
    vals = []
    for s in (1, -1):
        m = lm.copy()
        m.params[p] += s * h
        vals.append(solve(m, cfg).objective)
    return (vals[0] - vals[1]) / (2 * h)


def test_lp_dual_signs():
    lm = param_lp()
    res = solve(lm)
    assert res.objective == pytest.approx(8 + 6)
    # raising demand buys more of b (3); raising a's cap saves 1; raising b's floor is free here
    assert res.duals[cid("bal")] == pytest.approx(3.0)
    assert res.duals[cid("cap")] == pytest.approx(-1.0)
    assert res.duals[cid("floor")] == pytest.approx(0.0, abs=1e-9)
    g = envelope_gradient(res, lm)
    assert g[("D",)] == pytest.approx(fd(lm, ("D",)), rel=1e-6)


def small_mbqp(rhs=1.5):
    # x0, x1 binary; x2 continuous <= 2;  x0 + x1 + x2 == D
    return MbqpModel(names=["x0", "x1", "x2"], c=np.array([1.0, 1.5, 2.0]),
                     equalities=[Equality(cid("e"), {0: 1, 1: 1, 2: 1},
                                          RhsPolynomial.affine(0, {("D",): 1}))],
                     binary={0, 1}, U={2: 2.0}, params={("D",): rhs})


# Between D=1 and D=2 the relaxation has no attained dual optimum (the dual
# norm grows like 1/tol), so the envelope check is made where it is attained.
@pytest.mark.parametrize("backend", ["clarabel", "scs"])
@pytest.mark.parametrize("D", [0.6, 2.4])
def test_conic_dual_sign_by_finite_difference(backend, D):
    m = small_mbqp(D)
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    cfg = SolverConfig(backend=backend, conic_feas_tol=1e-9, conic_rel_gap_tol=1e-9)
    res = solve_conic(lm, cfg)
    assert res.optimal and res.backend == backend
    g = envelope_gradient(res, lm)[("D",)]
    assert g == pytest.approx(fd(lm, ("D",), h=1e-3, cfg=cfg), rel=1e-3, abs=1e-4)


def test_clarabel_and_scs_agree():
    m = small_mbqp(rhs=2.3)
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    a = solve_conic(lm, SolverConfig(backend="clarabel"))
    b = solve_conic(lm, SolverConfig(backend="scs", conic_feas_tol=1e-9, conic_rel_gap_tol=1e-9))
    assert a.optimal and b.optimal
    assert a.objective == pytest.approx(b.objective, rel=1e-5, abs=1e-5)
    assert a.gap <= 1e-6 and b.gap <= 1e-6


def test_infeasible_lp_reports_status():
    lm = param_lp()
    lm.add_constraint(cid("bad"), {0: 1}, ">=", 10.0)
    res = solve(lm)
    assert res.status == Status.INFEASIBLE and not res.optimal
    assert res.duals == {}


def test_infeasible_conic_reports_status():
    m = small_mbqp(rhs=10.0)  # capacity is 4
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    res = solve_conic(lm)
    assert res.status == Status.INFEASIBLE


def test_duplicate_row_ids_rejected():
    lm = param_lp()
    lm.add_constraint(cid("cap"), {0: 1}, "<=", 5.0)
    with pytest.raises(BackendFailure):
        solve(lm)


def test_bad_config():
    with pytest.raises(ValueError):
        SolverConfig(backend="mosek")
    with pytest.raises(ValueError):
        SolverConfig(conic_feas_tol=0)
    with pytest.raises(ValueError):
        SolverConfig.profile("loose")
