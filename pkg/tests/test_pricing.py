import csv
import io
import json

import numpy as np
import pytest

from marketlift.dcuc import (Dispatch, build_dcuc_lp, build_dcuc_milp, build_dcuc_sdp,
                             build_fixed_binary_lp, dispatch_from_result)
from marketlift.errors import IncompletePrices, InfeasibleDispatch, MissingDuals
from marketlift.pricing import (PriceVector, best_response, dcuc_closed_form, fixed_binary_prices,
                                lp_prices, sdp_prices_dcuc, settle)
from marketlift.solvers import SolveResult, Status, solve

from oracles import brute_force_best_response
from toys import gen, instance, line, one_gen, random_dc


def clear(inst, scheme):
    milp = solve(build_dcuc_milp(inst))
    if scheme == "fixed-binary":
        lm = build_fixed_binary_lp(inst, milp)
        res = solve(lm)
        return milp, lm, res, fixed_binary_prices(res, inst, lm)
    if scheme == "lp":
        lm = build_dcuc_lp(inst)
        res = solve(lm)
        return milp, lm, res, lp_prices(res, inst, lm)
    lm = build_dcuc_sdp(inst)
    res = solve(lm)
    return milp, lm, res, sdp_prices_dcuc(res, lm, inst)


def test_single_unit_price_is_marginal_cost():
    for scheme in ("fixed-binary", "sdp"):
        _, _, _, pv = clear(one_gen(), scheme)
        assert pv.at(0, 0) == pytest.approx(20.0, abs=1e-3), scheme
    # the LP commits z = D / pmax, so no-load cost per MW enters the price
    _, _, _, pv = clear(one_gen(), "lp")
    assert pv.at(0, 0) == pytest.approx(20.0 + 100.0 / 50.0)


def test_uncongested_prices_are_uniform():
    inst = instance(3, [line(1, 2), line(2, 3)], [gen("a", 1, cp=10), gen("b", 3, cp=30)],
                    [[0.0], [30.0], [40.0]])
    _, _, _, pv = clear(inst, "fixed-binary")
    assert np.allclose(pv.real[:, 0], pv.real[0, 0])


def test_congestion_separates_prices():
    inst = instance(2, [line(1, 2, fmin=-15, fmax=15)], [gen("a", 1, cp=10), gen("b", 2, cp=40)],
                    [[0.0], [40.0]])
    _, _, _, pv = clear(inst, "fixed-binary")
    assert pv.at(0, 0) == pytest.approx(10.0)
    assert pv.at(1, 0) == pytest.approx(40.0)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("scheme", ["fixed-binary", "lp", "sdp"])
def test_closed_form_agrees_with_generic_gradient(seed, scheme):
    inst = random_dc(np.random.default_rng(seed), max_periods=2)
    milp = solve(build_dcuc_milp(inst))
    if not milp.optimal:
        pytest.skip("infeasible toy")
    _, lm, res, pv = clear(inst, scheme)
    assert pv.closed_form_residual <= 1e-6
    assert np.max(np.abs(dcuc_closed_form(res, lm, inst) - pv.real)) <= 1e-6


def test_pricing_needs_duals():
    inst = one_gen()
    lm = build_dcuc_lp(inst)
    with pytest.raises(MissingDuals):
        lp_prices(SolveResult(Status.NUMERICAL_TROUBLE, float("nan")), inst, lm)


@pytest.mark.parametrize("seed", range(12))
def test_best_response_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 6))
    pmax = float(rng.uniform(20, 80))
    on = bool(rng.random() < 0.5)
    pmin = float(rng.uniform(0, 0.5) * pmax)
    g = gen("g", 1, cp=float(rng.uniform(10, 30)), cu=float(rng.uniform(0, 300)),
            cv=float(rng.uniform(0, 100)), cz=float(rng.uniform(0, 200)), pmin=pmin, pmax=pmax,
            ru=float(rng.uniform(0.2, 1) * pmax), rd=float(rng.uniform(0.2, 1) * pmax),
            min_up=int(rng.integers(1, 4)), min_down=int(rng.integers(1, 4)), initial_on=on,
            initial_power=pmin if on else 0.0)
    inst = instance(1, [], [g], [[0.0] * T])
    gen_ = inst.generators[0]
    price = rng.uniform(0, 50, T)
    br = best_response(gen_, price, T)
    assert br.profit == pytest.approx(brute_force_best_response(gen_, price, T), abs=1e-6)


def test_best_response_all_off_and_indifference():
    g = one_gen().generators[0]
    assert best_response(g, [5.0], 1).profit == pytest.approx(0.0)
    br = best_response(g, [5.0], 1)
    assert br.z[0] == 0
    # at 22 $/MWh, 50 MW earns 100 which exactly covers the 100 no-load cost
    assert best_response(g, [22.0], 1).profit == pytest.approx(0.0, abs=1e-9)


def test_settlement_fields_and_exports():
    inst = one_gen()
    milp, lm, res, pv = clear(inst, "fixed-binary")
    rep = settle(inst, dispatch_from_result(inst, milp), pv, res.objective)
    g = rep.generators[0]
    # price 20 does not cover the no-load cost of 100
    assert g.realized_profit == pytest.approx(-100.0)
    assert g.best_profit == pytest.approx(0.0)
    assert g.uplift == pytest.approx(100.0)
    assert rep.price_adder == pytest.approx(100.0 / 30.0)
    assert rep.load_payment == pytest.approx([600.0])
    assert json.loads(rep.to_json())["total_uplift"] == pytest.approx(100.0)
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][0] == "row" and rows[-1][0] == "system"


def test_settlement_rejects_bad_inputs():
    inst = one_gen()
    milp, lm, res, pv = clear(inst, "fixed-binary")
    d = dispatch_from_result(inst, milp)
    with pytest.raises(IncompletePrices):
        settle(inst, d, PriceVector(np.array([[np.nan]])), 0.0)
    with pytest.raises(IncompletePrices):
        settle(inst, d, PriceVector(np.zeros((2, 1))), 0.0)
    bad = Dispatch(np.array([[60.0]]), d.u, d.v, d.z)
    with pytest.raises(InfeasibleDispatch):
        settle(inst, bad, pv, 0.0)


def uplift_toys(n=20, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        inst = random_dc(rng)
        if solve(build_dcuc_milp(inst)).optimal:
            out.append(inst)
    return out


def uplift_bound(inst):
    milp = solve(build_dcuc_milp(inst))
    lm = build_dcuc_lp(inst)
    res = solve(lm)
    rep = settle(inst, dispatch_from_result(inst, milp), lp_prices(res, inst, lm), res.objective)
    return rep


@pytest.mark.parametrize("k", range(20))
def test_lp_prices_bound_total_uplift(k):
    rep = uplift_bound(uplift_toys()[k])
    assert rep.total_uplift <= rep.bound_gap + 1e-6
    assert rep.bound_satisfied
    assert all(g.uplift >= -1e-6 for g in rep.generators)


def test_lp_tight_single_bus_has_no_uplift():
    inst = instance(1, [], [gen("a", 1, cp=10, pmax=50), gen("b", 1, cp=30, pmax=50)],
                    [[70.0, 20.0]])
    rep = uplift_bound(inst)
    assert rep.bound_gap == pytest.approx(0.0, abs=1e-7)
    assert rep.total_uplift == pytest.approx(0.0, abs=1e-6)


def test_uplift_restores_cost_recovery():
    inst = one_gen()
    milp, lm, res, pv = clear(inst, "fixed-binary")
    rep = settle(inst, dispatch_from_result(inst, milp), pv, res.objective)
    for g in rep.generators:
        assert g.realized_profit + g.uplift >= g.best_profit - 1e-9
        assert g.realized_profit + g.uplift >= -1e-9


def test_price_vector_round_trip():
    pv = PriceVector(np.arange(4.0).reshape(2, 2), np.ones((2, 2)), "sdp", 1e-9, True)
    back = PriceVector.from_dict(json.loads(json.dumps(pv.to_dict())))
    assert np.array_equal(back.real, pv.real) and np.array_equal(back.reactive, pv.reactive)
    assert back.nonlinear_rhs and back.scheme == "sdp"
