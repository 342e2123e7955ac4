import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from marketlift.errors import EmptyBlock, InvariantViolation, UnboundedContinuousVariable
from marketlift.lifting import (Equality, MbqpModel, apply_block_structure, build_dnn_relaxation,
                                dump_model, envelope_gradient, rlt_coefs, strengthen_bounds)
from marketlift.model import RhsPolynomial, cid, rlt_of
from marketlift.solvers import SolverConfig, solve


coef = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.integers(0, 7), coef, min_size=1, max_size=5),
       st.lists(coef, min_size=8, max_size=8))
def test_rlt_coefs_square_identity(coefs, x):
    lhs = sum(c * x[i] * x[j] for (i, j), c in rlt_coefs(coefs).items())
    rhs = sum(a * x[i] for i, a in coefs.items()) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def random_mbqp(rng):
    nb, nc = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    n = nb + nc
    Q = np.zeros((n, n))
    A = rng.normal(size=(nb, nb))
    Q[:nb, :nb] = 0.3 * A @ A.T  # PSD, on binaries only
    U = {nb + k: float(rng.uniform(1, 3)) for k in range(nc)}
    x0 = np.concatenate([rng.integers(0, 2, nb), [rng.uniform(0, U[i]) for i in sorted(U)]])
    eqs = []
    for r in range(int(rng.integers(1, 3))):
        a = {i: float(v) for i, v in enumerate(rng.uniform(0.2, 2.0, n))}
        eqs.append(Equality(cid("e", r), a, RhsPolynomial.const(float(sum(a[i] * x0[i]
                                                                          for i in a)))))
    return MbqpModel(names=[f"x{i}" for i in range(n)], c=rng.normal(size=n), equalities=eqs,
                     binary=set(range(nb)), U=U, Q=Q)


def enumerate_mbqp(m):
    nb = len(m.binary)
    cont = sorted(m.U)
    best = np.inf
    for bits in itertools.product((0, 1), repeat=nb):
        xb = np.array(bits, float)
        Aeq = [[eq.coefs.get(i, 0.0) for i in cont] for eq in m.equalities]
        beq = [eq.rhs.value({}) - sum(eq.coefs.get(i, 0.0) * xb[i] for i in range(nb))
               for eq in m.equalities]
        r = linprog(m.c[cont], A_eq=Aeq, b_eq=beq, bounds=[(0, m.U[i]) for i in cont],
                    method="highs")
        if r.status == 0:
            best = min(best, r.fun + m.c[:nb] @ xb + xb @ m.Q[:nb, :nb] @ xb)
    return best


@pytest.mark.parametrize("seed", range(15))
def test_dnn_lower_bounds_enumeration(seed):
    m = random_mbqp(np.random.default_rng(seed))
    exact = enumerate_mbqp(m)
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    res = solve(lm)
    assert res.optimal
    assert res.objective <= exact + 1e-6 * (1 + abs(exact))


def test_dnn_rows_and_tags():
    m = random_mbqp(np.random.default_rng(0))
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    kinds = {c.cid.kind for c in lm.constraints}
    assert {"e", "RltOf", "BinaryDiagLink", "DiagBound"} <= kinds
    assert lm.constraint(rlt_of(cid("e", 0))).sense == "=="
    text = dump_model(lm)
    assert "RltOf(e(0))" in text and "PsdBlock(0)" in text


@pytest.mark.parametrize("change, exc", [
    (lambda m: setattr(m, "Q", np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]])), InvariantViolation),
    (lambda m: setattr(m, "Q", -np.eye(3)), InvariantViolation),
    (lambda m: m.U.update({0: 1.0}), InvariantViolation),
    (lambda m: m.U.pop(2), UnboundedContinuousVariable),
    (lambda m: m.U.update({2: float("inf")}), UnboundedContinuousVariable),
    (lambda m: setattr(m, "c", np.zeros(2)), InvariantViolation),
])
def test_validate_rejects(change, exc):
    m = MbqpModel(names=["a", "b", "c"], c=np.ones(3), equalities=[], binary={0, 1}, U={2: 1.0})
    change(m)
    with pytest.raises(exc):
        build_dnn_relaxation(m)


def test_block_demotion_caps_cells():
    m = MbqpModel(names=["a", "b", "c"], c=np.ones(3),
                  equalities=[Equality(cid("e"), {0: 1, 2: 1}, RhsPolynomial.const(1.0))],
                  binary={0}, U={1: 2.0, 2: 3.0})
    lm = apply_block_structure(build_dnn_relaxation(m), [[0, 1], [1]])
    assert (0, 2) in lm.demoted_cells and (2, 2) in lm.demoted_cells
    assert lm.cell_caps[(0, 2)] == 3.0 and lm.cell_caps[(2, 2)] == 9.0
    assert (0, 1) not in lm.demoted_cells
    with pytest.raises(EmptyBlock):
        apply_block_structure(lm, [[0], []])


def test_envelope_gradient_matches_finite_difference():
    m = MbqpModel(names=["x0", "x1", "x2"], c=np.array([1.0, 2.5, 2.0]),
                  equalities=[Equality(cid("e"), {0: 1, 1: 1, 2: 1},
                                       RhsPolynomial.affine(0.2, {("D",): 1}))],
                  binary={0, 1}, U={2: 2.0}, params={("D",): 1.1})
    lm = strengthen_bounds(build_dnn_relaxation(m), m)
    cfg = SolverConfig.tight()
    res = solve(lm, cfg)
    g = envelope_gradient(res, lm)[("D",)]
    h = 1e-3
    vals = []
    for s in (1, -1):
        other = lm.copy()
        other.params[("D",)] += s * h
        vals.append(solve(other, cfg).objective)
    assert g == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-3)
