"""Mixed-binary quadratic programs and their doubly-nonnegative (DNN) lifting.

An :class:`MbqpModel` is ``min x'Qx + c'x`` subject to ``a_j'x = b_j(u)``,
``x >= 0`` and ``x_i`` binary for ``i`` in ``binary``.  The lifting replaces
``xx'`` by a matrix variable ``X`` and adds:

* the original equalities,
* their squares ``a_j' X a_j = b_j(u)^2`` (tagged ``RltOf(parent)``),
* ``x_i = X_ii`` for binaries (``BinaryDiagLink``),
* ``[[1, x'], [x, X]]`` PSD, with every entry nonnegative.

:func:`strengthen_bounds` then adds ``X_ii <= U_i^2`` for continuous entries.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyBlock, InvariantViolation, MissingDuals, UnboundedContinuousVariable
from .model import BorderedBlock, LiftedModel, RhsPolynomial, cell, cid, rlt_of


@dataclass
class Equality:
    cid: object
    coefs: dict  # var index -> coefficient
    rhs: RhsPolynomial
    rlt: bool = True


@dataclass
class MbqpModel:
    names: list
    c: np.ndarray
    equalities: list
    binary: set
    U: dict
    Q: object = None  # dense array, sparse matrix, or None for a linear objective
    params: dict = field(default_factory=dict)
    objective_constant: float = 0.0

    @property
    def n(self):
        return len(self.names)

    def q_entries(self):
        """Upper-triangle entries (i, j, Q_ij) with i <= j."""
        if self.Q is None:
            return []
        Q = sp.coo_matrix(self.Q)
        return [(int(i), int(j), float(v)) for i, j, v in zip(Q.row, Q.col, Q.data) if i <= j and v]

    def validate(self):
        if len(self.c) != self.n:
            raise InvariantViolation("c", "length must equal the number of variables")
        if self.Q is not None:
            Q = sp.csr_matrix(self.Q)
            if Q.shape != (self.n, self.n):
                raise InvariantViolation("Q", "shape must be n x n")
            if Q.nnz:
                if abs(Q - Q.T).max() > 1e-12:
                    raise InvariantViolation("Q", "must be symmetric")
                idx = np.unique(np.concatenate([Q.nonzero()[0], Q.nonzero()[1]]))
                sub = Q[idx][:, idx].toarray()
                if np.linalg.eigvalsh(sub).min() < -1e-9:
                    raise InvariantViolation("Q", "must be positive semidefinite")
        for i in self.binary:
            if i in self.U:
                raise InvariantViolation("U", f"binary index {i} must not carry a bound")
        for i in range(self.n):
            if i in self.binary:
                continue
            u = self.U.get(i)
            if u is None or not math.isfinite(u) or u < 0:
                raise UnboundedContinuousVariable(
                    f"continuous variable {self.names[i]} has no finite upper bound"
                )

    def upper(self, i):
        return 1.0 if i in self.binary else self.U[i]


def rlt_coefs(coefs: dict) -> dict:
    """Coefficients of ``(a'x)^2`` with ``xx'`` replaced by upper-triangle cells."""
    items = sorted(coefs.items())
    out = {}
    for a, (i, ai) in enumerate(items):
        out[(i, i)] = out.get((i, i), 0.0) + ai * ai
        for j, aj in items[a + 1:]:
            key = cell(i, j)
            out[key] = out.get(key, 0.0) + 2.0 * ai * aj
    return out


def build_dnn_relaxation(m: MbqpModel, name="dnn") -> LiftedModel:
    m.validate()
    lm = LiftedModel(name=name)
    for nm in m.names:
        lm.add_var(nm, lb=0.0, lifted=True)
    lm.binary = set(m.binary)
    lm.bounds_U = {i: m.upper(i) for i in range(m.n)}
    lm.params = dict(m.params)
    lm.objective_constant = m.objective_constant
    obj = {i: float(v) for i, v in enumerate(m.c) if v}
    for i, j, q in m.q_entries():
        obj[(i, j)] = obj.get((i, j), 0.0) + (q if i == j else 2.0 * q)
    lm.objective = obj
    for eq in m.equalities:
        lm.add_constraint(eq.cid, eq.coefs, "==", eq.rhs)
    for eq in m.equalities:
        if eq.rlt:
            lm.add_constraint(rlt_of(eq.cid), rlt_coefs(eq.coefs), "==", eq.rhs.square())
    for i in sorted(m.binary):
        lm.add_constraint(cid("BinaryDiagLink", i), {i: 1.0, (i, i): -1.0}, "==", 0.0)
    lm.psd_blocks = [BorderedBlock(tuple(range(m.n)), name=str(cid("PsdBlock", 0)))]
    return lm


def strengthen_bounds(lm: LiftedModel, m: MbqpModel) -> LiftedModel:
    out = _shallow(lm)
    for i in range(m.n):
        if i not in m.binary:
            out.add_constraint(cid("DiagBound", i), {(i, i): 1.0}, "<=", m.U[i] ** 2)
    return out


def _shallow(lm: LiftedModel) -> LiftedModel:
    out = copy.copy(lm)
    out.constraints = list(lm.constraints)
    out.psd_blocks = list(lm.psd_blocks)
    out.cell_caps = dict(lm.cell_caps)
    out.demoted_cells = list(lm.demoted_cells)
    out.meta = {k: v for k, v in lm.meta.items() if not k.startswith("_")}
    out.soc = list(lm.soc)
    out.objective = dict(lm.objective)
    out.params = dict(lm.params)
    return out


def apply_block_structure(lm: LiftedModel, blocks, drop_orphan_rlt=False) -> LiftedModel:
    """Replace the bordered PSD block(s) by one block per index set.

    Referenced cells that no block covers stay as nonnegative variables
    capped at ``U_i * U_j``; they are listed in ``demoted_cells``.  With
    ``drop_orphan_rlt`` the RLT rows whose cells are not all covered by a
    single block are removed instead.
    """
    blocks = [tuple(sorted(set(b))) for b in blocks]
    if not blocks or any(len(b) == 0 for b in blocks):
        raise EmptyBlock("every block must contain at least one index")
    out = _shallow(lm)
    out.psd_blocks = [b for b in lm.psd_blocks if not isinstance(b, BorderedBlock)]
    out.psd_blocks += [BorderedBlock(b, name=str(cid("PsdBlock", k))) for k, b in enumerate(blocks)]
    covered = out.block_cells()
    if drop_orphan_rlt:
        members = [set(b) for b in blocks]

        def fits(con):
            support = {i for k in con.coefs if isinstance(k, tuple) for i in k}
            return any(support <= s for s in members)

        out.constraints = [
            c for c in out.constraints if c.cid.kind != "RltOf" or fits(c)
        ]
    demoted = sorted(out.referenced_cells() - covered)
    for (i, j) in demoted:
        out.cell_caps[(i, j)] = lm.bounds_U[i] * lm.bounds_U[j]
    out.demoted_cells = demoted
    out.meta["coverage"] = {"blocks": len(blocks), "covered_cells": len(covered),
                            "demoted_cells": len(demoted)}
    return out


def envelope_gradient(result, lm: LiftedModel, params=None) -> dict:
    """Sum over rows of dual times d(rhs)/d(param), evaluated at ``params``."""
    if not result.optimal or not result.duals:
        raise MissingDuals(f"no dual solution (status {result.status.value})")
    params = lm.params if params is None else params
    grad = {}
    for con in lm.constraints:
        if con.rhs.is_constant:
            continue
        if con.cid not in result.duals:
            raise MissingDuals(f"no dual recorded for {con.cid}")
        y = result.duals[con.cid]
        for p, d in con.rhs.gradient(params).items():
            grad[p] = grad.get(p, 0.0) + y * d
    return grad


def dump_model(lm: LiftedModel) -> str:
    """One row per line: ``id | coefficients | sense | rhs``."""
    lines = [f"# {lm.name} vars={lm.n_vars} rows={len(lm.constraints)} "
             f"blocks={len(lm.psd_blocks)}"]
    for con in lm.constraints:
        terms = " ".join(
            f"{v:+.12g}*{lm.key_name(k)}"
            for k, v in sorted(con.coefs.items(), key=lambda kv: _sort_key(kv[0]))
        )
        lines.append(f"{con.cid} | {terms} | {con.sense} | {con.rhs}")
    for s in lm.soc:
        lines.append(f"{s.cid} | ||{', '.join(lm.var_names[v] for v in s.vars)}|| | <= | {s.radius:.12g}")
    for (i, j), cap in sorted(lm.cell_caps.items()):
        lines.append(f"CellCap({i},{j}) | +1*{lm.key_name((i, j))} | <= | {cap:.12g}")
    for blk in lm.psd_blocks:
        lines.append(f"{blk.name} | dim={blk.dim}")
    return "\n".join(lines) + "\n"


def _sort_key(k):
    return (1, k) if isinstance(k, tuple) else (0, (k, k))
