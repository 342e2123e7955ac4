"""Conic model container shared by the MILP, LP and SDP builders.

A :class:`LiftedModel` holds scalar variables (the ``x`` vector and any
auxiliary unlifted variables), lifted cells ``X[i, j]`` addressed by the
pair ``(i, j)`` with ``i <= j``, linear rows whose right-hand sides are
:class:`RhsPolynomial` objects of the demand parameters, second-order-cone
rows and PSD blocks.  Lifted cells are never enumerated up front: the set of
cells a model uses is the union of those referenced by rows, objective, caps
and PSD blocks, and is materialized only when the model is compiled for a
solver.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import NamedTuple


class ConstraintId(NamedTuple):
    kind: str
    index: tuple = ()

    def __str__(self):
        inner = ",".join(str(i) for i in self.index)
        return f"{self.kind}({inner})"


def cid(kind, *index) -> ConstraintId:
    return ConstraintId(kind, tuple(index))


def rlt_of(parent: ConstraintId) -> ConstraintId:
    return ConstraintId("RltOf", (parent,))


@dataclass(frozen=True)
class Affine:
    """``constant + sum(coef * param)``."""

    constant: float = 0.0
    terms: tuple = ()  # ((param, coef), ...)

    @classmethod
    def of(cls, constant=0.0, terms=None):
        items = tuple(sorted((p, float(c)) for p, c in (terms or {}).items() if c != 0.0))
        return cls(float(constant), items)

    def value(self, params) -> float:
        return self.constant + sum(c * params[p] for p, c in self.terms)

    def __str__(self):
        parts = [f"{self.constant:.12g}"]
        parts += [f"{c:+.12g}*{_pname(p)}" for p, c in self.terms]
        return " ".join(parts)


def _pname(p):
    return f"{p[0]}[{','.join(str(i) for i in p[1:])}]"


@dataclass(frozen=True)
class RhsPolynomial:
    """Right-hand side ``b(u)`` or ``b(u)**2`` with ``b`` affine in the parameters."""

    base: Affine = Affine()
    squared: bool = False

    @classmethod
    def const(cls, c):
        return cls(Affine.of(c))

    @classmethod
    def affine(cls, constant=0.0, terms=None):
        return cls(Affine.of(constant, terms))

    @property
    def is_constant(self):
        return not self.base.terms

    def square(self) -> "RhsPolynomial":
        if self.squared:
            raise ValueError("right-hand side already squared")
        return RhsPolynomial(self.base, True)

    def value(self, params) -> float:
        v = self.base.value(params)
        return v * v if self.squared else v

    def gradient(self, params) -> dict:
        if not self.base.terms:
            return {}
        scale = 2.0 * self.base.value(params) if self.squared else 1.0
        return {p: scale * c for p, c in self.base.terms}

    def __str__(self):
        return f"({self.base})^2" if self.squared else str(self.base)


@dataclass
class Constraint:
    cid: ConstraintId
    coefs: dict  # key -> coef; key is int (scalar) or (i, j) (lifted cell)
    sense: str  # "==", "<=", ">="
    rhs: RhsPolynomial


@dataclass
class SocConstraint:
    """``||(x[a], x[b], ...)||_2 <= radius``."""

    cid: ConstraintId
    vars: tuple
    radius: float


@dataclass(frozen=True)
class BorderedBlock:
    """PSD block ``[[1, x_S^T], [x_S, X_SS]]`` over the sorted index set S."""

    indices: tuple
    name: str = ""

    def entry(self, a, b):
        """Key of entry (a, b); None for the constant corner."""
        if a == 0 and b == 0:
            return None
        if a == 0:
            return self.indices[b - 1]
        if b == 0:
            return self.indices[a - 1]
        i, j = self.indices[a - 1], self.indices[b - 1]
        return (i, j) if i <= j else (j, i)

    @property
    def dim(self):
        return len(self.indices) + 1


@dataclass(frozen=True)
class MatrixBlock:
    """PSD block whose entries are scalar variables, ``entries[a][b]``."""

    entries: tuple
    name: str = ""

    def entry(self, a, b):
        return self.entries[a][b]

    @property
    def dim(self):
        return len(self.entries)


def cell(i, j):
    return (i, j) if i <= j else (j, i)


@dataclass
class LiftedModel:
    name: str = ""
    var_names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    lifted: list = field(default_factory=list)  # scalar var belongs to the lifted x vector
    integer: set = field(default_factory=set)  # integrality marks (MILP only)
    binary: set = field(default_factory=set)  # binary x indices of the underlying MBQP
    bounds_U: dict = field(default_factory=dict)  # finite upper bounds U_i on x (1 for binaries)
    constraints: list = field(default_factory=list)
    soc: list = field(default_factory=list)
    psd_blocks: list = field(default_factory=list)
    cell_caps: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    objective_constant: float = 0.0
    params: dict = field(default_factory=dict)
    demoted_cells: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # -- construction -------------------------------------------------------
    def add_var(self, name, lb=0.0, ub=float("inf"), lifted=False, integer=False):
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.lifted.append(bool(lifted))
        if integer:
            self.integer.add(idx)
        return idx

    def add_constraint(self, cid_, coefs, sense, rhs):
        if sense not in ("==", "<=", ">="):
            raise ValueError(f"bad sense {sense!r}")
        if not isinstance(rhs, RhsPolynomial):
            rhs = RhsPolynomial.const(rhs)
        con = Constraint(cid_, {k: float(v) for k, v in coefs.items() if v != 0.0}, sense, rhs)
        self.constraints.append(con)
        return con

    def copy(self) -> "LiftedModel":
        return copy.deepcopy(self)

    @property
    def n_vars(self):
        return len(self.var_names)

    def index_of(self, name):
        if "_name_index" not in self.meta or len(self.meta["_name_index"]) != self.n_vars:
            self.meta["_name_index"] = {n: i for i, n in enumerate(self.var_names)}
        return self.meta["_name_index"][name]

    def constraint(self, cid_) -> Constraint:
        for c in self.constraints:
            if c.cid == cid_:
                return c
        raise KeyError(cid_)

    def rhs_value(self, con: Constraint) -> float:
        return con.rhs.value(self.params)

    # -- structure queries ----------------------------------------------------
    def referenced_cells(self) -> set:
        cells = set()
        for c in self.constraints:
            cells.update(k for k in c.coefs if isinstance(k, tuple))
        cells.update(k for k in self.objective if isinstance(k, tuple))
        cells.update(self.cell_caps)
        return cells

    def block_cells(self) -> set:
        cells = set()
        for blk in self.psd_blocks:
            if isinstance(blk, BorderedBlock):
                idx = blk.indices
                for a in range(len(idx)):
                    for b in range(a, len(idx)):
                        cells.add(cell(idx[a], idx[b]))
        return cells

    def all_cells(self) -> list:
        """Lifted cells used anywhere, in lexicographic order."""
        return sorted(self.referenced_cells() | self.block_cells())

    @property
    def has_lifting(self):
        return bool(self.psd_blocks) or any(
            isinstance(k, tuple) for c in self.constraints for k in c.coefs
        )

    def key_name(self, key):
        if isinstance(key, tuple):
            return f"X[{self.var_names[key[0]]},{self.var_names[key[1]]}]"
        return self.var_names[key]
