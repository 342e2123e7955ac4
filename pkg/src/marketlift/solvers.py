"""Backend adapters: HiGHS (via scipy) for MILP/LP, Clarabel or SCS for conic models.

Every dual returned here is the derivative of the optimal value with respect
to the constraint's right-hand side, whatever sign the backend uses.
Equality rows, ``<=`` rows and ``>=`` rows all follow that single rule.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BackendFailure, NumericalTrouble, TimeLimit
from .model import BorderedBlock, LiftedModel, MatrixBlock

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_TROUBLE = "NumericalTrouble"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class SolverConfig:
    milp_rel_gap: float = 1e-6
    conic_feas_tol: float = 1e-8
    conic_rel_gap_tol: float = 1e-8
    time_limit: float = 600.0
    threads: int = 1
    backend: str = "auto"  # auto | clarabel | scs
    max_iter: int = 400
    scs_max_iters: int = 200_000
    log_file: str | None = None
    # A reduced-accuracy backend status counts as Optimal only if the
    # recomputed gap and residuals are within this threshold.
    certify_tol: float = 1e-6
    # Clarabel KKT regularization; the library default (1e-8) stalls on the
    # degenerate lifted AC models.
    static_reg: float = 1e-7

    def __post_init__(self):
        for name in ("milp_rel_gap", "conic_feas_tol", "conic_rel_gap_tol", "time_limit",
                     "certify_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.backend not in ("auto", "clarabel", "scs"):
            raise ValueError(f"unknown conic backend {self.backend!r}")

    @classmethod
    def default(cls, **kw):
        backend = os.environ.get("MARKETLIFT_CONIC_BACKEND", "auto")
        kw.setdefault("backend", backend)
        return cls(**kw)

    @classmethod
    def tight(cls, **kw):
        kw.setdefault("conic_feas_tol", 1e-10)
        kw.setdefault("conic_rel_gap_tol", 1e-10)
        return cls.default(**kw)

    @classmethod
    def profile(cls, name, **kw):
        if name == "default":
            return cls.default(**kw)
        if name == "tight":
            return cls.tight(**kw)
        raise ValueError(f"unknown tolerance profile {name!r}")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class SolveResult:
    status: Status
    objective: float
    dual_objective: float = float("nan")
    x: np.ndarray | None = None
    cells: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    psd_duals: dict = field(default_factory=dict)
    gap: float = float("nan")
    tolerances: dict = field(default_factory=dict)
    backend: str = ""
    seconds: float = 0.0
    message: str = ""
    var_names: tuple = ()
    backend_status: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == Status.OPTIMAL

    @property
    def primal(self) -> dict:
        out = {n: float(v) for n, v in zip(self.var_names, self.x)} if self.x is not None else {}
        for (i, j), v in self.cells.items():
            out[f"X[{self.var_names[i]},{self.var_names[j]}]"] = v
        return out

    def value(self, key):
        if isinstance(key, tuple):
            return self.cells[key]
        return float(self.x[key])

    def require_optimal(self):
        if not self.optimal:
            raise NumericalTrouble(f"{self.backend} returned {self.status.value}: {self.message}")
        return self


# -- shared row assembly ---------------------------------------------------

def _objective_vector(model: LiftedModel, col_of, ncol):
    c = np.zeros(ncol)
    for k, v in model.objective.items():
        c[col_of(k)] += v
    return c


def _check_unique(model):
    seen = set()
    for con in model.constraints:
        if con.cid in seen:
            raise BackendFailure(f"duplicate constraint id {con.cid}")
        seen.add(con.cid)


# -- MILP / LP ---------------------------------------------------------------

def solve_milp(model: LiftedModel, config: SolverConfig | None = None) -> SolveResult:
    """Solve a scalar-only model; LPs (no integrality) return duals."""
    from scipy.optimize import Bounds, LinearConstraint, linprog, milp

    config = config or SolverConfig.default()
    if model.psd_blocks or model.soc or any(isinstance(k, tuple) for k in model.objective):
        raise BackendFailure("solve_milp accepts only scalar linear models")
    _check_unique(model)
    n = model.n_vars
    c = _objective_vector(model, lambda k: k, n)

    rows_eq, b_eq, ids_eq = [], [], []
    rows_ub, b_ub, ids_ub, sign_ub = [], [], [], []
    for con in model.constraints:
        if any(isinstance(k, tuple) for k in con.coefs):
            raise BackendFailure(f"row {con.cid} references lifted cells")
        rhs = model.rhs_value(con)
        if con.sense == "==":
            rows_eq.append(con.coefs)
            b_eq.append(rhs)
            ids_eq.append(con.cid)
        elif con.sense == "<=":
            rows_ub.append(con.coefs)
            b_ub.append(rhs)
            ids_ub.append(con.cid)
            sign_ub.append(1.0)
        else:
            rows_ub.append({k: -v for k, v in con.coefs.items()})
            b_ub.append(-rhs)
            ids_ub.append(con.cid)
            sign_ub.append(-1.0)

    def mat(rows):
        r, cidx, v = [], [], []
        for i, row in enumerate(rows):
            for k, val in row.items():
                r.append(i)
                cidx.append(k)
                v.append(val)
        return sp.csr_matrix((v, (r, cidx)), shape=(len(rows), n))

    A_eq, A_ub = mat(rows_eq), mat(rows_ub)
    lb = np.array(model.lb, dtype=float)
    ub = np.array(model.ub, dtype=float)
    t0 = time.perf_counter()
    tol = {"milp_rel_gap": config.milp_rel_gap, "time_limit": config.time_limit}

    if model.integer:
        integrality = np.zeros(n)
        integrality[sorted(model.integer)] = 1
        cons = []
        if rows_eq:
            cons.append(LinearConstraint(A_eq, np.array(b_eq), np.array(b_eq)))
        if rows_ub:
            cons.append(LinearConstraint(A_ub, -np.inf, np.array(b_ub)))
        try:
            res = milp(
                c,
                constraints=cons,
                integrality=integrality,
                bounds=Bounds(lb, ub),
                options={"mip_rel_gap": config.milp_rel_gap, "time_limit": config.time_limit,
                         "disp": False},
            )
        except Exception as exc:  # scipy wraps HiGHS errors in ValueError
            raise BackendFailure(str(exc)) from exc
        secs = time.perf_counter() - t0
        status = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status)
        if res.status == 1:
            if res.x is None:
                raise TimeLimit(res.message)
            status = Status.UNKNOWN
        if status is None:
            raise BackendFailure(res.message)
        x = None if res.x is None else np.asarray(res.x)
        obj = float(res.fun) + model.objective_constant if x is not None else float("nan")
        if status == Status.OPTIMAL:
            # Branch-and-bound points satisfy rows only to HiGHS's MIP feasibility
            # tolerance; re-solving the LP with the integers fixed gives a vertex.
            ints = sorted(model.integer)
            lbf, ubf = lb.copy(), ub.copy()
            lbf[ints] = ubf[ints] = np.round(x[ints])
            pol = linprog(c, A_ub=A_ub if rows_ub else None, b_ub=np.array(b_ub) if rows_ub else None,
                          A_eq=A_eq if rows_eq else None, b_eq=np.array(b_eq) if rows_eq else None,
                          bounds=np.column_stack([lbf, ubf]), method="highs",
                          options={"time_limit": config.time_limit})
            if pol.status == 0:
                x = np.asarray(pol.x)
                obj = float(pol.fun) + model.objective_constant
        gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
        return SolveResult(status, obj, x=x, gap=gap, tolerances=tol, backend="highs-milp",
                           seconds=secs, message=res.message, var_names=tuple(model.var_names))

    try:
        res = linprog(
            c,
            A_ub=A_ub if rows_ub else None,
            b_ub=np.array(b_ub) if rows_ub else None,
            A_eq=A_eq if rows_eq else None,
            b_eq=np.array(b_eq) if rows_eq else None,
            bounds=np.column_stack([lb, ub]),
            method="highs",
            options={"time_limit": config.time_limit},
        )
    except Exception as exc:
        raise BackendFailure(str(exc)) from exc
    secs = time.perf_counter() - t0
    status = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED,
              4: Status.NUMERICAL_TROUBLE}.get(res.status)
    if res.status == 1:
        raise TimeLimit(res.message)
    if status is None:
        raise BackendFailure(res.message)
    if status != Status.OPTIMAL:
        return SolveResult(status, float("nan"), tolerances=tol, backend="highs-lp",
                           seconds=secs, message=res.message, var_names=tuple(model.var_names))
    duals = {}
    # HiGHS marginals are already d(objective)/d(rhs)
    for cid_, m in zip(ids_eq, res.eqlin.marginals):
        duals[cid_] = float(m)
    for cid_, m, s in zip(ids_ub, res.ineqlin.marginals, sign_ub):
        duals[cid_] = float(m) * s
    obj = float(res.fun) + model.objective_constant
    return SolveResult(Status.OPTIMAL, obj, dual_objective=obj, x=np.asarray(res.x), duals=duals,
                       gap=0.0, tolerances=tol, backend="highs-lp", seconds=secs,
                       message=res.message, var_names=tuple(model.var_names))


# -- conic -------------------------------------------------------------------

def _psd_pairs(dim, lower):
    """(row, col) pairs of a symmetric matrix in the backend's svec order."""
    if lower:  # SCS: lower triangle, column-wise
        return [(i, j) for j in range(dim) for i in range(j, dim)]
    return [(i, j) for j in range(dim) for i in range(j + 1)]  # Clarabel: upper, column-wise


@dataclass
class _Compiled:
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    n_zero: int
    n_nonneg: int
    soc_dims: list
    psd_dims: list
    row_ids: list  # per constraint row: (cid, sign) or None
    cells: list
    n_scalar: int
    psd_rows: list  # (block name, dim, row offset, pairs)
    colscale: np.ndarray  # model value = colscale * solver value


def compile_conic(model: LiftedModel, lower_svec: bool) -> _Compiled:
    if model.integer:
        raise BackendFailure("conic backend cannot handle integrality marks")
    _check_unique(model)
    n = model.n_vars
    cells = model.all_cells()
    cell_col = {cl: n + k for k, cl in enumerate(cells)}
    ncol = n + len(cells)
    # Lifted x_i = U_i * y_i and X_ij = U_i U_j * Y_ij: a congruence of the
    # bordered blocks, so PSD and sign constraints keep their form.
    scale = np.ones(n)
    for i in range(n):
        u = model.bounds_U.get(i) if model.lifted[i] else None
        if u is not None and 0.0 < u < np.inf:
            scale[i] = u

    def col_of(key):
        return cell_col[key] if isinstance(key, tuple) else key

    def scale_of(key):
        return scale[key[0]] * scale[key[1]] if isinstance(key, tuple) else scale[key]

    rows, cols, vals, b = [], [], [], []
    row_ids = []

    def add(coefs, rhs, ident, raw=False):
        r = len(b)
        for k, v in coefs.items():
            rows.append(r)
            cols.append(col_of(k))
            vals.append(v if raw else v * scale_of(k))
        b.append(rhs)
        row_ids.append(ident)

    # zero cone
    for con in model.constraints:
        if con.sense == "==":
            add(con.coefs, model.rhs_value(con), (con.cid, -1.0))
    n_zero = len(b)
    # nonnegative cone: a x + s = b with s >= 0
    for con in model.constraints:
        if con.sense == "<=":
            add(con.coefs, model.rhs_value(con), (con.cid, -1.0))
        elif con.sense == ">=":
            add({k: -v for k, v in con.coefs.items()}, -model.rhs_value(con), (con.cid, 1.0))
    for i in range(n):
        if model.lb[i] > -np.inf:
            add({i: -1.0}, -model.lb[i], None)
        if model.ub[i] < np.inf:
            add({i: 1.0}, model.ub[i], None)
    for cl in cells:
        add({cl: -1.0}, 0.0, None)
        cap = model.cell_caps.get(cl)
        if cap is not None and cap < np.inf:
            add({cl: 1.0}, cap, None)
    n_nonneg = len(b) - n_zero
    # second-order cones
    soc_dims = []
    for s in model.soc:
        add({}, s.radius, None)
        for v in s.vars:
            add({v: -1.0}, 0.0, None)
        soc_dims.append(1 + len(s.vars))
    # PSD cones
    psd_dims, psd_rows = [], []
    for bi, blk in enumerate(model.psd_blocks):
        dim = blk.dim
        pairs = _psd_pairs(dim, lower_svec)
        off = len(b)
        for (i, j) in pairs:
            f = 1.0 if i == j else SQRT2
            key = blk.entry(i, j)
            if key is None:
                add({}, f, None)
            elif isinstance(blk, BorderedBlock):
                add({key: -f}, 0.0, None, raw=True)
            else:
                add({key: -f / scale_of(key)}, 0.0, None)
        psd_dims.append(dim)
        psd_rows.append((blk.name or f"block{bi}", dim, off, pairs))

    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(b), ncol))
    A.sum_duplicates()
    c = np.zeros(ncol)
    for k, v in model.objective.items():
        c[col_of(k)] += v * scale_of(k)
    colscale = np.concatenate([scale, [scale[i] * scale[j] for i, j in cells]])
    return _Compiled(A, np.array(b, dtype=float), c, n_zero, n_nonneg, soc_dims, psd_dims,
                     row_ids, cells, n, psd_rows, colscale)


def _unsvec(vec, dim, pairs):
    M = np.zeros((dim, dim))
    for v, (i, j) in zip(vec, pairs):
        val = v if i == j else v / SQRT2
        M[i, j] = M[j, i] = val
    return M


def _pick_backend(model, config):
    if config.backend != "auto":
        return config.backend
    # Clarabel's dense PSD Hessian blocks exhaust memory on large liftings
    sizes = [blk.dim * (blk.dim + 1) // 2 for blk in model.psd_blocks]
    if not sizes:
        return "clarabel"
    fits = max(sizes) <= 4000 and sum(n * n for n in sizes) <= 150_000_000
    return "clarabel" if fits else "scs"


def solve_conic(model: LiftedModel, config: SolverConfig | None = None) -> SolveResult:
    config = config or SolverConfig.default()
    for blk in model.psd_blocks:
        if isinstance(blk, BorderedBlock):
            if list(blk.indices) != sorted(set(blk.indices)):
                raise BackendFailure(f"PSD block {blk.name} indices must be sorted and unique")
        elif isinstance(blk, MatrixBlock):
            d = blk.dim
            if any(blk.entry(i, j) != blk.entry(j, i) for i in range(d) for j in range(d)):
                raise BackendFailure(f"PSD block {blk.name} is not symmetric")
    backend = _pick_backend(model, config)
    t0 = time.perf_counter()
    comp = compile_conic(model, lower_svec=(backend == "scs"))
    run = _run_scs if backend == "scs" else _run_clarabel
    status, x, y, slack, raw = run(comp, config)
    secs = time.perf_counter() - t0
    tol = {"conic_feas_tol": config.conic_feas_tol, "conic_rel_gap_tol": config.conic_rel_gap_tol,
           "certify_tol": config.certify_tol, "time_limit": config.time_limit}
    names = tuple(model.var_names)
    if x is None:
        return SolveResult(status, float("nan"), tolerances=tol, backend=backend, seconds=secs,
                           message=raw, var_names=names, backend_status=raw)
    pobj = float(comp.c @ x) + model.objective_constant
    dobj = float(-comp.b @ y) + model.objective_constant
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    res = {
        "primal": float(np.linalg.norm(comp.A @ x + slack - comp.b, np.inf)
                        / (1.0 + np.linalg.norm(comp.b, np.inf))),
        "dual": float(np.linalg.norm(comp.A.T @ y + comp.c, np.inf)
                      / (1.0 + np.linalg.norm(comp.c, np.inf))),
        "gap": gap,
    }
    msg = raw
    if status == Status.UNKNOWN and max(res.values()) <= config.certify_tol:
        status = Status.OPTIMAL
        msg = f"{raw}; certificate accepted at {config.certify_tol:g}"
    x = np.asarray(x) * comp.colscale
    xs = np.asarray(x[: comp.n_scalar])
    cells = {cl: float(x[comp.n_scalar + k]) for k, cl in enumerate(comp.cells)}
    duals, psd_duals = {}, {}
    if status == Status.OPTIMAL:
        for r, ident in enumerate(comp.row_ids):
            if ident is not None:
                cid_, sgn = ident
                duals[cid_] = sgn * float(y[r])
        for name, dim, off, pairs in comp.psd_rows:
            psd_duals[name] = _unsvec(y[off: off + len(pairs)], dim, pairs)
    return SolveResult(status, pobj, dual_objective=dobj, x=xs, cells=cells, duals=duals,
                       psd_duals=psd_duals, gap=gap, tolerances=tol, backend=backend,
                       seconds=secs, message=msg, var_names=names, backend_status=raw,
                       residuals=res)


def _run_clarabel(comp: _Compiled, config: SolverConfig):
    import clarabel

    cones = []
    if comp.n_zero:
        cones.append(clarabel.ZeroConeT(comp.n_zero))
    if comp.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(comp.n_nonneg))
    for d in comp.soc_dims:
        cones.append(clarabel.SecondOrderConeT(d))
    for d in comp.psd_dims:
        cones.append(clarabel.PSDTriangleConeT(d))
    s = clarabel.DefaultSettings()
    s.verbose = bool(config.log_file)
    s.tol_feas = config.conic_feas_tol
    s.tol_gap_abs = config.conic_rel_gap_tol
    s.tol_gap_rel = config.conic_rel_gap_tol
    s.tol_ktratio = min(1e-6, config.conic_rel_gap_tol)
    s.time_limit = config.time_limit
    s.max_iter = config.max_iter
    s.max_threads = config.threads
    s.static_regularization_constant = config.static_reg
    P = sp.csc_matrix((comp.A.shape[1], comp.A.shape[1]))
    try:
        solver = clarabel.DefaultSolver(P, comp.c, comp.A, comp.b, cones, s)
        sol = solver.solve()
    except Exception as exc:
        raise BackendFailure(f"clarabel: {exc}") from exc
    name = str(sol.status).split(".")[-1]
    status = {
        "Solved": Status.OPTIMAL,
        "PrimalInfeasible": Status.INFEASIBLE,
        "DualInfeasible": Status.UNBOUNDED,
        "NumericalError": Status.NUMERICAL_TROUBLE,
        "InsufficientProgress": Status.NUMERICAL_TROUBLE,
    }.get(name, Status.UNKNOWN)
    if name == "MaxTime":
        raise TimeLimit(f"clarabel hit the {config.time_limit}s limit")
    if status in (Status.INFEASIBLE, Status.UNBOUNDED):
        return status, None, None, None, name
    return status, np.asarray(sol.x), np.asarray(sol.z), np.asarray(sol.s), name


def _run_scs(comp: _Compiled, config: SolverConfig):
    import scs

    data = {"A": comp.A, "b": comp.b, "c": comp.c}
    cone = {"z": comp.n_zero, "l": comp.n_nonneg}
    if comp.soc_dims:
        cone["q"] = list(comp.soc_dims)
    if comp.psd_dims:
        cone["s"] = list(comp.psd_dims)
    kw = dict(
        eps_abs=config.conic_feas_tol,
        eps_rel=config.conic_rel_gap_tol,
        max_iters=config.scs_max_iters,
        time_limit_secs=config.time_limit,
        verbose=bool(config.log_file),
    )
    if config.log_file:
        kw["log_csv_filename"] = config.log_file
    try:
        sol = scs.SCS(data, cone, **kw).solve()
    except Exception as exc:
        raise BackendFailure(f"scs: {exc}") from exc
    info = sol["info"]
    name = info["status"]
    status = {
        "solved": Status.OPTIMAL,
        "infeasible": Status.INFEASIBLE,
        "unbounded": Status.UNBOUNDED,
        "solved_inaccurate": Status.UNKNOWN,
        "infeasible_inaccurate": Status.UNKNOWN,
        "unbounded_inaccurate": Status.UNKNOWN,
    }.get(name, Status.NUMERICAL_TROUBLE)
    if status in (Status.INFEASIBLE, Status.UNBOUNDED):
        return status, None, None, None, name
    if status != Status.OPTIMAL and info.get("solve_time", 0) / 1000.0 >= config.time_limit * 0.99:
        raise TimeLimit(f"scs hit the {config.time_limit}s limit")
    return status, np.asarray(sol["x"]), np.asarray(sol["y"]), np.asarray(sol["s"]), name


def solve(model: LiftedModel, config: SolverConfig | None = None) -> SolveResult:
    """Dispatch to the MILP/LP path or the conic path depending on the model."""
    if model.integer or not (model.has_lifting or model.soc):
        return solve_milp(model, config)
    return solve_conic(model, config)
