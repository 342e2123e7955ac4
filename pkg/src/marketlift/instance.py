"""Power-system instances: parsing, validation, load scaling and shift factors.

Instances are read from a JSON document with the layout::

    {
      "meta": {"name": str, "periods": int, "ac_capable": bool,
               "slack_bus": id | null, "index_base": 0 | 1,
               "base_mva": float, "load_multiplier": float},
      "buses": [{"id": int, "slack": bool?, "vmin": float?, "vmax": float?}],
      "lines": [{"from": id, "to": id, "b": float, "g": float?, "b_ac": float?,
                 "flow_min": float | null, "flow_max": float | null,
                 "s_max": float?}],
      "generators": [{"id": str, "bus": id, "cp", "cu", "cv", "cz",
                      "pmin", "pmax", "qmin"?, "qmax"?, "ru", "rd",
                      "min_up", "min_down", "initial_on"?, "initial_power"?}],
      "demand": {"real": [[...per period...] per bus],
                 "reactive": [[...]]?}
    }

``flow_min``/``flow_max`` may be ``null`` for an unmonitored line (no flow
rows are generated for it).  ``vmin``/``vmax``, ``qmin``/``qmax`` and
``demand.reactive`` are required when ``ac_capable`` is true.  Quantities
stay in the file's units (MW, MVAr, per-unit admittance); ``base_mva``
(default 100) only converts per-unit AC branch flows to MW.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

from .errors import (
    DisconnectedNetwork,
    InvariantViolation,
    MissingField,
    MultipleSlackBuses,
    NonPositiveMultiplier,
    SingularReducedMatrix,
)


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False
    vmin: float | None = None
    vmax: float | None = None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    b: float
    g: float = 0.0
    flow_min: float | None = None
    flow_max: float | None = None
    s_max: float | None = None
    b_ac: float | None = None  # AC series susceptance; defaults to ``b``

    @property
    def susceptance_ac(self):
        return self.b if self.b_ac is None else self.b_ac

    @property
    def monitored(self):
        return self.flow_min is not None or self.flow_max is not None


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    cp: float
    cu: float
    cv: float
    cz: float
    pmin: float
    pmax: float
    ru: float
    rd: float
    min_up: int
    min_down: int
    initial_on: bool = False
    initial_power: float = 0.0
    qmin: float | None = None
    qmax: float | None = None


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PowerSystemInstance:
    name: str
    periods: int
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    base_demand: np.ndarray
    base_demand_reactive: np.ndarray | None = None
    ac_capable: bool = False
    index_base: int = 0
    base_mva: float = 100.0
    load_multiplier: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # demand actually cleared = file demand scaled by the cumulative multiplier
    @property
    def demand(self) -> np.ndarray:
        if "demand" not in self._cache:
            self._cache["demand"] = _frozen(self.base_demand * self.load_multiplier)
        return self._cache["demand"]

    @property
    def demand_reactive(self) -> np.ndarray | None:
        if self.base_demand_reactive is None:
            return None
        if "demand_reactive" not in self._cache:
            self._cache["demand_reactive"] = _frozen(
                self.base_demand_reactive * self.load_multiplier
            )
        return self._cache["demand_reactive"]

    @property
    def n_buses(self):
        return len(self.buses)

    @property
    def n_gens(self):
        return len(self.generators)

    @property
    def slack(self) -> int:
        """Position (0-based) of the slack bus."""
        return next(i for i, b in enumerate(self.buses) if b.is_slack)

    def bus_pos(self, bus_id) -> int:
        return int(bus_id) - self.index_base

    def gen_bus_pos(self, g) -> int:
        return self.bus_pos(self.generators[g].bus)

    def gens_at(self, k):
        return [g for g in range(self.n_gens) if self.gen_bus_pos(g) == k]

    def __eq__(self, other):
        if not isinstance(other, PowerSystemInstance):
            return NotImplemented
        return to_dict(self) == to_dict(other)

    def __hash__(self):
        return id(self)


# -- parsing -----------------------------------------------------------------

def _req(d, key, where):
    if key not in d:
        raise MissingField(f"{where}.{key}")
    return d[key]


def _num(d, key, where, default=None, required=True):
    if key not in d or d[key] is None:
        if required and default is None:
            raise MissingField(f"{where}.{key}")
        return default
    v = float(d[key])
    if not math.isfinite(v):
        raise InvariantViolation(f"{where}.{key}", "must be finite")
    return v


def from_dict(doc: dict) -> PowerSystemInstance:
    """Build and validate an instance from its JSON document."""
    meta = _req(doc, "meta", "instance")
    name = str(meta.get("name", "unnamed"))
    periods = int(_req(meta, "periods", "meta"))
    if periods < 1:
        raise InvariantViolation("meta.periods", "must be >= 1")
    ac = bool(_req(meta, "ac_capable", "meta"))
    raw_buses = _req(doc, "buses", "instance")
    if not raw_buses:
        raise InvariantViolation("buses", "at least one bus required")
    ids = [int(_req(b, "id", f"buses[{i}]")) for i, b in enumerate(raw_buses)]
    base = int(meta.get("index_base", min(ids)))
    if base not in (0, 1):
        raise InvariantViolation("meta.index_base", "must be 0 or 1")
    if sorted(ids) != list(range(base, base + len(ids))):
        raise InvariantViolation("buses.id", f"ids must be contiguous starting at {base}")

    flagged = {i for i, b in zip(ids, raw_buses) if b.get("slack", False)}
    if meta.get("slack_bus") is not None:
        flagged.add(int(meta["slack_bus"]))
    if len(flagged) > 1:
        raise MultipleSlackBuses(f"slack buses {sorted(flagged)}")
    slack_id = flagged.pop() if flagged else min(ids)
    if slack_id not in ids:
        raise InvariantViolation("meta.slack_bus", f"unknown bus {slack_id}")

    buses = []
    for i, b in sorted(zip(ids, raw_buses)):
        where = f"buses[{i}]"
        vmin = _num(b, "vmin", where, required=ac)
        vmax = _num(b, "vmax", where, required=ac)
        if vmin is not None and vmax is not None and not 0 < vmin <= vmax:
            raise InvariantViolation(f"{where}.vmin", "0 < vmin <= vmax")
        buses.append(Bus(i, i == slack_id, vmin, vmax))

    idset = set(ids)
    lines = []
    for n, ln in enumerate(_req(doc, "lines", "instance")):
        where = f"lines[{n}]"
        f, t = int(_req(ln, "from", where)), int(_req(ln, "to", where))
        if f not in idset or t not in idset:
            raise InvariantViolation(f"{where}.from/to", "unknown bus")
        if f == t:
            raise InvariantViolation(f"{where}.to", "from != to")
        b = _num(ln, "b", where)
        if b == 0:
            raise InvariantViolation(f"{where}.b", "susceptance must be nonzero")
        g = _num(ln, "g", where, default=0.0, required=False)
        if "flow_min" not in ln or "flow_max" not in ln:
            raise MissingField(f"{where}.flow_min/flow_max")
        fmin = _num(ln, "flow_min", where, required=False)
        fmax = _num(ln, "flow_max", where, required=False)
        if (fmin is not None and fmin > 0) or (fmax is not None and fmax < 0):
            raise InvariantViolation(f"{where}.flow_min", "flow_min <= 0 <= flow_max")
        smax = _num(ln, "s_max", where, required=False)
        if smax is not None and smax <= 0:
            raise InvariantViolation(f"{where}.s_max", "thermal limit must be positive")
        b_ac = _num(ln, "b_ac", where, required=False)
        lines.append(Line(f, t, b, g, fmin, fmax, smax, b_ac))

    gens = []
    seen = set()
    for n, gd in enumerate(_req(doc, "generators", "instance")):
        where = f"generators[{n}]"
        gid = str(gd.get("id", n))
        if gid in seen:
            raise InvariantViolation(f"{where}.id", "duplicate generator id")
        seen.add(gid)
        bus = int(_req(gd, "bus", where))
        if bus not in idset:
            raise InvariantViolation(f"{where}.bus", "unknown bus")
        vals = {k: _num(gd, k, where) for k in ("cp", "cu", "cv", "cz", "pmin", "pmax", "ru", "rd")}
        if not 0 <= vals["pmin"] <= vals["pmax"]:
            raise InvariantViolation(f"{where}.pmin", "0 <= pmin <= pmax")
        if vals["ru"] < 0 or vals["rd"] < 0:
            raise InvariantViolation(f"{where}.ru", "ramp limits must be >= 0")
        up, down = int(_req(gd, "min_up", where)), int(_req(gd, "min_down", where))
        if up < 1 or down < 1:
            raise InvariantViolation(f"{where}.min_up", "min up/down times must be >= 1")
        qmin = _num(gd, "qmin", where, required=ac)
        qmax = _num(gd, "qmax", where, required=ac)
        if qmin is not None and qmax is not None and qmin > qmax:
            raise InvariantViolation(f"{where}.qmin", "qmin <= qmax")
        on = bool(gd.get("initial_on", False))
        p0 = _num(gd, "initial_power", where, default=0.0, required=False)
        if on and not vals["pmin"] <= p0 <= vals["pmax"]:
            raise InvariantViolation(f"{where}.initial_power", "must lie in [pmin, pmax] when on")
        if not on and p0 != 0:
            raise InvariantViolation(f"{where}.initial_power", "must be 0 when initially off")
        gens.append(Generator(gid, bus, initial_on=on, initial_power=p0, qmin=qmin,
                              qmax=qmax, min_up=up, min_down=down, **vals))

    dem = _req(doc, "demand", "instance")
    real = _demand_matrix(_req(dem, "real", "demand"), len(ids), periods, "demand.real")
    reactive = None
    if dem.get("reactive") is not None:
        reactive = _demand_matrix(dem["reactive"], len(ids), periods, "demand.reactive")
    elif ac:
        raise MissingField("demand.reactive")

    mult = float(meta.get("load_multiplier", 1.0))
    if mult <= 0:
        raise NonPositiveMultiplier(mult)
    return PowerSystemInstance(
        name=name, periods=periods, buses=tuple(buses), lines=tuple(lines),
        generators=tuple(gens), base_demand=real, base_demand_reactive=reactive,
        ac_capable=ac, index_base=base, base_mva=float(meta.get("base_mva", 100.0)),
        load_multiplier=mult,
    )


def _demand_matrix(rows, n, periods, where):
    a = np.array(rows, dtype=float)
    if a.shape != (n, periods):
        raise InvariantViolation(where, f"expected shape ({n}, {periods}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvariantViolation(where, "demand must be finite")
    return _frozen(a)


def parse_instance(path) -> PowerSystemInstance:
    with open(path) as fh:
        return from_dict(json.load(fh))


def to_dict(inst: PowerSystemInstance) -> dict:
    slack = inst.buses[inst.slack].id
    buses = []
    for b in inst.buses:
        d = {"id": b.id, "slack": b.is_slack}
        if b.vmin is not None:
            d.update(vmin=b.vmin, vmax=b.vmax)
        buses.append(d)
    lines = []
    for ln in inst.lines:
        d = {"from": ln.from_bus, "to": ln.to_bus, "b": ln.b, "g": ln.g,
             "flow_min": ln.flow_min, "flow_max": ln.flow_max}
        if ln.s_max is not None:
            d["s_max"] = ln.s_max
        if ln.b_ac is not None:
            d["b_ac"] = ln.b_ac
        lines.append(d)
    gens = []
    for g in inst.generators:
        d = {"id": g.id, "bus": g.bus, "cp": g.cp, "cu": g.cu, "cv": g.cv, "cz": g.cz,
             "pmin": g.pmin, "pmax": g.pmax, "ru": g.ru, "rd": g.rd,
             "min_up": g.min_up, "min_down": g.min_down,
             "initial_on": g.initial_on, "initial_power": g.initial_power}
        if g.qmin is not None:
            d.update(qmin=g.qmin, qmax=g.qmax)
        gens.append(d)
    demand = {"real": inst.base_demand.tolist()}
    if inst.base_demand_reactive is not None:
        demand["reactive"] = inst.base_demand_reactive.tolist()
    return {
        "meta": {"name": inst.name, "periods": inst.periods, "ac_capable": inst.ac_capable,
                 "slack_bus": slack, "index_base": inst.index_base,
                 "base_mva": inst.base_mva, "load_multiplier": inst.load_multiplier},
        "buses": buses, "lines": lines, "generators": gens, "demand": demand,
    }


def serialize(inst: PowerSystemInstance, path=None) -> str:
    text = json.dumps(to_dict(inst), indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


# -- preprocessing -------------------------------------------------------------

def apply_load_multiplier(inst: PowerSystemInstance, m: float) -> PowerSystemInstance:
    """Scale every real and reactive demand by ``m``.

    The factor is folded into the instance's cumulative multiplier, so that
    scaling by ``a`` then ``b`` is bit-identical to scaling by ``a * b``.
    """
    if not m > 0:
        raise NonPositiveMultiplier(f"load multiplier must be positive, got {m}")
    return replace(inst, load_multiplier=inst.load_multiplier * m, _cache={})


def truncate_periods(inst: PowerSystemInstance, periods: int) -> PowerSystemInstance:
    """Keep the first ``periods`` periods of the demand series."""
    if not 1 <= periods <= inst.periods:
        raise InvariantViolation("periods", f"must lie in [1, {inst.periods}]")
    reactive = inst.base_demand_reactive
    return replace(
        inst, periods=periods,
        base_demand=_frozen(inst.base_demand[:, :periods]),
        base_demand_reactive=None if reactive is None else _frozen(reactive[:, :periods]),
        _cache={},
    )


def susceptance_laplacian(inst: PowerSystemInstance) -> np.ndarray:
    n = inst.n_buses
    L = np.zeros((n, n))
    for ln in inst.lines:
        i, j = inst.bus_pos(ln.from_bus), inst.bus_pos(ln.to_bus)
        L[i, i] += ln.b
        L[j, j] += ln.b
        L[i, j] -= ln.b
        L[j, i] -= ln.b
    return L


def compute_shift_factors(inst: PowerSystemInstance) -> np.ndarray:
    """Injection shift factors ``S[i, k]``: angle at bus i per MW injected at k.

    The injection is withdrawn at the slack bus, whose column is zero.  The
    flow on line (i, j) for a net injection vector P is then
    ``b_ij * sum_k (S[i, k] - S[j, k]) * P[k]``.
    """
    if "S" in inst._cache:
        return inst._cache["S"]
    n = inst.n_buses
    if n > 1:
        rows = [inst.bus_pos(l.from_bus) for l in inst.lines]
        cols = [inst.bus_pos(l.to_bus) for l in inst.lines]
        adj = scipy.sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = scipy.sparse.csgraph.connected_components(adj, directed=False)
        if ncomp > 1:
            raise DisconnectedNetwork(f"{ncomp} islands")
    keep = [k for k in range(n) if k != inst.slack]
    S = np.zeros((n, n))
    if keep:
        B = susceptance_laplacian(inst)[np.ix_(keep, keep)]
        try:
            lu = scipy.linalg.lu_factor(B, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularReducedMatrix(str(exc)) from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-12 * max(1.0, np.abs(B).max()):
            raise SingularReducedMatrix("reduced susceptance matrix is singular")
        S[np.ix_(keep, keep)] = scipy.linalg.lu_solve(lu, np.eye(len(keep)))
    S.setflags(write=False)
    inst._cache["S"] = S
    return S


def line_flow_coefficients(inst: PowerSystemInstance) -> np.ndarray:
    """Matrix F (lines x buses) with F[l, k] = b_l (S[i_l, k] - S[j_l, k])."""
    S = compute_shift_factors(inst)
    F = np.zeros((len(inst.lines), inst.n_buses))
    for l, ln in enumerate(inst.lines):
        i, j = inst.bus_pos(ln.from_bus), inst.bus_pos(ln.to_bus)
        F[l] = ln.b * (S[i] - S[j])
    return F
