"""Build a unit-commitment instance JSON from a MATPOWER case and a UC sidecar.

Usage::

    python3 scripts/convert_matpower.py data/case14.m data/case14_uc_params.json \
        -o data/case14_uc.json

The case file supplies buses (Pd, Qd, Vmin, Vmax), branches (r, x) and
generators (Pmax, Qmin, Qmax) plus polynomial costs.  The sidecar supplies
everything a static OPF case lacks: the hourly load profile, which branches are
monitored, and per-unit commitment data (Pmin, fixed and start-up costs,
minimum up/down times, ramp fraction, initial state).

Conventions:

* DC susceptance ``b = 1/x``; AC series admittance ``g - j b`` with
  ``g = r/(r^2+x^2)`` and ``b = x/(r^2+x^2)``.  Line charging, shunts and
  transformer taps are dropped.
* The energy price is the quadratic cost linearized at mid-range,
  ``cp = c1 + c2 * Pmax / 2``.
* Demand at bus ``k`` in period ``t`` is ``Pd_k * profile[t]`` (same for Qd).
"""

from __future__ import annotations

import argparse
import json
import re
from pathlib import Path

import numpy as np


def read_matrix(text: str, name: str) -> np.ndarray:
    m = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S)
    if m is None:
        raise SystemExit(f"matrix mpc.{name} not found")
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(v) for v in line.split()])
    return np.array(rows)


def convert(case_text: str, side: dict) -> dict:
    base_mva = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", case_text).group(1))
    bus = read_matrix(case_text, "bus")
    gen = read_matrix(case_text, "gen")
    branch = read_matrix(case_text, "branch")
    cost = read_matrix(case_text, "gencost")
    T = int(side["periods"])
    profile = np.asarray(side["profile"], dtype=float)[:T]
    monitored = {(int(m["from"]), int(m["to"])): m for m in side.get("monitored", [])}

    buses = [{"id": int(r[0]), "slack": int(r[1]) == 3, "vmin": r[12], "vmax": r[11]}
             for r in bus]
    lines = []
    for r in branch:
        f, t, res, x = int(r[0]), int(r[1]), r[2], r[3]
        z2 = res * res + x * x
        entry = {"from": f, "to": t, "b": 1.0 / x, "g": res / z2, "b_ac": x / z2,
                 "flow_min": None, "flow_max": None}
        mon = monitored.get((f, t))
        if mon is not None:
            entry["flow_max"] = float(mon["flow_max"])
            entry["flow_min"] = -float(mon["flow_max"])
            entry["s_max"] = float(mon.get("s_max", mon["flow_max"]))
        lines.append(entry)

    gens = []
    for k, (g, c, uc) in enumerate(zip(gen, cost, side["generators"])):
        if int(uc["bus"]) != int(g[0]):
            raise SystemExit(f"sidecar generator {k} is not at bus {int(g[0])}")
        pmax = float(g[8])
        c2, c1 = c[4], c[5]
        ramp = float(uc["ramp_fraction"]) * pmax
        gens.append({
            "id": f"G{k + 1}", "bus": int(g[0]),
            "cp": round(c1 + c2 * pmax / 2.0, 6), "cu": uc["cu"], "cv": uc["cv"], "cz": uc["cz"],
            "pmin": uc["pmin"], "pmax": pmax, "qmin": float(g[4]), "qmax": float(g[3]),
            "ru": ramp, "rd": ramp, "min_up": uc["min_up"], "min_down": uc["min_down"],
            "initial_on": uc["initial_on"], "initial_power": uc["initial_power"],
        })

    real = [[round(float(r[2]) * p, 6) for p in profile] for r in bus]
    reactive = [[round(float(r[3]) * p, 6) for p in profile] for r in bus]
    return {
        "meta": {"name": side.get("name", "case"), "periods": T, "ac_capable": True,
                 "index_base": 1, "base_mva": base_mva, "load_multiplier": 1.0},
        "buses": buses, "lines": lines, "generators": gens,
        "demand": {"real": real, "reactive": reactive},
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("case")
    ap.add_argument("sidecar")
    ap.add_argument("-o", "--out", required=True)
    a = ap.parse_args(argv)
    doc = convert(Path(a.case).read_text(), json.loads(Path(a.sidecar).read_text()))
    Path(a.out).write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
