import json
import subprocess
import sys
from pathlib import Path

import pytest

from marketlift.instance import from_dict

ROOT = Path(__file__).resolve().parent.parent


def test_converter_reproduces_shipped_instance(tmp_path):
    out = tmp_path / "case14.json"
    subprocess.run([sys.executable, str(ROOT / "scripts" / "convert_matpower.py"),
                    str(ROOT / "data" / "case14.m"), str(ROOT / "data" / "case14_uc_params.json"),
                    "-o", str(out)], check=True)
    fresh = json.loads(out.read_text())
    assert fresh == json.loads((ROOT / "data" / "case14_uc.json").read_text())
    inst = from_dict(fresh)
    l12 = inst.lines[0]
    r, x = 0.01938, 0.05917  # branch 1-2 of the MATPOWER case
    assert (l12.from_bus, l12.to_bus) == (1, 2)
    assert l12.b == pytest.approx(1 / x)
    assert l12.b_ac == pytest.approx(x / (r * r + x * x))
    assert l12.g == pytest.approx(r / (r * r + x * x))
    # peak hour carries the full MATPOWER load (259 MW)
    assert inst.demand.sum(axis=0).max() == pytest.approx(259.0)
    assert inst.buses[inst.slack].id == 1
