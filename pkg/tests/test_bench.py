import numpy as np
import pytest

from marketlift.bench import ResultsArchive, RunConfig, emit_tables, run_sweep
from marketlift.errors import ConfigError, EmptyArchive
from marketlift.instance import serialize

from actoys import two_bus_ac
from toys import gen, instance, line


@pytest.fixture
def toy_file(tmp_path):
    inst = instance(2, [line(1, 2, fmin=-20, fmax=20)],
                    [gen("a", 1, cp=10, cz=80, pmin=10), gen("b", 2, cp=30, cz=10)],
                    [[0.0, 0.0], [35.0, 45.0]])
    path = tmp_path / "toy.json"
    serialize(inst, path)
    return path


def sweep(toy_file, out, **kw):
    cfg = RunConfig(instance=str(toy_file), schemes=("sdp", "fixed-binary", "lp-baseline"),
                    multipliers=(0.5, 1.0), out=str(out), **kw)
    return run_sweep(cfg)


def test_sweep_cells_and_tables(toy_file, tmp_path):
    arch = sweep(toy_file, tmp_path / "a")
    assert arch.multipliers() == [0.5, 1.0]
    assert arch.schemes() == ["milp", "sdp", "fixed-binary", "lp-baseline"]
    for m in arch.multipliers():
        milp = arch.cell(m, "milp")
        assert milp["status"] == "Optimal"
        lp, sdp = arch.cell(m, "lp-baseline"), arch.cell(m, "sdp")
        assert lp["gap"] >= sdp["gap"] - 1e-6
        assert arch.cell(m, "fixed-binary")["gap"] == pytest.approx(0.0, abs=1e-7)
        assert "total_loc" in arch.cell(m, "fixed-binary")
    paths = emit_tables(arch, "markdown", tmp_path / "t")
    names = sorted(p.name for p in paths)
    assert names == ["gaps.md", "loc.md", "objectives.md"]
    text = (tmp_path / "t" / "gaps.md").read_text()
    assert "| multiplier | sdp_gap_pct | lp-baseline_gap_pct |" in text
    assert "sdp_lower" in (tmp_path / "t" / "loc.md").read_text()
    again = ResultsArchive.load(tmp_path / "a" / "archive.json")
    assert again.stripped() == arch.stripped()


def test_sweep_is_deterministic(toy_file, tmp_path):
    a = sweep(toy_file, tmp_path / "a")
    b = sweep(toy_file, tmp_path / "b", workers=2)
    assert a.stripped() == b.stripped()


def test_failed_cells_are_recorded(toy_file, tmp_path):
    # demand far beyond capacity: every cell must be present and marked
    arch = run_sweep(RunConfig(instance=str(toy_file), schemes=("sdp", "lp-baseline"),
                               multipliers=(10.0,)))
    assert {c["status"] for c in arch.cells} == {"NoSolution"}
    rows = emit_tables(arch, "csv", tmp_path)[0].read_text().splitlines()
    assert rows[1] == "10,-,-"


def test_acuc_sweep(tmp_path):
    path = tmp_path / "ac.json"
    serialize(two_bus_ac(T=1), path)
    arch = run_sweep(RunConfig(instance=str(path), model="acuc", schemes=("sdp", "relaxed-binary"),
                               multipliers=(1.0,)))
    sdp, rb = arch.cell(1.0, "sdp"), arch.cell(1.0, "relaxed-binary")
    assert sdp["status"] == rb["status"] == "Optimal"
    assert sdp["objective"] >= rb["objective"] - 1e-6
    assert sdp["closed_form_residual"] <= 1e-6


@pytest.mark.parametrize("kw", [
    dict(model="ac"), dict(schemes=("relaxed-binary",)), dict(schemes=()),
    dict(multipliers=()), dict(multipliers=(0.0,)), dict(blocks="diag"), dict(workers=0),
    dict(periods=7), dict(instance="/nonexistent.json"), dict(model="acuc", schemes=("sdp",)),
])
def test_config_errors(toy_file, kw):
    base = dict(instance=str(toy_file))
    base.update(kw)
    with pytest.raises(ConfigError):
        RunConfig(**base).validate()


def test_empty_archive():
    with pytest.raises(EmptyArchive):
        emit_tables(ResultsArchive(), "csv", ".")


def test_unknown_marker(tmp_path):
    tmp_dir = tmp_path
    arch = ResultsArchive({"model": "dcuc"})
    arch.append({"multiplier": 1.0, "scheme": "sdp", "status": "Unknown", "objective": 1.0,
                 "gap": 2.5})
    arch.append({"multiplier": 1.0, "scheme": "lp-baseline", "status": "Error"})
    tabs = {p.name: p for p in emit_tables(arch, "csv", tmp_dir)}
    assert tabs["gaps.csv"].read_text().splitlines()[1] == "1,2.50*,!"
