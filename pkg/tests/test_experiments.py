import json

import pytest

from ssrqd.cli import main
from ssrqd.experiments import ExperimentError, list_presets, load_preset, run_experiment

SHIPPED = ["table1a", "table1b", "table2", "table3", "table6", "table7a", "table7b",
           "fig_cadt_over_tau", "fig_cadt_over_delta", "fig_sadt"]


def test_presets_shipped_and_loadable():
    names = list_presets()
    for n in SHIPPED:
        assert n in names
        cfg = load_preset(n)
        assert "seed" in cfg and "kind" in cfg
    with pytest.raises(ExperimentError):
        load_preset("nonsense")


def test_table6_values(tmp_path):
    m = run_experiment("table6", tmp_path)
    rows = dict(line.split(",")[:2] for line in
                (tmp_path / "theta0.csv").read_text().splitlines()[1:])
    for key, val in {"normal": 0.98, "t4": 1.18, "t3": 1.37, "t2:iqr": 1.18, "t1:iqr": 1.10}.items():
        assert abs(float(rows[key]) - val) <= 0.01
    assert abs(float(rows["laplace"]) - 6 ** 0.5 / 2) < 1e-6
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == m["seed"] and "version" in man and "runtime_seconds" in man


def test_custom_config_file_via_cli(tmp_path, capsys):
    cfg = {"kind": "delay_curve", "seed": 3, "trials": 400, "distribution": "laplace",
           "axis": "tau", "grid": {"start": 0, "stop": 100, "step": 50}, "deltas": [1.0],
           "schemes": [{"family": "ssr-sr", "zeta": 0.25, "h": 5.92}]}
    p = tmp_path / "mine.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "res"
    assert main(["experiment", str(p), "-o", str(out)]) == 0
    files = json.loads((out / "manifest.json").read_text())["files"]
    (name,) = files
    lines = (out / name).read_text().splitlines()
    assert lines[0] == "grid_value,estimate,std_error,trials,discarded_fraction"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "50", "100"]
