import json
import math
import subprocess
import sys

import numpy as np
import pytest

from parabolic_mc.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from parabolic_mc.config import load_config, parse_config
from parabolic_mc.errors import ConfigError
from parabolic_mc.io import (dumps_json, format_value, read_csv, read_trajectory_dump, write_csv,
                             write_trajectory_dump)


# -- file formats ------------------------------------------------------------

def test_value_formatting():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(1.0) == "1"
    assert format_value(3) == "3"
    assert format_value(True) == "true"
    assert format_value(float("nan")) == "nan"
    assert format_value(-math.inf) == "-inf"
    assert float(format_value(1 / 3)) == 1 / 3


def test_csv_round_trip_and_line_endings(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["y", "value"], [[0.0, 0.1], [1.5, 1e-300]])
    raw = p.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    header, data = read_csv(p)
    assert header == ["y", "value"]
    np.testing.assert_array_equal(data, [[0.0, 0.1], [1.5, 1e-300]])


def test_json_is_sorted_and_indented():
    text = dumps_json({"b": np.float64(1.5), "a": np.arange(2), "c": math.inf})
    assert text == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5,\n  "c": "inf"\n}\n'


def test_trajectory_dump_round_trip(tmp_path):
    states = np.random.default_rng(0).standard_normal((3, 11, 2))
    p = write_trajectory_dump(tmp_path / "t.bin", states, 0.01)
    raw = p.read_bytes()
    assert len(raw) == 8 + 8 + 8 + states.size * 8
    assert int.from_bytes(raw[:8], "little") == 2
    back, h = read_trajectory_dump(p)
    np.testing.assert_array_equal(back, states)
    assert h == 0.01


# -- configuration -----------------------------------------------------------

BASE = {"version": 1, "experiment": "estimate", "seed": 7, "field": {"preset": "const"},
        "params": {"t": 1.0, "y": [0.0], "n_paths": 2000, "h": 0.1}}


def with_changes(**kw):
    doc = json.loads(json.dumps(BASE))
    for k, v in kw.items():
        if k == "params":
            doc["params"].update(v)
        else:
            doc[k] = v
    return doc


@pytest.mark.parametrize("doc,where", [
    (with_changes(extra=1), "top-level"),
    (with_changes(version=2), "version"),
    (with_changes(experiment="nope"), "experiment"),
    (with_changes(seed=-1), "seed"),
    (with_changes(params={"n_paths": -5}), "params.n_paths"),
    (with_changes(params={"t": 0.0}), "params.t"),
    (with_changes(params={"colour": 1}), "params"),
    (with_changes(field={"preset": "wat"}), "field.preset"),
    (with_changes(field={"d": 1}), "field.a"),
])
def test_config_errors_name_the_key(doc, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert where in str(exc.value)


def test_hash_ignores_key_order_and_output():
    a = parse_config(BASE)
    doc = dict(reversed(list(BASE.items())))
    doc["output"] = "elsewhere"
    assert parse_config(doc).hash() == a.hash()
    assert parse_config(with_changes(seed=8)).hash() != a.hash()


def write_toml(path, body):
    path.write_text(body, encoding="utf-8")
    return path


ESTIMATE_TOML = """
version = 1
experiment = "estimate"
seed = 11

[field]
preset = "const"

[params]
t = 1.0
y = [0.0]
n_paths = 100000
h = 0.05
"""


def test_bad_toml_exits_with_config_code(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", "version = 1\nexperiment = \n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    cfg = write_toml(tmp_path / "d.toml", ESTIMATE_TOML.replace("n_paths = 100000",
                                                                "n_paths = -3"))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_subcommand_must_match(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", ESTIMATE_TOML)
    assert main(["couple", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


# -- runs --------------------------------------------------------------------

def test_validate_constant_field(tmp_path):
    cfg = write_toml(tmp_path / "v.toml", 'version = 1\nexperiment = "validate"\n'
                     '[field]\npreset = "const"\n')
    assert main(["validate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    out = next((tmp_path / "o").iterdir())
    doc = json.loads((out / "validation.json").read_text())
    assert doc["pass"] is True
    assert json.loads((out / "manifest.json").read_text())["status"] == "ok"


def test_estimate_standard_kernel(tmp_path):
    cfg = write_toml(tmp_path / "e.toml", ESTIMATE_TOML)
    assert main(["estimate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_OK
    out = next(p for p in tmp_path.iterdir() if p.is_dir())
    assert out.name.startswith("estimate-") and len(out.name) == len("estimate-") + 12
    header, data = read_csv(out / "density.csv")
    assert header == ["y", "value", "stderr", "n", "bandwidth"]
    val, se, bw = data[0, 1], data[0, 2], data[0, 4]
    want = 1 / math.sqrt(2 * math.pi * (1 + bw ** 2))
    assert abs(val - want) <= 4 * se
    assert val == pytest.approx(0.39894, abs=0.01)
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_hash", "seed", "version", "wall_time", "workers", "chunk_size"} <= set(man)
    assert man["seed"] == 11 and man["config_hash"] == load_config(cfg).hash()


def test_runs_are_byte_identical(tmp_path):
    cfg = write_toml(tmp_path / "e.toml", ESTIMATE_TOML.replace("100000", "5000"))
    dirs = []
    for k in range(2):
        base = tmp_path / f"r{k}"
        assert main(["run", "--config", str(cfg), "--out-dir", str(base)]) == EXIT_OK
        dirs.append(next(base.iterdir()))
    a, b = dirs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name != "manifest.json":
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_toml(tmp_path / "e.toml", ESTIMATE_TOML.replace("100000", "2000"))
    main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["run", "--config", str(cfg), "--seed", "12", "--out-dir", str(tmp_path / "b")])
    da = next((tmp_path / "a").iterdir())
    db = next((tmp_path / "b").iterdir())
    assert da.name != db.name
    assert (da / "density.csv").read_bytes() != (db / "density.csv").read_bytes()


def test_numerical_error_exit_code_and_manifest(tmp_path):
    # the diffusion leaves its ellipticity band once |x| > 1/2
    body = ('version = 1\nexperiment = "simulate"\n[field]\nd = 1\na = "1 + x"\nlam = 2.0\n'
            '[params]\nt = 5.0\nn_paths = 50\nh = 0.01\n')
    cfg = write_toml(tmp_path / "bad.toml", body)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_NUMERIC
    out = next((tmp_path / "o").iterdir())
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "numerical-error" and "Ellipticity" in man["error"]


def test_simulate_writes_endpoints_and_dump(tmp_path):
    body = ('version = 1\nexperiment = "simulate"\nseed = 3\n[field]\npreset = "sin_a"\n'
            '[params]\nt = 0.5\nn_paths = 20\nh = 0.05\nn_dump = 4\n')
    cfg = write_toml(tmp_path / "s.toml", body)
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    out = next((tmp_path / "o").iterdir())
    header, data = read_csv(out / "endpoints.csv")
    assert header == ["x", "log_weight"] and data.shape == (20, 2)
    states, h = read_trajectory_dump(out / "trajectories.bin")
    assert states.shape == (4, 11, 1) and h == pytest.approx(0.05)


def test_oracle_closed_form(tmp_path):
    body = ('version = 1\nexperiment = "oracle"\n[field]\npreset = "const"\n'
            '[params]\nt = 1.0\ny = [0.0, 1.0]\n')
    cfg = write_toml(tmp_path / "o.toml", body)
    assert main(["oracle", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    out = next((tmp_path / "o").iterdir())
    _, data = read_csv(out / "density_oracle.csv")
    np.testing.assert_allclose(data[:, 1], [0.3989422804014327, 0.24197072451914337], rtol=1e-15)


def test_couple_writes_table_and_survival(tmp_path):
    body = ('version = 1\nexperiment = "couple"\n[field]\npreset = "const"\n'
            '[params]\nt = 0.1\ndeltas = [0.05, 0.1, 0.2]\nn_paths = 500\nh = 0.001\n')
    cfg = write_toml(tmp_path / "c.toml", body)
    assert main(["couple", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    out = next((tmp_path / "o").iterdir())
    header, data = read_csv(out / "coupling.csv")
    assert header == ["delta", "t", "e_t_tau", "stderr", "n_pairs"] and data.shape == (3, 5)
    assert json.loads((out / "exponent.json").read_text())["slope"] > 0
    assert len(list(out.glob("survival_delta*.csv"))) == 3


def test_module_entry_point(tmp_path):
    cfg = write_toml(tmp_path / "v.toml", 'version = 1\nexperiment = "validate"\n'
                     '[field]\npreset = "sin_a"\n')
    res = subprocess.run([sys.executable, "-m", "parabolic_mc.cli", "run", "--config", str(cfg),
                          "--out-dir", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
