import json

import pytest

from hetlab.cli import RunConfig, config_from_manifest, main, resolve


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def _read(path):
    return json.loads(path.read_text())


@pytest.mark.parametrize("omega,K", [(1.0, 2.46914), (10.0, 24.6914)])
def test_model_info_constants(tmp_path, omega, K):
    assert _run(tmp_path, "model-info", "--alpha", "1", "--beta", "-0.1", "--omega", str(omega)) == 0
    info = _read(tmp_path / "model_info.json")
    assert info["K_omega"] == pytest.approx(K, rel=1e-5)
    man = _read(tmp_path / "manifest.json")
    assert man["tool"] == "hetlab" and man["outputs"] == ["model_info.json"]
    assert man["wall_clock_seconds"] >= 0


def test_invalid_beta_is_config_error(tmp_path):
    assert _run(tmp_path, "model-info", "--beta", "0.2") == 1
    assert not (tmp_path / "manifest.json").exists()


def test_unknown_flag_is_config_error(tmp_path):
    assert _run(tmp_path, "model-info", "--gamma", "1") == 1


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"omega": 10.0, "beta": -0.2}))
    out = tmp_path / "o"
    assert main(["model-info", "--config", str(cfg_file), "--beta", "-0.1", "--out", str(out)]) == 0
    p = _read(out / "manifest.json")["config"]["params"]
    assert p["omega"] == 10.0 and p["beta"] == -0.1


def test_threads_env(monkeypatch):
    monkeypatch.setenv("HETLAB_THREADS", "3")
    cfg = resolve("census", {})
    assert cfg.threads == 3
    assert resolve("census", {"threads": 2}).threads == 2


def test_runconfig_round_trip():
    for cmd in ("simulate", "circle", "census", "annulus"):
        cfg = resolve(cmd, {"seed": 2**63 - 1})
        again = RunConfig.from_json(json.loads(json.dumps(cfg.to_json())))
        assert again == cfg


def test_return_map_csv_format(tmp_path):
    assert _run(tmp_path, "return-map", "--omega", "10", "--n", "5") == 0
    text = (tmp_path / "return_map.csv").read_bytes().decode("utf-8")
    assert "\r" not in text
    lines = text.splitlines()
    assert lines[0] == "n,x,y,absorbed" and len(lines) == 7


def test_manifest_rerun_is_identical(tmp_path):
    first = tmp_path / "a"
    assert main(["simulate", "--t", "20", "--omega", "10", "--out", str(first)]) == 0
    second = tmp_path / "b"
    assert main(["rerun", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "trajectory.csv").read_bytes() == (second / "trajectory.csv").read_bytes()
    c1 = _read(first / "manifest.json")["config"]
    c2 = _read(second / "manifest.json")["config"]
    c1.pop("output_dir"), c2.pop("output_dir")
    assert c1 == c2


def test_manifest_as_config_file(tmp_path):
    first = tmp_path / "a"
    assert main(["circle", "sweep", "--komega", "1000", "--N", "3", "--grid", "500", "--out", str(first)]) == 0
    second = tmp_path / "b"
    assert main(["circle", "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "sweep.csv").read_bytes() == (second / "sweep.csv").read_bytes()
    assert config_from_manifest(first / "manifest.json").params == config_from_manifest(second / "manifest.json").params


def test_circle_sweep_outputs(tmp_path):
    assert _run(tmp_path, "circle", "sweep", "--komega", "1000", "--N", "2", "--grid", "200") == 0
    d = _read(tmp_path / "sweep.json")
    assert {"measure_estimate", "bound"} <= set(d)


def test_numerical_error_exit_code(tmp_path):
    assert _run(tmp_path, "circle", "cover", "--komega", "10", "--a", "3") == 2


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["model-info", "--out", str(blocker / "sub")]) == 3


def test_bad_manifest_is_config_error(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("[]")
    assert main(["rerun", str(bad)]) == 1
