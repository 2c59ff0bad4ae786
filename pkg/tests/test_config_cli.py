import json
from pathlib import Path

import pytest

from rpclay import cli, config
from rpclay.errors import ConfigError

SMALL = """
[train]
epochs = 400
architectures = 1, 4-2

[grid]
levels = 30
"""


def test_default_round_trip():
    cfg = config.default_config()
    back = config.loads(config.dumps(cfg))
    assert back == cfg
    assert config.config_hash(back) == config.config_hash(cfg)


def test_defaults_carry_published_constants():
    cp = config.to_parser(config.default_config())
    assert cp["case.3"]["diameter_mm"] == "63.5"
    assert cp["material"]["B"] == "238.0"
    assert cp["inverse"]["refs"] == "16.0, 25.0, 19.0"
    assert cp["grid"]["B_max"] == "952.0"
    assert cp["design"]["n_levels"] == "0.0725, 0.145, 0.29, 0.58, 1.16"


def test_hash_ignores_plumbing_but_not_physics():
    cfg = config.default_config()
    h = config.config_hash(cfg)
    assert config.config_hash(config.with_overrides(cfg, jobs=4, out="elsewhere")) == h
    assert config.config_hash(config.with_overrides(cfg, seed=1)) != h
    assert config.config_hash(config.loads("[inverse]\nrefs = 16, 25, 20\n")) != h


def test_overlay_and_errors():
    cfg = config.loads("[material]\nB = 150\n[case.2]\nv0_m_s = 7.0\n")
    assert cfg.material.jc.B == 150.0 and cfg.cases[1].v0 == 7.0
    for bad in ("[nope]\nx = 1\n", "[solver]\ndt2 = 1\n", "[solver]\ndt = fast\n",
                "[inverse]\nrefs = 1, 2\n", "[train]\narchitectures = 9\n", "not ini"):
        with pytest.raises(ConfigError):
            config.loads(bad)
    with pytest.raises(ConfigError):
        config.load("/nonexistent/rpclay.ini")
    with pytest.raises(ConfigError):
        config.with_overrides(config.default_config(), colour="red")


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_default_config_command(capsys):
    code, out, _ = run(["default-config"], capsys)
    assert code == 0
    assert config.loads(out) == config.default_config()


def test_screen_fixture(tmp_path, capsys):
    code, out, _ = run(["screen", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "selected: B, n, C" in out
    doc = json.loads((tmp_path / "screening.json").read_text())
    assert doc["selected"] == ["B", "n", "C"]
    assert doc["config_hash"] == config.config_hash(config.default_config())
    assert (tmp_path / "screening.csv").read_text().startswith("# rpclay screening v1; config_hash=")
    manifest = json.loads((tmp_path / "manifest_screen.json").read_text())
    assert manifest["command"] == "screen" and "screen" in manifest["timings_s"]


def test_simulate_command(tmp_path, capsys):
    code, out, _ = run(["simulate", "--out", str(tmp_path), "--case", "1", "--set", "B=150"], capsys)
    assert code == 0 and out.startswith("case 1: depth")
    doc = json.loads((tmp_path / "simulation.json").read_text())
    assert doc["material"]["jc"]["B"] == 150.0
    assert list(doc["cases"]) == ["1"]
    assert run(["simulate", "--out", str(tmp_path), "--set", "Q=1"], capsys)[0] == 2
    assert run(["simulate", "--out", str(tmp_path), "--set", "B"], capsys)[0] == 2


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[solver]\nunknown = 1\n")
    assert run(["screen", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 2
    code, _, err = run(["train", "--out", str(tmp_path / "empty")], capsys)
    assert code == 2 and "not found" in err
    assert run(["screen", "--jobs", "0", "--out", str(tmp_path)], capsys)[0] == 2


def test_stage_failure_exit_3_keeps_partial(tmp_path, capsys):
    ini = tmp_path / "short.ini"
    ini.write_text("[solver]\nt_max = 0.010\n")  # too short for the weakest factorial corners
    code, _, err = run(["doe", "--design", "factorial", "--config", str(ini),
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 3
    assert "stage doe_factorial failed" in err
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert "batch_factorial.csv.partial" in names and "dataset_factorial.csv.partial" in names
    assert "batch_factorial.csv" not in names


def test_mixed_hash_inputs_refused(tmp_path, capsys):
    out = str(tmp_path)
    assert run(["doe", "--design", "oat", "--out", out], capsys)[0] == 0
    assert run(["screen", "--dataset", "dataset_oat.csv", "--out", out], capsys)[0] == 0
    code, _, err = run(["screen", "--dataset", "dataset_oat.csv", "--out", out, "--seed", "3"], capsys)
    assert code == 2 and "config hash" in err


def _results(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and not p.name.startswith("manifest")}


@pytest.mark.slow
def test_pipeline_small_config_is_deterministic(tmp_path, capsys):
    ini = tmp_path / "small.ini"
    ini.write_text(SMALL)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, text, err = run(["pipeline", "--config", str(ini), "--out", str(out)], capsys)
        assert code == 0, err
        assert "optimum (B, n, C)" in text
        outs.append(out)
    a, b = (_results(o) for o in outs)
    assert a.keys() == b.keys() and a == b
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["format"] == "rpclay-summary" and summary["version"] == 1
    assert summary["screened_parameters"] == ["B", "n", "C"]
    assert summary["after_mean_rel_error"] < summary["before_mean_rel_error"]
    h = summary["config_hash"]
    for rel, blob in a.items():
        if rel.endswith(".json"):
            assert json.loads(blob)["config_hash"] == h, rel
        elif rel.endswith(".csv"):
            assert f"config_hash={h}".encode() in blob.split(b"\n", 1)[0], rel
    # the stand-alone stages accept the pipeline's own outputs
    assert run(["validate", "--config", str(ini), "--out", str(outs[0])], capsys)[0] == 0
