import json

import pytest

from ntdfocus import cli

SMALL = {
    "N": 64,
    "solver": {"n_x": 2048, "n_t": 8192},
    "verify": {"N": 64, "trials": 3},
    "sweep": {"N_list": [32, 64]},
    "recover": {"N": 64},
    "focus": {"r1": 0.5, "r2": 0.625},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run(tmp_path, command, cfg=SMALL, out="out", extra=()):
    argv = [command, "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / out)]
    return cli.main(argv + list(extra))


def test_missing_required_field_pointer(tmp_path, capsys):
    cfg = {k: v for k, v in SMALL.items() if k != "focus"} | {"focus": {"r2": 0.6}}
    assert run(tmp_path, "focus", cfg) == cli.EXIT_CONFIG
    assert "config error at /focus/r1" in capsys.readouterr().err


@pytest.mark.parametrize("patch,pointer", [
    ({"focus": {"r1": 0.7, "r2": 0.6}}, "/focus/r2"),
    ({"sweep": {"N_list": [64, 32]}}, "/sweep/N_list"),
    ({"bogus": 1}, "/"),
    ({"N": "many"}, "/N"),
])
def test_semantic_and_schema_errors(tmp_path, capsys, patch, pointer):
    cfg = {**SMALL, **patch}
    command = "sweep" if "sweep" in patch else "focus"
    assert run(tmp_path, command, cfg) == cli.EXIT_CONFIG
    assert f"config error at {pointer}" in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["verify", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "config error at /" in capsys.readouterr().err


def test_resolve_merges_defaults():
    cfg = cli.resolve_config({"focus": {"r1": 0.3, "r2": 0.4}}, "focus")
    assert cfg["focus"]["margin"] == cli.DEFAULTS["focus"]["margin"]
    assert cfg["regularization"]["alpha"] == 1e-3
    assert cli.config_hash(cfg, "focus") != cli.config_hash(cfg, "verify")


def test_verify_is_byte_reproducible(tmp_path):
    assert run(tmp_path, "verify", out="a") == cli.EXIT_OK
    assert run(tmp_path, "verify", out="b") == cli.EXIT_OK
    (da,) = (tmp_path / "a").glob("verify-*")
    (db,) = (tmp_path / "b").glob("verify-*")
    assert (da / "identities.csv").read_bytes() == (db / "identities.csv").read_bytes()
    assert (da / "report.json").read_bytes() == (db / "report.json").read_bytes()
    manifest = json.loads((da / "manifest.json").read_text())
    assert manifest["command"] == "verify" and "ntd_N64" in manifest["hashes"]


def test_build_ntd_uses_cache(tmp_path):
    assert run(tmp_path, "build-ntd") == cli.EXIT_OK
    (d,) = (tmp_path / "out").glob("build-ntd-*")
    assert json.loads((d / "report.json").read_text())["cache"] == "built"
    assert run(tmp_path, "build-ntd") == cli.EXIT_OK
    assert json.loads((d / "report.json").read_text())["cache"] == "hit"
    assert run(tmp_path, "build-ntd", extra=["--force-rebuild"]) == cli.EXIT_OK
    assert json.loads((d / "report.json").read_text())["cache"] == "rebuilt"
    lines = (d / "kernel.csv").read_text().splitlines()
    assert lines[0] == "t,value" and len(lines) == 1 + 2 * 64 + 1


def test_focus_reports_convergence(tmp_path):
    code = run(tmp_path, "focus")
    (d,) = (tmp_path / "out").glob("focus-*")
    report = json.loads((d / "report.json").read_text())
    assert code == (cli.EXIT_OK if report["focus"]["converged"] else cli.EXIT_NONCONVERGED)
    for name in ("snapshot.csv", "source_b.csv", "trace.csv", "indicator_r0.5.csv",
                 "residuals_h_r0.5.csv", "residuals_a_r0.625.csv"):
        assert (d / name).exists()


def test_recover_and_sweep_outputs(tmp_path):
    assert run(tmp_path, "recover") in (cli.EXIT_OK, cli.EXIT_NONCONVERGED)
    (d,) = (tmp_path / "out").glob("recover-*")
    rep = json.loads((d / "report.json").read_text())
    assert {"volume", "coordinate", "observation"} <= set(rep)
    assert run(tmp_path, "sweep") in (cli.EXIT_OK, cli.EXIT_NONCONVERGED)
    (d,) = (tmp_path / "out").glob("sweep-*")
    rep = json.loads((d / "report.json").read_text())
    assert rep["slope_defined"] and len(rep["rows"]) == 2


def test_env_overrides(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "envout"))
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["build-ntd", "--config", str(cfg)]) == cli.EXIT_OK
    assert list((tmp_path / "envout").glob("build-ntd-*"))
    monkeypatch.setenv(cli.ENV_JOBS, "two")
    assert cli.main(["build-ntd", "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert cli.ENV_JOBS in capsys.readouterr().err
