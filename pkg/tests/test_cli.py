import json

import pytest

from gplab import cli, tensorio


def run(args, capsys):
    code = cli.run(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_unknown_command(capsys):
    code, out, err = run(["transmogrify"], capsys)
    assert code == 2 and "usage" in err


def test_missing_required_flag(capsys, tmp_path):
    code, _, err = run(["boardgame-classify", "--out", str(tmp_path)], capsys)
    assert code == 2 and "--k" in err and "--p" in err


def test_flag_not_accepted(capsys, tmp_path):
    code, _, err = run(["gp-residual", "--beta", "0.1", "--out", str(tmp_path)], capsys)
    assert code == 2 and "--beta" in err


def test_invalid_physics_is_validation_error(capsys, tmp_path):
    code, _, err = run(["manybody-evolve", "--beta", "0.4", "--out", str(tmp_path)], capsys)
    assert code == 2 and "beta" in err


def test_strict_config(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"params": {"grid": {"n": 8, "bogus": 1}}}))
    code, _, err = run(["gp-residual", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "bogus" in err


def test_config_round_trip():
    cfg = cli.RunConfig.from_dict({"command": "bound-report", "params": {"alpha": [1.0]}, "out": "x", "seed": 3})
    assert cli.RunConfig.from_dict(cfg.to_dict()) == cfg


def test_classify_worked_example(capsys, tmp_path):
    code, out, _ = run(["boardgame-classify", "--k", "1", "--p", "2,1,3,2", "--out", str(tmp_path)], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 1
    row = tensorio.read_csv(tmp_path / "classes_summary.csv")[0]
    assert row["maps"] == "84" and row["bound"] == "8192"
    assert len(tensorio.read_csv(tmp_path / "classes.csv")) == 84


def test_nls_plane_wave_free(capsys, tmp_path):
    code, _, _ = run(["nls-evolve", "--preset", "plane-wave", "--coeffs", "0", "--grid-n", "32", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert tensorio.read_json(tmp_path / "report.json")["phase_error"] <= 1e-8
    assert (tmp_path / "phi_manifest.json").exists()


def test_env_default_output(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("GPH_OUT", str(tmp_path / "env"))
    code, out, _ = run(["bound-report", "--grid-n", "8"], capsys)
    assert code == 0 and (tmp_path / "env" / "bound_report.csv").exists()
    assert str(tmp_path / "env") in out


def test_config_file_then_flags(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    tensorio.write_json(cfg, {"params": {"dt": 0.002, "grid": {"n": 32}}, "seed": 4})
    code, _, _ = run(["gp-residual", "--config", str(cfg), "--dt", "0.001", "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    saved = tensorio.read_json(tmp_path / "o" / "config.json")
    assert saved["params"]["dt"] == 0.001 and saved["params"]["grid"]["n"] == 32 and saved["seed"] == 4


def test_runtime_failure_exit_code(capsys, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli.ex, "gp_order_table", boom)
    code, _, err = run(["gp-residual", "--out", str(tmp_path)], capsys)
    assert code == 1 and "exploded" in err


@pytest.mark.parametrize("cmd", ["manybody-evolve", "bbgky-residual", "mollifier-rate", "boardgame-verify"])
def test_commands_run(cmd, capsys, tmp_path):
    extra = {"mollifier-rate": ["--grid-n", "64"], "boardgame-verify": []}.get(cmd, ["--N", "2"])
    if cmd == "mollifier-rate":
        cfg = tmp_path / "c.json"
        tensorio.write_json(cfg, {"params": {"eps": [0.8, 0.4, 0.2]}})
        extra += ["--config", str(cfg)]
    if cmd == "boardgame-verify":
        cfg = tmp_path / "c.json"
        tensorio.write_json(cfg, {"params": {"nodes": [3]}})
        extra += ["--config", str(cfg)]
    code, out, err = run([cmd, "--out", str(tmp_path / "o"), *extra], capsys)
    assert code == 0, err
    assert out.startswith(cmd)


def test_manybody_expm_cross_check(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    tensorio.write_json(cfg, {"params": {"grid": {"n": 8}, "T": 0.5}})
    code, out, _ = run(["manybody-evolve", "--N", "2", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0 and "expm_error" in out
    assert tensorio.read_json(tmp_path / "o" / "report.json")["expm_error"] <= 1e-6
