import json

import numpy as np
import pytest

from videoguard.cli import main
from videoguard.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from videoguard.metrics import ProtectionReport
from videoguard.videoio import read_video, write_video

FAST = {"pso": {"iterations": 5, "particles": 6}, "stage1": {"steps": 5}}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    assert cfg.frames == 8 and cfg.resolution == 64
    assert cfg.scale_factor == 8.0
    assert cfg.video.pattern is not None


def test_nested_fields_parse():
    cfg = config_from_dict({"video": {"pattern": {"kind": "bouncing_dot", "color": [1, 0, 0]}},
                            "denoiser": {"variant": "mlp", "params": {"hidden": 16}},
                            "schedule": {"T": 20}, "basis": {"M": 8}})
    assert cfg.video.pattern.kind == "bouncing_dot"
    assert cfg.video.pattern.color == (1, 0, 0)
    assert cfg.denoiser.params == {"hidden": 16}
    assert cfg.schedule.T == 20 and cfg.basis.M == 8


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"stage1": {"lr": 1}},
    {"pso": {"particles": 0}},
    {"frames": 2},
    {"resolution": 30},
    {"video": {"pattern": {"kind": "spiral"}}},
    {"video": {"path": "x.vgt", "pattern": {}}},
    {"inversion_prompt": "a cat"},
    {"stage1": []},
])
def test_rejects_invalid(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_cli_protect_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, FAST)
    out = tmp_path / "run"
    assert main(["--config", str(cfg), "--out", str(out), "protect"]) == 0
    for name in ("immunized.vgt", "source.vgt", "clean_edit.vgt", "protected_edit.vgt",
                 "report.txt", "run.json"):
        assert (out / name).exists()
    report = ProtectionReport.from_text((out / "report.txt").read_text())
    assert report.is_finite() and report.budget == 16
    meta = json.loads((out / "run.json").read_text())
    assert meta["scale_factor"] == 8.0
    src, imm = read_video(out / "source.vgt"), read_video(out / "immunized.vgt")
    assert np.max(np.abs(imm - src)) <= 16 / 255 + 1e-7
    assert "frame_consistency_clean" in capsys.readouterr().out


def test_cli_seed_changes_result(tmp_path):
    cfg = _write(tmp_path, FAST)
    main(["--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1", "protect"])
    main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2", "protect"])
    assert (tmp_path / "a" / "immunized.vgt").read_bytes() != \
        (tmp_path / "b" / "immunized.vgt").read_bytes()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, {"nope": 1})
    assert main(["--config", str(cfg), "protect"]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_video_shape_mismatch(tmp_path, capsys):
    write_video(tmp_path / "v.vgt", np.zeros((4, 3, 32, 32)))
    cfg = _write(tmp_path, {**FAST, "video": {"path": str(tmp_path / "v.vgt")}})
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "protect"]) == 1


def test_cli_numerical_failure_exit_code(tmp_path, capsys):
    # a huge per-step gain makes the inversion latent overflow
    cfg = _write(tmp_path, {**FAST, "denoiser": {"params": {"gain": 1e300}}})
    with np.errstate(all="ignore"):
        code = main(["--config", str(cfg), "--out", str(tmp_path / "o"), "protect"])
    assert code == 2
    err = capsys.readouterr().err
    assert "numerical failure" in err and "stage" in err


def test_cli_synth_edit_evaluate(tmp_path, capsys):
    cfg = _write(tmp_path, FAST)
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "synth", "--ppm"]) == 0
    assert (out / "frames" / "frame_0007.ppm").exists()
    assert main(["--config", str(cfg), "--out", str(out), "edit", str(out / "source.vgt")]) == 0
    assert read_video(out / "edited.vgt").shape == (8, 3, 64, 64)
    assert main(["--config", str(cfg), "--out", str(out), "evaluate", str(out / "source.vgt"),
                 str(out / "frames")]) == 0
    report = ProtectionReport.from_text((out / "report.txt").read_text())
    assert report.frame_consistency_clean == pytest.approx(report.frame_consistency_protected,
                                                           abs=1e-3)


def test_cli_missing_input_is_config_error(tmp_path):
    assert main(["--out", str(tmp_path), "edit", str(tmp_path / "absent.vgt")]) == 1


def test_cli_sweeps(tmp_path, capsys):
    cfg = _write(tmp_path, FAST)
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "sweep-budget", "--budgets", "4",
                 "16"]) == 0
    lines = (out / "sweep_budget.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["budget", "stage2_objective", "ssim_stealth",
                                    "frame_consistency_protected"]
    assert len(lines) == 3
    assert main(["--config", str(cfg), "--out", str(out), "sweep-lambda", "--lambdas", "0.01",
                 "5"]) == 0
    lines = (out / "sweep_lambda.tsv").read_text().splitlines()
    assert lines[0].startswith("lambda\t") and len(lines) == 3


def test_cli_gradcheck(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
