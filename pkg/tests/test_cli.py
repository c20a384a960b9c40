import json

import pytest

from fitprint import cli
from fitprint.registry import sha256_file


def _config(tmp_path, **extra):
    raw = {
        "output_dir": str(tmp_path / "run"),
        "dataset": {"per_class": 4, "test_per_class": 3},
        "model": {"arch": "mlp", "epochs": 1},
        "suite": {"reuse": [{"technique": "copy"}, {"technique": "fine-tune", "p_layers": 0.5, "epochs": 1}],
                  "independent_seeds": [5], "independent_epochs": 1, "augmented": 1},
        "fingerprint": {"target": "random", "initial_images": "public",
                        "mapping": {"mu": 4, "nu": 4},
                        "extraction": {"epochs": 40, "lam": 0.0, "init_scale": 0.1, "step_norm": "l2",
                                       "lr_max": 0.05, "batch_size": 16}},
        "kappa": 1e-3,
        "source_model": str(tmp_path / "run" / "source.fpm"),
        "suite_dir": str(tmp_path / "run" / "suite"),
        "package": str(tmp_path / "run" / "fp.fpp"),
        "registry": str(tmp_path / "reg"),
    }
    raw.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_threshold_command(capsys):
    assert cli.main(["threshold", "--k", "256", "--kappa", "1e-9"]) == 0
    assert capsys.readouterr().out.strip() == "0.312500"


def test_usage_errors(capsys, tmp_path):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["train"]) == 2
    (tmp_path / "bad.json").write_text('{"model": {"epochs": "x"}}')
    assert cli.main(["train", "--config", str(tmp_path / "bad.json")]) == 2
    assert "model.epochs" in capsys.readouterr().err


def test_missing_package_is_config_error(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert cli.main(["verify", "--config", cfg, "--model", str(tmp_path / "nope.fpm")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_unknown_attack_kind(tmp_path):
    assert cli.main(["attack", "--config", _config(tmp_path), "--kind", "melt"]) == 2


def test_pipeline_end_to_end(tmp_path, capsys):
    cfg = _config(tmp_path)
    run = tmp_path / "run"
    assert cli.main(["train", "--config", cfg]) == 0
    assert (run / "source.fpm").exists()
    assert cli.main(["suite", "--config", cfg]) == 0
    manifest = json.loads((run / "suite" / "manifest.json").read_text())
    assert [e["role"] for e in manifest].count("augmented") == 1
    assert all(e["sha256"] == sha256_file(e["path"]) for e in manifest)

    code = cli.main(["extract", "--config", cfg])
    assert code in (0, 3)
    out = capsys.readouterr().out
    assert f"sha256: {sha256_file(run / 'fp.fpp')}" in out

    assert cli.main(["register", "--config", cfg]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["seq"] == 1
    assert cli.main(["register", "--config", cfg]) == 1
    assert "already registered" in capsys.readouterr().err

    # the registered source model itself: timestamps equal, so precedence passes
    verdict = cli.main(["verify", "--config", cfg, "--model", str(run / "source.fpm")])
    report = json.loads((run / "verify_report.json").read_text())
    assert report["timestamp_check"] == "pass"
    assert verdict == (10 if report["decision"] == "reused" else 0)
    if code == 0:
        assert verdict == 10 and report["ber"] == 0.0

    assert cli.main(["lookup", "--config", cfg, "--owner", "owner"]) == 0
    assert cli.main(["report", "--config", cfg]) == 0
    assert (run / "report_summary.csv").read_text().startswith("group,count,verification_rate")


def test_corrupt_model_file_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path)
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "fp.fpp").write_bytes(b"x")
    (tmp_path / "m.fpm").write_bytes(b"garbage")
    assert cli.main(["verify", "--config", cfg, "--model", str(tmp_path / "m.fpm")]) == 1
