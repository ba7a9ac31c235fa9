import json
import math
import subprocess
import sys

import pytest

from edgeofchaos import cli


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "edgeofchaos", *map(str, args)], cwd=cwd,
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def mg_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("mg")
    assert cli.main(["datagen", "mackey-glass", "--length", "900", "--output-dir", str(out)]) == 0
    return out / "series.csv"


def test_spectra_sigmoid(tmp_path):
    assert cli.main(["spectra", "--activation", "sigmoid", "--order", "6", "--output-dir", str(tmp_path)]) == 0
    spec = json.loads((tmp_path / "spectrum.json").read_text())
    assert spec["coefficients"][0] == pytest.approx(0.5, abs=1e-14)
    assert spec["basis"] == "probabilists-orthonormal"


def test_spectra_identity(tmp_path):
    assert cli.main(["spectra", "--activation", "identity", "--order", "2", "--output-dir", str(tmp_path)]) == 0
    coeffs = json.loads((tmp_path / "spectrum.json").read_text())["coefficients"]
    assert coeffs == pytest.approx([0, 1, 0], abs=1e-14)
    assert not (tmp_path / "discrepancy.json").exists()


def test_spectra_relu_discrepancy(tmp_path):
    assert cli.main(["spectra", "--activation", "relu", "--order", "4", "--output-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "discrepancy.json").read_text())
    assert report["max_abs_difference"] > 0 and "closed_form" in report


def test_design_defaults_in_bands(tmp_path):
    assert cli.main(["design", "--output-dir", str(tmp_path)]) == 0
    coeffs = json.loads((tmp_path / "hp.json").read_text())["coefficients"]
    assert 0.6 <= max(coeffs) <= 0.65 and min(coeffs) == pytest.approx(0.4)


def test_design_single_coefficient(tmp_path):
    assert cli.main(["design", "--n", "1", "--max", "0.5", "--min", "0.5", "--output-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "hp.json").read_text())["coefficients"] == [0.5]


def test_designed_file_drives_sweep(tmp_path):
    assert cli.main(["design", "--output-dir", str(tmp_path / "d")]) == 0
    code = cli.main(["mlp", "sweep", "--param", "max-coeff", "--range", "0.5:0.7:0.1", "--epochs", "3",
                     "--activation", f"hp:file={tmp_path / 'd' / 'hp.json'}", "--output-dir", str(tmp_path / "s")])
    assert code == 0
    lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "config_id,param_value,final_loss,epochs_to_threshold,diverged" and len(lines) == 4


def test_criticality_scaled_identity(tmp_path):
    assert cli.main(["criticality", "--net-kind", "scaled-identity", "--scale", "0.5", "--activation", "identity",
                     "--output-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["lambda"] == pytest.approx(math.log(0.5), abs=1e-12) and report["regime"] == "Stable"
    assert (tmp_path / "recurrence.pgm").read_bytes().startswith(b"P5\n")


def test_criticality_orthogonal(tmp_path):
    assert cli.main(["criticality", "--net-kind", "orthogonal", "--activation", "identity",
                     "--output-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["regime"] == "EdgeOfChaos"


def test_esn_train_metrics_and_evolve_states(tmp_path, mg_csv):
    out = tmp_path / "train"
    assert cli.main(["esn", "train", "--data", mg_csv, "--split", "0.7:0.1:0.2", "--width", "40",
                     "--output-dir", out]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "split,mae,rmse,mape" and [l.split(",")[0] for l in lines[1:]] == ["train", "validation", "test"]
    preds = (out / "predictions.csv").read_text().splitlines()
    assert preds[0] == "time_index,observed,predicted,error,flagged"
    assert cli.main(["criticality", "--esn-model", out / "model.json", "--data", mg_csv,
                     "--output-dir", tmp_path / "crit"]) == 0
    report = json.loads((tmp_path / "crit" / "report.json").read_text())
    assert 0 < report["recurrence_rate"] <= 1
    assert cli.main(["esn", "predict", "--model", out / "model.json", "--data", mg_csv,
                     "--output-dir", tmp_path / "pred"]) == 0


def test_esn_evolve_history(tmp_path, mg_csv):
    assert cli.main(["esn", "evolve", "--data", mg_csv, "--depth", "1..2", "--width", "10..40", "--budget", "3",
                     "--population", "4", "--washout", "50", "--output-dir", tmp_path]) == 0
    rows = (tmp_path / "history.csv").read_text().splitlines()
    assert rows[0] == "generation,best_fitness,depth,width"
    fitness = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(fitness) == 3 and all(b <= a for a, b in zip(fitness, fitness[1:]))
    assert len(list((tmp_path / "recurrence").glob("*.pgm"))) == 3


def test_esn_ridge_sweep_trend(tmp_path, mg_csv):
    assert cli.main(["esn", "train", "--data", mg_csv, "--width", "50", "--sweep-ridge", "0,1e-6..1",
                     "--output-dir", tmp_path]) == 0
    rows = [l.split(",") for l in (tmp_path / "ridge_sweep.csv").read_text().splitlines()[1:]]
    lams = [float(r[0]) for r in rows]
    assert lams == [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    assert float(rows[-1][3]) > float(rows[0][3])


def test_mlp_sweep_batch_smoothness(tmp_path):
    assert cli.main(["mlp", "sweep", "--param", "batch", "--values", "8,64,512", "--activation", "sigmoid",
                     "--epochs", "60", "--output-dir", tmp_path]) == 0
    rough = json.loads((tmp_path / "summary.json").read_text())["loss_roughness"]
    assert rough["8"] > rough["64"] > rough["512"]


def test_mlp_train_gradient_check_first(tmp_path):
    assert cli.main(["mlp", "train", "--activation", "hp:max=0.6,min=0.35,gap=0.12,n=3", "--epochs", "5",
                     "--output-dir", tmp_path]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["gradient_check"] <= 1e-4


@pytest.mark.parametrize("kind,args,files", [
    ("mackey-glass", ["--length", "50"], ["series.csv"]),
    ("blobs", ["--samples", "20"], ["dataset.csv"]),
    ("idx-fixture", ["--count", "3"], ["images.idx", "labels.idx"]),
])
def test_datagen_deterministic(tmp_path, kind, args, files):
    for sub in ("a", "b"):
        assert cli.main(["datagen", kind, *args, "--seed", "5", "--output-dir", str(tmp_path / sub)]) == 0
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_datagen_shape(tmp_path):
    assert cli.main(["datagen", "blobs", "--samples", "20", "--dim", "3", "--output-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "dataset.csv").read_text().splitlines()
    assert lines[0] == "x0,x1,x2,label" and len(lines) == 21


def test_datagen_error_path(tmp_path):
    assert cli.main(["datagen", "mackey-glass", "--length", "0", "--output-dir", str(tmp_path)]) == 2


def test_json_format(tmp_path):
    assert cli.main(["datagen", "moons", "--samples", "4", "--format", "json", "--output-dir", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "dataset.json").read_text())
    assert len(rows) == 4 and set(rows[0]) == {"x0", "x1", "label"}


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"activation": "tanh", "order": 3}))
    assert cli.main(["spectra", "--config", cfg, "--output-dir", tmp_path / "a"]) == 0
    assert json.loads((tmp_path / "a" / "spectrum.json").read_text())["order"] == 3
    assert cli.main(["spectra", "--config", cfg, "--order", "1", "--output-dir", tmp_path / "b"]) == 0
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["arguments"]["order"] == 1 and manifest["arguments"]["activation"] == "tanh"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["spectra", "--config", bad, "--output-dir", tmp_path / "c"]) == 2


def test_exit_codes_black_box(tmp_path, mg_csv):
    assert run("spectra", "--activation", "sigmoid", "--order", "2", "--output-dir", tmp_path / "ok").returncode == 0
    assert run("spectra", "--activation", "gelu", "--output-dir", tmp_path / "x").returncode == 2
    assert run("spectra").returncode == 2
    assert run("esn", "train", "--data", tmp_path / "missing.csv").returncode == 2
    assert run("esn", "train", "--data", mg_csv, "--spectral-radius", "1.5",
               "--output-dir", tmp_path / "y").returncode == 2
    assert run("esn", "train", "--data", mg_csv, "--split", "0.7:0.2", "--output-dir", tmp_path / "z").returncode == 2
    # A model whose sidecar matrices are corrupt is an internal failure, not bad input.
    assert run("esn", "train", "--data", mg_csv, "--width", "10", "--output-dir", tmp_path / "m").returncode == 0
    (tmp_path / "m" / "model.npz").write_bytes(b"PK\x03\x04 not a zip archive")
    res = run("esn", "predict", "--model", tmp_path / "m" / "model.json", "--data", mg_csv,
              "--output-dir", tmp_path / "p")
    assert res.returncode in (1, 2) and "error" in res.stderr


def test_internal_error_exit_code(monkeypatch, tmp_path):
    def boom(ns, run):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "cmd_spectra", boom)
    assert cli.main(["spectra", "--activation", "sigmoid", "--output-dir", str(tmp_path)]) == 1


def test_manifest_contents(tmp_path):
    assert cli.main(["spectra", "--activation", "swish", "--order", "3", "--output-dir", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == ["spectra"]
    assert manifest["arguments"]["activation"] == "swish" and manifest["arguments"]["seed"] == 0
    assert set(manifest["artifacts"]) == {"spectrum.json", "discrepancy.json"}
    assert "output_dir" not in manifest["arguments"]


def test_replay_golden_manifest(tmp_path, mg_csv):
    assert cli.main(["esn", "train", "--data", mg_csv, "--width", "30", "--seed", "3",
                     "--output-dir", tmp_path / "first"]) == 0
    result = cli.replay(tmp_path / "first" / "manifest.json", tmp_path / "again")
    assert result and all(result.values())
    assert cli.main(["replay", str(tmp_path / "first" / "manifest.json"), "--output-dir",
                     str(tmp_path / "third")]) == 0


def test_replay_detects_changed_input(tmp_path):
    data = tmp_path / "s.csv"
    data.write_text("v\n" + "\n".join(str(0.5 + 0.01 * i) for i in range(300)) + "\n")
    assert cli.main(["esn", "train", "--data", data, "--width", "10", "--washout", "20",
                     "--output-dir", tmp_path / "r"]) == 0
    data.write_text(data.read_text() + "0.9\n")
    assert cli.main(["replay", str(tmp_path / "r" / "manifest.json")]) == 2


def test_range_parsers():
    assert cli.parse_float_range("0.4:0.9:0.05")[-1] == 0.9 and len(cli.parse_float_range("0.4:0.9:0.05")) == 11
    assert cli.parse_int_range("50..500") == (50, 500)
    assert cli.parse_ridge_grid("0,1e-2..1") == [0.0, 0.01, 0.1, 1.0]
    for bad in ("4..1", "a..b"):
        with pytest.raises(cli.UsageError):
            cli.parse_int_range(bad)
    with pytest.raises(cli.UsageError):
        cli.parse_ridge_grid("-1")
