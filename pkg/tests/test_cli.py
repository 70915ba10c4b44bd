"""Command-line behaviour, report files, and exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from pacmodel.cli import run_cli
from pacmodel.reporting import canonical_json


def run(argv, capsys):
    code = run_cli(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def verify_args(refnet_file, out=None, extra=()):
    argv = [
        "verify", "--model", str(refnet_file), "--center", "0,0", "--radius", "1",
        "--no-clip", "--eps", "0.01", "--eta", "0.001", "--k1", "500", "--k2", "2182",
        "--kappa", "3", "--seed", "7",
    ]
    if out:
        argv += ["--out", str(out)]
    argv += list(extra)
    return argv


class TestCalc:
    def test_reference_sample_count(self, capsys):
        code, out, _ = run(["calc", "--eps", "0.01", "--eta", "0.001", "--m", "2", "--n", "2"], capsys)
        assert code == 0
        assert "K=2182" in out

    def test_kappa_and_achieved(self, capsys, tmp_path):
        out_file = tmp_path / "calc.json"
        code, out, _ = run(
            ["calc", "--eps", "0.01", "--eta", "0.001", "--m", "784", "--n", "10",
             "--k2", "8000", "--k", "10", "--d", "4", "--out", str(out_file)],
            capsys,
        )
        assert code == 4  # achieved epsilon above 1 for k=10
        doc = json.loads(out_file.read_text())
        assert doc["kappa_max"] == 32
        assert doc["achieved_epsilon"] > 1
        assert "vacuous_epsilon" in doc["flags"]

    def test_out_of_range_parameters(self, capsys):
        code, _, err = run(["calc", "--eps", "2.0", "--eta", "0.001", "--m", "2", "--n", "2"], capsys)
        assert code == 2
        assert "error" in err


class TestVerify:
    def test_end_to_end_report(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "report.json"
        code, stdout, _ = run(verify_args(refnet_file, out), capsys)
        assert code == 0
        assert "pac_model_robust" in stdout
        doc = json.loads(out.read_text())
        for key in ("task", "config", "verdict", "margin", "components", "queries", "seconds", "flags"):
            assert key in doc
        assert doc["task"] == "verify"
        assert doc["verdict"] == "pac_model_robust"
        assert doc["label"] == 1
        assert len(doc["components"]) == 1
        component = doc["components"][0]
        for key in ("max_point", "max_value", "candidate", "validated"):
            assert key in component
        assert component["max_point"] == [1.0, -1.0]
        assert doc["seconds"] is None  # deterministic by default

    def test_reports_are_byte_identical(self, refnet_file, tmp_path, capsys):
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        assert run(verify_args(refnet_file, out_a), capsys)[0] == 0
        assert run(verify_args(refnet_file, out_b), capsys)[0] == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_timing_flag_embeds_seconds(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "t.json"
        assert run(verify_args(refnet_file, out, extra=["--timing"]), capsys)[0] == 0
        assert json.loads(out.read_text())["seconds"] > 0

    def test_unknown_flag_is_usage_error(self, refnet_file, capsys):
        code, _, _ = run(verify_args(refnet_file) + ["--frobnicate"], capsys)
        assert code == 2

    def test_model_and_oracle_cmd_are_exclusive(self, refnet_file, capsys):
        code, _, err = run(
            verify_args(refnet_file) + ["--oracle-cmd", "true"], capsys
        )
        assert code == 2
        assert "exactly one" in err

    def test_missing_model_file(self, tmp_path, capsys):
        code, _, err = run(verify_args(tmp_path / "nope.json"), capsys)
        assert code == 2
        assert "model" in err

    def test_external_oracle_round_trip(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "ext.json"
        cmd = f"{sys.executable} -m pacmodel.serve {refnet_file}"
        argv = [
            "verify", "--oracle-cmd", cmd, "--center", "0,0", "--radius", "1",
            "--no-clip", "--eps", "0.05", "--eta", "0.01", "--k1", "100", "--k2", "400",
            "--kappa", "3", "--seed", "1", "--out", str(out),
        ]
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        assert json.loads(out.read_text())["verdict"] == "pac_model_robust"

    def test_protocol_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.py"
        bad.write_text("import sys\nsys.stdin.readline()\nprint('not dims')\n")
        argv = [
            "verify", "--oracle-cmd", f"{sys.executable} {bad}", "--center", "0,0",
            "--radius", "1", "--no-clip",
        ]
        code, _, err = run(argv, capsys)
        assert code == 3
        assert "oracle" in err

    def test_vacuous_margin_override(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "v.json"
        code, _, _ = run(
            verify_args(refnet_file, out, extra=["--margin-samples", "2"]), capsys
        )
        assert code == 4
        assert "vacuous_epsilon" in json.loads(out.read_text())["flags"]

    def test_config_file_defaults_and_flag_override(self, refnet_file, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"eps": 0.05, "eta": 0.01, "k1": 100, "k2": 400, "kappa": 3}))
        out = tmp_path / "c.json"
        argv = [
            "verify", "--model", str(refnet_file), "--center", "0,0", "--radius", "1",
            "--no-clip", "--config", str(config), "--eps", "0.1", "--out", str(out), "--seed", "3",
        ]
        code, _, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["epsilon"] == 0.1  # flag beat the file
        assert doc["config"]["k1"] == 100  # file beat the builtin default

    def test_center_from_file(self, refnet_file, tmp_path, capsys):
        center = tmp_path / "center.csv"
        center.write_text("0.0,0.0\n")
        argv = [
            "verify", "--model", str(refnet_file), "--center", str(center), "--radius", "1",
            "--no-clip", "--eps", "0.05", "--eta", "0.01", "--k1", "100", "--k2", "400",
            "--kappa", "3",
        ]
        assert run(argv, capsys)[0] == 0

    def test_untargeted_mode(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "u.json"
        code, _, _ = run(
            verify_args(refnet_file, out, extra=["--untargeted"]), capsys
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["mode"] == "untargeted"
        assert len(doc["components"]) == 1
        assert doc["components"][0]["label"] is None

    def test_three_class_report_has_two_components(self, tmp_path, capsys):
        model = {
            "input_dim": 2,
            "layers": [{"type": "dense",
                        "weights": [[0.0, 0.0], [0.2, 0.1], [-0.1, 0.3]],
                        "bias": [5.0, 0.0, 0.0], "activation": "identity"}],
        }
        model_file = tmp_path / "three.json"
        model_file.write_text(json.dumps(model))
        out = tmp_path / "three_report.json"
        argv = [
            "verify", "--model", str(model_file), "--center", "0,0", "--radius", "0.5",
            "--no-clip", "--eps", "0.1", "--eta", "0.01", "--k1", "80", "--k2", "300",
            "--kappa", "3", "--seed", "5", "--out", str(out),
        ]
        code, _, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["verdict"] == "pac_model_robust"
        assert [c["label"] for c in doc["components"]] == [2, 3]
        assert all(len(c["max_point"]) == 2 for c in doc["components"])

    def test_grid_splitting_flags(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        weights = np.vstack([np.zeros(16), rng.uniform(-0.2, 0.2, 16)])
        model = {
            "input_dim": 16,
            "layers": [{"type": "dense", "weights": weights.tolist(),
                        "bias": [2.0, 0.0], "activation": "identity"}],
        }
        model_file = tmp_path / "img.json"
        model_file.write_text(json.dumps(model))
        out = tmp_path / "split.json"
        argv = [
            "verify", "--model", str(model_file), "--center", ",".join(["0.5"] * 16),
            "--radius", "0.1", "--image-shape", "4x4", "--split-grid", "2x2",
            "--split-iters", "2", "--split-samples", "200", "--channels", "1",
            "--eps", "0.1", "--eta", "0.01", "--k1", "50", "--k2", "300",
            "--kappa", "3", "--seed", "9", "--out", str(out),
        ]
        code, _, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["splitting"]["iterations"] == 2
        assert doc["verdict"] == "pac_model_robust"


class TestRadiusTask:
    def test_integer_scale_search(self, tmp_path, capsys):
        model = {
            "input_dim": 1,
            "layers": [{"type": "dense", "weights": [[0.0], [1.0]], "bias": [0.0, -7.5],
                        "activation": "identity"}],
        }
        model_file = tmp_path / "threshold.json"
        model_file.write_text(json.dumps(model))
        out = tmp_path / "radius.json"
        argv = [
            "radius", "--model", str(model_file), "--center", "0", "--no-clip",
            "--r-lo", "1", "--r-hi", "255", "--scale", "int8", "--radius-unit", "1.0",
            "--eps", "0.1", "--eta", "0.01", "--k1", "60", "--k2", "200", "--kappa", "2",
            "--seed", "4", "--out", str(out),
        ]
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["radius"] == 7
        assert doc["found"] is True
        assert all(len(entry) == 2 for entry in doc["verified_at"])


class TestRateTask:
    def test_rate_over_csv_dataset(self, tmp_path, capsys):
        model = {
            "input_dim": 2,
            "layers": [{"type": "dense", "weights": [[0.0, 0.0], [0.1, 0.1]],
                        "bias": [0.0, -9.0], "activation": "identity"}],
        }
        model_file = tmp_path / "affine.json"
        model_file.write_text(json.dumps(model))
        dataset = tmp_path / "centers.csv"
        dataset.write_text("0.1,0.1\n0.5,0.5\n0.9,0.9\n")
        out = tmp_path / "rate.json"
        argv = [
            "rate", "--model", str(model_file), "--dataset", str(dataset), "--radius", "0.25",
            "--clip", "0,1", "--eps", "0.1", "--eta", "0.01", "--k1", "60", "--k2", "200",
            "--kappa", "3", "--seed", "2", "--out", str(out),
        ]
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["rate"] == 1.0
        robust_count = sum(v == "pac_model_robust" for v in doc["verdicts"])
        assert robust_count == round(doc["rate"] * len(doc["verdicts"]))

    def test_rate_over_directory_dataset(self, tmp_path, capsys):
        model = {
            "input_dim": 2,
            "layers": [{"type": "dense", "weights": [[0.0, 0.0], [0.1, 0.1]],
                        "bias": [0.0, -9.0], "activation": "identity"}],
        }
        model_file = tmp_path / "affine.json"
        model_file.write_text(json.dumps(model))
        dataset = tmp_path / "centers"
        dataset.mkdir()
        (dataset / "a.csv").write_text("0.2,0.2\n")
        (dataset / "b.csv").write_text("0.7,0.7\n")
        argv = [
            "rate", "--model", str(model_file), "--dataset", str(dataset), "--radius", "0.2",
            "--clip", "0,1", "--eps", "0.1", "--eta", "0.01", "--k1", "60", "--k2", "200",
            "--kappa", "3", "--seed", "2",
        ]
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        assert "rate: 1.0000 robust over 2 inputs" in stdout


class TestBoundTask:
    def test_bound_included_in_report(self, refnet_file, tmp_path, capsys):
        out = tmp_path / "bound.json"
        argv = [
            "bound", "--model", str(refnet_file), "--center", "0,0", "--radius", "1",
            "--no-clip", "--eps", "0.01", "--eta", "0.001", "--k1", "500", "--k2", "2182",
            "--kappa", "3", "--seed", "7", "--lipschitz", "30", "--out", str(out),
        ]
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["bound_is_diagnostic"] is True
        assert 0 <= doc["bound"] <= 1


class TestEntryPoint:
    def test_module_invocation(self, refnet_file):
        proc = subprocess.run(
            [sys.executable, "-m", "pacmodel", "calc", "--eps", "0.01", "--eta", "0.001",
             "--m", "2", "--n", "2"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert "K=2182" in proc.stdout

    def test_no_arguments_is_usage(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pacmodel"], capture_output=True, text=True, timeout=60
        )
        assert proc.returncode == 2


class TestCanonicalJson:
    def test_sorted_keys_and_float_format(self):
        text = canonical_json({"b": 0.1, "a": [1, None, True, -0.0], "c": "x\n"})
        assert text == '{"a":[1,null,true,0],"b":0.10000000000000001,"c":"x\\n"}'

    def test_round_trips_through_stdlib(self):
        doc = {"values": [1.5, 2**-40, 12345.678901234567], "n": 7, "s": "quote\"here"}
        parsed = json.loads(canonical_json(doc))
        assert parsed["values"] == doc["values"]
        assert parsed["s"] == doc["s"]

    def test_numpy_types_supported(self):
        text = canonical_json({"a": np.float64(0.5), "b": np.int64(3), "c": np.arange(3)})
        assert text == '{"a":0.5,"b":3,"c":[0,1,2]}'

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})
