import json
import subprocess
import sys

from propmech import ExperimentConfig, GeneratorSpec

CLI = [sys.executable, "-m", "propmech.cli"]


def write_config(tmp_path, scheme="standard", trials=3, seed=31, **kw):
    gen = GeneratorSpec(n=(2, 2), m=(1, 1), kinds=("linear",),
                        v_range=(0.5, 2.0), budget_range=(0.5, 2.0),
                        rho={"type": "choice", "values": [0.0, 1.0]})
    cfg = ExperimentConfig(instances=gen, scheme=scheme, trials=trials,
                           seed=seed, max_rounds=80, **kw)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json())
    return path


def run_cli(*args, cwd=None):
    return subprocess.run(CLI + list(args), capture_output=True, text=True,
                          cwd=cwd, timeout=600)


class TestRun:
    def test_writes_csv_and_figure(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "results"
        proc = run_cli("run", "--config", str(cfg), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "results.csv").exists()
        assert (tmp_path / "results.png").exists()

    def test_deterministic_csv(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("run", "--config", str(cfg), "--out", str(a),
                       "--no-plots").returncode == 0
        assert run_cli("run", "--config", str(cfg), "--out", str(b),
                       "--no-plots").returncode == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("run", "--config", str(cfg), "--out", str(a), "--no-plots")
        run_cli("run", "--config", str(cfg), "--out", str(b), "--seed", "99",
                "--no-plots")
        assert (tmp_path / "a.csv").read_text() != (tmp_path / "b.csv").read_text()

    def test_json_format(self, tmp_path):
        cfg = write_config(tmp_path, trials=2)
        out = tmp_path / "res"
        proc = run_cli("run", "--config", str(cfg), "--out", str(out),
                       "--format", "json", "--no-plots")
        assert proc.returncode == 0
        payload = json.loads((tmp_path / "res.json").read_text())
        assert len(payload) == 2


class TestSweep:
    def test_table_rows_and_figure(self, tmp_path):
        gen = GeneratorSpec(n=(2, 2), m=(1, 1), kinds=("linear",),
                            v_range=(1.2, 2.5), budget_range=(0.13, 0.14),
                            rho={"type": "uniform", "lo": 0.0, "hi": 1.0},
                            value_structure="rank-one")
        cfg = ExperimentConfig(instances=gen, scheme="power", trials=3,
                               seed=17, init="tight", max_rounds=25)
        path = tmp_path / "config.json"
        path.write_text(cfg.to_json())
        out = tmp_path / "sweep"
        proc = run_cli("sweep", "--config", str(path), "--out", str(out),
                       "--n-values", "2,3")
        assert proc.returncode == 0, proc.stderr
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3  # header + one row per n
        assert (tmp_path / "sweep.png").exists()
        assert (tmp_path / "sweep_rows.csv").exists()


class TestVerifyCommand:
    def test_round_trip_verification(self, tmp_path):
        cfg = write_config(tmp_path, trials=2)
        out = tmp_path / "res"
        run_cli("run", "--config", str(cfg), "--out", str(out), "--no-plots")
        proc = run_cli("verify", "--config", str(cfg), "--results",
                       str(tmp_path / "res.csv"))
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "MISMATCH" not in proc.stdout

    def test_tampered_results_fail(self, tmp_path):
        cfg = write_config(tmp_path, trials=1)
        out = tmp_path / "res"
        run_cli("run", "--config", str(cfg), "--out", str(out), "--no-plots")
        csv_path = tmp_path / "res.csv"
        lines = csv_path.read_text().splitlines()
        head, row = lines[0].split(","), lines[1].split(",")
        row[head.index("lw_eq")] = "123.0"
        csv_path.write_text("\n".join([lines[0], ",".join(row)]) + "\n")
        proc = run_cli("verify", "--config", str(cfg), "--results", str(csv_path))
        assert proc.returncode == 1
        assert "MISMATCH" in proc.stdout


class TestConvert:
    def test_report_written(self, tmp_path):
        cfg = write_config(tmp_path, trials=1)
        out = tmp_path / "conv"
        proc = run_cli("convert", "--config", str(cfg), "--out", str(out),
                       "--draws", "20000")
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "conv.json").read_text())
        assert payload["rng_algorithm"] == "philox"
        assert payload["draws"] == 20000
        assert payload["agents"]

    def test_deterministic_report(self, tmp_path):
        cfg = write_config(tmp_path, trials=1)
        run_cli("convert", "--config", str(cfg), "--out", str(tmp_path / "c1"),
                "--draws", "5000")
        run_cli("convert", "--config", str(cfg), "--out", str(tmp_path / "c2"),
                "--draws", "5000")
        assert (tmp_path / "c1.json").read_bytes() == (tmp_path / "c2.json").read_bytes()


class TestSearch:
    def test_writes_best_instance(self, tmp_path):
        cfg = write_config(tmp_path, trials=1, seed=9)
        out = tmp_path / "found"
        proc = run_cli("search", "--config", str(cfg), "--out", str(out),
                       "--budget", "5")
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "found.json").read_text())
        assert "instance" in payload and "ratio" in payload
