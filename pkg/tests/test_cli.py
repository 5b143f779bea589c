import json
import subprocess
import sys

import pytest

from sparse_spectra import cli
from sparse_spectra.spectral import EmpiricalMeasure


def write_config(tmp_path, **fields):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(fields))
    return str(path)


def read_summary(out):
    return json.loads((out / "summary.json").read_text())


def strip_header(text):
    lines = text.splitlines()
    assert lines[0].startswith("# metadata: ")
    return json.loads(lines[0][len("# metadata: "):]), "\n".join(lines[1:]) + "\n"


class TestConfig:
    def test_defaults(self):
        cfg = cli.parse_config("{}")
        assert cfg.experiment == "spectrum" and cfg.model.n == 600 and cfg.trials == 1

    def test_syntax_error_names_line(self):
        with pytest.raises(cli.ConfigError, match="line 2"):
            cli.parse_config('{\n "trials": ,\n}', "bad.json")

    def test_type_error_names_field(self):
        with pytest.raises(cli.ConfigError, match="model.n"):
            cli.parse_config('{"model": {"n": "big"}}')

    def test_unknown_field(self):
        with pytest.raises(cli.ConfigError, match="model.size"):
            cli.parse_config('{"model": {"size": 3}}')

    def test_override_restrictions(self):
        cfg = cli.parse_config('{"overrides": {"C_FIT.slice": 6}}')
        assert cli.resolved_constants(cfg)["C_FIT"]["slice"] == 6
        with pytest.raises(cli.ConfigError, match="overrides.DENSE_CAP"):
            cli.parse_config('{"overrides": {"DENSE_CAP": 6}}')

    def test_schema_version(self):
        with pytest.raises(cli.ConfigError, match="schema"):
            cli.parse_config('{"schema": 99}')

    def test_digest_ignores_jobs_and_out(self):
        a = cli.parse_config('{"jobs": 1, "out": "x"}')
        b = cli.parse_config('{"jobs": 8, "out": "y"}')
        c = cli.parse_config('{"model": {"seed": 3}}')
        assert a.digest() == b.digest() != c.digest()


class TestRunExperiment:
    def test_spectrum_cardinality(self, tmp_path):
        out = tmp_path / "spec"
        cfg = write_config(tmp_path, model={"n": 1000, "d": 4.0, "kind": "iid"})
        assert cli.main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
        svg = (out / "spectrum.svg").read_text()
        assert svg.count('class="eig"') == 1000 and "<!-- metadata:" in svg
        meta, body = strip_header((out / "eigenvalues.csv").read_text())
        assert body.count("\n") == 1001 and "\r" not in body
        meas = EmpiricalMeasure.from_csv(body)
        assert meas.size == 1000 and meas.kind == "complex"
        assert meta["seed"] == 0 and "constants" in meta and "versions" in meta and "config_hash" in meta

    def test_subcritical_report(self, tmp_path):
        out = tmp_path / "sub"
        cfg = write_config(tmp_path, model={"n": 600, "d": 0.5, "kind": "iid"}, trials=3)
        code = cli.main(["subcritical", "--config", cfg, "--out", str(out)])
        summary = read_summary(out)["summary"]
        assert summary["mean_zero_fraction"] >= summary["mean_trivial_fraction"]
        assert summary["verdicts"]["zero_at_least_trivial_every_trial"]
        assert code == (0 if all(summary["verdicts"].values()) else 2)

    def test_verify_linear_algebra(self, tmp_path):
        out = tmp_path / "suite"
        cfg = write_config(tmp_path, options={"scale": 0.05})
        assert cli.main(["verify-linear-algebra", "--config", cfg, "--out", str(out)]) == 0
        result = read_summary(out)
        assert result["passed"] and len(result["summary"]["checks"]) == 5

    def test_other_experiments(self, tmp_path):
        runs = {
            "logpot": {"model": {"n": 40, "kind": "iid"}, "trials": 2, "options": {"z": [[1, 1], [0.5, 0]]}},
            "moments": {"model": {"n": 200, "kind": "iid"}, "trials": 3},
            "moments-bm": {"model": {"n": 200}, "trials": 2},
            "walk": {"model": {"n": 200, "cutoff": 5}, "walk": {"events": False}, "trials": 2},
            "expansion": {"model": {"n": 200, "kind": "iid"}, "options": {"k_max": 2, "budget": 200}},
            "anticonc": {"options": {"families": ["lkr_single_bernoulli", "slice_half_half"]}},
        }
        for name, fields in runs.items():
            out = tmp_path / name
            code = cli.main([name.split("-")[0], "--config", write_config(tmp_path, **fields), "--out", str(out)])
            result = read_summary(out)
            assert code == (0 if result["passed"] else 2), name
            manifest = json.loads((out / "manifest.json").read_text())
            assert set(manifest["files"]) == {p.name for p in out.iterdir()} - {"manifest.json"}
        assert (tmp_path / "walk" / "walk_trace_0.csv").exists()
        _, body = strip_header((tmp_path / "expansion" / "expansion.csv").read_text())
        assert body.splitlines()[1:] == ["0,1,200,0", "0,2,200,0"]

    def test_experiment_mismatch(self, tmp_path):
        cfg = write_config(tmp_path, experiment="walk")
        assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")]) == 1

    def test_malformed_config_exit(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"trials": "many"}')
        assert cli.main(["spectrum", "--config", str(path)]) == 1
        assert "trials" in capsys.readouterr().err

    def test_resource_limit_exit(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPARSE_SPECTRA_DENSE_CAP", "100")
        cfg = write_config(tmp_path, model={"n": 200, "kind": "iid"})
        assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")]) == 3

    def test_console_script(self, tmp_path):
        out = tmp_path / "cs"
        proc = subprocess.run([sys.executable, "-m", "sparse_spectra.cli", "spectrum", "--out", str(out),
                               "--seed", "4"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert json.loads(proc.stdout)["passed"]
        assert read_summary(out)["metadata"]["seed"] == 4


class TestReplay:
    @pytest.fixture
    def run_dir(self, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, model={"n": 120, "kind": "iid"}, trials=4)
        assert cli.main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
        return out

    def test_identical_after_run(self, run_dir, capsys):
        capsys.readouterr()
        assert cli.main(["replay", str(run_dir / "manifest.json")]) == 0
        assert json.loads(capsys.readouterr().out)["identical"]

    def test_seed_change_reports_diff(self, run_dir, capsys):
        capsys.readouterr()
        assert cli.main(["replay", str(run_dir / "manifest.json"), "--seed", "9"]) == 2
        report = json.loads(capsys.readouterr().out)
        assert not report["identical"] and report["differences"]

    def test_job_width_does_not_matter(self, run_dir, tmp_path):
        assert cli.main(["replay", str(run_dir / "manifest.json"), "--jobs", "3",
                         "--out", str(tmp_path / "wide")]) == 0
        for f in run_dir.iterdir():
            if f.name != "manifest.json":
                assert (tmp_path / "wide" / f.name).read_bytes() == f.read_bytes()

    def test_version_mismatch(self, run_dir):
        path = run_dir / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["versions"]["numpy"] = "0.0.1"
        path.write_text(json.dumps(manifest))
        assert cli.main(["replay", str(path)]) == 4

    def test_unreadable_manifest(self, tmp_path):
        assert cli.main(["replay", str(tmp_path / "missing.json")]) == 1
