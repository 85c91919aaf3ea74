"""End-to-end CLI tests; every subcommand is exercised through main()."""

import json

import numpy as np
import pytest

from mdlmix.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "-o", str(root / "s1.csv"), "--n", "70",
                 "--seed", "1", "--univariate"]) == 0
    assert main(["generate", "-o", str(root / "s2.csv"), "--n", "70",
                 "--seed", "2", "--univariate"]) == 0
    assert main(["fit", str(root / "s1.csv"), "-o", str(root / "m1.json"),
                 "--max-components", "2", "--seed", "1", "--budget", "1500"]) == 0
    assert main(["fit", str(root / "s2.csv"), "-o", str(root / "m2.json"),
                 "--max-components", "2", "--seed", "2", "--budget", "1500"]) == 0
    return root


class TestGenerate:
    def test_deterministic_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["generate", "-o", str(a), "--n", "30", "--seed", "4"]) == 0
        assert main(["generate", "-o", str(b), "--n", "30", "--seed", "4"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_spec_file(self, tmp_path):
        spec = {"components": [
            {"weight": 0.5, "mean": [0.0], "width": [1.0]},
            {"weight": 0.5, "mean": [4.0], "width": [0.5]},
        ]}
        sp = tmp_path / "spec.json"
        sp.write_text(json.dumps(spec))
        out = tmp_path / "s.csv"
        assert main(["generate", "-o", str(out), "--spec", str(sp),
                     "--n", "25", "--seed", "0"]) == 0
        assert np.loadtxt(out, delimiter=",").shape == (25,)


class TestFitEval:
    def test_fit_deterministic(self, workdir, tmp_path):
        out = tmp_path / "m.json"
        assert main(["fit", str(workdir / "s1.csv"), "-o", str(out),
                     "--max-components", "2", "--seed", "1",
                     "--budget", "1500"]) == 0
        assert out.read_bytes() == (workdir / "m1.json").read_bytes()

    def test_eval_own_sample(self, workdir, capsys):
        assert main(["eval", str(workdir / "m1.json"), str(workdir / "s1.csv")]) == 0
        out = capsys.readouterr().out
        assert "total=" in out and "valid=True" in out

    def test_eval_repair_pathological(self, workdir, tmp_path, capsys):
        # open the stored truncation ranges so an outlier invalidates the
        # cost, then ask eval to shrink them back
        doc = json.loads((workdir / "m1.json").read_text())
        doc["trunc_ranges"] = [0.95] * len(doc["trunc_ranges"])
        wide = tmp_path / "wide.json"
        wide.write_text(json.dumps(doc))
        pts = np.loadtxt(workdir / "s1.csv", delimiter=",")
        bad = tmp_path / "bad.csv"
        np.savetxt(bad, np.append(pts, 40.0), delimiter=",")
        assert main(["eval", str(wide), str(bad)]) == 0
        assert "valid=False" in capsys.readouterr().out
        rc = main(["eval", str(wide), str(bad), "--repair",
                   "-o", str(tmp_path / "repaired.json")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "valid=True" in out
        assert (tmp_path / "repaired.json").exists()

    def test_budget_single_number(self, workdir, tmp_path):
        out = tmp_path / "m.json"
        assert main(["fit", str(workdir / "s1.csv"), "-o", str(out),
                     "--max-components", "1", "--seed", "0",
                     "--budget", "800"]) == 0


class TestCrosstab:
    def test_writes_both_forms(self, workdir, tmp_path):
        out = tmp_path / "table"
        rc = main(["crosstab",
                   "--models", str(workdir / "m1.json"), str(workdir / "m2.json"),
                   "--samples", str(workdir / "s1.csv"), str(workdir / "s2.csv"),
                   "-o", str(out)])
        assert rc == 0
        text = out.with_suffix(".txt").read_text()
        assert "relative Q" in text
        doc = json.loads(out.with_suffix(".json").read_text())
        assert doc["rel_q"][0][0] == 0.0
        assert doc["rel_q"][1][1] == 0.0

    def test_mismatched_counts_usage_error(self, workdir, tmp_path):
        rc = main(["crosstab", "--models", str(workdir / "m1.json"),
                   "--samples", str(workdir / "s1.csv"), str(workdir / "s2.csv"),
                   "-o", str(tmp_path / "t")])
        assert rc == 1


class TestPruneErrorsPlot:
    def test_prune_roundtrip(self, workdir, tmp_path, capsys):
        out = tmp_path / "pruned.json"
        rc = main(["prune", str(workdir / "m1.json"), str(workdir / "s1.csv"),
                   "-o", str(out)])
        assert rc == 0
        assert out.exists()

    def test_errors_json(self, workdir, tmp_path, capsys):
        out = tmp_path / "err.json"
        rc = main(["errors", str(workdir / "m1.json"), str(workdir / "s1.csv"),
                   "--method", "simple", "-o", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == "simple"
        assert len(doc["std"]) > 0

    def test_plotdata_files(self, workdir, tmp_path, capsys):
        rc = main(["plotdata", str(workdir / "m1.json"), str(workdir / "s1.csv"),
                   "-o", str(tmp_path / "p"), "--grid", "64"])
        assert rc == 0
        assert (tmp_path / "p_density.csv").exists()
        assert (tmp_path / "p_sample.csv").exists()


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert main(["fit"]) == 1
        assert main(["no-such-command"]) == 1

    def test_malformed_model_is_2(self, workdir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{rubbish")
        assert main(["eval", str(bad), str(workdir / "s1.csv")]) == 2

    def test_missing_file_is_3(self, workdir, tmp_path):
        assert main(["fit", str(tmp_path / "nope.csv"),
                     "-o", str(tmp_path / "m.json")]) == 3
