import csv
import io
import json

import numpy as np
import pytest
from _oracles import sec_5_1_closed_forms

from mfis.cli import RUN_COLUMNS, main

SEC51_CONFIG = """\
[model]
name = "sec_5_1"

[sim]
N = [3, 4]
M = 300
dt = 0.01
seed = 5

[policy]
names = ["lq_optimal", "zero"]

[output]
timing = false
"""


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def run_cli(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SEC51_CONFIG)
    return p


class TestRun:
    def test_rows_and_columns(self, config, capsys):
        code, out, _ = run_cli(["run", "--config", str(config), "-q"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == ",".join(RUN_COLUMNS)
        rows = rows_of(out)
        assert [(r["N"], r["policy"]) for r in rows] == [("3", "lq_optimal"), ("3", "zero"), ("4", "lq_optimal"), ("4", "zero")]
        for r in rows:
            assert r["wall_time_s"] == ""
            assert float(r["exact_value"]) > 0
            assert float(r["estimate"]) == pytest.approx(float(r["exact_value"]), rel=0.3)
        assert float(rows[0]["exact_rel_error"]) == 0.0

    def test_full_precision(self, config, capsys):
        _, out, _ = run_cli(["run", "--config", str(config), "-q"], capsys)
        est = rows_of(out)[0]["estimate"]
        assert len(est.replace("0.", "").lstrip("0")) >= 15

    def test_flags_override_file(self, config, capsys, tmp_path):
        out_path = tmp_path / "o.csv"
        code, out, _ = run_cli(
            ["run", "--config", str(config), "--n", "2", "--m", "50", "--policy", "zero",
             "--dt", "0.05", "--out", str(out_path), "-q"], capsys)
        assert code == 0 and out == ""
        rows = rows_of(out_path.read_text())
        assert len(rows) == 1 and rows[0]["N"] == "2" and rows[0]["M"] == "50" and rows[0]["dt"] == "0.050000000000000003"

    def test_timing_column_filled_by_default(self, capsys):
        _, out, _ = run_cli(["run", "--n", "2", "--m", "20", "--dt", "0.1", "--policy", "zero", "-q"], capsys)
        assert float(rows_of(out)[0]["wall_time_s"]) >= 0

    def test_nonsmooth_no_exact(self, capsys):
        _, out, _ = run_cli(["run", "--model", "abs_outside", "--n", "2", "--m", "50", "--dt", "0.05", "-q"], capsys)
        rows = rows_of(out)
        assert {r["policy"] for r in rows} == {"zero", "sign_outside"}
        assert all(r["exact_value"] == "" and r["exact_rel_error"] == "" for r in rows)

    def test_refine_halves_dt(self, capsys):
        code, out, _ = run_cli(["run", "--n", "2", "--m", "200", "--dt", "0.1", "--policy", "lq_optimal",
                                "--refine", "0.5", "-q"], capsys)
        assert code == 0
        assert float(rows_of(out)[0]["dt"]) == pytest.approx(0.05)

    def test_samples_csv(self, capsys, tmp_path):
        p = tmp_path / "samples.csv"
        run_cli(["run", "--n", "2", "--m", "10", "--dt", "0.1", "--policy", "zero", "--samples-out", str(p), "-q"], capsys)
        lines = p.read_text().splitlines()
        assert lines[0] == "sample_index,g_terminal,log_weight" and len(lines) == 11

    def test_worker_count_does_not_change_output(self, config, capsys):
        _, a, _ = run_cli(["run", "--config", str(config), "--workers", "1", "-q"], capsys)
        _, b, _ = run_cli(["run", "--config", str(config), "--workers", "3", "-q"], capsys)
        assert a == b


class TestConfigErrors:
    def write(self, tmp_path, text):
        p = tmp_path / "bad.toml"
        p.write_text(text)
        return str(p)

    def test_zero_samples_rejected(self, tmp_path, capsys):
        path = self.write(tmp_path, '[model]\nname = "sec_5_1"\n[sim]\nM = 0\n')
        code, _, err = run_cli(["run", "--config", path], capsys)
        assert code == 2
        assert ":4: [sim] M" in err and "positive" in err

    def test_syntax_error_has_line(self, tmp_path, capsys):
        path = self.write(tmp_path, '[model]\nname = "sec_5_1"\n[sim]\nN = [5,\n')
        code, _, err = run_cli(["run", "--config", path], capsys)
        assert code == 2 and "line" in err

    def test_unknown_field(self, tmp_path, capsys):
        path = self.write(tmp_path, '[model]\nname = "sec_5_1"\n\n[sim]\nsteps = 4\n')
        code, _, err = run_cli(["run", "--config", path], capsys)
        assert code == 2 and ":5: [sim] steps" in err

    def test_unknown_model(self, tmp_path, capsys):
        path = self.write(tmp_path, '[model]\nname = "nope"\n')
        code, _, err = run_cli(["run", "--config", path], capsys)
        assert code == 2 and "[model] name" in err

    def test_unknown_policy(self, capsys):
        code, _, err = run_cli(["run", "--policy", "magic"], capsys)
        assert code == 2 and "magic" in err

    def test_explicit_model_needs_g_and_y(self, tmp_path, capsys):
        path = self.write(tmp_path, "[model]\nB = -1.0\nBbar = 2.0\nsigma = 0.5\n")
        code, _, err = run_cli(["run", "--config", path], capsys)
        assert code == 2 and "[g]" in err

    def test_explicit_model(self, tmp_path, capsys):
        path = self.write(tmp_path, (
            "[model]\nB = -1.0\nBbar = 2.0\nsigma = 0.5\n"
            "[g]\ntype = \"quadratic\"\nP2 = 1.0\n"
            "[sim]\nN = [2]\nM = 20\ndt = 0.1\ny = 0.2\n"
            "[output]\ntiming = false\n"))
        code, out, _ = run_cli(["run", "--config", path, "-q"], capsys)
        assert code == 0 and rows_of(out)[0]["policy"] == "zero"

    def test_missing_file(self, capsys):
        code, _, err = run_cli(["run", "--config", "/nonexistent/x.toml"], capsys)
        assert code == 2 and "cannot read" in err

    def test_bad_sample_count_flag(self, capsys):
        with pytest.raises(SystemExit):
            main(["run", "--m", "0"])


class TestPrintConfig:
    EXPECTED = {
        "example_4_1": (1.0, -1.0, 0.5, 0.1),
        "example_4_2": (-1.0, 0.0, 1.0, 0.5),
        "sec_5_1": (-1.0, 2.0, 0.5, 0.2),
        "abs_outside": (-1.0, 2.0, 0.5, 0.4),
        "abs_inside": (-1.0, 2.0, 0.5, 0.4),
    }

    @pytest.mark.parametrize("name", sorted(EXPECTED))
    def test_named_examples(self, name, capsys):
        code, out, _ = run_cli(["run", "--model", name, "--print-config"], capsys)
        assert code == 0
        d = json.loads(out)
        B, Bbar, sigma, y = self.EXPECTED[name]
        assert d["model"]["B"] == [[B]] and d["model"]["Bbar"] == [[Bbar]] and d["model"]["sigma"] == [sigma]
        assert d["model"]["b0"] == [0.0]
        assert d["sim"]["y"] == y and d["sim"]["T"] == 1.0 and d["sim"]["s"] == 0.0
        assert d["sim"]["dt"] == "0.01/N" and d["sim"]["M"] == 100000

    def test_terminal_functionals(self, capsys):
        _, out, _ = run_cli(["run", "--model", "sec_5_1", "--print-config"], capsys)
        assert json.loads(out)["g"] == {"type": "quadratic", "P2": [[1.0]], "p1": [0.0], "Pbar2": [[0.0]], "p2": 0.0}
        _, out, _ = run_cli(["run", "--model", "example_4_1", "--print-config"], capsys)
        assert json.loads(out)["g"]["p1"] == [1.0]
        _, out, _ = run_cli(["run", "--model", "abs_inside", "--print-config"], capsys)
        assert json.loads(out)["g"] == {"type": "mean_of_abs"}

    def test_env_workers(self, capsys, monkeypatch):
        monkeypatch.setenv("WIP_SAMPLER_WORKERS", "3")
        _, out, _ = run_cli(["run", "--print-config"], capsys)
        assert json.loads(out)["workers"] == 3
        _, out, _ = run_cli(["run", "--print-config", "--workers", "2"], capsys)
        assert json.loads(out)["workers"] == 2


def test_riccati_dump(capsys):
    code, out, _ = run_cli(["riccati-dump", "--points", "11"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert list(rows[0]) == ["t", "Lambda_0_0", "Gamma_0_0", "gamma_0", "chi", "chi_correction"]
    assert len(rows) == 11
    t = np.array([float(r["t"]) for r in rows])
    L, G, _, chi = sec_5_1_closed_forms(t)
    np.testing.assert_allclose([float(r["Lambda_0_0"]) for r in rows], L, atol=1e-8)
    np.testing.assert_allclose([float(r["chi"]) for r in rows], chi, atol=1e-8)


def test_riccati_dump_rejects_nonsmooth(capsys):
    code, _, err = run_cli(["riccati-dump", "--model", "abs_outside"], capsys)
    assert code == 2 and "quadratic" in err


class TestChecks:
    def test_girsanov_pass(self, capsys):
        code, out, _ = run_cli(["girsanov-check", "--n", "3", "--m", "2000", "--dt", "0.01"], capsys)
        assert code == 0 and "PASS" in out

    def test_girsanov_zero_policy(self, capsys):
        code, out, _ = run_cli(["girsanov-check", "--n", "3", "--m", "500", "--dt", "0.01", "--policy", "zero"], capsys)
        assert code == 0 and "diff 0.000e+00" in out

    def test_girsanov_mismatch_fails(self, capsys):
        code, out, _ = run_cli(["girsanov-check", "--n", "3", "--m", "2000", "--dt", "0.01",
                                "--tilted-policy", "zero"], capsys)
        assert code == 1 and "FAIL" in out

    def test_small_noise(self, capsys):
        code, out, _ = run_cli(["small-noise-check", "--n", "4", "--m", "1000", "--dt", "0.01"], capsys)
        assert code == 0
        assert out.count("agree") == 2

    def test_small_noise_rejects_quadratic(self, capsys):
        code, _, err = run_cli(["small-noise-check", "--model", "sec_5_1", "--m", "10"], capsys)
        assert code == 1 and "P2" in err


class TestTable:
    def test_table_1_layout(self, capsys):
        code, out, _ = run_cli(["table", "1", "--n", "3", "--m", "200", "--dt", "0.01", "-q"], capsys)
        assert code == 0
        rows = rows_of(out)
        assert list(rows[0]) == ["N", "is_estimate", "is_rel_error", "mc_estimate", "mc_rel_error",
                                 "exact_value", "mc_rel_error_se", "wide_error"]
        assert float(rows[0]["exact_value"]) > 0

    def test_table_2_tiny_sample_flags_wide_error(self, capsys):
        code, out, _ = run_cli(["table", "2", "--n", "30", "--m", "1000", "--dt", "0.005", "-q"], capsys)
        assert code == 0
        row = rows_of(out)[0]
        assert "exact_value" not in row
        rho, se = float(row["mc_rel_error"]), float(row["mc_rel_error_se"])
        assert row["wide_error"] == ("1" if se > 0.5 * rho else "0")

    def test_wide_error_set_for_two_samples(self, capsys):
        # two samples give an SE of the same order as the estimate itself
        code, out, _ = run_cli(["table", "2", "--n", "20", "--m", "2", "--dt", "0.05", "-q"], capsys)
        assert code == 0
        row = rows_of(out)[0]
        assert float(row["mc_rel_error_se"]) > 0.5 * float(row["mc_rel_error"])
        assert row["wide_error"] == "1"

    def test_table_3_mc_rel_error(self, capsys):
        code, out, _ = run_cli(["table", "3", "--n", "5", "--m", "100000", "--dt", "0.002", "-q"], capsys)
        assert code == 0
        row = rows_of(out)[0]
        rho, se = float(row["mc_rel_error"]), float(row["mc_rel_error_se"])
        assert abs(rho - 2.3263) <= 3 * se
        assert float(row["is_rel_error"]) < rho / 3
