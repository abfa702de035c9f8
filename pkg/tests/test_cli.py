import csv
import json
import os
import subprocess
import sys

import pytest

from pooled_dp.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def config(name):
    return os.path.join(CONFIGS, name)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1, out
    return code, json.loads(out[0])


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


SMALL_CBM = {
    "schema_version": 1, "kind": "cbm", "n_systems": 1, "horizon": 4,
    "prior": {"mean_lambda": 0.75, "cv_lambda": 1.0}, "xi": 4, "cp": 1.0, "cu": 10.0,
}


class TestSolve:
    def test_policy_rows(self, capsys, tmp_path):
        code, out = run(capsys, "solve-cbm", "--config", config("control_limits_n2.json"), "--out", str(tmp_path))
        assert code == 0
        with open(out["files"]["policy"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "k", "control_limit"]
        assert len(rows) - 1 == 50 * (2000 + 1)
        assert out["diagnostics"]["k_cap"] == 2000

    def test_values_export(self, capsys, tmp_path):
        path = write(tmp_path, "c.json", SMALL_CBM)
        code, out = run(capsys, "solve-cbm", "--config", path, "--out", str(tmp_path), "--emit-values")
        assert code == 0
        with open(out["files"]["values"]) as fh:
            rows = list(csv.DictReader(fh))
        k_cap = out["diagnostics"]["k_cap"]
        assert len(rows) == 5 * 5 * (k_cap + 1)
        first = rows[0]
        assert (first["t"], first["x"], first["k"]) == ("0", "0", "0")
        assert float(first["value"]) == out["value0"]

    def test_n_systems_flag_matches_config(self, capsys, tmp_path):
        doc = dict(SMALL_CBM, n_systems=3)
        flagged, direct = tmp_path / "flag", tmp_path / "direct"
        code1, out1 = run(capsys, "solve-cbm", "--config", write(tmp_path, "n3.json", doc),
                          "--n-systems", "1", "--out", str(flagged), "--no-timing")
        code2, out2 = run(capsys, "solve-cbm", "--config", write(tmp_path, "n1.json", SMALL_CBM),
                          "--out", str(direct), "--no-timing")
        assert code1 == code2 == 0
        assert out1["value0"] == out2["value0"]
        assert out1["diagnostics"] == out2["diagnostics"]
        assert (flagged / "policy.csv").read_bytes() == (direct / "policy.csv").read_bytes()

    def test_rerun_identical(self, capsys, tmp_path):
        path = write(tmp_path, "c.json", SMALL_CBM)
        outs = []
        for sub in ("a", "b"):
            _, out = run(capsys, "solve-cbm", "--config", path, "--out", str(tmp_path / sub),
                         "--emit-values", "--no-timing")
            outs.append(out)
        for name in ("policy.csv", "values.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert outs[0]["value0"] == outs[1]["value0"]
        assert "solve_ms" not in outs[0]["diagnostics"]

    def test_spares(self, capsys, tmp_path):
        code, out = run(capsys, "solve-spares", "--config", config("verify_spares_n2.json"),
                        "--out", str(tmp_path), "--system", "2")
        assert code == 0 and out["system"] == 2
        with open(out["files"]["policy"]) as fh:
            assert next(csv.reader(fh)) == ["t", "k", "order_up_to"]

    def test_tail_eps_override(self, capsys, tmp_path):
        path = write(tmp_path, "c.json", SMALL_CBM)
        _, out = run(capsys, "solve-cbm", "--config", path, "--out", str(tmp_path), "--tail-eps", "1e-6")
        assert out["diagnostics"]["tail_eps"] == 1e-6


class TestValidation:
    @pytest.mark.parametrize(
        "change, field",
        [
            ({"cp": 20.0}, "cp"),
            ({"xi": 0}, "xi"),
            ({"schema_version": 2}, "schema_version"),
            ({"kind": "nope"}, "kind"),
            ({"truncation": {"tail": 1}}, "truncation"),
        ],
    )
    def test_bad_field_exit_1(self, capsys, tmp_path, change, field):
        path = write(tmp_path, "bad.json", dict(SMALL_CBM, **change))
        code, out = run(capsys, "solve-cbm", "--config", path, "--out", str(tmp_path))
        assert code == 1
        assert out["field"] == field
        assert field in out["error"]

    def test_missing_field(self, capsys, tmp_path):
        doc = {k: v for k, v in SMALL_CBM.items() if k != "horizon"}
        code, out = run(capsys, "solve-cbm", "--config", write(tmp_path, "m.json", doc), "--out", str(tmp_path))
        assert code == 1 and out["field"] == "horizon"

    def test_unreadable(self, capsys, tmp_path):
        code, out = run(capsys, "solve-cbm", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path))
        assert code == 1 and out["field"] == "config"

    def test_usage_error_exit_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["solve-cbm"])
        assert exc.value.code == 1

    def test_bounds_too_tight_exit_2(self, capsys, tmp_path):
        doc = json.loads(open(config("verify_spares_n2.json")).read())
        doc.update(x_lo=-2, a_hi=2)
        code, out = run(capsys, "solve-spares", "--config", write(tmp_path, "s.json", doc), "--out", str(tmp_path))
        assert code == 2 and out["t"] is not None


class TestVerify:
    @pytest.mark.parametrize("name", ["verify_cbm_n2.json", "verify_cbm_n3.json", "verify_spares_n2.json"])
    def test_shipped_configs(self, capsys, name):
        code, out = run(capsys, "verify-decomposition", "--config", config(name))
        assert code == 0 and out["ok"]
        assert out["relative_gap"] <= 1e-9

    def test_negative_control(self, capsys):
        code, out = run(capsys, "verify-decomposition", "--config", config("verify_cbm_n2.json"),
                        "--debug-oracle-tail-eps", "1e-3")
        assert code == 3 and not out["ok"]

    def test_too_large(self, capsys, tmp_path):
        doc = dict(SMALL_CBM, n_systems=5)
        code, out = run(capsys, "verify-decomposition", "--config", write(tmp_path, "big.json", doc))
        assert code == 2
        assert "N <= 4" in out["error"]


TINY_SPEC = {
    "schema_version": 1, "kind": "testbed", "n_values": [1, 2], "xi_values": [3],
    "T_values": [4], "cp_values": [1.0], "cu": 10.0, "mean_lambda_values": [0.75],
    "cv_lambda_values": [0.5, 2.0],
}


class TestSweepReport:
    def test_sweep_then_report(self, capsys, tmp_path):
        spec = write(tmp_path, "spec.json", TINY_SPEC)
        out_dir = tmp_path / "run"
        code, out = run(capsys, "sweep", "--config", spec, "--out", str(out_dir), "--jobs", "1", "--no-timing")
        assert code == 0 and out["records"] == 4
        first = (out_dir / "results.csv").read_bytes()
        run(capsys, "sweep", "--config", spec, "--out", str(out_dir), "--no-timing")
        assert (out_dir / "results.csv").read_bytes() == first

        code, rep = run(capsys, "report", "--in", str(out_dir), "--group-by", "cv_lambda")
        assert code == 0
        assert len(rep["rows"]) == 2 * 2 + 2
        assert rep["rows"][-1]["group_value"] == "Total"
        assert all(r["mean_delta"] == 0.0 for r in rep["rows"] if r["N"] == 1)

    def test_report_incomplete(self, capsys, tmp_path):
        spec = write(tmp_path, "spec.json", TINY_SPEC)
        out_dir = tmp_path / "run"
        run(capsys, "sweep", "--config", spec, "--out", str(out_dir), "--no-timing")
        lines = (out_dir / "results.csv").read_text().splitlines()
        (out_dir / "results.csv").write_text("\n".join(lines[:-1]) + "\n")
        code, out = run(capsys, "report", "--in", str(out_dir))
        assert code == 1
        assert out["missing"] == [lines[-1].split(",")[0]]

    def test_jobs_env_default(self, monkeypatch):
        from pooled_dp.cli import build_parser

        monkeypatch.setenv("POOLED_DP_JOBS", "3")
        args = build_parser().parse_args(["sweep", "--out", "x"])
        assert args.jobs == 3


class TestCurves:
    def test_policy_curve(self, capsys, tmp_path):
        doc = dict(SMALL_CBM, n_systems=2, horizon=6, truncation={"k_cap": 40})
        path = write(tmp_path, "c.json", doc)
        code, out = run(capsys, "policy-curve", "--config", path, "--epochs", "0,5",
                        "--out", str(tmp_path / "curve.csv"))
        assert code == 0 and out["rows"] == 2 * 41
        code, out = run(capsys, "policy-curve", "--config", path, "--epochs", "6",
                        "--out", str(tmp_path / "curve.csv"))
        assert code == 1 and out["field"] == "epochs"

    def test_savings_curve(self, capsys, tmp_path):
        fam = {"schema_version": 1, "kind": "family", "xi": 3, "T": 5, "cp": 0.5, "mean_lambda": 0.75}
        code, out = run(capsys, "savings-curve", "--config", write(tmp_path, "f.json", fam),
                        "--n-values", "1,2", "--cv-values", "1,4", "--out", str(tmp_path / "s.csv"))
        assert code == 0 and out["rows"] == 4
        with open(tmp_path / "s.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["cv", "N", "delta_pct"]
        assert rows[1][2] == "0.0"


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "pooled_dp.cli", "verify-decomposition", "--config",
         config("verify_cbm_n2.json")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
