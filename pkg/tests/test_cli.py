import csv
import io

import numpy as np
import pytest

from ttreg import checks, cli, plotting


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestChecks:
    def test_all_pass_on_fixed_seeds(self):
        for check, dev in checks.run_checks(range(3)):
            assert dev <= check.tolerance, check.name

    def test_fault_injection_trips_every_check(self):
        for check, dev in checks.run_checks(range(2), perturb=True):
            assert dev > check.tolerance, check.name

    def test_names_unique(self):
        names = [c.name for c in checks.CHECKS]
        assert len(names) == len(set(names))


class TestEquiv:
    def test_passes_and_reports_every_check(self, capsys):
        code, out, _ = run(capsys, "--task", "equiv", "--seeds", "0,1")
        rows = table(out)
        assert code == 0
        assert {r["check"] for r in rows} == {c.name for c in checks.CHECKS}
        assert all(r["status"] == "pass" for r in rows)

    def test_perturb_fails(self, capsys):
        code, out, err = run(capsys, "--task", "equiv", "--seed", "0", "--perturb")
        assert code == cli.EXIT_FAIL
        assert any(r["status"] == "FAIL" for r in table(out))
        assert "failed" in err

    def test_deterministic(self, capsys):
        a = run(capsys, "--task", "equiv", "--seed", "7")[1]
        b = run(capsys, "--task", "equiv", "--seed", "7")[1]
        assert a == b

    def test_float_format(self, capsys):
        out = run(capsys, "--task", "equiv", "--seed", "7")[1]
        assert out.splitlines()[0] == "check,max_deviation,tolerance,status"
        for r in table(out):
            assert r["max_deviation"] == f"{float(r['max_deviation']):.9g}"


class TestNonstat:
    def test_row_count_and_columns(self, capsys):
        code, out, _ = run(capsys, "--task", "nonstat", "--seeds", "0,1", "--T", "32", "--d-model", "8")
        rows = table(out)
        assert code == 0
        assert list(rows[0]) == ["step", "layer_name", "seed", "loss"]
        assert len(rows) == 31 * len(cli.NONSTAT_LAYERS) * 2

    def test_sorted(self, capsys):
        out = run(capsys, "--task", "nonstat", "--seeds", "1,0", "--T", "16", "--d-model", "4")[1]
        keys = [(int(r["step"]), r["layer_name"], int(r["seed"])) for r in table(out)]
        assert keys == sorted(keys)

    def test_noiseless_stream_converges(self, capsys):
        out = run(
            capsys, "--task", "nonstat", "--layers", "nlms", "--seed", "0", "--T", "64", "--d-model", "8", "--noise", "0"
        )[1]
        losses = np.array([float(r["loss"]) for r in table(out)])
        assert np.all(losses[20:] < 1e-6)

    def test_writes_file_and_figure(self, tmp_path, capsys):
        out = tmp_path / "ns.csv"
        fig = tmp_path / "ns.png"
        code, stdout, _ = run(
            capsys, "--task", "nonstat", "--seed", "0", "--T", "16", "--d-model", "4", "--out", str(out), "--figure", str(fig)
        )
        assert code == 0 and stdout == ""
        assert out.read_text().startswith("step,layer_name,seed,loss\n")
        assert fig.read_bytes()[:4] == b"\x89PNG"

    def test_unwritable_path(self, tmp_path, capsys):
        code, _, err = run(capsys, "--task", "nonstat", "--seed", "0", "--T", "8", "--d-model", "2", "--out", str(tmp_path / "no" / "x.csv"))
        assert code == cli.EXIT_ERROR
        assert "x.csv" in err

    def test_bad_config(self, capsys):
        code, _, err = run(capsys, "--task", "nonstat", "--seed", "0", "--rho", "1.5")
        assert code == cli.EXIT_ERROR
        assert "ConfigInvalid" in err


class TestMqar:
    def test_linear_attention_solves_cues_only(self, capsys):
        code, out, _ = run(
            capsys, "--task", "mqar", "--P", "64", "--T", "64,512", "--layers", "linear_attention", "--seeds", "0,1", "--instances", "5"
        )
        rows = table(out)
        assert code == 0
        assert [(r["T"], r["embedding_kind"], r["accuracy"], r["num_instances"]) for r in rows] == [
            ("64", "cues_only", "1", "10"),
            ("512", "cues_only", "1", "10"),
        ]

    def test_single_pair_every_layer(self, capsys):
        out = run(capsys, "--task", "mqar", "--P", "1", "--T", "8", "--layers", "linear_attention,rls,softmax", "--seed", "0")[1]
        assert all(r["accuracy"] == "1" for r in table(out))

    def test_rls_above_linear_attention_past_capacity(self, capsys):
        out = run(capsys, "--task", "mqar", "--P", "128", "--T", "128", "--seeds", "0,1,2,3", "--instances", "5")[1]
        acc = {r["layer_name"]: float(r["accuracy"]) for r in table(out)}
        assert table(out)[0]["embedding_kind"] == "gaussian"
        assert acc["rls"] > acc["linear_attention"]

    def test_figure(self, tmp_path, capsys):
        fig = tmp_path / "m.png"
        code = run(capsys, "--task", "mqar", "--P", "4", "--T", "8,16", "--seed", "0", "--figure", str(fig))[0]
        assert code == 0 and fig.stat().st_size > 0

    def test_invalid_embedding_for_grid(self, capsys):
        code, _, err = run(capsys, "--task", "mqar", "--P", "40", "--T", "8", "--embedding", "orthonormal", "--seed", "0")
        assert code == cli.EXIT_ERROR
        assert "ConfigInvalid" in err


class TestBound:
    def test_default_instances_hold(self, capsys):
        code, out, _ = run(capsys, "--task", "bound")
        rows = table(out)
        assert code == 0
        assert len(rows) == 100
        assert all(float(r["ratio"]) <= 1 for r in rows)
        assert [int(r["instance"]) for r in rows] == list(range(100))

    def test_rank_deficient_exits_nonzero(self, capsys):
        code, out, err = run(capsys, "--task", "bound", "--T", "3", "--d-model", "6")
        assert code == cli.EXIT_ERROR
        assert "RankDeficient" in err
        assert out == ""

    def test_figure(self, tmp_path, capsys):
        fig = tmp_path / "b.png"
        assert run(capsys, "--task", "bound", "--instances", "5", "--figure", str(fig))[0] == 0
        assert fig.stat().st_size > 0


class TestPlotting:
    def test_equiv_figure(self, tmp_path):
        rows = [("a", 1e-12, 1e-10, "pass"), ("b", 0.0, 0.0, "pass"), ("c", 1e-3, 1e-6, "FAIL")]
        plotting.plot_equiv(rows, tmp_path / "e.png")
        assert (tmp_path / "e.png").stat().st_size > 0

    def test_nonstat_single_seed(self, tmp_path):
        rows = [(t, "rls", 0, 0.1 / t) for t in range(1, 10)]
        plotting.plot_nonstat(rows, tmp_path / "n.svg", switch_step=3)
        assert (tmp_path / "n.svg").read_text().lstrip().startswith("<?xml")


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "ttreg", "--task", "bound", "--instances", "2"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "instance,y_norm,bound,ratio"


def test_requires_task(capsys):
    with pytest.raises(SystemExit):
        cli.main([])
