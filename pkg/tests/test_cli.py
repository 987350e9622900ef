import csv
import math

import numpy as np
import pytest

from segbench.cli import (
    EXIT_CHECK,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    main,
    parse_loss_token,
    run_gradcheck,
    run_grid,
)

# tiny-but-valid dataset/training flags shared by the heavier subcommands
FAST = [
    "--width", "16", "--height", "16", "--n-images", "12", "--fg-fraction", "0.2",
    "--noise-sigma", "0.05", "--epochs", "2", "--batch-size", "8", "--lr", "0.01",
]


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestCurve:
    def test_endpoints_and_threshold_row(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        assert main(["curve", "--out", str(out), "--n-points", "51"]) == EXIT_OK
        rows = read_rows(out)
        assert rows[0]["x"] == "0"
        assert float(rows[0]["loss"]) == 0.0
        assert float(rows[0]["derivative"]) == pytest.approx(20.0)
        assert any(float(r["x"]) == 0.1 for r in rows)
        captured = capsys.readouterr().out
        assert "15.6667" in captured  # derivative jump reported

    def test_linear_branch_value(self, tmp_path):
        out = tmp_path / "curve.csv"
        main(["curve", "--out", str(out), "--n-points", "11"])
        row = next(r for r in read_rows(out) if r["x"] == "0.3")
        assert float(row["loss"]) == pytest.approx(0.3 - (0.1 - 10 * math.log(1.2)), rel=1e-5)

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["curve", "--out", str(a)])
        main(["curve", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_missing_out(self):
        assert main(["curve"]) == EXIT_USAGE


class TestGendata:
    def test_files_and_manifest(self, tmp_path):
        d = tmp_path / "ds"
        rc = main(["gendata", "--out-dir", str(d), "--n-images", "4", "--width", "16", "--height", "16"])
        assert rc == EXIT_OK
        pgms = sorted(p.name for p in d.glob("*.pgm"))
        assert len(pgms) == 8
        assert len(read_rows(d / "manifest.csv")) == 4

    def test_byte_identical_rerun(self, tmp_path):
        d = tmp_path / "ds"
        args = ["gendata", "--out-dir", str(d), "--n-images", "3", "--width", "16", "--height", "16"]
        main(args)
        before = {p.name: p.read_bytes() for p in d.iterdir()}
        main(args)
        after = {p.name: p.read_bytes() for p in d.iterdir()}
        assert before == after

    def test_manifest_fraction_matches_mask_recount(self, tmp_path):
        from segbench.synthdata import read_pgm

        d = tmp_path / "ds"
        main(["gendata", "--out-dir", str(d), "--n-images", "3", "--width", "24", "--height", "24"])
        for row in read_rows(d / "manifest.csv"):
            mask = read_pgm(d / row["mask_path"]) >= 128
            assert float(row["fg_fraction"]) == pytest.approx(mask.mean(), abs=1e-6)

    def test_unreachable_fraction_is_data_error(self, tmp_path):
        rc = main(["gendata", "--out-dir", str(tmp_path / "ds"), "--n-images", "1",
                   "--width", "16", "--height", "16", "--fg-fraction", "0.002"])
        assert rc == EXIT_DATA


class TestTrain:
    def test_writes_record(self, tmp_path):
        out = tmp_path / "run.csv"
        assert main(["train", *FAST, "--out", str(out)]) == EXIT_OK
        rows = read_rows(out)
        assert len(rows) == 2
        assert set(rows[0]) == {"epoch", "train_loss", "val_jaccard", "val_dice",
                               "val_recall", "val_specificity", "val_f1"}

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["train", *FAST, "--out", str(a)])
        main(["train", *FAST, "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_all_wrap_flag(self, tmp_path):
        out = tmp_path / "run.csv"
        assert main(["train", *FAST, "--all-wrap", "--out", str(out)]) == EXIT_OK


class TestGrid:
    def test_single_cell_rows(self, tmp_path):
        out = tmp_path / "grid.csv"
        rc = main(["grid", *FAST, "--out", str(out),
                   "--gammas", "0.1", "--omegas", "10", "--epsilons", "0.5", "--seeds", "1"])
        assert rc == EXIT_OK
        rows = read_rows(out)
        assert len(rows) == 2
        assert rows[0]["seed"] == "0"
        assert rows[1]["seed"] == "mean"
        assert rows[0]["val_jaccard"] == rows[1]["val_jaccard"]

    def test_cell_means_exact_on_report(self):
        o = {
            "width": 16, "height": 16, "fg_fraction": 0.2, "n_images": 12, "noise_sigma": 0.05,
            "blob_min": 1, "blob_max": 3, "data_seed": 0, "split_ratio": 0.8,
            "lr": 0.01, "batch_size": 8, "epochs": 2, "loss": "dice", "all_wrap": False,
            "smooth": 1e-6, "tversky_alpha": 0.7, "tversky_beta": 0.3, "focal_alpha": 1.0,
            "focal_gamma": 2.0, "mix": 0.5, "ft_gamma": 4 / 3, "gamma": 0.1, "omega": 10.0,
            "epsilon": 0.5, "gammas": "0.1", "omegas": "8,10", "epsilons": "0.5", "seeds": 2,
            "seed": 0, "jobs": 1, "out": "",
        }
        rows = run_grid(o)
        assert len(rows) == 2 * 2 + 2
        for cell in ("8", "10"):
            runs = [r for r in rows if r["omega"] == float(cell) and r["seed"] != "mean"]
            mean = next(r for r in rows if r["omega"] == float(cell) and r["seed"] == "mean")
            assert mean["val_jaccard"] == pytest.approx(np.mean([r["val_jaccard"] for r in runs]), abs=1e-12)

    def test_branch_inactive_params_identical(self, tmp_path):
        # two gamma values both so large the linear branch never engages at
        # these loss scales differ only through the constant shift, which does
        # not change gradients: identical Jaccard, bitwise
        out = tmp_path / "grid.csv"
        main(["grid", *FAST, "--out", str(out),
              "--gammas", "0.0001,0.0002", "--omegas", "10", "--epsilons", "0.5", "--seeds", "1"])
        rows = [r for r in read_rows(out) if r["seed"] != "mean"]
        assert len(rows) == 2
        assert rows[0]["val_jaccard"] == rows[1]["val_jaccard"]


class TestCompare:
    def test_schema_and_determinism(self, tmp_path):
        out = tmp_path / "cmp.csv"
        rc = main(["compare", *FAST, "--out", str(out), "--losses", "dice,all", "--seeds", "2"])
        assert rc == EXIT_OK
        rows = read_rows(out)
        # 2 runs + 1 mean per loss
        assert len(rows) == 6
        assert set(rows[0]) == {"loss", "seed", "recall", "specificity", "jaccard", "dice", "f1", "auc"}
        trace = read_rows(tmp_path / "cmp_epochs.csv")
        assert {r["loss"] for r in trace} == {"dice", "all"}
        assert set(trace[0]) == {"loss", "seed", "epoch", "val_jaccard"}

    def test_same_loss_listed_twice_identical(self, tmp_path):
        out = tmp_path / "cmp.csv"
        main(["compare", *FAST, "--out", str(out), "--losses", "dice,dice", "--seeds", "1"])
        rows = read_rows(out)
        a = [r for r in rows if r["seed"] == "0"]
        assert len(a) == 2
        assert {k: a[0][k] for k in a[0] if k != "loss"} == {k: a[1][k] for k in a[1] if k != "loss"}

    def test_loss_tokens(self):
        assert parse_loss_token("all") == ("dice", True)
        assert parse_loss_token("tversky+all") == ("tversky", True)
        assert parse_loss_token("focal") == ("focal", False)
        from segbench.cli import UsageError

        with pytest.raises(UsageError):
            parse_loss_token("nope")


class TestRoc:
    def test_curve_output(self, tmp_path):
        out = tmp_path / "roc.csv"
        rc = main(["roc", *FAST, "--out", str(out), "--n-thresholds", "64"])
        assert rc == EXIT_OK
        rows = read_rows(out)
        assert rows[0]["fpr"] == "0" and rows[0]["tpr"] == "0"
        assert rows[-1]["fpr"] == "1" and rows[-1]["tpr"] == "1"
        aucs = {r["auc"] for r in rows}
        assert len(aucs) == 1
        assert 0.0 <= float(aucs.pop()) <= 1.0


class TestGradcheckCommand:
    def test_passes_at_defaults(self):
        assert run_gradcheck(trials=5, tolerance=1e-6, net_tolerance=1e-4, seed=0, report=lambda *a: None)

    def test_corrupted_gradient_fails(self):
        assert not run_gradcheck(trials=3, tolerance=1e-6, net_tolerance=1e-4, seed=0,
                                 corrupt=1e-3, report=lambda *a: None)

    def test_zero_tolerance_fails(self):
        assert not run_gradcheck(trials=1, tolerance=0.0, net_tolerance=1e-4, seed=0,
                                 report=lambda *a: None)

    def test_cli_exit_codes(self):
        assert main(["gradcheck", "--trials", "3"]) == EXIT_OK
        assert main(["gradcheck", "--trials", "3", "--corrupt", "0.001"]) == EXIT_CHECK


class TestFlagsAndConfig:
    def test_unknown_flag_usage_error(self):
        assert main(["curve", "--bogus", "1"]) == EXIT_USAGE

    def test_unknown_command_usage_error(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_config_file_supplies_flags(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("n-points = 21\nomega = 12\n")
        out = tmp_path / "c.csv"
        assert main(["curve", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        rows = read_rows(out)
        assert len(rows) == 21  # threshold 0.1 already on the 21-point grid
        assert any(float(r["x"]) == 0.1 for r in rows)
        assert float(rows[0]["derivative"]) == pytest.approx(24.0)  # omega/epsilon = 12/0.5

    def test_explicit_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("omega=12\n")
        out = tmp_path / "c.csv"
        main(["curve", "--config", str(cfg), "--omega", "6", "--out", str(out)])
        assert float(read_rows(out)[0]["derivative"]) == pytest.approx(12.0)

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("bogus=1\n")
        assert main(["curve", "--config", str(cfg), "--out", str(tmp_path / "c.csv")]) == EXIT_USAGE

    def test_missing_config_file_is_data_error(self, tmp_path):
        assert main(["curve", "--config", str(tmp_path / "nope.txt"),
                     "--out", str(tmp_path / "c.csv")]) == EXIT_DATA
