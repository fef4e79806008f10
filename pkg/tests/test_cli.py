"""Experiment runner: exit codes, file contracts, determinism."""

import json
import os

import pytest

from horizonlab.cli import ExperimentConfig, emit_plot_data, main, run


def small_cfg(task, out_dir, **over):
    cfg = ExperimentConfig(
        problem={"name": "linear-l1"},
        task=task,
        grid={"h": 0.05, "dt": 0.05, "T": 2.0, "lo": [-3.0], "hi": [3.0]},
        horizons={"t0": 2.0, "ratio": 2.0, "count": 3},
        out_dir=str(out_dir),
    )
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


class TestRun:
    def test_value_task_writes_contracted_files(self, tmp_path):
        cfg = small_cfg("value", tmp_path / "v")
        assert run(cfg) == 0
        names = set(os.listdir(cfg.out_dir))
        assert {"summary.json", "manifest.json", "value_table.csv", "value_table.gridspec.json"} <= names
        manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
        listed = {f["path"] for f in manifest["files"]}
        assert "summary.json" in listed and "value_table.csv" in listed
        for entry in manifest["files"]:
            assert len(entry["sha256"]) == 64

    def test_invalid_tolerance_exit_2(self, tmp_path):
        cfg = small_cfg("value", tmp_path / "bad", tol=-1.0)
        assert run(cfg) == 2

    def test_unknown_task_exit_2(self, tmp_path):
        cfg = small_cfg("mystery", tmp_path / "bad2")
        assert run(cfg) == 2

    def test_unknown_problem_exit_2(self, tmp_path):
        cfg = small_cfg("value", tmp_path / "bad3")
        cfg.problem = {"name": "not-a-problem"}
        assert run(cfg) == 2

    def test_single_step_grid(self, tmp_path):
        # one backward step: V(0, x) = dt * min_u f0(0, x, u)
        cfg = small_cfg("value", tmp_path / "one")
        cfg.grid = {"h": 0.5, "dt": 0.5, "T": 0.5, "lo": [-2.0], "hi": [2.0]}
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "one" / "summary.json").read_text())
        # at b = 0: min_u dt (2u + |u|) = dt * (-1/2) = -0.25
        assert summary["value"]["V_at_start"] == pytest.approx(-0.25, abs=1e-9)

    def test_determinism_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run(small_cfg("limits", out_a, seed=3)) == 0
        assert run(small_cfg("limits", out_b, seed=3)) == 0
        csv_a = (out_a / "limits_trace.csv").read_bytes()
        csv_b = (out_b / "limits_trace.csv").read_bytes()
        assert csv_a == csv_b

    def test_limits_summary_contract(self, tmp_path):
        cfg = small_cfg("limits", tmp_path / "lim")
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "lim" / "summary.json").read_text())
        for key in ("v_all", "v_liminf_sequence", "v_inf_over_controls"):
            block = summary["limits"][key]
            assert len(block["values"]) == 3
            assert "converged" in block

    def test_pmp_task(self, tmp_path):
        cfg = small_cfg("pmp", tmp_path / "pmp")
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "pmp" / "summary.json").read_text())
        block = summary["pmp"]
        assert block["lambda"] == 1
        assert block["found"] is True
        assert (tmp_path / "pmp" / "certificate_arc.csv").exists()

    def test_criteria_task(self, tmp_path):
        cfg = small_cfg("criteria", tmp_path / "cr")
        cfg.horizons = {"t0": 4.0, "ratio": 2.0, "count": 3}
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "cr" / "summary.json").read_text())
        verdicts = {c["criterion"]: c["verdict"] for c in summary["criteria"]["criteria"]}
        assert verdicts["weakly-agreeable"] == "pass"
        assert verdicts["classical"] == "pass"

    def test_regularity_task_capital_stock(self, tmp_path):
        cfg = small_cfg("regularity", tmp_path / "reg")
        cfg.problem = {"name": "capital-stock"}
        cfg.grid = {"h": 0.02, "dt": 0.02, "T": 4.0, "lo": [-0.5], "hi": [2.5]}
        assert run(cfg) == 0
        assert (tmp_path / "reg" / "region_map.csv").exists()
        summary = json.loads((tmp_path / "reg" / "summary.json").read_text())
        assert summary["regularity"]["product_structure"]["pass"] is True
        # region plot data uses the {0,1,2,3} verdict encoding
        assert emit_plot_data(str(tmp_path / "reg")) == 0
        rows = (tmp_path / "reg" / "plotdata_region_map.csv").read_text().splitlines()[1:]
        codes = {int(float(r.split(",")[2])) for r in rows}
        assert codes <= {0, 1, 2, 3}

    def test_regularity_task_double_integrator(self, tmp_path):
        cfg = small_cfg("regularity", tmp_path / "di")
        cfg.problem = {"name": "double-integrator"}
        cfg.horizons = {"t0": 2.0, "ratio": 2.0, "count": 3}
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "di" / "summary.json").read_text())
        reg = summary["regularity"]
        assert reg["homogeneity"]["derived_pass"] is True
        assert reg["homogeneity"]["naive_identity_max_rel_error"] > 2e-2
        sens = reg["truncation_sensitivity"]
        assert sens["radius_widened"] == 2 * sens["radius"]
        assert (tmp_path / "di" / "region_routes.csv").exists()

    def test_out_of_box_control_exit_2(self, tmp_path):
        cfg = small_cfg("criteria", tmp_path / "oob", control={"constant": [5.0]})
        assert run(cfg) == 2

    def test_example_suite_bundle(self, tmp_path):
        cfg = small_cfg("example-suite", tmp_path / "suite")
        cfg.horizons = {"t0": 2.0, "ratio": 2.0, "count": 3}
        assert run(cfg) == 0
        summary = json.loads((tmp_path / "suite" / "summary.json").read_text())
        assert {"limits", "pmp", "criteria"} <= set(summary)
        assert summary["pmp"]["found"] is True

    def test_manifest_lists_every_output(self, tmp_path):
        cfg = small_cfg("limits", tmp_path / "man")
        assert run(cfg) == 0
        manifest = json.loads((tmp_path / "man" / "manifest.json").read_text())
        listed = {f["path"] for f in manifest["files"]}
        on_disk = set(os.listdir(tmp_path / "man")) - {"manifest.json"}
        assert on_disk == listed


class TestPlotData:
    def test_emit_from_limits_run(self, tmp_path):
        out = tmp_path / "lim"
        assert run(small_cfg("limits", out)) == 0
        assert emit_plot_data(str(out)) == 0
        plot = (out / "plotdata_value_vs_horizon.csv").read_text().splitlines()
        assert plot[0] == "series,x,y"
        assert any(line.startswith("V_all,") for line in plot[1:])

    def test_emit_from_pmp_run(self, tmp_path):
        out = tmp_path / "pmp"
        assert run(small_cfg("pmp", out)) == 0
        assert emit_plot_data(str(out)) == 0
        assert (out / "plotdata_certificate_arc.csv").exists()
        assert (out / "plotdata_residual_vs_T.csv").exists()

    def test_missing_dir_exit_2(self, tmp_path):
        assert emit_plot_data(str(tmp_path / "nope")) == 2


class TestMain:
    def test_flag_style_invocation(self, tmp_path):
        code = main(["--task", "value", "--problem", "linear-l1", "--out", str(tmp_path / "m"),
                     "--grid", "0.1,0.1,1.0", "--seed", "7", "--tol", "0.02"])
        assert code == 0
        assert (tmp_path / "m" / "summary.json").exists()

    def test_config_file(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "problem": {"name": "linear-l1"},
            "task": "value",
            "grid": {"h": 0.1, "dt": 0.1, "T": 1.0, "lo": [-2.0], "hi": [2.0]},
            "out_dir": str(tmp_path / "c"),
        }))
        assert main(["run", "--config", str(cfg_path)]) == 0

    def test_plot_data_subcommand(self, tmp_path):
        out = tmp_path / "lim"
        assert run(small_cfg("limits", out)) == 0
        assert main(["plot-data", "--dir", str(out)]) == 0

    def test_bad_grid_flag(self, tmp_path):
        assert main(["--task", "value", "--grid", "0.1,0.1"]) == 2
