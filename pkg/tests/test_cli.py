import json
from pathlib import Path

import numpy as np
import pytest

from charuq.cli import main
from charuq.config import (
    default_prior_table,
    desk_config_dict,
    ingest_tc_csv,
    load_config,
    stage_seed,
)
from charuq.errors import ParseError


def micro_config(tmp_path: Path, **tweaks) -> Path:
    """Tiny but complete run configuration for fast end-to-end CLI tests."""
    out = tmp_path / "out"
    cfg = {
        "seed": 424242,
        "output_dir": str(out),
        "threads": 1,
        "scenarios": {
            "ground": {
                "thickness": 0.02,
                "duration": 24.0,
                "dt": 0.5,
                "initial_temperature": 290.0,
                "surface_bc": {
                    "kind": "trapezoid_flux",
                    "peak": 9.0e4,
                    "ramp_up": 2.0,
                    "hold": 10.0,
                    "ramp_down": 2.0,
                },
                "back_bc": {"kind": "adiabatic"},
                "tc_depths_mm": [14.0, 8.0],
                "grid": {"n_cells": 20, "stretch": 0.2},
            },
            "flight": {
                "thickness": 0.02,
                "duration": 36.0,
                "dt": 0.5,
                "initial_temperature": 290.0,
                "surface_bc": {
                    "kind": "trapezoid_flux",
                    "peak": 6.0e4,
                    "ramp_up": 4.0,
                    "hold": 16.0,
                    "ramp_down": 6.0,
                },
                "back_bc": {"kind": "adiabatic"},
                "tc_depths_mm": [14.0, 8.0],
                "grid": {"n_cells": 20, "stretch": 0.2},
            },
        },
        "material": {},
        "priors": default_prior_table(),
        "likelihood": {
            "mode": "emulator",
            "sigma_prior": {"dist": "uniform", "low": 1e-4, "high": 0.15},
        },
        "morris": {
            "trajectories": 4,
            "levels": 21,
            "jumps": 1,
            "output_spacing": 6.0,
            "screen_fraction": 0.05,
        },
        "pce": {"samples": 64, "q": 1.0, "max_order": 2, "cv_target": 0.005, "knot_spacing": 2.0},
        "mcmc": {"chains": 2, "samples": 1200, "burn_fraction": 0.5, "thin": 5},
        "mixture": {
            "w_grid": [0.0, 0.5, 1.0],
            "propagate_samples": 200,
            "truncate_level": 0.95,
        },
        "synthetic": {
            "noise_sigma": 0.03,
            "ground_overrides": {},
            "flight_overrides": {"k0_v": 0.27, "k0_c": 0.30},
            "ground_spacing": 2.0,
            "flight_spacing": 4.0,
        },
        "data": {
            "ground": str(out / "data_ground.csv"),
            "flight": str(out / "data_flight.csv"),
        },
    }
    cfg.update(tweaks)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


class TestConfig:
    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert main(["simulate", "--config", str(p)]) == 1

    def test_stage_seeds_deterministic_and_distinct(self):
        s1 = stage_seed(7, "pce-ground")
        s2 = stage_seed(7, "pce-ground")
        s3 = stage_seed(7, "pce-flight")
        assert s1 == s2
        assert s1 != s3

    def test_desk_config_loads(self, tmp_path):
        p = tmp_path / "desk.json"
        p.write_text(json.dumps(desk_config_dict(out_dir=str(tmp_path / "o"))))
        cfg = load_config(p)
        assert set(cfg.scenarios) == {"ground", "flight"}
        assert cfg.mixture.truncate_level == 0.95

    def test_overrides(self, tmp_path):
        p = micro_config(tmp_path)
        cfg = load_config(p, out_override=tmp_path / "alt", seed_override=7, threads_override=2)
        assert cfg.seed == 7
        assert cfg.threads == 2
        assert cfg.output_dir == tmp_path / "alt"


class TestIngest:
    def test_two_by_two(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,TC1,TC2\n0.0,300.0,301.0\n1.0,310.0,309.0\n")
        profiles = ingest_tc_csv(p, depths=(0.002, 0.005))
        assert len(profiles) == 2
        assert profiles[0].label == "TC1"
        np.testing.assert_allclose(profiles[1].values, [301.0, 309.0])
        assert profiles[1].depth == 0.005

    def test_header_only(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,TC1\n")
        with pytest.raises(ParseError, match="no data rows"):
            ingest_tc_csv(p)

    def test_non_monotone_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,TC1\n0,300\n10,310\n5,320\n")
        with pytest.raises(ParseError, match="row 4"):
            ingest_tc_csv(p)

    def test_non_numeric_names_location(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,TC1,TC2\n0,300,bad\n")
        with pytest.raises(ParseError, match="row 2, column 3"):
            ingest_tc_csv(p)

    def test_depth_count_mismatch(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("time,TC1,TC2\n0,300,301\n")
        with pytest.raises(ParseError, match="configured depths"):
            ingest_tc_csv(p, depths=(0.001,))


class TestSubcommands:
    def test_simulate_deterministic(self, tmp_path):
        cfg = micro_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--scenario", "ground"]) == 0
        out = tmp_path / "out"
        first = (out / "tc_ground.csv").read_bytes()
        manifest_first = (out / "manifest_simulate-ground.json").read_bytes()
        assert main(["simulate", "--config", str(cfg), "--scenario", "ground"]) == 0
        assert (out / "tc_ground.csv").read_bytes() == first
        assert (out / "manifest_simulate-ground.json").read_bytes() == manifest_first

    def test_simulate_with_param_overrides(self, tmp_path):
        cfg = micro_config(tmp_path)
        pf = tmp_path / "params.json"
        pf.write_text(json.dumps({"k0_v": 0.3}))
        assert main(["simulate", "--config", str(cfg), "--params-file", str(pf)]) == 0

    def test_synthesize_then_missing_data_error(self, tmp_path):
        cfg = micro_config(tmp_path)
        # calibrate before any data exists -> validation failure, exit 1
        assert main(["calibrate", "--config", str(cfg), "--scenario", "ground"]) == 1
        assert main(["synthesize-data", "--config", str(cfg), "--scenario", "ground"]) == 0
        data = (tmp_path / "out" / "data_ground.csv").read_text().splitlines()
        assert data[0] == "time,TC1,TC2"
        times = [float(r.split(",")[0]) for r in data[1:]]
        assert times == sorted(times)
        assert times[1] - times[0] == pytest.approx(2.0)

    def test_morris_outputs(self, tmp_path):
        cfg = micro_config(tmp_path)
        assert main(["morris", "--config", str(cfg), "--scenario", "ground"]) == 0
        out = tmp_path / "out"
        stats = (out / "morris_stats_ground.csv").read_text().splitlines()
        assert stats[0].startswith("input,")
        assert len(stats) == 1 + 5  # five screened inputs by default table
        plot = (out / "morris_plot_ground.csv").read_text().splitlines()
        assert plot[0] == "output,input,mu_star,sigma"
        screen = json.loads((out / "morris_screen_ground.json").read_text())
        assert "influential" in screen

    def test_full_pipeline_micro(self, tmp_path):
        cfg = micro_config(tmp_path)
        assert main(["synthesize-data", "--config", str(cfg), "--scenario", "ground"]) == 0
        assert main(["synthesize-data", "--config", str(cfg), "--scenario", "flight"]) == 0
        assert main(["pipeline", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        report = json.loads((out / "report.json").read_text())
        assert set(report["coverage_95"]) == {"parametric_only", "ground_emulator", "gap"}
        assert report["sweep"]["w_jeffreys"] in (0.0, 0.5, 1.0)
        table = (out / "sweep_table.csv").read_text().splitlines()
        assert len(table) == 1 + 3  # header + one row per w
        assert (out / "overlay.json").is_file()
        assert (out / "posterior_ground.csv").is_file()
        assert (out / "predictive_parametric_only" / "intervals.csv").is_file()
        assert (out / "predictive_flight_reference" / "map_trajectory.csv").is_file()
        manifest = json.loads((out / "manifest_calibrate-ground.json").read_text())
        assert manifest["module_versions"]["charuq"]
        assert manifest["config_sha256"]

    def test_propagate_standalone(self, tmp_path):
        cfg = micro_config(tmp_path)
        main(["synthesize-data", "--config", str(cfg), "--scenario", "ground"])
        main(["synthesize-data", "--config", str(cfg), "--scenario", "flight"])
        assert main(["pce", "--config", str(cfg), "--scenario", "flight"]) == 0
        assert main(["calibrate", "--config", str(cfg), "--scenario", "ground"]) == 0
        post = tmp_path / "out" / "posterior_ground.csv"
        assert (
            main(
                [
                    "propagate",
                    "--config",
                    str(cfg),
                    "--posterior",
                    str(post),
                    "--target",
                    "flight",
                    "--emulator",
                    "--variant",
                    "smoke",
                ]
            )
            == 0
        )
        vdir = tmp_path / "out" / "predictive_smoke"
        lines = (vdir / "intervals.csv").read_text().splitlines()
        assert lines[0] == "tc,time,level,lo,hi"
        levels = {float(r.split(",")[2]) for r in lines[1:]}
        assert levels == {0.95, 0.99, 0.997}

    def test_overlay_subcommand(self, tmp_path):
        cfg = micro_config(tmp_path)
        assert main(["overlay", "--config", str(cfg)]) == 0
        doc = json.loads((tmp_path / "out" / "overlay.json").read_text())
        assert "verdict" in doc
        assert doc["threshold_K"] == 290.0

    def test_unknown_scenario_exits_one(self, tmp_path):
        cfg = micro_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--scenario", "orbit"]) == 1
