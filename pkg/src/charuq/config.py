"""Run configuration, file ingestion and deterministic seed plumbing.

A run is described by one JSON document; every stochastic stage derives
its own seed from the global seed and a fixed stage id, so reruns with the
same config produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .calibration import LikelihoodSpec, Normal, PriorSpec, Uniform
from .errors import ConfigurationError, ParseError
from .forward_model import (
    BackBoundary,
    BoundaryCondition,
    Grid,
    MaterialParams,
    Scenario,
    TCProfile,
    build_grid,
    trapezoid_flux_bc,
)

STAGE_IDS = {
    "simulate-ground": 1,
    "simulate-flight": 2,
    "synthesize-ground": 3,
    "synthesize-flight": 4,
    "morris-ground": 5,
    "morris-flight": 6,
    "pce-ground": 7,
    "pce-flight": 8,
    "calibrate-ground": 9,
    "calibrate-flight": 10,
    "propagate-parametric": 11,
    "propagate-emulator": 12,
    "propagate-reference": 13,
    "sweep-w": 14,
    "evidence": 15,
    "overlay": 16,
    "propagate-custom": 17,
}


def stage_seed(base_seed: int, stage: str) -> int:
    if stage not in STAGE_IDS:
        raise ConfigurationError(f"unknown stage {stage!r}")
    return int(np.random.SeedSequence([base_seed, STAGE_IDS[stage]]).generate_state(1)[0])


def _marginal_from_dict(d: dict):
    kind = d.get("dist")
    if kind == "uniform":
        return Uniform(low=float(d["low"]), high=float(d["high"]))
    if kind == "normal":
        return Normal(mean=float(d["mean"]), sd=float(d["sd"]))
    raise ConfigurationError(f"unknown distribution kind {kind!r}")


def prior_spec_from_table(rows: Sequence[dict]) -> PriorSpec:
    names = tuple(str(r["name"]) for r in rows)
    marginals = tuple(_marginal_from_dict(r) for r in rows)
    return PriorSpec(names=names, marginals=marginals)


def default_prior_table() -> list[dict]:
    """The five calibrated material inputs and their distributions."""
    return [
        {"name": "log_A21", "dist": "uniform", "low": 6.908, "high": 11.51},
        {"name": "log_A22", "dist": "uniform", "low": 16.12, "high": 23.02},
        {"name": "k0_v", "dist": "normal", "mean": 0.2294, "sd": 0.03825},
        {"name": "k0_c", "dist": "normal", "mean": 0.2569, "sd": 0.04283},
        {"name": "k3_c", "dist": "normal", "mean": 4.510e-11, "sd": 7.515e-12},
    ]


def full_prior_table() -> list[dict]:
    """All seven uncertain material inputs (screening-stage set)."""
    return default_prior_table() + [
        {"name": "log_A23", "dist": "uniform", "low": 16.12, "high": 23.02},
        {"name": "k3_v", "dist": "normal", "mean": 1.694e-11, "sd": 2.823e-12},
    ]


@dataclass
class ScenarioConfig:
    scenario: Scenario
    grid: Grid

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        bc_raw = d["surface_bc"]
        duration = float(d["duration"])
        if bc_raw.get("kind") == "trapezoid_flux":
            bc = trapezoid_flux_bc(
                peak=float(bc_raw["peak"]),
                ramp_up=float(bc_raw.get("ramp_up", 2.0)),
                hold=float(bc_raw.get("hold", 27.0)),
                ramp_down=float(bc_raw.get("ramp_down", 2.0)),
                duration=duration,
            )
        else:
            bc = BoundaryCondition(
                kind=bc_raw["kind"],
                times=np.asarray(bc_raw["times"], dtype=float),
                values=np.asarray(bc_raw["values"], dtype=float),
            )
        back_raw = d.get("back_bc", {"kind": "adiabatic"})
        back = BackBoundary(
            kind=back_raw.get("kind", "adiabatic"),
            temperature=float(back_raw.get("temperature", 290.0)),
        )
        scen = Scenario(
            thickness=float(d["thickness"]),
            duration=duration,
            dt=float(d["dt"]),
            surface_bc=bc,
            back_bc=back,
            initial_temperature=float(d.get("initial_temperature", 290.0)),
            tc_depths_mm=tuple(float(x) for x in d.get("tc_depths_mm", ())),
        )
        grid_raw = d.get("grid", {})
        grid = build_grid(
            n_cells=int(grid_raw.get("n_cells", 100)),
            thickness=scen.thickness,
            stretch=float(grid_raw.get("stretch", 0.1)),
        )
        return cls(scenario=scen, grid=grid)


@dataclass
class MorrisConfig:
    trajectories: int = 30
    levels: int = 101
    jumps: int = 1
    output_spacing: float = 2.0
    screen_fraction: float = 0.05


@dataclass
class PCEConfig:
    samples: int = 320
    q: float = 0.75
    max_order: int = 4
    cv_target: float = 1e-3
    knot_spacing: float = 1.0


@dataclass
class MCMCConfig:
    chains: int = 4
    samples: int = 20_000
    burn_fraction: float = 0.6
    thin: int = 20
    adapt_start_fraction: float = 0.1
    adapt_interval: int = 100
    dr_scale: float = 0.2
    eps_reg: float = 1e-10
    initial_proposal_frac: float = 0.05


@dataclass
class MixtureConfig:
    w_grid: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    propagate_samples: int = 2000
    truncate_level: float | None = None
    interval_levels: tuple[float, ...] = (0.95, 0.99, 0.997)


@dataclass
class SyntheticConfig:
    noise_sigma: float = 0.03
    ground_overrides: dict = field(default_factory=dict)
    flight_overrides: dict = field(default_factory=dict)
    # Measurement grid per scenario (s); None -> the surrogate knot spacing.
    ground_spacing: float | None = None
    flight_spacing: float | None = None

    def spacing_for(self, scenario_name: str) -> float | None:
        return self.ground_spacing if scenario_name == "ground" else self.flight_spacing


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    threads: int
    scenarios: dict[str, ScenarioConfig]
    material: MaterialParams
    priors: PriorSpec
    screening_priors: PriorSpec
    likelihood: LikelihoodSpec
    morris: MorrisConfig
    pce: PCEConfig
    mcmc: MCMCConfig
    mixture: MixtureConfig
    synthetic: SyntheticConfig
    data_paths: dict[str, Path]
    config_sha256: str
    raw: dict

    def scenario(self, name: str) -> ScenarioConfig:
        if name not in self.scenarios:
            raise ConfigurationError(f"scenario {name!r} not defined in the config")
        return self.scenarios[name]

    def data_csv(self, name: str) -> Path:
        if name not in self.data_paths:
            raise ConfigurationError(f"no data CSV configured for scenario {name!r}")
        return self.data_paths[name]


def _material_from_dict(d: dict) -> MaterialParams:
    kwargs = {}
    for key in ("k0_v", "k3_v", "k0_c", "k3_c", "rho_cp"):
        if key in d:
            kwargs[key] = float(d[key])
    for key in ("logA", "ea_over_r", "phase_weights"):
        if key in d:
            kwargs[key] = tuple(float(x) for x in d[key])
    return MaterialParams(**kwargs)


def load_config(path, out_override=None, seed_override=None, threads_override=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    sha = hashlib.sha256(text.encode("utf-8")).hexdigest()

    scenarios = {
        name: ScenarioConfig.from_dict(d) for name, d in raw.get("scenarios", {}).items()
    }
    if not scenarios:
        raise ConfigurationError("config must define at least one scenario")

    priors = prior_spec_from_table(raw.get("priors", default_prior_table()))
    screening = (
        prior_spec_from_table(raw["screening_priors"])
        if "screening_priors" in raw
        else priors
    )

    lik_raw = raw.get("likelihood", {})
    likelihood = LikelihoodSpec(
        mode=lik_raw.get("mode", "emulator"),
        sigma_prior=_marginal_from_dict(
            lik_raw.get("sigma_prior", {"dist": "uniform", "low": 1e-4, "high": 0.5})
        ),
        epsilon=float(lik_raw.get("epsilon", 0.0)),
    )

    base = path.parent
    data_paths = {}
    for name, rel in raw.get("data", {}).items():
        p = (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
        data_paths[name] = p

    syn_raw = raw.get("synthetic", {})
    cfg = RunConfig(
        seed=int(seed_override if seed_override is not None else raw.get("seed", 0)),
        output_dir=Path(out_override if out_override is not None else raw.get("output_dir", "out")),
        threads=int(threads_override if threads_override is not None else raw.get("threads", 1)),
        scenarios=scenarios,
        material=_material_from_dict(raw.get("material", {})),
        priors=priors,
        screening_priors=screening,
        likelihood=likelihood,
        morris=MorrisConfig(**raw.get("morris", {})),
        pce=PCEConfig(**raw.get("pce", {})),
        mcmc=MCMCConfig(**raw.get("mcmc", {})),
        mixture=MixtureConfig(
            w_grid=tuple(raw["mixture"]["w_grid"]) if "w_grid" in raw.get("mixture", {}) else MixtureConfig().w_grid,
            propagate_samples=int(raw.get("mixture", {}).get("propagate_samples", 2000)),
            truncate_level=raw.get("mixture", {}).get("truncate_level"),
            interval_levels=tuple(raw.get("mixture", {}).get("interval_levels", (0.95, 0.99, 0.997))),
        ),
        synthetic=SyntheticConfig(
            noise_sigma=float(syn_raw.get("noise_sigma", 0.03)),
            ground_overrides=dict(syn_raw.get("ground_overrides", {})),
            flight_overrides=dict(syn_raw.get("flight_overrides", {})),
            ground_spacing=syn_raw.get("ground_spacing"),
            flight_spacing=syn_raw.get("flight_spacing"),
        ),
        data_paths=data_paths,
        config_sha256=sha,
        raw=raw,
    )
    return cfg


def require_data_files(cfg: RunConfig, names: Sequence[str]) -> None:
    for name in names:
        p = cfg.data_csv(name)
        if not p.is_file():
            raise ConfigurationError(f"referenced data file missing: {p}")


def ingest_tc_csv(path, depths: Sequence[float] = (), labels: Sequence[str] = ()) -> list[TCProfile]:
    """Parse a `time,TC1,TC2,...` CSV into per-column profiles.

    Depth metadata (metres from the surface) joins by column order when
    provided. Monotonicity and numeric failures report the offending
    row/column, counting the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"data file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip() != "time":
            raise ParseError(f"{path}: header must be 'time,TC1,...', got {header!r}")
        names = [h.strip() for h in header[1:]]
        times: list[float] = []
        columns: list[list[float]] = [[] for _ in names]
        for row_idx, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names) + 1:
                raise ParseError(
                    f"{path}: row {row_idx} has {len(row)} cells, expected {len(names) + 1}"
                )
            try:
                t = float(row[0])
            except ValueError:
                raise ParseError(f"{path}: row {row_idx}, column 1 is not numeric") from None
            if times and t <= times[-1]:
                raise ParseError(f"{path}: times not strictly increasing at row {row_idx}")
            times.append(t)
            for c, cell in enumerate(row[1:], start=2):
                try:
                    columns[c - 2].append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_idx}, column {c} is not numeric"
                    ) from None
    if not times:
        raise ParseError(f"{path}: no data rows")
    if depths and len(depths) != len(names):
        raise ParseError(
            f"{path}: {len(names)} TC columns but {len(depths)} configured depths"
        )
    if labels and len(labels) == len(names):
        names = list(labels)
    t_arr = np.asarray(times)
    return [
        TCProfile(
            label=names[j],
            times=t_arr.copy(),
            values=np.asarray(col),
            depth=float(depths[j]) if depths else float("nan"),
        )
        for j, col in enumerate(columns)
    ]


def write_tc_csv(path, times: np.ndarray, profiles_values: np.ndarray, labels: Sequence[str]) -> None:
    """Write a `time,TC1,...` CSV; profiles_values has shape (n_tc, n_times)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time," + ",".join(labels) + "\n")
        for i, t in enumerate(times):
            fh.write(
                repr(float(t))
                + ","
                + ",".join(repr(float(profiles_values[j, i])) for j in range(len(labels)))
                + "\n"
            )


def desk_config_dict(
    seed: int = 20260809,
    out_dir: str = "out",
    mcmc_samples: int = 15_000,
    pce_samples: int = 288,
    propagate_samples: int = 1500,
) -> dict:
    """Desk-scale run configuration used by the bundled example and tests.

    The ground scenario mimics a short, hot arc-jet pulse; the flight
    scenario a longer, milder heating history. Synthetic truths differ
    slightly between the two so ground-calibrated posteriors genuinely
    disagree with flight-calibrated ones, which the mixture sweep then has
    to reconcile.
    """
    return {
        "seed": seed,
        "output_dir": out_dir,
        "threads": 1,
        "scenarios": {
            "ground": {
                "thickness": 0.03175,
                "duration": 60.0,
                "dt": 0.1,
                "initial_temperature": 290.0,
                "surface_bc": {
                    "kind": "trapezoid_flux",
                    "peak": 1.0e5,
                    "ramp_up": 2.0,
                    "hold": 27.0,
                    "ramp_down": 2.0,
                },
                "back_bc": {"kind": "adiabatic"},
                "tc_depths_mm": [22.02, 17.53, 12.13, 7.224],
                "grid": {"n_cells": 100, "stretch": 0.1},
            },
            "flight": {
                "thickness": 0.03175,
                "duration": 100.0,
                "dt": 0.1,
                "initial_temperature": 290.0,
                "surface_bc": {
                    "kind": "trapezoid_flux",
                    "peak": 6.5e4,
                    "ramp_up": 10.0,
                    "hold": 45.0,
                    "ramp_down": 15.0,
                },
                "back_bc": {"kind": "adiabatic"},
                "tc_depths_mm": [29.28, 26.36, 20.43, 13.81],
                "grid": {"n_cells": 100, "stretch": 0.1},
            },
        },
        "material": {},
        "priors": default_prior_table(),
        "screening_priors": full_prior_table(),
        "likelihood": {
            "mode": "emulator",
            "sigma_prior": {"dist": "uniform", "low": 1e-4, "high": 0.15},
            "epsilon": 0.0,
        },
        "morris": {
            "trajectories": 20,
            "levels": 101,
            "jumps": 1,
            "output_spacing": 5.0,
            "screen_fraction": 0.05,
        },
        "pce": {
            "samples": pce_samples,
            "q": 0.75,
            "max_order": 3,
            "cv_target": 0.001,
            "knot_spacing": 2.0,
        },
        "mcmc": {
            "chains": 4,
            "samples": mcmc_samples,
            "burn_fraction": 0.6,
            "thin": 20,
            "adapt_start_fraction": 0.1,
            "adapt_interval": 100,
            "dr_scale": 0.2,
            "eps_reg": 1e-10,
            "initial_proposal_frac": 0.05,
        },
        "mixture": {
            "w_grid": [round(0.1 * i, 1) for i in range(11)],
            "propagate_samples": propagate_samples,
            "truncate_level": 0.95,
            "interval_levels": [0.95, 0.99, 0.997],
        },
        "synthetic": {
            "noise_sigma": 0.03,
            "ground_overrides": {},
            "flight_overrides": {"k0_v": 0.27, "log_A21": 11.2, "k0_c": 0.30},
            "ground_spacing": 2.0,
            "flight_spacing": 6.0,
        },
        "data": {"ground": "out/data_ground.csv", "flight": "out/data_flight.csv"},
    }


def write_manifest(outdir: Path, stage: str, cfg: RunConfig, artifacts: Sequence[str], extra: dict | None = None) -> Path:
    doc = {
        "stage": stage,
        "config_sha256": cfg.config_sha256,
        "base_seed": cfg.seed,
        "stage_seeds": {
            s: stage_seed(cfg.seed, s) for s in STAGE_IDS if s.startswith(stage.split("-")[0])
        },
        "module_versions": {"charuq": __version__},
        "artifacts": sorted(str(a) for a in artifacts),
    }
    if extra:
        doc.update(extra)
    path = Path(outdir) / f"manifest_{stage}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return path
