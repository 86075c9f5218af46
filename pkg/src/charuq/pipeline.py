"""End-to-end stage implementations behind the CLI subcommands.

Each stage reads the run config, derives its own seed, writes artifacts
plus a manifest into the output directory, and returns a small summary
dict that the pipeline report aggregates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bma import MixturePrior, mixture_sample
from .calibration import (
    EnsembleConfig,
    LikelihoodSpec,
    PosteriorSamples,
    PriorSpec,
    Uniform,
    clean_chains,
    run_ensemble,
    save_ensemble,
)
from .config import (
    RunConfig,
    ingest_tc_csv,
    require_data_files,
    stage_seed,
    write_manifest,
    write_tc_csv,
)
from .divergence import GridConfig, select_optimal_w, sweep_w
from .errors import ConfigurationError
from .forward_model import (
    MaterialParams,
    Scenario,
    extract_thermocouples,
    solve,
    surface_profile,
    tc_response_batch,
)
from .predictive import (
    PredictiveEnsemble,
    map_trajectory,
    normalized_overlay,
    prediction_interval,
    propagate,
)
from .sampling import lhs_unit
from .sensitivity import (
    TrajectoryConfig,
    build_trajectories,
    elementary_effect,
    morris_statistics,
    quantile_map,
    screen,
)
from .surrogate import CompiledFieldSurrogate, FieldSurrogate, fit_field


def material_from_sample(base: MaterialParams, names, values) -> MaterialParams:
    return base.with_values(**{n: float(v) for n, v in zip(names, values)})


@dataclass
class SurrogateEvaluator:
    """Batch evaluation of a compiled field surrogate; picklable."""

    compiled: CompiledFieldSurrogate

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        return self.compiled.evaluate(thetas)

    @property
    def knot_times(self) -> np.ndarray:
        return self.compiled.surrogate.time_knots

    @property
    def tc_labels(self) -> tuple[str, ...]:
        return self.compiled.surrogate.tc_labels


@dataclass
class SolverEvaluator:
    """Raw solver pushforward sampled onto a knot grid; picklable."""

    scenario_cfg: object  # ScenarioConfig
    base_material: MaterialParams
    param_names: tuple[str, ...]
    knot_times: np.ndarray
    workers: int = 1

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        params = [
            material_from_sample(self.base_material, self.param_names, row)
            for row in thetas
        ]
        times, resp = tc_response_batch(
            self.scenario_cfg.scenario, self.scenario_cfg.grid, params, self.workers
        )
        out = np.empty((resp.shape[0], resp.shape[1], self.knot_times.size))
        for i in range(resp.shape[0]):
            for t in range(resp.shape[1]):
                out[i, t] = np.interp(self.knot_times, times, resp[i, t])
        return out

    @property
    def tc_labels(self) -> tuple[str, ...]:
        return self.scenario_cfg.scenario.tc_labels


@dataclass
class CalibrationTarget:
    """Log-posterior over [theta..., ln(sigma)...] for DRAM sampling.

    Noise scales are sampled on the log scale with the Jacobian-corrected
    density of their uniform natural-scale prior, which keeps positivity
    without boundary rejections. Model failures (non-positive predictions)
    count as zero likelihood rather than aborting the chain.
    """

    theta_prior: PriorSpec
    likelihood: LikelihoodSpec
    data_log_values: tuple[np.ndarray, ...]  # per TC, ln(K)
    knot_to_data_idx: np.ndarray
    knot_to_data_lam: np.ndarray
    evaluator: object  # maps (n, p) -> (n, n_tc, n_knots)

    def __post_init__(self):
        sp = self.likelihood.sigma_prior
        if not isinstance(sp, Uniform):
            raise ConfigurationError("sigma prior must be uniform on the natural scale")
        self._log_sig_lo = np.log(sp.low)
        self._log_sig_hi = np.log(sp.high)
        self._log_sig_range = np.log(sp.high - sp.low)

    @property
    def n_theta(self) -> int:
        return self.theta_prior.dim

    @property
    def n_sigma(self) -> int:
        return self.likelihood.n_sigmas(len(self.data_log_values))

    @property
    def dim(self) -> int:
        return self.n_theta + self.n_sigma

    @property
    def param_names(self) -> tuple[str, ...]:
        if self.likelihood.mode == "emulator":
            sig = ("log_sigma_em",)
        else:
            sig = tuple(f"log_sigma_tc{i + 1}" for i in range(self.n_sigma))
        return self.theta_prior.names + sig

    @property
    def natural_names(self) -> tuple[str, ...]:
        return tuple(n.removeprefix("log_") if n.startswith("log_sigma") else n for n in self.param_names)

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        theta = self.theta_prior.sample(rng, 1)[0]
        log_sig = rng.uniform(self._log_sig_lo, self._log_sig_hi, size=self.n_sigma)
        return np.concatenate([theta, log_sig])

    def proposal_scales(self, frac: float) -> np.ndarray:
        scales = []
        for m in self.theta_prior.marginals:
            scales.append((m.high - m.low) if isinstance(m, Uniform) else m.sd)
        scales += [self._log_sig_hi - self._log_sig_lo] * self.n_sigma
        return frac * np.asarray(scales)

    def predictions_log(self, theta: np.ndarray) -> np.ndarray | None:
        raw = self.evaluator(theta[None, :])[0]
        if np.any(raw <= 0):
            return None
        logp = np.log(raw)
        idx, lam = self.knot_to_data_idx, self.knot_to_data_lam
        return (1.0 - lam) * logp[:, idx] + lam * logp[:, idx + 1]

    def __call__(self, state: np.ndarray) -> float:
        state = np.asarray(state, dtype=float)
        theta = state[: self.n_theta]
        log_sig = state[self.n_theta :]
        lp = self.theta_prior.log_pdf(theta)
        if lp == -np.inf:
            return -np.inf
        if np.any(log_sig < self._log_sig_lo) or np.any(log_sig > self._log_sig_hi):
            return -np.inf
        lp += float(np.sum(log_sig)) - self.n_sigma * self._log_sig_range
        pred_log = self.predictions_log(theta)
        if pred_log is None:
            return -np.inf
        sigmas = np.exp(log_sig)
        eps2 = self.likelihood.epsilon**2
        for i, obs_log in enumerate(self.data_log_values):
            sigma = sigmas[i] if self.likelihood.mode == "per_tc" else sigmas[0]
            var = sigma * sigma + eps2
            resid = obs_log - pred_log[i]
            lp += -0.5 * resid.size * np.log(2.0 * np.pi * var) - 0.5 * float(
                resid @ resid
            ) / var
        return lp

    def to_natural(self, posterior: PosteriorSamples) -> PosteriorSamples:
        samples = posterior.samples.copy()
        samples[:, self.n_theta :] = np.exp(samples[:, self.n_theta :])
        return PosteriorSamples(
            samples=samples,
            log_posterior=posterior.log_posterior.copy(),
            param_names=self.natural_names,
            burn=posterior.burn,
            thin=posterior.thin,
            source_id=posterior.source_id,
        )


@dataclass
class ScaledTarget:
    """Prior-scaled reparameterization of a calibration target.

    DRAM adapts an isotropically regularized covariance, which degenerates
    when parameter magnitudes span many decades (k3 coefficients live at
    1e-11 while pre-exponentials are order 10). The chain therefore walks
    z = state / scale with one scale per dimension; densities differ only
    by a constant Jacobian.
    """

    base: CalibrationTarget
    scales: np.ndarray

    def __call__(self, z: np.ndarray) -> float:
        return self.base(np.asarray(z) * self.scales)

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        return self.base.sample_start(rng) / self.scales


def prior_scales(target: CalibrationTarget) -> np.ndarray:
    return target.proposal_scales(1.0)


def _interp_weights(knots: np.ndarray, data_times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation stencil from the knot grid to data times."""
    if data_times.min() < knots.min() - 1e-9 or data_times.max() > knots.max() + 1e-9:
        raise ConfigurationError("data times extend beyond the surrogate knot grid")
    idx = np.clip(np.searchsorted(knots, data_times, side="right") - 1, 0, knots.size - 2)
    lam = (data_times - knots[idx]) / (knots[idx + 1] - knots[idx])
    return idx, np.clip(lam, 0.0, 1.0)


def knot_grid(scenario: Scenario, spacing: float) -> np.ndarray:
    return np.arange(0.0, scenario.duration + 0.5 * scenario.dt, spacing)


# ---------------------------------------------------------------------------
# Stages


def stage_simulate(cfg: RunConfig, scenario_name: str, overrides: dict | None = None) -> dict:
    sc = cfg.scenario(scenario_name)
    material = cfg.material.with_values(**(overrides or {}))
    field = solve(sc.scenario, material, sc.grid)
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    field_path = outdir / f"field_{scenario_name}.csv"
    field.to_csv(field_path)
    profiles = extract_thermocouples(field, sc.scenario)
    tc_path = outdir / f"tc_{scenario_name}.csv"
    write_tc_csv(
        tc_path,
        field.times,
        np.array([p.values for p in profiles]),
        [p.label for p in profiles],
    )
    write_manifest(outdir, f"simulate-{scenario_name}", cfg, [field_path, tc_path])
    return {"field_csv": str(field_path), "tc_csv": str(tc_path)}


def stage_synthesize(cfg: RunConfig, scenario_name: str, noise_sigma: float | None = None) -> dict:
    """Simulate at the synthetic truth and add multiplicative log noise."""
    sc = cfg.scenario(scenario_name)
    overrides = (
        cfg.synthetic.ground_overrides
        if scenario_name == "ground"
        else cfg.synthetic.flight_overrides
    )
    sigma = cfg.synthetic.noise_sigma if noise_sigma is None else noise_sigma
    material = cfg.material.with_values(**overrides)
    field = solve(sc.scenario, material, sc.grid)
    profiles = extract_thermocouples(field, sc.scenario)

    spacing = cfg.synthetic.spacing_for(scenario_name) or cfg.pce.knot_spacing
    knots = knot_grid(sc.scenario, spacing)
    rng = np.random.default_rng(stage_seed(cfg.seed, f"synthesize-{scenario_name}"))
    clean = np.array([np.interp(knots, field.times, p.values) for p in profiles])
    noisy = clean * np.exp(sigma * rng.standard_normal(clean.shape))

    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    data_path = outdir / f"data_{scenario_name}.csv"
    write_tc_csv(data_path, knots, noisy, [p.label for p in profiles])
    write_manifest(
        outdir,
        f"synthesize-{scenario_name}",
        cfg,
        [data_path],
        extra={"noise_sigma": sigma, "truth_overrides": overrides},
    )
    return {"data_csv": str(data_path), "noise_sigma": sigma}


def stage_morris(cfg: RunConfig, scenario_name: str) -> dict:
    """Trajectory screening of the full uncertain-input set via the solver."""
    sc = cfg.scenario(scenario_name)
    priors = cfg.screening_priors
    mcfg = cfg.morris
    tcfg = TrajectoryConfig(
        r=mcfg.trajectories,
        d=mcfg.levels,
        c=mcfg.jumps,
        seed=stage_seed(cfg.seed, f"morris-{scenario_name}"),
    )
    trajectories = build_trajectories(priors.dim, tcfg)
    points = np.concatenate([t.points for t in trajectories], axis=0)
    thetas = quantile_map(points, priors)
    params = [
        material_from_sample(cfg.material, priors.names, row) for row in thetas
    ]
    times, resp = tc_response_batch(sc.scenario, sc.grid, params, cfg.threads)

    out_times = knot_grid(sc.scenario, mcfg.output_spacing)
    n_tc = resp.shape[1]
    outputs = np.empty((resp.shape[0], n_tc * out_times.size))
    for i in range(resp.shape[0]):
        outputs[i] = np.concatenate(
            [np.interp(out_times, times, resp[i, t]) for t in range(n_tc)]
        )
    output_names = [
        f"{label}@{t:g}s" for label in sc.scenario.tc_labels for t in out_times
    ]

    p = priors.dim
    ee = np.empty((tcfg.r, p, outputs.shape[1]))
    row = 0
    for ti, traj in enumerate(trajectories):
        vals = outputs[row : row + p + 1]
        row += p + 1
        for s in range(p):
            j = traj.perturbed_index[s]
            ee[ti, j] = elementary_effect(vals[s + 1], vals[s], traj.signs[s] * tcfg.delta)
    stats = morris_statistics(ee, input_names=priors.names, output_names=output_names)
    influential = screen(stats, mcfg.screen_fraction)

    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    stats_path = outdir / f"morris_stats_{scenario_name}.csv"
    with open(stats_path, "w", encoding="utf-8") as fh:
        cols = [f"{kind}__{o}" for o in output_names for kind in ("mu", "mu_star", "sigma")]
        fh.write("input," + ",".join(cols) + "\n")
        for i, name in enumerate(priors.names):
            cells = []
            for k in range(len(output_names)):
                cells += [
                    repr(float(stats.mu[i, k])),
                    repr(float(stats.mu_star[i, k])),
                    repr(float(stats.sigma[i, k])),
                ]
            fh.write(name + "," + ",".join(cells) + "\n")
    plot_path = outdir / f"morris_plot_{scenario_name}.csv"
    with open(plot_path, "w", encoding="utf-8") as fh:
        fh.write("output,input,mu_star,sigma\n")
        for k, oname in enumerate(output_names):
            for i, iname in enumerate(priors.names):
                fh.write(
                    f"{oname},{iname},{float(stats.mu_star[i, k])!r},{float(stats.sigma[i, k])!r}\n"
                )
    screen_path = outdir / f"morris_screen_{scenario_name}.json"
    with open(screen_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"influential": influential, "fraction": mcfg.screen_fraction},
            fh,
            indent=2,
            sort_keys=True,
        )
    write_manifest(
        outdir, f"morris-{scenario_name}", cfg, [stats_path, plot_path, screen_path]
    )
    return {"influential": influential, "stats_csv": str(stats_path)}


def stage_pce(cfg: RunConfig, scenario_name: str) -> dict:
    """Fit the frozen-time field surrogate from LHS prior samples."""
    sc = cfg.scenario(scenario_name)
    seed = stage_seed(cfg.seed, f"pce-{scenario_name}")
    rng = np.random.default_rng(seed)
    u = lhs_unit(cfg.pce.samples, cfg.priors.dim, rng)
    thetas = quantile_map(u, cfg.priors)
    params = [material_from_sample(cfg.material, cfg.priors.names, row) for row in thetas]
    times, resp = tc_response_batch(sc.scenario, sc.grid, params, cfg.threads)
    surrogate = fit_field(
        inputs=thetas,
        responses=resp,
        times=times,
        knot_spacing=cfg.pce.knot_spacing,
        priors=cfg.priors,
        tc_labels=sc.scenario.tc_labels,
        q=cfg.pce.q,
        cv_target=cfg.pce.cv_target,
        max_order=cfg.pce.max_order,
        workers=cfg.threads,
    )
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"surrogate_{scenario_name}.json"
    surrogate.to_json(path)
    write_manifest(
        outdir,
        f"pce-{scenario_name}",
        cfg,
        [path],
        extra={
            "worst_loo": surrogate.worst_loo,
            "failed_knots": [list(fk) for fk in surrogate.failed_knots],
            "n_models": surrogate.n_tc * surrogate.n_knots,
        },
    )
    return {"surrogate_json": str(path), "worst_loo": surrogate.worst_loo}


def _load_or_fit_surrogate(cfg: RunConfig, scenario_name: str) -> FieldSurrogate:
    path = cfg.output_dir / f"surrogate_{scenario_name}.json"
    if path.is_file():
        return FieldSurrogate.from_json(path)
    stage_pce(cfg, scenario_name)
    return FieldSurrogate.from_json(path)


def build_target(
    cfg: RunConfig, scenario_name: str, use_solver: bool = False
) -> tuple[CalibrationTarget, np.ndarray]:
    """Calibration target for a scenario's data; returns (target, data_times)."""
    require_data_files(cfg, [scenario_name])
    sc = cfg.scenario(scenario_name)
    profiles = ingest_tc_csv(
        cfg.data_csv(scenario_name), depths=sc.scenario.tc_depths_from_surface
    )
    data_times = profiles[0].times
    if use_solver:
        knots = data_times
        evaluator = SolverEvaluator(
            scenario_cfg=sc,
            base_material=cfg.material,
            param_names=cfg.priors.names,
            knot_times=knots,
            workers=1,
        )
    else:
        surrogate = _load_or_fit_surrogate(cfg, scenario_name)
        evaluator = SurrogateEvaluator(surrogate.compile())
        knots = evaluator.knot_times
    idx, lam = _interp_weights(knots, data_times)
    target = CalibrationTarget(
        theta_prior=cfg.priors,
        likelihood=cfg.likelihood,
        data_log_values=tuple(np.log(p.values) for p in profiles),
        knot_to_data_idx=idx,
        knot_to_data_lam=lam,
        evaluator=evaluator,
    )
    return target, data_times


def stage_calibrate(cfg: RunConfig, scenario_name: str, use_solver: bool = False) -> dict:
    target, _ = build_target(cfg, scenario_name, use_solver)
    scales = prior_scales(target)
    scaled = ScaledTarget(base=target, scales=scales)
    m = cfg.mcmc
    ens_cfg = EnsembleConfig(
        n_chains=m.chains,
        n_samples=m.samples,
        initial_proposal_sd=m.initial_proposal_frac,  # z-space: scales are unity
        adapt_start=max(2, int(m.adapt_start_fraction * m.samples)),
        adapt_interval=m.adapt_interval,
        dr_scale=m.dr_scale,
        eps_reg=m.eps_reg,
        seed=stage_seed(cfg.seed, f"calibrate-{scenario_name}"),
    )
    ens = run_ensemble(
        scaled,
        scaled.sample_start,
        ens_cfg,
        param_names=target.param_names,
        workers=cfg.threads,
    )
    ens.chains *= scales  # back to physical units for storage and cleaning
    burn = int(m.burn_fraction * m.samples)
    posterior = target.to_natural(
        clean_chains(ens, burn=burn, thin=m.thin, source_id=f"calibrate-{scenario_name}")
    )

    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    chain_files = save_ensemble(ens, outdir / f"chains_{scenario_name}", prefix="chain")
    post_path = outdir / f"posterior_{scenario_name}.csv"
    posterior.to_csv(post_path)
    prov_path = outdir / f"posterior_{scenario_name}.json"
    with open(prov_path, "w", encoding="utf-8") as fh:
        json.dump(posterior.provenance(), fh, indent=2, sort_keys=True)
    write_manifest(
        outdir,
        f"calibrate-{scenario_name}",
        cfg,
        list(chain_files) + [post_path, prov_path],
        extra={
            "acceptance_rates": [float(a) for a in ens.acceptance_rates],
            "n_clean_samples": int(posterior.samples.shape[0]),
        },
    )
    return {
        "posterior_csv": str(post_path),
        "posterior": posterior,
        "target": target,
        "acceptance_rates": [float(a) for a in ens.acceptance_rates],
    }


def load_posterior_csv(path) -> PosteriorSamples:
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader if row]
    arr = np.asarray(rows)
    return PosteriorSamples(
        samples=arr[:, :-1],
        log_posterior=arr[:, -1],
        param_names=tuple(header[:-1]),
        burn=0,
        thin=1,
        source_id=str(path),
    )


def _split_theta_sigma(posterior: PosteriorSamples, prior: PriorSpec) -> tuple[np.ndarray, np.ndarray | None]:
    thetas = np.column_stack([posterior.column(n) for n in prior.names])
    sig_cols = [n for n in posterior.param_names if n.startswith("sigma")]
    sigmas = posterior.column(sig_cols[0]) if sig_cols else None
    return thetas, sigmas


def stage_propagate(
    cfg: RunConfig,
    posterior: PosteriorSamples,
    target_scenario: str,
    emulator: bool,
    variant: str,
    n_samples: int | None = None,
    stage: str = "propagate-parametric",
) -> tuple[PredictiveEnsemble, dict]:
    """Push posterior samples through the target-scenario surrogate."""
    surrogate = _load_or_fit_surrogate(cfg, target_scenario)
    evaluator = SurrogateEvaluator(surrogate.compile())
    thetas, sigmas = _split_theta_sigma(posterior, cfg.priors)
    seed = stage_seed(cfg.seed, stage)
    if n_samples is not None and n_samples < thetas.shape[0]:
        rng = np.random.default_rng(seed)
        pick = rng.choice(thetas.shape[0], size=n_samples, replace=False)
        thetas = thetas[pick]
        sigmas = sigmas[pick] if sigmas is not None else None
    if emulator and sigmas is None:
        raise ConfigurationError("emulator propagation needs posterior noise scales")
    ensemble = propagate(
        thetas,
        evaluator,
        knot_times=evaluator.knot_times,
        tc_labels=evaluator.tc_labels,
        emulator_sigmas=sigmas if emulator else None,
        seed=seed,
        provenance=variant,
    )

    outdir = cfg.output_dir / f"predictive_{variant}"
    outdir.mkdir(parents=True, exist_ok=True)
    files = ensemble.to_csv_per_tc(outdir, prefix="ensemble")
    int_path = outdir / "intervals.csv"
    with open(int_path, "w", encoding="utf-8") as fh:
        fh.write("tc,time,level,lo,hi\n")
        for level in cfg.mixture.interval_levels:
            pi = prediction_interval(ensemble.values, level)
            for t, label in enumerate(ensemble.tc_labels):
                for k, tk in enumerate(ensemble.knot_times):
                    fh.write(
                        f"{label},{float(tk)!r},{level},{float(pi.lo[t, k])!r},{float(pi.hi[t, k])!r}\n"
                    )
    files.append(str(int_path))
    # MAP trajectory from the full posterior's stored mode, not the subsample.
    map_path = outdir / "map_trajectory.csv"
    map_state = posterior.map_point
    map_theta = np.array(
        [map_state[posterior.param_names.index(n)] for n in cfg.priors.names]
    )
    map_traj = evaluator(map_theta[None, :])[0]
    write_tc_csv(map_path, evaluator.knot_times, map_traj, evaluator.tc_labels)
    files.append(str(map_path))
    write_manifest(cfg.output_dir, stage, cfg, files, extra={"variant": variant})
    return ensemble, {"dir": str(outdir)}


def coverage_fraction(
    ensemble: PredictiveEnsemble, data_profiles, level: float
) -> float:
    """Share of observed (TC, time) points inside the level interval."""
    pi = prediction_interval(ensemble.values, level)
    hits = 0
    total = 0
    for t, prof in enumerate(data_profiles):
        lo = np.interp(prof.times, ensemble.knot_times, pi.lo[t])
        hi = np.interp(prof.times, ensemble.knot_times, pi.hi[t])
        hits += int(np.sum((prof.values >= lo) & (prof.values <= hi)))
        total += prof.values.size
    return hits / total


def interval_containment(
    outer: PredictiveEnsemble, inner: PredictiveEnsemble, level: float
) -> float:
    """Fraction of (TC, knot) points where outer's interval covers inner's."""
    po = prediction_interval(outer.values, level)
    pi = prediction_interval(inner.values, level)
    ok = (po.lo <= pi.lo) & (po.hi >= pi.hi)
    return float(np.mean(ok))


def mixture_prior_spec(cfg: RunConfig) -> PriorSpec:
    """Joint prior over material inputs plus the emulator noise scale."""
    if cfg.likelihood.mode != "emulator":
        raise ConfigurationError("the mixture pipeline requires emulator mode")
    return PriorSpec(
        names=cfg.priors.names + ("sigma_em",),
        marginals=cfg.priors.marginals + (cfg.likelihood.sigma_prior,),
    )


def stage_sweep(
    cfg: RunConfig,
    ground_posterior: PosteriorSamples,
    reference: PredictiveEnsemble,
    target_scenario: str = "flight",
) -> dict:
    surrogate = _load_or_fit_surrogate(cfg, target_scenario)
    evaluator = SurrogateEvaluator(surrogate.compile())
    joint_prior = mixture_prior_spec(cfg)
    informative = np.column_stack(
        [ground_posterior.column(n) for n in joint_prior.names]
    )
    seed = stage_seed(cfg.seed, "sweep-w")
    n_prop = cfg.mixture.propagate_samples

    def build_mixture(w: float) -> MixturePrior:
        return MixturePrior(w=w, informative=informative, noninformative=joint_prior)

    def propagate_mixture(mix: MixturePrior, w: float) -> PredictiveEnsemble:
        w_tag = int(round(w * 1000))
        draws = mixture_sample(mix, n_prop, seed=seed + w_tag)
        thetas = draws[:, :-1]
        sigmas = draws[:, -1]
        return propagate(
            thetas,
            evaluator,
            knot_times=evaluator.knot_times,
            tc_labels=evaluator.tc_labels,
            emulator_sigmas=sigmas,
            seed=seed + w_tag,
            provenance=f"mixture_w{w:g}",
        )

    table, fields = sweep_w(
        cfg.mixture.w_grid,
        build_mixture,
        propagate_mixture,
        reference,
        grid_cfg=GridConfig(),
        truncate_level=cfg.mixture.truncate_level,
        collect_pointwise=True,
    )
    w_jeffreys = select_optimal_w(table, "jeffreys")
    w_backward = select_optimal_w(table, "backward_kl")

    outdir = cfg.output_dir
    table_path = outdir / "sweep_table.csv"
    table.to_csv(table_path)
    contour_path = outdir / "sweep_contours.csv"
    with open(contour_path, "w", encoding="utf-8") as fh:
        fh.write("w,tc,time,jeffreys\n")
        for w in sorted(fields):
            pw = fields[w]
            for t, label in enumerate(pw.tc_labels):
                for k, tk in enumerate(pw.knot_times):
                    fh.write(f"{w},{label},{float(tk)!r},{float(pw.jeffreys[t, k])!r}\n")
    select_path = outdir / "sweep_select.json"
    with open(select_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"w_jeffreys": w_jeffreys, "w_backward_kl": w_backward},
            fh,
            indent=2,
            sort_keys=True,
        )
    write_manifest(outdir, "sweep-w", cfg, [table_path, contour_path, select_path])

    optimal_ens = propagate_mixture(build_mixture(w_jeffreys), w_jeffreys)
    return {
        "table": table,
        "w_jeffreys": w_jeffreys,
        "w_backward_kl": w_backward,
        "optimal_ensemble": optimal_ens,
        "table_csv": str(table_path),
    }


def stage_overlay(cfg: RunConfig, threshold: float = 290.0) -> dict:
    """Normalized-time envelope check between the two scenarios at nominal
    parameter values; compares the surface node plus every TC depth."""
    results = {}
    profile_sets = {}
    for name in ("ground", "flight"):
        sc = cfg.scenario(name)
        field = solve(sc.scenario, cfg.material, sc.grid)
        profs = [surface_profile(field)] + extract_thermocouples(field, sc.scenario)
        profile_sets[name] = profs
    overlay = normalized_overlay(profile_sets["ground"], profile_sets["flight"], threshold)
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    overlay_path = outdir / "overlay.json"
    with open(overlay_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "verdict": overlay.verdict,
                "exceeded_depths_m": [float(d) for d in overlay.exceeded_depths],
                "threshold_K": threshold,
                "ground_norm_duration_s": overlay.ground_norm_duration,
                "flight_norm_duration_s": overlay.flight_norm_duration,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    curves_path = outdir / "overlay_curves.csv"
    with open(curves_path, "w", encoding="utf-8") as fh:
        fh.write("scenario,label,normalized_time,value\n")
        for scen_name, profs in (("ground", overlay.ground), ("flight", overlay.flight)):
            for p in profs:
                for t, v in zip(p.normalized_times, p.values):
                    fh.write(f"{scen_name},{p.label},{float(t)!r},{float(v)!r}\n")
    results["verdict"] = overlay.verdict
    results["overlay_json"] = str(overlay_path)
    write_manifest(outdir, "overlay", cfg, [overlay_path, curves_path])
    return results


def run_pipeline(cfg: RunConfig) -> dict:
    """Full flow: calibrate on ground data, propagate to the flight
    scenario with and without the emulator, then resolve the remaining
    posterior discrepancy through the mixture-weight sweep against the
    flight-calibrated reference."""
    require_data_files(cfg, ["ground", "flight"])
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)

    ground = stage_calibrate(cfg, "ground")
    flight = stage_calibrate(cfg, "flight")
    ground_post: PosteriorSamples = ground["posterior"]
    flight_post: PosteriorSamples = flight["posterior"]

    n_prop = cfg.mixture.propagate_samples
    parametric, _ = stage_propagate(
        cfg, ground_post, "flight", emulator=False, variant="parametric_only",
        n_samples=n_prop, stage="propagate-parametric",
    )
    emulator_ens, _ = stage_propagate(
        cfg, ground_post, "flight", emulator=True, variant="ground_emulator",
        n_samples=n_prop, stage="propagate-emulator",
    )
    reference, _ = stage_propagate(
        cfg, flight_post, "flight", emulator=True, variant="flight_reference",
        n_samples=n_prop, stage="propagate-reference",
    )

    sc_flight = cfg.scenario("flight")
    flight_data = ingest_tc_csv(
        cfg.data_csv("flight"), depths=sc_flight.scenario.tc_depths_from_surface
    )
    cov_parametric = coverage_fraction(parametric, flight_data, 0.95)
    cov_emulator = coverage_fraction(emulator_ens, flight_data, 0.95)

    sweep = stage_sweep(cfg, ground_post, reference, "flight")
    containment = interval_containment(sweep["optimal_ensemble"], reference, 0.99)

    overlay = stage_overlay(cfg)

    report = {
        "coverage_95": {
            "parametric_only": cov_parametric,
            "ground_emulator": cov_emulator,
            "gap": cov_emulator - cov_parametric,
        },
        "sweep": {
            "w_jeffreys": sweep["w_jeffreys"],
            "w_backward_kl": sweep["w_backward_kl"],
            "table_csv": sweep["table_csv"],
        },
        "containment_99_at_optimal_w": containment,
        "overlay_verdict": overlay["verdict"],
        "acceptance_rates": {
            "ground": ground["acceptance_rates"],
            "flight": flight["acceptance_rates"],
        },
    }
    report_path = outdir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    report["report_json"] = str(report_path)
    return report
