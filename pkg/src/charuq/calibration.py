"""Bayesian inversion: priors, log-likelihood, DRAM chains, chain cleaning.

The likelihood acts on natural-log transformed data and predictions
(multiplicative error), either with one noise scale per thermocouple or a
single shared emulator scale.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .errors import ConfigurationError
from .forward_model import TCProfile


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"need low < high, got [{self.low}, {self.high}]")

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(
            (x >= self.low) & (x <= self.high), -np.log(self.high - self.low), -np.inf
        )
        return float(out) if out.ndim == 0 else out

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u, dtype=float)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("sd must be positive")

    def log_pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        out = -0.5 * z * z - np.log(self.sd) - 0.5 * np.log(2.0 * np.pi)
        return float(out) if out.ndim == 0 else out

    def ppf(self, u):
        return self.mean + self.sd * ndtri(np.asarray(u, dtype=float))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=n)


Marginal = Uniform | Normal


@dataclass(frozen=True)
class PriorSpec:
    """Independent marginal priors for named parameters."""

    names: tuple[str, ...]
    marginals: tuple[Marginal, ...]

    def __post_init__(self):
        if len(self.names) != len(self.marginals):
            raise ValueError("names and marginals must align")
        if len(set(self.names)) != len(self.names):
            raise ValueError("parameter names must be unique")

    @property
    def dim(self) -> int:
        return len(self.names)

    def log_pdf(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got shape {theta.shape}")
        total = 0.0
        for x, m in zip(theta, self.marginals):
            lp = m.log_pdf(x)
            if lp == -np.inf:
                return -np.inf
            total += lp
        return total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([m.sample(rng, n) for m in self.marginals])

    def subset(self, names: Sequence[str]) -> "PriorSpec":
        idx = [self.names.index(n) for n in names]
        return PriorSpec(
            names=tuple(self.names[i] for i in idx),
            marginals=tuple(self.marginals[i] for i in idx),
        )


def log_prior(theta: np.ndarray, prior: PriorSpec) -> float:
    """Sum of marginal log-densities; -inf outside support."""
    return prior.log_pdf(theta)


@dataclass(frozen=True)
class LikelihoodSpec:
    """Noise structure of the log-error Gaussian likelihood.

    mode "per_tc" carries one noise scale per thermocouple; "emulator"
    shares a single scale across all profiles. epsilon is a fixed
    observational noise sd on the log scale, combined in quadrature.
    """

    mode: str = "emulator"
    sigma_prior: Marginal = field(default_factory=lambda: Uniform(1e-4, 0.5))
    epsilon: float = 0.0

    def __post_init__(self):
        if self.mode not in ("per_tc", "emulator"):
            raise ValueError(f"unknown likelihood mode {self.mode!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def n_sigmas(self, n_tc: int) -> int:
        return n_tc if self.mode == "per_tc" else 1


def log_likelihood(
    theta_and_sigmas: np.ndarray,
    data: Sequence[TCProfile],
    predictions: Sequence[TCProfile],
    spec: LikelihoodSpec,
    n_theta: int | None = None,
) -> float:
    """Gaussian log-likelihood of ln(data) - ln(prediction) residuals.

    The trailing entries of theta_and_sigmas hold the noise scales (one per
    TC in per_tc mode, a single shared value in emulator mode); predictions
    must already be aligned to the data time grids.
    """
    if len(data) != len(predictions):
        raise ValueError("data and predictions must pair up per thermocouple")
    vec = np.asarray(theta_and_sigmas, dtype=float)
    n_sig = spec.n_sigmas(len(data))
    if n_theta is None:
        n_theta = len(vec) - n_sig
    sigmas = vec[n_theta : n_theta + n_sig]
    if np.any(sigmas <= 0):
        raise ValueError("noise scales must be strictly positive")

    total = 0.0
    for i, (obs, pred) in enumerate(zip(data, predictions)):
        if len(obs.values) != len(pred.values):
            raise ValueError(f"prediction for {obs.label} not aligned to data grid")
        if np.any(obs.values <= 0):
            j = int(np.argmax(obs.values <= 0))
            raise ValueError(f"non-positive datum at TC {obs.label}, time index {j}")
        if np.any(pred.values <= 0):
            j = int(np.argmax(pred.values <= 0))
            raise ValueError(f"non-positive prediction at TC {obs.label}, time index {j}")
        sigma = sigmas[i] if spec.mode == "per_tc" else sigmas[0]
        var = sigma * sigma + spec.epsilon * spec.epsilon
        resid = np.log(obs.values) - np.log(pred.values)
        nu = len(resid)
        total += -0.5 * nu * np.log(2.0 * np.pi * var) - 0.5 * float(resid @ resid) / var
    return total


@dataclass
class ChainConfig:
    n_samples: int = 50_000
    initial_proposal_sd: np.ndarray | float = 0.1
    adapt_start: int | None = None  # default: 10% of chain
    adapt_interval: int = 100
    dr_scale: float = 0.2
    eps_reg: float = 1e-10
    seed: int = 0

    def resolved_adapt_start(self) -> int:
        if self.adapt_start is not None:
            return self.adapt_start
        return max(2, self.n_samples // 10)


@dataclass
class Chain:
    states: np.ndarray  # (n_samples, dim)
    log_posterior: np.ndarray  # (n_samples,)
    acceptance_rate: float
    seed: int


def dram_run(
    target: Callable[[np.ndarray], float], init: np.ndarray, cfg: ChainConfig
) -> Chain:
    """Delayed-rejection adaptive Metropolis chain.

    Adaptation: after `adapt_start` steps the proposal covariance is
    refreshed every `adapt_interval` steps to sd_factor * (history sample
    covariance + eps_reg * I) with sd_factor = 2.4^2 / dim. Delayed
    rejection: one second-stage proposal with covariance scaled by
    dr_scale^2 and the standard two-stage acceptance ratio.
    """
    x = np.asarray(init, dtype=float).copy()
    dim = x.size
    lp_x = float(target(x))
    if not np.isfinite(lp_x):
        raise ValueError("initial state has non-finite log-posterior")

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    sd_factor = 2.4**2 / dim
    sd0 = np.broadcast_to(np.asarray(cfg.initial_proposal_sd, dtype=float), (dim,))
    chol = np.diag(sd0.astype(float))

    states = np.empty((n, dim))
    logps = np.empty(n)
    accepted = 0

    # Running moments of the full history for covariance adaptation.
    s1 = np.zeros(dim)
    s2 = np.zeros((dim, dim))
    count = 0
    adapt_start = cfg.resolved_adapt_start()
    warned_stuck = False

    def stage1_logq(diff: np.ndarray) -> float:
        # Log density of the stage-1 proposal up to its normalizer, which
        # cancels inside the delayed-rejection ratio.
        z = solve_triangular(chol, diff, lower=True)
        return -0.5 * float(z @ z)

    for step in range(n):
        z = rng.standard_normal(dim)
        y1 = x + chol @ z
        lp_y1 = float(target(y1))
        log_a1 = lp_y1 - lp_x
        if np.log(rng.uniform()) < log_a1:
            x, lp_x = y1, lp_y1
            accepted += 1
        else:
            # Second-stage proposal from a shrunk covariance.
            y2 = x + cfg.dr_scale * (chol @ rng.standard_normal(dim))
            lp_y2 = float(target(y2))
            if np.isfinite(lp_y2):
                # alpha1(y2, y1) capped at 0 in log space; a cap of exactly
                # 0 zeroes the numerator and forces rejection.
                log_a1_rev = min(0.0, lp_y1 - lp_y2)
                rev_gap = -np.expm1(log_a1_rev)  # 1 - alpha1(y2, y1)
                fwd_gap = -np.expm1(log_a1)  # 1 - alpha1(x, y1), > 0 after rejection
                if rev_gap > 0.0:
                    num = lp_y2 + stage1_logq(y1 - y2) + np.log(rev_gap)
                    with np.errstate(divide="ignore"):
                        den = lp_x + stage1_logq(y1 - x) + np.log(fwd_gap)
                    if np.log(rng.uniform()) < num - den:
                        x, lp_x = y2, lp_y2
                        accepted += 1

        states[step] = x
        logps[step] = lp_x
        s1 += x
        s2 += np.outer(x, x)
        count += 1

        if not warned_stuck and accepted == 0 and step + 1 >= 10 * dim:
            warnings.warn(
                f"no accepted moves in the first {step + 1} steps; "
                "check the initial proposal scale",
                stacklevel=2,
            )
            warned_stuck = True

        if step + 1 >= adapt_start and (step + 1 - adapt_start) % cfg.adapt_interval == 0:
            mean = s1 / count
            cov = s2 / count - np.outer(mean, mean)
            cov = sd_factor * (cov + cfg.eps_reg * np.eye(dim))
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                chol = np.linalg.cholesky(cov + 1e-8 * np.eye(dim))

    return Chain(
        states=states,
        log_posterior=logps,
        acceptance_rate=accepted / n,
        seed=cfg.seed,
    )


@dataclass
class EnsembleConfig:
    n_chains: int = 4
    n_samples: int = 50_000
    initial_proposal_sd: np.ndarray | float = 0.1
    adapt_start: int | None = None
    adapt_interval: int = 100
    dr_scale: float = 0.2
    eps_reg: float = 1e-10
    seed: int = 0
    max_init_tries: int = 1000


@dataclass
class ChainEnsemble:
    chains: np.ndarray  # (n_chains, n_samples, dim)
    log_posterior: np.ndarray  # (n_chains, n_samples)
    acceptance_rates: np.ndarray  # (n_chains,)
    seeds: tuple[int, ...]
    param_names: tuple[str, ...]
    config: EnsembleConfig

    @property
    def n_chains(self) -> int:
        return self.chains.shape[0]

    @property
    def n_samples(self) -> int:
        return self.chains.shape[1]


def run_ensemble(
    target: Callable[[np.ndarray], float],
    prior_sampler: Callable[[np.random.Generator], np.ndarray],
    cfg: EnsembleConfig,
    param_names: Sequence[str] | None = None,
    workers: int = 1,
) -> ChainEnsemble:
    """Independent DRAM chains with distinct seeds and prior-drawn starts.

    Starting states are rejection-resampled until the posterior is finite,
    up to cfg.max_init_tries draws per chain.
    """
    if cfg.n_chains < 1:
        raise ValueError("need at least one chain")
    seed_seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    chain_seeds = [int(s.generate_state(1)[0]) for s in seed_seqs]

    inits = []
    for s in seed_seqs:
        rng = np.random.default_rng(s)
        for _ in range(cfg.max_init_tries):
            candidate = prior_sampler(rng)
            if np.isfinite(target(candidate)):
                inits.append(np.asarray(candidate, dtype=float))
                break
        else:
            raise ConfigurationError(
                f"no finite-posterior initial state in {cfg.max_init_tries} prior draws"
            )

    chain_cfgs = [
        ChainConfig(
            n_samples=cfg.n_samples,
            initial_proposal_sd=cfg.initial_proposal_sd,
            adapt_start=cfg.adapt_start,
            adapt_interval=cfg.adapt_interval,
            dr_scale=cfg.dr_scale,
            eps_reg=cfg.eps_reg,
            seed=chain_seeds[i],
        )
        for i in range(cfg.n_chains)
    ]

    if workers > 1 and cfg.n_chains > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(_dram_worker, [(target, i, c) for i, c in zip(inits, chain_cfgs)]))
    else:
        chains = [dram_run(target, i, c) for i, c in zip(inits, chain_cfgs)]

    dim = inits[0].size
    names = tuple(param_names) if param_names else tuple(f"p{i}" for i in range(dim))
    return ChainEnsemble(
        chains=np.stack([c.states for c in chains]),
        log_posterior=np.stack([c.log_posterior for c in chains]),
        acceptance_rates=np.array([c.acceptance_rate for c in chains]),
        seeds=tuple(chain_seeds),
        param_names=names,
        config=cfg,
    )


def _dram_worker(args):
    target, init, cfg = args
    return dram_run(target, init, cfg)


@dataclass
class PosteriorSamples:
    samples: np.ndarray  # (n_kept, dim)
    log_posterior: np.ndarray  # (n_kept,)
    param_names: tuple[str, ...]
    burn: int
    thin: int
    source_id: str = ""

    @property
    def map_point(self) -> np.ndarray:
        return self.samples[int(np.argmax(self.log_posterior))]

    @property
    def map_log_posterior(self) -> float:
        return float(np.max(self.log_posterior))

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.param_names.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.param_names) + ",log_posterior\n")
            for row, lp in zip(self.samples, self.log_posterior):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(lp)!r}\n")

    def provenance(self) -> dict:
        return {
            "burn": self.burn,
            "thin": self.thin,
            "source_id": self.source_id,
            "n_samples": int(self.samples.shape[0]),
            "map_point": [float(v) for v in self.map_point],
            "map_log_posterior": self.map_log_posterior,
            "param_names": list(self.param_names),
        }


def clean_chains(ens: ChainEnsemble, burn: int, thin: int, source_id: str = "") -> PosteriorSamples:
    """Discard burn-in, keep every thin-th state (index `burn` included).

    Exactly floor((n_samples - burn) / thin) states survive per chain, so
    the aggregate count is n_chains * floor((n_samples - burn) / thin).
    """
    if not 0 <= burn < ens.n_samples:
        raise ValueError(f"burn must lie in [0, {ens.n_samples}), got {burn}")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    kept = (ens.n_samples - burn) // thin
    if kept == 0:
        raise ValueError("burn/thin combination keeps no samples")
    idx = burn + thin * np.arange(kept)
    samples = ens.chains[:, idx, :].reshape(-1, ens.chains.shape[2])
    logps = ens.log_posterior[:, idx].reshape(-1)
    return PosteriorSamples(
        samples=samples,
        log_posterior=logps,
        param_names=ens.param_names,
        burn=burn,
        thin=thin,
        source_id=source_id,
    )


def save_ensemble(ens: ChainEnsemble, outdir, prefix: str = "chain") -> list[str]:
    """One CSV per chain plus a JSON manifest of seeds and acceptance."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in range(ens.n_chains):
        path = outdir / f"{prefix}_{c}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(ens.param_names) + ",log_posterior\n")
            for row, lp in zip(ens.chains[c], ens.log_posterior[c]):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(lp)!r}\n")
        written.append(str(path))
    manifest = {
        "seeds": list(ens.seeds),
        "acceptance_rates": [float(a) for a in ens.acceptance_rates],
        "n_chains": ens.n_chains,
        "n_samples": ens.n_samples,
        "param_names": list(ens.param_names),
    }
    mpath = outdir / f"{prefix}_manifest.json"
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    written.append(str(mpath))
    return written
