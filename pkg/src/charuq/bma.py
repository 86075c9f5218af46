"""Bayesian model averaging over calibration posteriors and the raw prior.

Candidate models are either data-updated posteriors (empirical sample
sets) or the untouched prior; their weights combine through evidence
estimates or are fixed a priori. The two-component mixture prior blends an
informative posterior with the non-informative prior under one weight w.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .calibration import PriorSpec


@dataclass(frozen=True)
class BayesianModel:
    """Bookkeeping for one candidate model in the average."""

    label: str
    kind: str  # "updated" or "unupdated"
    prior_probability: float
    posterior_samples: np.ndarray | None = None
    data_id: str = ""
    prior: PriorSpec | None = None

    def __post_init__(self):
        if self.kind not in ("updated", "unupdated"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not 0.0 <= self.prior_probability <= 1.0:
            raise ValueError("prior_probability must lie in [0, 1]")
        if self.kind == "updated" and self.posterior_samples is None:
            raise ValueError("updated models need posterior samples")
        if self.kind == "unupdated" and self.prior is None:
            raise ValueError("the unupdated model needs a prior spec")


def check_model_set(models: Sequence[BayesianModel]) -> None:
    total = sum(m.prior_probability for m in models)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"model prior probabilities sum to {total}, not 1")


@dataclass
class EvidenceEstimate:
    log_evidence: float
    standard_error: float
    n_mc: int
    underflow: bool = False


def estimate_evidence(
    log_likelihood_fn: Callable[[np.ndarray], float],
    prior: PriorSpec | np.ndarray,
    n_mc: int,
    seed: int = 0,
) -> EvidenceEstimate:
    """Simple Monte Carlo marginal likelihood over prior draws.

    Averages exp(log-likelihood) over n_mc draws in log space; the standard
    error of the log-evidence comes from delete-one jackknife replicates.
    When every draw underflows the estimate is flagged (log-evidence -inf)
    rather than silently zero.
    """
    if n_mc < 100:
        raise ValueError("need at least 100 Monte Carlo draws")
    rng = np.random.default_rng(seed)
    if isinstance(prior, PriorSpec):
        draws = prior.sample(rng, n_mc)
    else:
        pool = np.asarray(prior, dtype=float)
        draws = pool[rng.integers(0, pool.shape[0], size=n_mc)]
    logl = np.array([log_likelihood_fn(draws[i]) for i in range(n_mc)])

    finite = np.isfinite(logl)
    if not np.any(finite):
        warnings.warn(
            "all likelihood draws underflowed; increase n_mc or temper the likelihood",
            stacklevel=2,
        )
        return EvidenceEstimate(
            log_evidence=-np.inf, standard_error=np.nan, n_mc=n_mc, underflow=True
        )

    m = float(np.max(logl[finite]))
    scaled = np.where(finite, np.exp(logl - m), 0.0)
    total = float(scaled.sum())
    log_ev = m + np.log(total / n_mc)

    # Jackknife over delete-one log-evidences.
    with np.errstate(divide="ignore"):
        loo = m + np.log(np.maximum(total - scaled, 0.0) / (n_mc - 1))
    finite_loo = np.isfinite(loo)
    if np.all(finite_loo):
        se = float(np.sqrt((n_mc - 1) / n_mc * np.sum((loo - loo.mean()) ** 2)))
    else:
        se = np.inf  # a single draw dominates the sum
    return EvidenceEstimate(log_evidence=log_ev, standard_error=se, n_mc=n_mc)


def model_posterior(log_evidences: Sequence[float], priors: Sequence[float]) -> np.ndarray:
    """Posterior model probabilities, normalized across the whole set."""
    priors = np.asarray(priors, dtype=float)
    if abs(float(priors.sum()) - 1.0) > 1e-12:
        raise ValueError("model priors must sum to 1")
    log_ev = np.asarray(log_evidences, dtype=float)
    if log_ev.shape != priors.shape:
        raise ValueError("one log-evidence per model prior required")
    with np.errstate(divide="ignore"):
        log_w = log_ev + np.log(priors)
    finite = np.isfinite(log_w)
    if not np.any(finite):
        raise ValueError("all model weights vanished")
    m = float(np.max(log_w[finite]))
    w = np.where(finite, np.exp(log_w - m), 0.0)
    return w / w.sum()


def bayes_factor(log_ev_j: float, log_ev_k: float) -> float:
    """Evidence ratio of model j over model k."""
    if not (np.isfinite(log_ev_j) and np.isfinite(log_ev_k)):
        raise ValueError("log-evidences must be finite")
    return float(np.exp(log_ev_j - log_ev_k))


@dataclass
class MixturePrior:
    """Two-component prior: calibrated posterior (weight w) vs raw prior."""

    w: float
    informative: np.ndarray  # posterior sample set, shape (n, dim)
    noninformative: PriorSpec

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        self.informative = np.atleast_2d(np.asarray(self.informative, dtype=float))
        if self.w > 0.0 and self.informative.shape[0] == 0:
            raise ValueError("w > 0 requires a non-empty informative sample set")
        if self.informative.shape[1] != self.noninformative.dim:
            raise ValueError("component dimensions disagree")


def mixture_sample(mix: MixturePrior, n: int, seed: int = 0) -> np.ndarray:
    """Draw n parameter vectors from the two-component mixture.

    Each draw picks the informative posterior set (uniformly, with
    replacement) with probability w, otherwise a fresh prior draw.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    rng = np.random.default_rng(seed)
    take_info = rng.uniform(size=n) < mix.w
    out = np.empty((n, mix.noninformative.dim))
    n_info = int(take_info.sum())
    if n_info:
        rows = rng.integers(0, mix.informative.shape[0], size=n_info)
        out[take_info] = mix.informative[rows]
    n_prior = n - n_info
    if n_prior:
        out[~take_info] = mix.noninformative.sample(rng, n_prior)
    return out


def largest_remainder_allocation(weights: np.ndarray, n: int) -> np.ndarray:
    """Integer allocation of n draws proportional to weights; sums to n."""
    weights = np.asarray(weights, dtype=float)
    raw = weights * n
    counts = np.floor(raw).astype(int)
    short = n - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def bma_posterior(
    weights: Sequence[float],
    per_model_posteriors: Sequence[np.ndarray],
    n: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Stratified resample of the model-averaged posterior.

    Largest-remainder rounding fixes the per-model draw counts, then each
    model contributes that many with-replacement draws from its sample set.
    """
    weights = np.asarray(weights, dtype=float)
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    sets = [np.atleast_2d(np.asarray(s, dtype=float)) for s in per_model_posteriors]
    if len(sets) != len(weights):
        raise ValueError("one sample set per weight required")
    if n is None:
        n = max(s.shape[0] for s in sets)
    counts = largest_remainder_allocation(weights, n)
    rng = np.random.default_rng(seed)
    parts = []
    for cnt, s, w in zip(counts, sets, weights):
        if cnt == 0:
            continue
        if s.shape[0] == 0:
            raise ValueError("nonzero weight on an empty posterior sample set")
        parts.append(s[rng.integers(0, s.shape[0], size=cnt)])
    return np.concatenate(parts, axis=0)


@dataclass
class DivergenceTable:
    """w-sweep results: forward KL, backward KL and their Jeffreys sum."""

    w: np.ndarray
    kl_mixture_ref: np.ndarray
    kl_ref_mixture: np.ndarray
    jeffreys: np.ndarray

    def __post_init__(self):
        n = len(self.w)
        for arr in (self.kl_mixture_ref, self.kl_ref_mixture, self.jeffreys):
            if len(arr) != n:
                raise ValueError("table columns must have equal length")

    @property
    def grid_spacing(self) -> float:
        return float(np.min(np.diff(np.sort(self.w)))) if len(self.w) > 1 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("w,kl_mixture_vs_reference,kl_reference_vs_mixture,jeffreys\n")
            for row in zip(self.w, self.kl_mixture_ref, self.kl_ref_mixture, self.jeffreys):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "DivergenceTable":
        arr = np.asarray(rows, dtype=float)
        return cls(
            w=arr[:, 0],
            kl_mixture_ref=arr[:, 1],
            kl_ref_mixture=arr[:, 2],
            jeffreys=arr[:, 3],
        )
