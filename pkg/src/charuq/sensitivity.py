"""Morris elementary-effects screening in the joint quantile space.

Trajectories live on a d-level grid of the unit hypercube; each step
perturbs exactly one input by +/-Delta with Delta = c / (d - 1). Inputs are
mapped to physical space through the inverse CDFs of their priors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .calibration import PriorSpec
from .sampling import lhs_unit

QUANTILE_CLAMP = 1e-12


@dataclass(frozen=True)
class TrajectoryConfig:
    r: int = 100  # trajectory count
    d: int = 101  # grid levels
    c: int = 1  # level jumps per perturbation
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("need at least one trajectory")
        if self.d < 2:
            raise ValueError("need at least two grid levels")
        if not 1 <= self.c <= self.d - 1:
            raise ValueError(f"c must lie in [1, d-1], got c={self.c}, d={self.d}")

    @property
    def delta(self) -> float:
        return self.c / (self.d - 1)


@dataclass
class Trajectory:
    points: np.ndarray  # (p+1, p) quantile-space coordinates
    perturbed_index: np.ndarray  # (p,) input perturbed at each step
    signs: np.ndarray  # (p,) +1 / -1 direction per step


def build_trajectories(p: int, cfg: TrajectoryConfig) -> list[Trajectory]:
    """r trajectories with LHS starting points snapped onto the level grid.

    Starts snap to interior levels whenever the grid admits them, so steps
    avoid the exact 0/1 quantiles whose normal inverse CDF diverges; on
    two-level grids (Delta = 1) the endpoints are the only choice.
    """
    if p < 1:
        raise ValueError("need at least one input")
    rng = np.random.default_rng(cfg.seed)
    d, c = cfg.d, cfg.c
    delta = cfg.delta
    starts_u = lhs_unit(cfg.r, p, rng)

    # Start levels k must admit at least one in-range move; prefer levels
    # whose start and endpoint both avoid the outermost grid lines.
    lo, hi = 1, d - 2
    interior = [
        k for k in range(lo, hi + 1) if (k - c >= lo) or (k + c <= hi)
    ]
    fallback = [k for k in range(d) if (k - c >= 0) or (k + c <= d - 1)]
    candidates = np.array(interior if interior else fallback)

    out = []
    for t in range(cfg.r):
        levels = np.empty(p, dtype=int)
        signs = np.empty(p, dtype=int)
        for j in range(p):
            k = int(candidates[np.argmin(np.abs(candidates - starts_u[t, j] * (d - 1)))])
            if interior:
                can_up, can_down = k + c <= hi, k - c >= lo
            else:
                can_up, can_down = k + c <= d - 1, k - c >= 0
            if can_up and can_down:
                signs[j] = 1 if rng.uniform() < 0.5 else -1
            else:
                signs[j] = 1 if can_up else -1
            levels[j] = k
        order = rng.permutation(p)
        points = np.empty((p + 1, p))
        points[0] = levels / (d - 1)
        for s, j in enumerate(order):
            points[s + 1] = points[s]
            points[s + 1, j] = points[s, j] + signs[j] * delta
        out.append(
            Trajectory(points=points, perturbed_index=order, signs=signs[order])
        )
    return out


def elementary_effect(f_plus, f_base, delta_signed: float):
    """Finite-difference quotient along one trajectory step.

    The signed step keeps the quotient direction-free: a linear function
    yields its slope for forward and backward steps alike.
    """
    if delta_signed == 0:
        raise ValueError("delta_signed must be nonzero")
    return (np.asarray(f_plus, dtype=float) - np.asarray(f_base, dtype=float)) / delta_signed


@dataclass
class MorrisStats:
    mu: np.ndarray  # (p, n_outputs)
    mu_star: np.ndarray  # (p, n_outputs)
    sigma: np.ndarray | None  # (p, n_outputs); None when r < 2
    input_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()


def morris_statistics(
    ee_samples: np.ndarray,
    input_names: Sequence[str] = (),
    output_names: Sequence[str] = (),
) -> MorrisStats:
    """Mean, mean-absolute and sample standard deviation of EE samples.

    ee_samples has shape (r, p) or (r, p, n_outputs). sigma uses the r - 1
    divisor and is reported as absent (None) when r < 2.
    """
    ee = np.asarray(ee_samples, dtype=float)
    if ee.ndim == 2:
        ee = ee[:, :, None]
    if ee.ndim != 3:
        raise ValueError("ee_samples must have shape (r, p) or (r, p, n_outputs)")
    r = ee.shape[0]
    if r < 1:
        raise ValueError("need at least one EE sample")
    mu = ee.mean(axis=0)
    mu_star = np.abs(ee).mean(axis=0)
    sigma = ee.std(axis=0, ddof=1) if r >= 2 else None
    return MorrisStats(
        mu=mu,
        mu_star=mu_star,
        sigma=sigma,
        input_names=tuple(input_names),
        output_names=tuple(output_names),
    )


def quantile_map(point: np.ndarray, priors: PriorSpec) -> np.ndarray:
    """Component-wise inverse CDF of the independent marginal priors.

    Quantiles of exactly 0 or 1 are clamped to [1e-12, 1 - 1e-12] (with a
    warning) so unbounded marginals stay finite.
    """
    u = np.asarray(point, dtype=float)
    if u.shape[-1] != priors.dim:
        raise ValueError(f"expected {priors.dim} coordinates, got {u.shape[-1]}")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("quantile coordinates must lie in [0, 1]")
    clipped = np.clip(u, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
    if np.any(clipped != u):
        warnings.warn(
            "quantile(s) at the 0/1 boundary clamped to the open interval",
            stacklevel=2,
        )
    cols = [m.ppf(clipped[..., j]) for j, m in enumerate(priors.marginals)]
    return np.stack(cols, axis=-1)


def screen(stats: MorrisStats, fraction: float = 0.05) -> list[str]:
    """Influential inputs by distance from the Morris-plane origin.

    Per input the distance is sqrt(max_k mu_star^2 + max_k sigma^2) over
    all output coordinates; inputs within `fraction` of the largest
    distance survive.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if stats.sigma is None:
        raise ValueError("screening needs sigma; run at least two trajectories")
    mu_star_max = stats.mu_star.max(axis=1)
    sigma_max = stats.sigma.max(axis=1)
    distance = np.sqrt(mu_star_max**2 + sigma_max**2)
    top = float(distance.max())
    names = stats.input_names or tuple(f"x{i}" for i in range(len(distance)))
    if top == 0.0:
        warnings.warn("all Morris distances are zero; nothing is influential", stacklevel=2)
        return []
    return [n for n, d in zip(names, distance) if d >= fraction * top]


def run_morris(
    model: Callable[[np.ndarray], np.ndarray],
    priors: PriorSpec,
    cfg: TrajectoryConfig,
    output_names: Sequence[str] = (),
) -> MorrisStats:
    """Full screening sweep: trajectories, model runs, EE statistics.

    `model` maps a physical parameter vector to a 1-D output vector; it is
    evaluated once per trajectory point (r * (p + 1) runs).
    """
    p = priors.dim
    trajectories = build_trajectories(p, cfg)
    ee = None
    for t_idx, traj in enumerate(trajectories):
        values = [np.atleast_1d(model(quantile_map(pt, priors))) for pt in traj.points]
        if ee is None:
            ee = np.empty((cfg.r, p, values[0].size))
        for s in range(p):
            j = traj.perturbed_index[s]
            ee[t_idx, j] = elementary_effect(
                values[s + 1], values[s], traj.signs[s] * cfg.delta
            )
    return morris_statistics(ee, input_names=priors.names, output_names=output_names)
