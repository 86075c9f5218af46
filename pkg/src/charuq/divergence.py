"""KL and Jeffreys divergence between predictive sample sets.

Densities come from Gaussian KDEs evaluated on a shared uniform grid with
a small floor before the logarithm; the truncated variant restricts the
grid to the union of the two prediction intervals and renormalizes. Field
totals integrate over time per thermocouple and sum across thermocouples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bma import DivergenceTable, MixturePrior
from .errors import DegenerateDistributionError, NumericalError
from .predictive import (
    KDE_GRID_POINTS,
    KDE_PAD_BANDWIDTHS,
    PredictiveEnsemble,
    gaussian_kde_pdf,
    prediction_interval,
    silverman_bandwidth,
)

NEGATIVE_CLAMP_FLOOR = -1e-6


@dataclass(frozen=True)
class GridConfig:
    points: int = KDE_GRID_POINTS
    pad_bandwidths: float = KDE_PAD_BANDWIDTHS
    density_floor: float = 1e-12


def _bandwidth_checked(samples: np.ndarray) -> float:
    h = silverman_bandwidth(samples)
    if h <= 0.0:
        raise DegenerateDistributionError("zero-spread sample set")
    return h


def _kde_pair_on_grid(
    p_samples: np.ndarray,
    q_samples: np.ndarray,
    cfg: GridConfig,
    span: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p_samples = np.asarray(p_samples, dtype=float)
    q_samples = np.asarray(q_samples, dtype=float)
    if p_samples.size < 10 or q_samples.size < 10:
        raise ValueError("need at least 10 samples per set")
    hp = _bandwidth_checked(p_samples)
    hq = _bandwidth_checked(q_samples)
    if span is None:
        lo = min(p_samples.min() - cfg.pad_bandwidths * hp, q_samples.min() - cfg.pad_bandwidths * hq)
        hi = max(p_samples.max() + cfg.pad_bandwidths * hp, q_samples.max() + cfg.pad_bandwidths * hq)
    else:
        lo, hi = span
    grid = np.linspace(lo, hi, cfg.points)
    p = np.maximum(gaussian_kde_pdf(p_samples, hp, grid), cfg.density_floor)
    q = np.maximum(gaussian_kde_pdf(q_samples, hq, grid), cfg.density_floor)
    return grid, p, q


def kl_between(
    p_samples: np.ndarray, q_samples: np.ndarray, grid_cfg: GridConfig | None = None
) -> float:
    """KDE-and-quadrature estimate of D_KL(p || q)."""
    cfg = grid_cfg or GridConfig()
    grid, p, q = _kde_pair_on_grid(p_samples, q_samples, cfg)
    return float(np.trapezoid(p * np.log(p / q), grid))


def jeffreys(
    p_samples: np.ndarray, q_samples: np.ndarray, grid_cfg: GridConfig | None = None
) -> float:
    """Symmetrized divergence: the sum of both KL directions."""
    cfg = grid_cfg or GridConfig()
    return kl_between(p_samples, q_samples, cfg) + kl_between(q_samples, p_samples, cfg)


def truncated_divergence(
    p_samples: np.ndarray,
    q_samples: np.ndarray,
    level: float = 0.95,
    grid_cfg: GridConfig | None = None,
) -> tuple[float, float, float]:
    """Divergences of both directions restricted to the union of the
    level-prediction intervals (taken as the covering hull), with both
    densities renormalized over that window.

    Returns (D_KL(p||q), D_KL(q||p), Jeffreys).
    """
    cfg = grid_cfg or GridConfig()
    p_lo, p_hi = prediction_interval(np.asarray(p_samples, dtype=float), level)
    q_lo, q_hi = prediction_interval(np.asarray(q_samples, dtype=float), level)
    span = (min(p_lo, q_lo), max(p_hi, q_hi))
    grid, p, q = _kde_pair_on_grid(p_samples, q_samples, cfg, span=span)
    p = p / np.trapezoid(p, grid)
    q = q / np.trapezoid(q, grid)
    fwd = float(np.trapezoid(p * np.log(p / q), grid))
    bwd = float(np.trapezoid(q * np.log(q / p), grid))
    return fwd, bwd, fwd + bwd


@dataclass
class DivergencePointwise:
    """Per (TC, knot) divergences between two predictive ensembles."""

    kl_forward: np.ndarray  # (n_tc, n_knots), D_KL(mixture || reference)
    kl_backward: np.ndarray  # D_KL(reference || mixture)
    jeffreys: np.ndarray
    knot_times: np.ndarray
    tc_labels: tuple[str, ...]
    clamped: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("tc,time,kl_forward,kl_backward,jeffreys\n")
            for t, label in enumerate(self.tc_labels):
                for k, tk in enumerate(self.knot_times):
                    fh.write(
                        f"{label},{float(tk)!r},{float(self.kl_forward[t, k])!r},"
                        f"{float(self.kl_backward[t, k])!r},{float(self.jeffreys[t, k])!r}\n"
                    )


def pointwise_divergence(
    ensemble: PredictiveEnsemble,
    reference: PredictiveEnsemble,
    grid_cfg: GridConfig | None = None,
    truncate_level: float | None = None,
) -> DivergencePointwise:
    """Divergence field between two ensembles on a shared knot grid.

    Small negative quadrature estimates (above -1e-6) are clamped to zero
    and flagged; the Jeffreys column is rebuilt from the clamped values so
    the additive identity holds exactly.
    """
    if ensemble.values.shape[1:] != reference.values.shape[1:]:
        raise ValueError("ensembles must share the (TC, knot) layout")
    cfg = grid_cfg or GridConfig()
    n_tc, n_k = ensemble.values.shape[1:]
    fwd = np.empty((n_tc, n_k))
    bwd = np.empty((n_tc, n_k))
    clamped = np.zeros((n_tc, n_k), dtype=bool)
    for t in range(n_tc):
        for k in range(n_k):
            p = ensemble.samples_at(t, k)
            q = reference.samples_at(t, k)
            if truncate_level is not None:
                f, b, _ = truncated_divergence(p, q, truncate_level, cfg)
            else:
                f = kl_between(p, q, cfg)
                b = kl_between(q, p, cfg)
            if f < 0:
                if f < NEGATIVE_CLAMP_FLOOR:
                    warnings.warn(
                        f"divergence estimate {f:.3e} below the clamp floor", stacklevel=2
                    )
                clamped[t, k] = True
                f = 0.0
            if b < 0:
                if b < NEGATIVE_CLAMP_FLOOR:
                    warnings.warn(
                        f"divergence estimate {b:.3e} below the clamp floor", stacklevel=2
                    )
                clamped[t, k] = True
                b = 0.0
            fwd[t, k] = f
            bwd[t, k] = b
    return DivergencePointwise(
        kl_forward=fwd,
        kl_backward=bwd,
        jeffreys=fwd + bwd,
        knot_times=ensemble.knot_times.copy(),
        tc_labels=ensemble.tc_labels,
        clamped=clamped,
    )


def integrate_field(
    pointwise: DivergencePointwise, knot_times: np.ndarray | None = None
) -> tuple[float, float, float]:
    """Trapezoid-in-time totals summed over thermocouples.

    Returns (forward, backward, jeffreys) in divergence-seconds. A
    single-knot thermocouple has zero temporal measure and contributes
    nothing (with a warning).
    """
    times = np.asarray(knot_times if knot_times is not None else pointwise.knot_times, dtype=float)
    if times.size == 1:
        warnings.warn("single-knot field has zero temporal measure", stacklevel=2)
        return 0.0, 0.0, 0.0
    fwd = float(np.trapezoid(pointwise.kl_forward, times, axis=1).sum())
    bwd = float(np.trapezoid(pointwise.kl_backward, times, axis=1).sum())
    dj = float(np.trapezoid(pointwise.jeffreys, times, axis=1).sum())
    return fwd, bwd, dj


def sweep_w(
    w_values: Sequence[float],
    build_mixture: Callable[[float], MixturePrior],
    propagate_mixture: Callable[[MixturePrior, float], PredictiveEnsemble],
    reference: PredictiveEnsemble,
    grid_cfg: GridConfig | None = None,
    truncate_level: float | None = None,
    collect_pointwise: bool = False,
) -> tuple[DivergenceTable, dict[float, DivergencePointwise]]:
    """Divergence table over the mixture-weight grid.

    Each row builds the mixture prior at w, propagates its predictive
    ensemble, and integrates the pointwise divergences against the
    reference. A failed propagation aborts that row only.
    """
    w_values = [float(w) for w in w_values]
    if any(w < 0 or w > 1 for w in w_values):
        raise ValueError("w grid must lie in [0, 1]")
    rows = []
    fields: dict[float, DivergencePointwise] = {}
    for w in w_values:
        try:
            mix = build_mixture(w)
            ens = propagate_mixture(mix, w)
            pw = pointwise_divergence(ens, reference, grid_cfg, truncate_level)
            fwd, bwd, dj = integrate_field(pw)
        except NumericalError as exc:
            warnings.warn(f"w={w:g} row failed: {exc}", stacklevel=2)
            continue
        rows.append((w, fwd, bwd, dj))
        if collect_pointwise:
            fields[w] = pw
    if not rows:
        raise NumericalError("every w row failed")
    return DivergenceTable.from_rows(rows), fields


def select_optimal_w(table: DivergenceTable, criterion: str = "jeffreys") -> float:
    """Arg-min of the chosen divergence column; ties go to the larger w
    (the more data-informed mixture)."""
    if len(table.w) == 0:
        raise ValueError("empty divergence table")
    if criterion == "jeffreys":
        col = table.jeffreys
    elif criterion == "backward_kl":
        col = table.kl_ref_mixture
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    best_w = None
    best_val = np.inf
    for w, v in sorted(zip(table.w, col)):
        if v <= best_val:
            best_val = v
            best_w = w
    return float(best_w)
