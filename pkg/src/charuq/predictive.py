"""Sampling-based predictive inference.

Parameter samples push through a model evaluator (surrogate or raw
solver); optional white-noise emulator perturbations act on the log
response independently per time knot. Intervals are empirical quantiles;
densities come from Gaussian kernel estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDistributionError
from .forward_model import TCProfile

KDE_GRID_POINTS = 512
KDE_PAD_BANDWIDTHS = 4.0


@dataclass
class PredictiveEnsemble:
    """Predicted response samples per (thermocouple, time knot)."""

    values: np.ndarray  # (n_samples, n_tc, n_knots), K
    knot_times: np.ndarray
    tc_labels: tuple[str, ...]
    emulator: bool = False
    seed: int | None = None
    provenance: str = ""

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("values must have shape (n_samples, n_tc, n_knots)")
        if np.any(self.values <= 0):
            raise ValueError("predictive samples must stay positive (K)")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def samples_at(self, tc: int, knot: int) -> np.ndarray:
        return self.values[:, tc, knot]

    def to_csv_per_tc(self, outdir, prefix: str = "ensemble") -> list[str]:
        from pathlib import Path

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for t, label in enumerate(self.tc_labels):
            path = outdir / f"{prefix}_{label}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(",".join(repr(float(x)) for x in self.knot_times) + "\n")
                for row in self.values[:, t, :]:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            written.append(str(path))
        return written


def propagate(
    param_samples: np.ndarray,
    evaluator: Callable[[np.ndarray], np.ndarray],
    knot_times: np.ndarray,
    tc_labels: Sequence[str],
    emulator_sigmas: np.ndarray | None = None,
    seed: int = 0,
    provenance: str = "",
) -> PredictiveEnsemble:
    """Monte Carlo pushforward with optional log-space emulator noise.

    `evaluator` maps a (n, p) parameter matrix to responses of shape
    (n, n_tc, n_knots). With emulator noise enabled, independent
    N(0, sigma_i^2) perturbations are added to ln(response) per (TC, knot)
    for each sample i; noise streams are derived per sample index, so any
    evaluation order reproduces the same ensemble. Without noise this is
    the parametric-only pushforward.
    """
    thetas = np.atleast_2d(np.asarray(param_samples, dtype=float))
    raw = evaluator(thetas)
    if raw.shape[0] != thetas.shape[0]:
        raise ValueError("evaluator returned a mismatched sample count")
    if np.any(raw <= 0):
        raise ValueError("model returned non-positive response values")
    values = raw
    if emulator_sigmas is not None:
        sig = np.asarray(emulator_sigmas, dtype=float)
        if sig.shape != (thetas.shape[0],):
            raise ValueError("one emulator sigma per parameter sample required")
        if np.any(sig < 0):
            raise ValueError("emulator sigmas must be nonnegative")
        noise = np.empty_like(raw)
        streams = np.random.SeedSequence(seed).spawn(thetas.shape[0])
        for i, ss in enumerate(streams):
            rng = np.random.default_rng(ss)
            noise[i] = sig[i] * rng.standard_normal(raw.shape[1:])
        values = np.exp(np.log(raw) + noise)
    return PredictiveEnsemble(
        values=values,
        knot_times=np.asarray(knot_times, dtype=float),
        tc_labels=tuple(tc_labels),
        emulator=emulator_sigmas is not None,
        seed=seed,
        provenance=provenance,
    )


@dataclass
class PredictionInterval:
    level: float
    lo: np.ndarray  # (n_tc, n_knots)
    hi: np.ndarray

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if np.any(self.lo > self.hi):
            raise ValueError("interval bounds out of order")

    def contains(self, values: np.ndarray) -> np.ndarray:
        return (values >= self.lo) & (values <= self.hi)


def prediction_interval(samples: np.ndarray, level: float) -> tuple[float, float] | PredictionInterval:
    """Equal-tail empirical interval with linear order-statistic interpolation.

    For a 1-D sample vector the (lo, hi) pair is returned; for an ensemble
    array of shape (n_samples, n_tc, n_knots) a PredictionInterval covers
    every (TC, knot) column.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(samples, [alpha, 1.0 - alpha], axis=0)
    if samples.ndim == 1:
        return float(lo), float(hi)
    return PredictionInterval(level=level, lo=lo, hi=hi)


def silverman_bandwidth(samples: np.ndarray) -> float:
    """0.9 * min(sd, IQR / 1.34) * n^(-1/5); zero when the spread vanishes."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.quantile(samples, [0.75, 0.25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def gaussian_kde_pdf(samples: np.ndarray, bandwidth: float, x: np.ndarray) -> np.ndarray:
    """Gaussian-kernel density of the sample set evaluated at x."""
    samples = np.asarray(samples, dtype=float)
    x = np.asarray(x, dtype=float)
    z = (x[:, None] - samples[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (
        samples.size * bandwidth * np.sqrt(2.0 * np.pi)
    )


@dataclass
class DensityEstimate:
    grid: np.ndarray
    pdf: np.ndarray
    bandwidth: float
    degenerate: bool = False


def kde_fit(samples: np.ndarray, bandwidth: float | None = None) -> DensityEstimate:
    """Gaussian KDE on a 512-point grid, renormalized to unit integral.

    The grid spans [min - 4h, max + 4h]. A zero-spread sample set is
    flagged degenerate and falls back to a floor bandwidth of
    1e-9 * |value| so the density stays a proper (if spiked) Gaussian.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < 1:
        raise ValueError("need at least one sample")
    degenerate = False
    h = bandwidth if bandwidth is not None else silverman_bandwidth(samples)
    if h <= 0.0:
        degenerate = True
        h = 1e-9 * max(abs(float(samples[0])), 1e-30)
    lo = float(samples.min()) - KDE_PAD_BANDWIDTHS * h
    hi = float(samples.max()) + KDE_PAD_BANDWIDTHS * h
    grid = np.linspace(lo, hi, KDE_GRID_POINTS)
    pdf = gaussian_kde_pdf(samples, h, grid)
    area = float(np.trapezoid(pdf, grid))
    if area <= 0:
        raise DegenerateDistributionError("kernel density integrated to zero")
    return DensityEstimate(grid=grid, pdf=pdf / area, bandwidth=h, degenerate=degenerate)


def map_trajectory(
    posterior, evaluator: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Deterministic model run at the stored posterior mode, (n_tc, n_knots)."""
    point = np.asarray(posterior.map_point, dtype=float)
    return evaluator(point[None, :])[0]


@dataclass
class OverlayProfile:
    label: str
    normalized_times: np.ndarray
    values: np.ndarray
    depth: float
    crossed: bool


@dataclass
class OverlayResult:
    ground: list[OverlayProfile]
    flight: list[OverlayProfile]
    verdict: bool
    exceeded_depths: list[float] = field(default_factory=list)
    ground_norm_duration: float = 0.0
    flight_norm_duration: float = 0.0


def _first_crossing(times: np.ndarray, values: np.ndarray, threshold: float) -> float | None:
    above = values > threshold
    if not np.any(above):
        return None
    j = int(np.argmax(above))
    if j == 0:
        return float(times[0])
    t0, t1 = times[j - 1], times[j]
    v0, v1 = values[j - 1], values[j]
    return float(t0 + (threshold - v0) / (v1 - v0) * (t1 - t0))


def _above_duration(times: np.ndarray, values: np.ndarray, threshold: float) -> float:
    """Total time the series spends above the threshold (linear crossings)."""
    above = values > threshold
    if not np.any(above):
        return 0.0
    total = 0.0
    segment_start: float | None = None
    for j in range(len(times)):
        if above[j] and segment_start is None:
            if j == 0:
                segment_start = float(times[0])
            else:
                segment_start = _first_crossing(times[j - 1 : j + 1], values[j - 1 : j + 1], threshold)
        elif not above[j] and segment_start is not None:
            t0, t1 = times[j - 1], times[j]
            v0, v1 = values[j - 1], values[j]
            t_cross = float(t0 + (threshold - v0) / (v1 - v0) * (t1 - t0))
            total += t_cross - segment_start
            segment_start = None
    if segment_start is not None:
        total += float(times[-1]) - segment_start
    return total


def _normalize_profile(p: TCProfile, threshold: float, norm: float) -> OverlayProfile:
    t_cross = _first_crossing(p.times, p.values, threshold)
    if t_cross is None or norm <= 0:
        return OverlayProfile(
            label=p.label,
            normalized_times=np.empty(0),
            values=np.empty(0),
            depth=p.depth,
            crossed=False,
        )
    keep = p.times >= t_cross
    times = np.concatenate([[t_cross], p.times[keep]])
    values = np.concatenate(
        [[float(np.interp(t_cross, p.times, p.values))], p.values[keep]]
    )
    return OverlayProfile(
        label=p.label,
        normalized_times=(times - t_cross) / norm,
        values=values,
        depth=p.depth,
        crossed=True,
    )


def normalized_overlay(
    ground_profiles: Sequence[TCProfile],
    flight_profiles: Sequence[TCProfile],
    threshold: float = 290.0,
) -> OverlayResult:
    """Shift-and-rescale comparison establishing envelope containment.

    Each profile is clipped at its first up-crossing of the threshold,
    shifted to the origin and rescaled by its scenario's surface
    above-threshold duration (the first profile of each set is taken as the
    surface series). The verdict is true when the flight maximum at every
    compared depth stays at or below the ground maximum.
    """
    if len(ground_profiles) != len(flight_profiles):
        raise ValueError("profile sets must pair up by depth")
    if not ground_profiles:
        raise ValueError("need at least one profile per scenario")
    g_surf, f_surf = ground_profiles[0], flight_profiles[0]
    g_norm = _above_duration(g_surf.times, g_surf.values, threshold)
    f_norm = _above_duration(f_surf.times, f_surf.values, threshold)

    ground = [_normalize_profile(p, threshold, g_norm) for p in ground_profiles]
    flight = [_normalize_profile(p, threshold, f_norm) for p in flight_profiles]

    exceeded = []
    for g, f in zip(ground_profiles, flight_profiles):
        if float(f.values.max()) > float(g.values.max()):
            exceeded.append(f.depth)
    return OverlayResult(
        ground=ground,
        flight=flight,
        verdict=not exceeded,
        exceeded_depths=exceeded,
        ground_norm_duration=g_norm,
        flight_norm_duration=f_norm,
    )
