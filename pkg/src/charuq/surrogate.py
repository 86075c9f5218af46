"""Frozen-time polynomial chaos surrogates.

Orthonormal Legendre/Hermite bases paired to uniform/normal marginals,
hyperbolically truncated multi-index sets, and sparse fitting via least
angle regression with a corrected leave-one-out selection rule. One scalar
model is fitted per thermocouple and time knot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.linear_model import lars_path

from .calibration import Normal, PriorSpec, Uniform
from .errors import FitError


@dataclass(frozen=True)
class MultiIndex:
    degrees: tuple[int, ...]

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)


def hyperbolic_multi_indices(p: int, order: int, q: float) -> list[MultiIndex]:
    """All multi-indices with q-norm at most `order`, graded lexicographic.

    q = 1 recovers plain total-degree truncation; smaller q thins out the
    high-interaction corners of the index set.
    """
    if p < 1:
        raise ValueError("need at least one input")
    if order < 0:
        raise ValueError("order must be nonnegative")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")

    def admitted(deg: tuple[int, ...]) -> bool:
        if q == 1.0:
            return sum(deg) <= order
        s = sum(d**q for d in deg if d)
        return s ** (1.0 / q) <= order + 1e-9

    indices: list[tuple[int, ...]] = []

    def grow(prefix: list[int], remaining: int, budget: int):
        if remaining == 1:
            for d in range(budget + 1):
                deg = tuple(prefix + [d])
                if admitted(deg):
                    indices.append(deg)
            return
        for d in range(budget + 1):
            grow(prefix + [d], remaining - 1, budget - d)

    grow([], p, order)
    # Graded order: ascending total degree, ties broken lexicographically
    # with the leading dimensions dominant.
    indices.sort(key=lambda deg: (sum(deg), tuple(-d for d in deg)))
    return [MultiIndex(degrees=deg) for deg in indices]


def _legendre_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Orthonormal Legendre values, shape (len(x), max_degree + 1).

    Normalized against the uniform density 1/2 on [-1, 1], so the degree-n
    polynomial is sqrt(2n + 1) * P_n.
    """
    out = np.empty((x.size, max_degree + 1))
    out[:, 0] = 1.0
    if max_degree >= 1:
        out[:, 1] = x
    for n in range(1, max_degree):
        out[:, n + 1] = ((2 * n + 1) * x * out[:, n] - n * out[:, n - 1]) / (n + 1)
    norms = np.sqrt(2 * np.arange(max_degree + 1) + 1)
    return out * norms


def _hermite_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Orthonormal probabilists' Hermite values, He_n / sqrt(n!)."""
    out = np.empty((x.size, max_degree + 1))
    out[:, 0] = 1.0
    if max_degree >= 1:
        out[:, 1] = x
    for n in range(1, max_degree):
        out[:, n + 1] = x * out[:, n] - n * out[:, n - 1]
    norms = np.array([math.sqrt(math.factorial(n)) for n in range(max_degree + 1)])
    return out / norms


@dataclass(frozen=True)
class BasisDimension:
    """Basis family plus the standardization map of one input."""

    kind: str  # "legendre" or "hermite"
    a: float  # uniform low / normal mean
    b: float  # uniform high / normal sd

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "legendre":
            return 2.0 * (x - self.a) / (self.b - self.a) - 1.0
        return (x - self.a) / self.b

    def table(self, x_std: np.ndarray, max_degree: int) -> np.ndarray:
        if self.kind == "legendre":
            return _legendre_table(x_std, max_degree)
        return _hermite_table(x_std, max_degree)


def basis_dimensions(priors: PriorSpec) -> tuple[BasisDimension, ...]:
    dims = []
    for m in priors.marginals:
        if isinstance(m, Uniform):
            dims.append(BasisDimension("legendre", m.low, m.high))
        elif isinstance(m, Normal):
            dims.append(BasisDimension("hermite", m.mean, m.sd))
        else:
            raise ValueError(f"unsupported marginal type {type(m).__name__}")
    return tuple(dims)


def basis_eval(
    index: MultiIndex, u: np.ndarray, kinds: Sequence[BasisDimension]
) -> np.ndarray:
    """Product of univariate orthonormal polynomials at standardized points."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != len(index.degrees):
        raise ValueError("point dimension does not match multi-index")
    val = np.ones(u.shape[0])
    for j, (deg, dim) in enumerate(zip(index.degrees, kinds)):
        if deg:
            val *= dim.table(u[:, j], deg)[:, deg]
    return val


def design_matrix(
    u_std: np.ndarray, indices: Sequence[MultiIndex], kinds: Sequence[BasisDimension]
) -> np.ndarray:
    max_deg = [max(ix.degrees[j] for ix in indices) for j in range(u_std.shape[1])]
    tables = [dim.table(u_std[:, j], max_deg[j]) for j, dim in enumerate(kinds)]
    cols = np.empty((u_std.shape[0], len(indices)))
    for c, ix in enumerate(indices):
        col = np.ones(u_std.shape[0])
        for j, deg in enumerate(ix.degrees):
            if deg:
                col = col * tables[j][:, deg]
        cols[:, c] = col
    return cols


@dataclass
class PCEModel:
    indices: list[MultiIndex]
    coefficients: np.ndarray
    basis: tuple[BasisDimension, ...]
    loo_error: float
    order: int
    q_norm: float

    def __post_init__(self):
        degs = [ix.degrees for ix in self.indices]
        if len(set(degs)) != len(degs):
            raise ValueError("multi-indices must be distinct")
        zero = tuple([0] * len(self.basis))
        if zero not in degs:
            raise ValueError("the constant multi-index must be present")
        if self.loo_error < 0:
            raise ValueError("loo_error must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "indices": [list(ix.degrees) for ix in self.indices],
            "coefficients": [float(c) for c in self.coefficients],
            "basis": [
                {"kind": d.kind, "a": d.a, "b": d.b} for d in self.basis
            ],
            "loo_error": float(self.loo_error),
            "order": self.order,
            "q_norm": self.q_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PCEModel":
        return cls(
            indices=[MultiIndex(tuple(deg)) for deg in d["indices"]],
            coefficients=np.asarray(d["coefficients"], dtype=float),
            basis=tuple(BasisDimension(**b) for b in d["basis"]),
            loo_error=d["loo_error"],
            order=d["order"],
            q_norm=d["q_norm"],
        )


def pce_eval(model: PCEModel, theta: np.ndarray) -> np.ndarray | float:
    """Expansion value at physical parameter point(s)."""
    theta = np.asarray(theta, dtype=float)
    scalar = theta.ndim == 1
    pts = np.atleast_2d(theta)
    if pts.shape[1] != len(model.basis):
        raise ValueError(
            f"expected {len(model.basis)} parameters, got {pts.shape[1]}"
        )
    u_std = np.column_stack(
        [dim.standardize(pts[:, j]) for j, dim in enumerate(model.basis)]
    )
    phi = design_matrix(u_std, model.indices, model.basis)
    out = phi @ model.coefficients
    return float(out[0]) if scalar else out


def pce_moments(model: PCEModel) -> tuple[float, float]:
    """Mean and variance straight off the orthonormal coefficients."""
    mean = 0.0
    var = 0.0
    for ix, a in zip(model.indices, model.coefficients):
        if ix.total_degree == 0:
            mean = float(a)
        else:
            var += float(a) ** 2
    return mean, var


def _fit_single(
    phi: np.ndarray,
    indices: list[MultiIndex],
    y: np.ndarray,
    order: int,
    q: float,
    kinds: tuple[BasisDimension, ...],
) -> PCEModel | None:
    """Best model along the LAR path for one truncation order.

    Least angle regression orders the non-constant predictors; each path
    prefix (always including the constant) is refitted by least squares and
    scored by the variance-normalized corrected leave-one-out error via the
    hat-matrix identity. Exact score ties keep the smaller support. The QR
    factors grow column by column, so the whole path costs O(n * S^2).
    """
    n, m = phi.shape
    y_var = float(np.var(y, ddof=1)) if n > 1 else 0.0
    const_col = 0  # graded ordering puts the zero index first

    y_c = y - y.mean()
    nontrivial = [j for j in range(m) if j != const_col]
    sub = phi[:, nontrivial]
    norms = np.linalg.norm(sub, axis=0)
    usable_cols = [j for j, nrm in zip(nontrivial, norms) if nrm > 1e-13]
    if usable_cols:
        _, active, _ = lars_path(phi[:, usable_cols], y_c, method="lar")
        entering = [usable_cols[a] for a in active]
    else:
        entering = []

    max_cols = min(1 + len(entering), n - 1)
    Q = np.empty((n, max_cols))
    Rinv = np.zeros((max_cols, max_cols))
    qty = np.empty(max_cols)
    h = np.zeros(n)
    resid = y.astype(float).copy()
    support: list[int] = []

    best_err = np.inf
    best_size = 0

    def push(col: int) -> bool:
        s = len(support)
        v = phi[:, col]
        r = Q[:, :s].T @ v if s else np.empty(0)
        v_perp = v - (Q[:, :s] @ r if s else 0.0)
        rho = float(np.linalg.norm(v_perp))
        if rho <= 1e-10 * max(1.0, float(np.linalg.norm(v))):
            return False
        q_new = v_perp / rho
        Q[:, s] = q_new
        if s:
            Rinv[:s, s] = -(Rinv[:s, :s] @ r) / rho
        Rinv[s, s] = 1.0 / rho
        proj = float(q_new @ y)
        qty[s] = proj
        resid_new = resid - proj * q_new
        resid[:] = resid_new
        h[:] = h + q_new**2
        support.append(col)
        return True

    if not push(const_col):
        return None
    columns = iter(entering)
    while True:
        s = len(support)
        if np.any(h >= 1.0 - 1e-12):
            break  # hat diagonal saturated; larger supports cannot be scored
        loo = float(np.mean((resid / (1.0 - h)) ** 2))
        trace_inv = float(np.sum(Rinv[:s, :s] ** 2))
        err = loo * (n / (n - s)) * (1.0 + trace_inv)
        if y_var > 0:
            err /= y_var
        if err < best_err:
            best_err = err
            best_size = s
        if s >= max_cols:
            break
        nxt = next(columns, None)
        if nxt is None:
            break
        if not push(nxt):
            break

    if best_size == 0:
        return None
    sel = support[:best_size]
    coef = Rinv[:best_size, :best_size] @ qty[:best_size]
    return PCEModel(
        indices=[indices[j] for j in sel],
        coefficients=coef,
        basis=kinds,
        loo_error=best_err,
        order=order,
        q_norm=q,
    )


def fit(
    inputs: np.ndarray,
    outputs: np.ndarray,
    priors: PriorSpec,
    q: float = 0.75,
    cv_target: float = 1e-3,
    max_order: int = 8,
) -> PCEModel:
    """Adaptive-order sparse fit against a leave-one-out target.

    The truncation order grows until the variance-normalized corrected
    leave-one-out error of the best LAR-selected refit drops to cv_target;
    the best model over all visited orders is returned either way.
    """
    fitter = FieldFitter(inputs, priors, q=q, cv_target=cv_target, max_order=max_order)
    return fitter.fit_one(np.asarray(outputs, dtype=float))


class FieldFitter:
    """Shares standardized inputs and design matrices across many targets."""

    def __init__(
        self,
        inputs: np.ndarray,
        priors: PriorSpec,
        q: float = 0.75,
        cv_target: float = 1e-3,
        max_order: int = 8,
    ):
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 2:
            raise ValueError("inputs must have shape (n_samples, p)")
        if inputs.shape[1] != priors.dim:
            raise ValueError("input dimension does not match the prior")
        self.kinds = basis_dimensions(priors)
        self.q = q
        self.cv_target = cv_target
        self.max_order = max_order
        self.n = inputs.shape[0]
        self.p = inputs.shape[1]
        self.u_std = np.column_stack(
            [dim.standardize(inputs[:, j]) for j, dim in enumerate(self.kinds)]
        )
        n_linear = len(hyperbolic_multi_indices(self.p, 1, q))
        if self.n < 2 * n_linear:
            raise ValueError(
                f"need at least {2 * n_linear} samples for an order-1 basis, got {self.n}"
            )
        self._cache: dict[int, tuple[list[MultiIndex], np.ndarray]] = {}

    def _prepared(self, order: int) -> tuple[list[MultiIndex], np.ndarray]:
        if order not in self._cache:
            indices = hyperbolic_multi_indices(self.p, order, self.q)
            phi = design_matrix(self.u_std, indices, self.kinds)
            self._cache[order] = (indices, phi)
        return self._cache[order]

    def fit_one(self, y: np.ndarray) -> PCEModel:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError(f"outputs must have shape ({self.n},)")
        if not np.all(np.isfinite(y)):
            raise ValueError("outputs must be finite")
        # Spread negligible against the mean scale: the target is constant
        # for any practical purpose and variance normalization would be
        # meaningless noise amplification.
        if np.ptp(y) == 0.0 or float(np.std(y)) <= 1e-6 * abs(float(y.mean())):
            return PCEModel(
                indices=[MultiIndex(tuple([0] * self.p))],
                coefficients=np.array([float(y.mean())]),
                basis=self.kinds,
                loo_error=0.0,
                order=0,
                q_norm=self.q,
            )
        indices1, phi1 = self._prepared(1)
        if np.linalg.matrix_rank(phi1) < len(indices1):
            raise FitError(
                f"degenerate design matrix for basis size {len(indices1)} (order 1)"
            )
        best: PCEModel | None = None
        for order in range(1, self.max_order + 1):
            indices, phi = self._prepared(order)
            model = _fit_single(phi, indices, y, order, self.q, self.kinds)
            if model is not None and (best is None or model.loo_error < best.loo_error):
                best = model
            if best is not None and best.loo_error <= self.cv_target:
                break
        if best is None:
            raise FitError(
                f"no usable model up to order {self.max_order} "
                f"(basis size {len(self._prepared(self.max_order)[0])})"
            )
        return best


@dataclass
class FieldSurrogate:
    """One PCE model per (thermocouple, time-knot) sharing a basis family."""

    models: list[list[PCEModel | None]]  # [tc][knot]
    time_knots: np.ndarray
    tc_labels: tuple[str, ...]
    input_names: tuple[str, ...]
    worst_loo: float
    failed_knots: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_tc(self) -> int:
        return len(self.models)

    @property
    def n_knots(self) -> int:
        return len(self.time_knots)

    def compile(self) -> "CompiledFieldSurrogate":
        return CompiledFieldSurrogate(self)

    def to_json(self, path) -> None:
        doc = {
            "time_knots": [float(t) for t in self.time_knots],
            "tc_labels": list(self.tc_labels),
            "input_names": list(self.input_names),
            "worst_loo": float(self.worst_loo),
            "failed_knots": [list(fk) for fk in self.failed_knots],
            "models": [
                [m.to_dict() if m is not None else None for m in row]
                for row in self.models
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "FieldSurrogate":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            models=[
                [PCEModel.from_dict(m) if m is not None else None for m in row]
                for row in doc["models"]
            ],
            time_knots=np.asarray(doc["time_knots"], dtype=float),
            tc_labels=tuple(doc["tc_labels"]),
            input_names=tuple(doc["input_names"]),
            worst_loo=doc["worst_loo"],
            failed_knots=[tuple(fk) for fk in doc["failed_knots"]],
        )


class CompiledFieldSurrogate:
    """Stacked union-basis evaluator: one matrix product per batch."""

    def __init__(self, surrogate: FieldSurrogate):
        self.surrogate = surrogate
        flat = [m for row in surrogate.models for m in row]
        if any(m is None for m in flat):
            raise FitError("cannot compile a surrogate with failed knots")
        self.kinds = flat[0].basis
        union: dict[tuple[int, ...], int] = {}
        for m in flat:
            for ix in m.indices:
                union.setdefault(ix.degrees, len(union))
        self.union_indices = [MultiIndex(deg) for deg, _ in sorted(union.items(), key=lambda kv: kv[1])]
        self.coef = np.zeros((len(flat), len(union)))
        for r, m in enumerate(flat):
            for ix, a in zip(m.indices, m.coefficients):
                self.coef[r, union[ix.degrees]] = a

    def evaluate(self, thetas: np.ndarray) -> np.ndarray:
        """(n, p) parameter matrix -> (n, n_tc, n_knots) responses."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != len(self.kinds):
            raise ValueError(f"expected {len(self.kinds)} parameters")
        u_std = np.column_stack(
            [dim.standardize(thetas[:, j]) for j, dim in enumerate(self.kinds)]
        )
        phi = design_matrix(u_std, self.union_indices, self.kinds)
        flat = phi @ self.coef.T
        s = self.surrogate
        return flat.reshape(thetas.shape[0], s.n_tc, s.n_knots)


def fit_field(
    inputs: np.ndarray,
    responses: np.ndarray,
    times: np.ndarray,
    knot_spacing: float,
    priors: PriorSpec,
    tc_labels: Sequence[str],
    q: float = 0.75,
    cv_target: float = 1e-3,
    max_order: int = 8,
    workers: int = 1,
) -> FieldSurrogate:
    """Fit one PCE per (TC, knot) from solver runs at sampled inputs.

    responses has shape (n_runs, n_tc, n_times) on the shared `times` grid;
    each run is linearly interpolated onto the regular knot grid first.
    Per-knot fit failures are collected (and flagged), not fatal.
    """
    times = np.asarray(times, dtype=float)
    responses = np.asarray(responses, dtype=float)
    step = float(times[1] - times[0])
    ratio = knot_spacing / step
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("knot_spacing must be a multiple of the output interval")
    knots = np.arange(times[0], times[-1] + 0.5 * step, knot_spacing)

    n_runs, n_tc, _ = responses.shape
    at_knots = np.empty((n_runs, n_tc, knots.size))
    for i in range(n_runs):
        for t in range(n_tc):
            at_knots[i, t] = np.interp(knots, times, responses[i, t])

    fitter = FieldFitter(inputs, priors, q=q, cv_target=cv_target, max_order=max_order)
    tasks = [(t, k) for t in range(n_tc) for k in range(knots.size)]

    def fit_task(tk):
        t, k = tk
        try:
            return tk, fitter.fit_one(at_knots[:, t, k]), None
        except FitError as exc:
            return tk, None, str(exc)

    if workers > 1:
        import concurrent.futures as cf

        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit_task, tasks))
    else:
        results = [fit_task(tk) for tk in tasks]

    models: list[list[PCEModel | None]] = [[None] * knots.size for _ in range(n_tc)]
    failed = []
    worst = 0.0
    for (t, k), model, err in results:
        models[t][k] = model
        if model is None:
            failed.append((t, k))
        else:
            worst = max(worst, model.loo_error)
    return FieldSurrogate(
        models=models,
        time_knots=knots,
        tc_labels=tuple(tc_labels),
        input_names=priors.names,
        worst_loo=worst,
        failed_knots=failed,
    )
