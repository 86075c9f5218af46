"""Synthetic 1-D charring-ablator thermal response model.

Transient heat conduction on a stretched cell-centered grid with
temperature-dependent virgin/char conductivity blending and Arrhenius
decomposition of three material sub-phases. Deterministic throughout:
identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import OutOfRangeError, SolverDivergenceError

PICARD_TOL_K = 1e-8
PICARD_MAX_SWEEPS = 50


@dataclass(frozen=True)
class MaterialParams:
    """Decomposition and conduction inputs of the synthetic solver.

    logA are natural-log pre-exponential factors (log s^-1) and ea_over_r
    activation temperatures (K) per decomposing sub-phase. Conductivity of
    each state follows k(T) = k0 + k3*T^3, blended linearly by char fraction.
    """

    logA: tuple[float, float, float] = (9.393, 20.03, 20.03)
    ea_over_r: tuple[float, float, float] = (8000.0, 12000.0, 12000.0)
    k0_v: float = 0.2294
    k3_v: float = 1.694e-11
    k0_c: float = 0.2569
    k3_c: float = 4.510e-11
    rho_cp: float = 4.0e5
    phase_weights: tuple[float, float, float] = (0.25, 0.5, 0.25)

    def __post_init__(self):
        if self.k0_v <= 0 or self.k0_c <= 0:
            raise ValueError("k0_v and k0_c must be positive")
        if self.k3_v < 0 or self.k3_c < 0:
            raise ValueError("k3_v and k3_c must be nonnegative")
        if self.rho_cp <= 0:
            raise ValueError("rho_cp must be positive")
        w = np.asarray(self.phase_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0):
            raise ValueError("phase_weights must be 3 nonnegative values")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("phase_weights must sum to 1 within 1e-12")
        if len(self.logA) != 3 or len(self.ea_over_r) != 3:
            raise ValueError("logA and ea_over_r must each have 3 entries")

    def with_values(self, **named: float) -> "MaterialParams":
        """Copy with named scalar inputs replaced.

        Sub-phase pre-exponentials are addressed as log_A21, log_A22,
        log_A23; conductivity coefficients as k0_v, k3_v, k0_c, k3_c.
        """
        kwargs: dict = {}
        logA = list(self.logA)
        for name, value in named.items():
            if name in ("k0_v", "k3_v", "k0_c", "k3_c", "rho_cp"):
                kwargs[name] = float(value)
            elif name in ("log_A21", "log_A22", "log_A23"):
                logA[int(name[-1]) - 1] = float(value)
            else:
                raise ValueError(f"unknown material input {name!r}")
        kwargs["logA"] = tuple(logA)
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Grid:
    """Cell-centered 1-D grid; depth measured from the heated surface."""

    node_positions: np.ndarray  # cell centers, strictly increasing (m)
    cell_widths: np.ndarray  # per cell, surface cell first (m)
    n_cells: int

    def __post_init__(self):
        if np.any(np.diff(self.node_positions) <= 0):
            raise ValueError("node_positions must be strictly increasing")

    @property
    def thickness(self) -> float:
        return float(self.cell_widths.sum())


def build_grid(n_cells: int, thickness: float, stretch: float) -> Grid:
    """Geometric grid with the surface-to-back cell width ratio `stretch`.

    stretch < 1 puts the finest cells at the heated surface; stretch = 1 is
    uniform. Widths always sum to `thickness`.
    """
    if n_cells < 2:
        raise ValueError(f"n_cells must be >= 2, got {n_cells}")
    if thickness <= 0 or stretch <= 0:
        raise ValueError("thickness and stretch must be positive")
    if stretch == 1.0:
        widths = np.full(n_cells, thickness / n_cells)
    else:
        growth = stretch ** (-1.0 / (n_cells - 1))  # back-to-back width ratio
        first = thickness * (1.0 - growth) / (1.0 - growth**n_cells)
        widths = first * growth ** np.arange(n_cells)
    faces = np.concatenate([[0.0], np.cumsum(widths)])
    centers = 0.5 * (faces[:-1] + faces[1:])
    return Grid(node_positions=centers, cell_widths=widths, n_cells=n_cells)


@dataclass(frozen=True)
class BoundaryCondition:
    """Surface condition: prescribed heat flux (W m^-2) or temperature (K)."""

    kind: str  # "flux" or "temperature"
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("flux", "temperature"):
            raise ValueError(f"unknown surface BC kind {self.kind!r}")
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("BC needs matching times/values of length >= 2")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("BC times must be strictly increasing")

    def at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class BackBoundary:
    kind: str = "adiabatic"  # or "fixed"
    temperature: float = 290.0

    def __post_init__(self):
        if self.kind not in ("adiabatic", "fixed"):
            raise ValueError(f"unknown back BC kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    """Boundary-condition context of one heating case.

    tc_depths_mm are thermocouple depths measured from the back
    substructure in millimetres, matching how installation depths are
    tabulated; conversion to metres from the heated surface happens here.
    """

    thickness: float
    duration: float
    dt: float
    surface_bc: BoundaryCondition
    back_bc: BackBoundary = field(default_factory=BackBoundary)
    initial_temperature: float = 290.0
    tc_depths_mm: tuple[float, ...] = ()
    tc_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must be >= dt")
        if self.initial_temperature <= 0:
            raise ValueError("initial_temperature must be positive (K)")
        if self.surface_bc.times[0] > 0 or self.surface_bc.times[-1] < self.duration:
            raise ValueError("surface BC time grid must cover [0, duration]")
        for d in self.tc_depths_from_surface:
            if not 0.0 <= d <= self.thickness:
                raise ValueError(f"TC depth {d} m outside [0, {self.thickness}]")
        if not self.tc_labels:
            object.__setattr__(
                self,
                "tc_labels",
                tuple(f"TC{i + 1}" for i in range(len(self.tc_depths_mm))),
            )
        if len(self.tc_labels) != len(self.tc_depths_mm):
            raise ValueError("tc_labels and tc_depths_mm length mismatch")

    @property
    def tc_depths_from_surface(self) -> tuple[float, ...]:
        """Depths from the heated surface in metres."""
        return tuple(self.thickness - 1e-3 * d for d in self.tc_depths_mm)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class TemperatureField:
    times: np.ndarray  # (n_times,)
    temperatures: np.ndarray  # (n_times, n_nodes) K
    char_fraction: np.ndarray  # (n_times, n_nodes) in [0, 1]
    node_positions: np.ndarray  # (n_nodes,) m from surface

    def to_csv(self, path) -> None:
        n = self.temperatures.shape[1]
        header = "time," + ",".join(f"node_{i}" for i in range(n))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for t, row in zip(self.times, self.temperatures):
                fh.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class TCProfile:
    """One thermocouple time series; values must stay positive so the
    log-transform used by the likelihood is defined."""

    label: str
    times: np.ndarray
    values: np.ndarray
    depth: float  # m from heated surface

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.values <= 0):
            raise ValueError("temperatures must be positive (K)")


def conductivity(T, chi, params: MaterialParams):
    """Virgin/char blend of the cubic conductivity law; accepts arrays."""
    T = np.asarray(T, dtype=float)
    chi = np.asarray(chi, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive (K)")
    if np.any((chi < 0) | (chi > 1)):
        raise ValueError("char fraction must lie in [0, 1]")
    T3 = T**3
    k_v = params.k0_v + params.k3_v * T3
    k_c = params.k0_c + params.k3_c * T3
    out = (1.0 - chi) * k_v + chi * k_c
    return float(out) if out.ndim == 0 else out


def advance_decomposition(xi, T, dt: float, params: MaterialParams):
    """Advance sub-phase extents over dt with temperature frozen.

    The rate law dxi/dt = exp(logA) * exp(-ea_over_r / T) * (1 - xi) has the
    exact solution xi -> 1 - (1 - xi) * exp(-rate * dt) for frozen T, which
    keeps extents in [0, 1] for any step size.
    xi has shape (..., 3); T broadcasts against the leading axes.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any((xi < 0) | (xi > 1)):
        raise ValueError("extents must lie in [0, 1]")
    if dt <= 0:
        raise ValueError("dt must be positive")
    T = np.asarray(T, dtype=float)
    logA = np.asarray(params.logA)
    ea = np.asarray(params.ea_over_r)
    rate = np.exp(logA - ea / T[..., None])
    return 1.0 - (1.0 - xi) * np.exp(-rate * dt)


def char_fraction_of(xi, params: MaterialParams):
    return np.asarray(xi) @ np.asarray(params.phase_weights)


def solve(scenario: Scenario, params: MaterialParams, grid: Grid) -> TemperatureField:
    """Backward-Euler solution of rho_cp dT/dt = d/dx(k(T, chi) dT/dx).

    Conductivity is lagged one Picard sweep per time step (at least two
    sweeps, sweep-to-sweep tolerance 1e-8 K); decomposition advances once
    per step using the start-of-step temperature. Stateless and reentrant.
    """
    if abs(grid.thickness - scenario.thickness) > 1e-12 * scenario.thickness:
        raise ValueError("grid thickness does not match scenario thickness")
    n = grid.n_cells
    x = grid.node_positions
    w = grid.cell_widths
    dt = scenario.dt
    n_steps = scenario.n_steps

    inv_gap = 1.0 / np.diff(x)  # interior face conductance geometry
    cap = params.rho_cp * w / dt

    T = np.full(n, scenario.initial_temperature)
    xi = np.zeros((n, 3))
    chi = np.zeros(n)

    times = np.empty(n_steps + 1)
    temps = np.empty((n_steps + 1, n))
    chars = np.empty((n_steps + 1, n))
    times[0] = 0.0
    temps[0] = T
    chars[0] = chi

    ab = np.zeros((3, n))  # banded storage for the tridiagonal system

    for step in range(n_steps):
        t_new = (step + 1) * dt
        xi = advance_decomposition(xi, T, dt, params)
        chi = char_fraction_of(xi, params)
        bc_value = scenario.surface_bc.at(t_new)

        T_old = T
        T_sweep = T_old.copy()
        converged = False
        for sweep in range(PICARD_MAX_SWEEPS):
            k = conductivity(T_sweep, chi, params)
            g_face = 0.5 * (k[:-1] + k[1:]) * inv_gap

            diag = cap.copy()
            diag[:-1] += g_face
            diag[1:] += g_face
            rhs = cap * T_old

            if scenario.surface_bc.kind == "temperature":
                g_s = k[0] / x[0]
                diag[0] += g_s
                rhs[0] += g_s * bc_value
            else:
                rhs[0] += bc_value

            if scenario.back_bc.kind == "fixed":
                g_b = k[-1] / (grid.thickness - x[-1])
                diag[-1] += g_b
                rhs[-1] += g_b * scenario.back_bc.temperature

            ab[0, 1:] = -g_face
            ab[1, :] = diag
            ab[2, :-1] = -g_face
            T_new = solve_banded((1, 1), ab, rhs)

            if sweep >= 1 and float(np.max(np.abs(T_new - T_sweep))) <= PICARD_TOL_K:
                T_sweep = T_new
                converged = True
                break
            T_sweep = T_new
        if not converged:
            raise SolverDivergenceError(
                f"Picard sweeps did not converge at step {step} (t={t_new:g} s)",
                step_index=step,
            )

        T = T_sweep
        times[step + 1] = t_new
        temps[step + 1] = T
        chars[step + 1] = chi

    return TemperatureField(
        times=times, temperatures=temps, char_fraction=chars, node_positions=x.copy()
    )


def extract_thermocouples(field: TemperatureField, scenario: Scenario) -> list[TCProfile]:
    """Linear spatial interpolation of the field at the scenario TC depths."""
    out = []
    for label, depth in zip(scenario.tc_labels, scenario.tc_depths_from_surface):
        out.append(
            TCProfile(
                label=label,
                times=field.times.copy(),
                values=interpolate_at_depth(field, depth),
                depth=depth,
            )
        )
    return out


def interpolate_at_depth(field: TemperatureField, depth: float) -> np.ndarray:
    x = field.node_positions
    if depth < x[0] or depth > x[-1]:
        raise OutOfRangeError(
            f"depth {depth} m outside node span [{x[0]}, {x[-1]}]"
        )
    j = int(np.searchsorted(x, depth))
    if j < len(x) and x[j] == depth:
        return field.temperatures[:, j].copy()
    lam = (depth - x[j - 1]) / (x[j] - x[j - 1])
    return (1.0 - lam) * field.temperatures[:, j - 1] + lam * field.temperatures[:, j]


def surface_profile(field: TemperatureField) -> TCProfile:
    """Series of the node nearest the heated surface (overlay normalizer)."""
    return TCProfile(
        label="surface",
        times=field.times.copy(),
        values=field.temperatures[:, 0].copy(),
        depth=float(field.node_positions[0]),
    )


def trapezoid_flux_bc(
    peak: float,
    ramp_up: float = 2.0,
    hold: float = 27.0,
    ramp_down: float = 2.0,
    duration: float = 60.0,
) -> BoundaryCondition:
    """Trapezoidal heat-flux pulse followed by zero-flux cool-down."""
    t_end = ramp_up + hold + ramp_down
    if duration < t_end:
        raise ValueError("duration shorter than the heating pulse")
    times = [0.0, ramp_up, ramp_up + hold, t_end]
    values = [0.0, peak, peak, 0.0]
    if duration > t_end:
        times.append(duration)
        values.append(0.0)
    return BoundaryCondition(kind="flux", times=np.array(times), values=np.array(values))


def _solve_tc_worker(args):
    scenario, params, grid = args
    field = solve(scenario, params, grid)
    return np.array([p.values for p in extract_thermocouples(field, scenario)])


def tc_response_batch(
    scenario: Scenario,
    grid: Grid,
    params_list: Sequence[MaterialParams],
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve for many parameter sets; returns (times, (n, n_tc, n_times)).

    Runs are independent, so they can fan out over processes.
    """
    jobs = [(scenario, params, grid) for params in params_list]
    if workers > 1 and len(jobs) > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_solve_tc_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_solve_tc_worker(j) for j in jobs]
    times = np.arange(scenario.n_steps + 1) * scenario.dt
    return times, np.array(rows)


def default_material() -> MaterialParams:
    """Nominal inputs of the bundled material description."""
    return MaterialParams()
