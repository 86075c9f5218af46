import numpy as np
import pytest

from charuq.forward_model import (
    BackBoundary,
    BoundaryCondition,
    MaterialParams,
    Scenario,
    build_grid,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


@pytest.fixture
def nominal_material():
    return MaterialParams()


@pytest.fixture
def inert_material():
    """No decomposition, constant conductivity: pure linear conduction."""
    return MaterialParams(logA=(-100.0, -100.0, -100.0), k3_v=0.0, k3_c=0.0)


def make_scenario(
    thickness=0.02,
    duration=20.0,
    dt=0.5,
    flux_peak=0.0,
    surface_temperature=None,
    back="adiabatic",
    back_temperature=290.0,
    initial=290.0,
    tc_depths_mm=(10.0,),
):
    if surface_temperature is not None:
        bc = BoundaryCondition(
            kind="temperature",
            times=np.array([0.0, duration]),
            values=np.array([surface_temperature, surface_temperature]),
        )
    else:
        bc = BoundaryCondition(
            kind="flux",
            times=np.array([0.0, duration]),
            values=np.array([flux_peak, flux_peak]),
        )
    return Scenario(
        thickness=thickness,
        duration=duration,
        dt=dt,
        surface_bc=bc,
        back_bc=BackBoundary(kind=back, temperature=back_temperature),
        initial_temperature=initial,
        tc_depths_mm=tc_depths_mm,
    )


@pytest.fixture
def small_grid():
    return build_grid(24, 0.02, 1.0)
