"""Test helpers shared across modules."""
from thermoch.grid import Grid
from thermoch.schemas import InitialSection, Parameters, SolverConfig
from thermoch.services.initial_data import make_initial
from thermoch.stepper import State, run


def raw_params(**values) -> Parameters:
    """Parameters without validation, for boundary values such as lambda = 0."""
    return Parameters.model_construct(**values)


def fixed_step_config(dt: float, **overrides) -> SolverConfig:
    return SolverConfig(dt_init=dt, dt_min=min(1e-9, dt), dt_max=dt, growth_factor=1.0, **overrides)


def cosine_state(grid: Grid, ampu=0.05, amptheta=0.2, theta0=1.0) -> State:
    section = InitialSection(kind="cosine", ampu=ampu, amptheta=amptheta, theta0=theta0, ku=1, ktheta=1)
    return make_initial(section, grid)


def smooth_run(grid: Grid, params: Parameters, dt: float, t_final: float, **cfg):
    """Fixed-step run from the smooth cosine initial state."""
    return run(cosine_state(grid), params, fixed_step_config(dt, **cfg), t_final, fixed_dt=True)
