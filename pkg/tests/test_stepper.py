"""Tests for residual assembly, Newton solves and time stepping."""
import numpy as np
import pytest

from thermoch import stepper
from thermoch.grid import Grid
from thermoch.model import ModelDomainError
from thermoch.schemas import FaceAveraging, InitialSection, Parameters, SolverConfig
from thermoch.services.diagnostics import balances, ch_energy
from thermoch.services.initial_data import make_initial
from thermoch.stepper import (
    ImplicitSystem, NewtonResult, State, StepError, StepRejected,
    advance, assemble_residual, derive_chi, newton_solve, run,
)
from tests.helpers import cosine_state, fixed_step_config, raw_params


# -------------------------------------------------------------------------
# Independent dense oracles (numpy only, explicit 1D stencils)
# -------------------------------------------------------------------------

def _lap1d(f, h):
    flux = np.concatenate([[0.0], np.diff(f) / h, [0.0]])
    return np.diff(flux) / h


def _oracle_residual(x, u_old, th_old, dt, p):
    n = u_old.size
    h = 1.0 / n
    u, th = x[:n], x[n:]
    chi = (u ** 3 - u - p.lam * th - p.alpha * _lap1d(u, h)) / th
    w = _lap1d(chi, h)
    r1 = p.eps1 * np.abs(w) ** (p.p1 - 1) * w - p.eps2 * np.abs(chi) ** (p.p2 - 1) * chi
    r2 = p.eps3 * th ** p.p3 - p.eps4 * th ** (-p.p4)
    a = (p.k0 + p.k1 * th ** p.beta) / th ** 2
    a_face = 2 * a[:-1] * a[1:] / (a[:-1] + a[1:])
    heat_div = np.diff(np.concatenate([[0.0], a_face * np.diff(th) / h, [0.0]])) / h
    r_u = u - u_old - dt * (p.m * w + r1)
    r_th = 0.5 * p.c_v * (th ** 2 - th_old ** 2) + dt * (p.m * th * w * (chi + p.lam) - heat_div + r2)
    return np.concatenate([r_u, r_th])


def _oracle_solve(u_old, th_old, dt, p, tol=1e-12):
    x = np.concatenate([u_old, th_old])
    for _ in range(60):
        r = _oracle_residual(x, u_old, th_old, dt, p)
        if np.max(np.abs(r)) <= tol:
            return x
        J = np.empty((x.size, x.size))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = 1e-7
            J[:, j] = (_oracle_residual(x + e, u_old, th_old, dt, p)
                       - _oracle_residual(x - e, u_old, th_old, dt, p)) / 2e-7
        x = x - np.linalg.solve(J, r)
    raise AssertionError("oracle did not converge")


def _isothermal_reference(u, theta0, dt, steps, p, n):
    """Backward-Euler Cahn-Hilliard with chi = (f(u) - lambda theta0 - alpha lap u)/theta0."""
    h = 1.0 / n
    L = np.zeros((n, n))
    for i in range(n):
        if i > 0:
            L[i, i - 1] += 1
            L[i, i] -= 1
        if i < n - 1:
            L[i, i + 1] += 1
            L[i, i] -= 1
    L /= h * h
    for _ in range(steps):
        u_old = u.copy()
        for _ in range(50):
            chi = (u ** 3 - u - p.lam * theta0 - p.alpha * L @ u) / theta0
            r = u - u_old - dt * p.m * L @ chi
            J = np.eye(n) - dt * p.m / theta0 * L @ (np.diag(3 * u ** 2 - 1) - p.alpha * L)
            du = np.linalg.solve(J, -r)
            u = u + du
            if np.max(np.abs(du)) < 1e-14:
                break
    return u


def _smooth_perturbed(grid, rng, scale=0.1):
    (x,) = grid.cell_centers()
    u = 0.1 * np.cos(np.pi * x) + scale * 0.1 * rng.standard_normal(grid.shape)
    theta = 1.0 + 0.2 * np.cos(np.pi * x) + scale * 0.05 * rng.standard_normal(grid.shape)
    return State(grid, 0.0, u, theta)


# -------------------------------------------------------------------------
# derive_chi / assemble_residual
# -------------------------------------------------------------------------

def test_derive_chi_examples(grid16):
    state = State(grid16, 0.0, grid16.constant(0.0), grid16.constant(1.0))
    assert np.allclose(derive_chi(state, Parameters(lam=1.0)), -1.0)
    state = State(grid16, 0.0, grid16.constant(1.0), grid16.constant(2.0))
    assert np.allclose(derive_chi(state, raw_params(lam=0.0, alpha=1.0)), 0.0)


def test_derive_chi_satisfies_its_defining_relation(grid16, rng, params):
    state = _smooth_perturbed(grid16, rng)
    chi = derive_chi(state, params)
    rhs = state.u ** 3 - state.u - params.lam * state.theta - params.alpha * grid16.laplacian(state.u)
    scale = np.max(np.abs(rhs)) + np.max(np.abs(chi * state.theta))
    assert np.max(np.abs(chi * state.theta - rhs)) <= 1e-13 * scale


def test_derive_chi_rejects_nonpositive_temperature(grid16):
    theta = grid16.constant(1.0)
    theta[0] = 0.0
    with pytest.raises(ModelDomainError):
        derive_chi(State(grid16, 0.0, grid16.constant(0.0), theta), Parameters())


def test_uniform_state_has_zero_residual(uniform_state, params):
    r_u, r_theta = assemble_residual(uniform_state, uniform_state, 0.1, params)
    assert np.max(np.abs(r_u)) <= 1e-14
    assert np.max(np.abs(r_theta)) <= 1e-14


def test_residual_rejects_temperature_below_floor(uniform_state, params):
    theta = uniform_state.theta.copy()
    theta[5] = 0.5e-8
    new = State(uniform_state.grid, 0.1, uniform_state.u, theta)
    with pytest.raises(StepRejected):
        assemble_residual(new, uniform_state, 0.1, params, theta_floor=1e-8)


def test_u_residual_is_odd_without_latent_heat(grid16, rng):
    p = raw_params(lam=0.0, m=1.0, alpha=1.0, c_v=1.0, k0=1.0, k1=1.0, beta=1.0,
                   eps1=0.1, eps2=0.1, eps3=0.0, eps4=0.0, p1=3.0, p2=3.0, p3=3.0, p4=2.0)
    old = _smooth_perturbed(grid16, rng)
    new = _smooth_perturbed(grid16, rng)
    flip = lambda s: State(s.grid, s.t, -s.u, s.theta)
    r_u, r_theta = assemble_residual(new, old, 1e-3, p)
    r_u_flip, r_theta_flip = assemble_residual(flip(new), flip(old), 1e-3, p)
    assert np.array_equal(r_u_flip, -r_u)
    assert np.array_equal(r_theta_flip, r_theta)


@pytest.mark.parametrize("averaging", list(FaceAveraging))
@pytest.mark.parametrize("eps", [0.0, 1e-2])
def test_analytic_jacobian_matches_finite_differences(grid8, rng, averaging, eps):
    p = Parameters(beta=1.3).with_eps(eps)
    old = _smooth_perturbed(grid8, rng)
    guess = _smooth_perturbed(grid8, rng)
    system = ImplicitSystem(old, 1e-3, p, averaging=averaging)
    x = np.concatenate([guess.u.ravel(), guess.theta.ravel()])
    r = system.residual(x)
    analytic = system.jacobian(x).toarray()
    numeric = system.fd_jacobian(x, r)
    assert np.max(np.abs(analytic - numeric)) <= 1e-5 * max(1.0, np.max(np.abs(analytic)))


def test_isothermal_jacobian_matches_finite_differences(grid8, rng, params):
    old = State(grid8, 0.0, _smooth_perturbed(grid8, rng).u, grid8.constant(1.3))
    system = ImplicitSystem(old, 1e-3, params, isothermal=True)
    x = old.u.ravel() + 0.01 * rng.standard_normal(8)
    r = system.residual(x)
    assert np.allclose(system.jacobian(x).toarray(), system.fd_jacobian(x, r), rtol=1e-5, atol=1e-6)


# -------------------------------------------------------------------------
# newton_solve
# -------------------------------------------------------------------------

def test_newton_on_steady_state_needs_no_iterations(uniform_state, params):
    result = newton_solve(uniform_state, 0.1, params, SolverConfig())
    assert result.ok
    assert result.iterations <= 1
    assert np.allclose(result.state.u, uniform_state.u, atol=1e-10)
    assert np.allclose(result.state.theta, uniform_state.theta, atol=1e-10)
    assert result.state.t == pytest.approx(0.1)


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.7])
@pytest.mark.parametrize("eps", [0.0, 1e-3])
def test_newton_matches_dense_oracle(grid8, rng, beta, eps):
    p = Parameters(beta=beta).with_eps(eps)
    old = _smooth_perturbed(grid8, rng)
    dt = 1e-3
    expected = _oracle_solve(old.u.ravel(), old.theta.ravel(), dt, p)
    result = newton_solve(old, dt, p, SolverConfig(newton_tol=1e-12))
    assert result.ok
    got = np.concatenate([result.state.u.ravel(), result.state.theta.ravel()])
    assert np.max(np.abs(got - expected)) <= 1e-10


@pytest.mark.parametrize("options", [
    dict(linear_solver="dense-direct"),
    dict(linear_solver="dense-direct", jacobian="finite-difference"),
    dict(linear_solver="sparse-direct", jacobian="finite-difference"),
    dict(linear_solver="iterative-krylov", preconditioner="ilu"),
    dict(linear_solver="iterative-krylov", preconditioner="diagonal"),
    dict(linear_solver="iterative-krylov", preconditioner="none"),
    dict(linear_solver="iterative-krylov", jacobian="finite-difference", preconditioner="diagonal"),
])
def test_linear_solver_variants_agree(grid8, rng, params, options):
    old = _smooth_perturbed(grid8, rng)
    reference = newton_solve(old, 1e-3, params, SolverConfig())
    result = newton_solve(old, 1e-3, params, SolverConfig(**options))
    assert reference.ok and result.ok
    assert np.max(np.abs(result.state.u - reference.state.u)) <= 1e-8
    assert np.max(np.abs(result.state.theta - reference.state.theta)) <= 1e-8


def test_huge_step_from_rough_state_fails_without_a_state(grid16, params):
    rough = make_initial(InitialSection(kind="spinodal", amp=0.9), grid16, seed=3)
    result = newton_solve(rough, 1e9, params, SolverConfig(newton_max_iter=10))
    assert isinstance(result, NewtonResult)
    assert not result.ok
    assert result.state is None
    assert result.reason


# -------------------------------------------------------------------------
# advance / run
# -------------------------------------------------------------------------

def test_advance_grows_dt_on_easy_steps(uniform_state, params):
    cfg = SolverConfig(dt_init=0.1, dt_max=1.0)
    new, report = advance(uniform_state, params, cfg)
    assert report.dt == pytest.approx(0.1)
    assert report.retries == 0
    assert report.next_dt == pytest.approx(0.12)
    assert new.step_index == 1


def test_advance_halves_dt_once_after_injected_failure(monkeypatch, uniform_state, params):
    real = stepper.newton_solve
    calls = []

    def flaky(old, dt, *args, **kwargs):
        calls.append(dt)
        if len(calls) == 1:
            return NewtonResult(False, None, 3, (1.0, 0.5), "injected")
        return real(old, dt, *args, **kwargs)

    monkeypatch.setattr(stepper, "newton_solve", flaky)
    _, report = advance(uniform_state, params, SolverConfig(dt_init=0.1, dt_max=1.0))
    assert calls == [0.1, 0.05]
    assert report.dt == pytest.approx(0.05)
    assert report.retries == 1


def test_advance_raises_on_dt_underflow(monkeypatch, uniform_state, params):
    monkeypatch.setattr(stepper, "newton_solve",
                        lambda *a, **k: NewtonResult(False, None, 1, (1.0,), "injected"))
    cfg = SolverConfig(dt_init=1e-3, dt_min=1e-4, dt_max=1e-2)
    with pytest.raises(StepError) as info:
        advance(uniform_state, params, cfg)
    assert info.value.t == 0.0
    assert info.value.dt < cfg.dt_min
    assert info.value.trace.reason == "injected"


def test_run_to_zero_time_returns_initial_state(uniform_state, params):
    trajectory = run(uniform_state, params, SolverConfig(), 0.0)
    assert len(trajectory) == 1
    assert trajectory.final is uniform_state


def test_uniform_state_is_steady(uniform_state, params):
    observed = []
    trajectory = run(uniform_state, params, SolverConfig(dt_init=0.01, dt_max=0.2), 1.0,
                     observer=lambda s, r: observed.append(r))
    assert trajectory.final.t == 1.0
    assert len(observed) == len(trajectory.reports)
    assert np.allclose(trajectory.final.u, uniform_state.u, atol=1e-10)
    assert np.allclose(trajectory.final.theta, uniform_state.theta, atol=1e-10)


def test_states_are_read_only(uniform_state):
    with pytest.raises(ValueError):
        uniform_state.u[0] = 1.0


def test_run_rejects_nonpositive_initial_temperature(grid16, params):
    theta = grid16.constant(1.0)
    theta[2] = -0.1
    with pytest.raises(ModelDomainError):
        run(State(grid16, 0.0, grid16.constant(0.0), theta), params, SolverConfig(), 1.0)


def test_spinodal_run_keeps_temperature_positive_and_conserves_mass(params):
    grid = Grid.uniform(1, 32)
    initial = make_initial(InitialSection(kind="spinodal", amp=0.05, mean=0.1), grid, seed=7)
    dt = 1e-5
    trajectory = run(initial, params, fixed_step_config(dt), 200 * dt, fixed_dt=True)
    assert len(trajectory.reports) == 200
    mass0 = grid.mean(initial.u)
    for state in trajectory.states:
        assert state.min_theta > 0
        assert abs(grid.mean(state.u) - mass0) <= 1e-12 * (1 + abs(mass0))


@pytest.mark.slow
def test_long_spinodal_run_conserves_mass_at_every_step(params):
    grid = Grid.uniform(1, 128)
    initial = make_initial(InitialSection(kind="spinodal", amp=0.05, mean=0.5), grid, seed=1)
    dt = 1e-5
    masses = []
    trajectory = run(initial, params, fixed_step_config(dt), 500 * dt, fixed_dt=True,
                     observer=lambda state, report: masses.append(grid.integrate(state.u)))
    assert len(trajectory.reports) >= 500
    mass0 = grid.integrate(initial.u)
    assert all(abs(m - mass0) <= 1e-12 * abs(mass0) for m in masses)
    assert all(state.min_theta > 0 for state in trajectory.states)


def test_run_lands_on_given_step_times(uniform_state, params):
    times = [0.05, 0.125, 0.3, 0.5]
    trajectory = run(uniform_state, params, SolverConfig(), 0.5, step_times=times)
    assert trajectory.times.tolist() == [0.0] + times


def test_run_splits_a_rejected_step_and_rejoins_the_time_grid(monkeypatch, uniform_state, params):
    real = stepper.newton_solve
    calls = []

    def flaky(old, dt, *args, **kwargs):
        calls.append(dt)
        if len(calls) == 2:
            return NewtonResult(False, None, 3, (1.0, 0.5), "injected")
        return real(old, dt, *args, **kwargs)

    monkeypatch.setattr(stepper, "newton_solve", flaky)
    trajectory = run(uniform_state, params, SolverConfig(), 0.4, step_times=[0.2, 0.4])
    assert trajectory.times == pytest.approx([0.0, 0.2, 0.3, 0.4], abs=1e-15)
    assert trajectory.final.t == 0.4


@pytest.mark.parametrize("times", [[0.2, 0.1, 0.4], [0.0, 0.4], [0.1, 0.3]])
def test_run_rejects_bad_step_times(uniform_state, params, times):
    with pytest.raises(ValueError):
        run(uniform_state, params, SolverConfig(), 0.4, step_times=times)


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0, 1.7, 1.9])
@pytest.mark.parametrize("kind", ["spinodal", "cosine"])
def test_temperature_positive_across_parameter_matrix(beta, kind):
    grid = Grid.uniform(1, 16)
    section = InitialSection(kind=kind, amp=0.05, ampu=0.1, amptheta=0.5)
    initial = make_initial(section, grid, seed=11)
    trajectory = run(initial, Parameters(beta=beta), SolverConfig(dt_init=1e-5), 2e-3)
    assert all(state.min_theta > 0 for state in trajectory.states)


def test_runs_are_deterministic(params):
    grid = Grid.uniform(1, 16)
    initial = make_initial(InitialSection(kind="spinodal"), grid, seed=5)
    first = run(initial, params, SolverConfig(dt_init=1e-5), 1e-3)
    second = run(initial, params, SolverConfig(dt_init=1e-5), 1e-3)
    assert np.array_equal(first.times, second.times)
    assert np.array_equal(first.final.u, second.final.u)
    assert np.array_equal(first.final.theta, second.final.theta)


def test_isothermal_mode_matches_cahn_hilliard_reference(params):
    grid = Grid.uniform(1, 16)
    initial = make_initial(InitialSection(kind="spinodal", amp=0.1, theta0=1.0), grid, seed=2)
    dt = 1e-5
    cfg = fixed_step_config(dt, isothermal=True, newton_tol=1e-13)
    trajectory = run(initial, params, cfg, 100 * dt, fixed_dt=True)
    reference = _isothermal_reference(initial.u.ravel().copy(), 1.0, dt, 100, params, 16)
    assert len(trajectory.reports) == 100
    assert np.max(np.abs(trajectory.final.u.ravel() - reference)) <= 1e-8
    assert np.array_equal(trajectory.final.theta, initial.theta)
    energies = [ch_energy(s, params) for s in trajectory.states]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_internal_energy_drift_is_first_order_in_dt(params):
    grid = Grid.uniform(1, 16)
    drifts = []
    for dt in (5e-4, 2.5e-4):
        cfg = fixed_step_config(dt, newton_tol=1e-13)
        trajectory = run(cosine_state(grid), params, cfg, 0.01, fixed_dt=True)
        e0 = balances(trajectory.initial, params).internal_energy
        e1 = balances(trajectory.final, params).internal_energy
        drifts.append(abs(e1 - e0))
    assert 1.7 <= drifts[0] / drifts[1] <= 2.3
