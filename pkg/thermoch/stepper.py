"""
ThermoCH - Implicit time integration of the (regularized) non-isothermal
Cahn-Hilliard system.

Backward Euler on the stacked unknowns (u, theta) with the rescaled chemical
potential chi eliminated through

    chi theta = f(u) - lambda theta - alpha lap u

so that relation holds exactly at every accepted step. The remaining two
equations, per unit time,

    R_u     = (u+ - u)/dt - m lap chi+ - R1(chi+, lap chi+) - s_u(t+)
    R_theta = (Q(theta+) - Q(theta))/dt + m theta+ lap chi+ (chi+ + lambda)
              - div((k/theta^2) grad theta+) + R2(theta+) - s_theta(t+)

are solved by damped Newton. Newton works on dt * R (increment form); the
damping keeps every iterate above the temperature floor and requires the
residual to decrease. Failed solves are values, not exceptions; advance()
turns them into dt halving and, below dt_min, into a StepError.

Linear algebra:
    - analytic sparse Jacobian (default) or finite-difference Jacobian
    - sparse direct LU (default), dense direct, or GMRES with ILU/diagonal
      preconditioning and matrix-free directional derivatives
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve

from .config import settings
from .grid import Grid
from .model import (
    ModelDomainError, potential_f, potential_f_prime, heat_Q, heat_Q_prime,
    heat_diffusivity, heat_diffusivity_prime, heat_kirchhoff_K,
    reg_R1, reg_R1_partials, reg_R2, reg_R2_prime,
)
from .schemas import (
    FaceAveraging, JacobianMode, LinearSolver, Parameters, Preconditioner, SolverConfig,
)

logger = logging.getLogger("thermoch.stepper")


class StepRejected(Exception):
    """Custom exception signalling an inadmissible Newton iterate (caught internally)."""
    pass


class StepError(Exception):
    """Custom exception for unrecoverable time-step failures."""

    def __init__(self, message: str, t: float, dt: float, trace: Optional["NewtonResult"] = None):
        super().__init__(message)
        self.t = t
        self.dt = dt
        self.trace = trace


# -------------------------------------------------------------------------
# Data records
# -------------------------------------------------------------------------

def _frozen(array: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.array(grid.check_field(array), dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class State:
    """Order parameter and temperature at one time instant; chi is derived."""
    grid: Grid
    t: float
    u: np.ndarray
    theta: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u, self.grid))
        object.__setattr__(self, "theta", _frozen(self.theta, self.grid))
        object.__setattr__(self, "t", float(self.t))

    @property
    def min_theta(self) -> float:
        return float(np.min(self.theta))

    @property
    def is_admissible(self) -> bool:
        return bool(
            np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.theta)) and np.all(self.theta > 0)
        )


@dataclass(frozen=True)
class MmsSources:
    """Time-dependent source fields appended to the u- and theta-equations."""
    source_u: Optional[Callable[[float], np.ndarray]] = None
    source_theta: Optional[Callable[[float], np.ndarray]] = None

    def u_at(self, grid: Grid, t: float) -> np.ndarray:
        if self.source_u is None:
            return np.zeros(grid.shape)
        return np.broadcast_to(self.source_u(t), grid.shape).astype(float)

    def theta_at(self, grid: Grid, t: float) -> np.ndarray:
        if self.source_theta is None:
            return np.zeros(grid.shape)
        return np.broadcast_to(self.source_theta(t), grid.shape).astype(float)


@dataclass(frozen=True)
class NewtonResult:
    converged: bool
    state: Optional[State]
    iterations: int
    residual_norms: Tuple[float, ...]
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.converged and self.state is not None


@dataclass(frozen=True)
class StepReport:
    t: float
    dt: float
    newton_iterations: int
    residual_initial: float
    residual_final: float
    min_theta: float
    retries: int
    next_dt: float


@dataclass
class Trajectory:
    states: List[State] = field(default_factory=list)
    reports: List[StepReport] = field(default_factory=list)

    @property
    def initial(self) -> State:
        return self.states[0]

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)


# -------------------------------------------------------------------------
# Heat flux on faces
# -------------------------------------------------------------------------

def heat_face_diffusivity(grid: Grid, theta: np.ndarray, params: Parameters,
                          averaging: FaceAveraging = FaceAveraging.HARMONIC) -> np.ndarray:
    """Face coefficient a_f of the heat flux a_f (theta_R - theta_L)/h."""
    averaging = FaceAveraging(averaging)
    if averaging != FaceAveraging.KIRCHHOFF:
        return grid.face_average(heat_diffusivity(theta, params), averaging.value)
    left, right = grid.face_values(theta)
    jump = right - left
    close = np.abs(jump) <= 1e-6 * 0.5 * (left + right)
    safe = np.where(close, 1.0, jump)
    secant = (heat_kirchhoff_K(right, params) - heat_kirchhoff_K(left, params)) / safe
    return np.where(close, heat_diffusivity(0.5 * (left + right), params), secant)


def heat_face_diffusivity_partials(grid: Grid, theta: np.ndarray, params: Parameters,
                                   averaging: FaceAveraging = FaceAveraging.HARMONIC):
    """(d a_f / d theta_L, d a_f / d theta_R) on every interior face."""
    averaging = FaceAveraging(averaging)
    left, right = grid.face_values(theta)
    a_left, a_right = heat_diffusivity(left, params), heat_diffusivity(right, params)
    da_left, da_right = heat_diffusivity_prime(left, params), heat_diffusivity_prime(right, params)
    if averaging == FaceAveraging.HARMONIC:
        denom = (a_left + a_right) ** 2
        return 2.0 * a_right ** 2 / denom * da_left, 2.0 * a_left ** 2 / denom * da_right
    if averaging == FaceAveraging.ARITHMETIC:
        return 0.5 * da_left, 0.5 * da_right
    jump = right - left
    close = np.abs(jump) <= 1e-6 * 0.5 * (left + right)
    safe = np.where(close, 1.0, jump)
    a_face = heat_face_diffusivity(grid, theta, params, averaging)
    half = 0.5 * heat_diffusivity_prime(0.5 * (left + right), params)
    return (
        np.where(close, half, (a_face - a_left) / safe),
        np.where(close, half, (a_right - a_face) / safe),
    )


def thermal_face_conductivity(grid: Grid, theta: np.ndarray, params: Parameters,
                              averaging: FaceAveraging = FaceAveraging.HARMONIC) -> np.ndarray:
    """
    Face conductivity k_f = a_f theta_L theta_R.

    With it, k_f * face_gradient(1/theta) = -a_f * face_gradient(theta), i.e.
    the heat flux of the scheme written in the k grad(1/theta) form.
    """
    left, right = grid.face_values(theta)
    return heat_face_diffusivity(grid, theta, params, averaging) * left * right


def heat_flux_divergence(grid: Grid, theta: np.ndarray, params: Parameters,
                         averaging: FaceAveraging = FaceAveraging.HARMONIC) -> np.ndarray:
    """div((k/theta^2) grad theta) in conservative face-flux form."""
    a_face = heat_face_diffusivity(grid, theta, params, averaging)
    return grid.divergence(a_face * grid.face_gradient(theta))


# -------------------------------------------------------------------------
# Chemical potential
# -------------------------------------------------------------------------

def derive_chi(state: State, params: Parameters) -> np.ndarray:
    """
    Rescaled chemical potential of a state.

    Raises:
        ModelDomainError: If the temperature is not positive everywhere
    """
    if not np.all(state.theta > 0):
        raise ModelDomainError(f"temperature must be positive, got min {state.min_theta!r}")
    lap_u = state.grid.laplacian(state.u)
    return (potential_f(state.u) - params.lam * state.theta - params.alpha * lap_u) / state.theta


# -------------------------------------------------------------------------
# Discrete system for one backward-Euler step
# -------------------------------------------------------------------------

class ImplicitSystem:
    """
    Nonlinear system of one backward-Euler step in increment form.

    Unknown vector x = [u, theta] (flattened), or x = u when the temperature
    is frozen (isothermal comparison mode).
    """

    def __init__(self, old: State, dt: float, params: Parameters,
                 sources: Optional[MmsSources] = None,
                 averaging: FaceAveraging = FaceAveraging.HARMONIC,
                 theta_floor: float = 1e-8, isothermal: bool = False):
        self.grid = old.grid
        self.old = old
        self.dt = float(dt)
        self.params = params
        self.averaging = FaceAveraging(averaging)
        self.theta_floor = theta_floor
        self.isothermal = isothermal
        self.n = self.grid.size
        self.L = self.grid.laplacian_matrix
        self.u_old = old.u.ravel()
        self.theta_old = old.theta.ravel()
        self.t_new = old.t + self.dt
        sources = sources or MmsSources()
        self.s_u = sources.u_at(self.grid, self.t_new).ravel()
        self.s_theta = sources.theta_at(self.grid, self.t_new).ravel()

    @property
    def n_unknowns(self) -> int:
        return self.n if self.isothermal else 2 * self.n

    def initial_guess(self) -> np.ndarray:
        if self.isothermal:
            return self.u_old.copy()
        return np.concatenate([self.u_old, self.theta_old])

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.isothermal:
            return x, self.theta_old
        return x[:self.n], x[self.n:]

    def to_state(self, x: np.ndarray) -> State:
        u, theta = self.split(x)
        return State(self.grid, self.t_new, u.reshape(self.grid.shape),
                     theta.reshape(self.grid.shape), self.old.step_index + 1)

    def _check(self, u: np.ndarray, theta: np.ndarray) -> None:
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(theta))):
            raise StepRejected("non-finite iterate")
        if np.min(theta) < self.theta_floor:
            raise StepRejected(f"temperature {np.min(theta)!r} below floor {self.theta_floor!r}")

    def _chi(self, u, theta):
        p = self.params
        chi = (potential_f(u) - p.lam * theta - p.alpha * (self.L @ u)) / theta
        return chi, self.L @ chi

    def residual(self, x: np.ndarray) -> np.ndarray:
        """dt-scaled residual [dt R_u, dt R_theta]."""
        p, dt = self.params, self.dt
        u, theta = self.split(x)
        self._check(u, theta)
        chi, lap_chi = self._chi(u, theta)
        r_u = u - self.u_old - dt * (p.m * lap_chi + reg_R1(chi, lap_chi, p) + self.s_u)
        if self.isothermal:
            return r_u
        grid = self.grid
        a_face = heat_face_diffusivity(grid, theta, p, self.averaging)
        flux_div = grid.divergence_matrix @ (a_face * (grid.gradient_matrix @ theta))
        r_theta = heat_Q(theta, p) - heat_Q(self.theta_old, p) + dt * (
            p.m * theta * lap_chi * (chi + p.lam) - flux_div + reg_R2(theta, p) - self.s_theta
        )
        return np.concatenate([r_u, r_theta])

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        """Analytic sparse Jacobian of residual()."""
        p, dt, L = self.params, self.dt, self.L
        u, theta = self.split(x)
        self._check(u, theta)
        chi, lap_chi = self._chi(u, theta)
        diag = sp.diags
        eye = sp.identity(self.n, format="csr")

        dchi_du = diag(1.0 / theta) @ (diag(potential_f_prime(u)) - p.alpha * L)
        d_lap, d_chi = reg_R1_partials(chi, lap_chi, p)
        B = diag(p.m + d_lap) @ L + diag(d_chi)
        j_uu = eye - dt * (B @ dchi_du)
        if self.isothermal:
            return sp.csr_matrix(j_uu)

        dchi_dtheta = diag(-(chi + p.lam) / theta)
        j_utheta = -dt * (B @ dchi_dtheta)

        C = diag(p.m * theta * (chi + p.lam)) @ L + diag(p.m * theta * lap_chi)
        j_thetau = dt * (C @ dchi_du)

        grid = self.grid
        G, Dv = grid.gradient_matrix, grid.divergence_matrix
        a_face = heat_face_diffusivity(grid, theta, p, self.averaging)
        da_left, da_right = heat_face_diffusivity_partials(grid, theta, p, self.averaging)
        grad_theta = G @ theta
        d_face = diag(a_face) @ G + diag(grad_theta) @ (
            diag(da_left) @ grid.face_left + diag(da_right) @ grid.face_right
        )
        j_flux = -(Dv @ d_face)
        j_thetatheta = diag(heat_Q_prime(theta, p)) + dt * (
            diag(p.m * lap_chi * (chi + p.lam)) + C @ dchi_dtheta + j_flux
            + diag(reg_R2_prime(theta, p))
        )
        return sp.bmat([[j_uu, j_utheta], [j_thetau, j_thetatheta]], format="csr")

    def jvp(self, x: np.ndarray, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Finite-difference directional derivative J(x) v."""
        norm_v = np.linalg.norm(v)
        if norm_v == 0:
            return np.zeros_like(v)
        h = np.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(x)) / norm_v
        try:
            return (self.residual(x + h * v) - r) / h
        except StepRejected:
            return (r - self.residual(x - h * v)) / h

    def fd_jacobian(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Dense finite-difference Jacobian, one column per unknown."""
        cols = np.empty((x.size, x.size))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = 1.0
            cols[:, j] = self.jvp(x, r, e)
        return cols


def assemble_residual(new: State, old: State, dt: float, params: Parameters,
                      sources: Optional[MmsSources] = None,
                      averaging: FaceAveraging = FaceAveraging.HARMONIC,
                      theta_floor: float = 1e-8,
                      isothermal: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward-Euler residual pair (R_u, R_theta) per unit time.

    Raises:
        StepRejected: If the new temperature is below theta_floor
    """
    system = ImplicitSystem(old, dt, params, sources, averaging, theta_floor, isothermal)
    x = new.u.ravel() if isothermal else np.concatenate([new.u.ravel(), new.theta.ravel()])
    r = system.residual(x) / dt
    shape = new.grid.shape
    if isothermal:
        return r.reshape(shape), np.zeros(shape)
    return r[:system.n].reshape(shape), r[system.n:].reshape(shape)


# -------------------------------------------------------------------------
# Newton solve
# -------------------------------------------------------------------------

def _preconditioner(J: sp.csr_matrix, kind: Preconditioner) -> Optional[LinearOperator]:
    if kind == Preconditioner.NONE:
        return None
    if kind == Preconditioner.ILU:
        try:
            ilu = spilu(J.tocsc(), drop_tol=1e-6, fill_factor=20)
            return LinearOperator(J.shape, matvec=ilu.solve)
        except RuntimeError as exc:
            logger.warning("ILU factorization failed (%s); falling back to diagonal", exc)
    d = J.diagonal()
    d = np.where(d == 0, 1.0, d)
    return LinearOperator(J.shape, matvec=lambda v: v / d)


def _newton_direction(system: ImplicitSystem, x: np.ndarray, r: np.ndarray,
                      cfg: SolverConfig) -> np.ndarray:
    solver = LinearSolver(cfg.linear_solver)
    fd = JacobianMode(cfg.jacobian) == JacobianMode.FINITE_DIFFERENCE

    if solver == LinearSolver.ITERATIVE_KRYLOV:
        J = system.jacobian(x)
        if fd:
            matvec = lambda v: system.jvp(x, r, v)
        else:
            matvec = lambda v: J @ v
        op = LinearOperator(J.shape, matvec=matvec)
        dx, info = gmres(
            op, -r, rtol=cfg.krylov_forcing, atol=0.0,
            restart=min(J.shape[0], 200), maxiter=50,
            M=_preconditioner(J, Preconditioner(cfg.preconditioner)),
        )
        if info != 0:
            logger.debug("GMRES stopped with info=%d", info)
        return dx

    if solver == LinearSolver.DENSE_DIRECT:
        if system.n_unknowns > settings.output.max_dense_unknowns:
            logger.warning("dense solve with %d unknowns", system.n_unknowns)
        A = system.fd_jacobian(x, r) if fd else system.jacobian(x).toarray()
        return np.linalg.solve(A, -r)

    if fd:
        return spsolve(sp.csc_matrix(system.fd_jacobian(x, r)), -r)
    return spsolve(system.jacobian(x).tocsc(), -r)


def _failure(reason: str, iterations: int, norms: List[float]) -> NewtonResult:
    logger.debug("Newton failed after %d iterations: %s", iterations, reason)
    return NewtonResult(False, None, iterations, tuple(norms), reason)


def newton_solve(old: State, dt: float, params: Parameters, cfg: SolverConfig,
                 sources: Optional[MmsSources] = None) -> NewtonResult:
    """
    Damped Newton solve of one backward-Euler step.

    Converged when max|dt R| <= newton_tol (1 + max|dt R_0|), or when a full
    Newton update is below newton_tol relative to the iterate. Backtracking
    halves the update until the iterate stays above theta_floor and the
    residual norm decreases.
    """
    system = ImplicitSystem(old, dt, params, sources, cfg.face_averaging,
                            cfg.theta_floor, cfg.isothermal)
    x = system.initial_guess()
    try:
        r = system.residual(x)
    except StepRejected as exc:
        return _failure(f"initial iterate rejected: {exc}", 0, [])

    norm0 = float(np.max(np.abs(r)))
    target = cfg.newton_tol * (1.0 + norm0)
    norms = [norm0]

    for it in range(cfg.newton_max_iter + 1):
        if norms[-1] <= target:
            return NewtonResult(True, system.to_state(x), it, tuple(norms))
        if it == cfg.newton_max_iter:
            break
        try:
            dx = _newton_direction(system, x, r, cfg)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            return _failure(f"linear solve failed: {exc}", it, norms)
        if not np.all(np.isfinite(dx)):
            return _failure("non-finite Newton update", it, norms)

        small_update = np.max(np.abs(dx)) <= cfg.newton_tol * (1.0 + np.max(np.abs(x)))
        r_norm = np.linalg.norm(r)
        step = 1.0
        accepted = False
        for _ in range(cfg.max_damping_halvings):
            x_try = x + step * dx
            try:
                r_try = system.residual(x_try)
            except StepRejected:
                step *= 0.5
                continue
            if np.linalg.norm(r_try) < r_norm:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            if small_update:
                return NewtonResult(True, system.to_state(x), it, tuple(norms))
            return _failure("damping underflow", it, norms)

        x, r = x_try, r_try
        norms.append(float(np.max(np.abs(r))))
        logger.debug("Newton it=%d step=%.3g |r|=%.3e", it + 1, step, norms[-1])
        if small_update and step == 1.0:
            return NewtonResult(True, system.to_state(x), it + 1, tuple(norms))

    return _failure("maximum Newton iterations exceeded", cfg.newton_max_iter, norms)


# -------------------------------------------------------------------------
# Time stepping
# -------------------------------------------------------------------------

def advance(state: State, params: Parameters, cfg: SolverConfig,
            sources: Optional[MmsSources] = None, dt: Optional[float] = None,
            t_stop: Optional[float] = None) -> Tuple[State, StepReport]:
    """
    Take one accepted step, halving dt on Newton failure.

    A step that would come within 1% of t_stop is stretched to land on it
    exactly. The report carries the suggested next dt (grown by
    growth_factor after easy solves, capped at dt_max).

    Raises:
        StepError: If dt has to drop below dt_min
    """
    dt = cfg.dt_init if dt is None else dt
    dt_try = dt
    landing = t_stop is not None and (t_stop - state.t) <= 1.01 * dt
    if landing:
        dt_try = t_stop - state.t

    retries = 0
    while True:
        result = newton_solve(state, dt_try, params, cfg, sources)
        if result.ok:
            break
        retries += 1
        landing = False
        dt_try *= 0.5
        logger.warning("Step at t=%.6g rejected (%s); retrying with dt=%.3e",
                       state.t, result.reason, dt_try)
        if dt_try < cfg.dt_min:
            raise StepError(
                f"time step underflow at t={state.t!r}: dt={dt_try!r} < dt_min={cfg.dt_min!r} "
                f"(last failure: {result.reason})",
                t=state.t, dt=dt_try, trace=result,
            )

    new = result.state
    if landing:
        new = State(new.grid, t_stop, new.u, new.theta, new.step_index)

    if retries:
        next_dt = dt_try
    elif result.iterations <= cfg.easy_iterations:
        next_dt = min(dt * cfg.growth_factor, cfg.dt_max)
    else:
        next_dt = dt

    report = StepReport(
        t=new.t, dt=dt_try, newton_iterations=result.iterations,
        residual_initial=result.residual_norms[0], residual_final=result.residual_norms[-1],
        min_theta=new.min_theta, retries=retries, next_dt=next_dt,
    )
    logger.debug("step %d t=%.6g dt=%.3e newton=%d min_theta=%.6g",
                 new.step_index, new.t, dt_try, result.iterations, new.min_theta)
    return new, report


def run(initial: State, params: Parameters, cfg: SolverConfig, t_final: float,
        observer: Optional[Callable[[State, StepReport], None]] = None,
        sources: Optional[MmsSources] = None,
        fixed_dt: bool = False,
        step_times: Optional[Sequence[float]] = None) -> Trajectory:
    """
    Integrate from the initial state to t_final.

    The initial-data ratio ||(f(u0) - alpha lap u0)/sqrt(theta0)|| is logged
    but not enforced. With fixed_dt, every step uses dt_init. With
    step_times, the run lands on each of the given times in turn; a rejected
    step there is split by advance and the remainder of the interval follows
    before the next time is targeted.

    Raises:
        ValueError: If step_times is not strictly increasing past the initial
            time or does not end at t_final
    """
    if not initial.is_admissible:
        raise ModelDomainError(
            f"initial state must be finite with positive temperature (min theta {initial.min_theta!r})"
        )
    tiny = 1e-12 * max(1.0, abs(t_final))
    if step_times is not None:
        step_times = [float(t) for t in step_times]
        if not step_times and t_final - initial.t > tiny:
            raise ValueError("step_times must not be empty")
        if any(b <= a for a, b in zip([initial.t] + step_times, step_times)):
            raise ValueError("step_times must be strictly increasing past the initial time")
        if step_times and abs(step_times[-1] - t_final) > tiny:
            raise ValueError(f"step_times ends at {step_times[-1]!r}, expected t_final={t_final!r}")

    from .services.diagnostics import initial_data_audit

    audit = initial_data_audit(initial, params)
    logger.info("Initial data: min_theta=%.6g ratio_l2=%.6g grad_u_l2=%.6g",
                audit.min_theta, audit.ratio_l2, audit.grad_u_l2)

    trajectory = Trajectory(states=[initial])

    def accept(state: State, report: StepReport) -> None:
        trajectory.states.append(state)
        trajectory.reports.append(report)
        if observer is not None:
            observer(state, report)

    state = initial
    if step_times is None:
        dt = cfg.dt_init
        while t_final - state.t > tiny:
            state, report = advance(state, params, cfg, sources, dt=dt, t_stop=t_final)
            dt = cfg.dt_init if fixed_dt else report.next_dt
            accept(state, report)
    else:
        for target in step_times:
            while target - state.t > tiny:
                state, report = advance(state, params, cfg, sources, dt=target - state.t, t_stop=target)
                accept(state, report)
    logger.info("Run finished: %d steps to t=%.6g", len(trajectory.reports), state.t)
    return trajectory
