"""
ThermoCH - Manufactured solutions and convergence studies.

Source terms are derived symbolically with sympy from a chosen exact pair
(u*, theta*) and compiled to numpy with lambdify:

    s_u     = u*_t - m lap chi* - R1(chi*, lap chi*)
    s_theta = Q(theta*)_t + m theta* lap chi* (chi* + lambda)
              - div((k/theta*^2) grad theta*) + R2(theta*)
    chi*    = (f(u*) - lambda theta* - alpha lap u*) / theta*

Kinds:
    cosine:   u* = a_u C(x) e^-t,  theta* = 1 + a_theta C(x) e^-t,
              C(x) = prod_i cos(pi x_i / L_i)  (satisfies the no-flux conditions)
    constant: u* = a_u, theta* = 1 + a_theta  (reproduced exactly by the scheme)
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple
import logging
import math

import numpy as np
import sympy as sp

from ..grid import Grid
from ..schemas import (
    GridSection, ManufacturedKind, MmsErrorRow, MmsSection, Parameters, SolverConfig,
)
from ..stepper import MmsSources, State, run

logger = logging.getLogger("thermoch.mms")

_X = sp.symbols("x y", real=True)
_T = sp.Symbol("t", real=True)


def _signed_power(v, p):
    return sp.sign(v) * sp.Abs(v) ** p


class ManufacturedSolution:
    """Exact solution plus its symbolic source terms for one parameter set."""

    def __init__(self, params: Parameters, kind: ManufacturedKind = ManufacturedKind.COSINE,
                 amp_u: float = 0.1, amp_theta: float = 0.2,
                 length: Tuple[float, ...] = (1.0,)):
        if not 0 <= amp_theta < 1:
            raise ValueError("amp_theta must lie in [0, 1) to keep theta* positive")
        self.params = params
        self.kind = ManufacturedKind(kind)
        self.length = tuple(length)
        coords = _X[:len(self.length)]
        self._coords = coords

        if self.kind == ManufacturedKind.COSINE:
            shape = sp.exp(-_T)
            for x, L in zip(coords, self.length):
                shape = shape * sp.cos(sp.pi * x / L)
            u = amp_u * shape
            theta = 1 + amp_theta * shape
        else:
            u = sp.Float(amp_u)
            theta = sp.Float(1 + amp_theta)

        self.u_expr = u
        self.theta_expr = theta
        self.source_u_expr, self.source_theta_expr = self._derive_sources(u, theta)
        args = (*coords, _T)
        self._u = sp.lambdify(args, u, "numpy")
        self._theta = sp.lambdify(args, theta, "numpy")
        self._s_u = sp.lambdify(args, self.source_u_expr, "numpy")
        self._s_theta = sp.lambdify(args, self.source_theta_expr, "numpy")
        logger.debug("Manufactured %s solution: u*=%s theta*=%s", self.kind.value, u, theta)

    def _lap(self, expr):
        return sum(sp.diff(expr, x, 2) for x in self._coords)

    def _derive_sources(self, u, theta):
        p = self.params
        chi = (u ** 3 - u - p.lam * theta - p.alpha * self._lap(u)) / theta
        lap_chi = self._lap(chi)
        k = p.k0 + p.k1 * theta ** p.beta
        heat_flux_div = sum(sp.diff(k / theta ** 2 * sp.diff(theta, x), x) for x in self._coords)

        r1 = 0
        if p.eps1 > 0:
            r1 += p.eps1 * _signed_power(lap_chi, p.p1)
        if p.eps2 > 0:
            r1 -= p.eps2 * _signed_power(chi, p.p2)
        r2 = p.eps3 * theta ** p.p3 - p.eps4 * theta ** (-p.p4)

        s_u = sp.diff(u, _T) - p.m * lap_chi - r1
        s_theta = (
            sp.diff(p.c_v * theta ** 2 / 2, _T)
            + p.m * theta * lap_chi * (chi + p.lam)
            - heat_flux_div
            + r2
        )
        return s_u, s_theta

    def _evaluate(self, fn, grid: Grid, t: float) -> np.ndarray:
        values = fn(*grid.cell_centers(), t)
        return np.array(np.broadcast_to(values, grid.shape), dtype=float)

    def _check_grid(self, grid: Grid) -> None:
        if grid.length != self.length:
            raise ValueError(f"grid extent {grid.length} does not match solution extent {self.length}")

    def exact_state(self, grid: Grid, t: float) -> State:
        self._check_grid(grid)
        return State(grid, t, self._evaluate(self._u, grid, t), self._evaluate(self._theta, grid, t))

    def sources(self, grid: Grid) -> MmsSources:
        self._check_grid(grid)
        return MmsSources(
            source_u=lambda t: self._evaluate(self._s_u, grid, t),
            source_theta=lambda t: self._evaluate(self._s_theta, grid, t),
        )


@dataclass(frozen=True)
class ConvergenceStudy:
    rows: List[MmsErrorRow]
    orders: List[Dict[str, float]]


def observed_order(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """log(e_c/e_f) / log(h_c/h_f); nan when either error vanishes."""
    if e_coarse <= 0 or e_fine <= 0:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def observed_orders(rows: List[MmsErrorRow]) -> List[Dict[str, float]]:
    orders = []
    for coarse, fine in zip(rows, rows[1:]):
        entry = {"n_coarse": coarse.n, "n_fine": fine.n}
        for key in ("err_u_l2", "err_u_linf", "err_theta_l2", "err_theta_linf"):
            entry[key.replace("err_", "order_")] = observed_order(
                getattr(coarse, key), getattr(fine, key), coarse.h, fine.h
            )
        orders.append(entry)
    return orders


def run_level(solution: ManufacturedSolution, grid: Grid, mms: MmsSection,
              solver: SolverConfig) -> MmsErrorRow:
    """Integrate one refinement level with fixed dt = dt_factor * h^2."""
    h = max(grid.h)
    steps = max(1, math.ceil(mms.t_final / (mms.dt_factor * h * h) - 1e-9))
    dt = mms.t_final / steps
    cfg = solver.model_copy(update={
        "dt_init": dt, "dt_max": dt, "dt_min": min(solver.dt_min, dt),
        "growth_factor": 1.0, "isothermal": False,
    })
    initial = solution.exact_state(grid, 0.0)
    trajectory = run(initial, solution.params, cfg, mms.t_final,
                     sources=solution.sources(grid), fixed_dt=True)
    final = trajectory.final
    exact = solution.exact_state(grid, final.t)
    err_u, err_theta = final.u - exact.u, final.theta - exact.theta
    row = MmsErrorRow(
        n=grid.n[0], h=h, dt=dt, steps=len(trajectory.reports),
        err_u_l2=grid.norm_l2(err_u), err_u_linf=grid.norm_linf(err_u),
        err_theta_l2=grid.norm_l2(err_theta), err_theta_linf=grid.norm_linf(err_theta),
    )
    logger.info("MMS level n=%d: dt=%.3e steps=%d err_u=%.3e err_theta=%.3e",
                row.n, dt, row.steps, row.err_u_l2, row.err_theta_l2)
    return row


def convergence_study(params: Parameters, grid_section: GridSection, mms: MmsSection,
                      solver: SolverConfig, levels: Optional[List[int]] = None) -> ConvergenceStudy:
    """
    Run every refinement level and derive observed orders between neighbours.

    Raises:
        ValueError: If fewer than three levels are given
    """
    levels = list(levels if levels is not None else mms.levels)
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 refinement levels")
    base = grid_section.to_grid()
    solution = ManufacturedSolution(params, mms.kind, mms.amp_u, mms.amp_theta, base.length)
    rows = [
        run_level(solution, Grid(n=(n,) * base.dim, length=base.length), mms, solver)
        for n in levels
    ]
    return ConvergenceStudy(rows=rows, orders=observed_orders(rows))
