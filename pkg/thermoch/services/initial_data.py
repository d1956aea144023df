"""
ThermoCH - Initial-condition generators.

    uniform   constant u0 and theta0
    spinodal  seeded uniform noise in [-amp, amp], mean shifted to `mean`,
              theta = theta0
    cosine    u = mean + ampu C_ku(x), theta = theta0 + amptheta C_ktheta(x),
              C_k(x) = prod_i cos(k pi x_i / L_i)
"""
import logging

import numpy as np

from ..grid import Grid
from ..schemas import InitialKind, InitialSection
from ..stepper import State

logger = logging.getLogger("thermoch.initial")


class InitialDataError(ValueError):
    """Custom exception for initial data with nonpositive temperature."""
    pass


def _cosine_profile(grid: Grid, k: int) -> np.ndarray:
    out = np.ones(grid.shape)
    for x, L in zip(grid.cell_centers(), grid.length):
        out = out * np.cos(k * np.pi * x / L)
    return out


def make_initial(section: InitialSection, grid: Grid, seed: int = 0) -> State:
    """
    Build the initial state at t = 0.

    Raises:
        InitialDataError: If the generated temperature is not positive
    """
    kind = InitialKind(section.kind)
    if kind == InitialKind.UNIFORM:
        u = grid.constant(section.u0)
        theta = grid.constant(section.theta0)
    elif kind == InitialKind.SPINODAL:
        rng = np.random.default_rng(seed)
        noise = rng.uniform(-section.amp, section.amp, size=grid.shape)
        u = noise - noise.mean() + section.mean
        theta = grid.constant(section.theta0)
    elif kind == InitialKind.COSINE:
        if section.ktheta > 0 and section.theta0 - abs(section.amptheta) <= 0:
            raise InitialDataError(
                f"cosine temperature profile reaches {section.theta0 - abs(section.amptheta)!r}: "
                "need theta0 > |amptheta|"
            )
        u = section.mean + section.ampu * _cosine_profile(grid, section.ku)
        theta = section.theta0 + section.amptheta * _cosine_profile(grid, section.ktheta)
    else:
        raise InitialDataError(f"unknown initial-data generator '{section.kind}'")

    if not np.all(theta > 0):
        raise InitialDataError(f"initial temperature must be positive, got min {float(np.min(theta))!r}")
    logger.info("Initial data '%s' on %s: mean(u)=%.6g min(theta)=%.6g",
                kind.value, grid, grid.mean(u), float(np.min(theta)))
    return State(grid, 0.0, u, theta, 0)
