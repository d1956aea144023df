"""
ThermoCH - Uniform cell-centered grid with no-flux boundary operators.

Fields are numpy arrays of shape ``grid.shape`` (row-major, axis 0 is x).
All differential operators are written in face-flux form on the interior
faces only; boundary faces carry zero flux, which is the mirror-ghost-cell
treatment of a homogeneous Neumann condition. Every operator therefore
telescopes: its discrete integral vanishes and it satisfies summation by
parts against the face inner product.

Face quantities are flat vectors ordered axis by axis (all x-faces first,
row-major within an axis).
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple
import logging
import math

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger("thermoch.grid")


class GridError(Exception):
    """Custom exception for invalid grids and grid operations."""
    pass


def _axis_selectors(n: int) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Left/right cell selectors for the n-1 interior faces of one axis."""
    rows = np.arange(n - 1)
    left = sp.csr_matrix((np.ones(n - 1), (rows, rows)), shape=(n - 1, n))
    right = sp.csr_matrix((np.ones(n - 1), (rows, rows + 1)), shape=(n - 1, n))
    return left, right


@dataclass(frozen=True)
class Grid:
    """
    Uniform cell-centered mesh on an interval (1D) or rectangle (2D).

    Attributes:
        n: cells per axis (>= 4 each)
        length: domain extent per axis
    """
    n: Tuple[int, ...]
    length: Tuple[float, ...]

    def __post_init__(self):
        if len(self.n) not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got dim={len(self.n)}")
        if len(self.length) != len(self.n):
            raise GridError("n and length must have one entry per axis")
        if any(int(k) < 4 for k in self.n):
            raise GridError(f"need at least 4 cells per axis, got {self.n}")
        if any(not (x > 0) for x in self.length):
            raise GridError(f"domain extent must be positive, got {self.length}")
        object.__setattr__(self, "n", tuple(int(k) for k in self.n))
        object.__setattr__(self, "length", tuple(float(x) for x in self.length))

    @classmethod
    def uniform(cls, dim: int, n: int, length: float = 1.0) -> "Grid":
        return cls(n=(n,) * dim, length=(length,) * dim)

    # -------------------------------------------------------------------------
    # Geometry
    # -------------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple(L / k for L, k in zip(self.length, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.length))

    def cell_centers(self) -> Tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``grid.shape`` (meshgrid, ij indexing)."""
        axes = [(np.arange(k) + 0.5) * hk for k, hk in zip(self.n, self.h)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def check_field(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.size != self.size:
            raise GridError(f"field has {f.size} values, grid has {self.size} cells")
        return f.reshape(self.shape)

    # -------------------------------------------------------------------------
    # Sparse face operators
    # -------------------------------------------------------------------------

    def _kron_axis(self, mat: sp.spmatrix, axis: int) -> sp.csr_matrix:
        if self.dim == 1:
            return sp.csr_matrix(mat)
        if axis == 0:
            return sp.kron(mat, sp.identity(self.n[1]), format="csr")
        return sp.kron(sp.identity(self.n[0]), mat, format="csr")

    @cached_property
    def _selectors(self):
        lefts, rights, inv_h = [], [], []
        for axis, (k, hk) in enumerate(zip(self.n, self.h)):
            left, right = _axis_selectors(k)
            lefts.append(self._kron_axis(left, axis))
            rights.append(self._kron_axis(right, axis))
            inv_h.append(np.full(lefts[-1].shape[0], 1.0 / hk))
        return (
            sp.vstack(lefts, format="csr"),
            sp.vstack(rights, format="csr"),
            np.concatenate(inv_h),
        )

    @property
    def face_left(self) -> sp.csr_matrix:
        """Selects the left (lower-index) cell of every interior face."""
        return self._selectors[0]

    @property
    def face_right(self) -> sp.csr_matrix:
        """Selects the right (higher-index) cell of every interior face."""
        return self._selectors[1]

    @property
    def face_inv_h(self) -> np.ndarray:
        return self._selectors[2]

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Face differences (f_R - f_L)/h on interior faces."""
        return sp.csr_matrix(sp.diags(self.face_inv_h) @ (self.face_right - self.face_left))

    @cached_property
    def divergence_matrix(self) -> sp.csr_matrix:
        """Cell divergence of interior face fluxes with zero boundary flux."""
        return sp.csr_matrix(-self.gradient_matrix.T)

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.divergence_matrix @ self.gradient_matrix)

    # -------------------------------------------------------------------------
    # Face quantities
    # -------------------------------------------------------------------------

    def face_gradient(self, f: np.ndarray) -> np.ndarray:
        return self.gradient_matrix @ self.check_field(f).ravel()

    def face_values(self, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        flat = self.check_field(f).ravel()
        return self.face_left @ flat, self.face_right @ flat

    def face_mean(self, f: np.ndarray) -> np.ndarray:
        left, right = self.face_values(f)
        return 0.5 * (left + right)

    def face_average(self, a: np.ndarray, averaging: str = "harmonic") -> np.ndarray:
        """Face coefficient from positive cell values (harmonic or arithmetic mean)."""
        left, right = self.face_values(a)
        if averaging == "harmonic":
            return 2.0 * left * right / (left + right)
        if averaging == "arithmetic":
            return 0.5 * (left + right)
        raise GridError(f"unknown face averaging '{averaging}'")

    def face_integral(self, q: np.ndarray) -> float:
        """Quadrature of a face quantity: sum over interior faces times cell volume."""
        return float(np.sum(q) * self.cell_volume)

    def divergence(self, flux: np.ndarray) -> np.ndarray:
        return (self.divergence_matrix @ np.asarray(flux, dtype=float)).reshape(self.shape)

    # -------------------------------------------------------------------------
    # Differential operators
    # -------------------------------------------------------------------------

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """3-point (1D) / 5-point (2D) Laplacian with zero normal derivative."""
        return self.divergence(self.face_gradient(f))

    def div_coeff_grad(self, a: np.ndarray, f: np.ndarray, averaging: str = "harmonic") -> np.ndarray:
        """
        Conservative div(a grad f) with a face coefficient averaged from cells.

        Raises:
            GridError: If the coefficient is not strictly positive
        """
        a = self.check_field(a)
        if not np.all(a > 0):
            raise GridError("diffusion coefficient must be positive in every cell")
        return self.divergence(self.face_average(a, averaging) * self.face_gradient(f))

    # -------------------------------------------------------------------------
    # Quadrature and norms
    # -------------------------------------------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        """Midpoint quadrature."""
        return float(np.sum(self.check_field(f)) * self.cell_volume)

    def mean(self, f: np.ndarray) -> float:
        """Cell average; exact for constant fields."""
        f = self.check_field(f)
        if np.all(f == f.flat[0]):
            return float(f.flat[0])
        return math.fsum(f.ravel()) / f.size

    def norm_l2(self, f: np.ndarray) -> float:
        f = self.check_field(f)
        return float(np.sqrt(self.integrate(f * f)))

    def norm_linf(self, f: np.ndarray) -> float:
        return float(np.max(np.abs(self.check_field(f))))

    def norm_lp(self, f: np.ndarray, p: float) -> float:
        return float(self.integrate(np.abs(self.check_field(f)) ** p) ** (1.0 / p))

    def h1_seminorm_sq(self, f: np.ndarray) -> float:
        """Integral of |grad f|^2 from interior face differences."""
        g = self.face_gradient(f)
        return self.face_integral(g * g)

    def __repr__(self):
        return f"Grid(n={self.n}, length={self.length})"
