"""
ThermoCH - Pydantic schemas for run configuration and diagnostics records.

Defines the validated run configuration (physics parameters, grid, solver,
initial data, output, experiment sections) and the serializable report
records emitted by the diagnostics engine.
"""
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional
from enum import Enum

from .grid import Grid


# --- Enums for validated fields ---

class LinearSolver(str, Enum):
    DENSE_DIRECT = "dense-direct"
    SPARSE_DIRECT = "sparse-direct"
    ITERATIVE_KRYLOV = "iterative-krylov"


class JacobianMode(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"


class Preconditioner(str, Enum):
    NONE = "none"
    DIAGONAL = "diagonal"
    ILU = "ilu"


class FaceAveraging(str, Enum):
    HARMONIC = "harmonic"
    ARITHMETIC = "arithmetic"
    KIRCHHOFF = "kirchhoff"


class InitialKind(str, Enum):
    UNIFORM = "uniform"
    SPINODAL = "spinodal"
    COSINE = "cosine"


class ManufacturedKind(str, Enum):
    COSINE = "cosine"
    CONSTANT = "constant"


# --- Helper validators ---

def split_list(value):
    """Accept a comma-separated string where a list is expected."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        return [p for p in parts if p]
    if isinstance(value, (int, float)):
        return [value]
    return value


# --- Physics ---

class Parameters(BaseModel):
    """
    Physical and regularization constants.

    The conductivity exponent is restricted to 0 <= beta < 2: the Fourier
    case beta = 2 is excluded from the theory the model is built on.
    """
    m: float = Field(1.0, gt=0)
    alpha: float = Field(1.0, gt=0)
    lam: float = Field(1.0, gt=0, alias="lambda")
    c_v: float = Field(1.0, gt=0)
    k0: float = Field(1.0, gt=0)
    k1: float = Field(1.0, gt=0)
    beta: float = Field(1.0, ge=0)
    eps1: float = Field(0.0, ge=0)
    eps2: float = Field(0.0, ge=0)
    eps3: float = Field(0.0, ge=0)
    eps4: float = Field(0.0, ge=0)
    p1: float = Field(3.0, gt=0)
    p2: float = Field(3.0, gt=0)
    p3: float = Field(3.0, gt=0)
    p4: float = Field(2.0, gt=0)

    @field_validator('beta')
    @classmethod
    def validate_beta(cls, v):
        if v >= 2:
            raise ValueError(
                'beta must satisfy beta < 2: the Fourier-type case beta = 2 '
                'is excluded (not mathematically tractable for this model)'
            )
        return v

    @property
    def regularized(self) -> bool:
        return any(e > 0 for e in (self.eps1, self.eps2, self.eps3, self.eps4))

    def with_eps(self, eps: float) -> "Parameters":
        """Copy with all four regularization magnitudes set to eps."""
        return self.model_copy(update={"eps1": eps, "eps2": eps, "eps3": eps, "eps4": eps})

    class Config:
        frozen = True
        extra = "forbid"
        populate_by_name = True


# --- Run configuration sections ---

class RunSection(BaseModel):
    t_final: float = Field(1.0, ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    class Config:
        extra = "forbid"


class GridSection(BaseModel):
    dim: Literal[1, 2] = 1
    n: List[int] = Field(default_factory=lambda: [64])
    length: List[float] = Field(default_factory=lambda: [1.0])

    @field_validator('n', 'length', mode='before')
    @classmethod
    def parse_lists(cls, v):
        return split_list(v)

    @field_validator('n')
    @classmethod
    def validate_n(cls, v):
        if not v or any(n < 4 for n in v):
            raise ValueError('need at least 4 cells per axis')
        return v

    @field_validator('length')
    @classmethod
    def validate_length(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError('domain extent must be positive')
        return v

    @model_validator(mode='after')
    def validate_axes(self):
        for name in ('n', 'length'):
            values = getattr(self, name)
            if len(values) not in (1, self.dim):
                raise ValueError(f'{name} needs 1 or {self.dim} entries')
        return self

    def to_grid(self) -> Grid:
        n = self.n * self.dim if len(self.n) == 1 else self.n
        length = self.length * self.dim if len(self.length) == 1 else self.length
        return Grid(n=tuple(n), length=tuple(length))

    class Config:
        extra = "forbid"


class SolverConfig(BaseModel):
    """Time-step control, Newton and linear-solver options."""
    dt_init: float = Field(1e-4, gt=0)
    dt_min: float = Field(1e-9, gt=0)
    dt_max: float = Field(1e-2, gt=0)
    newton_tol: float = Field(1e-10, gt=0)
    newton_max_iter: int = Field(50, ge=1)
    theta_floor: float = Field(1e-8, gt=0)
    growth_factor: float = Field(1.2, ge=1)
    easy_iterations: int = Field(4, ge=0)  # grow dt when Newton needed at most this many
    max_damping_halvings: int = Field(30, ge=1)
    linear_solver: LinearSolver = LinearSolver.SPARSE_DIRECT
    jacobian: JacobianMode = JacobianMode.ANALYTIC
    preconditioner: Preconditioner = Preconditioner.ILU
    krylov_forcing: float = Field(1e-3, gt=0, lt=1)
    face_averaging: FaceAveraging = FaceAveraging.HARMONIC
    isothermal: bool = False

    @model_validator(mode='after')
    def validate_steps(self):
        if not (self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError('need dt_min <= dt_init <= dt_max')
        return self

    class Config:
        extra = "forbid"


class InitialSection(BaseModel):
    kind: InitialKind = InitialKind.SPINODAL
    u0: float = 0.0
    theta0: float = Field(1.0, gt=0)
    amp: float = Field(0.05, ge=0)
    mean: float = 0.0
    ku: int = Field(1, ge=0)
    ampu: float = 0.1
    ktheta: int = Field(1, ge=0)
    amptheta: float = 0.2

    class Config:
        extra = "forbid"


class OutputSection(BaseModel):
    directory: Optional[str] = None
    snapshot_stride: int = Field(10, ge=0)  # 0 disables snapshots
    monitors: bool = True

    class Config:
        extra = "forbid"


class ContinuationSection(BaseModel):
    eps_ladder: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])

    @field_validator('eps_ladder', mode='before')
    @classmethod
    def parse_ladder(cls, v):
        return split_list(v)

    @field_validator('eps_ladder')
    @classmethod
    def validate_ladder(cls, v):
        if not v:
            raise ValueError('ladder must not be empty')
        if any(e <= 0 for e in v):
            raise ValueError('ladder entries must be positive')
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError('ladder must be strictly decreasing')
        return v

    class Config:
        extra = "forbid"


class MmsSection(BaseModel):
    kind: ManufacturedKind = ManufacturedKind.COSINE
    amp_u: float = 0.1
    amp_theta: float = Field(0.2, ge=0, lt=1)
    dt_factor: float = Field(1.0, gt=0)  # dt = dt_factor * h**2
    t_final: float = Field(0.1, gt=0)
    levels: List[int] = Field(default_factory=lambda: [32, 64, 128])

    @field_validator('levels', mode='before')
    @classmethod
    def parse_levels(cls, v):
        return split_list(v)

    @field_validator('levels')
    @classmethod
    def validate_levels(cls, v):
        if len(v) < 3:
            raise ValueError('need at least 3 refinement levels')
        if any(n < 4 for n in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError('levels must be increasing cell counts >= 4')
        return v

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    """Complete configuration of one experiment."""
    run: RunSection = Field(default_factory=RunSection)
    physics: Parameters = Field(default_factory=Parameters)
    grid: GridSection = Field(default_factory=GridSection)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    initial: InitialSection = Field(default_factory=InitialSection)
    output: OutputSection = Field(default_factory=OutputSection)
    continuation: ContinuationSection = Field(default_factory=ContinuationSection)
    mms: MmsSection = Field(default_factory=MmsSection)

    class Config:
        extra = "forbid"


# --- Diagnostics records ---

class BalanceRecord(BaseModel):
    t: float
    mass: float
    internal_energy: float
    total_entropy: float
    entropy_production_rate: float = Field(..., ge=0)
    min_theta: float
    max_theta: float
    free_energy: float
    ch_energy: float


class StepRow(BalanceRecord):
    """One row of the balance time series."""
    dt: float
    newton_iters: int


class MonitorReport(BaseModel):
    t_final: float
    n_states: int
    values: Dict[str, float]


class InitialDataAudit(BaseModel):
    min_theta: float
    theta_l2: float
    inv_theta_l1: float
    grad_u_l2: float
    ratio_l2: float
    nonpositive_theta: bool


class WeakCheck(BaseModel):
    """Signed margin (entropy inequality) or residual (heat identity) for one test function."""
    label: str
    value: float
    scale: float
    regularization: float


class WeakFormReport(BaseModel):
    """Weak-form checks of a whole run plus the accumulated entropy gap."""
    entropy_inequality: List[WeakCheck]
    heat_equation: List[WeakCheck]
    entropy_gap_total: float
    entropy_regularization_total: float


class MmsErrorRow(BaseModel):
    n: int
    h: float
    dt: float
    steps: int
    err_u_l2: float
    err_u_linf: float
    err_theta_l2: float
    err_theta_linf: float


class ContinuationSummaryRow(BaseModel):
    monitor: str
    min_value: float
    max_value: float
    ratio: float
