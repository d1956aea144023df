"""
ThermoCH - Constitutive functions of the non-isothermal Cahn-Hilliard model.

Pure pointwise mathematics: every function accepts scalars or numpy arrays
and knows nothing about grids. Temperature-dependent quantities that are
only defined for positive temperature raise ModelDomainError otherwise.

Constitutive choices:
    F(u) = (u^2 - 1)^2 / 4               double-well potential, f = F'
    Q(theta) = (c_V / 2) theta^2         heat content, Lambda(theta) = c_V theta
    k(theta) = k0 + k1 theta^beta        conductivity, 0 <= beta < 2
    psi = (alpha/2)|grad u|^2 - Q(theta) - lambda theta u + F(u)
    R1 = eps1 |lap chi|^(p1-1) lap chi - eps2 |chi|^(p2-1) chi
    R2 = eps3 theta^p3 - eps4 theta^(-p4)
"""
import numpy as np

from .schemas import Parameters


class ModelDomainError(ValueError):
    """Custom exception for arguments outside a constitutive function's domain."""
    pass


def _require_positive(theta, what: str = "temperature"):
    theta = np.asarray(theta, dtype=float)
    if not np.all(theta > 0):
        raise ModelDomainError(f"{what} must be positive, got min {np.min(theta)!r}")
    return theta


def _signed_power(x, p: float):
    """|x|^(p-1) x, written so that x = 0 is safe for p < 1."""
    return np.sign(x) * np.abs(x) ** p


# --- Double-well potential ---

def potential_F(u):
    return 0.25 * (u * u - 1.0) ** 2


def potential_f(u):
    return u ** 3 - u


def potential_f_prime(u):
    return 3.0 * u * u - 1.0


# --- Heat content, entropy, conductivity ---

def heat_Q(theta, params: Parameters):
    return 0.5 * params.c_v * theta * theta


def heat_Q_prime(theta, params: Parameters):
    return params.c_v * theta


def entropy_Lambda(theta, params: Parameters):
    return params.c_v * theta


def theta_from_Q(Q, params: Parameters):
    """Inverse of heat_Q on positive temperatures."""
    return np.sqrt(2.0 * np.asarray(Q, dtype=float) / params.c_v)


def conductivity_k(theta, params: Parameters):
    theta = _require_positive(theta)
    return params.k0 + params.k1 * theta ** params.beta


def conductivity_k_prime(theta, params: Parameters):
    theta = _require_positive(theta)
    if params.beta == 0:
        return np.zeros_like(theta)
    return params.k1 * params.beta * theta ** (params.beta - 1.0)


def heat_diffusivity(theta, params: Parameters):
    """k(theta)/theta^2, the coefficient of the heat flux written in grad theta."""
    theta = _require_positive(theta)
    return conductivity_k(theta, params) / (theta * theta)


def heat_diffusivity_prime(theta, params: Parameters):
    theta = _require_positive(theta)
    k = conductivity_k(theta, params)
    return conductivity_k_prime(theta, params) / theta ** 2 - 2.0 * k / theta ** 3


def heat_kirchhoff_K(theta, params: Parameters):
    """
    Kirchhoff transform K with K'(theta) = k(theta)/theta^2.

    div(k grad(1/theta)) = -lap K(theta), so the heat flux is a pure
    gradient of K and -lap H(Q) with H = K(theta(Q)) is monotone in Q.
    """
    theta = _require_positive(theta)
    beta = params.beta
    if beta == 1.0:
        power = np.log(theta)
    else:
        power = theta ** (beta - 1.0) / (beta - 1.0)
    return -params.k0 / theta + params.k1 * power


def heat_H(Q, params: Parameters):
    return heat_kirchhoff_K(theta_from_Q(Q, params), params)


def heat_M(Q, params: Parameters):
    return reg_R2(theta_from_Q(Q, params), params)


# --- Entropy flux kernel ---

def kernel_g(theta, params: Parameters):
    """
    g with g'(theta) = (k(theta)/theta) d(1/theta)/dtheta.

    Gives (k/theta) grad(1/theta) = grad g(theta). Requires beta < 2.
    """
    theta = _require_positive(theta)
    beta = params.beta
    return params.k0 / (2.0 * theta ** 2) + params.k1 / ((2.0 - beta) * theta ** (2.0 - beta))


def kernel_g_prime(theta, params: Parameters):
    theta = _require_positive(theta)
    return -conductivity_k(theta, params) / theta ** 3


# --- Chemical potential ---

def chi_of(u, theta, lap_u, params: Parameters):
    """Rescaled chemical potential from chi theta = f(u) - lambda theta - alpha lap u."""
    theta = _require_positive(theta)
    return (potential_f(u) - params.lam * theta - params.alpha * lap_u) / theta


def mu_of(chi, theta):
    return chi * theta


# --- Free energy ---

def free_energy_density(u, grad_u_sq, theta, params: Parameters):
    theta = _require_positive(theta)
    return (
        0.5 * params.alpha * grad_u_sq
        - heat_Q(theta, params)
        - params.lam * theta * u
        + potential_F(u)
    )


def entropy_density(u, theta, params: Parameters):
    """s = -d psi / d theta = Lambda(theta) + lambda u."""
    return entropy_Lambda(theta, params) + params.lam * u


def internal_energy_density(u, grad_u_sq, theta, params: Parameters):
    """e = psi + theta s."""
    return 0.5 * params.alpha * grad_u_sq + heat_Q(theta, params) + potential_F(u)


# --- Regularizing terms ---

def reg_R1(chi, lap_chi, params: Parameters):
    return (
        params.eps1 * _signed_power(lap_chi, params.p1)
        - params.eps2 * _signed_power(chi, params.p2)
    )


def reg_R1_partials(chi, lap_chi, params: Parameters):
    """(dR1/d lap_chi, dR1/d chi)."""
    d_lap = params.eps1 * params.p1 * np.abs(lap_chi) ** (params.p1 - 1.0) if params.eps1 > 0 \
        else np.zeros_like(np.asarray(lap_chi, dtype=float))
    d_chi = -params.eps2 * params.p2 * np.abs(chi) ** (params.p2 - 1.0) if params.eps2 > 0 \
        else np.zeros_like(np.asarray(chi, dtype=float))
    return d_lap, d_chi


def reg_R2(theta, params: Parameters):
    theta = _require_positive(theta)
    return params.eps3 * theta ** params.p3 - params.eps4 * theta ** (-params.p4)


def reg_R2_prime(theta, params: Parameters):
    theta = _require_positive(theta)
    return (
        params.eps3 * params.p3 * theta ** (params.p3 - 1.0)
        + params.eps4 * params.p4 * theta ** (-params.p4 - 1.0)
    )
