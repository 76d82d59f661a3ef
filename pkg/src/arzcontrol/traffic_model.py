"""ARZ traffic model: fundamental diagram, equilibrium, linearization.

All quantities are SI: densities in veh/m, speeds in m/s, times in s.
The Riemann (characteristic) coordinates used by the controllers are

    v~ = v - v*
    w~ = exp(x / (tau v*)) * (v~ - V'(rho*) (rho - rho*))

which diagonalize the linearized ARZ system into a downstream transport
at speed lambda1 = v* and an upstream transport at speed lambda2 with the
in-domain coupling c(x) w~.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Physical parameters or equilibrium outside the admissible set."""


class DomainError(ValueError):
    """Argument outside the domain of definition of a function."""


@dataclass(frozen=True)
class ModelParams:
    v_f: float = 40.0
    rho_m: float = 0.16
    gamma: float = 1.0
    tau: float = 60.0
    L: float = 500.0

    def __post_init__(self):
        for name in ("v_f", "rho_m", "gamma", "tau", "L"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if self.gamma < 1:
            raise ConfigurationError("gamma must be >= 1")


@dataclass(frozen=True)
class Equilibrium:
    rho_star: float
    v_star: float
    q_star: float


@dataclass(frozen=True)
class CharacteristicParams:
    """Linearization data of the ARZ system around an equilibrium."""

    lambda1: float
    lambda2: float
    r: float
    c_amp: float
    c_decay: float

    def c(self, x):
        """In-domain coupling coefficient c(x) = c_amp * exp(-c_decay x)."""
        return self.c_amp * np.exp(-self.c_decay * np.asarray(x, dtype=float))


def settling_time(chars: CharacteristicParams, L: float) -> float:
    """Finite settling time L/lambda1 + L/lambda2 of the exact backstepping loop."""
    return L / chars.lambda1 + L / chars.lambda2


@dataclass
class RiemannState:
    w: np.ndarray
    v: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.grid = np.asarray(self.grid, dtype=float)
        if not (self.w.shape == self.v.shape == self.grid.shape) or self.grid.ndim != 1:
            raise ValueError("w, v and grid must be 1-d arrays of equal length")
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


def cell_centers(L: float, nx: int) -> np.ndarray:
    h = L / nx
    return (np.arange(nx) + 0.5) * h


def fundamental_diagram(rho, params: ModelParams):
    """Greenshields-type speed V(rho) and its derivative dV/drho.

    Works elementwise on arrays. Raises DomainError for densities outside
    [0, rho_m].
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > params.rho_m):
        raise DomainError(f"density outside [0, {params.rho_m}]")
    ratio = rho / params.rho_m
    V = params.v_f * (1.0 - ratio**params.gamma)
    Vprime = -params.v_f * params.gamma * ratio ** (params.gamma - 1.0) / params.rho_m
    if V.ndim == 0:
        return float(V), float(Vprime)
    return V, Vprime


def speed(rho, params: ModelParams):
    """V(rho) without range checking; used in the inner simulation loop."""
    return params.v_f * (1.0 - (rho / params.rho_m) ** params.gamma)


def speed_prime(rho, params: ModelParams):
    return -params.v_f * params.gamma * (rho / params.rho_m) ** (params.gamma - 1.0) / params.rho_m


def equilibrium(rho_star: float, params: ModelParams) -> Equilibrium:
    """Equilibrium (rho*, v*, q*) in the congested regime.

    Raises ConfigurationError unless lambda2 = -rho* V'(rho*) - v* > 0 and
    rho* < rho_m (for gamma = 1 this is rho_m/2 < rho* < rho_m).
    """
    rho_star = float(rho_star)
    if not 0.0 < rho_star < params.rho_m:
        raise ConfigurationError(
            f"rho_star={rho_star} must lie strictly inside (0, rho_m={params.rho_m})"
        )
    v_star, vp = fundamental_diagram(rho_star, params)
    lambda2 = -rho_star * vp - v_star
    if not lambda2 > 0:
        raise ConfigurationError(
            f"rho_star={rho_star} is not congested: lambda2 = -rho* V'(rho*) - v* = "
            f"{lambda2:.6g} must be > 0"
        )
    return Equilibrium(rho_star, v_star, rho_star * v_star)


def characteristics(eq: Equilibrium, params: ModelParams) -> CharacteristicParams:
    _, vp = fundamental_diagram(eq.rho_star, params)
    lambda1 = eq.v_star
    lambda2 = -eq.rho_star * vp - eq.v_star
    if not lambda2 > 0:
        raise ConfigurationError(f"lambda2 = {lambda2:.6g} <= 0: equilibrium not congested")
    return CharacteristicParams(
        lambda1=lambda1,
        lambda2=lambda2,
        r=lambda2 / lambda1,
        c_amp=-1.0 / params.tau,
        c_decay=1.0 / (params.tau * eq.v_star),
    )


def lambda2_of_rho(rho_star, params: ModelParams):
    """lambda2 as a function of rho*: v_f ((gamma+1)(rho*/rho_m)^gamma - 1)."""
    return params.v_f * ((params.gamma + 1.0) * (np.asarray(rho_star) / params.rho_m) ** params.gamma - 1.0)


def rho_of_lambda2(lambda2, params: ModelParams):
    """Inverse of lambda2_of_rho on the congested branch."""
    frac = (np.asarray(lambda2, dtype=float) / params.v_f + 1.0) / (params.gamma + 1.0)
    return params.rho_m * frac ** (1.0 / params.gamma)


def linearization(rho_star: float, params: ModelParams) -> tuple[Equilibrium, CharacteristicParams]:
    eq = equilibrium(rho_star, params)
    return eq, characteristics(eq, params)


def to_riemann(rho_field, v_field, eq: Equilibrium, chars: CharacteristicParams,
               params: ModelParams, grid=None) -> RiemannState:
    """Map physical fields (rho, v) on a uniform grid to (w~, v~)."""
    rho_field = np.asarray(rho_field, dtype=float)
    v_field = np.asarray(v_field, dtype=float)
    if rho_field.shape != v_field.shape or rho_field.ndim != 1:
        raise ValueError("rho and v fields must be 1-d arrays of equal length")
    if grid is None:
        grid = cell_centers(params.L, rho_field.size)
    grid = np.asarray(grid, dtype=float)
    if grid.shape != rho_field.shape:
        raise ValueError(f"grid has {grid.size} points but fields have {rho_field.size}")
    vp = speed_prime(eq.rho_star, params)
    vt = v_field - eq.v_star
    wt = np.exp(chars.c_decay * grid) * (vt - vp * (rho_field - eq.rho_star))
    return RiemannState(wt, vt, grid)


def from_riemann(rs: RiemannState, eq: Equilibrium, chars: CharacteristicParams,
                 params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of to_riemann. Out-of-range densities are returned as is;
    the simulator reports them."""
    vp = speed_prime(eq.rho_star, params)
    v = eq.v_star + rs.v
    rho = eq.rho_star + (rs.v - np.exp(-chars.c_decay * rs.grid) * rs.w) / vp
    return rho, v


def riemann_l2(rs: RiemannState) -> tuple[float, float]:
    """Cell-average L2 norms of w~ and v~ over [0, L]."""
    h = rs.grid[1] - rs.grid[0] if rs.grid.size > 1 else 1.0
    return float(np.sqrt(h * np.dot(rs.w, rs.w))), float(np.sqrt(h * np.dot(rs.v, rs.v)))
