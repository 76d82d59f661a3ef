"""Outlet boundary controllers and backstepping diagnostics.

Every controller is a callable ``controller(state, dt) -> U`` returning the
outlet speed perturbation, so that v(L, t) = v* + U(t). Integrals over the
road use the midpoint rule on the finite-volume cell centres.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .arz_sim import SimConfig, TrafficState
from .kernel_solver import KernelPair, kernel_values
from .traffic_model import (
    CharacteristicParams,
    ConfigurationError,
    Equilibrium,
    ModelParams,
    RiemannState,
    characteristics,
    to_riemann,
)


@dataclass
class PIGains:
    kp: float = 0.0
    ki: float = 0.0
    integral_state: float = 0.0


@dataclass(frozen=True)
class LyapunovParams:
    nu: float
    a: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ConfigurationError("nu must be positive")
        if not self.a > 0:
            raise ConfigurationError("a must be positive")

    @classmethod
    def default(cls, chars: CharacteristicParams, L: float) -> "LyapunovParams":
        return cls(nu=0.5 * min(chars.lambda1, chars.lambda2) / L, a=2.0 * max(1.0, chars.r**2))


@dataclass
class TargetState:
    alpha: np.ndarray
    beta: np.ndarray
    grid: np.ndarray


def _spacing(grid: np.ndarray) -> float:
    return float(grid[1] - grid[0])


def _check_lambda2(k_lambda2: float, lambda2: float):
    if not np.isclose(k_lambda2, lambda2, rtol=1e-9, atol=0.0):
        raise ConfigurationError(
            f"kernels were computed for lambda2={k_lambda2:.6g} but the state is "
            f"linearized with lambda2={lambda2:.6g}"
        )


def control_from_row(rs: RiemannState, kw_row: np.ndarray, kv_row: np.ndarray) -> float:
    """U = int Kw(L, xi) w~ + int Kv(L, xi) v~, midpoint rule."""
    h = _spacing(rs.grid)
    return float(h * (np.dot(kw_row, rs.w) + np.dot(kv_row, rs.v)))


def backstepping_control(rs: RiemannState, k: KernelPair, lambda2: float | None = None) -> float:
    if lambda2 is not None:
        _check_lambda2(k.chars.lambda2, lambda2)
    if not np.isclose(rs.grid[-1] + 0.5 * _spacing(rs.grid), k.L):
        raise ConfigurationError("state grid and kernels do not share the road length")
    kw_row, kv_row = kernel_values(k, np.full_like(rs.grid, k.L), rs.grid)
    return control_from_row(rs, kw_row, kv_row)


def pi_control(v_inlet: float, v_star: float, gains: PIGains, dt: float) -> float:
    """Perturbation-form PI law on the inlet speed error. Advances the
    integral state of ``gains`` in place."""
    if not dt >= 0:
        raise ValueError("dt must be non-negative")
    err = v_inlet - v_star
    gains.integral_state += err * dt
    return gains.kp * err + gains.ki * gains.integral_state


def target_matrices(k: KernelPair, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature matrices A_w, A_v with (A f)_i ~ int_0^{x_i} K(x_i, xi) f(xi) dxi."""
    h = _spacing(grid)
    n = grid.size
    X, XI = np.meshgrid(grid, grid, indexing="ij")
    lower = np.tri(n, dtype=bool)
    XI = np.where(lower, XI, X)
    kw, kv = kernel_values(k, X, XI)
    wts = np.where(lower, h, 0.0)
    wts[np.arange(n), np.arange(n)] = 0.5 * h
    return kw * wts, kv * wts


def target_transform(rs: RiemannState, k: KernelPair, matrices=None) -> TargetState:
    """alpha = w~, beta = v~ - int_0^x Kw w~ - int_0^x Kv v~."""
    Aw, Av = matrices if matrices is not None else target_matrices(k, rs.grid)
    beta = rs.v - Aw @ rs.w - Av @ rs.v
    return TargetState(rs.w.copy(), beta, rs.grid.copy())


def lyapunov_vk(ts: TargetState, lp: LyapunovParams, chars: CharacteristicParams) -> float:
    x = ts.grid
    h = _spacing(x)
    wa = np.exp(-lp.nu * x / chars.lambda1) / chars.lambda1
    wb = lp.a * np.exp(-lp.nu * x / chars.lambda2) / chars.lambda2
    return float(h * np.sum(wa * ts.alpha**2 + wb * ts.beta**2))


def lyapunov_trajectory(traj, k: KernelPair, config: SimConfig,
                        lp: LyapunovParams | None = None) -> np.ndarray:
    """V_k at every snapshot of a trajectory."""
    ch = characteristics(config.eq, config.params)
    lp = lp or LyapunovParams.default(ch, config.params.L)
    mats = target_matrices(k, traj.grid)
    out = np.empty(traj.t.size)
    for i in range(traj.t.size):
        rs = to_riemann(traj.rho[i], traj.v[i], config.eq, ch, config.params, traj.grid)
        out[i] = lyapunov_vk(target_transform(rs, k, mats), lp, ch)
    return out


def fit_decay_rate(t: np.ndarray, V: np.ndarray) -> tuple[float, float]:
    """Least-squares fit log V = log C - eta t; returns (eta, R^2)."""
    y = np.log(V)
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(-coef[1]), float(r2)


class _StateFeedback:
    """Shared plumbing for full-state controllers."""

    def __init__(self, eq: Equilibrium, params: ModelParams, grid: np.ndarray):
        self.eq = eq
        self.params = params
        self.grid = np.asarray(grid, dtype=float)
        self.chars = characteristics(eq, params)

    def riemann(self, state: TrafficState) -> RiemannState:
        return to_riemann(state.rho, state.v, self.eq, self.chars, self.params, self.grid)


class BacksteppingController(_StateFeedback):
    """Full-state backstepping feedback with kernels sampled at x = L."""

    kind = "backstepping"

    def __init__(self, kernels: KernelPair, eq: Equilibrium, params: ModelParams, grid):
        super().__init__(eq, params, grid)
        _check_lambda2(kernels.chars.lambda2, self.chars.lambda2)
        self.kernels = kernels
        self.kw_row, self.kv_row = kernel_values(kernels, np.full_like(self.grid, kernels.L), self.grid)

    def __call__(self, state: TrafficState, dt: float) -> float:
        return control_from_row(self.riemann(state), self.kw_row, self.kv_row)


class NOKernelController(_StateFeedback):
    """Backstepping feedback whose kernel row comes from a trained kernel operator."""

    kind = "no_kernels"

    def __init__(self, model, eq: Equilibrium, params: ModelParams, grid):
        from .neural_op.deeponet import kernel_row

        super().__init__(eq, params, grid)
        self.model = model
        self.kw_row, self.kv_row, self.extrapolating = kernel_row(
            model, self.chars.lambda2, params.L, self.grid
        )
        self.warnings: list[str] = []
        if self.extrapolating:
            self.warnings.append(
                f"lambda2={self.chars.lambda2:.4g} outside trained range {model.trained_range}"
            )

    def __call__(self, state: TrafficState, dt: float) -> float:
        return control_from_row(self.riemann(state), self.kw_row, self.kv_row)


def no_kernel_control(rs: RiemannState, model, lambda2: float) -> float:
    from .neural_op.deeponet import kernel_row

    L = float(rs.grid[-1] + 0.5 * _spacing(rs.grid))
    kw_row, kv_row, extrapolating = kernel_row(model, lambda2, L, rs.grid)
    if extrapolating:
        warnings.warn(f"lambda2={lambda2:.4g} outside trained range {model.trained_range}")
    return control_from_row(rs, kw_row, kv_row)


def no_law_control(t: float, model, lambda2: float) -> float:
    """Open-loop control U(t) = H(lambda2)(t) from a trained law operator."""
    from .neural_op.deeponet import law_values

    values, notes = law_values(model, lambda2, np.array([t]))
    for note in notes:
        warnings.warn(note)
    return float(values[0])


class NOLawController:
    """Evaluates the learned law operator on the simulation clock.

    The whole U(t) profile on the recording horizon is synthesized once;
    each call linearly interpolates it. The state is ignored.
    """

    kind = "no_law"

    def __init__(self, model, lambda2: float, n_table: int | None = None):
        from .neural_op.deeponet import law_values

        self.model = model
        self.lambda2 = float(lambda2)
        T = model.horizon
        n_table = n_table or max(2, int(round(T)) * 4 + 1)
        self.t_table = np.linspace(0.0, T, n_table)
        self.u_table, self.warnings = law_values(model, lambda2, self.t_table)

    def __call__(self, state: TrafficState, dt: float) -> float:
        t = state.t
        if t > self.model.horizon + 1e-9:
            msg = f"t={t:.4g} beyond trained horizon {self.model.horizon:.4g}; clamped"
            if msg not in self.warnings:
                self.warnings.append(msg)
        return float(np.interp(t, self.t_table, self.u_table))


class PIController:
    """PI feedback on the inlet speed, applied as the outlet perturbation.

    Carries mutable integral state: use one instance per simulation.
    """

    kind = "pi"

    def __init__(self, gains: PIGains, v_star: float):
        self.gains = PIGains(gains.kp, gains.ki, 0.0)
        self.v_star = v_star

    def __call__(self, state: TrafficState, dt: float) -> float:
        return pi_control(float(state.v[0]), self.v_star, self.gains, dt)


@dataclass
class ZeroController:
    kind: str = field(default="zero", init=False)

    def __call__(self, state: TrafficState, dt: float) -> float:
        return 0.0
