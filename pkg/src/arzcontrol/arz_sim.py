"""Finite-volume simulation of the ARZ traffic model with boundary control.

Nonlinear mode evolves the conservative pair (rho, y), y = rho (v - V(rho)),

    rho_t + (rho v)_x = 0
    y_t   + (y v)_x   = -y / tau

with a first-order Rusanov flux and exact integration of the relaxation
term after each hyperbolic substep. Ghost cells impose rho v = q* at the
inlet and v = v* + U at the outlet.

Linearized mode upwinds the Riemann variables (w~, v~) directly.
"""

from __future__ import annotations

import csv
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Protocol

import numpy as np

from .traffic_model import (
    CharacteristicParams,
    ConfigurationError,
    Equilibrium,
    ModelParams,
    RiemannState,
    cell_centers,
    characteristics,
    from_riemann,
    riemann_l2,
    speed,
    speed_prime,
    to_riemann,
)


class SimulationError(RuntimeError):
    """Numerical failure during time marching (CFL or state invariants)."""


@dataclass
class SimConfig:
    params: ModelParams
    eq: Equilibrium
    nx: int = 100
    t_end: float = 300.0
    cfl: float = 0.8
    mode: Literal["nonlinear", "linearized"] = "nonlinear"
    record_every: float = 1.0

    def __post_init__(self):
        if self.nx < 10:
            raise ConfigurationError("nx must be >= 10")
        if not 0 < self.cfl < 1:
            raise ConfigurationError("cfl must lie in (0, 1)")
        if not self.t_end > 0:
            raise ConfigurationError("t_end must be positive")
        if not self.record_every > 0:
            raise ConfigurationError("record_every must be positive")
        if self.mode not in ("nonlinear", "linearized"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    @property
    def h(self) -> float:
        return self.params.L / self.nx

    @property
    def grid(self) -> np.ndarray:
        return cell_centers(self.params.L, self.nx)

    @property
    def chars(self) -> CharacteristicParams:
        return characteristics(self.eq, self.params)


@dataclass
class TrafficState:
    rho: np.ndarray
    v: np.ndarray
    t: float = 0.0


class Controller(Protocol):
    def __call__(self, state: TrafficState, dt: float) -> float: ...


@dataclass
class Trajectory:
    t: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    U: np.ndarray
    l2_w: np.ndarray
    l2_v: np.ndarray
    grid: np.ndarray
    warnings: list[str] = field(default_factory=list)
    control_seconds: float = 0.0
    n_steps: int = 0

    @property
    def norm(self) -> np.ndarray:
        """L2 norm of (w~, v~) at each recorded time."""
        return np.hypot(self.l2_w, self.l2_v)

    def at(self, t: float) -> int:
        """Index of the snapshot closest to time t."""
        return int(np.argmin(np.abs(self.t - t)))

    def export_csv(self, out_dir, prefix: str = "") -> dict[str, Path]:
        """Write trajectory (t, x, rho, v), control (t, U) and norm
        (t, l2_w, l2_v) tables; returns their paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "trajectory": out_dir / f"{prefix}trajectory.csv",
            "control": out_dir / f"{prefix}control.csv",
            "norms": out_dir / f"{prefix}norms.csv",
        }
        with paths["trajectory"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "rho", "v"])
            for k, tk in enumerate(self.t):
                for x, r, v in zip(self.grid, self.rho[k], self.v[k]):
                    w.writerow([repr(float(tk)), repr(float(x)), repr(float(r)), repr(float(v))])
        with paths["control"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "U"])
            for tk, u in zip(self.t, self.U):
                w.writerow([repr(float(tk)), repr(float(u))])
        with paths["norms"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "l2_w", "l2_v"])
            for tk, a, b in zip(self.t, self.l2_w, self.l2_v):
                w.writerow([repr(float(tk)), repr(float(a)), repr(float(b))])
        return paths


def initial_condition(config: SimConfig, kind: Literal["sinusoidal", "custom"] = "sinusoidal",
                      amplitude: float = 0.1, wavenumber: int = 3,
                      rho=None, v=None) -> TrafficState:
    """Stop-and-go initial data: antiphase sinusoidal perturbations of
    density and speed around the equilibrium, or user supplied fields."""
    eq, params = config.eq, config.params
    if kind == "custom":
        if rho is None or v is None:
            raise ConfigurationError("custom initial condition needs rho and v fields")
        state = TrafficState(np.array(rho, dtype=float), np.array(v, dtype=float), 0.0)
        _check_state(state, params)
        return state
    if kind != "sinusoidal":
        raise ConfigurationError(f"unknown initial condition {kind!r}")
    if not abs(amplitude) < 0.5:
        raise ConfigurationError("|amplitude| must be < 0.5")
    s = np.sin(wavenumber * np.pi * config.grid / params.L)
    state = TrafficState(eq.rho_star * (1 + amplitude * s), eq.v_star * (1 - amplitude * s), 0.0)
    if np.any(state.rho <= 0) or np.any(state.rho >= params.rho_m):
        raise ConfigurationError(
            f"amplitude {amplitude} drives the density outside (0, rho_m={params.rho_m})"
        )
    return state


def _check_state(state: TrafficState, params: ModelParams):
    bad = np.flatnonzero((state.rho <= 0) | (state.rho >= params.rho_m) | (state.v <= 0))
    if bad.size:
        i = int(bad[0])
        raise SimulationError(
            f"state invariant violated at cell {i}, t={state.t:.6g}: "
            f"rho={state.rho[i]:.6g}, v={state.v[i]:.6g}"
        )


def wave_speeds(rho, v, params: ModelParams):
    """Characteristic speeds v and v + rho V'(rho), elementwise."""
    return v, v + rho * speed_prime(rho, params)


def cfl_dt(state: TrafficState, config: SimConfig) -> float:
    if config.mode == "linearized":
        ch = config.chars
        amax = max(ch.lambda1, ch.lambda2)
    else:
        l1, l2 = wave_speeds(state.rho, state.v, config.params)
        amax = float(np.max(np.maximum(np.abs(l1), np.abs(l2))))
    if not amax > 0:
        raise SimulationError("zero wave speed everywhere; CFL time step undefined")
    return config.cfl * config.h / amax


def _ghosted(state: TrafficState, U: float, config: SimConfig):
    eq = config.eq
    v_in = state.v[0]
    rho = np.empty(state.rho.size + 2)
    v = np.empty_like(rho)
    rho[1:-1] = state.rho
    v[1:-1] = state.v
    v[0] = v_in
    rho[0] = eq.q_star / v_in
    rho[-1] = state.rho[-1]
    v[-1] = 2.0 * (eq.v_star + U) - state.v[-1]
    return rho, v


def numerical_fluxes(state: TrafficState, U: float, config: SimConfig):
    """Rusanov face fluxes (density, y) at the nx + 1 cell faces."""
    params = config.params
    rho, v = _ghosted(state, U, config)
    Vr = speed(rho, params)
    y = rho * (v - Vr)
    f1 = rho * v
    f2 = y * v
    a = np.maximum(np.abs(v), np.abs(v + rho * speed_prime(rho, params)))
    af = np.maximum(a[:-1], a[1:])
    F1 = 0.5 * (f1[:-1] + f1[1:]) - 0.5 * af * (rho[1:] - rho[:-1])
    F2 = 0.5 * (f2[:-1] + f2[1:]) - 0.5 * af * (y[1:] - y[:-1])
    return F1, F2


def step(state: TrafficState, U: float, dt: float, config: SimConfig) -> TrafficState:
    """Advance one time step dt with outlet control U."""
    limit = cfl_dt(state, config)
    if dt > limit * (1 + 1e-12):
        raise SimulationError(f"dt={dt:.6g} exceeds the CFL limit {limit:.6g} at t={state.t:.6g}")
    if config.mode == "linearized":
        return _step_linearized(state, U, dt, config)
    params = config.params
    F1, F2 = numerical_fluxes(state, U, config)
    lam = dt / config.h
    rho = state.rho - lam * (F1[1:] - F1[:-1])
    y = state.rho * (state.v - speed(state.rho, params)) - lam * (F2[1:] - F2[:-1])
    y *= np.exp(-dt / params.tau)
    new = TrafficState(rho, np.empty_like(rho), state.t + dt)
    if np.any(rho <= 0) or np.any(rho >= params.rho_m):
        new.v = np.full_like(rho, np.nan)
        _check_state(new, params)
    new.v = y / rho + speed(rho, params)
    _check_state(new, params)
    return new


def _step_linearized(state: TrafficState, U: float, dt: float, config: SimConfig) -> TrafficState:
    params, eq, ch = config.params, config.eq, config.chars
    grid = config.grid
    rs = to_riemann(state.rho, state.v, eq, ch, params, grid)
    w, vt = rs.w, rs.v
    w_in = -ch.r * vt[0]
    w_up = np.concatenate(([w_in], w[:-1]))
    v_dn = np.concatenate((vt[1:], [U]))
    lam = dt / config.h
    w_new = w - ch.lambda1 * lam * (w - w_up)
    v_new = vt + ch.lambda2 * lam * (v_dn - vt) + dt * ch.c(grid) * w
    rho, v = from_riemann(RiemannState(w_new, v_new, grid), eq, ch, params)
    return TrafficState(rho, v, state.t + dt)


def zero_controller(state: TrafficState, dt: float) -> float:
    return 0.0


def simulate(config: SimConfig, controller: Callable[[TrafficState, float], float] | None = None,
             initial: TrafficState | None = None, progress: Callable[[float], None] | None = None
             ) -> Trajectory:
    """March from the initial state (sinusoidal by default) to t_end.

    The controller is called once per step with the current state and the
    step about to be taken; the returned U is held over that step.
    """
    controller = controller or zero_controller
    state = initial if initial is not None else initial_condition(config)
    params, eq = config.params, config.eq
    ch = config.chars
    grid = config.grid

    n_rec = int(np.floor(config.t_end / config.record_every + 1e-9)) + 1
    rec_times = np.arange(n_rec) * config.record_every
    rhos = np.empty((n_rec, config.nx))
    vs = np.empty((n_rec, config.nx))
    Us = np.empty(n_rec)
    l2w = np.empty(n_rec)
    l2v = np.empty(n_rec)
    warnings: list[str] = []
    ctrl_seconds = 0.0
    n_steps = 0

    def record(k, st, U):
        rhos[k] = st.rho
        vs[k] = st.v
        Us[k] = U
        l2w[k], l2v[k] = riemann_l2(to_riemann(st.rho, st.v, eq, ch, params, grid))

    k_next = 0
    t_end = config.t_end
    while True:
        at_record = k_next < n_rec and abs(state.t - rec_times[k_next]) <= 1e-9
        finished = state.t >= t_end - 1e-9
        dt = 0.0
        if not finished:
            dt = min(cfl_dt(state, config), t_end - state.t)
            if k_next + at_record < n_rec:
                dt = min(dt, rec_times[k_next + at_record] - state.t)
        c0 = _time.perf_counter()
        U = float(controller(state, dt))
        ctrl_seconds += _time.perf_counter() - c0
        if not np.isfinite(U):
            raise SimulationError(f"controller returned non-finite U at t={state.t:.6g}")
        if at_record:
            record(k_next, state, U)
            k_next += 1
        if finished:
            break
        try:
            state = step(state, U, dt, config)
        except SimulationError as exc:
            raise SimulationError(f"{exc} (step starting at t={state.t:.6g})") from exc
        n_steps += 1
        if progress is not None:
            progress(state.t)
        if k_next < n_rec and abs(state.t - rec_times[k_next]) <= 1e-9:
            state.t = float(rec_times[k_next])
    if k_next < n_rec:
        raise SimulationError("simulation stopped before all record times were reached")
    traj = Trajectory(rec_times, rhos, vs, Us, l2w, l2v, grid, warnings, ctrl_seconds, n_steps)
    return traj
