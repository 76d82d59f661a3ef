"""Training data for the kernel and control-law operators.

Both generators sweep the equilibrium density uniformly over the congested
interval whose lambda2 span is ``lambda2_range`` and call the numerical
oracles (kernel solver, exact-backstepping closed loop) per sample.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..arz_sim import SimConfig, initial_condition, simulate
from ..control import BacksteppingController, backstepping_control
from ..kernel_solver import kernel_residual, solve_kernels
from ..traffic_model import ModelParams, linearization, rho_of_lambda2, to_riemann

DATASET_FORMAT = 1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    kind: str
    lambda2: np.ndarray
    points: np.ndarray
    targets: np.ndarray  # (samples, points, heads)
    train_idx: np.ndarray
    val_idx: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambda2 = np.asarray(self.lambda2, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.targets = np.asarray(self.targets, dtype=float)
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.val_idx = np.asarray(self.val_idx, dtype=int)
        S = self.lambda2.size
        if self.targets.shape[:2] != (S, self.points.shape[0]):
            raise DatasetError(f"targets {self.targets.shape} do not match {S} samples x {self.points.shape[0]} points")
        if not np.all(np.isfinite(self.targets)):
            raise DatasetError("non-finite targets")
        both = np.concatenate([self.train_idx, self.val_idx])
        if np.intersect1d(self.train_idx, self.val_idx).size or not np.array_equal(np.sort(both), np.arange(S)):
            raise DatasetError("train/validation split must be disjoint and exhaustive")

    @property
    def heads(self) -> int:
        return self.targets.shape[2]

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def subset(self, idx, n_val: int = 0) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        split = np.arange(idx.size)
        return Dataset(self.kind, self.lambda2[idx], self.points, self.targets[idx],
                       split[: idx.size - n_val], split[idx.size - n_val:], dict(self.config))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def stratified_split(n_samples: int, n_val: int) -> tuple[np.ndarray, np.ndarray]:
    """Validation indices spread evenly over the sweep, endpoints kept for training."""
    if n_val <= 0 or n_samples < 3:
        return np.arange(n_samples), np.array([], dtype=int)
    n_val = min(n_val, n_samples - 2)
    val = np.unique(np.round(np.linspace(1, n_samples - 2, n_val)).astype(int))
    train = np.setdiff1d(np.arange(n_samples), val)
    return train, val


def lambda2_sweep(lambda2_range, n_samples: int, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(rho*, lambda2) pairs uniformly spaced in rho* over the span."""
    lo, hi = lambda2_range
    rho = np.linspace(rho_of_lambda2(lo, params), rho_of_lambda2(hi, params), n_samples)
    lam = np.array([linearization(r, params)[1].lambda2 for r in rho])
    # pin the endpoints against round-off in the rho <-> lambda2 round trip
    lam[0] = lo
    if n_samples > 1:
        lam[-1] = hi
    return rho, lam


def gen_kernel_dataset(lambda2_range=(5.0, 25.0), n_samples: int = 900, n: int = 51,
                       params: ModelParams | None = None, n_val: int = 100,
                       residual_tol: float = 1e-6,
                       progress: Callable[[int], None] | None = None) -> Dataset:
    """Solve the kernel equations for each lambda2; targets are (Kw, Kv) on the triangle."""
    params = params or ModelParams()
    rho, lam = lambda2_sweep(lambda2_range, n_samples, params)
    i, j = np.tril_indices(n)
    targets = np.empty((n_samples, i.size, 2))
    for s, r in enumerate(rho):
        eq, ch = linearization(r, params)
        k = solve_kernels(ch, params.L, n)
        rep = kernel_residual(k)
        if rep.res_kw > residual_tol or rep.res_bc > 1e-12:
            raise DatasetError(f"kernel residual gate failed at lambda2={ch.lambda2:.6g}: {rep}")
        targets[s, :, 0] = k.kw[i, j]
        targets[s, :, 1] = k.kv[i, j]
        if progress:
            progress(s)
    h = params.L / (n - 1)
    points = np.column_stack([i * h, j * h])
    train, val = stratified_split(n_samples, n_val)
    cfg = {"kind": "kernel_operator", "lambda2_range": [float(lambda2_range[0]), float(lambda2_range[1])],
           "n_samples": n_samples, "n": n, "params": _params_dict(params), "n_val": n_val}
    return Dataset("kernel_operator", lam, points, targets, train, val, cfg)


def gen_law_dataset(lambda2_range=(5.0, 25.0), n_samples: int = 900, params: ModelParams | None = None,
                    nx: int = 100, t_end: float = 300.0, cfl: float = 0.8, record_every: float = 1.0,
                    amplitude: float = 0.1, wavenumber: int = 3, kernel_n: int = 101,
                    n_val: int = 100, progress: Callable[[int], None] | None = None) -> Dataset:
    """Record U(t) of the exact-backstepping closed loop for each lambda2."""
    params = params or ModelParams()
    rho, lam = lambda2_sweep(lambda2_range, n_samples, params)
    targets = None
    times = None
    for s, r in enumerate(rho):
        eq, ch = linearization(r, params)
        cfg = SimConfig(params, eq, nx=nx, t_end=t_end, cfl=cfl, record_every=record_every)
        k = solve_kernels(ch, params.L, kernel_n)
        ic = initial_condition(cfg, amplitude=amplitude, wavenumber=wavenumber)
        traj = simulate(cfg, BacksteppingController(k, eq, params, cfg.grid), initial=ic)
        u0 = backstepping_control(to_riemann(ic.rho, ic.v, eq, ch, params, cfg.grid), k)
        if not np.isclose(traj.U[0], u0, rtol=1e-12, atol=1e-15):
            raise DatasetError(f"closed loop U(0)={traj.U[0]} differs from the feedback law {u0}")
        if targets is None:
            times = traj.t
            targets = np.empty((n_samples, times.size, 1))
        targets[s, :, 0] = traj.U
        if progress:
            progress(s)
    train, val = stratified_split(n_samples, n_val)
    cfg = {"kind": "law_operator", "lambda2_range": [float(lambda2_range[0]), float(lambda2_range[1])],
           "n_samples": n_samples, "params": _params_dict(params), "nx": nx, "t_end": t_end,
           "cfl": cfl, "record_every": record_every, "amplitude": amplitude,
           "wavenumber": wavenumber, "kernel_n": kernel_n, "n_val": n_val}
    return Dataset("law_operator", lam, times, targets, train, val, cfg)


def _params_dict(params: ModelParams) -> dict:
    return {"v_f": params.v_f, "rho_m": params.rho_m, "gamma": params.gamma, "tau": params.tau, "L": params.L}


def save_dataset(ds: Dataset, directory) -> Path:
    """One CSV per sample (point coordinates + targets) plus manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    coord_names = ["x", "xi"] if ds.points.shape[1] == 2 else ["t"]
    head_names = ["kw", "kv"] if ds.kind == "kernel_operator" else ["U"]
    files = []
    for s in range(ds.lambda2.size):
        name = f"sample_{s:04d}.csv"
        np.savetxt(d / name, np.column_stack([ds.points, ds.targets[s]]), delimiter=",",
                   fmt="%.17g", header=",".join(coord_names + head_names), comments="")
        files.append(name)
    manifest = {
        "format": DATASET_FORMAT,
        "kind": ds.kind,
        "config": ds.config,
        "config_hash": ds.config_hash,
        "lambda2": [float(x) for x in ds.lambda2],
        "lambda2_span": [float(ds.lambda2.min()), float(ds.lambda2.max())],
        "train_idx": ds.train_idx.tolist(),
        "val_idx": ds.val_idx.tolist(),
        "files": files,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"no manifest.json in {d}") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"unsupported dataset format {manifest.get('format')}")
    ncoord = 2 if manifest["kind"] == "kernel_operator" else 1
    arrays = [np.loadtxt(d / f, delimiter=",", skiprows=1, ndmin=2) for f in manifest["files"]]
    points = arrays[0][:, :ncoord]
    targets = np.stack([a[:, ncoord:] for a in arrays])
    return Dataset(manifest["kind"], manifest["lambda2"], points, targets,
                   manifest["train_idx"], manifest["val_idx"], manifest["config"])
