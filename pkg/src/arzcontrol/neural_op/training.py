"""Training and error measurement for the DeepONet operators."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..kernel_solver import KernelGrid, KernelPair, _derivative
from .adam import Adam
from .datasets import Dataset
from .deeponet import DeepONetModel
from .mlp import ForwardCache, Mlp, mlp_gradients

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    width: int = 64
    depth: int = 3
    p: int = 32
    lr: float = 1e-3
    lr_final: float = 1e-4
    batch_samples: int = 16
    batch_points: int = 256
    epochs: int = 2000
    patience: int = 100
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_val: list[float] = field(default_factory=list)
    best_epoch: int = -1


@dataclass(frozen=True)
class ApproxErrorReport:
    eps_sup: float
    eps_l2: float
    per_lambda2: tuple = ()


def init_model(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> DeepONetModel:
    heads = dataset.heads
    hidden = [cfg.width] * cfg.depth
    branch = Mlp.init([1, *hidden, heads * cfg.p], rng)
    trunk = Mlp.init([dataset.points.shape[1], *hidden, cfg.p], rng)
    train_t = dataset.targets[dataset.train_idx]
    shift = train_t.mean(axis=(0, 1))
    scale = train_t.std(axis=(0, 1))
    scale = np.where(scale > 0, scale, 1.0)
    lo, hi = float(dataset.lambda2.min()), float(dataset.lambda2.max())
    if dataset.kind == "kernel_operator":
        domain = float(dataset.config.get("params", {}).get("L", dataset.points.max()))
    else:
        domain = float(dataset.points.max())
    return DeepONetModel(branch, trunk, cfg.p, heads, dataset.kind, (lo, hi), domain, shift, scale)


def loss_and_grads(model: DeepONetModel, lam: np.ndarray, pts: np.ndarray, target_norm: np.ndarray):
    """MSE over a (samples x points x heads) block and its parameter gradients."""
    bc, tc = ForwardCache(), ForwardCache()
    bfeat = model.branch_features(lam, bc)
    tfeat = model.trunk_features(pts, tc)
    pred = model.combine(bfeat, tfeat)
    diff = pred - target_norm
    loss = float(np.mean(diff**2))
    G = 2.0 * diff / diff.size  # (S, P, H)
    S = bfeat.shape[0]
    b = bfeat.reshape(S, model.heads, model.p)
    g_b = np.einsum("sph,pk->shk", G, tfeat).reshape(S, -1)
    g_t = np.einsum("sph,shk->pk", G, b)
    gb, _ = mlp_gradients(model.branch, model.encode_lambda2(lam), g_b, bc)
    gt, _ = mlp_gradients(model.trunk, model.encode_points(pts), g_t, tc)
    return loss, gb + gt


def evaluate_loss(model: DeepONetModel, dataset: Dataset, idx) -> float:
    idx = np.asarray(idx)
    if idx.size == 0:
        return float("nan")
    pred = model.combine(model.branch_features(dataset.lambda2[idx]), model.trunk_features(dataset.points))
    tgt = (dataset.targets[idx] - model.out_shift) / model.out_scale
    return float(np.mean((pred - tgt) ** 2))


def train(dataset: Dataset, cfg: TrainConfig | None = None, model: DeepONetModel | None = None,
          callback: Callable[[int, float, float], None] | None = None,
          ) -> tuple[DeepONetModel, TrainHistory]:
    """Minibatch Adam on the normalized MSE; returns the best-validation checkpoint.

    Each minibatch pairs ``batch_samples`` lambda2 values with a random subset
    of ``batch_points`` trunk inputs, so the trunk is evaluated once per
    batch and shared across its samples. Without a validation split the
    training loss selects the checkpoint.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    model = model.copy() if model is not None else init_model(dataset, cfg, rng)
    params = model.params
    opt = Adam(params, lr=cfg.lr)
    tr = dataset.train_idx
    val = dataset.val_idx
    tgt_norm = (dataset.targets - model.out_shift) / model.out_scale
    P = dataset.points.shape[0]
    hist = TrainHistory()
    best = None
    best_val = np.inf
    since_best = 0
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.epochs - 1, 1)) if cfg.lr_final else 1.0
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * decay**epoch
        order = rng.permutation(tr)
        losses = []
        for start in range(0, order.size, cfg.batch_samples):
            sidx = order[start:start + cfg.batch_samples]
            pidx = rng.choice(P, size=cfg.batch_points, replace=False) if cfg.batch_points < P else np.arange(P)
            loss, grads = loss_and_grads(model, dataset.lambda2[sidx], dataset.points[pidx],
                                         tgt_norm[np.ix_(sidx, pidx)])
            opt.step(grads)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(model, dataset, val) if val.size else train_loss
        if not np.isfinite(val_loss) or (hist.val_loss and val_loss > 1e6 * max(hist.val_loss[0], 1e-12)):
            raise TrainingDivergence(f"validation loss diverged at epoch {epoch}: {val_loss}", hist)
        if val_loss < best_val:
            best_val = val_loss
            best = [p.copy() for p in params]
            hist.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        hist.epoch.append(epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.best_val.append(best_val)
        if callback:
            callback(epoch, train_loss, val_loss)
        if since_best >= cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, hist.best_epoch)
            break
    for p, b in zip(params, best):
        p[...] = b
    return model, hist


def measure_eps(model, lambda2_grid, oracle: Callable[[float], object]) -> ApproxErrorReport:
    """Measured approximation error of an operator against its oracle.

    For kernel operators the oracle returns a KernelPair; the sup error adds
    the value error and the first-difference errors along x and xi at every
    triangular node. For law operators the oracle returns a pair
    (times, U) of the reference closed-loop control.
    """
    sups, sq, count = [], 0.0, 0
    per = []
    for lam in np.atleast_1d(lambda2_grid):
        ref = oracle(float(lam))
        if isinstance(ref, KernelPair):
            n = ref.n
            grid = KernelGrid(n, ref.L)
            i, j = np.tril_indices(n)
            pred = model.evaluate(float(lam), np.column_stack([i * grid.h, j * grid.h]))
            mask = grid.mask()
            sup = 0.0
            for head, K in enumerate((ref.kw, ref.kv)):
                err = np.full((n, n), np.nan)
                err[i, j] = pred[:, head] - K[i, j]
                dx = _derivative(err, mask, grid.h, 0)
                dxi = _derivative(err, mask, grid.h, 1)
                total = np.abs(err) + np.nan_to_num(np.abs(dx)) + np.nan_to_num(np.abs(dxi))
                sup = max(sup, float(np.nanmax(total[mask])))
                sq += float(np.sum(err[mask] ** 2))
                count += int(mask.sum())
        else:
            times, ref_u = ref
            pred = model.evaluate(float(lam), np.asarray(times))[:, 0]
            err = pred - np.asarray(ref_u)
            sup = float(np.max(np.abs(err)))
            sq += float(np.sum(err**2))
            count += err.size
        sups.append(sup)
        per.append((float(lam), sup))
    eps_l2 = float(np.sqrt(sq / count)) if count else 0.0
    return ApproxErrorReport(max(sups) if sups else 0.0, eps_l2, tuple(per))
