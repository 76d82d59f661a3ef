"""DeepONet operators mapping the characteristic speed lambda2 to functions.

prediction_h(lambda2)(y) = sum_k branch(lambda2)[h p + k] * trunk(y)[k]

followed by a fixed per-head affine de-normalization. Two operator kinds:

* ``kernel_operator``: y = (x, xi) on the kernel triangle, heads (Kw, Kv);
* ``law_operator``: y = t on [0, T], a single head U(t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernel_solver import KernelGrid, KernelPair
from ..traffic_model import CharacteristicParams
from .mlp import ForwardCache, Mlp, mlp_forward

KINDS = ("kernel_operator", "law_operator")


@dataclass
class DeepONetModel:
    branch: Mlp
    trunk: Mlp
    p: int
    heads: int
    kind: str
    trained_range: tuple[float, float]
    domain: float  # L for kernel operators, horizon T for law operators
    out_shift: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.branch.widths[-1] != self.heads * self.p:
            raise ValueError("branch output width must equal heads * p")
        if self.trunk.widths[-1] != self.p:
            raise ValueError("trunk output width must equal p")
        if self.branch.widths[0] != 1:
            raise ValueError("branch input is the scalar lambda2")
        expected_dim = 2 if self.kind == "kernel_operator" else 1
        if self.trunk.widths[0] != expected_dim:
            raise ValueError(f"{self.kind} trunk takes {expected_dim}-d inputs")
        self.out_shift = np.asarray(self.out_shift, dtype=float).reshape(self.heads)
        self.out_scale = np.asarray(self.out_scale, dtype=float).reshape(self.heads)
        self.trained_range = (float(self.trained_range[0]), float(self.trained_range[1]))

    @property
    def horizon(self) -> float:
        return self.domain

    @property
    def params(self) -> list[np.ndarray]:
        return self.branch.params + self.trunk.params

    def copy(self) -> "DeepONetModel":
        return DeepONetModel(self.branch.copy(), self.trunk.copy(), self.p, self.heads, self.kind,
                             self.trained_range, self.domain, self.out_shift.copy(),
                             self.out_scale.copy())

    # -- input encodings ---------------------------------------------------
    def encode_lambda2(self, lambda2) -> np.ndarray:
        lo, hi = self.trained_range
        lam = np.atleast_1d(np.asarray(lambda2, dtype=float))
        if hi > lo:
            return (2.0 * (lam - lo) / (hi - lo) - 1.0)[:, None]
        return np.zeros((lam.size, 1))

    def encode_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return 2.0 * pts / self.domain - 1.0

    def in_range(self, lambda2) -> bool:
        lo, hi = self.trained_range
        lam = np.atleast_1d(lambda2)
        tol = 1e-9 * max(1.0, abs(hi))
        return bool(np.all((lam >= lo - tol) & (lam <= hi + tol)))

    # -- evaluation ----------------------------------------------------------
    def branch_features(self, lambda2, cache: ForwardCache | None = None) -> np.ndarray:
        return mlp_forward(self.branch, self.encode_lambda2(lambda2), cache)

    def trunk_features(self, points, cache: ForwardCache | None = None) -> np.ndarray:
        return mlp_forward(self.trunk, self.encode_points(points), cache)

    def combine(self, bfeat: np.ndarray, tfeat: np.ndarray) -> np.ndarray:
        """Normalized predictions (S, P, heads) from branch (S, heads*p) and trunk (P, p) features."""
        S = bfeat.shape[0]
        b = bfeat.reshape(S, self.heads, self.p)
        return np.einsum("shk,pk->sph", b, tfeat)

    def predict(self, lambda2, points) -> np.ndarray:
        """Physical-unit predictions of shape (S, P, heads)."""
        norm = self.combine(self.branch_features(lambda2), self.trunk_features(points))
        return norm * self.out_scale + self.out_shift

    def evaluate(self, lambda2: float, points) -> np.ndarray:
        """Predictions for one lambda2 as an array (P, heads)."""
        return self.predict([lambda2], points)[0]


def deeponet_eval(model: DeepONetModel, lambda2: float, points) -> tuple[np.ndarray, bool]:
    """Per-head values at the trunk inputs and whether lambda2 was extrapolated."""
    return model.evaluate(lambda2, points), not model.in_range(lambda2)


def require_kind(model: DeepONetModel, kind: str):
    if model.kind != kind:
        raise TypeError(f"expected a {kind} model, got {model.kind}")


def kernel_row(model: DeepONetModel, lambda2: float, L: float, xi) -> tuple[np.ndarray, np.ndarray, bool]:
    """Predicted (Kw(L, xi), Kv(L, xi)) and an extrapolation flag."""
    require_kind(model, "kernel_operator")
    xi = np.asarray(xi, dtype=float)
    pts = np.column_stack([np.full_like(xi, L), xi])
    vals, extrap = deeponet_eval(model, lambda2, pts)
    return vals[:, 0], vals[:, 1], extrap


def predict_kernels(model: DeepONetModel, chars: CharacteristicParams, n: int) -> KernelPair:
    """Kernel pair synthesized by the operator on an n x n triangular lattice."""
    require_kind(model, "kernel_operator")
    grid = KernelGrid(n, model.domain)
    i, j = np.tril_indices(n)
    vals = model.evaluate(chars.lambda2, np.column_stack([i * grid.h, j * grid.h]))
    kw = np.full((n, n), np.nan)
    kv = np.full((n, n), np.nan)
    kw[i, j] = vals[:, 0]
    kv[i, j] = vals[:, 1]
    return KernelPair(kw, kv, chars, grid)


def law_values(model: DeepONetModel, lambda2: float, t) -> tuple[np.ndarray, list[str]]:
    """U(t) from a law operator; times beyond the horizon are clamped."""
    require_kind(model, "law_operator")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    notes = []
    if np.any(t > model.horizon + 1e-9):
        notes.append(f"t beyond trained horizon {model.horizon:.4g}; clamped")
    if not model.in_range(lambda2):
        notes.append(f"lambda2={lambda2:.4g} outside trained range {model.trained_range}")
    vals = model.evaluate(lambda2, np.clip(t, 0.0, model.horizon))
    return vals[:, 0], notes
