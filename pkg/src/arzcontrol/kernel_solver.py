"""Backstepping gain kernels on the triangle 0 <= xi <= x <= L.

The kernels solve

    lambda2 Kw_x - lambda1 Kw_xi = c(xi) Kv
    Kv_x + Kv_xi = 0
    Kw(x, x)  = -c(x) / (lambda1 + lambda2)
    Kv(x, 0)  = -Kw(x, 0)

Kv is constant along x - xi = const, so Kv(x, xi) = -g(x - xi) with
g(s) = Kw(s, 0).  Kw is integrated along the characteristics
dxi/dx = -lambda1/lambda2 that start on the diagonal.  Parametrizing a
characteristic by s (dx/ds = lambda2, dxi/ds = -lambda1) makes x - xi grow
as (lambda1 + lambda2) s, so with ds = h / (lambda1 + lambda2) every
quadrature node lands on a grid value of g and no interpolation is needed.

The coupling term is evaluated at c(xi) by default, which is what the
transform beta = v~ - int Kw w~ - int Kv v~ requires to turn the plant into
the target system.  ``source="x"`` evaluates it at c(x) instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .traffic_model import CharacteristicParams, DomainError


class KernelSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelGrid:
    n: int
    L: float

    @property
    def h(self) -> float:
        return self.L / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.n)

    def mask(self) -> np.ndarray:
        """Boolean (n, n) array, True on triangular nodes j <= i."""
        return np.tri(self.n, dtype=bool)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, xi) coordinates of all triangular nodes, row-major in (i, j)."""
        i, j = np.tril_indices(self.n)
        return i * self.h, j * self.h


@dataclass
class KernelPair:
    """Kernels stored on the full (n, n) lattice; NaN above the diagonal."""

    kw: np.ndarray
    kv: np.ndarray
    chars: CharacteristicParams
    grid: KernelGrid
    source: str = "xi"

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def L(self) -> float:
        return self.grid.L

    @property
    def h(self) -> float:
        return self.grid.h


@dataclass(frozen=True)
class ResidualReport:
    res_kw: float
    res_kv: float
    res_bc: float

    def max(self) -> float:
        return max(self.res_kw, self.res_kv, self.res_bc)


def solve_kernels(chars: CharacteristicParams, L: float, n: int = 101,
                  source: Literal["xi", "x"] = "xi", tol: float = 1e-12,
                  max_iter: int = 50) -> KernelPair:
    """Solve the kernel equations by characteristic marching on an n x n grid."""
    if not (chars.lambda1 > 0 and chars.lambda2 > 0):
        raise DomainError("kernel equations need lambda1 > 0 and lambda2 > 0")
    if n < 3:
        raise ValueError("n must be at least 3")
    if source not in ("xi", "x"):
        raise ValueError(f"unknown source location {source!r}")

    grid = KernelGrid(n, float(L))
    h = grid.h
    l1, l2 = chars.lambda1, chars.lambda2
    lsum = l1 + l2
    ds = h / lsum
    xs = grid.x

    # Bottom-edge trace g_i = Kw(x_i, 0). The characteristic reaching (x_i, 0)
    # leaves the diagonal at x0 = lambda1 x_i / (lambda1 + lambda2); its last
    # quadrature node references g_i itself.
    g = np.empty(n)
    g[0] = -chars.c(0.0) / lsum
    for i in range(1, n):
        x0 = l1 * xs[i] / lsum
        k = np.arange(i + 1)
        loc = x0 - l1 * k * ds if source == "xi" else x0 + l2 * k * ds
        ck = chars.c(loc)
        wts = np.ones(i + 1)
        wts[0] = wts[-1] = 0.5
        known = ds * np.dot(wts[:-1] * ck[:-1], g[:i])
        diag = -chars.c(x0) / lsum
        gi = g[i - 1]
        for _ in range(max_iter):
            new = diag - known - ds * 0.5 * ck[-1] * gi
            if abs(new - gi) <= tol * max(1.0, abs(new)):
                gi = new
                break
            gi = new
        else:
            raise KernelSolverError(
                f"fixed-point sweep did not converge at x={xs[i]:.6g}, last update {abs(new - gi):.3e}"
            )
        g[i] = gi

    kw = np.full((n, n), np.nan)
    kv = np.full((n, n), np.nan)
    for i in range(n):
        j = np.arange(i + 1)
        m = i - j
        x0 = (l1 * xs[i] + l2 * xs[j]) / lsum
        k = np.arange(i + 1)
        # loc[j, k]: where c is evaluated at quadrature node k of the characteristic through (i, j)
        if source == "xi":
            loc = x0[:, None] - l1 * ds * k[None, :]
        else:
            loc = x0[:, None] + l2 * ds * k[None, :]
        wts = (k[None, :] <= m[:, None]).astype(float)
        wts[np.arange(i + 1), m] = 0.5
        wts[:, 0] = np.where(m > 0, 0.5, 0.0)
        integral = ds * np.sum(wts * chars.c(loc) * g[None, : i + 1], axis=1)
        kw[i, : i + 1] = -chars.c(x0) / lsum - integral
        kv[i, : i + 1] = -g[m]
    # The marching reproduces the bottom edge up to round-off; pin it to the
    # fixed-point values so both boundary conditions hold exactly at nodes.
    kw[:, 0] = g
    kw[np.arange(n), np.arange(n)] = -chars.c(xs) / lsum
    kv[:, 0] = -kw[:, 0]
    return KernelPair(kw, kv, chars, grid, source)


def _derivative(f: np.ndarray, mask: np.ndarray, h: float, axis: int):
    """First derivative on a masked lattice.

    Central differences where both neighbours are in the mask, one-sided
    where only one is, NaN where neither is.
    """
    fwd = np.full_like(f, np.nan)
    bwd = np.full_like(f, np.nan)
    fwd_ok = np.zeros_like(mask)
    bwd_ok = np.zeros_like(mask)
    if axis == 0:
        fwd[:-1] = (f[1:] - f[:-1]) / h
        fwd_ok[:-1] = mask[1:] & mask[:-1]
        bwd[1:] = (f[1:] - f[:-1]) / h
        bwd_ok[1:] = mask[1:] & mask[:-1]
    else:
        fwd[:, :-1] = (f[:, 1:] - f[:, :-1]) / h
        fwd_ok[:, :-1] = mask[:, 1:] & mask[:, :-1]
        bwd[:, 1:] = (f[:, 1:] - f[:, :-1]) / h
        bwd_ok[:, 1:] = mask[:, 1:] & mask[:, :-1]
    out = np.full_like(f, np.nan)
    both = fwd_ok & bwd_ok
    out[both] = 0.5 * (fwd[both] + bwd[both])
    only_f = fwd_ok & ~bwd_ok
    out[only_f] = fwd[only_f]
    only_b = bwd_ok & ~fwd_ok
    out[only_b] = bwd[only_b]
    return out


def kernel_residual(k: KernelPair) -> ResidualReport:
    """Max-norm residuals of the kernel PDEs and boundary conditions."""
    mask = k.grid.mask()
    h = k.h
    ch = k.chars
    xs = k.grid.x
    X, XI = np.meshgrid(xs, xs, indexing="ij")
    loc = XI if k.source == "xi" else X
    kw_x = _derivative(k.kw, mask, h, 0)
    kw_xi = _derivative(k.kw, mask, h, 1)
    kv_x = _derivative(k.kv, mask, h, 0)
    kv_xi = _derivative(k.kv, mask, h, 1)
    r_kw = ch.lambda2 * kw_x - ch.lambda1 * kw_xi - ch.c(loc) * k.kv
    r_kv = ch.lambda2 * (kv_x + kv_xi)
    diag = np.diag(k.kw) + ch.c(xs) / (ch.lambda1 + ch.lambda2)
    edge = k.kv[:, 0] + k.kw[:, 0]
    return ResidualReport(
        res_kw=float(np.nanmax(np.abs(r_kw[mask]))),
        res_kv=float(np.nanmax(np.abs(r_kv[mask]))),
        res_bc=float(max(np.max(np.abs(diag)), np.max(np.abs(edge)))),
    )


def kernel_values(k: KernelPair, x, xi) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized interpolation of (Kw, Kv) at points of the triangle.

    Bilinear inside lattice cells that lie fully in the triangle, linear
    on the half-cells cut by the diagonal. Exact at nodes.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x, xi = np.broadcast_arrays(x, xi)
    slack = 1e-9 * k.L
    if np.any(xi < -slack) or np.any(x > k.L + slack) or np.any(xi > x + slack):
        raise DomainError("query point outside the triangle 0 <= xi <= x <= L")
    x = np.clip(x, 0.0, k.L)
    xi = np.clip(xi, 0.0, x)
    n, h = k.n, k.h
    a = x / h
    b = xi / h
    i = np.minimum(np.floor(a).astype(int), n - 2)
    j = np.minimum(np.floor(b).astype(int), n - 2)
    j = np.minimum(j, i)
    fx = a - i
    fy = b - j
    out = []
    on_diag = j == i
    for K in (k.kw, k.kv):
        K00 = K[i, j]
        K10 = K[i + 1, j]
        K11 = K[i + 1, j + 1]
        K01 = np.where(on_diag, 0.0, K[i, np.minimum(j + 1, i)])
        bil = (K00 * (1 - fx) * (1 - fy) + K10 * fx * (1 - fy)
               + K01 * (1 - fx) * fy + K11 * fx * fy)
        tri = K00 + fx * (K10 - K00) + fy * (K11 - K10)
        out.append(np.where(on_diag, tri, bil))
    return out[0], out[1]


def eval_kernel(k: KernelPair, x: float, xi: float) -> tuple[float, float]:
    kw, kv = kernel_values(k, x, xi)
    return float(kw), float(kv)


def export_kernels_csv(k: KernelPair, path) -> Path:
    """Write one row (x, xi, kw, kv) per triangular node."""
    path = Path(path)
    i, j = np.tril_indices(k.n)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "xi", "kw", "kv"])
        for a, b in zip(i, j):
            writer.writerow([repr(float(a * k.h)), repr(float(b * k.h)), repr(float(k.kw[a, b])), repr(float(k.kv[a, b]))])
    return path
