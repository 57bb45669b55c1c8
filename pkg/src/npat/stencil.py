"""Edge-weighted 5-point Laplacian and the quadrature weights it is symmetric under.

The mirror-ghost Neumann stencil on a node grid equals a graph Laplacian whose
boundary edges carry weight 1/2, divided by trapezoid node weights (1/2 on
edges, 1/4 at corners). Every quadratic form in the package (energy norm,
projection system, leapfrog energy) is built from these two arrays so they
agree exactly."""
from __future__ import annotations

from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp


@lru_cache(maxsize=16)
def edge_weights(nx: int, ny: int) -> Tuple[np.ndarray, np.ndarray]:
    """(wx, wy) with wx[i, j] weighting edge (i,j)-(i+1,j) and wy[i, j] edge (i,j)-(i,j+1)."""
    wx = np.ones((nx - 1, ny))
    wx[:, 0] = wx[:, -1] = 0.5
    wy = np.ones((nx, ny - 1))
    wy[0, :] = wy[-1, :] = 0.5
    wx.flags.writeable = False
    wy.flags.writeable = False
    return wx, wy


@lru_cache(maxsize=16)
def node_weights(nx: int, ny: int) -> np.ndarray:
    w = np.ones((nx, ny))
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    w.flags.writeable = False
    return w


def apply_stiffness(u: np.ndarray) -> np.ndarray:
    """A u, where u^T A u = sum over edges of w_e (u_a - u_b)^2. Equals -h^2 * W * Laplacian(u)."""
    wx, wy = edge_weights(*u.shape)
    fx = wx * (u[1:, :] - u[:-1, :])
    fy = wy * (u[:, 1:] - u[:, :-1])
    out = np.zeros_like(u)
    out[:-1, :] -= fx
    out[1:, :] += fx
    out[:, :-1] -= fy
    out[:, 1:] += fy
    return out


def gradient_form(u: np.ndarray, w: np.ndarray) -> float:
    """Symmetric bilinear form sum_e w_e (u_a - u_b)(w_a - w_b); fixed summation order."""
    wx, wy = edge_weights(*u.shape)
    sx = np.sum(wx * (u[1:, :] - u[:-1, :]) * (w[1:, :] - w[:-1, :]))
    sy = np.sum(wy * (u[:, 1:] - u[:, :-1]) * (w[:, 1:] - w[:, :-1]))
    return float(sx + sy)


@lru_cache(maxsize=8)
def stiffness_matrix(nx: int, ny: int) -> sp.csr_matrix:
    """Sparse A over row-major flattened nodes (index i*ny + j)."""
    wx, wy = edge_weights(nx, ny)
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, vals = [], [], []
    for a, b, w in ((idx[:-1, :], idx[1:, :], wx), (idx[:, :-1], idx[:, 1:], wy)):
        a, b, w = a.ravel(), b.ravel(), w.ravel()
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [w, w, -w, -w]
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    )
    return A.tocsr()
