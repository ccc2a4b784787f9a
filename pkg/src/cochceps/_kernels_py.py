"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` module; ``cochceps.kernels``
picks one of the two at import time.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _cached_lift(n_in: int, n_out: int) -> np.ndarray:
    k = np.arange(1, n_in + 1, dtype=np.float64)
    m = np.arange(1, n_out + 1, dtype=np.float64)
    arg = (np.pi * k[None, :] / n_in) * (m[:, None] - 0.5)
    table = np.sqrt(2.0 / n_in) * np.cos(arg)
    table.setflags(write=False)
    return table


def lift_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Cosine lift matrix ``C[m-1, k-1] = sqrt(2/K) cos(pi k / K (m - 1/2))``."""
    return _cached_lift(int(n_in), int(n_out)).copy()


def lift_rows(x: np.ndarray, n_out: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return x @ _cached_lift(x.shape[1], int(n_out)).T


def mode_energies(power: np.ndarray, gains_sq: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # power: (frames, bins); gains_sq: (angles, bins); scale: (angles,)
    return scale[:, None] * (gains_sq @ power.T)


def nt_xent(z: np.ndarray, partner: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    n2 = z.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding")
    u = z / norms[:, None]
    s = (u @ u.T) / tau
    np.fill_diagonal(s, -np.inf)
    smax = s.max(axis=1, keepdims=True)
    e = np.exp(s - smax)
    denom = e.sum(axis=1)
    rows = np.arange(n2)
    lse = smax[:, 0] + np.log(denom)
    loss = float(np.mean(lse - s[rows, partner]))

    g = e / denom[:, None]
    g[rows, partner] -= 1.0
    g /= n2
    du = ((g + g.T) @ u) / tau
    radial = np.einsum("ij,ij->i", du, u)
    dz = (du - u * radial[:, None]) / norms[:, None]
    return loss, dz


def resize_nearest(img: np.ndarray, rows: int, cols: int) -> np.ndarray:
    a, m = img.shape
    ri = (np.arange(rows) * a) // rows
    ci = (np.arange(cols) * m) // cols
    return np.ascontiguousarray(img[np.ix_(ri, ci)])
