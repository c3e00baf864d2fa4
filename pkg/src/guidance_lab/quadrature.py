"""Adaptive Gauss-Legendre quadrature in one and two dimensions.

Used as the independent numerical route for checking closed-form scores and
denoisers, and as the only available route for tilted class-mixture targets.
Integrands here are smooth (mixtures of Gaussians times a Gaussian kernel),
so panel bisection with a two-rule error estimate converges fast.  A panel
budget caps the work; exhausting it raises instead of returning silently.
"""

from __future__ import annotations

import heapq
from typing import Callable, Sequence

import numpy as np

from .errors import QuadratureError

__all__ = ["integrate", "smoothing_moments", "gaussian_kernel"]

# node/weight tables for the low and high rule of the error estimator
_XLO, _WLO = np.polynomial.legendre.leggauss(16)
_XHI, _WHI = np.polynomial.legendre.leggauss(32)


def _panel_values(f, lo: np.ndarray, hi: np.ndarray, nodes, weights) -> np.ndarray:
    """Tensor Gauss-Legendre rule for one rectangular panel, any dim <= 2."""
    dim = lo.size
    if dim == 1:
        x = 0.5 * (lo[0] + hi[0]) + 0.5 * (hi[0] - lo[0]) * nodes
        vals = np.asarray(f(x[:, None]), dtype=float)
        scale = 0.5 * (hi[0] - lo[0])
        return scale * np.tensordot(weights, vals, axes=(0, 0))
    xa = 0.5 * (lo[0] + hi[0]) + 0.5 * (hi[0] - lo[0]) * nodes
    xb = 0.5 * (lo[1] + hi[1]) + 0.5 * (hi[1] - lo[1]) * nodes
    grid = np.stack(np.meshgrid(xa, xb, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.asarray(f(grid), dtype=float).reshape(nodes.size, nodes.size, -1)
    w2 = np.outer(weights, weights)
    scale = 0.25 * (hi[0] - lo[0]) * (hi[1] - lo[1])
    return scale * np.tensordot(w2, vals, axes=([0, 1], [0, 1]))


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[tuple[float, float]],
    *,
    abs_tol: float = 1e-10,
    max_panels: int = 4096,
    initial_splits: int = 4,
) -> np.ndarray:
    """Integrate a vector-valued integrand over a box in 1 or 2 dimensions.

    Parameters
    ----------
    f : callable
        Maps points of shape (n, dim) to values of shape (n,) or (n, k);
        all k components are integrated in one pass.
    bounds : sequence of (lo, hi)
        One pair per dimension; dim must be 1 or 2.
    abs_tol : float
        Target bound on the summed panel error estimates.
    max_panels : int
        Budget on the number of panels ever created.

    Returns
    -------
    np.ndarray
        Integral estimate, shape (k,) (scalar integrands give shape (1,)).

    Raises
    ------
    QuadratureError
        If the budget is exhausted before the error estimate meets abs_tol.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    dim = len(bounds)
    if dim not in (1, 2):
        raise QuadratureError(f"only 1-d and 2-d boxes supported, got dim={dim}")
    for lo, hi in bounds:
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise QuadratureError("integration box must be finite with lo < hi")

    def wrapped(pts):
        out = np.asarray(f(pts), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return out

    # seed panels: uniform split along every axis
    edges = [np.linspace(lo, hi, initial_splits + 1) for lo, hi in bounds]
    heap: list = []
    count = 0
    if dim == 1:
        cells = [((edges[0][i],), (edges[0][i + 1],)) for i in range(initial_splits)]
    else:
        cells = [
            ((edges[0][i], edges[1][j]), (edges[0][i + 1], edges[1][j + 1]))
            for i in range(initial_splits)
            for j in range(initial_splits)
        ]
    for lo, hi in cells:
        lo = np.array(lo)
        hi = np.array(hi)
        coarse = _panel_values(wrapped, lo, hi, _XLO, _WLO)
        fine = _panel_values(wrapped, lo, hi, _XHI, _WHI)
        err = float(np.max(np.abs(fine - coarse)))
        heapq.heappush(heap, (-err, count, lo, hi, fine))
        count += 1

    while True:
        total_err = -sum(item[0] for item in heap)
        if total_err <= abs_tol:
            break
        if count >= max_panels:
            raise QuadratureError(
                f"panel budget {max_panels} exhausted with error estimate {total_err:.3e} > {abs_tol:.3e}"
            )
        _, _, lo, hi, _ = heapq.heappop(heap)
        axis = int(np.argmax(hi - lo))
        mid = 0.5 * (lo[axis] + hi[axis])
        for a, b in ((lo[axis], mid), (mid, hi[axis])):
            nlo, nhi = lo.copy(), hi.copy()
            nlo[axis], nhi[axis] = a, b
            coarse = _panel_values(wrapped, nlo, nhi, _XLO, _WLO)
            fine = _panel_values(wrapped, nlo, nhi, _XHI, _WHI)
            err = float(np.max(np.abs(fine - coarse)))
            heapq.heappush(heap, (-err, count, nlo, nhi, fine))
            count += 1

    return np.sum([item[4] for item in heap], axis=0)


def gaussian_kernel(x: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """Isotropic Gaussian density N(x; center, sigma^2 I) for each center row."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = centers - x[None, :]
    d = x.size
    norm = (2.0 * np.pi * sigma**2) ** (-0.5 * d)
    return norm * np.exp(-0.5 * np.sum(diff**2, axis=1) / sigma**2)


def smoothing_moments(
    density: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    sigma: float,
    bounds: Sequence[tuple[float, float]],
    *,
    abs_tol: float = 1e-10,
    max_panels: int = 4096,
) -> tuple[float, np.ndarray]:
    """Zeroth and first moments of density(x0) * N(x; x0, sigma^2 I) over x0.

    Returns
    -------
    (m0, m1)
        m0 is the smoothed density value at x; m1 is the vector of first
        moments, so m1 / m0 is the posterior mean of x0 given x (the ideal
        denoiser output under `density`).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = x.size

    # widen the box so the kernel bulk around x is always covered
    bounds = [
        (min(lo, x[i] - 12.0 * sigma), max(hi, x[i] + 12.0 * sigma))
        for i, (lo, hi) in enumerate(bounds)
    ]

    def integrand(pts):
        dens = np.asarray(density(pts), dtype=float)
        kern = gaussian_kernel(x, pts, sigma)
        base = dens * kern
        return np.concatenate([base[:, None], base[:, None] * pts], axis=1)

    vals = integrate(integrand, bounds, abs_tol=abs_tol, max_panels=max_panels)
    return float(vals[0]), vals[1 : 1 + dim]
