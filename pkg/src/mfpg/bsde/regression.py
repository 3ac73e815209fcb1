"""Conditional expectations given the common noise, for the backward sweeps.

Two operators share one interface:

* :class:`ExactOperator` is used when everything is type-measurable. There
  is one representative path, projection is the identity, and the
  common-noise integrand of a deterministic terminal value is zero.
* :class:`RegressionOperator` is least-squares Monte Carlo on probabilists'
  Hermite polynomials in ``W0_t / sqrt(t)``. It is used when coefficients
  depend on ``(t, W0_t)``.

Fitted coefficients are kept, so that solved fields can be evaluated on
fresh common-noise paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermevander
from numpy.typing import NDArray

from ..market import TimeGrid


def basis(grid: TimeGrid, m: int, w: NDArray, degree: int) -> NDArray:
    """Regression basis at node ``m``; only the constant at ``t = 0``."""
    w = np.asarray(w, dtype=float)
    if m == 0 or degree == 0:
        B = np.zeros(w.shape + (degree + 1,))
        B[..., 0] = 1.0
        return B
    return hermevander(w / np.sqrt(grid.nodes[m]), degree)


@dataclass(frozen=True)
class FieldFit:
    """Regression coefficients of a per-type field, shape ``(K, n_nodes, degree + 1)``."""

    grid: TimeGrid
    degree: int
    coef: NDArray

    def evaluate(self, W0: NDArray, nodes=None) -> NDArray:
        """Values on common paths ``W0`` (node levels, shape ``(P, M + 1)``).

        Returns an array with shape ``(K, P, len(nodes))``.
        """
        nodes = range(self.coef.shape[1]) if nodes is None else nodes
        W0 = np.atleast_2d(W0)
        out = np.empty((self.coef.shape[0], W0.shape[0], len(nodes)))
        for j, m in enumerate(nodes):
            out[:, :, j] = self.coef[:, m, :] @ basis(self.grid, m, W0[:, m], self.degree).T
        return out


class ExactOperator:
    """Projection for type-measurable data (one representative path)."""

    exact = True

    def __init__(self, grid: TimeGrid):
        self.grid = grid
        self.degree = 0
        self.n_paths = 1

    def project(self, m: int, y: NDArray) -> NDArray:
        return np.asarray(y, dtype=float)

    def z0(self, m: int, y_next: NDArray) -> NDArray:
        return np.zeros_like(np.asarray(y_next, dtype=float))

    def coef(self, m: int, y: NDArray) -> NDArray:
        return np.asarray(y, dtype=float)[..., :1]


class RegressionOperator:
    """Least-squares projection onto polynomials of ``W0_{t_m}``."""

    exact = False

    def __init__(self, grid: TimeGrid, W0: NDArray, dW0: NDArray, degree: int):
        self.grid = grid
        self.degree = int(degree)
        self.W0 = W0
        self.dW0 = dW0
        self.n_paths = W0.shape[0]
        self._qr = []
        for m in range(grid.steps + 1):
            B = basis(grid, m, W0[:, m], self.degree)
            if m == 0:
                B = B[:, :1]
            Q, R = np.linalg.qr(B)
            self._qr.append((Q, R))

    def coef(self, m: int, y: NDArray) -> NDArray:
        """Coefficients for ``y`` of shape ``(K, P)``, zero-padded to ``degree + 1``."""
        Q, R = self._qr[m]
        c = np.linalg.solve(R, Q.T @ np.asarray(y).T).T
        out = np.zeros(c.shape[:-1] + (self.degree + 1,))
        out[..., : c.shape[-1]] = c
        return out

    def project(self, m: int, y: NDArray) -> NDArray:
        Q, _ = self._qr[m]
        return (Q @ (Q.T @ np.asarray(y).T)).T

    def z0(self, m: int, y_next: NDArray) -> NDArray:
        """``E[Y_{m+1} dW0_m | F_m] / dt`` with the mean removed for variance reduction."""
        centred = y_next - self.project(m, y_next)
        return self.project(m, centred * self.dW0[:, m]) / self.grid.dt
