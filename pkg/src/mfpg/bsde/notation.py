"""Pointwise coefficient fields of the transformed BSDE driver.

All fields have shape ``(K, P, M)``: type, common path, cell-left node.
Type-measurable populations use ``P = 1``. Conditional expectations given the
common noise are exact weighted sums over the type axis. This is exact even
with Markov coefficients, because every field is then a function of
``(t, W0_t)`` and the type alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..market import PopulationSpec


@dataclass(frozen=True)
class NotationPack:
    weights: NDArray
    gamma: NDArray
    theta: NDArray
    h: NDArray
    sigma: NDArray
    sigma0: NDArray
    Zo: NDArray
    Z0o: NDArray
    phi_sigma: NDArray
    phi_sigma0: NDArray
    g: NDArray
    f_sigma: NDArray
    f_sigma0: NDArray
    f_h: NDArray
    psi: NDArray
    psi_sigma: NDArray
    psi_sigma0: NDArray
    phi1: NDArray
    phi2: NDArray
    phi3: NDArray
    phi4: NDArray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.h.shape

    @property
    def A(self) -> NDArray:
        return self.sigma**2 + self.sigma0**2

    @property
    def c(self) -> NDArray:
        return 1.0 / (1.0 - self.gamma)

    @property
    def tg(self) -> NDArray:
        """``theta * gamma`` with shape ``(K, 1, 1)``."""
        return self.theta * self.gamma

    @property
    def h_prime(self) -> NDArray:
        return self.h + self.sigma * self.Zo + self.sigma0 * self.Z0o

    def E(self, a) -> NDArray:
        """Type average given the common noise; returns shape ``(1, P, M)``."""
        a = np.broadcast_to(a, np.broadcast_shapes(np.shape(a), self.shape))
        return np.tensordot(self.weights, a, axes=(0, 0))[None]

    def with_theta(self, theta) -> "NotationPack":
        return build_pack(self.weights, self.gamma, np.reshape(np.asarray(theta, float), (-1, 1, 1)),
                          self.h, self.sigma, self.sigma0, self.Zo, self.Z0o)


def build_pack(weights, gamma, theta, h, sigma, sigma0, Zo, Z0o) -> NotationPack:
    """Evaluate all thirteen fields from raw coefficients and benchmark integrands."""
    gamma = np.reshape(np.asarray(gamma, float), (-1, 1, 1))
    theta = np.broadcast_to(np.reshape(np.asarray(theta, float), (-1, 1, 1)), gamma.shape)
    shape = np.broadcast_shapes(np.shape(h), np.shape(sigma), np.shape(sigma0),
                                np.shape(Zo), np.shape(Z0o), (gamma.shape[0], 1, 1))
    h, sigma, sigma0, Zo, Z0o = (np.broadcast_to(np.asarray(a, float), shape)
                                 for a in (h, sigma, sigma0, Zo, Z0o))
    w = np.asarray(weights, float)
    A = sigma**2 + sigma0**2
    cA = 1.0 / ((1.0 - gamma) * A)
    hp = h + sigma * Zo + sigma0 * Z0o
    psi_sigma0 = sigma0**2 * cA
    tg = theta * gamma
    g = -np.tensordot(w, np.broadcast_to(tg * psi_sigma0, shape), axes=(0, 0))[None]
    return NotationPack(
        weights=w, gamma=gamma, theta=theta, h=h, sigma=sigma, sigma0=sigma0, Zo=Zo, Z0o=Z0o,
        phi_sigma=1.0 + gamma * sigma**2 * cA,
        phi_sigma0=1.0 + gamma * sigma0**2 * cA,
        g=g,
        f_sigma=sigma * h * cA,
        f_sigma0=sigma0 * h * cA,
        f_h=h * h * cA,
        psi=sigma * sigma0 * cA,
        psi_sigma=sigma**2 * cA,
        psi_sigma0=psi_sigma0,
        phi1=sigma0 * hp * cA,
        phi2=sigma * hp * cA,
        phi3=Z0o + gamma * sigma0 * hp * cA,
        phi4=Zo + gamma * sigma * hp * cA,
    )


def pack_from_fields(pop: PopulationSpec, h, sigma, sigma0, Zo, Z0o) -> NotationPack:
    return build_pack(pop.weights, pop.param("gamma"), pop.param("theta"), h, sigma, sigma0, Zo, Z0o)
