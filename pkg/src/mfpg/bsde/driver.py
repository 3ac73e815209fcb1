"""The two parts of the transformed mean-field BSDE driver.

``J1`` holds the terms that involve only the type's own ``(z, z0)``. ``J2``
holds every term that involves a conditional expectation over the
population.

The corrected ``J2`` (the default) equals, pointwise, the composed driver
``Dr(Zbar, Zbar0) - theta gamma E[drift of Xbar + drift of Xo | F0] - J1``.
Here ``Zbar0`` is recovered from ``z0`` by the inverse transform. The printed
expansion (``printed=True``) differs from that composition by four terms:

* its ``I1`` and ``I2`` repeat the linear terms ``phi4 z`` and ``phi3 z0`` that
  ``J1`` already contains;
* its ``I4`` uses ``E[A phi1^2 / 2]`` where the composition gives
  ``E[A (h' / ((1-gamma) A))^2 / 2]``;
* its ``I4`` takes ``theta^3 gamma^3`` outside an expectation that, for
  heterogeneous types, mixes the type's own ``theta gamma`` with the
  population's ``(theta gamma)^2``.

The printed form is kept for comparison.
"""

from __future__ import annotations

import numpy as np

from ..errors import TransformationDegenerateError
from .notation import NotationPack


def one_minus_g(pack: NotationPack):
    """``1 - g = 1 + E[theta gamma psi^sigma0]``, positive for every valid population."""
    d = 1.0 - pack.g
    if not np.all(np.isfinite(d)) or np.any(d < 1e-12):
        raise TransformationDegenerateError("1 - g is not positive; the transformation is not invertible")
    return d


def eval_J1(pack: NotationPack, z, z0):
    """Own-integrand part of the driver (quadratic plus the linear drift terms)."""
    cA = pack.c / pack.A
    return (0.5 * pack.phi_sigma * z * z + 0.5 * pack.phi_sigma0 * z0 * z0
            + pack.phi4 * z + pack.phi3 * z0
            + pack.gamma * pack.sigma * pack.sigma0 * cA * z * z0)


def eval_J1_quadratic(pack: NotationPack, z, z0):
    """``J1`` without its linear terms: the driver under the benchmark measure."""
    return eval_J1(pack, z, z0) - pack.phi4 * z - pack.phi3 * z0


def eval_J2(pack: NotationPack, z, z0, theta=None, printed: bool = False):
    """Population-coupling part ``I1 + I2 + I3 + I4`` of the driver.

    Parameters
    ----------
    pack : NotationPack
    z, z0 : array_like
        Frozen integrands, broadcastable to ``pack.shape``.
    theta : array_like, optional
        Per-type competition weights overriding those in ``pack``.
    printed : bool
        Evaluate the literal printed expansion instead of the corrected one.
    """
    if theta is not None:
        pack = pack.with_theta(theta)
    E = pack.E
    th, gam, tg, c = pack.theta, pack.gamma, pack.tg, pack.c
    shape = pack.shape
    z = np.broadcast_to(z, shape)
    z0 = np.broadcast_to(z0, shape)
    g = pack.g
    omg = one_minus_g(pack)
    psi, psis, psis0 = pack.psi, pack.psi_sigma, pack.psi_sigma0
    fs, fs0, fh = pack.f_sigma, pack.f_sigma0, pack.f_h
    phis0, phi1, phi2, phi3, phi4 = pack.phi_sigma0, pack.phi1, pack.phi2, pack.phi3, pack.phi4
    Zo, Z0o = pack.Zo, pack.Z0o
    t2g2 = th * th * gam * gam

    Ez = E(psi * z)
    Ez0 = E(psis0 * z0)
    e1 = E(phi1)
    quad_coef = phis0 * t2g2 / (2 * omg**2) + tg * E(t2g2 * psis0 * c / (2 * omg**2))
    lin_common = tg * (-E(tg * phi1 * c / omg) + E(t2g2 * psis0 * c / omg**2) * e1)

    I1 = (quad_coef * Ez**2 + tg * E(psis * c / 2 * z * z)
          - th * gam**2 * psi / omg * z * Ez - tg * E(tg * psi * c / omg * z) * Ez - tg * E(fs * z)
          + (tg / omg * E(tg * fs0) - tg / omg * phi3 + t2g2 / omg**2 * phis0 * e1) * Ez
          + lin_common * Ez
          + tg * E(phi2 * c * z) - tg * e1 * E(tg * psi * c / omg * z)
          - th * gam**2 / omg * psi * e1 * z)
    I2 = (quad_coef * Ez0**2 - tg * phis0 / omg * z0 * Ez0
          + tg * E(psis0 * c / 2 * z0 * z0) - tg * E(tg * psis0 * c / omg * z0) * Ez0
          + tg / omg * (E(tg * fs0) - phi3 + tg / omg * phis0 * e1) * Ez0
          + lin_common * Ez0
          + tg * E(phi1 * c * z0) - tg * e1 * E(tg * psis0 * c / omg * z0) - tg * E(fs0 * z0)
          - tg / omg * phis0 * e1 * z0)
    I3 = (-th * gam**2 * psi / omg * z * Ez0 - tg * phis0 / omg * Ez * z0
          + t2g2 * phis0 / omg**2 * Ez * Ez0
          - tg * E(tg * psis0 * c / omg * z0) * Ez + tg * E(t2g2 * psis0 * c / omg**2) * Ez * Ez0
          + tg * E(psi * c * z * z0) - tg * E(tg * psi * c / omg * z) * Ez0)
    I4 = (tg**2 * phis0 / (2 * omg**2) * e1**2 - tg / omg * (-E(tg * fs0) + phi3) * e1
          - tg * e1 * E(tg * phi1 * c / omg)
          - tg * E(fh + fs * Zo + fs0 * Z0o))
    if printed:
        I1 = I1 + phi4 * z
        I2 = I2 + phi3 * z0
        I4 = I4 + tg * E(pack.A * phi1**2 / 2) + th**3 * gam**3 / omg**2 * E(psis0 * c / 2) * e1**2
    else:
        po = pack.h_prime * c / pack.A
        I4 = I4 + tg * E(pack.A * po**2 / 2) + tg * E(t2g2 * psis0 * c / 2) / omg**2 * e1**2
    return I1 + I2 + I3 + I4
