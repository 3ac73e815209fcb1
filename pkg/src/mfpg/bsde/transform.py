"""Change of variables between the difference FBSDE and the mean-field BSDE.

With ``pbar = (sigma Zbar + sigma0 Zbar0) c / A`` and ``po = h' c / A``:

* ``Ztilde = Zbar``
* ``Ztilde0 = Zbar0 + theta gamma E[(pbar + po) sigma0 | F0]``
* ``Ytilde_t = Ybar_t + theta gamma int_0^t E[drift | F0] ds
  + theta gamma int_0^t E[(pbar + po) sigma0 | F0] dW0``

where ``drift`` is the sum of the log-wealth drifts of the difference and the
benchmark parts. Integrals use the left-point rule.
"""

from __future__ import annotations

import numpy as np

from .driver import one_minus_g
from .notation import NotationPack


def _parts(pack: NotationPack, zb, zb0):
    c, A = pack.c, pack.A
    u = pack.sigma * zb + pack.sigma0 * zb0
    pbar = u * c / A
    po = pack.h_prime * c / A
    drift = pbar * (pack.h - pack.h_prime * c) - u * u * c * c / (2 * A) + po * (pack.h - pack.h_prime * c / 2)
    diff0 = (pbar + po) * pack.sigma0
    return pack.E(drift), pack.E(diff0)


def _accumulate(pack, zb, zb0, dt, dW0):
    Ed, E0 = _parts(pack, zb, zb0)
    incr = Ed * dt
    if dW0 is not None:
        incr = incr + E0 * np.asarray(dW0)[None]
    acc = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=acc[..., 1:])
    return pack.tg * acc


def forward_transform(barY, barZ, barZ0, pack: NotationPack, dt: float = None, dW0=None):
    """Map ``(Ybar, Zbar, Zbar0)`` to ``(Ytilde, Ztilde, Ztilde0)``.

    ``barY`` may be ``None``. In that case only the integrands are mapped
    and ``Ytilde`` is returned as ``None``.
    """
    barZ = np.broadcast_to(barZ, pack.shape)
    barZ0 = np.broadcast_to(barZ0, pack.shape)
    _, E0 = _parts(pack, barZ, barZ0)
    tZ0 = barZ0 + pack.tg * E0
    tY = None
    if barY is not None:
        tY = np.asarray(barY) + _accumulate(pack, barZ, barZ0, dt, dW0)
    return tY, np.array(barZ), tZ0


def invert_transform(tZ, tZ0, pack: NotationPack):
    """Recover ``(Zbar, Zbar0)`` from ``(Ztilde, Ztilde0)`` exactly."""
    tZ = np.broadcast_to(tZ, pack.shape)
    tZ0 = np.broadcast_to(tZ0, pack.shape)
    omg = one_minus_g(pack)
    s = pack.E(pack.psi * tZ) + pack.E(pack.psi_sigma0 * tZ0) + pack.E(pack.phi1)
    return np.array(tZ), tZ0 - pack.tg * s / omg


def recover_barY(tY, barZ, barZ0, pack: NotationPack, dt: float, dW0=None):
    """Inverse of the ``Y`` part of :func:`forward_transform`."""
    return np.asarray(tY) - _accumulate(pack, np.broadcast_to(barZ, pack.shape),
                                        np.broadcast_to(barZ0, pack.shape), dt, dW0)
