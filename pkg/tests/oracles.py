"""Reference computations that share no code with the package.

* Best-response fixed point. A player whose benchmark has log-dynamics
  ``a dt + b dW0`` maximises the Gaussian moment generating function of
  ``gamma (X_T - theta log mu_T)`` over a constant fraction ``pi``. The
  maximum is bracketed by a scalar search and then polished on the
  first-order condition, using a complex-step derivative. This is then
  iterated to a fixed point.
* Expected utility of a Gaussian log-wealth, used as a value oracle.
* The composed difference driver, built from the forward and backward
  equations before any expansion into ``I1..I4``.
* An explicit finite-difference solver for the Markov ``(t, W0_t)`` problems.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq, minimize_scalar


def _exponent(pi, h, s, s0, gamma, theta, a, b, T=1.0):
    """log E[gamma * utility] for constant pi against log mu with drift a, vol b on W0."""
    m = gamma * (pi * (h - 0.5 * pi * (s * s + s0 * s0)) - theta * a) * T
    v = gamma**2 * ((pi * s) ** 2 + (pi * s0 - theta * b) ** 2) * T
    return m + 0.5 * v


def best_response(h, s, s0, gamma, theta, a, b):
    """Numerical argmax over pi of ``E[(1/gamma) exp(gamma (X_T - theta log mu_T))]``."""
    sign = 1.0 if gamma > 0 else -1.0
    coarse = minimize_scalar(lambda p: -sign * _exponent(p, h, s, s0, gamma, theta, a, b),
                             bounds=(-50.0, 50.0), method="bounded")
    # polish on the first-order condition; complex-step derivative is exact to rounding
    d = lambda p: (_exponent(p + 1e-30j, h, s, s0, gamma, theta, a, b)).imag / 1e-30
    lo, hi = coarse.x - 1.0, coarse.x + 1.0
    return brentq(d, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def mfg_fixed_point(types, weights, iters=200, tol=1e-12):
    """Iterate ``pi -> BR(mu(pi))`` from the Merton start; ``types`` are (h, s, s0, gamma, theta)."""
    w = np.asarray(weights, float)
    pi = np.array([h / ((1 - g) * (s * s + s0 * s0)) for h, s, s0, g, th in types])
    for _ in range(iters):
        a = sum(wk * p * (h - 0.5 * p * (s * s + s0 * s0)) for wk, p, (h, s, s0, g, th) in zip(w, pi, types))
        b = sum(wk * p * s0 for wk, p, (h, s, s0, g, th) in zip(w, pi, types))
        new = np.array([best_response(h, s, s0, g, th, a, b) for h, s, s0, g, th in types])
        if np.max(np.abs(new - pi)) < tol:
            return new
        pi = new
    return pi


def nplayer_fixed_point(players, iters=500, tol=1e-12):
    """Gauss-Seidel best responses in the N-player game.

    Each player faces the geometric mean of the other ``N - 1`` players.
    The other players' idiosyncratic noise is independent of the player's
    own, so it only changes the objective by a constant factor.
    """
    N = len(players)
    pi = np.array([h / ((1 - g) * (s * s + s0 * s0)) for h, s, s0, g, th in players])
    for _ in range(iters):
        old = pi.copy()
        for i, (h, s, s0, g, th) in enumerate(players):
            others = [j for j in range(N) if j != i]
            b = sum(pi[j] * players[j][2] for j in others) / (N - 1)
            pi[i] = best_response(h, s, s0, g, th, 0.0, b)
        if np.max(np.abs(pi - old)) < tol:
            break
    return pi


def gaussian_value(pi, types, weights, k, x, T=1.0):
    """``Y0`` with ``V = x^gamma e^{Y0} / gamma`` for type ``k`` under constant strategies."""
    w = np.asarray(weights, float)
    a = sum(wk * p * (h - 0.5 * p * (s * s + s0 * s0)) for wk, p, (h, s, s0, g, th) in zip(w, pi, types))
    b = sum(wk * p * s0 for wk, p, (h, s, s0, g, th) in zip(w, pi, types))
    mean_log_x = float(np.dot(w, np.log(x)))
    h, s, s0, g, th = types[k]
    return _exponent(pi[k], h, s, s0, g, th, a, b, T) - g * th * mean_log_x


def composed_driver(w, h, s, s0, gam, th, Zo, Z0o, zt, z0t):
    """Full transformed driver, computed directly from the difference system.

    All arrays have the type axis first. The type average is a weighted sum
    over axis 0.
    """
    w = np.asarray(w, float).reshape((-1,) + (1,) * (np.ndim(h) - 1))
    E = lambda a: np.sum(w * a, axis=0, keepdims=True)
    A = s**2 + s0**2
    c = 1 / (1 - gam)
    tg = th * gam
    hp = h + s * Zo + s0 * Z0o
    psi = s * s0 * c / A
    psis0 = s0**2 * c / A
    phi1 = s0 * hp * c / A
    g = -E(tg * psis0)
    zb = zt
    zb0 = z0t - tg * (E(psi * zt) + E(psis0 * z0t) + E(phi1)) / (1 - g)
    u = s * zb + s0 * zb0
    pb = u * c / A
    po = hp * c / A
    Dr = ((2 * Zo + zb) * zb + (2 * Z0o + zb0) * zb0) / 2 + gam * (2 * hp + u) * u * c / (2 * A)
    drb = pb * (h - hp * c) - u**2 * c**2 / (2 * A)
    dro = po * (h - hp * c / 2)
    return Dr - tg * E(drb + dro)


def pde_markov(coef, weights, gam, th, log_x, T=1.0, L=7.0, nw=281, nt=4000):
    """Explicit finite differences for ``u_t + u_ww / 2 + F(u_w) = 0`` on ``w`` in ``[-L, L]``.

    ``coef(t, w)`` returns ``(h, s, s0)`` arrays of shape ``(K, nw)``. The
    benchmark solution is advanced first. The difference value then uses the
    composed driver with ``Z0 = u_w``. Returns the benchmark and total ``Y0``
    at ``w = 0`` per type.
    """
    K = len(weights)
    gam = np.asarray(gam, float)[:, None]
    th = np.asarray(th, float)[:, None]
    wgrid = np.linspace(-L, L, nw)
    dw = wgrid[1] - wgrid[0]
    dt = T / nt
    assert dt <= dw * dw, "explicit scheme unstable"
    uo = np.zeros((K, nw))
    ut = np.broadcast_to(-(th * gam) * float(np.dot(weights, log_x)), (K, nw)).copy()

    def grad(u):
        g = np.empty_like(u)
        g[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * dw)
        g[:, 0] = g[:, 1]
        g[:, -1] = g[:, -2]
        return g

    def lap(u):
        l = np.zeros_like(u)
        l[:, 1:-1] = (u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]) / dw**2
        return l

    for n in range(nt, 0, -1):
        t = n * dt
        h, s, s0 = coef(t, wgrid)
        A = s**2 + s0**2
        zo0 = grad(uo)
        fo = 0.5 * zo0**2 + gam * (h + s0 * zo0) ** 2 / (2 * (1 - gam) * A)
        z0t = grad(ut)
        ft = composed_driver(weights, h, s, s0, gam, th, 0.0, zo0, 0.0, z0t)
        uo = uo + dt * (0.5 * lap(uo) + fo)
        ut = ut + dt * (0.5 * lap(ut) + ft)
        for u in (uo, ut):
            u[:, 0] = 2 * u[:, 1] - u[:, 2]
            u[:, -1] = 2 * u[:, -2] - u[:, -3]
    i0 = nw // 2
    return uo[:, i0], uo[:, i0] + ut[:, i0]
