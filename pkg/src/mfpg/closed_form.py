"""Exact equilibria when the market coefficients depend only on the type.

Conditional expectations over the type law are exact weighted sums over the
mixture. Time-varying coefficients are handled pointwise in ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateGameError, DegeneratePopulationError, InvalidArgumentError
from .market import AgentType, PopulationSpec, TimeGrid, write_rows

PlayerSpec = AgentType


def _coeffs(agent: AgentType, t):
    if not agent.coeffs.type_measurable:
        raise InvalidArgumentError("closed forms need type-measurable coefficients")
    h, s, s0 = agent.coeffs.at(t)
    return h, s, s0, s * s + s0 * s0


def merton_ratio(agent: AgentType, t=0.0):
    """``h / ((1 - gamma) (sigma^2 + sigma0^2))``."""
    h, _, _, A = _coeffs(agent, t)
    return h / ((1.0 - agent.gamma) * A)


def log_utility_strategy(agent: AgentType, t=0.0):
    """Log-utility equilibrium ``h / (sigma^2 + sigma0^2)``. It does not depend on theta."""
    h, _, _, A = _coeffs(agent, t)
    return h / A


def _own_Z0(pop: PopulationSpec, agent: AgentType, t):
    """Common-noise integrand of ``Y`` for ``agent`` facing ``pop``.

    ``Z0 = -theta gamma E[f^sigma0] / (1 + E[theta gamma psi^sigma0])``, where
    ``f^sigma0 = sigma0 h / ((1 - gamma) A)``. Note that the agent's own
    ``theta gamma`` multiplies the population ratio.
    """
    ef, den = _pop_ratio(pop, t)
    return -agent.theta * agent.gamma * ef / den


def _pop_ratio(pop: PopulationSpec, t):
    ef = 0.0
    eg = 1.0
    for w, a in pop.entries:
        h, _, s0, A = _coeffs(a, t)
        c = 1.0 / ((1.0 - a.gamma) * A)
        ef = ef + w * s0 * h * c
        eg = eg + w * a.theta * a.gamma * s0 * s0 * c
    if np.any(np.asarray(eg) <= 0.0):
        raise DegeneratePopulationError(
            "1 + E[theta gamma sigma0^2 / ((1 - gamma) A)] is not positive")
    return ef, eg


def mfg_Z0(pop: PopulationSpec, t=0.0) -> tuple[NDArray, NDArray]:
    """Per-type ``(Z, Z0)`` of the equilibrium BSDE; ``Z`` is identically zero."""
    z0 = np.array([np.asarray(_own_Z0(pop, a, t), dtype=float) for a in pop.types])
    return np.zeros_like(z0), z0


def mfg_strategy(pop: PopulationSpec, agent: AgentType, t=0.0):
    """Equilibrium strategy ``(h + sigma0 Z0) / ((1 - gamma) A)`` of ``agent``."""
    h, _, s0, A = _coeffs(agent, t)
    return (h + s0 * _own_Z0(pop, agent, t)) / ((1.0 - agent.gamma) * A)


def _own_driver(pop: PopulationSpec, agent: AgentType, t):
    """Pathwise drift ``-dY/dt``, which only involves the agent's own integrand."""
    h, _, s0, A = _coeffs(agent, t)
    z0 = _own_Z0(pop, agent, t)
    return 0.5 * z0 * z0 + agent.gamma * (h + s0 * z0) ** 2 / (2.0 * (1.0 - agent.gamma) * A)


def _mean_log_drift(pop: PopulationSpec, t):
    """``E[pi (h - pi A / 2)]``, the drift of ``log mu``."""
    out = 0.0
    for w, a in pop.entries:
        h, _, s0, A = _coeffs(a, t)
        z0 = _own_Z0(pop, a, t)
        pi = (h + s0 * z0) / ((1.0 - a.gamma) * A)
        out = out + w * pi * (h - (h + s0 * z0) / (2.0 * (1.0 - a.gamma)))
    return out


def _Y_integrand(pop: PopulationSpec, agent: AgentType, t):
    """Integrand of the ``Y0`` quadrature: own driver minus ``theta gamma`` times the index drift."""
    return _own_driver(pop, agent, t) - agent.theta * agent.gamma * _mean_log_drift(pop, t)


def _mean_log_x(pop: PopulationSpec) -> float:
    return float(pop.weights @ np.log(pop.param("x")))


def mfg_value(pop: PopulationSpec, agent: AgentType, grid: TimeGrid) -> tuple[float, float]:
    """``(Y0, V)`` with ``V = x^gamma e^{Y0} / gamma``.

    The time integral uses the midpoint rule on the cells of ``grid``. This is
    exact for piecewise-constant coefficients that the grid resolves.
    """
    tm = grid.left_nodes + 0.5 * grid.dt
    integ = np.broadcast_to(_Y_integrand(pop, agent, tm), tm.shape)
    Y0 = -agent.theta * agent.gamma * _mean_log_x(pop) + float(np.sum(integ) * grid.dt)
    V = agent.x**agent.gamma * np.exp(Y0) / agent.gamma
    return Y0, float(V)


def mfg_Y_paths(pop: PopulationSpec, grid: TimeGrid, dW0: NDArray) -> NDArray:
    """Equilibrium ``Y`` per type along common paths, shape ``(K, n_common, M + 1)``.

    ``Y_t = Y_0 - int_0^t (own driver) ds + int_0^t Z0 dW0``. ``Y_0`` uses the
    left-point rule, which matches the Euler wealth scheme, so that
    ``Y_T = -theta gamma E[X_T | F0_T]`` holds exactly on the grid.
    """
    t = grid.left_nodes
    dW0 = np.atleast_2d(dW0)
    out = np.empty((len(pop), dW0.shape[0], grid.steps + 1))
    for k, a in enumerate(pop.types):
        f = np.broadcast_to(_own_driver(pop, a, t), t.shape)
        z0 = np.broadcast_to(_own_Z0(pop, a, t), t.shape)
        Y0 = (-a.theta * a.gamma * _mean_log_x(pop)
              + float(np.sum(np.broadcast_to(_Y_integrand(pop, a, t), t.shape)) * grid.dt))
        out[k, :, 0] = Y0
        out[k, :, 1:] = Y0 + np.cumsum(-f * grid.dt + z0 * dW0, axis=1)
    return out


def nplayer_strategies(players: Sequence[AgentType], t=0.0) -> NDArray:
    """Nash equilibrium of the ``N``-player game, one strategy per player.

    Player ``i`` best-responds to ``b_i``, the average of ``pi_j sigma0_j`` over
    ``j != i``. Write ``t_i = theta_i gamma_i / (N - 1)`` and
    ``D_i = (1 - gamma_i) sigma_i^2 + (1 - gamma_i - t_i) sigma0_i^2``. Then
    ``pi_i = (h_i - t_i sigma0_i S) / D_i``, where
    ``S = sum_j pi_j sigma0_j = phi1 / (1 + phi2)``, ``phi1 = sum_j sigma0_j h_j / D_j``
    and ``phi2 = sum_j t_j sigma0_j^2 / D_j``.
    """
    N = len(players)
    if N < 2:
        raise InvalidArgumentError("the finite game needs at least two players")
    cols = [_coeffs(p, t) for p in players]
    tg = [p.theta * p.gamma / (N - 1) for p in players]
    Ds = [(1.0 - p.gamma) * s * s + (1.0 - p.gamma - ti) * s0 * s0
          for p, ti, (_, s, s0, _) in zip(players, tg, cols)]
    if any(np.any(np.asarray(D) <= 0.0) for D in Ds):
        raise DegenerateGameError("a player denominator (1-g)s^2 + (1-g-tg/(N-1))s0^2 is not positive")
    phi1 = sum(s0 * h / D for (h, _, s0, _), D in zip(cols, Ds))
    phi2 = sum(ti * s0 * s0 / D for ti, (_, _, s0, _), D in zip(tg, cols, Ds))
    if np.any(np.abs(1.0 + np.asarray(phi2)) < 1e-14):
        raise DegenerateGameError("1 + phi2 vanishes")
    S = phi1 / (1.0 + phi2)
    return np.array([(h - ti * s0 * S) / D for ti, (h, _, s0, _), D in zip(tg, cols, Ds)],
                    dtype=float)


def him_comparison_strategy(pop: PopulationSpec, agent: AgentType, t=0.0):
    """Strategy obtained when competitors scale a common strategy.

    ``(h - theta gamma sigma0 E[sigma0 h / ((1-g) A)] / (1 + E[theta gamma / (1-g)])) / ((1-g) A)``.
    It is kept for comparison with :func:`mfg_strategy`.
    """
    ef = 0.0
    den = 1.0
    for w, a in pop.entries:
        h, _, s0, A = _coeffs(a, t)
        ef = ef + w * s0 * h / ((1.0 - a.gamma) * A)
        den = den + w * a.theta * a.gamma / (1.0 - a.gamma)
    if np.any(np.abs(np.asarray(den)) < 1e-14):
        raise DegeneratePopulationError("1 + E[theta gamma / (1 - gamma)] vanishes")
    h, _, s0, A = _coeffs(agent, t)
    return (h - agent.theta * agent.gamma * s0 * ef / den) / ((1.0 - agent.gamma) * A)


@dataclass(frozen=True)
class EquilibriumReport:
    """Per-type equilibrium summary.

    Attributes
    ----------
    grid : TimeGrid
    pi_star, Z0 : ndarray, shape (K, P, M)
        Cell-left strategy and common-noise integrand. ``P`` is 1 for
        type-measurable data.
    Y0, V : ndarray, shape (K,)
    mu_drift : ndarray, shape (P, M)
        Drift of ``log mu``, ``E[pi (h - pi A / 2) | F0]``.
    """

    grid: TimeGrid
    pi_star: NDArray
    Z0: NDArray
    Y0: NDArray
    V: NDArray
    mu_drift: NDArray

    def to_csv(self, path) -> None:
        t = self.grid.left_nodes
        pi = self.pi_star.mean(axis=1)
        z0 = self.Z0.mean(axis=1)
        rows = ((k, t[m], pi[k, m], z0[k, m], self.Y0[k], self.V[k])
                for k in range(pi.shape[0]) for m in range(t.size))
        write_rows(path, ("type_id", "t", "pi_star", "Z0", "Y0", "V"), rows)


def equilibrium_report(pop: PopulationSpec, grid: TimeGrid) -> EquilibriumReport:
    """Closed-form equilibrium of ``pop`` tabulated on the cell-left nodes of ``grid``."""
    t = grid.left_nodes
    M = grid.steps
    pi = np.stack([np.broadcast_to(mfg_strategy(pop, a, t), (M,)) for a in pop.types])
    _, z0 = mfg_Z0(pop, t)
    z0 = np.broadcast_to(z0, (len(pop), M))
    vals = [mfg_value(pop, a, grid) for a in pop.types]
    drift = np.zeros(M)
    for (w, a), p in zip(pop.entries, pi):
        h, _, _, A = _coeffs(a, t)
        drift = drift + w * p * (h - 0.5 * p * A)
    return EquilibriumReport(grid, pi[:, None, :], np.array(z0)[:, None, :],
                             np.array([v[0] for v in vals]), np.array([v[1] for v in vals]),
                             drift[None, :])


def strategy_field(pop: PopulationSpec, grid: TimeGrid):
    """Closed-form equilibrium as a :class:`~mfpg.market.StrategyField`."""
    from .market import StrategyField

    return StrategyField(grid, equilibrium_report(pop, grid).pi_star)


def merton_field(pop: PopulationSpec, grid: TimeGrid):
    from .market import StrategyField

    t = grid.left_nodes
    return StrategyField.from_paths(
        grid, np.stack([np.broadcast_to(merton_ratio(a, t), t.shape) for a in pop.types]))
