"""Power expansion of the equilibrium in a global competition scale.

Every type's competition weight is written as ``theta_k = lam * theta_bar_k``,
where ``theta_bar`` comes from the base population. Order ``i`` solves a
linear FBSDE whose forcing uses only orders ``< i``:

* ``Y^(i)_T = -theta_bar gamma E[X^(i-1)_T | F0]`` with ``X^(0)`` the benchmark
  log-wealth;
* driver ``phi3 Z0^(i) + phi4 Z^(i) + sum_j [gamma c K^(j,i-j) + Z^(j) Z^(i-j) / 2 + Z0^(j) Z0^(i-j) / 2]``;
* ``dX^(i) = [p^(i) (h - h' c) - c^2 sum_j K^(j,i-j)] dt + p^(i) (sigma dW + sigma0 dW0)``.

Here ``K^(j,l) = u_j u_l / (2 A)``, ``u_i = sigma Z^(i) + sigma0 Z0^(i)`` and
``p^(i) = u_i c / A``. The stored ``X^(i)`` and ``Y^(i)`` are conditional
means given the common noise. With type-measurable data there is a single
zero common path, so they are plain expectations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .bsde.solver import (BenchmarkSolution, SolverConfig, _operator, common_paths,
                          notation_pack, solve_benchmark)
from .errors import InvalidArgumentError, SolverDivergedError
from .market import PopulationSpec, ScenarioSet, write_rows


@dataclass(frozen=True)
class OrderFields:
    X: NDArray
    Y: NDArray
    Z: NDArray
    Z0: NDArray
    p: NDArray


@dataclass(frozen=True)
class ExpansionCoefficients:
    """Coefficient fields for orders ``1..n`` plus the benchmark reference.

    ``orders[i - 1]`` holds order ``i``. ``X0`` is the conditional mean of the
    benchmark log-wealth, including ``log x``.
    """

    population: PopulationSpec
    benchmark: BenchmarkSolution
    X0: NDArray
    orders: tuple

    @property
    def n(self) -> int:
        return len(self.orders)

    def to_csv(self, path) -> None:
        t = self.benchmark.paths.grid.nodes
        rows = []
        for i, o in enumerate(self.orders, start=1):
            X, Y = o.X.mean(axis=1), o.Y.mean(axis=1)
            Z, Z0 = o.Z.mean(axis=1), o.Z0.mean(axis=1)
            for k in range(X.shape[0]):
                for m in range(t.size):
                    zm = min(m, Z.shape[1] - 1)
                    rows.append((i, k, t[m], X[k, m], Y[k, m], Z[k, zm], Z0[k, zm]))
        write_rows(path, ("order", "type_id", "t", "X_i", "Y_i", "Z_i", "Z0_i"), rows)


def _forward(X0: NDArray, drift: NDArray, vol0: NDArray, dt: float, dW0):
    out = np.empty(drift.shape[:-1] + (drift.shape[-1] + 1,))
    incr = drift * dt + (vol0 * dW0[None] if dW0 is not None else 0.0)
    out[..., 0] = X0
    out[..., 1:] = X0[..., None] + np.cumsum(incr, axis=-1)
    return out


def expand(scen: ScenarioSet, pop: PopulationSpec, benchmark: BenchmarkSolution | None = None,
           n: int = 2, cfg: SolverConfig = SolverConfig()) -> ExpansionCoefficients:
    """Solve the order-``1..n`` coefficient systems in sequence.

    ``pop`` supplies ``theta_bar``. The expansion variable multiplies every
    type's competition weight.
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError("expansion order must be a positive integer")
    benchmark = solve_benchmark(scen, pop, cfg) if benchmark is None else benchmark
    paths = benchmark.paths
    grid, dt = paths.grid, paths.grid.dt
    pack = notation_pack(pop, benchmark, paths)
    K, P, M = pack.shape
    c, A, hp = pack.c, pack.A, pack.h_prime
    dW0 = paths.dW0 if paths.markov else None
    op = _operator(paths, cfg)

    po = hp * c / A
    logx = np.log(pop.param("x"))[:, None] * np.ones((K, P))
    prev_drift, prev_vol0 = po * (pack.h - 0.5 * po * A), po * pack.sigma0
    Xprev = _forward(logx, prev_drift, prev_vol0, dt, dW0)
    X0 = Xprev
    orders: list[OrderFields] = []
    u = []
    for i in range(1, n + 1):
        forcing = np.zeros((K, P, M))
        kx = np.zeros((K, P, M))
        for j in range(1, i):
            Kj = u[j - 1] * u[i - j - 1] / (2 * A)
            a, b = orders[j - 1], orders[i - j - 1]
            forcing += pack.gamma * c * Kj + 0.5 * a.Z * b.Z + 0.5 * a.Z0 * b.Z0
            kx += c * c * Kj
        # Y^(i) = Yhat - theta_bar gamma xi with xi_t = E[X^(i-1)_t | F0]; Yhat is Markov with zero terminal value
        ea, eb = pack.E(prev_drift), pack.E(prev_vol0)
        xi = _forward(pack.E(Xprev[..., :1])[0, :, 0][None, :], ea, eb, dt, dW0)
        Yhat = np.zeros((K, P, M + 1))
        Z0 = np.empty((K, P, M))
        for m in range(M - 1, -1, -1):
            yn = Yhat[..., m + 1]
            z0 = op.z0(m, yn) - pack.tg[..., 0] * eb[..., m]
            Z0[..., m] = z0
            Yhat[..., m] = op.project(m, yn) + (pack.phi3[..., m] * z0 + forcing[..., m]
                                                 - pack.tg[..., 0] * ea[..., m]) * dt
        Y = Yhat - pack.tg * xi
        if not np.all(np.isfinite(Y)):
            raise SolverDivergedError(f"expansion order {i} became non-finite")
        Z = np.zeros_like(Z0)
        ui = pack.sigma * Z + pack.sigma0 * Z0
        p = ui * c / A
        prev_drift, prev_vol0 = p * (pack.h - hp * c) - kx, p * pack.sigma0
        X = _forward(np.zeros((K, P)), prev_drift, prev_vol0, dt, dW0)
        orders.append(OrderFields(X, Y, Z, Z0, p))
        u.append(ui)
        Xprev = X
    return ExpansionCoefficients(pop, benchmark, X0, tuple(orders))


def reconstruct_value_expansion(coeffs: ExpansionCoefficients, lam: float, n: int | None = None):
    """Partial sums ``sum lam^i (gamma X^(i) + Y^(i))`` and ``sum lam^i p^(i)``.

    Returns arrays of shape ``(K, P, M + 1)`` and ``(K, P, M)``. These are the
    log value ratio and the strategy correction.
    """
    n = coeffs.n if n is None else n
    if n > coeffs.n:
        raise InvalidArgumentError(f"only {coeffs.n} orders available")
    gam = coeffs.population.param("gamma")[:, None, None]
    o0 = coeffs.orders[0]
    logv = np.zeros_like(o0.Y)
    dpi = np.zeros_like(o0.p)
    for i, o in enumerate(coeffs.orders[:n], start=1):
        logv = logv + lam**i * (gam * o.X + o.Y)
        dpi = dpi + lam**i * o.p
    return logv, dpi


@dataclass(frozen=True)
class OrderCheck:
    order: int
    thetas: NDArray
    errors: NDArray
    slope: float
    exact_zero: bool

    @property
    def passed(self) -> bool:
        return self.exact_zero or self.slope >= self.order + 0.8


def closed_form_truth(pop: PopulationSpec, grid, quantity: str = "strategy") -> Callable:
    """Exact correction ``f(lam) - f(0)`` from the closed forms.

    ``f`` is the strategy field for ``quantity="strategy"`` and ``Y0`` for
    ``quantity="value"``.
    """
    from .closed_form import mfg_strategy, mfg_value

    t = grid.left_nodes

    def strategy(lam):
        p1, p0 = pop.scaled(lam), pop.scaled(0.0)
        return np.stack([np.broadcast_to(mfg_strategy(p1, a1, t) - mfg_strategy(p0, a0, t), t.shape)
                         for a1, a0 in zip(p1.types, p0.types)])[:, None, :]

    def value(lam):
        p1, p0 = pop.scaled(lam), pop.scaled(0.0)
        return np.array([mfg_value(p1, a1, grid)[0] - mfg_value(p0, a0, grid)[0]
                         for a1, a0 in zip(p1.types, p0.types)])[:, None]

    if quantity == "strategy":
        return strategy
    if quantity == "value":
        return value
    raise InvalidArgumentError(f"unknown quantity {quantity!r}")


def expansion_order_check(coeffs: ExpansionCoefficients, thetas: Sequence[float],
                          truth: Callable | None = None, n: int | None = None,
                          quantity: str = "strategy") -> OrderCheck:
    """Least-squares slope of ``log sup|truth - partial sum|`` against ``log lam``.

    ``truth(lam)`` returns the exact correction. By default it comes from the
    closed forms, which need type-measurable data. If every error is exactly
    zero, the check reports ``exact_zero`` instead of a slope.
    """
    th = np.asarray(sorted({float(x) for x in thetas}), dtype=float)
    if th.size < 2 or np.any(th <= 0):
        raise InvalidArgumentError("need at least two distinct positive expansion parameters")
    n = coeffs.n if n is None else n
    truth = closed_form_truth(coeffs.population, coeffs.benchmark.paths.grid, quantity) if truth is None else truth
    errs = []
    for lam in th:
        logv, dpi = reconstruct_value_expansion(coeffs, lam, n)
        approx = dpi if quantity == "strategy" else logv[:, :, 0]
        errs.append(float(np.max(np.abs(np.asarray(truth(lam)) - approx))))
    errs = np.array(errs)
    if np.all(errs == 0.0):
        return OrderCheck(n, th, errs, float("nan"), True)
    slope = float(np.polyfit(np.log(th), np.log(np.maximum(errs, np.finfo(float).tiny)), 1)[0])
    return OrderCheck(n, th, errs, slope, False)


def difference_quotients(coeffs: ExpansionCoefficients, lam: float, Z0_exact: NDArray) -> NDArray:
    """Distances ``sup|Z0^{lam,(i)} - Z0^(i)|`` for ``i = 1..n``.

    ``Z0^{lam,(1)} = (Z0^lam - Z0^o) / lam`` and
    ``Z0^{lam,(i+1)} = (Z0^{lam,(i)} - Z0^(i)) / lam``. Here ``Z0_exact`` is the
    integrand of the equilibrium at scale ``lam``. Each distance should vanish
    as ``lam -> 0``.
    """
    q = (np.asarray(Z0_exact) - coeffs.benchmark.Z0) / lam
    out = []
    for o in coeffs.orders:
        out.append(float(np.max(np.abs(q - o.Z0))))
        q = (q - o.Z0) / lam
    return np.array(out)
