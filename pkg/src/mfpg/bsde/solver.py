"""Benchmark and mean-field BSDE solvers, reconstruction, and measure change.

Everything is solved on the cell-left nodes of a grid. There is one
representative path for type-measurable populations, and one path per common
scenario otherwise. All fields are functions of ``(t, W0_t)`` and the type, so
the idiosyncratic integrand ``Z`` vanishes by construction. The solvers
estimate only the common-noise integrand ``Z0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ..errors import BallRadiusWarning, InvalidArgumentError, NumericalOverflowError, SolverDivergedError
from ..market import (IndexPath, PopulationSpec, ScenarioSet, StrategyField, TimeGrid,
                      coefficient_fields, write_rows)
from .driver import eval_J1, eval_J2
from .notation import NotationPack, pack_from_fields
from .regression import ExactOperator, FieldFit, RegressionOperator
from .transform import invert_transform, recover_barY


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-point tolerance, iteration cap, regression degree, and damping in ``[0, 1)``."""

    tol: float = 1e-10
    max_iter: int = 200
    basis_degree: int = 4
    damping: float = 0.0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be a positive integer")
        if int(self.basis_degree) != self.basis_degree or self.basis_degree < 0:
            raise InvalidArgumentError("basis_degree must be a non-negative integer")
        if not 0.0 <= self.damping < 1.0:
            raise InvalidArgumentError("damping must lie in [0, 1)")


@dataclass(frozen=True)
class CommonPaths:
    grid: TimeGrid
    W0: NDArray
    dW0: NDArray
    markov: bool

    @property
    def n_paths(self) -> int:
        return self.W0.shape[0]


def common_paths(scen: ScenarioSet) -> CommonPaths:
    """Representative paths: one zero path if type-measurable, else the scenario's."""
    grid = scen.grid
    if scen.population.type_measurable:
        return CommonPaths(grid, np.zeros((1, grid.steps + 1)), np.zeros((1, grid.steps)), False)
    return CommonPaths(grid, scen.W0, np.asarray(scen.dW0), True)


def _operator(paths: CommonPaths, cfg: SolverConfig):
    if not paths.markov:
        return ExactOperator(paths.grid)
    return RegressionOperator(paths.grid, paths.W0, paths.dW0, cfg.basis_degree)


def _fit(op, values: NDArray, nodes: int) -> NDArray:
    return np.stack([op.coef(m, values[..., m]) for m in range(nodes)], axis=1)


def _check_finite(name, a, history=()):
    if not np.all(np.isfinite(a)):
        raise SolverDivergedError(f"{name} became non-finite", float("nan"), history)


# --------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchmarkSolution:
    """Solution of the ``theta = 0`` problem for every type.

    Attributes
    ----------
    Y : ndarray, shape (K, P, M + 1)
    Z, Z0 : ndarray, shape (K, P, M)
    merton : ndarray, shape (K, P, M)
        ``h' / ((1 - gamma) A)``.
    drift : tuple of ndarray
        Girsanov drift ``(phi4, phi3)`` that removes the linear driver terms.
    """

    population: PopulationSpec
    paths: CommonPaths
    config: SolverConfig
    Y: NDArray
    Z: NDArray
    Z0: NDArray
    merton: NDArray
    drift: tuple
    y_fit: FieldFit
    z0_fit: FieldFit

    def fields_on(self, paths: CommonPaths):
        """``(Y, Z, Z0)`` on other common paths, evaluated through the stored fits."""
        if paths is self.paths or not self.paths.markov:
            return self.Y, self.Z, self.Z0
        Y = self.y_fit.evaluate(paths.W0)
        Z0 = self.z0_fit.evaluate(paths.W0, range(paths.grid.steps))
        return Y, np.zeros_like(Z0), Z0

    def strategy(self) -> StrategyField:
        return StrategyField(self.paths.grid, self.merton)


def _coefficient_fields(pop: PopulationSpec, paths: CommonPaths):
    h, s, s0 = coefficient_fields(pop, paths.grid, paths.W0 if paths.markov else None)
    K, P, M = len(pop), paths.n_paths, paths.grid.steps
    return tuple(np.broadcast_to(a, (K, P, M)) for a in (h, s, s0))


def solve_benchmark(scen: ScenarioSet, pop: PopulationSpec = None,
                    cfg: SolverConfig = SolverConfig()) -> BenchmarkSolution:
    """Solve the benchmark quadratic BSDE with driver ``|Z0|^2/2 + gamma h'^2 / (2 (1-gamma) A)``.

    Type-measurable data give the exact solution ``Z = Z0 = 0`` and
    ``Y_t = int_t^T gamma h^2 / (2 (1 - gamma) A) ds``. Markov data are solved
    by a backward sweep that regresses on ``W0_t``. The driver does not
    depend on ``Y``, so each step is explicit.
    """
    pop = scen.population if pop is None else pop
    paths = common_paths(scen)
    grid, dt = paths.grid, paths.grid.dt
    K, P, M = len(pop), paths.n_paths, grid.steps
    h, s, s0 = _coefficient_fields(pop, paths)
    gam = pop.param("gamma")[:, None]
    op = _operator(paths, cfg)
    Y = np.zeros((K, P, M + 1))
    Z0 = np.zeros((K, P, M))
    for m in range(M - 1, -1, -1):
        yn = Y[..., m + 1]
        z0 = op.z0(m, yn)
        hp = h[..., m] + s0[..., m] * z0
        A = s[..., m] ** 2 + s0[..., m] ** 2
        f = 0.5 * z0 * z0 + gam * hp * hp / (2 * (1 - gam) * A)
        Z0[..., m] = z0
        Y[..., m] = op.project(m, yn) + f * dt
        _check_finite("benchmark Y", Y[..., m])
    Z = np.zeros_like(Z0)
    pack = pack_from_fields(pop, h, s, s0, Z, Z0)
    merton = pack.h_prime * pack.c / pack.A
    deg = op.degree
    y_fit = FieldFit(grid, deg, _fit(op, Y, M + 1))
    z0_fit = FieldFit(grid, deg, _fit(op, Z0, M))
    return BenchmarkSolution(pop, paths, cfg, Y, Z, Z0, merton, (pack.phi4, pack.phi3), y_fit, z0_fit)


def notation_pack(pop: PopulationSpec, benchmark: BenchmarkSolution,
                  paths: CommonPaths | None = None) -> NotationPack:
    """Thirteen driver coefficient fields on ``paths`` (default: the benchmark's own)."""
    paths = benchmark.paths if paths is None else paths
    h, s, s0 = _coefficient_fields(pop, paths)
    _, Zo, Z0o = benchmark.fields_on(paths)
    return pack_from_fields(pop, h, s, s0, Zo, Z0o)


def ball_radius(pop: PopulationSpec) -> float:
    """``1 / (4 sqrt(2) max_k 1 / (1 - gamma_k))``."""
    c1 = float(np.max(1.0 / (1.0 - pop.param("gamma"))))
    return 1.0 / (4.0 * np.sqrt(2.0) * c1)


# --------------------------------------------------------------------------
# mean-field BSDE


@dataclass(frozen=True)
class BsdeSolution:
    """Solution of the transformed mean-field BSDE and its reconstruction.

    Arrays are ``(K, P, M + 1)`` for ``Y``-type fields and ``(K, P, M)`` for
    integrands. ``Y`` follows the single zero path when ``P = 1``, which
    makes it the mean path. ``history`` rows are
    ``(iter, sup_delta, residual, z_norm_over_R)``.
    """

    population: PopulationSpec
    paths: CommonPaths
    config: SolverConfig
    pack: NotationPack
    Y_tilde: NDArray
    Z_tilde: NDArray
    Z0_tilde: NDArray
    Zbar: NDArray
    Z0bar: NDArray
    Y: NDArray
    Z: NDArray
    Z0: NDArray
    iterations: int
    residual: float
    radius: float
    ball_ratio: float
    history: list = field(default_factory=list)
    y_fit: FieldFit = None
    z0_fit: FieldFit = None

    @property
    def Y0(self) -> NDArray:
        return self.Y[:, :, 0].mean(axis=1)

    def diagnostics_csv(self, path) -> None:
        write_rows(path, ("iter", "sup_delta", "residual", "z_norm_over_R"),
                   ((int(i), float(d), float(r), float(q)) for i, d, r, q in self.history))


def _sweep(op, pack: NotationPack, terminal: NDArray, J2v: NDArray, dt: float):
    K, P, M = pack.shape
    Y = np.empty((K, P, M + 1))
    Y[..., M] = terminal
    Z0 = np.empty((K, P, M))
    for m in range(M - 1, -1, -1):
        yn = Y[..., m + 1]
        z0 = op.z0(m, yn)
        j1 = 0.5 * pack.phi_sigma0[..., m] * z0 * z0 + pack.phi3[..., m] * z0
        Z0[..., m] = z0
        Y[..., m] = op.project(m, yn) + (j1 + J2v[..., m]) * dt
    return Y, Z0


def _residual(op, pack, Y, Z0, dt):
    J = eval_J1(pack, 0.0, Z0) + eval_J2(pack, 0.0, Z0)
    r = 0.0
    for m in range(Y.shape[-1] - 1):
        r = max(r, float(np.max(np.abs(Y[..., m] - op.project(m, Y[..., m + 1]) - J[..., m] * dt))))
    return r


def _bmo_upper(Z, Z0, dt):
    tail = np.cumsum(((Z * Z + Z0 * Z0) * dt)[..., ::-1], axis=-1)
    return float(np.sqrt(np.max(tail))) if tail.size else 0.0


def picard_solve(scen: ScenarioSet, pop: PopulationSpec, benchmark: BenchmarkSolution,
                 cfg: SolverConfig = SolverConfig()) -> BsdeSolution:
    """Picard iteration on the frozen population argument of ``J2``.

    Each iteration freezes ``z0_hat`` inside ``J2``, then solves the resulting
    single-type quadratic BSDE (driver ``J1(z0) + J2(z0_hat)``, terminal value
    ``-theta gamma E[log x]``) by a backward sweep. Iteration stops when the
    sup-norm change in the integrand drops below ``cfg.tol``. If the
    integrand leaves the ball of the existence theorem, a
    :class:`~mfpg.errors.BallRadiusWarning` is issued; the iteration
    continues regardless.
    """
    paths = benchmark.paths
    op = _operator(paths, cfg)
    pack = notation_pack(pop, benchmark, paths)
    dt = paths.grid.dt
    K, P, M = pack.shape
    tg = pack.tg[:, :, 0]
    terminal = np.broadcast_to(-tg * float(pop.weights @ np.log(pop.param("x"))), (K, P))
    R = ball_radius(pop)
    frozen = np.zeros((K, P, M))
    history = []
    warned = False
    for it in range(1, cfg.max_iter + 1):
        J2v = eval_J2(pack, 0.0, frozen)
        Y, Z0 = _sweep(op, pack, terminal, J2v, dt)
        delta = float(np.max(np.abs(Z0 - frozen)))
        res = _residual(op, pack, Y, Z0, dt)
        ratio = _bmo_upper(0.0, Z0, dt) / R
        history.append((it, delta, res, ratio))
        if not (np.isfinite(delta) and np.all(np.isfinite(Y))):
            raise SolverDivergedError("Picard iterate became non-finite", res, history)
        if ratio > 1.0 and not warned:
            warnings.warn(f"Picard iterate left the R-ball (|Z|/R = {ratio:.3g})", BallRadiusWarning)
            warned = True
        frozen = (1.0 - cfg.damping) * Z0 + cfg.damping * frozen
        if delta < cfg.tol:
            break
    else:
        raise SolverDivergedError(f"no convergence in {cfg.max_iter} iterations (last delta {delta:.3g})",
                                  res, history)
    Zt = np.zeros_like(Z0)
    Zb, Z0b = invert_transform(Zt, Z0, pack)
    Yb = recover_barY(Y, Zb, Z0b, pack, dt, paths.dW0 if paths.markov else None)
    Yfull = Yb + np.broadcast_to(benchmark.Y, Yb.shape)
    return BsdeSolution(
        population=pop, paths=paths, config=cfg, pack=pack,
        Y_tilde=Y, Z_tilde=Zt, Z0_tilde=Z0, Zbar=Zb, Z0bar=Z0b,
        Y=Yfull, Z=benchmark.Z + Zb, Z0=benchmark.Z0 + Z0b,
        iterations=it, residual=res, radius=R, ball_ratio=history[-1][3], history=history,
        y_fit=FieldFit(paths.grid, op.degree, _fit(op, Y, M + 1)),
        z0_fit=FieldFit(paths.grid, op.degree, _fit(op, Z0, M)),
    )


# --------------------------------------------------------------------------
# reconstruction on arbitrary scenarios


@dataclass(frozen=True)
class EquilibriumFields:
    """Equilibrium objects on the common paths of a scenario.

    ``pi`` has ``P = 1`` for type-measurable data. ``Y`` is
    ``(K, n_common, M + 1)``. ``log_mu`` is the candidate index, computed
    exactly given the common noise.
    """

    pi: StrategyField
    Z0: NDArray
    Y: NDArray
    log_mu: IndexPath


def equilibrium_fields(sol: BsdeSolution, benchmark: BenchmarkSolution,
                       scen: ScenarioSet) -> EquilibriumFields:
    """Evaluate the solved equilibrium along the common paths of ``scen``."""
    from ..market import conditional_log_index

    pop, grid = sol.population, scen.grid
    if grid != sol.paths.grid:
        raise InvalidArgumentError("scenario grid differs from the solution grid")
    paths = common_paths(scen)
    pack = notation_pack(pop, benchmark, paths)
    M = grid.steps
    if paths.markov:
        Yt = sol.y_fit.evaluate(paths.W0)
        Z0t = sol.z0_fit.evaluate(paths.W0, range(M))
        Yo, _, _ = benchmark.fields_on(paths)
    else:
        Yt, Z0t, Yo = sol.Y_tilde, sol.Z0_tilde, benchmark.Y
    Zb, Z0b = invert_transform(0.0, Z0t, pack)
    Yb = recover_barY(Yt, Zb, Z0b, pack, grid.dt, np.asarray(scen.dW0))
    Y = np.broadcast_to(Yb + Yo, (len(pop), scen.n_common, M + 1))
    Z = pack.Zo + Zb
    Z0 = pack.Z0o + Z0b
    pi = (pack.h + pack.sigma * Z + pack.sigma0 * Z0) * pack.c / pack.A
    strat = StrategyField(grid, pi)
    return EquilibriumFields(strat, Z0, np.array(Y), conditional_log_index(scen, strat))


def reconstruct_equilibrium(sol: BsdeSolution, benchmark: BenchmarkSolution,
                            pop: PopulationSpec | None = None):
    """Strategy ``(h + sigma Z + sigma0 Z0) c / A``, ``Y0`` and value for every type."""
    from ..closed_form import EquilibriumReport

    pop = sol.population if pop is None else pop
    pack = sol.pack
    pi = (pack.h + pack.sigma * sol.Z + pack.sigma0 * sol.Z0) * pack.c / pack.A
    Y0 = sol.Y0
    x, gam = pop.param("x"), pop.param("gamma")
    V = x**gam * np.exp(Y0) / gam
    drift = pack.E(pi * (pack.h - 0.5 * pi * pack.A))[0]
    return EquilibriumReport(sol.paths.grid, pi, sol.Z0, Y0, V, drift)


# --------------------------------------------------------------------------
# measure change


@dataclass(frozen=True)
class DensityPath:
    """Log of the density process, shape ``(K, n_common, n_particles, M + 1)``."""

    log_density: NDArray

    @property
    def terminal(self) -> NDArray:
        return np.exp(self.log_density[..., -1])


def girsanov_density(benchmark: BenchmarkSolution, scen: ScenarioSet) -> DensityPath:
    """Stochastic exponential of ``int phi4 dW + phi3 dW0``, accumulated in log space."""
    paths = common_paths(scen)
    pack = notation_pack(benchmark.population, benchmark, paths)
    m1, m2 = pack.phi4, pack.phi3
    dt = scen.grid.dt
    incr = (m1[:, :, None, :] * scen.dW
            + (m2 * np.asarray(scen.dW0)[None])[:, :, None, :]
            - 0.5 * (m1 * m1 + m2 * m2)[:, :, None, :] * dt)
    out = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    if not np.all(np.isfinite(out)) or np.max(out) > 700.0:
        raise NumericalOverflowError("density exponent overflowed")
    return DensityPath(out)
