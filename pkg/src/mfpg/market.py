"""Population, coefficient and scenario data model plus forward simulation.

The simulated state is log-wealth ``X = log(wealth)``. Every type draws its
own idiosyncratic particles, while all types share the common-noise paths.
Random numbers come from counter-based Philox streams keyed by
``(seed, stream tag, type, common path)``, so any subset of paths can be
regenerated on its own and the output does not depend on thread count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from ._parallel import map_chunks
from .errors import InvalidArgumentError, NumericalOverflowError

GAMMA_MIN = 1e-6
VOL_FLOOR = 1e-12
WEIGHT_TOL = 1e-12

_STREAM_COMMON = 0
_STREAM_IDIO = 1
_STREAM_BRIDGE_COMMON = 2
_STREAM_BRIDGE_IDIO = 3

Evaluator = Union[float, Callable[[NDArray, NDArray], NDArray]]


def _fmt(x) -> str:
    return repr(float(x))


def write_rows(path, header: Sequence[str], rows) -> None:
    """Write a CSV with ``,`` separators and LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# --------------------------------------------------------------------------
# grid and coefficients


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_m = m T / M`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> NDArray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def left_nodes(self) -> NDArray:
        return self.nodes[:-1]

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.horizon, 2 * self.steps)

    def quartile_indices(self) -> list[int]:
        M = self.steps
        return sorted({0, M // 4, M // 2, (3 * M) // 4, M})


class CoefficientMode(str, Enum):
    CONSTANT = "constant"
    TIME_VARYING = "time_varying"
    COMMON_NOISE_MARKOV = "common_noise_markov"


_NAMES = ("h", "sigma", "sigma0")


def _min_square(lo: float, hi: float) -> float:
    if lo <= 0.0 <= hi:
        return 0.0
    return min(lo * lo, hi * hi)


@dataclass(frozen=True)
class CoefficientModel:
    """Return rate ``h`` and volatilities ``sigma`` (idiosyncratic), ``sigma0`` (common).

    Use the constructors :meth:`constant`, :meth:`time_varying` and
    :meth:`common_noise_markov` rather than the raw initializer.

    Notes
    -----
    * Constant: scalars.
    * TimeVarying: one value per cell of a uniform partition of ``[0, horizon]``;
      on any simulation grid the value at ``t`` is the value of the cell
      containing ``t``.
    * CommonNoiseMarkov: evaluators ``(t, w) -> value`` of time and the
      current common-noise level ``W0_t``, with declared bounds. Each value is
      checked against its bounds when evaluated.
    """

    mode: CoefficientMode
    h: object
    sigma: object
    sigma0: object
    horizon: float | None = None
    bounds: dict | None = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, h: float, sigma: float, sigma0: float) -> "CoefficientModel":
        vals = [float(h), float(sigma), float(sigma0)]
        if not all(np.isfinite(vals)):
            raise InvalidArgumentError("coefficients must be finite")
        if sigma**2 + sigma0**2 < VOL_FLOOR:
            raise InvalidArgumentError("sigma^2 + sigma0^2 must be bounded away from 0")
        return cls(CoefficientMode.CONSTANT, *vals)

    @classmethod
    def time_varying(cls, h, sigma, sigma0, horizon: float) -> "CoefficientModel":
        arrs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (h, sigma, sigma0)]
        n = max(a.size for a in arrs)
        arrs = [np.broadcast_to(a, (n,)).copy() if a.size == 1 else a for a in arrs]
        if any(a.ndim != 1 or a.size != n for a in arrs):
            raise InvalidArgumentError("time-varying coefficients need equal-length 1-d arrays")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise InvalidArgumentError("coefficients must be finite")
        if np.min(arrs[1] ** 2 + arrs[2] ** 2) < VOL_FLOOR:
            raise InvalidArgumentError("sigma^2 + sigma0^2 must be bounded away from 0")
        if not horizon > 0:
            raise InvalidArgumentError("horizon must be positive")
        for a in arrs:
            a.setflags(write=False)
        return cls(CoefficientMode.TIME_VARYING, *arrs, horizon=float(horizon))

    @classmethod
    def common_noise_markov(cls, h: Evaluator, sigma: Evaluator, sigma0: Evaluator,
                            bounds: dict) -> "CoefficientModel":
        """Coefficients given as functions of ``(t, w)`` with ``w = W0_t``.

        ``bounds`` maps each of ``"h"``, ``"sigma"`` and ``"sigma0"`` to a
        ``(lo, hi)`` pair. Every evaluation is checked against these bounds.
        The worst-case ``sigma^2 + sigma0^2`` over the bounds must be positive.
        """
        b = {}
        for name in _NAMES:
            if name not in bounds:
                raise InvalidArgumentError(f"missing bounds for {name}")
            lo, hi = (float(v) for v in bounds[name])
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InvalidArgumentError(f"bad bounds for {name}: {bounds[name]}")
            b[name] = (lo, hi)
        if _min_square(*b["sigma"]) + _min_square(*b["sigma0"]) < VOL_FLOOR:
            raise InvalidArgumentError("declared volatility bounds allow sigma^2 + sigma0^2 = 0")
        return cls(CoefficientMode.COMMON_NOISE_MARKOV, h, sigma, sigma0, bounds=b)

    # -- queries ----------------------------------------------------------
    @property
    def type_measurable(self) -> bool:
        return self.mode is not CoefficientMode.COMMON_NOISE_MARKOV

    def _cell(self, t):
        n = self.h.size
        idx = np.floor(np.asarray(t, dtype=float) / self.horizon * n + 1e-9).astype(int)
        return np.clip(idx, 0, n - 1)

    def at(self, t) -> tuple[NDArray, NDArray, NDArray]:
        """Values at time(s) ``t`` for type-measurable modes."""
        t = np.asarray(t, dtype=float)
        if self.mode is CoefficientMode.CONSTANT:
            return tuple(np.full(t.shape, v) for v in (self.h, self.sigma, self.sigma0))
        if self.mode is CoefficientMode.TIME_VARYING:
            i = self._cell(t)
            return self.h[i], self.sigma[i], self.sigma0[i]
        raise InvalidArgumentError("coefficients depend on the common noise; use evaluate()")

    def evaluate(self, t, w) -> tuple[NDArray, NDArray, NDArray]:
        """Values at broadcastable arrays of times ``t`` and common levels ``w``."""
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        shape = np.broadcast_shapes(t.shape, w.shape)
        if self.type_measurable:
            return tuple(np.broadcast_to(v, shape) for v in self.at(t))
        out = []
        for name in _NAMES:
            ev = getattr(self, name)
            v = np.broadcast_to(np.asarray(ev(t, w) if callable(ev) else ev, dtype=float), shape)
            lo, hi = self.bounds[name]
            if not np.all(np.isfinite(v)) or v.min() < lo - 1e-12 or v.max() > hi + 1e-12:
                raise InvalidArgumentError(f"{name}(t, w) left its declared range [{lo}, {hi}]")
            out.append(v)
        return tuple(out)

    def cell_values(self, grid: TimeGrid, W0: NDArray | None = None):
        """Cell-left values with shape ``(P, M)``.

        ``P = 1`` for type-measurable modes. Otherwise ``P`` is the number of
        rows of ``W0``, which holds node values with shape ``(P, M + 1)``.
        """
        t = grid.left_nodes[None, :]
        if self.type_measurable:
            return tuple(np.asarray(v, dtype=float).reshape(1, -1) for v in self.at(t[0]))
        if W0 is None:
            raise InvalidArgumentError("common-noise paths required for Markov coefficients")
        return self.evaluate(t, W0[:, :-1])


@dataclass(frozen=True)
class AgentType:
    """One population type.

    Attributes
    ----------
    x : float
        Initial wealth, positive.
    gamma : float
        CRRA exponent, ``gamma < 1`` and ``|gamma| >= GAMMA_MIN``.
    theta : float
        Competition weight in ``[0, 1]``.
    coeffs : CoefficientModel
    """

    x: float
    gamma: float
    theta: float
    coeffs: CoefficientModel

    def __post_init__(self):
        if not (np.isfinite(self.x) and self.x > 0):
            raise InvalidArgumentError(f"x must be positive, got {self.x}")
        if not (self.gamma < 1 and abs(self.gamma) >= GAMMA_MIN):
            raise InvalidArgumentError(f"gamma must lie in (-inf, 1) minus 0, got {self.gamma}")
        if not (0.0 <= self.theta <= 1.0):
            raise InvalidArgumentError(f"theta must lie in [0, 1], got {self.theta}")

    def with_theta(self, theta: float) -> "AgentType":
        return AgentType(self.x, self.gamma, theta, self.coeffs)


@dataclass(frozen=True)
class PopulationSpec:
    """Finite mixture ``[(weight, AgentType), ...]`` of types."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((float(w), t) for w, t in self.entries)
        if not entries:
            raise InvalidArgumentError("population needs at least one entry")
        ws = np.array([w for w, _ in entries])
        if np.any(~np.isfinite(ws)) or np.any(ws <= 0):
            raise InvalidArgumentError("weights must be positive")
        if abs(ws.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidArgumentError(f"weights must sum to 1, got {ws.sum()!r}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def single(cls, agent: AgentType) -> "PopulationSpec":
        return cls(((1.0, agent),))

    @property
    def weights(self) -> NDArray:
        return np.array([w for w, _ in self.entries])

    @property
    def types(self) -> list[AgentType]:
        return [t for _, t in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def type_measurable(self) -> bool:
        return all(t.coeffs.type_measurable for t in self.types)

    def scaled(self, lam: float) -> "PopulationSpec":
        """Population with every competition weight multiplied by ``lam``."""
        return PopulationSpec(tuple((w, t.with_theta(lam * t.theta)) for w, t in self.entries))

    def param(self, name: str) -> NDArray:
        return np.array([getattr(t, name) for t in self.types], dtype=float)


# --------------------------------------------------------------------------
# scenarios


def _gen(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class ScenarioSet:
    """Brownian increments on a grid.

    Attributes
    ----------
    dW0 : ndarray, shape (n_common, M)
        Common-noise increments.
    dW : ndarray, shape (K, n_common, n_particles, M)
        Idiosyncratic increments per type.
    """

    population: PopulationSpec
    grid: TimeGrid
    n_common: int
    n_particles: int
    seed: int
    dW0: NDArray = field(repr=False)
    dW: NDArray = field(repr=False)

    @property
    def n_types(self) -> int:
        return len(self.population)

    @property
    def W0(self) -> NDArray:
        """Common-noise levels at the nodes, shape ``(n_common, M + 1)``."""
        out = np.zeros((self.n_common, self.grid.steps + 1))
        np.cumsum(self.dW0, axis=1, out=out[:, 1:])
        return out


def _check_counts(n_common, n_particles, seed):
    for name, v in (("n_common", n_common), ("n_particles", n_particles)):
        if int(v) != v or v < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {v}")
    if int(seed) != seed or seed < 0 or seed >= 2**64:
        raise InvalidArgumentError(f"seed must be a 64-bit non-negative integer, got {seed}")


def build_scenarios(pop: PopulationSpec, grid: TimeGrid, n_common: int, n_particles: int,
                    seed: int) -> ScenarioSet:
    """Draw common and idiosyncratic increments from per-path substreams."""
    _check_counts(n_common, n_particles, seed)
    n_common, n_particles, seed = int(n_common), int(n_particles), int(seed)
    K, M = len(pop), grid.steps
    sd = np.sqrt(grid.dt)
    dW0 = np.empty((n_common, M))
    dW = np.empty((K, n_common, n_particles, M))

    def fill(a, b):
        for c in range(a, b):
            dW0[c] = _gen(seed, _STREAM_COMMON, c).standard_normal(M) * sd
            for k in range(K):
                dW[k, c] = _gen(seed, _STREAM_IDIO, k, c).standard_normal((n_particles, M)) * sd

    map_chunks(fill, n_common, min_chunk=64)
    dW0.setflags(write=False)
    dW.setflags(write=False)
    return ScenarioSet(pop, grid, n_common, n_particles, seed, dW0, dW)


def _bridge(incr: NDArray, z: NDArray, dt: float) -> NDArray:
    """Split each increment over ``dt`` into two halves using a Brownian bridge."""
    first = 0.5 * incr + np.sqrt(dt / 4.0) * z
    out = np.empty(incr.shape[:-1] + (2 * incr.shape[-1],))
    out[..., 0::2] = first
    out[..., 1::2] = incr - first
    return out


def refine_scenarios(scen: ScenarioSet) -> ScenarioSet:
    """Halve the step size, keeping the same Brownian paths at the old nodes."""
    grid, M = scen.grid, scen.grid.steps
    dW0 = np.empty((scen.n_common, 2 * M))
    dW = np.empty((scen.n_types, scen.n_common, scen.n_particles, 2 * M))

    def fill(a, b):
        for c in range(a, b):
            z = _gen(scen.seed, _STREAM_BRIDGE_COMMON, M, c).standard_normal(M)
            dW0[c] = _bridge(scen.dW0[c], z, grid.dt)
            for k in range(scen.n_types):
                z = _gen(scen.seed, _STREAM_BRIDGE_IDIO, M, k, c).standard_normal((scen.n_particles, M))
                dW[k, c] = _bridge(scen.dW[k, c], z, grid.dt)

    map_chunks(fill, scen.n_common, min_chunk=64)
    dW0.setflags(write=False)
    dW.setflags(write=False)
    return ScenarioSet(scen.population, grid.refined(), scen.n_common, scen.n_particles,
                       scen.seed, dW0, dW)


def coefficient_fields(pop: PopulationSpec, grid: TimeGrid, W0: NDArray | None = None):
    """Stack cell-left ``(h, sigma, sigma0)`` over types into shape ``(K, P, M)``."""
    vals = [t.coeffs.cell_values(grid, W0) for t in pop.types]
    P = max(v[0].shape[0] for v in vals)
    return tuple(np.stack([np.broadcast_to(v[i], (P, grid.steps)) for v in vals]) for i in range(3))


# --------------------------------------------------------------------------
# strategies, wealth, index


@dataclass(frozen=True)
class StrategyField:
    """Per-type cell-left strategy values, shape ``(K, P, M)``.

    ``P`` is 1 for deterministic strategies and ``n_common`` for strategies
    adapted to the common noise.
    """

    grid: TimeGrid
    values: NDArray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != self.grid.steps:
            raise InvalidArgumentError(
                f"strategy values must have shape (K, P, {self.grid.steps}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("strategy values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, per_type) -> "StrategyField":
        per_type = np.atleast_1d(np.asarray(per_type, dtype=float))
        return cls(grid, np.broadcast_to(per_type[:, None, None], (per_type.size, 1, grid.steps)).copy())

    @classmethod
    def from_paths(cls, grid: TimeGrid, per_type_time) -> "StrategyField":
        """From an array of shape ``(K, M)`` (deterministic) or ``(K, P, M)``."""
        a = np.asarray(per_type_time, dtype=float)
        return cls(grid, a[:, None, :] if a.ndim == 2 else a)

    def shifted(self, delta, type_index: int | None = None) -> "StrategyField":
        """Add ``delta`` (scalar, ``(M,)`` or ``(P, M)``) to one or all types."""
        d = np.asarray(delta, dtype=float)
        d = d.reshape((1,) * (2 - d.ndim) + d.shape) if d.ndim < 2 else d
        base = self.values
        P = max(base.shape[1], d.shape[0])
        out = np.broadcast_to(base, (base.shape[0], P, base.shape[2])).copy()
        if type_index is None:
            out = out + d
        else:
            out[type_index] = out[type_index] + d
        return StrategyField(self.grid, out)

    @property
    def n_types(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class WealthPanel:
    """Log-wealth, shape ``(K, n_common, n_particles, M + 1)``."""

    scenarios: ScenarioSet
    log_wealth: NDArray

    def to_csv(self, path) -> None:
        g = self.scenarios.grid.nodes
        K, C, N, _ = self.log_wealth.shape
        rows = ((k, c, n, g[m], self.log_wealth[k, c, n, m])
                for k in range(K) for c in range(C) for n in range(N) for m in range(g.size))
        write_rows(path, ("type_id", "common_id", "particle_id", "t", "log_wealth"), rows)


@dataclass(frozen=True)
class IndexPath:
    """Log of the performance index per common path, shape ``(n_common, M + 1)``."""

    grid: TimeGrid
    log_mu: NDArray

    @property
    def mu(self) -> NDArray:
        return np.exp(self.log_mu)


def _check_strategy(scen: ScenarioSet, strat: StrategyField):
    if strat.grid != scen.grid:
        raise InvalidArgumentError("strategy grid differs from scenario grid")
    if strat.n_types != scen.n_types:
        raise InvalidArgumentError("strategy has the wrong number of types")
    if strat.values.shape[1] not in (1, scen.n_common):
        raise InvalidArgumentError("strategy path dimension must be 1 or n_common")


def simulate_log_wealth(scen: ScenarioSet, strat: StrategyField) -> WealthPanel:
    """Euler scheme for log-wealth with cell-left coefficients.

    ``X_{m+1} = X_m + pi (h - pi A / 2) dt + pi sigma dW + pi sigma0 dW0``
    with ``A = sigma^2 + sigma0^2``.
    """
    _check_strategy(scen, strat)
    grid, K, C, N, M = scen.grid, scen.n_types, scen.n_common, scen.n_particles, scen.grid.steps
    W0 = scen.W0 if not scen.population.type_measurable else None
    h, s, s0 = coefficient_fields(scen.population, grid, W0)
    out = np.empty((K, C, N, M + 1))
    logx = np.log(scen.population.param("x"))
    pi_all = strat.values

    def rows(a, b):
        for k in range(K):
            sl = slice(a, b) if pi_all.shape[1] > 1 else slice(0, 1)
            cs = slice(a, b) if h.shape[1] > 1 else slice(0, 1)
            pi = pi_all[k, sl]
            hk, sk, s0k = h[k, cs], s[k, cs], s0[k, cs]
            drift = pi * (hk - 0.5 * pi * (sk**2 + s0k**2)) * grid.dt
            common = drift + pi * s0k * scen.dW0[a:b]
            incr = common[:, None, :] + (pi * sk)[:, None, :] * scen.dW[k, a:b]
            out[k, a:b, :, 0] = logx[k]
            np.cumsum(incr, axis=-1, out=out[k, a:b, :, 1:])
            out[k, a:b, :, 1:] += logx[k]

    map_chunks(rows, C)
    return WealthPanel(scen, out)


def performance_index(panel: WealthPanel, pop: PopulationSpec) -> IndexPath:
    """Particle estimator of ``log mu_t = E[X_t | F0_t]`` per common path."""
    means = panel.log_wealth.mean(axis=2)
    log_mu = np.tensordot(pop.weights, means, axes=(0, 0))
    return IndexPath(panel.scenarios.grid, log_mu)


def conditional_log_index(scen: ScenarioSet, strat: StrategyField) -> IndexPath:
    """Exact ``E[X_t | F0_t]`` when the strategy and coefficients are ``F0``-adapted.

    The idiosyncratic terms average out analytically, so only the drift and
    the common-noise integral remain.
    """
    _check_strategy(scen, strat)
    pop, grid = scen.population, scen.grid
    W0 = scen.W0 if not pop.type_measurable else None
    h, s, s0 = coefficient_fields(pop, grid, W0)
    pi = strat.values
    incr = pi * (h - 0.5 * pi * (s**2 + s0**2)) * grid.dt + pi * s0 * scen.dW0[None]
    incr = np.broadcast_to(incr, (len(pop), scen.n_common, grid.steps))
    agg = np.tensordot(pop.weights, incr, axes=(0, 0))
    log_mu = np.zeros((scen.n_common, grid.steps + 1))
    np.cumsum(agg, axis=1, out=log_mu[:, 1:])
    log_mu += float(pop.weights @ np.log(pop.param("x")))
    return IndexPath(grid, log_mu)


@dataclass(frozen=True)
class UtilityEstimate:
    mean: float
    stderr: float
    n: int


def clustered_mean(samples: NDArray) -> tuple[float, float]:
    """Mean and standard error of ``samples`` with shape ``(n_common, n_particles)``.

    Samples that share a common path are averaged before the spread is taken.
    With one common path the particles are treated as independent.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] > 1:
        per = samples.mean(axis=1)
        return float(per.mean()), float(per.std(ddof=1) / np.sqrt(per.size))
    flat = samples.reshape(-1)
    if flat.size < 2:
        return float(flat.mean()), float("nan")
    return float(flat.mean()), float(flat.std(ddof=1) / np.sqrt(flat.size))


def terminal_utility(panel: WealthPanel, log_mu_T: NDArray, type_index: int) -> NDArray:
    """Per-path ``(1/gamma) (X_T mu_T^{-theta})^gamma``, shape ``(n_common, n_particles)``."""
    agent = panel.scenarios.population.types[type_index]
    expo = agent.gamma * (panel.log_wealth[type_index, :, :, -1] - agent.theta * np.asarray(log_mu_T)[:, None])
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.exp(expo) / agent.gamma
    if not np.all(np.isfinite(u)):
        raise NumericalOverflowError("terminal utility is not finite")
    return u


def realized_utility(panel: WealthPanel, index: IndexPath, type_index: int = 0) -> UtilityEstimate:
    """Monte Carlo objective of one type against the index ``mu``."""
    if not np.all(np.isfinite(panel.log_wealth[type_index, :, :, -1])):
        raise NumericalOverflowError("terminal wealth is not finite")
    u = terminal_utility(panel, index.log_mu[:, -1], type_index)
    m, se = clustered_mean(u)
    return UtilityEstimate(m, se, u.size)
