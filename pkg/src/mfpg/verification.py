"""Monte Carlo equilibrium audits.

Each audit simulates with common random numbers and reports standard errors.
Errors are clustered by common path: samples that share a common path are
averaged first. The audits are:

* fixed point: the index produced by the candidate strategy against the
  candidate index;
* martingale optimality: increments of ``R_t = (1/gamma) exp(gamma X_t + Y_t)``;
* best response: utility change from unilateral deviations, with the index frozen;
* ``N``-player convergence: sampled finite games against the mean-field formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .closed_form import mfg_strategy, nplayer_strategies
from .errors import InvalidArgumentError
from .market import (IndexPath, PopulationSpec, ScenarioSet, StrategyField, TimeGrid, clustered_mean,
                     performance_index, simulate_log_wealth, terminal_utility, write_rows)

Z_MARTINGALE = 3.0
Z_GAP = 3.0
FIXED_POINT_RATIO = 2.0


# --------------------------------------------------------------------------
# fixed point


@dataclass(frozen=True)
class FixedPointResult:
    """Gap between ``log mu`` estimated from particles and the candidate.

    ``rms`` has one entry per node: the RMS over common paths of the gap.
    ``se`` is the particle standard error of ``log mu_hat`` at each node.
    ``residual`` is the sup over nodes of ``rms``. ``ratio`` is the sup over
    nodes ``t > 0`` of ``rms / se``. A candidate passes when ``ratio`` is at
    most :data:`FIXED_POINT_RATIO`.
    """

    residual: float
    ratio: float
    rms: NDArray
    se: NDArray
    checkpoints: list

    @property
    def passed(self) -> bool:
        return bool(self.ratio <= FIXED_POINT_RATIO) or self.residual == 0.0


def fixed_point_residual(pop: PopulationSpec, strat: StrategyField, scen: ScenarioSet,
                         candidate: IndexPath) -> FixedPointResult:
    """Simulate ``strat``, estimate ``log mu``, and compare with ``candidate``."""
    panel = simulate_log_wealth(scen, strat)
    est = performance_index(panel, pop)
    diff = est.log_mu - candidate.log_mu
    rms = np.sqrt(np.mean(diff * diff, axis=0))
    if scen.n_particles >= 2:
        var = panel.log_wealth.var(axis=2, ddof=1).mean(axis=1)  # (K, M+1)
        se = np.sqrt(np.tensordot(pop.weights**2, var, axes=(0, 0)) / scen.n_particles)
    else:
        se = np.full(rms.shape, np.nan)
    mask = se > 0
    ratio = float(np.max(rms[mask] / se[mask])) if np.any(mask) else (0.0 if np.all(rms == 0) else np.inf)
    cps = [(int(m), float(rms[m]), float(se[m])) for m in scen.grid.quartile_indices()]
    return FixedPointResult(float(np.max(rms)), ratio, rms, se, cps)


# --------------------------------------------------------------------------
# martingale optimality


@dataclass(frozen=True)
class MartingaleResult:
    """Increments of ``R`` (or of ``R - R_control``) between checkpoints.

    ``total`` is ``(mean, se, z)`` for ``R_T - R_0``.
    """

    checkpoints: list
    means: NDArray
    ses: NDArray
    zscores: NDArray
    total: tuple

    @property
    def is_martingale(self) -> bool:
        return bool(np.all(np.abs(self.zscores) <= Z_MARTINGALE))

    @property
    def is_supermartingale(self) -> bool:
        return bool(np.all(self.zscores <= Z_MARTINGALE))

    @property
    def strictly_decreasing(self) -> bool:
        return bool(self.total[2] < -Z_MARTINGALE)


def mop_process(panel, Y: NDArray, type_index: int) -> NDArray:
    """``R_t = (1/gamma) exp(gamma X_t + Y_t)``, shape ``(n_common, n_particles, M + 1)``."""
    a = panel.scenarios.population.types[type_index]
    Yk = np.asarray(Y)[type_index]
    return np.exp(a.gamma * panel.log_wealth[type_index] + Yk[:, None, :]) / a.gamma


def martingale_test(pop: PopulationSpec, strat: StrategyField, Y: NDArray, scen: ScenarioSet,
                    type_index: int = 0, control: StrategyField | None = None,
                    checkpoints: Sequence[int] | None = None) -> MartingaleResult:
    """Test the increments of ``R`` at the quartiles of the grid.

    ``Y`` is the equilibrium ``Y`` per type on the scenario's common paths,
    with shape ``(K, n_common, M + 1)``. If ``control`` is given, the paired
    difference ``R^strat - R^control`` on the same paths is tested instead.
    Use the equilibrium as the control to sharpen the supermartingale
    verdict for deviations.
    """
    cps = list(scen.grid.quartile_indices() if checkpoints is None else checkpoints)
    R = mop_process(simulate_log_wealth(scen, strat), Y, type_index)
    if control is not None:
        R = R - mop_process(simulate_log_wealth(scen, control), Y, type_index)
    means, ses = [], []
    for a, b in zip(cps[:-1], cps[1:]):
        m, se = clustered_mean(R[:, :, b] - R[:, :, a])
        means.append(m)
        ses.append(se)
    means, ses = np.array(means), np.array(ses)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ses > 0, means / ses, 0.0)
    tm, tse = clustered_mean(R[:, :, cps[-1]] - R[:, :, cps[0]])
    tz = tm / tse if tse > 0 else 0.0
    return MartingaleResult(cps, means, ses, z, (tm, tse, tz))


# --------------------------------------------------------------------------
# best response


def time_bump(grid: TimeGrid, center: float, width: float, height: float) -> NDArray:
    """Smooth deviation ``height * exp(-((t - center) / width)^2)`` on the cell-left nodes."""
    t = grid.left_nodes
    return height * np.exp(-(((t - center) / width) ** 2))


@dataclass(frozen=True)
class GapResult:
    label: str
    gap: float
    se: float

    @property
    def z(self) -> float:
        return self.gap / self.se if self.se > 0 else 0.0

    @property
    def passed(self) -> bool:
        return self.gap <= Z_GAP * self.se or self.gap <= 0.0


def best_response_test(pop: PopulationSpec, strat: StrategyField, perturbations, scen: ScenarioSet,
                       log_mu: IndexPath, type_index: int = 0) -> list[GapResult]:
    """Utility change from deviating ``strat + delta`` against the frozen index.

    Every deviation reuses the same paths, so ``delta = 0`` gives a gap of
    exactly zero. ``perturbations`` holds scalars (constant shifts), arrays
    over the cell-left nodes, or ``(label, delta)`` pairs.
    """
    if len(perturbations) == 0:
        raise InvalidArgumentError("perturbation list is empty")
    base = terminal_utility(simulate_log_wealth(scen, strat), log_mu.log_mu[:, -1], type_index)
    out = []
    for item in perturbations:
        label, delta = item if isinstance(item, tuple) else (repr(float(item)) if np.ndim(item) == 0 else "function", item)
        dev = strat.shifted(delta, type_index)
        u = terminal_utility(simulate_log_wealth(scen, dev), log_mu.log_mu[:, -1], type_index)
        gap, se = clustered_mean(u - base)
        out.append(GapResult(str(label), gap, se))
    return out


# --------------------------------------------------------------------------
# N-player convergence


@dataclass(frozen=True)
class ConvergenceTable:
    """Rows ``(N, median, mean)`` of the mean absolute deviation over seeds.

    The slope is fitted to ``log median`` against ``log N``.
    """

    N: NDArray
    errors: NDArray
    slope: float

    @property
    def median(self) -> NDArray:
        return np.median(self.errors, axis=1)

    @property
    def mean(self) -> NDArray:
        return self.errors.mean(axis=1)

    def rows(self):
        return [(int(n), float(md), float(mn)) for n, md, mn in zip(self.N, self.median, self.mean)]


def nplayer_convergence(base_pop: PopulationSpec, N_list: Sequence[int], seed: int,
                        repeats: int = 64, t: float = 0.0) -> ConvergenceTable:
    """Sample finite games from the type law and compare with the mean-field formula.

    For each ``N`` and each repeat, ``N`` types are drawn i.i.d. from the
    mixture. The error is the mean, over players, of
    ``|pi_N,i - pi_MFG(type_i)|``.
    """
    N_list = [int(n) for n in N_list]
    if not N_list or min(N_list) < 2 or any(b <= a for a, b in zip(N_list[:-1], N_list[1:])):
        raise InvalidArgumentError("N_list must be increasing with every N >= 2")
    types = base_pop.types
    target = np.array([float(mfg_strategy(base_pop, a, t)) for a in types])
    errs = np.empty((len(N_list), repeats))
    for i, N in enumerate(N_list):
        for r in range(repeats):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(7, N, r))))
            idx = rng.choice(len(types), size=N, p=base_pop.weights)
            pis = nplayer_strategies([types[j] for j in idx], t)
            errs[i, r] = float(np.mean(np.abs(pis - target[idx])))
    med = np.median(errs, axis=1)
    if len(N_list) >= 2 and np.all(med > 0):
        slope = float(np.polyfit(np.log(N_list), np.log(med), 1)[0])
    else:
        slope = float("nan")
    return ConvergenceTable(np.array(N_list), errs, slope)


# --------------------------------------------------------------------------
# report


@dataclass
class AuditReport:
    """Collected audit results with CSV and text exports."""

    fixed_point: FixedPointResult | None = None
    negative_control: FixedPointResult | None = None
    martingale: MartingaleResult | None = None
    gaps: list = field(default_factory=list)
    convergence: ConvergenceTable | None = None

    def gates(self) -> list[tuple[str, bool, str]]:
        g = []
        if self.fixed_point is not None:
            g.append(("fixed_point", self.fixed_point.passed,
                      f"sup rms/se = {self.fixed_point.ratio:.3g}"))
        if self.negative_control is not None:
            g.append(("negative_control_detected", self.negative_control.ratio > 5.0,
                      f"sup rms/se = {self.negative_control.ratio:.3g}"))
        if self.martingale is not None:
            g.append(("martingale", self.martingale.is_martingale,
                      "z = " + ", ".join(f"{z:.2f}" for z in self.martingale.zscores)))
        for r in self.gaps:
            g.append((f"best_response[{r.label}]", r.passed, f"gap = {r.gap:.3e} (z = {r.z:.2f})"))
        if self.convergence is not None:
            med = self.convergence.median
            ok = bool(np.all(np.diff(med) < 0)) or bool(np.all(med <= 1e-12))
            g.append(("nplayer_convergence", ok, f"slope = {self.convergence.slope:.3f}"))
        return g

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.gates())

    def verdict(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'}  {name}: {info}" for name, ok, info in self.gates()]
        lines.append(f"VERDICT: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        rows = []
        for fp_name, fp in (("fixed_point", self.fixed_point), ("negative_control", self.negative_control)):
            if fp is not None:
                for m, r, s in fp.checkpoints:
                    rows.append((fp_name, f"node={m}", r, s, r / s if s > 0 else 0.0))
        if self.martingale is not None:
            mg = self.martingale
            for (a, b), m, s, z in zip(zip(mg.checkpoints[:-1], mg.checkpoints[1:]), mg.means, mg.ses, mg.zscores):
                rows.append(("martingale", f"{a}-{b}", m, s, z))
        for r in self.gaps:
            rows.append(("best_response", r.label, r.gap, r.se, r.z))
        if self.convergence is not None:
            for n, md, mn in self.convergence.rows():
                rows.append(("nplayer", f"N={n}", md, mn, 0.0))
        write_rows(path, ("audit", "item", "value", "se", "z"), rows)
