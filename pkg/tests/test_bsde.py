"""BSDE engine: driver, transformation, Picard solver, reconstruction, measure change."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfpg.bsde import (SolverConfig, ball_radius, build_pack, equilibrium_fields, eval_J1, eval_J2,
                       forward_transform, girsanov_density, invert_transform, picard_solve,
                       reconstruct_equilibrium, recover_barY, solve_benchmark)
from mfpg.bsde.driver import one_minus_g
from mfpg.closed_form import mfg_value, mfg_Z0
from mfpg.errors import BallRadiusWarning, SolverDivergedError, TransformationDegenerateError
from mfpg.market import AgentType, CoefficientModel, PopulationSpec, TimeGrid, build_scenarios
from tests import oracles
from tests.conftest import markov_coeffs, tau1_type


def random_pack(rng, K=3, P=2, M=3, scale=0.1):
    w = rng.random(K)
    w /= w.sum()
    shape = (K, P, M)
    h = rng.uniform(0.02, 0.2, shape)
    s = rng.uniform(0.1, 0.4, shape)
    s0 = rng.uniform(0.1, 0.4, shape)
    gam = rng.choice([-1.0, 0.3, 0.5], K)
    th = rng.uniform(0, 1, K)
    Zo, Z0o = rng.normal(0, scale, shape), rng.normal(0, scale, shape)
    return build_pack(w, gam, th, h, s, s0, Zo, Z0o)


def _oracle(pack, zt, z0t):
    g = pack.gamma
    return oracles.composed_driver(pack.weights, pack.h, pack.sigma, pack.sigma0, g, pack.theta,
                                   pack.Zo, pack.Z0o, zt, z0t)


class TestDriver:
    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_composed_driver(self, seed):
        rng = np.random.default_rng(seed)
        pack = random_pack(rng)
        zt, z0t = rng.normal(0, 0.2, pack.shape), rng.normal(0, 0.2, pack.shape)
        total = eval_J1(pack, zt, z0t) + eval_J2(pack, zt, z0t)
        np.testing.assert_allclose(total, _oracle(pack, zt, z0t), atol=1e-13)

    def test_printed_variant_differs(self):
        rng = np.random.default_rng(5)
        pack = random_pack(rng)
        zt, z0t = rng.normal(0, 0.2, pack.shape), rng.normal(0, 0.2, pack.shape)
        gap = np.abs(eval_J2(pack, zt, z0t, printed=True) - eval_J2(pack, zt, z0t))
        assert gap.max() > 1e-4

    def test_theta_argument(self):
        rng = np.random.default_rng(6)
        pack = random_pack(rng)
        z, z0 = rng.normal(0, 0.2, pack.shape), rng.normal(0, 0.2, pack.shape)
        th = np.array([0.1, 0.7, 0.3])
        np.testing.assert_allclose(eval_J2(pack, z, z0, theta=th), eval_J2(pack.with_theta(th), z, z0),
                                   atol=1e-15)

    def test_zero_theta_kills_population_terms(self):
        rng = np.random.default_rng(7)
        pack = random_pack(rng).with_theta(np.zeros(3))
        z, z0 = rng.normal(0, 0.2, pack.shape), rng.normal(0, 0.2, pack.shape)
        assert np.all(eval_J2(pack, z, z0) == 0.0)

    def test_degenerate_transformation_guard(self):
        pack = random_pack(np.random.default_rng(8))
        bad = build_pack(pack.weights, pack.gamma, np.full(3, -50.0), pack.h, pack.sigma, pack.sigma0,
                         pack.Zo, pack.Z0o)
        with pytest.raises(TransformationDegenerateError):
            one_minus_g(bad)


class TestTransform:
    def test_round_trip_100_fields(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            pack = random_pack(rng, K=int(rng.integers(1, 5)), P=3, M=4)
            tZ, tZ0 = rng.normal(0, 0.3, pack.shape), rng.normal(0, 0.3, pack.shape)
            tY = rng.normal(0, 0.3, pack.shape[:2] + (5,))
            dW0 = rng.normal(0, 0.5, (3, 4))
            Zb, Z0b = invert_transform(tZ, tZ0, pack)
            Yb = recover_barY(tY, Zb, Z0b, pack, 0.25, dW0)
            Y2, Z2, Z02 = forward_transform(Yb, Zb, Z0b, pack, 0.25, dW0)
            worst = max(worst, np.abs(Z2 - tZ).max(), np.abs(Z02 - tZ0).max(), np.abs(Y2 - tY).max())
        assert worst <= 1e-12


class TestDeterministicSolver:
    def test_tau1(self, pop1, grid16):
        sc = build_scenarios(pop1, grid16, 1, 1, 0)
        b = solve_benchmark(sc, pop1)
        sol = picard_solve(sc, pop1, b)
        np.testing.assert_allclose(sol.Z0, -1 / 6, atol=1e-12)
        assert sol.Y0[0] == pytest.approx(mfg_value(pop1, pop1.types[0], grid16)[0], abs=1e-12)
        rep = reconstruct_equilibrium(sol, b)
        np.testing.assert_allclose(rep.pi_star, 5 / 3, atol=1e-12)

    def test_mixture(self, mix, grid16):
        sc = build_scenarios(mix, grid16, 1, 1, 0)
        sol = picard_solve(sc, mix, solve_benchmark(sc, mix))
        _, Z0 = mfg_Z0(mix)
        np.testing.assert_allclose(sol.Z0[:, 0, :], np.broadcast_to(Z0[:, None], (2, 16)), atol=1e-12)
        for k, a in enumerate(mix.types):
            assert sol.Y0[k] == pytest.approx(mfg_value(mix, a, grid16)[0], abs=1e-12)

    def test_theta_zero(self, grid16):
        pop = PopulationSpec.single(tau1_type(0.0))
        sc = build_scenarios(pop, grid16, 1, 1, 0)
        sol = picard_solve(sc, pop, solve_benchmark(sc, pop))
        assert sol.iterations == 1
        assert np.all(sol.Y_tilde == 0.0) and np.all(sol.Z0_tilde == 0.0) and np.all(sol.Z0bar == 0.0)

    def test_benchmark_closed_form(self, pop1, grid16):
        b = solve_benchmark(build_scenarios(pop1, grid16, 1, 1, 0), pop1)
        assert b.Y[0, 0, 0] == pytest.approx(0.0625, abs=1e-14)
        np.testing.assert_allclose(b.merton, 2.5, atol=1e-14)

    def test_diagnostics_csv(self, pop1, grid16, tmp_path):
        sc = build_scenarios(pop1, grid16, 1, 1, 0)
        picard_solve(sc, pop1, solve_benchmark(sc, pop1)).diagnostics_csv(tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "iter,sup_delta,residual,z_norm_over_R"

    def test_ball_radius(self, pop1):
        assert ball_radius(pop1) == pytest.approx(1 / (8 * np.sqrt(2)), rel=1e-15)


def _markov_pop(theta=1.0, gamma=0.5):
    return PopulationSpec.single(AgentType(1.0, gamma, theta, markov_coeffs()))


def _pde_coef(t, w):
    return (np.atleast_2d(0.1 + 0.05 * np.tanh(w)), np.full((1, w.size), 0.2), np.full((1, w.size), 0.2))


class TestMarkovSolver:
    @pytest.fixture(scope="class")
    @classmethod
    def solved(cls):
        pop = _markov_pop()
        sc = build_scenarios(pop, TimeGrid(1.0, 32), 4096, 1, 3)
        b = solve_benchmark(sc, pop)
        return pop, sc, b, picard_solve(sc, pop, b, SolverConfig(tol=1e-10))

    def test_against_pde(self, solved):
        _, _, b, sol = solved
        yo, y = oracles.pde_markov(_pde_coef, [1.0], [0.5], [1.0], [0.0])
        assert b.Y[0, :, 0].mean() == pytest.approx(yo[0], abs=5e-4)
        assert sol.Y0[0] == pytest.approx(y[0], abs=2e-4)
        assert sol.residual < 1e-9

    def test_theta_half_against_pde(self):
        pop = _markov_pop(0.5)
        sc = build_scenarios(pop, TimeGrid(1.0, 32), 4096, 1, 3)
        sol = picard_solve(sc, pop, solve_benchmark(sc, pop))
        _, y = oracles.pde_markov(_pde_coef, [1.0], [0.5], [0.5], [0.0])
        assert sol.Y0[0] == pytest.approx(y[0], abs=2e-4)

    def test_reconstructed_terminal(self, solved):
        pop, _, b, sol = solved
        fresh = build_scenarios(pop, TimeGrid(1.0, 32), 64, 1, 99)
        eq = equilibrium_fields(sol, b, fresh)
        np.testing.assert_allclose(eq.Y[0, :, -1], -0.5 * eq.log_mu.log_mu[:, -1], atol=1e-9)

    def test_diverges_with_tight_budget(self):
        pop = _markov_pop()
        sc = build_scenarios(pop, TimeGrid(1.0, 8), 256, 1, 3)
        with pytest.raises(SolverDivergedError) as info:
            picard_solve(sc, pop, solve_benchmark(sc, pop), SolverConfig(tol=1e-15, max_iter=2))
        assert len(info.value.history) == 2

    def test_ball_warning(self):
        pop = _markov_pop(gamma=0.9)
        sc = build_scenarios(pop, TimeGrid(1.0, 8), 512, 1, 3)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            sol = picard_solve(sc, pop, solve_benchmark(sc, pop))
        assert sol.ball_ratio > 1.0
        assert any(issubclass(r.category, BallRadiusWarning) for r in rec)

    def test_theta_shrinkage(self):
        sc = build_scenarios(_markov_pop(), TimeGrid(1.0, 16), 2048, 1, 3)
        b = solve_benchmark(sc, _markov_pop())
        ys, zs = [], []
        for th in (0.5, 0.25, 0.125, 0.0625):
            sol = picard_solve(sc, _markov_pop(th), b)
            ys.append(np.abs(sol.Y_tilde).max())
            zs.append(np.abs(sol.Z0_tilde).max())
        assert np.all(np.diff(ys) < 0) and np.all(np.diff(zs) < 0)
        # theta shrinks eightfold, so both norms should shrink roughly eightfold
        assert ys[-1] < 0.2 * ys[0] and zs[-1] < 0.2 * zs[0]


class TestGirsanov:
    @pytest.mark.parametrize("markov", [False, True])
    def test_mean_one(self, markov):
        pop = _markov_pop() if markov else PopulationSpec.single(tau1_type())
        g = TimeGrid(1.0, 16)
        sc = build_scenarios(pop, g, 20_000, 1, 17)
        b = solve_benchmark(build_scenarios(pop, g, 2048, 1, 3), pop) if markov else solve_benchmark(sc, pop)
        D = girsanov_density(b, sc).terminal[0, :, 0]
        assert abs(D.mean() - 1.0) <= 4 * D.std(ddof=1) / np.sqrt(D.size)
