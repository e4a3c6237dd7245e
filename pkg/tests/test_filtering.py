import math

import numpy as np
import pytest

from wchaos.basis import TimeBasis, subseed
from wchaos.filtering import (FilterModel, NormalizerError, ObservationRecord,
                              estimate, observation_coordinate,
                              observation_coordinate_riemann,
                              posterior_mean_vs_kalman,
                              simulate, simulate_reference_observation,
                              splitting_zakai, truncation_error_study, ufd,
                              zakai_problem, zakai_solve)
from wchaos.multiindex import EMPTY, MultiIndex, TruncationSpec
from wchaos.oracle import kalman_bucy
from wchaos.propagator import TimeGrid, level_energy, solve
from wchaos.spatial import IntervalGrid, imex_step

PRIOR_VAR = 0.25


def prior(x):
    return np.exp(-x**2 / (2 * PRIOR_VAR)) / math.sqrt(2 * math.pi * PRIOR_VAR)


def linear_model(H=1.0):
    return FilterModel(b=lambda x: -x, sigma=1.0, h=lambda x: H * x, u0=prior)


def tanh_model():
    return FilterModel(b=lambda x: -x, sigma=1.0, h=lambda x: np.tanh(x), u0=prior)


GRID = IntervalGrid(-6.0, 6.0, 96)


class TestSimulation:
    def test_reproducible(self):
        t1, X1, Y1 = simulate(linear_model(), 0.5, 100, seed=4)
        t2, X2, Y2 = simulate(linear_model(), 0.5, 100, seed=4)
        assert np.array_equal(X1, X2) and np.array_equal(Y1, Y2)

    def test_h_zero_gives_wiener_observation(self):
        model = FilterModel(b=0.0, sigma=1.0, h=0.0, u0=prior)
        qvs = []
        for s in range(200):
            _t, _X, Y = simulate(model, 1.0, 100, seed=s)
            qvs.append(np.sum(np.diff(Y) ** 2))
        qv = np.mean(qvs)
        se = np.std(qvs) / math.sqrt(len(qvs))
        assert abs(qv - 1.0) < 3 * se + 0.02

    def test_brownian_state_variance(self):
        model = FilterModel(b=0.0, sigma=1.0, h=0.0, u0=prior)
        finals = [simulate(model, 1.0, 100, seed=1000 + s)[1][-1] for s in range(2000)]
        var = np.var(finals)
        want = PRIOR_VAR + 1.0
        assert abs(var - want) < 3 * want * math.sqrt(2.0 / 2000)

    def test_deterministic_drift_limit(self):
        # sigma -> 0 with a point-mass-ish prior: X follows the ODE flow
        tight = lambda x: np.exp(-x**2 / (2 * 1e-6))
        model = FilterModel(b=lambda x: -x, sigma=1e-9, h=0.0, u0=tight)
        t, X, _ = simulate(model, 1.0, 400, seed=2)
        assert np.abs(X - X[0] * np.exp(-t)).max() < 5e-3


class TestObservationCoordinates:
    def test_ibp_matches_riemann_at_rate_dt(self):
        # the two estimators agree to O(dt) in rms over paths
        T = 0.5
        basis = TimeBasis(T, 8)

        def rms_gap(steps):
            gaps = []
            for s in range(50):
                _t, Y = simulate_reference_observation(T, steps, 900 + s)
                t = np.linspace(0, T, steps + 1)
                for i in (2, 5, 8):
                    a = observation_coordinate(basis, i, t, Y)
                    b = observation_coordinate_riemann(basis, i, t, Y)
                    gaps.append(a - b)
            return float(np.sqrt(np.mean(np.square(gaps))))

        g400, g1600 = rms_gap(400), rms_gap(1600)
        assert g1600 < 0.5 * g400

    def test_constant_mode_coordinate_exact(self):
        # int m_1 dY = Y(T)/sqrt(T) for both estimators, any path
        T, steps = 0.5, 100
        basis = TimeBasis(T, 4)
        _t, Y = simulate_reference_observation(T, steps, 3)
        t = np.linspace(0, T, steps + 1)
        want = Y[-1] / math.sqrt(T)
        assert observation_coordinate(basis, 1, t, Y) == pytest.approx(want, rel=1e-12)
        assert observation_coordinate_riemann(basis, 1, t, Y) == pytest.approx(want, rel=1e-12)

    def test_record_shape(self):
        T = 0.5
        t, Y = simulate_reference_observation(T, 100, 3)
        obs = ObservationRecord(t, Y, TimeBasis(T, 6))
        assert obs.xi.shape == (6, 1)
        # the first coordinate is Y(T)/sqrt(T) exactly
        assert obs.xi[0, 0] == pytest.approx(Y[-1] / math.sqrt(T), rel=1e-12)


class TestZakai:
    def test_h_zero_reduces_to_fokker_planck(self):
        model = FilterModel(b=lambda x: -x, sigma=1.0, h=0.0, u0=prior)
        sol = zakai_solve(model, GRID, TruncationSpec(2, 4, 1), TimeGrid(0.5, 250),
                          save="ends")
        assert level_energy(sol, 1, 0.5) + level_energy(sol, 2, 0.5) == 0.0
        w = GRID.trapz_weights()
        mass0 = sol.data[0, 0] @ w
        massT = sol.data[-1, 0] @ w
        assert abs(massT - mass0) < 1e-6

    def test_mean_block_matches_unconditional_kalman(self):
        # u_empty is the Fokker-Planck density; its mean/variance follow the
        # zero-gain Kalman (moment) ODEs
        model = linear_model()
        T = 0.5
        sol = zakai_solve(model, GRID, TruncationSpec(3, 4, 1), TimeGrid(T, 500),
                          save=[T])
        x = GRID.x
        w = GRID.trapz_weights()
        dens = sol.data[-1, 0]
        mass = dens @ w
        mean = (dens * x) @ w / mass
        var = (dens * x**2) @ w / mass - mean**2
        want_var = (PRIOR_VAR - 0.5) * math.exp(-2 * T) + 0.5  # P' = -2P + 1
        assert mean == pytest.approx(0.0, abs=1e-6)
        assert var == pytest.approx(want_var, abs=2e-4)

    def test_level_one_nested_quadrature(self):
        # u_(i1)(T) against direct IMEX integration of the level-1 source,
        # m_i integrated exactly against the interpolated parent factor
        model = tanh_model()
        T, steps = 0.5, 250
        tgrid = TimeGrid(T, steps)
        prob = zakai_problem(model, GRID, TruncationSpec(1, 4, 1), tgrid)
        sol = solve(prob, save="all")
        op = prob.op.build()
        WL, WR = prob.basis.step_weights(tgrid.t)
        u0_traj = sol.data[:, 0]  # Fokker-Planck trajectory
        hvals = model.h_at(GRID.x)
        dt = tgrid.dt
        for i in (1, 3):
            v = np.zeros(GRID.nx)
            for j in range(steps):
                s0 = (2.0 / dt) * WL[i - 1, j] * hvals * u0_traj[j]
                s1 = (2.0 / dt) * WR[i - 1, j] * hvals * u0_traj[j + 1]
                v = imex_step(op, v, dt, s0, s1)
            a = MultiIndex.make({(i, 1): 1})
            got = sol.values_at(a, T)
            assert GRID.norm(got - v) < 1e-8


class TestEstimates:
    def _solution(self, model, N=3, n=6, T=0.5, steps=250):
        tg = TimeGrid(T, steps)
        sol = zakai_solve(model, GRID, TruncationSpec(N, n, 1), tg,
                          save=[0.0, T / 2, T])
        return sol, tg

    def test_h_zero_ufd_ignores_observations(self):
        model = FilterModel(b=lambda x: -x, sigma=1.0, h=0.0, u0=prior)
        sol, tg = self._solution(model)
        t, Y = simulate_reference_observation(0.5, 250, 5)
        obs = ObservationRecord(t, Y, sol.problem.basis)
        got = ufd(sol, obs, 0.5)
        assert np.allclose(got, sol.values_at(EMPTY, 0.5))

    def test_normalized_one_is_trivial(self):
        model = FilterModel(b=lambda x: -x, sigma=1.0, h=0.0, u0=prior)
        sol, _ = self._solution(model)
        t, Y = simulate_reference_observation(0.5, 250, 6)
        obs = ObservationRecord(t, Y, sol.problem.basis)
        est = estimate(sol, obs, lambda x: np.ones_like(x), 0.5)
        assert est["normalized"] == pytest.approx(1.0, rel=1e-12)

    def test_prior_rescaling_invariance(self):
        model = linear_model()
        model2 = FilterModel(b=model.b, sigma=model.sigma, h=model.h,
                             u0=lambda x: 7.0 * prior(x))
        sol1, _ = self._solution(model)
        sol2, _ = self._solution(model2)
        _t, _X, Y = simulate(model, 0.5, 250, seed=8)
        tarr = np.linspace(0, 0.5, 251)
        obs = ObservationRecord(tarr, Y, sol1.problem.basis)
        e1 = estimate(sol1, obs, lambda x: x, 0.5)
        e2 = estimate(sol2, obs, lambda x: x, 0.5)
        assert e2["unnormalized"] == pytest.approx(7.0 * e1["unnormalized"], rel=1e-12)
        assert e2["normalized"] == pytest.approx(e1["normalized"], rel=1e-12)

    def test_near_zero_normalizer_raises(self):
        from wchaos.chaos_field import apply_weights, WeightSequence

        model = linear_model()
        sol, _ = self._solution(model)
        dead = sol.scaled(np.zeros(len(sol.indices)))
        _t, _X, Y = simulate(model, 0.5, 250, seed=8)
        tarr = np.linspace(0, 0.5, 251)
        obs = ObservationRecord(tarr, Y, sol.problem.basis)
        with pytest.raises(NormalizerError):
            estimate(dead, obs, lambda x: x, 0.5)

    def test_posterior_moments_track_kalman(self):
        # f(x) = x and f(x) = x^2 against the Kalman-Bucy posterior
        model = linear_model()
        sol, tg = self._solution(model, N=4, n=8)
        errs_mean, errs_second = [], []
        for rep in range(4):
            _t, _X, Y = simulate(model, 0.5, 250, seed=subseed(77, f"r{rep}"))
            tarr = np.linspace(0, 0.5, 251)
            obs = ObservationRecord(tarr, Y, sol.problem.basis)
            kb = kalman_bucy(-1.0, 1.0, 1.0, 0.0, PRIOR_VAR, tarr, Y)
            e1 = estimate(sol, obs, lambda x: x, 0.5)["normalized"]
            e2 = estimate(sol, obs, lambda x: x * x, 0.5)["normalized"]
            errs_mean.append(abs(e1 - kb.mean[-1]))
            errs_second.append(abs(e2 - (kb.mean[-1] ** 2 + kb.var[-1])))
        assert np.mean(errs_mean) < 0.05
        assert np.mean(errs_second) < 0.08

    def test_error_ordering_in_N(self):
        # no-observation filter (N=0) is worse than N=2 against the reference
        model = tanh_model()
        T, steps = 0.5, 250
        tg = TimeGrid(T, steps)
        sol = zakai_solve(model, GRID, TruncationSpec(4, 6, 1), tg, save=[T])
        orders = np.array([a.order for a in sol.indices])
        w = GRID.trapz_weights()
        tail0 = float(np.sum((np.abs(sol.data[-1][orders > 0]) ** 2) @ w))
        tail2 = float(np.sum((np.abs(sol.data[-1][orders > 2]) ** 2) @ w))
        assert tail0 > tail2


class TestSplittingReference:
    def test_matches_fokker_planck_when_h_small(self):
        model = FilterModel(b=lambda x: -x, sigma=1.0, h=0.0, u0=prior)
        t = np.linspace(0, 0.5, 251)
        Y = np.zeros_like(t)
        got = splitting_zakai(model, GRID, t, Y, substeps=2)
        sol = zakai_solve(model, GRID, TruncationSpec(0, 1, 1), TimeGrid(0.5, 500),
                          save=[0.5])
        assert GRID.norm(got - sol.values_at(EMPTY, 0.5)) < 1e-6

    def test_richardson_self_convergence(self):
        model = tanh_model()
        t, Y = simulate_reference_observation(0.5, 250, 12)
        tarr = np.linspace(0, 0.5, 251)
        u1 = splitting_zakai(model, GRID, tarr, Y, substeps=1)
        u2 = splitting_zakai(model, GRID, tarr, Y, substeps=4)
        u3 = splitting_zakai(model, GRID, tarr, Y, substeps=16)
        assert GRID.norm(u2 - u3) < GRID.norm(u1 - u3)


class TestStudy:
    def test_quick_study(self):
        model = tanh_model()
        res = truncation_error_study(model, GRID, T=0.5, solver_steps=250,
                                     N_ladder=[1, 2, 3], n_ladder=[4, 8],
                                     N_fixed=3, n_fixed=6, N_ref=5,
                                     replications=40, seed=14, h_inf=1.0)
        rows = {r.value: r for r in res["N_rows"]}
        assert rows[1].error > rows[2].error > rows[3].error
        for N in (2, 3):
            assert rows[N].ratio <= 2.0 * rows[N].bound
        # MC error within a few standard errors of the exact tail identity
        for N in (1, 2, 3):
            assert rows[N].error == pytest.approx(res["exact_tail"][N], rel=0.8)
        ns = {r.value: r.error for r in res["n_rows"]}
        assert ns[8] < ns[4]
