import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airfedavg import constants as cst
from airfedavg import data
from airfedavg.errors import ConfigError

from conftest import make_cfg, make_consts


class TestLearningRate:
    def test_default_schedule(self):
        assert cst.learning_rate(cst.RateSchedule(10, 1), 1) == pytest.approx(1 / 11)

    def test_t0(self):
        assert cst.learning_rate(cst.RateSchedule(10, 1), 0) == pytest.approx(0.1)

    def test_other(self):
        assert cst.learning_rate(cst.RateSchedule(1, 2), 3) == pytest.approx(0.5)

    def test_rates_vector(self):
        g = cst.learning_rates(cst.RateSchedule(10, 1), 3)
        np.testing.assert_allclose(g, [1 / 10, 1 / 11, 1 / 12, 1 / 13])

    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.integers(0, 1000))
    def test_positive_decreasing(self, a, beta, t):
        s = cst.RateSchedule(a, beta)
        assert 0 < cst.learning_rate(s, t + 1) < cst.learning_rate(s, t)

    def test_rejects_bad_schedule(self):
        with pytest.raises(ConfigError):
            cst.RateSchedule(0, 1)


class TestContraction:
    def test_hand_value(self):
        # gamma_1 = 1/11 with a=10, beta=1
        c = cst.contraction_coeff(make_consts(L=1, mu=1), cst.RateSchedule(10, 1), make_cfg(T=3, omega=5), 1)
        assert c == pytest.approx(7 / 11)

    def test_boundary_beta(self):
        # a=1, beta=1: gamma_1 = 0.5
        c = cst.contraction_coeff(make_consts(L=1, mu=1), cst.RateSchedule(1, 1), make_cfg(T=1, omega=2), 1)
        assert c == pytest.approx(0.5)

    def test_mu_zero(self):
        c = cst.contraction_coeff(make_consts(L=1, mu=0), cst.RateSchedule(10, 1), make_cfg(T=2, omega=5), 2)
        assert c == 1.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            cst.contraction_coeffs(make_consts(L=1, mu=1), cst.RateSchedule(1, 10), make_cfg(T=2, omega=5))


class TestIterationWeights:
    def test_last_is_one(self):
        J = cst.iteration_weights(make_consts(mu=0.5), cst.RateSchedule(10, 1), make_cfg(T=4, omega=3))
        assert J[-1] == 1.0

    def test_product(self, monkeypatch):
        monkeypatch.setattr(cst, "contraction_coeffs", lambda *a: np.array([0.5, 0.5, 0.5]))
        assert cst.iteration_weight(None, None, make_cfg(T=3), 1) == pytest.approx(0.25)

    @given(st.integers(1, 60), st.integers(2, 10), st.floats(0.05, 1.0))
    def test_nondecreasing(self, T, omega, mu):
        consts = make_consts(L=1.0, mu=mu)
        sched = cst.RateSchedule(10.0 * omega, 1.0)
        cfg = make_cfg(T=T, omega=omega)
        C = cst.contraction_coeffs(consts, sched, cfg)
        J = cst.iteration_weights(consts, sched, cfg)
        assert np.all((C > 0) & (C < 1))
        assert np.all(np.diff(C) > 0)
        assert np.all(np.diff(J) >= 0)


class TestHeterogeneity:
    def test_zero(self):
        assert cst.grad_heterogeneity_B(make_consts(K=3), make_cfg(K=3)) == 0

    def test_single(self):
        assert cst.grad_heterogeneity_B(make_consts(delta=2.0), make_cfg()) == pytest.approx(2.0)

    def test_two_devices(self):
        c = make_consts(K=2, delta=1.0, phi_hat=math.sqrt(2), n_b=2)
        assert cst.grad_heterogeneity_B(c, make_cfg(K=2)) == pytest.approx(1.0)

    def test_V(self):
        assert cst.grad_bound_V(make_consts(G=0.0), make_cfg()) == 0
        assert cst.grad_bound_V(make_consts(L=2, mu=1, G=3.0), make_cfg()) == pytest.approx(18)
        c = make_consts(K=2, L=1, mu=1)
        c = cst.LearningConstants(**{**c.__dict__, "grad_bound": np.array([1.0, 2.0])})
        assert cst.grad_bound_V(c, make_cfg(K=2)) == pytest.approx(2.5)


class TestObjectiveCoeffs:
    def test_L_zero(self, monkeypatch):
        monkeypatch.setattr(cst, "iteration_weights", lambda *a: np.array([1.0]))
        consts = make_consts(L=0.0, mu=0.0)
        # a=1, beta=1 gives gamma_0 = 1
        a, b, c = cst.objective_coeffs(consts, cst.RateSchedule(1, 1), make_cfg(T=1), 1)
        assert (a, b) == (0.5, 0.0)

    def test_c(self):
        c = make_consts(K=4, mu=0.5, W=1.0)
        _, _, ck = cst.objective_coeffs(c, cst.RateSchedule(10, 1), make_cfg(K=4, T=1), 1)
        np.testing.assert_allclose(ck, 0.25)

    def test_hand_values(self, monkeypatch):
        monkeypatch.setattr(cst, "iteration_weights", lambda *a: np.array([1.0]))
        consts = make_consts(K=10, L=1.0, mu=0.1)
        # gamma_0 = 0.1 with a=10, beta=1
        a, b, _ = cst.objective_coeffs(consts, cst.RateSchedule(10, 1), make_cfg(K=10, T=1, omega=5), 1)
        assert a == pytest.approx(5.75)
        assert b == pytest.approx(0.0075)

    def test_positive(self):
        consts = make_consts(K=3, L=1.2, mu=0.5, W=2.0)
        co = cst.objective_coeff_arrays(consts, cst.RateSchedule(20, 1), make_cfg(K=3, T=15, omega=4))
        assert np.all(co.a > 0) and np.all(co.b > 0) and np.all(co.c > 0)


class TestConfigValidation:
    def test_budget_order(self):
        with pytest.raises(ConfigError):
            make_cfg(pmax=0.5, pave=1.0)

    def test_omega(self):
        with pytest.raises(ConfigError):
            make_cfg(omega=1)

    def test_mu_above_L(self):
        with pytest.raises(ConfigError):
            make_consts(L=1.0, mu=2.0)

    def test_theorem_conditions(self):
        consts = make_consts(L=1.0, mu=1.0)
        assert cst.theorem_condition_violations(consts, cst.RateSchedule(10, 1), 2) == []
        assert cst.theorem_condition_violations(consts, cst.RateSchedule(10, 0.5), 2)
        assert cst.theorem_condition_violations(consts, cst.RateSchedule(1, 1), 3)


class TestEstimation:
    def test_identity_gramian(self):
        q = 5
        x = np.eye(q)
        ds = data.SyntheticDataset(x, np.zeros(q), (np.arange(q),))
        c = cst.estimate_constants_from_data(ds, 1)
        assert c.smoothness == pytest.approx(1 / q + 1e-4)
        assert c.pl_constant == pytest.approx(1 / q + 1e-4)
        np.testing.assert_allclose(c.extra["w_star"], 0)
        assert c.optimum_loss == 0

    def test_recovers_weights(self):
        rng = np.random.default_rng(0)
        ds = data.generate_synthetic_dataset(20, 10_000, 10, rng)
        c = cst.estimate_constants_from_data(ds, 500)
        w = c.extra["w_star"]
        # standard error of each coefficient ~ 0.2 / sqrt(n)
        se = 0.2 / math.sqrt(10_000)
        assert abs(w[1] - 1) < 4 * se and abs(w[4] - 3) < 4 * se
        assert np.all(np.abs(np.delete(w, [1, 4])) < 4 * se)
        assert c.pl_constant <= c.smoothness

    def test_noiseless(self):
        rng = np.random.default_rng(1)
        ds = data.generate_synthetic_dataset(8, 400, 4, rng, noise_coeff=0.0)
        c = cst.estimate_constants_from_data(ds, 50)
        np.testing.assert_allclose(c.extra["w_star"], data.true_weights(8), atol=1e-12)
        assert c.optimum_loss == pytest.approx(0, abs=1e-20)

    def test_model_and_grad_bounds(self):
        rng = np.random.default_rng(2)
        ds = data.generate_synthetic_dataset(20, 2000, 4, rng)
        c = cst.estimate_constants_from_data(ds, 100)
        ws = np.linalg.norm(c.extra["w_star"])
        np.testing.assert_allclose(c.model_bound**2, 1.1 * ws**2)
        np.testing.assert_allclose(c.grad_bound, 2 * c.model_bound * c.smoothness)
        assert c.initial_gap > 0

    def test_deterministic(self):
        ds = data.generate_synthetic_dataset(20, 1000, 5, np.random.default_rng(3))
        a = cst.estimate_constants_from_data(ds, 100)
        b = cst.estimate_constants_from_data(ds, 100)
        for name, va in a.__dict__.items():
            if name != "extra":
                np.testing.assert_array_equal(va, getattr(b, name))

    def test_singular(self):
        x = np.zeros((6, 5))
        x[:, 0] = 1
        ds = data.SyntheticDataset(x, np.ones(6), (np.arange(6),))
        with pytest.raises(ConfigError, match="singular"):
            cst.estimate_constants_from_data(ds, 2)
        c = cst.estimate_constants_from_data(ds, 2, ridge_coeff=0.1)
        assert np.isfinite(c.optimum_loss)

    def test_phi_hat_matches_monte_carlo(self):
        rng = np.random.default_rng(4)
        ds = data.generate_synthetic_dataset(6, 200, 1, rng)
        n_b = 20
        c = cst.estimate_constants_from_data(ds, n_b)
        x, y = ds.shard(0)
        g = data.gradient(np.zeros(6), x, y)
        draws = []
        for _ in range(20_000):
            idx = rng.permutation(200)[:n_b]
            d = data.gradient(np.zeros(6), x[idx], y[idx]) - g
            draws.append(d @ d)
        assert c.grad_variance_hat[0] ** 2 / n_b == pytest.approx(np.mean(draws), rel=0.03)
