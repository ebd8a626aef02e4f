import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airfedavg import bound as bd
from airfedavg import constants as cst
from airfedavg.errors import ConfigError

from conftest import make_cfg, make_consts


def aligned(h, eta):
    """Powers that invert each channel exactly."""
    return bd.PowerSchedule(eta[None, :] / h**2, eta)


class TestErrorTerms:
    def test_perfect_alignment(self):
        h = np.array([[1.0, 2.0], [0.5, 1.0]])
        eta = np.array([1.0, 3.0])
        s, ch = aligned(h, eta), bd.ChannelRealization(h)
        assert bd.aggregation_bias_sq(s, ch, [1, 1], 1) == pytest.approx(0, abs=1e-30)
        assert bd.aggregation_mse(s, ch, [1, 1], 0.0, 20, 2) == pytest.approx(0, abs=1e-30)

    def test_single_zero_power(self):
        s = bd.PowerSchedule([[0.0]], [1.0])
        assert bd.aggregation_bias_sq(s, bd.ChannelRealization([[1.0]]), [2.0], 1) == 4

    def test_two_devices(self):
        s = bd.PowerSchedule([[1.0], [1.0]], [4.0])
        ch = bd.ChannelRealization([[1.0], [2.0]])
        assert bd.aggregation_bias_sq(s, ch, [1, 1], 1) == pytest.approx(0.125)
        assert bd.aggregation_mse(s, ch, [1, 1], 1.0, 2, 1) == pytest.approx(0.25)

    def test_noise_only(self):
        h = np.ones((10, 1))
        s = aligned(h, np.array([1.0]))
        assert bd.aggregation_mse(s, bd.ChannelRealization(h), np.ones(10), 1.0, 20, 1) == pytest.approx(0.2)

    def test_rejects_bad_eta(self):
        with pytest.raises(ConfigError):
            bd.PowerSchedule([[1.0]], [0.0])

    def test_rejects_negative_channel(self):
        with pytest.raises(ConfigError):
            bd.ChannelRealization([[-1.0]])

    def test_error_stats_matches_scalar(self, rng):
        h = rng.rayleigh(size=(3, 4))
        s = bd.PowerSchedule(rng.uniform(0, 2, (3, 4)), rng.uniform(0.5, 2, 4))
        ch = bd.ChannelRealization(h)
        W = np.array([1.0, 2.0, 0.5])
        stats = bd.error_stats(s, ch, W, 0.7, 5)
        for t in range(1, 5):
            assert stats.bias_sq[t - 1] == pytest.approx(bd.aggregation_bias_sq(s, ch, W, t))
            assert stats.mse[t - 1] == pytest.approx(bd.aggregation_mse(s, ch, W, 0.7, 5, t))


class TestGenericBound:
    def test_hand_single_iteration(self):
        # gamma_0 = 1, gamma_1 = 1/2, C_1 = 1/2, J_1 = 1, B = 1/2, V = 1
        consts = make_consts(L=1, mu=1, delta=1.0, G=1.0, gap=2.0)
        stats = bd.ErrorStats(np.array([0.1]), np.array([0.2]))
        val = bd.generic_gap_bound(consts, cst.RateSchedule(1, 1), make_cfg(T=1, omega=2), stats)
        # 0.5*2 + (1*2*0.5 + 1*4*1) + 0.5*(0.1/1 + (1*1*2 + 1)*0.2)
        assert val == pytest.approx(6.35)

    def test_zero_errors_zero_gap(self):
        consts = make_consts(K=2, L=1, mu=0.5, delta=0.3, phi_hat=0.4, n_b=2, G=1.0)
        sched, cfg = cst.RateSchedule(10, 1), make_cfg(K=2, T=5, omega=3)
        J = cst.iteration_weights(consts, sched, cfg)
        gam = cst.learning_rates(sched, 5)[:-1]
        B, V = cst.grad_heterogeneity_B(consts, cfg), cst.grad_bound_V(consts, cfg)
        expect = np.sum(J * (gam * 3 * B + gam**2 * 9 * V))
        assert bd.error_free_bound(consts, sched, cfg) == pytest.approx(expect)

    def test_pure_contraction(self):
        consts = make_consts(L=1, mu=0.5, gap=3.0)
        sched, cfg = cst.RateSchedule(10, 1), make_cfg(T=7, omega=4)
        C = cst.contraction_coeffs(consts, sched, cfg)
        assert bd.error_free_bound(consts, sched, cfg) == pytest.approx(np.prod(C) * 3.0)

    def test_length_checked(self):
        with pytest.raises(ConfigError):
            bd.generic_gap_bound(make_consts(), cst.RateSchedule(10, 1), make_cfg(T=2),
                                 bd.ErrorStats(np.zeros(1), np.zeros(1)))

    @settings(max_examples=50)
    @given(st.integers(1, 20), st.floats(0, 5), st.floats(0, 5), st.integers(0, 19))
    def test_monotone_in_errors(self, T, bias, mse, t):
        consts = make_consts(L=1, mu=0.5, delta=0.2, G=1.0, gap=1.0)
        sched, cfg = cst.RateSchedule(10, 1), make_cfg(T=T, omega=3)
        base = bd.ErrorStats(np.full(T, bias), np.full(T, mse))
        b0 = bd.generic_gap_bound(consts, sched, cfg, base)
        t = t % T
        more = base.bias_sq.copy()
        more[t] += 0.1
        assert bd.generic_gap_bound(consts, sched, cfg, bd.ErrorStats(more, base.mse)) > b0
        more = base.mse.copy()
        more[t] += 0.1
        assert bd.generic_gap_bound(consts, sched, cfg, bd.ErrorStats(base.bias_sq, more)) > b0
        assert b0 >= np.prod(cst.contraction_coeffs(consts, sched, cfg)) * consts.initial_gap

    def test_contraction_vanishes(self):
        consts = make_consts(L=1, mu=0.5, gap=1.0)
        sched = cst.RateSchedule(10, 1)
        t1 = bd.gap_bound_terms(consts, sched, make_cfg(T=10, omega=3), bd.ErrorStats(np.zeros(10), np.zeros(10)))
        t2 = bd.gap_bound_terms(consts, sched, make_cfg(T=2000, omega=3),
                                bd.ErrorStats(np.zeros(2000), np.zeros(2000)))
        # (Omega-1) mu beta = 1, so prod_t (1 - 1/(t+a)) telescopes to a / (T + a)
        assert t1.contraction == pytest.approx(10 / 20)
        assert t2.contraction == pytest.approx(10 / 2010)


class TestAirAndOma:
    def setup_method(self):
        self.consts = make_consts(K=3, L=1.1, mu=0.9, delta=0.4, phi_hat=1.0, n_b=10, G=2.0, W=1.5, gap=2.0)
        self.sched = cst.RateSchedule(10, 1)
        self.cfg = make_cfg(K=3, T=6, omega=3, noise=1.0, q=4)

    def test_composition(self, rng):
        h = rng.rayleigh(size=(3, 6))
        s = bd.PowerSchedule(rng.uniform(0, 2, (3, 6)), rng.uniform(0.5, 2, 6))
        ch = bd.ChannelRealization(h)
        stats = bd.error_stats(s, ch, self.consts.model_bound, 1.0, 4)
        assert bd.air_gap_bound(self.consts, self.sched, self.cfg, s, ch) == \
            bd.generic_gap_bound(self.consts, self.sched, self.cfg, stats)

    def test_perfect_alignment_equals_error_free(self, rng):
        h = rng.rayleigh(size=(3, 6)) + 0.1
        s = aligned(h, np.ones(6))
        quiet = make_cfg(K=3, T=6, omega=3, noise=0.0, q=4)
        phi = bd.air_gap_bound(self.consts, self.sched, quiet, s, bd.ChannelRealization(h))
        ef = bd.error_free_bound(self.consts, self.sched, quiet)
        assert phi == pytest.approx(ef, rel=1e-12)
        assert bd.oma_gap_bound(self.consts, self.sched, quiet, 0.0) == ef

    def test_noise_term_monotone(self, rng):
        h = rng.rayleigh(size=(3, 6)) + 0.1
        s = aligned(h, np.ones(6))
        ch = bd.ChannelRealization(h)
        vals = [
            bd.air_gap_bound(self.consts, self.sched, make_cfg(K=3, T=6, omega=3, noise=n, q=4), s, ch)
            for n in (2.0, 1.0, 0.5, 0.0)
        ]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_oma_quant_levels(self):
        from airfedavg.latency import quantizer_variance_factor as qv

        t10 = bd.oma_gap_bound(self.consts, self.sched, self.cfg, qv(4, 10))
        t100 = bd.oma_gap_bound(self.consts, self.sched, self.cfg, qv(4, 100))
        assert t100 < t10
        assert t100 > bd.error_free_bound(self.consts, self.sched, self.cfg)

    def test_oma_rejects_negative(self):
        with pytest.raises(ConfigError):
            bd.oma_gap_bound(self.consts, self.sched, self.cfg, -1.0)
