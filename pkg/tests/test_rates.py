import math

import numpy as np
import pytest

from conicredit.curves import DiscountCurve
from conicredit.errors import DomainError
from conicredit.rates import ShiftedVasicek, VasicekParams, forward_rate, step_rate

# parameter set used in the swap-exposure experiments
PARAMS = VasicekParams(gamma=0.4, theta=0.026, sigma=0.14, r0=0.0165)


@pytest.fixture(scope="module")
def model():
    return ShiftedVasicek(PARAMS, DiscountCurve.flat(0.03))


class TestZcb:
    def test_maturity_identity(self, model):
        assert model.zcb(2.0, 2.0, 0.05) == pytest.approx(1.0, abs=1e-14)

    def test_initial_curve_fit_flat_3pct(self, model):
        # the shift makes P_0(T) match the flat curve exactly
        assert model.zcb(0.0, 5.0, PARAMS.r0) == pytest.approx(math.exp(-0.15), abs=1e-13)

    def test_shift_fit_sup_norm(self, model):
        T = np.linspace(0.0, 10.0, 401)
        fit = model.zcb(np.zeros_like(T), T, PARAMS.r0)
        target = np.exp(-0.03 * T)
        assert np.max(np.abs(fit - target)) < 1e-12

    def test_deterministic_limit_no_shift(self):
        # sigma = 0 and r0 = theta: flat short rate, P = e^{-r T}
        params = VasicekParams(gamma=1.3, theta=0.03, sigma=0.0, r0=0.03)
        model = ShiftedVasicek(params, DiscountCurve.flat(0.03))
        assert model.base_zcb(0.0, 1.0, 0.03) == pytest.approx(math.exp(-0.03), abs=1e-14)

    def test_domain_error(self, model):
        with pytest.raises(DomainError):
            model.zcb(2.0, 1.0, 0.03)

    def test_affine_coeffs_consistent(self, model):
        log_const, b = model.affine_coeffs(1.25, 4.0)
        for x in (0.0, 0.03, -0.02):
            assert math.exp(log_const - b * x) == pytest.approx(
                model.zcb(1.25, 4.0, x), rel=1e-14
            )


class TestForwardRate:
    def test_equal_prices_zero(self):
        assert forward_rate(0.97, 0.97, 0.25) == 0.0

    def test_arithmetic(self):
        assert forward_rate(1.0, 0.99, 0.25) == pytest.approx(0.0404040404, abs=1e-9)
        assert forward_rate(0.98, 0.97, 0.25) == pytest.approx(0.0412371134, abs=1e-9)

    def test_invalid_inputs(self):
        with pytest.raises(DomainError):
            forward_rate(1.0, 0.99, 0.0)
        with pytest.raises(DomainError):
            forward_rate(1.0, -0.99, 0.25)


class TestStepRate:
    def test_fixed_point_at_theta(self):
        params = VasicekParams(gamma=0.4, theta=0.026, sigma=0.0, r0=0.026)
        assert step_rate(params, 0.026, 0.5, 0.0) == pytest.approx(0.026, abs=1e-15)

    def test_mean_matches_first_order(self):
        # exact mean vs Euler drift over a short step
        got = step_rate(PARAMS, 0.0165, 0.01, 0.0)
        taylor = 0.0165 + 0.4 * (0.026 - 0.0165) * 0.01
        assert got == pytest.approx(taylor, abs=2e-7)
        exact = 0.026 + (0.0165 - 0.026) * math.exp(-0.4 * 0.01)
        assert got == pytest.approx(exact, abs=1e-16)

    def test_variance_closed_form(self):
        # sample variance of exact steps vs sigma^2 (1 - e^{-2 gamma dt}) / (2 gamma)
        rng = np.random.default_rng(0)
        z = rng.standard_normal(200_000)
        r1 = step_rate(PARAMS, 0.0165, 1.0, z)
        var_target = 0.14**2 * (1.0 - math.exp(-0.8)) / 0.8
        assert np.var(r1) == pytest.approx(var_target, rel=0.02)

    def test_mc_zcb_consistency(self, model):
        # E[exp(-int r)] over exact-stepped paths matches the closed form
        # within 3 standard errors for T in {1, 5, 10}
        rng = np.random.default_rng(42)
        n, dt = 100_000, 0.01
        for T in (1.0, 5.0, 10.0):
            steps = int(round(T / dt))
            x = np.full(n, PARAMS.r0)
            t_nodes = np.linspace(0.0, T, steps + 1)
            shift = model.shift(t_nodes)
            integral = np.zeros(n)
            for k in range(steps):
                x_next = model.step(x, dt, rng.standard_normal(n))
                r_now = x + shift[k]
                r_next = x_next + shift[k + 1]
                integral += 0.5 * (r_now + r_next) * dt
                x = x_next
            disc = np.exp(-integral)
            se = disc.std() / math.sqrt(n)
            assert abs(disc.mean() - model.zcb(0.0, T, PARAMS.r0)) < 3.0 * se

    def test_martingale_discounted_bond(self, model):
        # discounted P_t(10) along simulated paths has no drift:
        # E[P_t(10)/beta_t] = P_0(10) within MC error
        rng = np.random.default_rng(7)
        n, dt, t_end = 100_000, 0.01, 2.0
        steps = int(round(t_end / dt))
        x = np.full(n, PARAMS.r0)
        t_nodes = np.linspace(0.0, t_end, steps + 1)
        shift = model.shift(t_nodes)
        integral = np.zeros(n)
        for k in range(steps):
            x_next = model.step(x, dt, rng.standard_normal(n))
            integral += 0.5 * (x + shift[k] + x_next + shift[k + 1]) * dt
            x = x_next
        vals = model.zcb(t_end, 10.0, x) * np.exp(-integral)
        se = vals.std() / math.sqrt(n)
        assert abs(vals.mean() - model.zcb(0.0, 10.0, PARAMS.r0)) < 3.0 * se
