import math

import numpy as np
import pytest

from conicredit.affine import (
    NO_JUMPS,
    CirParams,
    JumpParams,
    bond_curve,
    cir_bond,
    inverse_bond,
    jcir_bond,
    jump_log_factor,
    log_bond_slope,
    step_cir_qe,
    step_jcir,
)
from conicredit.errors import DomainError, NumericError

# calibrated parameter sets quoted in the experiments
TC_PARAMS = CirParams(kappa=0.0624, beta=0.2975, delta=0.3343, x0=0.0)
PS_PARAMS = CirParams(kappa=0.4382, beta=0.0086, delta=0.0396, x0=0.1051)
PS_JUMPS = JumpParams(omega=9.5619e-10, alpha=3.1508e-10)


def simulate_integrated(params, jumps, T, n, steps, seed, scheme="euler"):
    """Brute-force oracle: simulated paths of x and trapezoid of int x."""
    rng = np.random.default_rng(seed)
    dt = T / steps
    x = np.full(n, params.x0)
    integral = np.zeros(n)
    for _ in range(steps):
        if scheme == "euler":
            draws = (rng.random(n), rng.random(n)) if jumps.omega > 0.0 else None
            x_next = step_jcir(params, jumps, x, dt, rng.standard_normal(n), draws)
        else:
            x_next = step_cir_qe(params, x, dt, rng.random(n))
            if jumps.omega > 0.0:
                from conicredit.affine import jump_increment

                x_next = x_next + jump_increment(jumps, dt, rng.random(n), rng.random(n))
        integral += 0.5 * (np.maximum(x, 0) + np.maximum(x_next, 0)) * dt
        x = x_next
    return x, integral


class TestCirBond:
    def test_maturity_identity(self):
        assert cir_bond(TC_PARAMS, 3.0, 3.0, 0.1) == 1.0

    def test_deterministic_limit(self):
        # delta = kappa = 0: x frozen at z, P = e^{-z tau}
        params = CirParams(kappa=0.0, beta=0.0, delta=0.0, x0=0.02)
        assert cir_bond(params, 0.0, 1.0, 0.02) == pytest.approx(
            math.exp(-0.02), abs=1e-14
        )

    def test_deterministic_mean_reversion(self):
        # delta = 0, kappa > 0: closed form equals the integral of the ODE path
        params = CirParams(kappa=0.5, beta=0.03, delta=0.0, x0=0.08)
        tau = 4.0
        expected = math.exp(
            -(0.03 * tau + (0.08 - 0.03) * (1 - math.exp(-0.5 * tau)) / 0.5)
        )
        assert cir_bond(params, 0.0, tau, 0.08) == pytest.approx(expected, rel=1e-12)

    def test_monotone_decreasing_in_T(self):
        taus = np.linspace(0.0, 15.0, 200)
        vals = cir_bond(TC_PARAMS, 0.0, taus, TC_PARAMS.x0)
        assert np.all(np.diff(vals) < 0)

    def test_time_homogeneous(self):
        assert cir_bond(PS_PARAMS, 1.0, 3.0, 0.05) == pytest.approx(
            cir_bond(PS_PARAMS, 4.0, 6.0, 0.05), rel=1e-15
        )

    def test_domain_error(self):
        with pytest.raises(DomainError):
            cir_bond(TC_PARAMS, 2.0, 1.0, 0.1)

    @pytest.mark.parametrize("T", [1.0, 5.0])
    def test_mc_oracle_tc_params_qe(self, T):
        # Monte Carlo E[exp(-int x)] vs closed form at the time-change
        # parameter point (x0 = 0, Feller violated: the regime where Euler's
        # weak error dwarfs the MC band and the QE scheme is required)
        steps = int(round(T / 0.01))
        x, integral = simulate_integrated(
            TC_PARAMS, NO_JUMPS, T, 100_000, steps, 11, scheme="qe"
        )
        disc = np.exp(-integral)
        se = disc.std() / math.sqrt(len(disc))
        closed = bond_curve(TC_PARAMS, NO_JUMPS, T)
        assert abs(disc.mean() - closed) < 3.0 * se

    def test_mc_oracle_ps_params_euler(self):
        # Feller satisfied, state away from zero: plain Euler holds the band
        # over a 1y horizon (a slight O(dt) drift accumulates by 5y)
        x, integral = simulate_integrated(PS_PARAMS, NO_JUMPS, 1.0, 100_000, 100, 11)
        disc = np.exp(-integral)
        se = disc.std() / math.sqrt(len(disc))
        closed = bond_curve(PS_PARAMS, NO_JUMPS, 1.0)
        assert abs(disc.mean() - closed) < 3.0 * se

    @pytest.mark.parametrize("T", [1.0, 5.0])
    def test_mc_oracle_ps_params_qe(self, T):
        steps = int(round(T / 0.01))
        x, integral = simulate_integrated(
            PS_PARAMS, NO_JUMPS, T, 100_000, steps, 11, scheme="qe"
        )
        disc = np.exp(-integral)
        se = disc.std() / math.sqrt(len(disc))
        closed = bond_curve(PS_PARAMS, NO_JUMPS, T)
        assert abs(disc.mean() - closed) < 3.0 * se

    def test_euler_biased_at_tc_params(self):
        # documents why the QE scheme is the default: at dt = 0.01 the Euler
        # bond estimate is far outside the Monte Carlo band
        x, integral = simulate_integrated(TC_PARAMS, NO_JUMPS, 5.0, 50_000, 500, 11)
        disc = np.exp(-integral)
        se = disc.std() / math.sqrt(len(disc))
        closed = bond_curve(TC_PARAMS, NO_JUMPS, 5.0)
        assert abs(disc.mean() - closed) > 10.0 * se


class TestJcirBond:
    def test_no_jump_reduction(self):
        taus = np.linspace(0.0, 10.0, 50)
        with_j = jcir_bond(PS_PARAMS, JumpParams(0.0, 2.0), 0.0, taus, PS_PARAMS.x0)
        without = cir_bond(PS_PARAMS, 0.0, taus, PS_PARAMS.x0)
        assert np.array_equal(with_j, without)

    def test_published_jumps_negligible(self):
        # omega ~ 1e-9: indistinguishable from the pure CIR bond
        taus = np.linspace(0.01, 10.0, 100)
        with_j = jcir_bond(PS_PARAMS, PS_JUMPS, 0.0, taus, PS_PARAMS.x0)
        without = cir_bond(PS_PARAMS, 0.0, taus, PS_PARAMS.x0)
        assert np.max(np.abs(with_j / without - 1.0)) < 1e-6

    def test_jump_factor_against_quadrature(self):
        from scipy.integrate import quad

        params = CirParams(kappa=0.5, beta=0.05, delta=0.1, x0=0.04)
        jumps = JumpParams(omega=0.1, alpha=2.0)

        def integrand(s):
            g = math.sqrt(params.kappa**2 + 2 * params.delta**2)
            e = math.expm1(g * s)
            b = 2 * e / (2 * g + (params.kappa + g) * e)
            return b / (jumps.alpha + b)

        for tau in (0.5, 1.0, 5.0, 10.0):
            expected = -jumps.omega * quad(integrand, 0.0, tau)[0]
            assert jump_log_factor(params, jumps, tau) == pytest.approx(
                expected, abs=1e-12
            )

    @pytest.mark.parametrize("scheme", ["euler", "qe"])
    def test_mc_oracle_with_jumps(self, scheme):
        params = CirParams(kappa=0.5, beta=0.05, delta=0.1, x0=0.05)
        jumps = JumpParams(omega=0.1, alpha=2.0)
        x, integral = simulate_integrated(params, jumps, 1.0, 400_000, 200, 3, scheme)
        disc = np.exp(-integral)
        se = disc.std() / math.sqrt(len(disc))
        closed = bond_curve(params, jumps, 1.0)
        assert abs(disc.mean() - closed) < 3.0 * se

    def test_pole_raises(self):
        params = CirParams(kappa=0.2, beta=0.05, delta=0.3, x0=0.05)
        g = math.sqrt(params.kappa**2 + 2 * params.delta**2)
        alpha_pole = 2.0 / (g - params.kappa)
        with pytest.raises(DomainError, match="pole"):
            jump_log_factor(params, JumpParams(omega=0.1, alpha=alpha_pole), 1.0)


class TestInverseBond:
    def test_p_one_gives_zero(self):
        assert inverse_bond(TC_PARAMS, NO_JUMPS, 1.0) == 0.0

    def test_round_trip(self):
        p = bond_curve(TC_PARAMS, NO_JUMPS, 3.7)
        assert inverse_bond(TC_PARAMS, NO_JUMPS, float(p)) == pytest.approx(
            3.7, abs=1e-9
        )

    def test_deterministic_inversion(self):
        # x = 0.02 frozen: P = e^{-0.02 t}; p = e^{-0.05} inverts to 2.5
        params = CirParams(kappa=0.0, beta=0.0, delta=0.0, x0=0.02)
        assert inverse_bond(params, NO_JUMPS, math.exp(-0.05)) == pytest.approx(
            2.5, abs=1e-10
        )

    def test_grid_round_trip_tolerance(self):
        for t in np.linspace(0.5, 12.0, 24):
            p = float(bond_curve(PS_PARAMS, NO_JUMPS, t))
            assert abs(inverse_bond(PS_PARAMS, NO_JUMPS, p) - t) < 1e-9

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            inverse_bond(TC_PARAMS, NO_JUMPS, 0.0)
        with pytest.raises(DomainError):
            inverse_bond(TC_PARAMS, NO_JUMPS, 1.5)

    def test_unreachable_level(self):
        # frozen x = 0: the bond never decays
        params = CirParams(kappa=0.0, beta=0.0, delta=0.0, x0=0.0)
        with pytest.raises(NumericError, match="unreachable"):
            inverse_bond(params, NO_JUMPS, 0.5)


class TestStepJcir:
    def test_fixed_point(self):
        params = CirParams(kappa=0.4, beta=0.05, delta=0.0, x0=0.05)
        assert step_jcir(params, NO_JUMPS, 0.05, 0.01, 0.0) == pytest.approx(
            0.05, abs=1e-15
        )

    def test_drift_arithmetic(self):
        got = step_jcir(PS_PARAMS, NO_JUMPS, 0.1, 0.01, 0.0)
        assert got == pytest.approx(0.1 + 0.4382 * (0.0086 - 0.1) * 0.01, abs=1e-15)

    def test_jump_mass_mean(self):
        # mean added jump mass over a step is omega dt / alpha
        jumps = JumpParams(omega=5.0, alpha=2.0)
        rng = np.random.default_rng(5)
        n = 400_000
        dt = 0.01
        params = CirParams(kappa=0.0, beta=0.0, delta=0.0, x0=0.0)
        out = step_jcir(
            params, jumps, np.zeros(n), dt, np.zeros(n), (rng.random(n), rng.random(n))
        )
        target = jumps.omega * dt / jumps.alpha
        se = out.std() / math.sqrt(n)
        assert abs(out.mean() - target) < 3.0 * se

    def test_paths_never_negative(self):
        rng = np.random.default_rng(9)
        x = np.full(10_000, TC_PARAMS.x0)
        for _ in range(200):
            x = step_jcir(TC_PARAMS, NO_JUMPS, x, 0.01, rng.standard_normal(10_000))
            assert np.min(x) >= 0.0

    def test_feller_flag(self):
        assert PS_PARAMS.feller_satisfied
        assert not TC_PARAMS.feller_satisfied


class TestQeScheme:
    def test_moments_match_exact_transition(self):
        # one QE step from a fixed state matches the exact conditional
        # mean and variance of the transition within MC error
        rng = np.random.default_rng(17)
        n = 400_000
        x0, dt = 0.05, 0.25
        params = CirParams(kappa=0.5, beta=0.03, delta=0.25, x0=x0)
        out = step_cir_qe(params, np.full(n, x0), dt, rng.random(n))
        k, b, d = params.kappa, params.beta, params.delta
        e = math.exp(-k * dt)
        m = b + (x0 - b) * e
        s2 = x0 * d * d * e * (1 - e) / k + b * d * d * (1 - e) ** 2 / (2 * k)
        assert out.mean() == pytest.approx(m, abs=4 * math.sqrt(s2 / n))
        assert out.var() == pytest.approx(s2, rel=0.02)
        assert np.min(out) >= 0.0

    def test_deterministic_limit(self):
        params = CirParams(kappa=0.5, beta=0.03, delta=0.0, x0=0.08)
        got = step_cir_qe(params, 0.08, 1.0, 0.37)
        assert got == pytest.approx(0.03 + 0.05 * math.exp(-0.5), abs=1e-15)

    def test_absorbed_at_zero_without_drift(self):
        params = CirParams(kappa=0.0, beta=0.0, delta=0.3, x0=0.0)
        out = step_cir_qe(params, np.zeros(8), 0.01, np.linspace(0.05, 0.95, 8))
        assert np.all(out == 0.0)
