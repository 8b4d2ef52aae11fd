"""Short-rate model: Vasicek factor plus deterministic shift.

The factor x follows dx = gamma (theta - x) dt + sigma dW.  A pure Vasicek
cannot reproduce an arbitrary initial discount curve, so the short rate is
r_t = x_t + chi(t) with chi chosen such that model zero-coupon prices match
the market curve P0 exactly at t = 0:

    P_t(T) = P^V_t(T, x_t) * P0(T) P^V(0, t, x0) / (P0(t) P^V(0, T, x0))

where P^V is the closed-form Vasicek bond.  Simulation steps the factor with
the exact Ornstein-Uhlenbeck transition, so the only discretization left in
rate-dependent payoffs is the time integral of r along the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curves import DiscountCurve
from .errors import DomainError

__all__ = ["VasicekParams", "ShiftedVasicek", "forward_rate", "step_rate"]


@dataclass(frozen=True)
class VasicekParams:
    gamma: float  # mean-reversion speed
    theta: float  # long-run level
    sigma: float  # absolute volatility
    r0: float  # initial factor value

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")


def _vasicek_log_bond(p: VasicekParams, tau, x):
    """log P^V for time-to-maturity tau and factor value x (vectorized)."""
    tau = np.asarray(tau, dtype=float)
    b = (1.0 - np.exp(-p.gamma * tau)) / p.gamma
    a = (p.theta - 0.5 * p.sigma**2 / p.gamma**2) * (b - tau) - (
        p.sigma**2 * b * b / (4.0 * p.gamma)
    )
    return a - b * np.asarray(x)


def _vasicek_forward(p: VasicekParams, t):
    """Instantaneous forward rate f(0, t) of the unshifted Vasicek curve."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-p.gamma * t)
    b = (1.0 - e) / p.gamma
    return p.r0 * e + p.theta * (1.0 - e) - 0.5 * p.sigma**2 * b * b


class ShiftedVasicek:
    """Vasicek factor with the deterministic shift fitting ``discount``."""

    def __init__(self, params: VasicekParams, discount: DiscountCurve):
        self.params = params
        self.discount = discount

    def base_zcb(self, t, T, x):
        """Unshifted Vasicek bond P^V_t(T, x); depends only on T - t."""
        tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
        if np.any(tau < -1e-12):
            raise DomainError("zcb needs t <= T")
        out = np.exp(_vasicek_log_bond(self.params, np.maximum(tau, 0.0), x))
        return out if np.ndim(out) else float(out)

    def zcb(self, t, T, x):
        """Market-consistent bond price P_t(T) given factor value x at t."""
        tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
        if np.any(tau < -1e-12):
            raise DomainError("zcb needs t <= T")
        p = self.params
        log_base = _vasicek_log_bond(p, np.maximum(tau, 0.0), x)
        log_ratio0 = _vasicek_log_bond(p, np.asarray(t, dtype=float), p.r0) - _vasicek_log_bond(
            p, np.asarray(T, dtype=float), p.r0
        )
        mkt = np.log(self.discount.df(T)) - np.log(self.discount.df(t))
        out = np.exp(log_base + log_ratio0 + mkt)
        return out if np.ndim(out) else float(out)

    def shift(self, t):
        """chi(t): market forward minus model forward, added to the factor."""
        t_arr = np.asarray(t, dtype=float)
        if self.discount.flat_yield is not None:
            mkt_fwd = np.broadcast_to(np.float64(self.discount.flat_yield), t_arr.shape)
        else:
            h = 1e-6
            lo = np.maximum(t_arr - h, 0.0)
            mkt_fwd = (np.log(self.discount.df(lo)) - np.log(self.discount.df(t_arr + h))) / (
                t_arr + h - lo
            )
        out = mkt_fwd - _vasicek_forward(self.params, t_arr)
        return out if out.ndim else float(out)

    def affine_coeffs(self, t: float, T: float):
        """(log_const, b) with log P_t(T) = log_const - b * x_t.

        Lets pricing code evaluate many bonds per path as one exp call.
        """
        if T < t - 1e-12:
            raise DomainError("affine_coeffs needs t <= T")
        tau = max(T - t, 0.0)
        p = self.params
        b = (1.0 - math.exp(-p.gamma * tau)) / p.gamma
        a = (p.theta - 0.5 * p.sigma**2 / p.gamma**2) * (b - tau) - (
            p.sigma**2 * b * b / (4.0 * p.gamma)
        )
        log_ratio0 = float(
            _vasicek_log_bond(p, t, p.r0) - _vasicek_log_bond(p, T, p.r0)
        )
        mkt = math.log(self.discount.df(T)) - math.log(self.discount.df(t))
        return a + log_ratio0 + mkt, b

    def short_rate(self, t, x):
        return np.asarray(x) + self.shift(t)

    def step(self, x, dt, z):
        """Exact OU transition over dt given a standard normal draw z."""
        return step_rate(self.params, x, dt, z)


def step_rate(params: VasicekParams, r_t, dt: float, z):
    """Exact Ornstein-Uhlenbeck step.

    Mean r_t e^{-gamma dt} + theta (1 - e^{-gamma dt}), variance
    sigma^2 (1 - e^{-2 gamma dt}) / (2 gamma).
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    decay = math.exp(-params.gamma * dt)
    std = params.sigma * math.sqrt((1.0 - decay * decay) / (2.0 * params.gamma))
    return np.asarray(r_t) * decay + params.theta * (1.0 - decay) + std * np.asarray(z)


def forward_rate(p_prev, p_next, delta: float):
    """Simple forward rate from two bond prices: (P_prev - P_next)/(P_next delta)."""
    if delta <= 0.0:
        raise DomainError("delta must be positive")
    p_next_arr = np.asarray(p_next, dtype=float)
    if np.any(p_next_arr <= 0.0):
        raise DomainError("bond prices must be positive")
    out = (np.asarray(p_prev, dtype=float) - p_next_arr) / (p_next_arr * delta)
    return out if np.ndim(out) else float(out)
