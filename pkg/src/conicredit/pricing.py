"""Contract valuation: swap exposure, CVA with wrong-way risk, CDS options.

Exposure side.  The interest-rate swap is valued in closed form along
simulated factor paths (the bond is exponential-affine, so each node costs
one exp per remaining payment date).  EPE is the discounted positive part
averaged per node; CVA without wrong-way risk integrates EPE against the
market survival increments; CVA with wrong-way risk integrates the pathwise
product of discounted positive exposure and the survival-process drift
lambda_u S_u, joint in the rate/credit drivers through a Brownian
correlation rho.

lambda_u S_u by model: closed form for the probit survival model; for the
shifted and time-changed intensity benchmarks it is lambda_u e^{-Lambda_u}
with the intensity integral accumulated trapezoidally along each path (the
time-changed model accumulates in clock time, where the factor is smooth).

Option side.  A payer CDS option is valued per path at its expiry from the
survival-weighted conditional curve W(u) = S_t S_t(u)/S_t = S_t(u): every
leg is a linear functional of W, so the payoff is
max(W . v_prot - k W . v_dur, 0) for two precomputed quadrature vectors, and
no division by a vanishing survival state ever occurs.  Black implied
volatilities are bracketed root finds against the usual annuity-scaled
formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from . import affine
from .affine import CirParams, JumpParams, NO_JUMPS
from .calibrate import ClockFunction, ShiftFunction
from .conic import PhiModel
from .curves import DiscountCurve, SurvivalCurve
from .engine import (
    CHANNEL_CREDIT,
    CHANNEL_JUMP_COUNT,
    CHANNEL_JUMP_SIZE,
    CHANNEL_RATE,
    ChunkContext,
    Estimator,
    EstimatorVector,
    TimeGrid,
    run_accumulate,
)
from .errors import DomainError, NumericError
from .rates import ShiftedVasicek

__all__ = [
    "McSettings",
    "PricingResult",
    "IrsSpec",
    "CdsOptionSpec",
    "CvaConfig",
    "par_swap_rate",
    "irs_value",
    "epe_profile",
    "EpeProfile",
    "cva_independent",
    "cva_independent_mc",
    "cva_wwr",
    "PhiCreditDriver",
    "ShiftedCreditDriver",
    "ClockedCreditDriver",
    "cds_quadrature",
    "cds_legs",
    "cds_value",
    "par_spread",
    "PhiCdsoModel",
    "ShiftedCdsoModel",
    "ClockedCdsoModel",
    "pso_price",
    "black_pso",
    "implied_vol",
]


@dataclass(frozen=True)
class McSettings:
    n_paths: int = 100_000
    dt: float = 0.01
    seed: int = 0
    workers: int = 1
    antithetic: bool = False
    scheme: str = "qe"  # CIR factor propagation: "qe" or "euler"

    def __post_init__(self):
        if self.scheme not in ("qe", "euler"):
            raise ValueError("scheme must be 'qe' or 'euler'")


@dataclass(frozen=True)
class PricingResult:
    value: float
    se: float
    n_paths: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def within(self, other: "PricingResult", n_se: float = 3.0) -> bool:
        band = n_se * math.hypot(self.se, other.se)
        return abs(self.value - other.value) <= band


# ---------------------------------------------------------------------------
# interest-rate swap exposure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IrsSpec:
    """Payer swap: fixed K paid, floating received, payments every delta."""

    start: float  # T_a
    end: float  # T_b
    delta: float = 0.25
    fixed_rate: float | None = None  # None -> struck at par
    notional: float = 1.0

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("need end > start")

    @property
    def payment_dates(self) -> np.ndarray:
        n = int(round((self.end - self.start) / self.delta))
        return self.start + self.delta * np.arange(1, n + 1)

    @property
    def reset_dates(self) -> np.ndarray:
        return np.concatenate(([self.start], self.payment_dates[:-1]))


def par_swap_rate(rate_model: ShiftedVasicek, spec: IrsSpec) -> float:
    """Fixed rate making the time-0 swap value zero."""
    dates = spec.payment_dates
    df = np.array([rate_model.discount.df(t) for t in dates])
    annuity = float(np.sum(spec.delta * df))
    return (rate_model.discount.df(spec.start) - rate_model.discount.df(spec.end)) / annuity


class IrsValuer:
    """Closed-form swap value at every grid node, vectorized over paths.

    Paths carry one running fixing (the floating rate set at the last reset
    date); the valuer tells the simulation loop where fixings happen and
    computes values from precomputed affine coefficients.
    """

    def __init__(self, spec: IrsSpec, rate_model: ShiftedVasicek, grid: TimeGrid):
        if spec.fixed_rate is None:
            spec = IrsSpec(
                start=spec.start,
                end=spec.end,
                delta=spec.delta,
                fixed_rate=par_swap_rate(rate_model, spec),
                notional=spec.notional,
            )
        self.spec = spec
        self.rate_model = rate_model
        self.nodes = grid.nodes
        pay = spec.payment_dates
        k_rate = spec.fixed_rate

        n_nodes = len(self.nodes)
        self.is_reset = np.zeros(n_nodes, dtype=bool)
        self.reset_logc = np.zeros(n_nodes)
        self.reset_b = np.zeros(n_nodes)

        # per node: value = c0 + sum_j exp(logc_j - b_j x) * w_j, assembled
        # from (start-or-current-period coupon) + telescoped floating leg
        self.node_terms = []
        for idx, t in enumerate(self.nodes):
            if t > spec.end + 1e-12:
                self.node_terms.append(None)
                continue
            remaining = pay[pay > t + 1e-12]
            if t <= spec.start + 1e-12:
                # sum_i delta P(T_i)(F_i - K) telescopes
                logc, b, w = [], [], []
                lc, bb = rate_model.affine_coeffs(t, spec.start)
                logc.append(lc), b.append(bb), w.append(1.0)
                lc, bb = rate_model.affine_coeffs(t, spec.end)
                logc.append(lc), b.append(bb), w.append(-1.0)
                for ti in remaining:
                    lc, bb = rate_model.affine_coeffs(t, ti)
                    logc.append(lc), b.append(bb), w.append(-k_rate * spec.delta)
                self.node_terms.append(
                    ("pre", np.array(logc), np.array(b), np.array(w))
                )
            else:
                # T_{j-1} < t <= T_j: fixed coupon (fixing - K) delta P(T_j)
                # plus the telescoped tail P(T_j) - P(T_b) - K sum_{i>j} ...
                t_j = pay[np.searchsorted(pay, t - 1e-12)]
                logc, b, w = [], [], []
                lc_j, bb_j = rate_model.affine_coeffs(t, t_j)
                tail = remaining[remaining > t_j + 1e-12]
                logc.append(lc_j), b.append(bb_j), w.append(1.0)
                lc, bb = rate_model.affine_coeffs(t, spec.end)
                logc.append(lc), b.append(bb), w.append(-1.0)
                for ti in tail:
                    lc, bb = rate_model.affine_coeffs(t, ti)
                    logc.append(lc), b.append(bb), w.append(-k_rate * spec.delta)
                self.node_terms.append(
                    ("mid", np.array(logc), np.array(b), np.array(w), lc_j, bb_j)
                )
            # fixings occur at reset dates strictly before the end
            for t_reset, t_next in zip(spec.reset_dates, pay):
                if abs(t - t_reset) < 1e-12:
                    self.is_reset[idx] = True
                    lc, bb = rate_model.affine_coeffs(t_reset, t_next)
                    self.reset_logc[idx] = lc
                    self.reset_b[idx] = bb

    def update_fixing(self, idx: int, x, fixing):
        """At a reset node, store the floating rate just set."""
        if not self.is_reset[idx]:
            return fixing
        p_next = np.exp(self.reset_logc[idx] - self.reset_b[idx] * np.asarray(x))
        return (1.0 - p_next) / (self.spec.delta * p_next)

    def value(self, idx: int, x, fixing):
        """Swap value at node idx given factor values and current fixings."""
        terms = self.node_terms[idx]
        if terms is None:
            return np.zeros(np.shape(x))
        x = np.asarray(x)
        kind = terms[0]
        logc, b, w = terms[1], terms[2], terms[3]
        bonds = np.exp(logc[None, :] - np.outer(x, b))
        base = bonds @ w
        if kind == "mid":
            lc_j, bb_j = terms[4], terms[5]
            p_j = np.exp(lc_j - bb_j * x)
            base = base + (fixing - self.spec.fixed_rate) * self.spec.delta * p_j
        return self.spec.notional * base


def irs_value(
    spec: IrsSpec,
    rate_model: ShiftedVasicek,
    t: float,
    x_t,
    fixing=0.0,
    grid: TimeGrid | None = None,
):
    """Swap value at time t for factor value(s) x_t.

    ``fixing`` is the floating rate set at the last reset date (ignored for
    t <= start).  Values after the end date are zero ("expired").
    """
    if t > spec.end + 1e-12:
        return np.zeros(np.shape(x_t)) if np.ndim(x_t) else 0.0
    grid = grid or TimeGrid.build(
        0.0, spec.end, max(spec.end / 2, 1e-6), events=[t, *spec.payment_dates, spec.start]
    )
    valuer = IrsValuer(spec, rate_model, grid)
    idx = grid.index_of(t)
    out = valuer.value(idx, np.atleast_1d(np.asarray(x_t, dtype=float)), fixing)
    return out if np.ndim(x_t) else float(out[0])


# ---------------------------------------------------------------------------
# EPE and CVA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpeProfile:
    times: np.ndarray
    values: np.ndarray
    ses: np.ndarray
    n_paths: int
    seed: int

    def rows(self):
        for t, v, s in zip(self.times, self.values, self.ses):
            yield {"t": float(t), "epe": float(v), "se": float(s)}


class _RatePathMixin:
    """Shared stepping of the shifted-Vasicek factor and the discount."""

    def _prepare_rates(self, rate_model: ShiftedVasicek, nodes: np.ndarray):
        self._nodes = nodes
        self._shift = np.asarray(rate_model.shift(nodes))
        self._dts = np.diff(nodes)
        p = rate_model.params
        decay = np.exp(-p.gamma * self._dts)
        self._decay = decay
        self._ou_std = p.sigma * np.sqrt((1.0 - decay * decay) / (2.0 * p.gamma))
        self._theta = p.theta
        self._r0 = p.r0

    def _rate_step(self, x, k, z):
        """Exact OU transition from node k-1 to node k."""
        d = self._decay[k - 1]
        return x * d + self._theta * (1.0 - d) + self._ou_std[k - 1] * z


class _EpeTask(_RatePathMixin):
    def __init__(self, spec: IrsSpec, rate_model: ShiftedVasicek, grid: TimeGrid):
        self.valuer = IrsValuer(spec, rate_model, grid)
        self._prepare_rates(rate_model, grid.nodes)

    def __call__(self, ctx: ChunkContext) -> EstimatorVector:
        n_nodes = len(self._nodes)
        x = np.full(ctx.size, self._r0)
        fixing = np.zeros(ctx.size)
        disc = np.zeros(ctx.size)
        out = np.empty((ctx.size, n_nodes))
        fixing = self.valuer.update_fixing(0, x, fixing)
        out[:, 0] = np.maximum(self.valuer.value(0, x, fixing), 0.0)
        r_prev = x + self._shift[0]
        for k in range(1, n_nodes):
            z = ctx.normals(k, CHANNEL_RATE)
            x = self._rate_step(x, k, z)
            r_now = x + self._shift[k]
            disc += 0.5 * (r_prev + r_now) * self._dts[k - 1]
            r_prev = r_now
            value = self.valuer.value(k, x, fixing)
            fixing = self.valuer.update_fixing(k, x, fixing)
            out[:, k] = np.maximum(value, 0.0) * np.exp(-disc)
        return EstimatorVector.from_samples(out)


def epe_profile(
    spec: IrsSpec,
    rate_model: ShiftedVasicek,
    mc: McSettings,
    grid: TimeGrid | None = None,
) -> EpeProfile:
    """Discounted expected positive exposure E[V_t^+ / beta_t] per grid node."""
    grid = grid or TimeGrid.build(
        0.0, spec.end, mc.dt, events=[spec.start, *spec.payment_dates]
    )
    acc = run_accumulate(
        _EpeTask(spec, rate_model, grid),
        mc.n_paths,
        mc.seed,
        workers=mc.workers,
        antithetic=mc.antithetic,
    )
    return EpeProfile(
        times=grid.nodes, values=acc.mean, ses=acc.se, n_paths=acc.n, seed=mc.seed
    )


def cva_independent(profile: EpeProfile, curve: SurvivalCurve, recovery: float) -> float:
    """CVA without wrong-way risk from an EPE profile.

    -(1-R) sum_i EPE(u_i) (G(u_i) - G(u_{i-1})): the Stieltjes sum against
    the market survival increments; positive since G decreases.
    """
    g = np.asarray(curve.survival(profile.times))
    dg = np.diff(g)
    return float(-(1.0 - recovery) * np.sum(profile.values[1:] * dg))


class _CvaIndepTask(_RatePathMixin):
    """Per-path Stieltjes sum, so the estimate carries an exact SE."""

    def __init__(self, spec, rate_model, grid, curve, recovery):
        self.valuer = IrsValuer(spec, rate_model, grid)
        self._prepare_rates(rate_model, grid.nodes)
        g = np.asarray(curve.survival(grid.nodes))
        self._neg_dg = -(np.diff(g))
        self._lgd = 1.0 - recovery

    def __call__(self, ctx: ChunkContext) -> Estimator:
        n_nodes = len(self._nodes)
        x = np.full(ctx.size, self._r0)
        fixing = self.valuer.update_fixing(0, x, np.zeros(ctx.size))
        disc = np.zeros(ctx.size)
        acc = np.zeros(ctx.size)
        r_prev = x + self._shift[0]
        for k in range(1, n_nodes):
            z = ctx.normals(k, CHANNEL_RATE)
            x = self._rate_step(x, k, z)
            r_now = x + self._shift[k]
            disc += 0.5 * (r_prev + r_now) * self._dts[k - 1]
            r_prev = r_now
            value = self.valuer.value(k, x, fixing)
            fixing = self.valuer.update_fixing(k, x, fixing)
            acc += np.maximum(value, 0.0) * np.exp(-disc) * self._neg_dg[k - 1]
        return Estimator.from_samples(self._lgd * acc)


def cva_independent_mc(
    spec: IrsSpec,
    rate_model: ShiftedVasicek,
    curve: SurvivalCurve,
    recovery: float,
    mc: McSettings,
    grid: TimeGrid | None = None,
) -> PricingResult:
    grid = grid or TimeGrid.build(
        0.0, spec.end, mc.dt, events=[spec.start, *spec.payment_dates]
    )
    est = run_accumulate(
        _CvaIndepTask(spec, rate_model, grid, curve, recovery),
        mc.n_paths,
        mc.seed,
        workers=mc.workers,
        antithetic=mc.antithetic,
    )
    return PricingResult(
        value=est.mean,
        se=est.se,
        n_paths=est.n,
        seed=mc.seed,
        metadata={"kind": "cva_independent"},
    )


# --- credit drivers: pathwise lambda_u S_u per model -------------------------


class PhiCreditDriver:
    """lambda S along exact-scheme paths of the probit survival model."""

    name = "phi"

    def __init__(self, model: PhiModel):
        self.model = model

    def prepare(self, nodes: np.ndarray, scheme: str):
        self._nodes = nodes
        i_nodes = self.model.vol.eta_sq_integral(nodes)
        # std of the m-increment: sqrt(e^{-I(t_k-1)} - e^{-I(t_k)})
        self._m_std = np.sqrt(
            np.maximum(np.exp(-i_nodes[:-1]) - np.exp(-i_nodes[1:]), 0.0)
        )
        self._scale = np.exp(0.5 * i_nodes)
        g = np.asarray(self.model.curve.survival(nodes))
        h = np.asarray(self.model.curve.hazard(nodes))
        self._hg = h * g
        self._z_g = np.full(len(nodes), np.inf)
        interior = g < 1.0
        from scipy.special import ndtri

        self._z_g[interior] = ndtri(g[interior])
        self._pdf_zg = np.where(
            interior, np.exp(-0.5 * self._z_g**2) / math.sqrt(2 * math.pi), np.nan
        )

    def init_state(self, size: int):
        return np.zeros(size)

    def step(self, m, k: int, z_credit, ctx=None):
        return m + self._m_std[k - 1] * z_credit

    def lambda_s(self, m, k: int):
        if not np.isfinite(self._z_g[k]):  # G = 1: density ratio limit is 1
            return np.full(np.shape(m), self._hg[k])
        z = (self._z_g[k] + m) * self._scale[k]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        return self._scale[k] * (pdf / self._pdf_zg[k]) * self._hg[k]

    def negative_mask(self, m, k):
        return None


class ShiftedCreditDriver:
    """lambda^phi e^{-Lambda} for the shifted intensity model.

    Lambda splits into the exact deterministic part ln P^x - ln G and the
    trapezoidal integral of the simulated factor.
    """

    name = "ps-jcir"

    def __init__(self, params: CirParams, jumps: JumpParams, shift: ShiftFunction):
        self.params = params
        self.jumps = jumps
        self.shift = shift

    def prepare(self, nodes: np.ndarray, scheme: str):
        self._nodes = nodes
        self._dts = np.diff(nodes)
        self._phi = np.asarray(self.shift(nodes))
        self._cum_phi = np.asarray(self.shift.cumulative(nodes))
        self._scheme = scheme

    def init_state(self, size: int):
        x = np.full(size, self.params.x0)
        return {"x": x, "int_x": np.zeros(size)}

    def step(self, state, k: int, z_credit, ctx=None):
        dt = self._dts[k - 1]
        x_prev = state["x"]
        if self._scheme == "qe":
            u = ndtr(z_credit)
            x_next = affine.step_cir_qe(self.params, x_prev, dt, u)
            if self.jumps.omega > 0.0:
                x_next = x_next + affine.jump_increment(
                    self.jumps,
                    dt,
                    ctx.uniforms(k, CHANNEL_JUMP_COUNT),
                    ctx.uniforms(k, CHANNEL_JUMP_SIZE),
                )
        else:
            draws = None
            if self.jumps.omega > 0.0:
                draws = (
                    ctx.uniforms(k, CHANNEL_JUMP_COUNT),
                    ctx.uniforms(k, CHANNEL_JUMP_SIZE),
                )
            x_next = affine.step_jcir(self.params, self.jumps, x_prev, dt, z_credit, draws)
        state["int_x"] = state["int_x"] + 0.5 * (x_prev + x_next) * dt
        state["x"] = x_next
        return state

    def lambda_s(self, state, k: int):
        lam = state["x"] + self._phi[k]
        big_lambda = state["int_x"] + self._cum_phi[k]
        return lam * np.exp(-big_lambda)

    def negative_mask(self, state, k):
        return state["x"] + self._phi[k] < 0.0


class ClockedCreditDriver:
    """theta(t) x_{Theta(t)} e^{-Lambda} for the time-changed model.

    The factor is stepped at the clock times of the grid nodes; the intensity
    integral accumulates as int x dTheta in clock time, where the factor is
    smooth even though the clock rate diverges at zero.
    """

    name = "tc-cir"

    def __init__(self, params: CirParams, jumps: JumpParams, clock: ClockFunction):
        self.params = params
        self.jumps = jumps
        self.clock = clock

    def prepare(self, nodes: np.ndarray, scheme: str):
        self._nodes = nodes
        self._theta_nodes = np.asarray(self.clock(nodes))
        self._d_theta = np.maximum(np.diff(self._theta_nodes), 0.0)
        self._rate = np.asarray(self.clock.rate(nodes))
        self._scheme = scheme

    def init_state(self, size: int):
        return {"x": np.full(size, self.params.x0), "int_x": np.zeros(size)}

    def step(self, state, k: int, z_credit, ctx=None):
        d_theta = self._d_theta[k - 1]
        x_prev = state["x"]
        if d_theta <= 0.0:
            return state
        if self._scheme == "qe":
            x_next = affine.step_cir_qe(self.params, x_prev, d_theta, ndtr(z_credit))
        else:
            x_next = affine.step_jcir(self.params, NO_JUMPS, x_prev, d_theta, z_credit)
        if self.jumps.omega > 0.0:
            x_next = x_next + affine.jump_increment(
                self.jumps,
                d_theta,
                ctx.uniforms(k, CHANNEL_JUMP_COUNT),
                ctx.uniforms(k, CHANNEL_JUMP_SIZE),
            )
        state["int_x"] = state["int_x"] + 0.5 * (x_prev + x_next) * d_theta
        state["x"] = x_next
        return state

    def lambda_s(self, state, k: int):
        return self._rate[k] * state["x"] * np.exp(-state["int_x"])

    def negative_mask(self, state, k):
        return None


@dataclass
class _CvaAccumulator:
    est: Estimator
    negative_intensity_paths: int = 0

    def __add__(self, other: "_CvaAccumulator") -> "_CvaAccumulator":
        return _CvaAccumulator(
            est=self.est + other.est,
            negative_intensity_paths=self.negative_intensity_paths
            + other.negative_intensity_paths,
        )


class _CvaWwrTask(_RatePathMixin):
    def __init__(self, spec, rate_model, grid, driver, rho, recovery, scheme):
        self.valuer = IrsValuer(spec, rate_model, grid)
        self._prepare_rates(rate_model, grid.nodes)
        self.driver = driver
        self.driver.prepare(grid.nodes, scheme)
        self.rho = rho
        self._lgd = 1.0 - recovery

    def __call__(self, ctx: ChunkContext) -> _CvaAccumulator:
        n_nodes = len(self._nodes)
        x = np.full(ctx.size, self._r0)
        state = self.driver.init_state(ctx.size)
        fixing = self.valuer.update_fixing(0, x, np.zeros(ctx.size))
        disc = np.zeros(ctx.size)
        acc = np.zeros(ctx.size)
        neg_paths = np.zeros(ctx.size, dtype=bool)
        v0 = np.maximum(self.valuer.value(0, x, fixing), 0.0)
        integrand_prev = v0 * self.driver.lambda_s(state, 0)
        r_prev = x + self._shift[0]
        for k in range(1, n_nodes):
            z_rate, z_credit = ctx.correlated_pair(k, self.rho)
            x = self._rate_step(x, k, z_rate)
            r_now = x + self._shift[k]
            disc += 0.5 * (r_prev + r_now) * self._dts[k - 1]
            r_prev = r_now
            state = self.driver.step(state, k, z_credit, ctx)
            lam_s = self.driver.lambda_s(state, k)
            mask = self.driver.negative_mask(state, k)
            if mask is not None:
                neg_paths |= mask
            value = self.valuer.value(k, x, fixing)
            fixing = self.valuer.update_fixing(k, x, fixing)
            integrand = np.maximum(value, 0.0) * np.exp(-disc) * lam_s
            acc += 0.5 * (integrand_prev + integrand) * self._dts[k - 1]
            integrand_prev = integrand
        return _CvaAccumulator(
            est=Estimator.from_samples(self._lgd * acc),
            negative_intensity_paths=int(np.sum(neg_paths)),
        )


@dataclass(frozen=True)
class CvaConfig:
    rho: float = 0.0
    recovery: float = 0.40

    def __post_init__(self):
        if not 0.0 <= self.recovery < 1.0:
            raise ValueError("recovery must be in [0, 1)")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("|rho| must be <= 1")


def cva_wwr(
    spec: IrsSpec,
    rate_model: ShiftedVasicek,
    driver,
    config: CvaConfig,
    mc: McSettings,
    grid: TimeGrid | None = None,
) -> PricingResult:
    """CVA with wrong-way risk: E[(1-R) int V_u^+ / beta_u lambda_u S_u du]."""
    grid = grid or TimeGrid.build(
        0.0, spec.end, mc.dt, events=[spec.start, *spec.payment_dates]
    )
    acc = run_accumulate(
        _CvaWwrTask(spec, rate_model, grid, driver, config.rho, config.recovery, mc.scheme),
        mc.n_paths,
        mc.seed,
        workers=mc.workers,
        antithetic=mc.antithetic,
    )
    return PricingResult(
        value=acc.est.mean,
        se=acc.est.se,
        n_paths=acc.est.n,
        seed=mc.seed,
        metadata={
            "kind": "cva_wwr",
            "model": driver.name,
            "rho": config.rho,
            "negative_intensity_paths": acc.negative_intensity_paths,
        },
    )


# ---------------------------------------------------------------------------
# CDS legs, par spreads, payer options
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CdsOptionSpec:
    """Option expiring at ``expiry`` into a payer CDS running to ``maturity``."""

    expiry: float  # T_a
    maturity: float  # T_b
    strike: float  # contractual spread k
    recovery: float = 0.40
    delta: float = 0.25  # premium accrual period

    def __post_init__(self):
        if self.maturity <= self.expiry:
            raise ValueError("need maturity > expiry")
        if self.strike <= 0.0:
            raise ValueError("strike must be positive")

    @property
    def payment_dates(self) -> np.ndarray:
        n = int(round((self.maturity - self.expiry) / self.delta))
        return self.expiry + self.delta * np.arange(1, n + 1)


def cds_quadrature(spec: CdsOptionSpec, max_step: float = 0.005):
    """(u grid, payment index array) for the leg integrals.

    Each premium period is subdivided evenly to at most ``max_step``; payment
    dates are exact grid members.
    """
    pieces = [np.array([spec.expiry])]
    left = spec.expiry
    pay_idx = []
    count = 1
    for right in spec.payment_dates:
        m = max(int(math.ceil((right - left) / max_step)), 1)
        seg = left + (right - left) * np.arange(1, m + 1) / m
        pieces.append(seg)
        count += m
        pay_idx.append(count - 1)
        left = right
    u = np.concatenate(pieces)
    return u, np.asarray(pay_idx, dtype=int)


def _difference_stencil(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows (lower, main, upper) of the central-difference operator on u."""
    n = len(u)
    lower = np.zeros(n)  # coefficient of W[j-1] in D[j]
    upper = np.zeros(n)  # coefficient of W[j+1] in D[j]
    main = np.zeros(n)
    gap = u[2:] - u[:-2]
    upper[1:-1] = 1.0 / gap
    lower[1:-1] = -1.0 / gap
    main[0] = -1.0 / (u[1] - u[0])
    upper[0] = 1.0 / (u[1] - u[0])
    main[-1] = 1.0 / (u[-1] - u[-2])
    lower[-1] = -1.0 / (u[-1] - u[-2])
    return lower, main, upper


def _apply_adjoint(coef: np.ndarray, lower, main, upper) -> np.ndarray:
    """v such that sum_j coef_j D_j = sum_k v_k W_k for D the stencil of W."""
    v = coef * main
    v[:-1] += coef[1:] * lower[1:]
    v[1:] += coef[:-1] * upper[:-1]
    return v


def leg_functionals(
    spec: CdsOptionSpec,
    u: np.ndarray,
    pay_idx: np.ndarray,
    discount: DiscountCurve,
    t: float,
):
    """(v_prot, v_dur): protection leg and risky duration as linear
    functionals of the conditional survival values W on the grid u.

    protection = -(1-R) int P_t(s) dW(s); duration = sum_i alpha_i P_t(T_i)
    W(T_i) minus the accrual integral; dW by the central-difference stencil
    and integrals by the trapezoid rule, following the leg definitions.
    """
    df = np.asarray(discount.df(u)) / discount.df(t)
    lower, main, upper = _difference_stencil(u)
    trap = np.zeros(len(u))
    trap[:-1] += 0.5 * np.diff(u)
    trap[1:] += 0.5 * np.diff(u)

    v_prot = -_apply_adjoint((1.0 - spec.recovery) * trap * df, lower, main, upper)

    v_dur = np.zeros(len(u))
    left = spec.expiry
    for i, idx in enumerate(pay_idx):
        right = u[idx]
        alpha = right - left  # accrual fraction, handles a final stub
        v_dur[idx] += alpha * df[idx]
        seg = slice(0 if i == 0 else pay_idx[i - 1], idx + 1)
        u_seg = u[seg]
        w_seg = np.zeros(len(u_seg))
        du = np.diff(u_seg)
        w_seg[:-1] += 0.5 * du
        w_seg[1:] += 0.5 * du
        frac = (u_seg - left) / (right - left)
        coef = np.zeros(len(u))
        coef[seg] = alpha * frac * df[seg] * w_seg
        v_dur -= _apply_adjoint(coef, lower, main, upper)
        left = right
    return v_prot, v_dur


def cds_legs(spec: CdsOptionSpec, qbar: np.ndarray, u: np.ndarray, pay_idx, discount, t):
    """(protection, duration) from conditional survival values on the grid.

    ``qbar`` may be one curve (1-D) or a paths-by-grid matrix.  Raises if the
    curve increases beyond numerical tolerance.
    """
    qbar = np.asarray(qbar, dtype=float)
    increase = np.max(np.diff(qbar, axis=-1)) if qbar.size else 0.0
    if increase > 1e-8:
        raise NumericError(f"conditional survival not monotone: rise {increase:.2e}")
    v_prot, v_dur = leg_functionals(spec, u, pay_idx, discount, t)
    return qbar @ v_prot, qbar @ v_dur


def cds_value(spec: CdsOptionSpec, qbar, u, pay_idx, discount, t):
    """Running-CDS value: protection leg minus strike times risky duration."""
    protection, duration = cds_legs(spec, qbar, u, pay_idx, discount, t)
    return protection - spec.strike * duration


def par_spread(
    curve_vals,
    spec: CdsOptionSpec,
    discount: DiscountCurve,
    t: float = 0.0,
    u: np.ndarray | None = None,
    pay_idx=None,
) -> float:
    """Par spread s_t(a, b) = protection / duration for one survival curve."""
    if u is None:
        u, pay_idx = cds_quadrature(spec)
    protection, duration = cds_legs(spec, curve_vals, u, pay_idx, discount, t)
    if np.any(np.asarray(duration) <= 0.0):
        raise DomainError("risky duration must be positive for a par spread")
    return protection / duration


def par_spread_from_market(
    curve: SurvivalCurve, spec: CdsOptionSpec, discount: DiscountCurve
) -> float:
    """Time-0 forward par spread off the market curve (Qbar_0 = G)."""
    u, pay_idx = cds_quadrature(spec)
    return float(par_spread(curve.survival(u), spec, discount, 0.0, u, pay_idx))


# --- option-expiry state models ----------------------------------------------


class PhiCdsoModel:
    """Survival-weighted conditional curves at expiry for the probit model.

    The expiry state is sampled in one shot from its exact Gaussian law (no
    stepping bias exists for this model at any step size).
    """

    name = "phi"

    def __init__(self, model: PhiModel):
        self.model = model

    def prepare(self, spec: CdsOptionSpec, u: np.ndarray, mc: McSettings):
        t_a = spec.expiry
        self._std_m = math.sqrt(-math.expm1(-self.model.vol.eta_sq_integral(t_a)))
        scale = math.exp(0.5 * self.model.vol.eta_sq_integral(t_a))
        from scipy.special import ndtri

        z_g_u = ndtri(np.asarray(self.model.curve.survival(u)))
        self._z_g_a = float(ndtri(self.model.curve.survival(t_a)))
        self._b_shift = (z_g_u - self._z_g_a) * scale
        self._scale = scale

    def expiry_state(self, ctx: ChunkContext):
        """Latent expiry state, one shot from its exact Gaussian law."""
        m = self._std_m * ctx.normals(0, CHANNEL_CREDIT)
        return (self._z_g_a + m) * self._scale

    def weighted_curves(self, state, lane: slice):
        """W = S_{Ta} Qbar_{Ta}(u) for a sub-batch of the chunk's lanes."""
        return ndtr(state[lane, None] + self._b_shift[None, :])


class _AffineCdsoBase:
    """Common factor simulation to expiry for the intensity benchmarks."""

    def _simulate_factor(self, ctx, params, jumps, taus, scheme):
        """Step x along the (clock-)time offsets ``taus``; returns terminal x
        and the trapezoidal integral of x for the whole chunk."""
        x = np.full(ctx.size, params.x0)
        integral = np.zeros(ctx.size)
        for k in range(1, len(taus)):
            dt = taus[k] - taus[k - 1]
            if dt <= 0.0:
                continue
            if scheme == "qe":
                u = ctx.uniforms(k, CHANNEL_CREDIT)
                x_next = affine.step_cir_qe(params, x, dt, u)
                if jumps.omega > 0.0:
                    x_next = x_next + affine.jump_increment(
                        jumps,
                        dt,
                        ctx.uniforms(k, CHANNEL_JUMP_COUNT),
                        ctx.uniforms(k, CHANNEL_JUMP_SIZE),
                    )
            else:
                draws = None
                if jumps.omega > 0.0:
                    draws = (
                        ctx.uniforms(k, CHANNEL_JUMP_COUNT),
                        ctx.uniforms(k, CHANNEL_JUMP_SIZE),
                    )
                x_next = affine.step_jcir(
                    params, jumps, x, dt, ctx.normals(k, CHANNEL_CREDIT), draws
                )
            integral += 0.5 * (x + x_next) * dt
            x = x_next
        return x, integral


class ShiftedCdsoModel(_AffineCdsoBase):
    """Expiry curves for the shifted model: W = e^{-Lambda} Qbar."""

    name = "ps-jcir"

    def __init__(self, params: CirParams, jumps: JumpParams, shift: ShiftFunction):
        self.params = params
        self.jumps = jumps
        self.shift = shift

    def prepare(self, spec: CdsOptionSpec, u: np.ndarray, mc: McSettings):
        t_a = spec.expiry
        curve = self.shift.curve
        steps = max(int(round(t_a / mc.dt)), 1)
        self._taus = np.linspace(0.0, t_a, steps + 1)
        self._scheme = mc.scheme
        self._cum_phi_a = float(self.shift.cumulative(t_a))
        # Qbar_t(u) = [G(u) P^x(t)] / [G(t) P^x(u)] * A(u - t) e^{-B(u-t) x}
        ln_a, big_b = affine._cir_lnA_B(self.params, u - t_a)
        ln_j = affine.jump_log_factor(self.params, self.jumps, u - t_a)
        log_det = (
            np.log(np.asarray(curve.survival(u)))
            - math.log(curve.survival(t_a))
            + np.log(affine.bond_curve(self.params, self.jumps, t_a))
            - np.log(np.asarray(affine.bond_curve(self.params, self.jumps, u)))
        )
        self._log_d = log_det + ln_a + np.asarray(ln_j)
        self._big_b = big_b

    def expiry_state(self, ctx: ChunkContext):
        return self._simulate_factor(ctx, self.params, self.jumps, self._taus, self._scheme)

    def weighted_curves(self, state, lane: slice):
        x_a, int_x = state[0][lane], state[1][lane]
        log_s = -(int_x + self._cum_phi_a)
        return np.exp(log_s[:, None] + self._log_d[None, :] - np.outer(x_a, self._big_b))


class ClockedCdsoModel(_AffineCdsoBase):
    """Expiry curves for the time-changed model."""

    name = "tc-cir"

    def __init__(self, params: CirParams, jumps: JumpParams, clock: ClockFunction):
        self.params = params
        self.jumps = jumps
        self.clock = clock

    def prepare(self, spec: CdsOptionSpec, u: np.ndarray, mc: McSettings):
        t_a = spec.expiry
        steps = max(int(round(t_a / mc.dt)), 1)
        self._taus = np.asarray(self.clock(np.linspace(0.0, t_a, steps + 1)))
        self._scheme = mc.scheme
        d_theta = np.asarray(self.clock(u)) - float(self.clock(t_a))
        ln_a, big_b = affine._cir_lnA_B(self.params, np.maximum(d_theta, 0.0))
        ln_j = affine.jump_log_factor(self.params, self.jumps, np.maximum(d_theta, 0.0))
        self._log_d = ln_a + np.asarray(ln_j)
        self._big_b = big_b

    def expiry_state(self, ctx: ChunkContext):
        return self._simulate_factor(ctx, self.params, self.jumps, self._taus, self._scheme)

    def weighted_curves(self, state, lane: slice):
        x_a, int_x = state[0][lane], state[1][lane]
        return np.exp(-int_x[:, None] + self._log_d[None, :] - np.outer(x_a, self._big_b))


class _PsoTask:
    _SUB_BATCH = 8192

    def __init__(self, spec, model, discount, mc, payer=True):
        self.spec = spec
        self.model = model
        self.discount = discount
        self.payer = payer
        u, pay_idx = cds_quadrature(spec)
        self.u = u
        v_prot, v_dur = leg_functionals(spec, u, pay_idx, discount, spec.expiry)
        self._v_value = v_prot - spec.strike * v_dur
        self._df_expiry = float(discount.df(spec.expiry))
        model.prepare(spec, u, mc)

    def __call__(self, ctx: ChunkContext) -> Estimator:
        payoffs = np.empty(ctx.size)
        state = self.model.expiry_state(ctx)
        for start in range(0, ctx.size, self._SUB_BATCH):
            lane = slice(start, min(start + self._SUB_BATCH, ctx.size))
            w = self.model.weighted_curves(state, lane)
            values = w @ self._v_value
            if not self.payer:
                values = -values
            payoffs[lane] = np.maximum(values, 0.0) * self._df_expiry
        return Estimator.from_samples(payoffs)


def pso_price(
    spec: CdsOptionSpec,
    model,
    discount: DiscountCurve,
    mc: McSettings,
    payer: bool = True,
) -> PricingResult:
    """Payer (or receiver) CDS option by Monte Carlo.

    Per path the expiry value is assembled from the survival-weighted
    conditional curve, its positive part taken, and the result discounted;
    rates are assumed independent of credit for this product, so discounting
    is deterministic.
    """
    est = run_accumulate(
        _PsoTask(spec, model, discount, mc, payer=payer),
        mc.n_paths,
        mc.seed,
        workers=mc.workers,
        antithetic=mc.antithetic,
    )
    return PricingResult(
        value=est.mean,
        se=est.se,
        n_paths=est.n,
        seed=mc.seed,
        metadata={
            "kind": "pso" if payer else "rso",
            "model": model.name,
            "expiry": spec.expiry,
            "maturity": spec.maturity,
            "strike": spec.strike,
        },
    )


# --- Black formula and implied volatility -------------------------------------


def black_pso(s0: float, k: float, c0: float, sigma: float, expiry: float) -> float:
    """Annuity-scaled Black payer value c0 [s0 N(d1) - k N(d2)].

    d1 = (ln(s0/k) + sigma^2 T/2) / (sigma sqrt(T)); the sigma -> 0 limit is
    the discounted intrinsic c0 max(s0 - k, 0).
    """
    if s0 <= 0.0 or k <= 0.0 or expiry <= 0.0:
        raise DomainError("black_pso needs positive forward, strike and expiry")
    if sigma <= 0.0:
        return c0 * max(s0 - k, 0.0)
    root_t = sigma * math.sqrt(expiry)
    d1 = (math.log(s0 / k) + 0.5 * sigma * sigma * expiry) / root_t
    d2 = d1 - root_t
    return c0 * (s0 * ndtr(d1) - k * ndtr(d2))


def implied_vol(
    price: float, s0: float, k: float, c0: float, expiry: float, bracket=(1e-6, 10.0)
) -> float:
    """Invert black_pso for the volatility; bracketed to 1e-8.

    Raises with the attainable bounds when the price sits outside
    (intrinsic, forward-annuity) or outside the bracket's image.
    """
    lo, hi = bracket
    intrinsic = c0 * max(s0 - k, 0.0)
    upper = c0 * s0
    if not intrinsic < price < upper:
        raise DomainError(
            f"price {price:.6e} outside attainable range "
            f"({intrinsic:.6e}, {upper:.6e})"
        )
    f_lo = black_pso(s0, k, c0, lo, expiry) - price
    f_hi = black_pso(s0, k, c0, hi, expiry) - price
    if f_lo > 0.0:
        raise DomainError(f"price below the value at sigma={lo}: widen the bracket down")
    if f_hi < 0.0:
        raise DomainError(f"price above the value at sigma={hi}: widen the bracket up")
    return float(
        brentq(lambda s: black_pso(s0, k, c0, s, expiry) - price, lo, hi, xtol=1e-10)
    )
