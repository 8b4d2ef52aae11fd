"""Market curves: CDS quotes, survival-curve bootstrap, discounting.

The survival curve G(t) = exp(-int_0^t h(s) ds) is represented with a
piecewise-constant hazard rate h: one hazard per interval between quote
maturities.  Bootstrapping solves, shortest maturity first, for the hazard
that reprices each CDS at its quoted spread (protection leg == premium leg),
the standard iterative "JP Morgan" procedure.

Conventions (overridable where it matters):
  * recovery defaults to 40%,
  * premium payments quarterly, accrual on default paid mid-period,
  * protection leg integrated on a monthly sub-grid with mid-point
    discounting (exact survival increments, since G is piecewise
    exponential),
  * constant-hazard extrapolation beyond the last quote.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import BootstrapError, ParseError

__all__ = [
    "CdsQuote",
    "SurvivalCurve",
    "DiscountCurve",
    "parse_quotes",
    "bootstrap",
    "cds_leg_values",
]


@dataclass(frozen=True)
class CdsQuote:
    """A single CDS quote: maturity in years, running spread as a decimal."""

    maturity: float
    spread: float

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ParseError(f"quote maturity must be positive, got {self.maturity}")
        if self.spread < 0.0:
            raise ParseError(f"quote spread must be non-negative, got {self.spread}")


def parse_quotes(source) -> list[CdsQuote]:
    """Read CDS quotes from CSV or JSON.

    CSV format: header ``maturity_years,spread_bps`` followed by one row per
    quote.  JSON format: a list of ``{"maturity_years": .., "spread_bps": ..}``
    objects (or ``[maturity, spread_bps]`` pairs).  Spreads are quoted in
    basis points and converted to decimals here.

    ``source`` may be a path, a text stream, or the raw text itself.
    Returns quotes sorted by maturity; duplicate maturities are rejected.
    """
    if isinstance(source, Path):
        text = source.read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
        if text and "\n" not in text and "," not in text and Path(text).is_file():
            text = Path(text).read_text()
    if not text.strip():
        return []

    stripped = text.lstrip()
    if stripped.startswith("[") or stripped.startswith("{"):
        rows = _rows_from_json(stripped)
    else:
        rows = _rows_from_csv(text)

    quotes = []
    for lineno, (mat_raw, bps_raw) in rows:
        try:
            maturity = float(mat_raw)
            spread_bps = float(bps_raw)
        except (TypeError, ValueError):
            raise ParseError(
                f"line {lineno}: cannot parse quote ({mat_raw!r}, {bps_raw!r})"
            ) from None
        quotes.append(CdsQuote(maturity=maturity, spread=spread_bps * 1e-4))

    quotes.sort(key=lambda q: q.maturity)
    for prev, cur in zip(quotes, quotes[1:]):
        if cur.maturity <= prev.maturity:
            raise ParseError(f"duplicate quote maturity {cur.maturity}")
    return quotes


def _rows_from_csv(text):
    rows = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if lineno == 1 and cells[0].lower().startswith("maturity"):
            continue
        if len(cells) != 2:
            raise ParseError(f"line {lineno}: expected 2 columns, got {len(cells)}")
        rows.append((lineno, (cells[0], cells[1])))
    return rows


def _rows_from_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON quote file: {exc}") from None
    rows = []
    for i, item in enumerate(data, start=1):
        if isinstance(item, dict):
            rows.append((i, (item.get("maturity_years"), item.get("spread_bps"))))
        else:
            if len(item) != 2:
                raise ParseError(f"entry {i}: expected [maturity, spread_bps]")
            rows.append((i, (item[0], item[1])))
    return rows


@dataclass(frozen=True)
class DiscountCurve:
    """Risk-free discount factors P0(T).

    Either a flat continuously-compounded yield or a table of zero rates
    (linearly interpolated in the rate, flat beyond the last pillar).
    """

    flat_yield: float | None = None
    times: tuple[float, ...] = ()
    zero_rates: tuple[float, ...] = ()

    def __post_init__(self):
        if self.flat_yield is None and not self.times:
            raise ValueError("DiscountCurve needs a flat yield or a zero-rate table")
        if self.times and len(self.times) != len(self.zero_rates):
            raise ValueError("times and zero_rates must have the same length")

    @classmethod
    def flat(cls, y: float) -> "DiscountCurve":
        return cls(flat_yield=y)

    def zero_rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.flat_yield is not None:
            return np.broadcast_to(np.float64(self.flat_yield), t.shape).copy()
        return np.interp(t, self.times, self.zero_rates)

    def df(self, t):
        """Discount factor P0(t) = exp(-z(t) * t)."""
        t_arr = np.asarray(t, dtype=float)
        out = np.exp(-self.zero_rate(t_arr) * t_arr)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class SurvivalCurve:
    """Piecewise-constant-hazard survival curve.

    ``knots`` are the right endpoints 0 < t_1 < ... < t_n of the hazard
    segments and ``hazards[i]`` applies on (t_{i-1}, t_i] (t_0 = 0).  Beyond
    t_n the last hazard extrapolates, so G is a strictly positive,
    non-increasing piecewise exponential on all of [0, inf).
    """

    knots: tuple[float, ...]
    hazards: tuple[float, ...]
    # cumulative hazard at each knot, filled in __post_init__
    _cum: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if len(self.knots) != len(self.hazards) or not self.knots:
            raise ValueError("knots and hazards must be non-empty and equal length")
        prev = 0.0
        cum = []
        total = 0.0
        for t, h in zip(self.knots, self.hazards):
            if t <= prev:
                raise ValueError("knots must be strictly increasing and positive")
            if h < 0.0:
                raise ValueError(f"negative hazard {h} on segment ending {t}")
            total += h * (t - prev)
            cum.append(total)
            prev = t
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def flat(cls, hazard: float, horizon: float = 100.0) -> "SurvivalCurve":
        return cls(knots=(horizon,), hazards=(hazard,))

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    def cumulative_hazard(self, t):
        """int_0^t h(s) ds, exact for the piecewise-constant representation."""
        t = np.asarray(t, dtype=float)
        knots = np.asarray(self.knots)
        haz = np.asarray(self.hazards)
        cum = np.concatenate(([0.0], self._cum))
        idx = np.searchsorted(knots, t, side="left")
        idx = np.minimum(idx, len(knots) - 1)
        left = np.concatenate(([0.0], knots))[idx]
        out = cum[idx] + haz[idx] * (t - left)
        return out if out.ndim else float(out)

    def survival(self, t):
        """G(t) = exp(-int_0^t h); G(0) = 1, extrapolated flat in hazard."""
        out = np.exp(-self.cumulative_hazard(t))
        return out if np.ndim(out) else float(out)

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        knots = np.asarray(self.knots)
        haz = np.asarray(self.hazards)
        idx = np.minimum(np.searchsorted(knots, t, side="left"), len(knots) - 1)
        out = haz[idx]
        return out if out.ndim else float(out)

    def extrapolated(self, t) -> bool:
        """True where survival(t) relies on the constant tail hazard."""
        return bool(np.any(np.asarray(t) > self.horizon))

    def inverse(self, p):
        """G^{-1}(p) for p in (0, 1]; +inf where p is below the reachable range.

        Exact within each segment: t = t_left + (lnG_left - ln p) / h.
        Flat stretches of G (zero hazard) resolve to the earliest time.
        """
        p_arr = np.asarray(p, dtype=float)
        scalar = p_arr.ndim == 0
        p_arr = np.atleast_1d(p_arr)
        if np.any(p_arr <= 0.0) or np.any(p_arr > 1.0):
            raise ValueError("inverse survival needs p in (0, 1]")
        target = -np.log(p_arr)  # cumulative hazard to reach
        knots = np.concatenate(([0.0], np.asarray(self.knots)))
        cum = np.concatenate(([0.0], self._cum))
        haz = np.asarray(self.hazards)
        # smallest j with cum[j] >= target; target in (cum[j-1], cum[j]]
        # lands in hazard segment j-1.  The tolerance keeps exp/log
        # round-off at a knot from jumping past a zero-hazard stretch.
        idx = np.searchsorted(cum, target - 1e-12 * (1.0 + target), side="left")
        out = np.full(p_arr.shape, np.inf)
        beyond = idx == len(cum)
        inside = ~beyond
        seg = np.maximum(idx[inside] - 1, 0)
        h_seg = haz[seg]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_in = knots[seg] + (target[inside] - cum[seg]) / h_seg
        out[inside] = np.where(target[inside] == cum[seg], knots[seg], t_in)
        tail = haz[-1]
        if tail > 0.0:
            out[beyond] = knots[-1] + (target[beyond] - cum[-1]) / tail
        return float(out[0]) if scalar else out

    def grid_export(self, times):
        """Rows (t, G(t), h(t)) for CSV export on a user grid."""
        times = np.asarray(times, dtype=float)
        return np.column_stack([times, self.survival(times), self.hazard(times)])


def _premium_dates(maturity: float, premium_freq: int) -> np.ndarray:
    step = 1.0 / premium_freq
    n_full = int(math.floor(maturity / step + 1e-9))
    dates = [step * k for k in range(1, n_full + 1)]
    if not dates or dates[-1] < maturity - 1e-9:
        dates.append(maturity)  # final stub
    else:
        dates[-1] = maturity  # kill float drift on the last regular date
    return np.asarray(dates)


def cds_leg_values(
    curve: SurvivalCurve,
    discount: DiscountCurve,
    maturity: float,
    recovery: float,
    premium_freq: int = 4,
    protection_subdivisions: int = 3,
):
    """Present value of the two CDS legs at inception for unit notional.

    Returns ``(protection, rpv01)`` where the premium leg equals
    ``spread * rpv01``.  Premium: spread paid in arrears on the quarterly
    schedule weighted by survival at the payment date, plus accrual on
    default approximated by a half-period payment discounted to mid period.
    Protection: (1-R) * sum of survival decrements on a sub-grid of each
    premium period, discounted to the sub-interval midpoint.  The survival
    decrements are exact for the piecewise-exponential G, so with zero rates
    the protection leg collapses to (1-R) * (1 - G(T)) exactly.
    """
    dates = _premium_dates(maturity, premium_freq)
    prev = np.concatenate(([0.0], dates[:-1]))
    accruals = dates - prev

    g_prev = np.asarray(curve.survival(prev))
    g_pay = np.asarray(curve.survival(dates))
    df_pay = np.asarray(discount.df(dates))
    df_mid = np.asarray(discount.df(0.5 * (prev + dates)))

    rpv01 = float(np.sum(accruals * df_pay * g_pay))
    rpv01 += float(np.sum(0.5 * accruals * df_mid * (g_prev - g_pay)))

    protection = 0.0
    for a, b in zip(prev, dates):
        sub = np.linspace(a, b, protection_subdivisions + 1)
        g_sub = np.asarray(curve.survival(sub))
        df_sub = np.asarray(discount.df(0.5 * (sub[:-1] + sub[1:])))
        protection += float(np.sum(df_sub * (g_sub[:-1] - g_sub[1:])))
    protection *= 1.0 - recovery

    return protection, rpv01


_MAX_SEGMENT_HAZARD = 10.0


def bootstrap(
    quotes: list[CdsQuote],
    recovery: float = 0.40,
    discount: DiscountCurve | None = None,
    premium_freq: int = 4,
) -> SurvivalCurve:
    """Bootstrap the survival curve from par CDS quotes.

    Solves segment hazards shortest maturity first so that each quote
    reprices to par under :func:`cds_leg_values`.  The par mismatch is
    monotone in the segment hazard, so a bracketed root search on
    [0, 10] converges unconditionally; an empty bracket means the quote set
    is inconsistent (e.g. would need a negative hazard) and is rejected
    rather than clamped.
    """
    if not quotes:
        raise BootstrapError("no quotes to bootstrap")
    if not 0.0 <= recovery < 1.0:
        raise ValueError(f"recovery must be in [0, 1), got {recovery}")
    discount = discount or DiscountCurve.flat(0.0)

    knots: list[float] = []
    hazards: list[float] = []

    for quote in quotes:
        def par_mismatch(h: float) -> float:
            trial = SurvivalCurve(
                knots=tuple(knots + [quote.maturity]),
                hazards=tuple(hazards + [h]),
            )
            protection, rpv01 = cds_leg_values(
                trial, discount, quote.maturity, recovery, premium_freq
            )
            return protection - quote.spread * rpv01

        f_lo = par_mismatch(0.0)
        if abs(f_lo) < 1e-14:
            h_star = 0.0
        else:
            f_hi = par_mismatch(_MAX_SEGMENT_HAZARD)
            if f_lo > 0.0 or f_hi < 0.0:
                raise BootstrapError(
                    f"no hazard in [0, {_MAX_SEGMENT_HAZARD}] reprices the "
                    f"{quote.maturity}y quote at {quote.spread * 1e4:.1f} bps; "
                    "quote set implies a negative or explosive hazard"
                )
            h_star = brentq(
                par_mismatch, 0.0, _MAX_SEGMENT_HAZARD, xtol=1e-12, rtol=8.9e-16
            )
        knots.append(quote.maturity)
        hazards.append(h_star)

    return SurvivalCurve(knots=tuple(knots), hazards=tuple(hazards))
