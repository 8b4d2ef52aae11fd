from pathlib import Path

import pytest

from conicredit.curves import CdsQuote, DiscountCurve, bootstrap

DATA_DIR = Path(__file__).resolve().parents[1] / "data"

# Ford CDS term structure (Nov 2018), the market data set used throughout.
# Spreads converted from bps exactly as parse_quotes does.
FORD_QUOTES = [
    CdsQuote(m, bps * 1e-4)
    for m, bps in [(1.0, 18.3), (3.0, 136.6), (5.0, 191.9), (7.0, 267.6), (10.0, 280.6)]
]


@pytest.fixture(scope="session")
def ford_curve():
    """Ford survival curve bootstrapped with R=40% and zero discount rates."""
    return bootstrap(FORD_QUOTES, recovery=0.40, discount=DiscountCurve.flat(0.0))


@pytest.fixture(scope="session")
def ford_quotes():
    return list(FORD_QUOTES)
