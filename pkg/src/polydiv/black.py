"""Black-Scholes and Black-76 prices plus a bracketed implied-vol solver."""

import math

from scipy.optimize import brentq
from scipy.stats import norm

from .errors import DomainError, InvalidParameterError


def _lognormal_call(forward, strike, expiry, vol, discount):
    if vol <= 0 or expiry <= 0:
        return discount * max(forward - strike, 0.0)
    s = vol * math.sqrt(expiry)
    d1 = (math.log(forward / strike) + 0.5 * s * s) / s
    d2 = d1 - s
    return discount * (forward * norm.cdf(d1) - strike * norm.cdf(d2))


def black_scholes_price(spot, strike, expiry, vol, rate, dividend_yield=0.0, kind="call"):
    """Standard lognormal option price on a spot with continuous dividend yield."""
    if spot <= 0 or strike <= 0:
        raise InvalidParameterError("spot and strike must be positive")
    discount = math.exp(-rate * expiry)
    forward = spot * math.exp((rate - dividend_yield) * expiry)
    call = _lognormal_call(forward, strike, expiry, vol, discount)
    if kind == "call":
        return call
    if kind == "put":
        return call - discount * (forward - strike)
    raise InvalidParameterError(f"unknown option kind {kind!r}")


def black76_price(forward, strike, expiry, vol, rate, kind="call"):
    """Lognormal option price on a futures/forward level."""
    if forward <= 0 or strike <= 0:
        raise InvalidParameterError("forward and strike must be positive")
    discount = math.exp(-rate * expiry)
    call = _lognormal_call(forward, strike, expiry, vol, discount)
    if kind == "call":
        return call
    if kind == "put":
        return call - discount * (forward - strike)
    raise InvalidParameterError(f"unknown option kind {kind!r}")


def implied_vol(price, level, strike, expiry, rate, convention="black-scholes",
                dividend_yield=0.0, kind="call", vol_cap=16.0):
    """Invert a lognormal price to its volatility by bracketed root solving.

    ``level`` is the spot (convention "black-scholes") or the forward
    (convention "black76").  Prices at or below intrinsic return 0;
    prices outside the no-arbitrage band raise :class:`DomainError`.
    """
    if convention == "black-scholes":
        forward = level * math.exp((rate - dividend_yield) * expiry)

        def price_at(v):
            return black_scholes_price(level, strike, expiry, v, rate, dividend_yield, kind)
    elif convention == "black76":
        forward = level

        def price_at(v):
            return black76_price(level, strike, expiry, v, rate, kind)
    else:
        raise InvalidParameterError(f"unknown convention {convention!r}")

    discount = math.exp(-rate * expiry)
    if kind == "call":
        intrinsic = discount * max(forward - strike, 0.0)
        upper = discount * forward
    elif kind == "put":
        intrinsic = discount * max(strike - forward, 0.0)
        upper = discount * strike
    else:
        raise InvalidParameterError(f"unknown option kind {kind!r}")

    slack = 1e-12 * max(1.0, upper)
    if price < intrinsic - slack or price > upper + slack:
        raise DomainError(
            f"price {price:.6g} outside no-arbitrage bounds [{intrinsic:.6g}, {upper:.6g}]"
        )
    if price <= intrinsic + slack:
        return 0.0

    lo, hi = 1e-12, 0.5
    while price_at(hi) < price:
        hi *= 2.0
        if hi > vol_cap:
            raise DomainError(f"implied volatility exceeds cap {vol_cap}")
    vol = brentq(lambda v: price_at(v) - price, lo, hi, xtol=1e-14, rtol=8.9e-16)
    return float(vol)
