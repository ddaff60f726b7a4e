"""Calibration of the single-factor model to a dividend-futures strip plus
ATM implied volatilities.

Free parameters are (b, beta, sigma, nu1, D0) with (r, a) fixed.  Futures
prices depend only on (b, beta, D0), the option legs add (sigma, nu1), so
the joint fit is well determined by a strip plus two vol quotes.  The
optimizer is a deterministic Nelder-Mead simplex search on a penalized
least-squares objective; the inward-drift inequalities enter through a
smooth quadratic penalty so infeasible trial points stay finite.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .black import implied_vol
from .errors import CalibrationError, InvalidParameterError, MarketDataError, PolydivError
from .maxent import OptionSpec, price_dividend_option, price_stock_option
from .model import ModelParams, State, validate_admissibility
from .moments import dividend_futures, stock_futures

PENALTY_WEIGHT = 1e6


@dataclass(frozen=True)
class FuturesQuote:
    """One dividend-futures quote: accrual window in year fractions, price in index points."""

    id: str
    t0: float
    t1: float
    quote: float

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise MarketDataError(f"{self.id}: window must be ordered, got ({self.t0}, {self.t1})")
        if not self.quote > 0:
            raise MarketDataError(f"{self.id}: quote must be positive, got {self.quote}")


@dataclass(frozen=True)
class StockIvQuote:
    """ATM stock-option implied volatility and its expiry (years)."""

    iv: float
    expiry: float

    def __post_init__(self):
        if not (0.0 < self.iv < 2.0):
            raise MarketDataError(f"implied vol must be in (0, 2), got {self.iv}")
        if not self.expiry > 0:
            raise MarketDataError(f"expiry must be positive, got {self.expiry}")


@dataclass(frozen=True)
class DividendIvQuote:
    """ATM dividend-option implied volatility referencing one futures contract."""

    iv: float
    futures_id: str

    def __post_init__(self):
        if not (0.0 < self.iv < 2.0):
            raise MarketDataError(f"implied vol must be in (0, 2), got {self.iv}")


@dataclass(frozen=True)
class MarketData:
    """Quotes used for calibration, all windows/expiries in year fractions
    from the valuation date; prices in index points at spot level `spot`."""

    valuation_date: str
    spot: float
    futures: tuple
    stock_iv: StockIvQuote = None
    dividend_iv: DividendIvQuote = None

    def __post_init__(self):
        if not self.spot > 0:
            raise MarketDataError(f"spot must be positive, got {self.spot}")
        object.__setattr__(self, "futures", tuple(self.futures))
        if not self.futures and self.stock_iv is None and self.dividend_iv is None:
            raise MarketDataError("market data is empty")
        ids = [f.id for f in self.futures]
        if len(set(ids)) != len(ids):
            raise MarketDataError("duplicate futures instrument ids")
        if self.dividend_iv is not None and self.dividend_iv.futures_id not in ids:
            raise MarketDataError(
                f"dividend IV references unknown futures id {self.dividend_iv.futures_id!r}"
            )

    def futures_by_id(self, fid):
        for f in self.futures:
            if f.id == fid:
                return f
        raise MarketDataError(f"unknown futures id {fid!r}")

    @property
    def n_instruments(self):
        return len(self.futures) + (self.stock_iv is not None) + (self.dividend_iv is not None)


@dataclass(frozen=True)
class CalibConfig:
    """Fixed parameters, starting point, weights, and optimizer budget."""

    r: float = 0.01
    a: float = 0.2
    start_b: float = 0.01
    start_beta: float = -0.3
    start_sigma: float = 0.3
    start_nu: float = 0.02
    start_d0: float = None          # default: DF1 quote / (spot * window length)
    weight_futures: float = 1.0
    weight_iv: float = 1e4
    n_moments: int = 6
    two_stage: bool = False
    simplex_rel_step: float = 0.15
    max_evals: int = 4000
    fatol: float = 1e-12
    xatol: float = 1e-9

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidParameterError(f"need a > 0, got {self.a}")
        if self.weight_futures < 0 or self.weight_iv < 0:
            raise InvalidParameterError("weights must be non-negative")
        if self.n_moments < 2:
            raise InvalidParameterError(f"need n_moments >= 2, got {self.n_moments}")


@dataclass(frozen=True)
class PricedInstrument:
    """Model value and absolute error for one calibration instrument."""

    id: str
    kind: str           # "futures", "stock_iv", "dividend_iv"
    market: float
    model: float
    abs_error: float


@dataclass(frozen=True, eq=False)
class CalibResult:
    """Fitted parameters with per-instrument errors and optimizer trace."""

    params: ModelParams
    d0: float
    instruments: tuple
    objective: float
    trace: dict
    admissibility: object
    underdetermined: bool

    @property
    def max_abs_error(self):
        return max(row.abs_error for row in self.instruments)


def params_from_vector(vec, config):
    """Map a free-parameter vector (b, beta, sigma, nu1, D0) to model inputs."""
    b, beta, sigma, nu, d0 = (float(v) for v in vec)
    params = ModelParams.single_factor(
        r=config.r, a=config.a, sigma=max(sigma, 0.0), b=b, beta=beta, nu=max(nu, 0.0)
    )
    return params, d0


def pricing_errors(params, d0, market, n_moments):
    """Model prices and absolute errors for every instrument in the market.

    Futures legs are priced at the normalized spot X0 = 1 and scaled back to
    index points; option legs are converted to the matching implied-vol
    convention (spot lognormal with the model-consistent forward for the
    stock, futures lognormal for the dividend option).
    """
    state = State(c=0.0, x=1.0, y=[d0])
    rows = []
    for f in market.futures:
        model_px = market.spot * dividend_futures(params, None, state, 0.0, f.t0, f.t1)
        rows.append(
            PricedInstrument(
                id=f.id, kind="futures", market=f.quote,
                model=model_px, abs_error=abs(model_px - f.quote),
            )
        )
    if market.stock_iv is not None:
        q = market.stock_iv
        spec = OptionSpec(
            kind="call", underlying="stock", strike=1.0, expiry=q.expiry, rate=params.r
        )
        price = price_stock_option(params, None, state, spec, n_moments)
        fwd = stock_futures(params, None, state, 0.0, q.expiry)
        carry = params.r - math.log(fwd) / q.expiry
        model_iv = implied_vol(
            price, 1.0, 1.0, q.expiry, params.r, "black-scholes", dividend_yield=carry
        )
        rows.append(
            PricedInstrument(
                id="IVSTOCK", kind="stock_iv", market=q.iv,
                model=model_iv, abs_error=abs(model_iv - q.iv),
            )
        )
    if market.dividend_iv is not None:
        q = market.dividend_iv
        f = market.futures_by_id(q.futures_id)
        fwd = dividend_futures(params, None, state, 0.0, f.t0, f.t1)
        spec = OptionSpec(
            kind="call", underlying="dividend", strike=fwd, expiry=f.t1,
            rate=params.r, window=(f.t0, f.t1),
        )
        price = price_dividend_option(params, None, state, spec, n_moments)
        model_iv = implied_vol(price, fwd, fwd, f.t1, params.r, "black76")
        rows.append(
            PricedInstrument(
                id="IVDIV", kind="dividend_iv", market=q.iv,
                model=model_iv, abs_error=abs(model_iv - q.iv),
            )
        )
    return tuple(rows)


def _penalty(params, d0):
    """Smooth quadratic penalty on violated admissibility/structure constraints."""
    report = validate_admissibility(params)
    viol = 0.0
    for s in np.atleast_1d(report.factor_slack):
        viol += max(0.0, -s) ** 2
    viol += max(0.0, -report.cap_slack) ** 2
    viol += max(0.0, -d0) ** 2 + max(0.0, d0 - params.a) ** 2
    return PENALTY_WEIGHT * viol


def objective(param_vector, market, config, include_iv=True, include_futures=True):
    """Penalized weighted least-squares objective; finite everywhere."""
    try:
        params, d0 = params_from_vector(param_vector, config)
    except InvalidParameterError:
        return 1e15
    pen = _penalty(params, d0)
    # negative raw sigma/nu are clamped for pricing; steer them back smoothly
    raw_sigma, raw_nu = float(param_vector[2]), float(param_vector[3])
    pen += PENALTY_WEIGHT * (max(0.0, -raw_sigma) ** 2 + max(0.0, -raw_nu) ** 2)
    try:
        sub = market if include_iv else replace(market, stock_iv=None, dividend_iv=None)
        rows = pricing_errors(params, d0, sub, config.n_moments)
    except PolydivError:
        return 1e12 * (1.0 + pen / PENALTY_WEIGHT)
    total = pen
    for row in rows:
        if row.kind == "futures":
            if include_futures:
                total += config.weight_futures * row.abs_error ** 2
        elif include_iv:
            total += config.weight_iv * row.abs_error ** 2
    return float(total)


def _initial_simplex(x0, rel_step):
    """Deterministic simplex: x0 plus one perturbed vertex per coordinate."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for k in range(n):
        simplex[k + 1, k] += rel_step * max(abs(x0[k]), 0.01)
    return simplex


def _run_nelder_mead(fun, x0, config, max_evals):
    """Nelder-Mead in scaled coordinates with deterministic restarts.

    The free parameters differ by two orders of magnitude in scale, which
    makes a raw simplex collapse early; optimizing x/scales and restarting
    from the incumbent with a fresh simplex until the objective stops
    improving is deterministic and markedly more reliable.
    """
    x0 = np.asarray(x0, dtype=float)
    scales = np.maximum(np.abs(x0), 0.01)

    def scaled_fun(v):
        return fun(v * scales)

    incumbent = x0 / scales
    best_val = None
    nfev = 0
    nit = 0
    success = False
    message = ""
    rel_step = config.simplex_rel_step
    for restart in range(8):
        budget = max_evals - nfev
        if budget <= 0:
            break
        res = minimize(
            scaled_fun,
            incumbent,
            method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(incumbent, rel_step),
                "maxfev": budget,
                "fatol": config.fatol,
                "xatol": config.xatol,
                "adaptive": False,
            },
        )
        nfev += res.nfev
        nit += res.nit
        success = bool(res.success)
        message = str(res.message)
        improved = best_val is None or res.fun < best_val - max(
            config.fatol, 1e-12 * abs(best_val)
        )
        if res.fun < (best_val if best_val is not None else np.inf):
            best_val, incumbent = res.fun, res.x
        if not improved:
            break
        rel_step = max(rel_step / 4.0, 0.01)
    out = type("NMResult", (), {})()
    out.x = incumbent * scales
    out.fun = best_val
    out.nfev = nfev
    out.nit = nit
    out.success = success
    out.message = message
    return out


def calibrate(market, config):
    """Fit (b, beta, sigma, nu1, D0) to the market with Nelder-Mead.

    Deterministic given the config.  The converged point is re-validated:
    an inadmissible optimum raises :class:`CalibrationError` carrying the
    optimizer trace.
    """
    d0_start = config.start_d0
    if d0_start is None:
        if not market.futures:
            raise CalibrationError("cannot derive a starting dividend level without futures quotes")
        f0 = market.futures[0]
        d0_start = f0.quote / (market.spot * (f0.t1 - f0.t0))
    x0 = np.array(
        [config.start_b, config.start_beta, config.start_sigma, config.start_nu, d0_start]
    )

    trace = {}
    if config.two_stage:
        # stage 1: (b, beta, D0) on futures only; stage 2: (sigma, nu1) on IVs
        def stage1(v):
            full = np.array([v[0], v[1], x0[2], x0[3], v[2]])
            return objective(full, market, config, include_iv=False)

        res1 = _run_nelder_mead(stage1, x0[[0, 1, 4]], config, config.max_evals // 2)
        b_fit, beta_fit, d0_fit = res1.x

        def stage2(v):
            full = np.array([b_fit, beta_fit, v[0], v[1], d0_fit])
            return objective(full, market, config, include_futures=False)

        res2 = _run_nelder_mead(stage2, x0[[2, 3]], config, config.max_evals // 2)
        x_best = np.array([b_fit, beta_fit, res2.x[0], res2.x[1], d0_fit])
        trace = {
            "nfev": int(res1.nfev + res2.nfev),
            "nit": int(res1.nit + res2.nit),
            "converged": bool(res1.success and res2.success),
            "message": f"stage1: {res1.message}; stage2: {res2.message}",
            "stages": 2,
        }
    else:
        res = _run_nelder_mead(
            lambda v: objective(v, market, config), x0, config, config.max_evals
        )
        x_best = res.x
        trace = {
            "nfev": int(res.nfev),
            "nit": int(res.nit),
            "converged": bool(res.success),
            "message": str(res.message),
            "stages": 1,
        }

    params, d0 = params_from_vector(x_best, config)
    report = validate_admissibility(params)
    if not (report.admissible and 0.0 <= d0 <= config.a):
        raise CalibrationError(
            f"optimizer converged to an inadmissible point {x_best.tolist()} "
            f"(factor slack {report.factor_slack}, cap slack {report.cap_slack:.3g}); "
            f"trace: {trace}"
        )
    rows = pricing_errors(params, d0, market, config.n_moments)
    final_obj = objective(x_best, market, config)
    return CalibResult(
        params=params,
        d0=float(d0),
        instruments=rows,
        objective=final_obj,
        trace=trace,
        admissibility=report,
        underdetermined=market.n_instruments < 5,
    )
