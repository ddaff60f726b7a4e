"""Euler Monte-Carlo simulator with state-space projection and control variates.

Paths are generated in fixed-size blocks, each block drawing from its own
counter-based Philox stream keyed by (seed, block index).  Results are
therefore bit-identical for a given seed regardless of how many worker
threads execute the blocks; the block size is a module constant and part
of the reproducibility contract.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InadmissibleParamsError, InvalidParameterError
from .model import PointMass, State, in_state_space, validate_admissibility
from .moments import dividend_futures, stock_futures

BLOCK_SIZE = 4096          # paths per RNG block; fixed for reproducibility
RNG_ALGORITHM = "philox4x64/seedseq(seed, block)"
_X_FLOOR = 1e-12


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: path count, resolution, seed, horizon, storage."""

    n_paths: int
    horizon: float
    steps_per_year: int = 252
    seed: int = 0
    store_policy: str = "terminal"          # "terminal" or "full"
    windows: tuple = ()                     # (T0, T1) pairs for window accruals

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidParameterError(f"need n_paths >= 1, got {self.n_paths}")
        if self.steps_per_year < 1:
            raise InvalidParameterError(f"need steps_per_year >= 1, got {self.steps_per_year}")
        if not self.horizon > 0:
            raise InvalidParameterError(f"need horizon > 0, got {self.horizon}")
        if self.store_policy not in ("terminal", "full"):
            raise InvalidParameterError(f"unknown store policy {self.store_policy!r}")
        object.__setattr__(self, "windows", tuple((float(a), float(b)) for a, b in self.windows))


@dataclass(eq=False)
class PathBundle:
    """Simulated terminal states plus accumulators needed by the estimators."""

    config: SimConfig
    params: object
    jump: object
    state0: State
    horizon: float
    dt: float
    terminal_c: np.ndarray
    terminal_x: np.ndarray
    terminal_y: np.ndarray
    disc_div: np.ndarray
    window_sums: dict
    window_grid: dict
    jump_counts: np.ndarray
    yield_paths: np.ndarray = None
    rng_algorithm: str = RNG_ALGORITHM
    projection_count: int = 0


def _worker_count():
    env = os.environ.get("POLYDIV_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _simulate_block(params, jump, state0, n, n_steps, dt, window_idx, rng, store_yields):
    d, a, r = params.d, params.a, params.r
    b, beta, sigma, nu = params.b, params.beta, params.sigma, params.nu
    sqrt_dt = math.sqrt(dt)
    jumps_on = jump is not None and jump.active
    if jumps_on:
        lam, dist = jump.lam, jump.dist
        m1 = dist.moment(1)

    x = np.full(n, float(state0.x))
    y = np.tile(np.asarray(state0.y, dtype=float), (n, 1))
    c = np.full(n, float(state0.c))
    disc = np.zeros(n)
    wsums = np.zeros((len(window_idx), n))
    jcount = np.zeros(n, dtype=np.int64)
    projections = 0
    yields = None
    if store_yields:
        yields = np.empty((n, n_steps + 1))
        yields[:, 0] = y.sum(axis=1) / x

    div = y.sum(axis=1)
    for i in range(n_steps):
        t = i * dt
        base = np.maximum(x - div / a, 0.0)
        z = rng.standard_normal((n, 1 + d))

        drift_x = r * x - div
        if jumps_on:
            drift_x = drift_x - lam * m1 * base
            n_jumps = rng.poisson(lam * dt, n)
            if isinstance(dist, PointMass):
                jump_sum = dist.z0 * n_jumps
            else:
                hits = rng.binomial(n_jumps, dist.p)
                jump_sum = dist.z1 * hits + dist.z2 * (n_jumps - hits)
            jcount += n_jumps
        x_new = x + drift_x * dt + sigma * base * sqrt_dt * z[:, 0]
        if jumps_on:
            x_new = x_new + base * jump_sum

        dy = (np.outer(x, b) + y @ beta.T) * dt
        dy += nu[None, :] * np.sqrt(np.maximum(base[:, None] * y, 0.0)) * sqrt_dt * z[:, 1:]
        y_new = y + dy

        # project back onto E: clip factors, rescale at the cap, floor x
        y_new = np.maximum(y_new, 0.0)
        s = y_new.sum(axis=1)
        cap = a * np.maximum(x_new, 0.0)
        over = s > cap
        if over.any():
            projections += int(over.sum())
            ratio = np.where(s > 0, cap / np.where(s > 0, s, 1.0), 0.0)
            y_new[over] *= ratio[over, None]
        x_new = np.maximum(x_new, _X_FLOOR)

        div_new = y_new.sum(axis=1)
        seg = 0.5 * (div + div_new) * dt
        c += seg
        disc += 0.5 * (math.exp(-r * t) * div + math.exp(-r * (t + dt)) * div_new) * dt
        for widx, (i0, i1) in enumerate(window_idx):
            if i0 <= i < i1:
                wsums[widx] += seg
        if store_yields:
            yields[:, i + 1] = div_new / x_new

        x, y, div = x_new, y_new, div_new

    return x, y, c, disc, wsums, jcount, yields, projections


def simulate_paths(params, jump, state0, config, workers=None):
    """Simulate Euler paths of (C, X, Y) per the config; deterministic in seed.

    The state is projected onto E after every step (factor clipping plus a
    proportional rescale at the yield cap); jumps are compensated compound
    Poisson applied to the stock.  Window accruals and the discounted
    dividend integral use trapezoid rule on the dividend rate.
    """
    membership = in_state_space(params, state0)
    if not membership.inside:
        raise DomainError(
            f"initial state outside E: x={membership.x}, min_y={membership.min_y}, "
            f"cap slack={membership.cap_slack}"
        )
    report = validate_admissibility(params)
    if not report.admissible:
        raise InadmissibleParamsError("simulation requires admissible parameters")

    dt = 1.0 / config.steps_per_year
    n_steps = max(1, round(config.horizon * config.steps_per_year))
    horizon = n_steps * dt
    window_idx = []
    window_grid = {}
    for t0, t1 in config.windows:
        i0 = min(max(int(round(t0 * config.steps_per_year)), 0), n_steps)
        i1 = min(max(int(round(t1 * config.steps_per_year)), i0), n_steps)
        window_idx.append((i0, i1))
        window_grid[(t0, t1)] = (i0 * dt, i1 * dt)

    n = config.n_paths
    store_yields = config.store_policy == "full"
    terminal_x = np.empty(n)
    terminal_y = np.empty((n, params.d))
    terminal_c = np.empty(n)
    disc_div = np.empty(n)
    wsums = np.empty((len(window_idx), n))
    jcounts = np.empty(n, dtype=np.int64)
    yields = np.empty((n, n_steps + 1)) if store_yields else None

    blocks = [(k, lo, min(lo + BLOCK_SIZE, n)) for k, lo in enumerate(range(0, n, BLOCK_SIZE))]

    def run_block(block):
        k, lo, hi = block
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((config.seed, k))))
        return block, _simulate_block(
            params, jump, state0, hi - lo, n_steps, dt, window_idx, rng, store_yields
        )

    n_workers = workers if workers is not None else _worker_count()
    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(blk) for blk in blocks]

    total_projections = 0
    for (k, lo, hi), (bx, by, bc, bdisc, bw, bj, byields, nproj) in results:
        terminal_x[lo:hi] = bx
        terminal_y[lo:hi] = by
        terminal_c[lo:hi] = bc
        disc_div[lo:hi] = bdisc
        wsums[:, lo:hi] = bw
        jcounts[lo:hi] = bj
        if store_yields:
            yields[lo:hi] = byields
        total_projections += nproj

    window_sums = {win: wsums[idx] for idx, win in enumerate(config.windows)}
    return PathBundle(
        config=config,
        params=params,
        jump=jump,
        state0=state0,
        horizon=horizon,
        dt=dt,
        terminal_c=terminal_c,
        terminal_x=terminal_x,
        terminal_y=terminal_y,
        disc_div=disc_div,
        window_sums=window_sums,
        window_grid=window_grid,
        jump_counts=jcounts,
        yield_paths=yields,
        projection_count=total_projections,
    )


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo estimate with standard error and a 95% confidence interval."""

    value: float
    std_error: float
    ci_low: float
    ci_high: float
    n_paths: int
    control: str = "none"
    control_coef: float = 0.0


_Z95 = 1.959963984540054


def _underlying_values(bundle, underlying):
    if underlying == "stock":
        return bundle.terminal_x
    if isinstance(underlying, tuple) and underlying in bundle.window_sums:
        return bundle.window_sums[underlying]
    raise InvalidParameterError(f"unknown underlying {underlying!r}; simulate the window first")


def _underlying_mean(bundle, underlying):
    """Closed-form expectation of the simulated underlying (snapped to the grid)."""
    if underlying == "stock":
        return stock_futures(bundle.params, bundle.jump, bundle.state0, 0.0, bundle.horizon)
    t0, t1 = bundle.window_grid[underlying]
    return dividend_futures(bundle.params, bundle.jump, bundle.state0, 0.0, t0, t1)


def mc_price(bundle, payoff, discount, control="none", underlying="stock"):
    """Discounted Monte-Carlo payoff estimate, optionally variance-reduced.

    With ``control="degree-one"`` the payoff is regressed in-sample on
    (1, underlying) and the linear term is replaced by its closed-form
    expectation, which leaves the estimator unbiased up to the in-sample
    regression and typically shrinks the variance substantially.
    """
    u = _underlying_values(bundle, underlying)
    p = np.asarray(payoff(u), dtype=float)
    if p.shape != u.shape:
        raise InvalidParameterError("payoff must map the underlying array to one value per path")
    n = p.size
    coef = 0.0
    if control == "degree-one":
        if np.ptp(u) == 0.0 or np.var(u) == 0.0:
            warnings.warn("degenerate underlying: control variate disabled", RuntimeWarning)
            samples = p
            control = "none"
        else:
            design = np.column_stack([np.ones(n), u])
            (_, coef), *_ = np.linalg.lstsq(design, p, rcond=None)
            samples = p - coef * (u - _underlying_mean(bundle, underlying))
    elif control == "none":
        samples = p
    else:
        raise InvalidParameterError(f"unknown control {control!r}")

    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    value = discount * mean
    dse = discount * se
    return McEstimate(
        value=value,
        std_error=dse,
        ci_low=value - _Z95 * dse,
        ci_high=value + _Z95 * dse,
        n_paths=n,
        control=control,
        control_coef=float(coef),
    )


def martingale_diagnostic(bundle, params=None):
    """Sample estimate of the discounted gains at the horizon versus X_0.

    The discounted gains process (discounted stock plus accumulated
    discounted dividends) is a martingale, so its expectation must equal
    the initial stock price at every horizon.
    """
    params = params if params is not None else bundle.params
    values = math.exp(-params.r * bundle.horizon) * bundle.terminal_x + bundle.disc_div
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(
        value=mean,
        std_error=se,
        ci_low=mean - _Z95 * se,
        ci_high=mean + _Z95 * se,
        n_paths=n,
    )


@dataclass(frozen=True)
class YieldStats:
    """Summary statistics of stored dividend-yield paths."""

    minimum: float
    maximum: float
    quantiles: dict


def yield_path_stats(bundle, quantiles=(0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)):
    """Min/max/quantiles of the dividend yield across all stored path values."""
    if bundle.yield_paths is None:
        raise InvalidParameterError("yield paths were not stored; use store_policy='full'")
    flat = bundle.yield_paths.ravel()
    qs = {float(q): float(np.quantile(flat, q)) for q in quantiles}
    return YieldStats(minimum=float(flat.min()), maximum=float(flat.max()), quantiles=qs)
