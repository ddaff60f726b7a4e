import numpy as np
import pytest

from polydiv.model import ModelParams, State

# calibrated single-factor reference parameter sets (r = 0.01 fixed),
# keyed by the dividend-yield cap a
REFERENCE_PARAMS = {
    0.1: dict(r=0.01, a=0.1, sigma=0.3621, b=0.0103, beta=-0.3440, nu=0.0220),
    0.2: dict(r=0.01, a=0.2, sigma=0.2813, b=0.0103, beta=-0.3439, nu=0.0194),
    0.3: dict(r=0.01, a=0.3, sigma=0.2614, b=0.0103, beta=-0.3439, nu=0.0187),
}
REFERENCE_D0 = 0.0371

# December 2015 market snapshot: ten annual dividend futures plus the two
# ATM implied vols, quotes in index points / vol units
MARKET_QUOTES = {
    "DF1": 115.3, "DF2": 108.7, "DF3": 105.5, "DF4": 100.1, "DF5": 95.7,
    "DF6": 92.0, "DF7": 89.6, "DF8": 87.2, "DF9": 84.8, "DF10": 84.6,
}
MARKET_IV_STOCK = 0.2295
MARKET_IV_DIVIDEND = 0.0491


def reference_params(a=0.2):
    kw = REFERENCE_PARAMS[a]
    return ModelParams.single_factor(**kw)


def reference_state():
    return State(c=0.0, x=1.0, y=[REFERENCE_D0])


@pytest.fixture
def params_a02():
    return reference_params(0.2)


@pytest.fixture
def state0():
    return reference_state()


def random_admissible_params(rng, d):
    """Random parameter set satisfying the inward-drift inequalities."""
    a = 0.05 + 0.45 * rng.random()
    r = 0.05 * rng.random()
    beta = rng.uniform(-0.1, 0.15, size=(d, d))
    b = np.empty(d)
    for k in range(d):
        off_min = min((min(beta[k, l], 0.0) for l in range(d) if l != k), default=0.0)
        b[k] = -a * off_min + 0.05 * rng.random()
    margin = 0.02 + 0.3 * rng.random()
    for k in range(d):
        col_rest = sum(beta[l, k] for l in range(d) if l != k)
        beta[k, k] = (r - a - b.sum() / a - margin) - col_rest
    nu = rng.uniform(0.0, 0.05, size=d)
    sigma = rng.uniform(0.05, 0.5)
    return ModelParams(r=r, a=a, sigma=sigma, d=d, b=b, beta=beta, nu=nu)


def random_state_in_E(rng, params):
    """Random point strictly inside the state space E."""
    x = 0.3 + 2.0 * rng.random()
    g = rng.random(params.d) + 1e-3
    y = params.a * x * (0.95 * rng.random()) * g / g.sum()
    return State(c=rng.random(), x=x, y=y)
