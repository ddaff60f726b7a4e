"""Maximum-entropy density recovery from moments and option pricing with it.

Given raw moments M_0=1, M_1, ..., M_N of a distribution on [0, inf), the
entropy-maximizing density with those moments is exponential-polynomial,

    f(x) = exp(-(lam_0 + lam_1 x + ... + lam_N x^N)),

and the multipliers solve a smooth convex dual problem.  The solve runs
on a truncated, rescaled domain (raw powers of index-scale numbers are
numerically hopeless) with Gauss-Legendre quadrature and a damped Newton
iteration on the dual; the matched moments are verified on a refined
node set before a fit is accepted.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .black import black76_price, black_scholes_price, implied_vol  # noqa: F401  (re-export)
from .errors import ConvergenceError, InfeasibleMomentsError, InvalidParameterError
from .moments import cumulative_dividend_moments, stock_price_moments

_TAIL_WIDTHS = 40.0      # upper domain cut: M1 + 40 standard deviations
_SUPPORT_WIDTHS = 30.0   # lower support cut for concentrated densities
_DEGENERATE_REL_STD = 1e-8


@dataclass(frozen=True, eq=False)
class MaxEntDensity:
    """Fitted exponential-polynomial density on [0, x_max].

    ``lambdas`` are the multipliers on the original (unscaled) x axis;
    ``scale`` is the domain cut x_max; ``nodes``/``weights`` the quadrature
    rule used by the fit (on the original axis).  For densities much
    narrower than their domain, ``support_lo`` marks a lower cut below
    which the fitted mass is zero to double precision.

    The exponent polynomial is evaluated through its mean-centered,
    std-scaled representation (``gamma``, ``z_center``, ``z_scale``,
    ``log_norm``): the raw power-basis multipliers of a concentrated
    density are astronomically large with canceling terms and cannot be
    summed accurately in floating point.
    """

    lambdas: np.ndarray
    scale: float
    nodes: np.ndarray
    weights: np.ndarray
    moments: np.ndarray
    iterations: int
    residual: float
    gamma: np.ndarray = None
    z_center: float = 0.0
    z_scale: float = 1.0
    log_norm: float = 0.0
    support_lo: float = 0.0

    @property
    def domain(self):
        return (0.0, self.scale)

    def pdf(self, x):
        """Density values, zero outside [support_lo, x_max]."""
        x = np.asarray(x, dtype=float)
        u = x / self.scale
        z = (u - self.z_center) / self.z_scale
        zp = z[..., None] ** np.arange(1, self.gamma.size + 1)
        expo = -(self.log_norm + zp @ self.gamma)
        inside = (x >= self.support_lo) & (u <= 1.0)
        out = np.where(inside, np.exp(np.where(inside, expo, 0.0)), 0.0) / self.scale
        return out if out.ndim else float(out)

    def entropy(self):
        """Differential entropy -int f ln f = sum_n lam_n M_n."""
        return float(self.lambdas @ self.moments)


def _check_feasible(m):
    n = m.size - 1
    if abs(m[0] - 1.0) > 1e-12:
        raise InvalidParameterError(f"M_0 must equal 1, got {m[0]}")
    if n >= 1 and m[1] <= 0:
        raise InfeasibleMomentsError(f"need M_1 > 0 for a density on [0, inf), got {m[1]}")
    if n >= 2 and m[2] - m[1] ** 2 <= 0:
        raise InfeasibleMomentsError(
            f"moment sequence infeasible: M_2 - M_1^2 = {m[2] - m[1] ** 2:.6g} <= 0"
        )
    if n >= 3 and m[1] * m[3] - m[2] ** 2 <= 0:
        raise InfeasibleMomentsError(
            "moment sequence infeasible: M_1*M_3 - M_2^2 <= 0"
        )


@lru_cache(maxsize=64)
def _gauss_legendre01(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _quad_rule(center, width, n, lo=0.0):
    """Composite Gauss-Legendre rule on [lo, 1] concentrated around the bulk.

    The tail padding needed for slowly decaying densities makes the domain
    much wider than a concentrated density's support; plain quadrature then
    under-resolves the bulk.  Panels split at center +/- 12 widths keep the
    node density high where the mass lives.
    """
    split_lo = center - 12.0 * width
    split_hi = center + 12.0 * width
    edges = [lo]
    if split_lo > lo + 0.05:
        edges.append(split_lo)
    if edges[-1] + 0.05 < split_hi < 0.95:
        edges.append(split_hi)
    edges.append(1.0)
    if len(edges) == 2:
        u, w = _gauss_legendre01(n)
        return lo + (1.0 - lo) * u, (1.0 - lo) * w
    bulk = next(k for k in range(len(edges) - 1) if edges[k] <= center <= edges[k + 1])
    n_panels = len(edges) - 1
    counts = [max(96, round(0.4 * n / (n_panels - 1)))] * n_panels
    counts[bulk] = max(96, n - sum(counts[:bulk]) - sum(counts[bulk + 1:]))
    nodes, weights = [], []
    for (a, b), cnt in zip(zip(edges[:-1], edges[1:]), counts):
        u, w = _gauss_legendre01(int(cnt))
        nodes.append(a + (b - a) * u)
        weights.append((b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _start_points(mu, s0):
    """Candidate starting coefficients in standardized coordinates.

    The two-moment Gaussian start is the unit quadratic there and is nearly
    exact for bump-shaped densities; the exponential start suits wide,
    heavy-shouldered ones.  Ordered by coefficient of variation.
    """
    n = mu.size
    exp_start = np.zeros(n)
    exp_start[0] = s0 / mu[0]
    if n == 1:
        return [exp_start]
    gauss = np.zeros(n)
    gauss[1] = 0.5
    if s0 < 0.35 * mu[0]:
        return [gauss, exp_start]
    return [exp_start, gauss]


def _dual_newton(mu, nodes, weights, max_iter, tol, gamma0):
    """Damped Newton iteration on the convex dual of the moment problem.

    The exponent polynomial is parametrized in mean-centered, std-scaled
    coordinates z = (u - m0)/s0, where the dual Hessian (a covariance of
    standardized powers) stays well conditioned even for densities that are
    very concentrated relative to the domain.  Newton steps are invariant
    under this affine change, but the linear solves are not, which is the
    whole point.  Residuals are always measured on the raw moments ``mu``.

    Returns (lam_scaled including lam_0, gamma, iterations, residual).
    """
    n = mu.size
    if n >= 2 and mu[1] - mu[0] ** 2 > 0:
        m0, s0 = mu[0], math.sqrt(mu[1] - mu[0] ** 2)
    else:
        m0, s0 = 0.0, 1.0
    z = (nodes - m0) / s0
    zpow = z[:, None] ** np.arange(2 * n + 1)[None, :]
    upow = nodes[:, None] ** np.arange(1, n + 1)[None, :]
    # basis change z^p = sum_k chg[p, k] u^k
    chg = np.zeros((n + 1, n + 1))
    for p in range(n + 1):
        for k in range(p + 1):
            chg[p, k] = math.comb(p, k) * (-m0) ** (p - k) / s0 ** p
    target_z = chg[1:] @ np.concatenate(([1.0], mu))

    def state(g):
        expo = zpow[:, 1:n + 1] @ g
        shift = expo.min()
        phi = weights * np.exp(-(expo - shift))
        total = phi.sum()
        prob = phi / total
        zmom = zpow.T @ prob            # <z^0 .. z^2N>
        umom = upow.T @ prob            # <u^1 .. u^N>
        log_z = math.log(total) - shift
        merit = log_z + g @ target_z
        resid = np.abs(umom - mu) / np.maximum(np.abs(mu), 1e-300)
        return zmom, umom, log_z, merit, float(resid.max())

    gamma = np.asarray(gamma0, dtype=float).copy()
    zmom, umom, log_z, merit, residual = state(gamma)
    best = (gamma.copy(), log_z, residual)
    stalls = 0
    it = 0
    for it in range(1, max_iter + 1):
        if residual < tol:
            break
        # differences first, then the basis change: keeps the gradient noise
        # proportional to the residual instead of to the moment magnitudes
        grad = chg[1:, 1:] @ (mu - umom)
        hess = np.empty((n, n))
        for p in range(n):
            hess[p] = zmom[p + 2:p + 2 + n] - zmom[p + 1] * zmom[1:n + 1]
        hess = 0.5 * (hess + hess.T)
        dscale = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-30))
        hs = hess * dscale[:, None] * dscale[None, :]
        try:
            step = dscale * np.linalg.solve(hs + 1e-13 * np.eye(n), -(dscale * grad))
        except np.linalg.LinAlgError:
            step = dscale * np.linalg.lstsq(hs, -(dscale * grad), rcond=None)[0]
        if not np.all(np.isfinite(step)):
            step = -grad

        slope = grad @ step
        t = 1.0
        accepted = False
        for _ in range(30):
            cand = gamma + t * step
            zmom_c, umom_c, log_z_c, merit_c, resid_c = state(cand)
            # Armijo on the dual merit drives the global phase; once the
            # merit gets too flat to compare reliably, accepting on raw
            # residual decrease keeps the tail convergence going
            ok_merit = np.isfinite(merit_c) and (
                merit_c <= merit + 1e-4 * t * slope + 1e-13 * abs(merit)
            )
            ok_resid = np.isfinite(resid_c) and resid_c < residual * (1.0 - 1e-4)
            if ok_merit or ok_resid:
                gamma, zmom, umom, log_z, merit, residual = (
                    cand, zmom_c, umom_c, log_z_c, merit_c, resid_c)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            stalls += 1
            if stalls >= 3:
                break
            continue
        stalls = 0
        if residual < best[2]:
            best = (gamma.copy(), log_z, residual)

    gamma, log_z, residual = best
    lam = np.empty(n + 1)
    lam[1:] = chg[1:, 1:].T @ gamma
    lam[0] = log_z + chg[1:, 0] @ gamma
    return lam, (gamma, m0, s0, log_z), it, residual


def fit_maxent(moments, n_nodes=800, max_iter=200, tol=1e-12, verify_tol=1e-10):
    """Fit the maximum-entropy density matching raw moments M_0..M_N.

    Parameters
    ----------
    moments : sequence
        Raw moments, M_0 = 1 first.  At least (M_0, M_1).
    n_nodes : int
        Initial Gauss-Legendre node count; doubled (up to 8x) if the
        matched moments do not survive a refined-quadrature check.

    Raises
    ------
    InfeasibleMomentsError
        If the sequence fails the leading Hankel checks.
    ConvergenceError
        If the dual Newton iteration cannot reach the target residual.
    """
    m = np.asarray(moments, dtype=float)
    if m.ndim != 1 or m.size < 2:
        raise InvalidParameterError("need at least (M_0, M_1)")
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError("non-finite moment input")
    _check_feasible(m)

    n = m.size - 1
    std = math.sqrt(m[2] - m[1] ** 2) if n >= 2 else m[1]
    scale = m[1] + _TAIL_WIDTHS * std
    mu = m[1:] / scale ** np.arange(1, n + 1)
    center = float(mu[0])
    width = std / scale
    # for very concentrated densities, cut the zero-mass region below the
    # bulk: it carries no probability but makes the dual landscape stiff
    lo = center - _SUPPORT_WIDTHS * width
    lo = lo if lo > 0.05 else 0.0

    last_residual = np.inf
    warm = None
    s0 = math.sqrt(mu[1] - mu[0] ** 2) if n >= 2 and mu[1] > mu[0] ** 2 else 1.0
    for nodes_count in (n_nodes, 2 * n_nodes, 4 * n_nodes):
        u, w = _quad_rule(center, width, nodes_count, lo=lo)
        converged = None
        starts = ([warm] if warm is not None else []) + _start_points(mu, s0)
        for gamma0 in starts:
            lam_scaled, zrep, iters, residual = _dual_newton(mu, u, w, max_iter, tol, gamma0)
            last_residual = min(last_residual, residual)
            if residual <= 1e-10:
                converged = (lam_scaled, zrep, iters, residual)
                break
        if converged is None:
            # Newton failed from every start; more nodes will not help
            break
        lam_scaled, (gamma, m0, s0_fit, log_z), iters, residual = converged
        warm = gamma
        # verify the matched moments against a refined quadrature rule,
        # evaluating through the standardized coefficients for stability
        u2, w2 = _quad_rule(center, width, 2 * nodes_count, lo=lo)
        z2 = (u2 - m0) / s0_fit
        expo = z2[:, None] ** np.arange(1, n + 1) @ gamma + log_z
        phi = w2 * np.exp(-expo)
        mom2 = np.array([(phi * u2 ** k).sum() for k in range(1, n + 1)])
        err2 = np.max(np.abs(mom2 - mu) / np.maximum(np.abs(mu), 1e-300))
        norm_err = abs(phi.sum() - 1.0)
        if max(err2, norm_err) < verify_tol:
            # change of variables x = scale * u: lam_0 picks up ln(scale)
            lam = lam_scaled / scale ** np.arange(n + 1)
            lam[0] += math.log(scale)
            return MaxEntDensity(
                lambdas=lam,
                scale=float(scale),
                nodes=u * scale,
                weights=w * scale,
                moments=m.copy(),
                iterations=iters,
                residual=float(residual),
                gamma=gamma.copy(),
                z_center=float(m0),
                z_scale=float(s0_fit),
                log_norm=float(log_z),
                support_lo=float(lo * scale),
            )
    raise ConvergenceError(
        f"maxent dual did not converge: best residual {last_residual:.3e} "
        f"(target {1e-10:g}) with up to {4 * n_nodes} nodes"
    )


def integrate_payoff(density, payoff, points=()):
    """Integral of ``payoff(x) * density(x)`` over [0, x_max].

    ``points`` lists interior breakpoints (e.g. a strike) at which the payoff
    has a kink; the integral is then split into smooth segments with a fresh
    Gauss-Legendre rule per segment.  Without breakpoints the density's own
    node set is used, which reproduces matched moments for polynomial
    payoffs of degree <= N.
    """
    lo, hi = density.support_lo, density.scale
    cuts = sorted({p for p in points if lo < p < hi})
    if not cuts:
        vals = np.asarray(payoff(density.nodes), dtype=float)
        return float((density.weights * vals * density.pdf(density.nodes)).sum())
    edges = [lo, *cuts, hi]
    u, w = _gauss_legendre01(400)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        x = a + (b - a) * u
        vals = np.asarray(payoff(x), dtype=float)
        total += (b - a) * float((w * vals * density.pdf(x)).sum())
    return total


@dataclass(frozen=True)
class OptionSpec:
    """European option description.

    ``underlying`` is "stock" (payoff on X at expiry) or "dividend"
    (payoff on dividends paid over ``window``); ``rate`` is the discount
    rate applied to the payoff at expiry.
    """

    kind: str
    underlying: str
    strike: float
    expiry: float
    rate: float
    window: tuple = None

    def __post_init__(self):
        if self.kind not in ("call", "put"):
            raise InvalidParameterError(f"unknown option kind {self.kind!r}")
        if self.underlying not in ("stock", "dividend"):
            raise InvalidParameterError(f"unknown underlying {self.underlying!r}")
        if not self.strike > 0:
            raise InvalidParameterError(f"strike must be positive, got {self.strike}")
        if not self.expiry > 0:
            raise InvalidParameterError(f"expiry must be positive, got {self.expiry}")
        if self.underlying == "dividend":
            if self.window is None or len(self.window) != 2:
                raise InvalidParameterError("dividend option needs a (T0, T1) window")


def _payoff_fn(kind, strike):
    if kind == "call":
        return lambda x: np.maximum(x - strike, 0.0)
    return lambda x: np.maximum(strike - x, 0.0)


def _intrinsic(kind, level, strike):
    return max(level - strike, 0.0) if kind == "call" else max(strike - level, 0.0)


def _price_from_moments(raw_moments, spec, n_moments):
    """Discounted payoff integral against the maxent fit of the moments.

    Degenerate (zero-variance) underlyings price the point mass directly.
    If the full moment count is numerically unfittable (densities extremely
    concentrated relative to their mean), the fit falls back to fewer
    moments, never below two.
    """
    m1 = raw_moments[0]
    var = raw_moments[1] - m1 ** 2 if len(raw_moments) >= 2 else 0.0
    discount = math.exp(-spec.rate * spec.expiry)
    if m1 <= 0 or var <= (_DEGENERATE_REL_STD * max(m1, 1.0)) ** 2:
        return discount * _intrinsic(spec.kind, max(m1, 0.0), spec.strike)
    density = None
    for count in range(min(n_moments, len(raw_moments)), 1, -1):
        try:
            density = fit_maxent(np.concatenate(([1.0], raw_moments[:count])))
            break
        except ConvergenceError:
            if count == 2:
                raise
    value = integrate_payoff(density, _payoff_fn(spec.kind, spec.strike), points=(spec.strike,))
    return discount * value


def price_stock_option(params, jump, state, spec, n_moments):
    """Price a stock option by moment matching with ``n_moments`` moments."""
    if spec.underlying != "stock":
        raise InvalidParameterError("spec.underlying must be 'stock'")
    if n_moments < 2:
        raise InvalidParameterError(f"need at least two moments, got {n_moments}")
    raw = stock_price_moments(params, jump, state, 0.0, spec.expiry, n_moments)
    return _price_from_moments(raw, spec, n_moments)


def price_dividend_option(params, jump, state, spec, n_moments):
    """Price an option on dividends paid over spec.window, expiring at T1.

    For a window that already started the state's ``c`` must be the accrual
    since the window start (the usual normalization sets it to zero at the
    valuation date).
    """
    if spec.underlying != "dividend":
        raise InvalidParameterError("spec.underlying must be 'dividend'")
    if n_moments < 2:
        raise InvalidParameterError(f"need at least two moments, got {n_moments}")
    t0, t1 = spec.window
    if t1 < t0:
        raise InvalidParameterError(f"window must be ordered, got {spec.window}")
    if t1 == t0:
        discount = math.exp(-spec.rate * spec.expiry)
        return discount * _intrinsic(spec.kind, 0.0, spec.strike)
    raw = cumulative_dividend_moments(params, jump, state, 0.0, max(t0, 0.0), t1, n_moments)
    return _price_from_moments(raw, spec, n_moments)
