"""Graded monomial basis and the generator matrix of the (jump-)diffusion.

The augmented process (C, X, Y) is polynomial: its generator maps
polynomials of total degree <= n into themselves.  On a fixed monomial
basis H the action is therefore a matrix G with G @ H(state) equal to
the generator applied to H componentwise, and conditional moments follow
from ``expm(G * dt) @ H(state)``.

Monomials c^i x^j y^alpha are ordered graded-lexicographically with
c < x < y_1 < ... < y_d, the constant monomial first.  The generator is
degree-graded (each image term has the same total degree as its source),
so the leading N_k x N_k block of G is exactly the generator on the
degree <= k sub-basis.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InadmissibleParamsError, InvalidParameterError
from .model import jump_moment, validate_admissibility


class MultiIndex(NamedTuple):
    """Exponents (i, j, alpha) of the monomial c^i x^j y^alpha."""

    i: int
    j: int
    alpha: tuple

    @property
    def degree(self):
        return self.i + self.j + sum(self.alpha)


def _compositions(total, parts):
    """All tuples of `parts` non-negative integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class PolyBasis:
    """Ordered monomial basis of degree <= n in (c, x, y_1..y_d)."""

    d: int
    n: int
    include_c: bool
    members: tuple
    _pos: dict = field(repr=False)

    @property
    def size(self):
        return len(self.members)

    def position(self, i, j, alpha):
        """Index of the monomial c^i x^j y^alpha; KeyError if absent."""
        return self._pos[MultiIndex(i, j, tuple(alpha))]

    def eval(self, c, x, y):
        """Componentwise monomial evaluation, in basis order."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty(self.size)
        for pos, (i, j, alpha) in enumerate(self.members):
            v = (c ** i) * (x ** j)
            for k, ak in enumerate(alpha):
                if ak:
                    v *= y[k] ** ak
            out[pos] = v
        return out


@lru_cache(maxsize=None)
def build_basis(d, n, include_c=True):
    """Graded-lex monomial basis of degree <= n in 2+d (or 1+d) variables."""
    if d < 1:
        raise InvalidParameterError(f"need d >= 1, got {d}")
    if n < 1:
        raise InvalidParameterError(f"need basis degree n >= 1, got {n}")
    members = []
    i_max = n if include_c else 0
    for i in range(i_max + 1):
        for j in range(n - i + 1):
            for q in range(n - i - j + 1):
                for alpha in _compositions(q, d):
                    members.append(MultiIndex(i, j, alpha))
    members.sort(key=lambda m: (m.degree, tuple(-e for e in (m.i, m.j) + m.alpha)))
    members = tuple(members)
    pos = {m: k for k, m in enumerate(members)}
    return PolyBasis(d=d, n=n, include_c=include_c, members=members, _pos=pos)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Matrix representation of the generator on a monomial basis.

    Row conventions: ``matrix @ basis.eval(...)`` evaluates the generator
    applied to each basis monomial.  Entries are in 1/year.
    """

    basis: PolyBasis
    matrix: np.ndarray


def _base_power_terms(d, a, m):
    """Expansion of (x - 1'y/a)^m as [(x-exponent, y-exponents, coeff)]."""
    out = []
    for q in range(m + 1):
        cq = math.comb(m, q) * (-1.0 / a) ** q
        for gamma in _compositions(q, d):
            mult = math.factorial(q)
            for g in gamma:
                mult //= math.factorial(g)
            out.append((m - q, gamma, cq * mult))
    return out


def _add_tuple(alpha, k, delta):
    lst = list(alpha)
    lst[k] += delta
    return tuple(lst)


def _generator_row(mi, params, jump):
    """Coefficients of the generator applied to one monomial, as a dict."""
    i, j, alpha = mi
    d, a, r = params.d, params.a, params.r
    b, beta, sigma, nu = params.b, params.beta, params.sigma, params.nu
    out = defaultdict(float)

    def add(ii, jj, aa, w):
        out[MultiIndex(ii, jj, tuple(aa))] += w

    # dividend accrual: D * df/dc
    if i:
        for k in range(d):
            add(i - 1, j, _add_tuple(alpha, k, 1), float(i))

    # stock drift: (r x - D) * df/dx
    if j:
        add(i, j, alpha, j * r)
        for k in range(d):
            add(i, j - 1, _add_tuple(alpha, k, 1), -float(j))

    # factor drift: sum_k (b_k x + (beta y)_k) * df/dy_k
    for k in range(d):
        ak = alpha[k]
        if not ak:
            continue
        down = _add_tuple(alpha, k, -1)
        add(i, j + 1, down, ak * b[k])
        for l in range(d):
            add(i, j, _add_tuple(down, l, 1), ak * beta[k, l])

    # stock diffusion: 0.5 sigma^2 (x - D/a)^2 * d2f/dx2
    if j >= 2 and sigma != 0.0:
        w = 0.5 * sigma ** 2 * j * (j - 1)
        for dj, gamma, cf in _base_power_terms(d, a, 2):
            aa = tuple(alpha[k] + gamma[k] for k in range(d))
            add(i, j - 2 + dj, aa, w * cf)

    # factor diffusion: 0.5 nu_k^2 y_k (x - D/a) * d2f/dy_k2
    for k in range(d):
        ak = alpha[k]
        if ak < 2 or nu[k] == 0.0:
            continue
        w = 0.5 * nu[k] ** 2 * ak * (ak - 1)
        down = _add_tuple(alpha, k, -1)
        add(i, j + 1, down, w)
        for l in range(d):
            add(i, j, _add_tuple(down, l, 1), -w / a)

    # compensated jumps: only powers m >= 2 of the jump size survive the
    # cancellation against -f and the compensator drift
    if jump is not None and jump.active and j >= 2:
        for m in range(2, j + 1):
            w = jump.lam * math.comb(j, m) * jump_moment(jump, m)
            if w == 0.0:
                continue
            for dj, gamma, cf in _base_power_terms(d, a, m):
                aa = tuple(alpha[k] + gamma[k] for k in range(d))
                add(i, j - m + dj, aa, w * cf)

    return out


def build_generator(params, jump, basis):
    """Generator matrix on `basis` for admissible parameters.

    Raises :class:`InadmissibleParamsError` if the inward-drift conditions
    fail.  Construction asserts polynomial closure: every image monomial
    must already belong to the basis.
    """
    report = validate_admissibility(params)
    if not report.admissible:
        raise InadmissibleParamsError(
            "parameters violate the inward-drift conditions: "
            f"factor slacks {report.factor_slack}, cap slack {report.cap_slack:.6g}"
        )
    size = basis.size
    mat = np.zeros((size, size))
    for row, mi in enumerate(basis.members):
        for target, w in _generator_row(mi, params, jump).items():
            if w == 0.0:
                continue
            try:
                col = basis.position(*target)
            except KeyError:  # pragma: no cover - closure violation is a bug
                raise AssertionError(
                    f"generator image {target} of {mi} escapes the degree-{basis.n} basis"
                ) from None
            mat[row, col] += w
    return GeneratorMatrix(basis=basis, matrix=mat)


def eval_basis(basis, state):
    """Vector H(c, x, y) of all basis monomials at the given state."""
    return basis.eval(state.c, state.x, state.y)


def apply_generator_pointwise(params, jump, basis, coeffs, state):
    """Generator applied to a polynomial, evaluated analytically at a state.

    The polynomial is given by its coefficient vector over `basis`.  The
    value is assembled from the drift/diffusion partial derivatives of each
    monomial; the jump integral is evaluated by shifting x directly for
    every support point of the jump distribution.  Independent of
    :func:`build_generator` on purpose, so the two can cross-check.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.size,):
        raise InvalidParameterError(
            f"coefficient vector must have length {basis.size}, got {coeffs.shape}"
        )
    c, x = float(state.c), float(state.x)
    y = np.atleast_1d(np.asarray(state.y, dtype=float))
    d, a, r = params.d, params.a, params.r
    b, beta, sigma, nu = params.b, params.beta, params.sigma, params.nu
    dvd = float(y.sum())
    base = x - dvd / a
    beta_y = beta @ y

    total = 0.0
    for pos, (i, j, alpha) in enumerate(basis.members):
        cf = coeffs[pos]
        if cf == 0.0:
            continue
        yk_pow = [y[k] ** alpha[k] if alpha[k] else 1.0 for k in range(d)]
        y_all = math.prod(yk_pow)
        ci = c ** i
        xj = x ** j

        val = 0.0
        if i:
            val += dvd * i * c ** (i - 1) * xj * y_all
        if j:
            val += (r * x - dvd) * j * ci * x ** (j - 1) * y_all
        for k in range(d):
            ak = alpha[k]
            if not ak:
                continue
            rest = math.prod(yk_pow[l] for l in range(d) if l != k)
            val += (b[k] * x + beta_y[k]) * ak * ci * xj * rest * y[k] ** (ak - 1)
        if j >= 2:
            val += 0.5 * sigma ** 2 * base ** 2 * j * (j - 1) * ci * x ** (j - 2) * y_all
        for k in range(d):
            ak = alpha[k]
            if ak < 2:
                continue
            rest = math.prod(yk_pow[l] for l in range(d) if l != k)
            val += (
                0.5 * nu[k] ** 2 * y[k] * base * ak * (ak - 1)
                * ci * xj * rest * y[k] ** (ak - 2)
            )
        total += cf * val

    if jump is not None and jump.active:
        p0 = 0.0
        px = 0.0
        for pos, (i, j, alpha) in enumerate(basis.members):
            cf = coeffs[pos]
            if cf == 0.0:
                continue
            y_all = math.prod(y[k] ** alpha[k] for k in range(d) if alpha[k])
            p0 += cf * c ** i * x ** j * y_all
            if j:
                px += cf * c ** i * j * x ** (j - 1) * y_all
        for z, wz in jump.dist.points():
            if wz == 0.0:
                continue
            xz = x + base * z
            pz = 0.0
            for pos, (i, j, alpha) in enumerate(basis.members):
                cf = coeffs[pos]
                if cf == 0.0:
                    continue
                y_all = math.prod(y[k] ** alpha[k] for k in range(d) if alpha[k])
                pz += cf * c ** i * xz ** j * y_all
            total += jump.lam * wz * (pz - p0 - base * z * px)

    return float(total)
