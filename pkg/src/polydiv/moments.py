"""Conditional moments, futures prices, and present-value diagnostics.

Everything here rests on one identity: conditional expectations of basis
monomials propagate through the matrix exponential of the generator,

    E_t[H(C_T, X_T, Y_T)] = expm(G * (T - t)) @ H(C_t, X_t, Y_t).

Futures prices are single entries of this vector at degree one; moments
of dividends paid over a window [T0, T1] follow from a binomial
nested-expectation identity; and the present value of future dividends
uses the same linear algebra on a discount-tilted drift matrix.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, InvalidParameterError, NumericError
from .generator import GeneratorMatrix, build_basis, build_generator, eval_basis
from .model import State


def _as_matrix(gen):
    if isinstance(gen, GeneratorMatrix):
        return gen.matrix
    return np.asarray(gen, dtype=float)


def expm_apply(gen, dt, v):
    """Apply the matrix exponential: ``expm(G * dt) @ v``.

    ``dt = 0`` returns a copy of ``v`` exactly.  Uses scaling-and-squaring
    with the 13th-order rational approximant underneath.
    """
    mat = _as_matrix(gen)
    v = np.asarray(v, dtype=float)
    if dt < 0:
        raise InvalidParameterError(f"need dt >= 0, got {dt}")
    if not np.all(np.isfinite(mat)) or not np.all(np.isfinite(v)):
        raise NumericError("non-finite entries in matrix-exponential input")
    if dt == 0:
        return v.copy()
    out = expm(mat * dt) @ v
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix exponential produced non-finite values")
    return out


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Conditional expectations of all basis monomials over a horizon (t, T)."""

    basis: object
    t: float
    T: float
    values: np.ndarray

    def value(self, i=0, j=0, alpha=None):
        """Moment E_t[c^i x^j y^alpha] at time T."""
        if alpha is None:
            alpha = (0,) * self.basis.d
        return float(self.values[self.basis.position(i, j, alpha)])


def conditional_moments(params, jump, state, t, T, n):
    """All mixed moments of (C_T, X_T, Y_T) up to total degree n, given time t."""
    if T < t:
        raise InvalidParameterError(f"need T >= t, got T={T} < t={t}")
    basis = build_basis(params.d, n, include_c=True)
    gen = build_generator(params, jump, basis)
    values = expm_apply(gen, T - t, eval_basis(basis, state))
    return MomentSet(basis=basis, t=t, T=T, values=values)


def stock_futures(params, jump, state, t, T):
    """Futures price on the stock: E_t[X_T]."""
    ms = conditional_moments(params, jump, state, t, T, 1)
    return ms.value(j=1)


def dividend_futures(params, jump, state, t, T0, T1):
    """Futures price on dividends paid over [T0, T1]: E_t[C_T1 - C_T0].

    For a window that has already started (T0 <= t) the state's ``c`` must
    measure dividends accrued since the window start; the price is then
    E_t[C_T1] under that normalization.
    """
    if T1 < T0:
        raise InvalidParameterError(f"need T1 >= T0, got T1={T1} < T0={T0}")
    if T1 < t:
        raise InvalidParameterError(f"window end T1={T1} lies before t={t}")
    basis = build_basis(params.d, 1, include_c=True)
    gen = build_generator(params, jump, basis)
    h = eval_basis(basis, state)
    pos_c = basis.position(1, 0, (0,) * params.d)
    if T0 >= t:
        far = expm_apply(gen, T1 - t, h)[pos_c]
        near = expm_apply(gen, T0 - t, h)[pos_c]
        return float(far - near)
    # started window: accrued dividends live in state.c
    return float(expm_apply(gen, T1 - t, h)[pos_c])


def cumulative_dividend_moments(params, jump, state, t, T0, T1, n):
    """Raw moments M_1..M_n of the window dividends C_T1 - C_T0, given time t.

    Uses the nested-expectation identity: condition on time T0, read off the
    moments of C_T1 from the degree-k matrix exponentials, multiply back by
    powers of -C_T0, and take the outer expectation on the degree-n basis.
    When T0 = t this reduces to reading the c-moments directly with the
    accrual reset to zero.
    """
    if n < 1 or int(n) != n:
        raise InvalidParameterError(f"need moment count n >= 1, got {n}")
    if T0 < t:
        raise InvalidParameterError(f"need t <= T0, got T0={T0} < t={t}")
    if T1 < T0:
        raise InvalidParameterError(f"need T0 <= T1, got T1={T1} < T0={T0}")
    n = int(n)
    d = params.d
    zeros = (0,) * d

    if T0 == t:
        reset = State(c=0.0, x=state.x, y=state.y)
        ms = conditional_moments(params, jump, reset, t, T1, n)
        return np.array([ms.value(i=k) for k in range(1, n + 1)])

    basis_n = build_basis(d, n, include_c=True)
    gen_n = build_generator(params, jump, basis_n)
    outer = expm_apply(gen_n, T0 - t, eval_basis(basis_n, state))

    # rows of expm(G_k (T1-T0)) giving E_{T0}[C_T1^k] as polynomials in the
    # time-T0 state; the leading block of the degree-n generator is exactly
    # the degree-k generator because the generator preserves total degree.
    q_rows = {}
    for k in range(1, n + 1):
        basis_k = build_basis(d, k, include_c=True)
        nk = basis_k.size
        ek = expm(gen_n.matrix[:nk, :nk] * (T1 - T0))
        q_rows[k] = (basis_k, ek[basis_k.position(k, 0, zeros)])

    out = np.empty(n)
    for order in range(1, n + 1):
        total = ((-1.0) ** order) * outer[basis_n.position(order, 0, zeros)]
        for k in range(1, order + 1):
            basis_k, q = q_rows[k]
            sign = (-1.0) ** (order - k)
            inner = 0.0
            for pos, (i, j, alpha) in enumerate(basis_k.members):
                if q[pos] == 0.0:
                    continue
                inner += q[pos] * outer[basis_n.position(i + order - k, j, alpha)]
            total += math.comb(order, k) * sign * inner
        out[order - 1] = total
    return out


def stock_price_moments(params, jump, state, t, T, n_moments):
    """Raw moments M_1..M_N of X_T, computed on the (x, y)-only basis."""
    if n_moments < 1:
        raise InvalidParameterError(f"need at least one moment, got {n_moments}")
    basis = build_basis(params.d, int(n_moments), include_c=False)
    gen = build_generator(params, jump, basis)
    values = expm_apply(gen, T - t, eval_basis(basis, state))
    zeros = (0,) * params.d
    return np.array([values[basis.position(0, k, zeros)] for k in range(1, int(n_moments) + 1)])


class PresentValue(NamedTuple):
    """Split of the stock price into dividend PV and discounted terminal value."""

    pv_dividends: float
    discounted_terminal: float


def pv_dividends(params, state, horizon):
    """Present value of dividends over [t, t+horizon] plus the discounted
    expected terminal stock price.

    Computed from the discount-tilted linear drift system (subtract r from
    the diagonal of the (x, y) block and graft an accumulator row), so the
    identity ``pv + discounted_terminal == state.x`` holds to numerical
    precision for every horizon.
    """
    if horizon < 0:
        raise InvalidParameterError(f"need horizon >= 0, got {horizon}")
    d = params.d
    mat = np.zeros((2 + d, 2 + d))
    mat[0, 2:] = 1.0                     # accumulates discounted dividends
    mat[1, 2:] = -1.0                    # d/ds E[e^{-rs} X_s]
    mat[2:, 1] = params.b
    mat[2:, 2:] = params.beta - params.r * np.eye(d)
    v0 = np.concatenate(([0.0, state.x], state.y))
    out = expm_apply(mat, horizon, v0)
    return PresentValue(pv_dividends=float(out[0]), discounted_terminal=float(out[1]))


def pv_dividends_limit(params, state, horizon=200.0, check_horizon=150.0, tol=1e-6):
    """Infinite-horizon dividend PV, approximated at a long finite horizon.

    Raises :class:`DomainError` if the PV has not converged between the
    check horizon and the final horizon (relative to the stock price).
    """
    far = pv_dividends(params, state, horizon)
    near = pv_dividends(params, state, check_horizon)
    if abs(far.pv_dividends - near.pv_dividends) > tol * state.x:
        raise DomainError(
            "dividend present value not converged: "
            f"|PV({horizon}) - PV({check_horizon})| = "
            f"{abs(far.pv_dividends - near.pv_dividends):.3e} > {tol:g} * x"
        )
    return far
