import math

import numpy as np
import pytest

from polydiv.errors import InadmissibleParamsError, InvalidParameterError
from polydiv.generator import (
    apply_generator_pointwise,
    build_basis,
    build_generator,
    eval_basis,
)
from polydiv.model import JumpSpec, ModelParams, PointMass, State, TwoPoint

from conftest import random_admissible_params, random_state_in_E


class TestBasis:
    def test_degree_one_layout(self):
        b = build_basis(1, 1)
        assert b.size == 4
        assert [(m.i, m.j, m.alpha) for m in b.members] == [
            (0, 0, (0,)), (1, 0, (0,)), (0, 1, (0,)), (0, 0, (1,)),
        ]

    @pytest.mark.parametrize("d,n,size", [(1, 2, 10), (1, 6, 84), (2, 3, 35), (3, 4, 126)])
    def test_sizes(self, d, n, size):
        assert build_basis(d, n).size == size == math.comb(n + d + 2, d + 2)

    def test_lookup_bijection(self):
        b = build_basis(2, 4)
        for pos, m in enumerate(b.members):
            assert b.position(m.i, m.j, m.alpha) == pos

    def test_degree_zero_rejected(self):
        with pytest.raises(InvalidParameterError):
            build_basis(1, 0)

    def test_eval(self):
        b = build_basis(1, 1)
        np.testing.assert_allclose(b.eval(0.0, 1.0, [0.0371]), [1, 0, 1, 0.0371])
        np.testing.assert_allclose(b.eval(0.0, 0.0, [0.0]), [1, 0, 0, 0])
        b2 = build_basis(1, 3)
        vec = b2.eval(2.0, 3.0, [4.0])
        assert vec[b2.position(1, 1, (1,))] == pytest.approx(24.0)


class TestGeneratorMatrix:
    def test_degree_one_block(self, params_a02):
        basis = build_basis(1, 1)
        g = build_generator(params_a02, None, basis)
        # rows/cols 1..3 are (c, x, y); the generator acts as
        # c -> y, x -> r x - y, y -> b x + beta y
        block = g.matrix[1:, 1:]
        np.testing.assert_allclose(
            block,
            [[0.0, 0.0, 1.0], [0.0, 0.01, -1.0], [0.0, 0.0103, -0.3439]],
        )
        # constant monomial row and column are identically zero
        assert not g.matrix[0].any()
        assert not g.matrix[:, 0].any()

    def test_drift_only_x_squared(self):
        p = ModelParams.single_factor(r=0.03, a=0.1, sigma=0.0, b=0.0, beta=-0.2, nu=0.0)
        basis = build_basis(1, 2)
        g = build_generator(p, None, basis)
        row = g.matrix[basis.position(0, 2, (0,))]
        expect = np.zeros(basis.size)
        expect[basis.position(0, 2, (0,))] = 2 * 0.03   # 2 r x^2
        expect[basis.position(0, 1, (1,))] = -2.0       # -2 x y cross term
        np.testing.assert_allclose(row, expect)

    def test_jump_terms_vanish_for_linear_x(self, params_a02):
        basis = build_basis(1, 3)
        g0 = build_generator(params_a02, None, basis)
        for dist in (PointMass(-0.3), TwoPoint(-0.4, 0.3, 0.5)):
            gj = build_generator(params_a02, JumpSpec(lam=2.0, dist=dist), basis)
            for pos, m in enumerate(basis.members):
                if m.j <= 1:
                    np.testing.assert_array_equal(g0.matrix[pos], gj.matrix[pos])
            # degree >= 2 in x must differ
            assert not np.allclose(g0.matrix, gj.matrix)

    def test_inadmissible_params_rejected(self):
        p = ModelParams.single_factor(r=0.01, a=0.2, sigma=0.3, b=-0.01, beta=-0.3, nu=0.02)
        with pytest.raises(InadmissibleParamsError):
            build_generator(p, None, build_basis(1, 2))

    def test_volatility_absent_from_degree_one(self, params_a02):
        basis = build_basis(1, 1)
        g1 = build_generator(params_a02, None, basis)
        bumped = ModelParams.single_factor(r=0.01, a=0.2, sigma=0.9, b=0.0103,
                                           beta=-0.3439, nu=0.05)
        g2 = build_generator(bumped, None, basis)
        np.testing.assert_array_equal(g1.matrix, g2.matrix)


class TestPointwiseOracle:
    def test_generator_of_c_is_dividend_rate(self, params_a02):
        basis = build_basis(1, 2)
        coeffs = np.zeros(basis.size)
        coeffs[basis.position(1, 0, (0,))] = 1.0
        st = State(0.4, 1.3, [0.02])
        assert apply_generator_pointwise(params_a02, None, basis, coeffs, st) == pytest.approx(0.02)

    def test_generator_of_x_is_drift(self, params_a02):
        basis = build_basis(1, 2)
        coeffs = np.zeros(basis.size)
        coeffs[basis.position(0, 1, (0,))] = 1.0
        st = State(0.0, 1.1, [0.03])
        val = apply_generator_pointwise(params_a02, None, basis, coeffs, st)
        assert val == pytest.approx(0.01 * 1.1 - 0.03)

    def test_generator_of_x_squared_reference_point(self, params_a02):
        basis = build_basis(1, 2)
        coeffs = np.zeros(basis.size)
        coeffs[basis.position(0, 2, (0,))] = 1.0
        st = State(0.0, 1.0, [0.0371])
        val = apply_generator_pointwise(params_a02, None, basis, coeffs, st)
        expect = 2 * (0.01 - 0.0371) + 0.2813 ** 2 * (1 - 0.0371 / 0.2) ** 2
        assert val == pytest.approx(expect, rel=1e-14)
        assert val == pytest.approx(-0.0017046, abs=5e-7)

    def test_matrix_and_pointwise_agree(self):
        rng = np.random.default_rng(42)
        jumps = [None,
                 JumpSpec(lam=0.7, dist=PointMass(-0.35)),
                 JumpSpec(lam=1.3, dist=TwoPoint(-0.5, 0.4, 0.6))]
        for trial in range(60):
            d = int(rng.integers(1, 4))
            params = random_admissible_params(rng, d)
            state = random_state_in_E(rng, params)
            jump = jumps[trial % 3]
            basis = build_basis(d, 4)
            gen = build_generator(params, jump, basis)
            coeffs = rng.standard_normal(basis.size)
            via_matrix = float(coeffs @ (gen.matrix @ eval_basis(basis, state)))
            direct = apply_generator_pointwise(params, jump, basis, coeffs, state)
            assert via_matrix == pytest.approx(direct, rel=1e-10, abs=1e-12)

    def test_linearity(self, params_a02):
        rng = np.random.default_rng(1)
        basis = build_basis(1, 4)
        gen = build_generator(params_a02, None, basis)
        u, v = rng.standard_normal((2, basis.size))
        st = State(0.2, 0.9, [0.05])
        h = eval_basis(basis, st)
        lhs = (u + 2.5 * v) @ (gen.matrix @ h)
        rhs = u @ (gen.matrix @ h) + 2.5 * (v @ (gen.matrix @ h))
        assert lhs == pytest.approx(rhs, rel=1e-12)
