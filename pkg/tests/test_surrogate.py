import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charuq.calibration import Normal, PriorSpec, Uniform
from charuq.errors import FitError
from charuq.sampling import lhs_unit
from charuq.surrogate import (
    BasisDimension,
    FieldSurrogate,
    MultiIndex,
    PCEModel,
    basis_eval,
    fit,
    fit_field,
    hyperbolic_multi_indices,
    pce_eval,
    pce_moments,
)

from oracles import hermite_projection, legendre_projection


class TestMultiIndices:
    def test_total_degree_set(self):
        got = [ix.degrees for ix in hyperbolic_multi_indices(2, 2, 1.0)]
        assert got == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_hyperbolic_drops_interaction(self):
        got = [ix.degrees for ix in hyperbolic_multi_indices(2, 2, 0.5)]
        assert (1, 1) not in got
        assert len(got) == 5

    def test_one_dimensional_reduces_to_total_degree(self):
        for q in (0.3, 0.75, 1.0):
            got = [ix.degrees for ix in hyperbolic_multi_indices(1, 3, q)]
            assert got == [(0,), (1,), (2,), (3,)]

    @given(p=st.integers(1, 4), order=st.integers(0, 5))
    def test_q1_count_is_binomial(self, p, order):
        got = hyperbolic_multi_indices(p, order, 1.0)
        assert len(got) == math.comb(p + order, order)

    @given(p=st.integers(1, 3), order=st.integers(0, 4), q=st.floats(0.3, 1.0))
    def test_hyperbolic_subset_of_total_degree(self, p, order, q):
        hyp = {ix.degrees for ix in hyperbolic_multi_indices(p, order, q)}
        full = {ix.degrees for ix in hyperbolic_multi_indices(p, order, 1.0)}
        assert hyp <= full
        assert tuple([0] * p) in hyp


class TestBasis:
    def test_zero_index_is_one(self):
        kinds = (BasisDimension("legendre", -1.0, 1.0), BasisDimension("hermite", 0.0, 1.0))
        val = basis_eval(MultiIndex((0, 0)), np.array([[0.3, -1.7]]), kinds)
        assert val[0] == 1.0

    def test_legendre_degree_one_normalization(self):
        kinds = (BasisDimension("legendre", -1.0, 1.0),)
        val = basis_eval(MultiIndex((1,)), np.array([[1.0]]), kinds)
        assert val[0] == pytest.approx(math.sqrt(3.0), rel=1e-12)

    def test_hermite_degree_two_at_origin(self):
        kinds = (BasisDimension("hermite", 0.0, 1.0),)
        val = basis_eval(MultiIndex((2,)), np.array([[0.0]]), kinds)
        assert val[0] == pytest.approx(-1.0 / math.sqrt(2.0), rel=1e-12)

    def test_legendre_degree_two_shape(self):
        kinds = (BasisDimension("legendre", -1.0, 1.0),)
        x = np.array([[0.5]])
        val = basis_eval(MultiIndex((2,)), x, kinds)
        assert val[0] == pytest.approx(math.sqrt(5.0) * (3 * 0.25 - 1) / 2, rel=1e-12)

    def test_monte_carlo_orthonormality(self, rng):
        kinds = (BasisDimension("legendre", -1.0, 1.0), BasisDimension("hermite", 0.0, 1.0))
        u = np.column_stack(
            [rng.uniform(-1.0, 1.0, 1_000_000), rng.standard_normal(1_000_000)]
        )
        pairs = [MultiIndex((0, 0)), MultiIndex((1, 0)), MultiIndex((0, 2)), MultiIndex((2, 1))]
        vals = [basis_eval(ix, u, kinds) for ix in pairs]
        for i in range(len(pairs)):
            for j in range(len(pairs)):
                inner = float(np.mean(vals[i] * vals[j]))
                expected = 1.0 if i == j else 0.0
                assert inner == pytest.approx(expected, abs=5e-3)


@pytest.fixture
def uniform_1d():
    return PriorSpec(("x",), (Uniform(-1.0, 1.0),))


class TestFit:
    def test_constant_output(self, uniform_1d, rng):
        x = rng.uniform(-1, 1, size=(50, 1))
        model = fit(x, np.full(50, 4.25), uniform_1d)
        assert model.loo_error == 0.0
        assert len(model.indices) == 1
        assert model.coefficients[0] == pytest.approx(4.25)

    def test_quadratic_against_quadrature_oracle(self, uniform_1d, rng):
        x = 2.0 * lhs_unit(200, 1, rng) - 1.0
        y = x[:, 0] ** 2
        model = fit(x, y, uniform_1d, q=1.0, cv_target=1e-3, max_order=6)
        assert model.loo_error <= 1e-10
        coeffs = {ix.degrees: a for ix, a in zip(model.indices, model.coefficients)}
        a0_oracle = legendre_projection(lambda t: t**2, 0)
        a2_oracle = legendre_projection(lambda t: t**2, 2)
        assert a0_oracle == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert a2_oracle == pytest.approx(2.0 / (3.0 * math.sqrt(5.0)), abs=1e-12)
        assert coeffs[(0,)] == pytest.approx(a0_oracle, abs=1e-8)
        assert coeffs[(2,)] == pytest.approx(a2_oracle, abs=1e-8)
        for deg, a in coeffs.items():
            if deg not in ((0,), (2,)):
                assert abs(a) < 1e-8

    def test_linear_hermite_reproduction(self, rng):
        priors = PriorSpec(("a", "b"), (Normal(0.0, 1.0), Normal(0.0, 1.0)))
        x = rng.standard_normal((120, 2))
        model = fit(x, x[:, 0] + x[:, 1], priors, q=1.0, max_order=3)
        assert model.loo_error <= 1e-10
        coeffs = {ix.degrees: a for ix, a in zip(model.indices, model.coefficients)}
        assert coeffs[(1, 0)] == pytest.approx(1.0, abs=1e-10)
        assert coeffs[(0, 1)] == pytest.approx(1.0, abs=1e-10)

    def test_standardized_normal_inputs(self, rng):
        # Non-unit marginals are standardized before basis evaluation.
        priors = PriorSpec(("k",), (Normal(5.0, 2.0),))
        x = rng.normal(5.0, 2.0, size=(150, 1))
        model = fit(x, 3.0 * x[:, 0] - 1.0, priors, max_order=3)
        assert model.loo_error <= 1e-10
        assert pce_eval(model, np.array([7.0])) == pytest.approx(20.0, rel=1e-9)

    def test_sample_budget_precondition(self, uniform_1d):
        with pytest.raises(ValueError):
            fit(np.array([[0.1], [0.2], [0.3]]), np.zeros(3), uniform_1d)

    def test_degenerate_design_raises(self, uniform_1d):
        # identical inputs but varying outputs: nothing can be regressed
        x = np.full((40, 1), 0.25)
        with pytest.raises(FitError, match="basis size"):
            fit(x, np.linspace(0.0, 1.0, 40), uniform_1d)

    def test_polynomial_exactness_degree_three(self, rng):
        priors = PriorSpec(("a", "b"), (Uniform(-1.0, 1.0), Uniform(-1.0, 1.0)))
        x = 2.0 * lhs_unit(400, 2, rng) - 1.0
        y = 0.5 - x[:, 0] + 2.0 * x[:, 0] * x[:, 1] ** 2 - 0.25 * x[:, 1] ** 3
        model = fit(x, y, priors, q=1.0, cv_target=1e-12, max_order=4)
        assert model.loo_error <= 1e-10
        pred = pce_eval(model, x)
        np.testing.assert_allclose(pred, y, atol=1e-9)


class TestEvalAndMoments:
    def test_constant_model(self):
        kinds = (BasisDimension("legendre", -1.0, 1.0),)
        m = PCEModel(
            indices=[MultiIndex((0,))],
            coefficients=np.array([7.5]),
            basis=kinds,
            loo_error=0.0,
            order=0,
            q_norm=1.0,
        )
        assert pce_eval(m, np.array([0.123])) == 7.5
        assert pce_moments(m) == (7.5, 0.0)

    def test_quadratic_eval_and_moments(self, uniform_1d, rng):
        x = 2.0 * lhs_unit(200, 1, rng) - 1.0
        model = fit(x, x[:, 0] ** 2, uniform_1d, q=1.0, max_order=4)
        assert pce_eval(model, np.array([0.5])) == pytest.approx(0.25, abs=1e-8)
        mean, var = pce_moments(model)
        assert mean == pytest.approx(1.0 / 3.0, abs=1e-8)
        assert var == pytest.approx(4.0 / 45.0, abs=1e-8)

    def test_orthonormality_makes_moments_trivial(self):
        kinds = (BasisDimension("hermite", 0.0, 1.0),)
        m = PCEModel(
            indices=[MultiIndex((0,)), MultiIndex((1,))],
            coefficients=np.array([0.0, 2.0]),
            basis=kinds,
            loo_error=0.0,
            order=1,
            q_norm=1.0,
        )
        assert pce_moments(m) == (0.0, 4.0)
        assert pce_eval(m, np.array([0.0])) == 0.0

    def test_moments_match_monte_carlo(self, rng):
        priors = PriorSpec(("a", "b"), (Uniform(-1.0, 1.0), Normal(0.0, 1.0)))
        x = np.column_stack([rng.uniform(-1, 1, 600), rng.standard_normal(600)])
        y = 1.0 + x[:, 0] + 0.5 * x[:, 1] ** 2 + 0.3 * x[:, 0] * x[:, 1]
        model = fit(x, y, priors, q=1.0, max_order=3)
        mean, var = pce_moments(model)
        draws = np.column_stack([rng.uniform(-1, 1, 100_000), rng.standard_normal(100_000)])
        vals = pce_eval(model, draws)
        assert mean == pytest.approx(float(vals.mean()), abs=0.01)
        assert var == pytest.approx(float(vals.var()), rel=0.01)

    def test_dimension_mismatch(self, uniform_1d, rng):
        x = 2.0 * lhs_unit(60, 1, rng) - 1.0
        model = fit(x, x[:, 0], uniform_1d, max_order=2)
        with pytest.raises(ValueError):
            pce_eval(model, np.array([0.1, 0.2]))


class TestFieldSurrogate:
    def _runs(self, rng, n=60, n_tc=2, n_times=11):
        priors = PriorSpec(("a", "b"), (Uniform(0.0, 1.0), Uniform(0.0, 1.0)))
        x = lhs_unit(n, 2, rng)
        times = np.linspace(0.0, 10.0, n_times)
        resp = np.empty((n, n_tc, n_times))
        for t in range(n_tc):
            resp[:, t, :] = (
                300.0
                + 50.0 * (t + 1) * x[:, [0]]
                + 20.0 * x[:, [1]] ** 2
                + 5.0 * times[None, :] / 10.0
            )
        return priors, x, times, resp

    def test_model_count(self, rng):
        priors, x, times, resp = self._runs(rng)
        fs = fit_field(x, resp, times, 1.0, priors, ("TC1", "TC2"), q=1.0, max_order=3)
        assert fs.n_tc == 2
        assert fs.n_knots == 11
        assert sum(len(row) for row in fs.models) == 22
        assert fs.worst_loo <= 1e-8
        assert fs.failed_knots == []

    def test_constant_outputs_constant_models(self, rng):
        priors, x, times, resp = self._runs(rng)
        resp[:] = 400.0
        fs = fit_field(x, resp, times, 2.0, priors, ("TC1", "TC2"))
        for row in fs.models:
            for m in row:
                assert len(m.indices) == 1
                assert m.coefficients[0] == pytest.approx(400.0)

    def test_knot_spacing_must_divide(self, rng):
        priors, x, times, resp = self._runs(rng)
        with pytest.raises(ValueError):
            fit_field(x, resp, times, 0.7, priors, ("TC1", "TC2"))

    def test_json_round_trip(self, tmp_path, rng):
        priors, x, times, resp = self._runs(rng)
        fs = fit_field(x, resp, times, 5.0, priors, ("TC1", "TC2"), q=1.0, max_order=3)
        path = tmp_path / "surrogate.json"
        fs.to_json(path)
        back = FieldSurrogate.from_json(path)
        assert back.tc_labels == fs.tc_labels
        np.testing.assert_array_equal(back.time_knots, fs.time_knots)
        theta = np.array([[0.4, 0.6]])
        np.testing.assert_allclose(
            back.compile().evaluate(theta), fs.compile().evaluate(theta), rtol=1e-12
        )

    def test_compiled_matches_per_model_eval(self, rng):
        priors, x, times, resp = self._runs(rng)
        fs = fit_field(x, resp, times, 2.0, priors, ("TC1", "TC2"), q=1.0, max_order=3)
        compiled = fs.compile()
        thetas = lhs_unit(5, 2, rng)
        batch = compiled.evaluate(thetas)
        for i in range(5):
            for t in range(fs.n_tc):
                for k in range(fs.n_knots):
                    direct = pce_eval(fs.models[t][k], thetas[i])
                    assert batch[i, t, k] == pytest.approx(direct, rel=1e-12, abs=1e-12)

    def test_hermite_oracle_field(self, rng):
        # Cross-check one fitted coefficient against Gauss-Hermite projection.
        priors = PriorSpec(("z",), (Normal(0.0, 1.0),))
        x = rng.standard_normal((300, 1))
        y = np.tanh(0.5 * x[:, 0])
        model = fit(x, y, priors, q=1.0, cv_target=1e-9, max_order=6)
        coeffs = {ix.degrees: a for ix, a in zip(model.indices, model.coefficients)}
        a1_oracle = hermite_projection(lambda t: np.tanh(0.5 * t), 1, n_quad=120)
        assert coeffs[(1,)] == pytest.approx(a1_oracle, abs=5e-3)
