"""Expression trees, formula parsing, formatting, simplification and complexity scores."""

import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ieql import expression as ex
from ieql.complexity import ComplexityFactors, complexity_score, relative_frequencies
from ieql.parser import FormulaSyntaxError, UnknownFunctionError, UnknownIdentifierError, parse_formula
from ieql.simplify import simplify

X1 = ["x1"]


def _value(text, names, point):
    return ex.eval_expr(parse_formula(text, names), point)


# -- strategies -------------------------------------------------------------------

_consts = st.floats(-3.0, 3.0, allow_nan=False).map(lambda v: ex.const(round(v, 3)))
_vars = st.integers(0, 1).map(ex.var)


def _grow(children):
    binary = st.tuples(st.sampled_from(["add", "sub", "mul"]), children, children).map(
        lambda t: ex.Expression(t[0], (t[1], t[2])))
    unary = st.tuples(st.sampled_from(["cos", "square", "neg", "sin"]), children).map(
        lambda t: ex.unary(t[0], t[1]))
    return binary | unary


expressions = st.recursive(_consts | _vars, _grow, max_leaves=10)


def _with_singular(e):
    """Wrap in functions whose arguments stay inside their domain."""
    return st.sampled_from([
        e,
        ex.unary("log", ex.add(ex.unary("square", e), ex.const(1.0))),
        ex.unary("sqrt", ex.add(ex.unary("square", e), ex.const(0.5))),
        ex.div(ex.const(2.0), ex.add(ex.unary("square", e), ex.const(1.5))),
        ex.mul(ex.unary("exp", ex.unary("cos", e)), e),
    ])


rich_expressions = expressions.flatmap(_with_singular)


# -- parsing -------------------------------------------------------------------------------

class TestParse:
    def test_ambiguity_ground_truth_at_zero(self):
        assert _value("8*cos(0.5*x1) - 4", X1, [0.0]) == pytest.approx(4.0)

    def test_product(self):
        assert _value("x1*x2", ["x1", "x2"], [2.0, 3.0]) == 6.0

    def test_power_loss_constant_term(self):
        text = "0.4*ID^2 - 1.12*ID + 0.41*IQ^2 + 1.13*IQ - 0.31"
        assert _value(text, ["ID", "IQ"], [0.0, 0.0]) == pytest.approx(-0.31)

    @pytest.mark.parametrize("text, expected", [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("2 - 3 - 4", -5.0),
        ("12 / 3 / 2", 2.0),
        ("-2^2", -4.0),
        ("2^3", 8.0),
        ("-x1 * 3", -6.0),
        ("sqrt(16) + exp(0) + log(1) + sin(0)", 5.0),
        ("1e-3 * 1000", 1.0),
    ])
    def test_precedence(self, text, expected):
        assert _value(text, X1, [2.0]) == pytest.approx(expected)

    def test_syntax_error_reports_position(self):
        with pytest.raises(FormulaSyntaxError) as info:
            parse_formula("x1 + * 2", X1)
        assert info.value.position == 5

    def test_unbalanced_parenthesis(self):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("cos(x1", X1)

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifierError):
            parse_formula("x1 + y", X1)

    def test_unknown_function(self):
        with pytest.raises(UnknownFunctionError):
            parse_formula("tan(x1)", X1)

    def test_non_integer_exponent_rejected(self):
        with pytest.raises(FormulaSyntaxError):
            parse_formula("x1^0.5", X1)

    def test_deterministic(self):
        a = parse_formula("3*x1 + cos(x1)", X1)
        b = parse_formula("3*x1 + cos(x1)", X1)
        assert a == b and hash(a) == hash(b)


# -- evaluation ----------------------------------------------------------------------------

class TestEvaluate:
    def test_constant(self):
        assert ex.eval_expr(ex.const(7.0), [123.0]) == 7.0

    def test_log_of_zero_is_reported(self):
        with pytest.raises(ex.DomainError):
            ex.eval_expr(parse_formula("log(x1)", X1), [0.0])

    def test_sqrt_of_negative_is_reported(self):
        with pytest.raises(ex.DomainError):
            ex.eval_expr(parse_formula("sqrt(x1)", X1), [-1.0])

    def test_division_by_zero_is_reported(self):
        with pytest.raises(ex.DomainError):
            ex.eval_expr(parse_formula("1/x1", X1), [0.0])

    def test_lenient_mode_gives_nan(self):
        v = ex.evaluate(parse_formula("log(x1)", X1), np.array([[-1.0], [1.0]]), strict=False)
        assert math.isnan(v[0]) and v[1] == 0.0

    def test_variable_out_of_range(self):
        with pytest.raises(IndexError):
            ex.evaluate(ex.var(2), np.zeros((1, 2)))

    def test_vectorised_matches_pointwise(self, rng):
        e = parse_formula("x1*cos(x2) + sqrt(x1^2 + 1) / (2 + x2^2)", ["x1", "x2"])
        X = rng.uniform(-2, 2, (20, 2))
        np.testing.assert_allclose(ex.evaluate(e, X), [ex.eval_expr(e, x) for x in X], rtol=0, atol=0)

    def test_deep_tree_does_not_recurse(self):
        e = ex.var(0)
        for _ in range(5000):
            e = ex.add(e, ex.const(1.0))
        assert ex.eval_expr(e, [0.0]) == 5000.0


class TestExpressionValue:
    def test_immutable(self):
        with pytest.raises(AttributeError):
            ex.const(1.0).value = 2.0

    def test_signed_zero_constants_differ(self):
        assert ex.const(0.0) != ex.const(-0.0)

    def test_arity_checked(self):
        with pytest.raises(ValueError):
            ex.Expression("add", (ex.var(0),))

    def test_negative_variable_rejected(self):
        with pytest.raises(ValueError):
            ex.var(-1)

    def test_json_round_trip(self):
        e = parse_formula("8*cos(0.5*x1) - 4 + log(x1^2 + 1)/3", X1)
        back = ex.from_json(json.loads(json.dumps(ex.to_json(e))))
        assert back == e

    def test_count_kinds(self):
        counts = ex.count_kinds(parse_formula("cos(x1) * cos(x1) + x1", X1))
        assert counts["cos"] == 2 and counts["mul"] == 1 and counts["add"] == 1

    def test_pickle_round_trip(self):
        import pickle
        e = parse_formula("cos(x1) + 2", X1)
        assert pickle.loads(pickle.dumps(e)) == e


# -- formatting -----------------------------------------------------------------------------

class TestFormat:
    def test_square(self):
        assert ex.format_expr(ex.unary("square", ex.var(0))) == "x1^2"

    def test_three_significant_figures(self):
        assert ex.format_expr(ex.const(3.14159)) == "3.14"

    def test_round_half_even(self):
        assert ex.format_number(0.1125, 3) == "0.112"
        assert ex.format_number(0.1135, 3) == "0.114"

    def test_names(self):
        e = parse_formula("ID*IQ", ["ID", "IQ"])
        assert ex.format_expr(e, names=["ID", "IQ"]) == "ID*IQ"

    def test_power_loss_shape(self):
        names = ["ID", "IQ"]
        e = simplify(parse_formula("0.4*ID^2 - 1.12*ID + 0.41*IQ^2 + 1.13*IQ - 0.31", names))
        text = ex.format_expr(e, 3, names)
        for piece in ("0.4*ID^2", "1.12*ID", "0.41*IQ^2", "1.13*IQ", "0.31"):
            assert piece in text
        assert text.count("+") + text.count(" - ") == 4

    def test_round_trip_precision_12(self, rng):
        names = ["x1", "x2"]
        e = parse_formula("0.123456789*x1^2 - cos(1.987654321*x2 + 0.5)/(x1^2 + 1.25)", names)
        back = parse_formula(ex.format_expr(e, 12, names), names)
        X = rng.uniform(-2, 2, (100, 2))
        np.testing.assert_allclose(ex.evaluate(back, X), ex.evaluate(e, X), rtol=0, atol=1e-9)

    @given(rich_expressions)
    def test_round_trip_property(self, e):
        X = np.random.default_rng(0).uniform(-1.5, 1.5, (8, 2))
        v = ex.evaluate(e, X, strict=False)
        assume(np.all(np.isfinite(v)) and np.max(np.abs(v)) < 1e6)
        back = parse_formula(ex.format_expr(e, 17), ["x1", "x2"])
        w = ex.evaluate(back, X, strict=False)
        np.testing.assert_allclose(w, v, rtol=1e-9, atol=1e-9)


# -- simplification --------------------------------------------------------------------------

class TestSimplify:
    def test_identity_affine(self):
        e = ex.add(ex.mul(ex.const(1.0), ex.var(0)), ex.const(0.0))
        assert simplify(e) == ex.var(0)

    def test_relaxation_absorbed(self):
        alpha = math.log(2.0)
        relaxed = ex.unary("log", ex.add(ex.add(ex.mul(ex.const(1.0), ex.var(0)), ex.const(0.0)),
                                         ex.const(alpha)))
        folded = simplify(relaxed)
        assert folded == ex.unary("log", ex.add(ex.var(0), ex.const(alpha)))
        assert ex.eval_expr(folded, [1.0]) == pytest.approx(math.log1p(math.log(2.0)), abs=1e-15)
        assert ex.eval_expr(relaxed, [1.0]) == pytest.approx(ex.eval_expr(folded, [1.0]), abs=1e-15)

    def test_squared_affine_folds(self, rng):
        w3, b1, w5 = 1.7, -0.4, 0.23
        e = ex.mul(ex.const(w5), ex.unary("square", ex.add(ex.mul(ex.const(w3), ex.var(0)), ex.const(b1))))
        X = rng.uniform(-3, 3, (10, 1))
        np.testing.assert_allclose(ex.evaluate(simplify(e), X), ex.evaluate(e, X), rtol=1e-9, atol=1e-9)

    def test_nested_affine_merges(self):
        inner = ex.add(ex.mul(ex.const(2.0), ex.var(0)), ex.const(1.0))
        e = ex.add(ex.mul(ex.const(3.0), inner), ex.const(-3.0))
        assert simplify(e) == ex.mul(ex.const(6.0), ex.var(0))

    def test_constant_folding(self):
        e = parse_formula("cos(0) * 2 + sqrt(4)", X1)
        assert simplify(e) == ex.const(4.0)

    def test_zero_terms_dropped(self):
        e = ex.add(ex.mul(ex.const(0.0), ex.unary("cos", ex.var(0))), ex.var(0))
        assert simplify(e) == ex.var(0)

    def test_idempotent_on_example(self):
        e = parse_formula("(2*x1 + 1)^2 - 4*x1^2 + cos(3*(x1 + 1))", X1)
        once = simplify(e)
        assert simplify(once) == once

    def test_no_trig_identities(self):
        e = parse_formula("cos(x1)^2 + sin(x1)^2", X1)
        assert not simplify(e).is_const

    @given(rich_expressions)
    def test_values_preserved(self, e):
        X = np.random.default_rng(1).uniform(-1.5, 1.5, (10, 2))
        v = ex.evaluate(e, X, strict=False)
        assume(np.all(np.isfinite(v)) and np.max(np.abs(v)) < 1e6)
        w = ex.evaluate(simplify(e), X, strict=False)
        assert np.all(np.abs(w - v) <= 1e-9 * (1 + np.abs(v)))

    @given(rich_expressions)
    def test_never_grows_variables(self, e):
        assert ex.variables(simplify(e)) <= ex.variables(e)


# -- complexity -------------------------------------------------------------------------------

class TestComplexity:
    def test_motor_weighted_sum(self):
        assert complexity_score({"mul": 3, "div": 2}, ComplexityFactors.profile("motor")) == 16.0

    def test_plain_counts_weights(self):
        counts = {"add": 4, "cos": 2, "square": 1}
        assert complexity_score(counts, ComplexityFactors.profile("plain")) == 7.0

    def test_empty(self):
        assert complexity_score({}, ComplexityFactors.profile("motor")) == 0.0

    def test_missing_factor(self):
        with pytest.raises(KeyError):
            complexity_score({"tanh": 1}, ComplexityFactors.profile("plain"))

    def test_motor_table(self):
        f = ComplexityFactors.profile("motor")
        assert dict(f) == {"add": 1, "mul": 2, "div": 5, "square": 2, "log": 5, "sqrt": 3, "exp": 5, "cos": 10}

    def test_factors_must_be_positive(self):
        with pytest.raises(ValueError):
            ComplexityFactors({"cos": 0.0})

    def test_load_overrides(self, tmp_path):
        path = tmp_path / "f.json"
        path.write_text(json.dumps({"base": "plain", "overrides": {"cos": 0.2}}))
        f = ComplexityFactors.load(str(path))
        assert f["cos"] == 0.2 and f["square"] == 1.0

    def test_relative_frequencies_sum_to_one(self):
        freq = relative_frequencies({"cos": 1, "square": 3})
        assert freq == {"cos": 0.25, "square": 0.75}

    @given(st.dictionaries(st.sampled_from(["add", "mul", "div", "cos"]), st.integers(0, 50)),
           st.dictionaries(st.sampled_from(["add", "mul", "div", "cos"]), st.integers(0, 50)),
           st.integers(0, 5))
    def test_linear_in_counts(self, a, b, k):
        f = ComplexityFactors.profile("motor")
        merged = {kind: k * a.get(kind, 0) + b.get(kind, 0) for kind in set(a) | set(b)}
        assert complexity_score(merged, f) == pytest.approx(k * complexity_score(a, f) + complexity_score(b, f))

    @given(st.dictionaries(st.sampled_from(["add", "mul", "cos"]), st.integers(0, 50)),
           st.floats(0.0, 5.0))
    def test_monotone_in_factors(self, counts, bump):
        low = ComplexityFactors.profile("plain")
        high = low.with_overrides({"cos": 1.0 + bump})
        assert complexity_score(counts, high) >= complexity_score(counts, low)
