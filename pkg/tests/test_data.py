"""Dataset generation, domain restriction, penalty sampling and CSV I/O."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ieql.data import (DataError, Dataset, DomainBox, generate_synthetic, load_csv, read_dataset, rmse,
                       sample_penalty_inputs, shrink_domain, write_csv, write_metadata)

AMBIGUITY = "8*cos(0.5*x1) - 4"


def ambiguity_truth(x):
    return 8.0 * np.cos(0.5 * x) - 4.0


class TestShrinkDomain:
    def test_symmetric_midpoint(self):
        assert shrink_domain((-2, 2), 0.5) == (-1.0, 1.0)

    def test_paper_scale_literal(self):
        lo, hi = shrink_domain((1, 525), 0.8, "paper_scale")
        assert lo == pytest.approx(0.8) and hi == pytest.approx(420.0)

    def test_identity(self):
        assert shrink_domain((3, 7), 1.0) == (3.0, 7.0)
        assert shrink_domain((3, 7), 1.0, "paper_scale") == (3.0, 7.0)

    def test_offset_midpoint(self):
        # centre 263, half-width 262
        lo, hi = shrink_domain((1, 525), 0.8)
        assert (lo, hi) == pytest.approx((263 - 0.8 * 262, 263 + 0.8 * 262))

    @pytest.mark.parametrize("f", [0.0, -0.1, 1.5])
    def test_invalid_fraction(self, f):
        with pytest.raises(ValueError):
            shrink_domain((0, 1), f)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            shrink_domain((0, 1), 0.5, "wide")

    @given(st.floats(-100, 100), st.floats(0.1, 100), st.floats(0.01, 1.0))
    def test_midpoint_inside_and_centred(self, a, width, f):
        b = a + width
        lo, hi = shrink_domain((a, b), f)
        assert a - 1e-9 <= lo <= hi <= b + 1e-9
        assert (lo + hi) / 2 == pytest.approx((a + b) / 2, abs=1e-9)
        assert hi - lo == pytest.approx(f * width, rel=1e-9)


class TestDomainBox:
    def test_exempt_dimension_unchanged(self):
        box = DomainBox.from_test([-2, 0], [2, 10], 0.5, exempt=[False, True])
        assert box.train_low == (-1.0, 0.0) and box.train_high == (1.0, 10.0)

    def test_train_must_lie_in_test(self):
        with pytest.raises(ValueError):
            DomainBox((-3,), (1,), (-2,), (2,))

    def test_empty_interval(self):
        with pytest.raises(ValueError):
            DomainBox.same((1,), (1,))

    def test_dict_round_trip(self):
        box = DomainBox.from_test([-1, 0], [1, 4], 0.8, exempt=[False, True])
        assert DomainBox.from_dict(box.to_dict()) == box


class TestGenerateSynthetic:
    def test_noise_calibration(self):
        box = DomainBox.same((-1,), (1,))
        ds = generate_synthetic(AMBIGUITY, box, 10_000, 0, 0.01, seed=3)
        X, Y = ds.X, ds.Y[:, 0]
        resid = Y - ambiguity_truth(X[:, 0])
        assert 0.0097 <= resid.std() <= 0.0103
        assert abs(resid.std() / 0.01 - 1) <= 3 / math.sqrt(2 * len(resid))

    def test_noiseless(self):
        box = DomainBox.from_test((-2,), (2,), 0.5)
        ds = generate_synthetic(AMBIGUITY, box, 50, 50, 0.0, seed=1, n_extrapolation=10)
        np.testing.assert_array_equal(ds.Y[:, 0], ambiguity_truth(ds.X[:, 0]))

    def test_constant_formula_variance(self):
        ds = generate_synthetic("3", DomainBox.same((0,), (1,)), 5000, 0, 0.05, seed=2)
        assert ds.Y.var() == pytest.approx(0.05 ** 2, rel=0.1)

    def test_containment_and_sizes(self):
        box = DomainBox.from_test((-2, -1), (2, 3), 0.8)
        ds = generate_synthetic("x1*x2", box, 1000, 300, seed=4, n_extrapolation=40)
        assert ds.count("train") == 900 and ds.count("validation") == 100
        assert ds.count("test") == 300 and ds.count("extrapolation") == 40
        for split in ("train", "validation"):
            assert box.contains(ds.part(split)[0], "train").all()
        for split in ("test", "extrapolation"):
            assert box.contains(ds.part(split)[0], "test").all()
        assert not box.contains(ds.part("extrapolation")[0], "train").any()

    def test_test_targets_noiseless_by_default(self):
        box = DomainBox.same((-1,), (1,))
        ds = generate_synthetic(AMBIGUITY, box, 10, 100, 0.5, seed=0)
        X, Y = ds.part("test")
        np.testing.assert_array_equal(Y[:, 0], ambiguity_truth(X[:, 0]))
        ds = generate_synthetic(AMBIGUITY, box, 10, 100, 0.5, seed=0, noisy_test=True)
        X, Y = ds.part("test")
        assert np.abs(Y[:, 0] - ambiguity_truth(X[:, 0])).max() > 0.1

    def test_deterministic(self):
        box = DomainBox.from_test((-2,), (2,), 0.5)
        a = generate_synthetic(AMBIGUITY, box, 100, 50, seed=9, n_extrapolation=5)
        b = generate_synthetic(AMBIGUITY, box, 100, 50, seed=9, n_extrapolation=5)
        assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()
        assert list(a.split) == list(b.split)

    def test_domain_violation(self):
        with pytest.raises(DataError):
            generate_synthetic("log(x1)", DomainBox.same((-1,), (1,)), 100, 0)

    def test_needs_training_rows(self):
        with pytest.raises(DataError):
            generate_synthetic("x1", DomainBox.same((0,), (1,)), 0, 10)

    def test_formula_wider_than_box(self):
        with pytest.raises(ValueError, match="x2"):
            generate_synthetic("x1 + x2", DomainBox.same((0,), (1,)), 10, 0)

    def test_extrapolation_needs_margin(self):
        with pytest.raises(DataError):
            generate_synthetic("x1", DomainBox.same((0,), (1,)), 10, 0, n_extrapolation=5)


class TestPenaltyInputs:
    def test_count_and_containment(self):
        box = DomainBox.from_test((-2, 0), (2, 5), 0.8)
        X = sample_penalty_inputs(box, 100, seed=0)
        assert X.shape == (100, 2)
        assert box.contains(X, "test").all()
        assert not box.contains(X, "train").all()

    def test_single_row(self):
        assert sample_penalty_inputs(DomainBox.same((0,), (1,)), 1, seed=0).shape == (1, 1)

    def test_deterministic(self):
        box = DomainBox.same((0,), (1,))
        np.testing.assert_array_equal(sample_penalty_inputs(box, 10, 7), sample_penalty_inputs(box, 10, 7))

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            sample_penalty_inputs(DomainBox.same((0,), (1,)), 0)


class TestCSV:
    def test_three_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        ds = load_csv(path, ["a", "b"], ["y"], test_fraction=0.0, validation_fraction=0.0)
        assert (len(ds.X), ds.input_dim, ds.output_dim) == (3, 2, 1)
        np.testing.assert_array_equal(ds.Y[:, 0], [3, 6, 9])

    def test_split_arithmetic(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "d.csv"
        rows = "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in rng.normal(size=(1000, 2)))
        path.write_text("x,y\n" + rows + "\n")
        ds = load_csv(path, ["x"], ["y"], seed=1)
        assert (ds.count("train"), ds.count("validation"), ds.count("test")) == (720, 80, 200)

    def test_round_trip_exact(self, tmp_path):
        box = DomainBox.from_test((-2, -1), (2, 1), 0.8)
        ds = generate_synthetic("x1*exp(x2)", box, 200, 50, seed=3, n_extrapolation=10)
        write_csv(ds, tmp_path / "d.csv")
        write_metadata(ds, tmp_path / "d.json")
        back = read_dataset(tmp_path / "d.csv", tmp_path / "d.json")
        assert back.X.tobytes() == ds.X.tobytes() and back.Y.tobytes() == ds.Y.tobytes()
        assert list(back.split) == list(ds.split) and back.box == ds.box

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,2\n")
        with pytest.raises(DataError, match="missing"):
            load_csv(path, ["a", "b"], ["y"])

    def test_non_numeric_reports_position(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,2\n3,oops\n")
        with pytest.raises(DataError, match=r"row 3, column 'y'"):
            load_csv(path, ["a"], ["y"])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_csv(path, ["a"], ["y"])

    def test_header_only(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n")
        with pytest.raises(DataError):
            load_csv(path, ["a"], ["y"])

    def test_inferred_box_covers_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n" + "\n".join(f"{v},{v}" for v in range(20)) + "\n")
        ds = load_csv(path, ["a"], ["y"], seed=0)
        assert ds.box.contains(ds.part("train")[0], "train").all()
        assert ds.box.contains(ds.X, "test").all()


class TestDatasetInvariants:
    def test_unknown_split_label(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1)), np.zeros(2), ["train", "holdout"], DomainBox.same((0,), (1,)))

    def test_unknown_part(self):
        ds = Dataset(np.zeros((1, 1)), np.zeros(1), ["train"], DomainBox.same((0,), (1,)))
        with pytest.raises(ValueError):
            ds.part("holdout")


class TestRMSE:
    def test_value(self):
        assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2.0))

    def test_empty_is_nan(self):
        assert math.isnan(rmse(np.empty((0, 1)), np.empty((0, 1))))
