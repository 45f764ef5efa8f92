import gzip
import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse

from helpers import decoupled_quadratic, fd_grad, rel_err

from bilevelopt.directions import full_directions
from bilevelopt.oracle import JointState, ProblemDims
from bilevelopt.problems import (
    IJCNN1_DIMS,
    MNIST_DIMS,
    LabeledSet,
    LibsvmParseError,
    SparseDataset,
    corrupt_labels,
    load_libsvm,
    make_hyperclean,
    make_logreg_hyper,
    make_quadratic,
    make_synthetic_hyperclean,
    make_toy_ridge,
    parse_libsvm,
    read_idx,
    serialize_libsvm,
)


class TestQuadratic:
    def test_mu_must_be_positive(self):
        with pytest.raises(ValueError):
            make_quadratic(0, ProblemDims(2, 2, 2, 2), mu=0.0)

    def test_declared_strong_convexity(self):
        q = make_quadratic(4, ProblemDims(10, 10, 6, 3), mu=0.7)
        assert np.linalg.eigvalsh(q.Abar)[0] >= 0.7 - 1e-12
        # per-sample convexity
        assert all(np.linalg.eigvalsh(A)[0] >= 0.7 - 1e-12 for A in q.A)

    def test_decoupled_hypergradient_is_x(self):
        q = decoupled_quadratic()
        x = np.array([0.4, -2.0])
        assert_allclose(q.hypergradient(x), x, atol=1e-14)
        assert_allclose(q.inner_solution(x), q.inner_solution(np.zeros(2)))

    def test_closed_form_gradient_matches_fd(self, quad, rng):
        for _ in range(5):
            x = rng.normal(size=5)
            assert rel_err(fd_grad(quad.value, x), quad.hypergradient(x)) < 1e-7

    def test_dx_at_solutions_is_hypergradient(self, quad, rng):
        x = rng.normal(size=5)
        _, g, z, v = quad.closed_form(x)
        d = full_directions(JointState(z, v, x), quad)
        assert_allclose(d.dx, g, atol=1e-10)
        assert_allclose(d.dz, 0.0, atol=1e-10)
        assert_allclose(d.dv, 0.0, atol=1e-10)

    def test_stationary_point_zeroes_all_directions(self, quad):
        x = quad.x_star
        _, g, z, v = quad.closed_form(x)
        assert np.linalg.norm(g) <= 1e-10
        d = full_directions(JointState(z, v, x), quad)
        assert max(np.abs(a).max() for a in d.as_tuple()) <= 1e-10

    def test_suboptimality_at_optimum(self, quad):
        assert quad.suboptimality(quad.x_star) <= 1e-10
        assert quad.value(quad.x_star) == pytest.approx(quad.h_star, abs=1e-12)

    def test_rejects_bad_shapes(self):
        q = decoupled_quadratic()
        with pytest.raises(ValueError, match="shape"):
            type(q)(q.A[:, :2], q.B, q.c, q.P, q.R, q.S, q.e, q.f)


class TestToyRidge:
    def test_sizes(self, ridge):
        assert ridge.X_train.shape == (750, 10)
        assert ridge.X_val.shape == (250, 10)
        assert ridge.dims == ProblemDims(n=750, m=250, p=10, d=1)

    def test_deterministic_by_seed(self):
        a, b = make_toy_ridge(3), make_toy_ridge(3)
        assert_array_equal(a.X_train, b.X_train)
        assert a.fingerprint() == b.fingerprint() != make_toy_ridge(4).fingerprint()

    def test_large_penalty_limit(self, ridge):
        theta = ridge.ridge_solution(1e8)
        assert np.linalg.norm(theta) < 1e-6
        h = ridge.f_value(theta, np.array([1e8]))
        assert h == pytest.approx(ridge.f_value(np.zeros(10), np.array([1e8])), rel=1e-5)

    def test_normal_equations_zero_the_gradient(self, ridge):
        lam = np.array([0.3])
        assert np.linalg.norm(ridge.g_grad(ridge.ridge_solution(0.3), lam)) < 1e-12


class TestLogReg:
    def test_recorded_full_scale_dims(self):
        assert IJCNN1_DIMS == {"n": 49990, "m": 91701, "p": 22}

    def test_gradient_at_origin(self, logreg):
        lam = np.zeros(22)
        for i in range(5):
            d_i = np.ravel(logreg.D_train[i])
            assert_allclose(logreg.grad_g_in(i, np.zeros(22), lam),
                            -0.5 * logreg.y_train[i] * d_i, atol=1e-15)

    def test_cross_product_entries(self, logreg, rng):
        theta, lam, v = rng.normal(size=22), rng.normal(size=22), rng.normal(size=22)
        assert_allclose(logreg.cross_g(0, theta, lam, v), np.exp(lam) * theta * v)

    def test_outer_gradient_is_zero(self, logreg, rng):
        assert_array_equal(logreg.grad_f_out(3, rng.normal(size=22), rng.normal(size=22)),
                           np.zeros(22))

    def test_rejects_non_binary_labels(self):
        rows = sparse.csr_matrix(np.eye(3))
        with pytest.raises(ValueError):
            make_logreg_hyper(SparseDataset(rows, np.array([0, 1, 2])),
                              SparseDataset(rows, np.array([1, -1, 1])))

    def test_from_libsvm_datasets(self):
        train = parse_libsvm("1 1:0.5 3:-1.2\n-1 2:1.0\n1 1:2.0\n")
        val = parse_libsvm("-1 1:1.0 2:1.0 4:0.5\n1 3:1.0\n")
        problem = make_logreg_hyper(train, val)
        assert problem.dims == ProblemDims(n=3, m=2, p=4, d=4)
        assert_allclose(problem.g_grad(np.zeros(4), np.zeros(4)),
                        -0.5 * np.array([0.5 - 0 + 2.0, -1.0, -1.2, 0.0]) / 3)


class TestHyperClean:
    def test_recorded_full_scale_dims(self):
        assert MNIST_DIMS == {"n_train": 20000, "n_val": 5000, "n_test": 10000,
                              "num_classes": 10, "p": 784}

    def test_no_corruption(self):
        p = make_synthetic_hyperclean(n_train=50, n_val=10, n_test=10, n_features=3,
                                      num_classes=4, p_corrupt=0.0)
        assert not p.corrupted.any()

    def test_invalid_arguments(self):
        s = LabeledSet(np.zeros((2, 2)), np.array([0, 1]))
        with pytest.raises(ValueError):
            make_hyperclean(s, s, s, p_corrupt=1.5)
        with pytest.raises(ValueError):
            make_hyperclean(s, s, s, p_corrupt=0.5, c_r=-1.0)

    def test_validation_and_test_stay_clean(self):
        X = np.arange(12.0).reshape(6, 2)
        y = np.array([0, 1, 2, 0, 1, 2])
        s = LabeledSet(X, y)
        p = make_hyperclean(s, s, s, p_corrupt=1.0, seed=3, num_classes=3)
        assert_array_equal(p.y_val, y)
        assert_array_equal(p.y_test, y)
        assert p.corrupted.all()

    def test_vanishing_weight_removes_sample(self, hyperclean_small, rng):
        z = rng.normal(size=hyperclean_small.dims.p)
        x = np.zeros(hyperclean_small.dims.d)
        x_off = x.copy()
        x_off[0] = -800.0
        data_off = hyperclean_small.value_g(0, z, x_off)
        reg = hyperclean_small.c_r * np.sum(z ** 2)
        assert data_off == pytest.approx(reg, abs=1e-12)
        assert hyperclean_small.value_g(0, z, x) > reg

    def test_mu_g_is_twice_cr(self, hyperclean_small):
        assert hyperclean_small.mu_g() == pytest.approx(2 * hyperclean_small.c_r)

    def test_predict_and_test_error(self, hyperclean_small):
        theta = np.zeros(hyperclean_small.dims.p)
        err = hyperclean_small.test_error(theta)
        assert 0.0 <= err <= 1.0


class TestLibsvm:
    def test_basic_line(self):
        ds = parse_libsvm("1 1:0.5 3:-1.2\n")
        assert ds.labels.tolist() == [1]
        assert ds.rows.toarray().tolist() == [[0.5, 0.0, -1.2]]

    def test_label_only_line(self):
        ds = parse_libsvm(io.StringIO("-1\n"), num_features=4)
        assert ds.labels.tolist() == [-1]
        assert ds.rows.nnz == 0 and ds.dims == (1, 4)

    def test_comments_and_blank_lines(self):
        ds = parse_libsvm("# header\n\n+1 2:3 # trailing\n")
        assert ds.labels.tolist() == [1] and ds.rows.toarray().tolist() == [[0.0, 3.0]]

    @pytest.mark.parametrize("text,lineno", [
        ("1 1:0.5\n1 3:1 2:1\n", 2),
        ("1 1:0.5\n\n1 0:1\n", 3),
        ("1 1:x\n", 1),
        ("1 1-2\n", 1),
        ("abc 1:1\n", 1),
        ("1 2:1 2:3\n", 1),
    ])
    def test_errors_carry_line_number(self, text, lineno):
        with pytest.raises(LibsvmParseError) as info:
            parse_libsvm(text)
        assert info.value.lineno == lineno

    def test_declared_width_too_small(self):
        with pytest.raises(ValueError):
            parse_libsvm("1 5:1\n", num_features=3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        dense = rng.normal(size=(100, 12)) * (rng.random((100, 12)) < 0.3)
        labels = rng.choice([-1, 1], size=100)
        ds = SparseDataset(sparse.csr_matrix(dense), labels)
        back = parse_libsvm(serialize_libsvm(ds), num_features=12)
        assert_array_equal(back.labels, labels)
        assert_array_equal(back.rows.toarray(), dense)

    def test_load_gzip(self, tmp_path):
        path = tmp_path / "d.libsvm.gz"
        with gzip.open(path, "wt") as fh:
            fh.write("1 1:1\n-1 2:2\n")
        ds = load_libsvm(path)
        assert ds.dims == (2, 2)


class TestIdx:
    def _encode(self, arr, code):
        header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
        return header + arr.astype(arr.dtype.newbyteorder(">")).tobytes()

    def test_images_and_labels(self):
        images = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        labels = np.array([7, 1], dtype=np.uint8)
        assert_array_equal(read_idx(self._encode(images, 0x08)), images)
        assert_array_equal(read_idx(gzip.compress(self._encode(labels, 0x08))), labels)

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            read_idx(b"\x01\x02\x08\x01" + b"\x00" * 8)

    def test_truncated_payload(self):
        raw = self._encode(np.arange(6, dtype=np.uint8), 0x08)
        with pytest.raises(ValueError):
            read_idx(raw[:-1])


class TestCorruptLabels:
    def test_no_corruption(self):
        labels = np.array([0, 3, 2, 1])
        new, mask = corrupt_labels(labels, 0.0, 4, seed=0)
        assert_array_equal(new, labels)
        assert not mask.any()

    def test_single_class(self):
        labels = np.zeros(50, dtype=int)
        new, mask = corrupt_labels(labels, 1.0, 1, seed=0)
        assert_array_equal(new, labels)
        assert mask.all()

    def test_mask_density(self):
        labels = np.random.default_rng(0).integers(0, 10, size=20000)
        _, mask = corrupt_labels(labels, 0.5, 10, seed=123)
        assert 0.48 <= mask.mean() <= 0.52

    def test_untouched_positions_keep_labels(self):
        labels = np.random.default_rng(1).integers(0, 10, size=1000)
        new, mask = corrupt_labels(labels, 0.3, 10, seed=5)
        assert_array_equal(new[~mask], labels[~mask])

    @pytest.mark.parametrize("p", [-0.1, 1.01])
    def test_invalid_probability(self, p):
        with pytest.raises(ValueError):
            corrupt_labels([0, 1], p, 2, seed=0)

    def test_labels_out_of_range(self):
        with pytest.raises(ValueError):
            corrupt_labels([0, 5], 0.5, 3, seed=0)
