import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from biasaudit.gaussmath import normal_logpdf
from biasaudit.models import (CausalModelSpec, ConfoundedModelSpec,
                              JointVector, causal_code_length,
                              causal_evidence_closed_form, causal_log_joint,
                              code_length_X, confounded_code_length,
                              confounded_evidence_quadrature,
                              confounded_log_joint, make_causal_target,
                              make_confounded_target, ppca_evidence_fixed_W)

from conftest import LOG_2PI, quick_fit_config

SPEC = CausalModelSpec()
CSPEC = ConfoundedModelSpec()


def quadrature_1d(log_f, half_width=10.0, nodes=400):
    """log of the integral of exp(log_f) over one real variable."""
    x, w = leggauss(nodes)
    x = x * half_width
    w = w * half_width
    values = np.array([log_f(v) for v in x])
    shift = values.max()
    return shift + np.log(np.sum(w * np.exp(values - shift)))


class TestCausalLogJoint:
    def test_value_at_zero_weights(self, rng):
        X = rng.standard_normal((7, 2))
        y = np.zeros(7)
        value, _ = causal_log_joint(np.zeros(2), X, y, SPEC)
        want = 2 * float(normal_logpdf(0.0, 1.0)) + 7 * float(normal_logpdf(0.0, 1.0))
        assert value == pytest.approx(want, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        X = rng.standard_normal((15, 3))
        y = rng.standard_normal(15)
        h = 1e-4
        for _ in range(10):
            w = rng.standard_normal(3)
            _, grad = causal_log_joint(w, X, y, SPEC)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                up, _ = causal_log_joint(w + e, X, y, SPEC)
                dn, _ = causal_log_joint(w - e, X, y, SPEC)
                fd = (up - dn) / (2 * h)
                assert abs(grad[j] - fd) / max(abs(fd), 1e-8) < 1e-6

    def test_flat_likelihood_leaves_prior_gradient(self, rng):
        X = rng.standard_normal((10, 3))
        y = rng.standard_normal(10)
        w = rng.standard_normal(3)
        spec = CausalModelSpec(sigma_y=1e8)
        _, grad = causal_log_joint(w, X, y, spec)
        np.testing.assert_allclose(grad, -w / SPEC.sigma_w ** 2, atol=1e-8)


class TestCausalEvidence:
    def test_zero_design_single_row(self):
        got = causal_evidence_closed_form(np.zeros((1, 1)), np.zeros(1), SPEC)
        assert got == pytest.approx(-0.9189385, abs=1e-6)

    def test_unit_design_single_row(self):
        got = causal_evidence_closed_form(np.ones((1, 1)), np.zeros(1), SPEC)
        assert got == pytest.approx(-1.2655121, abs=1e-6)

    def test_matches_1d_quadrature(self, rng):
        X = rng.standard_normal((2, 1))
        y = rng.standard_normal(2)
        closed = causal_evidence_closed_form(X, y, SPEC)

        def log_f(w):
            resid = y - X[:, 0] * w
            return (float(np.sum(normal_logpdf(resid, SPEC.sigma_y)))
                    + float(normal_logpdf(w, SPEC.sigma_w)))

        assert closed == pytest.approx(quadrature_1d(log_f), abs=1e-6)

    def test_row_permutation_invariant(self, rng):
        X = rng.standard_normal((9, 2))
        y = rng.standard_normal(9)
        base = causal_evidence_closed_form(X, y, SPEC)
        perm = rng.permutation(9)
        assert causal_evidence_closed_form(X[perm], y[perm], SPEC) == pytest.approx(
            base, abs=1e-9)


class TestCodeLengthX:
    def test_all_zero_matrix(self):
        got = code_length_X(np.zeros((2, 2)), 1.0)
        assert got == pytest.approx(4 * 0.9189385, abs=1e-6)

    def test_additive_in_rows(self, rng):
        X = rng.standard_normal((5, 3))
        doubled = np.vstack([X, X])
        assert code_length_X(doubled, 1.0) == pytest.approx(
            2 * code_length_X(X, 1.0), abs=1e-9)

    def test_standardized_matrix_expectation(self, rng):
        raw = rng.standard_normal((200, 4)) * 3.1 + 0.7
        std = (raw - raw.mean(axis=0)) / raw.std(axis=0)
        got = code_length_X(std, 1.0)
        want = 200 * 4 * (0.5 * LOG_2PI + 0.5)
        assert abs(got - want) / want < 0.05


class TestCausalCodeLength:
    def test_advi_upper_bounds_closed_form(self, rng):
        X = rng.standard_normal((30, 2))
        y = rng.standard_normal(30)
        closed = causal_code_length(X, y, SPEC, method="closed_form")
        advi = causal_code_length(X, y, SPEC, method="advi",
                                  fit_config=quick_fit_config(seed=21))
        assert closed.nats <= advi.nats + 3 * advi.elbo_se

    def test_full_rank_matches_closed_form(self, rng):
        X = rng.standard_normal((50, 3))
        y = rng.standard_normal(50)
        closed = causal_code_length(X, y, SPEC, method="closed_form")
        advi = causal_code_length(X, y, SPEC, method="advi", family="full_rank",
                                  fit_config=quick_fit_config(seed=22))
        assert advi.nats == pytest.approx(closed.nats, abs=0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            causal_code_length(np.zeros((0, 2)), np.zeros(0), SPEC,
                               method="closed_form")

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            causal_code_length(np.zeros((3, 1)), np.zeros(3), SPEC, method="mcmc")


class TestConfoundedLogJoint:
    def test_value_at_zero_latents(self, rng):
        V = JointVector(np.zeros((6, 3)))
        value, _ = confounded_log_joint(
            {"Z": np.zeros((6, 1)), "W": np.zeros((1, 3))}, V, CSPEC)
        want = (6 * 1 + 1 * 3 + 6 * 3) * float(normal_logpdf(0.0, 1.0))
        assert value == pytest.approx(want, abs=1e-10)

    def test_gradients_match_finite_differences(self, rng):
        V = JointVector(rng.standard_normal((6, 3)))
        spec = ConfoundedModelSpec(k=2)
        h = 1e-4
        for _ in range(10):
            Z = rng.standard_normal((6, 2))
            W = rng.standard_normal((2, 3))
            _, grads = confounded_log_joint({"Z": Z, "W": W}, V, spec)
            for arr, key in ((Z, "grad_Z"), (W, "grad_W")):
                flat_idx = np.unravel_index(
                    rng.integers(0, arr.size, size=4), arr.shape)
                for i, j in zip(*flat_idx):
                    up, dn = arr.copy(), arr.copy()
                    up[i, j] += h
                    dn[i, j] -= h
                    if key == "grad_Z":
                        vu, _ = confounded_log_joint({"Z": up, "W": W}, V, spec)
                        vd, _ = confounded_log_joint({"Z": dn, "W": W}, V, spec)
                    else:
                        vu, _ = confounded_log_joint({"Z": Z, "W": up}, V, spec)
                        vd, _ = confounded_log_joint({"Z": Z, "W": dn}, V, spec)
                    fd = (vu - vd) / (2 * h)
                    assert abs(grads[key][i, j] - fd) / max(abs(fd), 1e-8) < 1e-5

    def test_sign_flip_invariance(self, rng):
        V = JointVector(rng.standard_normal((5, 2)))
        Z = rng.standard_normal((5, 1))
        W = rng.standard_normal((1, 2))
        a, _ = confounded_log_joint({"Z": Z, "W": W}, V, CSPEC)
        b, _ = confounded_log_joint({"Z": -Z, "W": -W}, V, CSPEC)
        assert a == pytest.approx(b, abs=1e-10)

    def test_rotation_invariance_k2(self, rng):
        V = JointVector(rng.standard_normal((5, 3)))
        spec = ConfoundedModelSpec(k=2)
        Z = rng.standard_normal((5, 2))
        W = rng.standard_normal((2, 3))
        angle = 0.7
        R = np.array([[np.cos(angle), -np.sin(angle)],
                      [np.sin(angle), np.cos(angle)]])
        a, _ = confounded_log_joint({"Z": Z, "W": W}, V, spec)
        b, _ = confounded_log_joint({"Z": Z @ R, "W": R.T @ W}, V, spec)
        assert a == pytest.approx(b, abs=1e-9)


class TestPpcaEvidence:
    def test_zero_loadings_decouple(self, rng):
        V = JointVector(rng.standard_normal((8, 3)))
        got = ppca_evidence_fixed_W(V, np.zeros((1, 3)), CSPEC)
        want = float(np.sum(normal_logpdf(V.values, CSPEC.sigma_obs)))
        assert got == pytest.approx(want, abs=1e-9)

    def test_matches_per_row_quadrature(self, rng):
        V = JointVector(rng.standard_normal((4, 2)))
        W = rng.standard_normal((1, 2))
        got = ppca_evidence_fixed_W(V, W, CSPEC)
        want = 0.0
        for row in V.values:
            want += quadrature_1d(
                lambda z: (float(np.sum(normal_logpdf(row - z * W[0], 1.0)))
                           + float(normal_logpdf(z, 1.0))))
        assert got == pytest.approx(want, abs=1e-6)

    def test_duplicate_row_adds_its_marginal(self, rng):
        rows = rng.standard_normal((5, 2))
        W = rng.standard_normal((1, 2))
        base = ppca_evidence_fixed_W(JointVector(rows), W, CSPEC)
        extended = ppca_evidence_fixed_W(
            JointVector(np.vstack([rows, rows[-1:]])), W, CSPEC)
        single = ppca_evidence_fixed_W(JointVector(rows[-1:]), W, CSPEC)
        assert extended == pytest.approx(base + single, abs=1e-9)


class TestConfoundedCodeLength:
    def test_bounded_by_quadrature_and_close(self, rng):
        z = rng.standard_normal(10)
        w = np.array([0.8, -0.6])
        V = JointVector(np.outer(z, w) + 0.5 * rng.standard_normal((10, 2)))
        truth = -confounded_evidence_quadrature(V, CSPEC)
        got = confounded_code_length(V, CSPEC,
                                     fit_config=quick_fit_config(seed=23))
        assert got.nats >= truth - 3 * got.elbo_se
        assert abs(got.nats - truth) < 5.0

    def test_duplicated_data_costs_more(self, rng):
        V = JointVector(rng.standard_normal((8, 2)))
        V2 = JointVector(np.vstack([V.values, V.values]))
        a = confounded_code_length(V, CSPEC, fit_config=quick_fit_config(seed=24))
        b = confounded_code_length(V2, CSPEC, fit_config=quick_fit_config(seed=25))
        assert b.nats > a.nats

    def test_zero_latent_dimension_rejected(self):
        with pytest.raises(ValueError):
            ConfoundedModelSpec(k=0)

    def test_too_few_rows_rejected(self, rng):
        V = JointVector(rng.standard_normal((2, 2)))
        with pytest.raises(ValueError):
            confounded_code_length(V, CSPEC)

    def test_quadrature_needs_m1_k1(self, rng):
        V = JointVector(rng.standard_normal((5, 3)))
        with pytest.raises(ValueError):
            confounded_evidence_quadrature(V, CSPEC)


class TestBatchedTargets:
    def test_causal_target_batch_consistency(self, rng):
        X = rng.standard_normal((12, 3))
        y = rng.standard_normal(12)
        target, d = make_causal_target(X, y, SPEC)
        assert d == 3
        batch = rng.standard_normal((5, 3))
        values, grads = target(batch)
        for s in range(5):
            v, g = causal_log_joint(batch[s], X, y, SPEC)
            assert values[s] == pytest.approx(v)
            np.testing.assert_allclose(grads[s], g)

    def test_confounded_target_batch_consistency(self, rng):
        V = JointVector(rng.standard_normal((4, 2)))
        target, d = make_confounded_target(V, CSPEC)
        assert d == 4 * 1 + 1 * 2
        batch = rng.standard_normal((3, d))
        values, grads = target(batch)
        for s in range(3):
            Z = batch[s, :4].reshape(4, 1)
            W = batch[s, 4:].reshape(1, 2)
            v, g = confounded_log_joint({"Z": Z, "W": W}, V, CSPEC)
            assert values[s] == pytest.approx(v)
            np.testing.assert_allclose(grads[s, :4], g["grad_Z"].ravel())
            np.testing.assert_allclose(grads[s, 4:], g["grad_W"].ravel())
