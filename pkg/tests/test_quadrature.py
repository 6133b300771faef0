import numpy as np
import pytest

from icfl import (SIGMOID, Ensemble, cov, draw_eval_set,
                  eval_set_from_descriptor, features, mix,
                  rotate_pushforward, sigma_spectrum, ridge_inverse,
                  SingularFeatureCovariance)
from icfl.quadrature import input_moments, feature_values


class TestEvalSet:
    def test_seed_determinism(self):
        a = draw_eval_set(7, 300, 5)
        b = draw_eval_set(7, 300, 5)
        assert np.array_equal(a.x, b.x)

    def test_gaussian_variance(self):
        es = draw_eval_set(1, 100_000, 20)
        var = np.var(es.x, axis=0)
        assert np.all(np.abs(var - 1.0) < 0.05)

    def test_second_moment_near_d(self):
        es = draw_eval_set(2, 100_000, 20)
        m2, m4 = input_moments(es)
        assert abs(m2 - 20.0) / 20.0 < 0.05
        assert m4 > m2 ** 2  # Jensen

    def test_unknown_dist(self):
        with pytest.raises(ValueError):
            draw_eval_set(0, 10, 3, dist="cauchy")

    def test_descriptor_roundtrip(self):
        es = draw_eval_set(9, 300, 4)
        es2 = eval_set_from_descriptor(es.descriptor())
        assert np.array_equal(es.x, es2.x)

    def test_min_size(self):
        with pytest.raises(ValueError):
            draw_eval_set(0, 0, 3)


class TestFeatures:
    def test_singleton_matches_particle(self, es_small, act):
        rng = np.random.default_rng(0)
        mu = Ensemble.uniform(rng.standard_normal((1, 3)),
                              rng.standard_normal((1, 8)))
        fm = features(mu, es_small, act)
        from icfl import h_particle, Particle
        p = Particle(mu.a[0], mu.w[0])
        for m in (0, 17, 511):
            np.testing.assert_allclose(fm.values[:, m],
                                       h_particle(p, es_small.x[m], act))

    def test_cache_hit_identity(self, model_small, es_small, act):
        assert features(model_small, es_small, act) is features(model_small, es_small, act)

    def test_mixture_linearity_columnwise(self, model_small, teacher_small,
                                          es_small, act):
        s = 0.3
        mixed = mix(model_small, teacher_small, s)
        want = ((1 - s) * features(model_small, es_small, act).values
                + s * features(teacher_small, es_small, act).values)
        np.testing.assert_allclose(features(mixed, es_small, act).values, want,
                                   atol=1e-14)


class TestCov:
    def test_rank_one_structure(self, es_small, act):
        rng = np.random.default_rng(1)
        a = np.zeros((1, 3)); a[0, 0] = 1.0
        mu = Ensemble.uniform(a, rng.standard_normal((1, 8)))
        s = cov(mu, mu, es_small, act)
        vals = act.f(es_small.x @ mu.w[0])
        expect = np.zeros((3, 3)); expect[0, 0] = np.mean(vals ** 2)
        np.testing.assert_allclose(s, expect, atol=1e-15)

    def test_transpose_symmetry(self, model_small, teacher_small, es_small, act):
        s1 = cov(model_small, teacher_small, es_small, act)
        s2 = cov(teacher_small, model_small, es_small, act)
        assert np.array_equal(s1, s2.T)

    def test_pushforward_through_quadrature(self, model_small, teacher_small,
                                            es_small, act):
        rng = np.random.default_rng(2)
        r = rng.standard_normal((3, 3))
        r /= np.linalg.norm(r, 2) * 1.1
        lhs = cov(rotate_pushforward(model_small, r), teacher_small, es_small, act)
        rhs = r @ cov(model_small, teacher_small, es_small, act)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_psd(self, es_small, act):
        rng = np.random.default_rng(3)
        for _ in range(10):
            mu = Ensemble.uniform(rng.standard_normal((12, 3)),
                                  rng.standard_normal((12, 8)))
            eigs = np.linalg.eigvalsh(cov(mu, mu, es_small, act))
            assert eigs[0] >= -1e-12

    def test_bilinearity(self, model_small, teacher_small, es_small, act):
        s = 0.4
        mixed = mix(model_small, teacher_small, s)
        lhs = cov(mixed, teacher_small, es_small, act)
        rhs = ((1 - s) * cov(model_small, teacher_small, es_small, act)
               + s * cov(teacher_small, teacher_small, es_small, act))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_determinism_bitwise(self, model_small, teacher_small, act):
        es1 = draw_eval_set(55, 400, 8)
        es2 = draw_eval_set(55, 400, 8)
        c1 = cov(model_small, teacher_small, es1, act)
        c2 = cov(model_small, teacher_small, es2, act)
        assert np.array_equal(c1, c2)


class TestSpectrum:
    def test_teacher_positive(self, teacher_small, es_small, act):
        spec = sigma_spectrum(teacher_small, es_small, act)
        assert spec.lambda_min > 0
        assert spec.rank == 3

    def test_degenerate_rank_one(self, es_small, act):
        rng = np.random.default_rng(4)
        a = np.zeros((10, 3)); a[:, 0] = rng.standard_normal(10)
        mu = Ensemble.uniform(a, rng.standard_normal((10, 8)))
        assert sigma_spectrum(mu, es_small, act).rank == 1

    def test_bounded_by_activation_sup(self, es_small, act):
        # with the second layer in the unit ball the covariance is below r1^2
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = rng.standard_normal((15, 3))
            a /= np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1.0)
            mu = Ensemble.uniform(a, rng.standard_normal((15, 8)))
            spec = sigma_spectrum(mu, es_small, act)
            assert spec.lambda_max <= act.r1 ** 2 + 1e-12


class TestRidge:
    def test_inverse_close_to_exact(self):
        rng = np.random.default_rng(6)
        b = rng.standard_normal((4, 4))
        s = b @ b.T + 0.5 * np.eye(4)
        np.testing.assert_allclose(ridge_inverse(s), np.linalg.inv(s),
                                   rtol=1e-6)

    def test_zero_matrix_flagged(self):
        with pytest.raises(SingularFeatureCovariance):
            ridge_inverse(np.zeros((3, 3)))
