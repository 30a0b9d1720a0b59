import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from efdm.benchmarks import (
    FpcaBasis,
    GmdModel,
    GmmModel,
    SncmModel,
    _optimal_modulation,
    fpca_fit,
    fpca_project,
    gmd_ncm,
    gmd_train,
    gmdm_ncm,
    gmm_fit,
    gmm_log_components,
    sncm_ncm,
    sncm_train,
)
from efdm.conformal import NcmScores, conformal_pvalue, split_full_training
from efdm.errors import FitFailureError, InvalidInputError
from efdm.fda import FunctionalDatum, FunctionalSample, Grid, cross_sectional_mean, trapz
from efdm.simgen import generate, paper_defaults

from conftest import bump, sample_of


def trap_weights(u):
    w = np.zeros_like(u)
    w[:-1] += np.diff(u) / 2
    w[1:] += np.diff(u) / 2
    return w


def random_spd(rng, p):
    A = rng.normal(size=(p, p))
    return A @ A.T + 0.5 * np.eye(p)


def random_mixture(rng, K, p):
    w = rng.dirichlet(np.ones(K))
    means = rng.normal(scale=2.0, size=(K, p))
    covs = np.array([random_spd(rng, p) for _ in range(K)])
    return GmmModel(w, means, covs)


def dense_density(m, x):
    return sum(m.weights[k] * multivariate_normal(m.means[k], m.covariances[k]).pdf(x) for k in range(m.K))


def dense_max_density(m, x):
    return max(m.weights[k] * multivariate_normal(m.means[k], m.covariances[k]).pdf(x) for k in range(m.K))


@pytest.fixture(scope="module")
def std100():
    return generate(paper_defaults("standard"), 100, seed=21)


class TestFpca:
    def test_rank_one(self, unit_grid, rng):
        g = np.sin(2 * np.pi * unit_grid.points) + unit_grid.points
        c = rng.normal(size=12)
        s = FunctionalSample(unit_grid, c[:, None] * g)
        b = fpca_fit(s, 2)
        theta = b.components[0]
        # centred rows are (c_i - mean(c)) g, so the component is +-g / ||g||
        cos = trapz(theta * g, unit_grid.normalized) / math.sqrt(trapz(g**2, unit_grid.normalized))
        assert abs(abs(cos) - 1) < 1e-10
        assert b.eigenvalues[1] < 1e-8

    def test_orthonormal(self, std100):
        b = fpca_fit(std100, 5)
        u = std100.grid.normalized
        G = np.array([[trapz(a * c, u) for c in b.components] for a in b.components])
        assert np.allclose(G, np.eye(5), atol=1e-6)

    def test_eigenvalues_non_increasing(self, std100):
        b = fpca_fit(std100, 6)
        assert np.all(np.diff(b.eigenvalues) <= 0)
        assert np.all(b.eigenvalues >= 0)

    def test_dense_eigen_oracle(self, std100):
        # first component maximizes the trapezoid-weighted projected variance
        b = fpca_fit(std100, 1)
        u = std100.grid.normalized
        w = trap_weights(u)
        X = std100.matrix - std100.matrix.mean(axis=0)
        C = X.T @ X / std100.n
        sw = np.sqrt(w)
        vals, vecs = np.linalg.eigh(sw[:, None] * C * sw[None, :])
        assert b.eigenvalues[0] == pytest.approx(vals[-1], rel=1e-10)
        theta = vecs[:, -1] / sw
        assert abs(abs(trapz(theta * b.components[0], u)) - 1) < 1e-8
        xi = fpca_project(b, std100)[:, 0]
        assert np.mean(xi**2) == pytest.approx(vals[-1], rel=1e-8)

    @pytest.mark.parametrize("p", [0, 100])
    def test_p_out_of_range(self, std100, p):
        with pytest.raises(InvalidInputError):
            fpca_fit(std100, p)


class TestFpcaProject:
    def test_mean_projects_to_zero(self, std100):
        b = fpca_fit(std100, 3)
        assert np.allclose(fpca_project(b, b.mean), 0.0, atol=1e-14)

    def test_component_coordinates(self, std100):
        b = fpca_fit(std100, 4)
        a = np.array([2.0, -0.5, 0.3, 1.2])
        f = FunctionalDatum(b.grid, b.mean.values + a @ b.components)
        assert np.allclose(fpca_project(b, f), a, atol=1e-6)
        f1 = FunctionalDatum(b.grid, b.mean.values + 2 * b.components[0])
        assert np.allclose(fpca_project(b, f1), [2, 0, 0, 0], atol=1e-6)

    def test_quadrature_oracle(self, std100, rng):
        b = fpca_fit(std100, 3)
        u = b.grid.normalized
        f = rng.normal(size=u.size)
        expected = [trapz((f - b.mean.values) * th, u) for th in b.components]
        assert np.allclose(fpca_project(b, f), expected, atol=1e-10, rtol=0)

    def test_sample_matches_rows(self, std100):
        b = fpca_fit(std100, 2)
        X = fpca_project(b, std100)
        assert np.allclose(X[5], fpca_project(b, std100[5]), atol=1e-14)

    def test_grid_mismatch(self, std100):
        b = fpca_fit(std100, 2)
        with pytest.raises(InvalidInputError):
            fpca_project(b, generate(paper_defaults("standard", Grid.uniform(-8, 8, 50)), 2, seed=0))


class TestGmmFit:
    def test_single_component_closed_form(self, rng):
        X = rng.normal(size=(80, 3)) @ np.diag([1.0, 2.0, 0.5])
        m = gmm_fit(X, 1, seed=0)
        C = np.cov(X.T, bias=True)
        assert np.allclose(m.means[0], X.mean(axis=0), atol=1e-12)
        assert np.allclose(m.covariances[0], C + 1e-8 * np.trace(C) / 3 * np.eye(3), atol=1e-12)
        assert m.weights[0] == pytest.approx(1.0)

    def test_two_clusters(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(300, 2)) * 0.3 + [-4.0, 0.0]
        b = rng.normal(size=(300, 2)) * 0.3 + [4.0, 1.0]
        m = gmm_fit(np.vstack([a, b]), 2, seed=1)
        order = np.argsort(m.means[:, 0])
        assert np.allclose(m.means[order[0]], [-4.0, 0.0], atol=0.1)
        assert np.allclose(m.means[order[1]], [4.0, 1.0], atol=0.1)
        assert np.allclose(m.weights, 0.5, atol=0.05)

    def test_log_likelihood_monotone(self):
        rng = np.random.default_rng(8)
        X = np.vstack([rng.normal(size=(60, 2)), rng.normal(size=(40, 2)) + 2.0, rng.normal(size=(30, 2)) - 3])
        m = gmm_fit(X, 3, seed=2)
        h = np.array(m.history)
        assert np.all(np.diff(h) >= -1e-8 * np.abs(h[:-1]))

    def test_weights_sum_to_one(self, rng):
        m = gmm_fit(rng.normal(size=(90, 2)), 3, seed=0)
        assert abs(m.weights.sum() - 1) < 1e-10
        for C in m.covariances:
            np.linalg.cholesky(C)

    def test_deterministic(self, rng):
        X = rng.normal(size=(60, 2))
        a, b = gmm_fit(X, 2, seed=4), gmm_fit(X, 2, seed=4)
        assert np.array_equal(a.means, b.means)

    def test_too_few_points(self, rng):
        with pytest.raises(FitFailureError):
            gmm_fit(rng.normal(size=(7, 3)), 2, seed=0)

    def test_collapse_is_fit_failure(self):
        X = np.zeros((20, 2))
        with pytest.raises(FitFailureError):
            gmm_fit(X, 2, seed=0)

    def test_bad_input(self):
        with pytest.raises(InvalidInputError):
            gmm_fit(np.array([[0.0, np.nan]] * 10), 1, seed=0)
        with pytest.raises(InvalidInputError):
            gmm_fit(np.zeros((10, 2)), 0, seed=0)


class TestDensities:
    def test_mode_score(self, rng):
        C = random_spd(rng, 3)
        m = GmmModel(np.array([1.0]), np.array([[1.0, -1.0, 0.5]]), C[None])
        expected = -((2 * math.pi) ** -1.5) / math.sqrt(np.linalg.det(C))
        assert gmd_ncm(m, m.means[0]) == pytest.approx(expected, rel=1e-12)

    def test_tails_go_to_zero(self, rng):
        m = random_mixture(rng, 2, 2)
        direction = np.array([0.6, 0.8])
        vals = [gmd_ncm(m, r * direction) for r in (5, 10, 20, 40)]
        assert all(v < 0 or v == 0 for v in vals)
        assert all(abs(b) <= abs(a) for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1]) < 1e-100

    def test_single_component_max_equals_sum(self, rng):
        m = random_mixture(rng, 1, 3)
        X = rng.normal(size=(20, 3))
        assert np.array_equal(gmd_ncm(m, X), gmdm_ncm(m, X))

    def test_max_not_below_sum(self, rng):
        m = random_mixture(rng, 2, 2)
        m = GmmModel(np.array([0.5, 0.5]), m.means, np.array([m.covariances[0]] * 2))
        X = rng.normal(size=(50, 2)) * 3
        assert np.all(gmdm_ncm(m, X) >= gmd_ncm(m, X))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_dense_oracles(self, seed):
        r = np.random.default_rng(seed)
        K, p = int(r.integers(1, 4)), int(r.integers(1, 4))
        m = random_mixture(r, K, p)
        x = r.normal(scale=1.5, size=p)
        d = dense_density(m, x)
        assert gmd_ncm(m, x) == pytest.approx(-d, rel=1e-12, abs=1e-300)
        assert gmdm_ncm(m, x) == pytest.approx(-dense_max_density(m, x), rel=1e-12, abs=1e-300)

    def test_dimension_mismatch(self, rng):
        m = random_mixture(rng, 1, 2)
        with pytest.raises(InvalidInputError):
            gmm_log_components(m, np.zeros(3))


class TestGmdDetector:
    def test_mahalanobis_ordering(self, std100):
        split = split_full_training(100, seed=0)
        det = gmd_train(std100, split, p=2, K=1, seed=0)
        test = generate(paper_defaults("narrow"), 40, seed=9)
        xi = fpca_project(det.basis, test)
        scores = det.score_sample(test)
        assert np.all(np.isfinite(scores))
        mu, C = det.gmm.means[0], det.gmm.covariances[0]
        D = xi - mu
        maha = np.einsum("ij,jk,ik->i", D, np.linalg.inv(C), D)
        assert np.array_equal(np.argsort(scores, kind="stable"), np.argsort(maha, kind="stable"))

    def test_rotation_invariance(self, std100, rng):
        split = split_full_training(100, seed=0)
        det = gmd_train(std100, split, p=3, K=2, seed=0)
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rot_basis = FpcaBasis(det.basis.mean, Q @ det.basis.components, det.basis.eigenvalues)
        g = det.gmm
        rot_gmm = GmmModel(g.weights, g.means @ Q.T, np.einsum("ij,kjl,ml->kim", Q, g.covariances, Q))
        test = generate(paper_defaults("standard"), 20, seed=5)
        for use_max in (False, True):
            a = GmdModel(det.basis, g, use_max, NcmScores([]))
            b = GmdModel(rot_basis, rot_gmm, use_max, NcmScores([]))
            cal_a = NcmScores(a.score_sample(std100.subset(split.cal)))
            cal_b = NcmScores(b.score_sample(std100.subset(split.cal)))
            pa = [conformal_pvalue(cal_a, s) for s in a.score_sample(test)]
            pb = [conformal_pvalue(cal_b, s) for s in b.score_sample(test)]
            assert np.allclose(pa, pb, atol=1e-10, rtol=0)
            assert np.allclose(a.score_sample(test), b.score_sample(test), rtol=1e-9, atol=0)

    def test_train_fields(self, std100):
        split = split_full_training(100, seed=2)
        det = gmd_train(std100, split, p=2, K=2, use_max=True, seed=3)
        assert det.family == "gmdm"
        assert det.n_cal == 33
        assert det.score(std100[0]) == pytest.approx(det.score_sample(std100.subset([0]))[0], rel=1e-14)

    def test_fit_failure_propagates(self):
        g = Grid.uniform(0, 1, 30)
        s = FunctionalSample(g, np.vstack([np.sin(k * g.points) for k in range(1, 10)]))
        with pytest.raises(FitFailureError):
            gmd_train(s, split_full_training(9, seed=0), p=5, K=2)


class TestSncm:
    def test_ncm_examples(self, unit_grid, rng):
        m = FunctionalDatum(unit_grid, np.sin(unit_grid.points))
        r1 = FunctionalDatum(unit_grid, np.ones(101))
        model = SncmModel(m, r1, "cross_sectional", "unit", NcmScores([0.0]))
        assert sncm_ncm(model, m) == 0.0
        assert sncm_ncm(model, m.values - 0.7) == pytest.approx(0.7, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_grid_max_oracle(self, seed):
        r = np.random.default_rng(seed)
        g = Grid.uniform(0, 1, 40)
        m = FunctionalDatum(g, r.normal(size=40))
        mod = FunctionalDatum(g, r.uniform(0.1, 2.0, size=40))
        model = SncmModel(m, mod, "cross_sectional", "sd", NcmScores([0.0]))
        f = r.normal(size=40)
        best = 0.0
        for j in range(40):
            best = max(best, abs((f[j] - m.values[j]) / mod.values[j]))
        assert sncm_ncm(model, f) == best

    @given(st.floats(-5, 5))
    def test_translation_bound(self, c):
        g = Grid.uniform(0, 1, 30)
        m = FunctionalDatum(g, np.zeros(30))
        model = SncmModel(m, FunctionalDatum(g, np.ones(30)), "cross_sectional", "unit", NcmScores([0.0]))
        f = np.sin(7 * g.points)
        assert abs(sncm_ncm(model, f + c) - sncm_ncm(model, f)) <= abs(c) + 1e-12

    def test_unit_modulation(self, std100):
        m = sncm_train(std100, split_full_training(100, seed=0), "cross_sectional", "unit")
        assert np.all(m.modulation.values == 1.0)

    def test_sd_degenerate_floor(self, bump_grid):
        s = sample_of(bump_grid, [bump(bump_grid)] * 9)
        m = sncm_train(s, split_full_training(9, seed=0), "cross_sectional", "sd")
        assert np.all(m.modulation.values > 0)
        assert m.score(bump(bump_grid)) == 0.0

    def test_optimal_integrates_to_one(self, std100):
        m = sncm_train(std100, split_full_training(100, seed=0), "cross_sectional", "optimal", alpha=0.1)
        assert abs(trapz(m.modulation.values, std100.grid.normalized) - 1) < 1e-8

    def test_karcher_mean_option(self, standard_sample):
        split = split_full_training(standard_sample.n, seed=0)
        m = sncm_train(standard_sample, split, "karcher", "optimal", alpha=0.1)
        assert m.mean_type == "karcher"
        cs = cross_sectional_mean(standard_sample.subset(split.train))
        assert np.max(m.mean_fn.values) > np.max(cs.values)

    def test_optimal_needs_alpha(self, std100):
        with pytest.raises(InvalidInputError):
            sncm_train(std100, split_full_training(100, seed=0), "cross_sectional", "optimal")

    @pytest.mark.parametrize(
        "kwargs", [{"mean_type": "median"}, {"modulation_type": "mad"}, {"h1_rule": "neither"}]
    )
    def test_bad_options(self, std100, kwargs):
        with pytest.raises(InvalidInputError):
            sncm_train(std100, split_full_training(100, seed=0), alpha=0.1, **kwargs)

    def test_h1_printed_rule(self):
        u = np.linspace(0, 1, 5)
        # sums of |residual| exceed every sup, so the printed rule keeps nobody
        R = np.array([[1.0, 1, 1, 1, 1], [2, 2, 2, 2, 2], [0.5, 3, 0.5, 0.5, 0.5], [4, 4, 4, 4, 4]])
        env_printed = _optimal_modulation(R, u, 0.5, "printed")
        env_sup = _optimal_modulation(R, u, 0.5, "sup")
        # rank ceil(5 * 0.5) = 3 -> nu = 3 (sups 1, 2, 3, 4)
        expected = np.max(np.abs(R[:3]), axis=0)
        assert np.allclose(env_sup, expected / trapz(expected, u))
        assert np.allclose(env_printed, env_sup)

    def test_h1_printed_rule_differs_from_sup(self):
        u = np.linspace(0, 1, 4)
        R = np.array([[0.1, 0.1, 0.1, 0.1], [0.0, 0.5, 0.0, 0.0], [0.3, 0.3, 0.3, 0.3], [1.0, 1.0, 1.0, 1.0]])
        # sups 0.1, 0.5, 0.3, 1.0 -> rank ceil(5 * 0.6) = 3 -> nu = 0.5; sums 0.4, 0.5, 1.2, 4
        env_printed = _optimal_modulation(R, u, 0.4, "printed")
        env_sup = _optimal_modulation(R, u, 0.4, "sup")
        e_p = np.max(np.abs(R[[0, 1]]), axis=0)
        e_s = np.max(np.abs(R[[0, 1, 2]]), axis=0)
        assert np.allclose(env_printed, e_p / trapz(e_p, u))
        assert np.allclose(env_sup, e_s / trapz(e_s, u))

    def test_rank_beyond_sample_uses_all(self):
        u = np.linspace(0, 1, 3)
        R = np.array([[1.0, 0, 0], [0, 2.0, 0]])
        env = _optimal_modulation(R, u, 0.01, "printed")
        e = np.array([1.0, 2.0, 0.0])
        assert np.allclose(env, e / trapz(e, u))

    def test_non_positive_modulation_rejected(self, unit_grid):
        m = FunctionalDatum(unit_grid, np.zeros(101))
        with pytest.raises(InvalidInputError):
            SncmModel(m, FunctionalDatum(unit_grid, np.zeros(101)), "cross_sectional", "unit", NcmScores([0.0]))
