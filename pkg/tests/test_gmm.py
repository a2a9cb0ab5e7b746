import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import zoom
from scipy.stats import multivariate_normal

from saliencykit import metrics
from saliencykit.core import normalize_to_distribution
from saliencykit.errors import LengthMismatch, SaliencyError, SchemaError, WrongState
from saliencykit.gmm import (
    CovMode,
    Gmm2D,
    cell_centers,
    decode,
    density,
    density_at,
    encode,
    gmm_from_dict,
    gmm_to_dict,
    nll,
    nll_grad,
    rasterize,
)

PEAK = 1 / (2 * math.pi)


def random_gmm(rng, c, mode, sigma=(0.03, 0.2), lo=0.2, hi=0.8):
    weights = rng.dirichlet(np.ones(c))
    means = rng.uniform(lo, hi, (c, 2))
    covs = np.zeros((c, 2, 2))
    for k in range(c):
        sx, sy = rng.uniform(*sigma, 2)
        if mode is CovMode.FULL:
            rho = rng.uniform(-0.8, 0.8)
            covs[k] = [[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]]
        else:
            covs[k] = np.diag([sx * sx, sy * sy])
    return Gmm2D(weights, means, covs, mode)


def scipy_density(g, pts):
    return sum(w * multivariate_normal(m, c).pdf(pts) for w, m, c in zip(g.weights, g.means, g.covs))


class TestGmm2D:
    def test_invariants(self):
        with pytest.raises(SaliencyError):
            Gmm2D([0.5, 0.4], [[0, 0], [1, 1]], [np.eye(2)] * 2)
        with pytest.raises(SaliencyError):
            Gmm2D([1.0], [[0, 0]], [[[1.0, 0.2], [0.2, 1.0]]], CovMode.DIAGONAL)
        with pytest.raises(SaliencyError):
            Gmm2D([1.0], [[0, 0]], [[[1.0, 2.0], [2.0, 1.0]]], CovMode.FULL)
        with pytest.raises(SaliencyError):
            Gmm2D.isotropic(np.full(65, 1 / 65), np.zeros((65, 2)), 0.1)

    def test_frozen(self):
        g = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.1)
        with pytest.raises(ValueError):
            g.means[0, 0] = 0.0


class TestDensity:
    def test_peak(self):
        g = Gmm2D([1.0], [[0.5, 0.5]], [np.eye(2)])
        assert density_at(g, [0.5, 0.5]) == pytest.approx(PEAK, abs=1e-12)

    def test_one_std(self):
        g = Gmm2D([1.0], [[0.5, 0.5]], [np.eye(2)])
        assert density_at(g, [1.5, 0.5]) == pytest.approx(PEAK * math.exp(-0.5), abs=1e-12)
        assert density_at(g, [1.5, 0.5]) == pytest.approx(0.0965, abs=1e-4)

    def test_mixture_collapse(self, rng):
        one = Gmm2D([1.0], [[0.4, 0.6]], [[[0.02, 0.005], [0.005, 0.01]]], CovMode.FULL)
        two = Gmm2D([0.5, 0.5], [[0.4, 0.6]] * 2, [[[0.02, 0.005], [0.005, 0.01]]] * 2, CovMode.FULL)
        pts = rng.uniform(-0.5, 1.5, (200, 2))
        np.testing.assert_allclose(density(two, pts), density(one, pts), rtol=1e-12, atol=0)

    @pytest.mark.parametrize("mode", list(CovMode))
    def test_matches_scipy(self, rng, mode):
        for _ in range(10):
            g = random_gmm(rng, 4, mode)
            pts = rng.uniform(-0.2, 1.2, (100, 2))
            np.testing.assert_allclose(density(g, pts), scipy_density(g, pts), rtol=1e-10, atol=1e-300)

    def test_far_tail_stays_positive(self):
        g = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.01)
        assert density_at(g, [0.0, 0.0]) > 0
        assert np.all(density(g, cell_centers(8, 8)) > 0)

    def test_rejects_bad_point(self):
        g = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.1)
        with pytest.raises(SaliencyError):
            density_at(g, [np.nan, 0.0])

    def test_integrates_to_one(self, rng):
        n = 512
        axis = -1 + (np.arange(n) + 0.5) * 3 / n
        xs, ys = np.meshgrid(axis, axis)
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        for _ in range(50):
            mode = CovMode.FULL if rng.random() < 0.5 else CovMode.DIAGONAL
            g = random_gmm(rng, int(rng.integers(1, 6)), mode, sigma=(0.02, 0.25))
            total = density(g, pts).sum() * (3 / n) ** 2
            assert 0.999 <= total <= 1.001

    def test_diagonal_full_parity(self, rng):
        for _ in range(20):
            g = random_gmm(rng, 3, CovMode.DIAGONAL)
            full = Gmm2D(g.weights, g.means, g.covs, CovMode.FULL)
            pts = rng.uniform(-1, 2, (300, 2))
            np.testing.assert_allclose(density(full, pts), density(g, pts), rtol=1e-12, atol=0)
            theta = encode(g)
            rows = theta.reshape(3, 5)
            full_theta = np.column_stack([rows[:, :3], -rows[:, 3], np.zeros(3), -rows[:, 4]]).ravel()
            np.testing.assert_allclose(
                density(decode(full_theta, 3, CovMode.FULL), pts), density(decode(theta, 3), pts), rtol=1e-12, atol=0
            )


class TestRasterize:
    def test_mass_at_256(self):
        g = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.1)
        assert abs(rasterize(g, 256, 256).values.sum() - 1) <= 1e-3

    def test_argmax_cell(self, rng):
        for _ in range(20):
            mu = rng.uniform(0.1, 0.9, 2)
            g = Gmm2D.isotropic([1.0], [mu], rng.uniform(0.02, 0.3))
            h, w = (int(v) for v in rng.integers(8, 80, 2))
            r, c = np.unravel_index(np.argmax(rasterize(g, h, w).values), (h, w))
            assert (r, c) == (int(mu[1] * h), int(mu[0] * w))

    def test_resolution_consistency(self, rng):
        g = random_gmm(rng, 3, CovMode.FULL, sigma=(0.05, 0.2))
        coarse = zoom(rasterize(g, 64, 64).values, 4, order=1)
        assert metrics.cc(coarse, rasterize(g, 256, 256).values) >= 0.999

    def test_orientation_and_size(self):
        g = Gmm2D.isotropic([1.0], [[0.92, 0.13]], 0.05)
        out = rasterize(g, 10, 20)
        assert out.shape == (10, 20)
        assert np.unravel_index(np.argmax(out.values), out.shape) == (1, 18)
        with pytest.raises(SaliencyError):
            rasterize(g, 1, 5)


class TestNLL:
    def test_one_hot(self):
        g = Gmm2D.isotropic([1.0], [[0.3, 0.6]], 0.2)
        q = np.zeros((8, 8))
        q[2, 5] = 1.0
        v = density_at(g, [5.5 / 8, 2.5 / 8])
        assert nll(g, normalize_to_distribution(q)) == pytest.approx(-math.log(v + 1e-7), abs=1e-12)

    def test_uniform_target(self, rng):
        g = random_gmm(rng, 3, CovMode.FULL)
        p = density(g, cell_centers(12, 9))
        u = normalize_to_distribution(np.ones((12, 9)))
        assert nll(g, u) == pytest.approx(-np.mean(np.log(p + 1e-7)), abs=1e-12)

    def test_requires_distribution(self):
        g = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.1)
        with pytest.raises(WrongState):
            nll(g, rasterize(g, 4, 4))

    def test_self_beats_shifted_copies(self, rng):
        h = w = 32
        for _ in range(50):
            g = random_gmm(rng, int(rng.integers(1, 4)), CovMode.FULL, sigma=(0.04, 0.15))
            target = normalize_to_distribution(rasterize(g, h, w))
            own = nll(g, target)
            angle = rng.uniform(0, 2 * np.pi)
            d = rng.uniform(2, 6) / w * np.array([np.cos(angle), np.sin(angle)])
            shifted = Gmm2D(g.weights, g.means + d, g.covs, g.cov_mode)
            assert own < nll(shifted, target)
            k = int(rng.integers(g.n_components))
            moved = g.means.copy()
            moved[k] += rng.uniform(0.1, 0.2) * np.array([np.cos(angle), np.sin(angle)])
            assert own <= nll(Gmm2D(g.weights, moved, g.covs, g.cov_mode), target)


finite_theta = st.integers(1, 6).flatmap(
    lambda c: st.tuples(
        st.just(c),
        st.sampled_from(list(CovMode)),
    ).flatmap(lambda cm: st.tuples(st.just(cm[0]), st.just(cm[1]), arrays(np.float64, cm[0] * cm[1].width, elements=st.floats(-1e3, 1e3))))
)


class TestDecode:
    def test_zeros(self):
        g = decode(np.zeros(10), 2, CovMode.DIAGONAL)
        np.testing.assert_array_equal(g.weights, [0.5, 0.5])
        np.testing.assert_array_equal(g.means, np.zeros((2, 2)))
        np.testing.assert_array_equal(g.covs, [np.eye(2)] * 2)
        np.testing.assert_array_equal(decode(np.zeros(12), 2, CovMode.FULL).covs, [np.eye(2)] * 2)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            decode(np.zeros(11), 2, CovMode.DIAGONAL)
        with pytest.raises(LengthMismatch):
            nll_grad(np.zeros(10), normalize_to_distribution(np.ones((4, 4))), 2, CovMode.FULL)

    def test_full_is_precision_factor(self):
        theta = np.array([0.0, 0.5, 0.5, math.log(2.0), 1.0, math.log(3.0)])
        g = decode(theta, 1, CovMode.FULL)
        L = np.array([[2.0, 0.0], [1.0, 3.0]])
        np.testing.assert_allclose(np.linalg.inv(g.covs[0]), L @ L.T, rtol=1e-12)

    @given(finite_theta)
    @settings(max_examples=300)
    def test_total(self, case):
        c, mode, theta = case
        g = decode(theta, c, mode)
        assert abs(g.weights.sum() - 1) <= 1e-12 and np.all(g.weights > 0)
        assert np.all(np.isfinite(g.covs))
        assert np.all(g.cov_eigenvalues() > 0)
        np.testing.assert_array_equal(g.covs[:, 0, 1], g.covs[:, 1, 0])
        if mode is CovMode.DIAGONAL:
            assert np.all(g.covs[:, 0, 1] == 0)

    @pytest.mark.parametrize("mode", list(CovMode))
    def test_round_trip_theta(self, rng, mode):
        for _ in range(50):
            c = int(rng.integers(1, 9))
            theta = rng.normal(0, 1, c * mode.width)
            back = encode(decode(theta, c, mode))
            rows, brows = theta.reshape(c, -1).copy(), back.reshape(c, -1)
            rows[:, 0] -= rows[:, 0].mean()
            np.testing.assert_allclose(brows, rows, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("mode", list(CovMode))
    def test_round_trip_mixture(self, rng, mode):
        cases = [Gmm2D([1.0], [[0.0, 0.0]], [np.eye(2)], mode)] + [random_gmm(rng, 4, mode) for _ in range(20)]
        for g in cases:
            back = decode(encode(g), g.n_components, mode)
            np.testing.assert_allclose(back.weights, g.weights, atol=1e-9, rtol=0)
            np.testing.assert_allclose(back.means, g.means, atol=1e-9, rtol=0)
            np.testing.assert_allclose(back.covs, g.covs, atol=1e-9, rtol=0)


class TestSchema:
    def test_round_trip(self, rng):
        g = random_gmm(rng, 3, CovMode.FULL)
        back = gmm_from_dict(gmm_to_dict(g))
        np.testing.assert_allclose(back.covs, g.covs, rtol=1e-15)
        assert back.cov_mode is CovMode.FULL

    @pytest.mark.parametrize(
        "doc",
        [
            {"cov_mode": "diag", "components": [{"weight": 0.9, "mean": [0.5, 0.5], "cov": [[0.01, 0], [0, 0.01]]}]},
            {"cov_mode": "spherical", "components": [{"weight": 1.0, "mean": [0.5, 0.5], "cov": [[0.01, 0], [0, 0.01]]}]},
            {"cov_mode": "diag", "components": [{"weight": 1.0, "mean": [0.5], "cov": [[0.01, 0], [0, 0.01]]}]},
            {"cov_mode": "full", "components": [{"weight": 1.0, "mean": [0.5, 0.5], "cov": [[0.01, 0.1], [0.1, 0.01]]}]},
            {"cov_mode": "diag", "components": [{"weight": 1.5, "mean": [0.5, 0.5], "cov": [[0.01, 0], [0, 0.01]]},
                                                {"weight": -0.5, "mean": [0.5, 0.5], "cov": [[0.01, 0], [0, 0.01]]}]},
            {"cov_mode": "diag", "components": []},
            {"components": []},
        ],
    )
    def test_rejects(self, doc):
        with pytest.raises(SchemaError):
            gmm_from_dict(doc)
