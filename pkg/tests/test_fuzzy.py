import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from ckim.core import CkimError, FeatureVector, LabelSpace
from ckim.fuzzy import (
    FuzzyModel,
    GaussianMembership,
    _nearest_center,
    classify_fuzzy,
    classify_fuzzy_batch,
    defuzzify,
    fit_fuzzy,
    log_membership,
    membership,
    weighted_center,
)

K3 = LabelSpace.canonical(3)
K2 = LabelSpace.canonical(2)


def _g(mean, cov):
    return GaussianMembership(tuple(mean), tuple(map(tuple, np.asarray(cov, dtype=float))))


def _density_oracle(mean, cov, x):
    """Bivariate normal density in 50-digit arithmetic."""
    with mpmath.workdps(50):
        m = mpmath.matrix([[mpmath.mpf(cov[0][0]), mpmath.mpf(cov[0][1])],
                           [mpmath.mpf(cov[1][0]), mpmath.mpf(cov[1][1])]])
        d = mpmath.matrix([mpmath.mpf(x[0]) - mpmath.mpf(mean[0]), mpmath.mpf(x[1]) - mpmath.mpf(mean[1])])
        q = (d.T * mpmath.inverse(m) * d)[0]
        return float(mpmath.exp(-q / 2) / (2 * mpmath.pi * mpmath.sqrt(mpmath.det(m))))


def _oracle_label(model: FuzzyModel, x):
    """Weighted-center defuzzification evaluated with scipy densities."""
    dens = [multivariate_normal(g.mean, g.covariance).pdf(x) for g in model.memberships]
    if max(dens) < 1e-300:
        logs = [multivariate_normal(g.mean, g.covariance).logpdf(x) for g in model.memberships]
        return int(np.argmax(logs)), None
    pred = sum(d * y for d, y in zip(dens, model.centers)) / sum(dens)
    dist = [abs(c - pred) for c in model.centers]
    best = min(range(len(dist)), key=lambda i: (dist[i], -dens[i], i))
    return best, pred


def _samples(rng, mean, cov, n):
    return [FeatureVector(*map(float, p)) for p in rng.multivariate_normal(mean, cov, size=n)]


class TestFit:
    def test_mean_and_mle_covariance(self):
        data = [(FeatureVector(0, 0), K2.size(0)), (FeatureVector(2, 2), K2.size(0)),
                (FeatureVector(1, 1), K2.size(0))]
        data += [(FeatureVector(a, b), K2.size(1)) for a, b in [(5, 5), (6, 5), (5, 7)]]
        with pytest.warns(RuntimeWarning):
            model = fit_fuzzy(data, K2)
        small = model.memberships[0]
        assert small.mean == (1.0, 1.0)
        # divide by n=3, not n-1
        np.testing.assert_allclose(small.covariance, [[2 / 3 + 1e-8, 2 / 3], [2 / 3, 2 / 3 + 1e-8]], rtol=1e-14)
        assert model.centers == (0.0, 1.0)

    def test_parameter_recovery(self):
        rng = np.random.default_rng(42)
        mu, cov = (0.3, 0.6), [[0.01, 0.0], [0.0, 0.02]]
        data = [(x, K2.size(0)) for x in _samples(rng, mu, cov, 10_000)]
        data += [(x, K2.size(1)) for x in _samples(rng, (0.7, 0.2), cov, 100)]
        g = fit_fuzzy(data, K2).memberships[0]
        assert abs(g.mean[0] - 0.3) <= 0.01 and abs(g.mean[1] - 0.6) <= 0.01
        assert g.covariance[0][0] == pytest.approx(0.01, rel=0.15)
        assert g.covariance[1][1] == pytest.approx(0.02, rel=0.15)
        # off-diagonal is 0 in truth; bound it by 15% of the diagonal scale
        assert abs(g.covariance[0][1]) <= 0.15 * 0.01

    def test_eigenvalue_floor(self, small_default):
        model = fit_fuzzy(small_default.labeled_features(), K3)
        for g in model.memberships:
            assert np.linalg.eigvalsh(np.array(g.covariance)).min() >= 1e-8 * (1 - 1e-6)

    def test_empty_class(self):
        data = [(FeatureVector(i, i * i), K3.size(i % 2)) for i in range(10)]
        with pytest.raises(CkimError, match="large"):
            fit_fuzzy(data, K3)

    def test_too_few(self):
        data = [(FeatureVector(i, i * i), K2.size(0)) for i in range(5)]
        data += [(FeatureVector(1, 2), K2.size(1)), (FeatureVector(2, 1), K2.size(1))]
        with pytest.raises(CkimError):
            fit_fuzzy(data, K2)

    def test_identical_samples(self):
        data = [(FeatureVector(0.1, 0.2), K2.size(0))] * 5
        data += [(FeatureVector(i, i * i), K2.size(1)) for i in range(5)]
        with pytest.raises(CkimError, match="identical"):
            fit_fuzzy(data, K2)

    def test_centers_must_increase(self):
        g = _g((0, 0), np.eye(2))
        with pytest.raises(CkimError):
            FuzzyModel(K2, (g, g), (1.0, 1.0))


class TestMembership:
    def test_at_mean(self):
        assert membership(_g((0.2, 0.3), np.eye(2)), FeatureVector(0.2, 0.3)) == pytest.approx(
            0.15915494309189533577, rel=1e-15)

    def test_root_two_away(self):
        assert membership(_g((0, 0), np.eye(2)), FeatureVector(1, 1)) == pytest.approx(
            0.058549831524319160690, rel=1e-15)

    def test_against_high_precision_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            a = rng.normal(size=(2, 2))
            cov = a @ a.T * rng.uniform(1e-3, 1) + 1e-3 * np.eye(2)
            cov[1, 0] = cov[0, 1]
            mean = rng.uniform(size=2)
            x = mean + rng.normal(scale=0.5, size=2) * np.sqrt(np.diag(cov))
            g = _g(mean, cov)
            got = membership(g, FeatureVector(float(x[0]), float(x[1])))
            assert got == pytest.approx(_density_oracle(mean, cov, x), rel=1e-12)

    def test_log_consistent(self):
        g = _g((0.1, 0.2), [[0.02, 0.005], [0.005, 0.01]])
        x = FeatureVector(0.3, 0.1)
        assert log_membership(g, x) == pytest.approx(math.log(membership(g, x)), rel=1e-13)

    def test_rejects_indefinite(self):
        with pytest.raises(CkimError):
            _g((0, 0), [[1, 2], [2, 1]])

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 1), st.floats(1.05, 3))
    def test_decreasing_along_rays(self, dx, dy, t1, ratio):
        g = _g((0.5, 0.5), [[0.04, 0.01], [0.01, 0.02]])
        if abs(dx) + abs(dy) < 1e-3:
            return
        at = lambda t: membership(g, FeatureVector(0.5 + t * dx, 0.5 + t * dy))
        peak = membership(g, FeatureVector(0.5, 0.5))
        near, far = at(t1), at(t1 * ratio)
        assert peak > near
        assert near > far or far == 0.0


def _three_rule_model(cov=0.01):
    gs = tuple(_g(m, cov * np.eye(2)) for m in [(0.25, 0.5), (0.75, 0.5), (0.5, 5.0)])
    return FuzzyModel(K3, gs, (0.0, 1.0, 2.0))


class TestDefuzzify:
    def test_single_rule_firing(self):
        gs = tuple(_g(m, 1e-4 * np.eye(2)) for m in [(0, 0), (0.5, 0.5), (1, 1)])
        model = FuzzyModel(K3, gs, (0.0, 1.0, 2.0))
        pred, label, degrees = defuzzify(model, FeatureVector(0.5, 0.5))
        assert degrees[0] == 0.0 and degrees[2] == 0.0 and degrees[1] > 0
        assert pred == 1.0 and label.name == "middle"

    def test_equal_memberships(self):
        g = _g((0.3, 0.3), [[0.02, 0.0], [0.0, 0.02]])
        model = FuzzyModel(K3, (g, g, g), (0.0, 1.0, 2.0))
        pred, label, degrees = defuzzify(model, FeatureVector(0.1, 0.9))
        assert len(set(degrees)) == 1
        assert pred == 1.0 and label.name == "middle"

    def test_underflow_fallback(self):
        model = _three_rule_model(cov=1e-3)
        x = FeatureVector(40.0, -30.0)
        for g in model.memberships:
            assert math.sqrt(g.mahalanobis_sq(x)) > 60
        pred, label, degrees = defuzzify(model, x)
        assert max(degrees) < 1e-300
        logs = [multivariate_normal(g.mean, g.covariance).logpdf(x.as_tuple()) for g in model.memberships]
        assert label.index == int(np.argmax(logs))
        assert pred == model.centers[label.index] and not math.isnan(pred)

    def test_dominant_rule(self, small_default):
        model = fit_fuzzy(small_default.labeled_features(), K3)
        mu_l = model.memberships[2].mean
        assert classify_fuzzy(model, FeatureVector(*mu_l)).name == "large"

    def test_midpoint_tie_goes_to_smaller_index(self):
        model = _three_rule_model()
        pred, label, degrees = defuzzify(model, FeatureVector(0.5, 0.5))
        assert degrees[0] == degrees[1] and degrees[2] == 0.0
        assert pred == 0.5
        assert label.name == "small"

    def test_tie_prefers_larger_degree(self):
        assert _nearest_center((0.0, 1.0, 2.0), 1.5, (1.0, 2.0, 5.0)) == 2
        assert _nearest_center((0.0, 1.0, 2.0), 1.5, (0.0, 5.0, 1.0)) == 1
        assert _nearest_center((0.0, 1.0, 2.0), 1.5, (0.0, 3.0, 3.0)) == 1

    def test_weighted_center_scale_free(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            deg = rng.uniform(size=3)
            c = float(10 ** rng.uniform(-200, 200))
            assert weighted_center(deg * c, (0, 1, 2)) == pytest.approx(weighted_center(deg, (0, 1, 2)), rel=1e-12)

    @settings(max_examples=200)
    @given(st.floats(-1, 2), st.floats(-1, 2))
    def test_prediction_convex(self, a, b):
        model = _three_rule_model(cov=0.05)
        pred, _, degrees = defuzzify(model, FeatureVector(a, b))
        assert all(d >= 0 for d in degrees)
        assert 0.0 <= pred <= 2.0


def test_grid_matches_bruteforce_oracle(default_data):
    train, _ = default_data
    model = fit_fuzzy(train.labeled_features(), K3)
    g = np.linspace(0, 1, 200)
    grid = np.array([(a, b) for a in g for b in g])
    batch = classify_fuzzy_batch(model, grid)
    dens = np.column_stack([multivariate_normal(m.mean, m.covariance).pdf(grid) for m in model.memberships])
    logs = np.column_stack([multivariate_normal(m.mean, m.covariance).logpdf(grid) for m in model.memberships])
    mismatches = 0
    for i, (a, b) in enumerate(grid):
        if dens[i].max() < 1e-300:
            expected = int(np.argmax(logs[i]))
        else:
            pred = dens[i] @ np.array(model.centers) / dens[i].sum()
            p_ours = defuzzify(model, FeatureVector(float(a), float(b)))[0]
            assert p_ours == pytest.approx(pred, rel=1e-9, abs=1e-12)
            expected = min(range(3), key=lambda k: (abs(model.centers[k] - pred), -dens[i][k], k))
        mismatches += batch[i] != expected
    assert mismatches == 0


def test_two_class_boundary_is_fisher_discriminant():
    cov = np.array([[0.02, 0.006], [0.006, 0.01]])
    mu0, mu1 = np.array([0.3, 0.4]), np.array([0.6, 0.55])
    model = FuzzyModel(K2, (_g(mu0, cov), _g(mu1, cov)), (0.0, 1.0))
    prec = np.linalg.inv(cov)
    w = prec @ (mu1 - mu0)
    c = 0.5 * (mu1 @ prec @ mu1 - mu0 @ prec @ mu0)
    n = 200
    g = np.linspace(0, 1, n)
    labels = classify_fuzzy_batch(model, np.array([(a, b) for a in g for b in g])).reshape(n, n)
    side = (np.add.outer(w[0] * g, w[1] * g) > c).astype(int)
    for i, j in zip(*np.nonzero(labels != side)):
        # only cells straddling the analytic line may disagree
        nb = side[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
        assert nb.min() != nb.max()
    assert (labels != side).sum() <= 2 * n


def test_reproduces_well_separated_training_labels(default_data):
    train, _ = default_data
    data = train.labeled_features()
    model = fit_fuzzy(data, K3)
    x = np.array([f.as_tuple() for f, _ in data])
    y = np.array([s.index for _, s in data])
    assert (classify_fuzzy_batch(model, x) == y).mean() >= 0.99
