import numpy as np
import pytest
from conftest import constant_net, halfspace_net
from hypothesis import given, settings
from hypothesis import strategies as st

from macer import smoothing
from macer.errors import DomainError
from macer.net import forward_logits, softmax_temp
from macer.smoothing import (ABSTAIN, BoundKind, CertifyConfig, Mode, hard_certify, hard_radius_from_probs,
                             sample_under_noise, sample_votes, smoothed_predict, soft_certify,
                             soft_radius_from_expectations)
from macer.statmath import RngStream, std_normal_cdf, std_normal_quantile

# Frozen from mpmath: sqrt(2) * erfinv(2p - 1)
Q_CP_100 = 1.5004750241206362  # quantile of 0.001 ** (1 / 100)
Q_0841345 = 1.0000010494310443
Q_09, Q_005 = 1.2815515655446001, -1.644853626951472
Q_0933246 = 1.500410891406097


class TestRadiusFormulas:
    def test_equal_probabilities(self):
        assert hard_radius_from_probs(0.5, 0.5, 0.25) == 0.0
        assert soft_radius_from_expectations(0.3, 0.3, 1.0) == 0.0

    def test_symmetric_pair(self):
        assert hard_radius_from_probs(0.841345, 0.158655, 0.25) == pytest.approx(0.125 * 2 * Q_0841345, abs=1e-9)
        assert hard_radius_from_probs(0.841345, 0.158655, 0.25) == pytest.approx(0.25, abs=1e-6)

    def test_asymmetric_pair(self):
        assert hard_radius_from_probs(0.9, 0.05, 0.5) == pytest.approx(0.25 * (Q_09 - Q_005), abs=1e-9)
        assert hard_radius_from_probs(0.9, 0.05, 0.5) == pytest.approx(0.731601, abs=1e-6)

    def test_soft_value(self):
        assert soft_radius_from_expectations(0.933246, 0.066754, 1.0) == pytest.approx(Q_0933246, abs=1e-9)

    def test_linear_in_sigma(self):
        r = soft_radius_from_expectations(0.7, 0.2, 0.3)
        assert soft_radius_from_expectations(0.7, 0.2, 0.6) == pytest.approx(2 * r, rel=1e-14)

    def test_order_enforced(self):
        with pytest.raises(DomainError):
            hard_radius_from_probs(0.2, 0.3, 1.0)
        with pytest.raises(DomainError):
            soft_radius_from_expectations(0.2, 0.3, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b, c):
        pb, pa1, pa2 = sorted([a, b, c])
        assert hard_radius_from_probs(pa1, pb, 1.0) <= hard_radius_from_probs(pa2, pb, 1.0) + 1e-12
        assert hard_radius_from_probs(pa2, pa1, 1.0) <= hard_radius_from_probs(pa2, pb, 1.0) + 1e-12
        assert hard_radius_from_probs(pa1, pb, 1.0) >= 0


class TestSampling:
    def test_single_sample(self):
        net = halfspace_net([1.0, 2.0], 0.3)
        rng = RngStream(3, 1)
        mm = sample_under_noise(net, [0.2, 0.1], 1, 0.5, 2.0, rng)
        eta = rng.generator().standard_normal((1, 2))
        z = softmax_temp(forward_logits(net, np.array([0.2, 0.1]) + 0.5 * eta[0]), 2.0)
        np.testing.assert_array_equal(mm.first, z)
        np.testing.assert_array_equal(mm.second, z * z)

    def test_moment_ordering(self):
        net = halfspace_net([1.0, -1.0], 0.0)
        mm = sample_under_noise(net, [0.1, 0.0], 500, 0.3, 4.0, RngStream(1))
        assert np.all(0 <= mm.second) and np.all(mm.second <= mm.first) and np.all(mm.first <= mm.num)

    def test_constant_net(self):
        z = np.array([0.7, 0.2, 0.1])
        mm = sample_under_noise(constant_net(z), [0.5, 0.5], 1000, 1.0, 1.0, RngStream(0))
        np.testing.assert_allclose(mm.mean, z, rtol=1e-12)

    def test_chunking_does_not_change_noise(self, monkeypatch):
        net = halfspace_net([1.0, -1.0], 0.05)
        full = sample_votes(net, [0.1, 0.0], 1000, 0.3, RngStream(5))
        monkeypatch.setattr(smoothing, "CHUNK", 7)
        np.testing.assert_array_equal(sample_votes(net, [0.1, 0.0], 1000, 0.3, RngStream(5)), full)


class TestHardCertify:
    def test_all_votes(self):
        cfg = CertifyConfig(0.25, n0=10, n=100, alpha=0.001)
        res = hard_certify(constant_net([0.1, 0.9]), [0.0, 0.0], cfg, RngStream(0))
        assert res.outcome == 1
        assert res.lower_bound == pytest.approx(0.001 ** 0.01, abs=1e-10)
        assert res.radius == pytest.approx(0.25 * Q_CP_100, abs=1e-8)

    def test_coin_flip_abstains(self):
        # x sits on the boundary, so about half the votes go each way
        cfg = CertifyConfig(0.25, n0=100, n=1000, alpha=0.001)
        res = hard_certify(halfspace_net([1.0, 0.0], 0.5), [0.5, 0.5], cfg, RngStream(1))
        assert res.outcome == ABSTAIN and res.radius == 0.0 and res.lower_bound <= 0.5

    def test_converges_to_boundary_distance(self, halfspace):
        w, b = halfspace
        sigma = 0.25
        x = np.array([0.5, -0.2, 0.3, 0.1])
        dist = abs(w @ x - b) / np.linalg.norm(w)
        res = hard_certify(halfspace_net(w, b), x, CertifyConfig(sigma, 100, 100_000), RngStream(2))
        assert res.outcome == 1
        assert 0.95 * dist <= res.radius <= dist

    def test_rejects_soft_bound(self):
        with pytest.raises(DomainError):
            hard_certify(constant_net([0.5, 0.5]), [0, 0], CertifyConfig(1.0, bound_kind="hoeffding"), RngStream(0))

    def test_validity_on_analytic_halfspace(self, halfspace):
        w, b = halfspace
        sigma, alpha = 0.5, 0.01
        rng = np.random.default_rng(0)
        failures, certified = 0, 0
        for i in range(200):
            x = rng.uniform(-1, 1, size=4)
            res = hard_certify(halfspace_net(w, b), x, CertifyConfig(sigma, 50, 500, alpha), RngStream(7, i))
            if res.outcome == ABSTAIN:
                continue
            certified += 1
            # push x toward the boundary by just under r and evaluate the smoothed classifier exactly
            side = 1.0 if res.outcome == 1 else -1.0
            delta = -side * res.radius * (1 - 1e-12) * w / np.linalg.norm(w)
            p1 = std_normal_cdf((w @ (x + delta) - b) / (sigma * np.linalg.norm(w)))
            if (p1 > 0.5) != (res.outcome == 1):
                failures += 1
        assert certified > 100
        assert failures <= alpha * certified + 3 * np.sqrt(alpha * certified)


class TestSoftCertify:
    def test_hoeffding_abstains_near_half(self):
        cfg = CertifyConfig(0.25, n0=10, n=100, alpha=0.001, bound_kind="hoeffding")
        res = soft_certify(constant_net([0.52, 0.48]), [0, 0], cfg, RngStream(0))
        assert res.outcome == ABSTAIN and res.radius == 0.0
        assert res.lower_bound == pytest.approx(0.52 - np.sqrt(np.log(1000) / 200), abs=1e-9) or res.lower_bound == 0

    def test_bernstein_near_zero_variance(self):
        delta = 1e-6
        cfg = CertifyConfig(0.25, n0=100, n=10_000, alpha=0.001, bound_kind="bernstein")
        res = soft_certify(constant_net([1 - delta, delta]), [0, 0], cfg, RngStream(0))
        assert res.outcome == 0
        # frozen from mpmath: 0.25 * Phi^-1(1 - 1e-6 - 7 ln(2000) / (3 * 9999))
        assert res.radius == pytest.approx(0.7289134191397881, abs=1e-6)

    def test_lower_bound_clamped(self):
        cfg = CertifyConfig(0.25, n0=10, n=2, alpha=0.001, bound_kind="bernstein")
        res = soft_certify(constant_net([0.6, 0.4]), [0, 0], cfg, RngStream(0))
        assert res.lower_bound == 0.0 and res.outcome == ABSTAIN

    def test_abstains_when_top_expectation_below_half(self):
        # halfspace at a point whose smoothed class-1 probability is ~0.45; with beta large the
        # soft likelihood tracks the vote, so the true expected top likelihood is below 1/2
        w, b, sigma, alpha = np.array([1.0, 0.0]), 0.0, 0.5, 0.01
        x = np.array([sigma * std_normal_quantile(0.45), 0.0])
        net = halfspace_net(w, b, scale=1e6)
        hits = 0
        for i in range(300):
            for kind in ("hoeffding", "bernstein"):
                cfg = CertifyConfig(sigma, 20, 200, alpha, kind, beta=1.0)
                hits += soft_certify(net, x, cfg, RngStream(11, i)).outcome != ABSTAIN
        assert hits <= alpha * 600 + 3 * np.sqrt(alpha * 600)

    def test_rejects_hard_bound(self):
        with pytest.raises(DomainError):
            soft_certify(constant_net([0.5, 0.5]), [0, 0], CertifyConfig(1.0), RngStream(0))

    def test_config_validation(self):
        for bad in (dict(sigma=0.0), dict(sigma=1.0, n0=0), dict(sigma=1.0, n=1), dict(sigma=1.0, alpha=0.0)):
            with pytest.raises(DomainError):
                CertifyConfig(**bad)


class TestSmoothedPredict:
    def test_constant_net(self):
        net = constant_net([0.2, 0.5, 0.3])
        for mode in Mode:
            assert smoothed_predict(net, [0.0, 1.0], 1.0, 10, 1.0, mode, RngStream(0)) == 1

    def test_hard_soft_agree_on_constant(self):
        net = constant_net([0.6, 0.4])
        assert (smoothed_predict(net, [0, 0], 0.5, 5, 1.0, "hard", RngStream(1))
                == smoothed_predict(net, [0, 0], 0.5, 5, 1.0, "soft", RngStream(1)))

    def test_halfspace_frequency(self, halfspace):
        w, b = halfspace
        sigma = 0.25
        x = np.array([0.0, 0.0, 0.0, 0.0]) + (b + 2 * sigma) * w / np.linalg.norm(w) ** 2
        trials = 2000
        correct = sum(smoothed_predict(halfspace_net(w, b), x, sigma, 1, 1.0, "hard", RngStream(4, i)) == 1
                      for i in range(trials))
        p = std_normal_cdf(2.0)
        assert correct / trials >= p - 3 * np.sqrt(p * (1 - p) / trials)


class TestSoftHardRelations:
    def test_beta_convergence_shared_noise(self):
        sigma, n = 0.25, 1000
        net = halfspace_net([1.0, 0.0], 0.0, scale=1e8)
        rng = np.random.default_rng(3)
        for i in range(20):
            x = np.array([rng.uniform(-2, 2) * sigma, 0.0])
            stream = RngStream(21, i)
            gaps = np.concatenate([np.abs(np.diff(u, axis=1)).ravel()
                                   for u in smoothing.noisy_logits(net, x, n, sigma, stream)])
            assert gaps.min() >= 0.5
            votes = sample_votes(net, x, n, sigma, stream)
            mm = sample_under_noise(net, x, n, sigma, 64.0, stream)
            np.testing.assert_allclose(mm.mean, votes / n, atol=1e-6, rtol=0)

    def test_lipschitz_quantile_of_halfspace(self, halfspace):
        w, b = halfspace
        sigma = 0.4
        f = lambda x: std_normal_quantile(std_normal_cdf((w @ x - b) / (sigma * np.linalg.norm(w))))  # noqa: E731
        h = 1e-6
        for x in np.random.default_rng(0).uniform(-1, 1, size=(10, 4)):
            g = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(4)])
            assert np.linalg.norm(g) == pytest.approx(1 / sigma, abs=1e-6 / sigma * 10)


def test_bound_kind_strings():
    assert CertifyConfig(1.0, bound_kind="bernstein").bound_kind is BoundKind.BERNSTEIN
