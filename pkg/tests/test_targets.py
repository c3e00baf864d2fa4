"""Analytic targets: mixtures, classifiers, tilted distributions, references.

Closed forms are cross-checked against independent numerical routes (finite
differences of log densities, adaptive panel quadrature, QUADPACK, Monte
Carlo) rather than against re-derivations of the same algebra.
"""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import ks_2samp, norm

from guidance_lab import quadrature
from guidance_lab.errors import ConfigError, UnsupportedTargetError
from guidance_lab.targets import (
    AnalyticTarget,
    ClassMixtureClassifier,
    GaussianMixture,
    LinearGaussianClassifier,
    cfg_marginal_score,
    conditional_denoiser,
    conditional_gmm,
    conditional_score,
    quadrature_oracle,
    renyi_gradient,
    sample_reference,
    smoothed_prior_denoiser,
    smoothed_prior_score,
    standard_gaussian_target,
    support_box,
    target_from_config,
    tilted_gmm,
    tilted_log_density_unnormalized,
    tilted_smoothed_score,
)
from guidance_lab import gaussian_theory


def _one(a) -> float:
    """Scalar value of a length-one array (or a plain float)."""
    return float(np.asarray(a).ravel()[0])


# ---------------------------------------------------------------------------
# mixture density, score, denoiser


def test_unit_gaussian_score(gaussian):
    assert abs(_one(smoothed_prior_score(gaussian, np.array([1.0]), 0.0)) + 1.0) < 1e-14


def test_symmetric_mixture_score_vanishes_at_midpoint():
    gmm = GaussianMixture(
        np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([[[0.09]], [[0.09]]])
    )
    assert abs(_one(gmm.score(np.array([0.0]), 0.4))) < 1e-14


def test_score_matches_log_density_finite_differences(bimodal):
    rng = np.random.default_rng(50)
    pts = rng.uniform(-3.0, 3.0, size=(50, 1))
    h = 1e-5
    for sigma in (0.0, 0.5):
        sc = bimodal.prior.score(pts, sigma)
        fd = (
            bimodal.prior.log_density(pts + h, sigma)
            - bimodal.prior.log_density(pts - h, sigma)
        ) / (2.0 * h)
        assert np.max(np.abs(sc[:, 0] - fd)) < 1e-7


def test_unit_gaussian_denoiser_shrinks(gaussian):
    got = smoothed_prior_denoiser(gaussian, np.array([2.0]), 1.0)
    assert abs(_one(got) - 1.0) < 1e-14


def test_denoiser_approaches_identity_in_the_bulk(bimodal):
    x = np.array([-1.05])
    got = smoothed_prior_denoiser(bimodal, x, 1e-6)
    assert abs(_one(got) - _one(x)) < 1e-9


def test_denoiser_matches_quadrature_posterior_mean(bimodal):
    x, sigma = np.array([0.3]), 0.8
    lo, hi = support_box(bimodal.prior)
    m0 = quadrature_oracle(bimodal.prior.density, x, sigma, 0, list(zip(lo, hi)))
    m1 = quadrature_oracle(bimodal.prior.density, x, sigma, 1, list(zip(lo, hi)))
    want = float(m1[0]) / m0
    got = _one(smoothed_prior_denoiser(bimodal, x, sigma))
    assert abs(got - want) < 1e-8


def test_smoothed_mixture_widens_covariance(bimodal):
    sm = bimodal.prior.smoothed(0.7)
    np.testing.assert_allclose(
        sm.covariances, bimodal.prior.covariances + 0.49 * np.eye(1), rtol=0, atol=1e-15
    )
    x = np.array([0.2])
    assert abs(_one(sm.score(x, 0.0)) - _one(bimodal.prior.score(x, 0.7))) < 1e-13


def test_mixture_mean_covariance():
    gmm = GaussianMixture(
        np.array([0.85, 0.15]), np.array([[-1.0], [1.0]]), np.array([[[0.09]], [[0.09]]])
    )
    mean, cov = gmm.mean_covariance()
    want_mean = 0.85 * -1.0 + 0.15 * 1.0
    want_cov = 0.09 + 0.85 * (-1.0 - want_mean) ** 2 + 0.15 * (1.0 - want_mean) ** 2
    assert abs(float(mean[0]) - want_mean) < 1e-14
    assert abs(float(cov[0, 0]) - want_cov) < 1e-14


def test_mixture_sampling_moments(bimodal):
    rng = np.random.default_rng(99)
    pts = bimodal.prior.sample(200_000, rng)
    assert pts.shape == (200_000, 1)
    mean, cov = bimodal.prior.mean_covariance()
    assert abs(pts.mean() - float(mean[0])) < 4.0 * np.sqrt(float(cov[0, 0]) / 200_000)


def test_point_shape_validation(bimodal):
    with pytest.raises(ValueError):
        bimodal.prior.score(np.zeros((4, 2)), 0.5)
    with pytest.raises(ValueError):
        bimodal.prior.score(np.zeros(3), 0.5)


# ---------------------------------------------------------------------------
# conditioning


def test_conditional_denoiser_gaussian_case(gaussian):
    got = conditional_denoiser(gaussian, 3.0, np.array([3.0]), 1.0)
    assert abs(_one(got) - 2.0) < 1e-14
    prior = smoothed_prior_denoiser(gaussian, np.array([3.0]), 1.0)
    assert abs(_one(prior) - 1.5) < 1e-14


def test_bayes_posterior_gaussian_case(gaussian):
    post = conditional_gmm(gaussian, 3.0)
    assert abs(float(post.means[0, 0]) - 1.5) < 1e-14
    assert abs(float(post.covariances[0, 0, 0]) - 0.5) < 1e-14


def test_uninformative_classifier_conditions_to_prior(bimodal):
    loose = AnalyticTarget(bimodal.prior, LinearGaussianClassifier(np.eye(1), 1e6))
    x = np.linspace(-2.0, 2.0, 9)[:, None]
    got = conditional_denoiser(loose, 0.3, x, 0.7)
    want = smoothed_prior_denoiser(loose, x, 0.7)
    assert np.max(np.abs(got - want)) < 1e-9


def test_class_mixture_conditional_is_the_class_conditional(class_mixture):
    post = conditional_gmm(class_mixture, 1)
    assert post is class_mixture.classifier.class_conditionals[1]
    with pytest.raises(ValueError):
        conditional_gmm(class_mixture, 2)
    with pytest.raises(ValueError):
        conditional_gmm(class_mixture, 0.5)


def test_conditional_matches_quadrature_posterior_mean(bimodal):
    """Bayes conditioning cross-checked by integrating prior * likelihood."""
    c, x, sigma = 1.0, np.array([0.2]), 0.6
    gamma = bimodal.classifier.gamma

    def joint(pts):
        lik = norm.pdf(c, loc=pts[:, 0], scale=gamma)
        return bimodal.prior.density(pts) * lik

    lo, hi = support_box(bimodal.prior)
    m0 = quadrature_oracle(joint, x, sigma, 0, list(zip(lo, hi)))
    m1 = quadrature_oracle(joint, x, sigma, 1, list(zip(lo, hi)))
    got = _one(conditional_denoiser(bimodal, c, x, sigma))
    assert abs(got - float(m1[0]) / m0) < 1e-8


# ---------------------------------------------------------------------------
# tilted distributions


def test_tilt_sharpens_gaussian_posterior(gaussian):
    tilt = tilted_gmm(gaussian, 3.0, 2.0)
    assert abs(float(tilt.means[0, 0]) - 2.0) < 1e-14
    assert abs(float(tilt.covariances[0, 0, 0]) - 1.0 / 3.0) < 1e-14


def test_tilt_at_unit_weight_is_bayes(gaussian, class_mixture):
    tilt = tilted_gmm(gaussian, 3.0, 1.0)
    post = conditional_gmm(gaussian, 3.0)
    np.testing.assert_allclose(tilt.means, post.means, atol=1e-14)
    np.testing.assert_allclose(tilt.covariances, post.covariances, atol=1e-14)
    assert tilted_gmm(class_mixture, 0, 1.0) is conditional_gmm(class_mixture, 0)


def test_tilt_rejects_nonpositive_weight(gaussian):
    with pytest.raises(ValueError):
        tilted_gmm(gaussian, 3.0, 0.0)
    with pytest.raises(ValueError):
        tilted_gmm(gaussian, 3.0, -1.0)


def test_tilted_class_mixture_has_no_closed_form(class_mixture):
    with pytest.raises(UnsupportedTargetError):
        tilted_gmm(class_mixture, 1, 2.0)


def test_tilted_smoothed_score_gaussian_closed_form(gaussian):
    for x, sigma in [(0.4, 0.3), (-1.1, 1.2), (2.0, 0.05)]:
        got = _one(tilted_smoothed_score(gaussian, 0.0, 2.0, np.array([x]), sigma))
        assert abs(got + x / (1.0 / 3.0 + sigma**2)) < 1e-12


def test_class_mixture_normalizer_two_routes(class_mixture):
    """Normalizing constant of the tilted class mixture: panel quadrature
    against QUADPACK."""

    def dens(pts):
        return np.exp(tilted_log_density_unnormalized(class_mixture, 1, 2.0, pts))

    z_panels = float(quadrature.integrate(dens, [(-9.0, 9.0)], abs_tol=1e-12).ravel()[0])
    z_quadpack = quad(lambda t: float(dens(np.array([[t]]))[0]), -9.0, 9.0, epsabs=1e-12)[0]
    assert abs(z_panels - 0.3868369983179669) < 1e-12
    assert abs(z_panels - z_quadpack) < 1e-9


def test_class_mixture_tilted_score_against_finite_differences(class_mixture):
    """Quadrature-route tilted score vs a central difference of the log
    smoothed tilted density (itself computed by quadrature)."""
    c, w, sigma, h = 1, 2.0, 0.5, 1e-4

    def dens(pts):
        return np.exp(tilted_log_density_unnormalized(class_mixture, c, w, pts))

    lo, hi = support_box(class_mixture.prior)
    bounds = list(zip(lo, hi))
    for x in (-0.5, 0.8, 1.6):
        got = _one(tilted_smoothed_score(class_mixture, c, w, np.array([x]), sigma))
        up = quadrature_oracle(dens, np.array([x + h]), sigma, 0, bounds, abs_tol=1e-13)
        dn = quadrature_oracle(dens, np.array([x - h]), sigma, 0, bounds, abs_tol=1e-13)
        fd = (np.log(up) - np.log(dn)) / (2.0 * h)
        assert abs(got - fd) < 1e-6


def test_class_mixture_unit_weight_score_reduces_to_conditional(class_mixture):
    x = np.linspace(-2.0, 3.0, 7)[:, None]
    got = tilted_smoothed_score(class_mixture, 0, 1.0, x, 0.7)
    want = conditional_score(class_mixture, 0, x, 0.7)
    np.testing.assert_array_equal(got, want)


def test_tilted_score_quadrature_needs_low_dimension_and_noise(class_mixture):
    cond3 = (
        GaussianMixture(np.array([1.0]), np.zeros((1, 3)), np.eye(3)[None]),
        GaussianMixture(np.array([1.0]), np.ones((1, 3)), np.eye(3)[None]),
    )
    prior3 = GaussianMixture(
        np.array([0.5, 0.5]),
        np.stack([np.zeros(3), np.ones(3)]),
        np.stack([np.eye(3), np.eye(3)]),
    )
    tgt3 = AnalyticTarget(prior3, ClassMixtureClassifier(np.array([0.5, 0.5]), cond3))
    with pytest.raises(UnsupportedTargetError):
        tilted_smoothed_score(tgt3, 0, 2.0, np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        tilted_smoothed_score(class_mixture, 0, 2.0, np.array([0.0]), 0.0)


# ---------------------------------------------------------------------------
# guided combination score and the divergence gradient


def test_combined_score_weight_shortcuts(bimodal):
    x = np.linspace(-2.0, 2.0, 5)[:, None]
    np.testing.assert_allclose(
        cfg_marginal_score(bimodal, 1.0, 1.0, x, 0.5),
        conditional_score(bimodal, 1.0, x, 0.5),
        atol=1e-15,
    )
    np.testing.assert_allclose(
        cfg_marginal_score(bimodal, 1.0, 0.0, x, 0.5),
        smoothed_prior_score(bimodal, x, 0.5),
        atol=1e-15,
    )


def test_combined_score_slope_matches_closed_form_variance(gaussian):
    """For the scalar Gaussian at c = 0 the combined score is linear with
    slope -1/v where v is the closed-form guided marginal variance."""
    for w, sigma in [(2.0, 0.4), (3.0, 1.1), (0.5, 0.9)]:
        s1 = _one(cfg_marginal_score(gaussian, 0.0, w, np.array([1.0]), sigma))
        s2 = _one(cfg_marginal_score(gaussian, 0.0, w, np.array([-1.0]), sigma))
        slope = (s1 - s2) / 2.0
        v = gaussian_theory.guided_marginal_variance(1.0, w, sigma)
        assert abs(slope + 1.0 / v) < 1e-12


def test_divergence_gradient_recomposes_tilted_score(bimodal, gaussian, class_mixture):
    rng = np.random.default_rng(8)
    for tgt, c in ((bimodal, 1.0), (gaussian, 0.5), (class_mixture, 1)):
        x = rng.uniform(-1.5, 1.5, size=(6, 1))
        for w, sigma in [(1.5, 0.3), (3.0, 1.0)]:
            grad = renyi_gradient(tgt, c, w, x, sigma)
            recomposed = cfg_marginal_score(tgt, c, w, x, sigma) + (w - 1.0) * grad
            tilted = tilted_smoothed_score(tgt, c, w, x, sigma)
            assert np.max(np.abs(recomposed - tilted)) < 1e-13


def test_divergence_gradient_quadratic_decay(bimodal):
    sigmas = np.logspace(-3, -1, 9)
    norms = [
        abs(_one(renyi_gradient(bimodal, 1.0, 2.5, np.array([0.3]), s))) for s in sigmas
    ]
    slope = np.polyfit(np.log(sigmas), np.log(norms), 1)[0]
    assert abs(slope - 2.0) < 0.2


def test_divergence_gradient_vanishes_with_noise(bimodal):
    hi = abs(_one(renyi_gradient(bimodal, 1.0, 2.5, np.array([0.7]), 1e-1)))
    lo = abs(_one(renyi_gradient(bimodal, 1.0, 2.5, np.array([0.7]), 1e-3)))
    assert lo / hi < 1e-3


def test_divergence_gradient_needs_w_above_one(bimodal):
    for w in (1.0, 0.5, -2.0):
        with pytest.raises(ValueError):
            renyi_gradient(bimodal, 1.0, w, np.array([0.3]), 0.5)
    near = renyi_gradient(bimodal, 1.0, 1.0 + 1e-6, np.array([0.3]), 0.5)
    assert np.all(np.isfinite(near))


# ---------------------------------------------------------------------------
# reference draws


def test_reference_draws_exact_route_moments(gaussian):
    ref = sample_reference(gaussian, 3.0, 2.0, 1_000_000, 12345)
    assert ref.method == "exact"
    assert ref.ess == 1_000_000.0
    assert not ref.low_ess
    se = np.sqrt((1.0 / 3.0) / 1_000_000)
    assert abs(ref.points.mean() - 2.0) < 3.0 * se


def test_reference_draws_unit_weight_distribution(gaussian):
    ref = sample_reference(gaussian, 3.0, 1.0, 20_000, 5)
    rng = np.random.default_rng(6)
    direct = conditional_gmm(gaussian, 3.0).sample(20_000, rng)
    assert ks_2samp(ref.points[:, 0], direct[:, 0]).pvalue > 0.01


def test_reference_draws_bimodal_minor_mass(bimodal):
    tilt = tilted_gmm(bimodal, 1.0, 4.0)
    boundary = 0.5 * float(tilt.means.sum())
    mass = float(
        np.sum(
            tilt.weights
            * norm.cdf(
                boundary, loc=tilt.means[:, 0], scale=np.sqrt(tilt.covariances[:, 0, 0])
            )
        )
    )
    ref = sample_reference(bimodal, 1.0, 4.0, 100_000, 77)
    got = float(np.mean(ref.points[:, 0] < boundary))
    assert ref.method == "exact"
    assert abs(got - mass) < 0.01


def test_reference_draws_importance_route(class_mixture):
    ref = sample_reference(class_mixture, 1, 2.0, 50_000, 7)
    assert ref.method == "snis"
    assert ref.points.shape == (50_000, 1)
    assert 0.9 * 50_000 < ref.ess <= 50_000
    assert not ref.low_ess
    with pytest.raises(ValueError):
        sample_reference(class_mixture, 1, 2.0, 0, 7)


def test_reference_importance_route_matches_quadrature_mean(class_mixture):
    """SNIS draws against the quadrature posterior mean of the tilted target."""

    def dens(pts):
        return np.exp(tilted_log_density_unnormalized(class_mixture, 1, 2.0, pts))

    z, m1 = quadrature.smoothing_moments(dens, np.array([0.0]), 25.0, [(-9.0, 9.0)])
    # sigma large enough that the kernel is flat over the support: the ratio
    # recovers the plain (unsmoothed) mean of the tilted density.
    ref = sample_reference(class_mixture, 1, 2.0, 200_000, 31)
    sd = float(np.std(ref.points))
    assert abs(ref.points.mean() - float(m1[0]) / z) < 5.0 * sd / np.sqrt(ref.ess)


# ---------------------------------------------------------------------------
# construction validation


def test_mixture_validation():
    one = np.ones((1, 1, 1))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([]), np.zeros((0, 1)), np.zeros((0, 1, 1)))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([0.3, 0.3]), np.zeros((2, 1)), np.ones((2, 1, 1)))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([-0.5, 1.5]), np.zeros((2, 1)), np.ones((2, 1, 1)))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros(1), one)
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 4)), np.stack([np.eye(4)]))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.zeros((1, 2, 2)))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.array([[[1.0, 0.5], [0.0, 1.0]]]))
    with pytest.raises(ConfigError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), -one)


def test_classifier_validation():
    with pytest.raises(ConfigError):
        LinearGaussianClassifier(np.zeros(2), 1.0)
    with pytest.raises(ConfigError):
        LinearGaussianClassifier(np.array([[np.inf]]), 1.0)
    with pytest.raises(ConfigError):
        LinearGaussianClassifier(np.eye(1), 0.0)
    with pytest.raises(ConfigError):
        LinearGaussianClassifier(np.eye(1), -1.0)
    g1 = GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ConfigError):
        ClassMixtureClassifier(np.array([1.0]), (g1,))
    with pytest.raises(ConfigError):
        ClassMixtureClassifier(np.array([0.7, 0.7]), (g1, g1))
    g2 = GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.eye(2)[None])
    with pytest.raises(ConfigError):
        ClassMixtureClassifier(np.array([0.5, 0.5]), (g1, g2))


def test_target_validation(bimodal):
    with pytest.raises(ConfigError):
        AnalyticTarget(bimodal.prior, LinearGaussianClassifier(np.eye(2), 1.0))
    g1 = GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
    shifted = GaussianMixture(np.array([1.0]), np.ones((1, 1)), np.ones((1, 1, 1)))
    broken = ClassMixtureClassifier(np.array([0.5, 0.5]), (g1, shifted))
    with pytest.raises(ConfigError):
        AnalyticTarget(g1, broken)


def test_context_shape_validation(bimodal):
    with pytest.raises(ValueError):
        conditional_gmm(bimodal, np.array([1.0, 2.0]))


def test_support_box_covers_components(bimodal):
    lo, hi = support_box(bimodal.prior, sigma=0.0, half_width=12.0)
    assert float(lo[0]) == -1.0 - 12.0 * 0.3
    assert float(hi[0]) == 1.0 + 12.0 * 0.3
    lo2, hi2 = support_box(bimodal.prior, sigma=0.4)
    assert float(lo2[0]) < float(lo[0]) and float(hi2[0]) > float(hi[0])


def test_target_from_config_round_trip(class_mixture):
    node = {
        "prior": {
            "weights": [0.6, 0.4],
            "means": [[-1.0], [1.5]],
            "covariances": [[[0.25]], [[0.49]]],
        },
        "classifier": {
            "kind": "class_mixture",
            "class_priors": [0.6, 0.4],
            "class_conditionals": [
                {"weights": [1.0], "means": [[-1.0]], "covariances": [[[0.25]]]},
                {"weights": [1.0], "means": [[1.5]], "covariances": [[[0.49]]]},
            ],
        },
    }
    tgt = target_from_config(node)
    np.testing.assert_array_equal(tgt.prior.means, class_mixture.prior.means)
    with pytest.raises(ConfigError):
        target_from_config({"prior": node["prior"]})
    with pytest.raises(ConfigError):
        target_from_config({"prior": node["prior"], "classifier": {"kind": "nope"}})
    with pytest.raises(ConfigError):
        target_from_config(
            {"prior": node["prior"], "classifier": {"kind": "linear_gaussian"}}
        )
