"""Shared fixtures: the three analytic targets used across the test suite."""

import numpy as np
import pytest

from guidance_lab.targets import (
    AnalyticTarget,
    ClassMixtureClassifier,
    GaussianMixture,
    canonical_bimodal_target,
    standard_gaussian_target,
)


@pytest.fixture(scope="session")
def gaussian():
    """Scalar unit-Gaussian prior with identity observation, gamma = 1."""
    return standard_gaussian_target(1.0)


@pytest.fixture(scope="session")
def bimodal():
    """The 1-d two-mode benchmark target."""
    return canonical_bimodal_target()


@pytest.fixture(scope="session")
def class_mixture():
    """A two-class label classifier whose class mixture reproduces the prior."""
    prior = GaussianMixture(
        np.array([0.6, 0.4]),
        np.array([[-1.0], [1.5]]),
        np.array([[[0.25]], [[0.49]]]),
    )
    classifier = ClassMixtureClassifier(
        np.array([0.6, 0.4]),
        (
            GaussianMixture(np.array([1.0]), np.array([[-1.0]]), np.array([[[0.25]]])),
            GaussianMixture(np.array([1.0]), np.array([[1.5]]), np.array([[[0.49]]])),
        ),
    )
    return AnalyticTarget(prior, classifier)
