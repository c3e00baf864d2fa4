"""Noise-schedule construction: grid values, warp property, validation."""

import json

import mpmath
import numpy as np
import pytest

from guidance_lab.errors import ConfigError
from guidance_lab.schedule import (
    NoiseSchedule,
    karras_sigmas,
    refinement_sigmas,
    schedule_from_levels,
)


def _mpmath_levels(sigma_min, sigma_max, num_levels, rho):
    """Re-derive the warped grid at 50 decimal digits."""
    with mpmath.workdps(50):
        smin = mpmath.mpf(repr(sigma_min))
        smax = mpmath.mpf(repr(sigma_max))
        r = mpmath.mpf(repr(rho))
        top = smax ** (1 / r)
        bot = smin ** (1 / r)
        out = []
        for i in range(num_levels):
            t = mpmath.mpf(i) / (num_levels - 1)
            out.append(float((top + t * (bot - top)) ** r))
        out[0] = sigma_max
        out[-1] = sigma_min
        return np.array(out)


@pytest.mark.parametrize(
    "sigma_min,sigma_max,levels,rho",
    [
        (0.002, 80.0, 64, 7.0),
        (0.05, 10.0, 18, 7.0),
        (1e-3, 1.0, 33, 3.0),
        (0.01, 5.0, 7, 1.5),
    ],
)
def test_grid_matches_extended_precision(sigma_min, sigma_max, levels, rho):
    got = karras_sigmas(sigma_min, sigma_max, levels, rho).sigmas
    want = _mpmath_levels(sigma_min, sigma_max, levels, rho)
    rel = np.max(np.abs(got - want) / want)
    assert rel < 1e-12


def test_rho_one_is_linear():
    sched = karras_sigmas(1.0, 4.0, 4, rho=1.0)
    np.testing.assert_array_equal(sched.sigmas, [4.0, 3.0, 2.0, 1.0])


def test_endpoints_exact():
    sched = karras_sigmas(0.002, 80.0, 64, 7.0)
    assert sched.sigmas[0] == 80.0
    assert sched.sigmas[-1] == 0.002
    assert sched.sigma_max == 80.0
    assert sched.sigma_min == 0.002


def test_warped_levels_affine_in_index():
    rho = 7.0
    sched = karras_sigmas(0.002, 80.0, 40, rho)
    warped = sched.sigmas ** (1.0 / rho)
    diffs = np.diff(warped)
    assert np.max(np.abs(diffs - diffs[0])) < 1e-10


def test_two_level_grid():
    sched = karras_sigmas(0.002, 2.0, 2, 7.0)
    np.testing.assert_array_equal(sched.sigmas, [2.0, 0.002])


def test_refinement_grid_reenters_at_sigma_start():
    ref = refinement_sigmas(0.5, 12, 0.002, 7.0)
    direct = karras_sigmas(0.002, 0.5, 12, 7.0)
    np.testing.assert_array_equal(ref.sigmas, direct.sigmas)
    assert ref.sigma_max == 0.5


def test_json_round_trip():
    sched = karras_sigmas(0.01, 5.0, 9, 7.0)
    levels = json.loads(sched.to_json())
    rebuilt = schedule_from_levels(levels)
    np.testing.assert_array_equal(rebuilt.sigmas, sched.sigmas)


def test_transitions_walk_consecutive_pairs():
    sched = karras_sigmas(1.0, 4.0, 4, rho=1.0)
    pairs = list(sched.transitions())
    assert pairs == [(4.0, 3.0), (3.0, 2.0), (2.0, 1.0)]
    assert len(sched) == 4


def test_validation_rejects_degenerate_grids():
    with pytest.raises(ConfigError):
        karras_sigmas(0.1, 1.0, 1, 7.0)
    with pytest.raises(ConfigError):
        karras_sigmas(1.0, 1.0, 8, 7.0)
    with pytest.raises(ConfigError):
        karras_sigmas(2.0, 1.0, 8, 7.0)
    with pytest.raises(ConfigError):
        karras_sigmas(0.0, 1.0, 8, 7.0)
    with pytest.raises(ConfigError):
        karras_sigmas(-0.5, 1.0, 8, 7.0)
    with pytest.raises(ConfigError):
        karras_sigmas(0.1, 1.0, 8, 0.0)
    with pytest.raises(ConfigError):
        karras_sigmas(0.1, 1.0, 8, -2.0)


def test_explicit_levels_must_decrease():
    with pytest.raises(ConfigError):
        schedule_from_levels([1.0, 1.0, 0.5])
    with pytest.raises(ConfigError):
        schedule_from_levels([0.5, 1.0])
    with pytest.raises(ConfigError):
        schedule_from_levels([1.0, 0.5, 0.0])
    with pytest.raises(ConfigError):
        schedule_from_levels([1.0, np.nan])
    with pytest.raises(ConfigError):
        schedule_from_levels([2.0])


def test_grid_is_immutable():
    sched = karras_sigmas(0.1, 1.0, 8, 7.0)
    with pytest.raises(ValueError):
        sched.sigmas[0] = 99.0


def test_grid_never_contains_zero_and_decreases():
    for rho in (1.0, 3.0, 7.0):
        sched = karras_sigmas(1e-4, 50.0, 77, rho)
        assert np.all(sched.sigmas > 0.0)
        assert np.all(np.diff(sched.sigmas) < 0.0)


def test_direct_construction_validates_shape():
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([[1.0, 0.5]]))
