import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compest.zones import (
    DomainError,
    SmoothnessPair,
    classify,
    noise_scale,
    phi,
    psi,
    rate_branch,
    rate_info,
    zone_predicates,
)


@pytest.mark.parametrize(
    "gamma, beta, zone",
    [(0.5, 1.5, "P1"), (1.3, 2.0, "P2"), (1.5, 1.8, "P3"), (0.7, 0.9, "P4"), (1.8, 1.2, "P4"), (1.0, 2.0, "P1")],
)
def test_classify_examples(gamma, beta, zone):
    assert classify(SmoothnessPair(gamma, beta)) == zone


def test_classify_boundaries_follow_inequalities():
    # beta = d(gamma - 1) + 1 lies in P2 (non-strict), just below it in P3
    assert classify(SmoothnessPair(1.5, 2.0)) == "P2"
    assert classify(SmoothnessPair(1.5, 1.999)) == "P3"
    # gamma = beta > 1 stays out of P4; beta < gamma falls into P4
    assert classify(SmoothnessPair(1.2, 1.2)) == "P3"
    assert classify(SmoothnessPair(1.2, 1.19)) == "P4"
    # beta = 1 with gamma <= 1 is in the unit square
    assert classify(SmoothnessPair(1.0, 1.0)) == "P4"


def test_classify_rejects_outside_square():
    with pytest.raises(DomainError):
        classify(SmoothnessPair(2.5, 1.0))


def test_pair_validation():
    with pytest.raises(DomainError):
        SmoothnessPair(0.0, 1.0)
    with pytest.raises(DomainError):
        SmoothnessPair(1.0, 1.0, dim=1)


@pytest.mark.parametrize(
    "gamma, beta, exponent, branch",
    [(1, 2, 4 / 7, 1), (0.5, 0.5, 0.2, 3), (2, 1.5, 0.6, 2)],
)
def test_rate_examples(gamma, beta, exponent, branch):
    info = rate_info(SmoothnessPair(gamma, beta))
    assert info.exponent == pytest.approx(exponent, rel=1e-14)
    assert info.branch == branch == rate_branch(SmoothnessPair(gamma, beta))


def test_effective_smoothness_and_rho():
    assert rate_info(SmoothnessPair(0.5, 0.5)).effective_smoothness == 0.25
    assert rate_info(SmoothnessPair(1.5, 1.8)).effective_smoothness == 1.5
    assert SmoothnessPair(1.5, 2.0, 3).rho == pytest.approx(2 * 0.5 / 2.0)


def test_phi_examples():
    A = SmoothnessPair(1, 2)
    assert phi(0.01, A) == pytest.approx(0.1113375, rel=1e-6)
    e0 = rate_info(A).exponent
    assert phi(math.exp(-1), A) == pytest.approx(math.exp(-e0), rel=1e-14)
    with pytest.raises(DomainError):
        phi(1.0, A)
    with pytest.raises(DomainError):
        noise_scale(0.0)


def test_phi_monotone_for_small_eps():
    A = SmoothnessPair(1.3, 2.0)
    eps = np.geomspace(1e-8, 0.5, 60)
    vals = [phi(e, A) for e in eps]
    assert np.all(np.diff(vals) > 0)


def test_improved_rate_ratio_decreases():
    for A in (SmoothnessPair(1.0, 2.0), SmoothnessPair(1.3, 2.0), SmoothnessPair(0.5, 1.5)):
        alpha = rate_info(A).effective_smoothness
        ratios = [phi(10.0**-k, A) / psi(10.0**-k, alpha, A.dim) for k in range(2, 9)]
        assert np.all(np.diff(ratios) < 0)


@given(st.floats(1.0, 2.0), st.floats(1.0, 2.0), st.integers(2, 5))
def test_rough_inner_rate_is_isotropic(gamma, beta, d):
    if not beta < gamma:
        return
    A = SmoothnessPair(gamma, beta, d)
    assert rate_info(A).exponent == pytest.approx(2 * beta / (2 * beta + d), rel=1e-12)


@settings(max_examples=300)
@given(st.floats(1e-3, 50.0), st.floats(1e-3, 50.0), st.integers(2, 6))
def test_rate_total_on_positive_quadrant(gamma, beta, d):
    info = rate_info(SmoothnessPair(gamma, beta, d))
    assert 0 < info.exponent < 1
    if gamma >= 1:
        assert info.rho >= 0


def test_zone_predicates_partition_grid():
    grid = np.round(np.arange(1, 201) * 0.01, 2)
    for g in grid[::7]:
        for b in grid[::7]:
            preds = zone_predicates(SmoothnessPair(float(g), float(b)))
            assert sum(preds.values()) == 1
