from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from striplab.errors import ConfigurationError, InsufficientRangeError
from striplab.localization import (
    CORRELATOR_SURROGATE,
    correlator,
    correlator_sup,
    decay_fit,
    eigenpairs,
    eigensystem,
    fractional_moment_probe,
)
from striplab.model import (
    HoppingDist,
    PotentialDist,
    Uniform,
    Window,
    anderson_strip,
    assemble_finite_operator,
    random_hopping,
    sample_realization,
)

FREE = anderson_strip(1, Uniform(0, 0))


def _operator(spec, box, seed=0):
    return assemble_finite_operator(sample_realization(spec, box, seed), box)


def _random_operator(W, n, seed):
    spec = random_hopping(W, HoppingDist("identity_plus_perturbation", delta=0.5), PotentialDist("goe", scale=1.0))
    return _operator(spec, Window(0, n - 1), seed)


# --------------------------------------------------------------------------
# eigenpairs


def test_single_site_pair():
    pairs = eigenpairs(_operator(anderson_strip(1, Uniform(3, 3)), Window(0, 0)))
    assert len(pairs) == 1
    assert pairs[0].energy == 3.0 and abs(pairs[0].vector[0, 0]) == 1.0


def test_two_site_eigenvalues():
    pairs = eigenpairs(_operator(FREE, Window(0, 1)))
    np.testing.assert_allclose([p.energy for p in pairs], [-1.0, 1.0], atol=1e-14)


@pytest.mark.parametrize("W", [1, 2, 3])
def test_eigenpair_invariants_and_completeness(W):
    H = _random_operator(W, 15, W)
    pairs = eigenpairs(H)
    M = H.toarray()
    hn = np.linalg.norm(M, 2)
    energies = [p.energy for p in pairs]
    assert energies == sorted(energies)
    total = np.zeros((H.dim, H.dim))
    for p in pairs:
        v = p.vector.reshape(-1)
        assert abs(np.linalg.norm(v) - 1) <= 1e-10
        assert np.linalg.norm(M @ v - p.energy * v) <= 1e-8 * hn
        total += np.outer(v, v)
    np.testing.assert_allclose(total, np.eye(H.dim), atol=1e-8)


def test_block_accessor_uses_absolute_sites():
    box = Window(5, 10)
    H = assemble_finite_operator(sample_realization(anderson_strip(2, Uniform(-1, 1)), box, 0), box)
    p = eigenpairs(H)[0]
    np.testing.assert_array_equal(p.block(5), p.vector[0])


# --------------------------------------------------------------------------
# decay fits


def _synthetic(rate, n=201, noise=0.0, seed=0):
    x = np.arange(n) - n // 2
    prof = np.exp(-rate * np.abs(x))
    if noise:
        prof = prof * (1 + noise * np.random.default_rng(seed).standard_normal(n))
    return prof


def test_exact_exponential_profile():
    fit = decay_fit(_synthetic(0.3))
    assert fit.left_slope == pytest.approx(-0.3, abs=1e-6)
    assert fit.right_slope == pytest.approx(-0.3, abs=1e-6)
    assert fit.decay_rate == pytest.approx(0.3, abs=1e-6)
    assert not fit.edge_state


def test_exact_profile_as_eigenpair_vector():
    from striplab.localization import EigenPair

    v = np.array([0.6, 0.8])
    prof = _synthetic(0.3)
    vec = prof[:, None] * v[None, :]
    vec /= np.linalg.norm(vec)
    fit = decay_fit(EigenPair(0.0, vec, Window(-100, 100)))
    assert fit.peak_site == 0
    assert fit.left_slope == pytest.approx(-0.3, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_noisy_profile(seed):
    fit = decay_fit(_synthetic(0.3, noise=0.01, seed=seed))
    assert abs(fit.left_slope + 0.3) <= 0.01 and abs(fit.right_slope + 0.3) <= 0.01


def test_edge_state_flagged():
    prof = np.exp(-0.3 * np.abs(np.arange(120) - 30))
    fit = decay_fit(prof, edge_margin=40)
    assert fit.edge_state


def test_insufficient_range():
    with pytest.raises(InsufficientRangeError):
        decay_fit(_synthetic(0.3, n=31))


def test_underflowed_sites_are_dropped():
    prof = _synthetic(0.3, n=401)
    prof[:20] = 0.0
    fit = decay_fit(prof)
    assert np.isfinite(fit.left_slope)
    assert fit.fit_range[0][1] <= 180


# --------------------------------------------------------------------------
# correlator


def test_correlator_off_spectrum_is_zero():
    H = _operator(anderson_strip(1, Uniform(-1, 1)), Window(0, 30))
    c = correlator(H, (5.0, 6.0), 3, 10)
    assert c.value == 0.0 and c.surrogate == CORRELATOR_SURROGATE


def test_correlator_diagonal_completeness_w1():
    H = _operator(anderson_strip(1, Uniform(-1, 1)), Window(0, 30))
    assert correlator(H, (-10, 10), 7, 7).value == pytest.approx(1.0, abs=1e-12)


def test_correlator_matches_hand_sum_w1():
    H = _operator(anderson_strip(1, Uniform(-1, 1)), Window(0, 20), 4)
    lam, vec = np.linalg.eigh(H.toarray())
    sel = (lam >= -0.5) & (lam <= 0.5)
    ref = np.sum(np.abs(vec[3, sel] * vec[11, sel]))
    assert correlator(H, (-0.5, 0.5), 3, 11).value == pytest.approx(ref, rel=1e-12)


@given(seed=st.integers(0, 5000), W=st.integers(1, 3), x=st.integers(0, 19), y=st.integers(0, 19),
       a=st.floats(-3, 3), b=st.floats(0, 3), c=st.floats(0, 3))
@settings(max_examples=40, deadline=None)
def test_correlator_bound_and_monotone(seed, W, x, y, a, b, c):
    H = _random_operator(W, 20, seed)
    eig = eigensystem(H)
    inner = correlator(H, (a, a + b), x, y, eigen=eig).value
    outer = correlator(H, (a - c, a + b + c), x, y, eigen=eig).value
    full = correlator(H, (-1e3, 1e3), x, y, eigen=eig).value
    assert 0 <= inner <= outer + 1e-10
    assert outer <= full + 1e-10
    assert full <= W + 1e-6


def test_correlator_sup_family():
    spec = anderson_strip(1, Uniform(-1, 1))
    single = correlator_sup(spec, (-0.5, 0.5), 2, 6, [Window(0, 10)], seed=3)
    H = _operator(spec, Window(0, 10), 3)
    assert single.sup_over_boxes == pytest.approx(correlator(H, (-0.5, 0.5), 2, 6).value, rel=1e-14)
    nested = [Window(-k, 10 + k) for k in range(5)]
    many = correlator_sup(spec, (-0.5, 0.5), 2, 6, nested, seed=3)
    members = [correlator(_operator(spec, b, 3), (-0.5, 0.5), 2, 6).value for b in nested]
    assert many.sup_over_boxes == pytest.approx(max(members), rel=1e-14)
    assert many.sup_over_boxes >= many.value
    assert len(many.box_family) == 5


def test_correlator_sup_free_off_spectrum():
    nested = [Window(-k, 10 + k) for k in range(5)]
    est = correlator_sup(FREE, (3.0, 4.0), 2, 6, nested, seed=0)
    assert est.sup_over_boxes == 0.0


def test_correlator_sup_validation():
    spec = anderson_strip(1, Uniform(-1, 1))
    with pytest.raises(ConfigurationError):
        correlator_sup(spec, (-0.5, 0.5), 2, 6, [], seed=0)
    with pytest.raises(ConfigurationError):
        correlator_sup(spec, (-0.5, 0.5), 2, 16, [Window(0, 10)], seed=0)


# --------------------------------------------------------------------------
# fractional moments


def test_fractional_moment_single_site_closed_form():
    # (eps/2) * int_2^4 |3 - E|^(eps - 1) dE = (eps/2) * 2 / eps = 1
    H = _operator(anderson_strip(1, Uniform(3, 3)), Window(0, 0))
    res = fractional_moment_probe(H, (2.0, 4.0), 0, 0)
    np.testing.assert_allclose(res.values, 1.0, atol=1e-4)


def test_fractional_moment_closed_form_asymmetric_interval():
    # (eps/2) * ((1^eps + 0.5^eps) / eps)
    H = _operator(anderson_strip(1, Uniform(3, 3)), Window(0, 0))
    eps = np.array([0.2, 0.1, 0.05, 0.02])
    res = fractional_moment_probe(H, (2.0, 3.5), 0, 0, epsilons=tuple(eps))
    np.testing.assert_allclose(res.values, 0.5 * (1 + 0.5**eps), atol=1e-4)


def test_fractional_moment_off_spectrum_vanishes():
    H = _operator(anderson_strip(1, Uniform(-1, 1)), Window(0, 10))
    res = fractional_moment_probe(H, (5.0, 6.0), 2, 5)
    assert np.all(np.diff(res.values) < 0) and res.values[-1] < 0.02


def test_fractional_moment_bound_on_random_instances():
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            W = int(rng.integers(1, 4))
            H = _random_operator(W, 12, seed)
            x, y = (int(v) for v in rng.integers(0, 12, size=2))
            res = fractional_moment_probe(H, (-1.0, 1.0), x, y)
            worst = max(worst, float(np.max(res.values)) / W)
            # directional upper-bound relation at the smallest epsilon
            assert res.values[-1] >= res.correlator_value - 0.05 * W
    assert worst <= 1.001


def test_fractional_moment_validation():
    H = _operator(anderson_strip(1, Uniform(-1, 1)), Window(0, 5))
    with pytest.raises(ConfigurationError):
        fractional_moment_probe(H, (-1, 1), 0, 1, epsilons=(0.0,))
    with pytest.raises(ConfigurationError):
        fractional_moment_probe(H, (-1, 1), 0, 1, epsilons=(1.0,))
