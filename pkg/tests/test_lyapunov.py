from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from striplab.errors import ConfigurationError
from striplab.lyapunov import (
    LagrangianFrame,
    binomial_stderr,
    estimate_restricted,
    estimate_spectrum,
    fit_exponential_tail,
    gamma_profile,
    ldp_tail,
    non_increasing,
    random_lagrangian,
    reference_gamma,
    svd_alignment,
)
from striplab.model import (
    HoppingDist,
    PotentialDist,
    Uniform,
    anderson_strip,
    block_anderson,
    random_hopping,
    wegner_orbital,
)
from striplab.transfer import symplectic_form

FREE = anderson_strip(1, Uniform(0, 0))
FREE_GAMMA_E3 = np.log((3 + np.sqrt(5)) / 2)  # log spectral radius of [[3, -1], [1, 0]]

CATALOGUE = [
    anderson_strip(1, Uniform(-1, 1)),
    anderson_strip(2, Uniform(-2, 2)),
    block_anderson(2, PotentialDist("goe", scale=1.0)),
    wegner_orbital(2, coupling=1.0),
    random_hopping(2, HoppingDist("identity_plus_perturbation", delta=0.3), PotentialDist("goe", scale=1.0)),
]


def test_free_chain_exponent():
    est = estimate_spectrum(FREE, 3.0, 2000, replicas=1)
    assert est.exponents[0] == pytest.approx(FREE_GAMMA_E3, abs=1e-6)
    assert est.exponents[1] == pytest.approx(-FREE_GAMMA_E3, abs=1e-6)


def test_free_chain_oracle_by_eigenvalues():
    # independent oracle: log |eigenvalues| of the constant transfer matrix
    ev = np.sort(np.log(np.abs(np.linalg.eigvals(np.array([[3.0, -1.0], [1.0, 0.0]])))))[::-1]
    est = estimate_spectrum(FREE, 3.0, 500, replicas=1)
    np.testing.assert_allclose(est.exponents, ev, atol=1e-6)


@pytest.mark.parametrize("spec", CATALOGUE, ids=lambda s: f"{s.family.value}-W{s.width}")
def test_spectrum_symmetry(spec):
    est = estimate_spectrum(spec, 0.3, 2000, replicas=16, seed=7)
    g, se = est.exponents, est.stderr
    assert np.all(np.diff(g) <= 0)
    for j in range(len(g)):
        assert abs(g[j] + g[-1 - j]) <= 3 * (se[j] + se[-1 - j]) + 1e-12


@pytest.mark.parametrize("spec", CATALOGUE[:3], ids=lambda s: f"{s.family.value}-W{s.width}")
def test_determinant_bookkeeping(spec):
    est = estimate_spectrum(spec, -0.4, 1000, replicas=4, seed=3)
    np.testing.assert_allclose(est.per_replica.sum(axis=1), est.log_det, atol=1e-8)
    np.testing.assert_allclose(est.log_det, 0.0, atol=1e-8)


def test_reorthogonalisation_period_does_not_bias():
    spec = anderson_strip(2, Uniform(-2, 2))
    a = estimate_spectrum(spec, 0.0, 2000, replicas=16, reorth_period=1, seed=5)
    b = estimate_spectrum(spec, 0.0, 2000, replicas=16, reorth_period=10, seed=5)
    assert np.all(np.abs(a.exponents - b.exponents) <= 3 * (a.stderr + b.stderr) + 1e-12)


def test_default_burn_in_and_record():
    est = estimate_spectrum(anderson_strip(1, Uniform(-1, 1)), 0.0, 500, replicas=2, seed=1)
    assert est.burn_in == 50
    rec = est.to_record()
    assert rec["kind"] == "lyapunov" and rec["N"] == 500 and len(rec["exponents"]) == 2


@pytest.mark.slow
@pytest.mark.parametrize("W", [2, 3])
@pytest.mark.parametrize("E", [0.0, 0.7])
def test_simplicity_margin(W, E):
    est = estimate_spectrum(anderson_strip(W, Uniform(-1, 1)), E, 10_000, replicas=32, seed=11)
    g, se = est.exponents, est.stderr
    assert g[W - 1] > 3 * se[W - 1]
    for j in range(W - 1):
        assert g[j] - g[j + 1] > 3 * np.hypot(se[j], se[j + 1])


def test_invalid_spectrum_arguments():
    with pytest.raises(ConfigurationError):
        estimate_spectrum(FREE, 0.0, 5, reorth_period=10)
    with pytest.raises(ConfigurationError):
        estimate_spectrum(FREE, 0.0, 10, replicas=0)


def test_restricted_free_chain():
    est = estimate_restricted(FREE, 3.0, 3000, LagrangianFrame.plus(1))
    assert est.values[0] == pytest.approx(FREE_GAMMA_E3, abs=1e-4)


def test_restricted_length_zero_is_exactly_zero():
    est = estimate_restricted(anderson_strip(2, Uniform(-1, 1)), 0.0, 0, random_lagrangian(2, 0), replicas=3)
    np.testing.assert_array_equal(est.values, [0.0, 0.0])


def test_restricted_matches_full_spectrum():
    spec = anderson_strip(2, Uniform(-2, 2))
    full = estimate_spectrum(spec, 0.0, 4000, replicas=16, seed=2, burn_in=0)
    res = estimate_restricted(spec, 0.0, 4000, random_lagrangian(2, 9), replicas=16, seed=2)
    assert res.dropped == 0
    assert np.all(np.abs(res.values - full.exponents[:2]) <= 3 * (res.stderr + full.stderr[:2]))


def test_restricted_frame_width_checked():
    with pytest.raises(ConfigurationError):
        estimate_restricted(anderson_strip(2, Uniform(-1, 1)), 0.0, 10, LagrangianFrame.plus(1))


def test_random_lagrangian_invariants():
    for W in (1, 2, 3, 4):
        J = symplectic_form(W)
        for seed in range(250):
            B = random_lagrangian(W, seed).basis
            assert np.abs(B.T @ B - np.eye(W)).max() <= 1e-12
            assert np.linalg.norm(B.T @ J @ B) <= 1e-10


def test_random_lagrangian_w1_is_uniform_direction():
    angles = np.array([np.arctan2(*random_lagrangian(1, s).basis[::-1, 0]) % np.pi for s in range(4000)])
    hist, _ = np.histogram(angles, bins=8, range=(0, np.pi))
    expected = len(angles) / 8
    assert np.all(np.abs(hist - expected) <= 5 * np.sqrt(expected))


def test_frame_validation():
    with pytest.raises(ConfigurationError):
        LagrangianFrame(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]).T[:, :1].repeat(2, axis=1))
    # span{e1, e3} is not isotropic for W = 2
    with pytest.raises(ConfigurationError):
        LagrangianFrame(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_graph_frames_are_lagrangian(vals):
    a, b, c = vals
    F = LagrangianFrame.from_symmetric(np.array([[a, b], [b, c]]))
    assert np.linalg.norm(F.basis.T @ symplectic_form(2) @ F.basis) <= 1e-10


def test_alignment_at_length_zero():
    spec = anderson_strip(2, Uniform(-1, 1))
    assert svd_alignment(spec, 0.0, 0, LagrangianFrame.plus(2)).s_min == pytest.approx(1.0, abs=1e-14)
    assert svd_alignment(spec, 0.0, 0, LagrangianFrame.minus(2)).s_min == pytest.approx(0.0, abs=1e-14)


def test_alignment_rate_is_typically_small():
    spec = anderson_strip(2, Uniform(-1, 1))
    rates = [svd_alignment(spec, 0.0, 100, random_lagrangian(2, s), seed=s).log_rate for s in range(20)]
    assert np.median(rates) >= -0.05


def test_alignment_stabilised_branch_agrees_with_direct():
    spec = anderson_strip(2, Uniform(-1, 1))
    F = random_lagrangian(2, 4)
    # the QR iteration converges like exp(-2 gamma_W N); N = 200 is past the transient
    a = svd_alignment(spec, 0.0, 200, F, seed=4)
    b = svd_alignment(spec, 0.0, 200, F, seed=4, direct_max=10)
    assert (a.method, b.method) == ("direct", "stabilised")
    assert b.s_min == pytest.approx(a.s_min, rel=1e-6)


def test_tail_of_deterministic_ensemble_vanishes():
    # the deterministic deviation is O(1/N); past N ~ 250 it is below epsilon
    t = ldp_tail(FREE, 3.0, 1e-3, [50, 100, 300, 600], 200, gamma_ref=FREE_GAMMA_E3)
    np.testing.assert_array_equal(t.tail_prob, [1.0, 1.0, 0.0, 0.0])
    late = ldp_tail(FREE, 3.0, 1e-3, [300, 600], 200, gamma_ref=FREE_GAMMA_E3)
    assert late.rate_is_bound and late.rate_lower_bound > 0


def test_tail_probabilities_and_rates():
    spec = anderson_strip(1, Uniform(-1, 1))
    g = reference_gamma(spec, 0.0)[0]
    small = ldp_tail(spec, 0.0, 0.5 * g, [50, 100, 200, 400], 10_000, seed=1, gamma_ref=g)
    large = ldp_tail(spec, 0.0, 1.0 * g, [50, 100, 200, 400], 10_000, seed=1, gamma_ref=g)
    for t in (small, large):
        assert np.all((t.tail_prob >= 0) & (t.tail_prob <= 1))
        assert t.monotone and not t.rate_is_bound
    assert large.rate >= small.rate


def test_tail_helpers():
    assert binomial_stderr(0.5, 100) == pytest.approx(0.05)
    assert non_increasing([0.5, 0.52, 0.1], [0.02, 0.02, 0.01])
    assert not non_increasing([0.1, 0.5], [0.01, 0.01])
    rate, ci, _, bound, _ = fit_exponential_tail([10, 20, 30], [1000, 368, 135], 1000)
    assert rate == pytest.approx(0.1, abs=2e-3) and ci[0] <= rate <= ci[1] and not bound
    with pytest.raises(ConfigurationError):
        ldp_tail(FREE, 0.0, 0.1, [100, 50], 10, gamma_ref=0.0)


def test_reference_gamma_is_cached():
    spec = anderson_strip(1, Uniform(-1.5, 1.5))
    a = reference_gamma(spec, 0.2, N=500, replicas=4)
    b = reference_gamma(spec, 0.2, N=500, replicas=4)
    assert a is b


def test_gamma_profile_resolution():
    spec = anderson_strip(1, Uniform(-1, 1))
    tau = 0.004
    prof = gamma_profile(spec, -0.5, 0.5, tau=tau, N=1000, replicas=4, seed=0)
    vals = np.array([prof(e) for e in prof.energies])
    assert np.all(np.abs(np.diff(vals)) < tau / 4) or len(prof.energies) == 65
    assert prof.inf(-0.5, 0.5) == pytest.approx(vals.min())
