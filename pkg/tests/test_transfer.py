from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from striplab.errors import ConfigurationError, OutOfRangeError
from striplab.model import (
    Gaussian,
    HoppingDist,
    PotentialDist,
    Uniform,
    Window,
    anderson_strip,
    random_hopping,
    sample_realization,
)
from striplab.transfer import (
    conjugated_one_step,
    conjugator,
    multi_step,
    one_step,
    q_matrix,
    relative_symplectic_defect,
    symplectic_defect,
    symplectic_form,
    symplectic_inverse,
)


def _rand_real(W, seed, lo=-60, hi=60):
    spec = random_hopping(W, HoppingDist("identity_plus_perturbation", delta=0.4), PotentialDist("goe", scale=1.0))
    return sample_realization(spec, Window(lo, hi), seed)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_free_step_at_energy_two():
    real = sample_realization(anderson_strip(1, Uniform(0, 0)), Window(-2, 2), 0)
    np.testing.assert_array_equal(one_step(real, 0, 2.0).entries, [[2, -1], [1, 0]])


def test_step_with_zero_effective_energy():
    real = sample_realization(anderson_strip(1, Uniform(5, 5)), Window(-2, 2), 0)
    np.testing.assert_array_equal(one_step(real, 0, 5.0).entries, [[0, -1], [1, 0]])


def test_conjugated_equals_raw_for_unit_hopping():
    real = sample_realization(anderson_strip(1, Uniform(-1, 1)), Window(-2, 2), 3)
    np.testing.assert_array_equal(conjugated_one_step(real, 1, 0.3).entries, one_step(real, 1, 0.3).entries)


def test_symplectic_form_identities():
    J = symplectic_form(3)
    np.testing.assert_array_equal(J @ J, -np.eye(6))
    np.testing.assert_array_equal(J.T, -J)


def test_symplectic_defect_examples():
    assert symplectic_defect(np.eye(4)) == 0.0
    assert symplectic_defect(2 * np.eye(2)) == pytest.approx(3 * np.sqrt(2), rel=1e-15)
    with pytest.raises(ConfigurationError):
        symplectic_defect(np.eye(3))


def _residual_oracle(real, x, E, psi_x, psi_xm1, psi_xp1):
    # L_x psi(x+1) + V_x psi(x) + L_{x-1}^T psi(x-1) - E psi(x)
    r = real.L_at(x) @ psi_xp1 + real.V_at(x) @ psi_x + real.L_at(x - 1).T @ psi_xm1 - E * psi_x
    return np.linalg.norm(r) / (np.linalg.norm(psi_x) + np.linalg.norm(psi_xm1) + np.linalg.norm(psi_xp1))


@given(seed=st.integers(0, 10_000), E=st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_one_step_solves_the_three_term_relation(seed, E):
    real = _rand_real(2, seed, -3, 3)
    rng = np.random.default_rng(seed)
    psi_x, psi_xm1 = rng.standard_normal(2), rng.standard_normal(2)
    out = one_step(real, 0, E).entries @ np.concatenate([psi_x, psi_xm1])
    np.testing.assert_array_equal(out[2:], psi_x)
    assert _residual_oracle(real, 0, E, psi_x, psi_xm1, out[:2]) <= 1e-10


@given(seed=st.integers(0, 10_000), W=st.integers(1, 4), E=st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_conjugated_step_is_symplectic_and_matches_conjugation(seed, W, E):
    real = _rand_real(W, seed, -3, 3)
    Tt = conjugated_one_step(real, 1, E).entries
    assert relative_symplectic_defect(Tt) <= 1e-10
    # independent side: conjugate the raw step explicitly
    other = conjugator(real, 1) @ one_step(real, 1, E).entries @ np.linalg.inv(conjugator(real, 0))
    assert _rel(other, Tt) <= 1e-12
    Z = E * np.eye(W) - real.V_at(1)
    assert _rel(q_matrix(real.L_at(1), Z), Tt) == 0.0


def test_conjugated_step_needs_only_its_own_site():
    real = sample_realization(anderson_strip(2, Uniform(-1, 1)), Window(0, 0), 0)
    conjugated_one_step(real, 0, 0.0)
    with pytest.raises(OutOfRangeError):
        one_step(real, 0, 0.0)


def test_multi_step_trivial_cases():
    real = _rand_real(3, 1)
    np.testing.assert_array_equal(multi_step(real, 4, 4, 0.2).entries, np.eye(6))
    np.testing.assert_array_equal(multi_step(real, 5, 4, 0.2).entries, one_step(real, 4, 0.2).entries)


@pytest.mark.parametrize("conjugated", [False, True])
def test_inverse_segments(conjugated):
    real = _rand_real(2, 5)
    for d in range(1, 21):
        fwd = multi_step(real, d, 0, 0.4, conjugated).entries
        back = multi_step(real, 0, d, 0.4, conjugated).entries
        assert _rel(back @ fwd, np.eye(4)) <= 1e-8


@given(data=st.data())
@settings(max_examples=40, deadline=None)
def test_cocycle_law(data):
    seed = data.draw(st.integers(0, 1000))
    x, y, z = sorted(data.draw(st.lists(st.integers(-25, 25), min_size=3, max_size=3)))
    # monotone triples: every factor runs in the same direction
    a, b, c = (x, y, z) if data.draw(st.booleans()) else (z, y, x)
    real = _rand_real(2, seed, -30, 30)
    lhs = multi_step(real, a, c, 0.1).entries
    rhs = multi_step(real, a, b, 0.1).entries @ multi_step(real, b, c, 0.1).entries
    assert _rel(rhs, lhs) <= 1e-8


@given(seed=st.integers(0, 1000), y=st.integers(-20, 0), length=st.integers(0, 40))
@settings(max_examples=40, deadline=None)
def test_conjugation_law(seed, y, length):
    real = _rand_real(3, seed)
    x = y + length
    raw = multi_step(real, x, y, -0.3).entries
    conj = multi_step(real, x, y, -0.3, conjugated=True).entries
    lhs = conjugator(real, x - 1) @ raw @ np.linalg.inv(conjugator(real, y - 1))
    assert _rel(lhs, conj) <= 1e-8


@given(seed=st.integers(0, 1000), length=st.integers(1, 50))
@settings(max_examples=30, deadline=None)
def test_propagation_against_direct_recursion(seed, length):
    W = 2
    real = _rand_real(W, seed)
    E = 0.25
    rng = np.random.default_rng(seed)
    psi = {0: rng.standard_normal(W), -1: rng.standard_normal(W)}
    for x in range(0, length):
        rhs = E * psi[x] - real.V_at(x) @ psi[x] - real.L_at(x - 1).T @ psi[x - 1]
        psi[x + 1] = np.linalg.solve(real.L_at(x), rhs)
    out = multi_step(real, length, 0, E).entries @ np.concatenate([psi[0], psi[-1]])
    ref = np.concatenate([psi[length], psi[length - 1]])
    assert _rel(out, ref) <= 1e-8


def test_long_products_stay_symplectic():
    # M = exp(logc) * Mhat with ||Mhat||_F = 1, so the relative defect
    # ||M^T J M - J|| / ||M||^2 equals ||Mhat^T J Mhat - exp(-2 logc) J||
    for W in (1, 2, 3, 4):
        real = _rand_real(W, W, 0, 1000)
        J = symplectic_form(W)
        Mhat, logc = np.eye(2 * W), 0.0
        for x in range(1000):
            Mhat = conjugated_one_step(real, x, 0.1).entries @ Mhat
            n = np.linalg.norm(Mhat)
            Mhat, logc = Mhat / n, logc + np.log(n)
        assert np.linalg.norm(Mhat.T @ J @ Mhat - np.exp(-2 * logc) * J) <= 1e-6


def test_hundred_step_defect():
    real = _rand_real(2, 11, 0, 120)
    M = multi_step(real, 100, 0, 0.3, conjugated=True).entries
    assert symplectic_defect(M) <= 1e-6 * np.linalg.norm(M) ** 2


def test_symplectic_inverse_matches_inverse():
    real = _rand_real(3, 2)
    T = conjugated_one_step(real, 0, 0.7).entries
    assert _rel(symplectic_inverse(T) @ T, np.eye(6)) <= 1e-12


def test_segments_beyond_limit_refused():
    real = sample_realization(anderson_strip(1, Gaussian(0, 1)), Window(0, 300), 0)
    with pytest.raises(ConfigurationError):
        multi_step(real, 250, 0, 0.0)


def test_site_out_of_window():
    real = sample_realization(anderson_strip(1, Uniform(-1, 1)), Window(0, 3), 0)
    with pytest.raises(OutOfRangeError):
        one_step(real, 4, 0.0)
    with pytest.raises(OutOfRangeError):
        multi_step(real, 6, 0, 0.0)
