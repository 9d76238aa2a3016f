import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoboundary import Operator, OperatorKind, StateVector, basis_state, haar_random_state
from twoboundary.dynamics import (MAX_PATH_TERMS, EvolutionSchedule, TwoSidedBoundary, amplitude,
                                  closed_trace, path_sum_amplitude, path_terms, sandwich,
                                  two_sided_path_weight)
from twoboundary.hilbert import haar_random_unitary

from oracles import brute_force_path_sum, direct_product_amplitude

H = Operator.from_matrix(np.array([[1, 1], [1, -1]]) / math.sqrt(2), OperatorKind.UNITARY)


def random_schedule(g, d, n):
    return EvolutionSchedule.of([haar_random_unitary(d, g) for _ in range(n)])


# --- schedule ---------------------------------------------------------------

def test_schedule_validation():
    u = Operator.identity(basis_state(2, 0).space)
    with pytest.raises(ValueError):
        EvolutionSchedule((u, u), (0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        EvolutionSchedule((u,), (0.0,))
    with pytest.raises(ValueError):
        EvolutionSchedule.of([u, haar_random_unitary(3, np.random.default_rng(0))])


# --- amplitude --------------------------------------------------------------

def test_amplitude_identity_schedule():
    i = haar_random_state(3, np.random.default_rng(1))
    sched = EvolutionSchedule.of([Operator.identity(i.space)] * 3)
    assert amplitude(i, sched, i) == pytest.approx(1, abs=1e-12)


def test_amplitude_hadamard():
    a = amplitude(basis_state(2, 0), EvolutionSchedule.of([H]), basis_state(2, 1))
    assert a == pytest.approx(0.70711, abs=1e-5)


def test_amplitude_orientation_matches_direct_product(rng):
    sched = random_schedule(rng, 3, 4)
    i, f = haar_random_state(3, rng), haar_random_state(3, rng)
    want = direct_product_amplitude(i.amps, [s.entries for s in sched.steps], f.amps)
    assert abs(amplitude(i, sched, f) - want) < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5))
def test_amplitude_completeness(seed, d, n):
    g = np.random.default_rng(seed)
    sched = random_schedule(g, d, n)
    i = haar_random_state(d, g)
    total = sum(abs(amplitude(i, sched, basis_state(d, k))) ** 2 for k in range(d))
    assert abs(total - 1) < 1e-12


def test_amplitude_dimension_mismatch():
    with pytest.raises(ValueError):
        amplitude(basis_state(3, 0), EvolutionSchedule.of([H]), basis_state(2, 0))


# --- path sums --------------------------------------------------------------

def test_path_sum_without_insertions(rng):
    sched = random_schedule(rng, 3, 2)
    i, f = haar_random_state(3, rng), haar_random_state(3, rng)
    assert path_sum_amplitude(i, sched, f, []) == amplitude(i, sched, f)


def test_path_sum_one_insertion_dim2(rng):
    sched = random_schedule(rng, 2, 2)
    i, f = haar_random_state(2, rng), haar_random_state(2, rng)
    terms = path_terms(i, sched, f, [1])
    assert terms.shape == (2,)
    want = direct_product_amplitude(i.amps, [s.entries for s in sched.steps], f.amps)
    assert abs(terms.sum() - want) < 1e-14


def test_path_terms_against_explicit_loops(rng):
    sched = random_schedule(rng, 3, 3)
    i, f = haar_random_state(3, rng), haar_random_state(3, rng)
    mats = [s.entries for s in sched.steps]
    for cuts in ([1], [2], [1, 2], [0, 3], [1, 1]):
        got = path_sum_amplitude(i, sched, f, cuts)
        assert abs(got - brute_force_path_sum(i.amps, mats, f.amps, cuts)) < 1e-13


def test_path_sum_two_insertions_dim4(rng):
    sched = random_schedule(rng, 4, 3)
    i, f = haar_random_state(4, rng), haar_random_state(4, rng)
    want = direct_product_amplitude(i.amps, [s.entries for s in sched.steps], f.amps)
    assert len(path_terms(i, sched, f, [1, 2])) == 16
    assert abs(path_sum_amplitude(i, sched, f, [1, 2]) - want) < 1e-12


def test_path_sum_cap():
    d = 32
    u = Operator.identity(basis_state(d, 0).space)
    sched = EvolutionSchedule.of([u] * 5)
    with pytest.raises(ValueError, match=str(d ** 5)):
        path_terms(basis_state(d, 0), sched, basis_state(d, 0), [1, 2, 3, 4, 5])
    assert d ** 5 > MAX_PATH_TERMS


def test_path_sum_rejects_bad_points(rng):
    sched = random_schedule(rng, 2, 2)
    with pytest.raises(ValueError):
        path_terms(basis_state(2, 0), sched, basis_state(2, 0), [3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4),
       st.lists(st.integers(0, 4), max_size=2), st.lists(st.integers(0, 4), max_size=2))
def test_factorization_of_two_sided_sum(seed, d, n, wave, conj):
    g = np.random.default_rng(seed)
    sched = random_schedule(g, d, n)
    wave = [min(p, n) for p in wave]
    conj = [min(p, n) for p in conj]
    i, f = haar_random_state(d, g), haar_random_state(d, g)
    w = two_sided_path_weight(i, sched, f, wave, conj)
    assert abs(w - abs(amplitude(i, sched, f)) ** 2) < 1e-12


# --- closed trace -----------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 4))
def test_closed_trace_related_is_one(seed, d, n):
    g = np.random.default_rng(seed)
    i = haar_random_state(d, g)
    b = TwoSidedBoundary.related_to(i)
    assert b.related
    assert abs(closed_trace(b, random_schedule(g, d, n)) - 1) < 1e-12


def test_closed_trace_unrelated_haar_mean():
    g = np.random.default_rng(64)
    d, n = 64, 10_000
    i = haar_random_state(d, g)
    sched = random_schedule(g, d, 2)
    vals = np.array([abs(closed_trace(TwoSidedBoundary(i, haar_random_state(d, g)), sched)) ** 2
                     for _ in range(n)])
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - 1 / d) < 3 * se


def test_closed_trace_orthogonal_boundary():
    b = TwoSidedBoundary(basis_state(3, 0), basis_state(3, 1))
    assert not b.related
    sched = EvolutionSchedule.of([Operator.identity(b.i_wave.space)])
    assert closed_trace(b, sched) == 0


def test_closed_trace_is_complex():
    i = basis_state(2, 0)
    ip = StateVector.from_amps([1j, 0])
    assert closed_trace(TwoSidedBoundary(i, ip), EvolutionSchedule.of([H])) == pytest.approx(-1j)


def test_boundary_requires_normalized_states():
    with pytest.raises(ValueError):
        TwoSidedBoundary(StateVector.from_amps([1, 1]), basis_state(2, 0))


# --- sandwich ---------------------------------------------------------------

def test_sandwich_identity_is_closed_trace(rng):
    d = 3
    b = TwoSidedBoundary(haar_random_state(d, rng), haar_random_state(d, rng))
    sched = random_schedule(rng, d, 3)
    ident = Operator.identity(b.i_wave.space)
    for k in range(4):
        assert abs(sandwich(b, sched, ident, k) - closed_trace(b, sched)) < 1e-14


def test_sandwich_projector_expectation():
    plus = StateVector.from_amps([1, 1], normalize=True)
    p0 = Operator.projector_onto([basis_state(2, 0)])
    sched = EvolutionSchedule.of([Operator.identity(plus.space)] * 2)
    assert sandwich(TwoSidedBoundary.related_to(plus), sched, p0, 1) == pytest.approx(0.5, abs=1e-12)


def _block_unitary(g, cells, d):
    m = np.zeros((d, d), dtype=complex)
    for c in cells:
        m[np.ix_(c, c)] = haar_random_unitary(len(c), g).entries
    return Operator.from_matrix(m, OperatorKind.UNITARY)


def test_sandwich_symmetric_matches_asymmetric(rng):
    d = 4
    p = Operator.projector_onto([basis_state(d, 0), basis_state(d, 2)])
    cells = [[0, 2], [1, 3]]
    early = [haar_random_unitary(d, rng) for _ in range(2)]
    late = [_block_unitary(rng, cells, d) for _ in range(3)]
    sched = EvolutionSchedule.of(early + late)
    b = TwoSidedBoundary.related_to(haar_random_state(d, rng))
    a = sandwich(b, sched, p, 2)
    s = sandwich(b, sched, p, 2, symmetric=True)
    assert abs(a - s) < 1e-12


def test_projection_time_irrelevance(rng):
    d = 4
    p = Operator.projector_onto([basis_state(d, 1)])
    cells = [[1], [0, 2, 3]]
    early = [haar_random_unitary(d, rng) for _ in range(2)]
    late = [_block_unitary(rng, cells, d) for _ in range(4)]
    sched = EvolutionSchedule.of(early + late)
    b = TwoSidedBoundary(haar_random_state(d, rng), haar_random_state(d, rng))
    at_final = sandwich(b, sched, p, sched.n_steps)
    for k in range(2, sched.n_steps + 1):
        assert abs(sandwich(b, sched, p, k) - at_final) < 1e-10
        assert abs(sandwich(b, sched, p, k, symmetric=True) - sandwich(b, sched, p, sched.n_steps, True)) < 1e-10


def test_sandwich_rejects_bad_step(rng):
    b = TwoSidedBoundary.related_to(basis_state(2, 0))
    with pytest.raises(ValueError):
        sandwich(b, EvolutionSchedule.of([H]), H, 2)
