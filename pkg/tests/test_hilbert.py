import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from twoboundary import (CompositeSpace, Operator, OperatorKind, StateVector, apply, basis_state,
                         dominant_eigenpair, haar_random_state, inner, tensor)
from twoboundary.hilbert import ConvergenceError, haar_random_unitary

from oracles import jacobi_eigh, kron_by_hand

H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
X = np.array([[0, 1], [1, 0]])


def ket(*amps):
    return StateVector.from_amps(amps)


def op(m, kind=OperatorKind.UNITARY):
    return Operator.from_matrix(m, kind)


# --- tensor -----------------------------------------------------------------

def test_tensor_dimension():
    a = ket(1, 0)
    b = ket(0, 1, 0)
    t = tensor(a, b)
    assert t.dim == 6
    assert t.space.factor_dims == (2, 3)


def test_tensor_of_zero_kets():
    t = tensor(basis_state(2, 0), basis_state(2, 0))
    assert t.amps[0] == 1
    assert np.count_nonzero(t.amps) == 1


def test_tensor_superposition_times_one():
    plus = ket(1 / math.sqrt(2), 1 / math.sqrt(2))
    t = tensor(plus, basis_state(2, 1))
    want = kron_by_hand(plus.amps, [0, 1])
    np.testing.assert_allclose(t.amps, want, atol=1e-15)
    np.testing.assert_allclose(t.amps, [0, 1 / math.sqrt(2), 0, 1 / math.sqrt(2)], atol=1e-15)


# --- apply / inner ----------------------------------------------------------

def test_apply_identity():
    psi = ket(0.6, 0.8j)
    out = apply(Operator.identity(psi.space), psi)
    np.testing.assert_array_equal(out.amps, psi.amps)


def test_apply_pauli_x():
    out = apply(op(X), basis_state(2, 0))
    np.testing.assert_array_equal(out.amps, [0, 1])


def test_apply_hadamard():
    out = apply(op(H), basis_state(2, 0))
    np.testing.assert_allclose(out.amps, [0.70711, 0.70711], atol=1e-5)


def test_apply_dimension_mismatch():
    with pytest.raises(ValueError):
        apply(op(H), basis_state(3, 0))


def test_inner_examples():
    e1, e2 = basis_state(2, 0), basis_state(2, 1)
    assert inner(e1, e1) == 1
    assert inner(e1, e2) == 0
    assert inner(e1, apply(op(H), e1)) == pytest.approx(0.70711, abs=1e-5)


def test_inner_dimension_mismatch():
    with pytest.raises(ValueError):
        inner(basis_state(2, 0), basis_state(4, 0))


def test_operator_validation():
    with pytest.raises(ValueError):
        op([[1, 1], [0, 1]])
    with pytest.raises(ValueError):
        op([[1, 0.1], [0.1, 0]], OperatorKind.PROJECTOR)
    with pytest.raises(ValueError):
        op([[1, 1j], [1j, 1]], OperatorKind.HERMITIAN)


# --- haar -------------------------------------------------------------------

def test_haar_norm(rng):
    for _ in range(50):
        assert abs(haar_random_state(7, rng).norm() - 1) < 1e-12


def test_haar_mean_component_weight():
    g = np.random.default_rng(11)
    n, d = 100_000, 16
    acc = np.empty((n, d))
    for t in range(n):
        acc[t] = np.abs(haar_random_state(d, g).amps) ** 2
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(mean - 1 / d) < 3 * se)


def test_haar_deterministic():
    a = haar_random_state(16, np.random.default_rng(5))
    b = haar_random_state(16, np.random.default_rng(5))
    assert a.amps.tobytes() == b.amps.tobytes()


def test_haar_unitary_invariance():
    g = np.random.default_rng(99)
    v = haar_random_unitary(8, g)
    n = 10_000
    plain = np.array([abs(haar_random_state(8, g).amps[0]) ** 2 for _ in range(n)])
    rotated = np.array([abs(apply(v, haar_random_state(8, g)).amps[0]) ** 2 for _ in range(n)])
    assert stats.ks_2samp(plain, rotated).pvalue > 1e-3


def test_haar_unitary_is_unitary(rng):
    u = haar_random_unitary(5, rng).entries
    np.testing.assert_allclose(u.conj().T @ u, np.eye(5), atol=1e-12)


# --- dominant eigenpair -----------------------------------------------------

def test_dominant_diagonal():
    pair = dominant_eigenpair(op(np.diag([3.0, 1.0]), OperatorKind.HERMITIAN))
    assert pair.value == pytest.approx(3.0, abs=1e-12)
    np.testing.assert_allclose(pair.vector.amps, [1, 0], atol=1e-10)
    assert not pair.degenerate


def test_dominant_rank_one(rng):
    w = haar_random_state(5, rng).amps
    pair = dominant_eigenpair(op(np.outer(w, w.conj()), OperatorKind.HERMITIAN))
    assert pair.value == pytest.approx(1.0, abs=1e-12)
    assert abs(abs(np.vdot(w, pair.vector.amps)) - 1) < 1e-10
    # phase convention: largest-magnitude component real and positive
    k = np.argmax(np.abs(pair.vector.amps))
    assert pair.vector.amps[k].imag == pytest.approx(0, abs=1e-12)
    assert pair.vector.amps[k].real > 0


def test_dominant_random_psd_against_jacobi():
    g = np.random.default_rng(8)
    a = g.standard_normal((8, 8)) + 1j * g.standard_normal((8, 8))
    m = a @ a.conj().T
    m = (m + m.conj().T) / 2
    vals, top = jacobi_eigh(m)
    pair = dominant_eigenpair(op(m, OperatorKind.HERMITIAN))
    assert pair.value == pytest.approx(vals[0], abs=1e-8)
    assert abs(abs(np.vdot(top, pair.vector.amps)) - 1) < 1e-8
    assert pair.gap == pytest.approx(vals[0] - vals[1], abs=1e-8)
    # the two oracles also agree with each other
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(m))[::-1], vals, atol=1e-9)


def test_dominant_degenerate_flagged():
    pair = dominant_eigenpair(op(np.diag([2.0, 2.0, 1.0]), OperatorKind.HERMITIAN))
    assert pair.degenerate
    assert pair.value == pytest.approx(2.0)


def test_dominant_non_convergence_reports_residual():
    m = np.diag([1.0, 0.999999])
    with pytest.raises(ConvergenceError) as info:
        dominant_eigenpair(op(m, OperatorKind.HERMITIAN), max_iter=5, start=np.array([1.0, 1.0]))
    assert info.value.residual > 0
    assert info.value.n_iter == 5


def test_dominant_rejects_non_hermitian():
    with pytest.raises(ValueError):
        dominant_eigenpair(op([[0, 1], [-1, 0]]))


# --- properties -------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 12))
def test_unitarity_preserves_norm(seed, d):
    g = np.random.default_rng(seed)
    psi = haar_random_state(d, g)
    out = apply(haar_random_unitary(d, g), psi)
    assert abs(out.norm() - 1) < 1e-12


dyadic = st.builds(lambda re, im: complex(re / 8, im / 8), st.integers(-16, 16), st.integers(-16, 16))


@settings(max_examples=60, deadline=None)
@given(st.lists(dyadic, min_size=1, max_size=4), st.lists(dyadic, min_size=1, max_size=4),
       st.lists(dyadic, min_size=1, max_size=4))
def test_tensor_associative_exact(a, b, c):
    # dyadic amplitudes keep every product exact, so index order is compared bit for bit
    a, b, c = (StateVector.from_amps(v) for v in (a, b, c))
    left = tensor(tensor(a, b), c)
    right = tensor(a, tensor(b, c))
    np.testing.assert_array_equal(left.amps, right.amps)
    assert left.space.factor_dims == right.space.factor_dims


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_tensor_associative_rounding(seed, da, db, dc):
    g = np.random.default_rng(seed)
    a, b, c = (haar_random_state(d, g) for d in (da, db, dc))
    np.testing.assert_allclose(tensor(tensor(a, b), c).amps, tensor(a, tensor(b, c)).amps, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 16))
def test_inner_conjugate_symmetry(seed, d):
    g = np.random.default_rng(seed)
    a, b = haar_random_state(d, g), haar_random_state(d, g)
    ab, ba = inner(a, b), inner(b, a)
    assert abs(ab - ba.conjugate()) <= 1e-15 * max(1.0, abs(ab))


def test_composite_space_rejects_bad_dims():
    with pytest.raises(ValueError):
        CompositeSpace((0, 2))
