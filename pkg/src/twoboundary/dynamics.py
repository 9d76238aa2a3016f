"""Wave-side and conjugate-side evolution with independent boundaries.

Orientation
-----------
States are kets evolved right to left: after the first ``s`` steps the wave
side is ``U_s ... U_1 |i>``. The transition amplitude from ``i`` to ``f`` is
``amplitude(i, sched, f) = <f| U_n ... U_1 |i>``. Two-sided expressions pair
the wave-side ket with the conjugate-side ket as ``<chi|psi>`` where ``chi``
is the conjugate side evolved from ``i'``; the unit operator at ``t_f`` sums
over all final states, which collapses the pair to one inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from twoboundary.hilbert import (
    NORM_TOL,
    Operator,
    OperatorKind,
    StateVector,
    inner,
)

MAX_PATH_TERMS = 10**7


@dataclass(frozen=True, eq=False)
class EvolutionSchedule:
    steps: tuple[Operator, ...]
    times: tuple[float, ...]

    def __post_init__(self):
        steps = tuple(self.steps)
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "times", times)
        if len(times) != len(steps) + 1:
            raise ValueError(f"need {len(steps) + 1} time labels for {len(steps)} steps, got {len(times)}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"time labels must be strictly increasing: {times}")
        for op in steps:
            if op.kind is not OperatorKind.UNITARY:
                raise ValueError("schedule steps must be unitary operators")
        if steps and len({op.space.total_dim for op in steps}) != 1:
            raise ValueError("all schedule steps must act on one space")

    @classmethod
    def of(cls, steps: Sequence[Operator], t0: float = 0.0, dt: float = 1.0) -> "EvolutionSchedule":
        return cls(tuple(steps), tuple(t0 + dt * k for k in range(len(steps) + 1)))

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def segment(self, start: int, stop: int) -> np.ndarray | None:
        """Matrix of ``U_stop ... U_{start+1}``; ``None`` for the empty product."""
        mat = None
        for op in self.steps[start:stop]:
            mat = op.entries if mat is None else op.entries @ mat
        return mat

    def evolve(self, psi: StateVector, start: int = 0, stop: int | None = None) -> StateVector:
        stop = self.n_steps if stop is None else stop
        amps = psi.amps
        for op in self.steps[start:stop]:
            if op.space.total_dim != psi.space.total_dim:
                raise ValueError("dimension mismatch between schedule and state")
            amps = op.entries @ amps
        return StateVector(psi.space, amps, normalized=psi.normalized and abs(np.vdot(amps, amps).real - 1) <= NORM_TOL)


@dataclass(frozen=True, eq=False)
class TwoSidedBoundary:
    i_wave: StateVector
    i_conj: StateVector

    def __post_init__(self):
        if self.i_wave.space.total_dim != self.i_conj.space.total_dim:
            raise ValueError("boundary states live in different spaces")
        for name, s in (("i_wave", self.i_wave), ("i_conj", self.i_conj)):
            if abs(s.norm_sq() - 1) > NORM_TOL:
                raise ValueError(f"{name} must be normalized")

    @classmethod
    def related_to(cls, i: StateVector) -> "TwoSidedBoundary":
        return cls(i, i)

    @property
    def related(self) -> bool:
        return self.i_wave is self.i_conj or np.array_equal(self.i_wave.amps, self.i_conj.amps)

    def hidden_variable(self) -> np.ndarray:
        """The difference ``|i> - |i'>`` between the two boundaries."""
        return self.i_wave.amps - self.i_conj.amps


def _check_dims(sched: EvolutionSchedule, *states: StateVector):
    for s in states:
        for op in sched.steps:
            if op.space.total_dim != s.space.total_dim:
                raise ValueError(
                    f"dimension mismatch: schedule acts on {op.space.total_dim}, state has {s.space.total_dim}"
                )


def amplitude(i: StateVector, sched: EvolutionSchedule, f: StateVector) -> complex:
    _check_dims(sched, i, f)
    if i.space.total_dim != f.space.total_dim:
        raise ValueError("initial and final states have different dimensions")
    return inner(f, sched.evolve(i))


def _segments(sched: EvolutionSchedule, points: Sequence[int]):
    bounds = [0, *points, sched.n_steps]
    return [sched.segment(a, b) for a, b in zip(bounds, bounds[1:])]


def path_terms(i: StateVector, sched: EvolutionSchedule, f: StateVector, insertion_points: Sequence[int]) -> np.ndarray:
    """All discrete-path contributions to ``amplitude(i, sched, f)``.

    A complete orthonormal (computational) basis is inserted at every step
    boundary in ``insertion_points``; each joint assignment of intermediate
    basis indices is one path. Terms are returned in lexicographic order of
    the index assignment, outermost insertion first.
    """
    _check_dims(sched, i, f)
    points = sorted(int(p) for p in insertion_points)
    if any(p < 0 or p > sched.n_steps for p in points):
        raise ValueError(f"insertion points must lie in [0, {sched.n_steps}], got {points}")
    d = i.space.total_dim
    count = d ** len(points)
    if count > MAX_PATH_TERMS:
        raise ValueError(f"path sum would need {count} terms (limit {MAX_PATH_TERMS})")
    if not points:
        return np.array([amplitude(i, sched, f)])
    segs = [np.eye(d) if s is None else s for s in _segments(sched, points)]

    # terms[j1, .., jk] = <jk|V_{k-1}|j_{k-1}> ... <j1|V_0|i>, then times <f|V_k|jk>
    terms = segs[0] @ i.amps
    for mat in segs[1:-1]:
        terms = terms[..., :, None] * mat.T
    terms = terms * (f.amps.conj() @ segs[-1])
    return terms.reshape(-1)


def path_sum_amplitude(i: StateVector, sched: EvolutionSchedule, f: StateVector, insertion_points: Sequence[int]) -> complex:
    terms = path_terms(i, sched, f, insertion_points)
    return complex(math.fsum(terms.real), math.fsum(terms.imag))


def two_sided_path_weight(i: StateVector, sched: EvolutionSchedule, f: StateVector,
                          wave_points: Sequence[int], conj_points: Sequence[int]) -> complex:
    """Double path sum with independently chosen paths on both sides.

    ``sum_{j, j'} term_j * conj(term'_{j'})`` where ``j`` runs over paths with
    insertions ``wave_points`` and ``j'`` over paths with ``conj_points``.
    """
    wave = path_terms(i, sched, f, wave_points)
    conj = path_terms(i, sched, f, conj_points)
    return complex(np.sum(np.multiply.outer(wave, conj.conj())))


def closed_trace(boundary: TwoSidedBoundary, sched: EvolutionSchedule) -> complex:
    """Two-sided trace with the unit operator at ``t_f``: ``<U i'|U i>``."""
    _check_dims(sched, boundary.i_wave)
    return inner(sched.evolve(boundary.i_conj), sched.evolve(boundary.i_wave))


def _insert(sched: EvolutionSchedule, psi: StateVector, mid: Operator, at_step: int) -> StateVector:
    amps = psi.amps
    for op in sched.steps[:at_step]:
        amps = op.entries @ amps
    amps = mid.entries @ amps
    for op in sched.steps[at_step:]:
        amps = op.entries @ amps
    return StateVector(psi.space, amps)


def sandwich(boundary: TwoSidedBoundary, sched: EvolutionSchedule, mid: Operator, at_step: int,
             symmetric: bool = False) -> complex:
    """Two-sided expression with ``mid`` inserted after ``at_step`` steps.

    By default ``mid`` acts on the wave side only. With ``symmetric`` it also
    acts at the same time on the conjugate-side ket, which contributes
    ``mid^dag`` on the bra. ``at_step == sched.n_steps`` inserts at ``t_f``.
    """
    if not 0 <= at_step <= sched.n_steps:
        raise ValueError(f"at_step must lie in [0, {sched.n_steps}], got {at_step}")
    _check_dims(sched, boundary.i_wave)
    if mid.space.total_dim != boundary.i_wave.space.total_dim:
        raise ValueError("inserted operator acts on a different space")
    wave = _insert(sched, boundary.i_wave, mid, at_step)
    if symmetric:
        conj = _insert(sched, boundary.i_conj, mid, at_step)
    else:
        conj = sched.evolve(boundary.i_conj)
    return inner(conj, wave)
