"""Furcation, witness production, alignment and path weights.

A measurement event splits the system state with a complete set of orthogonal
projectors and tags every arm with a register of ``n_modes`` environment
modes. The per-mode states of different arms overlap by ``epsilon``, so two
registers carrying different tags overlap by ``epsilon ** n_modes``. Registers
are kept symbolic; the dense tensor form is only built on request for small
mode counts.

Path weights are evaluated at the final time: with the unit operator closing
the two sides and perfectly distinguishing witnesses, only pairings of
identical outcome sequences survive and the weight of a path is the squared
norm of the projected final state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from twoboundary.hilbert import (
    MAX_DENSE_DIM,
    UNITARY_TOL,
    CompositeSpace,
    Operator,
    OperatorKind,
    StateVector,
    haar_random_state,
    haar_random_unitary,
)

MAX_PATHS = 10**6
MAX_DENSE_MODES = 12


@dataclass(frozen=True)
class WitnessModel:
    n_modes: int = 1
    per_mode_overlap: float = 0.0

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 0:
            raise ValueError(f"n_modes must be a non-negative integer, got {self.n_modes}")
        if not 0.0 <= self.per_mode_overlap <= 1.0:
            raise ValueError(f"per_mode_overlap must lie in [0, 1], got {self.per_mode_overlap}")
        object.__setattr__(self, "n_modes", int(self.n_modes))
        object.__setattr__(self, "per_mode_overlap", float(self.per_mode_overlap))

    @property
    def suppression(self) -> float:
        """Overlap of two registers with different outcome tags."""
        if self.n_modes == 0:
            return 1.0
        return self.per_mode_overlap ** self.n_modes


def mode_states(n_outcomes: int, overlap: float) -> np.ndarray:
    """Columns are unit mode states with pairwise real overlap ``overlap``.

    The Gram matrix ``(1 - e) I + e J`` is PSD for ``0 <= e <= 1``; its
    symmetric square root supplies the vectors.
    """
    gram = (1 - overlap) * np.eye(n_outcomes) + overlap * np.ones((n_outcomes, n_outcomes))
    w, v = np.linalg.eigh(gram)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def dense_register(outcome: int, n_outcomes: int, witness: WitnessModel) -> np.ndarray:
    """Explicit witness register vector for one outcome tag."""
    if witness.n_modes > MAX_DENSE_MODES or n_outcomes ** witness.n_modes > MAX_DENSE_DIM:
        raise ValueError(
            f"dense register of {witness.n_modes} modes exceeds the {MAX_DENSE_DIM}-dim limit"
        )
    mode = mode_states(n_outcomes, witness.per_mode_overlap)[:, outcome].astype(np.complex128)
    reg = np.ones(1, dtype=np.complex128)
    for _ in range(witness.n_modes):
        reg = np.kron(reg, mode)
    return reg


@dataclass(frozen=True, eq=False)
class MeasurementEvent:
    projectors: tuple[Operator, ...]
    witness: WitnessModel = WitnessModel()
    label: str = ""

    def __post_init__(self):
        projs = tuple(self.projectors)
        object.__setattr__(self, "projectors", projs)
        if len(projs) < 2:
            raise ValueError("a measurement event needs at least two outcomes")
        n = projs[0].space.total_dim
        for p in projs:
            if p.kind is not OperatorKind.PROJECTOR:
                raise ValueError("event projectors must have kind=projector")
            if p.space.total_dim != n:
                raise ValueError("event projectors act on different spaces")
        for u in range(len(projs)):
            for v in range(u + 1, len(projs)):
                err = np.max(np.abs(projs[u].entries @ projs[v].entries))
                if err > 1e-12:
                    raise ValueError(f"projectors {u} and {v} are not orthogonal (|PuPv| = {err:.2e})")
        total = sum(p.entries for p in projs)
        if np.max(np.abs(total - np.eye(n))) > UNITARY_TOL:
            raise ValueError("event projectors do not sum to the identity")

    @classmethod
    def from_partition(cls, space: CompositeSpace, partition: Sequence[Sequence[int]],
                       basis: np.ndarray | None = None, witness: WitnessModel = WitnessModel(),
                       label: str = "") -> "MeasurementEvent":
        """Projectors onto groups of basis vectors (columns of ``basis``, default computational)."""
        n = space.total_dim
        q = np.eye(n, dtype=np.complex128) if basis is None else np.asarray(basis, dtype=np.complex128)
        projs = []
        for block in partition:
            cols = q[:, list(block)]
            projs.append(Operator(space, cols @ cols.conj().T, OperatorKind.PROJECTOR))
        return cls(tuple(projs), witness, label)

    @classmethod
    def spin_z(cls, witness: WitnessModel = WitnessModel(), label: str = "spin-z") -> "MeasurementEvent":
        """Two-arm furcation of a spin-1/2 along the field axis: outcome 0 is up."""
        return cls.from_partition(CompositeSpace((2,)), [[0], [1]], witness=witness, label=label)

    @property
    def n_outcomes(self) -> int:
        return len(self.projectors)

    @property
    def space(self) -> CompositeSpace:
        return self.projectors[0].space


class Branch(NamedTuple):
    outcome: int
    state: StateVector
    norm: float


def furcate(psi: StateVector, event: MeasurementEvent) -> list[Branch]:
    if event.space.total_dim != psi.space.total_dim:
        raise ValueError("event projectors act on a different space than the state")
    out = []
    for u, p in enumerate(event.projectors):
        amps = p.entries @ psi.amps
        out.append(Branch(u, StateVector(psi.space, amps), float(np.linalg.norm(amps))))
    if all(b.norm < 1e-14 for b in out):
        raise ValueError("degenerate furcation: every branch has zero norm")
    return out


@dataclass(frozen=True)
class WitnessRegister:
    outcome: int
    n_outcomes: int
    n_modes: int
    per_mode_overlap: float


@dataclass(frozen=True, eq=False)
class WitnessedState:
    """Branches of one furcation, each tagged by its witness register."""

    branches: tuple[Branch, ...]
    registers: tuple[WitnessRegister, ...]
    witness: WitnessModel

    def overlap(self, u: int, v: int) -> float:
        """``<W_u|W_v>``, evaluated symbolically."""
        return 1.0 if u == v else self.witness.suppression

    def dense_overlap(self, u: int, v: int) -> complex:
        k = len(self.branches)
        return complex(np.vdot(dense_register(u, k, self.witness), dense_register(v, k, self.witness)))

    def reduced_density(self) -> np.ndarray:
        """System density matrix after tracing out the witness registers."""
        b = np.column_stack([br.state.amps for br in self.branches])
        ones = np.ones((len(self.branches),) * 2, dtype=np.complex128)
        return b @ alignment_apply(ones, self.witness) @ b.conj().T

    def dense_state(self) -> np.ndarray:
        """Full system-witness vector ``sum_u b_u (x) W_u`` (small registers only)."""
        k = len(self.branches)
        return sum(np.kron(br.state.amps, dense_register(br.outcome, k, self.witness)) for br in self.branches)

    def dense_reduced_density(self) -> np.ndarray:
        d = self.branches[0].state.dim
        psi = self.dense_state().reshape(d, -1)
        return psi @ psi.conj().T


def emit_witnesses(branches: Sequence[Branch], witness: WitnessModel) -> WitnessedState:
    k = len(branches)
    regs = tuple(WitnessRegister(b.outcome, k, witness.n_modes, witness.per_mode_overlap) for b in branches)
    return WitnessedState(tuple(branches), regs, witness)


def alignment_apply(two_sided_coeffs, witness: WitnessModel) -> np.ndarray:
    """Suppress wave/conjugate pairings of mismatched outcomes by the witness overlap."""
    c = np.array(two_sided_coeffs, dtype=np.complex128)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"expected a square coefficient matrix, got shape {c.shape}")
    s = witness.suppression
    out = c * s
    np.fill_diagonal(out, np.diag(c))
    return out


class Path(NamedTuple):
    outcomes: tuple[int, ...]
    weight: float


@dataclass(frozen=True, eq=False)
class BranchTree:
    """Prepared state, a sequence of events and the unitaries between them.

    ``interleaved[e]`` lists the unitaries applied after event ``e`` and
    before event ``e + 1`` (or before the final time for the last event).
    Each must commute with the projectors of every event up to ``e``, so the
    record left by earlier events survives to the final time.
    """

    prep: StateVector
    events: tuple[MeasurementEvent, ...]
    interleaved: tuple[tuple[Operator, ...], ...] | None = None

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        if not events:
            raise ValueError("a branch tree needs at least one event")
        d = self.prep.space.total_dim
        if abs(self.prep.norm_sq() - 1) > 1e-12:
            raise ValueError("prepared state must be normalized")
        for ev in events:
            if ev.space.total_dim != d:
                raise ValueError(f"event {ev.label!r} acts on a different space than the prepared state")
        gaps = self.interleaved
        if gaps is None:
            gaps = tuple(() for _ in events)
        gaps = tuple(tuple(g) for g in gaps)
        if len(gaps) != len(events):
            raise ValueError(f"need one unitary gap per event ({len(events)}), got {len(gaps)}")
        for e, gap in enumerate(gaps):
            for j, u in enumerate(gap):
                if u.kind is not OperatorKind.UNITARY or u.space.total_dim != d:
                    raise ValueError(f"interleaved operator {j} after event {e} must be a unitary on the system")
                for e0 in range(e + 1):
                    for p in events[e0].projectors:
                        if not u.commutes_with(p):
                            raise ValueError(
                                f"interleaved unitary {j} after event {e} does not commute with "
                                f"event {e0} projectors; it would erase that event's witness record"
                            )
        object.__setattr__(self, "interleaved", gaps)
        if self.n_paths > MAX_PATHS:
            raise ValueError(f"tree has {self.n_paths} paths (limit {MAX_PATHS})")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ev.n_outcomes for ev in self.events)

    @property
    def n_paths(self) -> int:
        return math.prod(self.shape)

    @property
    def unitaries(self) -> tuple[Operator, ...]:
        return tuple(u for gap in self.interleaved for u in gap)

    @property
    def event_positions(self) -> tuple[int, ...]:
        """Timeline position of each event, counted in interleaved unitaries before it."""
        pos, acc = [], 0
        for gap in self.interleaved:
            pos.append(acc)
            acc += len(gap)
        return tuple(pos)

    @property
    def final_position(self) -> int:
        return len(self.unitaries)

    @property
    def is_binary(self) -> bool:
        return all(k == 2 for k in self.shape)

    def leaf_index(self, outcomes: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(outcomes), self.shape))

    def outcomes_of(self, leaf: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(leaf, self.shape))

    @cached_property
    def weights(self) -> np.ndarray:
        """Path weights in leaf-index order (read-only)."""
        w = np.array([p.weight for p in enumerate_paths(self)])
        w.flags.writeable = False
        return w

    @classmethod
    def factorized(cls, prep: StateVector, witness: WitnessModel = WitnessModel()) -> "BranchTree":
        """One event per tensor factor of ``prep``, each measured in its computational basis."""
        dims = prep.space.factor_dims
        events = []
        for f, k in enumerate(dims):
            before, after = math.prod(dims[:f]), math.prod(dims[f + 1:])
            projs = []
            for u in range(k):
                sel = np.zeros((k, k))
                sel[u, u] = 1
                m = np.kron(np.kron(np.eye(before), sel), np.eye(after))
                projs.append(Operator(prep.space, m, OperatorKind.PROJECTOR))
            events.append(MeasurementEvent(tuple(projs), witness, f"factor-{f}"))
        return cls(prep, tuple(events))

    @classmethod
    def from_leaf_weights(cls, weights, shape: Sequence[int] | None = None,
                          witness: WitnessModel = WitnessModel()) -> "BranchTree":
        """Tree whose path ``k`` has weight ``weights[k]`` (leaf-index order)."""
        w = np.asarray(weights, dtype=float).reshape(-1)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum():.12g}")
        shape = tuple(shape) if shape is not None else (w.size,)
        prep = StateVector(CompositeSpace(shape), np.sqrt(w / w.sum()), normalized=True)
        return cls.factorized(prep, witness)


def _schedule(tree: BranchTree, projection_steps):
    """Ordered timeline actions ``(position, order, index, operator)``."""
    n_ev = len(tree.events)
    pos = tree.event_positions
    if projection_steps is None:
        steps = pos
    else:
        steps = tuple(int(s) for s in projection_steps)
        if len(steps) != n_ev:
            raise ValueError(f"need one projection step per event ({n_ev}), got {len(steps)}")
    for e, s in enumerate(steps):
        if not pos[e] <= s <= tree.final_position:
            raise ValueError(f"event {e} cannot be projected at step {s}: valid range is "
                             f"[{pos[e]}, {tree.final_position}]")
    acts = [(s, 0, e, None) for e, s in enumerate(steps)]
    acts += [(j, 1, j, u) for j, u in enumerate(tree.unitaries)]
    acts.sort(key=lambda a: (a[0], a[1], a[2]))

    # deferring a projection is only legitimate across operations that leave the record intact
    for e, s in enumerate(steps):
        if s == pos[e]:
            continue
        for e2 in range(e + 1, n_ev):
            if steps[e2] < s:
                for p in tree.events[e].projectors:
                    for q in tree.events[e2].projectors:
                        if not p.commutes_with(q):
                            raise ValueError(
                                f"projection of event {e} moved past event {e2}, whose projectors do "
                                f"not commute with it: the evolution is not witness preserving"
                            )
    return acts


def propagate_paths(tree: BranchTree, projection_steps: Sequence[int] | None = None):
    """Projected final system state of every path.

    Returns ``(outcomes, states)``: an ``(L, n_events)`` integer array and a
    ``(dim, L)`` complex array whose column ``j`` belongs to ``outcomes[j]``,
    both in leaf-index order.
    """
    acts = _schedule(tree, projection_steps)
    n_ev = len(tree.events)
    cols = tree.prep.amps.reshape(-1, 1)
    outcomes = np.zeros((1, n_ev), dtype=np.int64)
    for _, kind, idx, op in acts:
        if kind == 1:
            cols = op.entries @ cols
            continue
        ev = tree.events[idx]
        k = ev.n_outcomes
        stacked = np.stack([p.entries @ cols for p in ev.projectors], axis=2)  # (d, B, K)
        cols = stacked.reshape(cols.shape[0], -1)
        outcomes = np.repeat(outcomes, k, axis=0)
        outcomes[:, idx] = np.tile(np.arange(k), outcomes.shape[0] // k)
    order = np.argsort(np.ravel_multi_index(tuple(outcomes.T), tree.shape), kind="stable")
    return outcomes[order], cols[:, order]


def enumerate_paths(tree: BranchTree, projection_steps: Sequence[int] | None = None) -> list[Path]:
    """All root-to-leaf paths of ``tree`` with their weights, in leaf-index order.

    ``projection_steps[e]`` is the timeline position at which the projectors
    of event ``e`` are applied; the default is the event's own position.
    Positions up to ``tree.final_position`` (the final time) are allowed as
    long as every operation crossed commutes with the deferred projectors.
    """
    outcomes, cols = propagate_paths(tree, projection_steps)
    weights = np.einsum("ij,ij->j", cols.conj(), cols).real
    return [Path(tuple(int(x) for x in o), float(w)) for o, w in zip(outcomes, weights)]


def weight_ratio(tree: BranchTree, path_a: Path | Sequence[int], path_b: Path | Sequence[int],
                 projection_steps: Sequence[int] | None = None) -> float:
    a = tuple(path_a.outcomes if isinstance(path_a, Path) else path_a)
    b = tuple(path_b.outcomes if isinstance(path_b, Path) else path_b)
    for name, o in (("path_a", a), ("path_b", b)):
        if len(o) != len(tree.events) or any(not 0 <= x < k for x, k in zip(o, tree.shape)):
            raise ValueError(f"{name} {o} is not a leaf of the tree")
    paths = enumerate_paths(tree, projection_steps)
    wa = paths[tree.leaf_index(a)].weight
    wb = paths[tree.leaf_index(b)].weight
    if wb < 1e-30:
        raise ZeroDivisionError(f"weight of path {b} is {wb:.3e}; ratio undefined")
    return wa / wb


def dilated_path_weights(tree: BranchTree) -> np.ndarray:
    """Path weights from an explicit system + pointer-register evolution.

    Each event writes its outcome into its own orthogonal pointer register by
    a controlled shift; the registers are read out only at the final time.
    Independent of ``enumerate_paths``; limited to small total dimension.
    """
    d = tree.prep.space.total_dim
    shape = tree.shape
    total = d * math.prod(shape)
    if total > MAX_DENSE_DIM:
        raise ValueError(f"dilated space of dimension {total} exceeds {MAX_DENSE_DIM}")
    regs = [np.eye(k, dtype=np.complex128) for k in shape]

    def embed(sys_op, reg_ops):
        m = sys_op
        for r in reg_ops:
            m = np.kron(m, r)
        return m

    psi = np.kron(tree.prep.amps, embed(np.ones(1), [r[:, 0] for r in regs]))
    for e, (ev, gap) in enumerate(zip(tree.events, tree.interleaved)):
        k = ev.n_outcomes
        w = np.zeros((total, total), dtype=np.complex128)
        for u, p in enumerate(ev.projectors):
            shift = np.roll(np.eye(k), u, axis=0)
            ops = [shift if j == e else regs[j] for j in range(len(shape))]
            w += embed(p.entries, ops)
        psi = w @ psi
        for u in gap:
            psi = embed(u.entries, regs) @ psi
    psi = psi.reshape(d, *shape)
    return np.sum(np.abs(psi) ** 2, axis=0).reshape(-1)


def random_chain(rng: np.random.Generator, dim: int = 4, n_events: int = 3, max_gap: int = 2,
                 max_outcomes: int = 3, commuting: bool = True) -> BranchTree:
    """Randomized tree for property tests.

    With ``commuting`` all events are coarse-grainings of one Haar-random
    basis and the interleaved unitaries are block diagonal on the common
    refinement of the events so far, so every projection may be deferred to
    the final time. Otherwise each event uses its own random basis and there
    are no interleaved unitaries.
    """
    space = CompositeSpace((dim,))
    prep = haar_random_state(dim, rng)
    common = haar_random_unitary(dim, rng).entries
    events, gaps = [], []
    cells = [list(range(dim))]
    for e in range(n_events):
        k = int(rng.integers(2, min(max_outcomes, dim) + 1))
        labels = rng.permutation(np.concatenate([np.arange(k), rng.integers(0, k, dim - k)]))
        partition = [np.flatnonzero(labels == u).tolist() for u in range(k)]
        witness = WitnessModel(int(rng.integers(0, 6)), float(rng.uniform(0, 1)))
        basis = common if commuting else haar_random_unitary(dim, rng).entries
        events.append(MeasurementEvent.from_partition(space, partition, basis, witness, f"e{e}"))
        gap = []
        if commuting:
            cells = [[i for i in c if labels[i] == u] for c in cells for u in range(k)]
            cells = [c for c in cells if c]
            for _ in range(int(rng.integers(0, max_gap + 1))):
                block = np.zeros((dim, dim), dtype=np.complex128)
                for c in cells:
                    block[np.ix_(c, c)] = haar_random_unitary(len(c), rng).entries
                gap.append(Operator(space, common @ block @ common.conj().T, OperatorKind.UNITARY))
        gaps.append(tuple(gap))
    return BranchTree(prep, tuple(events), tuple(gaps))
