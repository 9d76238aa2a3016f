"""Choice decision: mechanisms that pick one path of a branch tree.

``cumulative-random``
    Inverse-CDF draw over the path weights from a single uniform number.
``dominant-vector``
    Approximates the decohered path mixture by its dominant eigenvector and
    scores each path by its overlap with that vector.
``surjection-joint``
    Every path gets a tiny overlap amplitude with an unrelated
    conjugate-side boundary; the path with the largest overlap wins.
``surjection-sequential``
    The same dominance race, run at every binary furcation on the
    conditional branch weights while walking from the root to a leaf.

The batch samplers draw ``n`` independent decisions at once; the single-trial
entry points consume the stream exactly like a batch of one.
"""

from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

from twoboundary.hilbert import (
    MAX_DENSE_DIM,
    CompositeSpace,
    ConvergenceError,
    Operator,
    OperatorKind,
    dominant_eigenpair,
)
from twoboundary.measurement import BranchTree, Path, dense_register, propagate_paths

DEFAULT_OVERLAP_DIM = 2**16


class ZeroWeightPathWarning(UserWarning):
    pass


class Variant(str, enum.Enum):
    CUMULATIVE_RANDOM = "cumulative-random"
    DOMINANT_VECTOR = "dominant-vector"
    SURJECTION_JOINT = "surjection-joint"
    SURJECTION_SEQUENTIAL = "surjection-sequential"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = str(name).strip().lower().replace("_", "-")
        aliases = {
            "cumulativerandom": cls.CUMULATIVE_RANDOM,
            "dominantvector": cls.DOMINANT_VECTOR,
            "surjectionjoint": cls.SURJECTION_JOINT,
            "surjectionsequential": cls.SURJECTION_SEQUENTIAL,
        }
        for v in cls:
            if key == v.value:
                return v
        if key.replace("-", "") in aliases:
            return aliases[key.replace("-", "")]
        valid = ", ".join(v.value for v in cls)
        raise ValueError(f"unknown selection policy {name!r}; valid variants: {valid}")


# --- cumulative -------------------------------------------------------------

def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a non-empty list of finite non-negative numbers")
    if abs(w.sum() - 1) > 1e-9:
        raise ValueError(f"weights must sum to 1 within 1e-9, got {w.sum():.12g}")
    return w


def inverse_cdf(weights, rand_values) -> np.ndarray:
    """Vectorized :func:`select_cumulative` without input validation."""
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, rand_values, side="right")
    # rand values beyond a total of 1 - ulp land on the last reachable path
    last = int(np.flatnonzero(w > 0)[-1])
    return np.minimum(idx, last)


def select_cumulative(weights: Sequence[float], rand_value: float) -> int:
    """Index ``k`` whose interval ``[sum_{k'<k} w, sum_{k'<=k} w)`` contains ``rand_value``."""
    w = _check_weights(weights)
    if not 0.0 <= rand_value < 1.0:
        raise ValueError(f"rand_value must lie in [0, 1), got {rand_value}")
    return int(inverse_cdf(w, rand_value))


# --- dominant vector --------------------------------------------------------

def _witness_suppression_matrix(tree: BranchTree, outcomes: np.ndarray) -> np.ndarray:
    s = np.array([ev.witness.suppression for ev in tree.events])
    mismatch = outcomes[:, None, :] != outcomes[None, :, :]
    return np.prod(np.where(mismatch, s, 1.0), axis=2)


def path_gram(tree: BranchTree) -> np.ndarray:
    """Gram matrix ``<Phi_a|Phi_b>`` of the witness-tagged final path states.

    ``Phi_k = phi_k (x) W_k`` with ``phi_k`` the projected system state and
    ``W_k`` the product of the witness registers of path ``k``. Shares its
    nonzero spectrum with the path mixture ``sum_k |Phi_k><Phi_k|``.
    """
    if tree.n_paths > MAX_DENSE_DIM:
        raise ValueError(f"path Gram matrix of {tree.n_paths} paths exceeds {MAX_DENSE_DIM}")
    outcomes, cols = propagate_paths(tree)
    g = cols.conj().T @ cols
    return g * _witness_suppression_matrix(tree, outcomes)


def _dense_path_state(tree: BranchTree, outcomes: Sequence[int], phi: np.ndarray) -> np.ndarray:
    v = phi
    for ev, u in zip(tree.events, outcomes):
        v = np.kron(v, dense_register(u, ev.n_outcomes, ev.witness))
    return v


def build_path_matrix(tree: BranchTree, path: Path | Sequence[int], with_witness: bool = False) -> Operator:
    """Rank-one matrix ``|phi_k><phi_k|`` of the projected final state of ``path``.

    With ``with_witness`` the witness registers of the path are appended as
    explicit tensor factors (small registers only); the trace is the path
    weight either way because the registers are unit vectors.
    """
    target = tuple(path.outcomes if isinstance(path, Path) else path)
    if len(target) != len(tree.events) or any(not 0 <= x < k for x, k in zip(target, tree.shape)):
        raise ValueError(f"{target} is not a leaf of the tree")
    outcomes, cols = propagate_paths(tree)
    phi = cols[:, tree.leaf_index(target)]
    space = tree.prep.space
    if with_witness:
        phi = _dense_path_state(tree, target, phi)
        if phi.size > MAX_DENSE_DIM:
            raise ValueError(f"path matrix of dimension {phi.size} exceeds {MAX_DENSE_DIM}")
        space = CompositeSpace(space.factor_dims + (phi.size // space.total_dim,))
    if np.vdot(phi, phi).real == 0:
        warnings.warn(f"path {target} has zero weight; its path matrix is zero", ZeroWeightPathWarning)
    return Operator(space, np.outer(phi, phi.conj()), OperatorKind.HERMITIAN)


def dense_path_mixture(tree: BranchTree) -> Operator:
    """``sum_k |Phi_k><Phi_k|`` with explicit witness factors (small trees only)."""
    outcomes, cols = propagate_paths(tree)
    vecs = [_dense_path_state(tree, o, cols[:, j]) for j, o in enumerate(outcomes)]
    a = np.column_stack(vecs)
    if a.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dense mixture of dimension {a.shape[0]} exceeds {MAX_DENSE_DIM}")
    space = CompositeSpace((tree.prep.space.total_dim, a.shape[0] // tree.prep.space.total_dim))
    return Operator(space, a @ a.conj().T, OperatorKind.HERMITIAN)


@dataclass(frozen=True)
class DominantScores:
    scores: np.ndarray
    eigenvalue: float
    gap: float
    fallback: bool


def dominant_vector_scores(tree: BranchTree, tol: float = 1e-12, max_iter: int = 100_000) -> DominantScores:
    """Path scores ``|<t_dom|Phi_k>|^2`` normalized, from the dominant vector of the mixture.

    Falls back to the path weights (flagged) when the top eigenvalue is
    degenerate or power iteration does not converge.
    """
    g = path_gram(tree)
    weights = np.asarray(tree.weights)
    try:
        pair = dominant_eigenpair(Operator(CompositeSpace((g.shape[0],)), g, OperatorKind.HERMITIAN),
                                  tol=tol, max_iter=max_iter)
    except ConvergenceError:
        return DominantScores(weights.copy(), float("nan"), float("nan"), True)
    if pair.degenerate:
        return DominantScores(weights.copy(), pair.value, pair.gap, True)
    c = pair.vector.amps
    scores = np.abs(c) ** 2
    scores /= scores.sum()
    return DominantScores(scores, pair.value, pair.gap, False)


# --- surjection -------------------------------------------------------------

def _race_amplitudes(branch_weights: np.ndarray, prep_overlaps: np.ndarray, overlap_dim: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Batch of overlap amplitudes, shape ``(n, K)``; inputs broadcast to ``(n, K)``."""
    w = np.asarray(branch_weights, dtype=float)
    z = rng.standard_normal(w.shape + (2,))
    g = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(w / (2.0 * overlap_dim))
    return np.asarray(prep_overlaps) * g


def surjection_amplitudes(branch_weights: Sequence[float], prep_overlaps: Sequence[complex],
                          overlap_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Per-branch overlap amplitude with an unrelated conjugate-side boundary.

    The restricted final-state sum for branch ``b`` is a circular complex
    Gaussian of variance ``branch_weights[b] / overlap_dim``; it is multiplied
    by ``prep_overlaps[b]``.
    """
    w = np.asarray(branch_weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("branch weights must be non-negative")
    if overlap_dim < 1:
        raise ValueError("overlap_dim must be >= 1")
    ov = np.asarray(prep_overlaps, dtype=np.complex128)
    if ov.shape != w.shape:
        raise ValueError("branch_weights and prep_overlaps need the same length")
    return _race_amplitudes(w[None, :], ov[None, :], overlap_dim, rng)[0]


def haar_overlap_amplitudes(prep_overlaps: Sequence[complex], sector_dim: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Overlap amplitudes from an explicit Haar-random final conjugate state.

    The final space is split into one sector of dimension ``sector_dim`` per
    branch; the wave side of branch ``b`` is ``prep_overlaps[b]`` times a fixed
    unit vector of sector ``b``. Returns the restricted overlaps with a
    Haar-random unit vector on the full space.
    """
    ov = np.asarray(prep_overlaps, dtype=np.complex128)
    k = ov.size
    z = rng.standard_normal((k * sector_dim, 2)) @ np.array([1, 1j])
    z /= np.linalg.norm(z)
    return ov * z.reshape(k, sector_dim)[:, 0].conj()


def surjection_select_joint(amplitudes: Sequence[complex]) -> int:
    """Index of the dominant overlap; ties go to the lowest index."""
    a = np.abs(np.asarray(amplitudes, dtype=np.complex128)) ** 2
    if a.size == 0 or not np.any(a > 0):
        raise ValueError("all overlap amplitudes are zero; no branch can dominate")
    return int(np.argmax(a))


def _log_dominance(mag2: np.ndarray) -> np.ndarray:
    """``log(top / runner-up)`` per row of squared magnitudes (``inf`` if the runner-up is 0)."""
    if mag2.shape[1] < 2:
        return np.full(mag2.shape[0], np.inf)
    top2 = -np.sort(-mag2, axis=1)[:, :2]
    with np.errstate(divide="ignore"):
        return np.log(top2[:, 0]) - np.log(top2[:, 1])


def joint_race_probabilities(means: Sequence[float]) -> np.ndarray:
    """Closed-form win probabilities of independent exponentials with the given means.

    ``P(X_i > max_{j != i} X_j) = sum_{S subset others} (-1)^{|S|} r_i / (r_i + sum_S r_j)``
    with rates ``r = 1 / mean``. Zero-mean entries never win.
    """
    m = np.asarray(means, dtype=float)
    if np.any(m < 0) or not np.any(m > 0):
        raise ValueError("means must be non-negative with at least one positive entry")
    live = np.flatnonzero(m > 0)
    if live.size > 20:
        raise ValueError("inclusion-exclusion limited to 20 competing branches")
    rates = 1.0 / m[live]
    out = np.zeros(m.size)
    for a, i in enumerate(live):
        others = [rates[b] for b in range(live.size) if b != a]
        total = 0.0
        for r in range(len(others) + 1):
            for combo in itertools.combinations(others, r):
                total += (-1) ** r * rates[a] / (rates[a] + sum(combo))
        out[i] = total
    return out


# --- policy objects ---------------------------------------------------------

class Draws(NamedTuple):
    """Batch result: chosen leaf per trial and its dominance log-ratio (or ``None``)."""

    leaves: np.ndarray
    log_dominance: np.ndarray | None


@dataclass(frozen=True)
class SelectionOutcome:
    chosen: Path
    diagnostics: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SelectionPolicy:
    variant: Variant
    overlap_dim: int = DEFAULT_OVERLAP_DIM
    tol: float = 1e-12
    max_iter: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant) if not isinstance(self.variant, Variant)
                           else self.variant)
        if int(self.overlap_dim) != self.overlap_dim or self.overlap_dim < 1:
            raise ValueError(f"overlap_dim must be a positive integer, got {self.overlap_dim}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")

    @property
    def name(self) -> str:
        return self.variant.value

    def check_compatible(self, tree: BranchTree) -> None:
        if self.variant is Variant.SURJECTION_SEQUENTIAL and not tree.is_binary:
            raise ValueError(
                f"surjection-sequential needs binary events, tree has outcome counts {tree.shape}; "
                "decompose multi-way furcations into binary cascades"
            )
        if self.variant is Variant.DOMINANT_VECTOR and tree.n_paths > MAX_DENSE_DIM:
            raise ValueError(f"dominant-vector limited to {MAX_DENSE_DIM} paths")

    def sample(self, tree: BranchTree, n: int, rng: np.random.Generator) -> Draws:
        self.check_compatible(tree)
        weights = np.asarray(tree.weights)
        v = self.variant
        if v is Variant.CUMULATIVE_RANDOM:
            return Draws(inverse_cdf(weights, rng.random(n)), None)
        if v is Variant.DOMINANT_VECTOR:
            scores = dominant_vector_scores(tree, self.tol, self.max_iter).scores
            return Draws(inverse_cdf(scores, rng.random(n)), None)
        if v is Variant.SURJECTION_JOINT:
            amps = _race_amplitudes(np.ones((n, weights.size)), np.sqrt(weights), self.overlap_dim, rng)
            mag2 = np.abs(amps) ** 2
            return Draws(np.argmax(mag2, axis=1), _log_dominance(mag2))
        leaves, logdom, _ = _sequential_batch(tree, n, self.overlap_dim, rng)
        return Draws(leaves, logdom)

    def select(self, tree: BranchTree, rng: np.random.Generator) -> SelectionOutcome:
        v = self.variant
        if v is Variant.CUMULATIVE_RANDOM:
            self.check_compatible(tree)
            r = float(rng.random(1)[0])
            k = select_cumulative(tree.weights, r)
            return SelectionOutcome(enumerate_leaf(tree, k), {"rand": r, "weights": list(tree.weights)})
        if v is Variant.DOMINANT_VECTOR:
            self.check_compatible(tree)
            return dominant_vector_select(tree, float(rng.random(1)[0]), self.tol, self.max_iter)
        if v is Variant.SURJECTION_JOINT:
            self.check_compatible(tree)
            w = np.asarray(tree.weights)
            amps = _race_amplitudes(np.ones((1, w.size)), np.sqrt(w), self.overlap_dim, rng)[0]
            k = surjection_select_joint(amps)
            mag2 = np.abs(amps) ** 2
            return SelectionOutcome(enumerate_leaf(tree, k), {
                "weights": list(w),
                "amplitudes": amps,
                "log_dominance": float(_log_dominance(mag2[None, :])[0]),
            })
        return surjection_select_sequential(tree, self.overlap_dim, rng)


def enumerate_leaf(tree: BranchTree, leaf: int) -> Path:
    return Path(tree.outcomes_of(leaf), float(tree.weights[leaf]))


def dominant_vector_select(tree: BranchTree, rand_value: float, tol: float = 1e-12,
                           max_iter: int = 100_000) -> SelectionOutcome:
    ds = dominant_vector_scores(tree, tol, max_iter)
    k = select_cumulative(ds.scores, rand_value)
    return SelectionOutcome(enumerate_leaf(tree, k), {
        "scores": list(ds.scores),
        "eigenvalue": ds.eigenvalue,
        "spectral_gap": ds.gap,
        "fallback": ds.fallback,
    })


def _sequential_batch(tree: BranchTree, n: int, overlap_dim: int, rng: np.random.Generator):
    if not tree.is_binary:
        raise ValueError(f"surjection-sequential needs binary events, got outcome counts {tree.shape}")
    shape = tree.shape
    w = np.asarray(tree.weights).reshape(shape)
    depth = len(shape)
    # marginal[e] holds the weights of all prefixes of length e + 1
    marginal = [w.sum(axis=tuple(range(e + 1, depth))).reshape(-1) for e in range(depth)]
    node = np.zeros(n, dtype=np.int64)
    logdom = np.full(n, np.inf)
    races = []
    for e in range(depth):
        child = marginal[e][node[:, None] * 2 + np.arange(2)]
        parent = child.sum(axis=1, keepdims=True)
        cond = child / parent
        amps = _race_amplitudes(np.ones_like(cond), np.sqrt(cond), overlap_dim, rng)
        mag2 = np.abs(amps) ** 2
        choice = np.argmax(mag2, axis=1)
        logdom = np.minimum(logdom, _log_dominance(mag2))
        races.append((cond, amps, choice))
        node = node * 2 + choice
    return node, logdom, races


def surjection_select_sequential(tree: BranchTree, overlap_dim: int, rng: np.random.Generator) -> SelectionOutcome:
    leaves, logdom, races = _sequential_batch(tree, 1, overlap_dim, rng)
    k = int(leaves[0])
    return SelectionOutcome(enumerate_leaf(tree, k), {
        "conditional_weights": [r[0][0].tolist() for r in races],
        "amplitudes": [r[1][0] for r in races],
        "log_dominance": float(logdom[0]),
    })
