"""Scenarios, Monte Carlo trial runner, Born-statistics tests and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy import constants, special

from twoboundary.hilbert import CompositeSpace, StateVector
from twoboundary.measurement import (
    BranchTree,
    MeasurementEvent,
    WitnessModel,
    emit_witnesses,
    furcate,
)
from twoboundary.rng import stream
from twoboundary.selection import SelectionPolicy, Variant, joint_race_probabilities

BLOCK_SIZE = 8192
BORN_P_THRESHOLD = 1e-3


def born_expected(theta: float) -> tuple[float, float]:
    """Up/down probabilities for a spin prepared at angle ``theta`` to the field axis."""
    return math.cos(theta / 2) ** 2, math.sin(theta / 2) ** 2


@dataclass(frozen=True, eq=False)
class SternGerlachScenario:
    """Two-arm spin measurement; ``theta = pi/2`` is a spin perpendicular to the field."""

    theta: float
    witness: WitnessModel = WitnessModel()

    def __post_init__(self):
        up, down = born_expected(self.theta)
        if abs(up + down - 1) > 1e-14:
            raise ValueError("Born weights do not sum to 1")

    @property
    def name(self) -> str:
        return f"stern-gerlach(theta={self.theta!r})"

    @property
    def prep(self) -> StateVector:
        t = self.theta / 2
        return StateVector(CompositeSpace((2,)), [math.cos(t), math.sin(t)])

    @property
    def tree(self) -> BranchTree:
        return BranchTree(self.prep, (MeasurementEvent.spin_z(self.witness),))


@dataclass(frozen=True, eq=False)
class TreeScenario:
    tree: BranchTree
    name: str = "tree"


def _tree_of(scenario) -> BranchTree:
    return scenario if isinstance(scenario, BranchTree) else scenario.tree


def _name_of(scenario) -> str:
    return "tree" if isinstance(scenario, BranchTree) else scenario.name


class ChiSquare(NamedTuple):
    statistic: float
    p_value: float
    dof: int
    flag: str | None = None


def chi_square(observed: Sequence[int], expected: Sequence[float]) -> ChiSquare:
    """Pearson goodness of fit of counts against probabilities.

    Cells with zero expected probability are dropped when empty and make the
    statistic infinite (flag ``"zero-expected"``) when not. With fewer than
    two remaining cells the test has no degrees of freedom (flag
    ``"degenerate"``, statistic 0, p 1).
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape:
        raise ValueError("observed and expected need the same length")
    if np.any(exp < 0) or abs(exp.sum() - 1) > 1e-9:
        raise ValueError("expected weights must be non-negative and sum to 1")
    n = obs.sum()
    if np.any((exp == 0) & (obs > 0)):
        return ChiSquare(math.inf, 0.0, int(np.count_nonzero(exp > 0)) - 1, "zero-expected")
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    dof = obs.size - 1
    if dof < 1 or n == 0:
        return ChiSquare(0.0, 1.0, max(dof, 0), "degenerate")
    mean = n * exp
    stat = float(np.sum((obs - mean) ** 2 / mean))
    return ChiSquare(stat, float(special.gammaincc(dof / 2, stat / 2)), dof)


def _summarize_dominance(logdom: np.ndarray | None) -> dict[str, Any] | None:
    if logdom is None:
        return None
    finite = np.abs(logdom[np.isfinite(logdom)])
    out: dict[str, Any] = {
        "n_races_resolved_by_zero_weight": int(np.count_nonzero(~np.isfinite(logdom))),
        "median_abs_log_ratio": None,
        "q10_abs_log_ratio": None,
        "q90_abs_log_ratio": None,
    }
    if finite.size:
        q10, q50, q90 = np.quantile(finite, [0.1, 0.5, 0.9])
        out.update(median_abs_log_ratio=float(q50), q10_abs_log_ratio=float(q10),
                   q90_abs_log_ratio=float(q90))
    return out


@dataclass
class TrialReport:
    policy: str
    scenario: str
    n_trials: int
    outcomes: list[tuple[int, ...]]
    counts: list[int]
    expected: list[float]
    chi2: ChiSquare
    dominance: dict[str, Any] | None
    seed: int
    wall_time: float = field(default=0.0, compare=False)
    predicted: list[float] | None = None

    def __post_init__(self):
        if sum(self.counts) != self.n_trials:
            raise ValueError("counts do not sum to n_trials")

    @property
    def frequencies(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n_trials

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        """JSON-ready mapping; wall time is left out unless asked for, keeping reports reproducible."""
        d: dict[str, Any] = {
            "policy": self.policy,
            "scenario": self.scenario,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "leaves": [
                {"leaf_index": j, "outcomes": list(o), "observed": c, "expected": e}
                for j, (o, c, e) in enumerate(zip(self.outcomes, self.counts, self.expected))
            ],
            "chi2": _finite_or_none(self.chi2.statistic),
            "p_value": self.chi2.p_value,
            "dof": self.chi2.dof,
            "chi2_flag": self.chi2.flag,
            "dominance": self.dominance,
        }
        if self.predicted is not None:
            d["predicted"] = list(self.predicted)
        if include_timing:
            d["wall_time_s"] = self.wall_time
        return d


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def run_trials(scenario, policy: SelectionPolicy, n: int, seed: int, workers: int = 1,
               block_size: int = BLOCK_SIZE) -> TrialReport:
    """Run ``n`` seeded selections and test the leaf frequencies against the path weights.

    Trials are cut into fixed blocks of ``block_size``; block ``b`` draws from
    ``stream(seed, b)``. The block layout does not depend on ``workers``, so
    any degree of parallelism reproduces the serial tallies exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    tree = _tree_of(scenario)
    policy.check_compatible(tree)
    weights = np.asarray(tree.weights)
    n_blocks = -(-n // block_size)

    def run_block(b: int):
        size = min(block_size, n - b * block_size)
        draws = policy.sample(tree, size, stream(seed, b))
        return np.bincount(draws.leaves, minlength=tree.n_paths), draws.log_dominance

    t0 = time.perf_counter()
    if workers == 1:
        results = [run_block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, range(n_blocks)))
    counts = np.sum([r[0] for r in results], axis=0)
    logdom = None if results[0][1] is None else np.concatenate([r[1] for r in results])
    wall = time.perf_counter() - t0

    predicted = None
    if policy.variant is Variant.SURJECTION_JOINT and np.count_nonzero(weights) <= 20:
        predicted = [float(x) for x in joint_race_probabilities(weights)]
    return TrialReport(
        policy=policy.name,
        scenario=_name_of(scenario),
        n_trials=n,
        outcomes=[tree.outcomes_of(j) for j in range(tree.n_paths)],
        counts=[int(c) for c in counts],
        expected=[float(w) for w in weights],
        chi2=chi_square(counts, weights),
        dominance=_summarize_dominance(logdom),
        seed=seed,
        wall_time=wall,
        predicted=predicted,
    )


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))))


@dataclass
class PolicyComparison:
    reports: list[TrialReport]
    pairwise_tv: dict[tuple[str, str], float]

    def tv_versus_born(self) -> dict[str, float]:
        return {r.policy: total_variation(r.frequencies, r.expected) for r in self.reports}

    def to_dict(self) -> dict[str, Any]:
        born = self.tv_versus_born()
        return {
            "reports": [r.to_dict() for r in self.reports],
            "tv_versus_born": born,
            "pairwise_tv": [{"a": a, "b": b, "tv": tv} for (a, b), tv in self.pairwise_tv.items()],
        }

    def to_text(self) -> str:
        born = self.tv_versus_born()
        lines = [f"{'policy':<24}{'n':>10}{'chi2':>12}{'p':>12}{'TV vs Born':>12}"]
        for r in self.reports:
            chi = f"{r.chi2.statistic:.4g}" if math.isfinite(r.chi2.statistic) else "inf"
            lines.append(f"{r.policy:<24}{r.n_trials:>10}{chi:>12}{r.chi2.p_value:>12.4g}{born[r.policy]:>12.5f}")
        if self.pairwise_tv:
            lines.append("")
            lines.append("pairwise total variation")
            for (a, b), tv in self.pairwise_tv.items():
                lines.append(f"  {a} vs {b}: {tv:.5f}")
        return "\n".join(lines)


def compare_policies(scenario, policies: Sequence[SelectionPolicy], n: int, seed: int,
                     workers: int = 1) -> PolicyComparison:
    tree = _tree_of(scenario)
    for p in policies:
        p.check_compatible(tree)
    reports = [run_trials(scenario, p, n, seed, workers) for p in policies]
    pairs = {}
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            pairs[(reports[i].policy, reports[j].policy)] = total_variation(
                reports[i].frequencies, reports[j].frequencies)
    return PolicyComparison(reports, pairs)


def witness_photon_energy(wavelength: float) -> float:
    """Photon energy ``h c / wavelength`` in joules (wavelength in meters)."""
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return constants.h * constants.c / wavelength


# --- alignment scan ---------------------------------------------------------

def _hadamard_phase(phi: float) -> np.ndarray:
    h = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
    return h @ np.diag([1.0, np.exp(1j * phi)])


def interference_visibility(witness: WitnessModel, n_phases: int = 64, dense: bool = False) -> float:
    """Fringe visibility after recombining the two arms of an equal-weight furcation.

    The arms of ``(|up> + |down>)/sqrt(2)`` are tagged by witnesses, a relative
    phase is swept over ``n_phases`` points of ``[0, 2 pi)`` and the arms are
    recombined on a beam splitter. Visibility is ``(max - min) / (max + min)``
    of the output-0 probability.
    """
    prep = StateVector(CompositeSpace((2,)), np.array([1, 1]) / math.sqrt(2), normalized=True)
    ws = emit_witnesses(furcate(prep, MeasurementEvent.spin_z(witness)), witness)
    rho = ws.dense_reduced_density() if dense else ws.reduced_density()
    probs = []
    for phi in np.linspace(0, 2 * math.pi, n_phases, endpoint=False):
        r = _hadamard_phase(phi)
        probs.append(float((r @ rho @ r.conj().T)[0, 0].real))
    hi, lo = max(probs), min(probs)
    return (hi - lo) / (hi + lo)


class ScanRow(NamedTuple):
    epsilon: float
    n_modes: int
    visibility: float
    predicted: float


def alignment_scan(epsilons: Sequence[float], max_modes: int = 20) -> list[ScanRow]:
    rows = []
    for eps in epsilons:
        for n in range(max_modes + 1):
            w = WitnessModel(n, eps)
            rows.append(ScanRow(float(eps), n, interference_visibility(w), w.suppression))
    return rows


def fit_log_slope(rows: Sequence[ScanRow], epsilon: float) -> float:
    """Least-squares slope of ``log(visibility)`` against ``n_modes`` for one epsilon."""
    pts = [(r.n_modes, math.log(r.visibility)) for r in rows if r.epsilon == epsilon and r.visibility > 0]
    if len(pts) < 2:
        raise ValueError(f"need at least two positive visibilities for epsilon={epsilon}")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


# --- serialization ----------------------------------------------------------

CSV_HEADER = ("policy", "leaf_index", "outcomes", "observed", "expected", "n", "chi2", "p")


def to_json(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def reports_to_csv(reports: Sequence[TrialReport], preamble: str | None = None) -> str:
    buf = io.StringIO()
    if preamble:
        buf.write(f"# {preamble}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        chi = r.chi2.statistic if math.isfinite(r.chi2.statistic) else "inf"
        for j, (o, c, e) in enumerate(zip(r.outcomes, r.counts, r.expected)):
            w.writerow((r.policy, j, "-".join(map(str, o)), c, repr(e), r.n_trials, repr(chi), repr(r.chi2.p_value)))
    return buf.getvalue()


def scan_to_csv(rows: Sequence[ScanRow], preamble: str | None = None) -> str:
    buf = io.StringIO()
    if preamble:
        buf.write(f"# {preamble}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epsilon", "n_modes", "visibility", "predicted"))
    for r in rows:
        w.writerow((repr(r.epsilon), r.n_modes, repr(r.visibility), repr(r.predicted)))
    return buf.getvalue()
