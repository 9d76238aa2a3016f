"""Command-line entry point.

Usage::

    twoboundary run --config cfg.json --out results/
    twoboundary born-test --config cfg.json --seed 7 --trials 100000
    twoboundary align-scan --config cfg.json
    twoboundary compare-policies --config cfg.json --workers 8

Exit status: 0 success, 1 Born-statistics rejection (``born-test`` only),
2 configuration or IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from twoboundary.experiments import (
    BORN_P_THRESHOLD,
    SternGerlachScenario,
    TreeScenario,
    alignment_scan,
    compare_policies,
    fit_log_slope,
    reports_to_csv,
    run_trials,
    scan_to_csv,
    to_json,
)
from twoboundary.hilbert import CompositeSpace, StateVector
from twoboundary.measurement import BranchTree, WitnessModel
from twoboundary.rng import SEED_MASK
from twoboundary.selection import DEFAULT_OVERLAP_DIM, SelectionPolicy, Variant

COMMANDS = ("run", "born-test", "align-scan", "compare-policies")

EXIT_OK, EXIT_REJECTED, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class PolicySpec:
    name: str
    overlap_dim: int = DEFAULT_OVERLAP_DIM
    tol: float = 1e-12
    max_iter: int = 100_000

    def build(self) -> SelectionPolicy:
        return SelectionPolicy(Variant.parse(self.name), self.overlap_dim, self.tol, self.max_iter)

    def canonical(self) -> dict[str, Any]:
        return {"name": self.name, "overlap_dim": self.overlap_dim, "tol": self.tol, "max_iter": self.max_iter}


@dataclass(frozen=True)
class RunConfig:
    scenario: dict[str, Any]
    epsilon: float
    n_modes: int
    policy: PolicySpec
    policies: tuple[PolicySpec, ...]
    n_trials: int
    seed: int
    scan_epsilons: tuple[float, ...]
    scan_max_modes: int
    output_dir: str | None = None

    @property
    def witness(self) -> WitnessModel:
        return WitnessModel(self.n_modes, self.epsilon)

    def build_scenario(self):
        sc = self.scenario
        if "theta" in sc:
            return SternGerlachScenario(sc["theta"], self.witness)
        if "weights" in sc:
            tree = BranchTree.from_leaf_weights(sc["weights"], sc.get("shape"), self.witness)
            return TreeScenario(tree, "weights")
        dims = sc["tree"]["dims"]
        amps = np.array([complex(*a) for a in sc["tree"]["prep"]])
        prep = StateVector(CompositeSpace(tuple(dims)), amps).normalize()
        return TreeScenario(BranchTree.factorized(prep, self.witness), "tree")

    def canonical(self) -> dict[str, Any]:
        """Everything that determines the results; output location is excluded."""
        return {
            "scenario": self.scenario,
            "witness": {"epsilon": self.epsilon, "n_modes": self.n_modes},
            "policy": self.policy.canonical(),
            "policies": [p.canonical() for p in self.policies],
            "n_trials": self.n_trials,
            "seed": self.seed,
            "scan": {"epsilons": list(self.scan_epsilons), "max_modes": self.scan_max_modes},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- parsing ----------------------------------------------------------------

def _strict(doc: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0],
                          f"unknown key (allowed: {', '.join(sorted(allowed))})")
    missing = sorted(required - set(doc))
    if missing:
        raise ConfigError(f"{path}.{missing[0]}" if path else missing[0], "required key missing")
    return doc


def _number(v: Any, path: str, lo: float | None = None, hi: float | None = None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(path, f"value {v} outside [{lo}, {hi}]")
    return float(v)


def _integer(v: Any, path: str, lo: int | None = None, hi: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(path, f"value {v} outside [{lo}, {hi}]")
    return v


def _policy(doc: Any, path: str) -> PolicySpec:
    if isinstance(doc, str):
        doc = {"name": doc}
    doc = _strict(doc, path, {"name", "overlap_dim", "tol", "max_iter"}, {"name"})
    try:
        name = Variant.parse(doc["name"]).value
    except ValueError as exc:
        raise ConfigError(f"{path}.name", str(exc)) from None
    return PolicySpec(
        name=name,
        overlap_dim=_integer(doc.get("overlap_dim", DEFAULT_OVERLAP_DIM), f"{path}.overlap_dim", 1),
        tol=_number(doc.get("tol", 1e-12), f"{path}.tol", 0.0),
        max_iter=_integer(doc.get("max_iter", 100_000), f"{path}.max_iter", 1),
    )


def _scenario(doc: Any) -> dict[str, Any]:
    doc = _strict(doc, "scenario", {"theta", "weights", "shape", "tree"})
    kinds = [k for k in ("theta", "weights", "tree") if k in doc]
    if len(kinds) != 1:
        raise ConfigError("scenario", "exactly one of theta, weights or tree is required")
    kind = kinds[0]
    if kind == "theta":
        if "shape" in doc:
            raise ConfigError("scenario.shape", "only valid together with weights")
        return {"theta": _number(doc["theta"], "scenario.theta", 0.0, math.pi)}
    if kind == "weights":
        w = doc["weights"]
        if not isinstance(w, list) or not w:
            raise ConfigError("scenario.weights", "expected a non-empty list")
        w = [_number(x, f"scenario.weights[{j}]", 0.0) for j, x in enumerate(w)]
        if abs(sum(w) - 1) > 1e-9:
            raise ConfigError("scenario.weights", f"weights must sum to 1, got {sum(w):.12g}")
        out: dict[str, Any] = {"weights": w}
        if "shape" in doc:
            shape = doc["shape"]
            if not isinstance(shape, list) or not shape:
                raise ConfigError("scenario.shape", "expected a non-empty list of integers")
            shape = [_integer(k, f"scenario.shape[{j}]", 2) for j, k in enumerate(shape)]
            if math.prod(shape) != len(w):
                raise ConfigError("scenario.shape", f"product {math.prod(shape)} != {len(w)} weights")
            out["shape"] = shape
        elif len(w) < 2:
            raise ConfigError("scenario.weights", "need at least two outcomes")
        return out
    if "shape" in doc:
        raise ConfigError("scenario.shape", "only valid together with weights")
    tree = _strict(doc["tree"], "scenario.tree", {"dims", "prep"}, {"dims", "prep"})
    dims = tree["dims"]
    if not isinstance(dims, list) or not dims:
        raise ConfigError("scenario.tree.dims", "expected a non-empty list of integers")
    dims = [_integer(k, f"scenario.tree.dims[{j}]", 2) for j, k in enumerate(dims)]
    prep = tree["prep"]
    if not isinstance(prep, list) or len(prep) != math.prod(dims):
        raise ConfigError("scenario.tree.prep", f"expected {math.prod(dims)} amplitudes")
    amps = []
    for j, a in enumerate(prep):
        p = f"scenario.tree.prep[{j}]"
        if isinstance(a, list):
            if len(a) != 2:
                raise ConfigError(p, "complex amplitudes are [re, im] pairs")
            amps.append([_number(a[0], p), _number(a[1], p)])
        else:
            amps.append([_number(a, p), 0.0])
    if sum(re * re + im * im for re, im in amps) == 0:
        raise ConfigError("scenario.tree.prep", "prepared state is the zero vector")
    return {"tree": {"dims": dims, "prep": amps}}


def parse_config(document: str | dict) -> RunConfig:
    """Validate a JSON run configuration; unknown keys are errors."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed JSON: {exc}") from None
    else:
        doc = document
    doc = _strict(doc, "", {"scenario", "witness", "policy", "policies", "n_trials", "seed", "scan", "output"},
                  {"scenario", "policy", "n_trials", "seed"})
    witness = _strict(doc.get("witness", {}), "witness", {"epsilon", "n_modes"})
    epsilon = _number(witness.get("epsilon", 0.0), "witness.epsilon", 0.0, 1.0)
    n_modes = _integer(witness.get("n_modes", 1), "witness.n_modes", 0)
    policy = _policy(doc["policy"], "policy")
    if "policies" in doc:
        if not isinstance(doc["policies"], list) or not doc["policies"]:
            raise ConfigError("policies", "expected a non-empty list")
        policies = tuple(_policy(p, f"policies[{j}]") for j, p in enumerate(doc["policies"]))
    else:
        policies = tuple(PolicySpec(v.value, policy.overlap_dim, policy.tol, policy.max_iter) for v in Variant)
    scan = _strict(doc.get("scan", {}), "scan", {"epsilons", "max_modes"})
    eps_list = scan.get("epsilons", [0.5, 0.9])
    if not isinstance(eps_list, list) or not eps_list:
        raise ConfigError("scan.epsilons", "expected a non-empty list")
    scan_eps = tuple(_number(e, f"scan.epsilons[{j}]", 0.0, 1.0) for j, e in enumerate(eps_list))
    output = _strict(doc.get("output", {}), "output", {"dir"})
    out_dir = output.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output.dir", "expected a string path")
    return RunConfig(
        scenario=_scenario(doc["scenario"]),
        epsilon=epsilon,
        n_modes=n_modes,
        policy=policy,
        policies=policies,
        n_trials=_integer(doc["n_trials"], "n_trials", 1),
        seed=_integer(doc["seed"], "seed", 0, SEED_MASK),
        scan_epsilons=scan_eps,
        scan_max_modes=_integer(scan.get("max_modes", 20), "scan.max_modes", 1),
        output_dir=out_dir,
    )


# --- output -----------------------------------------------------------------

def write_atomic(out_dir: str | os.PathLike, files: dict[str, str]) -> None:
    """Write all ``files`` into ``out_dir`` or none of them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _stamp(cfg: RunConfig, body: dict[str, Any]) -> dict[str, Any]:
    return {"config": cfg.canonical(), "config_sha256": cfg.config_hash(), "seed": cfg.seed, **body}


def dispatch(cmd: str, cfg: RunConfig, workers: int = 1, out_dir: str | None = None,
             stdout=None) -> int:
    stdout = stdout or sys.stdout
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    preamble = f"seed={cfg.seed} config_sha256={cfg.config_hash()}"
    status = EXIT_OK

    if cmd in ("run", "born-test"):
        report = run_trials(cfg.build_scenario(), cfg.policy.build(), cfg.n_trials, cfg.seed, workers)
        body = report.to_dict()
        if cmd == "born-test":
            passed = report.chi2.p_value > BORN_P_THRESHOLD
            body["verdict"] = {"threshold": BORN_P_THRESHOLD, "born_consistent": passed}
            status = EXIT_OK if passed else EXIT_REJECTED
            print(f"born-test {report.policy}: chi2={report.chi2.statistic:.6g} dof={report.chi2.dof} "
                  f"p={report.chi2.p_value:.6g} -> {'PASS' if passed else 'REJECT'}", file=stdout)
        files = {"report.json": to_json(_stamp(cfg, body)), "leaves.csv": reports_to_csv([report], preamble)}
        print(f"wall time {report.wall_time:.3f} s", file=sys.stderr)
    elif cmd == "align-scan":
        rows = alignment_scan(cfg.scan_epsilons, cfg.scan_max_modes)
        slopes = {}
        for eps in cfg.scan_epsilons:
            if 0 < eps < 1:
                slopes[repr(eps)] = {"slope": fit_log_slope(rows, eps), "log_epsilon": math.log(eps)}
                print(f"epsilon={eps}: fitted slope {slopes[repr(eps)]['slope']:.6f}, "
                      f"log(epsilon) {math.log(eps):.6f}", file=stdout)
        files = {"align_scan.csv": scan_to_csv(rows, preamble),
                 "align_scan.json": to_json(_stamp(cfg, {"slopes": slopes}))}
    elif cmd == "compare-policies":
        cmp = compare_policies(cfg.build_scenario(), [p.build() for p in cfg.policies],
                               cfg.n_trials, cfg.seed, workers)
        print(cmp.to_text(), file=stdout)
        files = {"comparison.json": to_json(_stamp(cfg, cmp.to_dict())),
                 "leaves.csv": reports_to_csv(cmp.reports, preamble)}
    else:
        raise ValueError(f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")

    if out_dir is None:
        for name, text in files.items():
            if name.endswith(".json"):
                stdout.write(text)
    else:
        write_atomic(out_dir, files)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twoboundary", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory (default: config output.dir, else stdout)")
    ap.add_argument("--trials", type=int, help="override n_trials")
    ap.add_argument("--policy", help="override the policy variant name")
    ap.add_argument("--workers", type=int, default=1, help="worker threads for trials")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ConfigError("", "top level must be an object")
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.trials is not None:
            doc["n_trials"] = args.trials
        if args.policy is not None:
            pol = doc.get("policy", {})
            doc["policy"] = {**pol, "name": args.policy} if isinstance(pol, dict) else args.policy
        cfg = parse_config(doc)
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return dispatch(args.command, cfg, workers=args.workers, out_dir=args.out)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
