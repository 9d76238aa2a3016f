"""Dense complex linear algebra over composite finite-dimensional spaces.

States and operators are immutable wrappers around complex128 numpy arrays.
Index order of composite spaces is row-major over ``factor_dims`` (the first
factor is the most significant digit), matching ``numpy.kron``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-12
UNITARY_TOL = 1e-10
HERMITIAN_TOL = 1e-12
MAX_DENSE_DIM = 4096


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget."""

    def __init__(self, message: str, residual: float, n_iter: int):
        super().__init__(f"{message} (residual={residual:.3e} after {n_iter} iterations)")
        self.residual = residual
        self.n_iter = n_iter


@dataclass(frozen=True)
class CompositeSpace:
    factor_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims:
            raise ValueError("a space needs at least one factor")
        if any(d < 1 for d in dims):
            raise ValueError(f"factor dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "factor_dims", dims)

    @classmethod
    def of(cls, *dims: int) -> "CompositeSpace":
        return cls(tuple(dims))

    @property
    def total_dim(self) -> int:
        return math.prod(self.factor_dims)

    def tensor(self, other: "CompositeSpace") -> "CompositeSpace":
        return CompositeSpace(self.factor_dims + other.factor_dims)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.complex128, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    space: CompositeSpace
    amps: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = _frozen(self.amps).reshape(-1)
        object.__setattr__(self, "amps", amps)
        if amps.shape[0] != self.space.total_dim:
            raise ValueError(
                f"amplitude length {amps.shape[0]} does not match space dimension "
                f"{self.space.total_dim}"
            )
        if self.normalized and abs(self.norm_sq() - 1.0) > NORM_TOL:
            raise ValueError(f"state flagged normalized has norm^2 {self.norm_sq():.16g}")

    @classmethod
    def from_amps(cls, amps, dims: Sequence[int] | None = None, normalize: bool = False):
        """Wrap ``amps``; with ``normalize`` the vector is rescaled to unit norm."""
        amps = np.asarray(amps, dtype=np.complex128).reshape(-1)
        space = CompositeSpace(tuple(dims) if dims is not None else (amps.shape[0],))
        if normalize:
            nrm = np.linalg.norm(amps)
            if nrm == 0:
                raise ValueError("cannot normalize the zero vector")
            amps = amps / nrm
        return cls(space, amps, normalized=bool(normalize) or abs(np.vdot(amps, amps).real - 1) <= NORM_TOL)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def norm_sq(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def normalize(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amps / n, normalized=True)

    def scaled(self, c: complex) -> "StateVector":
        out = self.amps * c
        return StateVector(self.space, out, normalized=abs(np.vdot(out, out).real - 1) <= NORM_TOL)

    def __repr__(self):
        return f"StateVector(dims={self.space.factor_dims}, normalized={self.normalized})"


class OperatorKind(str, enum.Enum):
    UNITARY = "unitary"
    PROJECTOR = "projector"
    HERMITIAN = "hermitian"
    GENERAL = "general"


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True, eq=False)
class Operator:
    space: CompositeSpace
    entries: np.ndarray
    kind: OperatorKind = OperatorKind.GENERAL

    def __post_init__(self):
        m = _frozen(self.entries)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"operator shape {m.shape} does not match space dimension {n}")
        kind = OperatorKind(self.kind)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "kind", kind)
        if kind is OperatorKind.UNITARY:
            err = _max_abs(m.conj().T @ m - np.eye(n))
            if err > UNITARY_TOL:
                raise ValueError(f"matrix is not unitary (max |U^dag U - I| = {err:.3e})")
        elif kind is OperatorKind.PROJECTOR:
            err = max(_max_abs(m @ m - m), _max_abs(m.conj().T - m))
            if err > UNITARY_TOL:
                raise ValueError(f"matrix is not an orthogonal projector (error {err:.3e})")
        elif kind is OperatorKind.HERMITIAN:
            err = _max_abs(m.conj().T - m)
            if err > HERMITIAN_TOL:
                raise ValueError(f"matrix is not hermitian (max |H^dag - H| = {err:.3e})")

    @classmethod
    def from_matrix(cls, entries, kind=OperatorKind.GENERAL, dims: Sequence[int] | None = None):
        entries = np.asarray(entries, dtype=np.complex128)
        space = CompositeSpace(tuple(dims) if dims is not None else (entries.shape[0],))
        return cls(space, entries, kind)

    @classmethod
    def identity(cls, space: CompositeSpace) -> "Operator":
        return cls(space, np.eye(space.total_dim), OperatorKind.UNITARY)

    @classmethod
    def projector_onto(cls, vectors: Sequence[StateVector]) -> "Operator":
        """Orthogonal projector onto the span of ``vectors`` (need not be orthonormal)."""
        space = vectors[0].space
        mat = np.column_stack([v.amps for v in vectors])
        q, r = np.linalg.qr(mat)
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-12))
        q = q[:, :rank]
        return cls(space, q @ q.conj().T, OperatorKind.PROJECTOR)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    @property
    def dagger(self) -> "Operator":
        return Operator(self.space, self.entries.conj().T, self.kind)

    def __matmul__(self, other: "Operator") -> "Operator":
        if other.space.total_dim != self.space.total_dim:
            raise ValueError("operator dimension mismatch")
        kind = OperatorKind.GENERAL
        if self.kind is OperatorKind.UNITARY and other.kind is OperatorKind.UNITARY:
            kind = OperatorKind.UNITARY
        return Operator(self.space, self.entries @ other.entries, kind)

    def tensor(self, other: "Operator") -> "Operator":
        kind = self.kind if self.kind is other.kind else OperatorKind.GENERAL
        return Operator(self.space.tensor(other.space), np.kron(self.entries, other.entries), kind)

    def commutes_with(self, other: "Operator", tol: float = UNITARY_TOL) -> bool:
        a, b = self.entries, other.entries
        return _max_abs(a @ b - b @ a) <= tol

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def __repr__(self):
        return f"Operator(dims={self.space.factor_dims}, kind={self.kind.value})"


def basis_state(space: CompositeSpace | int, index: int) -> StateVector:
    if isinstance(space, int):
        space = CompositeSpace((space,))
    amps = np.zeros(space.total_dim, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector(space, amps, normalized=True)


def tensor(a: StateVector, b: StateVector) -> StateVector:
    return StateVector(
        a.space.tensor(b.space),
        np.kron(a.amps, b.amps),
        normalized=a.normalized and b.normalized,
    )


def apply(op: Operator, psi: StateVector) -> StateVector:
    if op.space.total_dim != psi.space.total_dim:
        raise ValueError(
            f"dimension mismatch: operator {op.space.total_dim}, state {psi.space.total_dim}"
        )
    out = op.entries @ psi.amps
    normalized = psi.normalized and op.kind is OperatorKind.UNITARY
    if normalized:
        # renormalize drift at the ulp level so chained unitaries keep the flag valid
        out = out / np.linalg.norm(out)
    return StateVector(psi.space, out, normalized=normalized)


def inner(a: StateVector, b: StateVector) -> complex:
    """Return ``<a|b> = sum conj(a_k) b_k``."""
    if a.space.total_dim != b.space.total_dim:
        raise ValueError(f"dimension mismatch: {a.space.total_dim} vs {b.space.total_dim}")
    return complex(np.vdot(a.amps, b.amps))


def haar_random_state(dim: int, rng: np.random.Generator) -> StateVector:
    """Draw a unit vector uniformly from the complex sphere of dimension ``dim``."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    z /= np.linalg.norm(z)
    return StateVector(CompositeSpace((dim,)), z, normalized=True)


def haar_random_unitary(dim: int, rng: np.random.Generator) -> Operator:
    """Haar-distributed unitary via QR of a Ginibre matrix with phase fix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    return Operator(CompositeSpace((dim,)), q, OperatorKind.UNITARY)


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so its largest-magnitude component is real and non-negative."""
    k = int(np.argmax(np.abs(v)))
    if v[k] == 0:
        return v
    return v * (abs(v[k]) / v[k])


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: StateVector
    residual: float
    n_iter: int
    gap: float
    degenerate: bool = field(default=False)


def _power_iterate(h: np.ndarray, v: np.ndarray, tol: float, max_iter: int):
    """Return ``(lambda, v, residual, n_iter, converged)``."""
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = h @ v
        lam = float(np.vdot(v, w).real)
        res = float(np.linalg.norm(w - lam * v))
        if res <= tol:
            return lam, v, res, it, True
        nrm = np.linalg.norm(w)
        if nrm == 0:
            # v lies in the kernel; h has no positive eigenvalue reachable from here
            return 0.0, v, 0.0, it, True
        v = w / nrm
    return lam, v, res, max_iter, False


def dominant_eigenpair(h: Operator, tol: float = 1e-12, max_iter: int = 100_000, start=None) -> EigenPair:
    """Largest eigenvalue and unit eigenvector of a hermitian PSD operator.

    Plain power iteration, stopped once ``||Hv - lambda v|| <= tol``. The
    runner-up eigenvalue is estimated by a second power iteration on the
    deflated matrix ``H - lambda v v^dag``; a spectral gap below ``tol`` marks
    the result as degenerate (the returned vector is then an arbitrary
    element of the top eigenspace).

    The default start vector is a fixed pseudo-random combination, so results
    are reproducible without an external stream.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    m = np.asarray(h.entries)
    if _max_abs(m.conj().T - m) > HERMITIAN_TOL * max(1.0, _max_abs(m)):
        raise ValueError("dominant_eigenpair needs a hermitian operator")
    n = m.shape[0]
    scale = _max_abs(m)
    if scale == 0:
        v = np.zeros(n, dtype=np.complex128)
        v[0] = 1
        return EigenPair(0.0, StateVector(h.space, v, True), 0.0, 0, 0.0, degenerate=n > 1)

    g = np.random.default_rng(0x5EED)
    if start is None:
        start = g.standard_normal(n) + 1j * g.standard_normal(n)
    v0 = np.asarray(start, dtype=np.complex128)
    v0 = v0 / np.linalg.norm(v0)

    lam, v, res, it, ok = _power_iterate(m, v0, tol, max_iter)
    if not ok:
        raise ConvergenceError("power iteration did not converge", res, it)
    v = fix_phase(v / np.linalg.norm(v))

    if n == 1:
        gap = math.inf
    else:
        deflated = m - lam * np.outer(v, v.conj())
        # fresh start: v0's own top-eigenspace component is v itself, so it
        # would be blind to a degenerate partner
        u0 = g.standard_normal(n) + 1j * g.standard_normal(n)
        u0 = u0 - np.vdot(v, u0) * v
        u0 /= np.linalg.norm(u0)
        # an unconverged run still leaves a Rayleigh quotient <= lambda_2
        lam2 = _power_iterate(deflated, u0, tol, max_iter)[0]
        gap = lam - lam2
    return EigenPair(
        value=lam,
        vector=StateVector(h.space, v, normalized=True),
        residual=res,
        n_iter=it,
        gap=gap,
        degenerate=gap < tol,
    )
