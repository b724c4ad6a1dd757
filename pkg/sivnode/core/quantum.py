"""
Fixed-dimension quantum-state utilities shared by the physics services.

Subsystem order is photon ⊗ nucleus ⊗ electron everywhere (leftmost index
varies slowest). Qubit basis: |0⟩ = ↓ (or early bin), |1⟩ = ↑ (or late bin).
Heralded maps return unnormalized states plus their success probability;
normalizing is left to the caller.
"""

import cmath
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from sivnode.core.errors import DimensionError, InvalidStateError

logger = logging.getLogger(__name__)

MAX_DIM = 64
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-8
UNITARY_TOL = 1e-10
KRAUS_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=complex, copy=True)
    out.setflags(write=False)
    return out


def check_amplitude(value: complex) -> complex:
    """Return value as a finite complex number."""
    value = complex(value)
    if not cmath.isfinite(value):
        raise InvalidStateError(f"Non-finite amplitude: {value!r}")
    return value


def _check_square(entries: np.ndarray) -> int:
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {entries.shape}")
    dim = entries.shape[0]
    if dim < 1:
        raise DimensionError("Dimension must be positive")
    if dim > MAX_DIM:
        raise DimensionError(f"Dimension {dim} exceeds maximum {MAX_DIM}")
    if not np.all(np.isfinite(entries)):
        raise InvalidStateError("Matrix has non-finite entries")
    return dim


@dataclass(frozen=True)
class DensityMatrix:
    """
    Density operator on a small Hilbert space.

    `unnormalized` marks conditional (heralded) states whose trace is the
    success probability; trace is not checked for those.
    """

    entries: np.ndarray
    unnormalized: bool = False
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        entries = _frozen(self.entries)
        object.__setattr__(self, "entries", entries)
        _check_square(entries)
        if not self.check:
            return
        if np.max(np.abs(entries - entries.conj().T)) > HERMITIAN_TOL:
            raise InvalidStateError("Density matrix is not Hermitian")
        tr = float(np.real(np.trace(entries)))
        if not self.unnormalized and abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"Density matrix trace {tr} != 1")
        eigs = np.linalg.eigvalsh((entries + entries.conj().T) / 2)
        if eigs.min() < -PSD_TOL:
            raise InvalidStateError(
                f"Density matrix is not positive semidefinite (min eigenvalue {eigs.min():.3e})"
            )

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_ket(cls, ket: Sequence[complex]) -> "DensityMatrix":
        vec = np.asarray(ket, dtype=complex).reshape(-1)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise InvalidStateError("Zero state vector")
        vec = vec / norm
        return cls(np.outer(vec, vec.conj()))

    @classmethod
    def basis(cls, dim: int, index: int) -> "DensityMatrix":
        entries = np.zeros((dim, dim), dtype=complex)
        entries[index, index] = 1.0
        return cls(entries)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)

    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    def normalized(self) -> tuple["DensityMatrix", float]:
        """Return (normalized state, trace)."""
        tr = self.trace()
        if tr <= 0:
            raise InvalidStateError("Cannot normalize a state with zero trace")
        return DensityMatrix(self.entries / tr), tr

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()

    def expectation(self, operator: np.ndarray) -> float:
        return float(np.real(np.trace(self.entries @ operator)))


@dataclass(frozen=True)
class UnitaryOperator:
    """Gate propagator; U†U = I is checked on construction."""

    entries: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        entries = _frozen(self.entries)
        object.__setattr__(self, "entries", entries)
        dim = _check_square(entries)
        if self.check:
            err = np.max(np.abs(entries.conj().T @ entries - np.eye(dim)))
            if err > UNITARY_TOL:
                raise InvalidStateError(f"Operator is not unitary (deviation {err:.3e})")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "UnitaryOperator":
        return cls(np.eye(dim, dtype=complex))

    def dagger(self) -> "UnitaryOperator":
        return UnitaryOperator(self.entries.conj().T, check=False)

    def then(self, other: "UnitaryOperator") -> "UnitaryOperator":
        """Apply self first, then other."""
        if other.dim != self.dim:
            raise DimensionError(f"Cannot compose dims {self.dim} and {other.dim}")
        return UnitaryOperator(other.entries @ self.entries, check=False)

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        if rho.dim != self.dim:
            raise DimensionError(f"Unitary dim {self.dim} does not match state dim {rho.dim}")
        u = self.entries
        return DensityMatrix(u @ rho.entries @ u.conj().T, unnormalized=rho.unnormalized, check=False)


@dataclass(frozen=True)
class KrausChannel:
    """
    Completely positive map Σ K ρ K†.

    Trace-preserving channels satisfy Σ K†K = I; `selective` channels
    (heralded branches) only need Σ K†K ≤ I.
    """

    operators: tuple
    selective: bool = False

    def __post_init__(self) -> None:
        ops = tuple(_frozen(op) for op in self.operators)
        if not ops:
            raise InvalidStateError("Channel needs at least one Kraus operator")
        dim = _check_square(ops[0])
        for op in ops:
            if op.shape != (dim, dim):
                raise DimensionError("Kraus operators must share one square shape")
        object.__setattr__(self, "operators", ops)
        total = sum(op.conj().T @ op for op in ops)
        if self.selective:
            eigs = np.linalg.eigvalsh((total + total.conj().T) / 2)
            if eigs.max() > 1 + KRAUS_TOL:
                raise InvalidStateError("Selective channel has Σ K†K > I")
        elif np.max(np.abs(total - np.eye(dim))) > KRAUS_TOL:
            raise InvalidStateError("Channel is not trace preserving")

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]


def tensor_product(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    if a.dim * b.dim > MAX_DIM:
        raise DimensionError(f"Tensor product dim {a.dim * b.dim} exceeds maximum {MAX_DIM}")
    return DensityMatrix(
        np.kron(a.entries, b.entries),
        unnormalized=a.unnormalized or b.unnormalized,
        check=False,
    )


def kron_all(matrices: Iterable[np.ndarray]) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in matrices:
        out = np.kron(out, m)
    return out


def partial_trace(rho: DensityMatrix, keep: Iterable[int], dims: Sequence[int]) -> DensityMatrix:
    """Trace out every subsystem not listed in `keep` (indices into dims)."""
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != rho.dim:
        raise DimensionError(f"Subsystem dims {dims} do not multiply to {rho.dim}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"Keep indices {keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    tensor = rho.entries.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # contract from the highest index so remaining axis numbers stay valid
    for count, i in enumerate(sorted(traced, reverse=True)):
        remaining = n - count
        tensor = np.trace(tensor, axis1=i, axis2=i + remaining)
    kept_dim = int(np.prod([dims[k] for k in keep])) if keep else 1
    return DensityMatrix(
        tensor.reshape(kept_dim, kept_dim), unnormalized=rho.unnormalized, check=False
    )


def bell_overlap(rho: DensityMatrix) -> float:
    """⟨Φ⁺|ρ|Φ⁺⟩ for a two-qubit state, Φ⁺ = (|00⟩ + |11⟩)/√2."""
    if rho.dim != 4:
        raise DimensionError(f"Bell overlap needs a 4-dim state, got {rho.dim}")
    e = rho.entries
    return float(0.5 * np.real(e[0, 0] + e[3, 3] + 2 * e[0, 3]))


def apply_channel(rho: DensityMatrix, channel: KrausChannel) -> DensityMatrix:
    if channel.dim != rho.dim:
        raise DimensionError(f"Channel dim {channel.dim} does not match state dim {rho.dim}")
    out = sum(k @ rho.entries @ k.conj().T for k in channel.operators)
    return DensityMatrix(out, unnormalized=rho.unnormalized or channel.selective, check=False)


def apply_selective(rho: DensityMatrix, channel: KrausChannel) -> tuple[DensityMatrix, float]:
    """Heralded branch: (unnormalized conditional state, success probability)."""
    out = apply_channel(rho, channel)
    prob = out.trace() / rho.trace()
    return DensityMatrix(out.entries, unnormalized=True, check=False), prob


def _weyl_operators(dim: int) -> list[np.ndarray]:
    shift = np.roll(np.eye(dim, dtype=complex), 1, axis=0)
    omega = np.exp(2j * np.pi / dim)
    clock = np.diag(omega ** np.arange(dim))
    ops = []
    for a in range(dim):
        for b in range(dim):
            ops.append(np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b))
    return ops


def depolarizing_channel(p: float, dim: int = 2) -> KrausChannel:
    """ρ → (1 − p) ρ + p I/d."""
    if not 0.0 <= p <= 1.0:
        raise InvalidStateError(f"Depolarizing strength {p} outside [0, 1]")
    weyl = _weyl_operators(dim)
    ops = [np.sqrt(1 - p + p / dim**2) * weyl[0]]
    ops += [np.sqrt(p) / dim * w for w in weyl[1:]]
    return KrausChannel(tuple(ops))


def dephasing_channel(p: float) -> KrausChannel:
    """Qubit dephasing; off-diagonal entries shrink by (1 − p)."""
    if not 0.0 <= p <= 1.0:
        raise InvalidStateError(f"Dephasing strength {p} outside [0, 1]")
    return KrausChannel((np.sqrt(1 - p / 2) * I2, np.sqrt(p / 2) * PAULI_Z))


def pauli_channel(px: float, py: float, pz: float) -> KrausChannel:
    pi = 1.0 - px - py - pz
    if min(px, py, pz, pi) < 0:
        raise InvalidStateError("Pauli channel probabilities must be non-negative and sum ≤ 1")
    return KrausChannel(
        (np.sqrt(pi) * I2, np.sqrt(px) * PAULI_X, np.sqrt(py) * PAULI_Y, np.sqrt(pz) * PAULI_Z)
    )


def embed_channel(channel: KrausChannel, dims: Sequence[int], target: int) -> KrausChannel:
    """Lift a single-subsystem channel onto one factor of a product space."""
    ops = []
    for k in channel.operators:
        factors = [np.eye(d, dtype=complex) for d in dims]
        factors[target] = k
        ops.append(kron_all(factors))
    return KrausChannel(tuple(ops), selective=channel.selective)


def process_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """|Tr(U†V)|² / d²."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise DimensionError(f"Shapes {u.shape} and {v.shape} differ")
    d = u.shape[0]
    return float(abs(np.trace(u.conj().T @ v)) ** 2 / d**2)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    if a.dim != b.dim:
        raise DimensionError("States have different dimensions")
    eigs = np.linalg.eigvalsh(a.entries - b.entries)
    return float(0.5 * np.sum(np.abs(eigs)))


def bell_state(kind: str = "phi+") -> DensityMatrix:
    kets = {
        "phi+": [1, 0, 0, 1],
        "phi-": [1, 0, 0, -1],
        "psi+": [0, 1, 1, 0],
        "psi-": [0, 1, -1, 0],
    }
    if kind not in kets:
        raise InvalidStateError(f"Unknown Bell state {kind!r}")
    return DensityMatrix.from_ket(kets[kind])


def random_density_matrix(dim: int, rng: np.random.Generator, rank: Optional[int] = None) -> DensityMatrix:
    """Ginibre-ensemble state, used by property tests and fuzzing."""
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.real(np.trace(m)))


def random_unitary(dim: int, rng: np.random.Generator) -> UnitaryOperator:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return UnitaryOperator(q * phases)


def random_channel(dim: int, n_ops: int, rng: np.random.Generator) -> KrausChannel:
    """Random CPTP map built from an isometry (Stinespring)."""
    big = random_unitary(dim * n_ops, rng).entries[:, :dim]
    ops = tuple(big[i * dim:(i + 1) * dim, :] for i in range(n_ops))
    return KrausChannel(ops)
