"""Dense statevector simulation with strided in-place gate kernels.

Conventions used throughout the package:

* Qubit ``q`` is bit ``q`` of the basis index (qubit 0 is the least
  significant bit). A bit string is written most significant qubit first,
  so ``"10"`` on two qubits is basis index 2.
* Pauli rotations use the full-angle convention ``R_P(theta) = exp(-i theta P)``.
  Every parameterized loss is therefore pi-periodic in each angle.
* ``CRY`` is the one exception: it is the conventional controlled
  ``RY(theta) = exp(-i theta Y / 2)``. It is never used in trainable models.

Kernels operate in place on C-contiguous arrays whose last axis holds the
``2**n`` amplitudes, so the same code path evolves a single state or a batch
of states at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidArgumentError

GATE_KINDS = ("PauliX", "Rx", "Rz", "Rxx", "Ryy", "Rzz", "CRY")
ONE_QUBIT_KINDS = frozenset({"PauliX", "Rx", "Rz"})
TWO_QUBIT_KINDS = frozenset({"Rxx", "Ryy", "Rzz", "CRY"})


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise InvalidArgumentError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        arity = 1 if self.kind in ONE_QUBIT_KINDS else 2
        if len(targets) != arity:
            raise InvalidArgumentError(
                f"{self.kind} acts on {arity} qubit(s), got targets {targets}"
            )
        if len(set(targets)) != len(targets):
            raise InvalidArgumentError(f"gate targets must be distinct, got {targets}")
        if any(t < 0 for t in targets):
            raise InvalidArgumentError(f"negative qubit index in {targets}")
        if self.kind == "PauliX":
            if self.angle is not None:
                raise InvalidArgumentError("PauliX takes no angle")
        elif self.angle is None or not np.isfinite(self.angle):
            raise InvalidArgumentError(f"{self.kind} needs a finite angle")


@dataclass
class Statevector:
    num_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.num_qubits < 1:
            raise InvalidArgumentError("num_qubits must be >= 1")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise InvalidArgumentError(
                f"expected {2**self.num_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def basis_index(bits: str) -> int:
    if not bits or any(c not in "01" for c in bits):
        raise InvalidArgumentError(f"not a bit string: {bits!r}")
    return int(bits, 2)


def index_to_bits(index: int, width: int) -> str:
    return format(int(index), f"0{width}b") if width > 0 else ""


def init_basis_state(num_qubits: int, bits: str) -> Statevector:
    """Computational basis state ``|bits>`` (leftmost character is the highest qubit)."""
    if num_qubits < 1:
        raise InvalidArgumentError("num_qubits must be >= 1")
    if len(bits) != num_qubits:
        raise InvalidArgumentError(
            f"bit string length {len(bits)} does not match num_qubits={num_qubits}"
        )
    amps = np.zeros(2**num_qubits, dtype=np.complex128)
    amps[basis_index(bits)] = 1.0
    return Statevector(num_qubits, amps)


def gate_matrix(gate: Gate) -> np.ndarray:
    """Small unitary of ``gate``; two-qubit rows/cols are indexed ``2*bit(t0) + bit(t1)``."""
    return rotation_matrix(gate.kind, gate.angle)


@numba.njit(cache=True)
def _apply_1q(amps, q, m):
    rows, dim = amps.shape
    bit = 1 << q
    for r in range(rows):
        for i0 in range(dim):
            if i0 & bit:
                continue
            i1 = i0 | bit
            x0 = amps[r, i0]
            x1 = amps[r, i1]
            amps[r, i0] = m[0, 0] * x0 + m[0, 1] * x1
            amps[r, i1] = m[1, 0] * x0 + m[1, 1] * x1


@numba.njit(cache=True)
def _apply_2q(amps, a, b, m):
    # local index 2*bit(a) + bit(b)
    rows, dim = amps.shape
    ma = 1 << a
    mb = 1 << b
    for r in range(rows):
        for i0 in range(dim):
            if i0 & ma or i0 & mb:
                continue
            i1 = i0 | mb
            i2 = i0 | ma
            i3 = i2 | mb
            x0 = amps[r, i0]
            x1 = amps[r, i1]
            x2 = amps[r, i2]
            x3 = amps[r, i3]
            amps[r, i0] = m[0, 0] * x0 + m[0, 1] * x1 + m[0, 2] * x2 + m[0, 3] * x3
            amps[r, i1] = m[1, 0] * x0 + m[1, 1] * x1 + m[1, 2] * x2 + m[1, 3] * x3
            amps[r, i2] = m[2, 0] * x0 + m[2, 1] * x1 + m[2, 2] * x2 + m[2, 3] * x3
            amps[r, i3] = m[3, 0] * x0 + m[3, 1] * x1 + m[3, 2] * x2 + m[3, 3] * x3


def apply_matrix(amps: np.ndarray, targets, matrix: np.ndarray) -> None:
    """Apply a 2x2 or 4x4 unitary in place to the last axis of C-contiguous ``amps``.

    Only amplitude pairs/quadruples selected by the target bit masks are
    touched; no full-size matrix is ever formed.
    """
    if not amps.flags.c_contiguous:
        raise InvalidArgumentError("amplitude arrays must be C-contiguous")
    rows = amps.reshape(-1, amps.shape[-1])
    m = np.ascontiguousarray(matrix, dtype=np.complex128)
    if len(targets) == 1:
        _apply_1q(rows, targets[0], m)
    else:
        _apply_2q(rows, targets[0], targets[1], m)


def rotation_matrix(kind: str, angle) -> np.ndarray:
    if kind == "PauliX":
        return np.array([[0, 1], [1, 0]], dtype=np.complex128)
    c, s = np.cos(angle), np.sin(angle)
    if kind == "Rx":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "Rz":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    if kind == "Rxx":
        return np.array([[c, 0, 0, -1j * s], [0, c, -1j * s, 0],
                         [0, -1j * s, c, 0], [-1j * s, 0, 0, c]])
    if kind == "Ryy":
        return np.array([[c, 0, 0, 1j * s], [0, c, -1j * s, 0],
                         [0, -1j * s, c, 0], [1j * s, 0, 0, c]])
    if kind == "Rzz":
        return np.diag([c - 1j * s, c + 1j * s, c + 1j * s, c - 1j * s])
    if kind == "CRY":
        # conventional half-angle RY on the target when the control is 1
        ch, sh = np.cos(angle / 2), np.sin(angle / 2)
        m = np.eye(4, dtype=np.complex128)
        m[2:, 2:] = [[ch, -sh], [sh, ch]]
        return m
    raise InvalidArgumentError(f"unknown gate kind {kind!r}")


def apply_gate_inplace(amps: np.ndarray, num_qubits: int, gate: Gate) -> None:
    """Evolve ``amps`` (shape ``(..., 2**num_qubits)``) in place by ``gate``."""
    if any(t >= num_qubits for t in gate.targets):
        raise InvalidArgumentError(
            f"gate targets {gate.targets} out of range for {num_qubits} qubit(s)"
        )
    apply_kernel(amps, num_qubits, gate.kind, gate.targets, gate.angle)


def apply_kernel(amps, n, kind, targets, angle) -> None:
    """Unchecked in-place kernel behind :func:`apply_gate_inplace`."""
    apply_matrix(amps, targets, rotation_matrix(kind, angle))


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    amps = state.amplitudes.copy()
    apply_gate_inplace(amps, state.num_qubits, gate)
    return Statevector(state.num_qubits, amps)


def apply_circuit(state: Statevector, gates) -> Statevector:
    amps = state.amplitudes.copy()
    for gate in gates:
        apply_gate_inplace(amps, state.num_qubits, gate)
    return Statevector(state.num_qubits, amps)


def _check_qubit_list(qubits, n: int) -> list[int]:
    qubits = [int(q) for q in qubits]
    if len(set(qubits)) != len(qubits):
        raise InvalidArgumentError(f"duplicate qubit indices in {qubits}")
    if any(q < 0 or q >= n for q in qubits):
        raise InvalidArgumentError(f"qubit indices {qubits} out of range for {n} qubit(s)")
    return qubits


def marginal_from_probs(probs: np.ndarray, num_qubits: int, qubits) -> np.ndarray:
    """Marginalize ``probs`` (shape ``(..., 2**n)``) onto ``qubits``.

    Entry ``j`` of the result has bit ``k`` equal to the value of ``qubits[k]``.
    """
    n = num_qubits
    qubits = _check_qubit_list(qubits, n)
    lead = probs.shape[:-1]
    nl = len(lead)
    tensor = probs.reshape(lead + (2,) * n)
    # axis of qubit q is nl + (n - 1 - q)
    keep = [nl + n - 1 - q for q in reversed(qubits)]
    drop = tuple(nl + n - 1 - q for q in range(n) if q not in qubits)
    summed = tensor.sum(axis=drop) if drop else tensor
    # remaining axes appear in increasing original-axis order; reorder to `keep`
    remaining = sorted(keep)
    order = list(range(nl)) + [nl + remaining.index(ax) for ax in keep]
    return np.transpose(summed, order).reshape(lead + (2 ** len(qubits),))


def marginal_probabilities(state: Statevector, qubits) -> np.ndarray:
    return marginal_from_probs(state.probabilities(), state.num_qubits, qubits)


def sample(state: Statevector, qubits, shots: int, seed: int) -> dict[str, int]:
    """Multinomial histogram of measurement outcomes on ``qubits``.

    Keys are bit strings with ``qubits[-1]`` leftmost; zero-count outcomes are omitted.
    """
    if shots < 1:
        raise InvalidArgumentError("shots must be >= 1")
    probs = marginal_probabilities(state, qubits)
    probs = probs / probs.sum()
    counts = np.random.default_rng(seed).multinomial(shots, probs)
    width = len(probs).bit_length() - 1
    return {index_to_bits(k, width): int(c) for k, c in enumerate(counts) if c}
