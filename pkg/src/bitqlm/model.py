"""Layered QLM circuits built from two-qubit entangling nodes.

A node on qubits ``(a, b)`` holds nine consecutive angles::

    [Euler(a): t1 t2 t3 | Euler(b): t1 t2 t3 | Heisenberg(a, b): txx tyy tzz]

with ``Euler(t1, t2, t3) = Rx(t1) Rz(t2) Rx(t3)`` as an operator product (so
``Rx(t3)`` acts first in time) and ``Heisenberg = Rxx Ryy Rzz``. Both Euler
blocks act before the Heisenberg block. After all layers every qubit gets a
final Euler triple. All-zero angles give the identity circuit.

For classification the inputs sit on qubits ``0 .. Nx-1`` and the ``Ny``
output qubits ``Nx .. Nq-1`` start in ``|0>``. For dynamics ``Ny = 0`` and the
output is read from every qubit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .encoder import EncoderSpec
from .errors import InvalidArgumentError, ParseError, StructureMismatchError
from .simulator import GATE_KINDS, Gate, apply_kernel, apply_matrix, basis_index, rotation_matrix

FORMAT_NAME = "bitqlm-model"
FORMAT_VERSION = 1
TASKS = ("classification", "dynamics")

NODE_GATES = ("Rx", "Rz", "Rx", "Rx", "Rz", "Rx", "Rxx", "Ryy", "Rzz")
FINAL_GATES = ("Rx", "Rz", "Rx")
PARAMS_PER_NODE = len(NODE_GATES)
PARAMS_PER_EULER = len(FINAL_GATES)


@dataclass(frozen=True)
class NodeSpec:
    qubit_a: int
    qubit_b: int
    param_offset: int


@dataclass(frozen=True)
class CircuitLayout:
    num_input_qubits: int
    num_output_qubits: int
    layers: tuple

    def __post_init__(self):
        nx, ny = int(self.num_input_qubits), int(self.num_output_qubits)
        if nx < 1 or ny < 0:
            raise InvalidArgumentError(f"need Nx >= 1 and Ny >= 0, got Nx={nx}, Ny={ny}")
        nq = nx + ny
        layers = tuple(
            tuple((int(a), int(b)) for a, b in layer) for layer in self.layers
        )
        object.__setattr__(self, "num_input_qubits", nx)
        object.__setattr__(self, "num_output_qubits", ny)
        object.__setattr__(self, "layers", layers)
        if nq < 2:
            raise InvalidArgumentError("a layout needs at least two qubits")
        touched = set()
        for li, layer in enumerate(layers):
            used = set()
            for a, b in layer:
                if a == b:
                    raise InvalidArgumentError(f"layer {li}: node acts twice on qubit {a}")
                if not (0 <= a < nq and 0 <= b < nq):
                    raise InvalidArgumentError(
                        f"layer {li}: node ({a}, {b}) out of range for {nq} qubits"
                    )
                if a in used or b in used:
                    raise InvalidArgumentError(
                        f"layer {li}: nodes must act on disjoint qubit pairs"
                    )
                used.update((a, b))
            touched |= used
        dead = sorted(set(range(nq)) - touched)
        if dead:
            raise InvalidArgumentError(f"qubits {dead} are not touched by any node")

    @property
    def num_qubits(self) -> int:
        return self.num_input_qubits + self.num_output_qubits

    @property
    def nodes(self) -> list[NodeSpec]:
        out = []
        for layer in self.layers:
            for a, b in layer:
                out.append(NodeSpec(a, b, PARAMS_PER_NODE * len(out)))
        return out

    @property
    def num_nodes(self) -> int:
        return sum(len(layer) for layer in self.layers)

    @property
    def final_euler_offset(self) -> int:
        return PARAMS_PER_NODE * self.num_nodes

    @property
    def parameter_count(self) -> int:
        return PARAMS_PER_NODE * self.num_nodes + PARAMS_PER_EULER * self.num_qubits

    @property
    def output_qubits(self) -> list[int]:
        if self.num_output_qubits == 0:
            return list(range(self.num_qubits))
        return list(range(self.num_input_qubits, self.num_qubits))


def build_brickwork_layout(num_input_qubits: int, num_output_qubits: int, num_layers: int) -> CircuitLayout:
    """Alternating brickwork: layers 1, 3, ... pair (0,1),(2,3),...; layers 2, 4, ... pair (1,2),(3,4),..."""
    if num_layers < 1:
        raise InvalidArgumentError("num_layers must be >= 1")
    nq = num_input_qubits + num_output_qubits
    if nq < 2:
        raise InvalidArgumentError("brickwork needs at least two qubits")
    layers = []
    for layer in range(num_layers):
        start = layer % 2
        layers.append([(q, q + 1) for q in range(start, nq - 1, 2)])
    return CircuitLayout(num_input_qubits, num_output_qubits, layers)


def build_subnet_layout(
    small: CircuitLayout,
    num_input_qubits: int,
    num_output_qubits: int,
    num_layers: int,
    embedding: Mapping[int, int],
) -> CircuitLayout:
    """Embedded copy of ``small``'s layers followed by ``num_layers`` of brickwork.

    The result always admits ``small`` as a sub-network under ``embedding``,
    which brickwork alone does not when embedded qubits are not adjacent.
    """
    _check_embedding(small, num_input_qubits + num_output_qubits, embedding)
    head = [[(embedding[a], embedding[b]) for a, b in layer] for layer in small.layers]
    tail = build_brickwork_layout(num_input_qubits, num_output_qubits, num_layers).layers
    return CircuitLayout(num_input_qubits, num_output_qubits, head + list(tail))


def compile_program(layout: CircuitLayout) -> list[tuple[str, tuple[int, ...], int]]:
    """Time-ordered ``(kind, targets, param_index)`` triples; one gate per parameter."""
    prog = []
    for node in layout.nodes:
        p = node.param_offset
        for q, off in ((node.qubit_a, p), (node.qubit_b, p + 3)):
            prog += [("Rx", (q,), off + 2), ("Rz", (q,), off + 1), ("Rx", (q,), off)]
        pair = (node.qubit_a, node.qubit_b)
        prog += [("Rzz", pair, p + 8), ("Ryy", pair, p + 7), ("Rxx", pair, p + 6)]
    base = layout.final_euler_offset
    for q in range(layout.num_qubits):
        off = base + PARAMS_PER_EULER * q
        prog += [("Rx", (q,), off + 2), ("Rz", (q,), off + 1), ("Rx", (q,), off)]
    return prog


def compile_blocks(layout: CircuitLayout) -> list[tuple[int, int, tuple[int, ...]]]:
    """``(start, stop, targets)`` program ranges that fuse into one small unitary each:
    one 4x4 block per node, one 2x2 block per final Euler triple."""
    blocks = [(9 * i, 9 * i + 9, (n.qubit_a, n.qubit_b)) for i, n in enumerate(layout.nodes)]
    base = PARAMS_PER_NODE * layout.num_nodes
    for q in range(layout.num_qubits):
        blocks.append((base + 3 * q, base + 3 * q + 3, (q,)))
    return blocks


_I2 = np.eye(2, dtype=np.complex128)


def fuse(program, targets, params, replace=None) -> np.ndarray:
    """Product of the gates in ``program`` as a matrix on ``targets``.

    ``replace`` optionally maps one parameter index to a substitute angle.
    """
    u = np.eye(2 ** len(targets), dtype=np.complex128)
    for kind, gate_targets, k in program:
        angle = replace[1] if replace is not None and replace[0] == k else params[k]
        g = rotation_matrix(kind, angle)
        if len(targets) == 2 and len(gate_targets) == 1:
            g = np.kron(g, _I2) if gate_targets[0] == targets[0] else np.kron(_I2, g)
        u = g @ u
    return u


@dataclass
class QlmModel:
    layout: CircuitLayout
    params: np.ndarray
    task: str = "classification"
    encoder: object = None
    _program: list = field(default=None, init=False, repr=False, compare=False)
    _blocks: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidArgumentError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "dynamics" and self.layout.num_output_qubits != 0:
            raise InvalidArgumentError("dynamics models have no separate output register (Ny = 0)")
        if self.task == "classification" and self.layout.num_output_qubits == 0:
            raise InvalidArgumentError("classification models need Ny >= 1")
        self.params = np.array(self.params, dtype=np.float64)
        if self.params.shape != (self.layout.parameter_count,):
            raise InvalidArgumentError(
                f"expected {self.layout.parameter_count} parameters, got {self.params.shape}"
            )
        if not np.all(np.isfinite(self.params)):
            raise InvalidArgumentError("parameters must be finite")

    @classmethod
    def zeros(cls, layout, task="classification", encoder=None):
        return cls(layout, np.zeros(layout.parameter_count), task, encoder)

    @classmethod
    def random(cls, layout, task="classification", seed=0, encoder=None):
        rng = np.random.default_rng(seed)
        params = rng.uniform(-np.pi / 2, np.pi / 2, size=layout.parameter_count)
        return cls(layout, params, task, encoder)

    def with_params(self, params) -> "QlmModel":
        return QlmModel(self.layout, params, self.task, self.encoder)

    @property
    def program(self):
        if self._program is None:
            self._program = compile_program(self.layout)
        return self._program

    @property
    def num_qubits(self) -> int:
        return self.layout.num_qubits

    @property
    def num_inputs(self) -> int:
        return self.layout.num_input_qubits

    @property
    def num_outcomes(self) -> int:
        return 2 ** len(self.layout.output_qubits)

    def input_states(self, z_indices) -> np.ndarray:
        """Batch of ``|0...0>|z>`` basis states, one row per input index."""
        z_indices = np.asarray(z_indices, dtype=np.int64)
        if np.any(z_indices < 0) or np.any(z_indices >= 2**self.num_inputs):
            raise InvalidArgumentError(f"input index out of range for Nx={self.num_inputs}")
        amps = np.zeros((len(z_indices), 2**self.num_qubits), dtype=np.complex128)
        amps[np.arange(len(z_indices)), z_indices] = 1.0
        return amps

    @property
    def blocks(self):
        if self._blocks is None:
            self._blocks = compile_blocks(self.layout)
        return self._blocks

    def block_matrix(self, b, params=None, replace=None) -> np.ndarray:
        start, stop, targets = self.blocks[b]
        params = self.params if params is None else params
        return fuse(self.program[start:stop], targets, params, replace)

    def evolve(self, amps, start=0, stop=None, params=None) -> None:
        """Apply program gates ``[start, stop)`` to ``amps`` in place, one gate at a time."""
        params = self.params if params is None else params
        n = self.num_qubits
        for kind, targets, k in self.program[start:stop]:
            apply_kernel(amps, n, kind, targets, params[k])

    def evolve_blocks(self, amps, params=None) -> None:
        """Apply the whole circuit with each node fused into a single 4x4 unitary."""
        for b, (_, _, targets) in enumerate(self.blocks):
            apply_matrix(amps, targets, self.block_matrix(b, params))

    def outcome_probabilities(self, amps) -> np.ndarray:
        probs = amps.real**2 + amps.imag**2
        ny = self.layout.num_output_qubits
        if ny == 0:
            return probs
        # output qubits are the top Ny bits: index = out * 2**Nx + in
        return probs.reshape(probs.shape[:-1] + (2**ny, 2**self.num_inputs)).sum(axis=-1)

    def forward_indices(self, z_indices, params=None) -> np.ndarray:
        amps = self.input_states(z_indices)
        self.evolve_blocks(amps, params=params)
        return self.outcome_probabilities(amps)

    def forward(self, z: str) -> np.ndarray:
        return forward(self, z)

    def gates(self):
        return [Gate(kind, t, float(self.params[k])) for kind, t, k in self.program]


def forward(model: QlmModel, z: str) -> np.ndarray:
    """Output distribution for input bit string ``z`` (length Nx)."""
    if len(z) != model.num_inputs:
        raise InvalidArgumentError(
            f"input has {len(z)} bits, model expects Nx={model.num_inputs}"
        )
    return model.forward_indices([basis_index(z)])[0]


def _check_embedding(small: CircuitLayout, large_nq: int, embedding: Mapping[int, int]):
    emb = {int(k): int(v) for k, v in embedding.items()}
    missing = sorted(set(range(small.num_qubits)) - set(emb))
    if missing:
        raise StructureMismatchError(f"embedding does not cover small qubits {missing}")
    if len(set(emb.values())) != len(emb):
        raise StructureMismatchError(f"embedding is not injective: {emb}")
    bad = {k: v for k, v in emb.items() if not 0 <= v < large_nq}
    if bad:
        raise StructureMismatchError(f"embedding targets out of range for {large_nq} qubits: {bad}")
    return emb


def match_subnet(small: CircuitLayout, large: CircuitLayout, embedding: Mapping[int, int]):
    """Map each small node (in order) to a large node on the embedded pair.

    Returns a list of ``(small_node, large_node, swapped)``. Matching is
    greedy and order preserving, which finds a match whenever one exists.
    """
    emb = _check_embedding(small, large.num_qubits, embedding)
    large_nodes = large.nodes
    matches = []
    pos = 0
    for i, node in enumerate(small.nodes):
        want = (emb[node.qubit_a], emb[node.qubit_b])
        while pos < len(large_nodes):
            cand = large_nodes[pos]
            pos += 1
            pair = (cand.qubit_a, cand.qubit_b)
            if pair == want or pair == want[::-1]:
                matches.append((node, cand, pair != want))
                break
        else:
            raise StructureMismatchError(
                f"small node {i} on qubits ({node.qubit_a}, {node.qubit_b}) -> "
                f"{want} has no matching node in the larger layout"
            )
    return matches


def grow_from_subnet(small: QlmModel, large_layout: CircuitLayout, embedding, seed=0) -> QlmModel:
    """Initialize a larger model from a trained smaller one.

    Matched nodes copy their angles; other nodes touching an embedded qubit
    start as the identity; nodes acting only on new qubits are drawn
    uniformly from ``[-pi/2, pi/2)``. Final Euler triples on embedded qubits
    come from ``small``.
    """
    matches = match_subnet(small.layout, large_layout, embedding)
    emb = {int(k): int(v) for k, v in embedding.items()}
    embedded = set(emb.values())
    rng = np.random.default_rng(seed)
    params = rng.uniform(-np.pi / 2, np.pi / 2, size=large_layout.parameter_count)

    for node in large_layout.nodes:
        if node.qubit_a in embedded or node.qubit_b in embedded:
            params[node.param_offset : node.param_offset + PARAMS_PER_NODE] = 0.0
    src = small.params
    for s_node, l_node, swapped in matches:
        block = src[s_node.param_offset : s_node.param_offset + PARAMS_PER_NODE].copy()
        if swapped:
            # Heisenberg block is symmetric in its qubits; only the Euler blocks trade places
            block[:6] = np.concatenate([block[3:6], block[0:3]])
        params[l_node.param_offset : l_node.param_offset + PARAMS_PER_NODE] = block
    for sq, lq in emb.items():
        s_off = small.layout.final_euler_offset + PARAMS_PER_EULER * sq
        l_off = large_layout.final_euler_offset + PARAMS_PER_EULER * lq
        params[l_off : l_off + PARAMS_PER_EULER] = src[s_off : s_off + PARAMS_PER_EULER]
    return QlmModel(large_layout, params, small.task)


def classification_embedding(small: CircuitLayout, large: CircuitLayout, input_map: Mapping[int, int]) -> dict[int, int]:
    """Extend an input-qubit map with the output register (output k -> output k)."""
    if small.num_output_qubits != large.num_output_qubits:
        raise StructureMismatchError(
            f"output registers differ: Ny={small.num_output_qubits} vs {large.num_output_qubits}"
        )
    emb = {int(k): int(v) for k, v in input_map.items()}
    for k in range(small.num_output_qubits):
        emb[small.num_input_qubits + k] = large.num_input_qubits + k
    return emb


# -- documents ---------------------------------------------------------------


def to_document(model: QlmModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "task": model.task,
        "num_input_qubits": model.layout.num_input_qubits,
        "num_output_qubits": model.layout.num_output_qubits,
        "node_gates": list(NODE_GATES),
        "final_gates": list(FINAL_GATES),
        "layers": [[list(pair) for pair in layer] for layer in model.layout.layers],
        "params": [float(p) for p in model.params],
        "encoder": None if model.encoder is None else model.encoder.to_dict(),
    }


def serialize(model: QlmModel) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(to_document(model), indent=1)


def _field(doc, name, kind=None):
    if not isinstance(doc, dict) or name not in doc:
        raise ParseError(f"missing field {name!r}")
    value = doc[name]
    if kind is not None and not isinstance(value, kind):
        raise ParseError(f"field {name!r} has wrong type {type(value).__name__}")
    return value


def _check_gate_list(doc, name, expected):
    kinds = _field(doc, name, list)
    for kind in kinds:
        if kind not in GATE_KINDS:
            raise ParseError(f"field {name!r}: unknown gate kind {kind!r}")
    if tuple(kinds) != expected:
        raise ParseError(f"field {name!r}: unsupported gate sequence {kinds}")


def from_document(doc) -> QlmModel:
    if _field(doc, "format", str) != FORMAT_NAME:
        raise ParseError(f"field 'format': expected {FORMAT_NAME!r}")
    version = _field(doc, "version", int)
    if version != FORMAT_VERSION:
        raise ParseError(f"field 'version': unsupported version {version} (reader is {FORMAT_VERSION})")
    task = _field(doc, "task", str)
    if task not in TASKS:
        raise ParseError(f"field 'task': unknown task {task!r}")
    _check_gate_list(doc, "node_gates", NODE_GATES)
    _check_gate_list(doc, "final_gates", FINAL_GATES)
    try:
        layout = CircuitLayout(
            _field(doc, "num_input_qubits", int),
            _field(doc, "num_output_qubits", int),
            _field(doc, "layers", list),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field 'layers': {exc}") from exc
    params = _field(doc, "params", list)
    if len(params) != layout.parameter_count:
        raise ParseError(
            f"field 'params': expected {layout.parameter_count} values, got {len(params)}"
        )
    encoder = None
    if doc.get("encoder") is not None:
        encoder = EncoderSpec.from_dict(doc["encoder"])
    try:
        return QlmModel(layout, np.array(params, dtype=np.float64), task, encoder)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field 'params': {exc}") from exc


def deserialize(text: str) -> QlmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    return from_document(doc)
