"""Exact coordinate-update training.

Every angle enters the circuit through a single gate ``exp(-i theta P)``
with ``P**2 = I``, so with all other angles fixed the loss is exactly

    L(theta) = c + p cos 2(theta - theta0) + q sin 2(theta - theta0).

Three evaluations, at ``theta0`` and ``theta0 +- pi/4``, pin ``c, p, q``; the
minimum ``c - sqrt(p**2 + q**2)`` sits at ``theta0 + atan2(-q, -p) / 2``.
Each update therefore never increases the loss.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncodedDataset
from .errors import ConfigurationError, InvalidArgumentError, ParseError
from .model import QlmModel, grow_from_subnet
from .simulator import apply_matrix

SHIFT = math.pi / 4
CONFIG_FORMAT = "bitqlm-train-config"
CONFIG_VERSION = 1


@dataclass
class TrainConfig:
    max_epochs: int = 200
    order: str = "random"
    tol: float = 1e-6
    flat_tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.order not in ("random", "sequential"):
            raise InvalidArgumentError(f"order must be 'random' or 'sequential', got {self.order!r}")
        if not self.tol > 0 or not self.flat_tol > 0:
            raise InvalidArgumentError("tol and flat_tol must be positive")
        if self.max_epochs < 0:
            raise InvalidArgumentError("max_epochs must be >= 0")

    def to_dict(self):
        return {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if doc.pop("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ParseError("field 'format': not a training config")
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ParseError(f"field 'version': unsupported version {version}")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParseError(f"unknown config field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass
class LossEvaluation:
    loss: float
    success: dict


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float | None
    seconds: float


@dataclass
class TrainReport:
    initial_loss: float
    loss_trace: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    model: QlmModel | None = None
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else self.initial_loss

    @property
    def num_updates(self) -> int:
        return len(self.loss_trace)


def _check_compatible(model: QlmModel, data: EncodedDataset):
    if data.n_samples == 0:
        raise InvalidArgumentError("dataset is empty")
    if data.bit_length != model.num_inputs:
        raise InvalidArgumentError(
            f"dataset has {data.bit_length}-bit inputs, model expects Nx={model.num_inputs}"
        )
    top = max(data.labels)
    if top >= model.num_outcomes:
        raise ConfigurationError(
            f"label {top} needs more than {int(math.log2(model.num_outcomes))} output qubit(s)"
        )


class Objective:
    """Loss of one model layout on one dataset, evaluated for arbitrary angles.

    All distinct inputs are simulated together as one batch of statevectors,
    and each node is applied as one fused 4x4 unitary. Fused matrices are
    cached per block and rebuilt only when one of the block's angles changes.
    """

    def __init__(self, model: QlmModel, data: EncodedDataset):
        _check_compatible(model, data)
        self.model = model
        self.z, self.weights, self.targets = data.loss_arrays()
        self.rows = np.arange(len(self.z))
        self._initial = model.input_states(self.z)
        self._block_of = np.empty(model.layout.parameter_count, dtype=np.int64)
        self._block_params = []
        for b, (start, stop, _) in enumerate(model.blocks):
            idx = np.array([k for _, _, k in model.program[start:stop]])
            self._block_of[idx] = b
            self._block_params.append(idx)
        self._cache = [(None, None)] * len(model.blocks)

    def _matrix(self, b, params):
        key = params[self._block_params[b]].tobytes()
        cached_key, mat = self._cache[b]
        if cached_key != key:
            mat = self.model.block_matrix(b, params)
            self._cache[b] = (key, mat)
        return mat

    def _evolve(self, amps, params, b0, b1):
        blocks = self.model.blocks
        for b in range(b0, b1):
            apply_matrix(amps, blocks[b][2], self._matrix(b, params))

    def _success(self, amps, targets):
        p = self.model.outcome_probabilities(amps)
        return p[np.arange(len(amps)), targets]

    def success(self, params) -> np.ndarray:
        amps = self._initial.copy()
        self._evolve(amps, params, 0, len(self.model.blocks))
        return self._success(amps, self.targets)

    def loss(self, params) -> float:
        return float(1.0 - self.weights @ self.success(params))

    def shifted_losses(self, params, k):
        """Loss at ``theta_k +- pi/4``; both shifts share one prefix simulation."""
        b = int(self._block_of[k])
        targets = self.model.blocks[b][2]
        amps = self._initial.copy()
        self._evolve(amps, params, 0, b)
        m = len(amps)
        both = np.concatenate([amps, amps])
        apply_matrix(both[:m], targets, self.model.block_matrix(b, params, (k, params[k] + SHIFT)))
        apply_matrix(both[m:], targets, self.model.block_matrix(b, params, (k, params[k] - SHIFT)))
        self._evolve(both, params, b + 1, len(self.model.blocks))
        succ = self._success(both, np.concatenate([self.targets, self.targets]))
        return float(1.0 - self.weights @ succ[:m]), float(1.0 - self.weights @ succ[m:])

    def update(self, params, k, current_loss=None, flat_tol=1e-12):
        """Optimal angle for coordinate ``k``; returns ``(angle, loss, (c, p, q))``."""
        theta0 = float(params[k])
        l0 = self.loss(params) if current_loss is None else current_loss
        lp, lm = self.shifted_losses(params, k)
        c = 0.5 * (lp + lm)
        q = 0.5 * (lp - lm)
        p = l0 - c
        amp = math.hypot(p, q)
        if amp < flat_tol:
            return theta0, l0, (c, p, q)
        theta = theta0 + 0.5 * math.atan2(-q, -p)
        # pi-periodic: fold back into [-pi/2, pi/2)
        theta = (theta + math.pi / 2) % math.pi - math.pi / 2
        return theta, min(c - amp, l0), (c, p, q)


def loss(model: QlmModel, data: EncodedDataset, shots=None, seed=0) -> LossEvaluation:
    """Probability that the model answers ``C(z)`` wrongly, averaged over ``f(z)``.

    With ``shots`` set, each success probability is replaced by a
    multinomial estimate from that many simulated measurements.
    """
    obj = Objective(model, data)
    success = obj.success(model.params)
    if shots is not None:
        if shots < 1:
            raise InvalidArgumentError("shots must be >= 1")
        rng = np.random.default_rng(seed)
        success = rng.binomial(shots, np.clip(success, 0.0, 1.0)) / shots
    width = model.num_inputs
    per_z = {format(int(z), f"0{width}b"): float(s) for z, s in zip(obj.z, success)}
    return LossEvaluation(float(1.0 - obj.weights @ success), per_z)


def coordinate_update(model: QlmModel, data: EncodedDataset, param_index: int, flat_tol=1e-12):
    """Exact minimizer of the loss along one angle: ``(new_angle, new_loss)``."""
    if not 0 <= param_index < model.layout.parameter_count:
        raise InvalidArgumentError(
            f"parameter index {param_index} out of range [0, {model.layout.parameter_count})"
        )
    theta, new_loss, _ = Objective(model, data).update(model.params, param_index, flat_tol=flat_tol)
    return theta, new_loss


def predict_indices(model: QlmModel, z_indices) -> np.ndarray:
    """Most probable outcome per input; ties go to the smaller outcome."""
    return np.argmax(model.forward_indices(z_indices), axis=1)


def accuracy(model: QlmModel, data: EncodedDataset) -> float:
    """Fraction of samples whose own label equals the model's most probable outcome."""
    if data.n_samples == 0:
        return float("nan")
    z, y, count = data.sample_arrays()
    distinct, inverse = np.unique(z, return_inverse=True)
    pred = predict_indices(model, distinct)[inverse]
    return float(count[pred == y].sum() / count.sum())


def train(model: QlmModel, data_train: EncodedDataset, data_test: EncodedDataset | None = None,
          config: TrainConfig | None = None, callback=None) -> TrainReport:
    """Sweep coordinates until an epoch improves the loss by less than ``config.tol``."""
    config = config or TrainConfig()
    if data_train is None or data_train.n_samples == 0:
        raise InvalidArgumentError("training set is empty")
    if data_test is not None:
        _check_compatible(model, data_test)
    obj = Objective(model, data_train)
    rng = np.random.default_rng(config.seed)
    params = model.params.copy()
    current = obj.loss(params)
    report = TrainReport(initial_loss=current)
    nparams = len(params)

    for epoch in range(1, config.max_epochs + 1):
        tic = time.perf_counter()
        start = current
        order = rng.permutation(nparams) if config.order == "random" else range(nparams)
        for k in order:
            params[k], current, _ = obj.update(params, k, current, config.flat_tol)
            report.loss_trace.append(current)
        # resynchronize with a full evaluation; differs from the running value by rounding only
        current = min(obj.loss(params), current)
        trained = model.with_params(params)
        record = EpochRecord(
            epoch,
            current,
            accuracy(trained, data_train),
            None if data_test is None else accuracy(trained, data_test),
            time.perf_counter() - tic,
        )
        report.epochs.append(record)
        if callback is not None:
            callback(record)
        if start - current < config.tol:
            report.converged = True
            break

    report.model = model.with_params(params)
    return report


@dataclass
class Stage:
    layout: object
    embedding: dict | None
    train: EncodedDataset
    test: EncodedDataset | None = None


def grow_and_train(stages, config: TrainConfig | None = None, initial: QlmModel | None = None,
                   task="classification") -> list[TrainReport]:
    """Train a sequence of growing models, each seeded from the previous stage's result."""
    config = config or TrainConfig()
    reports = []
    model = initial
    for i, stage in enumerate(stages):
        if i == 0:
            if model is None:
                model = QlmModel.random(stage.layout, task=task, seed=config.seed)
            elif model.layout != stage.layout:
                model = grow_from_subnet(model, stage.layout, stage.embedding, seed=config.seed)
        else:
            model = grow_from_subnet(model, stage.layout, stage.embedding, seed=config.seed + i)
        report = train(model, stage.train, stage.test, config)
        reports.append(report)
        model = report.model
    return reports


def write_metrics(report: TrainReport, out_dir, extra=None) -> None:
    """``loss.csv``, ``epochs.csv`` and ``summary.json`` for one training run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update_index", "loss"])
        w.writerow([0, repr(report.initial_loss)])
        for i, value in enumerate(report.loss_trace, start=1):
            w.writerow([i, repr(value)])
    with open(out / "epochs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_acc", "test_acc", "seconds"])
        for r in report.epochs:
            w.writerow([r.epoch, repr(r.train_accuracy),
                        "" if r.test_accuracy is None else repr(r.test_accuracy),
                        f"{r.seconds:.6f}"])
    last = report.epochs[-1] if report.epochs else None
    summary = {
        "format": "bitqlm-train-summary",
        "version": 1,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "num_updates": report.num_updates,
        "num_epochs": len(report.epochs),
        "converged": report.converged,
        "train_accuracy": None if last is None else last.train_accuracy,
        "test_accuracy": None if last is None else last.test_accuracy,
    }
    summary.update(extra or {})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
