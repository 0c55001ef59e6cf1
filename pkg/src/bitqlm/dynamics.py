"""Learning discrete time evolution on encoded states.

A trajectory sampled at a fixed step becomes a list of transitions
``z(t_n) -> z(t_{n+1})``. The model for this task has no separate output
register: it reads the successor from all qubits, so the label of a
transition is the integer value of the next bit string.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncodedDataset, EncoderSpec, decode_midpoint, encode_indices, fit_encoder
from .errors import ArtifactMismatchError, IntegrationError, InvalidArgumentError, ParseError
from .model import QlmModel
from .simulator import index_to_bits

SYSTEMS = ("linear-decay", "two-species-oscillator")

_DEFAULT_PARAMS = {
    "linear-decay": {"rate": 1.0},
    "two-species-oscillator": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0},
}
# initial conditions drawn from this box when none are given
_DEFAULT_X0 = {
    "linear-decay": ([0.2], [1.0]),
    "two-species-oscillator": ([0.5, 0.5], [1.5, 1.5]),
}


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        x = np.asarray(self.states, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or len(t) < 2:
            raise InvalidArgumentError("a trajectory needs at least 2 time points")
        if x.shape[0] != len(t):
            raise InvalidArgumentError(f"{len(t)} times but {x.shape[0]} states")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise InvalidArgumentError("times must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-9:
            raise InvalidArgumentError("times must be uniformly spaced")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def _params(system, params):
    if system not in SYSTEMS:
        raise InvalidArgumentError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    merged = dict(_DEFAULT_PARAMS[system])
    for key, value in (params or {}).items():
        if key not in merged:
            raise InvalidArgumentError(f"unknown parameter {key!r} for {system}")
        merged[key] = float(value)
    return merged


def vector_field(system, params=None):
    """Right-hand side ``f(x)`` of the chosen autonomous ODE."""
    p = _params(system, params)
    if system == "linear-decay":
        rate = p["rate"]
        return lambda x: -rate * x
    a, b, g, d = p["alpha"], p["beta"], p["gamma"], p["delta"]

    def lotka_volterra(x):
        prey, pred = x
        return np.array([a * prey - b * prey * pred, d * prey * pred - g * pred])

    return lotka_volterra


def conserved_quantity(state, params=None) -> float:
    """Invariant of the two-species oscillator: ``d x - g ln x + b y - a ln y``."""
    p = _params("two-species-oscillator", params)
    x, y = state
    return p["delta"] * x - p["gamma"] * np.log(x) + p["beta"] * y - p["alpha"] * np.log(y)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(system, x0, steps: int, dt: float, params=None) -> Trajectory:
    """Fixed-step RK4 from ``x0``; ``steps`` steps give ``steps + 1`` states."""
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    f = vector_field(system, params)
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if system == "two-species-oscillator" and x.shape != (2,):
        raise InvalidArgumentError("the two-species oscillator has a 2-dimensional state")
    out = np.empty((steps + 1, len(x)))
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, steps + 1):
            x = rk4_step(f, x, dt)
            if not np.all(np.isfinite(x)):
                raise IntegrationError(f"state became non-finite at step {n}", step=n)
            out[n] = x
    return Trajectory(dt * np.arange(steps + 1), out)


def generate_toy_trajectories(system, params=None, x0=None, steps=50, dt=0.1, seed=None,
                              n_trajectories=8, perturbation=0.0) -> list[Trajectory]:
    """Integrate one trajectory per initial condition.

    Without ``x0``, ``n_trajectories`` initial conditions are drawn uniformly
    from a default box using ``seed``. With ``x0``, each row is scaled by
    ``1 + u``, ``u ~ U(-perturbation, perturbation)``. The seed never touches
    the integration itself.
    """
    _params(system, params)
    rng = np.random.default_rng(seed)
    if x0 is None:
        lo, hi = (np.array(v) for v in _DEFAULT_X0[system])
        starts = rng.uniform(lo, hi, size=(n_trajectories, len(lo)))
    else:
        starts = np.asarray(x0, dtype=np.float64)
        if starts.ndim == 1:
            starts = starts[:, None] if system == "linear-decay" else starts[None, :]
        if perturbation:
            starts = starts * (1.0 + rng.uniform(-perturbation, perturbation, size=starts.shape))
    return [integrate(system, s, steps, dt, params) for s in starts]


# -- encoding ----------------------------------------------------------------


def fit_state_encoder(trajectories, total_bits: int, allocation="variance") -> EncoderSpec:
    """One encoder for every time step, fitted on the union of all states."""
    states = np.vstack([t.states for t in trajectories])
    return fit_encoder(states, None, total_bits, allocation=allocation)


def encode_trajectory(trajectory: Trajectory, spec: EncoderSpec) -> np.ndarray:
    if trajectory.dim != spec.num_features:
        raise ArtifactMismatchError(
            f"trajectory has {trajectory.dim} variables, encoder expects {spec.num_features}"
        )
    return encode_indices(trajectory.states, spec)


@dataclass
class TransitionDataset:
    data: EncodedDataset
    num_pairs: int
    num_inputs: int
    num_conflicting: int

    @property
    def conflict_fraction(self) -> float:
        """Share of distinct inputs seen with more than one successor."""
        return self.num_conflicting / self.num_inputs if self.num_inputs else 0.0

    @property
    def bit_length(self) -> int:
        return self.data.bit_length

    def summary(self) -> dict:
        return {
            "pairs": self.num_pairs,
            "distinct_inputs": self.num_inputs,
            "conflicting_inputs": self.num_conflicting,
            "conflict_fraction": self.conflict_fraction,
        }


def transition_pairs(trajectories, spec: EncoderSpec):
    """``(z_n, z_{n+1})`` integer arrays over every consecutive pair."""
    src, dst = [], []
    for traj in trajectories:
        if len(traj) < 2:
            raise InvalidArgumentError("trajectory shorter than 2 points")
        z = encode_trajectory(traj, spec)
        src.append(z[:-1])
        dst.append(z[1:])
    if not src:
        raise InvalidArgumentError("no trajectories given")
    return np.concatenate(src), np.concatenate(dst)


def build_transition_dataset(trajectories, spec: EncoderSpec) -> TransitionDataset:
    src, dst = transition_pairs(trajectories, spec)
    data = EncodedDataset.from_pairs(src, dst, spec.total_bits)
    successors = defaultdict(set)
    for a, b in zip(src.tolist(), dst.tolist()):
        successors[a].add(b)
    conflicting = sum(1 for s in successors.values() if len(s) > 1)
    return TransitionDataset(data, len(src), len(successors), conflicting)


# -- prediction ----------------------------------------------------------------


def _check_dynamics_model(model: QlmModel):
    if model.layout.num_output_qubits != 0:
        raise InvalidArgumentError("rollout needs a dynamics model (no separate output register)")


def predict_successors(model: QlmModel, z_indices) -> np.ndarray:
    """Most probable next state per input; ties go to the smaller integer."""
    _check_dynamics_model(model)
    return np.argmax(model.forward_indices(np.asarray(z_indices)), axis=1)


def one_step_fidelity(model: QlmModel, trajectories, spec: EncoderSpec) -> float:
    """Fraction of transitions whose encoded successor the model predicts."""
    src, dst = transition_pairs(trajectories, spec)
    return float(np.mean(predict_successors(model, src) == dst))


def rollout(model: QlmModel, z0: str, horizon: int, mode="argmax", seed=None) -> list[str]:
    """Iterate the learned map; returns ``horizon + 1`` bit strings starting at ``z0``."""
    _check_dynamics_model(model)
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    if mode not in ("argmax", "sampled"):
        raise InvalidArgumentError(f"mode must be 'argmax' or 'sampled', got {mode!r}")
    n = model.num_qubits
    if len(z0) != n or set(z0) - {"0", "1"}:
        raise InvalidArgumentError(f"z0 must be a {n}-bit string, got {z0!r}")
    rng = np.random.default_rng(seed)
    z = int(z0, 2)
    out = [z0]
    for _ in range(horizon):
        probs = model.forward_indices([z])[0]
        if mode == "argmax":
            z = int(np.argmax(probs))
        else:
            z = int(rng.choice(len(probs), p=probs / probs.sum()))
        out.append(index_to_bits(z, n))
    return out


# -- files -------------------------------------------------------------------


def write_trajectories_csv(path, trajectories) -> None:
    """Columns ``t, x1..xd``; a new trajectory starts wherever ``t`` drops back."""
    dims = {t.dim for t in trajectories}
    if len(dims) != 1:
        raise InvalidArgumentError("all trajectories must have the same dimension")
    d = dims.pop()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for traj in trajectories:
            for t, x in zip(traj.times, traj.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def read_trajectories_csv(path) -> list[Trajectory]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t" or len(rows[0]) < 2:
        raise ParseError(f"{path}: expected a header 't,x1,...'")
    chunks, current = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise ParseError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if current and values[0] <= current[-1][0]:
            chunks.append(current)
            current = []
        current.append(values)
    if current:
        chunks.append(current)
    out = []
    for chunk in chunks:
        arr = np.array(chunk)
        out.append(Trajectory(arr[:, 0], arr[:, 1:]))
    return out


def write_rollout_csv(path, states, spec: EncoderSpec) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "bits"] + [f"x{i + 1}" for i in range(spec.num_features)])
        for step, z in enumerate(states):
            w.writerow([step, z] + [repr(float(v)) for v in decode_midpoint(z, spec)])


def successor_table(data: EncodedDataset) -> dict[str, Counter]:
    """Observed successor counts per input bit string."""
    out = defaultdict(Counter)
    for (z, y), c in data.counts.items():
        out[z][index_to_bits(y, data.bit_length)] += c
    return dict(out)
