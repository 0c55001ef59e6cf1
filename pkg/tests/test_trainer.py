import csv
import json
import math

import numpy as np
import pytest

from bitqlm.encoder import EncodedDataset, allocation_embedding, build_encoded_dataset, encode_indices, fit_encoder
from bitqlm.errors import ConfigurationError, InvalidArgumentError, ParseError, StructureMismatchError
from bitqlm.model import (
    CircuitLayout,
    QlmModel,
    build_brickwork_layout,
    build_subnet_layout,
    classification_embedding,
    grow_from_subnet,
)
from bitqlm.simulator import apply_circuit, init_basis_state, sample
from bitqlm.trainer import (
    Objective,
    Stage,
    TrainConfig,
    accuracy,
    coordinate_update,
    grow_and_train,
    loss,
    predict_indices,
    train,
    write_metrics,
)

XOR = EncodedDataset({("00", 0): 1, ("01", 1): 1, ("10", 1): 1, ("11", 0): 1}, 2)


def random_dataset(rng, bits, n=40, classes=2):
    z = rng.integers(0, 2**bits, size=n)
    y = rng.integers(0, classes, size=n)
    return EncodedDataset.from_pairs(z, y, bits)


def restricted(obj, params, k, theta):
    p = params.copy()
    p[k] = theta
    return obj.loss(p)


class TestLoss:
    def test_zero_params_zero_labels(self):
        data = EncodedDataset({("00", 0): 3, ("01", 0): 1, ("11", 0): 2}, 2)
        model = QlmModel.zeros(build_brickwork_layout(2, 1, 2))
        assert loss(model, data).loss == pytest.approx(0.0, abs=1e-15)

    def test_uniform_output(self):
        params = np.zeros(15)
        params[12] = math.pi / 4  # outermost Rx on the output qubit splits it evenly
        model = QlmModel(build_brickwork_layout(1, 1, 1), params)
        data = EncodedDataset({("0", 0): 1, ("1", 1): 1}, 1)
        assert loss(model, data).loss == pytest.approx(0.5, abs=1e-12)

    def test_against_shot_sampling(self):
        rng = np.random.default_rng(0)
        model = QlmModel.random(build_brickwork_layout(3, 1, 3), seed=1)
        data = random_dataset(rng, 3, n=30)
        exact = loss(model, data).loss
        shots = 10**6
        targets = data.targets()
        freqs = data.z_frequencies()
        est = 0.0
        for i, (z, f) in enumerate(freqs.items()):
            state = apply_circuit(init_basis_state(4, "0" + z), model.gates())
            hist = sample(state, [3], shots, seed=i)
            est += f * (1 - hist.get(str(targets[z]), 0) / shots)
        # each per-z estimate has variance <= 1/(4 shots)
        sigma = math.sqrt(sum(f * f for f in freqs.values()) / (4 * shots))
        assert abs(est - exact) < 5 * sigma

    def test_shot_flag(self):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=2)
        exact = loss(model, XOR).loss
        noisy = loss(model, XOR, shots=10**6, seed=3).loss
        assert abs(noisy - exact) < 5e-3
        assert loss(model, XOR, shots=1000, seed=4).loss == loss(model, XOR, shots=1000, seed=4).loss
        with pytest.raises(InvalidArgumentError):
            loss(model, XOR, shots=0)

    def test_bounds(self):
        rng = np.random.default_rng(5)
        for seed in range(20):
            model = QlmModel.random(build_brickwork_layout(2, 2, 2), seed=seed)
            value = loss(model, random_dataset(rng, 2, classes=4)).loss
            assert 0.0 <= value <= 1.0

    def test_label_outside_register(self):
        model = QlmModel.zeros(build_brickwork_layout(2, 1, 2))
        with pytest.raises(ConfigurationError):
            loss(model, EncodedDataset({("01", 2): 1}, 2))

    def test_bit_length_mismatch(self):
        model = QlmModel.zeros(build_brickwork_layout(3, 1, 2))
        with pytest.raises(InvalidArgumentError):
            loss(model, XOR)


class TestCoordinateUpdate:
    def test_flat_coordinate(self):
        # a final Rz on an output qubit sitting in a basis state changes nothing
        model = QlmModel.zeros(build_brickwork_layout(1, 1, 1))
        data = EncodedDataset({("0", 0): 1, ("1", 0): 1}, 1)
        theta, new = coordinate_update(model, data, 13)
        assert theta == 0.0 and new == pytest.approx(0.0, abs=1e-15)

    def test_index_out_of_range(self):
        model = QlmModel.zeros(build_brickwork_layout(1, 1, 1))
        with pytest.raises(InvalidArgumentError):
            coordinate_update(model, XOR, 15)

    @pytest.mark.parametrize("seed", range(100))
    def test_sinusoid_is_exact(self, seed):
        rng = np.random.default_rng(seed)
        nx = int(rng.integers(1, 4))
        model = QlmModel.random(build_brickwork_layout(nx, 1, int(rng.integers(2, 4))), seed=seed)
        data = random_dataset(rng, nx, n=12)
        obj = Objective(model, data)
        k = int(rng.integers(model.layout.parameter_count))
        theta0 = model.params[k]
        _, _, (c, p, q) = obj.update(model.params, k)
        for delta in np.concatenate([[0.3], rng.uniform(-np.pi, np.pi, size=5)]):
            predicted = c + p * math.cos(2 * delta) + q * math.sin(2 * delta)
            assert restricted(obj, model.params, k, theta0 + delta) == pytest.approx(predicted, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_minimum_against_grid(self, seed):
        rng = np.random.default_rng(100 + seed)
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=seed)
        data = random_dataset(rng, 2, n=10)
        obj = Objective(model, data)
        # pick a coordinate the loss actually depends on, so the grid minimum is unique
        while True:
            k = int(rng.integers(model.layout.parameter_count))
            _, _, (_, p, q) = obj.update(model.params, k)
            if math.hypot(p, q) > 1e-3:
                break
        theta, new = coordinate_update(model, data, k)
        grid = np.linspace(-np.pi / 2, np.pi / 2, 10_000, endpoint=False)
        scan = np.array([restricted(obj, model.params, k, t) for t in grid])
        step = grid[1] - grid[0]
        best = grid[np.argmin(scan)]
        assert new <= scan.min() + 1e-12
        assert new == pytest.approx(restricted(obj, model.params, k, theta), abs=1e-12)
        gap = abs((theta - best + np.pi / 2) % np.pi - np.pi / 2)
        assert gap <= step
        assert -np.pi / 2 <= theta < np.pi / 2

    def test_update_never_increases(self):
        rng = np.random.default_rng(7)
        model = QlmModel.random(build_brickwork_layout(3, 1, 3), seed=7)
        data = random_dataset(rng, 3, n=30)
        obj = Objective(model, data)
        params = model.params.copy()
        current = obj.loss(params)
        for k in rng.integers(0, len(params), size=200):
            params[k], new, _ = obj.update(params, k, current)
            assert new <= current + 1e-9
            assert obj.loss(params) == pytest.approx(new, abs=1e-10)
            current = new


class TestTrain:
    @pytest.mark.parametrize("seed", range(3))
    def test_xor(self, seed):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=seed)
        report = train(model, XOR, config=TrainConfig(max_epochs=50, seed=seed))
        assert report.final_loss < 0.05
        assert accuracy(report.model, XOR) == 1.0

    def test_single_sample_memorized(self):
        data = EncodedDataset({("101", 1): 1}, 3)
        model = QlmModel.random(build_brickwork_layout(3, 1, 2), seed=0)
        report = train(model, data, config=TrainConfig(max_epochs=10))
        assert report.final_loss < 1e-3

    def test_trace_non_increasing_and_reported(self):
        rng = np.random.default_rng(8)
        data = random_dataset(rng, 3, n=50)
        test = random_dataset(rng, 3, n=20)
        report = train(QlmModel.random(build_brickwork_layout(3, 1, 2), seed=8), data, test,
                       TrainConfig(max_epochs=5))
        trace = [report.initial_loss] + report.loss_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
        assert report.num_updates == len(report.epochs) * 39
        for rec in report.epochs:
            assert 0 <= rec.train_accuracy <= 1 and 0 <= rec.test_accuracy <= 1

    def test_deterministic(self):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=3)
        a = train(model, XOR, config=TrainConfig(max_epochs=5, seed=1))
        b = train(model, XOR, config=TrainConfig(max_epochs=5, seed=1))
        assert a.loss_trace == b.loss_trace
        np.testing.assert_array_equal(a.model.params, b.model.params)

    def test_sequential_order(self):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=3)
        report = train(model, XOR, config=TrainConfig(max_epochs=3, order="sequential"))
        assert report.final_loss <= report.initial_loss

    def test_empty_training_set(self):
        with pytest.raises(InvalidArgumentError):
            train(QlmModel.zeros(build_brickwork_layout(2, 1, 2)), EncodedDataset({}, 2))

    def test_input_model_untouched(self):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=3)
        before = model.params.copy()
        train(model, XOR, config=TrainConfig(max_epochs=2))
        np.testing.assert_array_equal(model.params, before)


class TestAccuracy:
    def test_majority_counting(self):
        data = EncodedDataset({("1", 0): 3, ("1", 1): 1}, 1)
        model = QlmModel.zeros(build_brickwork_layout(1, 1, 1))
        assert accuracy(model, data) == pytest.approx(0.75)

    def test_tie_goes_to_smaller_outcome(self):
        params = np.zeros(15)
        params[12] = math.pi / 4
        model = QlmModel(build_brickwork_layout(1, 1, 1), params)
        assert accuracy(model, EncodedDataset({("0", 0): 1, ("1", 1): 1}, 1)) == 0.5


class TestGrowAndTrain:
    def test_identity_schedule(self):
        lay = build_brickwork_layout(2, 1, 2)
        emb = {q: q for q in range(3)}
        reports = grow_and_train(
            [Stage(lay, None, XOR), Stage(lay, emb, XOR)], TrainConfig(max_epochs=3)
        )
        assert reports[1].initial_loss == pytest.approx(reports[0].final_loss, abs=1e-12)

    def test_four_to_six_qubits(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(120, 4))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
        small_spec = fit_encoder(X, y, total_bits=3)
        large_spec = fit_encoder(X, y, total_bits=5)
        small_lay = build_brickwork_layout(3, 1, 3)
        emb = classification_embedding(
            small_lay, build_brickwork_layout(5, 1, 1),
            allocation_embedding(small_spec.bits, large_spec.bits),
        )
        large_lay = build_subnet_layout(small_lay, 5, 1, 2, emb)
        config = TrainConfig(max_epochs=4)
        reports = grow_and_train(
            [Stage(small_lay, None, build_encoded_dataset(X, y, small_spec)),
             Stage(large_lay, emb, build_encoded_dataset(X, y, large_spec))],
            config,
        )
        assert math.isfinite(reports[1].initial_loss)
        assert reports[1].final_loss <= reports[1].initial_loss
        # the grown model starts out making exactly the small model's predictions
        grown = grow_from_subnet(reports[0].model, large_lay, emb, seed=1)
        small_pred = predict_indices(reports[0].model, encode_indices(X, small_spec))
        large_pred = predict_indices(grown, encode_indices(X, large_spec))
        np.testing.assert_array_equal(small_pred, large_pred)

    def test_mismatched_embedding(self):
        lay = build_brickwork_layout(2, 1, 2)
        with pytest.raises(StructureMismatchError):
            grow_and_train(
                [Stage(lay, None, XOR), Stage(CircuitLayout(2, 1, [[(0, 2)], [(1, 2)]]), {0: 0, 1: 1, 2: 2}, XOR)],
                TrainConfig(max_epochs=1),
            )


class TestConfigAndMetrics:
    def test_config_round_trip(self):
        cfg = TrainConfig(max_epochs=7, order="sequential", tol=1e-4, seed=3)
        assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_config_newer_version(self):
        doc = TrainConfig().to_dict()
        doc["version"] = 2
        with pytest.raises(ParseError, match="version"):
            TrainConfig.from_dict(doc)

    def test_config_rejects_bad_order(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(order="shuffled")

    def test_metrics_files(self, tmp_path):
        model = QlmModel.random(build_brickwork_layout(2, 1, 2), seed=0)
        report = train(model, XOR, XOR, TrainConfig(max_epochs=3))
        write_metrics(report, tmp_path, {"note": "x"})
        rows = list(csv.reader(open(tmp_path / "loss.csv")))
        assert rows[0] == ["update_index", "loss"]
        assert len(rows) == report.num_updates + 2
        assert float(rows[1][1]) == report.initial_loss
        epochs = list(csv.reader(open(tmp_path / "epochs.csv")))
        assert epochs[0] == ["epoch", "train_acc", "test_acc", "seconds"]
        assert len(epochs) == len(report.epochs) + 1
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["final_loss"] == report.final_loss and summary["note"] == "x"
