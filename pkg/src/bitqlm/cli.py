"""Command-line workflow: gen-data, encode, train, eval, grow, rollout, baseline.

Each command writes into a run directory (``--out``, or
``$BITQLM_OUTPUT_ROOT/<command>``, default root ``runs``) and records its fully
resolved options in ``config.json`` there. ``--config FILE`` loads such a
document; its values take precedence over flags, so re-running a recorded
config reproduces the run. Failures print ``<category>: <message>`` on stderr
and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dynamics
from .datasets import make_protein_classes, read_table_csv, train_test_split, write_table_csv
from .encoder import EncodedDataset, EncoderSpec, build_encoded_dataset, encode_value, fit_encoder
from .errors import ArtifactMismatchError, ParseError, QLMError
from .estimators import LogisticRegressionGD, grow_model, output_qubits_for
from .model import QlmModel, build_brickwork_layout, deserialize, serialize
from .trainer import TrainConfig, accuracy, loss, train, write_metrics

RUN_CONFIG_FORMAT = "bitqlm-run-config"
RUN_CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "BITQLM_OUTPUT_ROOT"
# options that locate the run rather than define it
_LOCATION_KEYS = {"out", "config", "command", "func"}


# -- helpers -------------------------------------------------------------------


def _read_json(path, what):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactMismatchError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_model(path) -> QlmModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactMismatchError(f"cannot read model {path}: {exc.strerror}") from None
    return deserialize(text)


def _load_encoder(path) -> EncoderSpec:
    doc = _read_json(path, "encoder")
    return EncoderSpec.from_dict(doc.get("encoder", doc) if isinstance(doc, dict) else doc)


def _read_table(path, label_column):
    if not Path(path).is_file():
        raise ArtifactMismatchError(f"data file {path} does not exist")
    X, y, names = read_table_csv(path, label_column)
    if y is None:
        raise ArtifactMismatchError(f"{path} has no label column {label_column!r}")
    return X, y, names


def _read_trajectories(path):
    if not Path(path).is_file():
        raise ArtifactMismatchError(f"trajectory file {path} does not exist")
    return dynamics.read_trajectories_csv(path)


def _check_features(spec: EncoderSpec, X, path):
    if X.shape[1] != spec.num_features:
        raise ArtifactMismatchError(
            f"{path} has {X.shape[1]} feature columns but the encoder expects {spec.num_features}"
        )


def _check_states(spec: EncoderSpec, trajectories, path):
    if trajectories and trajectories[0].dim != spec.num_features:
        raise ArtifactMismatchError(
            f"{path} has {trajectories[0].dim} state variables but the encoder expects {spec.num_features}"
        )


def _require_encoder(model: QlmModel, path):
    if model.encoder is None:
        raise ArtifactMismatchError(f"model {path} carries no encoder")
    return model.encoder


def _train_config(args) -> TrainConfig:
    return TrainConfig(max_epochs=args.epochs, order=args.order, tol=args.tol, seed=args.seed)


# -- commands --------------------------------------------------------------------


def cmd_gen_data(args, out: Path):
    if args.kind == "two-class-proteins":
        X, y = make_protein_classes(args.n_per_class, args.features, args.shift, args.correlation,
                                    args.sigma, args.seed)
        write_table_csv(out / "data.csv", X, y, [f"protein{i + 1}" for i in range(X.shape[1])])
        return {"rows": len(y), "features": X.shape[1]}
    params = {}
    if args.system == "linear-decay":
        params["rate"] = args.rate
    trajs = dynamics.generate_toy_trajectories(
        args.system, params, steps=args.steps, dt=args.dt, seed=args.seed,
        n_trajectories=args.n_trajectories,
    )
    dynamics.write_trajectories_csv(out / "trajectories.csv", trajs)
    return {"trajectories": len(trajs), "points": sum(len(t) for t in trajs)}


def cmd_encode(args, out: Path):
    if args.task == "dynamics":
        trajs = _read_trajectories(args.data)
        order = np.random.default_rng(args.seed).permutation(len(trajs))
        n_test = int(round(args.test_fraction * len(trajs)))
        test = [trajs[i] for i in sorted(order[:n_test])]
        train_ = [trajs[i] for i in sorted(order[n_test:])]
        spec = dynamics.fit_state_encoder(train_, args.bits, allocation=args.allocation or "variance")
        dynamics.write_trajectories_csv(out / "train.csv", train_)
        if test:
            dynamics.write_trajectories_csv(out / "test.csv", test)
        ds = dynamics.build_transition_dataset(train_, spec)
        _write_encoded(out / "encoded.csv", ds.data)
        _write_json(out / "encoder.json", spec.to_dict())
        return {"bits": list(spec.bits), **ds.summary()}
    X, y, names = _read_table(args.data, args.label_column)
    Xtr, Xte, ytr, yte = train_test_split(X, y, args.test_fraction, args.seed)
    spec = fit_encoder(Xtr, ytr, args.bits, allocation=args.allocation or "mutual_info",
                       feature_names=names)
    write_table_csv(out / "train.csv", Xtr, ytr, names, args.label_column)
    write_table_csv(out / "test.csv", Xte, yte, names, args.label_column)
    ds = build_encoded_dataset(Xtr, ytr, spec)
    _write_encoded(out / "encoded.csv", ds)
    _write_json(out / "encoder.json", spec.to_dict())
    return {"bits": list(spec.bits), "train_rows": len(ytr), "test_rows": len(yte),
            "distinct_inputs": len(ds.z_frequencies())}


def _write_encoded(path, data: EncodedDataset):
    lines = ["bits,label,count"] + [f"{z},{y},{c}" for (z, y), c in data.counts.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _datasets(args, spec, task):
    """Encoded train (and optional test) sets for either task."""
    if task == "dynamics":
        trajs = _read_trajectories(args.train)
        _check_states(spec, trajs, args.train)
        train_ = dynamics.build_transition_dataset(trajs, spec).data
        test = None
        if args.test:
            tt = _read_trajectories(args.test)
            _check_states(spec, tt, args.test)
            test = dynamics.build_transition_dataset(tt, spec).data
        return train_, test
    X, y, _ = _read_table(args.train, args.label_column)
    _check_features(spec, X, args.train)
    train_ = build_encoded_dataset(X, y, spec)
    test = None
    if args.test:
        Xt, yt, _ = _read_table(args.test, args.label_column)
        _check_features(spec, Xt, args.test)
        test = build_encoded_dataset(Xt, yt, spec)
    return train_, test


def _finish_training(model, train_data, test_data, args, out, spec, extra=None):
    report = train(model, train_data, test_data, _train_config(args))
    trained = QlmModel(report.model.layout, report.model.params, model.task, spec)
    (out / "model.json").write_text(serialize(trained) + "\n")
    info = {"num_qubits": trained.num_qubits, "parameter_count": trained.layout.parameter_count}
    info.update(extra or {})
    write_metrics(report, out, info)
    last = report.epochs[-1] if report.epochs else None
    return {"final_loss": report.final_loss,
            "train_accuracy": None if last is None else last.train_accuracy,
            "test_accuracy": None if last is None else last.test_accuracy}


def cmd_train(args, out: Path):
    spec = _load_encoder(args.encoder)
    train_data, test_data = _datasets(args, spec, args.task)
    if args.task == "dynamics":
        layout = build_brickwork_layout(spec.total_bits, 0, args.layers)
    else:
        ny = output_qubits_for(max(train_data.labels) + 1)
        layout = build_brickwork_layout(spec.total_bits, ny, args.layers)
    model = QlmModel.random(layout, args.task, seed=args.seed)
    return _finish_training(model, train_data, test_data, args, out, spec)


def cmd_grow(args, out: Path):
    small = _load_model(args.model)
    small_spec = _require_encoder(small, args.model)
    if small.task != "classification":
        raise ArtifactMismatchError("grow supports classification models")
    X, y, names = _read_table(args.train, args.label_column)
    _check_features(small_spec, X, args.train)
    spec = fit_encoder(X, y, args.bits, allocation=args.allocation or "mutual_info",
                       feature_names=names)
    model = grow_model(small, small_spec.bits, spec.bits, args.layers, seed=args.seed)
    train_data, test_data = _datasets(args, spec, "classification")
    return _finish_training(model, train_data, test_data, args, out, spec,
                            {"grown_from_qubits": small.num_qubits})


def cmd_eval(args, out: Path):
    model = _load_model(args.model)
    spec = _require_encoder(model, args.model)
    if model.task == "dynamics":
        trajs = _read_trajectories(args.data)
        _check_states(spec, trajs, args.data)
        data = dynamics.build_transition_dataset(trajs, spec).data
        result = {"one_step_fidelity": dynamics.one_step_fidelity(model, trajs, spec)}
    else:
        X, y, _ = _read_table(args.data, args.label_column)
        _check_features(spec, X, args.data)
        data = build_encoded_dataset(X, y, spec)
        result = {}
    result.update({"accuracy": accuracy(model, data), "loss": loss(model, data).loss,
                   "samples": data.n_samples})
    _write_json(out / "metrics.json", {"format": "bitqlm-eval", "version": 1, **result})
    return result


def cmd_rollout(args, out: Path):
    model = _load_model(args.model)
    spec = _require_encoder(model, args.model)
    if (args.z0 is None) == (args.x0 is None):
        raise ArtifactMismatchError("give exactly one of --z0 and --x0")
    if args.x0 is not None:
        x0 = np.array([float(v) for v in args.x0.split(",")])
        if len(x0) != spec.num_features:
            raise ArtifactMismatchError(
                f"--x0 has {len(x0)} values but the encoder expects {spec.num_features}"
            )
        z0 = encode_value(x0, spec)
    else:
        z0 = args.z0
    states = dynamics.rollout(model, z0, args.horizon, args.mode, args.seed)
    dynamics.write_rollout_csv(out / "rollout.csv", states, spec)
    return {"z0": z0, "final": states[-1]}


def cmd_baseline(args, out: Path):
    Xtr, ytr, _ = _read_table(args.train, args.label_column)
    Xte, yte, _ = _read_table(args.test, args.label_column)
    if Xte.shape[1] != Xtr.shape[1]:
        raise ArtifactMismatchError("train and test files have different feature columns")
    clf = LogisticRegressionGD(learning_rate=args.learning_rate, max_iter=args.max_iter).fit(Xtr, ytr)
    result = {"baseline": "logistic-regression-gd",
              "train_accuracy": float(clf.score(Xtr, ytr)),
              "test_accuracy": float(clf.score(Xte, yte)),
              "iterations": int(clf.n_iter_)}
    if args.qlm_summary:
        summary = _read_json(args.qlm_summary, "QLM summary")
        result["qlm_test_accuracy"] = summary.get("test_accuracy")
        result["qlm_train_accuracy"] = summary.get("train_accuracy")
    _write_json(out / "baseline.json", {"format": "bitqlm-baseline", "version": 1, **result})
    return result


# -- parser ----------------------------------------------------------------------


def _add_training(p):
    p.add_argument("--layers", type=int, default=8, help="brickwork layers")
    p.add_argument("--epochs", type=int, default=200, help="maximum epochs")
    p.add_argument("--order", choices=("random", "sequential"), default="random")
    p.add_argument("--tol", type=float, default=1e-6, help="stop when an epoch gains less")
    p.add_argument("--label-column", default="label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitqlm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/{name})")
        p.add_argument("--config", help="JSON document whose values override flags")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("gen-data", cmd_gen_data, "generate synthetic data")
    p.add_argument("--kind", choices=("two-class-proteins", "trajectories"), default="two-class-proteins")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--features", type=int, default=9)
    p.add_argument("--shift", type=float, default=0.3, help="class-1 log-mean shift")
    p.add_argument("--correlation", type=float, default=0.6)
    p.add_argument("--sigma", type=float, default=0.3, help="log-scale spread")
    p.add_argument("--system", choices=dynamics.SYSTEMS, default="linear-decay")
    p.add_argument("--rate", type=float, default=1.0, help="linear-decay rate")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--n-trajectories", type=int, default=40)

    p = command("encode", cmd_encode, "split raw data and fit the bit encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("classification", "dynamics"), default="classification")
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("--allocation", choices=("mutual_info", "variance"))
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--label-column", default="label")

    p = command("train", cmd_train, "train a model from an encoder and data files")
    p.add_argument("--encoder", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--task", choices=("classification", "dynamics"), default="classification")
    _add_training(p)

    p = command("grow", cmd_grow, "grow a trained classifier onto more bits and keep training")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--allocation", choices=("mutual_info", "variance"))
    _add_training(p)

    p = command("eval", cmd_eval, "evaluate a model on a data file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")

    p = command("rollout", cmd_rollout, "iterate a dynamics model from a start state")
    p.add_argument("--model", required=True)
    p.add_argument("--z0", help="start bit string")
    p.add_argument("--x0", help="start state as comma-separated values")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--mode", choices=("argmax", "sampled"), default="argmax")

    p = command("baseline", cmd_baseline, "logistic-regression baseline on raw features")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--qlm-summary", help="summary.json of a QLM run to report alongside")
    return parser


def _apply_config(args, parser):
    doc = _read_json(args.config, "config")
    if not isinstance(doc, dict) or doc.get("format") != RUN_CONFIG_FORMAT:
        raise ParseError(f"{args.config}: not a {RUN_CONFIG_FORMAT} document")
    if doc.get("version") != RUN_CONFIG_VERSION:
        raise ParseError(f"{args.config}: unsupported version {doc.get('version')}")
    if doc.get("command", args.command) != args.command:
        raise ArtifactMismatchError(
            f"{args.config} records command {doc['command']!r}, not {args.command!r}"
        )
    known = set(vars(args))
    for key, value in doc.get("options", {}).items():
        if key not in known or key in _LOCATION_KEYS:
            raise ParseError(f"{args.config}: unknown option {key!r}")
        setattr(args, key, value)


def resolved_config(args) -> dict:
    options = {k: v for k, v in sorted(vars(args).items()) if k not in _LOCATION_KEYS}
    return {"format": RUN_CONFIG_FORMAT, "version": RUN_CONFIG_VERSION,
            "command": args.command, "options": options}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            _apply_config(args, parser)
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = Path(args.out) if args.out else root / args.command
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", resolved_config(args))
        result = args.func(args, out)
    except QLMError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "out": str(out), **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
