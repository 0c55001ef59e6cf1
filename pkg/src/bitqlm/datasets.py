"""Synthetic two-class data, tabular CSV files, and train/test splitting."""

from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidArgumentError, ParseError


def make_protein_classes(n_per_class=100, n_features=9, shift=0.3, correlation=0.6, sigma=0.3,
                         seed=0):
    """Two classes of positive "concentration" vectors.

    Log-levels are Gaussian with equicorrelation ``correlation`` and scale
    ``sigma``. Class 1 moves every log-mean by ``shift`` with alternating
    sign (up, down, up, ...), so no single feature carries the whole signal.
    Rows come back in a seeded random order; labels are 0 and 1.
    """
    if n_per_class < 1 or n_features < 1:
        raise InvalidArgumentError("need at least one sample per class and one feature")
    if not -1.0 / max(n_features - 1, 1) < correlation < 1.0:
        raise InvalidArgumentError(f"correlation {correlation} does not give a valid covariance")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    rng = np.random.default_rng(seed)
    cov = sigma**2 * ((1 - correlation) * np.eye(n_features) + correlation)
    chol = np.linalg.cholesky(cov)
    signs = np.where(np.arange(n_features) % 2 == 0, 1.0, -1.0)
    base = np.log(10.0) + 0.25 * np.sin(np.arange(n_features))
    logs = []
    for label in (0, 1):
        mean = base + label * shift * signs
        logs.append(mean + rng.standard_normal((n_per_class, n_features)) @ chol.T)
    X = np.exp(np.vstack(logs))
    y = np.repeat([0, 1], n_per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def make_separable(n_samples=200, n_features=4, margin=0.5, seed=0):
    """Linearly separable points: labels from a random hyperplane, then pushed off it."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n_features)
    w /= np.linalg.norm(w)
    X = rng.standard_normal((n_samples, n_features))
    side = X @ w
    y = (side > 0).astype(int)
    X += np.outer(np.where(y == 1, margin, -margin), w)
    return X, y


def train_test_split(X, y, test_fraction=0.2, seed=0):
    """Seeded shuffle split on raw samples: ``(X_train, X_test, y_train, y_test)``."""
    X = np.asarray(X)
    y = np.asarray(y)
    if len(X) != len(y):
        raise InvalidArgumentError(f"{len(X)} rows but {len(y)} labels")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError("test_fraction must lie in (0, 1)")
    n_test = int(round(test_fraction * len(y)))
    if n_test == 0 or n_test == len(y):
        raise InvalidArgumentError(f"cannot split {len(y)} samples with test_fraction={test_fraction}")
    order = np.random.default_rng(seed).permutation(len(y))
    test, train = order[:n_test], order[n_test:]
    return X[train], X[test], y[train], y[test]


def write_table_csv(path, X, y=None, feature_names=None, label_column="label") -> None:
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names) if feature_names else [f"f{i + 1}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ([label_column] if y is not None else []))
        for i, row in enumerate(X):
            w.writerow([repr(float(v)) for v in row] + ([int(y[i])] if y is not None else []))


def read_table_csv(path, label_column="label"):
    """Read a header-first numeric CSV; returns ``(X, y, feature_names)``.

    ``y`` is ``None`` when the label column is absent or ``label_column`` is None.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    label_idx = header.index(label_column) if label_column in header else None
    names = [h for i, h in enumerate(header) if i != label_idx]
    X, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            X.append([float(v) for i, v in enumerate(row) if i != label_idx])
            if label_idx is not None:
                label = float(row[label_idx])
                if label != int(label):
                    raise ValueError(f"label {row[label_idx]!r} is not an integer")
                y.append(int(label))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not X:
        raise ParseError(f"{path}: no data rows")
    return np.array(X), (np.array(y, dtype=np.int64) if label_idx is not None else None), names
