"""Scikit-learn style estimators: the QLM classifier and a plain logistic baseline."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoder import allocation_embedding, build_encoded_dataset, encode_indices, fit_encoder
from .errors import InvalidArgumentError, StructureMismatchError
from .model import (
    QlmModel,
    build_brickwork_layout,
    build_subnet_layout,
    grow_from_subnet,
)
from .trainer import TrainConfig, train


def output_qubits_for(n_classes: int) -> int:
    return max(1, math.ceil(math.log2(n_classes)))


def grow_model(small: QlmModel, small_bits, large_bits, num_layers: int, seed=0) -> QlmModel:
    """Embed a trained classifier into a brickwork over a refined encoding.

    ``large_bits`` must give every component at least as many bits as
    ``small_bits``; the small circuit's layers are kept in front.
    """
    try:
        inputs = allocation_embedding(small_bits, large_bits)
    except InvalidArgumentError as exc:
        raise StructureMismatchError(str(exc)) from None
    ny = small.layout.num_output_qubits
    nx = sum(large_bits)
    emb = dict(inputs)
    for k in range(ny):
        emb[small.layout.num_input_qubits + k] = nx + k
    layout = build_subnet_layout(small.layout, nx, ny, num_layers, emb)
    return grow_from_subnet(small, layout, emb, seed=seed)


class QLMClassifier(ClassifierMixin, BaseEstimator):
    """Encode features to ``n_bits`` bits and train a brickwork QLM on them.

    ``fit(X, y, init_from=small)`` grows the model from an already fitted,
    smaller classifier: the small circuit is embedded unchanged and the new
    connections start as the identity, so training resumes where the small
    model stopped.
    """

    def __init__(self, n_bits=3, n_layers=3, max_epochs=200, order="random", tol=1e-6,
                 allocation="mutual_info", seed=0):
        self.n_bits = n_bits
        self.n_layers = n_layers
        self.max_epochs = max_epochs
        self.order = order
        self.tol = tol
        self.allocation = allocation
        self.seed = seed

    def _config(self):
        return TrainConfig(max_epochs=self.max_epochs, order=self.order, tol=self.tol, seed=self.seed)

    def fit(self, X, y, init_from=None, X_test=None, y_test=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise InvalidArgumentError("need at least two classes")
        codes = np.searchsorted(self.classes_, y)
        ny = output_qubits_for(len(self.classes_))
        self.spec_ = fit_encoder(X, codes, self.n_bits, self.allocation)
        train_data = build_encoded_dataset(X, codes, self.spec_)
        test_data = None
        if X_test is not None:
            X_test = check_array(X_test, dtype=np.float64)
            test_codes = np.searchsorted(self.classes_, np.asarray(y_test))
            test_data = build_encoded_dataset(X_test, test_codes, self.spec_)

        if init_from is None:
            layout = build_brickwork_layout(self.n_bits, ny, self.n_layers)
            model = QlmModel.random(layout, seed=self.seed)
        else:
            check_is_fitted(init_from, "model_")
            if not np.array_equal(init_from.classes_, self.classes_):
                raise InvalidArgumentError("init_from was fitted on different classes")
            model = grow_model(init_from.model_, init_from.spec_.bits, self.spec_.bits,
                               self.n_layers, self.seed)

        self.report_ = train(model, train_data, test_data, self._config())
        self.model_ = QlmModel(self.report_.model.layout, self.report_.model.params,
                               encoder=self.spec_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        """Output distribution restricted to the known classes and renormalized."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        z = encode_indices(X, self.spec_)
        distinct, inverse = np.unique(z, return_inverse=True)
        probs = self.model_.forward_indices(distinct)[:, : len(self.classes_)]
        total = probs.sum(axis=1, keepdims=True)
        probs = np.where(total > 0, probs / np.where(total > 0, total, 1.0), 1.0 / len(self.classes_))
        return probs[inverse]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class LogisticRegressionGD(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Features are standardized with training statistics before fitting.
    """

    def __init__(self, learning_rate=0.5, max_iter=5000, tol=1e-8, l2=0.0):
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.l2 = l2

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        k = len(self.classes_)
        if k < 2:
            raise InvalidArgumentError("need at least two classes")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        Z = np.hstack([(X - self.mean_) / self.scale_, np.ones((len(X), 1))])
        onehot = np.eye(k)[np.searchsorted(self.classes_, y)]
        W = np.zeros((Z.shape[1], k))
        prev = np.inf
        for it in range(self.max_iter):
            P = _softmax(Z @ W)
            nll = -np.mean(np.sum(onehot * np.log(np.clip(P, 1e-300, None)), axis=1))
            grad = Z.T @ (P - onehot) / len(Z) + self.l2 * np.vstack([W[:-1], np.zeros((1, k))])
            W -= self.learning_rate * grad
            if prev - nll < self.tol and it > 0:
                break
            prev = nll
        self.coef_ = W
        self.n_iter_ = it + 1
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        Z = np.hstack([(X - self.mean_) / self.scale_, np.ones((len(X), 1))])
        return _softmax(Z @ self.coef_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)
