"""Compression of real feature vectors to short bit strings.

Pipeline: PCA rotation, min-max scaling of each principal component to
``[0, 1]`` using the training range, a per-component bit budget ``b_i`` with
``sum(b_i) = B``, and truncation ``z_i = floor(s_i * 2**b_i)``. The bit string
concatenates the component fields in component order, high bit first.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateDataError, InvalidArgumentError, ParseError
from .simulator import index_to_bits

DEFAULT_MAX_BITS = 24
_TIE_TOL = 1e-12


def check_raw(features, labels=None, *, classification=True):
    """Validate a raw dataset, returning float features and integer labels."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgumentError(f"features must be a 2-D matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InvalidArgumentError("need at least two samples")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features contain non-finite values")
    if labels is None:
        return X, None
    y = np.asarray(labels)
    if y.shape != (X.shape[0],):
        raise InvalidArgumentError(f"expected {X.shape[0]} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidArgumentError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0):
        raise InvalidArgumentError("labels must be non-negative")
    if classification and len(np.unique(y)) < 2:
        raise InvalidArgumentError("classification needs at least two distinct labels")
    return X, y.astype(np.int64)


def fit_pca(features):
    """Principal axes of ``features``.

    Returns ``(mean, components, variances)``; rows of ``components`` are
    orthonormal, sorted by decreasing variance, and each row's largest
    magnitude entry is positive.
    """
    X, _ = check_raw(features)
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    if not np.trace(cov) > 0:
        raise DegenerateDataError("all features are constant; nothing to project")
    variances, vectors = np.linalg.eigh(cov)
    order = np.argsort(variances, kind="stable")[::-1]
    variances = np.clip(variances[order], 0.0, None)
    components = vectors[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return mean, components, variances


def quantize(scaled, bits: int):
    """Truncate values in ``[0, 1]`` to ``bits`` bits; 1.0 lands in the top bin."""
    scaled = np.asarray(scaled, dtype=np.float64)
    if bits == 0:
        return np.zeros(scaled.shape, dtype=np.int64)
    top = 2**bits - 1
    return np.minimum(np.floor(scaled * 2**bits), top).astype(np.int64)


def minmax_scale(values, lo, hi):
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((values - lo) / span, 0.0, 1.0)


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) between two discrete label arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= n
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def allocate_bits(projected, labels, total_bits: int, max_bits: int = DEFAULT_MAX_BITS):
    """Greedy bit allocation by marginal mutual information with the label.

    Each of the ``total_bits`` rounds tries one more bit on every component,
    quantizes that component of the training data, and gives the bit to the
    component whose plug-in MI with ``labels`` grows the most (lowest index on
    ties). Components with zero training range never receive bits.
    """
    P = np.asarray(projected, dtype=np.float64)
    y = np.asarray(labels)
    _check_budget(total_bits, max_bits)
    lo, hi = P.min(axis=0), P.max(axis=0)
    usable = hi > lo
    if not usable.any():
        raise DegenerateDataError("every component has zero range")
    scaled = minmax_scale(P, lo, hi)
    bits = np.zeros(P.shape[1], dtype=np.int64)
    current = np.zeros(P.shape[1])
    for _ in range(total_bits):
        trial = np.full(P.shape[1], -np.inf)
        for i in np.flatnonzero(usable):
            trial[i] = mutual_information(quantize(scaled[:, i], bits[i] + 1), y)
        gains = trial - current
        best = int(np.flatnonzero(gains >= gains.max() - _TIE_TOL)[0])
        bits[best] += 1
        current[best] = trial[best]
    return bits


def allocate_bits_by_variance(variances, total_bits: int, max_bits: int = DEFAULT_MAX_BITS):
    """Unsupervised allocation: each bit goes to the component with the largest
    remaining quantization variance ``var_i / 4**b_i`` (lowest index on ties)."""
    var = np.asarray(variances, dtype=np.float64)
    _check_budget(total_bits, max_bits)
    if not np.any(var > 0):
        raise DegenerateDataError("every component has zero variance")
    bits = np.zeros(len(var), dtype=np.int64)
    for _ in range(total_bits):
        score = np.where(var > 0, var / 4.0**bits, -np.inf)
        bits[int(np.flatnonzero(score >= score.max() * (1 - _TIE_TOL))[0])] += 1
    return bits


def _check_budget(total_bits, max_bits):
    if total_bits < 1:
        raise InvalidArgumentError("total bit budget must be >= 1")
    if total_bits > max_bits:
        raise InvalidArgumentError(f"bit budget {total_bits} exceeds the cap of {max_bits}")


@dataclass(frozen=True)
class EncoderSpec:
    pca_mean: np.ndarray
    pca_components: np.ndarray
    component_min: np.ndarray
    component_max: np.ndarray
    bits: tuple
    feature_names: tuple = ()

    def __post_init__(self):
        d = len(self.pca_mean)
        for name in ("pca_mean", "component_min", "component_max"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (d,):
                raise InvalidArgumentError(f"{name} must have length {d}")
            object.__setattr__(self, name, arr)
        comps = np.asarray(self.pca_components, dtype=np.float64)
        if comps.shape != (d, d):
            raise InvalidArgumentError(f"pca_components must be {d}x{d}")
        if not np.allclose(comps @ comps.T, np.eye(d), atol=1e-9):
            raise InvalidArgumentError("pca_components rows are not orthonormal")
        object.__setattr__(self, "pca_components", comps)
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != d or any(b < 0 for b in bits):
            raise InvalidArgumentError("bits must be d non-negative integers")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        for i, b in enumerate(bits):
            if b > 0 and not self.component_max[i] > self.component_min[i]:
                raise InvalidArgumentError(f"component {i} has bits but zero range")

    @property
    def num_features(self) -> int:
        return len(self.pca_mean)

    @property
    def total_bits(self) -> int:
        return sum(self.bits)

    def project(self, X):
        return (np.asarray(X, dtype=np.float64) - self.pca_mean) @ self.pca_components.T

    def to_dict(self) -> dict:
        return {
            "pca_mean": self.pca_mean.tolist(),
            "pca_components": self.pca_components.tolist(),
            "component_min": self.component_min.tolist(),
            "component_max": self.component_max.tolist(),
            "bits": list(self.bits),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, doc) -> "EncoderSpec":
        if not isinstance(doc, dict):
            raise ParseError("field 'encoder' must be an object")
        for key in ("pca_mean", "pca_components", "component_min", "component_max", "bits"):
            if key not in doc:
                raise ParseError(f"field 'encoder.{key}' is missing")
        try:
            return cls(
                np.array(doc["pca_mean"], dtype=np.float64),
                np.array(doc["pca_components"], dtype=np.float64),
                np.array(doc["component_min"], dtype=np.float64),
                np.array(doc["component_max"], dtype=np.float64),
                tuple(doc["bits"]),
                tuple(doc.get("feature_names", ())),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"field 'encoder': {exc}") from exc


def fit_encoder(features, labels=None, total_bits=3, allocation="mutual_info",
                max_bits=DEFAULT_MAX_BITS, feature_names=()) -> EncoderSpec:
    """Fit PCA, training ranges, and a bit allocation.

    ``allocation`` is ``"mutual_info"`` (needs labels), ``"variance"``, or an
    explicit sequence of per-component bit counts.
    """
    X, y = check_raw(features, labels, classification=False)
    mean, comps, variances = fit_pca(X)
    projected = (X - mean) @ comps.T
    lo, hi = projected.min(axis=0), projected.max(axis=0)
    if isinstance(allocation, str):
        if allocation == "mutual_info":
            if y is None:
                raise InvalidArgumentError("mutual-information allocation needs labels")
            bits = allocate_bits(projected, y, total_bits, max_bits)
        elif allocation == "variance":
            bits = allocate_bits_by_variance(variances, total_bits, max_bits)
        else:
            raise InvalidArgumentError(f"unknown allocation {allocation!r}")
    else:
        bits = np.asarray(allocation, dtype=np.int64)
        if bits.sum() != total_bits:
            raise InvalidArgumentError("explicit allocation does not sum to total_bits")
        _check_budget(total_bits, max_bits)
    return EncoderSpec(mean, comps, lo, hi, tuple(bits), tuple(feature_names))


def encode_fields(X, spec: EncoderSpec) -> np.ndarray:
    """Per-component bin indices, shape ``(n, d)``; zero where ``b_i = 0``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.num_features:
        raise InvalidArgumentError(
            f"expected {spec.num_features} features, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("cannot encode non-finite values")
    scaled = minmax_scale(spec.project(X), spec.component_min, spec.component_max)
    return np.column_stack([quantize(scaled[:, i], b) for i, b in enumerate(spec.bits)])


def encode_indices(X, spec: EncoderSpec) -> np.ndarray:
    """Integer value of each row's bit string (component 0 most significant)."""
    fields = encode_fields(X, spec)
    codes = np.zeros(len(fields), dtype=np.int64)
    for i, b in enumerate(spec.bits):
        if b:
            codes = (codes << b) | fields[:, i]
    return codes


def encode_value(x, spec: EncoderSpec) -> str:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("encode_value takes a single feature vector")
    return index_to_bits(encode_indices(x[None, :], spec)[0], spec.total_bits)


def split_fields(z: str, bits) -> list[int]:
    if len(z) != sum(bits):
        raise InvalidArgumentError(f"bit string {z!r} does not have {sum(bits)} bits")
    out, pos = [], 0
    for b in bits:
        out.append(int(z[pos : pos + b], 2) if b else 0)
        pos += b
    return out


def decode_midpoint(z: str, spec: EncoderSpec) -> np.ndarray:
    """Feature vector at the centre of ``z``'s bin (b_i = 0 components sit mid-range)."""
    fields = split_fields(z, spec.bits)
    scaled = np.array([(f + 0.5) / 2**b for f, b in zip(fields, spec.bits)])
    projected = spec.component_min + scaled * (spec.component_max - spec.component_min)
    return spec.pca_mean + projected @ spec.pca_components


def allocation_embedding(small_bits, large_bits) -> dict[int, int]:
    """Input-qubit map from a ``small_bits`` encoding into a refined ``large_bits`` one.

    Truncation keeps high bits, so field bit ``k`` of component ``i`` means the
    same thing in both encodings whenever ``large_bits[i] >= small_bits[i]``.
    """
    small_bits, large_bits = list(small_bits), list(large_bits)
    if len(small_bits) != len(large_bits) or any(s > l for s, l in zip(small_bits, large_bits)):
        raise InvalidArgumentError(
            f"allocation {large_bits} does not refine {small_bits}"
        )
    ns, nl = sum(small_bits), sum(large_bits)
    emb = {}
    ps = pl = 0
    for s, l in zip(small_bits, large_bits):
        for k in range(s):
            # string position p sits on qubit (width - 1 - p)
            emb[ns - 1 - (ps + k)] = nl - 1 - (pl + k)
        ps += s
        pl += l
    return emb


class EncodedDataset:
    """Empirical joint counts of (bit string, label) pairs."""

    def __init__(self, counts, bit_length: int):
        self.bit_length = int(bit_length)
        self.counts = {}
        for (z, y), c in sorted(counts.items()):
            if len(z) != self.bit_length:
                raise InvalidArgumentError(f"bit string {z!r} is not {bit_length} bits long")
            if c > 0:
                self.counts[(z, int(y))] = int(c)

    @classmethod
    def from_pairs(cls, z_indices, labels, bit_length):
        pairs = Counter(
            (index_to_bits(z, bit_length), int(y)) for z, y in zip(z_indices, labels)
        )
        return cls(pairs, bit_length)

    def __len__(self):
        return self.n_samples

    @property
    def n_samples(self) -> int:
        return sum(self.counts.values())

    @property
    def labels(self) -> list[int]:
        return sorted({y for _, y in self.counts})

    def joint_frequencies(self) -> dict:
        n = self.n_samples
        return {key: c / n for key, c in self.counts.items()}

    def z_frequencies(self) -> dict:
        n = self.n_samples
        out = Counter()
        for (z, _), c in self.counts.items():
            out[z] += c
        return {z: c / n for z, c in sorted(out.items())}

    def targets(self) -> dict:
        """``C(z) = argmax_y f(z, y)``, ties going to the smallest label."""
        best = {}
        for (z, y), c in self.counts.items():
            if z not in best or c > best[z][1] or (c == best[z][1] and y < best[z][0]):
                best[z] = (y, c)
        return {z: y for z, (y, _) in sorted(best.items())}

    def loss_arrays(self):
        """``(z_index, f(z), C(z))`` arrays over the distinct inputs."""
        freqs = self.z_frequencies()
        targets = self.targets()
        zs = list(freqs)
        return (
            np.array([int(z, 2) for z in zs], dtype=np.int64),
            np.array([freqs[z] for z in zs]),
            np.array([targets[z] for z in zs], dtype=np.int64),
        )

    def sample_arrays(self):
        """``(z_index, label, count)`` arrays over every distinct pair."""
        keys = list(self.counts)
        return (
            np.array([int(z, 2) for z, _ in keys], dtype=np.int64),
            np.array([y for _, y in keys], dtype=np.int64),
            np.array([self.counts[k] for k in keys], dtype=np.int64),
        )


def build_encoded_dataset(features, labels, spec: EncoderSpec) -> EncodedDataset:
    X, y = check_raw(features, labels, classification=False)
    return EncodedDataset.from_pairs(encode_indices(X, spec), y, spec.total_bits)


class BitEncoder(TransformerMixin, BaseEstimator):
    """PCA + bit-allocation encoder with the scikit-learn transformer API.

    ``transform`` returns the encoded bits as an ``(n_samples, n_bits)`` 0/1
    matrix (column order equals bit-string order); ``encode`` returns the
    integer codes.
    """

    def __init__(self, n_bits=3, allocation="mutual_info", max_bits=DEFAULT_MAX_BITS):
        self.n_bits = n_bits
        self.allocation = allocation
        self.max_bits = max_bits

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.spec_ = fit_encoder(X, y, self.n_bits, self.allocation, self.max_bits)
        self.n_features_in_ = X.shape[1]
        return self

    def encode(self, X):
        check_is_fitted(self, "spec_")
        return encode_indices(check_array(X, dtype=np.float64), self.spec_)

    def transform(self, X):
        codes = self.encode(X)
        shifts = np.arange(self.spec_.total_bits - 1, -1, -1)
        return (codes[:, None] >> shifts) & 1

    def decode(self, codes):
        check_is_fitted(self, "spec_")
        width = self.spec_.total_bits
        return np.array([decode_midpoint(index_to_bits(c, width), self.spec_) for c in codes])
