"""Classifiers trained without gradients: KNN, nearest-prototype layers
(mean and coordinate-wise median), and streaming LDA.

All of them expose observe(z, y) / predict(z) / predict_batch(Z) and learn
in a single pass over the stream; re-observing the same data would corrupt
counts, so the trainer never runs epochs over these.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NumericalError, ShapeError, StateError, ValidationError

SLDA_SHRINKAGE = 1e-4


def _check_vector(z: np.ndarray, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape != (dim,):
        raise ShapeError(f"expected feature vector of length {dim}, got {z.shape}")
    return z


def _check_batch(Z: np.ndarray, dim: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != dim:
        raise ShapeError(f"expected (n, {dim}) query batch, got {Z.shape}")
    return Z


class KnnState:
    """k-nearest-neighbors over stored exemplars, euclidean distance.

    Distance ties resolve to the earlier-inserted exemplar; vote ties to the
    lowest class label.
    """

    def __init__(self, k: int, num_classes: int, dim: int):
        if k < 1:
            raise ValidationError("k must be >= 1")
        self.k = k
        self.num_classes = num_classes
        self.dim = dim
        self._features: list[np.ndarray] = []
        self._labels: list[int] = []

    def __len__(self) -> int:
        return len(self._labels)

    def describe(self) -> str:
        return f"knn{self.k}"

    def observe(self, z: np.ndarray, y: int) -> None:
        self._features.append(_check_vector(z, self.dim))
        self._labels.append(int(y))

    def predict_batch(self, Z: np.ndarray) -> np.ndarray:
        if not self._labels:
            raise StateError("knn predict requires at least one stored exemplar")
        Z = _check_batch(Z, self.dim)
        stored = np.asarray(self._features)
        labels = np.asarray(self._labels)
        k = min(self.k, len(labels))
        d2 = ((Z[:, None, :] - stored[None, :, :]) ** 2).sum(axis=2)
        out = np.empty(Z.shape[0], dtype=np.int64)
        for i in range(Z.shape[0]):
            # stable sort keeps insertion order among equal distances
            nearest = np.argsort(d2[i], kind="stable")[:k]
            votes = np.bincount(labels[nearest], minlength=self.num_classes)
            out[i] = int(np.argmax(votes))
        return out

    def predict(self, z: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(z, dtype=np.float64)[None, :])[0])


class PrototypeState:
    """Nearest-prototype classifier; prototype = running mean or stored median.

    Mean mode keeps one running mean per class (single pass, O(h) memory per
    class). Median mode stores all exemplars and takes the coordinate-wise
    median at prediction time.
    """

    MEAN = "mean"
    MEDIAN = "median"

    def __init__(self, mode: str, num_classes: int, dim: int):
        if mode not in (self.MEAN, self.MEDIAN):
            raise ValidationError(f"unknown prototype mode {mode!r}")
        self.mode = mode
        self.num_classes = num_classes
        self.dim = dim
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.means = np.zeros((num_classes, dim))
        self._stored: list[list[np.ndarray]] = [[] for _ in range(num_classes)]

    def describe(self) -> str:
        return self.mode

    def observe(self, z: np.ndarray, y: int) -> None:
        z = _check_vector(z, self.dim)
        y = int(y)
        if not 0 <= y < self.num_classes:
            raise ValidationError(f"label {y} out of range")
        if self.mode == self.MEAN:
            c = self.counts[y]
            self.means[y] = (c * self.means[y] + z) / (c + 1)
        else:
            self._stored[y].append(z)
        self.counts[y] += 1

    def prototypes(self) -> tuple[np.ndarray, np.ndarray]:
        """(observed class labels, their prototype vectors)."""
        observed = np.flatnonzero(self.counts > 0)
        if len(observed) == 0:
            raise StateError("prototype predict requires at least one observation")
        if self.mode == self.MEAN:
            return observed, self.means[observed]
        protos = np.stack([np.median(np.asarray(self._stored[c]), axis=0) for c in observed])
        return observed, protos

    def predict_batch(self, Z: np.ndarray) -> np.ndarray:
        observed, protos = self.prototypes()
        Z = _check_batch(Z, self.dim)
        d2 = ((Z[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
        return observed[np.argmin(d2, axis=1)]

    def predict(self, z: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(z, dtype=np.float64)[None, :])[0])


class SldaState:
    """Streaming LDA: per-class means plus one shared streaming covariance.

    Covariance recursion (t = total observations so far, mu_y the pre-update
    mean of the observed class):

        delta = (z - mu_y)(z - mu_y)^T * t / (t + 1)
        Sigma <- (t Sigma + delta) / (t + 1)

    then the class mean and counters advance. Prediction solves the
    shrunken SPD system ((1-eps) Sigma + eps I) w_k = mu_k instead of
    forming an explicit inverse; results are cached until the next observe.
    """

    def __init__(self, num_classes: int, dim: int, shrinkage: float = SLDA_SHRINKAGE):
        self.num_classes = num_classes
        self.dim = dim
        self.shrinkage = shrinkage
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.means = np.zeros((num_classes, dim))
        self.sigma = np.zeros((dim, dim))
        self.total = 0
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def describe(self) -> str:
        return "slda"

    def observe(self, z: np.ndarray, y: int) -> None:
        z = _check_vector(z, self.dim)
        y = int(y)
        if not 0 <= y < self.num_classes:
            raise ValidationError(f"label {y} out of range")
        t = self.total
        diff = z - self.means[y]
        delta = np.outer(diff, diff) * (t / (t + 1))
        self.sigma = (t * self.sigma + delta) / (t + 1)
        c = self.counts[y]
        self.means[y] = (c * self.means[y] + z) / (c + 1)
        self.counts[y] += 1
        self.total += 1
        self._cache = None

    def _weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-class (w_k, b_k) for observed classes; cached until stale."""
        if self._cache is not None:
            return self._cache
        observed = np.flatnonzero(self.counts > 0)
        if len(observed) == 0:
            raise StateError("slda predict requires at least one observation")
        shrunk = (1.0 - self.shrinkage) * self.sigma + self.shrinkage * np.eye(self.dim)
        mu = self.means[observed]
        try:
            factor = scipy.linalg.cho_factor(shrunk)
            w_obs = scipy.linalg.cho_solve(factor, mu.T).T
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"shrunken covariance is not SPD: {exc}") from exc
        if not np.all(np.isfinite(w_obs)):
            raise NumericalError("slda solve produced non-finite weights")
        W = np.zeros((self.num_classes, self.dim))
        W[observed] = w_obs
        bias = np.full(self.num_classes, -np.inf)
        bias[observed] = -0.5 * np.einsum("ij,ij->i", mu, w_obs)
        self._cache = (W, bias)
        return self._cache

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Per-class scores <z, w_k> + b_k; -inf for never-observed classes."""
        W, bias = self._weights()
        z = _check_vector(z, self.dim)
        out = W @ z + bias
        out[self.counts == 0] = -np.inf
        return out

    def predict_batch(self, Z: np.ndarray) -> np.ndarray:
        W, bias = self._weights()
        Z = _check_batch(Z, self.dim)
        scores = Z @ W.T + bias
        scores[:, self.counts == 0] = -np.inf
        return np.argmax(scores, axis=1)

    def predict(self, z: np.ndarray) -> int:
        return int(np.argmax(self.logits(z)))


SimilarityHead = KnnState | PrototypeState | SldaState
