"""Synthetic federated learning task for protocol experiments.

The protocol only needs a small surface from a learning problem: a
parameter dimension, per-device gradients, a local-update rule, and a
global evaluation. LearningTask pins that surface; the shipped
implementation is multinomial logistic regression on Gaussian blobs
whose samples are split across devices by Dirichlet-distributed class
proportions, the standard way to dial data heterogeneity with a single
concentration knob.

Model layout: a flat real vector of length dim = n_classes * (features + 1),
reshaped to a (n_classes, features + 1) matrix acting on [x; 1]. All
losses are mean cross-entropy over the samples involved.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ParameterError

# A Dirichlet split is redrawn until every device holds at least this many samples.
MIN_DEVICE_SAMPLES = 2


@dataclass(frozen=True)
class TaskEval:
    """Held-out evaluation of one model iterate."""

    loss: float
    accuracy: float


class LearningTask(abc.ABC):
    """What the protocol needs from a learning problem.

    Gradients are flat real vectors of length dim; device indices are
    0-based. local_update is the plain full-batch gradient descent the
    devices run between communication rounds; tasks with a different
    local rule override it.
    """

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        """Parameter dimension d."""

    @property
    @abc.abstractmethod
    def n_devices(self) -> int:
        """Number of devices holding local data."""

    @property
    @abc.abstractmethod
    def sample_counts(self) -> np.ndarray:
        """Local dataset sizes, shape (K,)."""

    @abc.abstractmethod
    def init_model(self) -> np.ndarray:
        """Deterministic initial iterate, shape (d,)."""

    @abc.abstractmethod
    def local_gradient(self, model: np.ndarray, device: int) -> np.ndarray:
        """Gradient of the device's local loss at the given model, shape (d,)."""

    @abc.abstractmethod
    def evaluate(self, model: np.ndarray) -> TaskEval:
        """Loss and accuracy on the held-out pooled test set."""

    def local_update(self, model: np.ndarray, device: int, eta: float,
                     epochs: int) -> np.ndarray:
        if epochs < 1 or eta <= 0:
            raise ParameterError("local_update needs epochs >= 1 and eta > 0")
        local = np.array(model, dtype=float, copy=True)
        for _ in range(epochs):
            local -= eta * self.local_gradient(local, device)
        return local


def _with_bias(x: np.ndarray) -> np.ndarray:
    """Append the constant feature: (n, f) -> (n, f + 1)."""
    return np.hstack([x, np.ones((x.shape[0], 1))])


@dataclass(frozen=True)
class SyntheticClassificationTask(LearningTask):
    """Multinomial logistic regression on Gaussian blobs, Dirichlet-split.

    train_x: (n, f) features, train_y: (n,) int labels; device_index holds
    one index array per device. The flat model reshapes to
    (n_classes, f + 1) and scores _with_bias(x) rows.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    device_index: tuple
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int

    @property
    def n_features(self) -> int:
        return self.train_x.shape[1]

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)

    @property
    def n_devices(self) -> int:
        return len(self.device_index)

    @property
    def sample_counts(self) -> np.ndarray:
        return np.array([idx.size for idx in self.device_index])

    def _theta(self, model: np.ndarray) -> np.ndarray:
        model = np.asarray(model, dtype=float)
        if model.shape != (self.dim,):
            raise ParameterError(f"model must have shape ({self.dim},), got {model.shape}")
        return model.reshape(self.n_classes, self.n_features + 1)

    def init_model(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _loss_grad(self, model: np.ndarray, x: np.ndarray, y: np.ndarray):
        theta = self._theta(model)
        xb = _with_bias(x)  # (n, f + 1)
        logits = xb @ theta.T  # (n, C)
        loss = -float(np.mean(log_softmax(logits, axis=1)[np.arange(y.size), y]))
        resid = softmax(logits, axis=1)
        resid[np.arange(y.size), y] -= 1.0
        grad = (resid.T @ xb) / y.size  # (C, f + 1)
        return loss, grad.ravel()

    def local_gradient(self, model: np.ndarray, device: int) -> np.ndarray:
        idx = self.device_index[device]
        _, grad = self._loss_grad(model, self.train_x[idx], self.train_y[idx])
        return grad

    def local_loss(self, model: np.ndarray, device: int) -> float:
        idx = self.device_index[device]
        loss, _ = self._loss_grad(model, self.train_x[idx], self.train_y[idx])
        return loss

    def pooled_gradient(self, model: np.ndarray) -> np.ndarray:
        """Gradient of the sample-weighted global objective (pooled mean loss)."""
        _, grad = self._loss_grad(model, self.train_x, self.train_y)
        return grad

    def pooled_loss(self, model: np.ndarray) -> float:
        loss, _ = self._loss_grad(model, self.train_x, self.train_y)
        return loss

    def evaluate(self, model: np.ndarray) -> TaskEval:
        theta = self._theta(model)
        logits = _with_bias(self.test_x) @ theta.T
        loss = -float(np.mean(log_softmax(logits, axis=1)[np.arange(self.test_y.size), self.test_y]))
        accuracy = float(np.mean(np.argmax(logits, axis=1) == self.test_y))
        return TaskEval(loss=loss, accuracy=accuracy)

    def class_proportions(self) -> np.ndarray:
        """Per-device class histograms, shape (K, n_classes); rows sum to 1."""
        out = np.zeros((self.n_devices, self.n_classes))
        for k, idx in enumerate(self.device_index):
            counts = np.bincount(self.train_y[idx], minlength=self.n_classes)
            out[k] = counts / idx.size
        return out


def _blob_means(rng, n_classes: int, n_features: int, separation: float,
                max_tries: int = 200) -> np.ndarray:
    """Class means with pairwise distance >= separation (rejection sampled)."""
    for _ in range(max_tries):
        means = separation * rng.standard_normal((n_classes, n_features))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        if np.min(dist[~np.eye(n_classes, dtype=bool)]) >= separation:
            return means
    raise ParameterError("could not draw separated class means; relax separation")


def _balanced_labels(n: int, n_classes: int) -> np.ndarray:
    reps = np.full(n_classes, n // n_classes)
    reps[: n % n_classes] += 1
    return np.repeat(np.arange(n_classes), reps)


def _dirichlet_split(rng, labels: np.ndarray, n_devices: int, alpha: float,
                     max_tries: int = 200) -> tuple:
    """Assign each class's samples to devices by Dirichlet proportions.

    A draw leaving any device nearly empty is discarded and redrawn, so the
    returned split always gives every device at least MIN_DEVICE_SAMPLES
    samples (small-alpha draws routinely starve a device otherwise).
    """
    n_classes = int(np.max(labels)) + 1
    for _ in range(max_tries):
        buckets = [[] for _ in range(n_devices)]
        for c in range(n_classes):
            idx = np.flatnonzero(labels == c)
            idx = rng.permutation(idx)
            counts = rng.multinomial(idx.size, rng.dirichlet(np.full(n_devices, alpha)))
            for k, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                buckets[k].append(chunk)
        split = tuple(np.sort(np.concatenate(parts)) for parts in buckets)
        if min(part.size for part in split) >= MIN_DEVICE_SAMPLES:
            return split
    raise ParameterError("Dirichlet split kept starving a device; increase samples "
                         "or the concentration parameter")


def make_synthetic_task(rng_seed, n_devices: int, dirichlet_alpha: float,
                        dim: int = 16, n_classes: int = 4, n_train: int = 1200,
                        n_test: int = 400, separation: float = 4.0) -> SyntheticClassificationTask:
    """Build the blobs task; dim must factor as n_classes * (features + 1).

    Defaults give a 3-feature, 4-class problem with 16 parameters, exactly
    one model entry per pulse interval of the default frame.
    """
    if n_devices < 1 or n_classes < 2:
        raise ParameterError("need at least one device and two classes")
    if dirichlet_alpha <= 0 or separation <= 0:
        raise ParameterError("dirichlet_alpha and separation must be positive")
    if dim % n_classes != 0 or dim // n_classes < 2:
        raise ParameterError(
            f"dim must be n_classes * (features + 1) with features >= 1, got dim={dim}")
    if n_train < n_devices * MIN_DEVICE_SAMPLES or n_test < 1:
        raise ParameterError("not enough samples for the requested device count")
    n_features = dim // n_classes - 1
    rng = np.random.default_rng(rng_seed)
    means = _blob_means(rng, n_classes, n_features, separation)

    train_y = _balanced_labels(n_train, n_classes)
    train_x = means[train_y] + rng.standard_normal((n_train, n_features))
    test_y = _balanced_labels(n_test, n_classes)
    test_x = means[test_y] + rng.standard_normal((n_test, n_features))

    split = _dirichlet_split(rng, train_y, n_devices, dirichlet_alpha)
    return SyntheticClassificationTask(train_x=train_x, train_y=train_y,
                                       device_index=split, test_x=test_x,
                                       test_y=test_y, n_classes=n_classes)
