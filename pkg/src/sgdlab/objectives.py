"""Differentiable objectives with per-sample structure.

Every objective is a mean of per-sample losses, f(x) = (1/N) sum_i f_i(x),
exposing per-sample and per-batch gradients so that the optimizer, the
gradient-noise estimators and the finite-difference checks can all share
one interface.  Three concrete families are provided:

- QuadraticEnsemble: f_i(x) = 0.5 (x - c_i)^T A (x - c_i), fully analytic,
  used as the oracle bed for covariance and stationary-distribution tests.
- LogisticRegression: binary classifier on synthetic blobs with closed-form
  per-sample gradients.
- BilayerPerceptron: 784 -> hidden -> 10 ReLU network with softmax
  cross-entropy loss, forward/backward written from scratch over one flat
  parameter vector.

Objectives are immutable after construction; gradient evaluation allocates
fresh arrays and is safe to call from concurrent replicas.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError, MisuseError

# Refuse to materialize per-sample gradient blocks larger than this many
# float64 entries (~400 MB); large models get chunked access instead.
MAX_GRAD_BLOCK_ENTRIES = 50_000_000


class Objective:
    """Base interface: a dataset-backed loss with per-sample gradients."""

    n: int              # parameter dimension
    sample_count: int   # N
    is_classifier: bool = False

    # -- per-batch paths (subclasses vectorize these) --------------------

    def batch_loss(self, x: np.ndarray, indices) -> float:
        raise NotImplementedError

    def batch_grad(self, x: np.ndarray, indices) -> np.ndarray:
        raise NotImplementedError

    # -- derived full-dataset paths ---------------------------------------

    def loss(self, x: np.ndarray) -> float:
        return self.batch_loss(x, np.arange(self.sample_count))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.batch_grad(x, np.arange(self.sample_count))

    def per_sample_grads(self, x: np.ndarray, indices=None) -> np.ndarray:
        """Stack of gradients of the individual f_i, shape (k, n).

        Subclasses override with vectorized versions; the fallback loops.
        Raises CapacityError when the requested block would be too large
        to hold in memory.
        """
        idx = np.arange(self.sample_count) if indices is None else np.asarray(indices)
        _check_block(len(idx), self.n)
        return np.stack([self.batch_grad(x, [i]) for i in idx])

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Default starting point for training; overridden where a seeded
        random initialization is the norm."""
        return np.zeros(self.n)

    def hess_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian-vector product, by central differences of the gradient
        unless a subclass has a closed form."""
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            return np.zeros_like(v)
        h = 1e-6 * (1.0 + float(np.linalg.norm(x))) / norm
        return (self.grad(x + h * v) - self.grad(x - h * v)) / (2.0 * h)

    # -- classifier extras -------------------------------------------------

    def train_accuracy(self, x: np.ndarray) -> float:
        raise MisuseError(f"{type(self).__name__} is not a classifier")

    def test_accuracy(self, x: np.ndarray) -> float:
        raise MisuseError(f"{type(self).__name__} is not a classifier")


def _check_block(rows: int, cols: int) -> None:
    if rows * cols > MAX_GRAD_BLOCK_ENTRIES:
        raise CapacityError(
            f"per-sample gradient block of {rows} x {cols} entries exceeds the "
            f"{MAX_GRAD_BLOCK_ENTRIES} entry limit; use chunked access")


def _validated_indices(indices, sample_count: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise MisuseError("empty mini-batch")
    if idx.min() < 0 or idx.max() >= sample_count:
        raise MisuseError(f"batch indices out of range [0, {sample_count})")
    return idx


def minibatch_grad(obj: Objective, x: np.ndarray, batch) -> np.ndarray:
    """Mean gradient over a mini-batch: (1/C) sum_{j in batch} grad f_j(x)."""
    idx = _validated_indices(batch, obj.sample_count)
    return obj.batch_grad(x, idx)


def gradient_check(obj: Objective, x: np.ndarray, rng: np.random.Generator,
                   n_coords: int = 20, step: float = 1e-4, batch=None) -> float:
    """Max relative error between analytic and central-difference gradients
    over randomly probed coordinates.

    The relative error guards against near-zero components by dividing by
    max(|analytic|, |numeric|, 1e-8).
    """
    idx = np.arange(obj.sample_count) if batch is None else np.asarray(batch)
    analytic = obj.batch_grad(x, idx)
    coords = rng.choice(obj.n, size=min(n_coords, obj.n), replace=False)
    worst = 0.0
    for c in coords:
        xp = x.copy()
        xp[c] += step
        xm = x.copy()
        xm[c] -= step
        numeric = (obj.batch_loss(xp, idx) - obj.batch_loss(xm, idx)) / (2.0 * step)
        scale = max(abs(numeric), abs(float(analytic[c])), 1e-8)
        worst = max(worst, abs(numeric - float(analytic[c])) / scale)
    return worst


class QuadraticEnsemble(Objective):
    """Ensemble of quadratic bowls sharing one curvature matrix.

    f_i(x) = 0.5 (x - c_i)^T A (x - c_i), so the full loss is quadratic
    with its minimum at the centroid of the centers, every per-sample
    gradient is A (x - c_i), and the gradient-noise covariance has a
    closed form.  Serves as the analytic oracle bed.
    """

    def __init__(self, curvature: np.ndarray, centers: np.ndarray):
        A = np.atleast_2d(np.asarray(curvature, dtype=float))
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise MisuseError("curvature must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise MisuseError("curvature must be symmetric")
        if centers.shape[1] != A.shape[0]:
            raise MisuseError("centers and curvature dimensions disagree")
        self.curvature = A
        self.centers = centers
        self.n = A.shape[0]
        self.sample_count = centers.shape[0]

    @classmethod
    def isotropic(cls, dim: int, samples: int, rng: np.random.Generator,
                  spread: float = 1.0, curvature: float = 1.0,
                  whiten: bool = False) -> "QuadraticEnsemble":
        """Random centers with identity-proportional curvature.

        With whiten=True the sampled centers are affinely transformed to
        have exactly zero mean and unit covariance, which makes the
        ensemble's noise second moment exactly isotropic at the centroid.
        """
        centers = spread * rng.standard_normal((samples, dim))
        if whiten:
            centers = centers - centers.mean(axis=0)
            cov = centers.T @ centers / samples
            w, u = np.linalg.eigh(cov)
            centers = centers @ u @ np.diag(1.0 / np.sqrt(w)) @ u.T * spread
        return cls(curvature * np.eye(dim), centers)

    @property
    def minimum(self) -> np.ndarray:
        return self.centers.mean(axis=0)

    def batch_loss(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        d = x[None, :] - self.centers[idx]
        return 0.5 * float(np.einsum("ij,jk,ik->i", d, self.curvature, d).mean())

    def batch_grad(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return self.curvature @ (x - self.centers[idx].mean(axis=0))

    def per_sample_grads(self, x, indices=None):
        idx = np.arange(self.sample_count) if indices is None else np.asarray(indices)
        _check_block(len(idx), self.n)
        return (x[None, :] - self.centers[idx]) @ self.curvature

    def hess_vec(self, x, v):
        return self.curvature @ v


class LogisticRegression(Objective):
    """Binary logistic loss on fixed features, labels in {-1, +1}.

    f_i(x) = log(1 + exp(-y_i z_i . x)); the synthetic constructor draws
    two Gaussian blobs separated along a random direction and appends a
    constant feature as the bias term.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray,
                 test_features: np.ndarray | None = None,
                 test_labels: np.ndarray | None = None):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if set(np.unique(self.labels)) - {-1.0, 1.0}:
            raise MisuseError("labels must be -1 or +1")
        if self.features.shape[0] != self.labels.shape[0]:
            raise MisuseError("feature/label counts disagree")
        self.test_features = None if test_features is None else np.asarray(test_features, dtype=float)
        self.test_labels = None if test_labels is None else np.asarray(test_labels, dtype=float)
        self.sample_count, self.n = self.features.shape
        self.is_classifier = self.test_features is not None

    @classmethod
    def synthetic(cls, dim: int, samples: int, rng: np.random.Generator,
                  test_samples: int = 0, separation: float = 1.0) -> "LogisticRegression":
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        total = samples + test_samples

        labels = np.where(rng.random(total) < 0.5, -1.0, 1.0)
        feats = rng.standard_normal((total, dim)) + separation * labels[:, None] * direction
        feats = np.hstack([feats, np.ones((total, 1))])  # bias column
        train = cls(feats[:samples], labels[:samples],
                    feats[samples:] if test_samples else None,
                    labels[samples:] if test_samples else None)
        return train

    def _margins(self, x, feats, labels):
        return labels * (feats @ x)

    def batch_loss(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        m = self._margins(x, self.features[idx], self.labels[idx])
        return float(np.logaddexp(0.0, -m).mean())

    def batch_grad(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        feats, labels = self.features[idx], self.labels[idx]
        m = self._margins(x, feats, labels)
        sig = 1.0 / (1.0 + np.exp(m))  # sigmoid(-m)
        return -(feats * (labels * sig)[:, None]).mean(axis=0)

    def per_sample_grads(self, x, indices=None):
        idx = np.arange(self.sample_count) if indices is None else np.asarray(indices)
        _check_block(len(idx), self.n)
        feats, labels = self.features[idx], self.labels[idx]
        m = self._margins(x, feats, labels)
        sig = 1.0 / (1.0 + np.exp(m))
        return -feats * (labels * sig)[:, None]

    def _accuracy(self, x, feats, labels):
        pred = np.where(feats @ x >= 0.0, 1.0, -1.0)
        return float((pred == labels).mean())

    def train_accuracy(self, x):
        return self._accuracy(x, self.features, self.labels)

    def test_accuracy(self, x):
        if self.test_features is None:
            raise MisuseError("objective has no test split")
        return self._accuracy(x, self.test_features, self.test_labels)


class BilayerPerceptron(Objective):
    """Two fully connected layers with ReLU and softmax cross-entropy.

    Layer sizes are in_dim -> hidden -> classes (784 -> 100 -> 10 for the
    standard digit setup, giving 79,510 parameters).  All parameters live
    in one flat vector laid out as [W1, b1, W2, b2]; forward and backward
    passes are hand-written numpy.
    """

    def __init__(self, train_images: np.ndarray, train_labels: np.ndarray,
                 test_images: np.ndarray | None = None,
                 test_labels: np.ndarray | None = None,
                 hidden: int = 100, classes: int = 10):
        self.train_images = np.asarray(train_images, dtype=float)
        self.train_labels = np.asarray(train_labels, dtype=np.intp)
        if self.train_images.ndim != 2:
            raise MisuseError("images must be flattened to (count, pixels)")
        if self.train_images.shape[0] != self.train_labels.shape[0]:
            raise MisuseError("image/label counts disagree")
        if self.train_labels.size and (self.train_labels.min() < 0
                                       or self.train_labels.max() >= classes):
            raise MisuseError(f"labels must lie in [0, {classes})")
        self.test_images = None if test_images is None else np.asarray(test_images, dtype=float)
        self.test_labels = None if test_labels is None else np.asarray(test_labels, dtype=np.intp)

        self.in_dim = self.train_images.shape[1]
        self.hidden = hidden
        self.classes = classes
        self.sample_count = self.train_images.shape[0]
        self.n = self.in_dim * hidden + hidden + hidden * classes + classes
        self.is_classifier = True

        d, h, k = self.in_dim, hidden, classes
        self._slices = (slice(0, d * h),
                        slice(d * h, d * h + h),
                        slice(d * h + h, d * h + h + h * k),
                        slice(d * h + h + h * k, self.n))

    # -- parameter vector layout ------------------------------------------

    def unpack(self, x: np.ndarray):
        s1, s2, s3, s4 = self._slices
        w1 = x[s1].reshape(self.in_dim, self.hidden)
        b1 = x[s2]
        w2 = x[s3].reshape(self.hidden, self.classes)
        b2 = x[s4]
        return w1, b1, w2, b2

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        x = np.empty(self.n)
        s1, s2, s3, s4 = self._slices
        bound1 = 1.0 / np.sqrt(self.in_dim)
        bound2 = 1.0 / np.sqrt(self.hidden)
        x[s1] = rng.uniform(-bound1, bound1, size=s1.stop - s1.start)
        x[s2] = rng.uniform(-bound1, bound1, size=s2.stop - s2.start)
        x[s3] = rng.uniform(-bound2, bound2, size=s3.stop - s3.start)
        x[s4] = rng.uniform(-bound2, bound2, size=s4.stop - s4.start)
        return x

    # -- forward / backward -------------------------------------------------

    def _forward(self, x, images):
        w1, b1, w2, b2 = self.unpack(x)
        z1 = images @ w1 + b1
        a1 = np.maximum(z1, 0.0)
        logits = a1 @ w2 + b2
        return z1, a1, logits

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def batch_loss(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        _, _, logits = self._forward(x, self.train_images[idx])
        logp = self._log_softmax(logits)
        return float(-logp[np.arange(idx.size), self.train_labels[idx]].mean())

    def _backward(self, x, images, labels, dlogits_scale):
        """Gradient of the summed cross-entropy scaled by dlogits_scale."""
        z1, a1, logits = self._forward(x, images)
        logp = self._log_softmax(logits)
        probs = np.exp(logp)
        dlogits = probs
        dlogits[np.arange(labels.size), labels] -= 1.0
        dlogits *= dlogits_scale

        w1, b1, w2, b2 = self.unpack(x)
        grad = np.empty(self.n)
        s1, s2, s3, s4 = self._slices
        grad[s3] = (a1.T @ dlogits).ravel()
        grad[s4] = dlogits.sum(axis=0)
        da1 = dlogits @ w2.T
        dz1 = da1 * (z1 > 0.0)
        grad[s1] = (images.T @ dz1).ravel()
        grad[s2] = dz1.sum(axis=0)
        return grad

    def batch_grad(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return self._backward(x, self.train_images[idx], self.train_labels[idx],
                              1.0 / idx.size)

    def per_sample_grads(self, x, indices=None):
        idx = np.arange(self.sample_count) if indices is None else np.asarray(indices)
        _check_block(len(idx), self.n)
        images = self.train_images[idx]
        labels = self.train_labels[idx]
        z1, a1, logits = self._forward(x, images)
        logp = self._log_softmax(logits)
        dlogits = np.exp(logp)
        dlogits[np.arange(labels.size), labels] -= 1.0

        w1, b1, w2, b2 = self.unpack(x)
        da1 = dlogits @ w2.T
        dz1 = da1 * (z1 > 0.0)
        out = np.empty((len(idx), self.n))
        s1, s2, s3, s4 = self._slices
        out[:, s1] = np.einsum("bd,bh->bdh", images, dz1).reshape(len(idx), -1)
        out[:, s2] = dz1
        out[:, s3] = np.einsum("bh,bk->bhk", a1, dlogits).reshape(len(idx), -1)
        out[:, s4] = dlogits
        return out

    # -- metrics -------------------------------------------------------------

    def _accuracy(self, x, images, labels):
        _, _, logits = self._forward(x, images)
        # argmax breaks ties toward the lowest class index
        return float((np.argmax(logits, axis=1) == labels).mean())

    def train_accuracy(self, x):
        return self._accuracy(x, self.train_images, self.train_labels)

    def test_accuracy(self, x):
        if self.test_images is None:
            raise MisuseError("objective has no test split")
        return self._accuracy(x, self.test_images, self.test_labels)
