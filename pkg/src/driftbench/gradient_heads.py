"""Gradient-trained output layers.

Five parameterizations of the class-score computation over a latent vector z
(rows of A are per-class output vectors, norms guarded by eps = 1e-12):

    linear                <z, A_i> + b_i
    linear_nb             <z, A_i>
    weightnorm            <z, A_i> / ||A_i||
    coslayer              <z, A_i> / (||z|| ||A_i||)
    original_weightnorm   gamma_i <z, A_i> / ||A_i|| + b_i

trained with softmax cross-entropy and SGD with momentum. Masking restricts
which output vectors an update step may touch: single masking keeps, for
each example, only the gradient on its own target's row; group masking keeps
rows of all classes present in the mini-batch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .rng import Xoshiro256StarStar, derive_seed

EPS_NORM = 1e-12


class HeadKind(enum.Enum):
    LINEAR = "linear"
    LINEAR_NO_BIAS = "linear_nb"
    WEIGHT_NORM = "weightnorm"
    COS_LAYER = "coslayer"
    ORIGINAL_WEIGHT_NORM = "original_weightnorm"


class MaskMode(enum.Enum):
    NONE = "none"
    SINGLE = "single"
    GROUP = "group"


def uses_bias(kind: HeadKind) -> bool:
    return kind in (HeadKind.LINEAR, HeadKind.ORIGINAL_WEIGHT_NORM)


def uses_gamma(kind: HeadKind) -> bool:
    return kind is HeadKind.ORIGINAL_WEIGHT_NORM


def default_learning_rate(kind: HeadKind) -> float:
    # Plain linear layers (masked or not) train at 0.01, everything else at 0.1.
    if kind in (HeadKind.LINEAR, HeadKind.LINEAR_NO_BIAS):
        return 0.01
    return 0.1


@dataclass
class HeadGrads:
    """Gradients (or velocity) shaped like the head parameters."""

    A: np.ndarray
    b: np.ndarray
    gamma: np.ndarray

    @staticmethod
    def zeros(num_classes: int, dim: int) -> "HeadGrads":
        return HeadGrads(
            np.zeros((num_classes, dim)), np.zeros(num_classes), np.zeros(num_classes)
        )


class GradientHead:
    """Mutable classifier head: weight matrix A (N x h), bias b, scale gamma.

    Fields unused by the head's kind (bias for linear_nb/weightnorm/coslayer,
    gamma for everything but original_weightnorm) are never modified by
    updates.
    """

    def __init__(self, kind: HeadKind, A: np.ndarray, b: np.ndarray, gamma: np.ndarray,
                 mask: MaskMode = MaskMode.NONE):
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        if A.ndim != 2:
            raise ShapeError("A must be a 2-d matrix")
        n, h = A.shape
        if b.shape != (n,) or gamma.shape != (n,):
            raise ShapeError("b and gamma must have one entry per class")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(gamma))):
            raise ValidationError("head parameters must be finite")
        self.kind = kind
        self.mask = mask
        self.A = A
        self.b = b
        self.gamma = gamma
        self.velocity = HeadGrads.zeros(n, h)

    @property
    def num_classes(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def describe(self) -> str:
        name = self.kind.value
        if self.mask is not MaskMode.NONE:
            name += f":{self.mask.value}"
        return name

    def reset_velocity(self) -> None:
        self.velocity = HeadGrads.zeros(self.num_classes, self.dim)

    def snapshot_params(self) -> HeadGrads:
        return HeadGrads(self.A.copy(), self.b.copy(), self.gamma.copy())


def init_head(kind: HeadKind, num_classes: int, dim: int, seed: int,
              mask: MaskMode = MaskMode.NONE) -> GradientHead:
    """Fresh head: A ~ N(0, 1/h) i.i.d., b = 0, gamma = 1, zero velocity."""
    if num_classes < 1 or dim < 1:
        raise ValidationError("num_classes and dim must be >= 1")
    rng = Xoshiro256StarStar(derive_seed(seed, "head-init", kind.value))
    A = rng.normals(num_classes * dim).reshape(num_classes, dim) / np.sqrt(dim)
    return GradientHead(kind, A, np.zeros(num_classes), np.ones(num_classes), mask)


def _batchify(head: GradientHead, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    single = Z.ndim == 1
    if single:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != head.dim:
        raise ShapeError(f"expected feature vectors of length {head.dim}, got shape {Z.shape}")
    return Z


def logits(head: GradientHead, z: np.ndarray) -> np.ndarray:
    """Class scores for one feature vector or a (B, h) batch."""
    Z = _batchify(head, z)
    out = _logits_batch(head, Z)
    return out[0] if np.asarray(z).ndim == 1 else out


def _logits_batch(head: GradientHead, Z: np.ndarray) -> np.ndarray:
    S = Z @ head.A.T
    kind = head.kind
    if kind is HeadKind.LINEAR:
        return S + head.b
    if kind is HeadKind.LINEAR_NO_BIAS:
        return S
    row_norms = np.maximum(np.linalg.norm(head.A, axis=1), EPS_NORM)
    if kind is HeadKind.WEIGHT_NORM:
        return S / row_norms
    if kind is HeadKind.COS_LAYER:
        z_norms = np.maximum(np.linalg.norm(Z, axis=1), EPS_NORM)
        return S / (z_norms[:, None] * row_norms)
    # original weightnorm
    return head.gamma * (S / row_norms) + head.b


def predict(head: GradientHead, z: np.ndarray) -> int | np.ndarray:
    """argmax of the logits, ties broken by the lowest class index."""
    out = logits(head, z)
    if out.ndim == 1:
        return int(np.argmax(out))
    return np.argmax(out, axis=1)


def _log_softmax(O: np.ndarray) -> np.ndarray:
    shifted = O - O.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_gradient(
    head: GradientHead,
    Z: np.ndarray,
    Y: np.ndarray,
    mask: MaskMode = MaskMode.NONE,
) -> tuple[float, HeadGrads]:
    """Mean softmax cross-entropy and its exact analytic gradients.

    With mask=SINGLE, each example contributes gradient only to its own
    target's row/bias/gamma (the softmax coupling on that row is kept); with
    mask=GROUP, only rows of classes present in Y receive gradient. Both are
    applied at the per-example coefficient level, before batch aggregation,
    so single masking does not collapse into group masking. The loss value
    itself is never masked.
    """
    Z = _batchify(head, Z)
    Y = np.asarray(Y, dtype=np.int64).reshape(-1)
    B = Z.shape[0]
    if B == 0:
        raise ValidationError("batch must be non-empty")
    if Y.shape != (B,):
        raise ShapeError("one label per batch row required")
    N = head.num_classes
    if Y.min() < 0 or Y.max() >= N:
        raise ValidationError(f"labels must lie in [0, {N})")

    O = _logits_batch(head, Z)
    log_p = _log_softmax(O)
    loss = float(-log_p[np.arange(B), Y].mean())

    # D[b, i] = dLoss/dO[b, i]; every parameter gradient below is linear in D,
    # so per-example masking is a mask on D.
    D = np.exp(log_p)
    D[np.arange(B), Y] -= 1.0
    D /= B
    if mask is MaskMode.SINGLE:
        keep = np.zeros_like(D)
        keep[np.arange(B), Y] = 1.0
        D = D * keep
    elif mask is MaskMode.GROUP:
        keep_cols = np.zeros(N)
        keep_cols[np.unique(Y)] = 1.0
        D = D * keep_cols

    grads = _param_grads(head, Z, O, D)
    return loss, grads


def _param_grads(head: GradientHead, Z: np.ndarray, O: np.ndarray, D: np.ndarray) -> HeadGrads:
    kind = head.kind
    N, h = head.A.shape
    grads = HeadGrads.zeros(N, h)

    if kind in (HeadKind.LINEAR, HeadKind.LINEAR_NO_BIAS):
        grads.A = D.T @ Z
        if uses_bias(kind):
            grads.b = D.sum(axis=0)
        return grads

    raw_norms = np.linalg.norm(head.A, axis=1)
    norms = np.maximum(raw_norms, EPS_NORM)
    # Where the eps guard is active the denominator is treated as a constant.
    guard_off = (raw_norms > EPS_NORM).astype(np.float64)

    if kind is HeadKind.WEIGHT_NORM:
        # o_i = <z, A_i>/n_i; do/dA_i = z/n_i - o_i A_i / n_i^2
        grads.A = (D.T @ Z) / norms[:, None]
        grads.A -= (guard_off * (D * O).sum(axis=0) / norms**2)[:, None] * head.A
        return grads

    if kind is HeadKind.COS_LAYER:
        z_norms = np.maximum(np.linalg.norm(Z, axis=1), EPS_NORM)
        Dn = D / z_norms[:, None]
        grads.A = (Dn.T @ Z) / norms[:, None]
        grads.A -= (guard_off * (D * O).sum(axis=0) / norms**2)[:, None] * head.A
        return grads

    # original weightnorm: o_i = gamma_i s_i + b_i with s_i = <z, A_i>/n_i
    S_n = (Z @ head.A.T) / norms
    coeff = D * head.gamma
    grads.A = (coeff.T @ Z) / norms[:, None]
    grads.A -= (guard_off * (coeff * S_n).sum(axis=0) / norms**2)[:, None] * head.A
    grads.b = D.sum(axis=0)
    grads.gamma = (D * S_n).sum(axis=0)
    return grads


def apply_mask(grads: HeadGrads, batch_targets: np.ndarray, mask: MaskMode) -> HeadGrads:
    """Zero gradient rows of classes outside the batch-target set.

    This is the aggregate-level part of masking: exact for NONE and GROUP.
    Single masking additionally drops cross-example contributions inside the
    target set, which is not recoverable from aggregated gradients; pass
    mask=SINGLE to loss_and_gradient for the per-example semantics.
    """
    if mask is MaskMode.NONE:
        return grads
    keep = np.zeros(grads.b.shape[0])
    keep[np.unique(np.asarray(batch_targets, dtype=np.int64))] = 1.0
    return HeadGrads(grads.A * keep[:, None], grads.b * keep, grads.gamma * keep)


def sgd_momentum_step(head: GradientHead, grads: HeadGrads, lr: float, momentum: float) -> None:
    """Heavy-ball update: v <- momentum v + g; params <- params - lr v."""
    if lr <= 0:
        raise ValidationError("lr must be > 0")
    if not 0 <= momentum < 1:
        raise ValidationError("momentum must lie in [0, 1)")
    v = head.velocity
    v.A = momentum * v.A + grads.A
    head.A -= lr * v.A
    if uses_bias(head.kind):
        v.b = momentum * v.b + grads.b
        head.b -= lr * v.b
    if uses_gamma(head.kind):
        v.gamma = momentum * v.gamma + grads.gamma
        head.gamma -= lr * v.gamma
