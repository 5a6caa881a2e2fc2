"""Loss functions used on clients, with analytic gradients.

Covers the two classification cross-entropies, the channel-alignment cosine
loss, the class-center loss, and the weighted total.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .nn import MLP, forward

EPS = 1e-300  # guards log of exact zero only


@dataclass(frozen=True)
class LossWeights:
    """Weights of the alignment, classification, and center terms."""

    alpha1: float = 0.5
    alpha2: float = 1.0
    alpha3: float = 0.01

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha3 < 0:
            raise DomainError("loss weights must be nonnegative")
        if self.alpha1 == 0 and self.alpha2 == 0 and self.alpha3 == 0:
            raise DomainError("at least one loss weight must be positive")


@dataclass
class CenterBank:
    """Per-class embedding centers with their own update rate."""

    centers: dict = field(default_factory=dict)  # class id -> (dim,) array
    lr: float = 0.5

    def center(self, label) -> np.ndarray:
        if label not in self.centers:
            raise DomainError(f"no center for class {label}")
        return self.centers[label]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, label_onehot: np.ndarray) -> float:
    """Softmax cross-entropy for a single logits vector and one-hot label."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(label_onehot, dtype=np.float64)
    if logits.shape != y.shape or logits.ndim != 1:
        raise ShapeError("logits and label must be 1-D vectors of equal length")
    if logits.size < 2:
        raise DomainError("need at least 2 classes")
    if not np.all((y == 0) | (y == 1)) or int(y.sum()) != 1:
        raise DomainError("label must be one-hot with exactly one hot index")
    return float(-(y * log_softmax(logits)).sum())


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over a batch; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("expect (B, k) logits and (B,) integer labels")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise DomainError("label out of range")
    b = logits.shape[0]
    lsm = log_softmax(logits)
    loss = float(-lsm[np.arange(b), labels].mean())
    dlogits = np.exp(lsm)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def fv_cos_loss(f_p: np.ndarray, f_g: np.ndarray) -> float:
    """Alignment loss |cos(f_p, f_g) - 1|; 0 iff positively collinear."""
    loss, _, _ = fv_cos_grad(f_p, f_g)
    return loss


def fv_cos_grad(f_p: np.ndarray, f_g: np.ndarray):
    """Alignment loss with gradients w.r.t. both vectors."""
    f_p = np.asarray(f_p, dtype=np.float64)
    f_g = np.asarray(f_g, dtype=np.float64)
    if f_p.shape != f_g.shape or f_p.ndim != 1:
        raise ShapeError("vectors must be 1-D and of equal length")
    np_norm = np.linalg.norm(f_p)
    ng_norm = np.linalg.norm(f_g)
    if np_norm == 0.0 or ng_norm == 0.0:
        raise DomainError("zero-norm embedding in cosine alignment loss")
    cos = float(f_p @ f_g / (np_norm * ng_norm))
    loss = abs(cos - 1.0)
    sign = np.sign(cos - 1.0)
    dcos_dp = f_g / (np_norm * ng_norm) - cos * f_p / (np_norm * np_norm)
    dcos_dg = f_p / (np_norm * ng_norm) - cos * f_g / (ng_norm * ng_norm)
    return loss, sign * dcos_dp, sign * dcos_dg


def center_loss(embeddings: np.ndarray, labels, bank: CenterBank) -> float:
    """Half the summed squared distance of each embedding to its class center."""
    loss, _ = center_loss_grad(embeddings, labels, bank)
    return loss


def center_loss_grad(embeddings: np.ndarray, labels, bank: CenterBank):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ShapeError("embeddings must be a (B, dim) batch")
    labels = list(labels)
    if len(labels) != embeddings.shape[0]:
        raise ShapeError("one label per embedding required")
    diffs = np.empty_like(embeddings)
    for i, lab in enumerate(labels):
        c = bank.center(lab)
        if c.shape != embeddings[i].shape:
            raise ShapeError("center dimension mismatch")
        diffs[i] = embeddings[i] - c
    loss = 0.5 * float((diffs * diffs).sum())
    return loss, diffs


def update_centers(bank: CenterBank, embeddings: np.ndarray, labels) -> None:
    """Move each touched center toward its class's batch mean by bank.lr."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if len(labels) != embeddings.shape[0]:
        raise ShapeError("one label per embedding required")
    for lab in set(labels):
        rows = [i for i, l in enumerate(labels) if l == lab]
        batch_mean = embeddings[rows].mean(axis=0)
        c = bank.center(lab)
        bank.centers[lab] = c + bank.lr * (batch_mean - c)


def total_loss(fv: float, ce2: float, cen: float, w: LossWeights) -> float:
    """Weighted sum of the three local-training terms."""
    for name, v in (("fv", fv), ("ce2", ce2), ("cen", cen)):
        if not np.isfinite(v) or v < 0:
            raise DomainError(f"loss term {name} must be finite and nonnegative")
    return w.alpha1 * fv + w.alpha2 * ce2 + w.alpha3 * cen


def fused_logits(local_channel: MLP, fed_channel: MLP, fusion: MLP, head2: MLP,
                 x: np.ndarray) -> np.ndarray:
    """Classifier logits from the fused dual-channel representation.

    Concatenation order is fixed: local channel first, federated second.
    """
    f_p = forward(local_channel, x)
    f_g = forward(fed_channel, x)
    fused_in = np.concatenate([f_p, f_g])
    if fused_in.size != fusion.in_dim:
        raise ShapeError("channel output dims do not sum to fusion in_dim")
    z = forward(fusion, fused_in)
    if z.size != head2.in_dim:
        raise ShapeError("fusion out_dim does not match classifier in_dim")
    return forward(head2, z)
