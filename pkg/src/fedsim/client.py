"""Client lifecycle: full-model local training, upload of the federated
channel, async training of the local channel while waiting, and adoption of
the returned personalized parameters."""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError, ProtocolError, ShapeError
from .losses import (CenterBank, LossWeights, center_loss_grad,
                     cross_entropy_batch, total_loss, update_centers)
from .nn import (MLP, backward_batch, channel, forward, forward_batch,
                 fusion_head, linear_head, sgd_step)
from .synth import LabeledDataset


class Phase(enum.Enum):
    LOCAL_TRAINING = "local_training"
    WAITING = "waiting"
    IDLE = "idle"


@dataclass(frozen=True)
class UploadMessage:
    client_id: int
    fed_round: int
    params: np.ndarray


def _fv_cos_batch(f_p: np.ndarray, f_g: np.ndarray):
    """Mean alignment loss over a batch with per-sample gradients (already /B)."""
    norm_p = np.linalg.norm(f_p, axis=1)
    norm_g = np.linalg.norm(f_g, axis=1)
    if np.any(norm_p == 0) or np.any(norm_g == 0):
        raise DomainError("zero-norm embedding in cosine alignment loss")
    cos = (f_p * f_g).sum(axis=1) / (norm_p * norm_g)
    loss = float(np.abs(cos - 1.0).mean())
    b = f_p.shape[0]
    sign = np.sign(cos - 1.0)[:, None] / b
    d_p = sign * (f_g / (norm_p * norm_g)[:, None] - (cos / norm_p**2)[:, None] * f_p)
    d_g = sign * (f_p / (norm_p * norm_g)[:, None] - (cos / norm_g**2)[:, None] * f_g)
    return loss, d_p, d_g


def local_loss_and_grads(local_channel, fed_channel, fusion, head2, bank,
                         x_batch, y_batch, weights: LossWeights):
    """Full local-training loss and analytic gradients for the four trained parts.

    Returns (loss, grads dict, fused embeddings).
    """
    f_p, cache_p = forward_batch(local_channel, x_batch)
    f_g, cache_g = forward_batch(fed_channel, x_batch)
    fused_in = np.concatenate([f_p, f_g], axis=1)
    z, cache_f = forward_batch(fusion, fused_in)
    logits, cache_h = forward_batch(head2, z)

    ce2, dlogits = cross_entropy_batch(logits, y_batch)
    if weights.alpha1 > 0:
        fv, dfp_fv, dfg_fv = _fv_cos_batch(f_p, f_g)
    else:
        fv, dfp_fv, dfg_fv = 0.0, 0.0, 0.0
    if weights.alpha3 > 0:
        cen, dz_cen = center_loss_grad(z, y_batch, bank)
    else:
        cen, dz_cen = 0.0, 0.0
    loss = total_loss(fv, ce2, cen, weights)

    dp_head2, dz = backward_batch(head2, cache_h, weights.alpha2 * dlogits)
    dz = dz + weights.alpha3 * dz_cen
    dp_fusion, dfused = backward_batch(fusion, cache_f, dz)
    emb_l = local_channel.out_dim
    dfp = dfused[:, :emb_l] + weights.alpha1 * dfp_fv
    dfg = dfused[:, emb_l:] + weights.alpha1 * dfg_fv
    dp_local, _ = backward_batch(local_channel, cache_p, dfp)
    dp_fed, _ = backward_batch(fed_channel, cache_g, dfg)
    grads = {"local": dp_local, "fed": dp_fed, "fusion": dp_fusion, "head2": dp_head2}
    return loss, grads, z


def async_loss_and_grads(local_channel, head1, x_batch, y_batch):
    """Cross-entropy loss through the local channel and its own classifier."""
    f_p, cache_p = forward_batch(local_channel, x_batch)
    logits, cache_h = forward_batch(head1, f_p)
    loss, dlogits = cross_entropy_batch(logits, y_batch)
    dp_head1, dfp = backward_batch(head1, cache_h, dlogits)
    dp_local, _ = backward_batch(local_channel, cache_p, dfp)
    return loss, {"local": dp_local, "head1": dp_head1}


@dataclass
class ClientState:
    client_id: int
    local_channel: MLP
    fed_channel: MLP
    head1: MLP
    head2: MLP
    fusion: MLP
    center_bank: CenterBank
    dataset: LabeledDataset
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 0.01
    local_epochs: int = 3
    batch_size: int = 16
    fed_round: int = 0
    phase: Phase = Phase.LOCAL_TRAINING
    last_epoch_losses: list = field(default_factory=list)
    _batch_rng: np.random.Generator = None
    _async_rng: np.random.Generator = None

    def __post_init__(self):
        if self._batch_rng is None:
            self._batch_rng = np.random.default_rng((11, self.client_id))
        if self._async_rng is None:
            self._async_rng = np.random.default_rng((13, self.client_id))

    # -- training ---------------------------------------------------------

    def _minibatches(self, rng):
        n = self.dataset.labels.size
        order = rng.permutation(n)
        for start in range(0, n, self.batch_size):
            idx = order[start : start + self.batch_size]
            yield self.dataset.inputs[idx], self.dataset.labels[idx]

    def n_batches(self) -> int:
        n = self.dataset.labels.size
        return -(-n // self.batch_size)

    def local_train_round(self, epochs=None) -> UploadMessage:
        if self.phase is not Phase.LOCAL_TRAINING:
            raise ProtocolError(f"local_train_round in phase {self.phase}")
        if epochs is None:
            epochs = self.local_epochs
        self.last_epoch_losses = []
        for _ in range(epochs):
            batch_losses = []
            for b_idx, (xb, yb) in enumerate(self._minibatches(self._batch_rng)):
                try:
                    loss, grads, z = local_loss_and_grads(
                        self.local_channel, self.fed_channel, self.fusion, self.head2,
                        self.center_bank, xb, yb, self.loss_weights)
                except DomainError as exc:
                    # non-finite activations from exploded parameters
                    raise DivergenceError(
                        f"local training diverged: {exc}",
                        round_index=self.fed_round, batch_index=b_idx) from exc
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite local training loss",
                                          round_index=self.fed_round, batch_index=b_idx)
                self.local_channel.params = sgd_step(self.local_channel.params,
                                                     grads["local"], self.lr)
                self.fed_channel.params = sgd_step(self.fed_channel.params,
                                                   grads["fed"], self.lr)
                self.fusion.params = sgd_step(self.fusion.params, grads["fusion"], self.lr)
                self.head2.params = sgd_step(self.head2.params, grads["head2"], self.lr)
                if self.loss_weights.alpha3 > 0:
                    update_centers(self.center_bank, z, yb)
                batch_losses.append(loss)
            self.last_epoch_losses.append(batch_losses)
        self.phase = Phase.WAITING
        return UploadMessage(self.client_id, self.fed_round, self.fed_channel.params.copy())

    def async_train_step(self) -> float:
        """One local-channel step on the waiting-time classification loss."""
        if self.phase is not Phase.WAITING:
            raise ProtocolError(f"async_train_step in phase {self.phase}")
        n = self.dataset.labels.size
        idx = self._async_rng.choice(n, size=min(self.batch_size, n), replace=False)
        xb, yb = self.dataset.inputs[idx], self.dataset.labels[idx]
        try:
            loss, grads = async_loss_and_grads(self.local_channel, self.head1, xb, yb)
        except DomainError as exc:
            raise DivergenceError(f"async training diverged: {exc}",
                                  round_index=self.fed_round) from exc
        if not np.isfinite(loss):
            raise DivergenceError("non-finite async training loss",
                                  round_index=self.fed_round)
        self.local_channel.params = sgd_step(self.local_channel.params,
                                             grads["local"], self.lr)
        self.head1.params = sgd_step(self.head1.params, grads["head1"], self.lr)
        return loss

    def async_loss(self) -> float:
        """Waiting-time classification loss over the full training set (no update)."""
        loss, _ = async_loss_and_grads(self.local_channel, self.head1,
                                       self.dataset.inputs, self.dataset.labels)
        return loss

    # -- protocol ---------------------------------------------------------

    def adopt_global(self, new_fed_params: np.ndarray) -> None:
        if self.phase is not Phase.WAITING:
            raise ProtocolError(f"adopt_global in phase {self.phase}")
        new_fed_params = np.asarray(new_fed_params, dtype=np.float64)
        if new_fed_params.shape != self.fed_channel.params.shape:
            raise ShapeError("dispatched parameters do not match federated channel")
        self.fed_channel.params = new_fed_params.copy()
        self.fed_round += 1
        self.phase = Phase.LOCAL_TRAINING

    def finish(self) -> None:
        self.phase = Phase.IDLE

    # -- inference --------------------------------------------------------

    def extract_embedding(self, x: np.ndarray) -> np.ndarray:
        """Fused pre-classifier representation used for open-set matching."""
        f_p = forward(self.local_channel, x)
        f_g = forward(self.fed_channel, x)
        return forward(self.fusion, np.concatenate([f_p, f_g]))

    def extract_embeddings(self, inputs: np.ndarray) -> np.ndarray:
        f_p, _ = forward_batch(self.local_channel, inputs)
        f_g, _ = forward_batch(self.fed_channel, inputs)
        z, _ = forward_batch(self.fusion, np.concatenate([f_p, f_g], axis=1))
        return z


def build_client(client_id: int, train: LabeledDataset, *, input_dim: int,
                 local_hidden: int = 64, fed_hidden: int = 32, emb_dim: int = 16,
                 fuse_dim: int = 16, loss_weights: LossWeights = None,
                 lr: float = 0.01, epochs: int = 3, batch_size: int = 16,
                 center_lr: float = 0.5, seed: int = 0) -> ClientState:
    """Assemble a freshly initialized client for a training set."""
    n_classes = train.n_classes
    base = (seed, client_id)
    lc = channel(input_dim, local_hidden, emb_dim, (*base, 1))
    # Common init across clients: parameter averaging needs aligned neurons.
    fc = channel(input_dim, fed_hidden, emb_dim, (seed, 2))
    h1 = linear_head(emb_dim, n_classes, (*base, 3))
    fu = fusion_head(2 * emb_dim, fuse_dim, (*base, 4))
    h2 = linear_head(fuse_dim, n_classes, (*base, 5))
    # Centers start at each class's initial embedding mean, not at zero:
    # a zero init drags every embedding toward the origin early in training.
    f_p, _ = forward_batch(lc, train.inputs)
    f_g, _ = forward_batch(fc, train.inputs)
    z, _ = forward_batch(fu, np.concatenate([f_p, f_g], axis=1))
    bank = CenterBank(
        {k: z[train.labels == k].mean(axis=0) for k in range(n_classes)},
        lr=center_lr)
    return ClientState(
        client_id=client_id, local_channel=lc, fed_channel=fc, head1=h1,
        head2=h2, fusion=fu, center_bank=bank, dataset=train,
        loss_weights=loss_weights or LossWeights(), lr=lr, local_epochs=epochs,
        batch_size=batch_size,
        _batch_rng=np.random.default_rng((*base, 11)),
        _async_rng=np.random.default_rng((*base, 13)),
    )
