"""Desk-scale frame-wise embedder trained with the joint angular loss.

The embedder is a single affine map applied independently to every log-Mel
frame (64 -> D_emb), so the time dimension of a segment is preserved. It is
small enough to train in seconds on a synthetic corpus yet exercises the
whole loss, scale-update and gradient machinery end to end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .errors import ParameterError, TrainingError
from .labels import KeywordLabelSpace, TrainingItem, oversample_plan
from .loss import AdaptiveScale, angular_loss_gradients, initial_scale, joint_softmax, \
    update_scale, _similarity_with_attainment

log = logging.getLogger(__name__)

N_INPUT = 64          # log-Mel bins per frame; fixed by the model file format


@dataclass
class TrainerConfig:
    d_emb: int = 128
    n_cluster: int = 16
    learning_rate: float = 0.01
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    pos_weight: float = 1.0

    def to_dict(self) -> dict:
        return {"d_emb": self.d_emb, "n_cluster": self.n_cluster,
                "learning_rate": self.learning_rate, "epochs": self.epochs,
                "batch_size": self.batch_size, "seed": self.seed,
                "pos_weight": self.pos_weight}


@dataclass
class EmbedderModel:
    weight: np.ndarray                 # (64, D_emb)
    bias: np.ndarray                   # (D_emb,)
    centers: np.ndarray                # (M, N_kw, N_pos, D_emb)
    scale: AdaptiveScale
    label_space: KeywordLabelSpace
    n_pos: int
    config: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)

    @property
    def d_emb(self) -> int:
        return self.weight.shape[1]

    def embed(self, frames: np.ndarray) -> np.ndarray:
        """Map (T, 64) log-Mel frames to a (T, D_emb) embedding."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[-1] != N_INPUT:
            raise ParameterError(f"expected {N_INPUT} feature bins, got {frames.shape[-1]}")
        return frames @ self.weight + self.bias

    def save(self, path: str | Path) -> None:
        trailer = {"label_space": self.label_space.to_dict(), "n_pos": self.n_pos,
                   "config": self.config, "loss_trace": self.loss_trace}
        formats.write_model_file(path, self.weight, self.bias, self.centers,
                                 self.scale.value, trailer)

    @classmethod
    def load(cls, path: str | Path) -> "EmbedderModel":
        weight, bias, centers, scale, trailer = formats.read_model_file(path)
        return cls(weight=weight, bias=bias, centers=centers,
                   scale=AdaptiveScale(value=scale),
                   label_space=KeywordLabelSpace.from_dict(trailer["label_space"]),
                   n_pos=int(trailer["n_pos"]), config=trailer.get("config", {}),
                   loss_trace=trailer.get("loss_trace", []))


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_frame_embedder(items: list[TrainingItem], label_space: KeywordLabelSpace,
                         n_pos: int, cfg: TrainerConfig) -> EmbedderModel:
    """Train the affine embedder plus cluster centers with Adam.

    Classes are balanced by oversampling once up front; the adaptive scale
    updates once per batch before the loss. Fully deterministic for a given
    seed and item order.
    """
    if not items:
        raise ParameterError("no training items")
    rng = np.random.default_rng(cfg.seed)
    n_kw = label_space.n_classes

    weight = rng.normal(0.0, 0.1, size=(N_INPUT, cfg.d_emb))
    bias = np.zeros(cfg.d_emb)
    centers = rng.normal(size=(cfg.n_cluster, n_kw, n_pos, cfg.d_emb))
    centers /= np.linalg.norm(centers, axis=-1, keepdims=True)
    scale = initial_scale(n_kw, n_pos)

    class_ids = np.array([int(np.argmax(it.label.y_kw)) for it in items])
    plan = oversample_plan(class_ids, rng)
    feats = np.stack([it.features for it in items])
    # Per-bin standardization: log-Mel bins share a large silence-floor offset
    # that would otherwise dominate every cosine. The affine form lets the
    # scaler fold exactly into (weight, bias) afterwards, so the saved model
    # still maps raw log-Mel frames.
    feat_mean = feats.reshape(-1, feats.shape[-1]).mean(axis=0)
    feat_std = np.maximum(feats.reshape(-1, feats.shape[-1]).std(axis=0), 1e-3)
    feats = (feats - feat_mean) / feat_std
    opt = _Adam([weight.shape, bias.shape, centers.shape], cfg.learning_rate)
    trace = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(plan)
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch_idx = order[lo:lo + cfg.batch_size]
            batch_feats = feats[batch_idx]
            batch_labels = [items[i].label for i in batch_idx]
            e = batch_feats @ weight + bias
            theta, _ = _similarity_with_attainment(e, centers)
            scale = update_scale(theta, batch_labels, scale)
            grad_e, grad_c, loss_value = angular_loss_gradients(
                list(e), batch_labels, centers, scale, pos_weight=cfg.pos_weight)
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"loss diverged at epoch {epoch}, batch {lo // cfg.batch_size}: "
                    f"{loss_value}")
            grad_w = np.einsum("ntd,nte->de", batch_feats, grad_e)
            grad_b = grad_e.sum(axis=(0, 1))
            opt.step([weight, bias, centers], [grad_w, grad_b, grad_c])
            epoch_losses.append(loss_value)
        trace.append(float(np.mean(epoch_losses)))
        if epoch == 0 or (epoch + 1) % 20 == 0:
            log.info("epoch %d/%d loss %.4f scale %.2f",
                     epoch + 1, cfg.epochs, trace[-1], scale.value)

    folded_weight = weight / feat_std[:, None]
    folded_bias = bias - (feat_mean / feat_std) @ weight
    return EmbedderModel(weight=folded_weight, bias=folded_bias, centers=centers,
                         scale=scale, label_space=label_space, n_pos=n_pos,
                         config=cfg.to_dict(), loss_trace=trace)


def keyword_accuracy(model: EmbedderModel, items: list[TrainingItem]) -> float:
    """Fraction of items whose keyword-marginal argmax matches the label."""
    correct = 0
    for it in items:
        e = model.embed(it.features)
        theta, _ = _similarity_with_attainment(e[None], model.centers)
        s = joint_softmax(theta[0], model.scale)
        correct += int(np.argmax(s.sum(axis=1)) == int(np.argmax(it.label.y_kw)))
    return correct / len(items)
