"""Joint keyword/position angular loss over sub-clustered cosine similarities.

An embedding is a (T, D) matrix with one vector per time frame. Each
(keyword, position) cell owns ``n_cluster`` trainable center directions; the
similarity of an embedding to a cell is the temporal mean of the per-frame
best cosine against that cell's centers. A single softmax over all cells,
scaled by a dynamically adapted temperature, yields the joint probabilities
whose keyword and position marginals feed two cross-entropy terms.

Everything here is plain float64 numpy; gradients are analytic and are
checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericDomainError, ParameterError
from .labels import SegmentLabel

PROB_FLOOR = 1e-30
SCALE_MIN = 1.0
SCALE_MAX = 100.0


@dataclass
class AdaptiveScale:
    """AdaCos-style dynamic softmax temperature (never differentiated)."""

    value: float
    n_updates: int = 0

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value <= 0:
            raise ParameterError(f"scale must be positive and finite, got {self.value}")


def initial_scale(n_kw: int, n_pos: int) -> AdaptiveScale:
    """sqrt(2) * ln(C - 1) over the C = n_kw * n_pos joint cells."""
    c = n_kw * n_pos
    if c < 2:
        raise ParameterError("need at least two joint cells")
    return AdaptiveScale(value=float(np.sqrt(2.0) * np.log(c - 1.0)))


def _normalize_rows(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0):
        raise NumericDomainError(f"zero-norm {what} has no cosine direction")
    return x / norms[..., None], norms


def similarity(e: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Similarity matrix theta with shape (n_kw, n_pos), entries in [-1, 1].

    theta[i, j] averages over frames the best cosine between the frame and
    the cell's cluster centers.
    """
    theta, _ = _similarity_with_attainment(e[None], centers)
    return theta[0]


def _similarity_with_attainment(e: np.ndarray, centers: np.ndarray):
    """Batched theta plus the attaining-cluster index per (item, frame, cell).

    e: (n, T, D); centers: (M, K, P, D). Ties in the max go to the lowest
    cluster index (argmax picks the first maximum).
    """
    if e.shape[-1] != centers.shape[-1]:
        raise ParameterError(
            f"embedding dim {e.shape[-1]} != center dim {centers.shape[-1]}")
    e_hat, _ = _normalize_rows(np.asarray(e, dtype=np.float64), "embedding frame")
    c_hat, _ = _normalize_rows(np.asarray(centers, dtype=np.float64), "cluster center")
    cos = np.einsum("ntd,mkpd->ntmkp", e_hat, c_hat)
    attain = np.argmax(cos, axis=2)                        # (n, T, K, P)
    best = np.take_along_axis(cos, attain[:, :, None], axis=2)[:, :, 0]
    theta = best.mean(axis=1)                              # (n, K, P)
    return theta, attain


def joint_softmax(theta: np.ndarray, scale: AdaptiveScale | float) -> np.ndarray:
    """Softmax over all (keyword, position) cells with max-subtraction."""
    s_hat = scale.value if isinstance(scale, AdaptiveScale) else float(scale)
    if s_hat <= 0:
        raise ParameterError("scale must be positive")
    z = s_hat * np.asarray(theta, dtype=np.float64)
    z = z - z.max()
    expz = np.exp(z)
    return expz / expz.sum()


def update_scale(batch_thetas: np.ndarray, labels: list[SegmentLabel],
                 scale: AdaptiveScale) -> AdaptiveScale:
    """One AdaCos-style temperature update from a batch of similarities.

    With the previous scale s, B is the batch mean over items of
    sum(exp(s * theta)) over cells carrying no label mass, and the median
    angle comes from the label-weighted similarity of each item. The new
    value is ln(B) / cos(min(pi/4, median angle)).

    The estimate of ln(B) assumes unlabeled similarities are background
    noise; when some unlabeled cell tracks the labeled one (classes a
    frame-local embedder cannot tell apart, e.g. time-reversed twins),
    ln(B) grows with the previous scale and the raw update diverges to the
    hard clamp, saturating the softmax. The result is therefore confined to
    a trust region of [1/2, 3/2] times the initialization sqrt(2) * ln(C - 1)
    (the rule's own fixed point under background similarities), inside the
    hard range [1, 100].
    """
    thetas = np.asarray(batch_thetas, dtype=np.float64)
    if thetas.ndim != 3 or thetas.shape[0] == 0:
        raise ParameterError("need a non-empty batch of (n_kw, n_pos) thetas")
    if thetas.shape[0] != len(labels):
        raise ParameterError("one label per batch item required")

    joint = np.stack([np.outer(l.y_kw, l.y_pos) for l in labels])   # (n, K, P)
    unlabeled = joint <= 0
    expz = np.exp(scale.value * thetas)
    b_mean = float(np.mean([expz[i][unlabeled[i]].sum() for i in range(len(labels))]))
    labeled_sim = np.clip((joint * thetas).sum(axis=(1, 2)), -1.0, 1.0)
    theta_med = float(np.median(np.arccos(labeled_sim)))
    new = np.log(max(b_mean, 1e-12)) / np.cos(min(np.pi / 4, theta_med))
    s0 = np.sqrt(2.0) * np.log(thetas.shape[1] * thetas.shape[2] - 1.0)
    new = float(np.clip(new, max(SCALE_MIN, 0.5 * s0), min(SCALE_MAX, 1.5 * s0)))
    return AdaptiveScale(value=new, n_updates=scale.n_updates + 1)


@dataclass(frozen=True)
class LossOutput:
    """Per-item diagnostics; losses are the (non-negative) negated log terms."""

    theta: np.ndarray
    s: np.ndarray
    loss_kw: float
    loss_pos: float
    loss_total: float


def _sample_weights(labels: list[SegmentLabel]) -> np.ndarray:
    """Weight 1 / (n_samples * per-sample item count), so the batch loss is a
    mean over samples of per-sample segment means."""
    ids = np.array([l.sample_id for l in labels])
    uniq, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    return 1.0 / (len(uniq) * counts[inverse])


def _forward(batch_e, labels, centers, scale, pos_weight):
    e = np.stack([np.asarray(x, dtype=np.float64) for x in batch_e])
    theta, attain = _similarity_with_attainment(e, centers)
    s_hat = scale.value if isinstance(scale, AdaptiveScale) else float(scale)
    z = s_hat * theta
    z = z - z.max(axis=(1, 2), keepdims=True)
    expz = np.exp(z)
    s = expz / expz.sum(axis=(1, 2), keepdims=True)
    p_kw = s.sum(axis=2)
    p_pos = s.sum(axis=1)
    y_kw = np.stack([l.y_kw for l in labels])
    y_pos = np.stack([l.y_pos for l in labels])
    ll_kw = (y_kw * np.log(np.maximum(p_kw, PROB_FLOOR))).sum(axis=1)
    ll_pos = (y_pos * np.log(np.maximum(p_pos, PROB_FLOOR))).sum(axis=1)
    weights = _sample_weights(labels)
    total = float((weights * -(ll_kw + pos_weight * ll_pos)).sum())
    return e, theta, attain, s, p_kw, p_pos, y_kw, y_pos, ll_kw, ll_pos, weights, total


def angular_loss(batch_e: list[np.ndarray], labels: list[SegmentLabel],
                 centers: np.ndarray, scale: AdaptiveScale | float,
                 pos_weight: float = 1.0) -> tuple[list[LossOutput], float]:
    """Evaluate the loss on a batch of (embedding, label) pairs.

    Returns per-item outputs and the batch loss: the mean over samples of
    per-sample segment means of the keyword and position cross-entropies.
    """
    (_, theta, _, s, _, _, _, _, ll_kw, ll_pos, _, total) = _forward(
        batch_e, labels, centers, scale, pos_weight)
    outputs = [
        LossOutput(theta=theta[i], s=s[i], loss_kw=float(-ll_kw[i]),
                   loss_pos=float(-ll_pos[i]),
                   loss_total=float(-(ll_kw[i] + pos_weight * ll_pos[i])))
        for i in range(len(labels))
    ]
    return outputs, total


def angular_loss_gradients(batch_e: list[np.ndarray], labels: list[SegmentLabel],
                           centers: np.ndarray, scale: AdaptiveScale | float,
                           pos_weight: float = 1.0):
    """Analytic gradients of the batch loss w.r.t. embeddings and centers.

    The max over clusters contributes through the attaining cluster only
    (ties to the lowest index); the scale is treated as a constant.
    Returns (grad_e (n,T,D), grad_centers (M,K,P,D), batch_loss).
    """
    (e, theta, attain, s, p_kw, p_pos, y_kw, y_pos, _, _, weights, total) = _forward(
        batch_e, labels, centers, scale, pos_weight)
    s_hat = scale.value if isinstance(scale, AdaptiveScale) else float(scale)
    n, t_dim, _ = e.shape
    m_dim = centers.shape[0]

    g_kw = np.where(p_kw > PROB_FLOOR, y_kw / np.maximum(p_kw, PROB_FLOOR), 0.0)
    g_pos = np.where(p_pos > PROB_FLOOR, y_pos / np.maximum(p_pos, PROB_FLOOR), 0.0)
    a = (g_kw * p_kw).sum(axis=1)
    b = (g_pos * p_pos).sum(axis=1)
    # d(item loss)/dz for z = s_hat * theta
    g_z = s * ((a + pos_weight * b)[:, None, None]
               - g_kw[:, :, None] - pos_weight * g_pos[:, None, :])
    d_theta = weights[:, None, None] * s_hat * g_z                  # (n, K, P)

    e_hat, e_norm = _normalize_rows(e, "embedding frame")
    c_hat, c_norm = _normalize_rows(np.asarray(centers, dtype=np.float64),
                                    "cluster center")
    grad_e_hat = np.zeros_like(e)
    grad_c_hat = np.zeros_like(c_hat)
    coeff = d_theta[:, None, :, :] / t_dim                          # (n, 1, K, P)
    for m in range(m_dim):
        mask = (attain == m)                                        # (n, T, K, P)
        w = np.where(mask, np.broadcast_to(coeff, mask.shape), 0.0)
        grad_e_hat += np.einsum("ntkp,kpd->ntd", w, c_hat[m])
        grad_c_hat[m] = np.einsum("ntkp,ntd->kpd", w, e_hat)

    # Back through row normalization: J^T v = (v - (v . x_hat) x_hat) / |x|
    proj_e = (grad_e_hat * e_hat).sum(axis=-1, keepdims=True)
    grad_e = (grad_e_hat - proj_e * e_hat) / e_norm[..., None]
    proj_c = (grad_c_hat * c_hat).sum(axis=-1, keepdims=True)
    grad_c = (grad_c_hat - proj_c * c_hat) / c_norm[..., None]
    return grad_e, grad_c, total
