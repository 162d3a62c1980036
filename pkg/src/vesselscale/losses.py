"""Reference loss kernels with analytic gradients.

Every ``*_loss`` function returns ``(value, gradient)`` where the gradient has
the shape of the differentiated input, so each can be passed (through a
closure) to :func:`finite_difference_check`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

DICE_EPS = 1e-6
PROB_CLAMP = 1e-7
DEFAULT_TAU = 0.94
# auxiliary-task weights for three scales and the contrastive weight
DEFAULT_SCALE_WEIGHTS = (0.78, 0.48, 0.54)
DEFAULT_CONTRASTIVE_WEIGHT = 0.53


def _aligned(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def soft_dice_loss(pred, gt, eps: float = DICE_EPS):
    """``1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)``."""
    p, g = _aligned(pred, gt)
    inter = np.sum(p * g)
    denom = np.sum(p) + np.sum(g) + eps
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    grad = -(2.0 * g * denom - num) / denom**2
    return float(loss), grad


def balanced_class_weights(gt) -> tuple[float, float]:
    """Inverse-frequency ``(w_background, w_foreground)``, ``n / (2 n_class)``.

    A class absent from ``gt`` gets weight 1 (it never enters the loss).
    """
    g = np.asarray(getattr(gt, "data", gt)) != 0
    n = g.size
    n_fg = int(g.sum())
    n_bg = n - n_fg
    w0 = n / (2.0 * n_bg) if n_bg else 1.0
    w1 = n / (2.0 * n_fg) if n_fg else 1.0
    return w0, w1


def weighted_cross_entropy(pred, gt, weights=None, delta: float = PROB_CLAMP):
    """``-mean(w1 g log p + w0 (1 - g) log(1 - p))`` with ``p`` clamped to [delta, 1 - delta].

    ``weights`` is ``(w_background, w_foreground)``; default
    :func:`balanced_class_weights`.  The gradient is zero where clamping is active.
    """
    p, g = _aligned(pred, gt)
    w0, w1 = balanced_class_weights(g) if weights is None else weights
    pc = np.clip(p, delta, 1.0 - delta)
    n = p.size
    loss = -np.sum(w1 * g * np.log(pc) + w0 * (1.0 - g) * np.log1p(-pc)) / n
    grad = -(w1 * g / pc - w0 * (1.0 - g) / (1.0 - pc)) / n
    grad = np.where((p < delta) | (p > 1.0 - delta), 0.0, grad)
    return float(loss), grad


def segmentation_loss(pred, gt, weights=None, eps: float = DICE_EPS):
    """Soft Dice plus weighted cross-entropy, unweighted sum."""
    ld, gd = soft_dice_loss(pred, gt, eps)
    lc, gc = weighted_cross_entropy(pred, gt, weights)
    return ld + lc, gd + gc


@dataclass
class ContrastiveTerms:
    loss: float
    anchor_terms: list  # mean l_ij over positives per anchor, None when skipped
    skipped_anchors: list
    pair_terms: dict = field(default_factory=dict)  # (i, j) -> l_ij


def _contrastive(vectors, scales, tau):
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
        raise ValueError(f"need an (N >= 2, d >= 1) embedding matrix, got shape {v.shape}")
    s = np.asarray(scales)
    if s.shape != (v.shape[0],):
        raise ValueError("one scale label per embedding is required")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero embedding vector cannot be normalised")
    z = v / norms
    sim = z @ z.T / tau
    same = s[:, None] == s[None, :]
    n = len(s)
    eye = np.eye(n, dtype=bool)
    pos = same & ~eye
    neg = ~same
    anchors = np.flatnonzero(pos.any(axis=1))
    if anchors.size == 0:
        raise ValueError("no anchor has a positive (every scale label is unique)")

    gsim = np.zeros((n, n))  # dL / d sim[a, b]
    terms = ContrastiveTerms(0.0, [None] * n, [int(i) for i in np.flatnonzero(~pos.any(axis=1))])
    total = 0.0
    for i in anchors:
        positives = np.flatnonzero(pos[i])
        negatives = np.flatnonzero(neg[i])
        neg_lse = logsumexp(sim[i, negatives]) if negatives.size else -np.inf
        weight = 1.0 / (anchors.size * positives.size)
        acc = 0.0
        for j in positives:
            lse = np.logaddexp(sim[i, j], neg_lse)
            lij = lse - sim[i, j]
            terms.pair_terms[(int(i), int(j))] = float(lij)
            acc += lij
            gsim[i, j] += weight * (np.exp(sim[i, j] - lse) - 1.0)
            if negatives.size:
                gsim[i, negatives] += weight * np.exp(sim[i, negatives] - lse)
        terms.anchor_terms[i] = float(acc / positives.size)
        total += acc / positives.size
    loss = total / anchors.size
    terms.loss = float(loss)
    gz = (gsim + gsim.T) @ z / tau
    # through the row normalisation z = v / |v|
    gv = (gz - z * np.sum(gz * z, axis=1, keepdims=True)) / norms
    return float(loss), gv, terms


def contrastive_loss(vectors, scales, tau: float = DEFAULT_TAU):
    """Supervised multi-scale contrastive loss over a labeled embedding batch.

    Rows are L2-normalised.  For anchor ``i`` the positives are the other rows
    with the same scale label and the negatives all rows with a different one::

        l_ij = -log(exp(z_i.z_j / tau) / (exp(z_i.z_j / tau) + sum_k exp(z_i.z_k / tau)))

    averaged over positives, then over anchors that have at least one
    positive.  Returns ``(loss, d loss / d vectors)``.
    """
    loss, grad, _ = _contrastive(vectors, scales, tau)
    return loss, grad


def contrastive_terms(vectors, scales, tau: float = DEFAULT_TAU) -> ContrastiveTerms:
    return _contrastive(vectors, scales, tau)[2]


@dataclass(frozen=True)
class LossConfig:
    scale_weights: tuple = DEFAULT_SCALE_WEIGHTS
    contrastive_weight: float = DEFAULT_CONTRASTIVE_WEIGHT
    class_weights: tuple | None = None
    eps: float = DICE_EPS

    def __post_init__(self):
        if any(w < 0 for w in self.scale_weights) or self.contrastive_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.class_weights is not None and any(w < 0 for w in self.class_weights):
            raise ValueError("class weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("Dice smoothing must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    l_mt: float
    l_s: tuple
    l_c: float
    total: float


def total_loss(l_mt: float, l_s, l_c: float, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Main loss plus weighted auxiliary scale losses plus weighted contrastive loss."""
    l_s = tuple(float(x) for x in l_s)
    if len(l_s) != len(cfg.scale_weights):
        raise ValueError(f"{len(l_s)} scale losses for {len(cfg.scale_weights)} scale weights")
    total = float(l_mt)
    for w, ls in zip(cfg.scale_weights, l_s):
        total += w * ls
    total += cfg.contrastive_weight * float(l_c)
    return LossBreakdown(float(l_mt), l_s, float(l_c), total)


def finite_difference_check(f, point, step: float = 1e-5, floor: float = 1e-6, order: int = 2) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` returns ``(value, gradient)``.  The relative error of a coordinate
    is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    ``order=2`` is the two-point stencil.  ``order=4`` uses the five-point
    stencil, whose smaller truncation error allows a larger ``step`` and so
    less cancellation roundoff (which otherwise dominates near ``floor``).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x = np.array(point, dtype=np.float64)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)

    def at(i, offset):
        orig = flat[i]
        flat[i] = orig + offset
        value = f(x.copy())[0]
        flat[i] = orig
        return value

    for i in range(flat.size):
        if order == 2:
            num_flat[i] = (at(i, step) - at(i, -step)) / (2.0 * step)
        else:
            num_flat[i] = (8.0 * (at(i, step) - at(i, -step)) - (at(i, 2 * step) - at(i, -2 * step))) / (12.0 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))
