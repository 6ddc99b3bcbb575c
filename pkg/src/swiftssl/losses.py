"""Temperature softmax, pseudo-label selection, temperature-scaled CE, and the
semi-supervised objectives (consistency training and its debiased variant).

All operations are pure; gradients are returned alongside values so the
trainer never re-derives anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEBIAS_EPS = 1e-6


@dataclass
class SelectionResult:
    pseudo_labels: np.ndarray  # (n,) argmax class per sample
    confidences: np.ndarray    # (n,) max softmax probability
    mask: np.ndarray           # (n,) bool, confidence >= sigma
    utilization: float


@dataclass
class DebiasState:
    ema_marginal: np.ndarray  # probability vector over classes
    momentum: float = 0.999
    coeff: float = 0.5  # scale on the log-marginal logit offset

    @staticmethod
    def uniform(num_classes: int, momentum: float = 0.999, coeff: float = 0.5) -> "DebiasState":
        return DebiasState(np.full(num_classes, 1.0 / num_classes), momentum, coeff)


def softmax_t(logits: np.ndarray, t: float) -> np.ndarray:
    """Temperature softmax along the last axis, max-subtracted for stability."""
    if t <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    scaled = np.asarray(logits, dtype=np.float64) / t
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def select(weak_logits: np.ndarray, t_conf: float, sigma: float) -> SelectionResult:
    """Pseudo-labels and confidence mask from weak-view logits.

    Confidence is the max of the t_conf-sharpened softmax; argmax ties break
    toward the lowest class index (np.argmax convention) for determinism.
    """
    probs = softmax_t(weak_logits, t_conf)
    pseudo = probs.argmax(axis=-1)
    conf = probs.max(axis=-1)
    mask = conf >= sigma
    util = float(mask.mean()) if len(mask) else 0.0
    return SelectionResult(pseudo, conf, mask, util)


def ce_loss_t(logits: np.ndarray, labels: np.ndarray, t: float,
              sample_weights: np.ndarray | None = None,
              denom: int | None = None) -> tuple[float, np.ndarray, float]:
    """Mean cross entropy of softmax(logits / t) with exact gradients.

    Returns (loss, dloss/dlogits, dloss/dt). sample_weights (0/1 mask) and an
    explicit denominator support the selected-sum / full-batch-mean form of
    the unlabeled objective.
    """
    n, c = logits.shape
    labels = np.asarray(labels)
    if n == 0:
        return 0.0, np.zeros_like(logits), 0.0
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    if t <= 0:
        raise ValueError("temperature must be positive")
    weights = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    m = n if denom is None else denom

    u = logits / t
    u = u - u.max(axis=1, keepdims=True)
    logz = np.log(np.exp(u).sum(axis=1))
    s = np.exp(u - logz[:, None])
    per = logz - u[np.arange(n), labels]
    loss = float((weights * per).sum() / m)

    grad_u = s.copy()
    grad_u[np.arange(n), labels] -= 1.0
    grad_u *= weights[:, None] / m
    dlogits = grad_u / t
    # d(per)/dt = (q_y - sum_j s_j q_j) / t^2
    qy = logits[np.arange(n), labels]
    dper_dt = (qy - (s * logits).sum(axis=1)) / (t * t)
    dt = float((weights * dper_dt).sum() / m)
    return loss, dlogits, dt


@dataclass
class FixmatchResult:
    loss_l: float
    loss_u: float
    selection: SelectionResult
    d_labeled_logits: np.ndarray
    d_strong_logits: np.ndarray
    dt_x: float
    dt_u: float


def fixmatch_losses(weak_logits: np.ndarray, strong_logits: np.ndarray,
                    labeled_logits: np.ndarray, labels: np.ndarray,
                    t_loss_x: float, t_loss_u: float, t_conf: float,
                    sigma: float, logit_offset: np.ndarray | None = None) -> FixmatchResult:
    """Supervised + consistency losses with per-path loss temperatures.

    Pseudo-labels come from the weak view and are detached: no gradient flows
    through weak_logits. Unselected samples contribute zero to the unlabeled
    loss but stay in its denominator. logit_offset (per-class) implements the
    debiased variant: it shifts weak logits before selection and acts as an
    adaptive margin inside the strong-view CE.
    """
    if weak_logits.shape != strong_logits.shape:
        raise ValueError("weak/strong logits must align per sample")
    sel_logits = weak_logits if logit_offset is None else weak_logits + logit_offset[None, :]
    selection = select(sel_logits, t_conf, sigma)
    loss_l, d_lab, dt_x = ce_loss_t(labeled_logits, labels, t_loss_x)
    eff_strong = strong_logits if logit_offset is None else strong_logits + logit_offset[None, :]
    loss_u, d_strong, dt_u = ce_loss_t(
        eff_strong, selection.pseudo_labels, t_loss_u,
        sample_weights=selection.mask.astype(np.float64),
        denom=len(weak_logits),
    )
    return FixmatchResult(loss_l, loss_u, selection, d_lab, d_strong, dt_x, dt_u)


def retrieved_loss(retrieved_logits: np.ndarray, noisy_labels: np.ndarray,
                   t_loss_x: float) -> tuple[float, np.ndarray, float]:
    """CE on retrieved (noisy-labeled) data; shares the labeled-path temperature."""
    if len(retrieved_logits) == 0:
        return 0.0, np.zeros_like(retrieved_logits), 0.0
    return ce_loss_t(retrieved_logits, noisy_labels, t_loss_x)


def debias_update(state: DebiasState, weak_probs: np.ndarray) -> DebiasState:
    """EMA of the batch-mean predicted marginal; stays a probability vector."""
    if len(weak_probs) == 0:
        return state
    batch_mean = weak_probs.mean(axis=0)
    ema = state.momentum * state.ema_marginal + (1.0 - state.momentum) * batch_mean
    return DebiasState(ema / ema.sum(), state.momentum, state.coeff)


def debias_offset(state: DebiasState) -> np.ndarray:
    """Per-class logit offset -coeff * log(ema + eps)."""
    return -state.coeff * np.log(state.ema_marginal + DEBIAS_EPS)


def debias_adjust(logits: np.ndarray, state: DebiasState) -> np.ndarray:
    return logits + debias_offset(state)[None, :]
