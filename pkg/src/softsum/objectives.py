"""Training objectives built on the annealed output distribution.

Three modes share one vocabulary-sized output space:

* baseline: negative log-likelihood of the gold label.
* self-train: the hard loss plus alpha times a cross-entropy against the
  model's own temperature-annealed distribution, which is detached so
  the target acts as a constant at each step.
* dual-train: two output heads over one shared representation; head one
  gets the hard loss plus a soft term against head two's annealed
  distribution (detached), head two gets the hard loss only and is
  never used for prediction.

All functions accept single logits vectors (M,) or batches (B, M) with
per-row labels and return scalar or per-row losses accordingly.
Probabilities are floored at PROB_FLOOR before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class RegularizerConfig:
    """Soft-target settings: temperature tau > 0, strength alpha >= 0."""

    tau: float = 2.0
    alpha: float = 1.0
    detach_soft_target: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


def anneal(logits, tau):
    """Temperature softmax: softmax(logits / tau), numerically stabilised.

    tau = 1 reduces to plain softmax; larger tau flattens the
    distribution without changing the ranking of entries.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    logits = ad.as_node(logits)
    return ad.softmax(ad.scale(logits, 1.0 / tau))


def _log_floored(dist):
    return ad.log(ad.clip_min(dist, PROB_FLOOR))


def hard_ce(dist, label):
    """Negative log probability of the gold label under dist."""
    dist = ad.as_node(dist)
    return ad.scale(_log_floored(ad.pick(dist, label)), -1.0)


def soft_ce(dist, soft_target):
    """Cross-entropy of dist against a full target distribution."""
    dist = ad.as_node(dist)
    soft_target = ad.as_node(soft_target)
    if dist.shape != soft_target.shape:
        raise ValueError(
            f"soft_ce: shape mismatch {dist.shape} vs {soft_target.shape}")
    weighted = ad.mul(soft_target, _log_floored(dist))
    if dist.value.ndim == 1:
        return ad.scale(ad.sum_all(weighted), -1.0)
    return ad.scale(ad.sum_axis(weighted, 1), -1.0)


def self_train_loss(logits, label, cfg):
    """Hard loss plus alpha times the self-distillation soft term.

    With alpha = 0 the soft path is skipped entirely, so the result is
    the baseline loss computed by the same sequence of operations.
    """
    logits = ad.as_node(logits)
    dist = ad.softmax(logits)
    loss = hard_ce(dist, label)
    if cfg.alpha == 0:
        return loss
    target = anneal(logits, cfg.tau)
    if cfg.detach_soft_target:
        target = ad.detach(target)
    return ad.add(loss, ad.scale(soft_ce(dist, target), cfg.alpha))


def dual_train_losses(logits_head1, logits_head2, label, cfg):
    """Per-head losses for the two-head objective.

    Head one: hard loss plus alpha times cross-entropy against head
    two's annealed distribution (detached by default, so no gradient
    reaches head two through the soft term). Head two: hard loss only.
    """
    logits_head1 = ad.as_node(logits_head1)
    logits_head2 = ad.as_node(logits_head2)
    dist1 = ad.softmax(logits_head1)
    loss1 = hard_ce(dist1, label)
    if cfg.alpha > 0:
        target = anneal(logits_head2, cfg.tau)
        if cfg.detach_soft_target:
            target = ad.detach(target)
        loss1 = ad.add(loss1, ad.scale(soft_ce(dist1, target), cfg.alpha))
    loss2 = hard_ce(ad.softmax(logits_head2), label)
    return loss1, loss2


def is_distribution(vec, atol=1e-6):
    """True when vec is non-negative and sums to one within atol."""
    arr = np.asarray(vec)
    return bool(np.all(arr >= 0) and abs(float(arr.sum()) - 1.0) <= atol)
