"""Training loop: Adam, bucketed batching, and the two-phase schedule.

The first ``pretrain_epochs`` epochs use the hard loss only (a
dual-train model pretrains both heads hard); afterwards the configured
mode's full objective applies. Per-sequence loss is the sum over time
steps, per-batch loss is the mean over sequences. Batches are formed by
bucketing pairs on exact source length, so sources are never padded;
targets are padded to the batch maximum and the loss is masked at the
padding positions. Gradients are clipped to a global norm before the
update. Everything downstream of the seed is deterministic: the same
config and data give bitwise-identical checkpoints.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .checkpoint import save_checkpoint, load_checkpoint
from .corpus import BOS_ID, EOS_ID, PAD_ID
from .decoding import beam_search, greedy, strip_specials
from .model import ModelParams, teacher_forced_pass
from .rouge import corpus_rouge


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 10
    pretrain_epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta_first_moment: float = 0.9
    beta_second_moment: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    head2_updates_shared: bool = True
    max_decode_len: int = 30
    dev_beam_size: int = 5
    dev_decode_limit: int | None = None

    def __post_init__(self):
        if not 0 <= self.pretrain_epochs <= self.epochs_total:
            raise ValueError(
                f"pretrain_epochs must lie in [0, epochs_total], got "
                f"{self.pretrain_epochs} of {self.epochs_total}")
        for name in ("beta_first_moment", "beta_second_moment"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


class Adam:
    """Adam with bias correction, applied in a fixed parameter order."""

    def __init__(self, params, config):
        self.params = params
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(params[k].value) for k in params.keys()}
        self.v = {k: np.zeros_like(params[k].value) for k in params.keys()}

    def step(self, grads):
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        b1, b2 = cfg.beta_first_moment, cfg.beta_second_moment
        for key in self.params.keys():
            g = grads[key]
            if g.shape != self.params[key].value.shape:
                raise ValueError(f"gradient shape mismatch for {key!r}: "
                                 f"{g.shape} vs {self.params[key].value.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for {key!r}")
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / (1.0 - b1 ** t)
            v_hat = self.v[key] / (1.0 - b2 ** t)
            update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
            self.params[key].value = self.params[key].value - update


def clip_gradients(grads, max_norm):
    """Scale all gradients down so their global norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class Batch:
    sources: np.ndarray   # (B, L) ids, equal length, no padding
    targets: np.ndarray   # (B, T) ids, BOS ... EOS then PAD
    mask: np.ndarray      # (B, T-1) float, 0 at padded prediction slots


def encode_pairs(pairs, vocab):
    """Token-id views of a pair list: (source_ids, target_ids) per pair.

    Targets are wrapped in BOS/EOS. Pairs that tokenize to nothing on
    either side are rejected.
    """
    out = []
    for p in pairs:
        src = vocab.encode_text(p.source)
        tgt = vocab.encode_text(p.summary)
        if not src or not tgt:
            raise ValueError(f"pair {p.id!r} tokenizes to an empty sequence")
        out.append((src, [BOS_ID] + tgt + [EOS_ID]))
    return out


def make_batches(encoded, batch_size, rng):
    """Bucket by source length, shuffle within buckets, shuffle batch order."""
    buckets = {}
    order = rng.permutation(len(encoded))
    for idx in order:
        src, tgt = encoded[idx]
        buckets.setdefault(len(src), []).append((src, tgt))
    batches = []
    for length in sorted(buckets):
        items = buckets[length]
        for i in range(0, len(items), batch_size):
            chunk = items[i:i + batch_size]
            srcs = np.asarray([s for s, _ in chunk], dtype=np.int64)
            max_t = max(len(t) for _, t in chunk)
            tgts = np.full((len(chunk), max_t), PAD_ID, dtype=np.int64)
            for row, (_, t) in enumerate(chunk):
                tgts[row, :len(t)] = t
            mask = (tgts[:, 1:] != PAD_ID).astype(np.float64)
            batches.append(Batch(sources=srcs, targets=tgts, mask=mask))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


# ---------------------------------------------------------------------------
# loss assembly


def batch_losses(params, batch, mode, reg, hard_only, frozen_soft_targets=None):
    """Scalar loss nodes (head1, head2 or None) for one batch.

    ``hard_only`` selects the pretraining objective. When alpha is zero
    the soft path is skipped entirely, so a self-train model with
    alpha 0 runs the exact baseline computation. For gradient
    verification, ``frozen_soft_targets`` injects precomputed constant
    target distributions (one (B, M) array per step) in place of the
    ones derived from the current parameters.
    """
    steps = teacher_forced_pass(params, batch.sources, batch.targets)
    batch_size = batch.sources.shape[0]
    dtype = params.config.np_dtype
    soft_active = (not hard_only) and reg.alpha > 0 and mode in ("self-train", "dual-train")
    captured = []
    loss1_total = None
    loss2_total = None
    for t, step in enumerate(steps):
        gold = batch.targets[:, t + 1]
        mask = ad.constant(batch.mask[:, t].astype(dtype))
        dist1 = ad.softmax(step.logits_head1)
        loss1 = obj.hard_ce(dist1, gold)
        if soft_active:
            if frozen_soft_targets is not None:
                target = ad.constant(np.asarray(frozen_soft_targets[t], dtype=dtype))
            else:
                source_logits = step.logits_head2 if mode == "dual-train" else step.logits_head1
                target = obj.anneal(source_logits, reg.tau)
                if reg.detach_soft_target:
                    target = ad.detach(target)
            captured.append(np.array(target.value, copy=True))
            loss1 = ad.add(loss1, ad.scale(obj.soft_ce(dist1, target), reg.alpha))
        loss1 = ad.sum_all(ad.mul(loss1, mask))
        loss1_total = loss1 if loss1_total is None else ad.add(loss1_total, loss1)
        if mode == "dual-train":
            loss2 = ad.sum_all(ad.mul(obj.hard_ce(ad.softmax(step.logits_head2), gold), mask))
            loss2_total = loss2 if loss2_total is None else ad.add(loss2_total, loss2)
    loss1_total = ad.scale(loss1_total, 1.0 / batch_size)
    if loss2_total is not None:
        loss2_total = ad.scale(loss2_total, 1.0 / batch_size)
    return loss1_total, loss2_total, captured


def training_step(params, batch, train_cfg, hard_only):
    """Forward, backward, clip, and Adam-ready gradients for one batch.

    Returns (loss1, loss2, grads) with losses as floats. The head-2
    hard loss normally trains the shared parameters too; with
    ``head2_updates_shared`` off it still trains the head-2 projection.
    """
    mode = params.config.mode
    reg = params.config.regularizer
    loss1, loss2, _ = batch_losses(params, batch, mode, reg, hard_only)
    params.zero_grad()
    if loss2 is not None:
        total = ad.add(loss1, loss2)
        if not train_cfg.head2_updates_shared:
            ad.backward(loss1)
            grads1 = {k: np.array(params.gradients()[k]) for k in params.keys()}
            params.zero_grad()
            ad.backward(loss2)
            grads2 = params.gradients()
            grads = {}
            for k in params.keys():
                if k.startswith("head2."):
                    grads[k] = grads1[k] + grads2[k]
                else:
                    grads[k] = grads1[k]
        else:
            ad.backward(total)
            grads = params.gradients()
    else:
        ad.backward(loss1)
        grads = params.gradients()
    return float(loss1.value), (float(loss2.value) if loss2 is not None else None), grads


# ---------------------------------------------------------------------------
# evaluation helpers


def decode_corpus(params, vocab, pairs, beam_size=5, max_len=30, limit=None):
    """Decode sources to summary texts; beam_size 1 uses the greedy path."""
    subset = pairs if limit is None else pairs[:limit]
    outputs = []
    for p in subset:
        src = vocab.encode_text(p.source)
        if beam_size == 1:
            tokens, _ = greedy(params, np.asarray(src), max_len=max_len)
        else:
            tokens, _ = beam_search(params, np.asarray(src), beam_size=beam_size,
                                    max_len=max_len)
        outputs.append(vocab.decode_text(strip_specials(tokens)))
    return outputs, [p.summary for p in subset]


def dev_rouge(params, vocab, pairs, beam_size, max_len, limit=None):
    candidates, references = decode_corpus(params, vocab, pairs,
                                           beam_size=beam_size, max_len=max_len,
                                           limit=limit)
    return corpus_rouge(candidates, references)


def token_accuracy(params, vocab, pairs, batch_size=64):
    """Teacher-forced next-token accuracy of head one over gold positions."""
    encoded = encode_pairs(pairs, vocab)
    rng = np.random.default_rng(0)
    hits = 0
    total = 0
    for batch in make_batches(encoded, batch_size, rng):
        steps = teacher_forced_pass(params, batch.sources, batch.targets)
        for t, step in enumerate(steps):
            gold = batch.targets[:, t + 1]
            live = batch.mask[:, t] > 0
            pred = np.argmax(step.logits_head1.value, axis=1)
            hits += int(np.sum((pred == gold) & live))
            total += int(np.sum(live))
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    checkpoint_paths: list
    log_records: list
    best_checkpoint: str | None = None


def train(params, vocab, train_pairs, dev_pairs, train_cfg, out_dir,
          log_path=None, select_best=True):
    """Run the full schedule; one checkpoint and one log record per epoch."""
    if not train_pairs:
        raise ValueError("training corpus is empty")
    os.makedirs(out_dir, exist_ok=True)
    encoded = encode_pairs(train_pairs, vocab)
    optimizer = Adam(params, train_cfg)
    mode = params.config.mode
    checkpoint_paths = []
    records = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, train_cfg.epochs_total + 1):
            started = time.monotonic()
            hard_only = epoch <= train_cfg.pretrain_epochs
            rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, epoch]))
            sum1 = 0.0
            sum2 = 0.0
            n_batches = 0
            for batch in make_batches(encoded, train_cfg.batch_size, rng):
                loss1, loss2, grads = training_step(params, batch, train_cfg, hard_only)
                grads, _ = clip_gradients(grads, train_cfg.clip_norm)
                optimizer.step(grads)
                params.zero_grad()
                sum1 += loss1
                sum2 += loss2 if loss2 is not None else 0.0
                n_batches += 1
            scores = None
            if dev_pairs and (train_cfg.dev_decode_limit is None
                              or train_cfg.dev_decode_limit > 0):
                scores = dev_rouge(params, vocab, dev_pairs,
                                   beam_size=train_cfg.dev_beam_size,
                                   max_len=train_cfg.max_decode_len,
                                   limit=train_cfg.dev_decode_limit)
            record = {
                "epoch": epoch,
                "phase": "pretrain" if hard_only else "full",
                "loss_head1": sum1 / n_batches,
                "loss_head2": (sum2 / n_batches) if mode == "dual-train" else None,
                "dev_rouge1": scores.rouge1.recall if scores else None,
                "dev_rouge2": scores.rouge2.recall if scores else None,
                "dev_rougeL": scores.rougeL.recall if scores else None,
                "wall_time": time.monotonic() - started,
            }
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            path = os.path.join(out_dir, f"epoch-{epoch:03d}.ckpt")
            save_checkpoint(path, params,
                            counters={"epoch": epoch, "steps": optimizer.step_count},
                            vocab=vocab)
            checkpoint_paths.append(path)
    finally:
        if log_fh:
            log_fh.close()
    best = None
    if select_best and dev_pairs:
        best = select_best_checkpoint(checkpoint_paths, dev_pairs,
                                      beam_size=train_cfg.dev_beam_size,
                                      max_len=train_cfg.max_decode_len,
                                      limit=train_cfg.dev_decode_limit)
    return TrainResult(checkpoint_paths=checkpoint_paths, log_records=records,
                       best_checkpoint=best)


def select_best_checkpoint(checkpoint_paths, dev_pairs, beam_size=5, max_len=30,
                           limit=None):
    """Highest dev ROUGE-L recall wins; ties go to the earliest epoch."""
    if not checkpoint_paths:
        raise ValueError("no checkpoints to choose from")
    best_path = None
    best_score = None
    for path in checkpoint_paths:
        params, _, vocab = load_checkpoint(path)
        if vocab is None:
            raise ValueError(f"{path}: checkpoint carries no vocabulary")
        scores = dev_rouge(params, vocab, dev_pairs, beam_size=beam_size,
                           max_len=max_len, limit=limit)
        score = scores.rougeL.recall
        if best_score is None or score > best_score:
            best_score = score
            best_path = path
    return best_path
