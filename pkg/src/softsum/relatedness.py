"""Label relatedness: average output distribution per gold label.

A teacher-forced pass runs over a corpus; at every non-padding step the
head-one softmax (temperature 1) is added to the row of that step's
gold label, and each row is finally divided by its count. Rows whose
label never occurred are flagged absent. The full M x M matrix is
materialised, which is only sensible for vocabularies up to 20k labels;
larger tables are rejected outright rather than approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import PAD_ID, BOS_ID, EOS_ID, UNK_ID
from .model import teacher_forced_pass
from .training import encode_pairs, make_batches

MAX_MATERIALISED_VOCAB = 20000


@dataclass
class RelatednessMatrix:
    """Row-normalised average distributions plus per-row step counts."""

    matrix: np.ndarray  # (M, M) float64
    counts: np.ndarray  # (M,) int64

    def row(self, label):
        if self.counts[label] == 0:
            raise ValueError(f"label {label} never occurred as a gold token")
        return self.matrix[label]


def accumulate_relatedness(params, vocab, pairs, batch_size=64):
    """Build the relatedness matrix for a corpus.

    Deterministic for a fixed model and corpus: batching order does not
    matter because accumulation is a sum per gold label.
    """
    m = params.config.vocab_size
    if m > MAX_MATERIALISED_VOCAB:
        raise ValueError(
            f"vocabulary of {m} labels exceeds the materialised-matrix limit "
            f"of {MAX_MATERIALISED_VOCAB}")
    sums = np.zeros((m, m), dtype=np.float64)
    counts = np.zeros(m, dtype=np.int64)
    encoded = encode_pairs(pairs, vocab)
    rng = np.random.default_rng(0)
    for batch in make_batches(encoded, batch_size, rng):
        steps = teacher_forced_pass(params, batch.sources, batch.targets)
        for t, step in enumerate(steps):
            gold = batch.targets[:, t + 1]
            live = batch.mask[:, t] > 0
            dist = ad.softmax(step.logits_head1).value.astype(np.float64)
            for row in np.nonzero(live)[0]:
                label = int(gold[row])
                sums[label] += dist[row]
                counts[label] += 1
    matrix = np.zeros_like(sums)
    present = counts > 0
    matrix[present] = sums[present] / counts[present, None]
    return RelatednessMatrix(matrix=matrix, counts=counts)


def top_k_related(related, label, k=4):
    """The k highest-mass labels in a row, excluding the label itself and
    the special ids; ties go to the lower label id."""
    row = related.row(label)
    banned = {label, PAD_ID, BOS_ID, EOS_ID, UNK_ID}
    candidates = [(i, float(row[i])) for i in range(len(row)) if i not in banned]
    candidates.sort(key=lambda iv: (-iv[1], iv[0]))
    return candidates[:k]


def relatedness_report(related, vocab, k=4, min_count=1):
    """Readable table: token -> top related tokens with their masses."""
    lines = []
    for label in range(len(vocab)):
        if label in (PAD_ID, BOS_ID, EOS_ID, UNK_ID):
            continue
        if related.counts[label] < min_count:
            continue
        top = top_k_related(related, label, k=k)
        parts = ", ".join(f"{vocab.tokens[i]}:{mass:.4f}" for i, mass in top)
        lines.append(f"{vocab.tokens[label]} ({int(related.counts[label])} steps): {parts}")
    return "\n".join(lines)
