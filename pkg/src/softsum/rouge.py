"""Character-level ROUGE-1, ROUGE-2, and ROUGE-L.

Texts are reduced to their character sequences with all whitespace
removed; punctuation and case are kept. ROUGE-N uses clipped multiset
n-gram counts; ROUGE-L uses the longest common subsequence. Each metric
reports recall, precision, and F1, with recall being the figure quoted
by default elsewhere in the package.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class RougeTriple:
    recall: float
    precision: float
    f1: float


def _chars(text):
    return [ch for ch in text if not ch.isspace()]


def _f1(recall, precision):
    if recall + precision == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def rouge_n(candidate, reference, n):
    """Clipped n-gram overlap. Returns None when the reference is shorter
    than n after whitespace removal (the pair is reported as a skip)."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    cand = _chars(candidate)
    ref = _chars(reference)
    ref_counts = _ngrams(ref, n)
    n_ref = sum(ref_counts.values())
    if n_ref == 0:
        return None
    cand_counts = _ngrams(cand, n)
    n_cand = sum(cand_counts.values())
    overlap = sum(min(count, cand_counts[gram]) for gram, count in ref_counts.items())
    recall = overlap / n_ref
    precision = overlap / n_cand if n_cand else 0.0
    return RougeTriple(recall=recall, precision=precision, f1=_f1(recall, precision))


def _lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] >= prev[j] else prev[j]
        prev = cur
    return prev[len(b)]


def rouge_l(candidate, reference):
    """Longest-common-subsequence recall/precision/F1 over characters."""
    cand = _chars(candidate)
    ref = _chars(reference)
    if not cand or not ref:
        warnings.warn("rouge_l: empty input after whitespace removal, scoring 0")
        return RougeTriple(recall=0.0, precision=0.0, f1=0.0)
    lcs = _lcs_length(cand, ref)
    recall = lcs / len(ref)
    precision = lcs / len(cand)
    return RougeTriple(recall=recall, precision=precision, f1=_f1(recall, precision))


@dataclass(frozen=True)
class CorpusRouge:
    """Mean scores over pairs, with per-metric skip counts."""

    rouge1: RougeTriple
    rouge2: RougeTriple
    rougeL: RougeTriple
    n_pairs: int
    skipped: dict

    def as_dict(self):
        return {
            "rouge1": vars(self.rouge1),
            "rouge2": vars(self.rouge2),
            "rougeL": vars(self.rougeL),
            "n_pairs": self.n_pairs,
            "skipped": dict(self.skipped),
        }


def _mean_triple(triples):
    if not triples:
        return RougeTriple(0.0, 0.0, 0.0)
    n = len(triples)
    return RougeTriple(
        recall=sum(t.recall for t in triples) / n,
        precision=sum(t.precision for t in triples) / n,
        f1=sum(t.f1 for t in triples) / n,
    )


def corpus_rouge(candidates, references):
    """Aligned candidate/reference lists -> mean ROUGE-1/2/L.

    Pairs whose reference is too short for a given n are excluded from
    that metric's mean and counted in ``skipped``.
    """
    if len(candidates) != len(references):
        raise ValueError(
            f"candidate/reference counts differ: {len(candidates)} vs {len(references)}")
    per_metric = {"rouge1": [], "rouge2": [], "rougeL": []}
    skipped = {"rouge1": 0, "rouge2": 0, "rougeL": 0}
    for cand, ref in zip(candidates, references):
        for name, n in (("rouge1", 1), ("rouge2", 2)):
            triple = rouge_n(cand, ref, n)
            if triple is None:
                skipped[name] += 1
            else:
                per_metric[name].append(triple)
        per_metric["rougeL"].append(rouge_l(cand, ref))
    return CorpusRouge(
        rouge1=_mean_triple(per_metric["rouge1"]),
        rouge2=_mean_triple(per_metric["rouge2"]),
        rougeL=_mean_triple(per_metric["rougeL"]),
        n_pairs=len(candidates),
        skipped=skipped,
    )
