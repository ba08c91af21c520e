"""Corpus loading, vocabulary handling, and synthetic data generation.

Corpus files are UTF-8 line-delimited JSON with fields ``text`` and
``summary``, plus optional ``score`` (integer relevance, higher is
better) and ``id``. Synthetic corpora additionally get a sidecar file
holding a ``clean`` flag per pair; the flag never appears in the
training file itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

POLICIES = ("pre-segmented-words", "whitespace", "characters")


class CorpusFormatError(ValueError):
    """Raised when a corpus file cannot be parsed; carries the line number."""


@dataclass
class Pair:
    """One source/summary pair. Texts are non-empty after trimming."""

    id: str
    source: str
    summary: str
    score: int | None = None
    split: str | None = None


def load_pairs(path, split=None):
    """Read a line-delimited JSON corpus file into a list of pairs."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({err.msg})") from err
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}:{lineno}: expected an object")
            for key in ("text", "summary"):
                if key not in record:
                    raise CorpusFormatError(f"{path}:{lineno}: missing field {key!r}")
            source = str(record["text"]).strip()
            summary = str(record["summary"]).strip()
            if not source or not summary:
                raise CorpusFormatError(f"{path}:{lineno}: empty text or summary")
            score = record.get("score")
            if score is not None:
                score = int(score)
            pair_id = str(record.get("id", f"line-{lineno}"))
            pairs.append(Pair(id=pair_id, source=source, summary=summary,
                              score=score, split=split))
    return pairs


def write_pairs(path, pairs):
    """Write pairs as line-delimited JSON, deterministically."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            record = {"id": p.id, "text": p.source, "summary": p.summary}
            if p.score is not None:
                record["score"] = p.score
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def filter_by_score(pairs, min_score):
    """Keep pairs with score >= min_score; unscored pairs pass only at min_score 0."""
    if min_score == 0:
        return list(pairs)
    return [p for p in pairs if p.score is not None and p.score >= min_score]


def tokenize(text, policy):
    if policy in ("pre-segmented-words", "whitespace"):
        return text.split()
    if policy == "characters":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenization policy {policy!r}")


def detokenize(tokens, policy):
    if policy in ("pre-segmented-words", "whitespace"):
        return " ".join(tokens)
    if policy == "characters":
        return "".join(tokens)
    raise ValueError(f"unknown tokenization policy {policy!r}")


@dataclass
class Vocab:
    """Token table with fixed special ids 0..3 and a tokenization policy."""

    tokens: list[str]
    policy: str
    index: dict[str, int] = field(repr=False, default=None)

    def __post_init__(self):
        if self.index is None:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the four special tokens")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown tokenization policy {self.policy!r}")

    def __len__(self):
        return len(self.tokens)

    def encode_tokens(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]

    def encode_text(self, text):
        return self.encode_tokens(tokenize(text, self.policy))

    def decode_ids(self, ids, strip_specials=True):
        toks = []
        for i in ids:
            if strip_specials and i in (PAD_ID, BOS_ID, EOS_ID, UNK_ID) and i != UNK_ID:
                continue
            if strip_specials and i == UNK_ID:
                toks.append(UNK_TOKEN)
                continue
            toks.append(self.tokens[i])
        return toks

    def decode_text(self, ids):
        return detokenize(self.decode_ids(ids), self.policy)

    def to_dict(self):
        return {"tokens": list(self.tokens), "policy": self.policy}

    @classmethod
    def from_dict(cls, d):
        return cls(tokens=list(d["tokens"]), policy=d["policy"])


def build_vocab(pairs, policy, max_size=10000, min_count=1):
    """Frequency-ranked vocabulary over sources and summaries.

    Ties in frequency are broken lexicographically so identical corpora
    always produce identical tables. max_size counts the four specials.
    """
    if max_size < 5:
        raise ValueError(f"max_size must be at least 5, got {max_size}")
    counts = {}
    for p in pairs:
        for tok in tokenize(p.source, policy) + tokenize(p.summary, policy):
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = list(SPECIAL_TOKENS)
    for tok, c in ranked:
        if len(tokens) >= max_size:
            break
        if c < min_count:
            continue
        if tok in SPECIAL_TOKENS:
            continue
        tokens.append(tok)
    return Vocab(tokens=tokens, policy=policy)


# ---------------------------------------------------------------------------
# synthetic select-and-translate corpus


@dataclass(frozen=True)
class SynthSpec:
    """Controls the synthetic spurious-correspondence corpus.

    A clean pair is a source made of segments, each a content token
    repeated one to three times, with the segment tokens all distinct
    and drawn from a single topic (a fixed block of the content
    vocabulary), so topic-mates co-occur and other tokens do not; its
    summary is the segment tokens in order, each mapped through a fixed
    random bijection over the content vocabulary. A spurious pair keeps
    the source but replaces the summary with uniformly random content
    tokens of the same length. ``seed`` drives pair sampling; the
    bijection and topics depend only on ``task_seed`` and the
    vocabulary size, so separately generated splits share one task.
    """

    content_vocab: int = 40
    n_pairs: int = 1000
    source_len_range: tuple[int, int] = (4, 12)
    spurious_rate: float = 0.0
    seed: int = 0
    task_seed: int = 0

    def __post_init__(self):
        lo, hi = self.source_len_range
        if not (1 <= lo <= hi):
            raise ValueError(f"bad source length range {self.source_len_range}")
        if hi > self.content_vocab:
            raise ValueError("source length range exceeds content vocabulary")
        if not 0.0 <= self.spurious_rate <= 1.0:
            raise ValueError(f"spurious_rate must be in [0, 1], got {self.spurious_rate}")
        if self.n_pairs < 0:
            raise ValueError("n_pairs must be non-negative")


TOPIC_SIZE = 10


def content_tokens(vocab_size):
    return [f"w{i:03d}" for i in range(vocab_size)]


def task_topics(spec):
    """Partition of the content tokens into topics of TOPIC_SIZE.

    A clean source draws its segment tokens from a single topic, so
    tokens of one topic co-occur while tokens of different topics
    almost never do. The last topic absorbs any remainder.
    """
    toks = content_tokens(spec.content_vocab)
    n_full = max(1, spec.content_vocab // TOPIC_SIZE)
    topics = [toks[i * TOPIC_SIZE:(i + 1) * TOPIC_SIZE] for i in range(n_full)]
    rest = toks[n_full * TOPIC_SIZE:]
    if rest:
        topics[-1] = topics[-1] + rest
    return topics


def task_bijection(spec):
    """The fixed token translation shared by every split of one task."""
    toks = content_tokens(spec.content_vocab)
    rng = np.random.default_rng(np.random.SeedSequence([spec.task_seed, spec.content_vocab]))
    perm = rng.permutation(spec.content_vocab)
    return {toks[i]: toks[perm[i]] for i in range(spec.content_vocab)}


def synth_corpus(spec):
    """Generate pairs plus a parallel list of clean flags.

    Exactly round(spurious_rate * n_pairs) pairs are spurious; which
    ones is a seeded draw. Byte-for-byte reproducible for equal specs.
    """
    toks = content_tokens(spec.content_vocab)
    mapping = task_bijection(spec)
    topics = task_topics(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.n_pairs]))

    n_spurious = int(round(spec.spurious_rate * spec.n_pairs))
    spurious_idx = set(rng.choice(spec.n_pairs, size=n_spurious, replace=False).tolist()) \
        if n_spurious else set()

    lo, hi = spec.source_len_range
    pairs = []
    flags = []
    for i in range(spec.n_pairs):
        target_len = int(rng.integers(lo, hi + 1))
        topic = topics[int(rng.integers(0, len(topics)))]
        heads = []
        source_toks = []
        remaining = target_len
        while remaining > 0:
            # segment tokens come from the pair's topic while it lasts
            candidates = [t for t in topic if t not in heads]
            if not candidates:
                candidates = [t for t in toks if t not in heads]
            head = candidates[int(rng.integers(0, len(candidates)))]
            reps = min(int(rng.integers(1, 4)), remaining)
            heads.append(head)
            source_toks.extend([head] * reps)
            remaining -= reps
        clean = i not in spurious_idx
        if clean:
            summary_toks = [mapping[h] for h in heads]
        else:
            draw = rng.integers(0, spec.content_vocab, size=len(heads))
            summary_toks = [toks[int(j)] for j in draw]
        pairs.append(Pair(id=f"synth-{i:06d}",
                          source=" ".join(source_toks),
                          summary=" ".join(summary_toks)))
        flags.append(clean)
    return pairs, flags


def write_sidecar(path, pairs, flags):
    """Write the clean/spurious flags next to a synthetic corpus file."""
    with open(path, "w", encoding="utf-8") as fh:
        for p, clean in zip(pairs, flags):
            fh.write(json.dumps({"clean": bool(clean), "id": p.id}, sort_keys=True) + "\n")


def load_sidecar(path):
    flags = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({err.msg})") from err
            flags[str(record["id"])] = bool(record["clean"])
    return flags
