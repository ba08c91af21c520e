"""Beam and greedy decoding.

Hypotheses are scored by the sum of token log-probabilities; there is
no length normalisation unless ``length_normalize`` is set, in which
case the final ranking divides by the number of generated tokens.
Padding and start-of-sequence ids are never candidates, so they cannot
appear after position zero. A hypothesis finishes when it emits the
end-of-sequence id (whose log-probability is included in its score) or
when it reaches ``max_len`` generated tokens, at which point it is
finished as-is. Finished hypotheses are held aside and compete with the
still-active ones only at the final selection.

All ties, both in pruning and in the final selection, are broken by
higher log-probability first and then by lexicographically smaller
token-id sequence, so decoding is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .model import decode_step, encode, initial_state

PROB_FLOOR = 1e-12


@dataclass
class Hypothesis:
    """A partial or finished decode: tokens include the leading BOS."""

    tokens: tuple
    logprob: float
    state: tuple
    finished: bool

    def key(self):
        return (-self.logprob, self.tokens[1:])


def _step_logprobs(params, state, prev_token, enc):
    """Log-probabilities for one step with PAD and BOS masked out."""
    out = decode_step(params, state, np.asarray([prev_token]), enc)
    logits = out.logits_head1.value[0].astype(np.float64)
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    logp[PAD_ID] = -np.inf
    logp[BOS_ID] = -np.inf
    return logp, out.state


def _rank(h, length_normalize):
    if length_normalize and len(h.tokens) > 1:
        return (-h.logprob / (len(h.tokens) - 1), h.tokens[1:])
    return (-h.logprob, h.tokens[1:])


def beam_search(params, source, beam_size=5, max_len=30, length_normalize=False):
    """Best scoring summary for one source; returns (tokens, logprob).

    The returned token list starts with BOS and ends with EOS when the
    hypothesis terminated naturally before the length cap.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be positive, got {beam_size}")
    if max_len < 1:
        raise ValueError(f"max_len must be positive, got {max_len}")
    enc = encode(params, source)
    if enc.batch != 1:
        raise ValueError("beam_search decodes one source at a time")
    active = [Hypothesis(tokens=(BOS_ID,), logprob=0.0,
                         state=initial_state(enc), finished=False)]
    finished = []
    for _ in range(max_len):
        if not active:
            break
        candidates = []
        for hyp in active:
            logp, state = _step_logprobs(params, hyp.state, hyp.tokens[-1], enc)
            for tok in range(len(logp)):
                if not np.isfinite(logp[tok]):
                    continue
                candidates.append(Hypothesis(
                    tokens=hyp.tokens + (tok,),
                    logprob=hyp.logprob + float(logp[tok]),
                    state=state,
                    finished=tok == EOS_ID,
                ))
        candidates.sort(key=Hypothesis.key)
        kept = candidates[:beam_size]
        active = [h for h in kept if not h.finished]
        finished.extend(h for h in kept if h.finished)
        if finished and active and not length_normalize:
            # Extensions never raise a sum of log-probabilities, so once
            # the best finished hypothesis strictly beats every active
            # one the outcome is settled, ties included.
            best_finished = min(-h.logprob for h in finished)
            best_active = min(-h.logprob for h in active)
            if best_finished < best_active:
                break
    finished.extend(active)
    best = min(finished, key=lambda h: _rank(h, length_normalize))
    return list(best.tokens), best.logprob


def greedy(params, source, max_len=30):
    """Greedy decode; argmax ties go to the lowest token id."""
    if max_len < 1:
        raise ValueError(f"max_len must be positive, got {max_len}")
    enc = encode(params, source)
    if enc.batch != 1:
        raise ValueError("greedy decodes one source at a time")
    state = initial_state(enc)
    tokens = [BOS_ID]
    logprob = 0.0
    for _ in range(max_len):
        logp, state = _step_logprobs(params, state, tokens[-1], enc)
        tok = int(np.argmax(logp))
        tokens.append(tok)
        logprob += float(logp[tok])
        if tok == EOS_ID:
            break
    return tokens, logprob


def strip_specials(tokens):
    """Drop BOS/EOS/PAD from a decoded id sequence."""
    return [t for t in tokens if t not in (BOS_ID, EOS_ID, PAD_ID)]
