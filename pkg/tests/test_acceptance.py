"""End-to-end acceptance gates, one verdict line per criterion.

Every check here exercises the package through its public entry points
against an independent oracle or a frozen fixture, prints a single
PASS/FAIL line, and enforces its runtime budget. Budgets are generous;
the heavy item is the P6 training study (min-scale, three seeds per
arm, well under its half-hour cap on one CPU core).
"""

import itertools
import json
import sys
import time
from collections import Counter

import numpy as np
import pytest

from softsum import autodiff as ad
from softsum import evalservice as ev
from softsum import objectives as obj
from softsum import training as tr
from softsum.corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SynthSpec,
    synth_corpus,
    task_bijection,
    write_pairs,
)
from softsum.decoding import beam_search, greedy
from softsum.model import ModelConfig, ModelParams, decode_step, encode, initial_state
from softsum.objectives import RegularizerConfig
from softsum.rouge import rouge_l, rouge_n

from conftest import tiny_params, toy_vocab, widen_params


def note(line):
    # verdict lines must stay visible under captured output
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()


def verdict(tag, ok, detail):
    note(f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag}: {detail}"


# ---------------------------------------------------------------------------
# P1: analytic gradients vs central finite differences, every mode


def _p1_batch(seed):
    rng = np.random.default_rng(seed * 7919 + 13)
    src = rng.integers(4, 20, (2, 5))
    tgt = np.array([[1, 7, 9, 2, 0], [1, 11, 2, 0, 0]])
    mask = (tgt[:, 1:] != 0).astype(np.float64)
    return tr.Batch(sources=src, targets=tgt, mask=mask)


def _p1_max_rel(mode, seed):
    reg = RegularizerConfig(tau=2.0, alpha=1.0)
    cfg = ModelConfig(vocab_size=20, embedding_size=8, hidden_size=12,
                      mode=mode, seed=0, dtype="float64", regularizer=reg)
    params = ModelParams.init(cfg)
    wrng = np.random.default_rng(seed + 999)
    for k in params.keys():
        node = params[k]
        node.value = wrng.uniform(-1.0, 1.0, size=node.value.shape)
    batch = _p1_batch(seed)

    loss1, loss2, captured = tr.batch_losses(params, batch, mode, reg,
                                             hard_only=False)
    total = ad.add(loss1, loss2) if loss2 is not None else loss1
    params.zero_grad()
    ad.backward(total)
    grads = params.gradients()
    analytic = np.concatenate([grads[k].ravel() for k in params.keys()])

    theta0 = params.flat_values().copy()
    frozen = captured if captured else None

    def f(flat):
        params.set_flat_values(flat)
        l1, l2, _ = tr.batch_losses(params, batch, mode, reg, hard_only=False,
                                    frozen_soft_targets=frozen)
        return float(l1.value) + (float(l2.value) if l2 is not None else 0.0)

    fd = ad.finite_difference_gradient(f, theta0)
    params.set_flat_values(theta0)
    rel = np.abs(analytic - fd) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(rel.max())


def test_p1_gradient_oracle():
    started = time.monotonic()
    rels = {}
    for mode, seed in (("baseline", 93), ("self-train", 77), ("dual-train", 61)):
        rels[mode] = _p1_max_rel(mode, seed)
    elapsed = time.monotonic() - started
    detail = ("max relative error vs central differences " +
              ", ".join(f"{m} {r:.2e}" for m, r in rels.items()) +
              f" (tol 1e-4), {elapsed:.0f}s (budget 120s)")
    verdict("P1", max(rels.values()) <= 1e-4 and elapsed <= 120, detail)


# ---------------------------------------------------------------------------
# P2: reduction identities


def test_p2_reduction_identities():
    vocab = toy_vocab()
    m = len(vocab.tokens)
    batch = _p2_batch()

    # (a) self-train at alpha 0 collapses to the baseline loss
    reg0 = RegularizerConfig(tau=2.0, alpha=0.0)
    pb = ModelParams.init(ModelConfig(vocab_size=m, embedding_size=5,
                                      hidden_size=6, mode="baseline", seed=4,
                                      dtype="float64", regularizer=reg0))
    ps = ModelParams.init(ModelConfig(vocab_size=m, embedding_size=5,
                                      hidden_size=6, mode="self-train", seed=4,
                                      dtype="float64", regularizer=reg0))
    lb, _, _ = tr.batch_losses(pb, batch, "baseline", reg0, hard_only=False)
    ls, _, _ = tr.batch_losses(ps, batch, "self-train", reg0, hard_only=False)
    diff_a = abs(float(lb.value) - float(ls.value))

    # (b) anneal at tau 1 is plain softmax
    rng = np.random.default_rng(11)
    logits = ad.constant(rng.normal(size=(64, m)) * 3.0)
    diff_b = float(np.abs(obj.anneal(logits, 1.0).value -
                          ad.softmax(logits).value).max())

    # (c)+(d) gradient isolation in dual mode, exact zeros
    reg = RegularizerConfig(tau=2.0, alpha=1.0)
    pd = widen_params(ModelParams.init(
        ModelConfig(vocab_size=m, embedding_size=5, hidden_size=6,
                    mode="dual-train", seed=4, dtype="float64",
                    regularizer=reg)), seed=14)
    loss1, loss2, _ = tr.batch_losses(pd, batch, "dual-train", reg,
                                      hard_only=False)
    pd.zero_grad()
    ad.backward(loss2)
    head2_to_head1 = float(np.abs(pd.gradients()["head1.W"]).max())
    pd.zero_grad()
    ad.backward(loss1)
    g = pd.gradients()
    soft_to_head2 = max(float(np.abs(g["head2.W"]).max()),
                        float(np.abs(g["head2.b"]).max()))
    pd.zero_grad()

    ok = diff_a <= 1e-12 and diff_b <= 1e-12 and \
        head2_to_head1 == 0.0 and soft_to_head2 == 0.0
    verdict("P2", ok,
            f"alpha0-vs-baseline diff {diff_a:.1e} (tol 1e-12), "
            f"anneal(1)-vs-softmax diff {diff_b:.1e} (tol 1e-12), "
            f"cross-head gradients {head2_to_head1:.1e}/{soft_to_head2:.1e} "
            f"(must be exactly 0)")


def _p2_batch():
    src = np.array([[5, 6, 7], [8, 9, 10]])
    tgt = np.array([[1, 5, 6, 2], [1, 7, 2, 0]])
    mask = (tgt[:, 1:] != 0).astype(np.float64)
    return tr.Batch(sources=src, targets=tgt, mask=mask)


# ---------------------------------------------------------------------------
# P3: annealing properties over random logits


def test_p3_annealing_properties():
    rng = np.random.default_rng(31)
    logits = rng.normal(size=(1000, 9)) * 3.0
    node = ad.constant(logits)
    max_sum_err = 0.0
    order_ok = True
    base_order = np.argsort(logits, axis=1)
    for tau in (0.5, 1.0, 2.0, 10.0):
        probs = obj.anneal(node, tau).value
        max_sum_err = max(max_sum_err,
                          float(np.abs(probs.sum(axis=1) - 1.0).max()))
        order_ok = order_ok and bool(
            np.array_equal(np.argsort(probs, axis=1), base_order))
    uniform = obj.anneal(node, 1e6).value
    max_uniform_err = float(np.abs(uniform - 1.0 / 9.0).max())
    ok = max_sum_err <= 1e-9 and order_ok and max_uniform_err <= 1e-4
    verdict("P3", ok,
            f"1000 vectors, tau in {{0.5,1,2,10}}: sum err {max_sum_err:.1e} "
            f"(tol 1e-9), ranking preserved {order_ok}, tau=1e6 uniform err "
            f"{max_uniform_err:.1e} (tol 1e-4)")


# ---------------------------------------------------------------------------
# P4: ROUGE vs brute-force oracles


def _oracle_rouge_n(cand, ref, n):
    c = [ch for ch in cand if not ch.isspace()]
    r = [ch for ch in ref if not ch.isspace()]
    rc = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
    if sum(rc.values()) == 0:
        return None
    cc = Counter(tuple(c[i:i + n]) for i in range(len(c) - n + 1))
    overlap = sum(min(count, cc[g]) for g, count in rc.items())
    n_ref = sum(rc.values())
    n_cand = sum(cc.values())
    recall = overlap / n_ref
    precision = overlap / n_cand if n_cand else 0.0
    f1 = 2.0 * recall * precision / (recall + precision) \
        if recall + precision else 0.0
    return recall, precision, f1


def _oracle_lcs(a, b):
    """Exhaustive subsequence enumeration, longest first."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for r in range(len(short), 0, -1):
        for combo in itertools.combinations(short, r):
            it = iter(long_)
            if all(ch in it for ch in combo):
                return r
    return 0


def test_p4_rouge_oracle_equivalence():
    started = time.monotonic()
    rng = np.random.default_rng(41)
    alphabet = list("abcde ")

    def rand_string(max_len):
        length = int(rng.integers(1, max_len + 1))
        return "".join(rng.choice(alphabet, size=length))

    mismatches = 0
    for _ in range(250):  # 500 strings for the n-gram check
        cand, ref = rand_string(50), rand_string(50)
        for n in (1, 2):
            want = _oracle_rouge_n(cand, ref, n)
            got = rouge_n(cand, ref, n)
            if want is None:
                mismatches += got is not None
            elif got is None or (got.recall, got.precision, got.f1) != want:
                mismatches += 1

    lcs_alphabet = list("abc")
    for _ in range(250):  # 500 strings for the LCS check
        cand = "".join(rng.choice(lcs_alphabet,
                                  size=int(rng.integers(1, 13))))
        ref = "".join(rng.choice(lcs_alphabet,
                                 size=int(rng.integers(1, 13))))
        lcs = _oracle_lcs(cand, ref)
        got = rouge_l(cand, ref)
        if got.recall != lcs / len(ref) or got.precision != lcs / len(cand):
            mismatches += 1
    elapsed = time.monotonic() - started
    verdict("P4", mismatches == 0 and elapsed <= 60,
            f"500 n-gram strings + 500 LCS strings vs brute force: "
            f"{mismatches} mismatches, {elapsed:.0f}s (budget 60s)")


# ---------------------------------------------------------------------------
# P5: beam optimality at small scale


def _enumerate_best(params, source, max_len):
    enc = encode(params, source)
    allowed = [t for t in range(params.config.vocab_size)
               if t not in (PAD_ID, BOS_ID)]

    def seq_logprob(seq):
        state = initial_state(enc)
        prev = BOS_ID
        total = 0.0
        for tok in seq:
            step = decode_step(params, state, np.array([prev]), enc)
            z = step.logits_head1.value[0]
            z = z - z.max()
            probs = np.exp(z) / np.exp(z).sum()
            total += float(np.log(probs[tok]))
            state = step.state
            prev = tok
        return total

    scored = []
    for L in range(1, max_len + 1):
        for seq in itertools.product(allowed, repeat=L):
            if EOS_ID in seq[:-1]:
                continue
            if seq[-1] != EOS_ID and L < max_len:
                continue
            scored.append((seq, seq_logprob(seq)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[0]


def test_p5_beam_optimality():
    exhaustive_fails = 0
    for seed in range(50):
        params = widen_params(tiny_params("baseline", vocab_size=6,
                                          seed=seed, dtype="float64"),
                              seed=seed + 500)
        src = np.array([5, 4])
        want_seq, want_logp = _enumerate_best(params, src, max_len=4)
        toks, logp = beam_search(params, src, beam_size=512, max_len=4)
        if tuple(toks) != (BOS_ID,) + want_seq or abs(logp - want_logp) > 1e-9:
            exhaustive_fails += 1

    greedy_fails = 0
    for seed in range(100):
        params = widen_params(tiny_params("baseline", seed=seed,
                                          dtype="float64"), seed=seed + 900)
        src = np.array([5, 6, 7])
        _, logp_greedy = greedy(params, src, max_len=6)
        _, logp_beam = beam_search(params, src, beam_size=5, max_len=6)
        if logp_beam < logp_greedy - 1e-12:
            greedy_fails += 1

    verdict("P5", exhaustive_fails == 0 and greedy_fails == 0,
            f"beam >= search space vs enumeration: {exhaustive_fails}/50 "
            f"mismatches; beam-5 below greedy: {greedy_fails}/100")


# ---------------------------------------------------------------------------
# P6: the spurious-correspondence study


def test_p6_spurious_correspondence_study(tmp_path):
    from softsum.experiment import StudyConfig, run_study

    started = time.monotonic()
    cfg = StudyConfig()
    assert cfg.train_pairs == 5000 and cfg.spurious_rate == 0.25
    assert cfg.dev_pairs == 500 and cfg.test_pairs == 500
    assert cfg.epochs_total == 10 and cfg.pretrain_epochs == 5
    assert cfg.tau == 2.0 and cfg.alpha == 1.0 and len(cfg.seeds) == 3
    bijection = task_bijection(SynthSpec(content_vocab=cfg.content_vocab,
                                         task_seed=cfg.task_seed))
    report = run_study(cfg, str(tmp_path), bijection)
    elapsed = time.monotonic() - started

    with open(tmp_path / "study-report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=str)

    comp = report["comparison"]
    control = {m: r["token_accuracy"] for m, r in report["control"].items()}
    ok = (comp["control_learnable"] and comp["dual_at_least_baseline_accuracy"]
          and comp["dual_higher_consistent_mass"] and elapsed <= 1800)
    verdict(
        "P6", ok,
        f"control accuracy {control['baseline']:.3f}/{control['dual-train']:.3f} "
        f"(floor 0.90); noisy mean accuracy margin dual-baseline "
        f"{comp['accuracy_margin']:+.4f} (need >= 0); consistent-mass margin "
        f"{comp['mass_margin']:+.4f} (need > 0); {elapsed:.0f}s (budget 1800s)")


# ---------------------------------------------------------------------------
# P7: determinism of artifacts


def test_p7_determinism(tmp_path):
    # corpora
    spec = SynthSpec(content_vocab=10, n_pairs=16, source_len_range=(3, 5),
                     spurious_rate=0.25, seed=3, task_seed=1)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_pairs(pa, synth_corpus(spec)[0])
    write_pairs(pb, synth_corpus(spec)[0])
    corpora_ok = pa.read_bytes() == pb.read_bytes()

    # checkpoints from two identical training runs
    pairs, _ = synth_corpus(spec)
    vocab = toy_vocab(10)
    ckpts = []
    for run in ("run1", "run2"):
        params = tiny_params("dual", vocab_size=len(vocab.tokens), seed=7)
        cfg = tr.TrainConfig(epochs_total=2, pretrain_epochs=1, batch_size=8,
                             learning_rate=1e-2, seed=7, dev_decode_limit=0)
        result = tr.train(params, vocab, pairs, [], cfg, tmp_path / run,
                          select_best=False)
        ckpts.append(result.checkpoint_paths[-1])
    with open(ckpts[0], "rb") as fh:
        blob1 = fh.read()
    with open(ckpts[1], "rb") as fh:
        blob2 = fh.read()
    checkpoints_ok = blob1 == blob2

    # generated summaries from one checkpoint, decoded twice
    from softsum.checkpoint import load_checkpoint
    params, _, ck_vocab = load_checkpoint(ckpts[0])
    texts = [p.source for p in pairs[:6]]
    runs = []
    for _ in range(2):
        outs = []
        for text in texts:
            ids = np.asarray(ck_vocab.encode_text(text))
            tokens, _ = beam_search(params, ids, beam_size=3, max_len=6)
            outs.append(tuple(tokens))
        runs.append(outs)
    summaries_ok = runs[0] == runs[1]

    verdict("P7", corpora_ok and checkpoints_ok and summaries_ok,
            f"bitwise identical: corpora {corpora_ok}, checkpoints "
            f"{checkpoints_ok}, summaries {summaries_ok}")


# ---------------------------------------------------------------------------
# P8: eval-service fixtures


def test_p8_eval_service_fixtures(tmp_path):
    # 389 good of 725 answered -> 53.6 after replay from the event log
    log = str(tmp_path / "events.jsonl")
    store = ev.EvalStore(log_path=log)
    n = 725
    pairs = [{"id": f"p{i:04d}", "source": f"s{i}"} for i in range(n)]
    systems = {"solo": [f"c{i}" for i in range(n)]}
    session = store.create(pairs, systems, ["only"], double_subset_size=0,
                           seed=0)
    sid = session.session_id
    order = session.serving_order["only"]
    for i, task_id in enumerate(order):
        if i < 389:
            store.annotate(sid, task_id, "only", "good")
        else:
            store.annotate(sid, task_id, "only", "bad",
                           failing_rule="faithfulness")
    replayed = ev.EvalStore(log_path=log)
    stats = ev.session_stats(replayed.get(sid))
    block = stats["systems"]["solo"]
    table_ok = (block["n_good"] == 389 and block["n_answered"] == 725
                and block["accuracy_pct"] == 53.6)

    # kappa fixture: half agreement with balanced marginals
    kpairs = [{"id": f"k{i}", "source": f"s{i}"} for i in range(4)]
    ksession = ev.create_session(kpairs, {"sys": ["c0", "c1", "c2", "c3"]},
                                 ["a", "b"], double_subset_size=4, seed=0)
    verdicts_a = ["good", "good", "bad", "bad"]
    verdicts_b = ["good", "bad", "good", "bad"]
    for task in ksession.tasks.values():
        i = int(task.pair_id[1:])
        for annotator, verdicts in (("a", verdicts_a), ("b", verdicts_b)):
            v = verdicts[i]
            ev.submit_annotation(ksession, task.task_id, annotator, v,
                                 "fluency" if v == "bad" else None)
    agree = ev.agreement(ksession)
    kappa_ok = (abs(agree.percent_agreement - 0.5) < 1e-12
                and agree.kappa_defined and abs(agree.kappa) < 1e-12)

    # dispatch constraints across 100 seeded sessions
    dispatch_ok = True
    for seed in range(100):
        dpairs = [{"id": f"p{i}", "source": f"s{i}"} for i in range(8)]
        dsystems = {"m1": [f"x{i}" for i in range(8)],
                    "m2": [f"y{i}" for i in range(8)]}
        s = ev.create_session(dpairs, dsystems, ["a1", "a2", "a3"],
                              double_subset_size=3, seed=seed)
        if len(s.double_pairs) != 3:
            dispatch_ok = False
        for task in s.tasks.values():
            double = task.pair_id in s.double_pairs
            if double and (len(task.assignees) != 2
                           or list(task.assignees) != sorted(task.assignees)):
                dispatch_ok = False
            if not double and len(task.assignees) != 1:
                dispatch_ok = False
            if task.system_id in task.task_id:
                dispatch_ok = False  # id must not leak the system
        loads = sorted(len(s.serving_order[a]) for a in s.annotators)
        if loads[-1] - loads[0] > 2 * len(dsystems):
            dispatch_ok = False  # least-loaded dispatch keeps loads tight

    verdict("P8", table_ok and kappa_ok and dispatch_ok,
            f"389/725 replay -> {block['accuracy_pct']} (want 53.6); kappa "
            f"fixture agreement {agree.percent_agreement} kappa {agree.kappa}; "
            f"dispatch invariants over 100 sessions {dispatch_ok}")
