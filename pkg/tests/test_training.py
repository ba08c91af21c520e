"""Optimizer, batching, loss assembly, schedule, and the training loop."""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from softsum import autodiff as ad
from softsum import objectives as obj
from softsum import training as tr
from softsum.corpus import BOS_ID, EOS_ID, PAD_ID, Pair
from softsum.model import ModelConfig, ModelParams, teacher_forced_pass
from softsum.objectives import PROB_FLOOR, RegularizerConfig

from conftest import tiny_config, tiny_params, toy_vocab, widen_params


class FakeParams:
    """Minimal params container for optimizer unit tests."""

    def __init__(self, values):
        self.tensors = {k: SimpleNamespace(value=np.asarray(v, dtype=np.float64))
                        for k, v in values.items()}

    def keys(self):
        return self.tensors.keys()

    def __getitem__(self, key):
        return self.tensors[key]


def softmax_np(x):
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_magnitude():
    """With bias correction the first update is lr * g/|g| regardless of
    gradient scale, so theta moves by exactly lr up to epsilon terms."""
    for g0 in (3.7, -2.0, 1e4):
        p = FakeParams({"w": [0.5]})
        adam = tr.Adam(p, tr.TrainConfig(learning_rate=1e-3))
        adam.step({"w": np.array([g0])})
        moved = p["w"].value[0] - 0.5
        assert abs(abs(moved) - 1e-3) < 1e-9
        assert np.sign(moved) == -np.sign(g0)


def test_adam_multi_step_matches_reference():
    rng = np.random.default_rng(7)
    theta0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    cfg = tr.TrainConfig(learning_rate=2e-3)

    p = FakeParams({"w": theta0.copy()})
    adam = tr.Adam(p, cfg)
    for g in grads:
        adam.step({"w": g})

    # independent reimplementation
    theta = theta0.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = cfg.beta_first_moment, cfg.beta_second_moment
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - cfg.learning_rate * (m / (1 - b1 ** t)) / (
            np.sqrt(v / (1 - b2 ** t)) + cfg.epsilon)
    np.testing.assert_allclose(p["w"].value, theta, rtol=1e-12, atol=1e-15)


def test_adam_zero_gradient_is_noop():
    p = FakeParams({"w": [1.0, -2.0]})
    adam = tr.Adam(p, tr.TrainConfig())
    adam.step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].value, [1.0, -2.0])


def test_adam_rejects_bad_gradients():
    p = FakeParams({"w": [1.0, 2.0]})
    adam = tr.Adam(p, tr.TrainConfig())
    with pytest.raises(ValueError, match="shape mismatch"):
        adam.step({"w": np.zeros(3)})
    with pytest.raises(ValueError, match="non-finite gradient"):
        adam.step({"w": np.array([1.0, np.nan])})


def test_train_config_validation():
    with pytest.raises(ValueError, match="pretrain_epochs"):
        tr.TrainConfig(epochs_total=2, pretrain_epochs=3)
    with pytest.raises(ValueError, match="beta_first_moment"):
        tr.TrainConfig(beta_first_moment=1.0)
    with pytest.raises(ValueError, match="learning_rate"):
        tr.TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="batch_size"):
        tr.TrainConfig(batch_size=0)


# ---------------------------------------------------------------------------
# clipping


def test_clip_gradients_scales_to_max_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    clipped, norm = tr.clip_gradients(grads, 2.5)
    assert abs(norm - 5.0) < 1e-12
    total = np.sqrt(sum(float(np.sum(g ** 2)) for g in clipped.values()))
    assert abs(total - 2.5) < 1e-12
    np.testing.assert_allclose(clipped["a"], [1.5, 0.0])


def test_clip_gradients_below_threshold_untouched():
    grads = {"a": np.array([0.3, 0.4])}
    clipped, norm = tr.clip_gradients(grads, 5.0)
    assert abs(norm - 0.5) < 1e-12
    assert clipped["a"] is grads["a"]


def test_clip_gradients_zero_max_disables():
    grads = {"a": np.array([30.0])}
    clipped, norm = tr.clip_gradients(grads, 0.0)
    assert abs(norm - 30.0) < 1e-12
    assert clipped["a"] is grads["a"]


# ---------------------------------------------------------------------------
# batching


def make_toy_pairs(n=10, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        slen = int(rng.integers(2, 5))
        tlen = int(rng.integers(1, 4))
        src = " ".join(f"w{int(rng.integers(0, 8)):03d}" for _ in range(slen))
        tgt = " ".join(f"w{int(rng.integers(0, 8)):03d}" for _ in range(tlen))
        pairs.append(Pair(id=f"p{i}", source=src, summary=tgt))
    return pairs


def test_encode_pairs_wraps_and_rejects_empty():
    vocab = toy_vocab()
    encoded = tr.encode_pairs([Pair(id="x", source="w000 w001", summary="w002")],
                              vocab)
    src, tgt = encoded[0]
    assert tgt[0] == BOS_ID and tgt[-1] == EOS_ID
    assert len(src) == 2 and len(tgt) == 3
    with pytest.raises(ValueError, match="empty sequence"):
        tr.encode_pairs([Pair(id="bad", source="   ", summary="w000")], vocab)


def test_make_batches_buckets_by_exact_source_length():
    vocab = toy_vocab()
    encoded = tr.encode_pairs(make_toy_pairs(30, seed=1), vocab)
    rng = np.random.default_rng(0)
    batches = tr.make_batches(encoded, 4, rng)
    seen = []
    for b in batches:
        assert b.sources.ndim == 2
        assert b.sources.shape[0] <= 4
        # every source row in a batch has the same true length: no source pad
        assert (b.sources != PAD_ID).all()
        assert b.targets[:, 0].tolist() == [BOS_ID] * b.targets.shape[0]
        np.testing.assert_array_equal(b.mask,
                                      (b.targets[:, 1:] != PAD_ID).astype(float))
        for row in range(b.sources.shape[0]):
            seen.append((tuple(b.sources[row]),
                         tuple(t for t in b.targets[row] if t != PAD_ID)))
    want = sorted((tuple(s), tuple(t)) for s, t in encoded)
    assert sorted(seen) == want  # exact coverage, nothing dropped or duplicated


def test_make_batches_deterministic_under_seed():
    vocab = toy_vocab()
    encoded = tr.encode_pairs(make_toy_pairs(20, seed=2), vocab)
    a = tr.make_batches(encoded, 4, np.random.default_rng(9))
    b = tr.make_batches(encoded, 4, np.random.default_rng(9))
    c = tr.make_batches(encoded, 4, np.random.default_rng(10))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.sources, y.sources)
        np.testing.assert_array_equal(x.targets, y.targets)
    assert any(not np.array_equal(x.sources, y.sources)
               for x, y in zip(a, c) if x.sources.shape == y.sources.shape) or \
        [x.sources.shape for x in a] != [y.sources.shape for y in c]


# ---------------------------------------------------------------------------
# loss assembly


def manual_hard_loss(params, batch):
    steps = teacher_forced_pass(params, batch.sources, batch.targets)
    total = 0.0
    for t, step in enumerate(steps):
        probs = softmax_np(step.logits_head1.value)
        gold = batch.targets[:, t + 1]
        picked = np.clip(probs[np.arange(len(gold)), gold], PROB_FLOOR, None)
        total += float(np.sum(-np.log(picked) * batch.mask[:, t]))
    return total / batch.sources.shape[0]


def small_batch(vocab, params, n=3, seed=4):
    encoded = tr.encode_pairs(make_toy_pairs(12, seed=seed), vocab)
    # keep one bucket so a single batch covers several sequence lengths
    encoded = [e for e in encoded if len(e[0]) == len(encoded[0][0])][:n]
    batches = tr.make_batches(encoded, n, np.random.default_rng(0))
    assert len(batches) == 1
    return batches[0]


def test_batch_losses_match_manual_sum():
    vocab = toy_vocab()
    params = widen_params(tiny_params("baseline", vocab_size=len(vocab.tokens)),
                          seed=3)
    batch = small_batch(vocab, params)
    loss1, loss2, captured = tr.batch_losses(
        params, batch, "baseline", params.config.regularizer, hard_only=True)
    assert loss2 is None
    assert captured == []
    np.testing.assert_allclose(float(loss1.value), manual_hard_loss(params, batch),
                               rtol=1e-12)


def test_padding_does_not_change_a_rows_loss():
    """Mean of per-sequence sums: batch loss * B == sum of single-row losses,
    even though batching pads the shorter target."""
    vocab = toy_vocab()
    params = widen_params(tiny_params("baseline", vocab_size=len(vocab.tokens)),
                          seed=8)
    pairs = [Pair(id="a", source="w000 w001", summary="w002 w003 w004"),
             Pair(id="b", source="w005 w006", summary="w007")]
    encoded = tr.encode_pairs(pairs, vocab)
    batch = tr.make_batches(encoded, 2, np.random.default_rng(0))[0]
    assert batch.targets.shape[0] == 2
    l_batch, _, _ = tr.batch_losses(params, batch, "baseline",
                                    params.config.regularizer, hard_only=True)
    singles = 0.0
    for enc in encoded:
        one = tr.make_batches([enc], 1, np.random.default_rng(0))[0]
        l_one, _, _ = tr.batch_losses(params, one, "baseline",
                                      params.config.regularizer, hard_only=True)
        singles += float(l_one.value)
    np.testing.assert_allclose(float(l_batch.value) * 2, singles, rtol=1e-12)


def test_self_train_alpha_zero_is_exactly_baseline():
    vocab = toy_vocab()
    cfg_b = ModelConfig(vocab_size=len(vocab.tokens), embedding_size=5,
                        hidden_size=6, mode="baseline", seed=2, dtype="float64",
                        regularizer=RegularizerConfig(tau=2.0, alpha=0.0))
    cfg_s = ModelConfig(vocab_size=len(vocab.tokens), embedding_size=5,
                        hidden_size=6, mode="self-train", seed=2, dtype="float64",
                        regularizer=RegularizerConfig(tau=2.0, alpha=0.0))
    pb = ModelParams.init(cfg_b)
    ps = ModelParams.init(cfg_s)
    batch = small_batch(vocab, pb)
    tcfg = tr.TrainConfig(learning_rate=1e-2)
    lb, _, gb = tr.training_step(pb, batch, tcfg, hard_only=False)
    ls, _, gs = tr.training_step(ps, batch, tcfg, hard_only=False)
    assert lb == ls
    for k in gb:
        assert gb[k].tobytes() == gs[k].tobytes()


def test_soft_loss_only_after_pretraining(monkeypatch):
    vocab = toy_vocab()
    params = tiny_params("self-train", vocab_size=len(vocab.tokens))
    batch = small_batch(vocab, params)

    def boom(*a, **k):
        raise AssertionError("annealing ran during pretraining")

    monkeypatch.setattr(obj, "anneal", boom)
    # pretraining epochs never touch the soft path
    tr.batch_losses(params, batch, "self-train", params.config.regularizer,
                    hard_only=True)
    with pytest.raises(AssertionError, match="annealing ran"):
        tr.batch_losses(params, batch, "self-train", params.config.regularizer,
                        hard_only=False)


def test_dual_train_head2_hard_only_and_captured_targets():
    vocab = toy_vocab()
    params = widen_params(tiny_params("dual", vocab_size=len(vocab.tokens)),
                          seed=5)
    batch = small_batch(vocab, params)
    reg = params.config.regularizer
    loss1, loss2, captured = tr.batch_losses(params, batch, "dual-train", reg,
                                             hard_only=False)
    assert loss2 is not None
    n_steps = batch.targets.shape[1] - 1
    assert len(captured) == n_steps
    for target in captured:
        assert target.shape == (batch.sources.shape[0], len(vocab.tokens))
        np.testing.assert_allclose(target.sum(axis=1), 1.0, atol=1e-9)
    # head2's own loss is the plain hard objective on its logits
    steps = teacher_forced_pass(params, batch.sources, batch.targets)
    manual2 = 0.0
    for t, step in enumerate(steps):
        probs = softmax_np(step.logits_head2.value)
        gold = batch.targets[:, t + 1]
        picked = np.clip(probs[np.arange(len(gold)), gold], PROB_FLOOR, None)
        manual2 += float(np.sum(-np.log(picked) * batch.mask[:, t]))
    np.testing.assert_allclose(float(loss2.value),
                               manual2 / batch.sources.shape[0], rtol=1e-12)


def test_frozen_soft_targets_are_used_verbatim():
    vocab = toy_vocab()
    params = widen_params(tiny_params("self-train", vocab_size=len(vocab.tokens)),
                          seed=6)
    batch = small_batch(vocab, params)
    reg = params.config.regularizer
    n_steps = batch.targets.shape[1] - 1
    m = len(vocab.tokens)
    frozen = [np.full((batch.sources.shape[0], m), 1.0 / m) for _ in range(n_steps)]
    _, _, captured = tr.batch_losses(params, batch, "self-train", reg,
                                     hard_only=False, frozen_soft_targets=frozen)
    for got, want in zip(captured, frozen):
        np.testing.assert_array_equal(got, want)


def test_head2_private_gradient_routing():
    """With head2_updates_shared off, shared parameters see only the head-1
    loss while the head-2 projection still trains on its own loss."""
    vocab = toy_vocab()
    params = widen_params(tiny_params("dual", vocab_size=len(vocab.tokens)),
                          seed=9)
    batch = small_batch(vocab, params)
    shared_cfg = tr.TrainConfig(head2_updates_shared=True)
    private_cfg = tr.TrainConfig(head2_updates_shared=False)

    _, _, g_shared = tr.training_step(params, batch, shared_cfg, hard_only=False)
    params.zero_grad()
    _, _, g_private = tr.training_step(params, batch, private_cfg, hard_only=False)
    params.zero_grad()

    # reference: gradients of loss1 alone
    loss1, loss2, _ = tr.batch_losses(params, batch, "dual-train",
                                      params.config.regularizer, hard_only=False)
    params.zero_grad()
    ad.backward(loss1)
    g_loss1 = {k: np.array(v) for k, v in params.gradients().items()}
    params.zero_grad()
    ad.backward(loss2)
    g_loss2 = {k: np.array(v) for k, v in params.gradients().items()}
    params.zero_grad()

    for k in params.keys():
        if k.startswith("head2."):
            np.testing.assert_allclose(g_private[k], g_loss1[k] + g_loss2[k],
                                       rtol=1e-10, atol=1e-12)
        else:
            np.testing.assert_allclose(g_private[k], g_loss1[k],
                                       rtol=1e-10, atol=1e-12)
    # and the shared routing really differs on an encoder weight
    assert not np.allclose(g_shared["encoder.W"], g_private["encoder.W"])


# ---------------------------------------------------------------------------
# the loop


def test_train_writes_checkpoints_and_log(tmp_path):
    vocab = toy_vocab()
    params = tiny_params("dual", vocab_size=len(vocab.tokens), seed=1)
    pairs = make_toy_pairs(12, seed=3)
    dev = make_toy_pairs(4, seed=4)
    cfg = tr.TrainConfig(epochs_total=2, pretrain_epochs=1, batch_size=4,
                         learning_rate=1e-2, dev_beam_size=1,
                         dev_decode_limit=2, max_decode_len=6)
    log_path = tmp_path / "log.jsonl"
    result = tr.train(params, vocab, pairs, dev, cfg, tmp_path / "ckpt",
                      log_path=log_path, select_best=False)
    assert len(result.checkpoint_paths) == 2
    assert result.best_checkpoint is None
    assert [r["phase"] for r in result.log_records] == ["pretrain", "full"]
    lines = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert len(lines) == 2
    for rec, line in zip(result.log_records, lines):
        assert line["epoch"] == rec["epoch"]
        assert line["loss_head1"] == rec["loss_head1"]
        assert line["loss_head2"] is not None  # dual mode trains two heads
        assert line["dev_rougeL"] is not None
        assert np.isfinite(line["loss_head1"])
    for path in result.checkpoint_paths:
        assert path.endswith(".ckpt")
        import os
        assert os.path.exists(path)


def test_train_rejects_empty_corpus(tmp_path):
    vocab = toy_vocab()
    params = tiny_params("baseline", vocab_size=len(vocab.tokens))
    with pytest.raises(ValueError, match="training corpus is empty"):
        tr.train(params, vocab, [], [], tr.TrainConfig(), tmp_path)


def test_select_best_checkpoint_ties_go_earliest(tmp_path, monkeypatch):
    from softsum.checkpoint import save_checkpoint

    vocab = toy_vocab()
    params = tiny_params("baseline", vocab_size=len(vocab.tokens))
    paths = []
    for i in range(3):
        path = str(tmp_path / f"epoch-{i:03d}.ckpt")
        save_checkpoint(path, params, counters={"epoch": i}, vocab=vocab)
        paths.append(path)

    scores = iter([0.5, 0.9, 0.9])

    def fake_dev_rouge(*a, **k):
        s = next(scores)
        return SimpleNamespace(rougeL=SimpleNamespace(recall=s))

    monkeypatch.setattr(tr, "dev_rouge", fake_dev_rouge)
    best = tr.select_best_checkpoint(paths, [Pair(id="d", source="w000",
                                                  summary="w001")])
    assert best == paths[1]  # first of the tied maxima
    with pytest.raises(ValueError, match="no checkpoints"):
        tr.select_best_checkpoint([], [])


def test_token_accuracy_bounds_and_perfect_model():
    vocab = toy_vocab()
    params = tiny_params("baseline", vocab_size=len(vocab.tokens))
    pairs = make_toy_pairs(6, seed=5)
    acc = tr.token_accuracy(params, vocab, pairs)
    assert 0.0 <= acc <= 1.0
