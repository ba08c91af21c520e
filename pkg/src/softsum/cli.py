"""Command-line interface.

Subcommands: train, generate, score, analyze, synth, serve-eval,
agreement. Flags mirror the config dataclass field names (with short
aliases for the common ones); --config loads a JSON file of defaults
that individual flags override. Every subcommand honours --seed and
--manifest-out, and each run writes a manifest recording the resolved
configuration plus sha256 hashes of inputs and outputs. Errors exit
nonzero with a single machine-readable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as cp
from . import evalservice as ev
from . import manifest as mf
from .checkpoint import load_checkpoint
from .decoding import beam_search, greedy, strip_specials
from .model import ModelConfig, ModelParams, canonical_mode
from .objectives import RegularizerConfig
from .relatedness import accumulate_relatedness, relatedness_report
from .rouge import corpus_rouge
from .training import TrainConfig, train


def _fail(code, message):
    sys.stderr.write(json.dumps({"code": code, "message": message}) + "\n")
    raise SystemExit(1)


def _load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return data


def _apply_config_defaults(args, parser):
    """Values from --config fill in exactly the flags the user left at default."""
    if not getattr(args, "config", None):
        return args
    data = _load_config_file(args.config)
    supplied = {a.split("=")[0] for a in sys.argv if a.startswith("--")}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"config file sets unknown option {key!r}")
        flag = "--" + key.replace("_", "-")
        if flag in supplied:
            continue
        setattr(args, dest, value)
    return args


def _manifest_path(args, default_base):
    if getattr(args, "manifest_out", None):
        return args.manifest_out
    return default_base + ".manifest.json"


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--manifest-out", default=None)
    sub.add_argument("--config", default=None,
                     help="JSON file of flag defaults, overridden by explicit flags")


def _cmd_train(args):
    train_pairs = cp.filter_by_score(cp.load_pairs(args.train, split="train"),
                                     args.min_score)
    dev_pairs = cp.load_pairs(args.dev, split="dev") if args.dev else []
    if args.min_score:
        dev_pairs = cp.filter_by_score(dev_pairs, args.min_score)
    vocab = cp.build_vocab(train_pairs, policy=args.policy, max_size=args.max_vocab,
                           min_count=args.min_count)
    reg = RegularizerConfig(tau=args.tau, alpha=args.alpha,
                            detach_soft_target=not args.no_detach_soft_target)
    model_cfg = ModelConfig(vocab_size=len(vocab), embedding_size=args.embedding_size,
                            hidden_size=args.hidden_size, mode=args.mode,
                            seed=args.seed, attention=args.attention,
                            dtype=args.dtype, regularizer=reg)
    train_cfg = TrainConfig(epochs_total=args.epochs_total,
                            pretrain_epochs=args.pretrain_epochs,
                            batch_size=args.batch_size,
                            learning_rate=args.learning_rate,
                            beta_first_moment=args.beta_first_moment,
                            beta_second_moment=args.beta_second_moment,
                            epsilon=args.epsilon, clip_norm=args.clip_norm,
                            seed=args.seed,
                            head2_updates_shared=not args.head2_private,
                            max_decode_len=args.max_decode_len,
                            dev_beam_size=args.dev_beam_size,
                            dev_decode_limit=args.dev_decode_limit)
    params = ModelParams.init(model_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    log_path = os.path.join(args.out_dir, "train-log.jsonl")
    result = train(params, vocab, train_pairs, dev_pairs, train_cfg, args.out_dir,
                   log_path=log_path, select_best=bool(dev_pairs))
    summary = {
        "checkpoints": result.checkpoint_paths,
        "best_checkpoint": result.best_checkpoint,
        "final_loss_head1": result.log_records[-1]["loss_head1"],
    }
    print(json.dumps(summary, indent=2))
    config = {"model": model_cfg.to_dict(),
              "train": {k: getattr(train_cfg, k) for k in train_cfg.__dataclass_fields__},
              "policy": args.policy, "max_vocab": args.max_vocab,
              "min_count": args.min_count, "min_score": args.min_score,
              "seed": args.seed}
    inputs = [args.train] + ([args.dev] if args.dev else [])
    outputs = list(result.checkpoint_paths) + [log_path]
    mf.write_manifest(_manifest_path(args, os.path.join(args.out_dir, "train")),
                      "train", config, inputs, outputs)


def _cmd_generate(args):
    params, _, vocab = load_checkpoint(args.checkpoint)
    if vocab is None:
        _fail("no_vocab", f"checkpoint {args.checkpoint} carries no vocabulary")
    with open(args.input, encoding="utf-8") as fh:
        sources = [line.rstrip("\n") for line in fh if line.strip()]
    lines = []
    for text in sources:
        ids = np.asarray(vocab.encode_text(text))
        if args.beam_size == 1:
            tokens, _ = greedy(params, ids, max_len=args.max_decode_len)
        else:
            tokens, _ = beam_search(params, ids, beam_size=args.beam_size,
                                    max_len=args.max_decode_len,
                                    length_normalize=args.length_normalize)
        lines.append(vocab.decode_text(strip_specials(tokens)))
    with open(args.output, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    print(f"wrote {len(lines)} summaries to {args.output}")
    config = {"checkpoint": args.checkpoint, "beam_size": args.beam_size,
              "max_decode_len": args.max_decode_len,
              "length_normalize": args.length_normalize, "seed": args.seed}
    mf.write_manifest(_manifest_path(args, args.output), "generate", config,
                      [args.checkpoint, args.input], [args.output])


def _cmd_score(args):
    with open(args.candidates, encoding="utf-8") as fh:
        candidates = [line.rstrip("\n") for line in fh]
    with open(args.references, encoding="utf-8") as fh:
        references = [line.rstrip("\n") for line in fh]
    while candidates and not candidates[-1]:
        candidates.pop()
    while references and not references[-1]:
        references.pop()
    scores = corpus_rouge(candidates, references)
    report = scores.as_dict()
    print(f"rouge1 recall {scores.rouge1.recall:.4f}  "
          f"rouge2 recall {scores.rouge2.recall:.4f}  "
          f"rougeL recall {scores.rougeL.recall:.4f}  over {scores.n_pairs} pairs")
    outputs = []
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        outputs.append(args.report)
    config = {"candidates": args.candidates, "references": args.references,
              "seed": args.seed}
    mf.write_manifest(_manifest_path(args, args.report or args.candidates),
                      "score", config, [args.candidates, args.references], outputs)


def _cmd_analyze(args):
    params, _, vocab = load_checkpoint(args.checkpoint)
    if vocab is None:
        _fail("no_vocab", f"checkpoint {args.checkpoint} carries no vocabulary")
    pairs = cp.load_pairs(args.corpus)
    related = accumulate_relatedness(params, vocab, pairs, batch_size=args.batch_size)
    text = relatedness_report(related, vocab, k=args.top_k, min_count=args.min_count)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(f"wrote relatedness table for "
          f"{int(np.count_nonzero(related.counts))} labels to {args.output}")
    config = {"checkpoint": args.checkpoint, "corpus": args.corpus,
              "top_k": args.top_k, "min_count": args.min_count, "seed": args.seed}
    mf.write_manifest(_manifest_path(args, args.output), "analyze", config,
                      [args.checkpoint, args.corpus], [args.output])


def _cmd_synth(args):
    spec = cp.SynthSpec(content_vocab=args.content_vocab, n_pairs=args.pairs,
                        source_len_range=(args.min_len, args.max_len),
                        spurious_rate=args.spurious_rate, seed=args.seed,
                        task_seed=args.task_seed)
    pairs, flags = cp.synth_corpus(spec)
    cp.write_pairs(args.output, pairs)
    sidecar = args.sidecar or (args.output + ".labels.jsonl")
    cp.write_sidecar(sidecar, pairs, flags)
    n_spurious = sum(1 for f in flags if not f)
    print(f"wrote {len(pairs)} pairs ({n_spurious} spurious) to {args.output}")
    config = {k: getattr(args, k) for k in
              ("content_vocab", "pairs", "min_len", "max_len", "spurious_rate",
               "seed", "task_seed")}
    mf.write_manifest(_manifest_path(args, args.output), "synth", config,
                      [], [args.output, sidecar])


def _cmd_serve_eval(args):
    from .server import run_server

    run_server(host=args.host, port=args.port, log_path=args.log)


def _cmd_agreement(args):
    store = ev.EvalStore(log_path=args.log)
    if not store.sessions:
        _fail("empty_log", f"no sessions found in {args.log}")
    report = {}
    for session_id, session in sorted(store.sessions.items()):
        stats = ev.session_stats(session)
        agree = ev.agreement(session)
        report[session_id] = {
            "stats": stats,
            "agreement": {
                "n_items": agree.n_items,
                "percent_agreement": agree.percent_agreement,
                "kappa": agree.kappa,
                "kappa_defined": agree.kappa_defined,
            },
        }
        line = f"session {session_id}: {agree.n_items} doubly annotated items"
        if agree.percent_agreement is not None:
            line += f", agreement {agree.percent_agreement:.3f}"
        if agree.kappa_defined:
            line += f", kappa {agree.kappa:.3f}"
        print(line)
        for sys_id, row in stats["systems"].items():
            pct = row["accuracy_pct"]
            shown = "n/a" if pct is None else f"{pct}%"
            print(f"  {sys_id}: {row['n_good']}/{row['n_answered']} good ({shown})")
    outputs = []
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        outputs.append(args.report)
    mf.write_manifest(_manifest_path(args, args.report or args.log), "agreement",
                      {"log": args.log, "seed": args.seed}, [args.log], outputs)


def build_parser():
    parser = argparse.ArgumentParser(prog="softsum")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a summarizer")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", default="baseline", type=canonical_mode)
    p.add_argument("--policy", default="whitespace", choices=cp.POLICIES)
    p.add_argument("--max-vocab", type=int, default=10000)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--min-score", type=int, default=0)
    p.add_argument("--embedding-size", type=int, default=400)
    p.add_argument("--hidden-size", type=int, default=500)
    p.add_argument("--attention", default="additive",
                   choices=("additive", "multiplicative"))
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--no-detach-soft-target", action="store_true")
    p.add_argument("--epochs-total", "--epochs", dest="epochs_total", type=int,
                   default=10)
    p.add_argument("--pretrain-epochs", "--pretrain", dest="pretrain_epochs",
                   type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--beta-first-moment", type=float, default=0.9)
    p.add_argument("--beta-second-moment", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--head2-private", action="store_true",
                   help="keep head two's hard loss out of the shared parameters")
    p.add_argument("--max-decode-len", type=int, default=30)
    p.add_argument("--dev-beam-size", type=int, default=5)
    p.add_argument("--dev-decode-limit", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("generate", help="decode summaries from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="one source text per line")
    p.add_argument("--output", required=True)
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--max-decode-len", type=int, default=30)
    p.add_argument("--length-normalize", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_generate)

    p = subs.add_parser("score", help="character ROUGE of aligned text files")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--report", default=None, help="write the full JSON report here")
    _add_common(p)
    p.set_defaults(func=_cmd_score)

    p = subs.add_parser("analyze", help="label relatedness table from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--top-k", type=int, default=4)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=_cmd_analyze)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--sidecar", default=None,
                   help="where to write clean/spurious flags "
                        "(default: <output>.labels.jsonl)")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--content-vocab", type=int, default=40)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--spurious-rate", "--spurious", dest="spurious_rate",
                   type=float, default=0.0)
    p.add_argument("--task-seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("serve-eval", help="run the annotation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--log", default=None, help="append-only event log path")
    _add_common(p)
    p.set_defaults(func=_cmd_serve_eval)

    p = subs.add_parser("agreement", help="stats and agreement from an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--report", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_agreement)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_defaults(args, parser)
        args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError, ev.EvalServiceError) as err:
        code = getattr(err, "code", "error")
        _fail(code, str(err))
    return 0


if __name__ == "__main__":
    sys.exit(main())
