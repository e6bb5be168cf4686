"""``doppelbaum`` command line: vocab, train, decode, evaluate, analyze, gradcheck.

Settings come from a preset, then an optional YAML ``--config`` file, then
``--set section.key=value`` overrides, then the named flags; later sources
win. Data goes to files or stdout, diagnostics to stderr. Exit status is 0
on success, 1 on a failed run or check, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from . import config as C
from .data import Vocabulary, check_aligned, corpus_from_triples, numericalize, read_lines, token_batches
from .decoding import translate
from .estimator import PostEditor, check_vocabulary
from .gradcheck import CORRUPTIBLE, corrupted_backward, desk_gradcheck
from .metrics import report_files
from .model import load_checkpoint
from .symmetry import REGULARIZERS, attention_summary

log = logging.getLogger("doppelbaum")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _config_flags(p, decode=False, train=False):
    g = p.add_argument_group("configuration")
    g.add_argument("--preset", choices=C.PRESETS, default="desk",
                   help="base settings (default: desk)")
    g.add_argument("--config", metavar="YAML", help="YAML file overriding the preset")
    g.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append", default=[],
                   dest="overrides", help="override one setting; repeatable (e.g. train.max_steps=100)")
    g.add_argument("--seed", type=int, help="random seed (preset: 1128)")
    if train:
        g.add_argument("--regularizer", choices=REGULARIZERS,
                       help="doppelbaum (composite loss) or none (cross-entropy only)")
        g.add_argument("--max-steps", type=int, help="training steps of the first phase")
    if decode:
        g.add_argument("--beam-size", type=int, help="beam width; 1 is greedy search")
        g.add_argument("--length-penalty", type=float, help="length penalty strength alpha")
        g.add_argument("--length-ratio", type=float,
                       help="stop hypotheses at ceil(ratio * MT length) tokens")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="doppelbaum",
        description="Automatic postediting with a symmetric self-attention regularizer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more diagnostics on stderr (-v info, -vv debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("vocab", help="learn a subword vocabulary from text files")
    p.add_argument("inputs", nargs="+", help="whitespace-tokenized text files")
    p.add_argument("--out", required=True, help="vocabulary file to write")
    p.add_argument("--size", type=int, help="target vocabulary size (preset: vocab.size)")
    _config_flags(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    for prefix, required in (("", True), ("pretrain-", False), ("valid-", False)):
        for stream in ("src", "mt", "pe"):
            p.add_argument(f"--{prefix}{stream}", required=required, metavar="FILE",
                           help=f"{prefix[:-1] or 'training'} {stream} file")
    p.add_argument("--vocab", help="existing vocabulary file (default: learn one from the corpora)")
    p.add_argument("--vocab-out", help="where to write a learned vocabulary (default: CHECKPOINT.vocab)")
    p.add_argument("--checkpoint", required=True, help="checkpoint file to write")
    p.add_argument("--log", help="per-step JSON-lines log (default: CHECKPOINT.log.jsonl)")
    _config_flags(p, decode=False, train=True)

    p = sub.add_parser("decode", help="postedit (src, mt) files with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True, help="vocabulary the checkpoint was trained with")
    p.add_argument("--src", required=True, metavar="FILE")
    p.add_argument("--mt", required=True, metavar="FILE")
    p.add_argument("--out", help="output file (default: stdout)")
    _config_flags(p, decode=True)

    p = sub.add_parser("evaluate", help="TER/BLEU, outcome categories and F1 of an APE output")
    p.add_argument("--mt", required=True, metavar="FILE", help="given MT")
    p.add_argument("--ape", required=True, metavar="FILE", help="APE output")
    p.add_argument("--ref", required=True, metavar="FILE", help="postedited references")
    p.add_argument("--baseline", metavar="FILE", help="second APE output to test against")
    p.add_argument("--resamples", type=int, default=0,
                   help="paired bootstrap resamples for p-values (0 = off, else >= 1000)")
    p.add_argument("--json", metavar="FILE", help="also write the report as JSON")
    p.add_argument("--seed", type=int, default=1128, help="bootstrap seed (default: 1128)")

    p = sub.add_parser("analyze", help="self-attention skewness and gate statistics on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    for stream in ("src", "mt", "pe"):
        p.add_argument(f"--{stream}", required=True, metavar="FILE")
    p.add_argument("--json", metavar="FILE", help="also write the statistics as JSON")
    _config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients (desk preset)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error (default: 1e-4)")
    p.add_argument("--regularizer", choices=REGULARIZERS + ("both",), default="both")
    p.add_argument("--vocab-size", type=int, default=24, help="vocabulary of the test model")
    p.add_argument("--corrupt", choices=CORRUPTIBLE,
                   help="negative control: scale this op's backward pass, the check must fail")
    _config_flags(p)
    return parser


def resolve_config(args):
    extra = list(args.overrides)
    flags = {}
    for attr, section, key in (("regularizer", "train", "regularizer"),
                               ("max_steps", "train", "max_steps"),
                               ("beam_size", "decode", "beam_size"),
                               ("length_penalty", "decode", "length_penalty"),
                               ("length_ratio", "decode", "length_ratio"),
                               ("size", "vocab", "size")):
        value = getattr(args, attr, None)
        if value is not None:
            flags.setdefault(section, {})[key] = value
    if args.seed is not None:
        flags["seed"] = args.seed
    return C.resolve(args.preset, args.config, extra + [flags])


def _require(*paths):
    for path in paths:
        if path and not os.path.isfile(path):
            raise UsageError(f"no such file: {path}")


def _triples(src, mt, pe):
    cols = [read_lines(p) for p in (src, mt, pe)]
    check_aligned(cols, [src, mt, pe])
    return [(s, m) for s, m in zip(cols[0], cols[1])], cols[2]


def _load_model(checkpoint, vocab_path):
    model, meta = load_checkpoint(checkpoint)
    vocab = Vocabulary.load(vocab_path)
    check_vocabulary(model, meta, vocab, checkpoint)
    return model, vocab


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_vocab(args):
    _require(args.config, *args.inputs)
    cfg = resolve_config(args)
    lines = [line for path in args.inputs for line in read_lines(path)]
    vocab = Vocabulary(size=C.vocab_size(cfg)).fit(lines)
    vocab.save(args.out)
    log.info("wrote %d subwords to %s", len(vocab), args.out)
    return 0


def cmd_train(args):
    _require(args.config, args.src, args.mt, args.pe, args.vocab)
    groups = {}
    for prefix in ("pretrain", "valid"):
        paths = [getattr(args, f"{prefix}_{s}") for s in ("src", "mt", "pe")]
        if any(paths) and not all(paths):
            raise UsageError(f"--{prefix}-src, --{prefix}-mt and --{prefix}-pe go together")
        if all(paths):
            _require(*paths)
            groups[prefix] = _triples(*paths)
    cfg = resolve_config(args)
    X, y = _triples(args.src, args.mt, args.pe)
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    est = PostEditor(args.preset, overrides=cfg)
    est.fit(X, y, pretrain=groups.get("pretrain"), valid=groups.get("valid"), vocabulary=vocab,
            log_path=args.log or args.checkpoint + ".log.jsonl", checkpoint_path=args.checkpoint,
            checkpoint_meta={"preset": args.preset})
    if vocab is None:
        vocab_out = args.vocab_out or args.checkpoint + ".vocab"
        est.vocab_.save(vocab_out)
        log.info("wrote vocabulary to %s", vocab_out)
    last = est.train_result_.records[-1] if est.train_result_.records else None
    if last is not None:
        log.info("step %d: %s", last.step, json.dumps(last.losses, sort_keys=True))
    log.info("wrote checkpoint to %s", args.checkpoint)
    return 0


def cmd_decode(args):
    _require(args.config, args.checkpoint, args.vocab, args.src, args.mt)
    cfg = resolve_config(args)
    model, vocab = _load_model(args.checkpoint, args.vocab)
    sources = read_lines(args.src)
    mts = read_lines(args.mt)
    check_aligned([sources, mts], [args.src, args.mt])
    outputs = translate(model, vocab, sources, mts, C.decode_config(cfg))
    text = "".join(line + "\n" for line in outputs)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args):
    _require(args.mt, args.ape, args.ref, args.baseline)
    if args.resamples and args.resamples < 1000:
        raise UsageError("--resamples must be 0 or at least 1000")
    rep = report_files(args.mt, args.ape, args.ref, args.baseline, args.resamples, args.seed)
    sys.stdout.write(rep.render())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
    return 0


def cmd_analyze(args):
    _require(args.config, args.checkpoint, args.vocab, args.src, args.mt, args.pe)
    cfg = resolve_config(args)
    model, vocab = _load_model(args.checkpoint, args.vocab)
    X, y = _triples(args.src, args.mt, args.pe)
    corpus = corpus_from_triples([(s, m, p) for (s, m), p in zip(X, y)], "analyze", "test")
    corpus = numericalize(corpus, vocab, model.config.max_len, train=False)
    budget = max(C.train_config(cfg).tokens_per_batch, model.config.max_len)
    summary = attention_summary(model, token_batches(corpus.examples, budget))
    sys.stdout.write(summary.render())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gradcheck(args):
    _require(args.config)
    if args.preset != "desk":
        raise UsageError("gradcheck runs on the desk preset only")
    cfg = resolve_config(args)
    model_cfg = C.model_config(cfg, args.vocab_size)
    variants = REGULARIZERS if args.regularizer == "both" else (args.regularizer,)
    ok = True
    for reg in variants:
        for seed in args.seeds:
            if args.corrupt:
                with corrupted_backward(args.corrupt):
                    rep = desk_gradcheck(reg, seed, args.tolerance, config=model_cfg)
            else:
                rep = desk_gradcheck(reg, seed, args.tolerance, config=model_cfg)
            sys.stdout.write(rep.summary() + "\n")
            for probe in rep.failures[:5]:
                log.warning("%s %s analytic=%.6e numeric=%.6e rel=%.2e", probe.tensor,
                            probe.kind, probe.analytic, probe.numeric, probe.rel_error)
            ok &= rep.passed
    return 0 if ok else 1


COMMANDS = {
    "vocab": cmd_vocab,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"doppelbaum {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"doppelbaum {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
