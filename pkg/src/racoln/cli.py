"""Command-line entry points: pretrain, train, transfer, eval, export-emb,
make-synthetic.  One command per process; exit code 0 on success, otherwise
the failing error's category code."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf_mod
from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .config import RunConfig, load_config, save_config
from .data import (STYLE_NAMES, Example, Vocabulary, build_vocab, load_corpus,
                   load_references, load_style_pair, make_batch)
from .errors import InvalidArgument, InvalidState, RacolnError
from .generator import Generator
from .losses import LossWeights, train_generator
from .metrics import (MetricReport, NGramLM, bleu_corpus, export_embeddings,
                      lm_train, transfer_accuracy)

log = logging.getLogger(__name__)

VOCAB_FILE = "vocab.txt"
MARKER_FILE = "marker.ckpt"
LOSS_CLF_FILE = "classifier.ckpt"
EVAL_CLF_FILE = "eval_classifier.ckpt"
LM_FILE = "lm.txt"
GENERATOR_FILE = "generator.ckpt"


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        f"#min_freq={vocab.min_freq}\n" + "\n".join(vocab.id_to_token) + "\n",
        encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise InvalidState(f"missing vocabulary file: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    min_freq = int(lines[0].split("=", 1)[1])
    tokens = lines[1:]
    return Vocabulary({t: i for i, t in enumerate(tokens)}, tokens, min_freq)


def _load_classifier(path, vocab, cfg: RunConfig, expect_role: str):
    params, meta = load_checkpoint(path)
    role = meta.get("role")
    if role != expect_role:
        raise InvalidState(f"{path} holds role {role!r}, expected {expect_role!r}")
    clf = clf_mod.StyleClassifier(len(vocab), cfg.d_emb, cfg.enc_hidden,
                                  np.random.default_rng(0), cfg.tau, cfg.dtype)
    if role == clf_mod.ROLE_MARKER:
        clf.drop_head()
    restore_params(clf.params(), params)
    clf.role = role
    clf.freeze()
    return clf


def _build_generator(cfg: RunConfig, vocab, seed: int) -> Generator:
    return Generator(len(vocab), d_emb=cfg.d_emb, enc_hidden=cfg.enc_hidden,
                     cln_dim=cfg.cln_dim, dec_hidden=cfg.dec_hidden,
                     rng=np.random.default_rng(seed),
                     use_stylizer=not cfg.no_stylizer,
                     use_reverse_attention=not cfg.no_reverse_attention,
                     dtype=cfg.dtype)


def _load_generator(path, vocab, cfg: RunConfig) -> Generator:
    params, meta = load_checkpoint(path)
    gen = _build_generator(cfg, vocab, seed=0)
    for flag in ("no_stylizer", "no_reverse_attention"):
        if flag in meta and meta[flag] != str(getattr(cfg, flag)):
            raise InvalidState(
                f"{path} was trained with {flag}={meta[flag]}; config disagrees")
    restore_params(gen.params(), params)
    return gen


def _read_sentences(path) -> list[list[str]]:
    return [ex.tokens for ex in load_corpus(path, style=0)]


def _parse_style(name: str) -> int:
    if name not in STYLE_NAMES:
        raise InvalidArgument(f"style must be one of {sorted(STYLE_NAMES)}, got {name!r}")
    return STYLE_NAMES[name]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_synthetic(args) -> int:
    from .synthetic import write_synthetic_corpus

    counts = write_synthetic_corpus(args.out, args.seed, args.size)
    for name in sorted(counts):
        print(f"{name}: {counts[name]} lines")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    train = load_style_pair(cfg.data_dir, "train")
    dev = load_style_pair(cfg.data_dir, "dev")
    vocab = build_vocab(train, cfg.min_freq)
    ckpt = Path(cfg.ckpt_dir)
    save_vocab(vocab, ckpt / VOCAB_FILE)
    print(f"vocabulary: {len(vocab)} types")

    common = dict(d_emb=cfg.d_emb, d_h=cfg.enc_hidden, tau=cfg.tau, lr=cfg.lr,
                  batch_size=cfg.batch_size, max_len=cfg.max_len,
                  epochs=cfg.pretrain_epochs, patience=cfg.pretrain_patience,
                  grad_clip=cfg.grad_clip, dtype=cfg.dtype)
    # marker, loss classifier, and eval classifier use distinct seeds
    for offset, role, fname in ((0, clf_mod.ROLE_MARKER, MARKER_FILE),
                                (1, clf_mod.ROLE_LOSS, LOSS_CLF_FILE),
                                (2, clf_mod.ROLE_EVAL, EVAL_CLF_FILE)):
        model = clf_mod.pretrain(train, dev, vocab, role, cfg.seed + offset, **common)
        save_checkpoint(ckpt / fname, model.params(),
                        meta={"role": role, "seed": str(cfg.seed + offset)})
        if model.fc is not None:
            acc = clf_mod.accuracy(model, dev, vocab, cfg.batch_size, cfg.max_len)
            print(f"{role}: dev accuracy {acc * 100:.1f}% -> {ckpt / fname}")
        else:
            print(f"{role}: attention head kept, output head dropped -> {ckpt / fname}")

    lm = lm_train([ex.tokens for ex in train], order=5)
    lm.save(ckpt / LM_FILE)
    print(f"5-gram language model -> {ckpt / LM_FILE}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    ckpt = Path(cfg.ckpt_dir)
    vocab = load_vocab(ckpt / VOCAB_FILE)
    marker = _load_classifier(ckpt / MARKER_FILE, vocab, cfg, clf_mod.ROLE_MARKER)
    loss_clf = _load_classifier(ckpt / LOSS_CLF_FILE, vocab, cfg, clf_mod.ROLE_LOSS)
    train = load_style_pair(cfg.data_dir, "train")

    l1, l2, l3, l4 = cfg.effective_lambdas()
    effective = cfg.replaced(lambda_content=l3)
    out_dir = Path(cfg.out_dir)
    save_config(effective, out_dir / "train-config.ini")

    gen = _build_generator(cfg, vocab, cfg.seed)
    state = train_generator(
        gen, marker, loss_clf, train, vocab,
        weights=LossWeights(l1, l2, l3, l4), lr=cfg.lr,
        batch_size=cfg.batch_size, epochs=cfg.epochs, max_len=cfg.max_len,
        seed=cfg.seed, grad_clip=cfg.grad_clip,
        detach_content=cfg.detach_content, log_every=cfg.log_every,
        log_path=out_dir / "train.log", ckpt_dir=ckpt)
    save_checkpoint(ckpt / GENERATOR_FILE, gen.params(),
                    meta={"epochs": str(state.epoch), "seed": str(cfg.seed),
                          "no_stylizer": str(cfg.no_stylizer),
                          "no_reverse_attention": str(cfg.no_reverse_attention)})
    print(f"trained {state.epoch} epochs ({state.step} steps) -> {ckpt / GENERATOR_FILE}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _config_from_args(args)
    target = _parse_style(args.target)
    ckpt = Path(cfg.ckpt_dir)
    vocab = load_vocab(ckpt / VOCAB_FILE)
    marker = _load_classifier(ckpt / MARKER_FILE, vocab, cfg, clf_mod.ROLE_MARKER)
    gen = _load_generator(ckpt / GENERATOR_FILE, vocab, cfg)

    sentences = _read_sentences(args.input)
    out_path = Path(args.output) if args.output else Path(str(args.input) + ".transferred.txt")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for start in range(0, len(sentences), cfg.batch_size):
            chunk = [Example(s, 0) for s in sentences[start : start + cfg.batch_size]]
            batch = make_batch(chunk, vocab, cfg.max_len)
            for ids in gen.transfer(batch, target, marker, cfg.max_len):
                fh.write(" ".join(vocab.decode(ids)) + "\n")
    print(f"{len(sentences)} sentences -> {out_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    target = _parse_style(args.target)
    ckpt = Path(cfg.ckpt_dir)
    vocab = load_vocab(ckpt / VOCAB_FILE)
    eval_clf = _load_classifier(ckpt / EVAL_CLF_FILE, vocab, cfg, clf_mod.ROLE_EVAL)
    lm_path = ckpt / LM_FILE
    if not lm_path.exists():
        raise InvalidState(f"missing LM checkpoint: {lm_path}")
    lm = NGramLM.load(lm_path)

    inputs = _read_sentences(args.inputs)
    outputs = _read_sentences(args.outputs)
    if len(inputs) != len(outputs):
        raise InvalidArgument(
            f"inputs ({len(inputs)}) and outputs ({len(outputs)}) differ in length")
    targets = np.full(len(outputs), target)
    s_acc = transfer_accuracy(outputs, targets, eval_clf, vocab,
                              cfg.batch_size, cfg.max_len)
    self_bleu = bleu_corpus(outputs, inputs)
    ref_bleu = None
    if args.refs:
        pairs = load_references(args.refs)
        if len(pairs) != len(outputs):
            raise InvalidArgument(
                f"references ({len(pairs)}) and outputs ({len(outputs)}) differ in length")
        ref_bleu = bleu_corpus(outputs, [ref for _, ref in pairs])
    report = MetricReport(s_acc=s_acc, self_bleu=self_bleu,
                          ppl=lm.perplexity(outputs), ref_bleu=ref_bleu)
    print(report.table())
    print(report.kv_lines())
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(report.kv_lines() + "\n", encoding="utf-8")
        print(f"report -> {args.report}")
    return 0


def cmd_export_emb(args) -> int:
    cfg = _config_from_args(args)
    ckpt = Path(cfg.ckpt_dir)
    vocab = load_vocab(ckpt / VOCAB_FILE)
    marker = _load_classifier(ckpt / MARKER_FILE, vocab, cfg, clf_mod.ROLE_MARKER)
    gen = _load_generator(ckpt / GENERATOR_FILE, vocab, cfg)
    examples = load_style_pair(cfg.data_dir, args.split)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "embeddings.tsv"
    rows = export_embeddings(gen, marker, examples, vocab, out,
                             cfg.batch_size, cfg.max_len)
    print(f"{rows} rows -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racoln",
        description="Two-style text style transfer: training and evaluation pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate the bundled synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=2000,
                   help="total training sentences (balanced styles)")
    p.set_defaults(func=cmd_make_synthetic)

    def with_config(p):
        p.add_argument("--config", required=True, help="run config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        return p

    p = with_config(sub.add_parser(
        "pretrain", help="train marker, style classifier, eval classifier, and LM"))
    p.set_defaults(func=cmd_pretrain)

    p = with_config(sub.add_parser("train", help="train the transfer model"))
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("transfer", help="rewrite sentences toward a style"))
    p.add_argument("--input", required=True, help="one pre-tokenized sentence per line")
    p.add_argument("--target", required=True, choices=sorted(STYLE_NAMES))
    p.add_argument("--output", default=None,
                   help="default: <input>.transferred.txt")
    p.set_defaults(func=cmd_transfer)

    p = with_config(sub.add_parser("eval", help="score a system-output file"))
    p.add_argument("--inputs", required=True)
    p.add_argument("--outputs", required=True)
    p.add_argument("--target", required=True, choices=sorted(STYLE_NAMES),
                   help="style the outputs should have")
    p.add_argument("--refs", default=None, help="tab-separated input/reference file")
    p.add_argument("--report", default=None, help="also write key=value lines here")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("export-emb",
                                   help="dump content/style vectors for analysis"))
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_emb)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except RacolnError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
