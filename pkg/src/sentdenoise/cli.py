"""Command-line entry point.

Subcommands: ``build-vocab``, ``augment``, ``train``, ``embed``, ``eval``.
Settings come from an optional flat ``key = value`` config file and are
overridden by flags.  Exit codes: 0 success, 1 runtime or I/O failure,
2 usage or validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import FormatError, SentDenoiseError
from .evaluation import (
    EvalReport,
    eval_diagnostics,
    eval_retrieval,
    eval_sts,
    load_relevance,
    read_lines,
)
from .model import ModelConfig, embed_sentences
from .noise import NoiseConfig, ParaphraseTable, discrete_augment, load_synonyms
from .substrate import RngStream
from .textdata import Vocabulary, build_vocab, load_sts, read_corpus
from .training import OBJECTIVES, TrainConfig, params_from_checkpoint, train_loop

log = logging.getLogger("sentdenoise")


class UsageError(Exception):
    """Bad flags or configuration; maps to exit status 2."""


MIN_VOCAB = 5  # three specials plus the two template tokens


# -- configuration ------------------------------------------------------------------

# key -> (type, default); the union of model, noise and training settings plus paths
RUN_KEYS: dict[str, tuple[type, object]] = {
    # paths
    "corpus": (str, None), "vocab": (str, None), "paraphrase_table": (str, None), "synonyms": (str, None),
    "sts_dev": (str, None), "sts_test": (str, None), "heldout": (str, None), "checkpoint": (str, None),
    "metrics_log": (str, None), "report": (str, None), "resume": (str, None),
    # vocabulary
    "min_count": (int, 1), "max_size": (int, 0),
    # model
    "d": (int, 64), "enc_layers": (int, 2), "dec_layers": (int, 2), "enc_heads": (int, 4), "dec_heads": (int, 1),
    "ffn_mult": (int, 4), "max_len": (int, 32), "internal_dropout": (float, 0.1),
    "encoder_input_mode": (str, "original"), "pooling": (str, "mask"),
    # noise
    "strategy": (str, "rule_based"), "dropout_rate": (float, 0.825), "rule_swap_prob": (float, 0.1),
    "rule_synonym_prob": (float, 0.3),
    # training
    "objective": (str, "combined"), "batch_size": (int, 32), "steps": (int, 2000), "lr": (float, 5e-5),
    "tau": (float, 0.03), "seed": (int, 0), "eval_every": (int, 500), "weight_decay": (float, 0.0),
    "clip_norm": (float, 1.0), "warmup_steps": (int, 0), "contrastive_denominator": (str, "with_positive"),
    "denoising_reduction": (str, "mean"),
}


def parse_config_file(path) -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment; unknown keys are rejected."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in RUN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def resolve(args: argparse.Namespace, keys) -> dict:
    """Defaults, then config file, then explicit flags."""
    merged = {k: RUN_KEYS[k][1] for k in keys}
    problems = []
    if getattr(args, "config", None):
        for k, v in parse_config_file(args.config).items():
            if k in merged:
                merged[k] = v
    for k in keys:
        flag = getattr(args, k, None)
        if flag is not None:
            merged[k] = flag
    for k, v in merged.items():
        kind = RUN_KEYS[k][0]
        if v is None or isinstance(v, kind):
            continue
        try:
            merged[k] = kind(v)
        except ValueError:
            problems.append(f"{k}: cannot parse {v!r} as {kind.__name__}")
    if problems:
        raise UsageError("; ".join(problems))
    return merged


def _require(cfg: dict, *keys) -> list[str]:
    return [f"missing required setting {k!r}" for k in keys if not cfg.get(k)]


def _existing(cfg: dict, *keys) -> list[str]:
    return [f"{k}: no such file {cfg[k]}" for k in keys if cfg.get(k) and not Path(cfg[k]).is_file()]


# -- commands -------------------------------------------------------------------------


def cmd_build_vocab(cfg: dict) -> int:
    problems = _require(cfg, "corpus", "vocab") + _existing(cfg, "corpus")
    if problems:
        raise UsageError("; ".join(problems))
    vocab = build_vocab(cfg["corpus"], cfg["min_count"], cfg["max_size"] or None)
    vocab.save(cfg["vocab"])
    print(len(vocab))
    return 0


def _noise_config(cfg: dict) -> NoiseConfig:
    return NoiseConfig(cfg["strategy"], cfg["dropout_rate"], cfg["rule_swap_prob"], cfg["rule_synonym_prob"])


def cmd_augment(cfg: dict, output: str) -> int:
    problems = _require(cfg, "corpus") + _existing(cfg, "corpus", "paraphrase_table", "synonyms")
    if cfg["strategy"] == "table" and not cfg.get("paraphrase_table"):
        problems.append("strategy 'table' needs paraphrase_table")
    try:
        noise = _noise_config(cfg)
    except SentDenoiseError as exc:
        problems.append(str(exc))
    if problems:
        raise UsageError("; ".join(problems))
    table = ParaphraseTable.load(cfg["paraphrase_table"]) if cfg.get("paraphrase_table") else None
    synonyms = load_synonyms(cfg.get("synonyms"))
    root = RngStream(cfg["seed"]).child("augment")
    with open(output, "w", encoding="utf-8") as fh:
        for i, sentence in enumerate(read_corpus(cfg["corpus"])):
            augmented = discrete_augment(sentence, noise, table, root.child(i), synonyms)
            fh.write(f"{sentence}\t{augmented}\n")
    return 0


def _train_configs(cfg: dict, V: int) -> tuple[ModelConfig, NoiseConfig, TrainConfig]:
    problems = []
    if cfg["objective"] not in OBJECTIVES:
        problems.append(f"objective must be one of {sorted(OBJECTIVES)}")
    w_c, w_d = OBJECTIVES.get(cfg["objective"], (1.0, 1.0))
    built = []
    for make in (
        lambda: ModelConfig(V=V, d=cfg["d"], enc_layers=cfg["enc_layers"], dec_layers=cfg["dec_layers"],
                            enc_heads=cfg["enc_heads"], dec_heads=cfg["dec_heads"], ffn_mult=cfg["ffn_mult"],
                            L=cfg["max_len"], internal_dropout=cfg["internal_dropout"],
                            encoder_input_mode=cfg["encoder_input_mode"], pooling=cfg["pooling"]),
        lambda: _noise_config(cfg),
        lambda: TrainConfig(batch_size=cfg["batch_size"], steps=cfg["steps"], lr=cfg["lr"], tau=cfg["tau"],
                            p=cfg["dropout_rate"], w_contrastive=w_c, w_denoising=w_d, seed=cfg["seed"],
                            eval_every=cfg["eval_every"], checkpoint_path=cfg.get("checkpoint"),
                            weight_decay=cfg["weight_decay"], clip_norm=cfg["clip_norm"],
                            warmup_steps=cfg["warmup_steps"],
                            contrastive_denominator=cfg["contrastive_denominator"],
                            denoising_reduction=cfg["denoising_reduction"]),
    ):
        try:
            built.append(make())
        except SentDenoiseError as exc:
            problems.append(str(exc))
    if problems:
        raise UsageError("; ".join(problems))
    return tuple(built)


def cmd_train(cfg: dict) -> int:
    problems = _require(cfg, "corpus", "vocab", "checkpoint")
    problems += _existing(cfg, "corpus", "vocab", "paraphrase_table", "synonyms", "sts_dev", "heldout", "resume")
    if cfg["strategy"] == "table" and not cfg.get("paraphrase_table"):
        problems.append("strategy 'table' needs paraphrase_table")
    vocab = Vocabulary.load(cfg["vocab"]) if not problems else None
    try:
        # validate the numeric settings even when paths are already known bad
        model_cfg, noise_cfg, train_cfg = _train_configs(cfg, len(vocab) if vocab else MIN_VOCAB)
    except UsageError as exc:
        problems.append(str(exc))
    if problems:
        raise UsageError("; ".join(problems))
    result = train_loop(
        read_corpus(cfg["corpus"]), vocab, model_cfg, noise_cfg, train_cfg,
        table=ParaphraseTable.load(cfg["paraphrase_table"]) if cfg.get("paraphrase_table") else None,
        synonyms=load_synonyms(cfg.get("synonyms")),
        resume=cfg.get("resume"),
        heldout=read_corpus(cfg["heldout"]) if cfg.get("heldout") else None,
        sts_dev=load_sts(cfg["sts_dev"]) if cfg.get("sts_dev") else None,
        metrics_path=cfg.get("metrics_log"),
        header={k: cfg[k] for k in sorted(cfg)},
    )
    if cfg.get("report"):
        report = EvalReport()
        if result.history:
            last = result.history[-1]
            report.diagnostics.update(final_combined=last.combined, final_contrastive=last.contrastive,
                                      final_denoising=last.denoising, final_token_accuracy=last.token_accuracy)
        for record in result.evaluations[-1:]:
            report.diagnostics.update({k: float(v) for k, v in record.items() if k != "step"})
        report.notes.append(f"objective={cfg['objective']}")
        report.write(cfg["report"])
    return 0


def _load_model(cfg: dict):
    vocab = Vocabulary.load(cfg["vocab"])
    ckpt = load_checkpoint(cfg["checkpoint"])
    if ckpt.model_config.V != len(vocab):
        raise SentDenoiseError(
            f"checkpoint expects a vocabulary of {ckpt.model_config.V} tokens but {cfg['vocab']} has {len(vocab)}")
    return vocab, ckpt.model_config, params_from_checkpoint(ckpt)


def cmd_embed(cfg: dict, input_path: str, output: str) -> int:
    problems = _require(cfg, "vocab", "checkpoint") + _existing(cfg, "vocab", "checkpoint")
    if not Path(input_path).is_file():
        problems.append(f"input: no such file {input_path}")
    if problems:
        raise UsageError("; ".join(problems))
    vocab, model_cfg, params = _load_model(cfg)
    sentences = read_lines(input_path)
    if not sentences:
        log.warning("%s has no sentences; writing an empty embeddings file", input_path)
        Path(output).write_text("", encoding="utf-8")
        return 0
    vectors = embed_sentences(sentences, params, model_cfg, vocab).data
    with open(output, "w", encoding="utf-8") as fh:
        for i, row in enumerate(vectors):
            fh.write(f"{i}\t" + " ".join(repr(float(x)) for x in row) + "\n")
    return 0


def cmd_eval(cfg: dict, args: argparse.Namespace) -> int:
    problems = _require(cfg, "vocab", "checkpoint", "report") + _existing(cfg, "vocab", "checkpoint")
    mode = args.mode
    if mode == "sts":
        data = args.data or cfg.get("sts_test") or cfg.get("sts_dev")
        if not data:
            problems.append("sts mode needs --data (or sts_test in the config)")
    elif mode == "retrieval":
        for name in ("queries", "docs", "relevance"):
            if not getattr(args, name):
                problems.append(f"retrieval mode needs --{name}")
    elif not args.data:
        problems.append("diagnostics mode needs --data (original<TAB>augmented pairs)")
    for path in (args.data, args.queries, args.docs, args.relevance):
        if path and not Path(path).is_file():
            problems.append(f"no such file {path}")
    if problems:
        raise UsageError("; ".join(problems))
    vocab, model_cfg, params = _load_model(cfg)
    if mode == "sts":
        report = eval_sts(load_sts(data), params, model_cfg, vocab)
    elif mode == "retrieval":
        queries, docs = read_lines(args.queries), read_lines(args.docs)
        relevance = load_relevance(args.relevance, len(queries), len(docs))
        report = eval_retrieval(queries, docs, relevance, params, model_cfg, vocab, k=args.k)
    else:
        pairs = []
        with open(args.data, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                cols = line.rstrip("\r\n").split("\t")
                if len(cols) != 2:
                    raise FormatError("expected original<TAB>augmented", args.data, lineno)
                pairs.append((cols[0], cols[1]))
        report = eval_diagnostics(pairs, params, model_cfg, vocab)
    report.write(cfg["report"])
    for line in report.to_lines():
        print(line)
    return 0


# -- argument parsing ---------------------------------------------------------------------


def _add(parser, key, **kw):
    kind = RUN_KEYS[key][0]
    parser.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentdenoise", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--config")
    for key in ("corpus", "vocab", "min_count", "max_size"):
        _add(p, key)

    p = sub.add_parser("augment", help="write original<TAB>augmented pairs")
    p.add_argument("--config")
    p.add_argument("--output", required=True)
    for key in ("corpus", "paraphrase_table", "synonyms", "rule_swap_prob", "rule_synonym_prob", "seed"):
        _add(p, key)
    _add(p, "strategy", choices=["table", "rule_based", "none"])

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics log")
    p.add_argument("--config")
    for key in RUN_KEYS:
        if key in ("objective", "strategy", "min_count", "max_size", "sts_test"):
            continue
        _add(p, key)
    _add(p, "objective", choices=sorted(OBJECTIVES))
    _add(p, "strategy", choices=["table", "rule_based", "none"])

    p = sub.add_parser("embed", help="embed one sentence per input line")
    p.add_argument("--config")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    for key in ("vocab", "checkpoint"):
        _add(p, key)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["sts", "retrieval", "diagnostics"], default="sts")
    p.add_argument("--data")
    p.add_argument("--queries")
    p.add_argument("--docs")
    p.add_argument("--relevance")
    p.add_argument("--k", type=int, default=1)
    for key in ("vocab", "checkpoint", "report", "sts_test"):
        _add(p, key)
    return parser


_COMMAND_KEYS = {
    "build-vocab": ("corpus", "vocab", "min_count", "max_size"),
    "augment": ("corpus", "paraphrase_table", "synonyms", "strategy", "dropout_rate", "rule_swap_prob",
                "rule_synonym_prob", "seed"),
    "train": tuple(RUN_KEYS),
    "embed": ("vocab", "checkpoint"),
    "eval": ("vocab", "checkpoint", "report", "sts_test", "sts_dev"),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, _COMMAND_KEYS[args.command])
        for k in sorted(cfg):
            log.info("%s config %s=%s", args.command, k, cfg[k])
        if args.command == "build-vocab":
            return cmd_build_vocab(cfg)
        if args.command == "augment":
            return cmd_augment(cfg, args.output)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "embed":
            return cmd_embed(cfg, args.input, args.output)
        return cmd_eval(cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SentDenoiseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
