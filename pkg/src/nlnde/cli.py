"""Command-line entry point: train, predict, eval, annotate, confusion, attention.

Exit codes: 0 on success, 1 on command-line misuse, 2 on data, model, or
configuration problems.  NLNDE_LOG (error, info, debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    DEFAULT_CATALOG,
    AnnotatedCorpus,
    corpus_from_standoff_dir,
    decode_bio,
    load_corpus_tsv,
    tokenize_text,
    write_corpus_tsv,
    write_standoff,
)
from .distant import (
    NoiseSchedule,
    annotate as distant_annotate,
    build_gazetteer,
    estimate_confusion,
    load_gazetteer_file,
)
from .embeddings import STANDARD_DIMS, SUBWORD, WORD, HashEmbeddings, load_vectors
from .errors import ConfigError, DataFormatError, NlndeError, UsageError
from .evaluation import document_spans, entity_f1, report as eval_report, standoff_spans
from .features import FrequencyTable
from .figures import attention_heatmap, confusion_heatmap, training_curves
from .model import load_model, save_model
from .trainer import (
    Preprocessor,
    RUN_IDS,
    load_run_file,
    predict as predict_spans,
    run_config_from_file,
    train as train_model,
    with_guessed_pos,
)

log = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    raw = os.environ.get("NLNDE_LOG", "error").lower()
    if raw not in _LOG_LEVELS:
        raise UsageError(f"NLNDE_LOG must be one of error, info, debug; got {raw!r}")
    logging.basicConfig(level=_LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on misuse; here that status means data errors."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured random seed")

    parser = _Parser(prog="nlnde", description="Spanish clinical entity tagger")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model from a run configuration file")
    p.add_argument("--config", required=True, help="flat key = value run file")
    p.add_argument("--run", choices=RUN_IDS, help="preset override")
    p.add_argument("--out", help="output directory (default: out_dir from the run file)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", parents=[common], help="tag .txt documents into .ann files")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="directory of .txt documents")
    p.add_argument("--out", required=True, help="directory for .ann files")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="score predictions against gold annotations")
    p.add_argument("--gold", required=True, help="gold standoff directory, or corpus TSV")
    p.add_argument("--pred", required=True, help="predicted standoff directory, or corpus TSV")
    p.add_argument("--exclude", action="append", default=[], metavar="TYPE",
                   help="entity type to drop from both sides (repeatable)")
    p.add_argument("--json", help="also write the result to this JSON file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("annotate", parents=[common], help="label text by gazetteer lookup")
    p.add_argument("--gazetteer", required=True, help="TYPE<TAB>surface entries")
    p.add_argument("--input", required=True, help="corpus .tsv or plain .txt document")
    p.add_argument("--out", required=True, help="corpus TSV to write")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("confusion", parents=[common],
                       help="estimate the gold-vs-gazetteer label confusion matrix")
    p.add_argument("--gold", required=True, help="gold standoff directory, or corpus TSV")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--out", required=True, help="matrix TSV to write (heatmap lands beside it)")
    p.set_defaults(func=_cmd_confusion)

    p = sub.add_parser("attention", parents=[common],
                       help="per-token embedding selection weights of an attention model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="corpus .tsv or plain .txt document")
    p.add_argument("--out", required=True, help="weight TSV to write (heatmap lands beside it)")
    p.set_defaults(func=_cmd_attention)

    return parser


# ---------------------------------------------------------------------------
# shared loading


def _load_corpus(path: str, what: str) -> AnnotatedCorpus:
    p = Path(path)
    if p.is_dir():
        return corpus_from_standoff_dir(p)
    if p.is_file():
        return load_corpus_tsv(p)
    raise DataFormatError(f"{what} {path}: no such file or directory")


def _load_sentences(path: str):
    p = Path(path)
    if p.suffix == ".tsv":
        corpus = load_corpus_tsv(p)
        return corpus.sentences, corpus.catalog
    if p.suffix == ".txt":
        return tokenize_text(p.read_text(encoding="utf-8"), p.stem), DEFAULT_CATALOG
    raise DataFormatError(f"{path}: expected a corpus .tsv or a plain .txt document")


def _train_providers(cfg, raw):
    providers = {}
    for name in cfg.sources:
        if name == "char":
            continue
        kind = SUBWORD if name == "bpe" else WORD
        key = f"sources.{name}"
        if key in raw:
            providers[name] = load_vectors(raw[key], STANDARD_DIMS[name], name=name, kind=kind)
        else:  # no vector file configured: deterministic hashed stand-ins
            providers[name] = HashEmbeddings(name, STANDARD_DIMS[name], cfg.seed, kind=kind)
    return providers


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    raw = load_run_file(args.config)
    cfg = run_config_from_file(raw, args.run)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    for key in ("train_dir", "dev_dir"):
        if key not in raw:
            raise ConfigError(f"run configuration needs {key}")
    clean = _load_corpus(raw["train_dir"], "train_dir")
    dev = _load_corpus(raw["dev_dir"], "dev_dir")

    noisy = schedule = confusion = None
    if cfg.use_noisy:
        for key in ("noisy_corpus", "gazetteer"):
            if key not in raw:
                raise ConfigError(f"run {cfg.run_id} trains on distant labels and needs {key}")
        noisy = _load_corpus(raw["noisy_corpus"], "noisy_corpus")
        gazetteer = build_gazetteer(load_gazetteer_file(raw["gazetteer"]))
        distant_labels = distant_annotate(clean.sentences, gazetteer, clean.catalog)
        confusion = estimate_confusion(clean.labels, distant_labels, clean.catalog)
        schedule = NoiseSchedule(len(noisy))

    providers = _train_providers(cfg, raw)
    out_dir = Path(args.out or raw.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    tagger, rep = train_model(cfg, clean, dev, noisy, schedule, confusion, providers)

    model_path = out_dir / "model.bin"
    save_model(tagger, model_path, providers, FrequencyTable.from_corpus(clean), cfg.seed)
    (out_dir / "report.tsv").write_text(rep.to_tsv(), encoding="utf-8")
    (out_dir / "report.json").write_text(rep.to_json(), encoding="utf-8")
    training_curves(rep, out_dir / "training_curves.png")
    print(f"{cfg.run_id} seed {cfg.seed}: best dev F1 {rep.best_f1:.4f} "
          f"at epoch {rep.best_epoch} ({rep.stopping_reason})")
    print(f"wrote {model_path}, report.tsv, report.json, training_curves.png")
    return 0


def _cmd_predict(args) -> int:
    tagger, providers, frequency, _meta = load_model(args.model)
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise DataFormatError(f"--input {in_dir}: not a directory of .txt documents")
    text_files = sorted(in_dir.glob("*.txt"))
    if not text_files:
        raise DataFormatError(f"no .txt documents under {in_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for text_file in text_files:
        sentences = tokenize_text(text_file.read_text(encoding="utf-8"), text_file.stem)
        found = [s for spans in predict_spans(tagger, sentences, providers, frequency) for s in spans]
        write_standoff(found, out_dir / (text_file.stem + ".ann"))
        total += len(found)
    print(f"wrote {len(text_files)} .ann files ({total} entities) to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    gold_path, pred_path = Path(args.gold), Path(args.pred)
    if gold_path.is_dir() and pred_path.is_dir():
        _, gold, pred = standoff_spans(gold_path, pred_path)
    elif gold_path.is_file() and pred_path.is_file():
        gold_ids, gold = document_spans(load_corpus_tsv(gold_path))
        pred_ids, pred = document_spans(load_corpus_tsv(pred_path))
        if gold_ids != pred_ids:
            raise DataFormatError("gold and prediction corpora cover different documents")
    else:
        raise DataFormatError(
            "eval compares two standoff directories or two corpus TSV files"
        )
    result = entity_f1(gold, pred, exclude=set(args.exclude))
    print(eval_report(result), end="")
    if args.json:
        Path(args.json).write_text(result.to_json(), encoding="utf-8")
    return 0


def _cmd_annotate(args) -> int:
    gazetteer = build_gazetteer(load_gazetteer_file(args.gazetteer))
    sentences, catalog = _load_sentences(args.input)
    if not sentences:
        raise DataFormatError(f"{args.input}: no sentences to annotate")
    labels = distant_annotate(sentences, gazetteer, catalog)
    out = AnnotatedCorpus(
        sentences,
        labels,
        catalog,
        meta={"annotation": "distant", "gazetteer": Path(args.gazetteer).name},
    )
    write_corpus_tsv(out, args.out)
    n = sum(len(decode_bio(seq, sent, catalog)) for seq, sent in zip(labels, sentences))
    print(f"wrote {args.out}: {n} entities over {len(sentences)} sentences")
    return 0


def _cmd_confusion(args) -> int:
    corpus = _load_corpus(args.gold, "--gold")
    gazetteer = build_gazetteer(load_gazetteer_file(args.gazetteer))
    noisy_labels = distant_annotate(corpus.sentences, gazetteer, corpus.catalog)
    confusion = estimate_confusion(corpus.labels, noisy_labels, corpus.catalog)
    confusion.save(args.out)
    figure = confusion_heatmap(confusion, Path(args.out).with_suffix(".png"))
    print(f"wrote {args.out} and {figure}")
    return 0


def _cmd_attention(args) -> int:
    tagger, providers, frequency, _meta = load_model(args.model)
    if tagger.spec.combine != "ATTENTION":
        raise UsageError(
            f"model {args.model} concatenates its embeddings; "
            "attention weights exist only for attention-combination runs (S4, S5)"
        )
    sentences, _catalog = _load_sentences(args.input)
    if not sentences:
        raise DataFormatError(f"{args.input}: no sentences")
    tagged = with_guessed_pos(sentences)
    prep = Preprocessor(tagger.spec, providers, frequency, tagger.pos_vocab)
    header = "token\t" + "\t".join(f"w_{name}" for name in tagger.spec.sources)
    lines = [header]
    all_tokens: list[str] = []
    all_rows: list[np.ndarray] = []
    for sent in tagged:
        batch = prep.batch([sent], cache=False)
        weights = tagger.attention_weights(batch)[0]  # (T, n_sources)
        for tok, row in zip(sent.tokens, weights):
            lines.append(tok.surface + "\t" + "\t".join(f"{w:.10f}" for w in row))
            all_tokens.append(tok.surface)
            all_rows.append(row)
        lines.append("")
    if lines[-1] == "":
        lines.pop()
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    figure = attention_heatmap(all_tokens, np.array(all_rows), tagger.spec.sources,
                               Path(args.out).with_suffix(".png"))
    print(f"wrote {args.out} and {figure}")
    return 0


# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except NlndeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:  # missing or unreadable inputs
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
