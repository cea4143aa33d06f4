"""Corpus ingestion: standoff annotations, token repair, BIO conversion.

Documents arrive either as standoff pairs (UTF-8 .txt plus .ann with
``T<id><TAB><TYPE> <start> <end><TAB><text>`` lines) or as prepared TSV with
one token per line.  Sentence boundaries follow the input line structure.
All offsets are 0-based character offsets into the document text, end
exclusive.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from nlnde import ENTITY_TYPES
from nlnde.errors import DataFormatError, SpanAlignmentError

log = logging.getLogger("nlnde.corpus")

ABSENT_POS = "_"  # placeholder for a missing POS column in TSV files


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int
    pos: str | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise DataFormatError(f"token {self.surface!r}: end {self.end} <= start {self.start}")
        if not self.surface:
            raise DataFormatError(f"empty token surface at [{self.start}, {self.end})")


@dataclass
class Sentence:
    tokens: list[Token]
    doc_id: str = ""

    def __post_init__(self):
        prev_end = -1
        for t in self.tokens:
            if t.start < prev_end:
                raise DataFormatError(
                    f"doc {self.doc_id}: token offsets overlap or go backwards at [{t.start}, {t.end})"
                )
            prev_end = t.end

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Document:
    doc_id: str
    text: str
    sentences: list[Sentence]


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    etype: str
    text: str = field(compare=False)
    span_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.end <= self.start:
            raise DataFormatError(f"span end {self.end} <= start {self.start}")


class LabelCatalog:
    """Fixed BIO label inventory: O first, then B-t, I-t per entity type."""

    def __init__(self, types: tuple[str, ...] = ENTITY_TYPES):
        self.types = tuple(types)
        self.labels = ["O"]
        for t in self.types:
            self.labels.append(f"B-{t}")
            self.labels.append(f"I-{t}")
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def id(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise DataFormatError(f"unknown label {label!r}") from None

    def label(self, label_id: int) -> str:
        return self.labels[label_id]

    def b_id(self, etype: str) -> int:
        return self.id(f"B-{etype}")

    def i_id(self, etype: str) -> int:
        return self.id(f"I-{etype}")


DEFAULT_CATALOG = LabelCatalog()

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_ANN_RE = re.compile(r"^(T\w+)\t(\S+) (\d+) (\d+)\t(.*)$")


def tokenize_line(line: str, offset: int = 0) -> list[Token]:
    """Fallback tokenizer: word runs and single punctuation marks, with offsets."""
    return [
        Token(m.group(), offset + m.start(), offset + m.end())
        for m in _TOKEN_RE.finditer(line)
    ]


def tokenize_text(text: str, doc_id: str = "") -> list[Sentence]:
    """One sentence per input line (blank lines skipped)."""
    sentences = []
    offset = 0
    for line in text.split("\n"):
        tokens = tokenize_line(line, offset)
        if tokens:
            sentences.append(Sentence(tokens, doc_id))
        offset += len(line) + 1
    return sentences


def repair_merged_token(token: Token, source: str) -> list[Token]:
    """Split an underscore-merged token back into its components.

    The upstream tokenizer joins multi-word expressions with underscores; when
    the underlying text slice carries no underscore, the pieces are located
    again by left-to-right search inside the original [start, end) window.
    """
    slice_ = source[token.start : token.end]
    if "_" not in token.surface or "_" in slice_:
        return [token]
    pieces = [p for p in token.surface.split("_") if p]
    out = []
    cursor = token.start
    for piece in pieces:
        found = source.find(piece, cursor, token.end)
        if found < 0:
            raise DataFormatError(
                f"cannot locate piece {piece!r} of merged token {token.surface!r} "
                f"inside [{token.start}, {token.end})"
            )
        out.append(Token(piece, found, found + len(piece), token.pos))
        cursor = found + len(piece)
    return out


def load_standoff(text_file: str | Path, ann_file: str | Path) -> tuple[Document, list[EntitySpan]]:
    """Read a .txt/.ann pair; rejects annotations that disagree with the text."""
    text_file, ann_file = Path(text_file), Path(ann_file)
    text = text_file.read_text(encoding="utf-8")
    doc_id = text_file.stem
    spans = []
    for lineno, line in enumerate(ann_file.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or not line.startswith("T"):
            continue  # brat files may carry note/attribute lines; only T rows are spans
        m = _ANN_RE.match(line)
        if m is None:
            raise DataFormatError(f"{ann_file.name}:{lineno}: malformed annotation line: {line!r}")
        span_id, etype, start, end, quoted = m.group(1), m.group(2), int(m.group(3)), int(m.group(4)), m.group(5)
        if etype not in ENTITY_TYPES:
            raise DataFormatError(f"{ann_file.name}:{lineno}: unknown entity type {etype!r}")
        if end <= start or end > len(text):
            raise DataFormatError(f"{ann_file.name}:{lineno}: offsets [{start}, {end}) out of bounds")
        actual = text[start:end]
        if actual != quoted:
            raise DataFormatError(
                f"{ann_file.name}: annotation {span_id}: text {quoted!r} does not match "
                f"document slice {actual!r} at [{start}, {end})"
            )
        spans.append(EntitySpan(start, end, etype, quoted, span_id))
    return Document(doc_id, text, tokenize_text(text, doc_id)), spans


def write_standoff(spans: Iterable[EntitySpan], path: str | Path) -> None:
    lines = []
    for i, s in enumerate(spans, start=1):
        sid = s.span_id or f"T{i}"
        lines.append(f"{sid}\t{s.etype} {s.start} {s.end}\t{s.text}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def encode_bio(sentence: Sentence, spans: Iterable[EntitySpan], catalog: LabelCatalog = DEFAULT_CATALOG) -> list[int]:
    """Token-aligned spans to label ids; raises on overlap or misalignment."""
    labels = [0] * len(sentence.tokens)
    starts = {t.start: i for i, t in enumerate(sentence.tokens)}
    ends = {t.end: i for i, t in enumerate(sentence.tokens)}
    for span in spans:
        first = starts.get(span.start)
        last = ends.get(span.end)
        if first is None or last is None or last < first:
            raise SpanAlignmentError(
                f"span [{span.start}, {span.end}) {span.etype} does not align with "
                f"token boundaries in doc {sentence.doc_id!r}"
            )
        for i in range(first, last + 1):
            if labels[i] != 0:
                raise SpanAlignmentError(
                    f"overlapping spans at token {i} ([{span.start}, {span.end}) {span.etype})"
                )
            labels[i] = catalog.i_id(span.etype) if i > first else catalog.b_id(span.etype)
    return labels


def encode_bio_lenient(
    sentence: Sentence, spans: Iterable[EntitySpan], catalog: LabelCatalog = DEFAULT_CATALOG
) -> tuple[list[int], list[EntitySpan]]:
    """encode_bio that reports and drops bad spans instead of failing the sentence."""
    kept: list[EntitySpan] = []
    dropped: list[EntitySpan] = []
    for span in spans:
        try:
            encode_bio(sentence, kept + [span], catalog)
        except SpanAlignmentError as err:
            log.warning("dropping span: %s", err)
            dropped.append(span)
        else:
            kept.append(span)
    return encode_bio(sentence, kept, catalog), dropped


def decode_bio(labels: list[int], sentence: Sentence, catalog: LabelCatalog = DEFAULT_CATALOG) -> list[EntitySpan]:
    """Label ids to character spans.  Total: every sequence decodes.

    An I- tag opening a run (no preceding B/I of the same type) is promoted
    to B-, the usual conlleval repair for malformed model output.
    """
    if len(labels) != len(sentence.tokens):
        raise DataFormatError(f"{len(labels)} labels for {len(sentence.tokens)} tokens")
    spans = []
    run_type: str | None = None
    run_first = 0
    for i, label_id in enumerate(labels):
        lab = catalog.label(label_id)
        if lab == "O":
            tag, etype = "O", None
        else:
            tag, etype = lab.split("-", 1)
        starts_new = tag == "B" or (tag == "I" and etype != run_type)
        if run_type is not None and (tag == "O" or starts_new):
            spans.append(_span_from_tokens(sentence, run_first, i - 1, run_type))
            run_type = None
        if starts_new:
            run_type, run_first = etype, i
    if run_type is not None:
        spans.append(_span_from_tokens(sentence, run_first, len(labels) - 1, run_type))
    return spans


def _span_from_tokens(sentence: Sentence, first: int, last: int, etype: str) -> EntitySpan:
    toks = sentence.tokens[first : last + 1]
    text = ""
    for i, t in enumerate(toks):
        if i > 0:
            text += " " * (t.start - toks[i - 1].end)
        text += t.surface
    return EntitySpan(toks[0].start, toks[-1].end, etype, text)


# ---------------------------------------------------------------------------
# prepared-corpus TSV: surface<TAB>start<TAB>end<TAB>pos<TAB>gold_label,
# blank line between sentences, `#doc <id>` headers


@dataclass
class AnnotatedCorpus:
    """Sentences with aligned label-id sequences and the spans they encode."""

    sentences: list[Sentence]
    labels: list[list[int]]
    catalog: LabelCatalog = field(default_factory=lambda: DEFAULT_CATALOG)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sentences)

    def spans(self) -> list[list[EntitySpan]]:
        return [decode_bio(lab, sent, self.catalog) for sent, lab in zip(self.sentences, self.labels)]


def write_corpus_tsv(corpus: AnnotatedCorpus, path: str | Path) -> None:
    out = []
    for key, value in sorted(corpus.meta.items()):
        out.append(f"# {key} = {value}")
    last_doc = None
    for sent, labels in zip(corpus.sentences, corpus.labels):
        if sent.doc_id != last_doc:
            out.append(f"#doc {sent.doc_id}")
            last_doc = sent.doc_id
        for tok, lab in zip(sent.tokens, labels):
            pos = tok.pos if tok.pos is not None else ABSENT_POS
            out.append(f"{tok.surface}\t{tok.start}\t{tok.end}\t{pos}\t{corpus.catalog.label(lab)}")
        out.append("")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_corpus_tsv(path: str | Path, catalog: LabelCatalog = DEFAULT_CATALOG) -> AnnotatedCorpus:
    sentences: list[Sentence] = []
    labels: list[list[int]] = []
    meta: dict = {}
    cur_toks: list[Token] = []
    cur_labs: list[str] = []
    doc_id = ""

    def flush(lineno: int):
        nonlocal cur_toks, cur_labs
        if not cur_toks:
            return
        sent = Sentence(cur_toks, doc_id)
        try:
            labels.append([catalog.id(lab) for lab in cur_labs])
        except DataFormatError as err:
            raise DataFormatError(f"{path}:{lineno}: {err}") from None
        sentences.append(sent)
        cur_toks, cur_labs = [], []

    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.startswith("#doc "):
            flush(lineno)
            doc_id = line[5:].strip()
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*(\S+)\s*=\s*(.*)$", line)
            if m:
                meta[m.group(1)] = m.group(2)
            continue
        if not line.strip():
            flush(lineno)
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataFormatError(f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}")
        surface, start_s, end_s, pos, lab = cols
        try:
            start, end = int(start_s), int(end_s)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer offsets {start_s!r}/{end_s!r}") from None
        if end - start != len(surface):
            raise DataFormatError(
                f"{path}:{lineno}: surface length {len(surface)} does not match offsets "
                f"[{start}, {end}); repair merged tokens against the source text first"
            )
        cur_toks.append(Token(surface, start, end, None if pos == ABSENT_POS else pos))
        cur_labs.append(lab)
    flush(-1)
    return AnnotatedCorpus(sentences, labels, catalog, meta)


def corpus_from_standoff_dir(
    directory: str | Path, catalog: LabelCatalog = DEFAULT_CATALOG
) -> AnnotatedCorpus:
    """All .txt/.ann pairs under a directory, tokenized and BIO-encoded.

    Spans that cross sentence boundaries or fall inside tokens are dropped
    with a warning; the rest of the sentence is kept.
    """
    directory = Path(directory)
    sentences: list[Sentence] = []
    labels: list[list[int]] = []
    for text_file in sorted(directory.glob("*.txt")):
        ann_file = text_file.with_suffix(".ann")
        if not ann_file.exists():
            raise DataFormatError(f"missing annotation file for {text_file.name}")
        doc, spans = load_standoff(text_file, ann_file)
        for sent in doc.sentences:
            lo, hi = sent.tokens[0].start, sent.tokens[-1].end
            inside = [s for s in spans if lo <= s.start and s.end <= hi]
            labs, _dropped = encode_bio_lenient(sent, inside, catalog)
            sentences.append(sent)
            labels.append(labs)
        for s in spans:
            covered = any(
                sent.tokens[0].start <= s.start and s.end <= sent.tokens[-1].end
                for sent in doc.sentences
            )
            if not covered:
                log.warning(
                    "doc %s: dropping span [%d, %d) %s outside sentence bounds",
                    doc.doc_id, s.start, s.end, s.etype,
                )
    return AnnotatedCorpus(sentences, labels, catalog)


def iter_documents(corpus: AnnotatedCorpus) -> Iterator[tuple[str, list[int]]]:
    """Sentence indices grouped by doc_id, in corpus order."""
    by_doc: dict[str, list[int]] = {}
    for i, sent in enumerate(corpus.sentences):
        by_doc.setdefault(sent.doc_id, []).append(i)
    yield from by_doc.items()
