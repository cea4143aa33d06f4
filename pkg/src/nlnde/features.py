"""Word-level features: POS tag, length bin, frequency bin, shape class.

Each token maps to four small categorical features.  The model realizes them
as a 50-dimensional vector (20-dim learned POS embedding plus three 10-way
one-hots) that serves as auxiliary input or as the conditioning signal for
attention over embedding sources.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from nlnde.corpus import AnnotatedCorpus, Token
from nlnde.errors import DataFormatError

POS_DIM = 20
FEATURE_DIM = POS_DIM + 30  # 20 POS + 10 length + 10 frequency + 10 shape

SHAPE_CLASSES = (
    "uppercased",
    "lowercased",
    "starts_with_capital",
    "numeric",
    "mostly_numeric",
    "punctuation",
    "mostly_punctuation",
    "only_letters",
    "alphanumeric",
    "other",
)

# percent thresholds, most frequent first; below the last lands in bin 9
FREQ_THRESHOLDS = (1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001)

UNK_POS = "<UNK>"


@dataclass(frozen=True)
class WordFeatures:
    pos_id: int
    length_bin: int
    freq_bin: int
    shape_class: int

    def __post_init__(self):
        if not 0 <= self.length_bin <= 9:
            raise ValueError(f"length_bin {self.length_bin} out of range")
        if not 0 <= self.freq_bin <= 9:
            raise ValueError(f"freq_bin {self.freq_bin} out of range")
        if not 0 <= self.shape_class <= 9:
            raise ValueError(f"shape_class {self.shape_class} out of range")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def shape_class(word: str) -> int:
    """First matching class wins; the casing classes apply to all-letter words."""
    if not word:
        raise DataFormatError("shape_class: empty word")
    alpha = word.isalpha()
    if alpha and word.isupper():
        return 0
    if alpha and word.islower():
        return 1
    if alpha and word[0].isupper():
        return 2
    n = len(word)
    digits = sum(ch.isdigit() for ch in word)
    if digits == n:
        return 3
    if digits * 2 > n:
        return 4
    puncts = sum(_is_punct(ch) for ch in word)
    if puncts == n:
        return 5
    if puncts * 2 > n:
        return 6
    if alpha:
        return 7
    if all(ch.isalpha() or ch.isdigit() for ch in word):
        return 8
    return 9


def length_bin(word: str) -> int:
    if not word:
        raise DataFormatError("length_bin: empty word")
    return min(len(word), 10) - 1


class FrequencyTable:
    """Exact-surface occurrence counts over the clean training corpus."""

    def __init__(self, counts: dict[str, int]):
        self.counts = dict(counts)
        self.total = sum(self.counts.values())

    @classmethod
    def from_corpus(cls, corpus: AnnotatedCorpus) -> "FrequencyTable":
        counts: dict[str, int] = {}
        for sent in corpus.sentences:
            for tok in sent.tokens:
                counts[tok.surface] = counts.get(tok.surface, 0) + 1
        return cls(counts)

    def relative(self, word: str) -> float:
        if self.total == 0:
            return 0.0
        return self.counts.get(word, 0) / self.total

    def save(self, path: str | Path) -> None:
        lines = [f"#total\t{self.total}"]
        for word in sorted(self.counts):
            lines.append(f"{word}\t{self.counts[word]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FrequencyTable":
        counts: dict[str, int] = {}
        declared_total = None
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#total"):
                declared_total = int(line.split("\t")[1])
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected word<TAB>count")
            try:
                counts[cols[0]] = int(cols[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer count {cols[1]!r}") from None
        table = cls(counts)
        if declared_total is not None and declared_total != table.total:
            raise DataFormatError(
                f"{path}: #total header {declared_total} does not match sum of counts {table.total}"
            )
        return table


def frequency_bin(word: str, table: FrequencyTable) -> int:
    if table.total <= 0:
        raise DataFormatError("frequency_bin: empty frequency table")
    f = table.relative(word) * 100.0
    for i, thr in enumerate(FREQ_THRESHOLDS):
        if f > thr:
            return i
    return 9


class PosVocabulary:
    """POS tag inventory with a reserved unknown id at 0."""

    def __init__(self, tags: Iterable[str] = ()):
        self.tags = [UNK_POS]
        seen = {UNK_POS}
        for t in tags:
            if t not in seen:
                self.tags.append(t)
                seen.add(t)
        self.index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    @property
    def unk_id(self) -> int:
        return 0

    def id(self, tag: str | None) -> int:
        if tag is None:
            return self.unk_id
        return self.index.get(tag, self.unk_id)

    @classmethod
    def from_corpus(cls, corpus: AnnotatedCorpus) -> "PosVocabulary":
        tags = []
        seen = set()
        for sent in corpus.sentences:
            for tok in sent.tokens:
                if tok.pos is not None and tok.pos not in seen:
                    tags.append(tok.pos)
                    seen.add(tok.pos)
        return cls(sorted(tags))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tags) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PosVocabulary":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
        if not lines or lines[0] != UNK_POS:
            raise DataFormatError(f"{path}: first vocabulary entry must be {UNK_POS}")
        return cls(lines[1:])


_DET = {"el", "la", "los", "las", "un", "una", "unos", "unas", "al", "del"}
_ADP = {"de", "a", "en", "con", "por", "para", "sin", "sobre", "entre", "hasta", "desde", "tras"}
_CONJ = {"y", "o", "u", "e", "pero", "que", "si", "como", "aunque", "ni"}
_PRON = {"se", "su", "sus", "le", "les", "lo", "me", "te", "nos", "yo", "él", "ella"}
_AUX = {"es", "son", "fue", "era", "está", "están", "ha", "han", "hay", "ser", "sido", "siendo"}

_NOUN_SUFFIXES = ("ción", "sión", "dad", "tad", "tud", "aje", "oma", "itis", "emia", "osis", "ina")
_ADJ_SUFFIXES = ("oso", "osa", "ico", "ica", "ivo", "iva", "ado", "ada", "ido", "ida", "al", "ar")
_VERB_SUFFIXES = ("aba", "aron", "ieron", "ando", "iendo", "arse", "erse", "irse")


def guess_pos(word: str) -> str:
    """Crude Spanish tagger for input that arrives without a POS column.

    Closed-class lookup first, then suffix patterns, then casing.  Intended
    only to let the POS feature carry some signal; anything unrecognized is
    a noun.
    """
    lower = word.lower()
    if all(not ch.isalpha() for ch in word):
        if any(ch.isdigit() for ch in word):
            return "NUM"
        return "PUNCT"
    if lower in _DET:
        return "DET"
    if lower in _ADP:
        return "ADP"
    if lower in _CONJ:
        return "CONJ"
    if lower in _PRON:
        return "PRON"
    if lower in _AUX:
        return "VERB"
    if lower.endswith("mente"):
        return "ADV"
    if any(lower.endswith(s) for s in _VERB_SUFFIXES):
        return "VERB"
    if any(lower.endswith(s) for s in _NOUN_SUFFIXES):
        return "NOUN"
    if any(lower.endswith(s) for s in _ADJ_SUFFIXES) and len(lower) > 4:
        return "ADJ"
    if word[0].isupper():
        return "PROPN"
    return "NOUN"


GUESSED_POS_TAGS = ("ADJ", "ADP", "ADV", "CONJ", "DET", "NOUN", "NUM", "PRON", "PROPN", "PUNCT", "VERB")


def featurize(token: Token, table: FrequencyTable, pos_vocab: PosVocabulary) -> WordFeatures:
    return WordFeatures(
        pos_id=pos_vocab.id(token.pos),
        length_bin=length_bin(token.surface),
        freq_bin=frequency_bin(token.surface, table),
        shape_class=shape_class(token.surface),
    )
