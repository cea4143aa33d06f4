"""Distant supervision: gazetteers, automatic annotation, noise estimation.

Gazetteer entries are token sequences gathered from knowledge-base exports
and from frequent training-corpus mentions.  Raw sentences are labeled by
token-boundary string matching; comparing those automatic labels against the
gold training labels yields a confusion matrix that seeds the noisy channel.
A decaying schedule controls how many noisy sentences each epoch sees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nlnde import ENTITY_TYPES
from nlnde.corpus import (
    AnnotatedCorpus,
    LabelCatalog,
    Sentence,
    decode_bio,
    tokenize_line,
)
from nlnde.errors import DataFormatError

log = logging.getLogger("nlnde.distant")

CASE_INSENSITIVE = "CASE_INSENSITIVE"
STRICT = "STRICT"

MATCH_MODES = {t: (CASE_INSENSITIVE if t == "PROTEINAS" else STRICT) for t in ENTITY_TYPES}

# types whose surfaces come primarily from curated knowledge-base exports
FILE_BACKED_TYPES = ("PROTEINAS", "NORMALIZABLES")
# types additionally harvested from repeated training-corpus mentions
CORPUS_BACKED_TYPES = ("UNCLEAR", "NO_NORMALIZABLES")
MIN_MENTION_COUNT = 2

# resolution priority for equally long overlapping matches
TYPE_PRIORITY = ("PROTEINAS", "NORMALIZABLES", "NO_NORMALIZABLES", "UNCLEAR")

# Knowledge-base category identifiers (members + subclasses) commonly used to
# export candidate surface forms for these entity classes; kept here as
# documentation for anyone rebuilding the gazetteer files from Wikidata.
WIKIDATA_CATEGORIES = (
    "Q8047", "Q7187", "Q11364", "Q8054", "Q81915", "Q37756", "Q8066",
    "Q79460", "Q11358", "Q177719", "Q189720", "Q11367", "Q7946", "Q28745",
    "Q42962", "Q2356542", "Q47154513", "Q172847", "Q756", "Q81163", "Q134808",
)


def _tokenize_surface(surface: str) -> tuple[str, ...]:
    return tuple(t.surface for t in tokenize_line(surface))


@dataclass
class Gazetteer:
    """Per-type sets of token sequences plus each type's matching mode."""

    entries: dict[str, set[tuple[str, ...]]]
    match_mode: dict[str, str] = field(default_factory=lambda: dict(MATCH_MODES))

    def __post_init__(self):
        for etype, surfaces in self.entries.items():
            if etype not in self.match_mode:
                raise DataFormatError(f"unknown entity type {etype!r}")
            for s in surfaces:
                if not s or any(not piece for piece in s):
                    raise DataFormatError(f"empty surface form under {etype}")
        self._index: dict[str, set[tuple[str, ...]]] = {}
        self._lengths: dict[str, list[int]] = {}
        for etype in self.match_mode:
            surfaces = self.entries.get(etype, set())
            if self.match_mode[etype] == CASE_INSENSITIVE:
                normalized = {tuple(w.lower() for w in s) for s in surfaces}
            else:
                normalized = set(surfaces)
            self._index[etype] = normalized
            self._lengths[etype] = sorted({len(s) for s in normalized}, reverse=True)

    def normalize(self, etype: str, words: tuple[str, ...]) -> tuple[str, ...]:
        if self.match_mode[etype] == CASE_INSENSITIVE:
            return tuple(w.lower() for w in words)
        return words

    def contains(self, etype: str, words: tuple[str, ...]) -> bool:
        return self.normalize(etype, words) in self._index[etype]

    def size(self) -> dict[str, int]:
        return {t: len(self._index[t]) for t in sorted(self._index)}


def load_gazetteer_file(path: str | Path) -> dict[str, set[tuple[str, ...]]]:
    """`TYPE<TAB>surface form` lines; `#` introduces a comment line."""
    out: dict[str, set[tuple[str, ...]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected TYPE<TAB>surface")
        etype, surface = cols
        if etype not in ENTITY_TYPES:
            raise DataFormatError(f"{path}:{lineno}: unknown entity type {etype!r}")
        words = _tokenize_surface(surface)
        if not words:
            raise DataFormatError(f"{path}:{lineno}: empty surface form")
        out.setdefault(etype, set()).add(words)
    return out


def write_gazetteer_file(entries: dict[str, set[tuple[str, ...]]], path: str | Path) -> None:
    lines = []
    for etype in sorted(entries):
        for words in sorted(entries[etype]):
            lines.append(f"{etype}\t{' '.join(words)}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def build_gazetteer(
    file_entries: dict[str, set[tuple[str, ...]]], train: AnnotatedCorpus | None = None
) -> Gazetteer:
    """File-provided surfaces, plus repeated training mentions for the two
    guideline-driven types."""
    entries: dict[str, set[tuple[str, ...]]] = {t: set() for t in ENTITY_TYPES}
    for etype, surfaces in file_entries.items():
        if etype not in entries:
            raise DataFormatError(f"unknown entity type {etype!r}")
        entries[etype] |= surfaces
    if train is not None:
        mention_counts: dict[tuple[str, tuple[str, ...]], int] = {}
        for sent, labels in zip(train.sentences, train.labels):
            for span in decode_bio(labels, sent, train.catalog):
                if span.etype not in CORPUS_BACKED_TYPES:
                    continue
                words = tuple(
                    t.surface for t in sent.tokens if span.start <= t.start and t.end <= span.end
                )
                if words:
                    mention_counts[(span.etype, words)] = mention_counts.get((span.etype, words), 0) + 1
        for (etype, words), count in mention_counts.items():
            if count >= MIN_MENTION_COUNT:
                entries[etype].add(words)
    return Gazetteer(entries)


def annotate(
    sentences: list[Sentence], gaz: Gazetteer, catalog: LabelCatalog
) -> list[list[int]]:
    """Token-boundary gazetteer matching → BIO label sequences.

    Candidates are resolved globally per sentence: longest span first, then
    type priority, then leftmost; committed spans block overlapping ones.
    """
    priority = {t: i for i, t in enumerate(TYPE_PRIORITY)}
    out = []
    for sent in sentences:
        words = tuple(t.surface for t in sent.tokens)
        candidates = []
        for etype in gaz.match_mode:
            lengths = gaz._lengths[etype]
            if not lengths:
                continue
            index = gaz._index[etype]
            for start in range(len(words)):
                for span_len in lengths:
                    if start + span_len > len(words):
                        continue
                    if gaz.normalize(etype, words[start : start + span_len]) in index:
                        candidates.append((span_len, etype, start))
        candidates.sort(key=lambda c: (-c[0], priority[c[1]], c[2]))
        labels = [0] * len(words)
        taken = [False] * len(words)
        for span_len, etype, start in candidates:
            if any(taken[start : start + span_len]):
                continue
            for i in range(start, start + span_len):
                taken[i] = True
                labels[i] = catalog.i_id(etype) if i > start else catalog.b_id(etype)
        out.append(labels)
    return out


CONFUSION_SMOOTHING = 1e-6


@dataclass
class ConfusionMatrix:
    """Row i = clean label, column j = automatic label; probs are smoothed."""

    counts: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise DataFormatError(f"counts shape {self.counts.shape} for {n} labels")
        if np.any(self.counts < 0):
            raise DataFormatError("negative confusion counts")

    @property
    def probs(self) -> np.ndarray:
        smoothed = self.counts.astype(np.float64) + CONFUSION_SMOOTHING
        return smoothed / smoothed.sum(axis=1, keepdims=True)

    def save(self, path: str | Path) -> None:
        lines = ["\t" + "\t".join(self.labels)]
        for i, lab in enumerate(self.labels):
            lines.append(lab + "\t" + "\t".join(str(int(c)) for c in self.counts[i]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ConfusionMatrix":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise DataFormatError(f"{path}: empty confusion matrix file")
        header = lines[0].split("\t")
        if header[0] != "":
            raise DataFormatError(f"{path}: first header cell must be empty")
        labels = header[1:]
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        if len(lines) - 1 != len(labels):
            raise DataFormatError(f"{path}: {len(lines) - 1} rows for {len(labels)} labels")
        for i, line in enumerate(lines[1:]):
            cols = line.split("\t")
            if cols[0] != labels[i] or len(cols) != len(labels) + 1:
                raise DataFormatError(f"{path}: malformed row {i + 2}")
            counts[i] = [int(c) for c in cols[1:]]
        return cls(counts, labels)


def estimate_confusion(
    clean: list[list[int]], noisy: list[list[int]], catalog: LabelCatalog
) -> ConfusionMatrix:
    """Count per-token (clean, automatic) label pairs over aligned sequences."""
    n = len(catalog)
    counts = np.zeros((n, n), dtype=np.int64)
    if len(clean) != len(noisy):
        raise DataFormatError(f"{len(clean)} clean sequences vs {len(noisy)} noisy")
    for row, (c_seq, n_seq) in enumerate(zip(clean, noisy)):
        if len(c_seq) != len(n_seq):
            raise DataFormatError(f"sequence {row}: {len(c_seq)} clean vs {len(n_seq)} noisy labels")
        for ci, ni in zip(c_seq, n_seq):
            counts[ci, ni] += 1
    return ConfusionMatrix(counts, list(catalog.labels))


@dataclass(frozen=True)
class NoiseSchedule:
    initial_size: int
    decay: float = 0.95
    floor: int = 100

    def __post_init__(self):
        if self.initial_size < 0 or not 0 < self.decay <= 1 or self.floor < 0:
            raise DataFormatError("invalid noise schedule")


def schedule_size(epoch: int, sched: NoiseSchedule) -> int:
    """Geometric 5% decay with floor rounding, clamped at the floor count."""
    if epoch < 0:
        raise DataFormatError(f"negative epoch {epoch}")
    if sched.initial_size <= sched.floor:
        return sched.initial_size
    size = sched.initial_size
    for _ in range(epoch):
        size = max(sched.floor, math.floor(size * sched.decay))
        if size == sched.floor:
            break
    return size


def sample_noisy(
    sentences: list[Sentence], labels: list[list[int]], size: int, rng: np.random.Generator
) -> tuple[list[Sentence], list[list[int]]]:
    """Uniform sample without replacement; a full-size sample is a shuffle."""
    total = len(sentences)
    if size > total:
        log.warning("requested %d noisy sentences, corpus has %d; taking all", size, total)
        size = total
    order = rng.permutation(total)[:size]
    return [sentences[i] for i in order], [labels[i] for i in order]
