"""Entity-level precision, recall, and F1 with exact span-and-type matching.

A predicted span counts as correct only when its character offsets and its
type both equal a gold span.  Counting happens per document, with optional
exclusion of whole entity types from both sides.
"""

from __future__ import annotations

import json
from collections.abc import Collection, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    AnnotatedCorpus,
    EntitySpan,
    decode_bio,
    iter_documents,
    load_standoff,
)
from .errors import DataFormatError

__all__ = [
    "Tally",
    "EvalResult",
    "entity_f1",
    "report",
    "document_spans",
    "standoff_spans",
]


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class Tally:
    """Match counts for one slice of the data (one type, or everything)."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class EvalResult:
    overall: Tally
    per_type: dict[str, Tally] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return self.overall.tp

    @property
    def fp(self) -> int:
        return self.overall.fp

    @property
    def fn(self) -> int:
        return self.overall.fn

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    def to_dict(self) -> dict:
        def one(t: Tally) -> dict:
            return {
                "tp": t.tp,
                "fp": t.fp,
                "fn": t.fn,
                "precision": t.precision,
                "recall": t.recall,
                "f1": t.f1,
            }

        out = one(self.overall)
        out["per_type"] = {name: one(t) for name, t in sorted(self.per_type.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _keyed(spans: Iterable[EntitySpan], exclude: Collection[str], where: str) -> set[tuple[int, int, str]]:
    """(start, end, type) set after exclusion; identical duplicates collapse."""
    keys = {(s.start, s.end, s.etype) for s in spans if s.etype not in exclude}
    ordered = sorted(keys)
    for a, b in zip(ordered, ordered[1:]):
        if b[0] < a[1]:
            raise DataFormatError(
                f"overlapping spans in {where}: [{a[0]}, {a[1]}) {a[2]} and [{b[0]}, {b[1]}) {b[2]}"
            )
    return keys


def entity_f1(
    gold: Sequence[Iterable[EntitySpan]],
    pred: Sequence[Iterable[EntitySpan]],
    exclude: Collection[str] = (),
) -> EvalResult:
    """Exact-match counts over aligned per-document span lists."""
    if len(gold) != len(pred):
        raise DataFormatError(
            f"gold covers {len(gold)} documents but predictions cover {len(pred)}"
        )
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    for i, (g, p) in enumerate(zip(gold, pred)):
        g_set = _keyed(g, exclude, f"gold document {i}")
        p_set = _keyed(p, exclude, f"predicted document {i}")
        for *_, etype in g_set & p_set:
            tp[etype] = tp.get(etype, 0) + 1
        for *_, etype in p_set - g_set:
            fp[etype] = fp.get(etype, 0) + 1
        for *_, etype in g_set - p_set:
            fn[etype] = fn.get(etype, 0) + 1
    types = sorted(set(tp) | set(fp) | set(fn))
    per_type = {t: Tally(tp.get(t, 0), fp.get(t, 0), fn.get(t, 0)) for t in types}
    overall = Tally(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    return EvalResult(overall, per_type)


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def report(result: EvalResult) -> str:
    """Text table: per-type rows, an overall row, and a one-line summary."""
    rows = [*sorted(result.per_type.items()), ("overall", result.overall)]
    lines = [f"{'type':<20}{'tp':>6}{'fp':>6}{'fn':>6}{'P':>8}{'R':>8}{'F1':>8}"]
    for name, t in rows:
        lines.append(
            f"{name:<20}{t.tp:>6}{t.fp:>6}{t.fn:>6}"
            f"{_pct(t.precision):>8}{_pct(t.recall):>8}{_pct(t.f1):>8}"
        )
    o = result.overall
    lines.append("")
    lines.append(f"P / R / F1: {_pct(o.precision)} / {_pct(o.recall)} / {_pct(o.f1)}")
    return "\n".join(lines) + "\n"


def document_spans(corpus: AnnotatedCorpus) -> tuple[list[str], list[list[EntitySpan]]]:
    """Decoded spans grouped by document, in corpus order."""
    ids: list[str] = []
    out: list[list[EntitySpan]] = []
    for doc_id, indices in iter_documents(corpus):
        ids.append(doc_id)
        out.append(
            [
                span
                for i in indices
                for span in decode_bio(corpus.labels[i], corpus.sentences[i], corpus.catalog)
            ]
        )
    return ids, out


def standoff_spans(
    gold_dir: str | Path, pred_dir: str | Path
) -> tuple[list[str], list[list[EntitySpan]], list[list[EntitySpan]]]:
    """Aligned gold/predicted spans for every .txt/.ann pair under gold_dir.

    Predicted .ann files are validated against the gold document text, so the
    prediction directory needs no .txt copies.
    """
    gold_dir, pred_dir = Path(gold_dir), Path(pred_dir)
    text_files = sorted(gold_dir.glob("*.txt"))
    if not text_files:
        raise DataFormatError(f"no .txt documents under {gold_dir}")
    ids: list[str] = []
    gold: list[list[EntitySpan]] = []
    pred: list[list[EntitySpan]] = []
    for text_file in text_files:
        gold_ann = text_file.with_suffix(".ann")
        pred_ann = pred_dir / gold_ann.name
        if not gold_ann.exists():
            raise DataFormatError(f"missing annotation file for {text_file.name}")
        if not pred_ann.exists():
            raise DataFormatError(f"missing prediction file {pred_ann}")
        _, g = load_standoff(text_file, gold_ann)
        _, p = load_standoff(text_file, pred_ann)
        ids.append(text_file.stem)
        gold.append(g)
        pred.append(p)
    return ids, gold, pred
