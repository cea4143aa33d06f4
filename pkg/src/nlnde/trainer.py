"""Optimization and the training loop.

Each epoch runs one full pass over the hand-labeled corpus under the CRF
objective and, when configured, one pass over a shrinking sample of the
distantly labeled corpus under the channeled softmax objective.  The two
passes share the encoder; the CRF updates only on the first, the channel
only on the second.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import AnnotatedCorpus, EntitySpan, LabelCatalog, Sentence, decode_bio
from .distant import ConfusionMatrix, NoiseSchedule, sample_noisy, schedule_size
from .embeddings import (
    CHAR_EMBED_DIM,
    CHAR_HIDDEN,
    RepresentationSpec,
    VectorProvider,
    default_providers,
)
from .errors import ConfigError, DataFormatError, TrainingError
from .evaluation import EvalResult, entity_f1
from .features import FrequencyTable, PosVocabulary, guess_pos
from .model import (
    ATTENTION_HIDDEN,
    WORD_HIDDEN,
    Batch,
    Tagger,
    TaggerParams,
    build_batch,
    init_channel,
)

log = logging.getLogger(__name__)

LEARNING_RATE = 0.002
BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8
CLIP_NORM = 5.0
BATCH_SIZE = 32
MAX_EPOCHS = 100
PATIENCE = 5
DEFAULT_SEED = 13

__all__ = [
    "OptimizerState",
    "nadam_step",
    "clip_gradients",
    "RunConfig",
    "run_config",
    "RUN_IDS",
    "EpochRecord",
    "TrainReport",
    "Preprocessor",
    "train",
    "predict",
    "evaluate",
    "load_run_file",
    "run_config_from_file",
]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators and update counts, keyed by name."""

    lr: float = LEARNING_RATE
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: dict[str, int] = field(default_factory=dict)


def nadam_step(
    params: Sequence[tuple[str, Tensor]],
    grads: Sequence[np.ndarray | None],
    state: OptimizerState,
) -> None:
    """One Nesterov-Adam update in place; a None gradient skips its parameter."""
    if len(params) != len(grads):
        raise ConfigError(f"{len(params)} parameters but {len(grads)} gradients")
    for (name, tensor), grad in zip(params, grads):
        if grad is None:
            continue
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != tensor.value.shape:
            raise ConfigError(
                f"gradient shape {g.shape} does not match parameter {name} {tensor.value.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        t = state.step.get(name, 0) + 1
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.value)
            v = np.zeros_like(tensor.value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        # Nesterov lookahead: the correction for m peeks one step further than
        # the plain-gradient term
        m_hat = m / (1.0 - state.beta1 ** (t + 1))
        g_hat = g / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        update = state.lr * (state.beta1 * m_hat + (1.0 - state.beta1) * g_hat)
        tensor.value -= update / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name], state.step[name] = m, v, t


def clip_gradients(grads: Sequence[np.ndarray | None], max_norm: float = CLIP_NORM) -> float:
    """Scale all gradients in place so their global norm is at most max_norm."""
    total = 0.0
    present = [g for g in grads if g is not None]
    for g in present:
        total += float(np.sum(np.square(g)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in present:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# run presets


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    sources: tuple[str, ...]
    combine: str
    include_features_in_input: bool
    use_noisy: bool
    batch_size: int = BATCH_SIZE
    dropout: float = 0.5
    seed: int = DEFAULT_SEED
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be positive")

    def spec(self) -> RepresentationSpec:
        return RepresentationSpec(self.sources, self.combine, self.include_features_in_input)


_BASE_SOURCES = ("char", "ft", "bpe")
_ALL_SOURCES = ("char", "ft", "ft_domain", "bpe")

_PRESETS: dict[str, tuple[tuple[str, ...], str, bool, bool]] = {
    # sources, combine, features concatenated into the input, noisy pass
    "S1": (_BASE_SOURCES, "CONCAT", False, False),
    "S2": (_ALL_SOURCES, "CONCAT", False, False),
    "S3": (_ALL_SOURCES, "CONCAT", True, True),
    "S4": (_ALL_SOURCES, "ATTENTION", False, False),
    "S5": (_ALL_SOURCES, "ATTENTION", False, True),
}

RUN_IDS = tuple(_PRESETS)


def run_config(
    run_id: str,
    *,
    seed: int = DEFAULT_SEED,
    max_epochs: int = MAX_EPOCHS,
    patience: int = PATIENCE,
    batch_size: int = BATCH_SIZE,
    dropout: float = 0.5,
) -> RunConfig:
    if run_id not in _PRESETS:
        raise ConfigError(f"unknown run {run_id!r}; expected one of {', '.join(RUN_IDS)}")
    sources, combine, features_in, use_noisy = _PRESETS[run_id]
    return RunConfig(
        run_id=run_id,
        sources=sources,
        combine=combine,
        include_features_in_input=features_in,
        use_noisy=use_noisy,
        batch_size=batch_size,
        dropout=dropout,
        seed=seed,
        max_epochs=max_epochs,
        patience=patience,
    )


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    clean_loss: float
    noisy_loss: float | None
    noisy_size: int
    dev_precision: float
    dev_recall: float
    dev_f1: float


@dataclass
class TrainReport:
    run_id: str
    seed: int
    epochs: list[EpochRecord]
    best_epoch: int
    best_f1: float
    stopped_epoch: int
    stopping_reason: str  # early-stop | max-epochs

    def to_tsv(self) -> str:
        lines = ["epoch\tclean_loss\tnoisy_loss\tnoisy_size\tdev_precision\tdev_recall\tdev_f1"]
        for e in self.epochs:
            noisy = "-" if e.noisy_loss is None else repr(e.noisy_loss)
            lines.append(
                f"{e.epoch}\t{e.clean_loss!r}\t{noisy}\t{e.noisy_size}"
                f"\t{e.dev_precision!r}\t{e.dev_recall!r}\t{e.dev_f1!r}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "run": self.run_id,
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_dev_f1": self.best_f1,
            "stopped_epoch": self.stopped_epoch,
            "stopping_reason": self.stopping_reason,
            "epochs": [
                {
                    "epoch": e.epoch,
                    "clean_loss": e.clean_loss,
                    "noisy_loss": e.noisy_loss,
                    "noisy_size": e.noisy_size,
                    "dev_precision": e.dev_precision,
                    "dev_recall": e.dev_recall,
                    "dev_f1": e.dev_f1,
                }
                for e in self.epochs
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# data plumbing


def with_guessed_pos(sentences: Sequence[Sentence]) -> list[Sentence]:
    """Copies with every missing POS tag filled in by the built-in heuristic."""
    out = []
    for sent in sentences:
        if all(t.pos is not None for t in sent.tokens):
            out.append(sent)
            continue
        toks = [t if t.pos is not None else replace(t, pos=guess_pos(t.surface)) for t in sent.tokens]
        out.append(Sentence(toks, sent.doc_id))
    return out


def length_buckets(lengths: Sequence[int], batch_size: int) -> list[list[int]]:
    """Index groups of similar length; stable for equal lengths."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    return [order[k : k + batch_size] for k in range(0, len(order), batch_size)]


@dataclass
class Preprocessor:
    """build_batch with a cache for groups that recur across epochs."""

    spec: RepresentationSpec
    providers: Mapping[str, VectorProvider]
    frequency: FrequencyTable
    pos_vocab: PosVocabulary
    _cache: dict = field(default_factory=dict, repr=False)

    def batch(
        self,
        sentences: list[Sentence],
        golds: list[list[int]] | None = None,
        cache: bool = True,
    ) -> Batch:
        if not cache:
            return build_batch(sentences, golds, self.spec, self.providers, self.frequency, self.pos_vocab)
        key = (
            tuple(id(s) for s in sentences),
            None if golds is None else tuple(tuple(g) for g in golds),
        )
        hit = self._cache.get(key)
        if hit is None:
            hit = build_batch(sentences, golds, self.spec, self.providers, self.frequency, self.pos_vocab)
            self._cache[key] = hit
        return hit


def _corpus_alphabet(*corpora: AnnotatedCorpus | None) -> list[str]:
    chars: set[str] = set()
    for corpus in corpora:
        if corpus is None:
            continue
        for sent in corpus.sentences:
            for tok in sent.tokens:
                chars.update(tok.surface)
    return sorted(chars)


def _tagged(corpus: AnnotatedCorpus) -> AnnotatedCorpus:
    return AnnotatedCorpus(
        with_guessed_pos(corpus.sentences), corpus.labels, corpus.catalog, corpus.meta
    )


# ---------------------------------------------------------------------------
# training


def _stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))


def _check_finite(loss_value: float, kind: str, epoch: int, batch_index: int) -> None:
    if not np.isfinite(loss_value):
        raise TrainingError(
            f"{kind} loss became non-finite ({loss_value}) at epoch {epoch}, batch {batch_index}"
        )


def train(
    run: RunConfig,
    clean: AnnotatedCorpus,
    dev: AnnotatedCorpus,
    noisy: AnnotatedCorpus | None = None,
    schedule: NoiseSchedule | None = None,
    confusion: ConfusionMatrix | None = None,
    providers: Mapping[str, VectorProvider] | None = None,
    *,
    word_hidden: int = WORD_HIDDEN,
    char_embed: int = CHAR_EMBED_DIM,
    char_hidden: int = CHAR_HIDDEN,
    attention_hidden: int = ATTENTION_HIDDEN,
) -> tuple[Tagger, TrainReport]:
    """Fit a tagger on `clean` (and optionally `noisy`), model-selecting on `dev`."""
    if len(clean) == 0 or len(dev) == 0:
        raise DataFormatError("training and development corpora must be non-empty")
    if run.use_noisy and noisy is None:
        raise ConfigError(f"run {run.run_id} trains on distant labels but no noisy corpus was given")
    if not run.use_noisy and noisy is not None:
        raise ConfigError(f"run {run.run_id} does not use a noisy corpus but one was given")
    if run.use_noisy and confusion is None:
        raise ConfigError("noisy training needs an initial label confusion estimate")
    catalog = clean.catalog
    for other in (dev, noisy):
        if other is not None and other.catalog.labels != catalog.labels:
            raise ConfigError("corpora disagree on the label catalog")

    clean = _tagged(clean)
    dev = _tagged(dev)
    noisy = _tagged(noisy) if noisy is not None else None
    if providers is None:
        providers = default_providers(run.seed)
    spec = run.spec()
    lookup_names = [s for s in spec.sources if s != "char"]
    missing = [s for s in lookup_names if s not in providers]
    if missing:
        raise ConfigError(f"missing embedding source(s) {missing}")
    lookup_dims = {s: providers[s].dim for s in lookup_names}
    frequency = FrequencyTable.from_corpus(clean)
    pos_vocab = PosVocabulary.from_corpus(clean)
    alphabet = _corpus_alphabet(clean, noisy)

    params = TaggerParams.create(
        _stream(run.seed, 0),
        spec,
        lookup_dims,
        alphabet,
        len(catalog),
        len(pos_vocab),
        word_hidden=word_hidden,
        char_embed=char_embed,
        char_hidden=char_hidden,
        attention_hidden=attention_hidden,
    )
    if run.use_noisy:
        if confusion.counts.shape[0] != len(catalog):
            raise ConfigError(
                f"confusion matrix covers {confusion.counts.shape[0]} labels, catalog has {len(catalog)}"
            )
        params.channel = init_channel(confusion)
    dims = dict(lookup_dims)
    dims["char"] = params.char.output_dim
    tagger = Tagger(
        params=params,
        spec=spec,
        labels=catalog,
        pos_vocab=pos_vocab,
        dims=dims,
        dropout_p=run.dropout,
        meta={"run": run.run_id},
    )
    if run.use_noisy and schedule is None:
        schedule = NoiseSchedule(len(noisy))

    prep = Preprocessor(spec, providers, frequency, pos_vocab)
    manifest = params.manifest()
    all_tensors = [t for _, t in manifest]
    state = OptimizerState()

    clean_lengths = [len(s.tokens) for s in clean.sentences]
    clean_batches = [
        prep.batch([clean.sentences[i] for i in bucket], [clean.labels[i] for i in bucket])
        for bucket in length_buckets(clean_lengths, run.batch_size)
    ]
    dev_lengths = [len(s.tokens) for s in dev.sentences]
    dev_buckets = length_buckets(dev_lengths, run.batch_size)
    dev_batches = [prep.batch([dev.sentences[i] for i in bucket]) for bucket in dev_buckets]
    dev_gold_spans = dev.spans()

    records: list[EpochRecord] = []
    best_f1 = -1.0
    best_epoch = -1
    best_values: list[np.ndarray] | None = None
    bad_epochs = 0
    reason = "max-epochs"
    epoch = -1

    for epoch in range(run.max_epochs):
        drop_rng = _stream(run.seed, 1, epoch)
        clean_total = 0.0
        for b, batch in enumerate(clean_batches):
            ad.zero_grads(all_tensors)
            loss = tagger.clean_loss(batch, training=True, rng=drop_rng)
            _check_finite(float(loss.value), "clean", epoch, b)
            ad.backward(loss)
            grads = [t.grad for t in all_tensors]
            clip_gradients(grads)
            nadam_step(manifest, grads, state)
            clean_total += float(loss.value) * batch.size
        clean_loss = clean_total / len(clean)

        noisy_loss = None
        noisy_size = 0
        if run.use_noisy:
            target = schedule_size(epoch, schedule)
            sampled_sents, sampled_labels = sample_noisy(
                noisy.sentences, noisy.labels, target, _stream(run.seed, 2, epoch)
            )
            noisy_size = len(sampled_sents)
            token_total, tokens = 0.0, 0
            lengths = [len(s.tokens) for s in sampled_sents]
            for b, bucket in enumerate(length_buckets(lengths, run.batch_size)):
                batch = prep.batch(
                    [sampled_sents[i] for i in bucket],
                    [sampled_labels[i] for i in bucket],
                    cache=False,
                )
                ad.zero_grads(all_tensors)
                loss = tagger.noisy_loss(batch, training=True, rng=drop_rng)
                _check_finite(float(loss.value), "noisy", epoch, b)
                ad.backward(loss)
                grads = [t.grad for t in all_tensors]
                clip_gradients(grads)
                nadam_step(manifest, grads, state)
                n_tok = int(batch.mask.sum())
                token_total += float(loss.value) * n_tok
                tokens += n_tok
            noisy_loss = token_total / tokens if tokens else 0.0

        pred_labels: list[list[int] | None] = [None] * len(dev)
        for bucket, batch in zip(dev_buckets, dev_batches):
            for i, labels in zip(bucket, tagger.predict_batch(batch)):
                pred_labels[i] = labels
        pred_spans = [
            decode_bio(labels, sent, catalog)
            for labels, sent in zip(pred_labels, dev.sentences)
        ]
        result = entity_f1(dev_gold_spans, pred_spans)
        records.append(
            EpochRecord(
                epoch=epoch,
                clean_loss=clean_loss,
                noisy_loss=noisy_loss,
                noisy_size=noisy_size,
                dev_precision=result.precision,
                dev_recall=result.recall,
                dev_f1=result.f1,
            )
        )
        log.info(
            "epoch %d: clean %.4f%s dev F1 %.4f",
            epoch,
            clean_loss,
            "" if noisy_loss is None else f" noisy {noisy_loss:.4f} ({noisy_size})",
            result.f1,
        )

        if result.f1 > best_f1:
            best_f1 = result.f1
            best_epoch = epoch
            best_values = [t.value.copy() for t in all_tensors]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= run.patience:
                reason = "early-stop"
                break

    assert best_values is not None
    for tensor, value in zip(all_tensors, best_values):
        np.copyto(tensor.value, value)

    report = TrainReport(
        run_id=run.run_id,
        seed=run.seed,
        epochs=records,
        best_epoch=best_epoch,
        best_f1=best_f1,
        stopped_epoch=epoch,
        stopping_reason=reason,
    )
    return tagger, report


# ---------------------------------------------------------------------------
# inference


def predict(
    tagger: Tagger,
    sentences: Sequence[Sentence],
    providers: Mapping[str, VectorProvider],
    frequency: FrequencyTable,
    batch_size: int = BATCH_SIZE,
) -> list[list[EntitySpan]]:
    """Decoded entity spans for each sentence, in input order."""
    if not sentences:
        return []
    tagged = with_guessed_pos(sentences)
    prep = Preprocessor(tagger.spec, providers, frequency, tagger.pos_vocab)
    out: list[list[EntitySpan] | None] = [None] * len(tagged)
    lengths = [len(s.tokens) for s in tagged]
    for bucket in length_buckets(lengths, batch_size):
        batch = prep.batch([tagged[i] for i in bucket], cache=False)
        for i, labels in zip(bucket, tagger.predict_batch(batch)):
            out[i] = decode_bio(labels, tagged[i], tagger.labels)
    return out


def evaluate(
    tagger: Tagger,
    corpus: AnnotatedCorpus,
    providers: Mapping[str, VectorProvider],
    frequency: FrequencyTable,
    exclude: Sequence[str] = (),
) -> EvalResult:
    pred = predict(tagger, corpus.sentences, providers, frequency)
    return entity_f1(corpus.spans(), pred, exclude)


# ---------------------------------------------------------------------------
# run files


RUN_FILE_KEYS = (
    "run",
    "train_dir",
    "dev_dir",
    "noisy_corpus",
    "gazetteer",
    "seed",
    "max_epochs",
    "patience",
    "out_dir",
    "sources.ft",
    "sources.ft_domain",
    "sources.bpe",
)


def load_run_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment, blank lines are skipped."""
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, value = key.strip(), value.strip()
        if key not in RUN_FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _int_key(raw: Mapping[str, str], key: str, default: int) -> int:
    if key not in raw:
        return default
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"configuration key {key} must be an integer, got {raw[key]!r}") from None


def run_config_from_file(raw: Mapping[str, str], override_run: str | None = None) -> RunConfig:
    run_id = override_run or raw.get("run")
    if not run_id:
        raise ConfigError("no run preset: set `run =` in the configuration or pass --run")
    return run_config(
        run_id,
        seed=_int_key(raw, "seed", DEFAULT_SEED),
        max_epochs=_int_key(raw, "max_epochs", MAX_EPOCHS),
        patience=_int_key(raw, "patience", PATIENCE),
    )
