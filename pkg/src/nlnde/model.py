"""The tagger: attention over embedding sources, BiLSTM, CRF, noisy channel.

Word representations are built per batch from a character BiLSTM, frozen
lookup tables, and (optionally) a 50-dim feature vector.  Sources combine by
plain concatenation or by learned attention that projects every source to a
common width and mixes them with feature-conditioned softmax weights.  The
sentence encoder is a BiLSTM with 256 units per direction.  Clean data
trains a CRF output layer; distantly labeled data trains a per-token softmax
head whose output distribution passes through a trainable row-stochastic
channel matrix modeling the annotation noise.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from nlnde import autodiff as ad
from nlnde import __version__
from nlnde.autodiff import Tensor
from nlnde.corpus import LabelCatalog, Sentence
from nlnde.embeddings import (
    CHAR_EMBED_DIM,
    CHAR_HIDDEN,
    CharEncoderParams,
    EmbeddingTable,
    HashEmbeddings,
    RepresentationSpec,
    VectorProvider,
    encode_char_batch,
    load_vectors,
)
from nlnde.errors import ConfigError, DataFormatError, ModelFileError
from nlnde.features import FEATURE_DIM, POS_DIM, FrequencyTable, PosVocabulary, featurize
from nlnde.recurrent import BiLstmParams, bilstm_scan, uniform_init

ATTENTION_HIDDEN = 128
WORD_HIDDEN = 256  # per direction

MODEL_MAGIC = b"NLNDEMODEL"
MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# attention over sources (the lower-dimensional alternative to concatenation)


@dataclass
class AttentionParams:
    """Per-source projections to width E plus the scoring network."""

    q: list[Tensor]  # one (E, E_i) per source, spec order, no bias
    w: Tensor        # (H, E)
    u: Tensor        # (H, F)
    v: Tensor        # (1, H)
    out_dim: int

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        source_dims: Sequence[int],
        hidden: int = ATTENTION_HIDDEN,
        feature_dim: int = FEATURE_DIM,
    ) -> "AttentionParams":
        out = max(source_dims)
        q = [
            ad.parameter(uniform_init(rng, (out, d), d), f"attention.q{i}")
            for i, d in enumerate(source_dims)
        ]
        return cls(
            q=q,
            w=ad.parameter(uniform_init(rng, (hidden, out), out), "attention.w"),
            u=ad.parameter(uniform_init(rng, (hidden, feature_dim), feature_dim), "attention.u"),
            v=ad.parameter(uniform_init(rng, (1, hidden), hidden), "attention.v"),
            out_dim=out,
        )

    def tensors(self) -> list[Tensor]:
        return list(self.q) + [self.w, self.u, self.v]


def attention_combine_batch(
    parts: Sequence[Tensor], feats: Tensor, params: AttentionParams
) -> tuple[Tensor, Tensor]:
    """parts: per-source (B, E_i); feats: (B, F).  Returns (B, E) and (B, n) weights."""
    if len(parts) != len(params.q):
        raise ConfigError(f"{len(parts)} sources for {len(params.q)} projections")
    mapped = [p @ ad.transpose(params.q[i]) for i, p in enumerate(parts)]
    cond = feats @ ad.transpose(params.u)  # (B, H)
    scores = []
    for x in mapped:
        z = ad.tanh(x @ ad.transpose(params.w) + cond) @ ad.transpose(params.v)  # (B, 1)
        scores.append(z)
    weights = ad.softmax(ad.concat(scores, axis=1), axis=1)  # (B, n)
    combined = None
    for i, x in enumerate(mapped):
        term = weights[:, i : i + 1] * x
        combined = term if combined is None else combined + term
    return combined, weights


def attention_select(
    embeddings: Sequence[Tensor | np.ndarray],
    f: Tensor | np.ndarray,
    params: AttentionParams,
) -> tuple[Tensor, Tensor]:
    """Single token: per-source vectors and a feature vector → (E,), (n,) weights."""
    if not embeddings:
        raise ConfigError("attention needs at least one source")
    parts = []
    for i, e in enumerate(embeddings):
        t = e if isinstance(e, Tensor) else ad.constant(e)
        if t.shape != (params.q[i].shape[1],):
            raise ConfigError(f"source {i} has shape {t.shape}, projection wants ({params.q[i].shape[1]},)")
        parts.append(ad.reshape(t, (1, t.shape[0])))
    ft = f if isinstance(f, Tensor) else ad.constant(f)
    ft = ad.reshape(ft, (1, ft.shape[-1]))
    combined, weights = attention_combine_batch(parts, ft, params)
    return ad.reshape(combined, (params.out_dim,)), ad.reshape(weights, (len(parts),))


# ---------------------------------------------------------------------------
# sentence encoder


def bilstm_encode(representations: Tensor | np.ndarray, params: BiLstmParams) -> Tensor:
    """(T, D) per-token inputs → (T, 2H) concatenated direction states."""
    rep = representations if isinstance(representations, Tensor) else ad.constant(representations)
    if rep.ndim != 2 or rep.shape[0] == 0:
        raise DataFormatError("bilstm_encode wants a non-empty (T, D) input")
    t_len = rep.shape[0]
    steps = [rep[t : t + 1, :] for t in range(t_len)]
    mask = np.ones((1, t_len))
    per_pos, _ = bilstm_scan(steps, mask, params)
    return ad.concat(per_pos, axis=0)


# ---------------------------------------------------------------------------
# CRF output layer


@dataclass
class CrfLayer:
    """Emission projection plus transition table with start/stop rows.

    The table is stored dense as (L+2)²; row L is the start state, column
    L+1 the stop state.  Scoring only ever reads the legal slices, so the
    illegal cells (into start, out of stop) never enter any sum; the
    `transitions` view shows them as -inf.
    """

    proj_w: Tensor  # (hidden, L)
    proj_b: Tensor  # (L,)
    trans: Tensor   # (L+2, L+2)
    n_labels: int

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int, n_labels: int) -> "CrfLayer":
        return cls(
            proj_w=ad.parameter(uniform_init(rng, (hidden, n_labels), hidden), "crf.proj_w"),
            proj_b=ad.parameter(np.zeros(n_labels), "crf.proj_b"),
            trans=ad.parameter(np.zeros((n_labels + 2, n_labels + 2)), "crf.trans"),
            n_labels=n_labels,
        )

    @property
    def start(self) -> int:
        return self.n_labels

    @property
    def stop(self) -> int:
        return self.n_labels + 1

    @property
    def transitions(self) -> np.ndarray:
        """Display view: structurally impossible moves shown as -inf."""
        view = self.trans.value.copy()
        view[:, self.start] = -np.inf
        view[self.stop, :] = -np.inf
        return view

    def tensors(self) -> list[Tensor]:
        return [self.proj_w, self.proj_b, self.trans]

    def project(self, hidden: Tensor) -> Tensor:
        return hidden @ self.proj_w + self.proj_b


def _check_gold(gold: Sequence[int], n_labels: int) -> None:
    for g in gold:
        if not 0 <= int(g) < n_labels:
            raise DataFormatError(f"label id {g} out of range [0, {n_labels})")


def crf_nll_batch(
    emissions: Sequence[Tensor], gold: np.ndarray, mask: np.ndarray, crf: CrfLayer
) -> Tensor:
    """Per-sentence negative log likelihood, shape (B,).

    emissions: T tensors of shape (B, L); gold: (B, T) ints (padding 0);
    mask: (B, T) floats.  log Z runs the forward recurrence in log space with
    the usual freeze-at-padding trick; the gold path score adds emission and
    transition terms under the same mask.
    """
    n = crf.n_labels
    width = n + 2
    bsz, t_len = gold.shape
    _check_gold(gold[mask > 0.5], n)
    inner = crf.trans[:n, :n]
    start_row = crf.trans[crf.start, :n]
    stop_col = crf.trans[:n, crf.stop]

    alpha = emissions[0] + ad.reshape(start_row, (1, n))
    for t in range(1, t_len):
        prev = ad.reshape(alpha, (bsz, n, 1))
        step = ad.reshape(inner, (1, n, n)) + ad.reshape(emissions[t], (bsz, 1, n))
        new = ad.logsumexp(prev + step, axis=1)
        m = mask[:, t : t + 1] > 0.5
        alpha = ad.where(m, new, alpha)

    lengths = mask.sum(axis=1).astype(np.int64)
    last_gold = gold[np.arange(bsz), lengths - 1]
    log_z = ad.logsumexp(alpha + ad.reshape(stop_col, (1, n)), axis=1)  # (B,)

    rows = np.arange(bsz)
    em_sum = None
    for t in range(t_len):
        picked = ad.take_flat(emissions[t], rows * n + gold[:, t]) * ad.constant(mask[:, t])
        em_sum = picked if em_sum is None else em_sum + picked
    start_score = ad.take_flat(crf.trans, np.full(bsz, crf.start) * width + gold[:, 0])
    stop_score = ad.take_flat(crf.trans, last_gold * width + np.full(bsz, crf.stop))
    trans_sum = None
    for t in range(1, t_len):
        idx = gold[:, t - 1] * width + gold[:, t]
        term = ad.take_flat(crf.trans, idx) * ad.constant(mask[:, t])
        trans_sum = term if trans_sum is None else trans_sum + term
    score = em_sum + start_score + stop_score
    if trans_sum is not None:
        score = score + trans_sum
    return log_z - score


def crf_nll(emissions: Tensor | np.ndarray, gold: Sequence[int], crf: CrfLayer) -> Tensor:
    """One sentence: (T, L) emissions and a gold label sequence → scalar loss."""
    em = emissions if isinstance(emissions, Tensor) else ad.constant(emissions)
    t_len, n = em.shape
    if len(gold) != t_len:
        raise DataFormatError(f"{len(gold)} gold labels for {t_len} emission rows")
    _check_gold(gold, crf.n_labels)
    steps = [em[t : t + 1, :] for t in range(t_len)]
    gold_arr = np.asarray(gold, dtype=np.int64).reshape(1, t_len)
    nll = crf_nll_batch(steps, gold_arr, np.ones((1, t_len)), crf)
    return ad.reshape(nll, ())


def viterbi_decode(emissions: Tensor | np.ndarray, crf: CrfLayer) -> list[int]:
    """Highest-scoring label sequence; ties resolve to the lowest label id."""
    em = emissions.value if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] == 0:
        raise DataFormatError("viterbi_decode wants a non-empty (T, L) matrix")
    n = crf.n_labels
    trans = crf.trans.value
    inner = trans[:n, :n]
    delta = trans[crf.start, :n] + em[0]
    back: list[np.ndarray] = []
    for t in range(1, em.shape[0]):
        cand = delta[:, None] + inner  # (prev, next)
        best_prev = np.argmax(cand, axis=0)  # first max = lowest id
        delta = cand[best_prev, np.arange(n)] + em[t]
        back.append(best_prev)
    delta = delta + trans[:n, crf.stop]
    path = [int(np.argmax(delta))]
    for best_prev in reversed(back):
        path.append(int(best_prev[path[-1]]))
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# per-token softmax head and the noisy channel on top of it


@dataclass
class SoftmaxHead:
    w: Tensor  # (hidden, L)
    b: Tensor  # (L,)

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int, n_labels: int) -> "SoftmaxHead":
        return cls(
            w=ad.parameter(uniform_init(rng, (hidden, n_labels), hidden), "head.w"),
            b=ad.parameter(np.zeros(n_labels), "head.b"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


def softmax_head(hidden: Tensor | np.ndarray, params: SoftmaxHead) -> Tensor:
    """Hidden vector(s) → strictly positive label distribution(s)."""
    h = hidden if isinstance(hidden, Tensor) else ad.constant(hidden)
    solo = h.ndim == 1
    if solo:
        h = ad.reshape(h, (1, h.shape[0]))
    probs = ad.softmax(h @ params.w + params.b, axis=1)
    return ad.reshape(probs, (probs.shape[1],)) if solo else probs


@dataclass
class NoisyChannel:
    """Trainable logits whose row-softmax gives p(observed label | true label)."""

    logits: Tensor  # (L, L)

    @classmethod
    def create(cls, n_labels: int) -> "NoisyChannel":
        return cls(logits=ad.parameter(np.zeros((n_labels, n_labels)), "channel.logits"))

    @classmethod
    def identity(cls, n_labels: int, scale: float = 60.0) -> "NoisyChannel":
        """Numerically exact pass-through: off-diagonal mass below 1e-24."""
        channel = cls.create(n_labels)
        channel.logits.value[...] = scale * np.eye(n_labels)
        return channel

    @property
    def n_labels(self) -> int:
        return self.logits.shape[0]

    def rows(self) -> Tensor:
        return ad.softmax(self.logits, axis=1)

    def matrix(self) -> np.ndarray:
        return self.rows().value

    def tensors(self) -> list[Tensor]:
        return [self.logits]


def noisy_channel_forward(clean: Tensor | np.ndarray, channel: NoisyChannel) -> Tensor:
    """p(observed=j|x) = Σ_i p(observed=j|true=i) p(true=i|x)."""
    c = clean if isinstance(clean, Tensor) else ad.constant(clean)
    solo = c.ndim == 1
    if solo:
        c = ad.reshape(c, (1, c.shape[0]))
    out = c @ channel.rows()
    return ad.reshape(out, (out.shape[1],)) if solo else out


CHANNEL_INIT_EPS = 1e-6


def init_channel(confusion) -> NoisyChannel:
    """Channel whose normalized rows reproduce the (smoothed) confusion rows."""
    probs = np.asarray(getattr(confusion, "probs", confusion), dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
        raise ConfigError(f"confusion matrix must be square, got {probs.shape}")
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ConfigError("confusion matrix rows must be distributions")
    channel = NoisyChannel.create(probs.shape[0])
    channel.logits.value[...] = np.log(probs + CHANNEL_INIT_EPS)
    return channel


# ---------------------------------------------------------------------------
# dropout


def dropout(v: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors pre-scaled by 1/(1-p); identity at inference."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return v
    keep = (rng.random(v.shape) >= p).astype(np.float64) / (1.0 - p)
    return v * ad.constant(keep)


# ---------------------------------------------------------------------------
# the assembled tagger


@dataclass
class Batch:
    """Padded, preprocessed input for a forward pass."""

    sentences: list[Sentence]
    words: list[list[str]]            # per row, padded with a placeholder
    mask: np.ndarray                  # (B, T) floats
    gold: np.ndarray                  # (B, T) ints, 0 at padding
    sources: dict[str, np.ndarray]    # name → (B, T, dim), lookup sources only
    pos_ids: np.ndarray               # (B, T)
    feature_onehots: np.ndarray       # (B, T, 30): length, frequency, shape

    @property
    def size(self) -> int:
        return len(self.sentences)

    @property
    def max_len(self) -> int:
        return self.mask.shape[1]


@dataclass
class TaggerParams:
    """Every trainable tensor, in the fixed creation/serialization order."""

    char: CharEncoderParams
    attention: AttentionParams | None
    pos_embedding: Tensor
    encoder: BiLstmParams
    crf: CrfLayer
    head: SoftmaxHead
    channel: NoisyChannel

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        spec: RepresentationSpec,
        dims: Mapping[str, int],
        alphabet: list[str],
        n_labels: int,
        n_pos: int,
        word_hidden: int = WORD_HIDDEN,
        char_embed: int = CHAR_EMBED_DIM,
        char_hidden: int = CHAR_HIDDEN,
        attention_hidden: int = ATTENTION_HIDDEN,
    ) -> "TaggerParams":
        char = CharEncoderParams.create(rng, alphabet, char_embed, char_hidden)
        eff_dims = dict(dims)
        eff_dims["char"] = char.output_dim
        attention = None
        if spec.combine == "ATTENTION":
            attention = AttentionParams.create(
                rng, [eff_dims[s] for s in spec.sources], attention_hidden
            )
        pos_embedding = ad.parameter(
            uniform_init(rng, (n_pos, POS_DIM), POS_DIM), "pos_embedding"
        )
        in_dim = spec.output_dim(eff_dims)
        encoder = BiLstmParams.create(rng, in_dim, word_hidden, "encoder")
        crf = CrfLayer.create(rng, 2 * word_hidden, n_labels)
        head = SoftmaxHead.create(rng, 2 * word_hidden, n_labels)
        channel = NoisyChannel.create(n_labels)
        return cls(char, attention, pos_embedding, encoder, crf, head, channel)

    def manifest(self) -> list[tuple[str, Tensor]]:
        pairs: list[tuple[str, Tensor]] = []
        for t in self.char.tensors():
            pairs.append((t.name, t))
        if self.attention is not None:
            for t in self.attention.tensors():
                pairs.append((t.name, t))
        pairs.append((self.pos_embedding.name, self.pos_embedding))
        for t in self.encoder.tensors():
            pairs.append((t.name, t))
        for t in self.crf.tensors():
            pairs.append((t.name, t))
        for t in self.head.tensors():
            pairs.append((t.name, t))
        for t in self.channel.tensors():
            pairs.append((t.name, t))
        return pairs

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.manifest()]


def one_hot_block(length_bins: np.ndarray, freq_bins: np.ndarray, shape_bins: np.ndarray) -> np.ndarray:
    """(B, T) index triples → (B, T, 30) stacked one-hots."""
    eye = np.eye(10)
    return np.concatenate([eye[length_bins], eye[freq_bins], eye[shape_bins]], axis=-1)


PAD_WORD = "·"


def build_batch(
    sentences: list[Sentence],
    golds: list[list[int]] | None,
    spec: RepresentationSpec,
    providers: Mapping[str, VectorProvider],
    frequency: FrequencyTable,
    pos_vocab: PosVocabulary,
) -> Batch:
    """Pad, featurize, and run the frozen lookups for a group of sentences."""
    bsz = len(sentences)
    if bsz == 0:
        raise DataFormatError("empty batch")
    t_len = max(len(s.tokens) for s in sentences)
    words = [[PAD_WORD] * t_len for _ in range(bsz)]
    mask = np.zeros((bsz, t_len))
    gold = np.zeros((bsz, t_len), dtype=np.int64)
    pos_ids = np.zeros((bsz, t_len), dtype=np.int64)
    length_bins = np.zeros((bsz, t_len), dtype=np.int64)
    freq_bins = np.zeros((bsz, t_len), dtype=np.int64)
    shape_bins = np.zeros((bsz, t_len), dtype=np.int64)
    lookup_names = [s for s in spec.sources if s != "char"]
    missing = [s for s in lookup_names if s not in providers]
    if missing:
        raise ConfigError(f"missing source(s) {missing}")
    sources = {
        name: np.zeros((bsz, t_len, providers[name].dim)) for name in lookup_names
    }
    for b, sent in enumerate(sentences):
        if golds is not None and len(golds[b]) != len(sent.tokens):
            raise DataFormatError(
                f"{len(golds[b])} labels for {len(sent.tokens)} tokens in doc {sent.doc_id!r}"
            )
        for t, tok in enumerate(sent.tokens):
            mask[b, t] = 1.0
            if golds is not None:
                gold[b, t] = golds[b][t]
            feats = featurize(tok, frequency, pos_vocab)
            pos_ids[b, t] = feats.pos_id
            length_bins[b, t] = feats.length_bin
            freq_bins[b, t] = feats.freq_bin
            shape_bins[b, t] = feats.shape_class
            words[b][t] = tok.surface
            for name in lookup_names:
                sources[name][b, t] = providers[name].vector(tok.surface)
    return Batch(
        sentences=sentences,
        words=words,
        mask=mask,
        gold=gold,
        sources=sources,
        pos_ids=pos_ids,
        feature_onehots=one_hot_block(length_bins, freq_bins, shape_bins),
    )


@dataclass
class Tagger:
    """Parameters plus the frozen context needed to run them."""

    params: TaggerParams
    spec: RepresentationSpec
    labels: LabelCatalog
    pos_vocab: PosVocabulary
    dims: dict[str, int]
    dropout_p: float = 0.5
    meta: dict = field(default_factory=dict)

    def _features(self, batch: Batch, t: int) -> Tensor:
        pos_vec = ad.take_rows(self.params.pos_embedding, batch.pos_ids[:, t])
        onehots = ad.constant(batch.feature_onehots[:, t, :])
        return ad.concat([pos_vec, onehots], axis=1)  # (B, 50)

    def _char_vectors(self, batch: Batch) -> list[Tensor]:
        """One (B, char_dim) tensor per position, from a single deduplicated pass."""
        unique: list[str] = []
        index: dict[str, int] = {}
        flat_ids = np.zeros(batch.size * batch.max_len, dtype=np.int64)
        k = 0
        for b in range(batch.size):
            for t in range(batch.max_len):
                w = batch.words[b][t]
                if w not in index:
                    index[w] = len(unique)
                    unique.append(w)
                flat_ids[k] = index[w]
                k += 1
        encoded = encode_char_batch(unique, self.params.char)  # (U, char_dim)
        t_len = batch.max_len
        return [
            ad.take_rows(encoded, flat_ids[np.arange(batch.size) * t_len + t])
            for t in range(t_len)
        ]

    def representations(
        self, batch: Batch, training: bool, rng: np.random.Generator
    ) -> tuple[list[Tensor], list[Tensor] | None]:
        """Per-position (B, rep_dim) inputs and, in attention mode, (B, n) weights."""
        char_vecs = self._char_vectors(batch)
        reps: list[Tensor] = []
        weights: list[Tensor] | None = [] if self.spec.combine == "ATTENTION" else None
        for t in range(batch.max_len):
            parts: list[Tensor] = []
            for name in self.spec.sources:
                if name == "char":
                    parts.append(char_vecs[t])
                else:
                    parts.append(ad.constant(batch.sources[name][:, t, :]))
            if self.spec.combine == "ATTENTION":
                feats = self._features(batch, t)
                combined, w = attention_combine_batch(parts, feats, self.params.attention)
                assert weights is not None
                weights.append(w)
                rep = combined
            else:
                if self.spec.include_features_in_input:
                    parts.append(self._features(batch, t))
                rep = ad.concat(parts, axis=1)
            reps.append(dropout(rep, self.dropout_p, training, rng))
        return reps, weights

    def encode(self, batch: Batch, training: bool, rng: np.random.Generator) -> list[Tensor]:
        reps, _ = self.representations(batch, training, rng)
        hidden, _ = bilstm_scan(reps, batch.mask, self.params.encoder)
        return hidden

    def clean_loss(self, batch: Batch, training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
        """Mean per-sentence CRF negative log likelihood."""
        rng = rng or np.random.default_rng(0)
        hidden = self.encode(batch, training, rng)
        emissions = [self.params.crf.project(h) for h in hidden]
        nll = crf_nll_batch(emissions, batch.gold, batch.mask, self.params.crf)
        return nll.mean()

    def noisy_loss(self, batch: Batch, training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
        """Masked token-mean cross-entropy of the channeled softmax head."""
        rng = rng or np.random.default_rng(0)
        hidden = self.encode(batch, training, rng)
        rows = self.params.channel.rows()
        total = None
        for t in range(batch.max_len):
            clean = ad.softmax(hidden[t] @ self.params.head.w + self.params.head.b, axis=1)
            noisy = clean @ rows
            picked = ad.take_flat(
                ad.log(noisy), np.arange(batch.size) * self.labels_count + batch.gold[:, t]
            )
            term = -picked * ad.constant(batch.mask[:, t])
            total = term if total is None else total + term
        return total.sum() * (1.0 / float(batch.mask.sum()))

    @property
    def labels_count(self) -> int:
        return len(self.labels)

    def predict_batch(self, batch: Batch) -> list[list[int]]:
        rng = np.random.default_rng(0)
        hidden = self.encode(batch, training=False, rng=rng)
        emissions = [self.params.crf.project(h) for h in hidden]
        stacked = np.stack([e.value for e in emissions], axis=1)  # (B, T, L)
        out = []
        for b, sent in enumerate(batch.sentences):
            out.append(viterbi_decode(stacked[b, : len(sent.tokens)], self.params.crf))
        return out

    def attention_weights(self, batch: Batch) -> np.ndarray:
        """(B, T, n) source weights at inference settings."""
        if self.spec.combine != "ATTENTION":
            raise ConfigError("this run configuration does not use attention")
        rng = np.random.default_rng(0)
        _, weights = self.representations(batch, training=False, rng=rng)
        assert weights is not None
        return np.stack([w.value for w in weights], axis=1)


# ---------------------------------------------------------------------------
# serialization


def _provider_config(providers: Mapping[str, VectorProvider]) -> dict:
    out = {}
    for name, p in providers.items():
        if isinstance(p, HashEmbeddings):
            out[name] = {"provider": "hash", "dim": p.dim, "seed": p.seed, "kind": p.kind}
        elif isinstance(p, EmbeddingTable):
            path = getattr(p, "source_path", None)
            if path is None:
                raise ConfigError(f"table {name!r} has no source path recorded; cannot serialize")
            out[name] = {"provider": "file", "dim": p.dim, "path": str(path), "kind": p.kind}
        else:
            raise ConfigError(f"cannot serialize provider {type(p).__name__} for source {name!r}")
    return out


def _providers_from_config(config: dict) -> dict[str, VectorProvider]:
    out: dict[str, VectorProvider] = {}
    for name, c in config.items():
        if c["provider"] == "hash":
            out[name] = HashEmbeddings(name, int(c["dim"]), int(c["seed"]), c.get("kind", "word"))
        else:
            table = load_vectors(c["path"], int(c["dim"]), name, c.get("kind", "word"))
            table.source_path = c["path"]  # type: ignore[attr-defined]
            out[name] = table
    return out


def save_model(
    tagger: Tagger,
    path: str | Path,
    providers: Mapping[str, VectorProvider],
    frequency: FrequencyTable,
    seed: int,
) -> None:
    """Magic, version, JSON header, length-prefixed float64 blobs, CRC32."""
    manifest = tagger.params.manifest()
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "library_version": __version__,
        "spec": {
            "sources": list(tagger.spec.sources),
            "combine": tagger.spec.combine,
            "include_features_in_input": tagger.spec.include_features_in_input,
        },
        "labels": list(tagger.labels.types),
        "pos_tags": tagger.pos_vocab.tags,
        "char_vocab": sorted(tagger.params.char.char_ids, key=tagger.params.char.char_ids.get),
        "dims": dict(tagger.dims),
        "hidden": {
            "word": tagger.params.encoder.fwd.hidden,
            "char_embed": tagger.params.char.embedding.shape[1],
            "char": tagger.params.char.fwd.hidden,
            "attention": tagger.params.attention.w.shape[0] if tagger.params.attention else 0,
        },
        "dropout": tagger.dropout_p,
        "seed": seed,
        "frequency": {"counts": frequency.counts, "total": frequency.total},
        "providers": _provider_config(providers),
        "params": [[name, list(t.shape)] for name, t in manifest],
        "meta": tagger.meta,
    }
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", MODEL_FORMAT_VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=True).encode("utf-8")
    blob += struct.pack("<Q", len(meta_bytes))
    blob += meta_bytes
    for _, tensor in manifest:
        raw = np.ascontiguousarray(tensor.value, dtype="<f8").tobytes()
        blob += struct.pack("<Q", len(raw))
        blob += raw
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_model(path: str | Path) -> tuple[Tagger, dict[str, VectorProvider], FrequencyTable, dict]:
    """Reverse of save_model; verifies magic, version, structure, and CRC."""
    data = Path(path).read_bytes()
    if len(data) < len(MODEL_MAGIC) + 16 or data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFileError(f"{path}: not a model file")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ModelFileError(f"{path}: checksum mismatch; file is corrupted")
    off = len(MODEL_MAGIC)
    version = struct.unpack_from("<I", data, off)[0]
    off += 4
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"{path}: format version {version}, this build reads {MODEL_FORMAT_VERSION}")
    meta_len = struct.unpack_from("<Q", data, off)[0]
    off += 8
    try:
        meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFileError(f"{path}: unreadable metadata header: {err}") from None
    off += meta_len

    spec = RepresentationSpec(
        tuple(meta["spec"]["sources"]),
        meta["spec"]["combine"],
        meta["spec"]["include_features_in_input"],
    )
    labels = LabelCatalog(tuple(meta["labels"]))
    pos_vocab = PosVocabulary(meta["pos_tags"][1:])
    hidden = meta["hidden"]
    rng = np.random.default_rng(0)  # values are overwritten below
    params = TaggerParams.create(
        rng,
        spec,
        meta["dims"],
        meta["char_vocab"],
        len(labels),
        len(pos_vocab),
        word_hidden=hidden["word"],
        char_embed=hidden["char_embed"],
        char_hidden=hidden["char"],
        attention_hidden=hidden["attention"] or ATTENTION_HIDDEN,
    )
    manifest = params.manifest()
    declared = [[name, list(t.shape)] for name, t in manifest]
    if declared != [[n, list(map(int, s))] for n, s in meta["params"]]:
        raise ModelFileError(f"{path}: parameter manifest does not match this build")
    for _, tensor in manifest:
        if off + 8 > len(data) - 4:
            raise ModelFileError(f"{path}: truncated parameter section")
        raw_len = struct.unpack_from("<Q", data, off)[0]
        off += 8
        raw = data[off : off + raw_len]
        if len(raw) != raw_len:
            raise ModelFileError(f"{path}: truncated parameter blob for {tensor.name}")
        off += raw_len
        values = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape)
        tensor.value[...] = values
    if off != len(data) - 4:
        raise ModelFileError(f"{path}: trailing bytes after parameter section")

    tagger = Tagger(
        params=params,
        spec=spec,
        labels=labels,
        pos_vocab=pos_vocab,
        dims={k: int(v) for k, v in meta["dims"].items()},
        dropout_p=float(meta["dropout"]),
        meta=meta.get("meta", {}),
    )
    providers = _providers_from_config(meta["providers"])
    frequency = FrequencyTable(meta["frequency"]["counts"])
    if frequency.total != meta["frequency"]["total"]:
        raise ModelFileError(f"{path}: frequency counts do not match the stored total")
    return tagger, providers, frequency, meta
