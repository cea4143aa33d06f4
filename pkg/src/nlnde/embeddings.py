"""Embedding sources: word vectors, subword vectors, character encoder.

Four sources feed the tagger: a trainable character BiLSTM ("char"),
general-domain word vectors ("ft"), in-domain word vectors ("ft_domain"),
and byte-pair subword vectors ("bpe").  Pretrained tables are loaded from
text files and frozen; a seeded hash provider stands in when no files are
available so the pipeline stays runnable offline.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from nlnde import autodiff as ad
from nlnde.autodiff import Tensor
from nlnde.corpus import Token
from nlnde.errors import ConfigError, DataFormatError
from nlnde.features import FEATURE_DIM
from nlnde.recurrent import LstmParams, lstm_scan, uniform_init

log = logging.getLogger("nlnde.embeddings")

WORD = "word"
SUBWORD = "subword"

CHAR_EMBED_DIM = 50
CHAR_HIDDEN = 25  # per direction, so the character representation is also 50-dim

# canonical source names with their representation widths
STANDARD_DIMS = {"char": 50, "ft": 100, "ft_domain": 100, "bpe": 300}


class VectorProvider(Protocol):
    name: str
    dim: int
    kind: str

    def vector(self, word: str) -> np.ndarray: ...


class EmbeddingTable:
    """Immutable key → vector map loaded from a text file."""

    def __init__(self, name: str, dim: int, vectors: dict[str, np.ndarray], kind: str = WORD):
        if kind not in (WORD, SUBWORD):
            raise ConfigError(f"unknown table kind {kind!r}")
        for key, vec in vectors.items():
            if vec.shape != (dim,):
                raise DataFormatError(f"table {name}: vector for {key!r} has shape {vec.shape}, want ({dim},)")
        self.name = name
        self.dim = dim
        self.kind = kind
        self.vectors = vectors
        self.source_path: str | None = None
        self._zero = np.zeros(dim)
        self._max_key_len = max((len(k) for k in vectors), default=1)

    def __len__(self) -> int:
        return len(self.vectors)

    def vector(self, word: str) -> np.ndarray:
        if self.kind == WORD:
            return lookup_word(self, word)
        return lookup_subword(self, word)

    def checksum(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for key in sorted(self.vectors):
            h.update(key.encode("utf-8"))
            h.update(self.vectors[key].tobytes())
        return int.from_bytes(h.digest(), "little")


def load_vectors(path: str | Path, expected_dim: int, name: str | None = None, kind: str = WORD) -> EmbeddingTable:
    """One `key v1 .. v_dim` entry per line, optional `count dim` header."""
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and all(p.lstrip("-").isdigit() for p in head):
            declared = int(head[1])
            if declared != expected_dim:
                raise DataFormatError(f"{path}:1: header declares dim {declared}, expected {expected_dim}")
            start = 1
    for lineno in range(start, len(lines)):
        line = lines[lineno].rstrip("\n")
        if not line.strip():
            continue
        parts = line.split(" ")
        key = parts[0]
        values = parts[1:]
        if len(values) != expected_dim:
            raise DataFormatError(
                f"{path}:{lineno + 1}: {len(values)} components for {key!r}, expected {expected_dim}"
            )
        try:
            vec = np.array([float(v) for v in values])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno + 1}: unparsable float in entry {key!r}") from None
        if key in vectors:
            log.warning("%s:%d: duplicate key %r, keeping the later entry", path, lineno + 1, key)
        vectors[key] = vec
    table = EmbeddingTable(name or path.stem, expected_dim, vectors, kind)
    table.source_path = str(path)
    return table


def lookup_word(table: EmbeddingTable, word: str) -> np.ndarray:
    """Exact match, then lowercase, then the zero vector.  Never mutates."""
    vec = table.vectors.get(word)
    if vec is None:
        vec = table.vectors.get(word.lower())
    return table._zero if vec is None else vec


def lookup_subword(table: EmbeddingTable, word: str) -> np.ndarray:
    """Greedy longest-match segmentation, mean over all pieces.

    A character that starts no vocabulary entry becomes an unknown
    single-character piece contributing the zero vector; it still counts in
    the mean, so coverage matters.
    """
    pieces: list[np.ndarray] = []
    i = 0
    while i < len(word):
        match = None
        limit = min(len(word), i + table._max_key_len)
        for j in range(limit, i, -1):
            candidate = word[i:j]
            if candidate in table.vectors:
                match = candidate
                break
        if match is None:
            pieces.append(table._zero)
            i += 1
        else:
            pieces.append(table.vectors[match])
            i += len(match)
    if not pieces:
        return table._zero
    return np.mean(pieces, axis=0)


class HashEmbeddings:
    """Deterministic stand-in for a pretrained table: seeded hash → unit vector.

    Every word maps to the same vector in every process, with no files on
    disk.  Dot products between distinct words are small but nonzero, which
    is enough structure for the training pipeline to learn from.
    """

    def __init__(self, name: str, dim: int, seed: int = 0, kind: str = WORD):
        self.name = name
        self.dim = dim
        self.kind = kind
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, word: str) -> np.ndarray:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        digest = hashlib.blake2b(f"{self.seed}:{self.name}:{word}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        vec = rng.normal(size=self.dim)
        vec /= np.linalg.norm(vec)
        self._cache[word] = vec
        return vec

    def checksum(self) -> int:
        digest = hashlib.blake2b(
            f"{self.name}:{self.dim}:{self.seed}".encode("utf-8"), digest_size=8
        ).digest()
        return int.from_bytes(digest, "little")


@dataclass
class CharEncoderParams:
    """Trainable character vocabulary embedding plus one BiLSTM direction pair."""

    char_ids: dict[str, int]
    embedding: Tensor          # (vocab, embed_dim); id 0 is the unknown character
    fwd: LstmParams
    bwd: LstmParams

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        alphabet: list[str],
        embed_dim: int = CHAR_EMBED_DIM,
        hidden: int = CHAR_HIDDEN,
    ) -> "CharEncoderParams":
        char_ids = {ch: i + 1 for i, ch in enumerate(sorted(set(alphabet)))}
        vocab = len(char_ids) + 1
        return cls(
            char_ids=char_ids,
            embedding=ad.parameter(uniform_init(rng, (vocab, embed_dim), embed_dim), "char.embedding"),
            fwd=LstmParams.create(rng, embed_dim, hidden, "char.fwd"),
            bwd=LstmParams.create(rng, embed_dim, hidden, "char.bwd"),
        )

    @property
    def output_dim(self) -> int:
        return 2 * self.fwd.hidden

    def tensors(self) -> list[Tensor]:
        return [self.embedding] + self.fwd.tensors() + self.bwd.tensors()


def encode_char_batch(words: list[str], params: CharEncoderParams) -> Tensor:
    """(B, 50): concatenated final forward/backward states for each word."""
    if not words or any(not w for w in words):
        raise DataFormatError("encode_char_batch: empty word")
    bsz = len(words)
    max_len = max(len(w) for w in words)
    ids = np.zeros((bsz, max_len), dtype=np.int64)
    mask = np.zeros((bsz, max_len))
    for r, word in enumerate(words):
        for c, ch in enumerate(word):
            ids[r, c] = params.char_ids.get(ch, 0)
        mask[r, : len(word)] = 1.0
    steps = [ad.take_rows(params.embedding, ids[:, t]) for t in range(max_len)]
    _, last_f = lstm_scan(steps, mask, params.fwd, reverse=False)
    _, last_b = lstm_scan(steps, mask, params.bwd, reverse=True)
    return ad.concat([last_f, last_b], axis=1)


def encode_chars(word: str, params: CharEncoderParams) -> Tensor:
    """Single word → vector of length 50 (2 × 25 final states)."""
    return ad.reshape(encode_char_batch([word], params), (params.output_dim,))


@dataclass(frozen=True)
class RepresentationSpec:
    """Which sources feed the tagger and how they combine."""

    sources: tuple[str, ...]
    combine: str  # CONCAT | ATTENTION
    include_features_in_input: bool = False

    def __post_init__(self):
        if self.combine not in ("CONCAT", "ATTENTION"):
            raise ConfigError(f"unknown combine mode {self.combine!r}")
        if not self.sources:
            raise ConfigError("representation needs at least one source")
        if self.combine == "ATTENTION" and self.include_features_in_input:
            raise ConfigError("attention mode conditions on features; they are not concatenated")

    def output_dim(self, dims: Mapping[str, int]) -> int:
        missing = [s for s in self.sources if s not in dims]
        if missing:
            raise ConfigError(f"no dimension known for source(s) {missing}")
        if self.combine == "ATTENTION":
            return max(dims[s] for s in self.sources)
        total = sum(dims[s] for s in self.sources)
        return total + FEATURE_DIM if self.include_features_in_input else total


def assemble(
    token: Token,
    spec: RepresentationSpec,
    sources: Mapping[str, VectorProvider],
    feature_vector: np.ndarray | None = None,
    attention_fn=None,
) -> np.ndarray:
    """Combine per-source vectors for one token, outside the training graph.

    CONCAT joins sources in declaration order, then the realized feature
    vector when include_features_in_input is set.  ATTENTION delegates to the
    model's attention parameters through attention_fn(per-source vectors,
    features).
    """
    missing = [s for s in spec.sources if s not in sources]
    if missing:
        raise ConfigError(f"missing source(s) {missing}")
    parts = [np.asarray(sources[s].vector(token.surface), dtype=np.float64) for s in spec.sources]
    if spec.combine == "ATTENTION":
        if attention_fn is None:
            raise ConfigError("attention combination needs the model's attention parameters")
        return attention_fn(parts, feature_vector)
    if spec.include_features_in_input:
        if feature_vector is None:
            raise ConfigError("spec includes features in input but none were given")
        parts.append(np.asarray(feature_vector, dtype=np.float64))
    return np.concatenate(parts)


def default_providers(seed: int, dims: Mapping[str, int] | None = None) -> dict[str, VectorProvider]:
    """Hash-based stand-ins for every lookup source (everything except char)."""
    dims = dict(dims or STANDARD_DIMS)
    return {
        name: HashEmbeddings(name, dim, seed)
        for name, dim in dims.items()
        if name != "char"
    }
