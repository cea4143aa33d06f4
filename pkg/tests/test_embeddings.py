"""Vector tables, subword pooling, hash fallback, char encoder, assembly."""

import numpy as np
import pytest

from nlnde import autodiff as ad
from nlnde.corpus import Token
from nlnde.embeddings import (
    STANDARD_DIMS,
    CharEncoderParams,
    EmbeddingTable,
    HashEmbeddings,
    RepresentationSpec,
    assemble,
    default_providers,
    encode_char_batch,
    encode_chars,
    load_vectors,
    lookup_subword,
    lookup_word,
)
from nlnde.errors import ConfigError, DataFormatError
from tests._gradcheck import check_gradients


def write_vec_file(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadVectors:
    def test_basic(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["casa 1.0 2.0 3.0", "perro -1.0 0.5 0.25"])
        table = load_vectors(p, 3)
        assert len(table) == 2
        np.testing.assert_array_equal(table.vectors["casa"], [1.0, 2.0, 3.0])
        assert table.dim == 3

    def test_header_accepted(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["2 3", "a 1 2 3", "b 4 5 6"])
        assert len(load_vectors(p, 3)) == 2

    def test_header_dim_mismatch(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["2 4", "a 1 2 3 4"])
        with pytest.raises(DataFormatError):
            load_vectors(p, 3)

    def test_short_line_names_line_number(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["a 1 2 3", "b 1 2"])
        with pytest.raises(DataFormatError, match=":2"):
            load_vectors(p, 3)

    def test_bad_float_rejected(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["a 1 x 3"])
        with pytest.raises(DataFormatError):
            load_vectors(p, 3)

    def test_duplicate_key_last_wins(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["a 1 1", "a 2 2"])
        table = load_vectors(p, 2)
        np.testing.assert_array_equal(table.vectors["a"], [2.0, 2.0])


class TestLookupWord:
    def table(self):
        return EmbeddingTable("t", 2, {"glucosa": np.array([1.0, 2.0]), "TP53": np.array([3.0, 4.0])})

    def test_exact_match(self):
        np.testing.assert_array_equal(lookup_word(self.table(), "TP53"), [3.0, 4.0])

    def test_lowercase_fallback(self):
        np.testing.assert_array_equal(lookup_word(self.table(), "Glucosa"), [1.0, 2.0])

    def test_oov_zero(self):
        np.testing.assert_array_equal(lookup_word(self.table(), "xyz"), [0.0, 0.0])

    def test_pure(self):
        t = self.table()
        a = lookup_word(t, "Glucosa")
        b = lookup_word(t, "Glucosa")
        np.testing.assert_array_equal(a, b)
        assert t.vectors.keys() == {"glucosa", "TP53"}


class TestLookupSubword:
    def test_hand_average(self):
        t = EmbeddingTable("t", 2, {"ab": np.array([1.0, 1.0]), "c": np.array([3.0, 3.0])}, kind="subword")
        np.testing.assert_allclose(lookup_subword(t, "abc"), [2.0, 2.0])

    def test_single_piece(self):
        t = EmbeddingTable("t", 2, {"abc": np.array([5.0, 6.0])}, kind="subword")
        np.testing.assert_array_equal(lookup_subword(t, "abc"), [5.0, 6.0])

    def test_greedy_prefers_longest(self):
        t = EmbeddingTable(
            "t", 1,
            {"a": np.array([1.0]), "ab": np.array([10.0]), "b": np.array([100.0])},
            kind="subword",
        )
        # "ab" wins over "a"+"b": mean is 10, not 50.5
        np.testing.assert_allclose(lookup_subword(t, "ab"), [10.0])

    def test_unknown_chars_count_in_mean(self):
        t = EmbeddingTable("t", 1, {"a": np.array([4.0])}, kind="subword")
        # pieces: "a" → 4 and unknown "z" → 0; mean 2
        np.testing.assert_allclose(lookup_subword(t, "az"), [2.0])

    def test_no_coverage_zero(self):
        t = EmbeddingTable("t", 2, {"a": np.array([1.0, 1.0])}, kind="subword")
        np.testing.assert_array_equal(lookup_subword(t, "zzz"), [0.0, 0.0])


class TestHashEmbeddings:
    def test_deterministic_across_instances(self):
        a = HashEmbeddings("ft", 16, seed=7).vector("casa")
        b = HashEmbeddings("ft", 16, seed=7).vector("casa")
        np.testing.assert_array_equal(a, b)

    def test_unit_norm(self):
        v = HashEmbeddings("ft", 32, seed=1).vector("palabra")
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_varies_by_word_name_seed(self):
        base = HashEmbeddings("ft", 16, seed=1).vector("casa")
        assert not np.allclose(base, HashEmbeddings("ft", 16, seed=1).vector("perro"))
        assert not np.allclose(base, HashEmbeddings("bpe", 16, seed=1).vector("casa"))
        assert not np.allclose(base, HashEmbeddings("ft", 16, seed=2).vector("casa"))

    def test_default_providers_cover_lookup_sources(self):
        provs = default_providers(seed=3)
        assert set(provs) == {"ft", "ft_domain", "bpe"}
        assert provs["bpe"].dim == STANDARD_DIMS["bpe"]


def char_params(seed=0, alphabet="abcdefgh"):
    rng = np.random.Generator(np.random.PCG64(seed))
    return CharEncoderParams.create(rng, list(alphabet))


class TestCharEncoder:
    def test_output_length_50(self):
        out = encode_chars("abc", char_params())
        assert out.shape == (50,)

    def test_deterministic(self):
        a = encode_chars("gafedcba", char_params(seed=5)).value
        b = encode_chars("gafedcba", char_params(seed=5)).value
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_singletons(self):
        p = char_params()
        words = ["abc", "h", "defga"]
        batch = encode_char_batch(words, p).value
        for i, w in enumerate(words):
            np.testing.assert_allclose(batch[i], encode_chars(w, p).value, atol=1e-12)

    def test_unknown_char_uses_reserved_row(self):
        p = char_params(alphabet="ab")
        a = encode_chars("aXb", p).value
        b = encode_chars("aYb", p).value
        np.testing.assert_array_equal(a, b)

    def test_empty_word_rejected(self):
        with pytest.raises(DataFormatError):
            encode_chars("", char_params())

    def test_gradients_match_finite_differences(self):
        rng = np.random.Generator(np.random.PCG64(3))
        p = CharEncoderParams.create(rng, list("abcd"), embed_dim=5, hidden=3)
        params = {
            "emb": p.embedding,
            "fw": p.fwd.w_in, "fr": p.fwd.w_rec, "fb": p.fwd.bias,
            "bw": p.bwd.w_in, "br": p.bwd.w_rec, "bb": p.bwd.bias,
        }

        def loss_fn():
            out = encode_char_batch(["abc", "dd"], p)
            return (out * out).sum().item()

        ad.zero_grads(params.values())
        out = encode_char_batch(["abc", "dd"], p)
        ad.backward((out * out).sum())
        check_gradients(loss_fn, params)


class TestRepresentationSpec:
    def test_concat_dims_per_preset(self):
        dims = STANDARD_DIMS
        s1 = RepresentationSpec(("char", "ft", "bpe"), "CONCAT")
        s2 = RepresentationSpec(("char", "ft", "ft_domain", "bpe"), "CONCAT")
        s3 = RepresentationSpec(("char", "ft", "ft_domain", "bpe"), "CONCAT", include_features_in_input=True)
        s4 = RepresentationSpec(("char", "ft", "ft_domain", "bpe"), "ATTENTION")
        assert s1.output_dim(dims) == 450
        assert s2.output_dim(dims) == 550
        assert s3.output_dim(dims) == 600
        assert s4.output_dim(dims) == 300

    def test_attention_dim_below_concat(self):
        dims = STANDARD_DIMS
        att = RepresentationSpec(("char", "ft", "ft_domain", "bpe"), "ATTENTION")
        cat = RepresentationSpec(("char", "ft", "ft_domain", "bpe"), "CONCAT")
        assert att.output_dim(dims) < cat.output_dim(dims)

    def test_attention_with_features_in_input_rejected(self):
        with pytest.raises(ConfigError):
            RepresentationSpec(("ft",), "ATTENTION", include_features_in_input=True)

    def test_unknown_combine_rejected(self):
        with pytest.raises(ConfigError):
            RepresentationSpec(("ft",), "SUM")

    def test_missing_dim_rejected(self):
        with pytest.raises(ConfigError):
            RepresentationSpec(("nope",), "CONCAT").output_dim(STANDARD_DIMS)


class TestAssemble:
    def test_concat_order_and_features(self):
        tok = Token("casa", 0, 4)
        sources = {
            "ft": HashEmbeddings("ft", 4, 0),
            "bpe": HashEmbeddings("bpe", 6, 0),
        }
        spec = RepresentationSpec(("ft", "bpe"), "CONCAT", include_features_in_input=True)
        feats = np.arange(50, dtype=np.float64)
        out = assemble(tok, spec, sources, feats)
        assert out.shape == (60,)
        np.testing.assert_array_equal(out[:4], sources["ft"].vector("casa"))
        np.testing.assert_array_equal(out[4:10], sources["bpe"].vector("casa"))
        np.testing.assert_array_equal(out[10:], feats)

    def test_missing_source_rejected(self):
        spec = RepresentationSpec(("ft", "bpe"), "CONCAT")
        with pytest.raises(ConfigError):
            assemble(Token("x", 0, 1), spec, {"ft": HashEmbeddings("ft", 4, 0)})

    def test_attention_needs_model(self):
        spec = RepresentationSpec(("ft",), "ATTENTION")
        with pytest.raises(ConfigError):
            assemble(Token("x", 0, 1), spec, {"ft": HashEmbeddings("ft", 4, 0)})

    def test_attention_delegates(self):
        spec = RepresentationSpec(("ft", "bpe"), "ATTENTION")
        sources = {"ft": HashEmbeddings("ft", 4, 0), "bpe": HashEmbeddings("bpe", 6, 0)}
        calls = {}

        def fake_attention(parts, feats):
            calls["n"] = len(parts)
            return np.zeros(6)

        out = assemble(Token("x", 0, 1), spec, sources, None, attention_fn=fake_attention)
        assert calls["n"] == 2
        assert out.shape == (6,)

    def test_tables_not_mutated_by_lookups(self, tmp_path):
        p = tmp_path / "v.txt"
        write_vec_file(p, ["casa 1 2", "perro 3 4"])
        table = load_vectors(p, 2)
        before = table.checksum()
        for w in ["casa", "Perro", "zzz", "CASA"]:
            lookup_word(table, w)
        assert table.checksum() == before
