"""Corpus round trips: standoff IO, token repair, BIO encode/decode, TSV."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlnde.corpus import (
    DEFAULT_CATALOG,
    AnnotatedCorpus,
    EntitySpan,
    LabelCatalog,
    Sentence,
    Token,
    corpus_from_standoff_dir,
    decode_bio,
    encode_bio,
    encode_bio_lenient,
    load_corpus_tsv,
    load_standoff,
    repair_merged_token,
    tokenize_line,
    tokenize_text,
    write_corpus_tsv,
    write_standoff,
)
from nlnde.errors import DataFormatError, SpanAlignmentError


def make_sentence(words, doc_id="d1", sep=" "):
    toks = []
    pos = 0
    for w in words:
        toks.append(Token(w, pos, pos + len(w)))
        pos += len(w) + len(sep)
    return Sentence(toks, doc_id)


class TestLabelCatalog:
    def test_default_inventory(self):
        cat = DEFAULT_CATALOG
        assert len(cat) == 9
        assert cat.labels[0] == "O"
        assert cat.id("O") == 0
        assert cat.labels == [
            "O",
            "B-PROTEINAS", "I-PROTEINAS",
            "B-NORMALIZABLES", "I-NORMALIZABLES",
            "B-NO_NORMALIZABLES", "I-NO_NORMALIZABLES",
            "B-UNCLEAR", "I-UNCLEAR",
        ]

    def test_round_trip_ids(self):
        cat = DEFAULT_CATALOG
        for i, lab in enumerate(cat.labels):
            assert cat.id(lab) == i
            assert cat.label(i) == lab

    def test_unknown_label_rejected(self):
        with pytest.raises(DataFormatError):
            DEFAULT_CATALOG.id("B-DRUG")

    def test_custom_types(self):
        cat = LabelCatalog(("A", "B"))
        assert cat.labels == ["O", "B-A", "I-A", "B-B", "I-B"]


class TestTokenizer:
    def test_words_and_punctuation(self):
        toks = tokenize_line("Se detectó TP53, según informe.")
        assert [t.surface for t in toks] == ["Se", "detectó", "TP53", ",", "según", "informe", "."]

    def test_offsets_index_source(self):
        text = "Nivel de glucosa: 7,4 mmol/L"
        for t in tokenize_line(text):
            assert text[t.start:t.end] == t.surface

    def test_one_sentence_per_line(self):
        text = "Primera frase.\n\nSegunda frase aquí."
        sents = tokenize_text(text, "doc7")
        assert len(sents) == 2
        assert all(s.doc_id == "doc7" for s in sents)
        for s in sents:
            for t in s.tokens:
                assert text[t.start:t.end] == t.surface


class TestRepairMergedToken:
    def test_splits_against_source(self):
        source = "acido urico elevado"
        tok = Token("acido_urico", 0, 11)
        parts = repair_merged_token(tok, source)
        assert [(p.surface, p.start, p.end) for p in parts] == [
            ("acido", 0, 5),
            ("urico", 6, 11),
        ]

    def test_real_underscore_kept(self):
        source = "gen_X activado"
        tok = Token("gen_X", 0, 5)
        assert repair_merged_token(tok, source) == [tok]

    def test_no_underscore_passthrough(self):
        tok = Token("simple", 3, 9)
        assert repair_merged_token(tok, "xy simple z") == [tok]

    def test_unlocatable_piece_rejected(self):
        with pytest.raises(DataFormatError):
            repair_merged_token(Token("foo_bar", 0, 7), "foo baz")


class TestBioEncode:
    def test_single_entity(self):
        sent = make_sentence(["El", "paciente", "toma", "tamoxifeno", "."])
        span = EntitySpan(17, 27, "NORMALIZABLES", "tamoxifeno")
        labels = encode_bio(sent, [span])
        cat = DEFAULT_CATALOG
        assert labels == [0, 0, 0, cat.b_id("NORMALIZABLES"), 0]

    def test_multi_token_entity(self):
        sent = make_sentence(["alfa", "beta", "gamma"])
        span = EntitySpan(0, 15, "PROTEINAS", "alfa beta gamma")
        labels = encode_bio(sent, [span])
        cat = DEFAULT_CATALOG
        assert labels == [cat.b_id("PROTEINAS"), cat.i_id("PROTEINAS"), cat.i_id("PROTEINAS")]

    def test_misaligned_span_rejected(self):
        sent = make_sentence(["alfa", "beta"])
        with pytest.raises(SpanAlignmentError):
            encode_bio(sent, [EntitySpan(0, 2, "PROTEINAS", "al")])

    def test_overlap_rejected(self):
        sent = make_sentence(["alfa", "beta", "gamma"])
        a = EntitySpan(0, 9, "PROTEINAS", "alfa beta")
        b = EntitySpan(5, 15, "UNCLEAR", "beta gamma")
        with pytest.raises(SpanAlignmentError):
            encode_bio(sent, [a, b])

    def test_lenient_drops_only_bad(self):
        sent = make_sentence(["alfa", "beta", "gamma"])
        good = EntitySpan(0, 4, "PROTEINAS", "alfa")
        bad = EntitySpan(0, 2, "UNCLEAR", "al")
        labels, dropped = encode_bio_lenient(sent, [good, bad])
        assert labels == [DEFAULT_CATALOG.b_id("PROTEINAS"), 0, 0]
        assert dropped == [bad]


class TestBioDecode:
    def test_inverse_of_encode(self):
        sent = make_sentence(["uno", "dos", "tres", "cuatro"])
        spans = [
            EntitySpan(0, 7, "UNCLEAR", "uno dos"),
            EntitySpan(13, 19, "PROTEINAS", "cuatro"),
        ]
        assert decode_bio(encode_bio(sent, spans), sent) == spans

    def test_orphan_inside_promoted(self):
        sent = make_sentence(["uno", "dos"])
        cat = DEFAULT_CATALOG
        labels = [0, cat.i_id("PROTEINAS")]
        spans = decode_bio(labels, sent)
        assert spans == [EntitySpan(4, 7, "PROTEINAS", "dos")]

    def test_type_switch_inside_run_starts_new_entity(self):
        sent = make_sentence(["uno", "dos"])
        cat = DEFAULT_CATALOG
        labels = [cat.b_id("PROTEINAS"), cat.i_id("UNCLEAR")]
        spans = decode_bio(labels, sent)
        assert spans == [
            EntitySpan(0, 3, "PROTEINAS", "uno"),
            EntitySpan(4, 7, "UNCLEAR", "dos"),
        ]

    def test_adjacent_b_b_two_entities(self):
        sent = make_sentence(["uno", "dos"])
        cat = DEFAULT_CATALOG
        labels = [cat.b_id("PROTEINAS"), cat.b_id("PROTEINAS")]
        assert len(decode_bio(labels, sent)) == 2

    def test_span_text_preserves_gaps(self):
        toks = [Token("a", 0, 1), Token("b", 4, 5)]
        sent = Sentence(toks, "d")
        cat = DEFAULT_CATALOG
        labels = [cat.b_id("UNCLEAR"), cat.i_id("UNCLEAR")]
        (span,) = decode_bio(labels, sent)
        assert span.text == "a   b"

    def test_length_mismatch_rejected(self):
        sent = make_sentence(["uno"])
        with pytest.raises(DataFormatError):
            decode_bio([0, 0], sent)


@st.composite
def sentence_and_labels(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    words = draw(st.lists(st.text(alphabet="abcéñ", min_size=1, max_size=5), min_size=n, max_size=n))
    sent = make_sentence(words)
    labels = draw(st.lists(st.integers(min_value=0, max_value=8), min_size=n, max_size=n))
    return sent, labels


class TestBioProperties:
    @settings(max_examples=200, deadline=None)
    @given(sentence_and_labels())
    def test_decode_total_and_reencodable(self, case):
        # every label sequence decodes, and the decoded spans re-encode to a
        # sequence that decodes back to the same spans (idempotent repair)
        sent, labels = case
        spans = decode_bio(labels, sent)
        relabels = encode_bio(sent, spans)
        assert decode_bio(relabels, sent) == spans

    @settings(max_examples=200, deadline=None)
    @given(sentence_and_labels())
    def test_decoded_spans_disjoint_and_in_bounds(self, case):
        sent, labels = case
        spans = sorted(decode_bio(labels, sent), key=lambda s: s.start)
        lo, hi = sent.tokens[0].start, sent.tokens[-1].end
        prev_end = lo
        for s in spans:
            assert lo <= s.start < s.end <= hi
            assert s.start >= prev_end
            prev_end = s.end


class TestStandoffIO:
    def test_round_trip(self, tmp_path):
        text = "El gen TP53 está mutado.\nSe prescribe tamoxifeno oral.\n"
        (tmp_path / "doc1.txt").write_text(text, encoding="utf-8")
        ann = "T1\tPROTEINAS 7 11\tTP53\nT2\tNORMALIZABLES 38 48\ttamoxifeno\n"
        (tmp_path / "doc1.ann").write_text(ann, encoding="utf-8")
        doc, spans = load_standoff(tmp_path / "doc1.txt", tmp_path / "doc1.ann")
        assert doc.doc_id == "doc1"
        assert len(doc.sentences) == 2
        assert spans == [
            EntitySpan(7, 11, "PROTEINAS", "TP53", "T1"),
            EntitySpan(38, 48, "NORMALIZABLES", "tamoxifeno", "T2"),
        ]
        out = tmp_path / "out.ann"
        write_standoff(spans, out)
        assert out.read_text(encoding="utf-8") == ann

    def test_mismatched_text_rejected(self, tmp_path):
        (tmp_path / "d.txt").write_text("abcdef", encoding="utf-8")
        (tmp_path / "d.ann").write_text("T1\tPROTEINAS 0 3\txyz\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_standoff(tmp_path / "d.txt", tmp_path / "d.ann")

    def test_unknown_type_rejected(self, tmp_path):
        (tmp_path / "d.txt").write_text("abcdef", encoding="utf-8")
        (tmp_path / "d.ann").write_text("T1\tDRUG 0 3\tabc\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_standoff(tmp_path / "d.txt", tmp_path / "d.ann")

    def test_non_span_lines_skipped(self, tmp_path):
        (tmp_path / "d.txt").write_text("TP53 aqui", encoding="utf-8")
        ann = "T1\tPROTEINAS 0 4\tTP53\n#1\tAnnotatorNotes T1\tcomment\n"
        (tmp_path / "d.ann").write_text(ann, encoding="utf-8")
        _, spans = load_standoff(tmp_path / "d.txt", tmp_path / "d.ann")
        assert len(spans) == 1

    def test_directory_sweep(self, tmp_path):
        (tmp_path / "a.txt").write_text("TP53 presente\n", encoding="utf-8")
        (tmp_path / "a.ann").write_text("T1\tPROTEINAS 0 4\tTP53\n", encoding="utf-8")
        (tmp_path / "b.txt").write_text("sin entidades\n", encoding="utf-8")
        (tmp_path / "b.ann").write_text("", encoding="utf-8")
        corpus = corpus_from_standoff_dir(tmp_path)
        assert len(corpus) == 2
        assert corpus.labels[0][0] == DEFAULT_CATALOG.b_id("PROTEINAS")
        assert corpus.labels[1] == [0, 0]


class TestCorpusTsv:
    def test_round_trip(self, tmp_path):
        sent1 = make_sentence(["TP53", "mutado"], doc_id="docA")
        sent2 = make_sentence(["control", "sano"], doc_id="docB")
        cat = DEFAULT_CATALOG
        corpus = AnnotatedCorpus(
            [sent1, sent2],
            [[cat.b_id("PROTEINAS"), 0], [0, 0]],
            cat,
        )
        path = tmp_path / "c.tsv"
        write_corpus_tsv(corpus, path)
        back = load_corpus_tsv(path)
        assert len(back) == 2
        assert [t.surface for t in back.sentences[0].tokens] == ["TP53", "mutado"]
        assert back.sentences[0].doc_id == "docA"
        assert back.sentences[1].doc_id == "docB"
        assert back.labels == corpus.labels

    def test_pos_column_round_trip(self, tmp_path):
        toks = [Token("uno", 0, 3, "NUM"), Token("dos", 4, 7)]
        corpus = AnnotatedCorpus([Sentence(toks, "d")], [[0, 0]])
        path = tmp_path / "c.tsv"
        write_corpus_tsv(corpus, path)
        text = path.read_text(encoding="utf-8")
        assert "uno\t0\t3\tNUM\tO" in text
        assert "dos\t4\t7\t_\tO" in text
        back = load_corpus_tsv(path)
        assert back.sentences[0].tokens[0].pos == "NUM"
        assert back.sentences[0].tokens[1].pos is None

    def test_surface_offset_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#doc d\nlargo\t0\t3\t_\tO\n\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_corpus_tsv(path)

    def test_wrong_column_count_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#doc d\nuno\t0\t3\tO\n\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_corpus_tsv(path)

    def test_unknown_label_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#doc d\nuno\t0\t3\t_\tB-DRUG\n\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_corpus_tsv(path)

    def test_meta_header_round_trip(self, tmp_path):
        corpus = AnnotatedCorpus(
            [make_sentence(["x"])], [[0]], DEFAULT_CATALOG, {"split": "train"}
        )
        path = tmp_path / "c.tsv"
        write_corpus_tsv(corpus, path)
        assert load_corpus_tsv(path).meta == {"split": "train"}
