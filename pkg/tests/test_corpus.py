"""Tests for dataset loading, sentence splitting, vocabulary, and encoding."""

import json

import numpy as np
import pytest

from extsum.corpus import (
    PAD_ID,
    PAD_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    Document,
    Vocab,
    build_vocab,
    encode_document,
    load_jsonl,
    load_vocab,
    save_jsonl,
    save_vocab,
    split_sentences,
    tokenize,
)
from extsum.errors import (
    ConfigError,
    DegenerateDocumentError,
    ParseError,
    ValidationError,
)


def _doc(sentences, abstract=("ref.",), labels=None):
    return Document(id="t", sentences=list(sentences), abstract=list(abstract), labels=labels)


class TestTokenize:
    """Corpus tokenizer: lowercased words with punctuation as separate tokens."""

    def test_punctuation_split_off(self):
        assert tokenize("A cat.") == ["a", "cat", "."]

    def test_empty(self):
        assert tokenize("   ") == []

    def test_apostrophe(self):
        assert tokenize("it's fine") == ["it", "'", "s", "fine"]


class TestSplitSentences:
    def test_empty_input(self):
        assert split_sentences("") == []

    def test_single_sentence(self):
        assert split_sentences("One sentence.") == ["One sentence."]

    def test_two_sentences(self):
        assert split_sentences("A cat. It sat.") == ["A cat.", "It sat."]

    def test_terminator_without_uppercase_does_not_split(self):
        # "e.g. foo" has no uppercase after the periods
        assert split_sentences("See e.g. the appendix.") == ["See e.g. the appendix."]

    def test_question_and_exclamation(self):
        assert split_sentences("Really? Yes! Done.") == ["Really?", "Yes!", "Done."]

    def test_content_preserved_modulo_whitespace(self):
        """Joining the pieces loses nothing but whitespace."""
        texts = [
            "Alpha beta. Gamma delta! Epsilon?",
            "No terminator at all",
            "Trailing spaces.   Next one.  ",
            "Numbers like 3.5 do not split. But Sentences do.",
        ]
        for text in texts:
            parts = split_sentences(text)
            assert "".join("".join(p.split()) for p in parts) == "".join(text.split())
            assert all(p.strip() for p in parts)


class TestBuildVocab:
    def test_frequency_order(self):
        docs = [_doc(["a a a b"])]
        v = build_vocab(docs, max_size=3)
        assert v.tokens == [PAD_TOKEN, UNK_TOKEN, "a"]

    def test_empty_corpus_keeps_reserved_only(self):
        v = build_vocab([], max_size=5)
        assert v.tokens == [PAD_TOKEN, UNK_TOKEN]

    def test_tie_breaks_lexicographically(self):
        docs = [_doc(["y x", "x y"])]
        v = build_vocab(docs, max_size=3)
        assert "x" in v
        assert "y" not in v

    def test_max_size_below_three_rejected(self):
        with pytest.raises(ConfigError):
            build_vocab([], max_size=2)

    def test_counts_exclude_abstract(self):
        """Abstract text never enters the vocabulary."""
        docs = [_doc(["left left"], abstract=["right right right"])]
        v = build_vocab(docs, max_size=4)
        assert "left" in v
        assert "right" not in v


class TestVocab:
    def test_reserved_ids(self):
        v = build_vocab([], max_size=3)
        assert v.id_for(PAD_TOKEN) == PAD_ID
        assert v.id_for(UNK_TOKEN) == UNK_ID

    def test_unknown_token_maps_to_unk(self):
        v = build_vocab([], max_size=3)
        assert v.id_for("missing") == UNK_ID

    def test_token_for_out_of_range(self):
        v = build_vocab([], max_size=3)
        with pytest.raises(ValidationError):
            v.token_for(99)

    def test_bad_reserved_rows_rejected(self):
        with pytest.raises(ValidationError):
            Vocab(["<pad>", "oops"])

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValidationError):
            Vocab(["<pad>", "<unk>", "a", "a"])

    def test_dense_bijection(self):
        v = build_vocab([_doc(["a b c"])], max_size=6)
        for i, tok in enumerate(v.tokens):
            assert v.id_for(tok) == i
            assert v.token_for(i) == tok

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab([_doc(["alpha beta gamma alpha"])], max_size=5)
        path = tmp_path / "vocab.txt"
        save_vocab(v, path)
        v2 = load_vocab(path)
        assert v2.tokens == v.tokens

    def test_load_rejects_wrong_reserved_lines(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("<unk>\n<pad>\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_vocab(path)


class TestEncodeDocument:
    def _vocab(self, *sentences):
        return build_vocab([_doc(list(sentences))], max_size=64)

    def test_concatenated_spans(self):
        v = self._vocab("a b", "c")
        t = encode_document(_doc(["a b", "c"]), v, max_len=10)
        assert t.spans == [(0, 2), (2, 3)]
        assert [v.token_for(i) for i in t.token_ids] == ["a", "b", "c"]

    def test_oov_maps_to_unk(self):
        v = build_vocab([], max_size=3)
        t = encode_document(_doc(["zzz"]), v, max_len=10)
        assert list(t.token_ids) == [UNK_ID]
        assert t.spans == [(0, 1)]

    def test_truncates_at_sentence_boundary(self):
        """A sentence that does not fully fit ends the document."""
        v = self._vocab("a b", "c d")
        t = encode_document(_doc(["a b", "c d"]), v, max_len=3)
        assert t.spans == [(0, 2)]
        assert t.kept_indices == [0]

    def test_empty_token_sentences_dropped_and_recorded(self):
        v = self._vocab("a b")
        t = encode_document(_doc(["a b", "   ", "a"]), v, max_len=10)
        assert t.kept_indices == [0, 2]
        assert t.dropped_empty == [1]
        assert t.spans == [(0, 2), (2, 3)]

    def test_everything_dropped_is_degenerate(self):
        v = build_vocab([], max_size=3)
        with pytest.raises(DegenerateDocumentError):
            encode_document(_doc(["  ", "  "]), v, max_len=10)

    def test_first_sentence_longer_than_budget_is_degenerate(self):
        v = self._vocab("a b c d")
        with pytest.raises(DegenerateDocumentError):
            encode_document(_doc(["a b c d"]), v, max_len=2)

    def test_spans_partition_token_range(self):
        """Spans cover [0, len) with no gaps or overlaps, on random documents."""
        rng = np.random.default_rng(42)
        words = ["w%d" % i for i in range(12)]
        docs = []
        for _ in range(40):
            n_sent = int(rng.integers(1, 8))
            sents = [
                " ".join(rng.choice(words, size=rng.integers(1, 9)))
                for _ in range(n_sent)
            ]
            docs.append(_doc(sents))
        v = build_vocab(docs, max_size=24)
        for doc in docs:
            try:
                t = encode_document(doc, v, max_len=int(rng.integers(4, 40)))
            except DegenerateDocumentError:
                continue  # budget smaller than the first sentence
            cursor = 0
            for start, end in t.spans:
                assert start == cursor
                assert end > start
                cursor = end
            assert cursor == len(t.token_ids)
            assert len(t.spans) == len(t.kept_indices)


class TestDocumentValidate:
    def test_label_length_mismatch(self):
        with pytest.raises(ValidationError):
            _doc(["a.", "b."], labels=[1]).validate()

    def test_label_values_restricted(self):
        with pytest.raises(ValidationError):
            _doc(["a."], labels=[2]).validate()

    def test_blank_sentence_rejected(self):
        with pytest.raises(ValidationError):
            _doc(["   "]).validate()


class TestJsonl:
    def test_minimal_line(self, tmp_path):
        path = tmp_path / "in.jsonl"
        path.write_text('{"sentences":["a."],"abstract":["a."]}\n', encoding="utf-8")
        docs = load_jsonl(path)
        assert len(docs) == 1
        assert docs[0].sentences == ["a."]
        assert docs[0].id == "1"  # defaults to the line number

    def test_missing_abstract_names_line(self, tmp_path):
        path = tmp_path / "in.jsonl"
        path.write_text('{"sentences":["a."]}\n', encoding="utf-8")
        with pytest.raises(ParseError, match="line 1"):
            load_jsonl(path)

    def test_label_mismatch_names_line(self, tmp_path):
        path = tmp_path / "in.jsonl"
        path.write_text(
            '{"sentences":["a."],"abstract":["a."]}\n'
            '{"sentences":["a."],"abstract":["a."],"labels":[1,0]}\n',
            encoding="utf-8",
        )
        with pytest.raises(ValidationError, match="line 2"):
            load_jsonl(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "in.jsonl"
        path.write_text("not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 1"):
            load_jsonl(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "in.jsonl"
        path.write_text(
            '{"sentences":["a."],"abstract":["a."]}\n\n'
            '{"id":"two","sentences":["b."],"abstract":["b."]}\n',
            encoding="utf-8",
        )
        docs = load_jsonl(path)
        assert [d.id for d in docs] == ["1", "two"]

    def test_round_trip_fixed_point(self, tmp_path):
        """load → save → load returns the same documents and bytes."""
        src = tmp_path / "a.jsonl"
        records = [
            {"id": "x", "sentences": ["A cat.", "It sat."], "abstract": ["A cat."], "labels": [1, 0]},
            {"id": "y", "sentences": ["Only one."], "abstract": ["One."]},
        ]
        src.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        docs1 = load_jsonl(src)
        mid = tmp_path / "b.jsonl"
        save_jsonl(docs1, mid)
        docs2 = load_jsonl(mid)
        assert docs1 == docs2
        out = tmp_path / "c.jsonl"
        save_jsonl(docs2, out)
        assert mid.read_bytes() == out.read_bytes()

    def test_save_extra_fields(self, tmp_path):
        docs = [_doc(["a."], labels=[1])]
        path = tmp_path / "out.jsonl"
        save_jsonl(docs, path, extra_fields=[{"oracle_score": 0.5}])
        rec = json.loads(path.read_text(encoding="utf-8"))
        assert rec["oracle_score"] == 0.5
        assert rec["labels"] == [1]
