import json

import pytest

from altrec.catalog import (
    OOV_INDEX,
    PAD_INDEX,
    Product,
    Vocabulary,
    build_vocabulary,
    encode_catalog,
    encode_product_text,
    load_catalog,
    load_vocabulary,
    save_vocabulary,
    tokenize,
    vocabulary_fingerprint,
)
from altrec.errors import DataError, DuplicateIdError


def write_catalog(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


class TestTokenize:
    def test_title_example(self):
        assert tokenize("60 Gal. Electric Air Compressor") == [
            "60", "gal", "electric", "air", "compressor",
        ]

    def test_empty(self):
        assert tokenize("") == []

    def test_pressure_example(self):
        assert tokenize("135 psi maximum pressure") == ["135", "psi", "maximum", "pressure"]

    def test_punctuation_runs(self):
        assert tokenize("a--b__c!!9.5") == ["a", "b", "c", "9", "5"]


class TestLoadCatalog:
    def test_reads_records_in_order(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        write_catalog(path, [
            {"product_id": "12345678", "title": "60 Gal. Electric Air Compressor",
             "description": "This compressor offers 135 psi maximum pressure."},
            {"product_id": "87654321", "title": "80 Gal. Compressor", "description": "Bigger."},
        ])
        products = load_catalog(path)
        assert [p.product_id for p in products] == ["12345678", "87654321"]
        assert products[0].title.startswith("60 Gal.")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text("")
        assert load_catalog(path) == []

    def test_duplicate_id_aborts(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        write_catalog(path, [
            {"product_id": "a", "title": "x", "description": "y"},
            {"product_id": "a", "title": "x2", "description": "y2"},
        ])
        with pytest.raises(DuplicateIdError):
            load_catalog(path)

    def test_malformed_lines_skipped_and_counted(self, tmp_path, caplog):
        path = tmp_path / "catalog.jsonl"
        with open(path, "w") as handle:
            handle.write('{"product_id": "a", "title": "ok", "description": "d"}\n')
            handle.write("not json\n")
            handle.write('{"product_id": "b", "description": "missing title"}\n')
            handle.write('{"product_id": "c", "title": "", "description": "empty title"}\n')
            handle.write('{"product_id": "d", "title": "ok", "description": "d"}\n')
        with caplog.at_level("WARNING"):
            products = load_catalog(path)
        assert [p.product_id for p in products] == ["a", "d"]
        assert "skipped 3 malformed" in caplog.text

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_catalog(tmp_path / "nope.jsonl")

    def test_extra_fields_ignored(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        write_catalog(path, [{"product_id": "a", "title": "t", "description": "d",
                              "attributes": {"color": "red"}}])
        assert load_catalog(path) == [Product("a", "t", "d")]


class TestBuildVocabulary:
    def test_count_threshold_met(self):
        products = [Product("1", "air compressor", "big compressor"),
                    Product("2", "compressor", "quiet")]
        vocab = build_vocabulary(products, min_count=2)
        assert "compressor" in vocab.token_to_index

    def test_below_threshold_goes_oov(self):
        products = [Product("1", "air compressor", "rare")]
        vocab = build_vocabulary(products, min_count=2)
        assert vocab.index_of("rare") == OOV_INDEX

    def test_empty_corpus(self):
        vocab = build_vocabulary([], min_count=1)
        assert vocab.size == 2

    def test_ordering_by_count_then_token(self):
        products = [Product("1", "b b a a c", "b")]
        vocab = build_vocabulary(products, min_count=1)
        # b appears 3x, a 2x, c 1x
        assert vocab.token_to_index == {"b": 2, "a": 3, "c": 4}

    def test_size_monotone_in_min_count(self):
        products = [
            Product(str(i), f"tool word{i % 5} common", f"desc word{i % 7} common thing")
            for i in range(30)
        ]
        sizes = [build_vocabulary(products, mc).size for mc in range(1, 8)]
        assert sizes == sorted(sizes, reverse=True)

    def test_indices_contiguous(self):
        products = [Product("1", "a b c d", "e f g a b")]
        vocab = build_vocabulary(products, min_count=1)
        assert sorted(vocab.token_to_index.values()) == list(range(2, vocab.size))


class TestEncodeProductText:
    def vocab(self):
        return Vocabulary(token_to_index={"60": 5, "gal": 7, "air": 8}, min_count=1)

    def test_padding(self):
        encoded = encode_product_text(Product("p", "60 gal", "air"), self.vocab(), 4, 4)
        assert encoded.title_seq == (5, 7, 0, 0)
        assert encoded.title_len == 2

    def test_unknown_token_maps_to_oov(self):
        encoded = encode_product_text(Product("p", "zzz", "air"), self.vocab(), 4, 4)
        assert encoded.title_seq[0] == OOV_INDEX

    def test_truncation(self):
        title = " ".join(["60"] * 10)
        encoded = encode_product_text(Product("p", title, "air"), self.vocab(), 4, 4)
        assert encoded.title_seq == (5, 5, 5, 5)
        assert encoded.title_len == 4

    def test_empty_title_rejected(self):
        with pytest.raises(DataError):
            encode_product_text(Product("p", "!!!", "air"), self.vocab(), 4, 4)

    def test_empty_description_rejected(self):
        with pytest.raises(DataError):
            encode_product_text(Product("p", "60", "..."), self.vocab(), 4, 4)

    def test_deterministic(self):
        product = Product("p", "60 gal air", "air gal 60")
        first = encode_product_text(product, self.vocab(), 4, 8)
        second = encode_product_text(product, self.vocab(), 4, 8)
        assert first == second

    def test_pad_never_precedes_token(self):
        import numpy as np
        rng = np.random.default_rng(0)
        words = ["60", "gal", "air", "zzz", "qq"]
        for trial in range(50):
            text = " ".join(rng.choice(words, size=rng.integers(1, 12)))
            encoded = encode_product_text(Product("p", text, text), self.vocab(), 6, 6)
            for seq, length in ((encoded.title_seq, encoded.title_len),
                                (encoded.desc_seq, encoded.desc_len)):
                assert all(idx != PAD_INDEX for idx in seq[:length])
                assert all(idx == PAD_INDEX for idx in seq[length:])


class TestVocabularyPersistence:
    def test_round_trip_and_fingerprint(self, tmp_path):
        products = [Product("1", "air compressor pump", "big compressor pump pump")]
        vocab = build_vocabulary(products, min_count=1)
        path = tmp_path / "vocab.json"
        save_vocabulary(vocab, path)
        loaded = load_vocabulary(path)
        assert loaded == vocab
        assert vocabulary_fingerprint(loaded) == vocabulary_fingerprint(vocab)


def test_encode_catalog_builds_index(product_factory):
    products = [Product("a", "air pump", "big pump"), Product("b", "gal pump", "small pump")]
    vocab = build_vocabulary(products, min_count=1)
    encoded = encode_catalog(products, vocab, 4, 4)
    assert set(encoded) == {"a", "b"}
    assert encoded["a"].title_len == 2
