import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divrec.text import (
    PAD,
    UNK,
    EmbeddingTable,
    Vocab,
    cosine_similarity_matrix,
    load_embeddings,
    semantic_embedding,
    semantic_embeddings,
    similarity_matrix,
    table_from_vectors,
    tokenize,
)


@pytest.fixture
def vocab():
    return Vocab(["hello", "world", "news"])


class TestTokenize:
    def test_empty(self, vocab):
        assert tokenize("", vocab, 4) == [PAD] * 4

    def test_lowercase_and_punctuation(self, vocab):
        assert tokenize("Hello, world", vocab, 4) == [vocab.id("hello"), vocab.id("world"), PAD, PAD]

    def test_oov(self, vocab):
        assert tokenize("hello zebra", vocab, 3) == [vocab.id("hello"), UNK, PAD]

    def test_truncates(self, vocab):
        assert tokenize("news news news", vocab, 2) == [vocab.id("news")] * 2


class TestVocab:
    def test_specials(self):
        v = Vocab.build(["b a b"])
        assert v.itos[:2] == ["<pad>", "<unk>"]
        assert v.itos[2:] == ["b", "a"]  # by frequency then alphabetical

    def test_save_load(self, tmp_path, vocab):
        vocab.save(tmp_path / "v.txt")
        assert Vocab.load(tmp_path / "v.txt") == vocab


class TestLoadEmbeddings:
    def test_empty_file(self, tmp_path, vocab):
        path = tmp_path / "e.txt"
        path.write_text("")
        table = load_embeddings(path, vocab, dim=5)
        assert table.vectors.shape == (5, 5)
        assert np.all(table.vectors[PAD] == 0)
        assert np.all(np.abs(table.vectors[2:]).sum(axis=1) > 0)

    def test_exact_rows(self, tmp_path, vocab):
        path = tmp_path / "e.txt"
        path.write_text("hello 1 2 3\nworld 4 5 6\nnews -1 0.5 2\n")
        table = load_embeddings(path, vocab)
        np.testing.assert_array_equal(table.vectors[vocab.id("hello")], [1, 2, 3])
        np.testing.assert_array_equal(table.vectors[vocab.id("world")], [4, 5, 6])
        np.testing.assert_array_equal(table.vectors[vocab.id("news")], [-1, 0.5, 2])

    def test_inconsistent_dim_names_line(self, tmp_path, vocab):
        path = tmp_path / "e.txt"
        path.write_text("hello 1 2 3\nworld 4 5\n")
        with pytest.raises(ValueError, match=r"e\.txt:2"):
            load_embeddings(path, vocab)

    def test_oov_rows_seeded(self, tmp_path):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(48)]  # 48 + PAD + UNK = 50 ids
        vocab = Vocab(words)
        in_file = words[:38]  # 10 of the 48 words (plus UNK) are missing
        lines = [w + " " + " ".join(f"{x:.5f}" for x in rng.normal(size=300)) for w in in_file]
        path = tmp_path / "e.txt"
        path.write_text("\n".join(lines) + "\n")
        a = load_embeddings(path, vocab, seed=4)
        b = load_embeddings(path, vocab, seed=4)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        for line in lines:
            w, *vals = line.split()
            np.testing.assert_array_equal(a.vectors[vocab.id(w)], np.array(vals, dtype=float))
        c = load_embeddings(path, vocab, seed=5)
        missing = [vocab.id(w) for w in words[38:]]
        assert not np.allclose(a.vectors[missing], c.vectors[missing])
        assert len(missing) == 10

    def test_in_memory_matches_file(self, tmp_path, vocab):
        path = tmp_path / "e.txt"
        path.write_text("hello 1 2\nnews 3 4\n")
        vecs = {"hello": np.array([1.0, 2.0]), "news": np.array([3.0, 4.0])}
        np.testing.assert_array_equal(load_embeddings(path, vocab, seed=2).vectors,
                                      table_from_vectors(vecs, vocab, seed=2).vectors)


class TestSemanticEmbedding:
    def setup_method(self):
        self.table = EmbeddingTable(np.random.default_rng(1).normal(size=(6, 4)))
        self.table.vectors[PAD] = 0

    def test_single_token(self):
        np.testing.assert_array_equal(semantic_embedding([3, PAD, PAD], self.table), self.table.vectors[3])

    def test_opposite_vectors_cancel(self):
        self.table.vectors[4] = -self.table.vectors[3]
        np.testing.assert_allclose(semantic_embedding([3, 4], self.table), 0.0, atol=1e-15)

    def test_matches_loop(self):
        ids = [2, 3, 5, PAD]
        expect = np.zeros(4)
        for i in (2, 3, 5):
            expect += self.table.vectors[i]
        np.testing.assert_allclose(semantic_embedding(ids, self.table), expect / 3, rtol=1e-14)

    def test_all_pad(self):
        np.testing.assert_array_equal(semantic_embedding([PAD, PAD], self.table), 0.0)

    def test_batched_matches_single(self):
        ids = np.array([[2, 3, PAD], [PAD, PAD, PAD], [5, 5, 4]])
        batch = semantic_embeddings(ids, self.table)
        for row, vec in zip(ids, batch):
            np.testing.assert_allclose(vec, semantic_embedding(row, self.table), rtol=1e-14, atol=1e-15)

    @given(st.permutations([2, 3, 4, 5, 3]))
    def test_order_invariant(self, ids):
        np.testing.assert_allclose(semantic_embedding(ids, self.table),
                                   semantic_embedding([2, 3, 4, 5, 3], self.table), rtol=1e-13)


class TestSimilarity:
    def test_identical(self):
        s = cosine_similarity_matrix(np.array([[1.0, 2.0], [1.0, 2.0]]))
        assert s[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        s = cosine_similarity_matrix(np.array([[1.0, 0.0], [0.0, 3.0]]))
        assert s[0, 1] == 0.0

    def test_zero_vector(self):
        s = cosine_similarity_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_array_equal(s, [[1.0, 0.0], [0.0, 1.0]])

    def test_matches_double_loop(self):
        e = np.random.default_rng(2).normal(size=(5, 7))
        s = cosine_similarity_matrix(e)
        for i in range(5):
            for j in range(5):
                ref = sum(a * b for a, b in zip(e[i], e[j])) / (
                    sum(a * a for a in e[i]) ** 0.5 * sum(b * b for b in e[j]) ** 0.5)
                assert s[i, j] == pytest.approx(ref, abs=1e-12)

    @given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31 - 1))
    @settings(max_examples=60)
    def test_symmetric_unit_diagonal_bounded(self, m, dim, seed):
        rng = np.random.default_rng(seed)
        e = rng.normal(size=(m, dim))
        e[rng.random(m) < 0.2] = 0.0
        s = cosine_similarity_matrix(e)
        assert np.array_equal(s, s.T)
        assert np.all(np.diag(s) == 1.0)
        assert np.all(np.abs(s) <= 1.0 + 1e-12)

    def test_from_tokens(self):
        table = EmbeddingTable(np.eye(4))
        table.vectors[PAD] = 0
        s = similarity_matrix(np.array([[2, PAD], [3, PAD], [2, 2]]), table)
        np.testing.assert_allclose(s, [[1, 0, 1], [0, 1, 0], [1, 0, 1]], atol=1e-15)
