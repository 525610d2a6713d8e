import numpy as np
import pytest

from core.errors import EmptyCorpusError, OverLengthError
from core.text_embed import (UNK, EmbeddingMatrix, Vocabulary, Word2VecTrainer, embed_sequence,
                             load_embedding_text, mean_embedding, save_embedding_text, tokenize,
                             train_word2vec)


def _cluster_corpus(seed=0, per_cluster=100, length=8):
    rng = np.random.default_rng(seed)
    corpus = []
    for prefix in ("sun", "rain"):
        words = [f"{prefix}{k}" for k in range(5)]
        corpus += [[str(w) for w in rng.choice(words, size=length)] for _ in range(per_cluster)]
    order = rng.permutation(len(corpus))
    return [corpus[k] for k in order]


def _cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_tokenize():
    assert tokenize("Hello, World! Don't   stop…") == ["hello", "world", "don't", "stop"]
    assert tokenize("  ... !! ") == []


def test_vocabulary_ordering_and_unknowns():
    vocab = Vocabulary.build([["b", "a", "c"], ["a", "c"], ["c"]])
    assert vocab.words == [UNK, "c", "a", "b"]
    assert vocab.counts == [0, 3, 2, 1]
    assert vocab.index("zebra") == 0
    np.testing.assert_array_equal(vocab.encode(["a", "zebra"]), [2, 0])


def test_vocabulary_file(tmp_path):
    vocab = Vocabulary.build([["x", "y", "y"]])
    vocab.save(tmp_path / "vocab.tsv")
    loaded = Vocabulary.load(tmp_path / "vocab.tsv")
    assert loaded.words == vocab.words and loaded.counts == vocab.counts


def test_word2vec_separates_co_occurring_clusters():
    vocab, emb = train_word2vec(_cluster_corpus(), dims=10, window=2, negatives=5, epochs=5, seed=0)
    sun = [emb.row(vocab.index(f"sun{k}")) for k in range(5)]
    rain = [emb.row(vocab.index(f"rain{k}")) for k in range(5)]
    within = np.mean([_cosine(a, b) for group in (sun, rain) for i, a in enumerate(group)
                      for b in group[i + 1:]])
    across = np.mean([_cosine(a, b) for a in sun for b in rain])
    assert within > across


@pytest.mark.parametrize("variant", ["skipgram", "cbow"])
def test_word2vec_is_deterministic(variant):
    corpus = _cluster_corpus(per_cluster=10)
    first = train_word2vec(corpus, dims=6, window=2, epochs=2, seed=7, variant=variant)[1]
    second = train_word2vec(corpus, dims=6, window=2, epochs=2, seed=7, variant=variant)[1]
    np.testing.assert_array_equal(first.vectors, second.vectors)


def test_word2vec_single_sentence_and_loss_history():
    trainer = Word2VecTrainer(dims=4, window=2, epochs=3, seed=1)
    vocab, emb = trainer.train([["la", "la", "love", "you"]])
    assert len(vocab) == 4
    assert emb.vectors.shape == (4, 4)
    np.testing.assert_array_equal(emb.row(0), 0.0)
    assert len(trainer.losses) == 3


@pytest.mark.parametrize("variant", ["skipgram", "cbow"])
def test_word2vec_loss_does_not_rise_across_epochs(variant):
    trainer = Word2VecTrainer(dims=10, window=2, negatives=5, epochs=5, seed=0, variant=variant)
    trainer.train(_cluster_corpus())
    losses = trainer.losses
    assert len(losses) == 5
    for before, after in zip(losses, losses[1:]):
        assert after <= 1.05 * before
    assert losses[-1] < losses[0]


def test_word2vec_rejects_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        train_word2vec([[], []])
    with pytest.raises(ValueError):
        Word2VecTrainer(variant="glove")


def test_embed_sequence_pads_and_maps_unknowns():
    vocab = Vocabulary(["<unk>", "hi", "there"], [0, 1, 1])
    emb = EmbeddingMatrix(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]]))
    out = embed_sequence(["there", "nope", "hi"], vocab, emb, length=5)
    assert out.shape == (2, 5)
    np.testing.assert_array_equal(out[:, 0], [3.0, 4.0])
    np.testing.assert_array_equal(out[:, 1], [0.0, 0.0])
    np.testing.assert_array_equal(out[:, 2], [1.0, 2.0])
    np.testing.assert_array_equal(out[:, 3:], 0.0)
    with pytest.raises(OverLengthError):
        embed_sequence(["hi"] * 6, vocab, emb, length=5)


def test_mean_embedding():
    vocab = Vocabulary(["<unk>", "up", "down"], [0, 1, 1])
    emb = EmbeddingMatrix(np.array([[0.0, 0.0], [1.0, -2.0], [-1.0, 2.0]]))
    np.testing.assert_array_equal(mean_embedding(["up", "down"], vocab, emb), [0.0, 0.0])
    np.testing.assert_array_equal(mean_embedding([], vocab, emb), [0.0, 0.0])
    np.testing.assert_array_equal(mean_embedding(["up"], vocab, emb), [1.0, -2.0])


def test_mean_embedding_ignores_token_order(rng):
    corpus = _cluster_corpus(per_cluster=10)
    vocab, emb = train_word2vec(corpus, dims=6, window=2, epochs=1, seed=2)
    tokens = corpus[0] + corpus[1] + ["unseen"]
    shuffled = [tokens[k] for k in rng.permutation(len(tokens))]
    np.testing.assert_allclose(mean_embedding(shuffled, vocab, emb), mean_embedding(tokens, vocab, emb),
                               rtol=0, atol=1e-12)


def test_embedding_text_without_unk_row(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("happy 0.5 1.0\nsad -0.5 -1.0\n", encoding="utf-8")
    vocab, emb = load_embedding_text(path)
    assert vocab.words == [UNK, "happy", "sad"]
    np.testing.assert_array_equal(emb.row(0), [0.0, 0.0])
    np.testing.assert_array_equal(emb.row(vocab.index("sad")), [-0.5, -1.0])

    save_embedding_text(vocab, emb, tmp_path / "again.txt")
    again_vocab, again_emb = load_embedding_text(tmp_path / "again.txt")
    assert again_vocab.words == vocab.words
    np.testing.assert_array_equal(again_emb.vectors, emb.vectors)
