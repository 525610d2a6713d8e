"""Lyrics tokenization, word2vec training and embedded lyric segments."""
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import EmptyCorpusError, OverLengthError
from .persistence import (read_embedding_text, read_vocabulary_tsv, write_embedding_text,
                          write_vocabulary_tsv)

logger = logging.getLogger(__name__)

UNK = "<unk>"
EMBEDDING_DIM = 100
SEGMENT_WORDS = 50
W2V_VARIANTS = ("skipgram", "cbow")

_STRIP = string.punctuation + "‘’“”…«»"


def tokenize(lyrics: str) -> list[str]:
    """Lowercase, split on whitespace and strip edge punctuation; inner apostrophes survive."""
    tokens = []
    for piece in lyrics.lower().split():
        token = piece.strip(_STRIP)
        if token:
            tokens.append(token)
    return tokens


@dataclass
class Vocabulary:
    """Word index with UNK at 0; remaining words ordered by descending count, then alphabetically."""
    words: list[str] = field(default_factory=lambda: [UNK])
    counts: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if not self.words or self.words[0] != UNK:
            self.words = [UNK] + list(self.words)
            self.counts = [0] + list(self.counts)
        if len(self.words) != len(self.counts):
            raise ValueError("Vocabulary words and counts differ in length")
        self._index = {w: i for i, w in enumerate(self.words)}
        if len(self._index) != len(self.words):
            raise ValueError("Vocabulary has repeated words")

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        tally: dict[str, int] = {}
        for sentence in corpus:
            for token in sentence:
                tally[token] = tally.get(token, 0) + 1
        kept = sorted((w for w, c in tally.items() if c >= min_count and w != UNK),
                      key=lambda w: (-tally[w], w))
        return cls([UNK] + kept, [0] + [tally[w] for w in kept])

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index.get(word, 0)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def save(self, path: Union[str, Path]) -> None:
        write_vocabulary_tsv(self.words, self.counts, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        words, counts = read_vocabulary_tsv(path)
        return cls(words, counts)


@dataclass
class EmbeddingMatrix:
    """One row per vocabulary index."""
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValueError(f"Embedding matrix must be [vocab, dims], got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("Embedding matrix has non-finite rows")

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def row(self, index: int) -> np.ndarray:
        return self.vectors[index]


def save_embedding_text(vocab: Vocabulary, emb: EmbeddingMatrix, path: Union[str, Path]) -> None:
    write_embedding_text(vocab.words, emb.vectors, path)


def load_embedding_text(path: Union[str, Path]) -> tuple[Vocabulary, EmbeddingMatrix]:
    """Read a ``word v1 ... vD`` file; a zero UNK row is added when the file has none."""
    words, vectors = read_embedding_text(path)
    if not words:
        raise EmptyCorpusError(f"{path}: no embedding rows")
    if words[0] != UNK:
        words = [UNK] + words
        vectors = np.vstack([np.zeros((1, vectors.shape[1])), vectors])
    counts = [0] + [1] * (len(words) - 1)
    logger.info("Loaded %d embedding rows of dimension %d from %s", len(words), vectors.shape[1], path)
    return Vocabulary(words, counts), EmbeddingMatrix(vectors)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Word2VecTrainer:
    """Word2vec with negative sampling; skip-gram by default, CBOW on request."""

    def __init__(self, dims: int = EMBEDDING_DIM, window: int = 5, negatives: int = 5, epochs: int = 5,
                 seed: int = 0, variant: str = "skipgram", alpha: float = 0.025,
                 min_alpha: float = 1e-4, min_count: int = 1, ns_exponent: float = 0.75):
        if window < 1 or negatives < 1 or epochs < 1 or dims < 1:
            raise ValueError("dims, window, negatives and epochs must be at least 1")
        if variant not in W2V_VARIANTS:
            raise ValueError(f"Unknown word2vec variant {variant!r}; expected one of {W2V_VARIANTS}")
        self.dims = dims
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.seed = seed
        self.variant = variant
        self.alpha = alpha
        self.min_alpha = min_alpha
        self.min_count = min_count
        self.ns_exponent = ns_exponent
        self.losses: list[float] = []

    def _cum_table(self, vocab: Vocabulary) -> np.ndarray:
        weights = np.array(vocab.counts, dtype=np.float64) ** self.ns_exponent
        weights[0] = 0.0
        table = np.cumsum(weights)
        return table / table[-1]

    def _update(self, syn0: np.ndarray, syn1neg: np.ndarray, hidden: np.ndarray, target: int,
                noise: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
        """One negative-sampling step; returns the input-side error and the pair loss."""
        indices = np.concatenate([[target], noise])
        labels = np.zeros(indices.size)
        labels[0] = 1.0
        out = syn1neg[indices]
        scores = out @ hidden
        probs = _sigmoid(scores)
        gain = (labels - probs) * alpha
        neu1e = gain @ out
        np.add.at(syn1neg, indices, np.outer(gain, hidden))
        loss = -np.log(max(probs[0], 1e-12)) - np.log(np.maximum(1.0 - probs[1:], 1e-12)).sum()
        return neu1e, float(loss)

    def train(self, corpus: Sequence[Sequence[str]]) -> tuple[Vocabulary, EmbeddingMatrix]:
        corpus = [list(s) for s in corpus]
        if not any(corpus):
            raise EmptyCorpusError("word2vec needs at least one token")
        vocab = Vocabulary.build(corpus, self.min_count)
        if len(vocab) < 2:
            raise EmptyCorpusError(f"No word reaches min_count={self.min_count}")
        rng = np.random.default_rng(self.seed)
        syn0 = (rng.random((len(vocab), self.dims)) - 0.5) / self.dims
        syn0[0] = 0.0
        syn1neg = np.zeros((len(vocab), self.dims))
        cum_table = self._cum_table(vocab)

        encoded = [vocab.encode(s) for s in corpus]
        encoded = [ids[ids > 0] for ids in encoded]
        total_words = sum(ids.size for ids in encoded) * self.epochs
        processed = 0
        self.losses = []

        for epoch in range(self.epochs):
            loss_sum, pairs = 0.0, 0
            for ids in encoded:
                for pos, word in enumerate(ids):
                    progress = processed / max(total_words, 1)
                    alpha = max(self.min_alpha, self.alpha - (self.alpha - self.min_alpha) * progress)
                    processed += 1
                    reduced = int(rng.integers(self.window))
                    start = max(0, pos - self.window + reduced)
                    stop = pos + self.window + 1 - reduced
                    context = [int(c) for p, c in enumerate(ids[start:stop], start) if p != pos]
                    if not context:
                        continue
                    if self.variant == "skipgram":
                        for ctx in context:
                            noise = np.searchsorted(cum_table, rng.random(self.negatives), side="right")
                            neu1e, loss = self._update(syn0, syn1neg, syn0[word].copy(), ctx, noise, alpha)
                            syn0[word] += neu1e
                            loss_sum += loss
                            pairs += 1
                    else:
                        noise = np.searchsorted(cum_table, rng.random(self.negatives), side="right")
                        hidden = syn0[context].mean(axis=0)
                        neu1e, loss = self._update(syn0, syn1neg, hidden, int(word), noise, alpha)
                        np.add.at(syn0, context, neu1e / len(context))
                        loss_sum += loss
                        pairs += 1
            epoch_loss = loss_sum / max(pairs, 1)
            self.losses.append(epoch_loss)
            logger.info("word2vec epoch %d/%d: loss %.4f over %d pairs", epoch + 1, self.epochs, epoch_loss, pairs)

        syn0[0] = 0.0
        return vocab, EmbeddingMatrix(syn0)


def train_word2vec(corpus: Sequence[Sequence[str]], dims: int = EMBEDDING_DIM, window: int = 5,
                   negatives: int = 5, epochs: int = 5, seed: int = 0,
                   variant: str = "skipgram") -> tuple[Vocabulary, EmbeddingMatrix]:
    trainer = Word2VecTrainer(dims=dims, window=window, negatives=negatives, epochs=epochs,
                              seed=seed, variant=variant)
    return trainer.train(corpus)


def embed_sequence(tokens: Sequence[str], vocab: Vocabulary, emb: EmbeddingMatrix,
                   length: int = SEGMENT_WORDS) -> np.ndarray:
    """[dims, length] matrix of token vectors, right-padded with zero columns."""
    if length <= 0:
        raise ValueError(f"Sequence length must be positive, got {length}")
    if len(tokens) > length:
        raise OverLengthError(f"{len(tokens)} tokens do not fit a {length}-word segment")
    out = np.zeros((emb.dims, length))
    if tokens:
        out[:, :len(tokens)] = emb.vectors[vocab.encode(tokens)].T
    return out


def mean_embedding(tokens: Sequence[str], vocab: Vocabulary, emb: EmbeddingMatrix) -> np.ndarray:
    """Average token vector; the zero vector for no tokens."""
    if not tokens:
        return np.zeros(emb.dims)
    return emb.vectors[vocab.encode(tokens)].mean(axis=0)
