"""Feature-engineering baselines: epsilon-SVR trained by SMO, CART random forests and text features."""
import logging
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import dsp
from .dataset import track_clip, track_text, track_tokens
from .errors import ConvergenceError, DimensionError, EmptyCorpusError, EmptyDataError, MissingModalityError
from .models import LexiconEntry, PredictionRow, PredictionSet, TrackRecord
from .persistence import read_checkpoint, write_checkpoint
from .text_embed import EmbeddingMatrix, Vocabulary, mean_embedding, tokenize

logger = logging.getLogger(__name__)

KERNELS = ("linear", "rbf")
TAU = 1e-12


# =============================================================================
# Epsilon-SVR
# =============================================================================

@dataclass
class SvrModel:
    """Kernel expansion ``sum(coef * K(sv, x)) + bias``."""
    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    kernel: str = "rbf"
    gamma: float = 1.0
    C: float = 1.0
    epsilon: float = 0.1
    n_iter: int = 0
    objective: list[float] = field(default_factory=list)  # dual objective after each SMO step

    @property
    def n_support(self) -> int:
        return self.coef.size

    @property
    def dims(self) -> int:
        return self.support_vectors.shape[1]


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    """Gram matrix between the rows of ``A`` and ``B`` for a linear or rbf kernel."""
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A ** 2).sum(axis=1)[:, None] + (B ** 2).sum(axis=1)[None, :] - 2.0 * A @ B.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"Unknown kernel {kernel!r}; expected one of {KERNELS}")


def default_gamma(X: np.ndarray) -> float:
    """1 / (d * var(X)), falling back to 1/d for constant inputs."""
    var = float(np.var(X))
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]


def svr_dual_objective(coef: np.ndarray, K: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """``y·b - epsilon·|b|₁ - ½ bᵀKb`` for dual coefficients ``b``."""
    return float(y @ coef - epsilon * np.abs(coef).sum() - 0.5 * coef @ K @ coef)


def _select_pair(alpha: np.ndarray, sign: np.ndarray, G: np.ndarray, C: float):
    """Maximal violating pair; returns (i, j, gap)."""
    score = -sign * G
    up = ((sign > 0) & (alpha < C)) | ((sign < 0) & (alpha > 0))
    low = ((sign > 0) & (alpha > 0)) | ((sign < 0) & (alpha < C))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    i = int(np.flatnonzero(up)[np.argmax(score[up])])
    j = int(np.flatnonzero(low)[np.argmin(score[low])])
    return i, j, float(score[i] - score[j])


def _rho(alpha: np.ndarray, sign: np.ndarray, G: np.ndarray, C: float) -> float:
    yG = sign * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yG[free].mean())
    ub = np.concatenate([yG[at_upper & (sign < 0)], yG[at_lower & (sign > 0)]])
    lb = np.concatenate([yG[at_upper & (sign > 0)], yG[at_lower & (sign < 0)]])
    return float((ub.min(initial=np.inf) + lb.max(initial=-np.inf)) / 2.0)


def svr_fit(X: np.ndarray, y: np.ndarray, kernel: str = "rbf", C: float = 1.0, epsilon: float = 0.1,
            tol: float = 1e-3, gamma: Optional[float] = None, max_iter: int = 200_000) -> SvrModel:
    """Solve the epsilon-SVR dual with SMO over the 2n variables (alpha, alpha*)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"X {X.shape} and y {y.shape} do not pair up")
    if y.size < 2:
        raise EmptyDataError(f"SVR needs at least 2 samples, got {y.size}")
    if C <= 0 or epsilon < 0:
        raise ValueError(f"C must be positive and epsilon non-negative, got C={C}, epsilon={epsilon}")
    gamma = default_gamma(X) if gamma is None else gamma

    n = y.size
    K = kernel_matrix(X, X, kernel, gamma)
    diag = np.diag(K)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    alpha = np.zeros(2 * n)
    G = p.copy()
    objective = []

    def column(t: int) -> np.ndarray:
        # Q[:, t] with Q = sign sign^T * tile(K)
        k = K[:, t % n]
        return sign * sign[t] * np.concatenate([k, k])

    it, gap = 0, 0.0
    while True:
        i, j, gap = _select_pair(alpha, sign, G, C)
        if i < 0 or gap < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"SMO did not converge in {max_iter} iterations (violation {gap:.3e})", gap)
        it += 1
        Qi, Qj = column(i), column(j)
        old_i, old_j = alpha[i], alpha[j]
        if sign[i] != sign[j]:
            quad = max(diag[i % n] + diag[j % n] + 2.0 * Qi[j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(diag[i % n] + diag[j % n] - 2.0 * Qi[j], TAU)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Qi * (alpha[i] - old_i) + Qj * (alpha[j] - old_j)
        objective.append(-0.5 * float(alpha @ (G + p)))

    rho = _rho(alpha, sign, G, C)
    coef = alpha[:n] - alpha[n:]
    support = np.flatnonzero(coef != 0.0)
    logger.info("SMO %s kernel C=%g: %d iterations, %d support vectors, violation %.2e",
                kernel, C, it, support.size, gap)
    return SvrModel(X[support].copy(), coef[support].copy(), -rho, kernel, gamma, C, epsilon, it, objective)


def svr_predict(model: SvrModel, x: np.ndarray) -> Union[float, np.ndarray]:
    """Prediction for one vector (float) or a matrix of row vectors (array)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != model.dims:
        raise DimensionError(f"Input has {X.shape[1]} features, model expects {model.dims}")
    if model.n_support == 0:
        out = np.full(X.shape[0], model.bias)
    else:
        out = kernel_matrix(X, model.support_vectors, model.kernel, model.gamma) @ model.coef + model.bias
    return float(out[0]) if single else out


def svr_kkt_violations(model: SvrModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per training point, how far it is from the epsilon-SVR optimality conditions."""
    X = np.asarray(X, dtype=np.float64)
    coef = np.zeros(X.shape[0])
    if model.n_support:
        index = {row.tobytes(): k for k, row in enumerate(X)}
        for sv, c in zip(model.support_vectors, model.coef):
            coef[index[sv.tobytes()]] += c
    residual = np.asarray(y, dtype=np.float64) - svr_predict(model, X)
    eps, C = model.epsilon, model.C
    bound_tol = 1e-12 * max(C, 1.0)
    out = np.empty_like(residual)
    for k, (c, r) in enumerate(zip(coef, residual)):
        if abs(c) <= bound_tol:
            out[k] = max(0.0, abs(r) - eps)
        elif abs(c) >= C - bound_tol:
            out[k] = max(0.0, eps - r) if c > 0 else max(0.0, eps + r)
        else:
            out[k] = abs(r - eps) if c > 0 else abs(r + eps)
    return out


def save_svr(model: SvrModel, path: Union[str, Path]) -> None:
    """Store an SVR in a MOODNET1 container."""
    write_checkpoint(path, {
        "svr.support_vectors": model.support_vectors.reshape(-1, max(model.dims, 1)),
        "svr.coef": model.coef.reshape(-1) if model.n_support else np.zeros(1),
        "svr.meta": np.array([model.bias, model.gamma, model.C, model.epsilon,
                              KERNELS.index(model.kernel), model.n_support, model.dims], dtype=np.float64),
    })


def load_svr(path: Union[str, Path]) -> SvrModel:
    """Load an SVR written by ``save_svr``."""
    tensors = read_checkpoint(path)
    bias, gamma, C, epsilon, kernel, n_support, dims = tensors["svr.meta"]
    n_support, dims = int(n_support), int(dims)
    return SvrModel(tensors["svr.support_vectors"][:n_support].reshape(n_support, dims),
                    tensors["svr.coef"][:n_support], float(bias), KERNELS[int(kernel)],
                    float(gamma), float(C), float(epsilon))


# =============================================================================
# Random forest
# =============================================================================

@dataclass
class RegressionTree:
    """CART node table; ``feature == -1`` marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predict every row of ``X`` by walking the node table."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_table(self) -> np.ndarray:
        """Nodes as a float table: feature, threshold, left, right, value."""
        return np.column_stack([self.feature, self.threshold, self.left, self.right, self.value]).astype(np.float64)

    @classmethod
    def from_table(cls, table: np.ndarray) -> "RegressionTree":
        return cls(table[:, 0].astype(np.int64), table[:, 1].copy(), table[:, 2].astype(np.int64),
                   table[:, 3].astype(np.int64), table[:, 4].copy())


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float]:
    """(SSE after split, threshold) for one feature; inf when no admissible split."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = ys.size
    csum, csq = np.cumsum(ys), np.cumsum(ys ** 2)
    k = np.arange(1, n)  # left sizes
    left_sse = csq[:-1] - csum[:-1] ** 2 / k
    right_sum = csum[-1] - csum[:-1]
    right_sse = (csq[-1] - csq[:-1]) - right_sum ** 2 / (n - k)
    sse = left_sse + right_sse
    valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
    if not valid.any():
        return math.inf, 0.0
    sse = np.where(valid, sse, np.inf)
    pos = int(np.argmin(sse))
    return float(sse[pos]), float((xs[pos] + xs[pos + 1]) / 2.0)


def fit_tree(X: np.ndarray, y: np.ndarray, max_depth: Optional[int], min_leaf: int, max_features: int,
             rng: np.random.Generator) -> RegressionTree:
    """Grow one CART regression tree by greedy variance reduction."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        parent_sse = float(((ys - ys.mean()) ** 2).sum())
        if idx.size < 2 * min_leaf or parent_sse <= 1e-12 or (max_depth is not None and depth >= max_depth):
            continue
        best = (math.inf, 0.0, -1)
        # Keep looking past max_features until some feature yields a split.
        for tried, f in enumerate(rng.permutation(X.shape[1]), 1):
            sse, thr = _best_split(X[idx, f], ys, min_leaf)
            if sse < best[0]:
                best = (sse, thr, int(f))
            if tried >= max_features and best[2] >= 0:
                break
        sse, thr, f = best
        if f < 0 or sse >= parent_sse - 1e-12:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                          np.array(right, dtype=np.int64), np.array(value))


@dataclass
class ForestModel:
    trees: list[RegressionTree]
    seeds: list[int]
    max_features: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)


def forest_fit(X: np.ndarray, y: np.ndarray, n_trees: int = 50, max_depth: Optional[int] = None,
               min_leaf: int = 1, seed: int = 0, bootstrap: bool = True,
               max_features: Optional[int] = None) -> ForestModel:
    """Bagged CART regression trees with ceil(sqrt(d)) candidate features per split."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0 or y.size == 0:
        raise EmptyDataError("Random forest needs at least one sample")
    if X.shape[0] != y.size:
        raise DimensionError(f"X has {X.shape[0]} rows but y has {y.size} values")
    if n_trees < 1 or min_leaf < 1:
        raise ValueError("n_trees and min_leaf must be at least 1")
    if max_depth is not None and max_depth <= 0:
        max_depth = None
    max_features = max_features or int(math.ceil(math.sqrt(X.shape[1])))

    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2 ** 32, size=n_trees)]
    trees = []
    for tree_seed in seeds:
        rng = np.random.default_rng(tree_seed)
        rows = rng.integers(0, y.size, size=y.size) if bootstrap else np.arange(y.size)
        trees.append(fit_tree(X[rows], y[rows], max_depth, min_leaf, max_features, rng))
    logger.debug("Fitted %d trees, %d nodes on average", n_trees, np.mean([t.n_nodes for t in trees]))
    return ForestModel(trees, seeds, max_features)


def forest_predict(model: ForestModel, x: np.ndarray) -> Union[float, np.ndarray]:
    """Forest prediction for one feature vector (float) or a matrix (array)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(model.predict(x.reshape(1, -1))[0])
    return model.predict(x)


def save_forest(model: ForestModel, path: Union[str, Path]) -> None:
    """Store a forest's node tables, seeds and settings in a MOODNET1 container."""
    tensors = {f"tree.{k}.nodes": tree.to_table() for k, tree in enumerate(model.trees)}
    tensors["forest.meta"] = np.array([len(model.trees), model.max_features], dtype=np.float64)
    tensors["forest.seeds"] = np.array(model.seeds, dtype=np.float64)
    write_checkpoint(path, tensors)


def load_forest(path: Union[str, Path]) -> ForestModel:
    """Load a forest written by ``save_forest``."""
    tensors = read_checkpoint(path)
    n_trees, max_features = (int(v) for v in tensors["forest.meta"])
    trees = [RegressionTree.from_table(tensors[f"tree.{k}.nodes"]) for k in range(n_trees)]
    return ForestModel(trees, [int(s) for s in tensors["forest.seeds"]], max_features)


# =============================================================================
# Text features
# =============================================================================

LEXICON_FEATURES = ["lex_valence_mean", "lex_valence_std", "lex_arousal_mean", "lex_arousal_std", "oov_ratio"]
STYLE_FEATURES = ["line_count", "words_per_line", "type_token_ratio", "punctuation_rate"]


def _ngrams(tokens: Sequence[str], n: int) -> list[str]:
    return [" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


@dataclass
class TextFeatureExtractor:
    """TF-IDF over the top-K n-grams, then lexicon aggregates, then stylistic features."""
    ngrams: list[str]
    idf: np.ndarray
    lexicon: Mapping[str, LexiconEntry] = field(default_factory=dict)
    max_n: int = 3

    @property
    def feature_names(self) -> list[str]:
        return [f"tfidf:{g}" for g in self.ngrams] + LEXICON_FEATURES + STYLE_FEATURES

    @property
    def dims(self) -> int:
        return len(self.ngrams) + len(LEXICON_FEATURES) + len(STYLE_FEATURES)

    def transform(self, lyrics: str) -> np.ndarray:
        """TF-IDF values of one lyric followed by its lexicon and style blocks."""
        tokens = tokenize(lyrics)
        tfidf = np.zeros(len(self.ngrams))
        position = {g: k for k, g in enumerate(self.ngrams)}
        for n in range(1, self.max_n + 1):
            grams = _ngrams(tokens, n)
            if not grams:
                continue
            for gram, count in Counter(grams).items():
                k = position.get(gram)
                if k is not None:
                    tfidf[k] = count / len(grams) * self.idf[k]

        hits = [self.lexicon[t] for t in tokens if t in self.lexicon]
        if hits:
            v = np.array([e.valence for e in hits])
            a = np.array([e.arousal for e in hits])
            lex = [v.mean(), v.std(), a.mean(), a.std(), 1.0 - len(hits) / len(tokens)]
        else:
            lex = [0.0, 0.0, 0.0, 0.0, 1.0]

        lines = [line for line in lyrics.splitlines() if line.strip()]
        chars = [c for c in lyrics if not c.isspace()]
        style = [
            float(len(lines)),
            len(tokens) / len(lines) if lines else 0.0,
            len(set(tokens)) / len(tokens) if tokens else 0.0,
            sum(c in string.punctuation for c in chars) / len(chars) if chars else 0.0,
        ]
        return np.concatenate([tfidf, lex, style])

    def transform_many(self, documents: Sequence[str]) -> np.ndarray:
        """Feature matrix [N, dims] for a list of documents."""
        return np.array([self.transform(d) for d in documents]).reshape(len(documents), self.dims)


def fit_text_features(train_lyrics: Sequence[str], lexicon: Optional[Mapping[str, LexiconEntry]] = None,
                      top_k: int = 2000, max_n: int = 3) -> TextFeatureExtractor:
    """Keep the ``top_k`` n-grams (n ≤ max_n) by document frequency; idf = log(N / df), unsmoothed."""
    docs = [tokenize(text) for text in train_lyrics]
    if not docs or not any(docs):
        raise EmptyCorpusError("Cannot fit text features on an empty corpus")
    df: Counter = Counter()
    for tokens in docs:
        for n in range(1, max_n + 1):
            df.update(set(_ngrams(tokens, n)))
    ranked = sorted(df, key=lambda g: (-df[g], g))[:top_k]
    idf = np.array([math.log(len(docs) / df[g]) for g in ranked])
    return TextFeatureExtractor(ranked, idf, dict(lexicon or {}), max_n)


# =============================================================================
# Pipelines
# =============================================================================

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        """Column means and stds of ``X``; zero stds become 1."""
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


class ClassicalResult(NamedTuple):
    predictions: PredictionSet
    chosen: dict[str, dict]  # per dimension: kernel, C, gamma, epsilon


def _targets(records: Sequence[TrackRecord]) -> np.ndarray:
    return np.array([r.label.as_array() for r in records]).reshape(len(records), 2)


def _prediction_rows(records: Sequence[TrackRecord], split: str, preds: np.ndarray) -> list[PredictionRow]:
    return [PredictionRow(r.msd_id, split, float(p[0]), float(p[1]), r.label.valence, r.label.arousal)
            for r, p in zip(records, preds)]


def _fit_svr_grid(X_train, y_train, X_valid, y_valid, kernels, C_grid, gamma_scales, epsilon, tol):
    gamma0 = default_gamma(X_train)
    best, best_mse, best_params = None, math.inf, {}
    for kernel in kernels:
        for scale in (gamma_scales if kernel == "rbf" else (1.0,)):
            for C in C_grid:
                model = svr_fit(X_train, y_train, kernel, C, epsilon, tol, gamma=gamma0 * scale)
                mse = float(np.mean((svr_predict(model, X_valid) - y_valid) ** 2)) if len(y_valid) else 0.0
                if best is None or mse < best_mse:
                    best, best_mse = model, mse
                    best_params = {"kernel": kernel, "C": C, "gamma": gamma0 * scale, "epsilon": epsilon}
                if not len(y_valid):
                    return best, best_params
    return best, best_params


def classical_pipeline(mode: str, train: Sequence[TrackRecord], valid: Sequence[TrackRecord],
                       test: Sequence[TrackRecord], lexicon: Optional[Mapping[str, LexiconEntry]] = None,
                       C_grid: Sequence[float] = (0.1, 1.0, 10.0), epsilon: float = 0.1, tol: float = 1e-3,
                       kernels: Sequence[str] = ("rbf",), gamma_scales: Sequence[float] = (1.0,),
                       top_k: int = 2000, base_dir: Optional[Path] = None, threads: int = 1,
                       features: Optional[Mapping[str, np.ndarray]] = None) -> ClassicalResult:
    """Whole-track features plus one SVR per dimension, hyperparameters picked on validation.

    ``features`` may carry precomputed audio vectors keyed by track id.
    """
    if not train:
        raise EmptyDataError("Classical pipeline needs training tracks")
    splits = {"train": list(train), "valid": list(valid), "test": list(test)}

    if mode == "audio":
        def vector(record: TrackRecord) -> np.ndarray:
            if features is not None and record.msd_id in features:
                return features[record.msd_id]
            clip = track_clip(record, base_dir)
            if clip is None:
                raise MissingModalityError(f"Track {record.msd_id} has no audio")
            return dsp.classical_audio_features(clip)

        matrices = {name: np.array(dsp.extract_features_parallel(rs, vector, threads)).reshape(len(rs), -1)
                    for name, rs in splits.items()}
    elif mode == "lyrics":
        def text(record: TrackRecord) -> str:
            lyrics = track_text(record, base_dir)
            if lyrics is None:
                raise MissingModalityError(f"Track {record.msd_id} has no lyrics")
            return lyrics

        documents = {name: [text(r) for r in rs] for name, rs in splits.items()}
        extractor = fit_text_features(documents["train"], lexicon, top_k)
        matrices = {name: extractor.transform_many(docs) for name, docs in documents.items()}
    else:
        raise ValueError(f"Classical pipeline supports audio or lyrics, got {mode!r}")

    dims = matrices["train"].shape[1]
    scaler = Standardizer.fit(matrices["train"])
    X = {name: scaler.transform(m) if m.size else m.reshape(0, dims) for name, m in matrices.items()}
    Y = {name: _targets(rs) for name, rs in splits.items()}
    if not splits["valid"]:
        logger.warning("No validation tracks; using the first grid point")

    preds = {name: np.zeros((len(rs), 2)) for name, rs in splits.items()}
    chosen = {}
    for d, dim_name in enumerate(("valence", "arousal")):
        model, params = _fit_svr_grid(X["train"], Y["train"][:, d], X["valid"], Y["valid"][:, d],
                                      kernels, C_grid, gamma_scales, epsilon, tol)
        chosen[dim_name] = params
        for name in ("valid", "test"):
            if len(splits[name]):
                preds[name][:, d] = svr_predict(model, X[name])
        logger.info("%s %s: chose %s", mode, dim_name, params)

    rows = _prediction_rows(splits["valid"], "valid", preds["valid"]) + \
        _prediction_rows(splits["test"], "test", preds["test"])
    return ClassicalResult(PredictionSet(rows, name=f"classical-{mode}"), chosen)


def cbow_pipeline(train: Sequence[TrackRecord], valid: Sequence[TrackRecord], test: Sequence[TrackRecord],
                  vocab: Vocabulary, emb: EmbeddingMatrix, n_trees: int = 50, min_leaf: int = 1,
                  max_depth: Optional[int] = None, seed: int = 0,
                  base_dir: Optional[Path] = None) -> PredictionSet:
    """Random forest on the mean word embedding of each track's lyrics."""
    def matrix(records: Sequence[TrackRecord]) -> np.ndarray:
        rows = []
        for record in records:
            tokens = track_tokens(record, base_dir)
            if tokens is None:
                raise MissingModalityError(f"Track {record.msd_id} has no lyrics")
            rows.append(mean_embedding(tokens, vocab, emb))
        return np.array(rows).reshape(len(records), emb.dims)

    X_train, y_train = matrix(train), _targets(train)
    forests = [forest_fit(X_train, y_train[:, d], n_trees, max_depth, min_leaf, seed + d) for d in range(2)]
    rows = []
    for split, records in (("valid", valid), ("test", test)):
        if not records:
            continue
        X = matrix(records)
        preds = np.column_stack([f.predict(X) for f in forests])
        rows.extend(_prediction_rows(records, split, preds))
    return PredictionSet(rows, name="CBOW")
