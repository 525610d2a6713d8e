import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import make_record
from core.calculator import r2_pair
from core.classical import (LEXICON_FEATURES, STYLE_FEATURES, ForestModel, cbow_pipeline, classical_pipeline,
                            fit_text_features, forest_fit, forest_predict, kernel_matrix, load_forest, load_svr,
                            save_forest, save_svr, svr_dual_objective, svr_fit, svr_kkt_violations, svr_predict)
from core.errors import ConvergenceError, DimensionError, EmptyCorpusError, EmptyDataError
from core.models import LexiconEntry
from core.text_embed import EmbeddingMatrix, Vocabulary

WORDS = {"joy": (8.0, 6.0), "love": (7.5, 5.0), "sun": (7.0, 4.0), "rain": (3.5, 3.0),
         "tears": (2.0, 4.5), "storm": (3.0, 7.5)}
LEXICON = {w: LexiconEntry(w, v, a) for w, (v, a) in WORDS.items()}


def _full_coef(model, X):
    coef = np.zeros(X.shape[0])
    rows = {row.tobytes(): k for k, row in enumerate(X)}
    for sv, c in zip(model.support_vectors, model.coef):
        coef[rows[sv.tobytes()]] += c
    return coef


def _reference_dual(K, y, C, eps):
    """Maximize the SVR dual over (alpha, alpha*) with a general-purpose solver."""
    n = y.size

    def negative(z):
        b = z[:n] - z[n:]
        return -(y @ b - eps * z.sum() - 0.5 * b @ K @ b)

    result = minimize(negative, np.zeros(2 * n), method="SLSQP", bounds=[(0.0, C)] * (2 * n),
                      constraints=[{"type": "eq", "fun": lambda z: z[:n].sum() - z[n:].sum()}],
                      options={"ftol": 1e-14, "maxiter": 1000})
    return -result.fun


def test_tfidf_idf_and_lexicon_block():
    extractor = fit_text_features(["love you", "love me"], LEXICON, top_k=10)
    features = dict(zip(extractor.feature_names, extractor.transform("love you")))
    assert features["tfidf:love"] == 0.0
    assert features["tfidf:you"] == pytest.approx(0.5 * np.log(2))
    assert extractor.dims == len(extractor.ngrams) + len(LEXICON_FEATURES) + len(STYLE_FEATURES)

    plain = fit_text_features(["no rated words here"], {}, top_k=3)
    vector = plain.transform("nothing rated at all")
    np.testing.assert_array_equal(vector[3:8], [0.0, 0.0, 0.0, 0.0, 1.0])
    with pytest.raises(EmptyCorpusError):
        fit_text_features(["", "..."])


def test_svr_fits_a_line_inside_the_tube():
    X = np.linspace(-1, 1, 20).reshape(-1, 1)
    y = 2.0 * X.ravel()
    model = svr_fit(X, y, kernel="linear", C=10.0, epsilon=0.1, tol=1e-4)
    residuals = np.abs(svr_predict(model, X) - y)
    assert residuals.max() <= 0.1 + 1e-3
    assert model.n_support < 20


def test_svr_constant_target_has_no_support_vectors():
    X = np.arange(6.0).reshape(-1, 2)
    model = svr_fit(X, np.full(3, 3.0), kernel="rbf", C=1.0, epsilon=0.1)
    assert model.n_support == 0
    assert model.bias == pytest.approx(3.0)
    assert svr_predict(model, np.array([10.0, -4.0])) == pytest.approx(3.0)


@pytest.mark.parametrize("kernel", ["linear", "rbf"])
def test_svr_reaches_dual_optimum(kernel, rng):
    X = rng.standard_normal((8, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
    model = svr_fit(X, y, kernel=kernel, C=2.0, epsilon=0.05, tol=1e-6, gamma=0.5)
    K = kernel_matrix(X, X, kernel, 0.5)
    achieved = svr_dual_objective(_full_coef(model, X), K, y, 0.05)
    assert achieved == pytest.approx(_reference_dual(K, y, 2.0, 0.05), abs=1e-4)
    assert all(b >= a - 1e-10 for a, b in zip(model.objective, model.objective[1:]))


def test_svr_kkt_conditions_hold(rng):
    X = rng.standard_normal((30, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3 * rng.standard_normal(30)
    model = svr_fit(X, y, kernel="rbf", C=1.0, epsilon=0.1, tol=1e-4)
    assert svr_kkt_violations(model, X, y).max() <= 1e-3


def test_svr_predict_single_and_batch(rng, tmp_path):
    X = rng.standard_normal((12, 3))
    model = svr_fit(X, X[:, 0] - X[:, 2], kernel="rbf", C=1.0)
    batch = svr_predict(model, X)
    assert isinstance(svr_predict(model, X[4]), float)
    assert svr_predict(model, X[4]) == pytest.approx(batch[4])
    save_svr(model, tmp_path / "svr.bin")
    np.testing.assert_allclose(svr_predict(load_svr(tmp_path / "svr.bin"), X), batch)
    with pytest.raises(DimensionError):
        svr_predict(model, np.ones(2))


def test_svr_input_errors(rng):
    with pytest.raises(DimensionError):
        svr_fit(np.ones((3, 2)), np.ones(4))
    with pytest.raises(EmptyDataError):
        svr_fit(np.ones((1, 2)), np.ones(1))
    X = rng.standard_normal((20, 2))
    with pytest.raises(ConvergenceError) as info:
        svr_fit(X, rng.standard_normal(20), kernel="rbf", C=10.0, tol=1e-8, max_iter=1)
    assert info.value.violation > 0


def test_forest_constant_and_memorization(rng):
    X = rng.standard_normal((25, 3))
    constant = forest_fit(X, np.full(25, 1.5), n_trees=5, seed=0)
    np.testing.assert_array_equal(constant.predict(X), 1.5)

    y = rng.standard_normal(25)
    single = forest_fit(X, y, n_trees=1, bootstrap=False, seed=0)
    np.testing.assert_allclose(forest_predict(single, X), y)
    assert forest_predict(single, X[0]) == pytest.approx(y[0])


def test_forest_averaging_beats_one_tree(rng):
    X = rng.uniform(-2, 2, (200, 2))
    y = X[:, 0] ** 2 + 0.5 * rng.standard_normal(200)
    X_test = rng.uniform(-2, 2, (200, 2))
    truth = X_test[:, 0] ** 2
    one = forest_fit(X, y, n_trees=1, seed=0)
    many = forest_fit(X, y, n_trees=50, seed=0)
    assert np.mean((many.predict(X_test) - truth) ** 2) < np.mean((one.predict(X_test) - truth) ** 2)


def test_forest_is_deterministic_and_saves(rng, tmp_path):
    X = rng.standard_normal((40, 4))
    y = X[:, 1] * 2
    first = forest_fit(X, y, n_trees=5, seed=11)
    second = forest_fit(X, y, n_trees=5, seed=11)
    np.testing.assert_array_equal(first.predict(X), second.predict(X))
    save_forest(first, tmp_path / "forest.bin")
    np.testing.assert_array_equal(load_forest(tmp_path / "forest.bin").predict(X), first.predict(X))


def test_forest_prediction_ignores_tree_order(rng):
    X = rng.standard_normal((60, 3))
    y = np.sin(X[:, 0]) + X[:, 2]
    forest = forest_fit(X, y, n_trees=12, seed=5)
    order = rng.permutation(len(forest.trees))
    shuffled = ForestModel([forest.trees[k] for k in order], [forest.seeds[k] for k in order], forest.max_features)
    X_new = rng.standard_normal((20, 3))
    np.testing.assert_allclose(shuffled.predict(X_new), forest.predict(X_new), rtol=0, atol=1e-12)
    assert forest_predict(shuffled, X_new[0]) == pytest.approx(forest_predict(forest, X_new[0]), abs=1e-12)


def _lyric_records(rng, count, prefix):
    records = []
    words = list(WORDS)
    for k in range(count):
        tokens = [str(w) for w in rng.choice(words, size=12)]
        lyrics = "\n".join(" ".join(tokens[i:i + 4]) for i in range(0, 12, 4))
        valence = float(np.mean([WORDS[t][0] for t in tokens]))
        arousal = float(np.mean([WORDS[t][1] for t in tokens]))
        records.append(make_record(f"{prefix}{k:03d}", f"artist{k}", valence, arousal, lyrics=lyrics))
    return records


def test_lyrics_pipeline_recovers_lexicon_means(rng):
    train, valid, test = (_lyric_records(rng, n, p) for n, p in ((60, "A"), (20, "B"), (20, "C")))
    result = classical_pipeline("lyrics", train, valid, test, LEXICON, kernels=("linear",), top_k=5)
    predictions = result.predictions
    assert predictions.name == "classical-lyrics"
    assert predictions.splits == {"valid", "test"}
    valence, arousal = r2_pair(predictions.subset("test"))
    assert valence > 0.9 and arousal > 0.9
    assert result.chosen["valence"]["kernel"] == "linear"


def test_audio_pipeline_with_precomputed_features(rng):
    features, records = {}, []
    for k in range(80):
        vector = rng.standard_normal(32)
        features[f"TR{k:03d}"] = vector
        records.append(make_record(f"TR{k:03d}", f"artist{k}", 2.0 * vector[15] + 1.0, -vector[14]))
    result = classical_pipeline("audio", records[:50], records[50:65], records[65:], kernels=("linear",),
                                features=features)
    valence, arousal = r2_pair(result.predictions.subset("test"))
    assert valence > 0.9 and arousal > 0.9


def test_pipeline_without_test_tracks(rng):
    train, valid = _lyric_records(rng, 20, "A"), _lyric_records(rng, 5, "B")
    result = classical_pipeline("lyrics", train, valid, [], LEXICON, C_grid=(1.0,), top_k=5)
    assert result.predictions.splits == {"valid"}
    assert len(result.predictions.rows) == 5
    with pytest.raises(ValueError):
        classical_pipeline("video", train, valid, [])


def test_cbow_pipeline(rng):
    vocab = Vocabulary(["<unk>"] + list(WORDS), [0] + [1] * len(WORDS))
    emb = EmbeddingMatrix(np.vstack([np.zeros(2)] + [np.array(v) for v in WORDS.values()]))
    train, valid, test = (_lyric_records(rng, n, p) for n, p in ((40, "A"), (10, "B"), (10, "C")))
    predictions = cbow_pipeline(train, valid, test, vocab, emb, n_trees=10, seed=0)
    again = cbow_pipeline(train, valid, test, vocab, emb, n_trees=10, seed=0)
    assert predictions.name == "CBOW"
    assert len(predictions.rows) == 20
    assert predictions.arrays()[0].tolist() == again.arrays()[0].tolist()
    assert r2_pair(predictions)[0] > 0.5
