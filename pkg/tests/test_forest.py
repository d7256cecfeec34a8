import io

import numpy as np
import pytest

from mixmap.forest import (
    ForestConfig,
    ForestError,
    read_model,
    rf_predict,
    rf_predict_proba,
    rf_predict_proba_batch,
    rf_train,
    write_model,
)


def blobs(rng, per_class, centers=((0.0, 0.0), (3.0, 3.0))):
    neg = rng.normal(centers[0], 1.0, size=(per_class, 2))
    pos = rng.normal(centers[1], 1.0, size=(per_class, 2))
    x = np.vstack([neg, pos])
    y = np.array([0] * per_class + [1] * per_class)
    return x, y


def model_bytes(model):
    buf = io.BytesIO()
    write_model(model, buf)
    return buf.getvalue()


class TestTraining:
    def test_two_sample_singleton_split(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([0, 1])
        # seed chosen so the single tree's bootstrap holds both samples
        model = rf_train(x, y, ForestConfig(tree_count=1, mtry=1, seed=5))
        assert rf_predict_proba(model, [1.0]) == 1.0
        assert rf_predict_proba(model, [0.0]) == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(ForestError, match="both classes"):
            rf_train(np.zeros((3, 2)), np.array([1, 1, 1]), ForestConfig(tree_count=2))

    def test_empty_and_nonfinite_rejected(self):
        with pytest.raises(ForestError):
            rf_train(np.zeros((0, 2)), np.array([]), ForestConfig(tree_count=1))
        with pytest.raises(ForestError, match="non-finite"):
            rf_train(
                np.array([[np.nan], [1.0]]), np.array([0, 1]), ForestConfig(tree_count=1)
            )

    def test_same_seed_gives_identical_forest(self, rng):
        x, y = blobs(rng, 40)
        cfg = ForestConfig(tree_count=25, seed=11)
        a = rf_train(x, y, cfg)
        b = rf_train(x, y, cfg)
        assert model_bytes(a) == model_bytes(b)

    def test_different_seed_changes_forest(self, rng):
        x, y = blobs(rng, 40)
        a = rf_train(x, y, ForestConfig(tree_count=25, seed=11))
        b = rf_train(x, y, ForestConfig(tree_count=25, seed=12))
        assert model_bytes(a) != model_bytes(b)

    def test_parallel_training_matches_serial(self, rng):
        x, y = blobs(rng, 30)
        cfg = ForestConfig(tree_count=16, seed=3)
        serial = rf_train(x, y, cfg, workers=1)
        parallel = rf_train(x, y, cfg, workers=2)
        assert model_bytes(serial) == model_bytes(parallel)

    def test_blob_benchmark_accuracy_and_oob(self):
        rng = np.random.default_rng(1234)
        x, y = blobs(rng, 200)
        model = rf_train(x, y, ForestConfig(tree_count=100, seed=0))
        xt, yt = blobs(rng, 100)
        acc = float(np.mean(rf_predict(model, xt) == yt))
        # Bayes boundary x1 + x2 = 3 scores ~98% here
        assert acc >= 0.95
        assert model.oob_error is not None and model.oob_error <= 0.10

    def test_depth_and_leaf_constraints(self, rng):
        x = rng.normal(size=(120, 5))
        y = (rng.random(120) < 0.5).astype(int)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        model = rf_train(x, y, ForestConfig(tree_count=10, max_depth=3, min_leaf=5))
        for tree in model.trees:
            assert tree.depth() <= 3
            leaves = tree.feature < 0
            assert tree.count[leaves].min() >= 5

    def test_mtry_validation(self, rng):
        x, y = blobs(rng, 10)
        with pytest.raises(ForestError, match="mtry"):
            rf_train(x, y, ForestConfig(tree_count=1, mtry=3))


class TestPrediction:
    def test_constant_features_predict_prevalence(self):
        x = np.ones((8, 3))
        y = np.array([1, 0, 0, 1, 0, 0, 0, 1])
        model = rf_train(x, y, ForestConfig(tree_count=400, seed=2))
        probas = rf_predict_proba_batch(model, np.ones((4, 3)) * 9.0)
        # every tree is a root leaf holding its bootstrap prevalence, whose
        # average converges on the training prevalence 3/8
        assert np.all(probas == probas[0])
        assert probas[0] == pytest.approx(3 / 8, abs=0.06)
        for tree in model.trees:
            assert len(tree.feature) == 1 and tree.feature[0] == -1

    def test_probabilities_bounded(self, rng):
        x, y = blobs(rng, 30)
        model = rf_train(x, y, ForestConfig(tree_count=20, seed=4))
        p = rf_predict_proba_batch(model, rng.normal(size=(50, 2)) * 4)
        assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_decision_flips_at_half(self, rng):
        x, y = blobs(rng, 30)
        model = rf_train(x, y, ForestConfig(tree_count=20, seed=4))
        grid = rng.normal(size=(100, 2)) * 3
        p = rf_predict_proba_batch(model, grid)
        np.testing.assert_array_equal(rf_predict(model, grid), (p >= 0.5).astype(int))

    def test_single_tree_probability_is_leaf_fraction(self, rng):
        x, y = blobs(rng, 25)
        model = rf_train(x, y, ForestConfig(tree_count=1, seed=5))
        row = x[3]
        proba = rf_predict_proba(model, row)
        tree = model.trees[0]
        node = 0
        while tree.feature[node] >= 0:
            node = (
                tree.left[node]
                if row[tree.feature[node]] <= tree.threshold[node]
                else tree.right[node]
            )
        assert proba == tree.fraction[node]

    def test_dimension_mismatch_rejected(self, rng):
        x, y = blobs(rng, 10)
        model = rf_train(x, y, ForestConfig(tree_count=2, seed=0))
        with pytest.raises(ForestError, match="feature count"):
            rf_predict_proba(model, [1.0, 2.0, 3.0])
        with pytest.raises(ForestError, match="non-finite"):
            rf_predict_proba_batch(model, np.array([[np.inf, 0.0]]))


class TestSerialization:
    def test_round_trip_preserves_predictions(self, rng):
        x, y = blobs(rng, 40)
        model = rf_train(x, y, ForestConfig(tree_count=15, seed=9), schema=["a", "b"])
        raw = model_bytes(model)
        back = read_model(io.BytesIO(raw))
        assert back.feature_count == model.feature_count
        assert back.config == model.config
        assert back.schema_hash == model.schema_hash
        assert back.oob_error == pytest.approx(model.oob_error)
        probe = rng.normal(size=(30, 2))
        np.testing.assert_array_equal(
            rf_predict_proba_batch(back, probe), rf_predict_proba_batch(model, probe)
        )
        assert model_bytes(back) == raw

    def test_bad_magic_rejected(self):
        with pytest.raises(ForestError, match="magic"):
            read_model(io.BytesIO(b"NOPE" + b"\x00" * 64))
