import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtsurrogate.surrogate import (
    InvalidSpec,
    MinMaxScaler,
    ModelKind,
    ModelSpec,
    ShapeMismatch,
    TrainedModel,
    benchmark_predict,
    fit,
    grid_search,
)
from rtsurrogate.surrogate.ensemble import GradientBoostedTrees
from rtsurrogate.surrogate.mlp import MLPRegressor
from rtsurrogate.surrogate.tree import build_tree
from rtsurrogate.surrogate.tuning import kfold_indices

FAST = {
    "linear": ModelSpec("linear"),
    "decision_tree": ModelSpec("decision_tree", {"max_depth": 8}),
    "random_forest": ModelSpec("random_forest", {"n_trees": 5, "max_depth": 6}),
    "gbdt": ModelSpec("gbdt", {"n_trees": 20, "max_depth": 4}, residual_connection=True),
    "mlp": ModelSpec("mlp", {"hidden": [16, 16], "epochs": 5}, residual_connection=True),
}


def smooth_data(n, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1.5e-3, (n, 6))
    Y = np.column_stack([
        0.5 * X[:, 0] + 0.3 * X[:, 3],
        X[:, 1] * (1 + 100 * X[:, 4]),
        np.sqrt(X[:, 2] * 1e-3) + 0.1 * X[:, 5],
    ])
    return X, Y


@pytest.fixture(scope="module")
def fitted():
    X, Y = smooth_data(600)
    return {name: fit(spec, (X, Y)) for name, spec in FAST.items()}


@given(arrays(float, (12, 4), elements=st.floats(-1e3, 1e3)))
def test_scaler_round_trip(data):
    scaler = MinMaxScaler.fit(data)
    scaled = scaler.transform(data)
    assert (scaled >= -1 - 1e-12).all() and (scaled <= 1 + 1e-12).all()
    span = np.maximum(np.abs(data).max(axis=0), 1e-300)
    err = np.abs(scaler.inverse_transform(scaled) - data) / span
    assert err.max() <= 1e-12


def test_scaler_maps_range_ends_and_constant_columns():
    data = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    scaler = MinMaxScaler.fit(data)
    np.testing.assert_array_equal(scaler.transform(data), [[-1, 0], [0, 0], [1, 0]])
    np.testing.assert_array_equal(scaler.inverse_transform(scaler.transform(data)), data)


def test_linear_recovers_exact_linear_map():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1.5e-3, (500, 6))
    A = rng.normal(size=(6, 3))
    Y = X @ A + 1e-4
    model = fit(ModelSpec("linear"), (X, Y))
    Xt = rng.uniform(0, 1.5e-3, (200, 6))
    assert np.mean((model.predict(Xt) - np.maximum(Xt @ A + 1e-4, 0)) ** 2) <= 1e-20


def test_linear_residual_connection_changes_nothing():
    X, Y = smooth_data(400, seed=5)
    plain = fit(ModelSpec("linear"), (X, Y))
    resid = fit(ModelSpec("linear", residual_connection=True), (X, Y))
    Xt, _ = smooth_data(100, seed=6)
    np.testing.assert_allclose(resid.predict(Xt), plain.predict(Xt), rtol=0, atol=1e-8)


def test_unlimited_tree_memorizes_unique_inputs():
    X, Y = smooth_data(300, seed=2)
    model = fit(ModelSpec("decision_tree"), (X, Y))
    np.testing.assert_allclose(model.predict(X), Y, rtol=1e-12, atol=1e-18)


def test_tree_respects_depth_and_leaf_size():
    X, Y = smooth_data(300, seed=4)
    tree, leaf_of = build_tree(X, Y[:, 0], max_depth=3, min_samples_leaf=20)
    assert tree.depth <= 3
    _, counts = np.unique(leaf_of, return_counts=True)
    assert counts.min() >= 20
    np.testing.assert_array_equal(tree.predict(X), tree.value[leaf_of])


def test_gbdt_training_loss_non_increasing():
    X, Y = smooth_data(500, seed=7)
    gb = GradientBoostedTrees(n_trees=40, max_depth=3)
    gb.fit(MinMaxScaler.fit(X).transform(X), MinMaxScaler.fit(Y).transform(Y))
    history = np.asarray(gb.loss_history)
    assert history.shape == (3, 41)
    assert (np.diff(history, axis=1) <= 1e-15).all()


def test_gbdt_staged_prediction_matches_full():
    X, Y = smooth_data(300, seed=8)
    gb = GradientBoostedTrees(n_trees=10, max_depth=3).fit(X, Y)
    np.testing.assert_array_equal(gb.predict(X, n_trees=10), gb.predict(X))
    assert not np.array_equal(gb.predict(X, n_trees=3), gb.predict(X))


def test_mlp_gradients_match_central_differences():
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, (10, 6))
    Y = rng.uniform(-1, 1, (10, 3))
    mlp = MLPRegressor(hidden=(8, 8))
    mlp.init_params(6, 3, rng)
    mlp.biases = [rng.normal(scale=0.1, size=b.shape) for b in mlp.biases]
    _, gw, gb = mlp.loss_and_grads(X, Y)
    h = 1e-6
    worst = 0.0
    for params, grads in ((mlp.weights, gw), (mlp.biases, gb)):
        for p, g in zip(params, grads):
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                keep = p[idx]
                p[idx] = keep + h
                up = mlp.loss_and_grads(X, Y)[0]
                p[idx] = keep - h
                down = mlp.loss_and_grads(X, Y)[0]
                p[idx] = keep
                numeric[idx] = (up - down) / (2 * h)
            scale = max(np.abs(numeric).max(), np.abs(g).max())
            worst = max(worst, np.abs(numeric - g).max() / scale)
    assert worst <= 1e-5


@pytest.mark.parametrize("name", list(FAST))
def test_batch_equals_loop_bitwise(name, fitted):
    model = fitted[name]
    X, _ = smooth_data(100, seed=9)
    batch = model.predict(X)
    loop = np.vstack([model.predict(x) for x in X])
    np.testing.assert_array_equal(batch, loop)


@pytest.mark.parametrize("name", list(FAST))
def test_serialization_round_trip_is_bit_identical(name, fitted, tmp_path):
    model = fitted[name]
    X, _ = smooth_data(200, seed=10)
    back = TrainedModel.load(model.save(tmp_path / f"{name}.npz"))
    np.testing.assert_array_equal(back.predict(X), model.predict(X))
    assert back.spec == model.spec
    assert back.metadata == model.metadata


def test_loading_a_foreign_file_fails(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, x=np.zeros(3))
    with pytest.raises(InvalidSpec):
        TrainedModel.load(path)


@pytest.mark.parametrize("kind", ["linear", "gbdt"])
def test_residual_with_zero_delta_returns_input(kind):
    X, _ = smooth_data(200, seed=12)
    model = fit(ModelSpec(kind, {"n_trees": 5} if kind == "gbdt" else {},
                          residual_connection=True), (X, X[:, :3].copy()))
    Xt, _ = smooth_data(50, seed=13)
    np.testing.assert_array_equal(model.predict(Xt), Xt[:, :3])


def test_predictions_non_negative_and_ordered(fitted):
    X, _ = smooth_data(50, seed=14)
    X[:, :3] = 0.0
    for model in fitted.values():
        out = model.predict(X)
        assert out.shape == (50, 3) and (out >= 0).all()
        np.testing.assert_array_equal(model.predict(X[::-1]), out[::-1])


def test_empty_batch_and_shape_errors(fitted):
    model = fitted["linear"]
    assert model.predict(np.zeros((0, 6))).shape == (0, 3)
    with pytest.raises(ShapeMismatch):
        model.predict(np.zeros((4, 5)))
    with pytest.raises(ShapeMismatch):
        fit(ModelSpec("linear"), (np.zeros((4, 6)), np.zeros((4, 2))))


@pytest.mark.parametrize("kind,params", [
    ("gbdt", {"n_trees": 0}),
    ("gbdt", {"learning_rate": -0.1}),
    ("random_forest", {"max_depth": 0}),
    ("mlp", {"hidden": [0]}),
    ("mlp", {"activation": "sigmoid"}),
    ("mlp", {"momentum": 1.0}),
    ("linear", {"ridge": -1.0}),
    ("linear", {"depth": 3}),
    ("transformer", {}),
])
def test_invalid_specs_rejected(kind, params):
    with pytest.raises(InvalidSpec):
        ModelSpec(kind, params)


def test_spec_round_trip_and_defaults():
    spec = ModelSpec("gbdt", {"n_trees": 10}, residual_connection=True, seed=4)
    assert spec.params["max_depth"] == 6 and spec.params["learning_rate"] == 0.1
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.name == "gbdt+residual"
    assert spec.kind is ModelKind.GRADIENT_BOOSTED_TREES


def test_fit_is_reproducible_under_seed():
    X, Y = smooth_data(300, seed=15)
    for spec in (FAST["random_forest"], FAST["mlp"]):
        a = fit(spec, (X, Y)).predict(X)
        b = fit(spec, (X, Y)).predict(X)
        np.testing.assert_array_equal(a, b)


def test_fit_records_metadata():
    X, Y = smooth_data(100, seed=16)
    model = fit(FAST["gbdt"], (X, Y), dataset_id="abc")
    assert model.metadata["dataset_id"] == "abc"
    assert model.metadata["n_train"] == 100
    assert np.asarray(model.loss_history).shape == (3, 21)


def test_benchmark_total_time_grows_with_batch(fitted):
    table = benchmark_predict(fitted["gbdt"], [1, 100, 10000], repeats=100)
    sizes = [s for s, _ in table]
    seconds = [t for _, t in table]
    assert sizes == [1, 100, 10000]
    assert seconds[0] < seconds[-1]
    assert seconds[-1] / 10000 < seconds[0]


def test_kfold_partitions_rows():
    folds = kfold_indices(10, 3, seed=0)
    assert [len(f) for f in folds] == [4, 3, 3]
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))


def test_grid_search_picks_lowest_cv_error():
    X, Y = smooth_data(300, seed=17)
    best, table = grid_search(ModelSpec("decision_tree"), X, Y, {"max_depth": [1, 6]}, folds=3)
    assert len(table) == 2
    scores = {p["max_depth"]: s for p, s in table}
    assert best.params["max_depth"] == min(scores, key=scores.get) == 6
