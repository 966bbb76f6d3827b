import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtsurrogate.coupling import RolloutResult
from rtsurrogate.metrics import (
    DegenerateTruth,
    ErrorReport,
    GridMismatch,
    LengthMismatch,
    mse,
    per_step_rmse,
    r2,
    rmse,
    rollout_error,
)


def fake_rollout(fields, dt=10.0):
    n = len(fields)
    time = dt * np.arange(1, n + 1)
    outflow = np.zeros((n, 5))
    outflow[:, :3] = fields[:, -1, :]
    return RolloutResult(time=time, pore_volumes=time / 100.0, outflow=outflow,
                         calls=np.zeros((n, 3), dtype=np.int64),
                         cation_fields=np.asarray(fields, dtype=float))


def test_single_sample_arithmetic():
    assert mse([1, 2, 3], [2, 2, 3]) == pytest.approx(1 / 3, rel=1e-15)
    assert rmse([1, 2, 3], [2, 2, 3]) == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0


def test_r2_definitions():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(50, 3))
    assert r2(truth, truth) == 1.0
    assert r2(truth, np.tile(truth.mean(axis=0), (50, 1))) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DegenerateTruth):
        r2(np.ones((5, 3)), np.ones((5, 3)))
    with pytest.raises(DegenerateTruth):
        r2(truth[:1], truth[:1])


def test_length_errors():
    with pytest.raises(LengthMismatch):
        mse(np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(LengthMismatch):
        mse(np.zeros((0, 3)), np.zeros((0, 3)))


@given(arrays(float, (20, 3), elements=st.floats(-1, 1)),
       arrays(float, (20, 3), elements=st.floats(-1, 1)))
def test_metric_identities(truth, pred):
    assert rmse(truth, pred) ** 2 == pytest.approx(mse(truth, pred), rel=1e-12, abs=1e-300)
    perm = np.random.default_rng(1).permutation(20)
    assert mse(truth[perm], pred[perm]) == pytest.approx(mse(truth, pred), rel=1e-12, abs=0)
    if np.ptp(truth, axis=0).max() > 0:
        assert r2(truth, pred) <= 1.0


def test_error_report(tmp_path):
    truth = np.array([[1.0, 2.0, 3.0], [2.0, 3.0, 5.0], [4.0, 1.0, 0.0]])
    pred = truth + np.array([0.1, -0.2, 0.0])
    rep = ErrorReport.compute(truth, pred)
    assert rep.n_samples == 3
    assert rep.rmse == pytest.approx(math.sqrt(rep.mse))
    np.testing.assert_allclose(rep.mse_per_target, [0.01, 0.04, 0.0])
    assert rep.r2 <= 1 and rep.r2_per_target[2] == 1.0
    rep.to_json(tmp_path / "r.json")
    lines = rep.to_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "target,mse,rmse,r2,n_samples"
    assert lines[-1].startswith("pooled,")


def test_rollout_error_identity_offset_symmetry():
    rng = np.random.default_rng(2)
    fields = rng.uniform(0, 1e-3, (15, 8, 3))
    ref = fake_rollout(fields)
    assert rollout_error(ref, ref) == 0.0
    shifted = fake_rollout(fields + 2.5e-5)
    assert rollout_error(ref, shifted) == pytest.approx(2.5e-5, rel=1e-10)
    assert rollout_error(ref, shifted, outflow_only=True) == pytest.approx(2.5e-5, rel=1e-10)
    other = fake_rollout(rng.uniform(0, 1e-3, (15, 8, 3)))
    assert rollout_error(ref, other) == rollout_error(other, ref)
    steps = per_step_rmse(ref, other)
    assert steps.shape == (15,) and rollout_error(ref, other) == pytest.approx(steps.mean())


def test_rollout_error_is_mean_of_step_rmse():
    ref = fake_rollout(np.zeros((2, 1, 3)))
    test = np.zeros((2, 1, 3))
    test[1, 0, 0] = 3.0
    # step 1: 0; step 2: sqrt(9 / 3)
    assert rollout_error(ref, fake_rollout(test)) == pytest.approx(math.sqrt(3) / 2)


def test_rollout_grid_mismatch():
    a = fake_rollout(np.zeros((5, 4, 3)))
    with pytest.raises(GridMismatch):
        rollout_error(a, fake_rollout(np.zeros((6, 4, 3))))
    with pytest.raises(GridMismatch):
        rollout_error(a, fake_rollout(np.zeros((5, 4, 3)), dt=11.0))
    with pytest.raises(GridMismatch):
        rollout_error(a, fake_rollout(np.zeros((5, 3, 3))))
