"""End-to-end acceptance checks at full scale (100-cell column, 100k-row datasets).

Every check records a one-line verdict that is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import random_inputs, record_criterion
from rtsurrogate import experiments as ex
from rtsurrogate.config import ExperimentConfig
from rtsurrogate.coupling import (
    CouplingConfig,
    SurrogateBackend,
    chemistry_step,
    initial_column,
    run_rollout,
)
from rtsurrogate.geochem import (
    AqueousSolution,
    ExchangerState,
    equilibrate_batch,
    equilibrate_bruteforce,
)
from rtsurrogate.metrics import rollout_error
from rtsurrogate.surrogate import MinMaxScaler, TrainedModel
from rtsurrogate.surrogate.mlp import MLPRegressor
from rtsurrogate.transport import advect_step, stable_dt

pytestmark = pytest.mark.acceptance

MMOL = 1e-3


class Experiments:
    """Lazily built datasets, models and rollouts shared by the criteria."""

    def __init__(self):
        self.cfg = ExperimentConfig()
        self.datasets = {}
        self.models = {}
        self.reports = {}
        self.seconds = {}
        self._reference = None

    @property
    def reference(self):
        if self._reference is None:
            self._reference = ex.reference_rollout(self.cfg)
        return self._reference

    def dataset(self, sampler, n):
        key = (sampler, n)
        if key not in self.datasets:
            start = time.perf_counter()
            self.datasets[key] = ex.make_dataset(self.cfg, sampler, n=n)
            self.seconds[("generate",) + key] = time.perf_counter() - start
        return self.datasets[key]

    def model(self, name, sampler, n):
        key = (name, sampler, n)
        if key not in self.models:
            ds = self.dataset(sampler, n)
            start = time.perf_counter()
            trained, report, _ = ex.train(self.cfg, name, ds)
            self.seconds[("train",) + key] = time.perf_counter() - start
            self.models[key], self.reports[key] = trained, report
        return self.models[key]

    def report(self, name, sampler, n):
        self.model(name, sampler, n)
        return self.reports[(name, sampler, n)]

    def rollout(self, model, preset):
        return ex.surrogate_rollout(self.cfg, model, preset)

    @property
    def ablation_model(self):
        section = self.cfg.data["ablation"]
        n = self.cfg.data["samplers"][section["sampler"]]["n"]
        return self.model(section["model"], section["sampler"], n)


@pytest.fixture(scope="session")
def exps():
    return Experiments()


def test_criterion_01_oracle_correctness():
    start = time.perf_counter()
    params = ExperimentConfig().exchange
    aq, sorbed = random_inputs(1000, seed=2024)
    aq[:5] = 0.0  # rows with every aqueous cation absent
    sol, ex_out, _ = equilibrate_batch(aq, sorbed, params)
    worst_diff = 0.0
    for i in range(1000):
        ref = equilibrate_bruteforce(AqueousSolution(*aq[i]), ExchangerState(*sorbed[i]), params)
        worst_diff = max(worst_diff, np.abs(sol[i] - ref.solution.cations()).max(),
                         np.abs(ex_out[i] - ref.exchanger.as_array()).max())
    totals = aq + sorbed
    conservation = (np.abs(sol + ex_out - totals) / totals.sum(axis=1, keepdims=True)).max()
    again, again_ex, _ = equilibrate_batch(sol, ex_out, params)
    fixed = (np.abs(np.hstack([again - sol, again_ex - ex_out]))
             / totals.sum(axis=1, keepdims=True)).max()
    seconds = time.perf_counter() - start
    ok = worst_diff <= 1e-8 and conservation <= 1e-12 and fixed <= 1e-10 and seconds < 30
    record_criterion(1, "oracle agrees with bisection, conserves and is a fixed point", ok,
                     f"max diff {worst_diff:.1e} (<=1e-8), conservation {conservation:.1e} "
                     f"(<=1e-12), fixed point {fixed:.1e} (<=1e-10), {seconds:.1f}s (<30s)")
    assert ok


def test_criterion_02_chromatography():
    start = time.perf_counter()
    cfg = ExperimentConfig()
    tcfg, params = cfg.transport, cfg.exchange
    result = run_rollout(tcfg, CouplingConfig(), params, initial_column(tcfg, params))
    seconds = time.perf_counter() - start
    na, k, ca = result.outflow[:, 0], result.outflow[:, 1], result.outflow[:, 2]
    na0 = initial_column(tcfg, params).aqueous[-1, 0]
    breakthrough = int(np.argmax(ca > 0.01 * MMOL))
    na_gone = int(np.argmax(na < 0.01 * na0))
    a_ok = 0 < na_gone < breakthrough
    plateau = (na < 0.01 * na0) & (ca < 0.01 * MMOL)
    k_err = float(np.abs(k[plateau] - 1.2 * MMOL).max() / (1.2 * MMOL)) if plateau.any() else np.inf
    b_ok = plateau.any() and k_err <= 0.02
    c_err = abs(ca[-1] - 0.6 * MMOL) / (0.6 * MMOL)
    ok = a_ok and b_ok and c_err <= 0.01 and seconds < 120
    record_criterion(2, "oracle rollout shows Na, then K plateau, then Ca", ok,
                     f"Na <1% at step {na_gone}, Ca breakthrough at step {breakthrough}; "
                     f"K plateau over {int(plateau.sum())} steps off by {k_err:.2%} (<=2%); "
                     f"final Ca off by {c_err:.2%} (<=1%); {seconds:.1f}s")
    assert ok


def test_criterion_03_one_shot_accuracy(exps):
    report = exps.report("gbdt_residual", "vanilla", 100_000)
    seconds = (exps.seconds[("generate", "vanilla", 100_000)]
               + exps.seconds[("train", "gbdt_residual", "vanilla", 100_000)])
    ok = abs(report.r2 - 0.993) <= 0.01 and report.r2 >= 0.99 and seconds < 600
    record_criterion(3, "GBDT with residual connection reaches held-out R2 >= 0.99", ok,
                     f"R2 {report.r2:.5f} on {report.n_samples} rows, RMSE {report.rmse:.2e}, "
                     f"{seconds:.0f}s")
    assert ok


def test_criterion_04_residual_connection_helps(exps):
    rmse = {name: exps.report(name, "vanilla", 100_000).rmse
            for name in ("gbdt", "gbdt_residual", "mlp", "mlp_residual")}
    ok = rmse["gbdt_residual"] <= rmse["gbdt"] and rmse["mlp_residual"] <= rmse["mlp"]
    record_criterion(4, "residual connection does not increase held-out RMSE", ok,
                     f"GBDT {rmse['gbdt_residual']:.2e} vs {rmse['gbdt']:.2e}, "
                     f"MLP {rmse['mlp_residual']:.2e} vs {rmse['mlp']:.2e}")
    assert ok


@pytest.fixture(scope="session")
def ablation(exps):
    model = exps.ablation_model
    start = time.perf_counter()
    rows = ex.ablation(exps.cfg, model, exps.reference)
    return rows, time.perf_counter() - start


def test_criterion_05_uncorrected_rollout_fails(ablation):
    rows, _ = ablation
    errors = {r.preset: r.rollout_error for r in rows}
    ratio = errors["none"] / errors["mod1+2+3"]
    ok = ratio >= 10
    record_criterion(5, "uncorrected surrogate rollout error >= 10x the corrected one", ok,
                     f"none {errors['none']:.2e} vs all corrections {errors['mod1+2+3']:.2e} "
                     f"(ratio {ratio:.1f})")
    assert ok


def test_criterion_06_correction_ablation_ordering(ablation):
    rows, seconds = ablation
    errors = [r.rollout_error for r in rows]
    decrements = [a / b for a, b in zip(errors[:-1], errors[1:])]
    strictly = all(b < a for a, b in zip(errors[:-1], errors[1:]))
    charge_largest = decrements[-1] == max(decrements) and decrements[-1] >= 5
    ok = strictly and charge_largest and seconds < 900
    record_criterion(6, "error falls with each correction, charge balance gives >= 5x", ok,
                     "errors " + ", ".join(f"{r.preset} {r.rollout_error:.2e}" for r in rows)
                     + "; decrements " + ", ".join(f"{d:.2f}x" for d in decrements)
                     + f"; {seconds:.0f}s")
    assert ok


def test_criterion_07_sampling_strategy_ordering(exps):
    sweep = exps.cfg.data["sweep"]
    errors = {}
    for sampler in sweep["samplers"]:
        for size in sweep["sizes"]:
            model = exps.model(sweep["model"], sampler, int(size))
            errors[sampler, size] = rollout_error(exps.reference,
                                                  exps.rollout(model, sweep["preset"]))
    zeros = [s for s in sweep["samplers"] if s.endswith("_zeros")]
    below = all(errors[z, n] < errors["vanilla", n] for z in zeros for n in sweep["sizes"])
    vanilla = [errors["vanilla", n] for n in sweep["sizes"]]
    non_increasing = all(b <= a for a, b in zip(vanilla[:-1], vanilla[1:]))
    ok = below and non_increasing
    table = "; ".join(f"{n}: " + ", ".join(f"{s} {errors[s, n]:.2e}" for s in sweep["samplers"])
                      for n in sweep["sizes"])
    record_criterion(7, "zeros samplers beat vanilla at every size; vanilla improves with size",
                     ok, f"preset {sweep['preset']}; {table}")
    assert ok


def test_criterion_08_surrogate_call_fraction(exps):
    cfg = exps.cfg
    tcfg, params = cfg.transport, cfg.exchange
    ccfg = CouplingConfig(backend="surrogate", oracle_period=10)
    result = run_rollout(tcfg, ccfg, params, initial_column(tcfg, params),
                         surrogate=exps.ablation_model, n_steps=200)
    surrogate, oracle = int(result.calls[:, 0].sum()), int(result.calls[:, 1].sum())
    ok = 10 * surrogate == 9 * (surrogate + oracle) and surrogate > 0
    record_criterion(8, "90% of chemistry calls go to the surrogate", ok,
                     f"{surrogate} surrogate / {surrogate + oracle} calls over 200 steps "
                     f"({result.surrogate_fraction:.4f})")
    assert ok


def test_criterion_09_charge_rescale_exact(exps):
    cfg = exps.cfg
    tcfg, params = cfg.transport, cfg.exchange
    ccfg = cfg.coupling("mod1+2+3")
    backend = SurrogateBackend(exps.ablation_model)
    state = initial_column(tcfg, params)
    dt = stable_dt(tcfg)
    n_steps = int(np.ceil(tcfg.total_pore_volumes / tcfg.pore_volumes(dt) - 1e-9))
    worst, accepted = 0.0, 0
    for step in range(1, n_steps + 1):
        state = advect_step(state, tcfg, dt)
        state, log = chemistry_step(state, ccfg, params, step, backend)
        pairs = log.rescaled_charges
        if pairs is not None and len(pairs):
            accepted += len(pairs)
            worst = max(worst, float((np.abs(pairs[:, 1] - pairs[:, 0]) / pairs[:, 0]).max()))
    ok = accepted > 0 and worst <= 1e-12
    record_criterion(9, "rescaled surrogate outputs carry the input charge", ok,
                     f"{accepted} accepted outputs, max relative charge error {worst:.1e}")
    assert ok


def test_criterion_10_numerics_hygiene(exps, tmp_path):
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, (10, 6))
    Y = rng.uniform(-1, 1, (10, 3))
    mlp = MLPRegressor(hidden=(16, 16))
    mlp.init_params(6, 3, rng)
    _, gw, gb = mlp.loss_and_grads(X, Y)
    h, grad_err = 1e-6, 0.0
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
            grad_err = max(grad_err, np.abs(numeric - g).max()
                           / max(np.abs(numeric).max(), np.abs(g).max()))
    features = exps.dataset("vanilla", 100_000).features
    scaler = MinMaxScaler.fit(features)
    scale_err = float((np.abs(scaler.inverse_transform(scaler.transform(features)) - features)
                       / np.abs(features).max(axis=0)).max())
    identical = True
    probe = features[:5000]
    for name in ("gbdt_residual", "mlp_residual"):
        model = exps.model(name, "vanilla", 100_000)
        back = TrainedModel.load(model.save(tmp_path / f"{name}.npz"))
        identical &= np.array_equal(back.predict(probe), model.predict(probe))
    ok = grad_err <= 1e-5 and scale_err <= 1e-12 and identical
    record_criterion(10, "gradient check, scaler round trip, bit-identical reload", ok,
                     f"gradient rel err {grad_err:.1e} (<=1e-5), scaler {scale_err:.1e} "
                     f"(<=1e-12), reload identical: {identical}")
    assert ok
