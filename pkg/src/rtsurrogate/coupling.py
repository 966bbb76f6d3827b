"""Sequential non-iterative coupling of transport and chemistry.

Each time level runs one :func:`~rtsurrogate.transport.advect_step` followed
by one :func:`chemistry_step`. The chemistry step can be served by the
equilibrium oracle or by a trained surrogate, optionally with three
corrections for the surrogate path:

* skip cells whose aqueous composition did not change since they were last
  equilibrated,
* hand every ``oracle_period``-th step to the oracle,
* rescale surrogate cation outputs to the input cation charge.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geochem import (
    CHARGES,
    AqueousSolution,
    ExchangeParams,
    GeochemError,
    equilibrate_batch,
    exchanger_in_equilibrium,
)
from .transport import ColumnState, TransportConfig, advect_step, stable_dt

log = logging.getLogger(__name__)

DEFAULT_ORACLE_PERIOD = 10
BACKENDS = ("oracle", "surrogate")


class DegenerateCharge(ValueError):
    pass


class RolloutError(RuntimeError):
    def __init__(self, step: int, cells, cause: Exception):
        super().__init__(f"chemistry failed at step {step} (cells {list(cells)[:10]}): {cause}")
        self.step = step
        self.cells = cells


# --------------------------------------------------------------------------
# resident pore water and injected solution of the classic CaCl2 flushing problem, mmol/kgw

def initial_solution() -> AqueousSolution:
    return AqueousSolution.from_mmol(na=1.0, k=0.2, ca=0.0, cl=0.0, no3=1.2)


def injected_solution() -> AqueousSolution:
    return AqueousSolution.from_mmol(na=0.0, k=0.0, ca=0.6, cl=1.2, no3=0.0)


def initial_column(tcfg: TransportConfig, params: ExchangeParams,
                   solution: AqueousSolution | None = None,
                   inflow: AqueousSolution | None = None) -> ColumnState:
    """Uniform column whose exchanger is in equilibrium with the pore water."""
    solution = solution or initial_solution()
    inflow = inflow or injected_solution()
    exchanger = exchanger_in_equilibrium(solution, params)
    return ColumnState.uniform(tcfg.n_cells, solution, exchanger, inflow)


# --------------------------------------------------------------------------
# backends


class OracleBackend:
    name = "oracle"

    def react(self, cations: np.ndarray, sorbed: np.ndarray, params: ExchangeParams):
        aq, ex, _ = equilibrate_batch(cations, sorbed, params)
        return aq, ex


class SurrogateBackend:
    """Wraps a fitted model mapping (aqueous Na/K/Ca, NaX/KX/CaX2) to aqueous Na/K/Ca."""

    name = "surrogate"

    def __init__(self, model):
        self.model = model

    def predict(self, cations: np.ndarray, sorbed: np.ndarray) -> np.ndarray:
        """Model output bounded to ``[0, cations + sorbed]`` per cation.

        The upper bound is the amount the cell holds in total; a larger
        output would drive the exchanger negative.
        """
        if len(cations) == 0:
            return np.zeros((0, 3))
        out = np.asarray(self.model.predict(np.hstack([cations, sorbed])), dtype=float)
        return np.clip(out, 0.0, cations + sorbed)

    def react(self, cations: np.ndarray, sorbed: np.ndarray, params: ExchangeParams):
        out = self.predict(cations, sorbed)
        return out, update_exchanger(cations, sorbed, out)[0]


def update_exchanger(cations_in: np.ndarray, sorbed: np.ndarray, cations_out: np.ndarray):
    """Close the cation mass balance on the exchanger.

    Returns the new sorbed amounts (clipped at zero) and a boolean mask of
    cells where clipping was needed.
    """
    new = sorbed + (cations_in - cations_out)
    clipped = (new < 0).any(axis=1)
    return np.maximum(new, 0.0), clipped


# --------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class CouplingConfig:
    backend: str = "oracle"
    skip_equilibrium: bool = False
    skip_rtol: float = 1e-9
    oracle_period: int | None = None
    charge_rescale: bool = False

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.oracle_period is not None and (int(self.oracle_period) != self.oracle_period
                                               or self.oracle_period < 1):
            raise ValueError(f"oracle_period must be an integer >= 1, got {self.oracle_period!r}")
        if not self.skip_rtol >= 0:
            raise ValueError("skip_rtol must be non-negative")

    @classmethod
    def preset(cls, name: str, backend: str = "surrogate") -> CouplingConfig:
        """Named correction sets: ``none``, ``mod1``, ``mod1+2``, ``mod1+2+3``."""
        presets = {
            "none": {},
            "mod1": {"skip_equilibrium": True},
            "mod1+2": {"skip_equilibrium": True, "oracle_period": DEFAULT_ORACLE_PERIOD},
            "mod1+2+3": {"skip_equilibrium": True, "oracle_period": DEFAULT_ORACLE_PERIOD,
                         "charge_rescale": True},
        }
        if name not in presets:
            raise ValueError(f"unknown correction preset {name!r}; choose from {list(presets)}")
        return cls(backend=backend, **presets[name])

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "skip_equilibrium": self.skip_equilibrium,
            "skip_rtol": self.skip_rtol,
            "oracle_period": self.oracle_period,
            "charge_rescale": self.charge_rescale,
        }


@dataclass
class StepLog:
    surrogate_calls: int = 0
    oracle_calls: int = 0
    skipped_cells: int = 0
    clipped_cells: int = 0
    # (input charge, accepted output charge) for every rescaled surrogate output
    rescaled_charges: np.ndarray | None = field(default=None, repr=False)


OUTFLOW_COLUMNS = ("time_s", "pore_volumes", "na_out", "k_out", "ca_out", "cl_out", "no3_out",
                   "surrogate_calls", "oracle_calls", "skipped_cells")


@dataclass
class RolloutResult:
    time: np.ndarray
    pore_volumes: np.ndarray
    outflow: np.ndarray  # (n_steps, 5)
    calls: np.ndarray  # (n_steps, 3): surrogate, oracle, skipped
    cation_fields: np.ndarray | None = None  # (n_steps, n_cells, 3)
    snapshots: dict = field(default_factory=dict)
    clipped_cells: np.ndarray | None = None
    backend: str = "oracle"
    coupling: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.time)

    @property
    def surrogate_fraction(self) -> float:
        served = self.calls[:, 0].sum() + self.calls[:, 1].sum()
        return float(self.calls[:, 0].sum() / served) if served else 0.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(OUTFLOW_COLUMNS)
            for t, pv, out, calls in zip(self.time, self.pore_volumes, self.outflow, self.calls):
                writer.writerow([repr(float(t)), repr(float(pv)), *(repr(float(v)) for v in out),
                                 *(int(c) for c in calls)])
        return path

    @classmethod
    def read_csv(cls, path) -> RolloutResult:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(time=data[:, 0], pore_volumes=data[:, 1], outflow=data[:, 2:7],
                   calls=data[:, 7:10].astype(int))

    def save(self, path) -> Path:
        """Full result including per-cell fields, as ``.npz``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"time": self.time, "pore_volumes": self.pore_volumes, "outflow": self.outflow,
                  "calls": self.calls}
        if self.cation_fields is not None:
            arrays["cation_fields"] = self.cation_fields
        np.savez(path, backend=np.array(self.backend), **arrays)
        return path

    @classmethod
    def load(cls, path) -> RolloutResult:
        with np.load(path, allow_pickle=False) as data:
            return cls(time=data["time"], pore_volumes=data["pore_volumes"],
                       outflow=data["outflow"], calls=data["calls"],
                       cation_fields=data["cation_fields"] if "cation_fields" in data else None,
                       backend=str(data["backend"]))


# --------------------------------------------------------------------------
# operations


def charge_rescale(output: AqueousSolution, target_charge: float) -> AqueousSolution:
    """Scale Na, K and Ca of ``output`` so that its cation charge is ``target_charge``."""
    scaled = rescale_cations(output.cations()[None, :], np.array([target_charge]))[0]
    return AqueousSolution(*scaled, output.cl, output.no3)


def rescale_cations(cations: np.ndarray, target_charge: np.ndarray) -> np.ndarray:
    """Row-wise charge rescaling of (n, 3) cation arrays.

    Raises :class:`DegenerateCharge` if a row carries no charge but its
    target is positive.
    """
    cations = np.asarray(cations, dtype=float)
    target_charge = np.asarray(target_charge, dtype=float)
    charge = cations @ CHARGES
    bad = (charge <= 0) & (target_charge > 0)
    if bad.any():
        raise DegenerateCharge(f"{int(bad.sum())} outputs carry no cation charge")
    scale = np.divide(target_charge, charge, out=np.zeros_like(charge), where=charge > 0)
    return cations * scale[:, None]


def equilibrium_mask(state: ColumnState, rtol: float) -> np.ndarray:
    """Cells whose cations match their last equilibrated composition."""
    now = state.aqueous[:, :3]
    before = state.equilibrated[:, :3]
    scale = np.maximum(now @ CHARGES, before @ CHARGES)
    return (np.abs(now - before) <= rtol * scale[:, None]).all(axis=1)


def chemistry_step(state: ColumnState, ccfg: CouplingConfig, params: ExchangeParams,
                   step_index: int, surrogate: SurrogateBackend | None = None,
                   oracle: OracleBackend | None = None) -> tuple[ColumnState, StepLog]:
    """React every cell of ``state`` once; returns the new state and a call log."""
    oracle = oracle or OracleBackend()
    n = state.n_cells
    cations = state.aqueous[:, :3]
    sorbed = state.sorbed
    new_cations = cations.copy()
    new_sorbed = sorbed.copy()
    step_log = StepLog()

    oracle_step = ccfg.oracle_period is not None and step_index % ccfg.oracle_period == 0
    use_oracle = ccfg.backend == "oracle" or oracle_step
    if ccfg.skip_equilibrium and not oracle_step:
        skip = equilibrium_mask(state, ccfg.skip_rtol)
    else:
        skip = np.zeros(n, dtype=bool)
    todo = np.flatnonzero(~skip)
    step_log.skipped_cells = int(skip.sum())

    oracle_cells = todo if use_oracle else np.zeros(0, dtype=int)
    if not use_oracle and todo.size:
        if surrogate is None:
            raise ValueError("surrogate backend selected but no surrogate supplied")
        out = surrogate.predict(cations[todo], sorbed[todo])
        accepted = np.ones(todo.size, dtype=bool)
        if ccfg.charge_rescale:
            target = cations[todo] @ CHARGES
            charge = out @ CHARGES
            accepted = ~((charge <= 0) & (target > 0))
            out = out[accepted]
            out = rescale_cations(out, target[accepted])
            step_log.rescaled_charges = np.column_stack([target[accepted], out @ CHARGES])
        cells = todo[accepted]
        ex, clipped = update_exchanger(cations[cells], sorbed[cells], out)
        new_cations[cells] = out
        new_sorbed[cells] = ex
        step_log.surrogate_calls = int(cells.size)
        step_log.clipped_cells = int(clipped.sum())
        # surrogate collapsed to zero charge: the oracle takes these cells
        oracle_cells = todo[~accepted]

    if oracle_cells.size:
        try:
            aq, ex = oracle.react(cations[oracle_cells], sorbed[oracle_cells], params)
        except GeochemError as exc:
            raise RolloutError(step_index, oracle_cells, exc) from exc
        new_cations[oracle_cells] = aq
        new_sorbed[oracle_cells] = ex
        step_log.oracle_calls = int(oracle_cells.size)

    aqueous = state.aqueous.copy()
    aqueous[:, :3] = new_cations
    new_state = ColumnState(aqueous, new_sorbed, state.inflow, state.time, aqueous.copy())
    return new_state, step_log


def run_rollout(tcfg: TransportConfig, ccfg: CouplingConfig, params: ExchangeParams,
                initial: ColumnState, surrogate=None, n_steps: int | None = None,
                dt: float | None = None, snapshot_steps=(), record_fields: bool = True
                ) -> RolloutResult:
    """Alternate transport and chemistry until ``total_pore_volumes`` are injected.

    ``surrogate`` is a fitted model (anything with ``predict``) or a
    :class:`SurrogateBackend`; it is required when ``ccfg.backend`` is
    ``"surrogate"``. ``n_steps`` and ``dt`` override the defaults derived
    from ``tcfg``.
    """
    if surrogate is not None and not isinstance(surrogate, SurrogateBackend):
        surrogate = SurrogateBackend(surrogate)
    if ccfg.backend == "surrogate" and surrogate is None:
        raise ValueError("surrogate backend selected but no model given")
    if dt is None:
        dt = stable_dt(tcfg)
    if n_steps is None:
        if not math.isfinite(dt):
            raise ValueError("zero velocity needs explicit n_steps and dt")
        n_steps = int(math.ceil(tcfg.total_pore_volumes / tcfg.pore_volumes(dt) - 1e-9))
    oracle = OracleBackend()
    state = initial.copy()
    times = np.empty(n_steps)
    outflow = np.empty((n_steps, 5))
    calls = np.zeros((n_steps, 3), dtype=int)
    clipped = np.zeros(n_steps, dtype=int)
    fields = np.empty((n_steps, tcfg.n_cells, 3)) if record_fields else None
    snapshots = {}
    for i in range(n_steps):
        step = i + 1
        state = advect_step(state, tcfg, dt)
        state, step_log = chemistry_step(state, ccfg, params, step, surrogate, oracle)
        times[i] = state.time
        outflow[i] = state.aqueous[-1]
        calls[i] = (step_log.surrogate_calls, step_log.oracle_calls, step_log.skipped_cells)
        clipped[i] = step_log.clipped_cells
        if record_fields:
            fields[i] = state.aqueous[:, :3]
        if step in snapshot_steps:
            snapshots[step] = state.copy()
    if clipped.any():
        log.info("exchanger clipped at zero in %d cell-steps", int(clipped.sum()))
    return RolloutResult(times, tcfg.pore_volumes(times), outflow, calls, fields, snapshots,
                         clipped, ccfg.backend, ccfg.to_dict())
