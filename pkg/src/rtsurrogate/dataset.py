"""Training data for the surrogate: sampled inputs labelled by the equilibrium oracle.

Inputs are never taken from a coupled simulation. The oracle rollout used
by :func:`bootstrap_statistics` only provides value ranges and a covariance
for the ``ranged`` and ``covariance`` samplers.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geochem import CHARGES, ExchangeParams, GeochemError, equilibrate_batch

log = logging.getLogger(__name__)

FEATURE_NAMES = ("na_in", "k_in", "ca_in", "nax", "kx", "cax2")
TARGET_NAMES = ("na_out", "k_out", "ca_out")
HEADER = FEATURE_NAMES + TARGET_NAMES
VANILLA_HIGH = 0.0015  # mol/kgw
DEFAULT_CEC = 1.1e-3
CHUNK_ROWS = 4096
MAX_REJECTION_ROUNDS = 1000
# the seven non-empty subsets of the three aqueous cations
_ZERO_SUBSETS = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)][1:], dtype=bool)


class RejectionOverflow(RuntimeError):
    pass


class SamplerKind(str, Enum):
    VANILLA = "vanilla"
    RANGED = "ranged"
    VANILLA_ZEROS = "vanilla_zeros"
    RANGED_ZEROS = "ranged_zeros"
    COVARIANCE = "covariance"


@dataclass(frozen=True)
class SamplerSpec:
    """How to draw feature vectors.

    ``lo``/``hi`` bound every feature (mol/kgw). Exchanger draws are
    rescaled to ``cec`` equivalents; draws that leave the bounds after the
    rescaling are rejected. ``ranged`` samplers need explicit bounds and
    ``covariance`` needs ``mean`` and ``cov`` (see :func:`bootstrap_statistics`).
    """

    kind: SamplerKind = SamplerKind.VANILLA
    n: int = 100_000
    seed: int = 0
    lo: tuple = (0.0,) * 6
    hi: tuple = (VANILLA_HIGH,) * 6
    zero_prob: float = 0.3
    zero_exchanger: bool = False
    mean: tuple | None = None
    cov: tuple | None = None
    cec: float = DEFAULT_CEC

    def __post_init__(self):
        object.__setattr__(self, "kind", SamplerKind(self.kind))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a non-negative integer, got {self.n!r}")
        if len(self.lo) != 6 or len(self.hi) != 6:
            raise ValueError("lo and hi need six entries")
        lo, hi = np.array(self.lo), np.array(self.hi)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (lo >= 0).all()
                and (hi >= lo).all()):
            raise ValueError("bounds must satisfy 0 <= lo <= hi")
        if not 0 <= self.zero_prob <= 1:
            raise ValueError("zero_prob must lie in [0, 1]")
        if not self.cec >= 0:
            raise ValueError("cec must be non-negative")
        if self.kind is SamplerKind.COVARIANCE:
            if self.mean is None or self.cov is None:
                raise ValueError("covariance sampler needs mean and cov")
            mean = np.asarray(self.mean, dtype=float)
            cov = np.asarray(self.cov, dtype=float)
            if mean.shape != (6,) or cov.shape != (6, 6):
                raise ValueError("mean must have 6 entries and cov shape (6, 6)")
            if not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
                raise ValueError("cov must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12 * max(np.abs(cov).max(), 1e-300):
                raise ValueError("cov must be positive semi-definite")
            object.__setattr__(self, "mean", tuple(mean.tolist()))
            object.__setattr__(self, "cov", tuple(map(tuple, cov.tolist())))

    @property
    def zeros(self) -> bool:
        return self.kind in (SamplerKind.VANILLA_ZEROS, SamplerKind.RANGED_ZEROS)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> SamplerSpec:
        data = dict(data)
        for key in ("lo", "hi", "mean"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        if data.get("cov") is not None:
            data["cov"] = tuple(map(tuple, data["cov"]))
        return cls(**data)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _exchanger_to_capacity(raw: np.ndarray, cec: float):
    """Rescale sorbed moles so their equivalents sum to ``cec``; rows with no charge fail."""
    eq = raw @ CHARGES
    ok = eq > 0
    out = np.zeros_like(raw)
    out[ok] = raw[ok] * (cec / eq[ok])[:, None]
    return out, ok


def _draw_candidates(spec: SamplerSpec, rng, m: int) -> np.ndarray:
    lo, hi = np.array(spec.lo), np.array(spec.hi)
    if spec.kind is SamplerKind.COVARIANCE:
        return rng.multivariate_normal(np.array(spec.mean), np.array(spec.cov), size=m,
                                       method="eigh")
    return lo + (hi - lo) * rng.random((m, 6))


def _sample_chunk(spec: SamplerSpec, rng, m: int) -> np.ndarray:
    lo, hi = np.array(spec.lo), np.array(spec.hi)
    rows = []
    have = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        if have >= m:
            break
        cand = _draw_candidates(spec, rng, max(m - have, 16))
        ex, ok = _exchanger_to_capacity(np.maximum(cand[:, 3:], 0.0), spec.cec)
        cand[:, 3:] = ex
        ok &= (cand >= lo).all(axis=1) & (cand <= hi).all(axis=1)
        if spec.kind is SamplerKind.COVARIANCE:
            ok &= (cand >= 0).all(axis=1)
        good = cand[ok]
        rows.append(good)
        have += len(good)
    if have < m:
        raise RejectionOverflow(
            f"only {have} of {m} draws fell inside the bounds after "
            f"{MAX_REJECTION_ROUNDS} rejection rounds")
    out = np.vstack(rows)[:m]
    if spec.zeros:
        hit = rng.random(m) < spec.zero_prob
        subsets = _ZERO_SUBSETS[rng.integers(0, len(_ZERO_SUBSETS), m)]
        mask = hit[:, None] & subsets
        out[:, :3][mask] = 0.0
        if spec.zero_exchanger:
            # the exchanger must keep some species to hold its capacity
            partial = mask.sum(axis=1) < 3
            ex = out[partial, 3:]
            ex[mask[partial]] = 0.0
            out[partial, 3:] = _exchanger_to_capacity(ex, spec.cec)[0]
    return out


def sample(spec: SamplerSpec) -> np.ndarray:
    """Draw ``spec.n`` feature rows of shape (n, 6).

    Rows are generated in fixed chunks of ``CHUNK_ROWS`` with one random
    stream per chunk, so any chunk can be produced independently.
    """
    if spec.n == 0:
        return np.zeros((0, 6))
    chunks = []
    for c, start in enumerate(range(0, spec.n, CHUNK_ROWS)):
        chunks.append(_sample_chunk(spec, _chunk_rng(spec.seed, c), min(CHUNK_ROWS, spec.n - start)))
    return np.vstack(chunks)


def enforced_zero_mask(features: np.ndarray) -> np.ndarray:
    """Rows in which at least one aqueous cation is exactly zero."""
    return (np.asarray(features)[:, :3] == 0).any(axis=1)


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, 6)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets differ in length")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()[:16]

    def subset(self, rows) -> Dataset:
        return Dataset(self.features[rows], self.targets[rows], dict(self.provenance))

    def to_csv(self, path) -> Path:
        """Write the table plus a ``.json`` sidecar with provenance."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table = np.hstack([self.features, self.targets])
        with path.open("w") as fh:
            fh.write(",".join(HEADER) + "\n")
            if len(table):
                np.savetxt(fh, table, fmt="%.17g", delimiter=",")
        sidecar = {**self.provenance, "rows": len(self), "digest": self.digest}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> Dataset:
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            body = fh.read()
        table = (np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2).reshape(-1, 9)
                 if body.strip() else np.zeros((0, 9)))
        sidecar = path.with_suffix(".json")
        provenance = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        provenance.pop("rows", None)
        provenance.pop("digest", None)
        return cls(table[:, :6], table[:, 6:], provenance)


def label(features, params: ExchangeParams, provenance: dict | None = None) -> Dataset:
    """Attach oracle outputs (equilibrated aqueous Na, K, Ca) to ``features``.

    Rows the solver cannot handle are dropped and counted as ``dropped``.
    """
    features = np.asarray(features, dtype=float).reshape(-1, 6)
    keep = np.ones(len(features), dtype=bool)
    targets = np.zeros((len(features), 3))
    if len(features):
        try:
            targets, _, _ = equilibrate_batch(features[:, :3], features[:, 3:], params)
        except GeochemError:
            for i in range(len(features)):
                try:
                    targets[i] = equilibrate_batch(features[i:i + 1, :3], features[i:i + 1, 3:],
                                                   params)[0][0]
                except GeochemError:
                    keep[i] = False
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d rows the oracle could not equilibrate", dropped)
    prov = dict(provenance or {})
    prov.update({"params": params.to_dict(), "dropped": dropped})
    return Dataset(features[keep], targets[keep], prov)


def generate(spec: SamplerSpec, params: ExchangeParams) -> Dataset:
    return label(sample(spec), params, {"sampler": spec.to_dict()})


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle and cut into train and test parts."""
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


@dataclass(frozen=True)
class BootstrapStatistics:
    """Feature statistics of the chemistry inputs seen in an oracle rollout."""

    lo: tuple
    hi: tuple
    mean: tuple
    cov: tuple

    def ranged_spec(self, n: int, seed: int = 0, zeros: bool = False, cec: float = DEFAULT_CEC
                    ) -> SamplerSpec:
        kind = SamplerKind.RANGED_ZEROS if zeros else SamplerKind.RANGED
        return SamplerSpec(kind, n, seed, self.lo, self.hi, cec=cec)

    def covariance_spec(self, n: int, seed: int = 0, cec: float = DEFAULT_CEC) -> SamplerSpec:
        # bounds stay at the rollout ranges so the truncated draws remain in range
        return SamplerSpec(SamplerKind.COVARIANCE, n, seed, self.lo, self.hi, mean=self.mean,
                           cov=self.cov, cec=cec)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "mean": list(self.mean),
                "cov": [list(r) for r in self.cov]}

    @classmethod
    def from_dict(cls, data: dict) -> BootstrapStatistics:
        return cls(tuple(data["lo"]), tuple(data["hi"]), tuple(data["mean"]),
                   tuple(map(tuple, data["cov"])))


def rollout_inputs(tcfg, params: ExchangeParams) -> np.ndarray:
    """Every (pre-reaction cations, sorbed) row the oracle sees in the reference rollout."""
    from .coupling import CouplingConfig, chemistry_step, initial_column
    from .transport import advect_step, stable_dt

    state = initial_column(tcfg, params)
    ccfg = CouplingConfig(backend="oracle")
    dt = stable_dt(tcfg)
    n_steps = int(np.ceil(tcfg.total_pore_volumes / tcfg.pore_volumes(dt) - 1e-9))
    rows = []
    for step in range(1, n_steps + 1):
        state = advect_step(state, tcfg, dt)
        rows.append(np.hstack([state.aqueous[:, :3], state.sorbed]))
        state, _ = chemistry_step(state, ccfg, params, step)
    return np.vstack(rows)


def bootstrap_statistics(tcfg, params: ExchangeParams) -> BootstrapStatistics:
    """Per-feature ``[0, max]`` ranges, mean and covariance from an oracle rollout."""
    rows = rollout_inputs(tcfg, params)
    hi = rows.max(axis=0)
    # exchanger bounds must admit the capacity-rescaled draws; widen to the
    # largest amount a single exchanger species can hold
    hi[3:] = np.maximum(hi[3:], params.cec / CHARGES)
    return BootstrapStatistics(tuple([0.0] * 6), tuple(hi.tolist()),
                               tuple(rows.mean(axis=0).tolist()),
                               tuple(map(tuple, np.cov(rows, rowvar=False).tolist())))
