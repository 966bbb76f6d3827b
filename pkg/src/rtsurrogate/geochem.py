"""Na/K/Ca cation-exchange equilibrium under the Gaines-Thomas convention.

The exchanger X has a fixed capacity ``cec`` (eq/kgw). With ideal aqueous
activities ``a_i = m_i`` and equivalent fractions ``beta_i`` as exchange
activities, equilibrium is described by a single positive latent ``x``
(the activity of the free exchange site)::

    beta_NaX   = K_Na * m_Na * x
    beta_KX    = K_K  * m_K  * x
    beta_CaX2  = K_Ca * m_Ca * x**2
    beta_NaX + beta_KX + beta_CaX2 = 1

together with one mass balance per cation. Anions never touch the exchanger.

Two independent solvers are provided: :func:`equilibrate` (vectorized damped
Newton in log space) and :func:`equilibrate_bruteforce` (scalar bisection on
``x``), which serves as the oracle in the test suite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

CATIONS = ("na", "k", "ca")
ANIONS = ("cl", "no3")
SPECIES = CATIONS + ANIONS
CHARGES = np.array([1.0, 1.0, 2.0])

# totals within this relative margin of the capacity count as saturated
SATURATION_MARGIN = 1e-13
NEWTON_TOL = 1e-13
NEWTON_ACCEPT = 1e-11
MAX_ITERATIONS = 200
MAX_HALVINGS = 50


class GeochemError(Exception):
    pass


class NonConvergence(GeochemError):
    pass


class InvalidParams(GeochemError, ValueError):
    pass


def _coerce_amounts(obj, names):
    for name in names:
        value = float(getattr(obj, name))
        if not math.isfinite(value) or value < 0.0:
            raise InvalidParams(f"{name} must be finite and non-negative, got {value!r}")
        object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class AqueousSolution:
    """Molalities (mol/kgw) of the five transported species."""

    na: float = 0.0
    k: float = 0.0
    ca: float = 0.0
    cl: float = 0.0
    no3: float = 0.0

    def __post_init__(self):
        _coerce_amounts(self, SPECIES)

    @property
    def cation_charge(self) -> float:
        return self.na + self.k + 2.0 * self.ca

    def cations(self) -> np.ndarray:
        return np.array([self.na, self.k, self.ca])

    def as_array(self) -> np.ndarray:
        return np.array([self.na, self.k, self.ca, self.cl, self.no3])

    @classmethod
    def from_array(cls, values) -> AqueousSolution:
        return cls(*(float(v) for v in values))

    @classmethod
    def from_mmol(cls, **kwargs) -> AqueousSolution:
        return cls(**{key: value * 1e-3 for key, value in kwargs.items()})


@dataclass(frozen=True)
class ExchangerState:
    """Sorbed amounts in mol per kgw of contacting water."""

    na_x: float = 0.0
    k_x: float = 0.0
    ca_x2: float = 0.0

    def __post_init__(self):
        _coerce_amounts(self, ("na_x", "k_x", "ca_x2"))

    @property
    def equivalents(self) -> float:
        return self.na_x + self.k_x + 2.0 * self.ca_x2

    def as_array(self) -> np.ndarray:
        return np.array([self.na_x, self.k_x, self.ca_x2])

    @classmethod
    def from_array(cls, values) -> ExchangerState:
        return cls(*(float(v) for v in values))


class ActivityModel(str, enum.Enum):
    IDEAL = "ideal"


@dataclass(frozen=True)
class ExchangeParams:
    """Half-reaction selectivities (log10) and exchange capacity (eq/kgw)."""

    log_k_na: float = 0.0
    log_k_k: float = 0.7
    log_k_ca: float = 0.8
    cec: float = 1.1e-3
    activity_model: ActivityModel = ActivityModel.IDEAL

    def __post_init__(self):
        for name in ("log_k_na", "log_k_k", "log_k_ca", "cec"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParams(f"{name} must be finite, got {value!r}")
        if self.cec < 0:
            raise InvalidParams(f"cec must be non-negative, got {self.cec!r}")
        object.__setattr__(self, "activity_model", ActivityModel(self.activity_model))

    @property
    def selectivities(self) -> np.ndarray:
        return 10.0 ** np.array([self.log_k_na, self.log_k_k, self.log_k_ca])

    def log_k_pair(self, b: str, a: str) -> float:
        """log10 of K_{B\\A} for ``A-X + B = B-X + A`` written per equivalent pair.

        For homovalent pairs this is the plain difference of half-reaction
        constants; heterovalent pairs weight each half reaction by the charge
        of the other ion (e.g. ``Ca + 2 NaX = CaX2 + 2 Na``).
        """
        logs = dict(zip(CATIONS, (self.log_k_na, self.log_k_k, self.log_k_ca)))
        charge = dict(zip(CATIONS, CHARGES))
        return charge[a] * logs[b] - charge[b] * logs[a]

    def to_dict(self) -> dict:
        return {
            "log_k_na": self.log_k_na,
            "log_k_k": self.log_k_k,
            "log_k_ca": self.log_k_ca,
            "cec": self.cec,
            "activity_model": self.activity_model.value,
        }


@dataclass(frozen=True)
class EquilibriumResult:
    solution: AqueousSolution
    exchanger: ExchangerState
    iterations: int
    max_residual: float
    x: float
    method: str


# --------------------------------------------------------------------------
# residuals


def mass_action_residuals(solution: AqueousSolution, exch: ExchangerState, x: float,
                          params: ExchangeParams) -> np.ndarray:
    """Mass-action residuals for NaX, KX, CaX2 and the fraction-sum residual.

    ``r_i = beta_i(exch) - K_i a_i x**z_i`` and
    ``r_sum = sum_i K_i a_i x**z_i - 1``.
    """
    if params.cec > 0:
        beta = CHARGES * exch.as_array() / params.cec
    else:
        beta = np.zeros(3)
    implied = params.selectivities * solution.cations() * x ** CHARGES
    return np.append(beta - implied, implied.sum() - 1.0)


def _validate_batch(aqueous, sorbed):
    aqueous = np.atleast_2d(np.asarray(aqueous, dtype=float))
    sorbed = np.atleast_2d(np.asarray(sorbed, dtype=float))
    if aqueous.shape[-1] != 3 or sorbed.shape != aqueous.shape:
        raise InvalidParams(f"expected matching (n, 3) arrays, got {aqueous.shape} and {sorbed.shape}")
    if not (np.isfinite(aqueous).all() and np.isfinite(sorbed).all()):
        raise InvalidParams("non-finite concentrations")
    if (aqueous < 0).any() or (sorbed < 0).any():
        raise InvalidParams("negative concentrations")
    return aqueous, sorbed


# --------------------------------------------------------------------------
# Newton solver


def _newton_residual(w, totals, active, k, cec):
    m = np.where(active, np.exp(w[:, :3]), 0.0)
    xz = np.exp(w[:, 3:4] * CHARGES)
    sorbed_moles = cec * k * m * xz / CHARGES
    safe_totals = np.where(active, totals, 1.0)
    f = np.empty_like(w)
    f[:, :3] = np.where(active, (m + sorbed_moles - totals) / safe_totals, 0.0)
    f[:, 3] = (k * m * xz).sum(axis=1) - 1.0
    return f


def _newton_jacobian(w, totals, active, k, cec):
    n = w.shape[0]
    m = np.where(active, np.exp(w[:, :3]), 0.0)
    xz = np.exp(w[:, 3:4] * CHARGES)
    beta = k * m * xz
    safe_totals = np.where(active, totals, 1.0)
    jac = np.zeros((n, 4, 4))
    idx = np.arange(3)
    jac[:, idx, idx] = np.where(active, (m + cec * beta / CHARGES) / safe_totals, 1.0)
    jac[:, :3, 3] = np.where(active, cec * beta / safe_totals, 0.0)
    jac[:, 3, :3] = beta
    jac[:, 3, 3] = (CHARGES * beta).sum(axis=1)
    return jac


def _initial_guess(totals, k, cec):
    # root of K_Ca T_Ca x^2 + (K_Na T_Na + K_K T_K) x = 1, i.e. no depletion
    a = k[2] * totals[:, 2]
    b = k[0] * totals[:, 0] + k[1] * totals[:, 1]
    x0 = 2.0 / (b + np.sqrt(b * b + 4.0 * a))
    m0 = totals / (1.0 + cec * k * x0[:, None] ** CHARGES / CHARGES)
    with np.errstate(divide="ignore"):
        w = np.concatenate([np.log(m0), np.log(x0)[:, None]], axis=1)
    w[:, :3][totals <= 0] = 0.0
    return w


def _newton(totals, k, cec):
    """Damped Newton on rows of ``totals``; returns (m, x, iterations, residual, ok)."""
    n = totals.shape[0]
    active = totals > 0
    w = _initial_guess(totals, k, cec)
    iterations = np.zeros(n, dtype=int)
    ok = np.zeros(n, dtype=bool)
    residual = np.full(n, np.inf)
    work = np.arange(n)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f = _newton_residual(w, totals, active, k, cec)
        norm = np.abs(f).max(axis=1)
        for it in range(MAX_ITERATIONS + 1):
            done = norm[work] <= NEWTON_TOL
            ok[work[done]] = True
            residual[work[done]] = norm[work[done]]
            work = work[~done]
            if work.size == 0 or it == MAX_ITERATIONS:
                break
            t, a = totals[work], active[work]
            jac = _newton_jacobian(w[work], t, a, k, cec)
            try:
                step = -np.linalg.solve(jac, f[work][..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.stack([_lstsq_step(j, r) for j, r in zip(jac, f[work])])
            lam = np.ones(work.size)
            trial = w[work] + step
            f_trial = _newton_residual(trial, t, a, k, cec)
            n_trial = np.abs(f_trial).max(axis=1)
            worse = ~(n_trial < norm[work])
            for _ in range(MAX_HALVINGS):
                if not worse.any():
                    break
                lam[worse] *= 0.5
                trial[worse] = w[work][worse] + lam[worse, None] * step[worse]
                f_trial[worse] = _newton_residual(trial[worse], t[worse], a[worse], k, cec)
                n_trial[worse] = np.abs(f_trial[worse]).max(axis=1)
                worse = ~(n_trial < norm[work])
            improved = ~worse
            upd = work[improved]
            w[upd] = trial[improved]
            f[upd] = f_trial[improved]
            norm[upd] = n_trial[improved]
            iterations[work] += 1
            # no further decrease possible: accept if already at round-off level
            stuck = work[worse]
            accept = stuck[norm[stuck] <= NEWTON_ACCEPT]
            ok[accept] = True
            residual[accept] = norm[accept]
            work = upd
        m = np.where(active, np.exp(w[:, :3]), 0.0)
        x = np.exp(w[:, 3])
    residual[~ok] = norm[~ok]
    return m, x, iterations, residual, ok


def _lstsq_step(jac, f):
    return -np.linalg.lstsq(jac, f, rcond=None)[0]


def equilibrate_batch(aqueous, sorbed, params: ExchangeParams, fallback: bool = True):
    """Equilibrate many cells at once.

    Parameters
    ----------
    aqueous, sorbed : array_like, shape (n, 3)
        Aqueous cation molalities (Na, K, Ca) and sorbed amounts (NaX, KX,
        CaX2) before reaction, mol/kgw.
    params : ExchangeParams
    fallback : bool
        Re-solve rows where Newton fails with the bisection oracle.

    Returns
    -------
    aqueous_out, sorbed_out : ndarray, shape (n, 3)
    info : dict
        ``iterations``, ``residual``, ``x`` and ``method`` per row.
    """
    aqueous, sorbed = _validate_batch(aqueous, sorbed)
    n = aqueous.shape[0]
    totals = aqueous + sorbed
    cec = params.cec
    out_aq = totals.copy()
    out_ex = np.zeros_like(totals)
    info = {
        "iterations": np.zeros(n, dtype=int),
        "residual": np.zeros(n),
        "x": np.zeros(n),
        "method": np.full(n, "trivial", dtype=object),
    }
    if n == 0 or cec == 0:
        return out_aq, out_ex, info

    equivalents = totals @ CHARGES
    saturated = equivalents <= cec * (1.0 + SATURATION_MARGIN)
    # every cation fits on the exchanger: nothing is left in solution
    out_aq[saturated] = 0.0
    out_ex[saturated] = totals[saturated]
    info["x"][saturated] = np.inf
    info["method"][saturated] = "saturated"

    rows = np.flatnonzero(~saturated)
    if rows.size:
        k = params.selectivities
        m, x, iters, resid, ok = _newton(totals[rows], k, cec)
        m = np.minimum(m, totals[rows])
        out_aq[rows] = m
        out_ex[rows] = totals[rows] - m
        info["iterations"][rows] = iters
        info["residual"][rows] = resid
        info["x"][rows] = x
        info["method"][rows] = "newton"
        failed = rows[~ok]
        if failed.size:
            if not fallback:
                raise NonConvergence(f"Newton failed on {failed.size} of {n} rows")
            for r in failed:
                res = equilibrate_bruteforce(
                    AqueousSolution(*aqueous[r]), ExchangerState(*sorbed[r]), params)
                out_aq[r] = res.solution.cations()
                out_ex[r] = res.exchanger.as_array()
                info["iterations"][r] += res.iterations
                info["residual"][r] = res.max_residual
                info["x"][r] = res.x
                info["method"][r] = "bisection"
    # exact mass balance: sorbed amounts are what the solution gave up
    out_ex = np.maximum(totals - out_aq, 0.0)
    out_aq = totals - out_ex
    return out_aq, out_ex, info


def equilibrate(totals: AqueousSolution, exch: ExchangerState,
                params: ExchangeParams) -> EquilibriumResult:
    """Equilibrate one cell: aqueous ``totals`` in contact with exchanger ``exch``.

    Falls back to :func:`equilibrate_bruteforce` if Newton does not converge.
    """
    aq, ex, info = equilibrate_batch(totals.cations(), exch.as_array(), params)
    solution = AqueousSolution(*aq[0], totals.cl, totals.no3)
    exchanger = ExchangerState(*ex[0])
    x = float(info["x"][0])
    if info["method"][0] in ("newton", "bisection"):
        max_residual = float(np.abs(mass_action_residuals(solution, exchanger, x, params)).max())
    else:
        max_residual = 0.0
    return EquilibriumResult(solution, exchanger, int(info["iterations"][0]),
                             max_residual, x, str(info["method"][0]))


def exchanger_in_equilibrium(solution: AqueousSolution, params: ExchangeParams) -> ExchangerState:
    """Exchanger composition in equilibrium with ``solution`` held fixed.

    Used to initialise a column: the pore water keeps its composition and
    the exchanger is loaded to capacity with the matching fractions.
    """
    if params.cec == 0:
        return ExchangerState()
    m = solution.cations()
    k = params.selectivities
    a = k[2] * m[2]
    b = k[0] * m[0] + k[1] * m[1]
    if a == 0 and b == 0:
        raise InvalidParams("solution holds no cations to balance the exchanger")
    x = 2.0 / (b + math.sqrt(b * b + 4.0 * a))
    beta = k * m * x ** CHARGES
    beta /= beta.sum()
    return ExchangerState(*(params.cec * beta / CHARGES))


# --------------------------------------------------------------------------
# bisection oracle


def equilibrate_bruteforce(totals: AqueousSolution, exch: ExchangerState,
                           params: ExchangeParams, max_iter: int = 4000) -> EquilibriumResult:
    """Reference solver: bisection on the exchange-site activity ``x``.

    For fixed ``x`` each cation's mass balance ``m + cec*K*m*x**z/z = T`` is
    solved exactly for ``m``; the fraction sum is then monotone increasing in
    ``x`` and is bracketed and bisected geometrically.
    """
    for v in (*totals.as_array(), *exch.as_array()):
        if not math.isfinite(v):
            raise InvalidParams("non-finite input")
    cec = params.cec
    t = [totals.na + exch.na_x, totals.k + exch.k_x, totals.ca + exch.ca_x2]
    if cec == 0:
        return EquilibriumResult(totals, ExchangerState(), 0, 0.0, 0.0, "trivial")
    equivalents = t[0] + t[1] + 2.0 * t[2]
    if equivalents < cec * (1.0 - SATURATION_MARGIN):
        raise NonConvergence("cation equivalents do not reach the exchange capacity")
    if equivalents <= cec * (1.0 + SATURATION_MARGIN):
        return EquilibriumResult(AqueousSolution(0.0, 0.0, 0.0, totals.cl, totals.no3),
                                 ExchangerState(*t), 0, 0.0, math.inf, "saturated")
    ks = [10.0 ** params.log_k_na, 10.0 ** params.log_k_k, 10.0 ** params.log_k_ca]
    zs = [1, 1, 2]

    def dissolved(x):
        return [ti / (1.0 + cec * ki * x ** zi / zi) if ti > 0 else 0.0
                for ti, ki, zi in zip(t, ks, zs)]

    def fraction_sum(x):
        return sum(ki * mi * x ** zi for ki, mi, zi in zip(ks, dissolved(x), zs))

    lo = hi = 1.0
    count = 0
    while fraction_sum(lo) >= 1.0:
        lo *= 1e-3
        count += 1
        if lo < 1e-250:
            raise NonConvergence("cannot bracket the exchange-site activity from below")
    while fraction_sum(hi) <= 1.0:
        hi *= 1e3
        count += 1
        if hi > 1e250:
            raise NonConvergence("cation equivalents do not exceed the exchange capacity")
    for _ in range(max_iter):
        if hi / lo - 1.0 <= 4e-16:
            break
        mid = math.sqrt(lo * hi)
        if mid <= lo or mid >= hi:
            break
        if fraction_sum(mid) < 1.0:
            lo = mid
        else:
            hi = mid
        count += 1
    else:
        raise NonConvergence("bisection did not close the bracket")
    x = math.sqrt(lo * hi)
    m = dissolved(x)
    sorbed = [max(ti - mi, 0.0) for ti, mi in zip(t, m)]
    m = [ti - si for ti, si in zip(t, sorbed)]
    solution = AqueousSolution(m[0], m[1], m[2], totals.cl, totals.no3)
    exchanger = ExchangerState(*sorbed)
    resid = float(np.abs(mass_action_residuals(solution, exchanger, x, params)).max())
    return EquilibriumResult(solution, exchanger, count, resid, x, "bisection")
