"""First-order upwind advection of the aqueous species along a 1D column."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geochem import AqueousSolution, ExchangerState


class CflViolation(ValueError):
    pass


@dataclass(frozen=True)
class TransportConfig:
    n_cells: int = 100
    length: float = 1.0  # m
    darcy_velocity: float = 2.78e-7  # m/s
    porosity: float = 0.3
    cfl: float = 0.9
    total_pore_volumes: float = 3.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells!r}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        # zero velocity is allowed as a degenerate no-flux configuration
        if not (math.isfinite(self.darcy_velocity) and self.darcy_velocity >= 0):
            raise ValueError("darcy_velocity must be finite and non-negative")
        if not 0 < self.porosity <= 1:
            raise ValueError("porosity must lie in (0, 1]")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not self.total_pore_volumes > 0:
            raise ValueError("total_pore_volumes must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def pore_volume_time(self) -> float:
        """Seconds needed to inject one pore volume."""
        return self.porosity * self.length / self.darcy_velocity

    def pore_volumes(self, time):
        return np.asarray(time) * self.darcy_velocity / (self.porosity * self.length)

    def courant(self, dt: float) -> float:
        return self.darcy_velocity * dt / (self.porosity * self.dx)

    def to_dict(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "length": self.length,
            "darcy_velocity": self.darcy_velocity,
            "porosity": self.porosity,
            "cfl": self.cfl,
            "total_pore_volumes": self.total_pore_volumes,
        }


@dataclass
class ColumnState:
    """Per-cell aqueous (n, 5) and sorbed (n, 3) amounts plus the inflow stream.

    ``equilibrated`` holds the aqueous composition each cell had after the
    last chemistry step; it is what the equilibrium-skip rule compares to.
    """

    aqueous: np.ndarray
    sorbed: np.ndarray
    inflow: AqueousSolution
    time: float = 0.0
    equilibrated: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.aqueous = np.array(self.aqueous, dtype=float)
        self.sorbed = np.array(self.sorbed, dtype=float)
        if self.aqueous.ndim != 2 or self.aqueous.shape[1] != 5:
            raise ValueError(f"aqueous must have shape (n, 5), got {self.aqueous.shape}")
        if self.sorbed.shape != (self.aqueous.shape[0], 3):
            raise ValueError(f"sorbed must have shape (n, 3), got {self.sorbed.shape}")
        if not (np.isfinite(self.aqueous).all() and np.isfinite(self.sorbed).all()):
            raise ValueError("column state contains non-finite values")
        if (self.aqueous < 0).any() or (self.sorbed < 0).any():
            raise ValueError("column state contains negative amounts")
        if self.equilibrated is None:
            self.equilibrated = self.aqueous.copy()

    @property
    def n_cells(self) -> int:
        return self.aqueous.shape[0]

    def cell(self, i: int) -> tuple[AqueousSolution, ExchangerState]:
        return AqueousSolution(*self.aqueous[i]), ExchangerState(*self.sorbed[i])

    def copy(self) -> ColumnState:
        return replace(self, aqueous=self.aqueous.copy(), sorbed=self.sorbed.copy(),
                       equilibrated=self.equilibrated.copy())

    @classmethod
    def uniform(cls, n_cells: int, solution: AqueousSolution, exchanger: ExchangerState,
                inflow: AqueousSolution) -> ColumnState:
        return cls(np.tile(solution.as_array(), (n_cells, 1)),
                   np.tile(exchanger.as_array(), (n_cells, 1)), inflow)


def stable_dt(cfg: TransportConfig) -> float:
    """Largest step for which the interstitial front moves ``cfl`` cells."""
    if cfg.darcy_velocity == 0:
        return math.inf
    return cfg.cfl * cfg.dx * cfg.porosity / cfg.darcy_velocity


def aqueous_moles(state: ColumnState, cfg: TransportConfig) -> np.ndarray:
    """Moles of each aqueous species per unit cross-section held in the column."""
    return state.aqueous.sum(axis=0) * cfg.porosity * cfg.dx


def advect_step(state: ColumnState, cfg: TransportConfig, dt: float) -> ColumnState:
    """Advance every aqueous species by one explicit upwind step.

    Inflow enters cell 0, cell ``n-1`` drains freely. The sorbed phase is
    immobile and is carried over unchanged.
    """
    if state.n_cells != cfg.n_cells:
        raise ValueError(f"state has {state.n_cells} cells, config expects {cfg.n_cells}")
    nu = cfg.courant(dt)
    if nu > cfg.cfl * (1 + 1e-12) or nu > 1 + 1e-12:
        raise CflViolation(f"Courant number {nu:.6g} exceeds the stability bound {cfg.cfl:.6g}")
    c = state.aqueous
    upstream = np.vstack([state.inflow.as_array()[None, :], c[:-1]])
    if abs(nu - 1.0) <= 1e-12:
        # unit Courant number: an exact shift, free of round-off
        new = upstream.copy()
    else:
        new = c - nu * (c - upstream)
    # round-off can leave -0.0 or tiny negatives next to a zero front
    np.maximum(new, 0.0, out=new)
    return ColumnState(new, state.sorbed.copy(), state.inflow, state.time + dt,
                       state.equilibrated.copy())
