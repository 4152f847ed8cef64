"""Discrete path data model and realized-characteristics estimation.

Paths live on uniform time grids.  The estimators here are the realized
analogues of a continuous semimartingale's characteristics: cumulative
quadratic covariation from summed increment outer products, a windowed
(and strictly backward-looking) covariation density, and cross-sectional
drift estimation over ensembles.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GridMismatchError, WindowTooSmallError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * dt, k = 0..steps, with dt = t_max / steps."""

    t_max: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not (self.t_max > 0 and np.isfinite(self.t_max)):
            raise ValueError("t_max must be positive and finite")

    @property
    def dt(self) -> float:
        return self.t_max / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_at(self, t: float) -> int:
        """Grid index closest to time t (clipped to the horizon)."""
        return int(np.clip(round(t / self.dt), 0, self.steps))


@dataclass
class Path:
    """Values of an R^n process on a uniform grid; values.shape = (M+1, n)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d array (M+1, n)")
        if self.values.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"values has {self.values.shape[0]} rows, grid wants {self.grid.steps + 1}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def same_grid(self, other: "Path") -> bool:
        return self.grid == other.grid and self.dim == other.dim


@dataclass
class RealizedCharacteristics:
    """Cumulative realized covariation A-hat (and, for ensembles, drift).

    a_hat[k] = sum_{j<=k} dZ_j dZ_j^T, so a_hat[0] = 0 and each increment
    is a rank-one PSD outer product.  b_hat is only filled by ensemble
    estimation; single-path drift is not identifiable here.
    """

    grid: TimeGrid
    a_hat: np.ndarray
    b_hat: Optional[np.ndarray] = None


@dataclass
class ScalarQVVerdict:
    """Outcome of the scalar-covariation structure check A_k ~ F_k * I."""

    is_scalar: bool
    f_cumulative: np.ndarray
    max_offdiag: float
    max_diag_spread: float
    tol_offdiag: float
    tol_spread: float


@dataclass
class DriftEstimate:
    """Cross-sectional mean path and its per-component standard error."""

    grid: TimeGrid
    mean: np.ndarray
    standard_error: np.ndarray
    n_paths: int


def increments(p: Path) -> np.ndarray:
    """Per-step increments dZ_k = values[k] - values[k-1], shape (M, n)."""
    return np.diff(p.values, axis=0)


def realized_covariation(p: Path) -> RealizedCharacteristics:
    """Cumulative realized covariation from summed increment outer products."""
    dz = increments(p)
    outer = np.einsum("ki,kj->kij", dz, dz)
    n = p.dim
    a_hat = np.empty((p.grid.steps + 1, n, n))
    a_hat[0] = 0.0
    np.cumsum(outer, axis=0, out=a_hat[1:])
    return RealizedCharacteristics(grid=p.grid, a_hat=a_hat)


def local_qv_density(p: Path, window: int) -> np.ndarray:
    """Windowed covariation density estimate, one matrix per increment.

    Entry k (0-based, for increment k+1) averages the outer products of the
    ``window`` increments strictly before it, divided by window * dt.  The
    first full-window estimate is reused for the initial burn-in entries,
    where no full window of history exists yet.
    """
    n = p.dim
    if window < n:
        raise WindowTooSmallError(f"window {window} < dimension {n}")
    m = p.grid.steps
    if window >= m:
        raise WindowTooSmallError(f"window {window} leaves no backward-looking estimate on {m} increments")
    dz = increments(p)
    outer = np.einsum("ki,kj->kij", dz, dz)
    csum = np.concatenate([np.zeros((1, n, n)), np.cumsum(outer, axis=0)], axis=0)
    dens = np.empty((m, n, n))
    # increment k+1 (array row k) sees increments with array rows < k
    valid_rows = np.arange(window, m)
    dens[valid_rows] = (csum[valid_rows] - csum[valid_rows - window]) / (window * p.grid.dt)
    dens[:window] = dens[window]
    return dens


def scalar_qv_check(rc: RealizedCharacteristics, tol_offdiag: float = 0.15,
                    tol_spread: float = 0.15) -> ScalarQVVerdict:
    """Check whether realized covariation is a scalar process times identity.

    Off-diagonal magnitudes and diagonal spread are compared, uniformly in
    time, against tolerances scaled by trace(A_M)/n.
    """
    a = rc.a_hat
    n = a.shape[1]
    diag = a[:, np.arange(n), np.arange(n)]
    f_cum = diag.sum(axis=1) / n
    scale = f_cum[-1]
    offmask = ~np.eye(n, dtype=bool)
    max_offdiag = float(np.abs(a[:, offmask]).max()) if n > 1 else 0.0
    max_spread = float((diag.max(axis=1) - diag.min(axis=1)).max())
    ok = max_offdiag <= tol_offdiag * scale and max_spread <= tol_spread * scale
    return ScalarQVVerdict(
        is_scalar=bool(ok),
        f_cumulative=f_cum,
        max_offdiag=max_offdiag,
        max_diag_spread=max_spread,
        tol_offdiag=tol_offdiag,
        tol_spread=tol_spread,
    )


def estimate_drift(ensemble: list[Path]) -> DriftEstimate:
    """Cross-sectional mean path over an ensemble, with standard errors."""
    if len(ensemble) < 2:
        raise ValueError("drift estimation needs an ensemble of at least 2 paths")
    first = ensemble[0]
    for p in ensemble[1:]:
        if not first.same_grid(p):
            raise GridMismatchError("ensemble paths must share grid and dimension")
    stack = np.stack([p.values for p in ensemble])
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(len(ensemble))
    return DriftEstimate(grid=first.grid, mean=mean, standard_error=se, n_paths=len(ensemble))


def default_window(n: int) -> int:
    """Default density-estimation window: max(50, 10n)."""
    return max(50, 10 * n)


def write_csv(p: Path, file) -> None:
    """Serialize a path as CSV: header t,z1,...,zn, 17 significant digits."""
    header = "t," + ",".join(f"z{i + 1}" for i in range(p.dim))
    data = np.column_stack([p.grid.times(), p.values])
    np.savetxt(file, data, fmt="%.17g", delimiter=",", header=header, comments="")


def read_csv(file) -> Path:
    """Inverse of write_csv."""
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    steps = len(times) - 1
    grid = TimeGrid(t_max=float(times[-1]), steps=steps)
    return Path(grid=grid, values=data[:, 1:])
