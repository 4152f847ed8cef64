"""Predictable rotation policies and the pathwise rotation transform.

A rotation policy turns a driver path into a schedule: one orthogonal
matrix per grid increment, where the matrix for increment k may depend
only on path values at indices <= k-1 and on policy-internal randomness
independent of the path.  The transform itself is the discrete Ito sum
Z'_k = sum_{j<=k} B_j dZ_j.

Piecewise policies switch matrices at the successive first-exit times of
radius-h balls around the driver's last stopping position, using the
half-open convention: the increment that triggers the exit still belongs
to the closing excursion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyMatrixListError, GridMismatchError
from .linalg import eigh_batch, haar_orthogonal, is_orthogonal
from .paths import Path, TimeGrid, local_qv_density
from .seeding import generator

POLICY_KINDS = (
    "constant",
    "piecewise-exit-time",
    "seeded-haar-per-exit",
    "diagonalizing",
    "drift-aligning",
)


@dataclass
class ExitTimeSequence:
    """Grid indices of successive first exits of radius-h balls.

    indices[j] is the first grid index k with ||W_k - W_{indices[j-1]}|| >= h.
    ``complete`` is False when the horizon cut the last excursion short,
    i.e. the path ends strictly between exits.
    """

    h: float
    indices: np.ndarray
    complete: bool


def exit_times(w: Path, h: float) -> ExitTimeSequence:
    """Successive first-exit indices of radius-h balls along a path.

    Scans forward in chunks sized to the expected excursion length, so the
    cost stays linear in the number of grid points.
    """
    if not h > 0:
        raise ValueError("exit radius h must be positive")
    values = w.values
    m = w.grid.steps
    lookahead = max(64, int(4 * h * h / (w.dim * w.grid.dt)))
    indices = []
    anchor = 0
    while anchor < m:
        hit = -1
        start = anchor + 1
        while start <= m:
            stop = min(start + lookahead, m + 1)
            seg = values[start:stop] - values[anchor]
            crossed = np.einsum("kd,kd->k", seg, seg) >= h * h
            if crossed.any():
                hit = int(np.argmax(crossed)) + start
                break
            start = stop
        if hit < 0:
            break
        indices.append(hit)
        anchor = hit
    idx = np.asarray(indices, dtype=np.int64)
    return ExitTimeSequence(h=h, indices=idx, complete=bool(idx.size and idx[-1] == m))


@dataclass(frozen=True)
class RotationPolicy:
    """Predictable rule producing one orthogonal matrix per increment.

    kind-specific parameters:
      constant             matrix
      piecewise-exit-time  h, matrices (finite list; last entry repeats)
      seeded-haar-per-exit h, seed (fresh Haar matrix per excursion)
      diagonalizing        window (matrices diagonalize the lagged windowed
                           covariation density; identity during burn-in)
      drift-aligning       none (smallest rotation mapping the lagged
                           running-mean drift direction onto +e1)
    """

    kind: str
    matrix: Optional[tuple] = None
    matrices: Optional[tuple] = None
    h: Optional[float] = None
    seed: Optional[int] = None
    window: Optional[int] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "constant" and self.matrix is None:
            raise ValueError("constant policy needs a matrix")
        if self.kind == "piecewise-exit-time":
            if self.h is None or not self.h > 0:
                raise ValueError("piecewise-exit-time policy needs h > 0")
            if self.matrices is None:
                raise EmptyMatrixListError("piecewise-exit-time policy needs matrices")
        if self.kind == "seeded-haar-per-exit":
            if self.h is None or not self.h > 0:
                raise ValueError("seeded-haar-per-exit policy needs h > 0")
            if self.seed is None:
                raise ValueError("seeded-haar-per-exit policy needs a seed")
        if self.kind == "diagonalizing" and self.window is None:
            raise ValueError("diagonalizing policy needs an estimation window")

    @classmethod
    def constant(cls, matrix) -> "RotationPolicy":
        m = np.asarray(matrix, dtype=float)
        return cls(kind="constant", matrix=tuple(map(tuple, m)))

    @classmethod
    def piecewise_exit_time(cls, h: float, matrices: Sequence) -> "RotationPolicy":
        mats = tuple(tuple(map(tuple, np.asarray(b, dtype=float))) for b in matrices)
        if not mats:
            raise EmptyMatrixListError("piecewise-exit-time policy needs at least one matrix")
        return cls(kind="piecewise-exit-time", h=h, matrices=mats)

    @classmethod
    def seeded_haar_per_exit(cls, h: float, seed: int) -> "RotationPolicy":
        return cls(kind="seeded-haar-per-exit", h=h, seed=seed)

    @classmethod
    def diagonalizing(cls, window: int) -> "RotationPolicy":
        return cls(kind="diagonalizing", window=window)

    @classmethod
    def drift_aligning(cls) -> "RotationPolicy":
        return cls(kind="drift-aligning")


@dataclass
class RotationSchedule:
    """Realized per-increment orthogonal matrices; mats[k-1] acts on increment k."""

    grid: TimeGrid
    mats: np.ndarray
    exits: Optional[ExitTimeSequence] = None

    def validate(self, tol: float = 1e-12) -> None:
        if self.mats.shape[0] != self.grid.steps:
            raise GridMismatchError("schedule length does not match grid")
        for k in range(self.mats.shape[0]):
            if not is_orthogonal(self.mats[k], tol=tol):
                raise ValueError(f"schedule matrix at step {k + 1} is not orthogonal")


def _segment_matrices(exits: np.ndarray, blocks: np.ndarray, m: int) -> np.ndarray:
    """Spread per-excursion matrices over increments with the (tau_{j-1}, tau_j]
    convention; excursions beyond the list reuse the last matrix."""
    ks = np.arange(1, m + 1)
    seg = np.searchsorted(exits, ks, side="left")  # number of exits strictly before k
    seg = np.minimum(seg, len(blocks) - 1)
    return blocks[seg]


def _aligning_rotation(u: np.ndarray) -> np.ndarray:
    """Smallest-angle rotation taking unit vector u to +e1."""
    n = u.shape[0]
    e1 = np.zeros(n)
    e1[0] = 1.0
    c = u[0]
    if c >= 1.0 - 1e-14:
        return np.eye(n)
    if c <= -1.0 + 1e-14:
        # antipodal: rotate by pi in the (e1, e2) plane
        r = np.eye(n)
        r[0, 0] = -1.0
        r[1, 1] = -1.0
        return r
    v = e1 - c * u
    v /= np.linalg.norm(v)
    s = np.sqrt(max(0.0, 1.0 - c * c))
    outer_uu = np.outer(u, u)
    outer_vv = np.outer(v, v)
    return np.eye(n) + (c - 1.0) * (outer_uu + outer_vv) + s * (np.outer(v, u) - np.outer(u, v))


def realize_policy(policy: RotationPolicy, driver: Path, policy_stream=None) -> RotationSchedule:
    """Realize a policy against a driver path.

    The schedule obeys the predictability contract: mats[k] depends only on
    driver values before index k and on policy-internal randomness.
    ``policy_stream`` overrides the policy's own seed (ensembles pass each
    path's derived substream here).
    """
    m = driver.grid.steps
    n = driver.dim
    if policy.kind == "constant":
        b = np.asarray(policy.matrix, dtype=float)
        mats = np.broadcast_to(b, (m, n, n)).copy()
        return RotationSchedule(grid=driver.grid, mats=mats)

    if policy.kind == "piecewise-exit-time":
        blocks = np.asarray(policy.matrices, dtype=float)
        if blocks.size == 0:
            raise EmptyMatrixListError("piecewise-exit-time policy has no matrices")
        exits = exit_times(driver, policy.h)
        mats = _segment_matrices(exits.indices, blocks, m)
        return RotationSchedule(grid=driver.grid, mats=mats, exits=exits)

    if policy.kind == "seeded-haar-per-exit":
        exits = exit_times(driver, policy.h)
        rng = generator(policy_stream if policy_stream is not None else policy.seed)
        blocks = np.stack([haar_orthogonal(n, rng) for _ in range(len(exits.indices) + 1)])
        mats = _segment_matrices(exits.indices, blocks, m)
        return RotationSchedule(grid=driver.grid, mats=mats, exits=exits)

    if policy.kind == "diagonalizing":
        dens = local_qv_density(driver, policy.window)
        q, _ = eigh_batch(dens)
        mats = np.swapaxes(q, 1, 2).copy()
        # backfilled burn-in estimates peek forward; force identity there to
        # honor predictability
        mats[:policy.window] = np.eye(n)
        return RotationSchedule(grid=driver.grid, mats=mats)

    # drift-aligning: lagged running-mean drift direction onto +e1
    times = driver.grid.times()
    disp = driver.values - driver.values[0]
    mats = np.empty((m, n, n))
    mats[0] = np.eye(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        d_hat = disp[1:m] / times[1:m, None]
    for k in range(1, m):
        norm = np.linalg.norm(d_hat[k - 1])
        if norm < 1e-12:
            mats[k] = np.eye(n)
        else:
            mats[k] = _aligning_rotation(d_hat[k - 1] / norm)
    return RotationSchedule(grid=driver.grid, mats=mats)


def apply_rotation(z: Path, schedule: RotationSchedule) -> Path:
    """Transform Z'_k = sum_{j<=k} B_j (Z_j - Z_{j-1}); starts at the origin."""
    if schedule.grid != z.grid or schedule.mats.shape[1] != z.dim:
        raise GridMismatchError("schedule and path grids differ")
    dz = np.diff(z.values, axis=0)
    dz_rot = np.einsum("kij,kj->ki", schedule.mats, dz)
    values = np.empty_like(z.values)
    values[0] = 0.0
    np.cumsum(dz_rot, axis=0, out=values[1:])
    return Path(grid=z.grid, values=values)


def inverse_schedule(s: RotationSchedule) -> RotationSchedule:
    """Per-step inverse: transposed matrices at identical indices.

    Valid because a piecewise-exit-time schedule triggers the same stopping
    indices on the transformed path, so the inverse may reuse them directly.
    """
    return RotationSchedule(grid=s.grid, mats=np.swapaxes(s.mats, 1, 2).copy(), exits=s.exits)


def write_schedule_csv(s: RotationSchedule, file) -> None:
    """Serialize a schedule as CSV: step index then row-major matrix entries."""
    m, n, _ = s.mats.shape
    header = "k," + ",".join(f"b{i + 1}{j + 1}" for i in range(n) for j in range(n))
    data = np.column_stack([np.arange(1, m + 1), s.mats.reshape(m, n * n)])
    np.savetxt(file, data, fmt=["%d"] + ["%.17g"] * (n * n), delimiter=",", header=header, comments="")
