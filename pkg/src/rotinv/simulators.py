"""Process generators: Brownian motion, time-changed Brownian integrals
Z = int f dW with f independent of W, and the drifted / anisotropic /
volatility-feedback counterexamples.

All generators are pure functions of their seed.  A job's Brownian,
volatility, and policy randomness come from disjoint substreams (see
``seeding``), so regenerating one leaves the others bit-identical.
Stochastic integrals use left-endpoint (Ito) evaluation throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import GridMismatchError, MissingDriverError
from .paths import Path, TimeGrid
from .seeding import generator, seed_for_path

VOLATILITY_KINDS = ("constant", "random-constant", "log-ou", "w-dependent")
PROCESS_KINDS = ("brownian", "drifted", "anisotropic", "integral")


@dataclass(frozen=True)
class VolatilitySpec:
    """Scalar volatility process family for Z = int f dW.

    Kinds:
      constant        f = sigma
      random-constant f = sigma1 with probability prob, else sigma2 (one
                      draw per path from the volatility stream)
      log-ou          f = exp(Y), Y an Euler Ornstein-Uhlenbeck path driven
                      by the volatility stream
      w-dependent     f_k = 1 + ||W at the left endpoint||; deliberately
                      breaks independence from the driver and must be
                      enabled with counterexample=True
    """

    kind: str
    sigma: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 3.0
    prob: float = 0.5
    theta: float = 1.0
    eta: float = 0.5
    y0: float = 0.0
    counterexample: bool = False

    def __post_init__(self):
        if self.kind not in VOLATILITY_KINDS:
            raise ValueError(f"unknown volatility kind {self.kind!r}")
        if self.kind == "constant" and not self.sigma > 0:
            raise ValueError("constant level must be strictly positive")
        if self.kind == "random-constant":
            if not (self.sigma1 > 0 and self.sigma2 > 0):
                raise ValueError("random-constant levels must be strictly positive")
            if not 0.0 <= self.prob <= 1.0:
                raise ValueError("prob must lie in [0, 1]")
        if self.kind == "log-ou" and (self.theta < 0 or self.eta < 0):
            raise ValueError("log-ou rates must be nonnegative")
        if self.kind == "w-dependent" and not self.counterexample:
            raise ValueError(
                "w-dependent volatility violates driver independence by design; "
                "construct it with counterexample=True")

    @classmethod
    def constant(cls, sigma: float) -> "VolatilitySpec":
        return cls(kind="constant", sigma=sigma)

    @classmethod
    def random_constant(cls, sigma1: float = 1.0, sigma2: float = 3.0,
                        prob: float = 0.5) -> "VolatilitySpec":
        return cls(kind="random-constant", sigma1=sigma1, sigma2=sigma2, prob=prob)

    @classmethod
    def log_ou(cls, theta: float = 1.0, eta: float = 0.5, y0: float = 0.0) -> "VolatilitySpec":
        return cls(kind="log-ou", theta=theta, eta=eta, y0=y0)

    @classmethod
    def w_dependent(cls) -> "VolatilitySpec":
        return cls(kind="w-dependent", counterexample=True)


def brownian(n: int, grid: TimeGrid, seed) -> Path:
    """Standard n-dimensional Brownian path started at the origin."""
    rng = generator(seed)
    dw = rng.standard_normal((grid.steps, n)) * np.sqrt(grid.dt)
    values = np.empty((grid.steps + 1, n))
    values[0] = 0.0
    np.cumsum(dw, axis=0, out=values[1:])
    return Path(grid=grid, values=values)


def sample_volatility(spec: VolatilitySpec, grid: TimeGrid, seed,
                      w: Optional[Path] = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample the scalar volatility on grid points (left-endpoint convention).

    Returns (f, f_cum): f[k] multiplies the Brownian increment over
    (t_k, t_{k+1}], and f_cum[k] = sum_{j<k} f[j]^2 dt is the cumulative
    squared-volatility clock.
    """
    m = grid.steps
    if spec.kind == "w-dependent":
        if w is None:
            raise MissingDriverError("w-dependent volatility needs the driving path")
        f = 1.0 + np.linalg.norm(w.values, axis=1)
    elif spec.kind == "constant":
        f = np.full(m + 1, spec.sigma)
    elif spec.kind == "random-constant":
        rng = generator(seed)
        level = spec.sigma1 if rng.random() < spec.prob else spec.sigma2
        f = np.full(m + 1, level)
    else:  # log-ou
        rng = generator(seed)
        dt = grid.dt
        xi = rng.standard_normal(m) * np.sqrt(dt)
        # Euler recursion y_{k+1} = (1 - theta dt) y_k + eta xi_k as an AR(1) filter
        decay = 1.0 - spec.theta * dt
        y = np.empty(m + 1)
        y[0] = spec.y0
        y[1:], _ = lfilter([spec.eta], [1.0, -decay], xi, zi=[decay * spec.y0])
        f = np.exp(y)
    f_cum = np.empty(m + 1)
    f_cum[0] = 0.0
    np.cumsum(f[:-1] ** 2 * grid.dt, out=f_cum[1:])
    return f, f_cum


def ito_scalar_integral(f: np.ndarray, w: Path) -> Path:
    """Left-point Ito sum Z_k = sum_{j<=k} f_{j-1} (W_j - W_{j-1})."""
    f = np.asarray(f, dtype=float)
    if f.shape != (w.grid.steps + 1,):
        raise GridMismatchError(
            f"volatility sampled on {f.shape[0]} points, path grid has {w.grid.steps + 1}")
    dz = f[:-1, None] * np.diff(w.values, axis=0)
    values = np.empty_like(w.values)
    values[0] = 0.0
    np.cumsum(dz, axis=0, out=values[1:])
    return Path(grid=w.grid, values=values)


def drifted_brownian(n: int, grid: TimeGrid, seed, b_tilde) -> Path:
    """Brownian motion plus the linear drift b_tilde * t."""
    b = np.asarray(b_tilde, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"drift vector must have shape ({n},)")
    w = brownian(n, grid, seed)
    values = w.values + grid.times()[:, None] * b[None, :]
    return Path(grid=grid, values=values)


def anisotropic_diffusion(n: int, grid: TimeGrid, seed, sigma) -> Path:
    """Constant-matrix diffusion dZ = sigma dW; covariation density sigma sigma^T."""
    s = np.asarray(sigma, dtype=float)
    if s.shape != (n, n) or not np.all(np.isfinite(s)):
        raise ValueError(f"sigma must be a finite ({n}, {n}) matrix")
    w = brownian(n, grid, seed)
    dz = np.diff(w.values, axis=0) @ s.T
    values = np.empty_like(w.values)
    values[0] = 0.0
    np.cumsum(dz, axis=0, out=values[1:])
    return Path(grid=grid, values=values)


@dataclass(frozen=True)
class ProcessSpec:
    """Which process a job simulates, with kind-specific parameters."""

    kind: str
    b_tilde: Optional[tuple] = None
    sigma: Optional[tuple] = None  # row-major (n, n) entries
    volatility: Optional[VolatilitySpec] = None

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "drifted" and self.b_tilde is None:
            raise ValueError("drifted process needs b_tilde")
        if self.kind == "anisotropic" and self.sigma is None:
            raise ValueError("anisotropic process needs sigma")
        if self.kind == "integral" and self.volatility is None:
            raise ValueError("integral process needs a volatility spec")


@dataclass(frozen=True)
class SimJob:
    """One reproducible simulation: process x grid x dimension x base seed."""

    dim: int
    grid: TimeGrid
    seed: int
    process: ProcessSpec

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")


@dataclass
class SimResult:
    """Simulated path plus the latent quantities the theory talks about."""

    z: Path
    w: Path
    f: Optional[np.ndarray] = None
    f_cum: Optional[np.ndarray] = None


def simulate(job: SimJob, path_index: int = 0) -> SimResult:
    """Simulate one path of a job; pure in (job, path_index).

    The Brownian driver and the volatility process always consume disjoint
    substreams, which is the discrete analogue of sampling f independent
    of W.
    """
    bro_seed = seed_for_path(job.seed, path_index, "brownian")
    vol_seed = seed_for_path(job.seed, path_index, "volatility")
    kind = job.process.kind
    if kind == "brownian":
        z = brownian(job.dim, job.grid, bro_seed)
        return SimResult(z=z, w=z)
    if kind == "drifted":
        w = brownian(job.dim, job.grid, bro_seed)
        b = np.asarray(job.process.b_tilde, dtype=float)
        values = w.values + job.grid.times()[:, None] * b[None, :]
        return SimResult(z=Path(grid=job.grid, values=values), w=w)
    if kind == "anisotropic":
        w = brownian(job.dim, job.grid, bro_seed)
        s = np.asarray(job.process.sigma, dtype=float).reshape(job.dim, job.dim)
        dz = np.diff(w.values, axis=0) @ s.T
        values = np.empty_like(w.values)
        values[0] = 0.0
        np.cumsum(dz, axis=0, out=values[1:])
        return SimResult(z=Path(grid=job.grid, values=values), w=w)
    # integral: Z = int f dW
    w = brownian(job.dim, job.grid, bro_seed)
    f, f_cum = sample_volatility(job.process.volatility, job.grid, vol_seed, w=w)
    z = ito_scalar_integral(f, w)
    return SimResult(z=z, w=w, f=f, f_cum=f_cum)
