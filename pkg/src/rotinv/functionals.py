"""Path functionals used by the law-invariance tests.

A functional maps one path to one real number; ensembles of functional
values feed the two-sample comparisons.  Supported kinds:

    coordinate    marginal Z^c at a time (default: the horizon)
    qv-trace      trace of realized covariation at a time
    running-max   running maximum of one coordinate up to a time
    clock         realized volatility clock, trace QV / n, at a time

Spec strings: ``coord:1``, ``coord:2@0.5``, ``qv-trace``, ``running-max:1``,
``clock@1.0`` (coordinates are 1-based; ``@t`` defaults to the horizon).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .paths import Path

KINDS = ("coordinate", "qv-trace", "running-max", "clock")
_ALIASES = {"coord": "coordinate", "qvtrace": "qv-trace", "runmax": "running-max",
            "running-max": "running-max", "qv-trace": "qv-trace",
            "coordinate": "coordinate", "clock": "clock"}


@dataclass(frozen=True)
class Functional:
    kind: str
    coord: int = 1
    time: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.coord < 1:
            raise ValueError("coordinates are 1-based")

    def label(self) -> str:
        at = "" if self.time is None else f"@{self.time:g}"
        if self.kind in ("coordinate", "running-max"):
            return f"{self.kind}:{self.coord}{at}"
        return f"{self.kind}{at}"


def parse_functional(text: str) -> Functional:
    """Parse a compact functional spec like ``coord:1@0.5``."""
    body = text.strip()
    time = None
    if "@" in body:
        body, t_str = body.split("@", 1)
        time = float(t_str)
    coord = 1
    if ":" in body:
        body, c_str = body.split(":", 1)
        coord = int(c_str)
    kind = _ALIASES.get(body.strip().lower())
    if kind is None:
        raise ValueError(f"unknown functional {text!r}")
    return Functional(kind=kind, coord=coord, time=time)


def _index_for(fn: Functional, steps: int, dt: float) -> int:
    if fn.time is None:
        return steps
    k = int(round(fn.time / dt))
    if not 0 <= k <= steps:
        raise ValueError(f"functional time {fn.time} outside the grid horizon")
    return k


def evaluate(fn: Functional, p: Path) -> float:
    """Evaluate one functional on one path."""
    k = _index_for(fn, p.grid.steps, p.grid.dt)
    c = fn.coord - 1
    if fn.kind == "coordinate":
        return float(p.values[k, c])
    if fn.kind == "running-max":
        return float(p.values[: k + 1, c].max())
    dz = np.diff(p.values[: k + 1], axis=0)
    trace = float(np.einsum("kd,kd->", dz, dz))
    if fn.kind == "qv-trace":
        return trace
    return trace / p.dim  # clock


def evaluate_block(fns: list[Functional], values: np.ndarray, dt: float) -> np.ndarray:
    """Evaluate functionals over a block of paths.

    values has shape (B, M+1, n); returns (len(fns), B).
    """
    b, m1, n = values.shape
    steps = m1 - 1
    out = np.empty((len(fns), b))
    dz = None
    for i, fn in enumerate(fns):
        k = _index_for(fn, steps, dt)
        c = fn.coord - 1
        if fn.kind == "coordinate":
            out[i] = values[:, k, c]
        elif fn.kind == "running-max":
            out[i] = values[:, : k + 1, c].max(axis=1)
        else:
            if dz is None:
                dz = np.diff(values, axis=1)
            trace = np.einsum("pkd,pkd->p", dz[:, :k], dz[:, :k])
            out[i] = trace if fn.kind == "qv-trace" else trace / n
    return out
