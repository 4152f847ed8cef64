"""Statistical verification harness.

Two-sample law comparisons (Kolmogorov-Smirnov with the asymptotic null),
ensemble invariance experiments comparing a generator against its
rotation-transformed twin, and first-exit-time moment experiments for the
ball-exit clock underlying piecewise rotation schedules.

Exit-time detection on a grid triggers late (the path is already outside
when first observed), which biases exit times upward by a boundary-layer
term of order sqrt(dt).  The moment experiment therefore reports, next to
the raw grid estimates, companions rescaled by the random-walk overshoot
correction h -> h + 0.5826 sqrt(dt); the raw estimates keep a 1-2% bias
allowance in their verdicts while the rescaled ones are checked against
plain Monte Carlo standard errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import kolmogorov

from .errors import HorizonTooShortError, TooFewSamplesError
from .functionals import Functional, evaluate, evaluate_block, parse_functional
from .parallel import DEFAULT_BLOCK, block_ranges, run_units
from .paths import TimeGrid
from .rotations import RotationPolicy, apply_rotation, realize_policy
from .seeding import block_stream, generator, seed_for_path
from .simulators import SimJob, simulate

# Expected overshoot of a Gaussian walk over a flat barrier, in units of
# sqrt(dt): -zeta(1/2)/sqrt(2 pi).  Used for the boundary-shift rescale.
OVERSHOOT_COEFF = 0.5826

# Exit-time engine decomposes paths into fixed blocks of this size; the
# noise stream is keyed by block index, so results never depend on the
# worker count.
EXIT_BLOCK = 4096

FAMILY_ALPHA = 0.01
SINGLE_TEST_ALPHA = 0.005


@dataclass
class TwoSampleResult:
    """Kolmogorov-Smirnov comparison of two functional samples."""

    functional: str
    ks_statistic: float
    p_value: float
    n1: int
    n2: int


def ks_two_sample(x, y, functional: str = "") -> TwoSampleResult:
    """Two-sample KS test with the asymptotic Kolmogorov p-value.

    The statistic is sup |F1 - F2| over the pooled sample; the p-value uses
    the limiting distribution at effective size n1 n2 / (n1 + n2).
    """
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    n1, n2 = x.size, y.size
    if n1 < 20 or n2 < 20:
        raise TooFewSamplesError(f"need >= 20 samples per side, got {n1} and {n2}")
    pooled = np.concatenate([x, y])
    cdf1 = np.searchsorted(x, pooled, side="right") / n1
    cdf2 = np.searchsorted(y, pooled, side="right") / n2
    d = float(np.abs(cdf1 - cdf2).max())
    en = n1 * n2 / (n1 + n2)
    p = float(kolmogorov(np.sqrt(en) * d))
    return TwoSampleResult(functional=functional, ks_statistic=d, p_value=p, n1=n1, n2=n2)


def holm_adjust(p_values) -> np.ndarray:
    """Holm step-down adjusted p-values (clipped at 1)."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p)
    adj = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adj[idx] = min(1.0, running)
    return adj


# ---------------------------------------------------------------------------
# Invariance experiment
# ---------------------------------------------------------------------------


@dataclass
class InvarianceReport:
    """Per-functional KS comparisons of Z against its transformed twin."""

    results: list[TwoSampleResult]
    adjusted_p: np.ndarray
    family_alpha: float
    passed: bool
    n_paths: int


def _brownian_block_values(job: SimJob, lo: int, hi: int) -> np.ndarray:
    """Per-path-seeded Brownian paths for indices [lo, hi), stacked."""
    m, n = job.grid.steps, job.dim
    sq = np.sqrt(job.grid.dt)
    vals = np.empty((hi - lo, m + 1, n))
    for j, i in enumerate(range(lo, hi)):
        rng = generator(seed_for_path(job.seed, i, "brownian"))
        dw = rng.standard_normal((m, n))
        dw *= sq
        vals[j, 0] = 0.0
        np.cumsum(dw, axis=0, out=vals[j, 1:])
    return vals


def _block_exit_indices(values: np.ndarray, h: float) -> list[np.ndarray]:
    """Exit index sequences for a block of paths, one step-synchronous sweep."""
    b, m1, n = values.shape
    m = m1 - 1
    h2 = h * h
    anchor = values[:, 0, :].copy()
    hits: list[list[int]] = [[] for _ in range(b)]
    for k in range(1, m + 1):
        rel = values[:, k, :] - anchor
        crossed = np.einsum("pd,pd->p", rel, rel) >= h2
        if crossed.any():
            who = np.nonzero(crossed)[0]
            for p in who:
                hits[p].append(k)
            anchor[who] = values[who, k, :]
    return [np.asarray(hh, dtype=np.int64) for hh in hits]


def _haar_bank(n: int, counts: list[int], job: SimJob, lo: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-path Haar matrices (one per excursion), drawn from per-path policy
    streams and QR-orthogonalized in one batch.  Returns (bank, offsets)."""
    total = int(sum(counts))
    gauss = np.empty((total, n, n))
    pos = 0
    for j, cnt in enumerate(counts):
        rng = generator(seed_for_path(job.seed, lo + j, "policy"))
        gauss[pos: pos + cnt] = rng.standard_normal((cnt, n, n))
        pos += cnt
    q, r = np.linalg.qr(gauss)
    diag = np.sign(np.diagonal(r, axis1=1, axis2=2))
    diag = np.where(diag == 0.0, 1.0, diag)
    bank = q * diag[:, None, :]
    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    return bank, offsets


def _transformed_functionals_fast(job: SimJob, policy: RotationPolicy, fns: list[Functional],
                                  lo: int, hi: int) -> np.ndarray:
    """Functionals of the rotation-transformed Brownian ensemble.

    Avoids materializing the transformed path: covariation functionals use
    per-increment isometry, coordinate functionals use only the relevant
    matrix rows.
    """
    values = _brownian_block_values(job, lo, hi)
    b = hi - lo
    m, n = job.grid.steps, job.dim
    dt = job.grid.dt
    dz = np.diff(values, axis=1)

    if policy.kind == "constant":
        seg = np.zeros((b, m), dtype=np.int64)
        bank = np.asarray(policy.matrix, dtype=float)[None]
        offsets = np.zeros(b, dtype=np.int64)
    elif policy.kind in ("piecewise-exit-time", "seeded-haar-per-exit"):
        exits = _block_exit_indices(values, policy.h)
        ks = np.arange(1, m + 1)
        seg = np.empty((b, m), dtype=np.int64)
        if policy.kind == "seeded-haar-per-exit":
            counts = [len(e) + 1 for e in exits]
            bank, offsets = _haar_bank(n, counts, job, lo)
            for j, e in enumerate(exits):
                seg[j] = np.searchsorted(e, ks, side="left")
        else:
            mats_list = np.asarray(policy.matrices, dtype=float)
            bank = mats_list
            offsets = np.zeros(b, dtype=np.int64)
            for j, e in enumerate(exits):
                seg[j] = np.minimum(np.searchsorted(e, ks, side="left"), len(mats_list) - 1)
    else:
        # estimation-based policies: fall back to the generic per-path route
        return _transformed_functionals_generic(job, policy, fns, lo, hi)

    flat_idx = seg + offsets[:, None]
    out = np.empty((len(fns), b))
    coord_paths: dict[int, np.ndarray] = {}
    for i, fn in enumerate(fns):
        if fn.kind in ("qv-trace", "clock"):
            k = m if fn.time is None else int(round(fn.time / dt))
            trace = np.einsum("pkd,pkd->p", dz[:, :k], dz[:, :k])
            out[i] = trace if fn.kind == "qv-trace" else trace / n
            continue
        c = fn.coord - 1
        if c not in coord_paths:
            rows = bank[flat_idx, c, :]  # (b, m, n)
            zc = np.einsum("pkd,pkd->pk", rows, dz)
            path_c = np.concatenate([np.zeros((b, 1)), np.cumsum(zc, axis=1)], axis=1)
            coord_paths[c] = path_c
        k = m if fn.time is None else int(round(fn.time / dt))
        if fn.kind == "coordinate":
            out[i] = coord_paths[c][:, k]
        else:  # running-max
            out[i] = coord_paths[c][:, : k + 1].max(axis=1)
    return out


def _transformed_functionals_generic(job: SimJob, policy: RotationPolicy, fns: list[Functional],
                                     lo: int, hi: int) -> np.ndarray:
    out = np.empty((len(fns), hi - lo))
    for j, i in enumerate(range(lo, hi)):
        sim = simulate(job, i)
        stream = seed_for_path(job.seed, i, "policy")
        schedule = realize_policy(policy, sim.w, policy_stream=stream)
        zt = apply_rotation(sim.z, schedule)
        for fi, fn in enumerate(fns):
            out[fi, j] = evaluate(fn, zt)
    return out


def _raw_functionals(job: SimJob, fns: list[Functional], lo: int, hi: int) -> np.ndarray:
    if job.process.kind == "brownian":
        values = _brownian_block_values(job, lo, hi)
        return evaluate_block(fns, values, job.grid.dt)
    out = np.empty((len(fns), hi - lo))
    for j, i in enumerate(range(lo, hi)):
        sim = simulate(job, i)
        for fi, fn in enumerate(fns):
            out[fi, j] = evaluate(fn, sim.z)
    return out


def _invariance_unit(args) -> np.ndarray:
    job, policy, fns, lo, hi, transform = args
    if not transform:
        return _raw_functionals(job, fns, lo, hi)
    if job.process.kind == "brownian":
        return _transformed_functionals_fast(job, policy, fns, lo, hi)
    return _transformed_functionals_generic(job, policy, fns, lo, hi)


def invariance_experiment(job: SimJob, policy: RotationPolicy, functionals, n_paths: int,
                          workers: Optional[int] = None,
                          family_alpha: float = FAMILY_ALPHA) -> InvarianceReport:
    """Compare the law of Z against the law of its rotation transform.

    Simulates n_paths of the generator and an independent batch of n_paths
    (disjoint path indices, hence disjoint noise) that are transformed by
    the policy; each configured functional is KS-compared and the family
    verdict is Holm-adjusted at level ``family_alpha``.
    """
    fns = [parse_functional(f) if isinstance(f, str) else f for f in functionals]
    units = []
    for lo, hi in block_ranges(n_paths, DEFAULT_BLOCK):
        units.append((job, policy, fns, lo, hi, False))
    for lo, hi in block_ranges(n_paths, DEFAULT_BLOCK):
        units.append((job, policy, fns, lo + n_paths, hi + n_paths, True))
    outs = run_units(_invariance_unit, units, workers=workers)
    half = len(outs) // 2
    sample_a = np.concatenate(outs[:half], axis=1)
    sample_b = np.concatenate(outs[half:], axis=1)
    results = [ks_two_sample(sample_a[i], sample_b[i], functional=fn.label())
               for i, fn in enumerate(fns)]
    adj = holm_adjust([r.p_value for r in results])
    if len(fns) == 1:
        passed = results[0].p_value > SINGLE_TEST_ALPHA
    else:
        passed = bool(np.all(adj > family_alpha))
    return InvarianceReport(results=results, adjusted_p=adj, family_alpha=family_alpha,
                            passed=passed, n_paths=n_paths)


# ---------------------------------------------------------------------------
# Exit-time moment experiment
# ---------------------------------------------------------------------------


def exit_count_target(n: int, h: float) -> int:
    """k^h = floor(1 / (mu^n h^2)) with mu^n = 1/n, guarded against roundoff."""
    return int(math.floor(n / (h * h) + 1e-9))


def _exit_unit(args) -> list[tuple[np.ndarray, np.ndarray]]:
    """Simulate one block of paths; returns (durations_in_steps, n_recorded)
    per observer.  Observer c detects exits on every c-th step."""
    n, h, dt, n_exits, block_index, block_size, base_seed, max_steps, observers = args
    rng = generator(block_stream(base_seed, "brownian", block_index))
    sq = math.sqrt(dt)
    h2 = h * h
    b = block_size
    pos = np.zeros((b, n))
    idx = np.arange(b)
    anchors = [np.zeros((b, n)) for _ in observers]
    steps_in = [np.zeros(b, dtype=np.int64) for _ in observers]
    counts = [np.zeros(b, dtype=np.int64) for _ in observers]
    durs = [np.zeros((b, n_exits), dtype=np.int64) for _ in observers]

    live_pos = pos
    live_anchor = [a for a in anchors]
    live_steps = [s for s in steps_in]
    live_counts = [c for c in counts]
    live_idx = idx
    for step in range(1, max_steps + 1):
        width = live_idx.size
        if width == 0:
            break
        inc = rng.standard_normal((width, n))
        inc *= sq
        live_pos += inc
        for oi, c in enumerate(observers):
            if step % c:
                continue
            cnt = live_counts[oi]
            tracking = cnt < n_exits
            st = live_steps[oi]
            st[tracking] += 1
            rel = live_pos - live_anchor[oi]
            r2 = np.einsum("pd,pd->p", rel, rel)
            crossed = (r2 >= h2) & tracking
            if crossed.any():
                who = np.nonzero(crossed)[0]
                g = live_idx[who]
                durs[oi][g, cnt[who]] = st[who]
                cnt[who] += 1
                live_anchor[oi][who] = live_pos[who]
                st[who] = 0
        unfinished = np.zeros(width, dtype=bool)
        for oi in range(len(observers)):
            unfinished |= live_counts[oi] < n_exits
        if not unfinished.all():
            # write back counts for the paths being retired, then compact
            for oi in range(len(observers)):
                counts[oi][live_idx] = live_counts[oi]
            live_pos = live_pos[unfinished]
            live_idx = live_idx[unfinished]
            for oi in range(len(observers)):
                live_anchor[oi] = live_anchor[oi][unfinished]
                live_steps[oi] = live_steps[oi][unfinished]
                live_counts[oi] = live_counts[oi][unfinished]
    for oi in range(len(observers)):
        counts[oi][live_idx] = live_counts[oi]
    return [(durs[oi], counts[oi]) for oi in range(len(observers))]


def _run_exit_engine(n: int, h: float, grid: TimeGrid, n_paths: int, seed: int,
                     n_exits: int, observers: tuple[int, ...],
                     workers: Optional[int] = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exit durations for all paths; list entry per observer, durations in
    units of (observer stride * dt)."""
    units = []
    for bi, (lo, hi) in enumerate(block_ranges(n_paths, EXIT_BLOCK)):
        units.append((n, h, grid.dt, n_exits, bi, hi - lo, seed, grid.steps, observers))
    outs = run_units(_exit_unit, units, workers=workers)
    merged = []
    for oi in range(len(observers)):
        durations = np.concatenate([o[oi][0] for o in outs], axis=0)
        recorded = np.concatenate([o[oi][1] for o in outs], axis=0)
        merged.append((durations, recorded))
    return merged


def _batch_se_of_variance(x: np.ndarray, n_batches: int = 100) -> float:
    """Standard error of the sample variance via contiguous batch means."""
    n_batches = max(2, min(n_batches, x.size // 20))
    usable = (x.size // n_batches) * n_batches
    batches = x[:usable].reshape(n_batches, -1)
    batch_vars = batches.var(axis=1, ddof=1)
    return float(batch_vars.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class ExitMomentReport:
    """Moment checks of ball-exit times against the closed-form targets.

    Raw fields come from plain grid detection; *_corrected fields apply the
    boundary-shift rescale (h / (h + 0.5826 sqrt(dt)))^2, which removes the
    late-detection bias up to higher order in dt.
    """

    n: int
    h: float
    n_paths: int
    dt: float
    k_h: int
    target_mean: float
    target_var: float
    first_mean: float
    first_var: float
    first_mean_se: float
    first_var_se: float
    first_mean_corrected: float
    first_var_corrected: float
    sum_target_mean: float
    sum_target_var: float
    sum_mean: float
    sum_var: float
    sum_mean_se: float
    sum_var_se: float
    sum_mean_corrected: float
    sum_var_corrected: float
    lag1_autocorr: float
    lag1_threshold: float
    n_truncated: int
    checks: dict = field(default_factory=dict)
    passed: bool = True


def exit_moment_experiment(n: int, h: float, n_paths: int, grid: TimeGrid, seed: int,
                           workers: Optional[int] = None) -> ExitMomentReport:
    """First-exit moments of radius-h balls for n-dimensional Brownian motion.

    Checks the scaled first exit tau/h^2 against mean 1/n and variance
    2/(n^2 (n+2)), the k^h-exit clock tau_{k^h} against its closed-form
    mean and variance, and inter-exit independence via lag-1 autocorrelation.

    Raises HorizonTooShortError when fewer than 99% of paths complete all
    k^h exits before t_max; truncated paths are excluded from the statistics
    and counted in the report.
    """
    k_h = exit_count_target(n, h)
    (durations, recorded), = _run_exit_engine(n, h, grid, n_paths, seed,
                                              n_exits=k_h, observers=(1,), workers=workers)
    complete = recorded >= k_h
    n_truncated = int(n_paths - complete.sum())
    if complete.sum() < 0.99 * n_paths:
        raise HorizonTooShortError(
            f"only {int(complete.sum())}/{n_paths} paths completed {k_h} exits "
            f"within t_max={grid.t_max}")
    d = durations[complete] * grid.dt

    mu_n = 1.0 / n
    var_n = 2.0 / (n * n * (n + 2))
    shrink = (h / (h + OVERSHOOT_COEFF * math.sqrt(grid.dt))) ** 2

    first = d[:, 0] / (h * h)
    first_mean = float(first.mean())
    first_var = float(first.var(ddof=1))
    first_mean_se = float(first.std(ddof=1) / np.sqrt(first.size))
    first_var_se = _batch_se_of_variance(first)

    sums = d[:, :k_h].sum(axis=1)
    sum_mean = float(sums.mean())
    sum_var = float(sums.var(ddof=1))
    sum_mean_se = float(sums.std(ddof=1) / np.sqrt(sums.size))
    sum_var_se = _batch_se_of_variance(sums)
    sum_target_mean = mu_n * h * h * k_h
    sum_target_var = var_n * h**4 * k_h

    if k_h >= 2:
        a = d[:, : k_h - 1].ravel()
        b = d[:, 1:k_h].ravel()
        lag1 = float(np.corrcoef(a, b)[0, 1])
    else:
        lag1 = 0.0
    lag1_threshold = 3.0 / np.sqrt(d.shape[0] * k_h)

    checks = {
        "first_mean": abs(first_mean - mu_n) <= 3 * first_mean_se + 0.01 * mu_n,
        "first_var": abs(first_var - var_n) <= 3 * first_var_se + 0.02 * var_n,
        "first_mean_corrected": abs(first_mean * shrink - mu_n) <= 3 * first_mean_se,
        "sum_mean_corrected": abs(sum_mean * shrink - sum_target_mean) <= 3 * sum_mean_se,
        "sum_var_corrected": abs(sum_var * shrink**2 - sum_target_var) <= 3 * sum_var_se,
        "iid_lag1": abs(lag1) <= lag1_threshold,
    }
    return ExitMomentReport(
        n=n, h=h, n_paths=n_paths, dt=grid.dt, k_h=k_h,
        target_mean=mu_n, target_var=var_n,
        first_mean=first_mean, first_var=first_var,
        first_mean_se=first_mean_se, first_var_se=first_var_se,
        first_mean_corrected=first_mean * shrink,
        first_var_corrected=first_var * shrink**2,
        sum_target_mean=sum_target_mean, sum_target_var=sum_target_var,
        sum_mean=sum_mean, sum_var=sum_var,
        sum_mean_se=sum_mean_se, sum_var_se=sum_var_se,
        sum_mean_corrected=sum_mean * shrink,
        sum_var_corrected=sum_var * shrink**2,
        lag1_autocorr=lag1, lag1_threshold=float(lag1_threshold),
        n_truncated=n_truncated,
        checks=checks, passed=bool(all(checks.values())),
    )


@dataclass
class ExitRefinementReport:
    """Coupled comparison of exit-time means at dt and 2 dt.

    Both observers watch the same Brownian paths, so the fine estimate is
    pathwise below the coarse one and the late-detection bias must shrink.
    """

    dt_fine: float
    dt_coarse: float
    mean_fine: float
    mean_coarse: float
    target: float
    improved: bool
    coupled_gap: float  # mean_coarse - mean_fine; nonnegative pathwise


def exit_refinement_check(n: int, h: float, n_paths: int, fine_grid: TimeGrid, seed: int,
                          workers: Optional[int] = None) -> ExitRefinementReport:
    """Detect first exits at dt and 2 dt on shared paths; the fine-grid mean
    must lie strictly closer to the continuous target h^2/n."""
    k_h = exit_count_target(n, h)
    merged = _run_exit_engine(n, h, fine_grid, n_paths, seed, n_exits=k_h,
                              observers=(1, 2), workers=workers)
    (dur_f, rec_f), (dur_c, rec_c) = merged
    complete = (rec_f >= k_h) & (rec_c >= k_h)
    if complete.sum() < 0.99 * n_paths:
        raise HorizonTooShortError("horizon too short for the refinement pair")
    dt = fine_grid.dt
    mean_f = float((dur_f[complete, 0] * dt).mean() / (h * h))
    mean_c = float((dur_c[complete, 0] * 2 * dt).mean() / (h * h))
    target = 1.0 / n
    return ExitRefinementReport(
        dt_fine=dt, dt_coarse=2 * dt, mean_fine=mean_f, mean_coarse=mean_c,
        target=target, improved=bool(abs(mean_f - target) < abs(mean_c - target)),
        coupled_gap=mean_c - mean_f,
    )
