"""Dense symmetric linear algebra on small matrices.

Everything here targets n <= 16: eigendecomposition by classical Jacobi
rotations, positive-semidefinite square roots and inverse square roots,
and Haar-distributed orthogonal matrices.  Robustness is preferred over
speed; batched helpers exist for the per-step matrix sequences produced
by the estimation pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonSymmetricError, NoConvergenceError, NotPSDError, NotPositiveDefiniteError
from .seeding import generator

# Convergence / tolerance policy for the Jacobi solver.
SYMMETRY_RTOL = 1e-12
OFFDIAG_RTOL = 1e-13
MAX_SWEEPS = 100

# Floor below which a symmetric matrix is treated as not strictly positive
# definite (Hypothesis-A1-style check).
DEFAULT_EPS_PD = 1e-10


@dataclass
class EigenDecomposition:
    """Orthogonal diagonalization q^T s q = diag(eigenvalues).

    Eigenvalues are ascending; each eigenvector's first nonzero component
    is positive, which removes the gauge freedom and makes downstream
    rotation schedules deterministic.
    """

    q: np.ndarray
    eigenvalues: np.ndarray


def _check_symmetric(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NonSymmetricError(f"expected a square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NonSymmetricError("matrix has non-finite entries")
    scale = np.linalg.norm(s)
    if np.linalg.norm(s - s.T) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise NonSymmetricError("matrix is not symmetric within 1e-12 relative tolerance")
    return 0.5 * (s + s.T)


def _fix_gauge(q: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs so the first nonzero component is positive."""
    q = q.copy()
    for j in range(q.shape[1]):
        col = q[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            q[:, j] = -col
    return q


def jacobi_eigh(s: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by classical Jacobi rotations.

    Pivots on the largest off-diagonal entry; converges when the
    off-diagonal Frobenius norm drops below 1e-13 times the matrix norm.

    Raises
    ------
    NonSymmetricError
        If ``s`` is not symmetric within 1e-12 relative tolerance.
    NoConvergenceError
        If the off-diagonal norm is still above threshold after 100 sweeps.
    """
    a = _check_symmetric(s)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        lam = np.diag(a).copy()
        order = np.argsort(lam, kind="stable")
        return EigenDecomposition(q=_fix_gauge(v[:, order]), eigenvalues=lam[order])

    threshold = OFFDIAG_RTOL * scale
    rotations_per_sweep = n * (n - 1) // 2
    converged = False
    for _ in range(MAX_SWEEPS * rotations_per_sweep):
        off = np.abs(a - np.diag(np.diag(a)))
        p, q_ = np.unravel_index(np.argmax(off), off.shape)
        if np.sqrt(np.sum(off**2)) < threshold:
            converged = True
            break
        apq = a[p, q_]
        if apq == 0.0:
            converged = True
            break
        tau = (a[q_, q_] - a[p, p]) / (2.0 * apq)
        t = np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
        c = 1.0 / np.sqrt(1.0 + t * t)
        s_ = t * c
        rot = np.eye(n)
        rot[p, p] = rot[q_, q_] = c
        rot[p, q_] = s_
        rot[q_, p] = -s_
        a = rot.T @ a @ rot
        a = 0.5 * (a + a.T)
        a[p, q_] = a[q_, p] = 0.0
        v = v @ rot
    if not converged:
        raise NoConvergenceError("Jacobi sweeps exhausted before off-diagonal threshold")
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return EigenDecomposition(q=_fix_gauge(v[:, order]), eigenvalues=lam[order])


def sqrt_psd(s: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root.

    Eigenvalues in [-1e-12 * ||s||_F, 0) are clamped to zero; anything more
    negative raises NotPSDError rather than being silently repaired.
    """
    dec = jacobi_eigh(s)
    scale = np.linalg.norm(np.asarray(s, dtype=float))
    floor = -1e-12 * scale
    lam = dec.eigenvalues
    if np.any(lam < floor):
        raise NotPSDError(f"eigenvalue {lam.min():.3e} below clamping floor {floor:.3e}")
    root = dec.q @ np.diag(np.sqrt(np.clip(lam, 0.0, None))) @ dec.q.T
    return 0.5 * (root + root.T)


def inv_sqrt_pd(s: np.ndarray, eps_pd: float = DEFAULT_EPS_PD) -> np.ndarray:
    """Symmetric inverse square root (sqrt(s))^-1 of a positive definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If the smallest eigenvalue is below ``eps_pd``; the offending value
        is attached to the exception.
    """
    dec = jacobi_eigh(s)
    lam_min = float(dec.eigenvalues.min())
    if lam_min < eps_pd:
        raise NotPositiveDefiniteError(
            f"smallest eigenvalue {lam_min:.3e} below positive-definiteness floor {eps_pd:.3e}",
            min_eigenvalue=lam_min,
        )
    c = dec.q @ np.diag(1.0 / np.sqrt(dec.eigenvalues)) @ dec.q.T
    return 0.5 * (c + c.T)


def haar_orthogonal(n: int, seed) -> np.ndarray:
    """Haar-distributed matrix from O(n) (determinant +1 or -1).

    Gaussian matrix, QR factorization, columns sign-corrected by the sign
    of the corresponding diagonal entry of the triangular factor.
    Deterministic in the seed.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    rng = generator(seed)
    while True:
        z = rng.standard_normal((n, n))
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        if np.all(d != 0.0):
            return q * np.sign(d)[np.newaxis, :]


def is_orthogonal(b: np.ndarray, tol: float = 1e-12) -> bool:
    """Orthogonality check: ||B^T B - I||_max <= tol and |det B| = 1 within 1e-10."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if b.shape != (n, n) or not np.all(np.isfinite(b)):
        return False
    gram_err = np.max(np.abs(b.T @ b - np.eye(n)))
    return bool(gram_err <= tol and abs(abs(np.linalg.det(b)) - 1.0) <= 1e-10)


# ---------------------------------------------------------------------------
# Batched helpers.  Same conventions as jacobi_eigh (ascending eigenvalues,
# sign-fixed eigenvectors) but vectorized over a leading stack axis, since
# the estimation pipeline diagonalizes one small matrix per time step.
# ---------------------------------------------------------------------------


def _fix_gauge_batch(q: np.ndarray) -> np.ndarray:
    b, n, _ = q.shape
    qt = q.copy()
    for j in range(n):
        col = qt[:, :, j]
        big = np.abs(col) > 1e-12
        first = np.argmax(big, axis=1)
        sign = np.sign(col[np.arange(b), first])
        sign = np.where(sign == 0.0, 1.0, sign)
        qt[:, :, j] *= sign[:, None]
    return qt


def _eigh_2x2_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = mats[:, 0, 0]
    b = mats[:, 0, 1]
    c = mats[:, 1, 1]
    # Rotation angle; exactly-diagonal inputs keep an exact permutation gauge.
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    ct = np.cos(theta)
    st = np.sin(theta)
    diag = b == 0.0
    swap = diag & (a > c)
    ct = np.where(diag, np.where(swap, 0.0, 1.0), ct)
    st = np.where(diag, np.where(swap, 1.0, 0.0), st)
    lam1 = a * ct**2 + 2.0 * b * ct * st + c * st**2
    lam2 = a * st**2 - 2.0 * b * ct * st + c * ct**2
    m = mats.shape[0]
    q = np.empty((m, 2, 2))
    q[:, 0, 0] = ct
    q[:, 1, 0] = st
    q[:, 0, 1] = -st
    q[:, 1, 1] = ct
    lam = np.stack([lam1, lam2], axis=1)
    order = np.argsort(lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    q = np.take_along_axis(q, order[:, None, :], axis=2)
    return _fix_gauge_batch(q), lam


def eigh_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a stack of symmetric matrices.

    Returns (q, eigenvalues) with shapes (B, n, n) and (B, n).  Closed form
    for n in {1, 2}; cyclic Jacobi sweeps vectorized over the stack for
    larger n.
    """
    mats = np.asarray(mats, dtype=float)
    m, n, _ = mats.shape
    if n == 1:
        return np.ones((m, 1, 1)), mats[:, :, 0].copy()
    if n == 2:
        return _eigh_2x2_batch(mats)

    a = mats.copy()
    v = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    scale = np.maximum(np.linalg.norm(a, axis=(1, 2)), 1e-300)

    def _converged() -> bool:
        off = a.copy()
        off[:, np.arange(n), np.arange(n)] = 0.0
        return bool(np.all(np.linalg.norm(off, axis=(1, 2)) < OFFDIAG_RTOL * scale))

    for _ in range(MAX_SWEEPS):
        if _converged():
            break
        for p in range(n - 1):
            for q_ in range(p + 1, n):
                apq = a[:, p, q_]
                need = np.abs(apq) > 1e-300
                tau = np.where(need, (a[:, q_, q_] - a[:, p, p]) / np.where(need, 2.0 * apq, 1.0), 0.0)
                t = np.where(tau == 0.0, 1.0, np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau)))
                t = np.where(need, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = t * c
                ap = a[:, p, :].copy()
                aq = a[:, q_, :].copy()
                a[:, p, :] = c[:, None] * ap - s_[:, None] * aq
                a[:, q_, :] = s_[:, None] * ap + c[:, None] * aq
                ap = a[:, :, p].copy()
                aq = a[:, :, q_].copy()
                a[:, :, p] = c[:, None] * ap - s_[:, None] * aq
                a[:, :, q_] = s_[:, None] * ap + c[:, None] * aq
                a[:, p, q_] = 0.0
                a[:, q_, p] = 0.0
                vp = v[:, :, p].copy()
                vq = v[:, :, q_].copy()
                v[:, :, p] = c[:, None] * vp - s_[:, None] * vq
                v[:, :, q_] = s_[:, None] * vp + c[:, None] * vq
    else:
        if not _converged():
            raise NoConvergenceError("batched Jacobi sweeps exhausted")
    lam = a[:, np.arange(n), np.arange(n)]
    order = np.argsort(lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return _fix_gauge_batch(v), lam


def inv_sqrt_pd_batch(mats: np.ndarray, eps_pd: float = DEFAULT_EPS_PD) -> np.ndarray:
    """Inverse square roots of a stack of SPD matrices.

    Raises NotPositiveDefiniteError at the first index whose smallest
    eigenvalue is below ``eps_pd``.
    """
    q, lam = eigh_batch(mats)
    lam_min = lam[:, 0]
    bad = np.flatnonzero(lam_min < eps_pd)
    if bad.size:
        k = int(bad[0])
        raise NotPositiveDefiniteError(
            f"matrix {k}: smallest eigenvalue {lam_min[k]:.3e} below floor {eps_pd:.3e}",
            min_eigenvalue=float(lam_min[k]),
            index=k,
        )
    inv_root = 1.0 / np.sqrt(lam)
    return np.einsum("bik,bk,bjk->bij", q, inv_root, q)
