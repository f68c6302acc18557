"""Symmetric eigendecomposition by cyclic Jacobi sweeps.

Intended for the small matrices this package meets (latent-space covariances,
a few tens of rows at most). Tolerance is on the off-diagonal Frobenius norm.
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, ensure_finite

_OFFDIAG_TOL = 1e-10
_MAX_SWEEPS = 100


def _offdiag_norm(a: np.ndarray) -> float:
    return float(np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2)))


def symmetric_eig(m: np.ndarray, symmetry_tol: float = 1e-9):
    """Eigenvalues (descending) and matching eigenvector columns of symmetric ``m``.

    Satisfies ``m @ v[:, i] == vals[i] * v[:, i]`` with orthonormal columns.
    Raises NumericsError if ``m`` is not symmetric within ``symmetry_tol`` or
    the sweep budget is exhausted before convergence.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericsError(f"symmetric_eig: expected square matrix, got shape {a.shape}")
    if float(np.abs(a - a.T).max(initial=0.0)) > symmetry_tol:
        raise NumericsError("symmetric_eig: input is not symmetric within tolerance")
    ensure_finite("symmetric_eig input", a)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    converged = False
    for _ in range(_MAX_SWEEPS):
        if _offdiag_norm(a) < _OFFDIAG_TOL:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # Rotate rows/columns p and q of a, and columns p and q of v.
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    if not converged and _offdiag_norm(a) >= _OFFDIAG_TOL:
        raise NumericsError(f"symmetric_eig: no convergence in {_MAX_SWEEPS} sweeps")
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], np.ascontiguousarray(v[:, order])
