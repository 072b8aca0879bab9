"""Small complex linear algebra used throughout the package.

Everything here works on dense numpy arrays of order N <= ~16.  The
Hermitian type is immutable; operations are pure functions.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from numba import njit

HERMITIAN_TOL = 1e-12
JACOBI_SWEEPS = 100
_IMAG_RESIDUE_TOL = 1e-6
_SOLVE_RESIDUAL_TOL = 1e-8


class LinalgError(ValueError):
    """Invalid input to a linear algebra routine."""


class SingularMatrixError(LinalgError):
    """The (loaded) matrix could not be factorized."""


class ConvergenceError(RuntimeError):
    pass


def as_vector(w) -> np.ndarray:
    """Coerce to a finite 1-D complex128 array."""
    v = np.asarray(w, dtype=np.complex128)
    if v.ndim != 1 or v.size < 1:
        raise LinalgError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise LinalgError("vector has non-finite entries")
    return v


class HermitianMatrix:
    """Read-only N x N Hermitian matrix.

    The input is symmetrized as (M + M^H)/2 so that accumulation round-off
    from averaging outer products is absorbed; inputs whose asymmetry is
    larger than round-off are rejected.
    """

    __slots__ = ("_a",)

    def __init__(self, entries):
        m = np.array(entries, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise LinalgError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise LinalgError("matrix has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(m))))
        asym = float(np.max(np.abs(m - m.conj().T)))
        if asym > HERMITIAN_TOL * scale:
            raise LinalgError(f"matrix is not Hermitian (max |M - M^H| = {asym:.3e})")
        m = 0.5 * (m + m.conj().T)
        m[np.diag_indices_from(m)] = m.diagonal().real
        m.setflags(write=False)
        self._a = m

    @classmethod
    def identity(cls, n: int) -> HermitianMatrix:
        return cls(np.eye(n))

    @property
    def order(self) -> int:
        return self._a.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._a
        return self._a.astype(dtype)

    def trace(self) -> float:
        return float(self._a.diagonal().real.sum())

    def diagonal(self) -> np.ndarray:
        return self._a.diagonal().real.copy()

    def __eq__(self, other):
        if not isinstance(other, HermitianMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash(self._a.tobytes())

    def __repr__(self):
        return f"HermitianMatrix(order={self.order})"


def _check_dims(a: HermitianMatrix, v: np.ndarray) -> None:
    if v.shape[0] != a.order:
        raise LinalgError(f"dimension mismatch: matrix order {a.order}, vector length {v.shape[0]}")


def quadratic_form(a: HermitianMatrix, w) -> float:
    """Real part of w^H A w."""
    v = as_vector(w)
    _check_dims(a, v)
    q = np.vdot(v, a.array @ v)
    if abs(q.imag) > _IMAG_RESIDUE_TOL * (1.0 + abs(q.real)):
        raise LinalgError(f"quadratic form has imaginary residue {q.imag:.3e}")
    return float(q.real)


def loaded_solve(a: HermitianMatrix, b, epsilon: float) -> np.ndarray:
    """Solve (A + epsilon I) x = b by Cholesky factorization."""
    rhs = as_vector(b)
    _check_dims(a, rhs)
    if not (epsilon >= 0.0) or not np.isfinite(epsilon):
        raise LinalgError(f"loading must be a finite non-negative number, got {epsilon}")
    m = a.array + epsilon * np.eye(a.order)
    try:
        factor = sla.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Cholesky factorization failed (epsilon={epsilon}): {exc}") from None
    pivots = np.abs(np.diagonal(factor[0])) ** 2
    if pivots.min() <= 1e-15 * pivots.max():
        raise SingularMatrixError(f"matrix is numerically singular (pivot ratio {pivots.min() / pivots.max():.3e})")
    x = sla.cho_solve(factor, rhs, check_finite=False)
    bnorm = np.linalg.norm(rhs)
    r = rhs - m @ x
    if np.linalg.norm(r) > _SOLVE_RESIDUAL_TOL * bnorm:
        # one step of iterative refinement
        x = x + sla.cho_solve(factor, r, check_finite=False)
        r = rhs - m @ x
        if np.linalg.norm(r) > _SOLVE_RESIDUAL_TOL * bnorm:
            raise SingularMatrixError(f"solve residual {np.linalg.norm(r):.3e} exceeds bound")
    return x


@njit(cache=True)
def _jacobi_eigenvalues(a, max_sweeps):
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j].real ** 2 + a[i, j].imag ** 2
    target = 1e-28 * total
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * (a[p, q].real ** 2 + a[p, q].imag ** 2)
        if off <= target:
            return sweep, off
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag == 0.0:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # G = diag(1, conj(phase)) @ [[c, s], [-s, c]]
                g00 = c + 0j
                g01 = s + 0j
                g10 = -s * np.conj(phase)
                g11 = c * np.conj(phase)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * g00 + akq * g10
                    a[k, q] = akp * g01 + akq * g11
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = np.conj(g00) * apk + np.conj(g10) * aqk
                    a[q, k] = np.conj(g01) * apk + np.conj(g11) * aqk
                a[p, q] = 0j
                a[q, p] = 0j
                a[p, p] = a[p, p].real + 0j
                a[q, q] = a[q, q].real + 0j
    return -1, off


def hermitian_eigenvalues(a: HermitianMatrix, max_sweeps: int = JACOBI_SWEEPS) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations, sorted descending."""
    work = np.array(a.array, dtype=np.complex128)
    sweeps, off = _jacobi_eigenvalues(work, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi iteration did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {np.sqrt(off):.3e})"
        )
    return np.sort(work.diagonal().real)[::-1].copy()
