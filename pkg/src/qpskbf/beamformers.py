"""QPSK-constrained beamforming: objective, Capon baseline and solvers.

Symbols index the dictionary ``0 -> 1+j, 1 -> 1-j, 2 -> -1+j, 3 -> -1-j``
and a symbol list of length N maps to ``w = dict[s] / sqrt(2N)``, a
unit-norm constant-modulus weight vector.

The objective ``alpha |w^H a_g|^2 - (1 - alpha) w^H R w`` is invariant to
multiplying every weight by a common dictionary phase, so the oracle only
enumerates canonical lists with ``symbols[0] == 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .array_model import make_rng
from .linalg import HermitianMatrix, LinalgError, as_vector, loaded_solve, quadratic_form

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])
# symbol permutation for multiplying a weight by j
_ROTATE_J = np.array([2, 0, 3, 1])
MAX_ORACLE_N = 14
IMPROVE_TOL = 1e-12
DEFAULT_GREEDY_SAMPLES = 100


class OracleTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class QpskWeights:
    symbols: tuple[int, ...]

    def __post_init__(self):
        s = tuple(int(x) for x in self.symbols)
        if len(s) < 2:
            raise ValueError(f"need at least 2 symbols, got {len(s)}")
        if any(x not in (0, 1, 2, 3) for x in s):
            raise ValueError(f"symbols must be in {{0,1,2,3}}, got {s}")
        object.__setattr__(self, "symbols", s)

    @classmethod
    def _trusted(cls, symbols: tuple) -> QpskWeights:
        """Skip validation for symbols produced by the solvers themselves."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "symbols", symbols)
        return obj

    @property
    def n(self) -> int:
        return len(self.symbols)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.symbols, dtype=np.int64)

    @property
    def is_canonical(self) -> bool:
        return self.symbols[0] == 0

    def encoding(self) -> int:
        """Base-4 integer with symbols[0] as the most significant digit."""
        code = 0
        for x in self.symbols:
            code = 4 * code + x
        return code

    def to_json(self) -> str:
        return json.dumps(list(self.symbols))

    @classmethod
    def from_json(cls, text: str) -> QpskWeights:
        return cls(tuple(json.loads(text)))


@dataclass(frozen=True)
class ObjectiveParams:
    alpha: float = 0.01
    loading_scale: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.loading_scale >= 0.0:
            raise ValueError(f"loading_scale must be non-negative, got {self.loading_scale}")


def to_complex(s: QpskWeights) -> np.ndarray:
    return QPSK[s.array] / np.sqrt(2.0 * s.n)


def rotate(s: QpskWeights, k: int) -> QpskWeights:
    """Multiply every weight by j**k."""
    a = s.array
    for _ in range(k % 4):
        a = _ROTATE_J[a]
    return QpskWeights(tuple(a))


def canonicalize(s: QpskWeights) -> QpskWeights:
    for k in range(4):
        r = rotate(s, k)
        if r.symbols[0] == 0:
            return r
    raise AssertionError("unreachable")


def _check(r: HermitianMatrix, a_g: np.ndarray, n: int | None = None) -> None:
    if r.order != a_g.shape[0]:
        raise ValueError(f"covariance order {r.order} does not match steering length {a_g.shape[0]}")
    if n is not None and n != r.order:
        raise ValueError(f"{n} symbols for a {r.order}-element array")


def objective(s: QpskWeights, r: HermitianMatrix, a_g, p: ObjectiveParams) -> float:
    """alpha |w^H a_g|^2 - (1 - alpha) Re(w^H R w); larger is better."""
    a = as_vector(a_g)
    _check(r, a, s.n)
    w = to_complex(s)
    return p.alpha * abs(np.vdot(w, a)) ** 2 - (1.0 - p.alpha) * quadratic_form(r, w)


def objective_batch(symbols: np.ndarray, r: HermitianMatrix, a_g, alpha: float) -> np.ndarray:
    """Objective for each row of an (M, N) symbol matrix."""
    symbols = np.asarray(symbols)
    w = QPSK[symbols] / np.sqrt(2.0 * symbols.shape[1])
    gain = np.abs(w.conj() @ np.asarray(a_g)) ** 2
    power = np.einsum("mi,mi->m", w.conj(), w @ r.array.T).real
    return alpha * gain - (1.0 - alpha) * power


def _encodings(symbols: np.ndarray) -> np.ndarray:
    n = symbols.shape[1]
    return symbols.astype(np.int64) @ (4 ** np.arange(n - 1, -1, -1, dtype=np.int64))


def capon_weights(r: HermitianMatrix, a_g, p: ObjectiveParams) -> np.ndarray:
    """Diagonally loaded MVDR weights R^-1 a / (a^H R^-1 a)."""
    a = as_vector(a_g)
    _check(r, a)
    eps = p.loading_scale * r.trace() / r.order
    x = loaded_solve(r, a, eps)
    return x / np.conj(np.vdot(a, x))


def naive_quantize(w) -> QpskWeights:
    """Nearest QPSK state per entry; a zero component counts as positive."""
    v = np.asarray(w, dtype=np.complex128)
    sym = 2 * (v.real < 0) + (v.imag < 0)
    return QpskWeights(tuple(sym))


@njit(cache=True)
def _oracle_gray(r, a, alpha):
    n = a.shape[0]
    for i in range(n):
        if not np.isfinite(a[i]):
            return np.full(n, -1, np.int64)
    scale = 1.0 / np.sqrt(2.0 * n)
    d = np.empty(4, np.complex128)
    d[0] = (1 + 1j) * scale
    d[1] = (1 - 1j) * scale
    d[2] = (-1 + 1j) * scale
    d[3] = (-1 - 1j) * scale
    sym = np.zeros(n, np.int64)
    w = np.full(n, d[0])
    g = 0j
    for i in range(n):
        g += np.conj(w[i]) * a[i]
    z = r @ w
    power = 0.0
    for i in range(n):
        power += (np.conj(w[i]) * z[i]).real
    f = alpha * (g.real ** 2 + g.imag ** 2) - (1.0 - alpha) * power
    best = f
    best_sym = sym.copy()
    code = 0
    best_code = 0
    m = n - 1
    step = np.ones(m, np.int64)
    weight = np.empty(m, np.int64)
    for k in range(m):
        weight[k] = 4 ** k
    total = 4 ** m
    for t in range(1, total):
        # reflected base-4 Gray code: the digit that moves is the lowest
        # non-zero base-4 digit of t
        pos = 0
        tt = t
        while tt % 4 == 0:
            tt //= 4
            pos += 1
        i = n - 1 - pos
        old = sym[i]
        new = old + step[pos]
        if new == 0 or new == 3:
            step[pos] = -step[pos]
        sym[i] = new
        delta = d[new] - d[old]
        g += np.conj(delta) * a[i]
        power += 2.0 * (np.conj(delta) * z[i]).real + (delta.real ** 2 + delta.imag ** 2) * r[i, i].real
        for k in range(n):
            z[k] += r[k, i] * delta
        code += (new - old) * weight[pos]
        f = alpha * (g.real ** 2 + g.imag ** 2) - (1.0 - alpha) * power
        tol = 1e-12 * (1.0 + abs(best))
        if f > best + tol or (f >= best - tol and code < best_code):
            best = f
            best_code = code
            best_sym[:] = sym
    return best_sym


def oracle_search(r: HermitianMatrix, a_g, p: ObjectiveParams) -> QpskWeights:
    """Exhaustive search over the 4^(N-1) canonical QPSK vectors.

    Returns the canonical maximizer; ties go to the smallest base-4
    encoding.  Enumeration follows a base-4 Gray sequence so each step
    changes one symbol and the objective is updated in O(N).
    """
    # kept lean: at small N the enumeration itself costs only microseconds
    if type(a_g) is np.ndarray and a_g.dtype == np.complex128 and a_g.ndim == 1:
        a = a_g
    else:
        a = as_vector(a_g)
    _check(r, a)
    n = r.order
    if n > MAX_ORACLE_N:
        raise OracleTooLargeError(
            f"oracle refused for N={n}: 4^(N-1) = {4 ** (n - 1)} candidates "
            f"(limit N <= {MAX_ORACLE_N})"
        )
    if n < 2:
        raise ValueError("oracle needs N >= 2")
    sym = _oracle_gray(r.array, a, p.alpha)
    if sym[0] < 0:
        raise LinalgError("steering vector has non-finite entries")
    return QpskWeights._trusted(tuple(sym.tolist()))


def greedy_sample(r: HermitianMatrix, a_g, p: ObjectiveParams,
                  n_samples: int = DEFAULT_GREEDY_SAMPLES, seed: int = 0) -> QpskWeights:
    """Best of ``n_samples`` uniform i.i.d. draws from {0..3}^N."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a = as_vector(a_g)
    _check(r, a)
    cands = make_rng(seed).integers(0, 4, size=(n_samples, r.order))
    vals = objective_batch(cands, r, a, p.alpha)
    top = vals.max()
    tied = np.flatnonzero(vals >= top - IMPROVE_TOL * (1.0 + abs(top)))
    pick = tied[np.argmin(_encodings(cands[tied]))]
    return QpskWeights(tuple(cands[pick]))


@dataclass
class DescentResult:
    weights: QpskWeights
    sweeps: int
    converged: bool
    # objective after the initial point and after every accepted update
    history: list[float] = field(default_factory=list)


def coordinate_descent_path(init: QpskWeights, r: HermitianMatrix, a_g, p: ObjectiveParams,
                            max_sweeps: int = 20) -> DescentResult:
    """Gauss-Seidel sweeps over the antenna indices in order.

    At each index all four symbols are tried and the incumbent is kept
    unless another symbol improves the objective by more than
    ``1e-12 * max(1, |f|)``.  Stops after a sweep without changes or after
    ``max_sweeps`` sweeps.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    a = as_vector(a_g)
    _check(r, a, init.n)
    n = init.n
    alpha = p.alpha
    rm = r.array
    rdiag = rm.diagonal().real
    d = QPSK / np.sqrt(2.0 * n)
    sym = list(init.symbols)
    history = []
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        # resync from scratch each sweep to keep round-off from accumulating
        w = d[sym]
        g = complex(np.vdot(w, a))
        z = rm @ w
        power = float(np.vdot(w, z).real)
        f = alpha * abs(g) ** 2 - (1.0 - alpha) * power
        if not history:
            history.append(f)
        sweeps += 1
        changed = False
        for i in range(n):
            cur = sym[i]
            tol = IMPROVE_TOL * max(1.0, abs(f))
            best_q, best_f = cur, f + tol
            best_g, best_p = g, power
            for q in range(4):
                if q == cur:
                    continue
                delta = d[q] - d[cur]
                g2 = g + delta.conjugate() * a[i]
                p2 = power + 2.0 * (delta.conjugate() * z[i]).real + abs(delta) ** 2 * rdiag[i]
                f2 = alpha * abs(g2) ** 2 - (1.0 - alpha) * p2
                if f2 > best_f:
                    best_q, best_f, best_g, best_p = q, f2, g2, p2
            if best_q != cur:
                delta = d[best_q] - d[cur]
                z = z + rm[:, i] * delta
                sym[i] = best_q
                g, power, f = best_g, best_p, best_f
                history.append(f)
                changed = True
        if not changed:
            converged = True
            break
    return DescentResult(QpskWeights(tuple(sym)), sweeps, converged, history)


def coordinate_descent(init: QpskWeights, r: HermitianMatrix, a_g, p: ObjectiveParams,
                       max_sweeps: int = 20) -> QpskWeights:
    return coordinate_descent_path(init, r, a_g, p, max_sweeps).weights
