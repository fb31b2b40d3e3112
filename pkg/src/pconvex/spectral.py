"""Evaluation and differentiation of the p-subset-sum product operator.

For an eigenvalue vector lam in R^n and an integer 1 <= p <= n the operator is

    F(lam)  = prod over all p-subsets S of (sum_{i in S} lam_i),
    Ft(lam) = F ** (1/C),   C = binom(n, p).

F is positive exactly on the open cone where every p-subset sum is positive.
On that cone F is homogeneous of degree C, Ft of degree one, and Ft is concave.
The product is carried in log space so that large n does not overflow.

Derivatives at a diagonal point, written with s_S = sum_{i in S} lam_i:

    dF/dlam_k        = sum_{S : k in S} F / s_S
    d2F/dlam_k dlam_l = sum_{S ∋ k, T ∋ l, S != T} F / (s_S s_T)
    off-diagonal matrix second derivative, k != r:
        (dF/dlam_k - dF/dlam_r) / (lam_k - lam_r)
      = - sum over (p-1)-subsets U avoiding k, r of F / (s_{U+r} s_{U+k})

with the normalized versions obtained by the chain rule through F**(1/C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

MAX_N = 16

# Relative eigenvalue-gap threshold below which the off-diagonal second
# derivative switches from the difference quotient to the subset-pair sum.
TIE_THRESHOLD = 1e-6


class ConeViolationError(ValueError):
    """Derivative or solve requested outside the open p-positivity cone."""


@dataclass(frozen=True)
class EigenSpectrum:
    """Ordered vector of principal curvatures / Hessian eigenvalues."""

    values: tuple
    n: int
    sorted_descending: bool

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if self.n != len(vals):
            raise ValueError("n must equal len(values)")
        if self.n < 2:
            raise ValueError("spectrum needs n >= 2 entries")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("spectrum entries must be finite")
        is_sorted = all(vals[i] >= vals[i + 1] for i in range(self.n - 1))
        if self.sorted_descending and not is_sorted:
            raise ValueError("sorted_descending set but values are not sorted")

    @classmethod
    def from_values(cls, values):
        vals = tuple(float(v) for v in values)
        is_sorted = all(vals[i] >= vals[i + 1] for i in range(len(vals) - 1))
        return cls(vals, len(vals), is_sorted)

    @classmethod
    def sorted(cls, values):
        vals = tuple(sorted((float(v) for v in values), reverse=True))
        return cls(vals, len(vals), True)

    def as_array(self):
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class LogValue:
    """Overflow-safe product value: exp(log_magnitude) when positive.

    ``defined`` is False whenever some subset sum is <= 0; on the cone
    boundary log_magnitude is -inf (value 0), outside it is nan.
    """

    log_magnitude: float
    defined: bool

    @property
    def value(self) -> float:
        return float(np.exp(self.log_magnitude))


@dataclass(frozen=True)
class ConeMargin:
    min_subset_sum: float
    witness_subset: tuple

    @property
    def inside(self) -> bool:
        return self.min_subset_sum > 0.0


@dataclass(frozen=True)
class OperatorJet:
    """Value, gradient and second derivatives of Ft at a spectrum.

    grad[k] is dFt/dlam_k; hess_diag[k, l] is d2Ft/dlam_k dlam_l (including
    k == l); hess_offdiag[k, r] is the off-diagonal matrix second derivative
    for k != r, zero on its diagonal.
    """

    value_F: LogValue
    value_tildeF: float
    grad: np.ndarray
    hess_diag: np.ndarray
    hess_offdiag: np.ndarray


class SubsetTable:
    """Precomputed lexicographic p-subset tables for fixed (n, p)."""

    def __init__(self, n: int, p: int):
        if n < 1 or n > MAX_N:
            raise ValueError(
                f"n={n} out of supported range 1..{MAX_N}; the table would "
                f"need binom(n, p) rows which grows combinatorially"
            )
        if p < 1 or p > n:
            raise ValueError(f"p={p} out of range 1..{n}")
        self.n = n
        self.p = p
        self.subsets = tuple(combinations(range(n), p))
        self.count = len(self.subsets)
        mask = np.zeros((self.count, n))
        for i, subset in enumerate(self.subsets):
            mask[i, list(subset)] = 1.0
        self.mask = mask
        self._pair_cache: dict = {}

    def sums(self, lam: np.ndarray) -> np.ndarray:
        """Subset sums, shape (..., count); lam has shape (..., n)."""
        return lam @ self.mask.T

    def pair_indices(self, k: int, r: int):
        """Index pairs (i, j) with subset_i containing r but not k and
        subset_j = subset_i with r swapped for k."""
        key = (k, r)
        if key not in self._pair_cache:
            where = {s: i for i, s in enumerate(self.subsets)}
            left, right = [], []
            for i, s in enumerate(self.subsets):
                if r in s and k not in s:
                    t = tuple(sorted(set(s) - {r} | {k}))
                    left.append(i)
                    right.append(where[t])
            self._pair_cache[key] = (
                np.asarray(left, dtype=int),
                np.asarray(right, dtype=int),
            )
        return self._pair_cache[key]


@lru_cache(maxsize=None)
def get_table(n: int, p: int) -> SubsetTable:
    return SubsetTable(n, p)


def _values(spec) -> np.ndarray:
    if isinstance(spec, EigenSpectrum):
        return spec.as_array()
    arr = np.asarray(spec, dtype=float)
    if arr.ndim != 1:
        raise ValueError("spectrum must be a 1-d vector")
    return arr


def subset_sums(spec, p: int):
    """All p-subset sums of the spectrum, with the subsets themselves.

    Subsets are 0-based index tuples in lexicographic order.
    """
    lam = _values(spec)
    table = get_table(lam.size, p)
    return table.sums(lam), table.subsets


def cone_margin(spec, p: int) -> ConeMargin:
    """Minimum p-subset sum and the lexicographically first attaining subset."""
    lam = _values(spec)
    table = get_table(lam.size, p)
    sums = table.sums(lam)
    i = int(np.argmin(sums))
    return ConeMargin(float(sums[i]), table.subsets[i])


def eval_operator(spec, p: int):
    """Return (F as LogValue, Ft) at the spectrum.

    On the closed-cone boundary both values are 0; outside the closed cone
    the LogValue is undefined and Ft is nan.
    """
    lam = _values(spec)
    table = get_table(lam.size, p)
    sums = table.sums(lam)
    m = float(sums.min())
    if m < 0.0:
        return LogValue(float("nan"), False), float("nan")
    if m == 0.0:
        return LogValue(float("-inf"), False), 0.0
    log_f = float(np.log(sums).sum())
    return LogValue(log_f, True), float(np.exp(log_f / table.count))


def theta_constant(n: int, p: int) -> float:
    """Dominance constant: the p smallest-index directional derivatives of F
    each carry at least this fraction of the gradient trace."""
    if p < 1 or p > n:
        raise ValueError(f"p={p} out of range 1..{n}")
    return 1.0 / (n * math.comb(n - 1, p - 1))


def _grad_ratio(table: SubsetTable, inv_sums: np.ndarray) -> np.ndarray:
    """G_k = sum_{S ∋ k} 1/s_S, shape (..., n)."""
    return inv_sums @ table.mask


def offdiag_pairsum(spec, p: int) -> np.ndarray:
    """Off-diagonal second derivatives of Ft via the subset-pair sum form."""
    lam = _values(spec)
    n = lam.size
    table = get_table(n, p)
    sums = table.sums(lam)
    if sums.min() <= 0.0:
        raise ConeViolationError("spectrum outside the open cone")
    inv = 1.0 / sums
    tf = math.exp(float(np.log(sums).sum()) / table.count)
    out = np.zeros((n, n))
    for k in range(n):
        for r in range(k + 1, n):
            left, right = table.pair_indices(k, r)
            val = -(tf / table.count) * float(inv[left] @ inv[right])
            out[k, r] = val
            out[r, k] = val
    return out


def offdiag_quotient(spec, p: int) -> np.ndarray:
    """Off-diagonal second derivatives of Ft via the difference quotient.

    Entries with coincident eigenvalues come out nan; diagonal is zero.
    """
    lam = _values(spec)
    jet_grad = eigen_jet(spec, p).grad
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.subtract.outer(jet_grad, jet_grad) / np.subtract.outer(lam, lam)
    np.fill_diagonal(out, 0.0)
    return out


def eigen_jet(spec, p: int) -> OperatorJet:
    """Full first/second derivative data of F and Ft at an interior spectrum."""
    lam = _values(spec)
    n = lam.size
    table = get_table(n, p)
    sums = table.sums(lam)
    if sums.min() <= 0.0:
        i = int(np.argmin(sums))
        raise ConeViolationError(
            f"subset {table.subsets[i]} has sum {sums[i]:.3e} <= 0"
        )
    count = table.count
    log_f = float(np.log(sums).sum())
    tf = math.exp(log_f / count)
    inv = 1.0 / sums
    g_ratio = _grad_ratio(table, inv)
    # H_kl = sum over subsets containing both k and l of 1/s_S^2
    h_ratio = table.mask.T @ (table.mask * (inv**2)[:, None])
    grad = (tf / count) * g_ratio
    hess_diag = (tf / count) * (np.outer(g_ratio, g_ratio) / count - h_ratio)

    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = np.subtract.outer(lam, lam)
        off = np.subtract.outer(grad, grad) / gaps
    np.fill_diagonal(off, 0.0)
    tie_scale = TIE_THRESHOLD * (1.0 + np.add.outer(np.abs(lam), np.abs(lam)))
    ties = np.abs(gaps) < tie_scale
    np.fill_diagonal(ties, False)
    if ties.any():
        for k, r in zip(*np.nonzero(ties)):
            if k < r:
                left, right = table.pair_indices(int(k), int(r))
                val = -(tf / count) * float(inv[left] @ inv[right])
                off[k, r] = val
                off[r, k] = val
    return OperatorJet(LogValue(log_f, True), tf, grad, hess_diag, off)


def matrix_jet(a: np.ndarray, p: int):
    """Value and gradient of Ft on a symmetric matrix argument.

    Returns (Ft, dFt/dA) with dFt/dA = V diag(grad) V^T from the
    eigendecomposition A = V diag(lam) V^T; the gradient matrix is symmetric
    positive definite on the cone.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix argument must be square")
    scale = np.abs(a).max() + 1.0
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise ValueError("matrix argument must be symmetric")
    lam, vecs = np.linalg.eigh(a)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    jet = eigen_jet(lam, p)
    grad_mat = (vecs * jet.grad) @ vecs.T
    return jet.value_tildeF, grad_mat


def second_directional(spec, p: int, direction: np.ndarray) -> float:
    """d^2/dt^2 Ft(diag(lam) + t B) at t = 0 for a symmetric direction B."""
    b = np.asarray(direction, dtype=float)
    jet = eigen_jet(spec, p)
    d = np.diag(b)
    quad = float(d @ jet.hess_diag @ d)
    off = b * b.T  # elementwise B_kr * B_rk for the symmetric direction
    np.fill_diagonal(off, 0.0)
    return quad + float((jet.hess_offdiag * off).sum())


# ---------------------------------------------------------------------------
# Batch helpers used by the solvers and the verification suites.  Rows of
# ``lams`` are independent spectra of common length n.
# ---------------------------------------------------------------------------


def batch_margin(lams: np.ndarray, p: int) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    table = get_table(lams.shape[-1], p)
    return table.sums(lams).min(axis=-1)


def batch_value(lams: np.ndarray, p: int) -> np.ndarray:
    """Ft per row; 0 on the cone boundary, nan strictly outside."""
    lams = np.asarray(lams, dtype=float)
    table = get_table(lams.shape[-1], p)
    sums = table.sums(lams)
    m = sums.min(axis=-1)
    out = np.full(lams.shape[:-1], np.nan)
    on_boundary = m == 0.0
    inside = m > 0.0
    out[on_boundary] = 0.0
    if inside.any():
        out[inside] = np.exp(np.log(sums[inside]).sum(axis=-1) / table.count)
    return out


def batch_value_grad(lams: np.ndarray, p: int):
    """(Ft, grad) per row; every row must lie strictly inside the cone."""
    lams = np.asarray(lams, dtype=float)
    table = get_table(lams.shape[-1], p)
    sums = table.sums(lams)
    if sums.min() <= 0.0:
        raise ConeViolationError("batch contains a spectrum outside the cone")
    tf = np.exp(np.log(sums).sum(axis=-1) / table.count)
    grad = (tf[..., None] / table.count) * (1.0 / sums) @ table.mask
    return tf, grad


def batch_jet(lams: np.ndarray, p: int):
    """(Ft, grad, hess_diag, hess_offdiag) per row, quotient form only.

    Intended for randomized suites where ties have probability zero; exact
    ties produce inf/nan off-diagonal entries.
    """
    lams = np.asarray(lams, dtype=float)
    table = get_table(lams.shape[-1], p)
    count = table.count
    sums = table.sums(lams)
    if sums.min() <= 0.0:
        raise ConeViolationError("batch contains a spectrum outside the cone")
    inv = 1.0 / sums
    tf = np.exp(np.log(sums).sum(axis=-1) / count)
    g_ratio = inv @ table.mask
    h_ratio = np.einsum("mc,ck,cl->mkl", inv**2, table.mask, table.mask)
    grad = (tf[:, None] / count) * g_ratio
    outer = np.einsum("mk,ml->mkl", g_ratio, g_ratio)
    hess_diag = (tf[:, None, None] / count) * (outer / count - h_ratio)
    gaps = lams[:, :, None] - lams[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        off = (grad[:, :, None] - grad[:, None, :]) / gaps
    idx = np.arange(lams.shape[-1])
    off[:, idx, idx] = 0.0
    return tf, grad, hess_diag, off
