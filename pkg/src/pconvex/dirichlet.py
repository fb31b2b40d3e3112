"""Dirichlet solver for the Hessian-eigenvalue companion equation.

Solves  Ft(lambda(D^2 u)) = f(x, u, Du)^(1/C)  in a box or disk domain with
u = v on the boundary, for boundary data v whose discrete Hessian eigenvalues
lie in the closed p-positivity cone.  The same cone-safeguarded damped Newton
iteration as the surface solver drives the solve.

Discretization: uniform lattice on [-1, 1]^d.  Each interior node carries the
value, gradient and Hessian of u through 3-point formulas along axis lines
and through the two diagonal lines of every coordinate pair (whose difference
isolates the mixed derivative).  On the disk, stencil arms that would leave
the domain are shortened to their intersection with the unit circle and read
Dirichlet data there; all formulas allow unequal arms and reproduce
quadratics exactly, so a solution with constant Hessian is solved to solver
tolerance on any grid.

Monitored quantities: the interior product (v - u)^beta * Laplacian(u) and
the ratio of the interior Hessian sup to its value on the boundary-adjacent
layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import spectral
from .surface import NewtonConfig, _sym2_eigvecs


class DomainGrid:
    """Masked lattice over [-1, 1]^d with interior/boundary classification."""

    def __init__(self, kind: str = "square", m: int = 33, dim: int = 2):
        if kind not in ("square", "disk", "box"):
            raise ValueError("kind must be 'square', 'disk' or 'box'")
        if kind == "box":
            dim = 3
        elif kind in ("square", "disk"):
            dim = 2
        if m < 9:
            raise ValueError("need at least 9 nodes per axis")
        self.kind = kind
        self.dim = dim
        self.m = m
        self.spacing = 2.0 / (m - 1)
        self._build()

    # -- construction -----------------------------------------------------

    def _inside(self, x) -> bool:
        if self.kind == "disk":
            return float(np.dot(x, x)) < (1.0 - 1e-9) ** 2
        return bool(np.all(np.abs(x) < 1.0 - 1e-12))

    def _coord(self, idx) -> np.ndarray:
        return -1.0 + self.spacing * np.asarray(idx, dtype=float)

    def _cut_point(self, x, direction, arm):
        """Intersection of the segment x -> x + arm*direction with |y| = 1."""
        b = float(np.dot(x, direction))
        c = float(np.dot(x, x)) - 1.0
        t = -b + math.sqrt(b * b - c)
        return x + min(t, arm) * direction, min(t, arm)

    def _build(self):
        d, m = self.dim, self.m
        interior_index = {}
        interior_coords = []
        for idx in product(range(m), repeat=d):
            x = self._coord(idx)
            if self._inside(x):
                interior_index[idx] = len(interior_coords)
                interior_coords.append(x)
        self.n_interior = len(interior_coords)
        self.interior = np.asarray(interior_coords)

        boundary_index = {}
        boundary_coords = []

        def boundary_col(key, point):
            if key not in boundary_index:
                boundary_index[key] = len(boundary_coords)
                boundary_coords.append(point)
            return boundary_index[key]

        keys = ["u"] + [f"g{k}" for k in range(d)] + [
            f"h{k}{l}" for k in range(d) for l in range(k, d)
        ]
        self.local_keys = keys
        rows = {k: [] for k in keys}
        cols = {k: [] for k in keys}
        vals = {k: [] for k in keys}
        brows = {k: [] for k in keys}
        bcols = {k: [] for k in keys}
        bvals = {k: [] for k in keys}
        adjacent = np.zeros(self.n_interior, dtype=bool)

        def add(key, i, col, val):
            tag, j = col
            if tag == "I":
                rows[key].append(i)
                cols[key].append(j)
                vals[key].append(val)
            else:
                adjacent[i] = True
                brows[key].append(i)
                bcols[key].append(j)
                bvals[key].append(val)

        def arm_target(idx, x, offset, i):
            """Column and arm length toward a lattice offset."""
            nidx = tuple(a + o for a, o in zip(idx, offset))
            direction = np.asarray(offset, dtype=float)
            arm = self.spacing * float(np.linalg.norm(direction))
            direction = direction / np.linalg.norm(direction)
            if all(0 <= a < m for a in nidx) and nidx in interior_index:
                return ("I", interior_index[nidx]), arm
            if self.kind == "disk":
                point, t = self._cut_point(x, direction, arm)
                col = boundary_col(("C", idx, offset), point)
                return ("B", col), t
            nidx_clip = tuple(min(max(a, 0), m - 1) for a in nidx)
            point = self._coord(nidx_clip)
            col = boundary_col(("L", nidx_clip), point)
            return ("B", col), arm

        def line_weights(hm, hp):
            """(w-, w0, w+) second derivative, (v-, v0, v+) first derivative."""
            s = hm + hp
            second = (2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s))
            first = (-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s))
            return second, first

        for idx, i in interior_index.items():
            x = self._coord(idx)
            add("u", i, ("I", i), 1.0)
            for k in range(d):
                off = tuple(1 if a == k else 0 for a in range(d))
                noff = tuple(-o for o in off)
                (col_p, hp) = arm_target(idx, x, off, i)
                (col_m, hm) = arm_target(idx, x, noff, i)
                second, first = line_weights(hm, hp)
                for key, w in ((f"h{k}{k}", second), (f"g{k}", first)):
                    add(key, i, col_m, w[0])
                    add(key, i, ("I", i), w[1])
                    add(key, i, col_p, w[2])
            for k, l in combinations(range(d), 2):
                key = f"h{k}{l}"
                for sign in (1.0, -1.0):
                    off = tuple(
                        1 if a == k else (int(sign) if a == l else 0)
                        for a in range(d)
                    )
                    noff = tuple(-o for o in off)
                    (col_p, hp) = arm_target(idx, x, off, i)
                    (col_m, hm) = arm_target(idx, x, noff, i)
                    second, _ = line_weights(hm, hp)
                    for col, w in ((col_m, second[0]), (("I", i), second[1]),
                                   (col_p, second[2])):
                        add(key, i, col, 0.5 * sign * w)

        self.n_boundary = len(boundary_coords)
        self.boundary = np.asarray(boundary_coords).reshape(self.n_boundary, d)
        self.adjacent = adjacent
        ni, nb = self.n_interior, self.n_boundary
        self.ops = {}
        self.bops = {}
        for key in keys:
            self.ops[key] = sp.coo_matrix(
                (vals[key], (rows[key], cols[key])), shape=(ni, ni)
            ).tocsr()
            self.bops[key] = sp.coo_matrix(
                (bvals[key], (brows[key], bcols[key])), shape=(ni, nb)
            ).tocsr()

    # -- evaluation --------------------------------------------------------

    def locals_of(self, u_int: np.ndarray, bvals: np.ndarray) -> dict:
        return {
            key: self.ops[key] @ u_int + self.bops[key] @ bvals
            for key in self.local_keys
        }

    def hessians(self, loc: dict) -> np.ndarray:
        d = self.dim
        h = np.empty((self.n_interior, d, d))
        for k in range(d):
            for l in range(k, d):
                h[:, k, l] = loc[f"h{k}{l}"]
                h[:, l, k] = loc[f"h{k}{l}"]
        return h

    def gradients(self, loc: dict) -> np.ndarray:
        return np.stack([loc[f"g{k}"] for k in range(self.dim)], axis=1)


class ScalarField:
    """Nodal scalar field: interior values plus the Dirichlet boundary trace."""

    def __init__(self, grid: DomainGrid, interior, boundary):
        interior = np.asarray(interior, dtype=float)
        boundary = np.asarray(boundary, dtype=float)
        if interior.shape != (grid.n_interior,):
            raise ValueError("interior values have the wrong length")
        if boundary.shape != (grid.n_boundary,):
            raise ValueError("boundary values have the wrong length")
        self.grid = grid
        self.interior = interior
        self.boundary = boundary

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.interior), fn(grid.boundary))

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.n_interior), np.zeros(grid.n_boundary))

    def locals_of(self):
        return self.grid.locals_of(self.interior, self.boundary)

    def with_interior(self, interior):
        return ScalarField(self.grid, interior, self.boundary)


class HessianRHS:
    """Right-hand side f(x, u, Du) > 0 with partial derivatives.

    ``value`` is vectorized over points (rows of x); the partials default to
    central finite differences, which is all the Jacobian needs.
    """

    def value(self, x, u, du):
        raise NotImplementedError

    def d_u(self, x, u, du, step=1e-6):
        return (self.value(x, u + step, du) - self.value(x, u - step, du)) / (2 * step)

    def d_du(self, x, u, du, step=1e-6):
        out = np.empty_like(du)
        for k in range(du.shape[1]):
            e = np.zeros(du.shape[1])
            e[k] = step
            out[:, k] = (
                self.value(x, u, du + e) - self.value(x, u, du - e)
            ) / (2 * step)
        return out


class _ConstantRHS(HessianRHS):
    def __init__(self, c: float):
        if c <= 0:
            raise ValueError("f must be positive")
        self.c = float(c)

    def value(self, x, u, du):
        return np.full(np.asarray(x).shape[0], self.c)

    def d_u(self, x, u, du, step=1e-6):
        return np.zeros(np.asarray(x).shape[0])

    def d_du(self, x, u, du, step=1e-6):
        return np.zeros_like(du)


def constant_rhs(c: float) -> HessianRHS:
    return _ConstantRHS(c)


class _CallableRHS(HessianRHS):
    def __init__(self, fn):
        self.fn = fn

    def value(self, x, u, du):
        return self.fn(x, u, du)


def callable_rhs(fn) -> HessianRHS:
    return _CallableRHS(fn)


@dataclass
class DirichletReport:
    converged: bool
    reason: str
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    final_residual: float = math.nan
    min_margin: float = math.nan
    sup_eigenvalue: float = math.nan
    monitor_beta: float = math.nan
    monitor_value: float = math.nan
    hessian_sup_interior: float = math.nan
    hessian_sup_adjacent: float = math.nan
    hessian_ratio: float = math.nan
    boundary_margin: float = math.nan
    initial_bump: float = math.nan

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "reason": self.reason,
            "residual_history": [float(v) for v in self.residual_history],
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "min_margin": float(self.min_margin),
            "sup_eigenvalue": float(self.sup_eigenvalue),
            "monitor_beta": float(self.monitor_beta),
            "monitor_value": float(self.monitor_value),
            "hessian_sup_interior": float(self.hessian_sup_interior),
            "hessian_sup_adjacent": float(self.hessian_sup_adjacent),
            "hessian_ratio": float(self.hessian_ratio),
            "boundary_margin": float(self.boundary_margin),
            "initial_bump": float(self.initial_bump),
        }


def _hess_eigensystem(h: np.ndarray):
    """Descending eigenvalues and eigenvectors of a batch of sym matrices."""
    d = h.shape[-1]
    if d == 2:
        lam1 = 0.5 * (h[:, 0, 0] + h[:, 1, 1])
        rad = np.sqrt(0.25 * (h[:, 0, 0] - h[:, 1, 1]) ** 2 + h[:, 0, 1] ** 2)
        lam = np.stack([lam1 + rad, lam1 - rad], axis=1)
        vecs = _sym2_eigvecs(h)
        return lam, vecs
    lam, vecs = np.linalg.eigh(h)
    return lam[:, ::-1], vecs[:, :, ::-1]


class _DirichletProblem:
    def __init__(self, grid: DomainGrid, v: ScalarField, rhs: HessianRHS, p: int):
        self.grid = grid
        self.v = v
        self.rhs = rhs
        self.p = p
        self.count = math.comb(grid.dim, p)

    def split(self, u_int):
        loc = self.grid.locals_of(u_int, self.v.boundary)
        hess = self.grid.hessians(loc)
        grad = self.grid.gradients(loc)
        lam, vecs = _hess_eigensystem(hess)
        return loc, hess, grad, lam, vecs

    def residual(self, u_int):
        loc, hess, grad, lam, vecs = self.split(u_int)
        margin = spectral.batch_margin(lam, self.p)
        if margin.min() <= 0.0:
            i = int(np.argmin(margin))
            raise spectral.ConeViolationError(
                f"Hessian leaves the cone at interior node {i}, "
                f"x={self.grid.interior[i]}, margin {margin.min():.3e}"
            )
        fval = self.rhs.value(self.grid.interior, loc["u"], grad)
        if (fval <= 0.0).any():
            i = int(np.argmin(fval))
            raise ValueError(f"f is nonpositive at interior node {i}")
        tf, _ = spectral.batch_value_grad(lam, self.p)
        res = tf - fval ** (1.0 / self.count)
        return res, (loc, grad, lam, vecs, margin, fval)

    def probe(self, u_int):
        try:
            return self.residual(u_int)
        except (ValueError, np.linalg.LinAlgError):
            return None

    def margin_of(self, u_int):
        loc = self.grid.locals_of(u_int, self.v.boundary)
        lam, _ = _hess_eigensystem(self.grid.hessians(loc))
        return float(spectral.batch_margin(lam, self.p).min())

    def jacobian(self, u_int, aux):
        loc, grad, lam, vecs, margin, fval = aux
        tf, gr = spectral.batch_value_grad(lam, self.p)
        # dFt/dH = sum_k grad_k y_k y_k^T
        dft = np.einsum("nk,nik,njk->nij", gr, vecs, vecs)
        chain = fval ** (1.0 / self.count) / (self.count * fval)
        du_f = chain * self.rhs.d_u(self.grid.interior, loc["u"], grad)
        ddu_f = chain[:, None] * self.rhs.d_du(self.grid.interior, loc["u"], grad)
        d = self.grid.dim
        jac = sp.diags(-du_f) @ self.grid.ops["u"]
        for k in range(d):
            jac = jac + sp.diags(-ddu_f[:, k]) @ self.grid.ops[f"g{k}"]
            for l in range(k, d):
                coeff = dft[:, k, l] if k == l else 2.0 * dft[:, k, l]
                jac = jac + sp.diags(coeff) @ self.grid.ops[f"h{k}{l}"]
        return jac.tocsc()

    def jacobian_fd(self, u_int, step=1e-6):
        n = u_int.size
        cols = np.empty((n, n))
        for j in range(n):
            up, um = u_int.copy(), u_int.copy()
            up[j] += step
            um[j] -= step
            rp, _ = self.residual(up)
            rm, _ = self.residual(um)
            cols[:, j] = (rp - rm) / (2 * step)
        return sp.csc_matrix(cols)


def residual_dirichlet(u: ScalarField, v: ScalarField, rhs: HessianRHS,
                       p: int) -> np.ndarray:
    """Per-interior-node residual; u must carry v's boundary trace."""
    if np.abs(u.boundary - v.boundary).max() > 1e-12:
        raise ValueError("u must equal v on the boundary nodes")
    res, _ = _DirichletProblem(u.grid, v, rhs, p).residual(u.interior)
    return res


def boundary_data_margin(v: ScalarField, p: int) -> float:
    """Min cone margin of the discrete Hessian of the boundary data."""
    loc = v.locals_of()
    lam, _ = _hess_eigensystem(v.grid.hessians(loc))
    return float(spectral.batch_margin(lam, p).min())


def solve_dirichlet(v: ScalarField, rhs: HessianRHS, p: int,
                    config: NewtonConfig | None = None):
    """Cone-safeguarded damped Newton solve of the Dirichlet problem.

    The initial iterate is v plus a small multiple of |x|^2 - R^2 chosen by
    halving until the discrete Hessian enters the open cone; if v itself
    already solves the equation the solve returns immediately.
    """
    config = config or NewtonConfig()
    grid = v.grid
    problem = _DirichletProblem(grid, v, rhs, p)
    report = DirichletReport(converged=False, reason="")
    report.boundary_margin = boundary_data_margin(v, p)
    if report.boundary_margin < -1e-8:
        raise spectral.ConeViolationError(
            f"boundary data is not p-plurisubharmonic on the grid "
            f"(margin {report.boundary_margin:.3e})"
        )

    start = problem.probe(v.interior)
    if start is not None and float(np.abs(start[0]).max()) <= config.tol:
        u_int, res, aux = v.interior.copy(), start[0], start[1]
        report.converged = True
        report.reason = "boundary data already solves the equation"
        report.residual_history = [float(np.abs(res).max())]
        report.initial_bump = 0.0
        _dirichlet_diagnostics(report, problem, u_int, res)
        return ScalarField(grid, u_int, v.boundary), report

    rsq = float((grid.boundary**2).sum(axis=1).max())
    bump = (grid.interior**2).sum(axis=1) - rsq
    s = 1.0
    u_int = None
    for _ in range(60):
        trial = v.interior + s * bump
        if problem.probe(trial) is not None:
            u_int = trial
            break
        s *= 0.5
    if u_int is None:
        raise spectral.ConeViolationError(
            "no admissible initial iterate found: the convex bump never "
            "brings the discrete Hessian into the open cone"
        )
    report.initial_bump = s

    res, aux = problem.residual(u_int)
    norm = float(np.abs(res).max())
    report.residual_history = [norm]
    margin = aux[4]
    for _ in range(config.max_iter):
        if norm <= config.tol:
            break
        if config.jacobian == "fd":
            jac = problem.jacobian_fd(u_int, config.fd_step)
        else:
            jac = problem.jacobian(u_int, aux)
        step = spla.spsolve(jac, -res)
        s_damp = 1.0
        accepted = False
        floor = config.margin_shrink * float(margin.min())
        while s_damp >= config.damping_min:
            trial = u_int + s_damp * step
            probe = problem.probe(trial)
            if probe is not None:
                t_res, t_aux = probe
                t_norm = float(np.abs(t_res).max())
                if float(t_aux[4].min()) >= floor and (
                    t_norm <= config.tol or t_norm < norm
                ):
                    u_int, res, aux, norm = trial, t_res, t_aux, t_norm
                    margin = t_aux[4]
                    accepted = True
                    break
            s_damp *= 0.5
        if not accepted:
            report.reason = (
                "line search exhausted at minimal damping (cone or descent)"
            )
            break
        report.iterations += 1
        report.residual_history.append(norm)
    if norm <= config.tol:
        report.converged = True
        report.reason = "converged"
    elif not report.reason:
        report.reason = "max_iter exceeded"
    _dirichlet_diagnostics(report, problem, u_int, res)
    return ScalarField(grid, u_int, v.boundary), report


def _dirichlet_diagnostics(report, problem, u_int, res):
    grid = problem.grid
    loc = grid.locals_of(u_int, problem.v.boundary)
    hess = grid.hessians(loc)
    lam, _ = _hess_eigensystem(hess)
    report.final_residual = float(np.abs(res).max())
    report.min_margin = float(spectral.batch_margin(lam, problem.p).min())
    report.sup_eigenvalue = float(np.abs(lam).max())
    norms = np.abs(hess).max(axis=(1, 2))
    report.hessian_sup_interior = float(norms.max())
    if grid.adjacent.any():
        report.hessian_sup_adjacent = float(norms[grid.adjacent].max())
        report.hessian_ratio = report.hessian_sup_interior / report.hessian_sup_adjacent
    u_field = ScalarField(grid, u_int, problem.v.boundary)
    try:
        report.monitor_beta = 2.0
        report.monitor_value = interior_monitor(u_field, problem.v, beta=2.0)
    except ValueError:
        report.monitor_value = math.nan


def interior_monitor(u: ScalarField, v: ScalarField, beta: float) -> float:
    """max over interior nodes of (v - u)^beta * Laplacian(u).

    Requires u < v in the interior (pointwise equality within 1e-12 is
    tolerated); rejects u identical to v, for which the quantity is vacuous.
    """
    grid = u.grid
    gap = v.interior - u.interior
    if (gap < -1e-12).any():
        raise ValueError("monitor undefined: u exceeds v at an interior node")
    if np.abs(gap).max() <= 1e-12:
        raise ValueError("monitor vacuous: u coincides with v")
    loc = u.locals_of()
    lap = sum(loc[f"h{k}{k}"] for k in range(grid.dim))
    weight = np.power(np.maximum(gap, 0.0), beta)
    return float((weight * lap).max())


@dataclass
class C2Report:
    sup_interior: float
    sup_adjacent: float
    ratio: float

    def to_dict(self):
        return {
            "sup_interior": float(self.sup_interior),
            "sup_adjacent": float(self.sup_adjacent),
            "ratio": float(self.ratio),
        }


def global_c2_report(u: ScalarField) -> C2Report:
    """Interior vs boundary-adjacent sup of the discrete Hessian max-norm."""
    grid = u.grid
    hess = grid.hessians(u.locals_of())
    norms = np.abs(hess).max(axis=(1, 2))
    sup_all = float(norms.max())
    sup_adj = float(norms[grid.adjacent].max()) if grid.adjacent.any() else math.nan
    return C2Report(sup_all, sup_adj, sup_all / sup_adj)
