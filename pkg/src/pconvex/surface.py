"""Prescribed-curvature solver for star-shaped surfaces.

Solves Ft(kappa(rho)) = f(X, nu)^(1/C) on the lat-long grid by damped Newton
iteration that never leaves the p-positivity cone, with homotopy continuation
from the unit sphere:

    f_t = t f + (1 - t) p^C [ |X|^(-C) + eps (|X|^(-C) - 1) ],   C = binom(n, p).

At t = 0 the unit sphere solves the equation exactly (also discretely, since
all stencils annihilate constants), and the eps term makes the linearization
nonsingular in the radial direction.  Two hypotheses on the data are checked
numerically: the sphere barrier inequalities at radii r1 < 1 < r2 and the
radial monotonicity of rho^C f along rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import spectral
from .geometry import (
    LOCAL_KEYS,
    FrameFields,
    RadialField,
    SphericalGrid,
    describe_node,
    local_quantities,
)

AMBIENT_N = 2  # surfaces in R^3: the curvature vector has two entries


# ---------------------------------------------------------------------------
# Prescribed data
# ---------------------------------------------------------------------------


class PrescribedData:
    """Positive right-hand side f(X, nu) with first derivatives.

    ``value`` is exact per subclass; ``grads`` defaults to central finite
    differences, which is all the Newton Jacobian needs.  The annulus radii
    (r1, r2) are the barrier radii the data claims for the C0 hypothesis.
    """

    kind = "custom"

    def __init__(self, n: int, p: int, r1: float, r2: float):
        if not 0.0 < r1 < 1.0 < r2:
            raise ValueError("annulus radii must satisfy 0 < r1 < 1 < r2")
        self.n = n
        self.p = p
        self.count = math.comb(n, p)
        self.r1 = r1
        self.r2 = r2

    def value(self, x, nu):
        raise NotImplementedError

    def grads(self, x, nu, step=1e-6):
        x = np.asarray(x, dtype=float)
        nu = np.asarray(nu, dtype=float)
        dx = np.empty_like(x)
        dn = np.empty_like(nu)
        for k in range(3):
            e = np.zeros(3)
            e[k] = step
            dx[..., k] = (self.value(x + e, nu) - self.value(x - e, nu)) / (2 * step)
            dn[..., k] = (self.value(x, nu + e) - self.value(x, nu - e)) / (2 * step)
        return dx, dn


class _RadialPower(PrescribedData):
    """f = p^C [ r^(-C) + eps (r^(-C) - 1) ], the sphere-barrier family."""

    kind = "radial_power"

    def __init__(self, n, p, eps=0.0, r1=0.5, r2=2.0):
        super().__init__(n, p, r1, r2)
        self.eps = float(eps)

    def value(self, x, nu):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        pc = float(self.p) ** self.count
        return pc * ((1.0 + self.eps) * r ** (-self.count) - self.eps)

    def grads(self, x, nu, step=1e-6):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        pc = float(self.p) ** self.count
        c = self.count
        radial = -c * pc * (1.0 + self.eps) * r ** (-c - 2)
        return radial * x, np.zeros_like(x)


class _PerturbedRadial(PrescribedData):
    """Angularly modulated data with decay steeper than the critical power.

    f = p^C (1 + delta <e, x/|x|>) (1 + delta_nu <e_nu, nu>) |x|^(-C-q)

    The extra decay q > 0 is what lets both barrier inequalities hold with
    strict margin; the monotonicity hypothesis holds strictly as well.
    """

    kind = "perturbed_radial"

    def __init__(self, n, p, delta=0.2, axis=(0.0, 0.0, 1.0), q=1.0,
                 delta_nu=0.0, nu_axis=(1.0, 0.0, 0.0), r1=None, r2=None):
        if not 0.0 <= delta < 1.0 or not 0.0 <= delta_nu < 1.0:
            raise ValueError("amplitudes must lie in [0, 1)")
        if q <= 0.0:
            raise ValueError("decay exponent q must be positive")
        lo = 0.99 * (1.0 - delta) * (1.0 - delta_nu)
        hi = 1.01 * (1.0 + delta) * (1.0 + delta_nu)
        r1 = lo ** (1.0 / q) if r1 is None else r1
        r2 = hi ** (1.0 / q) if r2 is None else r2
        super().__init__(n, p, r1, r2)
        self.delta = float(delta)
        self.delta_nu = float(delta_nu)
        self.q = float(q)
        self.axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
        self.nu_axis = np.asarray(nu_axis, dtype=float) / np.linalg.norm(nu_axis)

    def value(self, x, nu):
        x = np.asarray(x, dtype=float)
        nu = np.asarray(nu, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        ang = 1.0 + self.delta * (x @ self.axis) / r
        mod = 1.0 + self.delta_nu * (nu @ self.nu_axis)
        pc = float(self.p) ** self.count
        return pc * ang * mod * r ** (-self.count - self.q)


@dataclass
class AxisymmetricTarget:
    """Radial profile rho(theta) with its first two derivatives, vectorized."""

    rho: callable
    drho: callable
    d2rho: callable

    def curvatures(self, theta):
        """Principal curvatures of the revolved radial graph, descending."""
        theta = np.asarray(theta, dtype=float)
        r = self.rho(theta)
        r1 = self.drho(theta)
        r2 = self.d2rho(theta)
        w = np.sqrt(r**2 + r1**2)
        st = np.sin(theta)
        polar = st < 1e-8
        st_safe = np.where(polar, 1.0, st)
        k_mer = (r**2 + 2.0 * r1**2 - r * r2) / w**3
        k_par = np.where(
            polar,
            (r - r2) / r**2,
            (r - r1 * np.cos(theta) / st_safe) / (w * r),
        )
        both = np.stack([k_mer, k_par], axis=-1)
        return np.stack([both.max(axis=-1), both.min(axis=-1)], axis=-1)


class _Manufactured(PrescribedData):
    """Data whose exact solution is a given axisymmetric target surface.

    Along each ray, rho^C f equals the target value m(theta) times the
    decay factor (rho / rho*(theta))^(-decay).  Any decay >= 0 keeps the
    radial monotonicity hypothesis and makes f positive everywhere; decay
    large enough (chosen automatically from the target) also enforces both
    sphere-barrier inequalities, which the critical-power extension
    (decay = 0) cannot do for non-spherical targets.
    """

    kind = "manufactured"

    def __init__(self, n, p, target: AxisymmetricTarget, r1=0.8, r2=1.25,
                 decay=None, safety=0.02):
        super().__init__(n, p, r1, r2)
        self.target = target
        theta = np.linspace(0.0, math.pi, 4001)
        kap = target.curvatures(theta)
        tf = spectral.batch_value(kap, p)
        if np.isnan(tf).any() or (tf <= 0.0).any():
            raise ValueError("target surface leaves the open cone")
        rho_star = target.rho(theta)
        if rho_star.min() <= r1 or rho_star.max() >= r2:
            raise ValueError("target surface must lie strictly inside (r1, r2)")
        m = (tf * rho_star) ** self.count
        pc = float(p) ** self.count
        if decay is None:
            need_inner = np.max(
                np.log(pc * (1.0 + safety) / m) / np.log(rho_star / r1)
            )
            need_outer = np.max(
                np.log(m / (pc * (1.0 - safety))) / np.log(r2 / rho_star)
            )
            decay = max(0.0, float(need_inner), float(need_outer))
        self.decay = float(decay)
        if (m * (rho_star / r1) ** self.decay).min() < pc:
            raise ValueError("inner barrier inequality unreachable; increase decay")
        if (m * (rho_star / r2) ** self.decay).max() > pc:
            raise ValueError("outer barrier inequality unreachable; increase decay")

    def _angular(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        theta = np.arccos(np.clip(x[..., 2] / r, -1.0, 1.0))
        kap = self.target.curvatures(theta)
        tf = spectral.batch_value(kap, p=self.p)
        rho_star = self.target.rho(theta)
        return r, (tf * rho_star) ** self.count, rho_star

    def value(self, x, nu):
        r, m, rho_star = self._angular(x)
        return m * (rho_star / r) ** self.decay / r**self.count

    def solution_values(self, grid: SphericalGrid):
        return self.target.rho(grid.theta_all)


class _Blend(PrescribedData):
    """Homotopy blend t*target + (1-t)*base."""

    kind = "blend"

    def __init__(self, base: PrescribedData, target: PrescribedData, t: float):
        super().__init__(target.n, target.p, target.r1, target.r2)
        self.base = base
        self.target = target
        self.t = float(t)

    def value(self, x, nu):
        return self.t * self.target.value(x, nu) + (1.0 - self.t) * self.base.value(x, nu)

    def grads(self, x, nu, step=1e-6):
        bx, bn = self.base.grads(x, nu, step)
        tx, tn = self.target.grads(x, nu, step)
        return self.t * tx + (1.0 - self.t) * bx, self.t * tn + (1.0 - self.t) * bn


def radial_power(p, eps=0.0, r1=0.5, r2=2.0, n=AMBIENT_N):
    return _RadialPower(n, p, eps=eps, r1=r1, r2=r2)


def perturbed_radial(p, delta=0.2, q=1.0, n=AMBIENT_N, **kw):
    return _PerturbedRadial(n, p, delta=delta, q=q, **kw)


def manufactured_surface(p, target, n=AMBIENT_N, **kw):
    return _Manufactured(n, p, target, **kw)


def cosine_target(amplitude=0.1):
    """The standard test target rho* = 1 + amplitude * cos(theta)."""
    a = float(amplitude)
    return AxisymmetricTarget(
        rho=lambda th: 1.0 + a * np.cos(th),
        drho=lambda th: -a * np.sin(th),
        d2rho=lambda th: -a * np.cos(th),
    )


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    name: str
    passed: bool
    worst_slack: float
    detail: str
    n_samples: int

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_slack": float(self.worst_slack),
            "detail": self.detail,
            "n_samples": int(self.n_samples),
        }


def _fibonacci_sphere(m: int) -> np.ndarray:
    i = np.arange(m)
    z = 1.0 - 2.0 * (i + 0.5) / m
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    s = np.sqrt(1.0 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def check_barrier_conditions(data: PrescribedData, r1=None, r2=None,
                             n_samples=512) -> ConditionReport:
    """Sphere-barrier inequalities at |X| = r1 and |X| = r2 with nu = X/|X|."""
    r1 = data.r1 if r1 is None else r1
    r2 = data.r2 if r2 is None else r2
    dirs = _fibonacci_sphere(n_samples)
    pc = float(data.p) ** data.count
    tol = 1e-9 * pc
    inner = data.value(r1 * dirs, dirs) - pc / r1**data.count
    outer = pc / r2**data.count - data.value(r2 * dirs, dirs)
    slack_in = float(inner.min())
    slack_out = float(outer.min())
    worst = min(slack_in, slack_out)
    if worst >= -tol:
        detail = "both barrier inequalities hold"
        passed = True
    else:
        which = (
            f"lower barrier at |X|={r1:g} (need f >= p^C/r1^C)"
            if slack_in < slack_out
            else f"upper barrier at |X|={r2:g} (need f <= p^C/r2^C)"
        )
        detail = f"violated: {which}, worst slack {worst:.3e}"
        passed = False
    return ConditionReport("barrier", passed, worst, detail, n_samples)


def check_monotonicity_condition(data: PrescribedData, n_samples=64,
                                 seed=0) -> ConditionReport:
    """d/drho of rho^C f(rho xhat, nu) must be <= 0 along rays, nu fixed."""
    rng = np.random.default_rng(seed)
    c = data.count
    rr = np.linspace(data.r1 * 1.02, data.r2 * 0.98, 16)
    step = (data.r2 - data.r1) / 200.0
    worst = -math.inf
    scale = max(1.0, float(data.p) ** c)
    for k in range(n_samples):
        xhat = rng.normal(size=3)
        xhat /= np.linalg.norm(xhat)
        if k % 2 == 0:
            nu = xhat
        else:
            nu = rng.normal(size=3)
            nu /= np.linalg.norm(nu)
        x_plus = np.outer(rr + step, xhat)
        x_minus = np.outer(rr - step, xhat)
        m_plus = (rr + step) ** c * data.value(x_plus, nu)
        m_minus = (rr - step) ** c * data.value(x_minus, nu)
        worst = max(worst, float(((m_plus - m_minus) / (2 * step)).max()))
    passed = worst <= 1e-8 * scale
    detail = (
        "rho^C f is radially non-increasing"
        if passed
        else f"violated: d/drho(rho^C f) reaches {worst:.3e} > 0"
    )
    return ConditionReport("monotonicity", passed, worst, detail, n_samples)


# ---------------------------------------------------------------------------
# Newton solver
# ---------------------------------------------------------------------------


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 40
    damping_min: float = 2.0**-20
    jacobian: str = "analytic"  # or "fd"
    fd_step: float = 1e-6
    margin_shrink: float = 0.1


@dataclass
class HomotopySchedule:
    steps: int = 10
    eps: float | None = None
    t_values: tuple | None = None

    def resolve_t(self):
        if self.t_values is not None:
            ts = tuple(float(t) for t in self.t_values)
            if not ts or any(b <= a for a, b in zip((0.0,) + ts, ts)) or ts[-1] != 1.0:
                raise ValueError("t values must increase within (0, 1] and end at 1")
            return ts
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")
        return tuple(np.linspace(0.0, 1.0, self.steps + 1)[1:])


def select_eps(count: int, r2: float, c0: float = 1e-3,
               candidates=(0.1, 0.05, 0.01)) -> float:
    """Largest admissible eps keeping the homotopy base uniformly positive."""
    for eps in candidates:
        if (1.0 + eps) * r2 ** (-count) - eps >= c0:
            return eps
    raise ValueError(
        f"no eps in {candidates} keeps the base family >= {c0:g} up to r2={r2:g}"
    )


@dataclass
class SolveReport:
    converged: bool
    reason: str
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    homotopy_steps: int = 0
    bisections: int = 0
    final_residual: float = math.nan
    sup_kappa: float = math.nan
    min_margin: float = math.nan
    min_support: float = math.nan
    rho_min: float = math.nan
    rho_max: float = math.nan
    r1: float = math.nan
    r2: float = math.nan
    barrier_band: float = math.nan
    in_barrier_band: bool = False
    condition_checks: list = field(default_factory=list)

    def to_dict(self):
        d = {
            "converged": bool(self.converged),
            "reason": self.reason,
            "residual_history": [float(v) for v in self.residual_history],
            "iterations": int(self.iterations),
            "homotopy_steps": int(self.homotopy_steps),
            "bisections": int(self.bisections),
            "final_residual": float(self.final_residual),
            "sup_kappa": float(self.sup_kappa),
            "min_margin": float(self.min_margin),
            "min_support": float(self.min_support),
            "rho_min": float(self.rho_min),
            "rho_max": float(self.rho_max),
            "r1": float(self.r1),
            "r2": float(self.r2),
            "barrier_band": float(self.barrier_band),
            "in_barrier_band": bool(self.in_barrier_band),
            "condition_checks": [c.to_dict() if isinstance(c, ConditionReport) else c
                                 for c in self.condition_checks],
        }
        return d


class _SurfaceProblem:
    """Residual, diagnostics and Jacobian of the nodal system for fixed data."""

    def __init__(self, grid: SphericalGrid, data: PrescribedData, p: int):
        self.grid = grid
        self.data = data
        self.p = p
        self.count = math.comb(AMBIENT_N, p)

    def frames(self, z):
        return FrameFields(RadialField(self.grid, z))

    def residual(self, z):
        ff = self.frames(z)
        margin = spectral.batch_margin(ff.kappa, self.p)
        if margin.min() <= 0.0:
            node = int(np.argmin(margin))
            raise spectral.ConeViolationError(
                f"curvature leaves the cone at {describe_node(self.grid, node)}"
                f" (margin {margin.min():.3e})"
            )
        fval = self.data.value(ff.position, ff.normal)
        if (fval <= 0.0).any():
            node = int(np.argmin(fval))
            raise ValueError(
                f"prescribed f is nonpositive at {describe_node(self.grid, node)}"
            )
        tf, _ = spectral.batch_value_grad(ff.kappa, self.p)
        res = tf - fval ** (1.0 / self.count)
        return res, ff, margin

    def probe(self, z):
        """Non-raising evaluation for line searches."""
        if not (z > 0.0).all():
            return None
        try:
            res, ff, margin = self.residual(z)
        except (ValueError, np.linalg.LinAlgError):
            return None
        return res, ff, margin

    def jacobian(self, z, ff: FrameFields):
        if not hasattr(self, "_ops"):
            self._ops = self.grid.local_operators()
        rho, w, hess = ff.rho, ff.w, ff.hess
        n_nodes = rho.size
        speed = ff.speed
        eye = np.eye(2)
        kappa = ff.kappa
        tf, grad = spectral.batch_value_grad(kappa, self.p)

        # generalized eigenvectors v_k with v^T g v = 1
        gih = ff.metric_inv_sqrt
        m = gih @ ff.second_form @ gih
        y = _sym2_eigvecs(m)
        v = gih @ y  # columns are the generalized eigenvectors

        fval = self.data.value(ff.position, ff.normal)
        dxf, dnf = self.data.grads(ff.position, ff.normal)
        chain = fval ** (1.0 / self.count) / (self.count * fval)

        x_dir = self.grid.x
        frames = (self.grid.e1, self.grid.e2)
        w1, w2 = w[:, 0], w[:, 1]
        n_mat = (
            rho[:, None, None] ** 2 * eye
            + 2.0 * np.einsum("ni,nj->nij", w, w)
            - rho[:, None, None] * hess
        )
        h_mat = ff.second_form

        jac = None
        for key in LOCAL_KEYS:
            dw_speed = np.zeros(n_nodes)
            dg = np.zeros((n_nodes, 2, 2))
            dn_mat = np.zeros((n_nodes, 2, 2))
            dx_pos = np.zeros((n_nodes, 3))
            dv_vec = np.zeros((n_nodes, 3))
            if key == "rho":
                dw_speed = rho / speed
                dg[:, 0, 0] = dg[:, 1, 1] = 2.0 * rho
                dn_mat = 2.0 * rho[:, None, None] * eye - hess
                dx_pos = x_dir
                dv_vec = x_dir
            elif key in ("w1", "w2"):
                i = 0 if key == "w1" else 1
                wi = w[:, i]
                dw_speed = wi / speed
                dg[:, i, i] = 2.0 * wi
                dg[:, 0, 1] = dg[:, 1, 0] = w2 if i == 0 else w1
                dn_mat[:, i, i] = 4.0 * wi
                dn_mat[:, 0, 1] = dn_mat[:, 1, 0] = 2.0 * (w2 if i == 0 else w1)
                dv_vec = -frames[i]
            else:
                r, c = {"h11": (0, 0), "h12": (0, 1), "h22": (1, 1)}[key]
                dn_mat[:, r, c] = -rho
                dn_mat[:, c, r] = -rho
            dh = (dn_mat - h_mat * dw_speed[:, None, None]) / speed[:, None, None]
            # dkappa_k = v_k^T (dh - kappa_k dg) v_k, summed against the gradient
            dk = np.einsum("nik,nij,njk->nk", v, dh, v) - kappa * np.einsum(
                "nik,nij,njk->nk", v, dg, v
            )
            d_tf = (grad * dk).sum(axis=1)
            dnu = (dv_vec - ff.normal * dw_speed[:, None]) / speed[:, None]
            d_ft = chain * ((dxf * dx_pos).sum(axis=1) + (dnf * dnu).sum(axis=1))
            contrib = sp.diags(d_tf - d_ft) @ self._ops[key]
            jac = contrib if jac is None else jac + contrib
        return jac.tocsc()

    def jacobian_fd(self, z, step=1e-6):
        base, _, _ = self.residual(z)
        n = z.size
        cols = np.empty((n, n))
        for j in range(n):
            zp = z.copy()
            zm = z.copy()
            zp[j] += step
            zm[j] -= step
            rp, _, _ = self.residual(zp)
            rm, _, _ = self.residual(zm)
            cols[:, j] = (rp - rm) / (2 * step)
        return sp.csc_matrix(cols)


def _sym2_eigvecs(m: np.ndarray) -> np.ndarray:
    """Orthonormal eigenvector matrices (descending order) of sym 2x2 batch."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    lam1 = 0.5 * (a + c) + rad
    u1 = np.stack([b, lam1 - a], axis=-1)
    u2 = np.stack([lam1 - c, b], axis=-1)
    n1 = np.linalg.norm(u1, axis=-1)
    n2 = np.linalg.norm(u2, axis=-1)
    pick2 = n2 >= n1
    u = np.where(pick2[..., None], u2, u1)
    norm = np.where(pick2, n2, n1)
    tiny = norm < 1e-300
    u = np.where(tiny[..., None], np.array([1.0, 0.0]), u / np.where(tiny, 1.0, norm)[..., None])
    out = np.empty(m.shape)
    out[..., :, 0] = u
    out[..., 0, 1] = -u[..., 1]
    out[..., 1, 1] = u[..., 0]
    return out


def _diagnostics(report: SolveReport, problem: _SurfaceProblem, z, res):
    ff = problem.frames(z)
    margin = spectral.batch_margin(ff.kappa, problem.p)
    grid = problem.grid
    delta = max(grid.dtheta, grid.dphi)
    report.final_residual = float(np.abs(res).max())
    report.sup_kappa = float(np.abs(ff.kappa).max())
    report.min_margin = float(margin.min())
    report.min_support = float(ff.support.min())
    report.rho_min = float(z.min())
    report.rho_max = float(z.max())
    report.r1 = problem.data.r1
    report.r2 = problem.data.r2
    report.barrier_band = 2.0 * delta
    report.in_barrier_band = bool(
        z.min() >= problem.data.r1 - 2.0 * delta
        and z.max() <= problem.data.r2 + 2.0 * delta
    )


def newton_solve(initial: RadialField, data: PrescribedData, p: int,
                 config: NewtonConfig | None = None):
    """Damped Newton iteration on the stacked nodal residual.

    The line search halves the step until the trial iterate keeps every node
    inside the cone with at least ``margin_shrink`` of the current margin and
    strictly reduces the residual max-norm.  The initial field must already
    be strictly inside the cone.
    """
    config = config or NewtonConfig()
    problem = _SurfaceProblem(initial.grid, data, p)
    z = initial.values.copy()
    res, ff, margin = problem.residual(z)  # raises if the start is invalid
    norm = float(np.abs(res).max())
    report = SolveReport(converged=False, reason="", residual_history=[norm])
    for it in range(config.max_iter):
        if norm <= config.tol:
            report.converged = True
            report.reason = "converged"
            break
        if config.jacobian == "fd":
            jac = problem.jacobian_fd(z, config.fd_step)
        else:
            jac = problem.jacobian(z, ff)
        try:
            step = spla.spsolve(jac, -res)
        except RuntimeError:
            report.reason = "linear solve failed"
            break
        s = 1.0
        accepted = False
        floor = config.margin_shrink * float(margin.min())
        while s >= config.damping_min:
            trial = z + s * step
            probe = problem.probe(trial)
            if probe is not None:
                t_res, t_ff, t_margin = probe
                t_norm = float(np.abs(t_res).max())
                if float(t_margin.min()) >= floor and (
                    t_norm <= config.tol or t_norm < norm
                ):
                    z, res, ff, margin, norm = trial, t_res, t_ff, t_margin, t_norm
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            report.reason = (
                "line search exhausted at minimal damping (cone or descent)"
            )
            break
        report.iterations += 1
        report.residual_history.append(norm)
    else:
        report.reason = "max_iter exceeded"
    if norm <= config.tol:
        report.converged = True
        report.reason = "converged"
    _diagnostics(report, problem, z, res)
    return RadialField(initial.grid, z), report


def homotopy_solve(grid: SphericalGrid, data: PrescribedData, p: int,
                   schedule: HomotopySchedule | None = None,
                   config: NewtonConfig | None = None,
                   max_bisections: int = 10):
    """Continuation from the unit sphere at t = 0 to the target data at t = 1.

    The prescribed data must pass both hypothesis checks; their reports are
    embedded in the returned SolveReport either way.  Failed Newton steps
    bisect the continuation parameter up to ``max_bisections`` times.
    """
    schedule = schedule or HomotopySchedule()
    config = config or NewtonConfig()
    checks = [check_barrier_conditions(data), check_monotonicity_condition(data)]
    report = SolveReport(converged=False, reason="", condition_checks=checks)
    field_now = RadialField.constant(grid, 1.0)
    if not all(c.passed for c in checks):
        bad = "; ".join(c.detail for c in checks if not c.passed)
        report.reason = f"hypothesis check failed: {bad}"
        _diagnostics(report, _SurfaceProblem(grid, data, p), field_now.values,
                     np.full(grid.n_nodes, math.nan))
        return field_now, report

    count = math.comb(AMBIENT_N, p)
    eps = schedule.eps if schedule.eps is not None else select_eps(count, data.r2)
    if (1.0 + eps) * data.r2 ** (-count) - eps < 1e-3:
        raise ValueError("homotopy eps violates the positivity constraint c0")
    base = radial_power(p, eps=eps, r1=data.r1, r2=data.r2)

    targets = list(schedule.resolve_t())
    t_now = 0.0
    bisections = 0
    total_iters = 0
    history = []
    last_report = None
    while targets:
        t_try = targets[0]
        blend = _Blend(base, data, t_try)
        field_try, rep = newton_solve(field_now, blend, p, config)
        history.extend(rep.residual_history)
        total_iters += rep.iterations
        if rep.converged:
            field_now, t_now = field_try, t_try
            targets.pop(0)
            report.homotopy_steps += 1
            last_report = rep
        else:
            if bisections >= max_bisections:
                report.reason = (
                    f"continuation stalled at t={t_now:.6g} after "
                    f"{max_bisections} bisections ({rep.reason})"
                )
                report.bisections = bisections
                report.residual_history = history
                report.iterations = total_iters
                _diagnostics(report, _SurfaceProblem(grid, blend, p),
                             field_now.values, np.full(grid.n_nodes, math.nan))
                return field_now, report
            bisections += 1
            targets.insert(0, 0.5 * (t_now + t_try))
    report.converged = True
    report.reason = "converged"
    report.bisections = bisections
    report.iterations = total_iters
    report.residual_history = history
    problem = _SurfaceProblem(grid, data, p)
    res, _, _ = problem.residual(field_now.values)
    _diagnostics(report, problem, field_now.values, res)
    return field_now, report


def residual(field: RadialField, data: PrescribedData, p: int) -> np.ndarray:
    """Per-node residual Ft(kappa) - f^(1/C); raises outside the cone."""
    res, _, _ = _SurfaceProblem(field.grid, data, p).residual(field.values)
    return res
