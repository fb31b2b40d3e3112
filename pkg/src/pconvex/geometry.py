"""Star-shaped surfaces in R^3 as radial graphs over a lat-long grid on S^2.

A surface is X(x) = rho(x) x with rho > 0 on the unit sphere.  With an
orthonormal tangent frame on S^2 and w = grad rho, the classical formulas

    W   = sqrt(rho^2 + |w|^2)
    nu  = (rho x - w) / W                      (unit outer normal)
    g   = rho^2 I + w w^T                      (induced metric)
    h   = (rho^2 I + 2 w w^T - rho Hess rho) / W
    u   = rho^2 / W                            (support function <X, nu>)

give the principal curvatures as the eigenvalues of h relative to g, here
computed through the symmetric reduction g^{-1/2} h g^{-1/2}.

The grid has n_theta uniform interior colatitude rows, n_phi periodic
longitudes and a single unknown at each pole.  All six local quantities
(rho, the two frame components of grad rho, the three Hessian components)
are linear in the nodal vector; the maps are assembled once per grid as
sparse matrices and reused by the solver for residuals and Jacobians.
"""

from __future__ import annotations

import csv
import math

import numpy as np
import scipy.sparse as sp

from . import spectral

#: keys of the six local quantities, in the fixed order used everywhere
LOCAL_KEYS = ("rho", "w1", "w2", "h11", "h12", "h22")


class SphericalGrid:
    """Lat-long discretization of S^2 with polar cap unknowns.

    Node ordering: index 0 is the north pole, then the n_theta x n_phi
    interior nodes row-major (colatitude outer, longitude inner), and the
    south pole last.
    """

    def __init__(self, n_theta: int, n_phi: int):
        if n_theta < 8:
            raise ValueError("n_theta must be >= 8")
        if n_phi < 16 or n_phi % 2:
            raise ValueError("n_phi must be even and >= 16")
        self.n_theta = n_theta
        self.n_phi = n_phi
        self.dtheta = math.pi / (n_theta + 1)
        self.dphi = 2.0 * math.pi / n_phi
        self.theta = self.dtheta * np.arange(1, n_theta + 1)
        self.phi = self.dphi * np.arange(n_phi)
        self.n_nodes = n_theta * n_phi + 2
        self.north = 0
        self.south = self.n_nodes - 1

        theta_all = np.empty(self.n_nodes)
        phi_all = np.zeros(self.n_nodes)
        theta_all[self.north] = 0.0
        theta_all[self.south] = math.pi
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        theta_all[1:-1] = tt.ravel()
        phi_all[1:-1] = pp.ravel()
        self.theta_all = theta_all
        self.phi_all = phi_all

        st, ct = np.sin(theta_all), np.cos(theta_all)
        sq, cq = np.sin(phi_all), np.cos(phi_all)
        self.x = np.stack([st * cq, st * sq, ct], axis=1)
        # frame: e1 along increasing theta, e2 along increasing phi; at the
        # poles the fixed pair (ex, ey) in which the cap stencils are fit
        e1 = np.stack([ct * cq, ct * sq, -st], axis=1)
        e2 = np.stack([-sq, cq, np.zeros_like(sq)], axis=1)
        for pole in (self.north, self.south):
            e1[pole] = (1.0, 0.0, 0.0)
            e2[pole] = (0.0, 1.0, 0.0)
        self.e1 = e1
        self.e2 = e2
        self._local_ops = None

    def index(self, a: int, b: int) -> int:
        """Flat node index of interior row a (1-based, 1..n_theta), column b."""
        if not 1 <= a <= self.n_theta:
            raise ValueError("row out of range")
        return 1 + (a - 1) * self.n_phi + (b % self.n_phi)

    def _neighbor_up(self, a, b):
        return self.north if a == 1 else self.index(a - 1, b)

    def _neighbor_down(self, a, b):
        return self.south if a == self.n_theta else self.index(a + 1, b)

    def local_operators(self):
        """Sparse maps from the nodal vector to the six local quantities."""
        if self._local_ops is None:
            self._local_ops = self._build_local_operators()
        return self._local_ops

    def _build_local_operators(self):
        n = self.n_nodes
        rows = {k: [] for k in LOCAL_KEYS[1:]}
        cols = {k: [] for k in LOCAL_KEYS[1:]}
        vals = {k: [] for k in LOCAL_KEYS[1:]}

        def add(key, i, j, v):
            rows[key].append(i)
            cols[key].append(j)
            vals[key].append(v)

        dth, dph = self.dtheta, self.dphi
        for a in range(1, self.n_theta + 1):
            st = math.sin(self.theta[a - 1])
            ct = math.cos(self.theta[a - 1])
            for b in range(self.n_phi):
                i = self.index(a, b)
                up, dn = self._neighbor_up(a, b), self._neighbor_down(a, b)
                lf, rt = self.index(a, b - 1), self.index(a, b + 1)
                # first derivatives in the orthonormal frame
                add("w1", i, dn, 0.5 / dth)
                add("w1", i, up, -0.5 / dth)
                add("w2", i, rt, 0.5 / (dph * st))
                add("w2", i, lf, -0.5 / (dph * st))
                # theta-theta
                add("h11", i, dn, 1.0 / dth**2)
                add("h11", i, up, 1.0 / dth**2)
                add("h11", i, i, -2.0 / dth**2)
                # phi-phi with the connection term cot(theta) * d_theta
                add("h22", i, rt, 1.0 / (dph * st) ** 2)
                add("h22", i, lf, 1.0 / (dph * st) ** 2)
                add("h22", i, i, -2.0 / (dph * st) ** 2)
                add("h22", i, dn, 0.5 * ct / (st * dth))
                add("h22", i, up, -0.5 * ct / (st * dth))
                # mixed term with its connection correction
                cross = 0.25 / (dth * dph * st)
                for jj, sgn in (
                    (self._neighbor_down(a, b + 1), 1.0),
                    (self._neighbor_down(a, b - 1), -1.0),
                    (self._neighbor_up(a, b + 1), -1.0),
                    (self._neighbor_up(a, b - 1), 1.0),
                ):
                    add("h12", i, jj, sgn * cross)
                add("h12", i, rt, -0.5 * ct / (st**2 * dph))
                add("h12", i, lf, 0.5 * ct / (st**2 * dph))

        # polar caps: fit gradient and Hessian from symmetric differences
        # along the meridian great circles through the pole
        half = self.n_phi // 2
        for pole, row in ((self.north, 1), (self.south, self.n_theta)):
            for b in range(self.n_phi):
                jb = self.index(row, b)
                jo = self.index(row, b + half)
                cphi, sphi = math.cos(self.phi[b]), math.sin(self.phi[b])
                c2, s2 = math.cos(2 * self.phi[b]), math.sin(2 * self.phi[b])
                # directional derivative along (cos phi_b, sin phi_b)
                d = (2.0 / self.n_phi) * 0.5 / dth
                add("w1", pole, jb, cphi * d)
                add("w1", pole, jo, -cphi * d)
                add("w2", pole, jb, sphi * d)
                add("w2", pole, jo, -sphi * d)
                # second difference along the same direction; the Fourier
                # weights split it into the three Hessian components
                wp = 1.0 / self.n_phi
                wq = (2.0 / self.n_phi) * c2
                wr = (2.0 / self.n_phi) * s2
                for key, wgt in (("h11", wp + wq), ("h22", wp - wq), ("h12", wr)):
                    add(key, pole, jb, wgt / dth**2)
                    add(key, pole, jo, wgt / dth**2)
                    add(key, pole, pole, -2.0 * wgt / dth**2)

        ops = {"rho": sp.identity(n, format="csr")}
        for key in LOCAL_KEYS[1:]:
            ops[key] = sp.coo_matrix(
                (vals[key], (rows[key], cols[key])), shape=(n, n)
            ).tocsr()
        return ops


class RadialField:
    """Discretized radial function rho > 0 over a SphericalGrid."""

    def __init__(self, grid: SphericalGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_nodes,):
            raise ValueError("values must have one entry per grid node")
        if not (values > 0.0).all():
            raise ValueError("rho must be positive everywhere (star-shapedness)")
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid, c: float):
        return cls(grid, np.full(grid.n_nodes, float(c)))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.theta_all, grid.phi_all))

    @property
    def rho_north(self) -> float:
        return float(self.values[self.grid.north])

    @property
    def rho_south(self) -> float:
        return float(self.values[self.grid.south])

    def rho_grid(self) -> np.ndarray:
        """Interior values reshaped to (n_theta, n_phi)."""
        g = self.grid
        return self.values[1:-1].reshape(g.n_theta, g.n_phi)

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values)


def local_quantities(field: RadialField):
    """Per-node (rho, w, hess) with w shape (N, 2) and hess shape (N, 2, 2)."""
    ops = field.grid.local_operators()
    z = field.values
    rho = z
    w = np.stack([ops["w1"] @ z, ops["w2"] @ z], axis=1)
    h11, h12, h22 = ops["h11"] @ z, ops["h12"] @ z, ops["h22"] @ z
    hess = np.empty((z.size, 2, 2))
    hess[:, 0, 0] = h11
    hess[:, 0, 1] = h12
    hess[:, 1, 0] = h12
    hess[:, 1, 1] = h22
    return rho, w, hess


def sphere_derivatives(field: RadialField, node: int):
    """(grad rho, Hess rho) at one node, in the orthonormal frame."""
    rho, w, hess = local_quantities(field)
    return w[node], hess[node]


def _sym2_eigvals(m: np.ndarray):
    """Descending eigenvalues of a batch of symmetric 2x2 matrices."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    mid = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    return np.stack([mid + rad, mid - rad], axis=-1)


def _spd2_inv_sqrt(g: np.ndarray):
    """g^{-1/2} for a batch of SPD 2x2 matrices, by the closed 2x2 formula."""
    a, b, c = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    det = a * c - b * b
    if not (det > 0.0).all() or not (a > 0.0).all():
        raise np.linalg.LinAlgError("metric is not positive definite")
    s = np.sqrt(det)
    t = np.sqrt(a + c + 2.0 * s)
    out = np.empty_like(g)
    out[..., 0, 0] = (c + s) / (s * t)
    out[..., 0, 1] = -b / (s * t)
    out[..., 1, 0] = -b / (s * t)
    out[..., 1, 1] = (a + s) / (s * t)
    return out


class FrameFields:
    """Batched pointwise geometry of a radial field (one row per node)."""

    __slots__ = (
        "rho", "w", "hess", "position", "normal", "metric", "second_form",
        "speed", "support", "kappa", "metric_inv_sqrt",
    )

    def __init__(self, field: RadialField):
        grid = field.grid
        rho, w, hess = local_quantities(field)
        self.rho, self.w, self.hess = rho, w, hess
        self.speed = np.sqrt(rho**2 + (w**2).sum(axis=1))
        eye = np.eye(2)
        wwt = np.einsum("ni,nj->nij", w, w)
        self.metric = rho[:, None, None] ** 2 * eye + wwt
        numer = (
            rho[:, None, None] ** 2 * eye
            + 2.0 * wwt
            - rho[:, None, None] * hess
        )
        self.second_form = numer / self.speed[:, None, None]
        self.position = rho[:, None] * grid.x
        grad_vec = w[:, :1] * grid.e1 + w[:, 1:] * grid.e2
        self.normal = (rho[:, None] * grid.x - grad_vec) / self.speed[:, None]
        self.support = rho**2 / self.speed
        self.metric_inv_sqrt = _spd2_inv_sqrt(self.metric)
        m = self.metric_inv_sqrt @ self.second_form @ self.metric_inv_sqrt
        self.kappa = _sym2_eigvals(m)


class PointFrame:
    """Geometry of the surface at a single node."""

    def __init__(self, position, normal, metric, second_form, curvatures, support):
        self.position = position
        self.normal = normal
        self.metric = metric
        self.second_form = second_form
        self.curvatures = curvatures
        self.support = support


def point_frame(field: RadialField, node: int) -> PointFrame:
    ff = FrameFields(field)
    return PointFrame(
        ff.position[node],
        ff.normal[node],
        ff.metric[node],
        ff.second_form[node],
        spectral.EigenSpectrum.from_values(ff.kappa[node]),
        float(ff.support[node]),
    )


class CurvatureField:
    """Per-node curvature data of a radial field for a fixed p."""

    def __init__(self, field: RadialField, p: int):
        self.field = field
        self.p = p
        self.frames = FrameFields(field)
        self.kappa = self.frames.kappa
        self.margin = spectral.batch_margin(self.kappa, p)
        self.tilde = spectral.batch_value(self.kappa, p)
        self.support = self.frames.support

    @property
    def min_margin(self) -> float:
        return float(self.margin.min())

    @property
    def sup_kappa(self) -> float:
        return float(np.abs(self.kappa).max())

    @property
    def support_range(self):
        return float(self.support.min()), float(self.support.max())

    def worst_node(self) -> int:
        return int(np.argmin(self.margin))


def curvature_field(field: RadialField, p: int) -> CurvatureField:
    return CurvatureField(field, p)


def describe_node(grid: SphericalGrid, node: int) -> str:
    th = grid.theta_all[node]
    ph = grid.phi_all[node]
    if node == grid.north:
        return "north pole"
    if node == grid.south:
        return "south pole"
    return f"node {node} (theta={th:.4f}, phi={ph:.4f})"


def export_csv(field: RadialField, p: int, path):
    """Per-node scalar fields with the fixed header."""
    cf = curvature_field(field, p)
    grid = field.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["theta", "phi", "rho", "kappa1", "kappa2", "Ftilde", "u", "margin"]
        )
        for i in range(grid.n_nodes):
            writer.writerow(
                [
                    f"{grid.theta_all[i]:.12g}",
                    f"{grid.phi_all[i]:.12g}",
                    f"{field.values[i]:.12g}",
                    f"{cf.kappa[i, 0]:.12g}",
                    f"{cf.kappa[i, 1]:.12g}",
                    f"{cf.tilde[i]:.12g}",
                    f"{cf.support[i]:.12g}",
                    f"{cf.margin[i]:.12g}",
                ]
            )


def export_obj(field: RadialField, path):
    """Triangulated shell X = rho x as Wavefront OBJ, outward winding."""
    grid = field.grid
    pos = field.values[:, None] * grid.x
    faces = []
    nt, np_ = grid.n_theta, grid.n_phi
    for b in range(np_):
        bn = (b + 1) % np_
        faces.append((grid.north, grid.index(1, b), grid.index(1, bn)))
        faces.append((grid.south, grid.index(nt, bn), grid.index(nt, b)))
    for a in range(1, nt):
        for b in range(np_):
            bn = (b + 1) % np_
            i00 = grid.index(a, b)
            i01 = grid.index(a, bn)
            i10 = grid.index(a + 1, b)
            i11 = grid.index(a + 1, bn)
            faces.append((i00, i10, i11))
            faces.append((i00, i11, i01))
    with open(path, "w") as fh:
        fh.write("# star-shaped radial graph shell\n")
        for v in pos:
            fh.write(f"v {v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    return len(faces)
