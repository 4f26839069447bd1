"""Finite elements on the sphere: a mirror-symmetric log-polar mesh, cotangent
stiffness, lumped mass, Gaussian field models and support projections.

Triangles live in one of three conformal charts: the cylinder coordinate
``w = log z`` for the body of the mesh, ``z`` for the cap at 0 and
``zeta = 1/z`` for the cap at infinity.  The Dirichlet form is conformally
invariant, so each triangle may use its own chart; because the body is
built in ``w`` where the reflection is the isometry ``t -> -t``, the
stiffness matrix is exactly invariant under the mirror permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import io as spio
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .geometry import ConformalMetric, ScaledMetric

CHART_W, CHART_Z, CHART_ZETA = 0, 1, 2


@dataclass(frozen=True)
class SphereMesh:
    """Log-polar triangulation of the sphere with pole caps.

    Vertex 0 is ``z = 0``, the last vertex is ``z = infinity`` and vertex
    ``1 + r*n + j`` sits at ``exp(t[r] + 2 pi i j/n)``.
    """

    n_angle: int
    t: np.ndarray
    triangles: np.ndarray
    chart: np.ndarray
    d: float

    @property
    def n_rings(self) -> int:
        return len(self.t)

    @property
    def n_vertices(self) -> int:
        return 2 + self.n_rings * self.n_angle

    @property
    def infinity(self) -> int:
        return self.n_vertices - 1

    def vertex(self, ring: int, j: int) -> int:
        return 1 + ring * self.n_angle + (j % self.n_angle)

    @cached_property
    def ring_of(self) -> np.ndarray:
        """Ring index per vertex (-1 for the vertex at 0, n_rings for infinity)."""
        out = np.empty(self.n_vertices, dtype=int)
        out[0] = -1
        out[-1] = self.n_rings
        out[1:-1] = np.repeat(np.arange(self.n_rings), self.n_angle)
        return out

    @cached_property
    def log_radius(self) -> np.ndarray:
        """``t = log|z|`` per vertex, with -inf/+inf at the poles."""
        out = np.empty(self.n_vertices)
        out[0], out[-1] = -np.inf, np.inf
        out[1:-1] = np.repeat(self.t, self.n_angle)
        return out

    @cached_property
    def angle_index(self) -> np.ndarray:
        out = np.zeros(self.n_vertices, dtype=int)
        out[1:-1] = np.tile(np.arange(self.n_angle), self.n_rings)
        return out

    @cached_property
    def z(self) -> np.ndarray:
        """Vertex positions in the z chart (``inf`` for the last vertex)."""
        ang = 2 * np.pi * np.arange(self.n_angle) / self.n_angle
        body = np.exp(self.t)[:, None] * np.exp(1j * ang)[None, :]
        return np.concatenate([[0j], body.ravel(), [complex(np.inf)]])

    @cached_property
    def mirror(self) -> np.ndarray:
        """Permutation implementing the radial reflection on vertices."""
        perm = np.empty(self.n_vertices, dtype=int)
        perm[0], perm[-1] = self.n_vertices - 1, 0
        rings = self.ring_of[1:-1]
        perm[1:-1] = 1 + (self.n_rings - 1 - rings) * self.n_angle + self.angle_index[1:-1]
        return perm

    @cached_property
    def edges(self) -> np.ndarray:
        tri = self.triangles
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return int(self.n_vertices - len(self.edges) + len(self.triangles))

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        n = self.n_vertices
        a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    def ring_index(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > tol:
            raise ValueError(f"no vertex ring at log|z| = {t}")
        return k

    def chart_coordinates(self, k: int) -> np.ndarray:
        """Coordinates of triangle ``k`` in its own chart (3 complex numbers)."""
        return _triangle_coords(self, np.array([k]))[0]

    def to_text(self) -> str:
        lines = [f"# sphere mesh n_angle={self.n_angle} d={self.d!r}",
                 f"rings {self.n_rings}"]
        lines += [repr(float(v)) for v in self.t]
        lines.append(f"triangles {len(self.triangles)}")
        lines += [f"{a} {b} {c} {ch}" for (a, b, c), ch in zip(self.triangles, self.chart)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SphereMesh":
        rows = [r for r in text.splitlines() if r.strip()]
        head = dict(tok.split("=", 1) for tok in rows[0].split() if "=" in tok)
        n_angle = int(head["n_angle"])
        d = float(head["d"])
        nr = int(rows[1].split()[1])
        t = np.array([float(v) for v in rows[2:2 + nr]])
        nt = int(rows[2 + nr].split()[1])
        data = np.array([[int(x) for x in r.split()] for r in rows[3 + nr:3 + nr + nt]], dtype=int)
        return cls(n_angle, t, data[:, :3], data[:, 3], d)


def _ring_positions(n_angle: int, d: float, t_max: float | None, uniform: bool) -> np.ndarray:
    da = 2 * np.pi / n_angle
    k = max(1, int(round(0.5 * d / da)))
    dt = 0.5 * d / k
    if t_max is None:
        t_max = max(3.5, 2 * d + 1.5)
    pos = [0.0]
    h = dt
    while pos[-1] < 2 * d - 1e-12:
        pos.append(pos[-1] + dt)
    pos[-1] = 2 * d
    while pos[-1] < t_max - 1e-12:
        if not uniform:
            h = min(h * 1.2, max(da, dt))
        pos.append(pos[-1] + h)
    pos = np.array(pos)
    return np.concatenate([-pos[:0:-1], pos])


def build_mesh(resolution: int, d: float, t_max: float | None = None,
               uniform: bool = False) -> SphereMesh:
    """Mirror-symmetric log-polar sphere mesh.

    ``resolution`` vertices per ring; rings at ``t = 0, +-d/2, +-d, +-2d``
    (so the circles ``|z| = 1, e^{d/2}, e^{d}`` are vertex rings), spacing
    ``d/2k`` near the equator and growing towards the caps unless
    ``uniform`` is set.
    """
    n = int(resolution)
    if n < 8:
        raise ValueError("mesh resolution must be at least 8")
    if not d > 0:
        raise ValueError("mesh needs d > 0")
    t = _ring_positions(n, float(d), t_max, uniform)
    R = len(t)
    V = 2 + R * n
    vid = lambda r, j: 1 + r * n + (j % n)  # noqa: E731
    tris, charts = [], []
    for j in range(n):
        tris.append((0, vid(0, j), vid(0, j + 1)))
        charts.append(CHART_Z)
    for r in range(R - 1):
        lower = t[r] + t[r + 1] < 0
        for j in range(n):
            A, B, C, D = vid(r, j), vid(r, j + 1), vid(r + 1, j), vid(r + 1, j + 1)
            if lower:
                tris += [(A, C, D), (A, D, B)]
            else:
                tris += [(A, C, B), (C, D, B)]
            charts += [CHART_W, CHART_W]
    for j in range(n):
        tris.append((V - 1, vid(R - 1, j + 1), vid(R - 1, j)))
        charts.append(CHART_ZETA)
    mesh = SphereMesh(n, t, np.array(tris, dtype=int), np.array(charts, dtype=int), float(d))
    area = _triangle_areas(mesh)
    if np.min(area) <= 1e-12:
        raise ValueError("mesh has degenerate triangles; increase resolution or reduce t_max")
    return mesh


def _triangle_coords(mesh: SphereMesh, ks: np.ndarray) -> np.ndarray:
    """Chart coordinates of the given triangles, with angles unwrapped."""
    n = mesh.n_angle
    tri = mesh.triangles[ks]
    ch = mesh.chart[ks]
    out = np.empty(tri.shape, dtype=complex)
    da = 2 * np.pi / n
    ring = mesh.ring_of[tri]
    jj = mesh.angle_index[tri].astype(float)
    # unwrap: a triangle touching j = 0 and j = n-1 uses j = n for the former
    spread = jj.max(axis=1, keepdims=True) - jj.min(axis=1, keepdims=True)
    jj = np.where((spread > 1) & (jj == 0), n, jj)
    tv = np.where((ring >= 0) & (ring < mesh.n_rings), mesh.t[np.clip(ring, 0, mesh.n_rings - 1)], 0.0)
    w = tv + 1j * da * jj
    out[ch == CHART_W] = w[ch == CHART_W]
    zc = np.where(ring < 0, 0j, np.exp(w))
    out[ch == CHART_Z] = zc[ch == CHART_Z]
    zeta = np.where(ring >= mesh.n_rings, 0j, np.exp(-w))
    out[ch == CHART_ZETA] = zeta[ch == CHART_ZETA]
    return out


def _triangle_areas(mesh: SphereMesh) -> np.ndarray:
    p = _triangle_coords(mesh, np.arange(len(mesh.triangles)))
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * np.abs((np.conj(e1) * e2).imag)


@dataclass
class FemOperators:
    """Stiffness ``L`` (metric independent) and lumped mass ``m`` for one metric."""

    mesh: SphereMesh
    metric: ConformalMetric
    L: sparse.csr_matrix
    m: np.ndarray
    negative_cot_fraction: float = 0.0

    @property
    def M(self) -> sparse.dia_matrix:
        return sparse.diags(self.m)

    @property
    def total_mass(self) -> float:
        return float(self.m.sum())


_STIFFNESS_CACHE: dict[int, tuple] = {}


def _stiffness(mesh: SphereMesh):
    key = id(mesh)
    hit = _STIFFNESS_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1], hit[2], hit[3]
    p = _triangle_coords(mesh, np.arange(len(mesh.triangles)))
    tri = mesh.triangles
    rows, cols, vals = [], [], []
    neg = 0
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        u, v = p[:, b] - p[:, a], p[:, c] - p[:, a]
        cross = np.abs((np.conj(u) * v).imag)
        dot = (np.conj(u) * v).real
        cot = dot / cross
        neg += int(np.sum(cot < -1e-12))
        w = 0.5 * cot  # weight of the edge opposite vertex a
        i, j = tri[:, b], tri[:, c]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    n = mesh.n_vertices
    L = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    L.sum_duplicates()
    L.sort_indices()
    area = 0.5 * np.abs(((np.conj(p[:, 1] - p[:, 0])) * (p[:, 2] - p[:, 0])).imag)
    # chart area share per vertex, weighted to the z chart (or zeta chart at infinity)
    share = np.zeros(n)
    for a in range(3):
        v = tri[:, a]
        jac = np.ones(len(tri))
        body = mesh.chart == CHART_W
        jac[body] = np.exp(2 * mesh.log_radius[v[body]])
        cap = (mesh.chart == CHART_ZETA) & (v != mesh.infinity)
        jac[cap] = np.exp(4 * mesh.log_radius[v[cap]])
        np.add.at(share, v, jac * area / 3.0)
    frac = neg / (3.0 * len(tri))
    _STIFFNESS_CACHE[key] = (mesh, L, share, frac)
    return L, share, frac


def vertex_log_density(metric: ConformalMetric, mesh: SphereMesh) -> np.ndarray:
    """Metric log density at the vertices (z chart; zeta chart at infinity)."""
    out = np.empty(mesh.n_vertices)
    out[:-1] = metric.log_density(mesh.z[:-1])
    out[-1] = metric.log_density_at_infinity()
    return out


def assemble(metric: ConformalMetric, mesh: SphereMesh, max_negative_fraction: float = 0.05) -> FemOperators:
    """Cotangent stiffness and lumped mass ``m_i = rho(v_i) * (chart area share)``."""
    L, share, frac = _stiffness(mesh)
    logrho = vertex_log_density(metric, mesh)
    m = np.exp(logrho) * share
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValueError(f"metric {metric.kind} is not positive and finite at every vertex")
    if frac > max_negative_fraction:
        raise ValueError(f"mesh quality: {frac:.1%} negative cotangent weights")
    return FemOperators(mesh, metric, L, m, frac)


# --------------------------------------------------------------------------
# Gaussian field models

class IndefiniteError(np.linalg.LinAlgError):
    pass


class GaussianFieldModel:
    """Centered Gaussian field with precision ``Q = L + diag(mass * m)``.

    ``mass`` is either ``mu`` or a per-vertex profile (``lambda * mu``).  The
    pairing with a test function ``f`` is ``phi(f) = (m f) . phi``; the
    package works with load vectors ``h = m f`` so that covariances are
    ``h1 . Q^-1 h2``.
    """

    def __init__(self, L, m, mass, ops: FemOperators | None = None, label: str = ""):
        self.L = sparse.csr_matrix(L)
        self.m = np.asarray(m, dtype=float)
        n = self.L.shape[0]
        mass = np.broadcast_to(np.asarray(mass, dtype=float), (n,)).copy()
        self.mass = mass
        self.ops = ops
        self.label = label
        self.Q = (self.L + sparse.diags(mass * self.m)).tocsc()
        self._lu = None
        self._dense = None
        self._sub = {}

    @classmethod
    def from_ops(cls, ops: FemOperators, mu, label: str = "") -> "GaussianFieldModel":
        return cls(ops.L, ops.m, mu, ops, label)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def mesh(self) -> SphereMesh | None:
        return None if self.ops is None else self.ops.mesh

    @property
    def mass_min(self) -> float:
        return float(self.mass.min())

    def _factor(self):
        if self._lu is None:
            if np.sum(self.mass * self.m) <= 0:
                raise IndefiniteError("precision needs a positive total mass")
            lu = spla.splu(self.Q, permc_spec="MMD_AT_PLUS_A",
                           options={"SymmetricMode": True}, diag_pivot_thresh=0.0)
            # symmetric pivoting: the pivots carry the inertia of Q
            if np.array_equal(lu.perm_r, lu.perm_c):
                if np.any(lu.U.diagonal() <= 0):
                    raise IndefiniteError("precision matrix is not positive definite")
            elif self.mass_min <= 0:
                raise IndefiniteError("cannot certify positivity of the precision matrix")
            self._lu = lu
        return self._lu

    def solve(self, H):
        """``Q^-1 H`` for a vector or a matrix of columns."""
        H = np.asarray(H)
        if np.iscomplexobj(H):
            return self.solve(H.real) + 1j * self.solve(H.imag)
        if self._dense is not None:
            return self._dense @ H
        return self._factor().solve(np.asarray(H, dtype=float))

    def cov(self, H1, H2=None):
        """Covariance matrix ``H1^T Q^-1 H2`` of the pairings."""
        H1 = np.asarray(H1)
        H2 = H1 if H2 is None else np.asarray(H2)
        return H1.T @ self.solve(H2)

    def covariance(self) -> np.ndarray:
        """Dense ``Sigma = Q^-1`` (symmetric factorization; cached)."""
        if self._dense is None:
            if self.n > 6000:
                raise MemoryError("dense covariance limited to about 5e3 vertices")
            try:
                c, low = sla.cho_factor(self.Q.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:
                raise IndefiniteError(f"precision matrix is not positive definite: {exc}") from exc
            inv = sla.cho_solve((c, low), np.eye(self.n))
            self._dense = 0.5 * (inv + inv.T)
        return self._dense

    def logdet(self) -> float:
        lu = self._factor()
        return float(np.sum(np.log(np.abs(lu.U.diagonal()))))

    def diag_cov(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        E = np.zeros((self.n, len(idx)))
        E[idx, np.arange(len(idx))] = 1.0
        return np.einsum("ij,ij->j", E, self.solve(E))

    def with_mass(self, mass, label: str = "") -> "GaussianFieldModel":
        return GaussianFieldModel(self.L, self.m, mass, self.ops, label)

    # support projections -------------------------------------------------
    def _complement_solver(self, A: np.ndarray):
        key = A.tobytes()
        hit = self._sub.get(key)
        if hit is None:
            mask = np.ones(self.n, dtype=bool)
            mask[A] = False
            B = np.flatnonzero(mask)
            QBB = self.Q[B][:, B].tocsc()
            QAB = self.Q[A][:, B].tocsr()
            lu = spla.splu(QBB, permc_spec="MMD_AT_PLUS_A") if len(B) else None
            hit = (B, QAB, lu)
            self._sub[key] = hit
        return hit

    def project(self, A, H):
        """Apply ``e_A`` (H^-1-orthogonal projection onto deltas in ``A``) to load vectors.

        Uses ``e_A h = h_A - Q_AB Q_BB^-1 h_B`` (conditional expectation of a
        Gaussian Markov field given its values on ``A``).
        """
        A = np.unique(np.asarray(A.indices if isinstance(A, NodeRegion) else A, dtype=int))
        H = np.asarray(H)
        if np.iscomplexobj(H):
            return self.project(A, H.real) + 1j * self.project(A, H.imag)
        vec = H.ndim == 1
        H2 = H[:, None] if vec else H
        B, QAB, lu = self._complement_solver(A)
        out = np.zeros_like(H2, dtype=float)
        out[A] = H2[A]
        if len(B):
            out[A] -= QAB @ lu.solve(np.ascontiguousarray(H2[B], dtype=float))
        return out[:, 0] if vec else out


@dataclass(frozen=True)
class NodeRegion:
    """A labelled set of vertex indices."""

    indices: np.ndarray
    label: str = ""

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=int))
        if idx.size == 0:
            raise ValueError("node region must be nonempty")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def mask(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[self.indices] = True
        return out

    def union(self, other: "NodeRegion", label: str = "") -> "NodeRegion":
        return NodeRegion(np.union1d(self.indices, other.indices), label)


def region_where(mesh: SphereMesh, mask, label: str = "") -> NodeRegion:
    return NodeRegion(np.flatnonzero(np.asarray(mask, dtype=bool)), label)


def region_ring(mesh: SphereMesh, t: float, label: str = "") -> NodeRegion:
    r = mesh.ring_index(t)
    return NodeRegion(1 + r * mesh.n_angle + np.arange(mesh.n_angle), label or f"ring t={t:g}")


def region_rings(mesh: SphereMesh, ring_indices: Sequence[int], label: str = "") -> NodeRegion:
    idx = np.concatenate([1 + r * mesh.n_angle + np.arange(mesh.n_angle) for r in ring_indices])
    return NodeRegion(idx, label)


def region_disc(mesh: SphereMesh, t: float, inside: bool = True, label: str = "") -> NodeRegion:
    """Closed disc ``log|z| <= t`` (or its closed complement ``log|z| >= t``)."""
    lr = mesh.log_radius
    mask = lr <= t + 1e-12 if inside else lr >= t - 1e-12
    return region_where(mesh, mask, label)


def check_separator(mesh: SphereMesh, inner: NodeRegion, separator: NodeRegion, outer: NodeRegion) -> None:
    """Raise ``ValueError`` unless removing ``separator`` disconnects ``inner`` from ``outer``."""
    keep = np.ones(mesh.n_vertices, dtype=bool)
    keep[separator.indices] = False
    idx = np.flatnonzero(keep)
    sub = mesh.adjacency[idx][:, idx]
    _, comp = csgraph.connected_components(sub, directed=False)
    label = np.full(mesh.n_vertices, -1)
    label[idx] = comp
    a = set(label[np.setdiff1d(inner.indices, separator.indices)])
    b = set(label[np.setdiff1d(outer.indices, separator.indices)])
    a.discard(-1)
    b.discard(-1)
    if a & b:
        raise ValueError(f"region {separator.label!r} does not separate {inner.label!r} from {outer.label!r}")


# --------------------------------------------------------------------------
# operations

def covariance(model: GaussianFieldModel) -> np.ndarray:
    return model.covariance()


def sobolev_norm(model: GaussianFieldModel, f, s: int) -> float:
    """``||f||_s`` for ``s`` in {-1, 0, +1}; ``f`` is a nodal function."""
    f = np.asarray(f, dtype=float)
    if s == 0:
        return float(np.sqrt(f @ (model.m * f)))
    if s == 1:
        return float(np.sqrt(f @ (model.Q @ f)))
    if s == -1:
        h = model.m * f
        return float(np.sqrt(h @ model.solve(h)))
    raise NotImplementedError("only s in {-1, 0, 1} are implemented")


def projection_eA(model: GaussianFieldModel, A) -> np.ndarray:
    """Dense matrix of ``e_A`` acting on load vectors."""
    A = np.asarray(A.indices if isinstance(A, NodeRegion) else A, dtype=int)
    if A.size == 0:
        raise ValueError("projection region must be nonempty")
    return model.project(A, np.eye(model.n))


def _check_separated(model: GaussianFieldModel, r1: NodeRegion, r2: NodeRegion):
    if np.intersect1d(r1.indices, r2.indices).size:
        raise ValueError("regions overlap")
    adj = model.L[r1.indices][:, r2.indices]
    if adj.nnz and np.any(adj.data != 0):
        raise ValueError("regions are adjacent (graph distance < 2)")


def cross_projection_norms(model: GaussianFieldModel, r1: NodeRegion, r2: NodeRegion) -> dict:
    """Operator and Hilbert-Schmidt norms of ``e_r1 e_r2`` on H^-1.

    The singular values are the cosines of the principal angles between the
    two delta spans, i.e. the canonical correlations of ``phi|r1`` and ``phi|r2``.
    """
    _check_separated(model, r1, r2)
    idx = np.concatenate([r1.indices, r2.indices])
    n1 = len(r1.indices)
    E = np.zeros((model.n, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    S = E.T @ model.solve(E)
    S = 0.5 * (S + S.T)
    w1 = _inv_sqrt(S[:n1, :n1])
    w2 = _inv_sqrt(S[n1:, n1:])
    K = w1 @ S[:n1, n1:] @ w2
    sv = np.linalg.svd(K, compute_uv=False)
    return {"opNorm": float(sv[0]), "hsNorm": float(np.sqrt(np.sum(sv ** 2))),
            "singular_values": sv.tolist()}


def _inv_sqrt(S):
    w, U = np.linalg.eigh(S)
    return (U / np.sqrt(w)) @ U.T


def mu_scan(ops: FemOperators, r1: NodeRegion, r2: NodeRegion,
            mus: Sequence[float] = (1e2, 1e3, 1e4, 1e5)) -> dict:
    """Fit ``log ||e_r1 e_r2||`` against ``log mu``."""
    norms, hs, curves = [], [], []
    for mu in mus:
        res = cross_projection_norms(GaussianFieldModel.from_ops(ops, mu), r1, r2)
        norms.append(res["opNorm"])
        hs.append(res["hsNorm"])
        curves.append(res["singular_values"])
    slope, intercept = np.polyfit(np.log(mus), np.log(norms), 1)
    return {"mus": list(map(float, mus)), "opNorms": norms, "hsNorms": hs,
            "singular_values": curves, "slope": float(slope), "intercept": float(intercept)}


def metric_rescaling_check(mesh: SphereMesh, metric: ConformalMetric, log_lambda, mu: float, f) -> float:
    """Relative gap between ``(f, C' f)`` for ``gamma' = lambda gamma`` and
    ``(lambda f, C_{lambda mu} lambda f)`` for ``gamma`` with mass ``lambda mu``.

    ``log_lambda`` is an expression in ``z`` (or a constant); the two sides
    are assembled and factorized independently.
    """
    scaled = ScaledMetric(metric, log_lambda, 0.0)
    ops = assemble(metric, mesh)
    ops2 = assemble(scaled, mesh)
    lam = np.exp(vertex_log_density(scaled, mesh) - vertex_log_density(metric, mesh))
    f = np.asarray(f, dtype=float)
    h2 = ops2.m * f
    lhs = h2 @ GaussianFieldModel.from_ops(ops2, mu).solve(h2)
    h = ops.m * (lam * f)
    rhs = h @ GaussianFieldModel.from_ops(ops, lam * mu).solve(h)
    return float(abs(lhs - rhs) / abs(lhs))


def _log_kernel_matrix(ops: FemOperators, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``-(1/2 pi) log|z_i - z_j|`` with a cell-average on the diagonal."""
    z = ops.mesh.z
    zi, zj = z[rows][:, None], z[cols][None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.log(np.abs(zi - zj))
    same = rows[:, None] == cols[None, :]
    if np.any(same):
        flat_area = ops.m / np.exp(vertex_log_density(ops.metric, ops.mesh))
        r_eff = np.sqrt(flat_area[rows] / np.pi)
        ii, jj = np.nonzero(same)
        K[ii, jj] = np.log(r_eff[ii]) - 0.5
    return -K / (2 * np.pi)


def log_kernel_inverse_check(ops: FemOperators, f, h=None) -> dict:
    """Compare the log-kernel potential of a mean-zero ``f`` with the FEM Laplacian.

    Returns ``residual = ||M^-1 L g - f||_0 / ||f||_0`` where ``g`` is the
    quadrature of ``-(1/2pi) int log|z - z'| f(z') dmu(z')``; when ``h`` is
    given also compares ``(h, (-Laplacian)^-1 f)`` from a grounded sparse solve
    with the double log-kernel quadrature.
    """
    f = np.asarray(f, dtype=float)
    m = ops.m
    mean = float(m @ f)
    scale = float(np.abs(m) @ np.abs(f)) or 1.0
    if abs(mean) > 1e-8 * scale:
        raise ValueError(f"input is not mean zero (integral {mean:.3e})")
    if not np.any(f):
        return {"residual": 0.0, "g": np.zeros_like(f)}
    n = ops.mesh.n_vertices
    inf = ops.mesh.infinity
    supp = np.flatnonzero(f)
    finite = np.arange(n - 1)
    g = np.zeros(n)
    g[finite] = _log_kernel_matrix(ops, finite, supp) @ (m[supp] * f[supp])
    lap = (ops.L @ g) / m
    res = np.sqrt(np.sum(m * (lap - f) ** 2)) / np.sqrt(np.sum(m * f ** 2))
    out = {"residual": float(res), "g": g}
    if h is not None:
        h = np.asarray(h, dtype=float)
        keep = np.setdiff1d(np.arange(n), [inf])
        Lr = ops.L[keep][:, keep].tocsc()
        u = np.zeros(n)
        u[keep] = spla.spsolve(Lr, (m * f)[keep])
        spectral = float((m * h) @ u)
        hs = np.flatnonzero(h)
        quad = float((m[hs] * h[hs]) @ _log_kernel_matrix(ops, hs, supp) @ (m[supp] * f[supp]))
        out.update({"pairing_solve": spectral, "pairing_quadrature": quad,
                    "pairing_relative_gap": abs(spectral - quad) / abs(spectral)})
    return out


def laplace_eigenvalues(ops: FemOperators, k: int = 6, shift: float = -0.5) -> np.ndarray:
    """Smallest eigenvalues of ``M^-1 L`` (shift-invert Lanczos)."""
    vals = spla.eigsh(ops.L.tocsc(), k=k, M=ops.M.tocsc(), sigma=shift, which="LM",
                      return_eigenvectors=False)
    return np.sort(vals)


def export_matrix(A, path) -> None:
    """Write a sparse or dense matrix in Matrix Market coordinate format."""
    spio.mmwrite(str(path), sparse.coo_matrix(A))


def import_matrix(path) -> sparse.csr_matrix:
    return sparse.csr_matrix(spio.mmread(str(path)))
