"""Exponential fields of the massless free field.

Correlators of charges ``[k_1, z_1, ..., k_n, z_n]`` are evaluated in
closed form, symbols (finite combinations of charge sequences) carry the
Möbius, conformal and reflection actions, and a mesh-based oracle recovers
the closed form as a limit of regularized massive expectations.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as spla

from .gaussian import HilbertSpace, _bump_profile, hilbert_space
from .geometry import (THETA, ConformalMetric, DiscSpec, MobiusMap, SplitMetric, StandardMetric,
                       check_disjoint)
from .mesh import GaussianFieldModel, SphereMesh, assemble, build_mesh, vertex_log_density

FOUR_PI = 4.0 * np.pi


class ChargeError(ValueError):
    """Invalid charge sequence (coinciding points, point outside the allowed region)."""


# --------------------------------------------------------------------------
# charge sequences and symbols

def charge_sequence(entries: Iterable) -> tuple:
    """Normalize ``[(k, z), ...]`` or ``[(k, re, im), ...]`` to a tuple of ``(int, complex)``."""
    out = []
    for e in entries:
        if len(e) == 3:
            k, x, y = e
            z = complex(x, y)
        else:
            k, z = e
            z = complex(z)
        if int(k) != k:
            raise ChargeError(f"charges must be integers, got {k}")
        if not np.isfinite(z):
            raise ChargeError("points at infinity are not supported; pre-compose a Möbius map")
        out.append((int(k), z))
    return tuple(out)


def _distinct(Z, tol: float = 1e-12) -> bool:
    pts = [z for _, z in Z]
    return all(abs(a - b) > tol for a, b in itertools.combinations(pts, 2))


def total_charge(Z) -> int:
    return sum(k for k, _ in Z)


def _sigma_function(metric) -> Callable:
    if metric is None:
        return lambda z: np.zeros(np.shape(z))
    if isinstance(metric, ConformalMetric):
        return metric.log_density
    return metric


def eval_correlator(Z, metric=None) -> float:
    """``<Z>_gamma`` for ``gamma = e^sigma |dz|^2`` (``metric`` a :class:`ConformalMetric`,
    a callable ``sigma`` or ``None`` for the flat metric)."""
    Z = charge_sequence(Z)
    if not _distinct(Z):
        raise ChargeError("charge sequence has coinciding points")
    if total_charge(Z) != 0:
        return 0.0
    if not Z:
        return 1.0
    # canonical order (points are distinct) makes the result exactly symmetric
    Z = sorted(Z, key=lambda e: (e[1].real, e[1].imag))
    k = np.array([e[0] for e in Z], dtype=float)
    z = np.array([e[1] for e in Z], dtype=complex)
    sigma = np.asarray(_sigma_function(metric)(z), dtype=float)
    log_val = -np.sum(k ** 2 * sigma) / (2 * FOUR_PI)
    i, j = np.triu_indices(len(Z), 1)
    log_val += np.sum(k[i] * k[j] * np.log(np.abs(z[i] - z[j]))) / (2 * np.pi)
    return float(np.exp(log_val))


class Symbol:
    """Finite complex combination of charge sequences."""

    def __init__(self, terms: Mapping | None = None):
        self.terms: dict[tuple, complex] = {}
        for Z, c in (terms or {}).items():
            Z = charge_sequence(Z)
            self.terms[Z] = self.terms.get(Z, 0.0) + complex(c)

    @classmethod
    def single(cls, Z, coef: complex = 1.0) -> "Symbol":
        return cls({charge_sequence(Z): coef})

    @classmethod
    def one(cls) -> "Symbol":
        return cls({(): 1.0})

    def __add__(self, other: "Symbol") -> "Symbol":
        out = Symbol(self.terms)
        for Z, c in other.terms.items():
            out.terms[Z] = out.terms.get(Z, 0.0) + c
        return out

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return Symbol({Z: c * other for Z, c in self.terms.items()})
        out: dict = {}
        for (Z1, c1), (Z2, c2) in itertools.product(self.terms.items(), other.terms.items()):
            out[Z1 + Z2] = out.get(Z1 + Z2, 0.0) + c1 * c2
        return Symbol(out)

    __rmul__ = __mul__

    def map_sequences(self, fn: Callable, coef_fn: Callable | None = None) -> "Symbol":
        out: dict = {}
        for Z, c in self.terms.items():
            Z2 = fn(Z)
            c2 = coef_fn(Z, c) if coef_fn is not None else c
            out[Z2] = out.get(Z2, 0.0) + c2
        return Symbol(out)

    def points(self) -> np.ndarray:
        return np.array([z for Z in self.terms for _, z in Z], dtype=complex)

    def in_upsilon0(self) -> bool:
        return all(_distinct(Z) for Z, c in self.terms.items() if c != 0)

    def localized_in(self, predicate: Callable) -> bool:
        pts = self.points()
        return bool(np.all(predicate(pts))) if pts.size else True

    def expectation(self, metric=None) -> complex:
        if not self.in_upsilon0():
            raise ChargeError("symbol has a sequence with coinciding points")
        return complex(sum(c * eval_correlator(Z, metric) for Z, c in self.terms.items()))

    def to_list(self) -> list:
        return [{"coef": [c.real, c.imag], "charges": [[k, z.real, z.imag] for k, z in Z]}
                for Z, c in self.terms.items()]

    @classmethod
    def from_list(cls, data: list) -> "Symbol":
        out = {}
        for item in data:
            c = item.get("coef", 1.0)
            c = complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c)
            out[charge_sequence(item["charges"])] = c
        return cls(out)

    def __repr__(self):
        return f"Symbol({len(self.terms)} sequences)"


def tau_mobius(F: Symbol, alpha: MobiusMap) -> Symbol:
    """``tau_alpha``: move every point by ``alpha``."""
    if alpha.anti:
        raise ValueError("tau needs a holomorphic Möbius map")
    return F.map_sequences(lambda Z: tuple((k, complex(alpha(z))) for k, z in Z))


def conformal_change(F: Symbol, sigma) -> Symbol:
    """``tau_{gamma', gamma}`` for ``gamma' = e^sigma gamma``: weight ``exp(sum k^2 sigma(z)/8 pi)``."""
    sig = _sigma_function(sigma)

    def coef(Z, c):
        if not Z:
            return c
        k = np.array([e[0] for e in Z], dtype=float)
        z = np.array([e[1] for e in Z], dtype=complex)
        return c * np.exp(np.sum(k ** 2 * np.asarray(sig(z), dtype=float)) / (2 * FOUR_PI))

    return F.map_sequences(lambda Z: Z, coef)


def relative_sigma(target: ConformalMetric, source: ConformalMetric) -> Callable:
    """``sigma`` with ``target = e^sigma source``."""
    return lambda z: target.log_density(z) - source.log_density(z)


def conformal_change_check(F: Symbol, gamma: ConformalMetric, sigma) -> dict:
    """``<F>_gamma`` against ``<tau F>_{e^sigma gamma}``."""
    sig = _sigma_function(sigma)
    lhs = F.expectation(gamma)
    rhs = conformal_change(F, sig).expectation(lambda z: gamma.log_density(z) + sig(z))
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs) / max(abs(lhs), 1e-300)}


def mobius_covariance(F: Symbol, alpha: MobiusMap, gamma: ConformalMetric | None = None) -> dict:
    """Check ``<tau_alpha F>_gamma = <F>_{alpha^* gamma}`` and the flat Jacobian form.

    Points of ``F`` are the ``w_i``; their images ``z_i = alpha(w_i)``.
    """
    if alpha.anti:
        raise ValueError("Möbius covariance needs a holomorphic map")
    sig = _sigma_function(gamma)
    image = tau_mobius(F, alpha)
    lhs = image.expectation(sig)

    def pulled(w):
        w = np.asarray(w, dtype=complex)
        return np.asarray(sig(alpha(w)), dtype=float) + 2.0 * np.log(alpha.scale(w))

    rhs = F.expectation(pulled)
    flat_lhs = image.expectation(None)
    flat_rhs = 0.0 + 0.0j
    for Z, c in F.terms.items():
        jac = 1.0
        for k, w in Z:
            jac *= float(alpha.scale(np.array([w]))[0]) ** (-k * k / FOUR_PI)
        flat_rhs += c * jac * eval_correlator(Z)
    return {"covariance_residual": abs(lhs - rhs) / max(abs(lhs), 1e-300),
            "flat_residual": abs(flat_lhs - flat_rhs) / max(abs(flat_lhs), 1e-300),
            "lhs": lhs, "rhs": rhs}


def theta_maps(F: Symbol) -> tuple[Symbol, Symbol]:
    """``(Theta F, Theta~ F)``: negate charges, reflect points, conjugate coefficients;
    ``Theta~`` also weights by ``prod |theta z_i|^{k_i^2/2 pi}``."""
    pts = F.points()
    if pts.size and np.any(np.abs(pts) < 1e-300):
        raise ChargeError("the reflection is undefined at 0")

    def refl(Z):
        return tuple((-k, complex(THETA(z))) for k, z in Z)

    theta = F.map_sequences(refl, lambda Z, c: np.conj(c))

    def weight(Z, c):
        w = 1.0
        for k, z in Z:
            w *= abs(THETA(z)) ** (k * k / (2 * np.pi))
        return np.conj(c) * w

    return theta, F.map_sequences(refl, weight)


def flat_standard_metric(d: float) -> StandardMetric:
    return StandardMetric("flat", d)


def flat_zone_radius(d: float) -> float:
    return float(np.exp(-2.0 * d))


def rp_gram_flat(family: Sequence[Symbol], d: float | None = None, check: bool = True) -> dict:
    """``G_ab = <(Theta~ F_a) F_b>`` (flat) and, with ``d``, the standard-metric form ``<(Theta F_a) F_b>_{gamma0}``."""
    if d is not None:
        r = flat_zone_radius(d)
        for F in family:
            if not F.localized_in(lambda p: np.abs(p) < r):
                raise ChargeError("symbol has points outside the flat zone")
    else:
        for F in family:
            if not F.localized_in(lambda p: np.abs(p) < 1.0):
                raise ChargeError("symbol has points outside the unit disc")
    tilde = [theta_maps(F)[1] for F in family]
    n = len(family)
    G = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            G[a, b] = (tilde[a] * family[b]).expectation(None)
    out = {"gram": G}
    herm = float(np.max(np.abs(G - G.conj().T))) if n else 0.0
    Gs = 0.5 * (G + G.conj().T)
    eig = np.linalg.eigvalsh(Gs) if n else np.zeros(0)
    out.update(hermitian_gap=herm, min_eig=float(eig.min()) if n else 0.0,
               norm=float(np.max(np.abs(eig))) if n else 0.0, eigenvalues=eig)
    if d is not None and check:
        g0 = flat_standard_metric(d)
        theta = [theta_maps(F)[0] for F in family]
        G0 = np.array([[(theta[a] * family[b]).expectation(g0) for b in range(n)] for a in range(n)])
        out["standard_residual"] = float(np.max(np.abs(G0 - G)) / max(out["norm"], 1e-300)) if n else 0.0
    return out


def hilbert_quotient_flat(G: np.ndarray, tol: float = 1e-10) -> HilbertSpace:
    return hilbert_space(G, tol)


# --------------------------------------------------------------------------
# amplitudes

@dataclass
class FlatConfiguration:
    """Sphere with metric ``gamma`` and parametrized open discs, massless setting."""

    gamma0: StandardMetric
    gamma: ConformalMetric
    discs: tuple

    @property
    def in_discs(self):
        return [i for i, D in enumerate(self.discs) if D.orientation == "in"]

    @property
    def out_discs(self):
        return [i for i, D in enumerate(self.discs) if D.orientation == "out"]

    def disc_sigma(self, i: int, z) -> np.ndarray:
        """``log rho`` of ``gamma_i``, the standard metric pulled back by the parametrization."""
        j = self.discs[i].parametrization()
        z = np.asarray(z, dtype=complex)
        return self.gamma0.log_density(j(z)) + 2.0 * np.log(j.scale(z))


def flat_configuration(discs: Sequence[DiscSpec], gamma0: StandardMetric,
                       background: ConformalMetric | None = None, collar: float = 0.5) -> FlatConfiguration:
    from .geometry import BlendedMetric, PullbackMetric

    discs = tuple(discs)
    check_disjoint(discs, gamma0.d, level=2)
    bg = gamma0 if background is None else background
    patches = [(D, PullbackMetric(gamma0, D.parametrization())) for D in discs]
    return FlatConfiguration(gamma0, BlendedMetric(bg, patches, gamma0.d, collar=collar), discs)


def transport_symbol(F: Symbol, disc: DiscSpec) -> Symbol:
    """``J_i F`` for in-discs, ``J'_i Theta F`` for out-discs."""
    jinv = disc.parametrization().inverse()
    if disc.orientation == "in":
        return tau_mobius(F, jinv)
    return tau_mobius(theta_maps(F)[0], jinv)


def _check_flat(F: Symbol, d: float):
    r = flat_zone_radius(d)
    if not F.localized_in(lambda p: np.abs(p) < r):
        raise ChargeError("symbol has points outside the flat zone of the standard metric")


def amplitude_form(config: FlatConfiguration, F: Mapping[int, Symbol], tol: float = 1e-12) -> complex:
    """``< prod_{out} J'_i Theta F_i prod_{in} J_i F_i >_gamma``."""
    total = Symbol.one()
    for i, Fi in sorted(F.items()):
        _check_flat(Fi, config.gamma0.d)
        T = transport_symbol(Fi, config.discs[i])
        pts = T.points()
        if pts.size:
            gap = np.max(np.abs(config.gamma.log_density(pts) - config.disc_sigma(i, pts)))
            if gap > tol:
                raise ValueError(f"metric differs from the disc metric at transported points of disc {i}")
        total = total * T
    if not total.in_upsilon0():
        raise ChargeError("transported points coincide")
    return total.expectation(config.gamma)


def _tau_to_standard(F: Symbol, gamma: ConformalMetric, gamma0: ConformalMetric) -> Symbol:
    """``tau_{gamma0, gamma}``."""
    return conformal_change(F, relative_sigma(gamma0, gamma))


def standard_inner(X: Symbol, Y: Symbol, gamma0: ConformalMetric) -> complex:
    """``(nu X, nu Y) = <(Theta X) Y>_{gamma0}`` for symbols in the open unit disc."""
    return (theta_maps(X)[0] * Y).expectation(gamma0)


def _require_standard(config: FlatConfiguration, side: str):
    idx = config.out_discs if side == "out" else config.in_discs
    if len(idx) != 1:
        raise ValueError(f"configuration needs exactly one {side}-disc")
    D = config.discs[idx[0]]
    ok = D.center == 0 and D.radius == 1.0 and D.twist == 0.0 and \
        D.shape == ("exterior" if side == "out" else "interior")
    if not ok:
        raise ValueError(f"the {side}-disc must be the standard disc with identity parametrization")


def one_disc_vector(config: FlatConfiguration, F: Mapping[int, Symbol]) -> Symbol:
    """Representative ``prod tau_{gamma0, gamma} J_i F_i`` of ``A^{1I}[F]`` in the unit disc."""
    _require_standard(config, "out")
    X = Symbol.one()
    for i, Fi in sorted(F.items()):
        _check_flat(Fi, config.gamma0.d)
        X = X * _tau_to_standard(transport_symbol(Fi, config.discs[i]), config.gamma, config.gamma0)
    return X


def one_disc_adjoint_vector(config: FlatConfiguration, F: Mapping[int, Symbol]) -> Symbol:
    """Representative ``Theta prod tau_{gamma0, gamma} J'_i Theta F_i`` of ``(A^{I'1})^*[F]``."""
    _require_standard(config, "in")
    Y = Symbol.one()
    for i, Fi in sorted(F.items()):
        _check_flat(Fi, config.gamma0.d)
        Y = Y * _tau_to_standard(transport_symbol(Fi, config.discs[i]), config.gamma, config.gamma0)
    return theta_maps(Y)[0]


def one_disc_operator(config: FlatConfiguration, F: Mapping[int, Symbol], family: Sequence[Symbol],
                      tol: float = 1e-10) -> dict:
    """Coordinates of ``A^{1I}[F]`` (one standard out-disc) or ``(A^{I'1})^*[F]`` (one standard in-disc)
    in the orthonormal basis of ``span nu(family)``, plus the Gram used."""
    if len(config.out_discs) == 1 and all(config.discs[i].orientation == "in" for i in F):
        vec = one_disc_vector(config, F)
    else:
        vec = one_disc_adjoint_vector(config, F)
    G = np.array([[standard_inner(a, b, config.gamma0) for b in family] for a in family])
    space = hilbert_space(G, tol)
    proj = np.array([standard_inner(a, vec, config.gamma0) for a in family])
    return {"vector": vec, "coords": space.basis.conj().T @ proj, "space": space, "pairings": proj}


def sewing_check_massless(gamma0: StandardMetric, in_discs: Sequence[DiscSpec], out_discs: Sequence[DiscSpec],
                          F_in: Sequence[Symbol], F_out: Sequence[Symbol], collar: float = 0.5,
                          tol: float = 1e-12) -> dict:
    """Compare ``([A^{I'1}]^* F', A^{1I} F)`` (through an orthonormal basis) with ``A^{I'I}(F', F)``.

    ``gamma1`` blends the in-disc metrics into the standard metric,
    ``gamma2`` the out-disc metrics, and ``gamma`` equals ``gamma1`` inside the
    unit circle and ``gamma2`` outside.
    """
    d = gamma0.d
    D0 = DiscSpec("interior", 0.0, 1.0, "in")
    D0p = DiscSpec("exterior", 0.0, 1.0, "out")
    cfg1 = flat_configuration(list(in_discs), gamma0, collar=collar)
    cfg2 = flat_configuration(list(out_discs), gamma0, collar=collar)
    cfg1 = FlatConfiguration(gamma0, cfg1.gamma, tuple(in_discs) + (D0p,))
    cfg2 = FlatConfiguration(gamma0, cfg2.gamma, (D0,) + tuple(out_discs))
    gamma = SplitMetric(cfg1.gamma, cfg2.gamma, 1.0)
    full = FlatConfiguration(gamma0, gamma, tuple(out_discs) + tuple(in_discs))
    n_out = len(out_discs)
    X = one_disc_vector(cfg1, {i: F for i, F in enumerate(F_in)})
    Y = one_disc_adjoint_vector(cfg2, {1 + i: F for i, F in enumerate(F_out)})
    for S in (X, Y):
        if not S.localized_in(lambda p: np.abs(p) < 1.0):
            raise ValueError("one-disc representative leaves the unit disc")
    basis_family = [X, Y]
    G = np.array([[standard_inner(a, b, gamma0) for b in basis_family] for a in basis_family])
    space = hilbert_space(G, 1e-14)
    coords = space.nu(np.eye(2))
    sewn = complex(coords[:, 1].conj() @ coords[:, 0])
    direct_pairing = standard_inner(Y, X, gamma0)
    F_all = {i: F for i, F in enumerate(F_out)}
    F_all.update({n_out + i: F for i, F in enumerate(F_in)})
    amp = amplitude_form(full, F_all, tol=tol)
    scale = max(abs(amp), 1e-300)
    return {"sewn": sewn, "direct_pairing": direct_pairing, "amplitude": amp,
            "residual": abs(sewn - amp) / scale, "pairing_residual": abs(direct_pairing - amp) / scale}


# --------------------------------------------------------------------------
# limit oracle

class MeshResolutionError(ValueError):
    """The mesh does not resolve the mollifier."""


def _mollifier_log_energy(n: int = 4000) -> float:
    """``int int b(x) b(y) log|x - y|`` for the unit-width normalized bump profile.

    Radial log potential: ``U(r) = M(r) log r + int_r^1 log s dM(s)``.
    """
    s = np.linspace(0.0, 1.0, n + 1)
    dens = _bump_profile(s)
    dM = 2 * np.pi * dens * s
    M = integrate.cumulative_trapezoid(dM, s, initial=0.0)
    total = M[-1]
    dM, M = dM / total, M / total
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(s > 0, np.log(s), 0.0)
    tail = integrate.cumulative_trapezoid(logs * dM, s, initial=0.0)
    U = M * logs + (tail[-1] - tail)
    return float(integrate.trapezoid(U * dM, s))


_LOG_ENERGY = None


def mollifier_log_energy() -> float:
    global _LOG_ENERGY
    if _LOG_ENERGY is None:
        _LOG_ENERGY = _mollifier_log_energy()
    return _LOG_ENERGY


def _straight_log_length_correction(metric: ConformalMetric, center: complex, width: float,
                                    n_r: int = 10, n_a: int = 12, n_seg: int = 6) -> float:
    """``int int b b (log L(x, y) - log|x - y|)`` with ``L`` the metric length of the segment."""
    r, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr * _bump_profile(r) * r
    a = 2 * np.pi * np.arange(n_a) / n_a
    pts = center + width * (r[:, None] * np.exp(1j * a[None, :])).ravel()
    w = np.repeat(wr, n_a)
    w = w / w.sum()
    t, wt = np.polynomial.legendre.leggauss(n_seg)
    t, wt = 0.5 * (t + 1.0), 0.5 * wt
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    W = np.outer(w, w)
    off = ~np.eye(len(pts), dtype=bool)
    seg = X[..., None] + t * (Y - X)[..., None]
    factor = np.exp(0.5 * metric.log_density(seg.ravel())).reshape(seg.shape) @ wt
    corr = np.zeros_like(W)
    corr[off] = np.log(factor[off])
    # the diagonal contributes the limit value sigma/2 at the point
    corr[~off] = 0.5 * metric.log_density(pts)
    return float(np.sum(W * corr))


def _mollifier_loads(mesh: SphereMesh, share: np.ndarray, z: complex, width: float,
                     min_vertices: int) -> np.ndarray:
    vals = _bump_profile(np.abs(mesh.z - z) / width)
    vals[~np.isfinite(mesh.z)] = 0.0
    count = int(np.count_nonzero(vals))
    if count < min_vertices:
        raise MeshResolutionError(f"mollifier of width {width:g} covers only {count} vertices")
    h = share * vals
    return h / h.sum()


def _chart_share(ops) -> np.ndarray:
    """Flat-chart area of each vertex's lumped cell (``m / rho``)."""
    return ops.m / np.exp(vertex_log_density(ops.metric, ops.mesh))


def regularized_exponent(ops, Z, kappa: float, mu: float | None, min_vertices: int = 12) -> dict:
    """Exponent of the regularized massive expectation on the mesh.

    ``-1/2 (f, (-Delta + mu)^{-1} f) + 1/2 sum_i (f_i, G# f_i)`` with
    ``f = sum k_i delta_kappa(. - z_i)`` (unit-mass mollifiers).  ``mu=None``
    takes the massless limit through a grounded solve (neutral charge only).
    """
    Z = charge_sequence(Z)
    mesh = ops.mesh
    share = _chart_share(ops)
    width = 1.0 / kappa
    H = np.stack([k * _mollifier_loads(mesh, share, z, width, min_vertices) for k, z in Z], axis=1)
    h = H.sum(axis=1)
    if mu is None:
        if total_charge(Z) != 0:
            raise ValueError("the massless limit needs total charge zero")
        keep = np.arange(mesh.n_vertices - 1)  # ground the vertex at infinity
        Lr = sparse.csc_matrix(ops.L[keep][:, keep])
        x = spla.spsolve(Lr, h[keep])
        quad = float(h[keep] @ x)
    else:
        model = GaussianFieldModel.from_ops(ops, mu)
        quad = float(h @ model.solve(h))
    self_energy = 0.0
    for k, z in Z:
        log_len = mollifier_log_energy() - np.log(kappa) + \
            _straight_log_length_correction(ops.metric, z, width)
        self_energy += k * k * (-log_len / (2 * np.pi))
    return {"exponent": -0.5 * quad + 0.5 * self_energy, "quadratic": quad, "self_energy": self_energy}


def massive_limit_oracle(Z, metric: ConformalMetric | None = None, resolution: int = 96, d: float = 0.1,
                         kappas: Sequence[float] = (4.0, 5.0, 6.0, 8.0),
                         mus: Sequence[float] = (1e-3, 5e-4, 2.5e-4), mesh: SphereMesh | None = None) -> dict:
    """Extrapolate the regularized massive expectation to ``mu -> 0`` then ``kappa -> infinity``.

    For each ``kappa`` the exponent is Richardson-extrapolated linearly in
    ``mu`` (and checked against the grounded massless solve); the limits are
    then fitted by ``c + a kappa^-2 + b kappa^2``.
    """
    Z = charge_sequence(Z)
    if any(abs(k) > 6 for k, _ in Z):
        warnings.warn("charges above 6 in magnitude make the oracle expensive and poorly conditioned")
    metric = flat_standard_metric(d) if metric is None else metric
    mesh = build_mesh(resolution, d) if mesh is None else mesh
    ops = assemble(metric, mesh)
    pts = np.array([z for _, z in Z])
    if len(pts) > 1:
        sep = min(abs(a - b) for a, b in itertools.combinations(pts, 2))
        if sep < 5.0 / max(kappas) or sep <= 2.0 / min(kappas):
            raise ValueError("points must be separated by at least 5/kappa_max with disjoint mollifiers")
    rows = []
    for kappa in kappas:
        vals = [regularized_exponent(ops, Z, kappa, mu)["exponent"] for mu in mus]
        m1, m2 = mus[-2], mus[-1]
        rich = vals[-1] + (vals[-1] - vals[-2]) * m2 / (m1 - m2)
        grounded = regularized_exponent(ops, Z, kappa, None)["exponent"] if total_charge(Z) == 0 else None
        rows.append({"kappa": kappa, "by_mu": vals, "mu_limit": rich, "grounded": grounded})
    k = np.array(kappas, dtype=float)
    y = np.array([r["mu_limit"] for r in rows])
    A = np.stack([np.ones_like(k), k ** -2, k ** 2], axis=1)
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    value = float(np.exp(coef[0]))
    reference = eval_correlator(Z, metric)
    return {"value": value, "reference": reference, "relative_error": abs(value - reference) / reference,
            "fit": coef.tolist(), "rows": rows}


def non_neutral_divergence(Z, metric: ConformalMetric | None = None, resolution: int = 48, d: float = 0.1,
                           kappa: float = 4.0, mus: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4)) -> dict:
    """Exponent of a non-neutral configuration as ``mu`` decreases.

    The constant mode gives ``-(sum k)^2 / (2 mu Area)``; the fitted slope of
    ``log|exponent|`` against ``log(1/mu)`` approaches 1.
    """
    Z = charge_sequence(Z)
    if total_charge(Z) == 0:
        raise ValueError("configuration is neutral")
    metric = flat_standard_metric(d) if metric is None else metric
    ops = assemble(metric, build_mesh(resolution, d))
    ex = np.array([regularized_exponent(ops, Z, kappa, mu)["exponent"] for mu in mus])
    slope = float(np.polyfit(np.log(1.0 / np.asarray(mus)), np.log(np.abs(ex)), 1)[0])
    predicted = -total_charge(Z) ** 2 / (2 * np.asarray(mus) * ops.total_mass)
    return {"exponents": ex.tolist(), "values": np.exp(ex).tolist(), "slope": slope,
            "constant_mode": predicted.tolist(), "monotone": bool(np.all(np.diff(ex) < 0))}
