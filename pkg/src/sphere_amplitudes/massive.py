"""Amplitudes of the massive free field on a sphere with parametrized discs.

Test polynomials live in the unit disc ``D0`` and are transported into each
disc by its parametrization (in-discs) or by the reflection followed by the
parametrization (out-discs).  Amplitude matrices are expressed in
orthonormal bases of per-disc Hilbert spaces built from a polynomial
family.  Everything is evaluated exactly on one mesh shared by all metrics.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .gaussian import (HilbertSpace, WickPolynomial, conditional_expectation, expectation,
                       expectation_tensor, hilbert_space, l2_norm, reflect_polynomial, rp_gram)
from .geometry import (BlendedMetric, ConformalMetric, DiscSpec, PullbackMetric, SplitMetric,
                       StandardMetric, check_disjoint)
from .mesh import (FemOperators, GaussianFieldModel, NodeRegion, SphereMesh, assemble,
                   cross_projection_norms)
from .perturbation import sewing_constant

D0 = DiscSpec("interior", 0.0, 1.0, "in")
D0_OUT = DiscSpec("exterior", 0.0, 1.0, "out")


def transport(P: WickPolynomial, disc: DiscSpec) -> WickPolynomial:
    """``J_i P`` for in-discs and ``J'_i Theta P`` for out-discs."""
    j = disc.parametrization()
    if disc.orientation == "in":
        return P.map_factors(lambda f: f.pullback(j))
    return reflect_polynomial(P).map_factors(lambda f: f.pullback(j))


@dataclass
class DiscConfiguration:
    """Sphere with metric ``gamma`` and parametrized discs, discretized on ``mesh``."""

    mesh: SphereMesh
    gamma0: StandardMetric
    gamma: ConformalMetric
    discs: tuple
    label: str = ""
    _ops: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> float:
        return self.gamma0.d

    @property
    def in_discs(self) -> list[int]:
        return [i for i, D in enumerate(self.discs) if D.orientation == "in"]

    @property
    def out_discs(self) -> list[int]:
        return [i for i, D in enumerate(self.discs) if D.orientation == "out"]

    def disc_metric(self, i: int) -> ConformalMetric:
        """``gamma_i``: the standard metric pulled back by the disc's parametrization."""
        return PullbackMetric(self.gamma0, self.discs[i].parametrization())

    def ops(self, key="gamma") -> FemOperators:
        if key not in self._ops:
            metric = {"gamma": self.gamma, "gamma0": self.gamma0}.get(key) if isinstance(key, str) \
                else self.disc_metric(key)
            self._ops[key] = assemble(metric, self.mesh)
        return self._ops[key]

    def model(self, mu: float, key="gamma") -> GaussianFieldModel:
        return GaussianFieldModel.from_ops(self.ops(key), mu, label=str(key))

    def lam(self) -> np.ndarray:
        """Nodewise ``lambda = rho_gamma / rho_gamma0`` (ratio of lumped masses)."""
        return self.ops("gamma").m / self.ops("gamma0").m

    def disc_vertices(self, i: int, level: int = 0) -> np.ndarray:
        return np.flatnonzero(self.discs[i].contains(self.mesh.z, level, self.d))

    def validate(self, tol: float = 1e-12) -> dict:
        """Check ``gamma = gamma_i`` on every enlarged disc (nodewise lumped mass)."""
        worst = 0.0
        for i in range(len(self.discs)):
            idx = self.disc_vertices(i, 2)
            if idx.size == 0:
                raise ValueError(f"disc {i} contains no mesh vertex")
            gap = np.max(np.abs(self.ops("gamma").m[idx] / self.ops(i).m[idx] - 1.0))
            worst = max(worst, float(gap))
            if gap > tol:
                raise ValueError(f"metric differs from the disc metric on enlarged disc {i} (gap {gap:.2e})")
        return {"max_gap": worst}


def blend_metric(mesh: SphereMesh, discs: Sequence[DiscSpec], gamma0: StandardMetric,
                 background: ConformalMetric | None = None, collar: float = 0.5,
                 label: str = "") -> DiscConfiguration:
    """Partition-of-unity metric equal to ``gamma_i`` on each enlarged disc."""
    discs = tuple(discs)
    check_disjoint(discs, gamma0.d, level=2)
    background = gamma0 if background is None else background
    patches = [(D, PullbackMetric(gamma0, D.parametrization())) for D in discs]
    gamma = BlendedMetric(background, patches, gamma0.d, collar=collar)
    return DiscConfiguration(mesh, gamma0, gamma, discs, label)


def _check_family_support(config: DiscConfiguration, i: int, polys, model: GaussianFieldModel):
    inside = np.zeros(config.mesh.n_vertices, dtype=bool)
    inside[config.disc_vertices(i, 0)] = True
    for P in polys:
        supp = P.support(model)
        if supp.size and not np.all(inside[supp]):
            raise ValueError(f"transported polynomial leaks outside disc {i}")


def expectation_product(config: DiscConfiguration, mu: float, F: dict, model=None) -> complex:
    """``< prod_{out} Phi(J'_i Theta F_i) prod_{in} Phi(J_i F_i) >_{gamma, mu}``.

    ``F`` maps disc index to a polynomial supported in the unit disc.
    """
    model = config.model(mu) if model is None else model
    polys = []
    for i, P in sorted(F.items()):
        Q = transport(P, config.discs[i])
        _check_family_support(config, i, [Q], model)
        polys.append(Q)
    return expectation(model, *polys)


def boundary_layer(mesh: SphereMesh, inside: np.ndarray) -> tuple[NodeRegion, NodeRegion]:
    """Split a vertex set into its interior and the layer adjacent to the complement."""
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[inside] = True
    outside = (~mask).astype(float)
    touches = (mesh.adjacency @ outside) > 0
    layer = np.flatnonzero(mask & touches)
    interior = np.flatnonzero(mask & ~touches)
    return NodeRegion(interior, "interior"), NodeRegion(layer, "boundary layer")


@dataclass
class DiscSpace:
    """Hilbert space attached to one disc: family, Gram and orthonormal basis."""

    disc: int
    mu: float
    family: list
    space: HilbertSpace
    key: tuple

    @property
    def basis(self) -> np.ndarray:
        return self.space.basis

    @property
    def dim(self) -> int:
        return self.space.dim


def disc_space(config: DiscConfiguration, i: int, mu: float, family: Sequence[WickPolynomial],
               tol: float = 1e-10) -> DiscSpace:
    """Quotient Hilbert space of ``family`` built in the disc's own model.

    The Gram is ``(E_C J F_a, E_C J F_b)`` in ``L^2(gamma_i, mu)`` with ``C``
    the boundary layer of the disc; for out-discs the antiunitary transport
    conjugates it.
    """
    model = config.model(mu, i)
    polys = [transport(P, config.discs[i]).evaluate(model) for P in family]
    _check_family_support(config, i, polys, model)
    _, layer = boundary_layer(config.mesh, config.disc_vertices(i, 0))
    conds = [conditional_expectation(model, layer, P) for P in polys]
    G = expectation_tensor(model, [[c.conj() for c in conds], conds])
    if config.discs[i].orientation == "out":
        G = G.conj()
    return DiscSpace(i, mu, list(family), hilbert_space(G, tol), _family_key(family, mu, config))


def standard_space(config: DiscConfiguration, mu: float, family: Sequence[WickPolynomial],
                   tol: float = 1e-10) -> DiscSpace:
    """Hilbert space of the unit disc in the standard model, from the reflection Gram."""
    model = config.model(mu, "gamma0")
    G = rp_gram(model, family, check_equality=False)["gram"]
    return DiscSpace(-1, mu, list(family), hilbert_space(G, tol), _family_key(family, mu, config))


def _family_key(family, mu, config):
    return (tuple(id(P) for P in family), float(mu), config.gamma0.flavor, config.gamma0.d)


@dataclass
class AmplitudeMatrix:
    """Matrix of an amplitude from the in-disc tensor basis to the out-disc tensor basis."""

    matrix: np.ndarray
    in_dims: tuple
    out_dims: tuple
    Z: float

    @cached_property
    def singular_values(self) -> np.ndarray:
        if self.matrix.size == 0:
            return np.zeros(0)
        return np.linalg.svd(self.matrix, compute_uv=False)

    @property
    def hs_norm(self) -> float:
        return float(np.sqrt(np.sum(self.singular_values ** 2)))

    @property
    def trace_norm(self) -> float:
        return float(np.sum(self.singular_values))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for (r, c), v in np.ndenumerate(self.matrix):
                w.writerow([r, c, repr(float(v.real)), repr(float(v.imag))])

    def singular_values_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "sigma", "sigma_over_sigma1"])
            s = self.singular_values
            for k, v in enumerate(s):
                w.writerow([k, repr(float(v)), repr(float(v / s[0])) if s[0] > 0 else "nan"])


def sewing_Z(config: DiscConfiguration, mu: float, metric: ConformalMetric | None = None) -> float:
    """``Z_{gamma, mu}`` for ``gamma = lambda gamma0``."""
    model0 = config.model(mu, "gamma0")
    if metric is None:
        lam = config.lam()
    else:
        lam = assemble(metric, config.mesh).m / config.ops("gamma0").m
    return float(sewing_constant(model0, lam)["Z"])


def _contract(T: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Contract axis ``k`` of ``T`` with ``mats[k]`` (``T[..a..] M[a, b]``)."""
    for k, M in enumerate(mats):
        T = np.moveaxis(np.tensordot(T, M, axes=([k], [0])), -1, k)
    return T


def amplitude_matrix(config: DiscConfiguration, mu: float, spaces: dict, Z: float | None = None,
                     model: GaussianFieldModel | None = None) -> AmplitudeMatrix:
    """``(e'_b, A e_a) = Z < prod Phi(J' Theta E'_b) prod Phi(J E_a) >_{gamma, mu}`` in orthonormal bases.

    ``spaces`` maps each disc index to its :class:`DiscSpace`; all must share
    one family, ``mu`` and standard metric.
    """
    ins, outs = config.in_discs, config.out_discs
    keys = {spaces[i].key[1:] for i in ins + outs}
    if len(keys) > 1 or any(k != (float(mu), config.gamma0.flavor, config.gamma0.d) for k in keys):
        raise ValueError("disc bases were built for a different mass or standard metric")
    model = config.model(mu) if model is None else model
    Z = sewing_Z(config, mu) if Z is None else Z
    order = outs + ins
    fams = []
    for i in order:
        polys = [transport(P, config.discs[i]) for P in spaces[i].family]
        _check_family_support(config, i, polys, model)
        fams.append(polys)
    T = Z * expectation_tensor(model, fams) if fams else np.array(Z, dtype=complex)
    mats = [spaces[i].basis.conj() for i in outs] + [spaces[i].basis for i in ins]
    T = _contract(T, mats)
    out_dims = tuple(spaces[i].dim for i in outs)
    in_dims = tuple(spaces[i].dim for i in ins)
    M = T.reshape(int(np.prod(out_dims)), int(np.prod(in_dims)))
    return AmplitudeMatrix(M, in_dims, out_dims, Z)


def _weight_data(config: DiscConfiguration, mu: float, lam: np.ndarray, model0: GaussianFieldModel):
    """Diagonal ``G = (lambda - 1) mu m0`` and the Wick constant ``tr(G C0)/2``."""
    G = (lam - 1.0) * mu * config.ops("gamma0").m
    supp = np.flatnonzero(G)
    half_trace = 0.5 * float(np.sum(G[supp] * model0.diag_cov(supp))) if supp.size else 0.0
    return G, half_trace


def one_disc_representation(config: DiscConfiguration, mu: float, F: dict, space: DiscSpace) -> np.ndarray:
    """Coordinates of ``nu(prod Phi((J_i F_i)_lambda) exp(-:phi^2:(lambda mu - mu)/2))``.

    The configuration has in-discs and the single standard out-disc; the
    result lives in ``space`` (the standard unit-disc space).
    """
    _require_single(config, "out")
    lam = config.lam()
    model0 = config.model(mu, "gamma0")
    model = config.model(mu)
    if np.max(np.abs(lam[config.mesh.log_radius >= -1e-12] - 1.0)) > 1e-12:
        raise ValueError("metric differs from the standard metric near the out-disc")
    G, half_trace = _weight_data(config, mu, lam, model0)
    loads = [transport(P, config.discs[i]).evaluate(model) for i, P in sorted(F.items())]
    X = WickPolynomial.constant(1.0)
    for P in loads:
        X = X * P
    refl = [reflect_polynomial(P) for P in space.family]
    vals = expectation_tensor(model0, [refl, [X]], weight=G, log_factor=half_trace)[:, 0]
    return space.basis.conj().T @ vals


def one_disc_adjoint_representation(config: DiscConfiguration, mu: float, F: dict,
                                    space: DiscSpace) -> np.ndarray:
    """Coordinates of ``nu(Theta exp(-:phi^2:(lambda mu - mu)/2) prod Phi((J'_i Theta F_i)_lambda))``."""
    _require_single(config, "in")
    lam = config.lam()
    if np.max(np.abs(lam[config.mesh.log_radius <= 1e-12] - 1.0)) > 1e-12:
        raise ValueError("metric differs from the standard metric near the in-disc")
    model0 = config.model(mu, "gamma0")
    model = config.model(mu)
    G, half_trace = _weight_data(config, mu, lam, model0)
    Y = WickPolynomial.constant(1.0)
    for i, P in sorted(F.items()):
        Y = Y * transport(P, config.discs[i]).evaluate(model)
    # (e_k, nu(Theta Y e^{-V})) = conj(sum_a W_ak <F_a Y e^{-V}>)
    vals = expectation_tensor(model0, [list(space.family), [Y]], weight=G, log_factor=half_trace)[:, 0]
    return (space.basis.T @ vals).conj()


def _require_single(config: DiscConfiguration, side: str):
    idx = config.out_discs if side == "out" else config.in_discs
    std = D0_OUT if side == "out" else D0
    if len(idx) != 1:
        raise ValueError(f"configuration needs exactly one {side}-disc")
    D = config.discs[idx[0]]
    if not (D.shape == std.shape and D.center == 0 and D.radius == 1.0 and D.twist == 0.0):
        raise ValueError(f"the {side}-disc must be the standard disc with identity parametrization")


def sewing_check(config: DiscConfiguration, mu: float, spaces: dict, tol: float = 1e-10) -> dict:
    """Compare ``A^{I'1}_{gamma2} A^{1I}_{gamma1}`` with ``A^{I'I}_{gamma}``.

    In-discs must lie in the unit disc and out-discs outside it, and
    ``gamma = gamma0`` on the unit circle.  The intermediate space is the span
    of the one-disc representations of the in-basis; each factor is computed
    from its defining expectation in its own model.
    """
    mesh = config.mesh
    lr = mesh.log_radius
    lam = config.lam()
    ring = np.abs(lr) < 1e-12
    if np.max(np.abs(lam[ring] - 1.0)) > 1e-12:
        raise ValueError("metric must agree with the standard metric on the unit circle")
    for i in config.in_discs:
        if np.any(lr[config.disc_vertices(i, 2)] >= 0):
            raise ValueError(f"in-disc {i} is not inside the unit disc")
    for i in config.out_discs:
        if np.any(lr[config.disc_vertices(i, 2)] <= 0):
            raise ValueError(f"out-disc {i} is not outside the unit disc")

    gamma1 = SplitMetric(config.gamma, config.gamma0, 1.0)
    gamma2 = SplitMetric(config.gamma0, config.gamma, 1.0)
    ops1, ops2 = assemble(gamma1, mesh), assemble(gamma2, mesh)
    m0 = config.ops("gamma0").m
    lam1, lam2 = ops1.m / m0, ops2.m / m0
    if np.max(np.abs((lam1 - 1) + (lam2 - 1) - (lam - 1))) > 1e-12:
        raise ValueError("split metrics do not add up to the full metric")
    model0 = config.model(mu, "gamma0")
    model = config.model(mu)
    model1 = GaussianFieldModel.from_ops(ops1, mu, "gamma1")
    model2 = GaussianFieldModel.from_ops(ops2, mu, "gamma2")
    Z = sewing_Z(config, mu)
    Z1 = float(sewing_constant(model0, lam1)["Z"])
    Z2 = float(sewing_constant(model0, lam2)["Z"])

    direct = amplitude_matrix(config, mu, spaces, Z=Z, model=model)

    ins, outs = config.in_discs, config.out_discs
    G1, half1 = _weight_data(config, mu, lam1, model0)
    mirror = mesh.mirror
    # in-basis tensors as polynomials with gamma1 loads
    in_fams = [[transport(P, config.discs[i]).evaluate(model1) for P in spaces[i].family] for i in ins]
    in_basis = [spaces[i].basis for i in ins]
    Xs = []
    for combo in itertools.product(*in_fams):
        X = WickPolynomial.constant(1.0)
        for P in combo:
            X = X * P
        Xs.append(X)
    W_in = _kron_all(in_basis)  # family tensor index -> in-basis index
    refl = [reflect_polynomial(X, mesh) for X in Xs]
    # Gram of the one-disc representations: <Theta X_a X_b>_{gamma0} with both weights
    K_fam = expectation_tensor(model0, [refl, Xs], weight=G1[mirror] + G1, log_factor=2 * half1)
    K = W_in.conj().T @ K_fam @ W_in
    inter = hilbert_space(K, tol)
    U = W_in @ inter.basis  # family coefficients of the intermediate orthonormal basis

    # A1: (u_k, A^{1I} e_a) = Z1 <Theta X_k prod J E_a>_{gamma1}
    in_polys1 = [[transport(P, config.discs[i]) for P in spaces[i].family] for i in ins]
    T1 = expectation_tensor(model1, [refl] + in_polys1, weight=G1[mirror], log_factor=half1)
    T1 = _contract(T1, [np.eye(len(refl))] + in_basis).reshape(len(refl), -1)
    A1 = Z1 * (U.conj().T @ T1)

    # A2: (e'_b, A^{I'1} u_k) = Z2 <prod J' Theta E'_b X_k>_{gamma2}
    out_polys2 = [[transport(P, config.discs[i]) for P in spaces[i].family] for i in outs]
    T2 = expectation_tensor(model2, out_polys2 + [Xs], weight=G1, log_factor=half1)
    T2 = _contract(T2, [spaces[i].basis.conj() for i in outs] + [np.eye(len(Xs))])
    T2 = T2.reshape(-1, len(Xs))
    A2 = Z2 * (T2 @ U)

    product = A2 @ A1
    scale = max(np.linalg.norm(direct.matrix), 1e-300)
    res = float(np.linalg.norm(product - direct.matrix) / scale)
    sv = np.linalg.svd(product, compute_uv=False) if product.size else np.zeros(0)
    return {"residual": res, "direct": direct, "A1": A1, "A2": A2, "product": product,
            "Z": Z, "Z1": Z1, "Z2": Z2, "intermediate_dim": inter.dim,
            "trace_norm": float(np.sum(sv)), "singular_values": sv}


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for M in mats:
        out = np.kron(out, M)
    return out


def class_independence_check(config: DiscConfiguration, mu: float, i: int, F: dict,
                             null_load: np.ndarray | None = None, check_mu: bool = True) -> dict:
    """Change the in-disc polynomial at disc ``i`` by a null vector and compare expectations.

    Without ``null_load`` the null vector is ``phi(h) - phi(e_C h)`` for the
    first factor ``h`` of ``F[i]``, with ``e_C`` the projection onto the
    disc's boundary layer in the disc's own model.  Also reports the
    Cauchy-Schwarz bound ``||rest||_2 ||E_C n||_2`` on the change.
    """
    model = config.model(mu)
    model_i = config.model(mu, i)
    D = config.discs[i]
    inside = config.disc_vertices(i, 0)
    interior, layer = boundary_layer(config.mesh, inside)
    polys = {k: transport(P, config.discs[k]).evaluate(model) for k, P in F.items()}
    if null_load is None:
        first = next(h for t in polys[i].terms for b in t.blocks for h in b.factors)
        null_load = first - model_i.project(layer.indices, first)
    null = WickPolynomial.monomial(np.asarray(null_load, dtype=float))
    if not np.all(np.isin(np.flatnonzero(null_load), inside)):
        raise ValueError("null vector is not supported in the disc")
    rest = WickPolynomial.constant(1.0)
    for k, P in sorted(polys.items()):
        if k != i:
            rest = rest * P
    base = expectation(model, rest, polys[i])
    shifted = expectation(model, rest, polys[i] + null)
    cond_norm = l2_norm(model_i, conditional_expectation(model_i, layer, null))
    bound = l2_norm(model, rest) * cond_norm
    scale = max(abs(base), l2_norm(model, rest) * l2_norm(model, polys[i]), 1e-300)
    out = {"residual": abs(shifted - base) / scale, "change": abs(shifted - base), "bound": bound,
           "null_norm": cond_norm, "disc": D.to_dict()}
    if check_mu:
        out["mu_ok"] = choose_mu(config, mu_start=mu, max_steps=0)["ok"]
    return out


def choose_mu(config: DiscConfiguration, mu_start: float = 1.0, factor: float = 10.0, p: float = 2.0,
              max_steps: int = 6) -> dict:
    """Raise ``mu`` until ``||e_{D'_{i++}} e_{D_{i+}}|| <= 1/sqrt(n p - 1)`` for every disc."""
    n = max(len(config.discs), 1)
    target = 1.0 / np.sqrt(max(n * p - 1.0, 1e-300))
    mu = float(mu_start)
    history = []
    for step in range(max_steps + 1):
        worst = 0.0
        for i in range(len(config.discs)):
            model = config.model(mu, i)
            inner = NodeRegion(config.disc_vertices(i, 1))
            far = np.setdiff1d(np.arange(config.mesh.n_vertices), config.disc_vertices(i, 2))
            # keep one vertex of clearance on coarse meshes
            near = np.flatnonzero(config.mesh.adjacency[inner.indices].sum(axis=0))
            far = np.setdiff1d(far, near)
            worst = max(worst, cross_projection_norms(model, inner, NodeRegion(far))["opNorm"])
        history.append((mu, worst))
        if worst <= target:
            return {"mu": mu, "norm": worst, "target": target, "ok": True, "history": history}
        if step < max_steps:
            mu *= factor
    return {"mu": mu, "norm": worst, "target": target, "ok": False, "history": history}


def bump_family(centers: Sequence[complex], width: float, degree: int = 2) -> list[WickPolynomial]:
    """``1``, ``phi(b_i)`` and products up to ``degree`` of bumps in the unit disc."""
    from .gaussian import Bump

    bumps = [Bump(c, width) for c in centers]
    for b in bumps:
        if abs(b.center) + b.width >= 1.0:
            raise ValueError("bump support must lie inside the unit disc")
    fam = [WickPolynomial.constant(1.0)]
    for k in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(bumps, k):
            fam.append(WickPolynomial.monomial(*combo))
    return fam
