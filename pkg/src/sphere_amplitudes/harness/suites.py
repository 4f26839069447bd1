"""Verification suites: each returns a :class:`Report` of pass/fail records.

All randomness flows from one ``numpy`` generator seeded by the scenario.
"""

from __future__ import annotations

import numpy as np

from .. import geometry as geo
from .. import massless as ml
from ..expressions import as_expression
from ..gaussian import (Bump, WickPolynomial, expectation, hilbert_space, inner_product_matrix, markov_check,
                        rp_gram)
from ..massive import (D0_OUT, amplitude_matrix, blend_metric, bump_family, choose_mu, class_independence_check,
                       disc_space, one_disc_representation, sewing_check, standard_space)
from ..mesh import (GaussianFieldModel, NodeRegion, assemble, build_mesh, check_separator, laplace_eigenvalues,
                    log_kernel_inverse_check, metric_rescaling_check, mu_scan, projection_eA, region_disc,
                    region_ring)
from ..perturbation import (conditional_metric_independence, det2_partition, locality_check,
                            one_mode_model, perturbed_covariance_check, rn_mass_change, wick_square_l2)
from .config import Scenario
from .report import Check, Report


class ValidationError(ValueError):
    """Scenario preconditions fail before any check runs."""


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _ring_t(mesh, target: float) -> float:
    return float(mesh.t[np.argmin(np.abs(mesh.t - target))])


# --------------------------------------------------------------------------
# geometry

def reflection_invariance_checks(rng, tol: float = 1e-12, d: float = 0.25) -> list[Check]:
    radii = np.exp(rng.uniform(-3, 3, 200))
    z = radii * np.exp(2j * np.pi * rng.uniform(size=200))
    out = []
    for name, metric in [("round", geo.RoundMetric()), ("cylindrical", geo.CylindricalMetric()),
                         ("standard-massive", geo.standard_metric("massive", d)),
                         ("standard-flat", geo.standard_metric("flat", d))]:
        r = geo.check_reflection_invariance(metric, z, tol)
        out.append(Check(f"reflection invariance {name}", "reflection-invariant metrics",
                         r["maxError"], 0.0, r["maxError"], tol))
    r = geo.check_reflection_invariance(geo.FlatMetric(), z, tol)
    out.append(Check.boolean("flat metric is not reflection invariant", "reflection-invariant metrics",
                             not r["pass"], r["maxError"]))
    return out


def distance_ratio_checks(tol: float = 0.01) -> list[Check]:
    out = []
    cases = [(geo.FlatMetric(), "0.4*exp(-abs(z)**2)", 0.3 + 0.2j),
             (geo.RoundMetric(), "0.3*real(z)+0.2*imag(z)**2", 0.5 - 0.1j)]
    for base, sigma, x in cases:
        r = geo.distance_ratio_limit(base, sigma, x)
        out.append(Check(f"distance ratio limit sigma={sigma} at {x}", "metric distance under conformal change",
                         r["limit"], r["expected"], r["relative_error"], tol))
    return out


def suite_geometry(scn: Scenario, rng) -> Report:
    rep = Report("geometry", scn.seed)
    rep.extend(reflection_invariance_checks(rng, scn.tol("reflection", 1e-12), scn.get("d", 0.25)))
    worst = 0.0
    for _ in range(20):
        a, b, c, d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        m = geo.MobiusMap(a, b, c, d, False)
        z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        worst = max(worst, float(np.max(np.abs(m.inverse()(m(z)) - z) / (1 + np.abs(z)))))
    rep.add(Check("Möbius inverse round trip", "Möbius maps", worst, 0.0, worst, scn.tol("mobius", 1e-10)))
    zz = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    gap = float(np.max(np.abs(geo.THETA(geo.THETA(zz)) - zz)))
    rep.add(Check("reflection is an involution", "radial reflection", gap, 0.0, gap, 1e-14))
    worst = 0.0
    discs = [geo.DiscSpec("interior", 0.3 + 0.1j, 0.4, "in", 0.7), geo.DiscSpec("interior", 2 - 1j, 0.5, "out", 0.2),
             geo.DiscSpec("exterior", 0.1, 3.0, "out", -0.4), geo.DiscSpec("exterior", 0.0, 2.0, "in", 0.0)]
    ang = np.exp(2j * np.pi * np.arange(64) / 64)
    for D in discs:
        edge = D.center + D.radius * ang
        worst = max(worst, float(np.max(np.abs(np.abs(D.parametrization()(edge)) - 1.0))))
    rep.add(Check("disc parametrizations map the boundary to the unit circle", "disc parametrizations",
                  worst, 0.0, worst, 1e-12))
    rep.extend(distance_ratio_checks(scn.tol("distance_ratio", 0.01)))
    return rep


# --------------------------------------------------------------------------
# mesh

def rescaling_checks(rng, resolution: int = 48, n: int = 20, tol: float = 1e-10, d: float = 0.25) -> list[Check]:
    mesh = build_mesh(resolution, d)
    metric = geo.standard_metric("massive", d)
    worst = 0.0
    for _ in range(n):
        a, b, c = rng.uniform(-1, 1, 3)
        log_lam = f"{a:.6f}*cos({1 + abs(b):.6f}*real(z))/(1+abs(z)**2) + {c:.6f}*tanh(imag(z))"
        f = rng.standard_normal(mesh.n_vertices)
        mu = float(rng.uniform(0.5, 5.0))
        worst = max(worst, metric_rescaling_check(mesh, metric, log_lam, mu, f))
    const = metric_rescaling_check(mesh, metric, float(np.log(2.0)), 1.0, rng.standard_normal(mesh.n_vertices))
    return [Check(f"metric rescaling identity, {n} random (lambda, f)", "mass rescaling unitary", worst, 0.0,
                  worst, tol),
            Check("metric rescaling identity, lambda = 2", "mass rescaling unitary", const, 0.0, const, tol)]


def suite_mesh_spectral(scn: Scenario, rng) -> Report:
    rep = Report("mesh-spectral", scn.seed)
    d = scn.get("d", 0.25)
    res = scn.get("resolution", 48)
    mesh = build_mesh(res, d)
    ops_round = assemble(geo.RoundMetric(), mesh)
    ops_std = assemble(geo.standard_metric("massive", d), mesh)
    gap = float(abs(ops_round.L - ops_std.L).max())
    rep.add(Check("stiffness is metric independent", "conformal invariance of the Dirichlet form", gap, 0.0, gap,
                  1e-14))
    rep.extend(rescaling_checks(rng, res, 20, scn.tol("rescaling", 1e-10), d))
    eig = laplace_eigenvalues(ops_round, k=9)
    exact = np.array([0, 2, 2, 2, 6, 6, 6, 6, 6], dtype=float)
    err = float(np.max(np.abs(eig - exact) / np.maximum(exact, 1.0)))
    rep.add(Check("round sphere spectrum 0, 2 (x3), 6 (x5)", "Laplacian of the round metric", float(eig[1]), 2.0,
                  err, scn.tol("spectrum", 0.02)))
    # log-kernel fundamental solution on the flat zone of the standard metric
    mesh64 = build_mesh(64, d)
    ops_flat = assemble(geo.standard_metric("flat", d), mesh64)

    def bump(c):
        return Bump(c, 0.25, normalize="chart").nodal(mesh64)

    lk = log_kernel_inverse_check(ops_flat, bump(0.3) - bump(-0.3), bump(0.5) - bump(-0.5j))
    rep.add(Check("log kernel inverts the Laplacian (resolution 64)", "fundamental solution in the plane",
                  lk["residual"], 0.0, lk["residual"], scn.tol("log_kernel", 0.05)))
    rep.add(Check("grounded solve pairing equals double log-kernel quadrature", "fundamental solution in the plane",
                  lk["pairing_solve"], lk["pairing_quadrature"], lk["pairing_relative_gap"],
                  scn.tol("log_kernel_pairing", 0.01)))
    # projection laws on a small mesh
    small = build_mesh(16, d)
    model = GaussianFieldModel.from_ops(assemble(geo.standard_metric("massive", d), small), 1.0)
    A = region_disc(small, _ring_t(small, -0.5)).indices
    B = region_disc(small, _ring_t(small, 0.2)).indices
    eA, eB = projection_eA(model, A), projection_eA(model, B)
    law = float(np.max(np.abs(eA @ eB - eA)))
    rep.add(Check("e_A e_B = e_A for A inside B", "projections onto regions", law, 0.0, law, 1e-10))
    # operator norm in H^-1 (inner product h^T Q^-1 h): ||Q^{-1/2} e_A Q^{1/2}||
    Q = model.Q.toarray()
    w, U = np.linalg.eigh(Q)
    Qh, Qih = (U * np.sqrt(w)) @ U.T, (U / np.sqrt(w)) @ U.T
    nrm = float(np.linalg.norm(Qih @ eA @ Qh, 2))
    rep.add(Check("||e_A|| <= 1", "projections onto regions", nrm, 1.0, nrm, 1.0 + 1e-10))
    return rep


# --------------------------------------------------------------------------
# Markov property and reflection positivity

def _random_poly(rng, loads, degree: int, wick: bool = True) -> WickPolynomial:
    """Random combination of products of ``loads`` columns up to ``degree``.

    With ``wick`` some products are Wick ordered against the evaluation model.
    """
    P = WickPolynomial.constant(complex(rng.standard_normal()))
    for k in range(1, degree + 1):
        idx = rng.choice(loads.shape[1], size=k)
        coef = complex(rng.standard_normal(), rng.standard_normal())
        if wick and rng.uniform() < 0.5:
            P = P + WickPolynomial.wick(*[loads[:, i] for i in idx], coef=coef)
        else:
            P = P + WickPolynomial.monomial(*[loads[:, i] for i in idx], coef=coef)
    return P


def _random_loads(rng, n: int, support: np.ndarray, count: int, spread: int = 4) -> np.ndarray:
    H = np.zeros((n, count))
    for j in range(count):
        idx = rng.choice(support, size=min(spread, support.size), replace=False)
        H[idx, j] = rng.standard_normal(idx.size)
    return H


def markov_checks(rng, resolution: int = 24, d: float = 0.25, mu: float = 1.0, tol: float = 1e-9,
                  separator_t: float | None = None, inside_t: float | None = None) -> list[Check]:
    mesh = build_mesh(resolution, d)
    t = _ring_t(mesh, 0.3 if separator_t is None else separator_t)
    sep = region_ring(mesh, t, "separator")
    lr = mesh.log_radius
    inside = NodeRegion(np.flatnonzero(lr < (t if inside_t is None else inside_t) - 1e-12), "inside")
    outside = NodeRegion(np.flatnonzero(lr > t + 1e-12), "outside")
    out = []
    for name, metric in [("round", geo.RoundMetric()), ("standard", geo.standard_metric("massive", d))]:
        model = GaussianFieldModel.from_ops(assemble(metric, mesh), mu)
        H = _random_loads(rng, model.n, np.arange(model.n), 6)
        polys = [_random_poly(rng, H, 2) for _ in range(4)]
        r = markov_check(model, inside, sep, outside, polys)
        out.append(Check(f"Markov property across a ring, {name} metric", "Markov property of the free field",
                         r["residual"], 0.0, r["residual"], tol))
    # conditional expectation on a closed region does not see the metric outside
    base = geo.standard_metric("massive", d)
    r0 = float(np.exp(t) ** 2) * 1.05
    other = geo.ScaledMetric(base, f"0.5*tanh(maximum(abs(z)**2 - {r0:.8f}, 0))", 0.5)
    m1 = GaussianFieldModel.from_ops(assemble(base, mesh), mu)
    m2 = GaussianFieldModel.from_ops(assemble(other, mesh), mu)
    omega = NodeRegion(np.flatnonzero(lr < t - 1e-12), "omega")
    closed = np.flatnonzero(lr <= t + 1e-12)
    H = _random_loads(rng, m1.n, closed, 6)
    # plain products: Wick ordering against each model would change the random variable
    polys = [_random_poly(rng, H, 2, wick=False) for _ in range(4)]
    r = conditional_metric_independence(m1, m2, omega, sep, polys)
    out.append(Check("boundary conditional expectation ignores the metric outside", "metric independence of "
                     "conditional expectations", r["residual"], 0.0, r["residual"], tol))
    return out


def rp_checks(rng, resolution: int = 16, d: float = 0.25, mu: float = 1.0, n_families: int = 50,
              tol: float = 1e-10) -> list[Check]:
    mesh = build_mesh(resolution, d)
    model = GaussianFieldModel.from_ops(assemble(geo.standard_metric("massive", d), mesh), mu)
    disc = np.flatnonzero(mesh.log_radius <= 1e-12)
    worst_ratio, worst_eq, worst_third = np.inf, 0.0, 0.0
    last = None
    for _ in range(n_families):
        H = _random_loads(rng, model.n, disc, 4)
        fam = [_random_poly(rng, H, 2) for _ in range(4)]
        r = rp_gram(model, fam)
        worst_ratio = min(worst_ratio, r["min_eig"] / max(r["norm"], 1e-300))
        worst_eq = max(worst_eq, r["equality_residual"])
        worst_third = max(worst_third, r["third_construction_residual"])
        last = (fam, r["gram"])
    out = [Check(f"reflection positivity over {n_families} random families (min eig / ||G||)",
                 "reflection positivity", worst_ratio, 0.0, worst_ratio, -tol, mode="min"),
           Check("reflection form equals the boundary conditional norm", "reflection positivity",
                 worst_eq, 0.0, worst_eq, 1e-9),
           Check("reflection Gram equals the boundary L2 Gram", "Hilbert space constructions",
                 worst_third, 0.0, worst_third, 1e-9)]
    fam, G = last
    space = hilbert_space(G, 1e-10)
    nu = space.nu(np.eye(len(fam)))
    rep = float(np.max(np.abs(nu.conj().T @ nu - G)) / max(np.max(np.abs(G)), 1e-300))
    out.append(Check("quotient map reproduces the Gram", "Hilbert space constructions", rep, 0.0, rep, 1e-10))
    # massless reflection positivity
    worst_flat, worst_std = np.inf, 0.0
    for _ in range(n_families):
        fam = [_random_symbol(rng, 0.6) for _ in range(4)]
        r = ml.rp_gram_flat(fam, d=0.25)
        worst_flat = min(worst_flat, r["min_eig"] / max(r["norm"], 1e-300))
        worst_std = max(worst_std, r["standard_residual"])
    out.append(Check(f"massless reflection positivity over {n_families} random families (min eig / ||G||)",
                     "massless reflection positivity", worst_flat, 0.0, worst_flat, -tol, mode="min"))
    out.append(Check("weighted flat form equals the standard-metric form", "massless reflection positivity",
                     worst_std, 0.0, worst_std, 1e-12))
    return out


def _random_symbol(rng, radius: float, n_terms: int = 2, max_charge: int = 2) -> ml.Symbol:
    """Random neutral symbol with points in ``|z| < radius``."""
    S = ml.Symbol()
    for _ in range(n_terms):
        k = int(rng.integers(1, max_charge + 1))
        zs = radius * np.sqrt(rng.uniform(0.05, 1, 2)) * np.exp(2j * np.pi * rng.uniform(size=2))
        coef = complex(rng.standard_normal(), rng.standard_normal())
        S = S + ml.Symbol.single([(k, zs[0]), (-k, zs[1])], coef)
    return S


def suite_markov_rp(scn: Scenario, rng) -> Report:
    d = scn.get("d", 0.25)
    res = scn.get("resolution", 24)
    sep_t, in_t = scn.get("separator_t"), scn.get("inside_t")
    mesh = build_mesh(res, d)
    # validate the separator before running anything
    if sep_t is not None or in_t is not None:
        t = _ring_t(mesh, 0.3 if sep_t is None else float(sep_t))
        lr = mesh.log_radius
        inside = NodeRegion(np.flatnonzero(lr < (t if in_t is None else float(in_t)) - 1e-12), "inside")
        outside = NodeRegion(np.flatnonzero(lr > t + 1e-12), "outside")
        try:
            check_separator(mesh, inside, region_ring(mesh, t, "separator"), outside)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
    rep = Report("markov-rp", scn.seed)
    rep.extend(markov_checks(rng, res, d, scn.get("mu", 1.0), scn.tol("markov", 1e-9), sep_t, in_t))
    rep.extend(rp_checks(rng, min(res, 16), d, scn.get("mu", 1.0), int(scn.get("families", 50)),
                         scn.tol("rp", 1e-10)))
    return rep


# --------------------------------------------------------------------------
# perturbation

def perturbation_checks(rng, resolution: int = 24, d: float = 0.25, mu: float = 1.0) -> list[Check]:
    mesh = build_mesh(resolution, d)
    model = GaussianFieldModel.from_ops(assemble(geo.standard_metric("massive", d), mesh), mu)
    lr = mesh.log_radius
    region = np.flatnonzero(lr < -0.2)
    g = np.zeros(model.n)
    g[region] = rng.uniform(-0.3, 0.8, region.size) * mu
    out = []
    r = wick_square_l2(model, g)
    out.append(Check("||V||_2 equals half the Hilbert-Schmidt norm of vC", "Wick square norm",
                     r["pairing"], r["hilbert_schmidt"], r["residual"], 1e-10))
    r = det2_partition(model, g)
    out.append(Check("partition integral equals det2(1 + vC)^(-1/2)", "regularized determinant",
                     r["partition"], r["predicted"], r["residual"], 1e-10))
    one = det2_partition(one_mode_model(), 1.0)
    ref = 2.0 ** -0.5 * np.exp(0.5)
    out.append(Check("one-mode partition (1+1)^(-1/2) e^(1/2)", "regularized determinant", one["partition"], ref,
                     _rel(one["partition"], ref), 1e-12))
    H = rng.standard_normal((model.n, 4)) * model.m[:, None]
    r = perturbed_covariance_check(model, g, H)
    out.append(Check("perturbed covariance: direct solve vs Woodbury", "perturbed Gaussian measure",
                     None, None, r["residual"], 1e-10))
    cover = NodeRegion(np.flatnonzero(lr < 0.0))
    r = locality_check(model, g, cover)
    out.append(Check("Wick square is measurable on a covering region", "locality of the interaction",
                     r["norm"], 0.0, r["residual"], 1e-10))
    r = rn_mass_change(model, 0.5)
    out.append(Check("L^q threshold for lambda = 0.5 matches 1/(1 - delta)", "mass change density",
                     r["threshold"], r["expected_threshold"], _rel(r["threshold"], r["expected_threshold"]), 0.02))
    out.append(Check("reweighted covariance equals the lambda mu model", "mass change density",
                     None, None, r["covariance_residual"], 1e-10))
    r2 = rn_mass_change(model, 2.0)
    out.append(Check.boolean("lambda >= 1 is integrable for every q", "mass change density", r2["all_admissible"]))
    return out


def suite_perturbation(scn: Scenario, rng) -> Report:
    rep = Report("perturbation", scn.seed)
    rep.extend(perturbation_checks(rng, scn.get("resolution", 24), scn.get("d", 0.25), scn.get("mu", 1.0)))
    return rep


# --------------------------------------------------------------------------
# massive amplitudes

SEWING_CONFIGS = {
    "centered": [geo.DiscSpec("interior", 0, float(np.exp(-1.2)), "in", 0.0),
                 geo.DiscSpec("exterior", 0, float(np.exp(1.2)), "out", 0.4)],
    "two-in-two-out": [geo.DiscSpec("interior", 0.4, 0.22, "in", 0.0), geo.DiscSpec("interior", -0.4j, 0.22, "in", 1.0),
                       geo.DiscSpec("interior", 5.0, 1.5, "out", 0.0),
                       geo.DiscSpec("interior", -5.0j, 1.5, "out", 0.5)],
    "off-center": [geo.DiscSpec("interior", 0.25 + 0.2j, 0.2, "in", 0.7),
                   geo.DiscSpec("exterior", 0.3, 3.5, "out", -0.3)],
}

SEWING_FAMILY = dict(centers=(0.3, -0.3j), width=0.5)
DOUBLED_CENTERS = (0.3, -0.3j, -0.3, 0.3j, 0.0)


def massive_sewing_checks(resolutions=(48, 64), d: float = 0.25, mu: float = 10.0, degree: int = 2,
                          tol: float = 1e-6, stability: float = 0.05, configs=None) -> tuple[list[Check], dict]:
    configs = SEWING_CONFIGS if configs is None else configs
    out, artifacts = [], {}
    g0 = geo.standard_metric("massive", d)
    fam = bump_family(SEWING_FAMILY["centers"], SEWING_FAMILY["width"], degree)
    small = bump_family(SEWING_FAMILY["centers"], SEWING_FAMILY["width"], 1)
    doubled = bump_family(DOUBLED_CENTERS, SEWING_FAMILY["width"], 1)
    for res in resolutions:
        mesh = build_mesh(res, d)
        for name, discs in configs.items():
            cfg = blend_metric(mesh, discs, g0, label=name)
            cfg.validate()
            spaces = {i: disc_space(cfg, i, mu, fam) for i in range(len(discs))}
            r = sewing_check(cfg, mu, spaces)
            out.append(Check(f"sewing {name} resolution {res}", "massive sewing", r["trace_norm"],
                             r["direct"].trace_norm, r["residual"], tol))
            artifacts[f"singular_values/{name}/{res}"] = [float(s) for s in r["singular_values"]]
            norms = []
            for f in (small, doubled):
                sp = {i: disc_space(cfg, i, mu, f) for i in range(len(discs))}
                norms.append(amplitude_matrix(cfg, mu, sp).trace_norm)
            out.append(Check(f"trace norm stable under basis doubling, {name} resolution {res}",
                             "trace-class amplitudes", norms[1], norms[0], _rel(norms[1], norms[0]), stability))
    return out, artifacts


def one_disc_checks(resolution: int = 32, d: float = 0.25, mu: float = 10.0) -> list[Check]:
    mesh = build_mesh(resolution, d)
    g0 = geo.standard_metric("massive", d)
    discs = [geo.DiscSpec("interior", 0, float(np.exp(-1.2)), "in", 0.0), D0_OUT]
    cfg = blend_metric(mesh, discs, g0, label="one-disc")
    fam = bump_family(SEWING_FAMILY["centers"], SEWING_FAMILY["width"], 2)
    spaces = {0: disc_space(cfg, 0, mu, fam), 1: standard_space(cfg, mu, fam)}
    A = amplitude_matrix(cfg, mu, spaces).matrix
    worst = 0.0
    basis = spaces[0].basis
    for k in range(basis.shape[1]):
        F = {0: WickPolynomial.constant(0.0)}
        P = WickPolynomial.constant(0.0)
        for c, Q in zip(basis[:, k], fam):
            P = P + Q.scale(c)
        F[0] = P
        col = one_disc_representation(cfg, mu, F, spaces[1])
        worst = max(worst, float(np.max(np.abs(col - A[:, k]))))
    scale = float(np.max(np.abs(A)))
    out = [Check("one-disc representation matches amplitude columns", "one-disc amplitudes", worst, 0.0,
                 worst / scale, 1e-9)]
    F = {0: fam[1] * fam[2], 1: fam[1]}
    r = class_independence_check(cfg, mu, 0, F, check_mu=False)
    out.append(Check("amplitude ignores null vectors of the disc space", "amplitudes on equivalence classes",
                     r["change"], 0.0, r["residual"], 1e-10))
    cm = choose_mu(cfg, mu_start=1.0)
    out.append(Check("mass large enough for the projection bound", "choice of mass", cm["norm"], cm["target"],
                     cm["norm"], cm["target"]))
    return out


def suite_massive_sewing(scn: Scenario, rng) -> Report:
    rep = Report("massive-sewing", scn.seed)
    res = scn.resolution
    resolutions = (res,) if res is not None else tuple(scn.params.get("resolutions", (48, 64)))
    checks, arts = massive_sewing_checks(resolutions, scn.get("d", 0.25), scn.get("mu", 10.0),
                                         scn.get("degree", 2), scn.tol("sewing", 1e-6),
                                         scn.tol("trace_stability", 0.05))
    rep.extend(checks)
    rep.artifacts.update(arts)
    rep.extend(one_disc_checks(32, scn.get("d", 0.25), scn.get("mu", 10.0)))
    return rep


# --------------------------------------------------------------------------
# massless

def closed_form_checks(rng, n_cases: int = 100, tol: float = 1e-12) -> list[Check]:
    out = []
    nn = ml.eval_correlator([(1, 0), (1, 1)])
    out.append(Check("non-neutral correlator vanishes", "closed-form correlators", nn, 0.0, abs(nn), 0.0 + 1e-300))
    v = ml.eval_correlator([(1, 0), (-1, 2)])
    ref = 2.0 ** (-1 / (2 * np.pi))
    out.append(Check("[1,0,-1,2] = 2^(-1/2pi)", "closed-form correlators", v, ref, _rel(v, ref), 1e-14))
    v = ml.eval_correlator([(1, 0), (1, 1), (-2, 2)])
    ref = 2.0 ** (-1 / np.pi)
    out.append(Check("[1,0,1,1,-2,2] = 2^(-1/pi)", "closed-form correlators", v, ref, _rel(v, ref), 1e-14))
    g = geo.standard_metric("flat", 0.3)
    worst_cov, worst_flat, worst_conf = 0.0, 0.0, 0.0
    for _ in range(n_cases):
        F = _random_symbol(rng, 2.0, n_terms=2, max_charge=3)
        a, b, c, dd = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        r = ml.mobius_covariance(F, geo.MobiusMap(a, b, c, dd, False), g)
        worst_cov = max(worst_cov, r["covariance_residual"])
        worst_flat = max(worst_flat, r["flat_residual"])
        p = rng.standard_normal(3)
        sigma = as_expression(f"{p[0]:.6f}*cos(real(z)) + {p[1]:.6f}*sin(imag(z)) + {p[2]:.6f}*tanh(abs(z))")
        r = ml.conformal_change_check(F, g, lambda z, s=sigma: s.real(z))
        worst_conf = max(worst_conf, r["residual"])
    out.append(Check(f"Möbius covariance, {n_cases} random cases", "Möbius covariance", worst_cov, 0.0,
                     worst_cov, tol))
    out.append(Check(f"flat Jacobian form of Möbius covariance, {n_cases} random cases", "Möbius covariance",
                     worst_flat, 0.0, worst_flat, tol))
    out.append(Check(f"conformal change of the metric, {n_cases} random cases", "conformal anomaly",
                     worst_conf, 0.0, worst_conf, tol))
    return out


MASSLESS_CONFIGS = {
    "single": ([geo.DiscSpec("interior", 0.1, 0.3, "in", 0.4)], [geo.DiscSpec("exterior", -0.2, 4.0, "out", 0.3)]),
    "two-in-one-out": ([geo.DiscSpec("interior", 0.4, 0.22, "in"), geo.DiscSpec("interior", -0.4j, 0.22, "in", 0.3)],
                       [geo.DiscSpec("interior", 4.0 + 1j, 1.2, "out", -0.5)]),
    "two-in-two-out": ([geo.DiscSpec("interior", 0.4, 0.22, "in"), geo.DiscSpec("interior", -0.4j, 0.22, "in", 0.3)],
                       [geo.DiscSpec("interior", 5, 1.5, "out"), geo.DiscSpec("interior", -5j, 1.5, "out", 1.0)]),
}


def _random_tuple(rng, n_in: int, n_out: int):
    """Random symbols in the flat zone with total charge zero across all discs."""
    fi = [_random_symbol(rng, 0.5, 1, 2) for _ in range(n_in)]
    fo = [_random_symbol(rng, 0.5, 1, 2) for _ in range(n_out)]
    k = int(rng.integers(1, 3))
    z1, z2 = 0.3 * np.exp(2j * np.pi * rng.uniform(size=2))
    # an in-charge k balanced by an out-charge k (reflection negates it)
    fi[0] = fi[0] * ml.Symbol.single([(k, z1)])
    fo[0] = fo[0] * ml.Symbol.single([(k, z2)])
    return fi, fo


def massless_sewing_checks(rng, tol: float = 1e-10) -> list[Check]:
    g0 = ml.flat_standard_metric(0.2)
    out = []
    for name, (ins, outs) in MASSLESS_CONFIGS.items():
        fi, fo = _random_tuple(rng, len(ins), len(outs))
        r = ml.sewing_check_massless(g0, ins, outs, fi, fo)
        out.append(Check(f"massless sewing {name}", "massless sewing", abs(r["sewn"]), abs(r["amplitude"]),
                         r["residual"], tol))
    # empty out side: the covector of the constant symbol
    ins, _ = MASSLESS_CONFIGS["single"]
    F = _random_symbol(rng, 0.5, 2, 2)
    cfg = ml.flat_configuration(list(ins) + [geo.DiscSpec("exterior", 0.0, 1.0, "out")], g0)
    X = ml.one_disc_vector(cfg, {0: F})
    lhs = ml.standard_inner(ml.Symbol.one(), X, g0)
    rhs = ml.amplitude_form(ml.flat_configuration(ins, g0), {0: F})
    out.append(Check("pairing with the constant symbol gives the in-only amplitude", "massless sewing",
                     abs(lhs), abs(rhs), _rel(lhs, rhs), tol))
    return out


def massless_amplitude_checks(rng, tol: float = 1e-12) -> list[Check]:
    out = []
    ins, outs = MASSLESS_CONFIGS["two-in-two-out"]
    discs = list(outs) + list(ins)
    worst_gamma, worst_d = 0.0, 0.0
    for _ in range(5):
        fi, fo = _random_tuple(rng, 2, 2)
        F = {0: fo[0], 1: fo[1], 2: fi[0], 3: fi[1]}
        a = ml.amplitude_form(ml.flat_configuration(discs, ml.flat_standard_metric(0.2)), F)
        b = ml.amplitude_form(ml.flat_configuration(discs, ml.flat_standard_metric(0.2), collar=0.3,
                                                    background=geo.RoundMetric()), F)
        c = ml.amplitude_form(ml.flat_configuration(discs, ml.flat_standard_metric(0.1)), F)
        worst_gamma = max(worst_gamma, _rel(b, a))
        worst_d = max(worst_d, _rel(c, a))
    out.append(Check("amplitude independent of the admissible metric", "massless amplitudes", worst_gamma, 0.0,
                     worst_gamma, tol))
    out.append(Check("amplitude independent of d", "massless amplitudes", worst_d, 0.0, worst_d, tol))
    # one-disc vector against amplitudes with the standard out-disc
    g0 = ml.flat_standard_metric(0.2)
    cfg = ml.flat_configuration([ins[0], ins[1], geo.DiscSpec("exterior", 0.0, 1.0, "out")], g0)
    family = [_random_symbol(rng, 0.6, 2, 2) for _ in range(4)]
    worst = 0.0
    for _ in range(5):
        fi, fo = _random_tuple(rng, 2, 1)
        F = {0: fi[0], 1: fi[1]}
        X = ml.one_disc_vector(cfg, F)
        for G in family + [fo[0]]:
            lhs = ml.standard_inner(G, X, g0)
            rhs = ml.amplitude_form(cfg, {**F, 2: G})
            worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    out.append(Check("one-disc vector reproduces amplitudes", "massless one-disc amplitudes", worst, 0.0, worst,
                     tol))
    # functoriality of the Möbius action
    F = _random_symbol(rng, 0.5, 3, 3)
    a = geo.MobiusMap(1.0, 0.2, 0.1j, 1.3, False)
    b = geo.MobiusMap(0.7, -0.1, 0.3, 1.1 + 0.2j, False)
    lhs = ml.tau_mobius(ml.tau_mobius(F, b), a)
    rhs = ml.tau_mobius(F, a.compose(b))
    gap = _symbol_gap(lhs, rhs)
    out.append(Check("tau_a tau_b = tau_(a b)", "Möbius action on symbols", gap, 0.0, gap, 1e-14))
    th, _ = ml.theta_maps(F)
    gap = _symbol_gap(ml.theta_maps(th)[0], F)
    out.append(Check("reflection squares to the identity on symbols", "reflection of symbols", gap, 0.0, gap, 1e-14))
    return out


def _symbol_gap(A: ml.Symbol, B: ml.Symbol) -> float:
    """Largest point or coefficient mismatch after matching sequences in order."""
    if len(A.terms) != len(B.terms):
        return float("inf")
    gap = 0.0
    for (Za, ca), (Zb, cb) in zip(A.terms.items(), B.terms.items()):
        if [k for k, _ in Za] != [k for k, _ in Zb]:
            return float("inf")
        gap = max(gap, abs(ca - cb), *(abs(za - zb) / max(1.0, abs(zb)) for (_, za), (_, zb) in zip(Za, Zb)))
    return float(gap)


def suite_massless_cft(scn: Scenario, rng) -> Report:
    rep = Report("massless-cft", scn.seed)
    rep.extend(closed_form_checks(rng, int(scn.get("cases", 100)), scn.tol("closed_form", 1e-12)))
    rep.extend(massless_amplitude_checks(rng, scn.tol("amplitude", 1e-12)))
    rep.extend(massless_sewing_checks(rng, scn.tol("sewing", 1e-10)))
    return rep


# --------------------------------------------------------------------------
# limit oracle and mu scan

def limit_oracle_checks(resolution: int = 96, tol: float = 1e-2) -> tuple[list[Check], dict]:
    out = []
    r = ml.massive_limit_oracle([(1, -0.35), (-1, 0.35)], resolution=resolution)
    out.append(Check(f"massive limit of a neutral pair (resolution {resolution})", "massless limit",
                     r["value"], r["reference"], r["relative_error"], tol))
    scaled = geo.ScaledMetric(ml.flat_standard_metric(0.1), 0.7, 0.7)
    r2 = ml.massive_limit_oracle([(1, -0.35), (-1, 0.35)], metric=scaled, resolution=resolution)
    ratio = r2["value"] / r["value"]
    ref = float(np.exp(-2 * 0.7 / (8 * np.pi)))
    out.append(Check("constant conformal factor reproduces the anomaly", "massless limit", ratio, ref,
                     _rel(ratio, ref), 0.02))
    nn = ml.non_neutral_divergence([(1, 0.2), (1, -0.2)], resolution=min(resolution, 48))
    out.append(Check.boolean("non-neutral exponent decreases as mu decreases", "massless limit", nn["monotone"],
                             nn["exponents"][-1]))
    out.append(Check("non-neutral exponent grows like 1/mu (log-log slope)", "massless limit", nn["slope"], 1.0,
                     abs(nn["slope"] - 1.0), 0.05))
    return out, {"oracle_rows": [{k: (v if not isinstance(v, np.floating) else float(v)) for k, v in row.items()
                                  if k != "by_mu"} for row in r["rows"]],
                 "non_neutral_exponents": nn["exponents"]}


def suite_limit_oracle(scn: Scenario, rng) -> Report:
    rep = Report("limit-oracle", scn.seed)
    checks, arts = limit_oracle_checks(scn.get("resolution", 96), scn.tol("oracle", 1e-2))
    rep.extend(checks)
    rep.artifacts.update(arts)
    return rep


def mu_scan_checks(resolution: int = 48, d: float = 0.25, decay: float = 0.4) -> tuple[list[Check], dict]:
    mesh = build_mesh(resolution, d)
    ops = assemble(geo.standard_metric("massive", d), mesh)
    k = int(np.argmin(np.abs(mesh.t)))
    r1, r2 = region_ring(mesh, mesh.t[k]), region_ring(mesh, mesh.t[k + 2])
    r = mu_scan(ops, r1, r2)
    # pass when the fitted slope is at most -decay
    out = [Check("minus the slope of log ||e_1 e_2|| against log mu", "decay of cross projections", r["slope"],
                 -0.5, -r["slope"], decay, mode="min"),
           Check.boolean("norm decreases from mu = 1e2 to 1e4", "decay of cross projections",
                         r["opNorms"][2] < r["opNorms"][0], r["opNorms"][2], r["opNorms"][0])]
    return out, {"hs_curve": {"mus": r["mus"], "hsNorms": r["hsNorms"],
                              "singular_values": [list(map(float, s)) for s in r["singular_values"]]}}


def suite_mu_scan(scn: Scenario, rng) -> Report:
    rep = Report("mu-scan", scn.seed)
    checks, arts = mu_scan_checks(scn.get("resolution", 48), scn.get("d", 0.25), scn.tol("slope_decay", 0.4))
    rep.extend(checks)
    rep.artifacts.update(arts)
    return rep


SUITE_FUNCTIONS = {
    "geometry": suite_geometry,
    "mesh-spectral": suite_mesh_spectral,
    "markov-rp": suite_markov_rp,
    "perturbation": suite_perturbation,
    "massive-sewing": suite_massive_sewing,
    "massless-cft": suite_massless_cft,
    "limit-oracle": suite_limit_oracle,
    "mu-scan": suite_mu_scan,
}


def run(scn: Scenario) -> Report:
    """Run the scenario's suite with a generator seeded from ``scn.seed``."""
    rng = np.random.default_rng(scn.seed)
    return SUITE_FUNCTIONS[scn.suite](scn, rng)
