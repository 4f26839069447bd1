"""Quadratic perturbations of the Gaussian field.

A density ``g`` on the vertices defines ``V = 1/2 :phi^T G phi:`` with
``G = diag(g * m)``, the discrete form of ``1/2 :phi^2:(g)``.  Everything
here is an exact matrix identity; quantities are computed along two
independent routes so that each check compares genuinely different
arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import (Block, Term, WickPolynomial, aligned_difference, conditional_expectation,
                       l2_norm, to_ordinary)
from .mesh import GaussianFieldModel, NodeRegion, check_separator


class IntegrabilityError(ValueError):
    """The perturbed weight is not integrable (``Q + G`` is not positive definite)."""


@dataclass(frozen=True)
class QuadraticForm:
    """``v(f, f') = sum_i g_i m_i f_i f'_i`` restricted to its support."""

    g: np.ndarray
    support: np.ndarray
    weights: np.ndarray  # g * m on the support

    @classmethod
    def from_density(cls, model: GaussianFieldModel, g) -> "QuadraticForm":
        g = np.broadcast_to(np.asarray(g, dtype=float), (model.n,)).copy()
        supp = np.flatnonzero(g != 0)
        return cls(g, supp, g[supp] * model.m[supp])

    @property
    def is_zero(self) -> bool:
        return self.support.size == 0

    def support_block(self, model: GaussianFieldModel) -> np.ndarray:
        """``C_SS``: covariance of the point values on the support."""
        E = np.zeros((model.n, self.support.size))
        E[self.support, np.arange(self.support.size)] = 1.0
        C = E.T @ model.solve(E)
        return 0.5 * (C + C.T)

    def eigenvalues(self, model: GaussianFieldModel) -> np.ndarray:
        """Nonzero spectrum of ``vC`` (eigenvalues of ``C_SS G_S``) via a Cholesky factor of ``C_SS``."""
        if self.is_zero:
            return np.zeros(0)
        Lc = np.linalg.cholesky(self.support_block(model))
        return np.linalg.eigvalsh(Lc.T @ (self.weights[:, None] * Lc))

    def polynomial(self) -> WickPolynomial:
        """``V`` as a Wick polynomial in point evaluations."""
        terms = []
        for i, w in zip(self.support, self.weights):
            e = np.zeros(len(self.g))
            e[i] = 1.0
            terms.append(Term(0.5 * w, (Block((e, e), True),)))
        return WickPolynomial(terms)


def _form(model, g) -> QuadraticForm:
    return g if isinstance(g, QuadraticForm) else QuadraticForm.from_density(model, g)


def one_mode_model(variance: float = 1.0) -> GaussianFieldModel:
    """A single Gaussian variable with the given variance (no mesh)."""
    return GaussianFieldModel(np.zeros((1, 1)), np.ones(1), 1.0 / variance, label="one mode")


def wick_square_l2(model: GaussianFieldModel, g) -> dict:
    """``||V||_2`` by pairing (``<:phi_i^2: :phi_j^2:> = 2 C_ij^2``) and by ``1/2 ||vC||_HS^2``."""
    q = _form(model, g)
    if q.is_zero:
        return {"pairing": 0.0, "hilbert_schmidt": 0.0, "residual": 0.0}
    C = q.support_block(model)
    w = q.weights
    pairing = 0.5 * float(np.sum((w[:, None] * C) * (C * w[None, :])))
    lam = q.eigenvalues(model)
    hs = 0.5 * float(np.sum(lam ** 2))
    return {"pairing": float(np.sqrt(pairing)), "hilbert_schmidt": float(np.sqrt(hs)),
            "residual": abs(pairing - hs) / max(hs, 1e-300), "eigenvalues": np.sort(np.abs(lam))[::-1]}


def locality_check(model: GaussianFieldModel, g, A: NodeRegion, enforce_support: bool = True) -> dict:
    """``||E_A V - V||_2 / ||V||_2`` for ``V = 1/2 :phi^2:(g)``.

    With ``Delta = E_A V - V = 1/2 :phi^T D phi:`` one has
    ``||Delta||^2 = 1/2 tr((D C)^2)``; ``D`` is written as ``R G P^T + E G R^T``
    with ``R = e_A E - E`` so each entry carries the small factor.
    """
    q = _form(model, g)
    A = A if isinstance(A, NodeRegion) else NodeRegion(A)
    if enforce_support and not np.all(np.isin(q.support, A.indices)):
        raise ValueError("support of g is not contained in the region")
    if q.is_zero:
        return {"residual": 0.0, "norm": 0.0}
    s = q.support.size
    E = np.zeros((model.n, s))
    E[q.support, np.arange(s)] = 1.0
    P = model.project(A.indices, E)
    R = P - E
    X = np.hstack([R, E])
    Y = np.hstack([P * q.weights[None, :], R * q.weights[None, :]])
    M = Y.T @ model.solve(X)
    diff2 = 0.5 * float(np.trace(M @ M))
    C = E.T @ model.solve(E)
    WC = q.weights[:, None] * C
    norm2 = 0.5 * float(np.trace(WC @ WC))
    residual = float(np.sqrt(max(diff2, 0.0) / norm2)) if norm2 > 0 else 0.0
    return {"residual": residual, "norm": float(np.sqrt(norm2))}


def det2_partition(model: GaussianFieldModel, g) -> dict:
    """``det_2(1 + vC)`` from the spectrum and ``int e^{-V} dm`` from determinants.

    Partition route: ``e^{-V} = e^{-phi^T G phi/2} e^{tr(GC)/2}`` so
    ``int e^{-V} = det(Q)^{1/2} det(Q + G)^{-1/2} e^{tr(GC)/2}``.
    """
    q = _form(model, g)
    if q.is_zero:
        return {"det2": 1.0, "partition": 1.0, "predicted": 1.0, "residual": 0.0, "margin": 1.0}
    lam = q.eigenvalues(model)
    margin = float(1.0 + lam.min())
    if margin <= 0:
        raise IntegrabilityError(f"1 + vC is not positive (smallest eigenvalue {margin:.3e})")
    log_det2 = float(np.sum(np.log1p(lam) - lam))
    tilted = model.with_mass(model.mass + q.g, label="tilted")
    trace = float(np.sum(q.weights * model.diag_cov(q.support)))
    log_part = 0.5 * (model.logdet() - tilted.logdet()) + 0.5 * trace
    predicted = -0.5 * log_det2
    return {"det2": float(np.exp(log_det2)), "partition": float(np.exp(log_part)),
            "predicted": float(np.exp(predicted)), "log_det2": log_det2, "log_partition": log_part,
            "residual": abs(np.expm1(log_part - predicted)), "margin": margin}


def _woodbury_cov(model: GaussianFieldModel, q: QuadraticForm, H: np.ndarray) -> np.ndarray:
    """``H^T (Q + G)^{-1} H`` as ``H^T C H - (CH)_S^T (1 + G_S C_SS)^{-1} G_S (CH)_S``."""
    CH = model.solve(H)
    base = H.T @ CH
    if q.is_zero:
        return base
    C = q.support_block(model)
    K = np.eye(q.support.size) + q.weights[:, None] * C
    corr = CH[q.support].T @ np.linalg.solve(K, q.weights[:, None] * CH[q.support])
    return base - corr


def perturbed_covariance_check(model: GaussianFieldModel, g, H) -> dict:
    """Covariance of the normalized perturbed measure along two routes.

    Route one factors ``Q + G`` directly; route two applies ``(1 + vC)^{-1}``
    to ``C`` through a Woodbury correction on the support of ``g``.
    """
    q = _form(model, g)
    H = np.asarray(H, dtype=float)
    H = H[:, None] if H.ndim == 1 else H
    if not q.is_zero and 1.0 + q.eigenvalues(model).min() <= 0:
        raise IntegrabilityError("perturbed precision is not positive definite")
    direct = H.T @ model.with_mass(model.mass + q.g).solve(H)
    wood = _woodbury_cov(model, q, H)
    scale = max(float(np.max(np.abs(direct))), 1e-300)
    return {"direct": direct, "woodbury": wood, "residual": float(np.max(np.abs(direct - wood)) / scale),
            "characteristic": np.exp(-0.5 * np.diag(direct))}


def _is_positive_definite(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


def q_threshold(model: GaussianFieldModel, g, q_max: float = 10.0, tol: float = 1e-3) -> dict:
    """Largest ``q`` in ``[1, q_max]`` with ``Q + q G`` positive definite.

    Dense Cholesky tests on a grid, refined by bisection; the spectral value
    ``-1/min(vC)`` is reported alongside.
    """
    q = _form(model, g)
    lam = q.eigenvalues(model) if not q.is_zero else np.zeros(1)
    spectral = float(-1.0 / lam.min()) if lam.min() < 0 else float("inf")
    Qd = model.Q.toarray()
    Gd = np.zeros(model.n)
    Gd[q.support] = q.weights

    def ok(x):
        return _is_positive_definite(Qd + x * np.diag(Gd))

    grid = np.linspace(1.0, q_max, 37)
    good = [x for x in grid if ok(x)]
    if not good:
        return {"threshold": None, "spectral": spectral, "all_admissible": False}
    if len(good) == len(grid):
        return {"threshold": q_max, "spectral": spectral, "all_admissible": True}
    lo = good[-1]
    hi = grid[len(good)]
    while hi - lo > tol * lo:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return {"threshold": 0.5 * (lo + hi), "spectral": spectral, "all_admissible": False}


def rn_mass_change(model: GaussianFieldModel, lam, H=None, region: NodeRegion | None = None,
                   q_max: float = 10.0) -> dict:
    """Change of mass profile ``mu -> lambda mu`` as a reweighting by ``exp(-1/2 :phi^2:((lambda-1) mu))``.

    Reports the reweighted covariance against the direct ``lambda mu`` model,
    the ``L^q`` threshold with ``1/(1 - inf lambda)``, and (when ``region``
    is given) locality of the exponent.
    """
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (model.n,)).copy()
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    g = (lam - 1.0) * model.mass
    q = QuadraticForm.from_density(model, g)
    if H is None:
        rng = np.random.default_rng(0)
        H = rng.standard_normal((model.n, 4)) * model.m[:, None]
    H = np.asarray(H, dtype=float)
    reweighted = _woodbury_cov(model, q, H)
    direct = H.T @ model.with_mass(lam * model.mass).solve(H)
    delta = float(lam.min())
    out = {"covariance_residual": float(np.max(np.abs(reweighted - direct)) / np.max(np.abs(direct))),
           "delta": delta, "expected_threshold": (1.0 / (1.0 - delta)) if delta < 1 else float("inf")}
    out.update(q_threshold(model, q, q_max=q_max))
    if region is not None:
        out["locality"] = locality_check(model, q, region)["residual"]
    return out


def conditional_metric_independence(model: GaussianFieldModel, other: GaussianFieldModel,
                                    omega: NodeRegion, boundary: NodeRegion,
                                    polys, tol: float = 1e-12) -> dict:
    """``||E'_{boundary} P - E_{boundary} P||_2`` for ``P`` supported in the closure of ``omega``.

    The two models share the stiffness and must agree (lumped mass and mass
    profile) on the closed region.
    """
    closed = omega.union(boundary)
    idx = closed.indices
    gap = max(float(np.max(np.abs(model.m[idx] - other.m[idx]) / model.m[idx])),
              float(np.max(np.abs(model.mass[idx] - other.mass[idx]) / np.abs(model.mass[idx]))))
    if gap > tol:
        raise ValueError(f"metrics differ on the closed region (relative gap {gap:.2e})")
    outside = NodeRegion(np.setdiff1d(np.arange(model.n), idx))
    check_separator(model.mesh, omega, boundary, outside)
    worst = 0.0
    res = []
    for P in polys:
        ev = P.evaluate(model)
        supp = ev.support(model)
        if not np.all(np.isin(supp, idx)):
            raise ValueError("polynomial is not supported in the closed region")
        a = to_ordinary(model, conditional_expectation(model, boundary, ev))
        b = to_ordinary(other, conditional_expectation(other, boundary, ev))
        r = l2_norm(model, aligned_difference(b, a))
        res.append(r)
        worst = max(worst, r)
    return {"residual": worst, "residuals": res}


def sewing_constant(model0: GaussianFieldModel, lam) -> dict:
    """``Z = int exp(-1/2 :phi^2:((lambda - 1) mu)) dm_{gamma_0, mu}``."""
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (model0.n,))
    out = det2_partition(model0, (lam - 1.0) * model0.mass)
    out["Z"] = out["partition"]
    return out
