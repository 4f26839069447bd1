import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from sphere_amplitudes.gaussian import (Bump, FockTruncation, NodeDelta, WickPolynomial, characteristic,
                                        characteristic_mc, combine, conditional_expectation, expectation,
                                        gamma_op, gamma_trace, hafnian, hilbert_space,
                                        hypercontractivity_check_1mode, inner_product_matrix, l2_norm,
                                        markov_check, moment, reflect_polynomial, rp_gram)
from sphere_amplitudes.geometry import ScaledMetric, standard_metric
from sphere_amplitudes.mesh import GaussianFieldModel, assemble, build_mesh, region_disc, region_ring

D = 0.3


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(12, D)


@pytest.fixture(scope="module")
def model(mesh):
    return GaussianFieldModel.from_ops(assemble(standard_metric("massive", D), mesh), 1.0)


def _brute_moment(C, idx):
    """Sum over perfect matchings by explicit enumeration of permutations."""
    n = len(idx)
    if n % 2:
        return 0.0
    seen, total = set(), 0.0
    for perm in itertools.permutations(range(n)):
        pairs = frozenset(frozenset(perm[i:i + 2]) for i in range(0, n, 2))
        if pairs in seen:
            continue
        seen.add(pairs)
        total += np.prod([C[idx[a], idx[b]] for a, b in map(tuple, pairs)])
    return total


def test_odd_moment_vanishes(model):
    assert moment(model, WickPolynomial.monomial(Bump(0.2, 0.5))) == 0


def test_second_moment_is_covariance(model):
    f, g = Bump(0.2, 0.5), Bump(-0.3j, 0.4)
    hf, hg = f.load(model), g.load(model)
    val = moment(model, WickPolynomial.monomial(f, g))
    assert val == pytest.approx(hf @ model.solve(hg), rel=1e-12)


def test_wick_squares_pair_twice(model):
    f, g = Bump(0.2, 0.5), Bump(-0.3j, 0.4)
    cfg = f.load(model) @ model.solve(g.load(model))
    val = expectation(model, WickPolynomial.wick(f, f), WickPolynomial.wick(g, g))
    assert val == pytest.approx(2 * cfg ** 2, rel=1e-12)
    assert moment(model, WickPolynomial.wick(f, f)) == pytest.approx(0, abs=1e-15)


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 6))
def test_moments_match_enumeration(model, seed, degree):
    rng = np.random.default_rng(seed)
    verts = rng.choice(model.n, size=degree)
    C = model.covariance()
    val = moment(model, WickPolynomial.monomial(*[NodeDelta(int(v)) for v in verts]))
    assert val == pytest.approx(_brute_moment(C, verts), rel=1e-10, abs=1e-14)


def test_hafnian_small_cases():
    W = np.array([[0, 2.0], [2.0, 0]])
    assert hafnian(W) == 2.0
    A = np.arange(16, dtype=float).reshape(4, 4)
    A = A + A.T
    assert hafnian(A) == pytest.approx(A[0, 1] * A[2, 3] + A[0, 2] * A[1, 3] + A[0, 3] * A[1, 2])


def test_characteristic(model, mesh):
    f = Bump(0.1, 0.6, amplitude=3.0)
    assert characteristic(model, np.zeros(model.n)) == 1.0
    c1 = characteristic(model, f)
    assert characteristic(model, Bump(0.1, 0.6, amplitude=6.0)) == pytest.approx(c1 ** 4, rel=1e-12)
    mc = characteristic_mc(model, f, n_samples=4000, seed=7)
    assert abs(mc["mean"] - c1) <= 3 * mc["stderr"]


def test_gamma_identity_and_zero(model):
    f, g = Bump(0.2, 0.5), Bump(-0.3, 0.5)
    P = WickPolynomial.wick(f, g) + WickPolynomial.constant(2.0) + WickPolynomial.wick(f)
    same = gamma_op(model, np.eye(model.n), P)
    diff = expectation(model, (same - P).conj(), same - P)
    assert abs(diff) < 1e-20
    zero = gamma_op(model, np.zeros((model.n, model.n)), P)
    assert l2_norm(model, zero - WickPolynomial.constant(2.0)) < 1e-12
    assert l2_norm(model, gamma_op(model, np.zeros((model.n, model.n)), WickPolynomial.constant(1.0))
                   - WickPolynomial.constant(1.0)) == 0


def test_gamma_functoriality(model, rng):
    A = region_disc(model.mesh, 0.0).indices
    B = region_disc(model.mesh, 0.3, inside=False).indices
    T = lambda h: model.project(A, h)  # noqa: E731
    S = lambda h: 0.5 * model.project(B, h)  # noqa: E731
    f, g = Bump(0.4, 0.6), Bump(1.5j, 1.0)
    P = WickPolynomial.wick(f, g) + WickPolynomial.wick(f, f, coef=0.3j)
    lhs = gamma_op(model, T, gamma_op(model, S, P))
    rhs = gamma_op(model, lambda h: T(S(h)), P)
    assert l2_norm(model, lhs - rhs) <= 1e-10


def test_conditional_expectation_idempotent(model):
    A = region_disc(model.mesh, 0.0)
    P = WickPolynomial.wick(Bump(0.3, 0.6), Bump(2.0, 1.0)) + WickPolynomial.monomial(Bump(-1.2, 0.7))
    once = conditional_expectation(model, A, P)
    twice = conditional_expectation(model, A, once)
    assert l2_norm(model, twice - once) <= 1e-10 * max(1.0, l2_norm(model, once))
    everything = conditional_expectation(model, np.arange(model.n), P)
    assert l2_norm(model, everything - P) <= 1e-10


def test_chain_conditioning_decouples_ends():
    L = sparse.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
    model = GaussianFieldModel(L, np.ones(3), 1.0)
    Q = model.Q.toarray()
    # conditional covariance of the ends given the middle: inverse of Q restricted to the ends
    cond = np.linalg.inv(Q[np.ix_([0, 2], [0, 2])])
    assert cond[0, 1] == 0


def test_markov_on_ring_separator(model, mesh):
    k = mesh.ring_index(0.0)
    sep = region_ring(mesh, 0.0)
    inside = region_disc(mesh, mesh.t[k - 1])
    outside = region_disc(mesh, mesh.t[k + 1], inside=False)
    polys = [WickPolynomial.wick(Bump(0.4, 0.5), Bump(-0.5, 0.4)),
             WickPolynomial.monomial(Bump(1.8, 0.8), Bump(0.3j, 0.5)) + WickPolynomial.constant(1.0),
             WickPolynomial.wick(Bump(1.0, 0.6))]
    assert markov_check(model, inside, sep, outside, polys)["residual"] <= 1e-9
    with pytest.raises(ValueError):
        markov_check(model, inside, region_ring(mesh, mesh.t[k + 1]), region_disc(mesh, 0.0, inside=False), polys)


def _inside_family(rng, n):
    polys = []
    for _ in range(n):
        c = 0.55 * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        f, g = Bump(c, 0.3), Bump(-c, 0.3)
        a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        polys.append(WickPolynomial.wick(f, g, coef=a) + WickPolynomial.wick(f, coef=b)
                     + WickPolynomial.constant(rng.standard_normal()))
    return polys


@given(st.integers(0, 2 ** 32 - 1))
def test_reflection_positivity(model, seed):
    res = rp_gram(model, _inside_family(np.random.default_rng(seed), 4))
    assert res["hermitian_gap"] <= 1e-10 * max(res["norm"], 1.0)
    assert res["min_eig"] >= -1e-10 * res["norm"]
    assert res["equality_residual"] <= 1e-9
    assert res["third_construction_residual"] <= 1e-9


def test_rp_single_constant_and_ring_factor(model, mesh):
    assert rp_gram(model, [WickPolynomial.constant(1.0)])["gram"][0, 0] == pytest.approx(1.0)
    v = int(region_ring(mesh, 0.0).indices[0])
    G = rp_gram(model, [WickPolynomial.monomial(NodeDelta(v))])["gram"]
    assert G[0, 0].real == pytest.approx(model.covariance()[v, v], rel=1e-12) and G[0, 0].real > 0


def test_rp_rejects_bad_inputs(mesh, model):
    tilted = ScaledMetric(standard_metric("massive", D), "0.3*real(z)/(1+abs(z))", 0.0)
    skew = GaussianFieldModel.from_ops(assemble(tilted, mesh), 1.0)
    with pytest.raises(ValueError):
        rp_gram(skew, [WickPolynomial.constant(1.0)])
    with pytest.raises(ValueError):
        rp_gram(model, [WickPolynomial.monomial(Bump(2.0, 0.5))])


def test_reflection_is_antiunitary_involution(model, rng):
    polys = _inside_family(rng, 3)
    twice = [reflect_polynomial(reflect_polynomial(P.evaluate(model), model.mesh), model.mesh) for P in polys]
    for P, back in zip(polys, twice):
        assert l2_norm(model, back - P.evaluate(model)) <= 1e-12
    refl = [reflect_polynomial(P.evaluate(model), model.mesh) for P in polys]
    G = inner_product_matrix(model, refl, polys)
    G2 = inner_product_matrix(model, [reflect_polynomial(R, model.mesh) for R in
                                      [P.evaluate(model) for P in refl]], refl)
    # G(Theta P, Theta Q) = G(Q, P) = conj G(P, Q)
    np.testing.assert_allclose(G2, G.T, atol=1e-10 * np.abs(G).max())
    np.testing.assert_allclose(G2, G.conj(), atol=1e-10 * np.abs(G).max())


def test_hilbert_space_quotient(model, rng):
    polys = _inside_family(rng, 3)
    hs = hilbert_space(np.eye(3))
    np.testing.assert_allclose(np.abs(hs.basis), np.eye(3), atol=1e-15)
    assert hs.dim == 3
    G = rp_gram(model, polys)["gram"]
    base = hilbert_space(G).dim
    # a vector whose boundary projection vanishes is null for the Gram form
    k = model.mesh.ring_index(0.0)
    inner_v = int(region_ring(model.mesh, model.mesh.t[k - 2]).indices[0])
    sep = region_ring(model.mesh, 0.0).indices
    h = np.zeros(model.n)
    h[inner_v] = 1.0
    null = WickPolynomial.monomial(h - model.project(sep, h))
    padded = polys + [polys[0] + null]
    G2 = rp_gram(model, padded)["gram"]
    assert hilbert_space(G2).dim == base
    hs2 = hilbert_space(G2)
    x, y = rng.standard_normal(4), rng.standard_normal(4)
    assert hs2.inner(x, y) == pytest.approx(x @ G2 @ y, rel=1e-9)
    with pytest.raises(ValueError):
        hilbert_space(G2, tol=1.5)


def test_combine(model):
    P, Q = WickPolynomial.constant(1.0), WickPolynomial.constant(2.0)
    assert moment(model, combine([P, Q], [2.0, 0.5])) == pytest.approx(3.0)


@pytest.mark.parametrize("lams, exact", [((0.0,), 1.0), ((0.5,), 2.0), ((0.5, 0.25), 8 / 3)])
def test_gamma_trace(lams, exact):
    res = gamma_trace(lams, cutoff=40)
    assert res["product"] == pytest.approx(exact, rel=1e-14)
    assert 0 <= res["gap"] <= res["tail_bound"] * (1 + 1e-12) + 1e-15
    assert np.all(np.diff(res["partial_sums"]) >= 0)
    with pytest.raises(ValueError):
        gamma_trace([1.0])


def test_hypercontractivity():
    assert hypercontractivity_check_1mode(0.5, [1.0])["lhs"] == pytest.approx(1.0, abs=1e-12)
    assert hypercontractivity_check_1mode(1 / np.sqrt(3), [0, 0, 1.0])["pass"]
    beyond = hypercontractivity_check_1mode(0.9, [0, 0, 0, 1.0], enforce_bound=False)
    assert not beyond["pass"]
    with pytest.raises(ValueError):
        hypercontractivity_check_1mode(0.9, [0, 0, 0, 1.0])


def test_fock_truncation(model):
    f = Bump(0.3, 0.5).load(model)
    g = Bump(-1.5, 0.8).load(model)
    F = np.column_stack([f, g])
    G = F.T @ model.solve(F)
    w, U = np.linalg.eigh(G)
    modes = F @ U / np.sqrt(w)
    fock = FockTruncation(modes, max_degree=2)
    assert fock.check_orthonormal(model) <= 1e-10
    assert len(list(fock.occupations())) == 6
    with pytest.raises(ValueError):
        FockTruncation(F).check_orthonormal(model)


def test_polynomial_serialization(model):
    P = WickPolynomial.wick(Bump(0.3, 0.5), Bump(0.1j, 0.2, amplitude=2 - 1j), coef=0.5j) \
        + WickPolynomial.monomial(NodeDelta(3))
    back = WickPolynomial.from_dict(P.to_dict())
    assert l2_norm(model, back - P) == 0
