import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphere_amplitudes import massless as ml
from sphere_amplitudes.geometry import DiscSpec, MobiusMap, RoundMetric, ScaledMetric, standard_metric
from sphere_amplitudes.massless import ChargeError, Symbol, eval_correlator

charges = st.integers(-3, 3)


@st.composite
def neutral_sequences(draw, max_len=5, radius=2.0):
    n = draw(st.integers(2, max_len))
    ks = draw(st.lists(charges, min_size=n - 1, max_size=n - 1))
    ks.append(-sum(ks))
    # distinct cells of an 8x8 grid keep points separated
    cells = draw(st.lists(st.integers(0, 63), min_size=n, max_size=n, unique=True))
    jitter = draw(st.lists(st.floats(-0.3, 0.3), min_size=2 * n, max_size=2 * n))
    step = 2 * radius / 8
    pts = [complex(-radius + step * (c % 8 + 0.5 + jitter[2 * i]), -radius + step * (c // 8 + 0.5 + jitter[2 * i + 1]))
           for i, c in enumerate(cells)]
    return list(zip(ks, pts))


def test_correlator_examples():
    assert eval_correlator([(1, 0), (1, 1)]) == 0
    assert eval_correlator([(1, 0), (-1, 1)]) == 1
    assert eval_correlator([(1, 0), (-1, 2)]) == pytest.approx(2 ** (-1 / (2 * np.pi)), rel=1e-14)
    assert eval_correlator([(1, 0), (-1, 2)]) == pytest.approx(0.89555, abs=1e-5)
    assert eval_correlator([(1, 0), (1, 1), (-2, 2)]) == pytest.approx(2 ** (-1 / np.pi), rel=1e-14)
    assert eval_correlator([]) == 1


def test_correlator_rejects_bad_sequences():
    with pytest.raises(ChargeError):
        eval_correlator([(1, 0.5), (-1, 0.5)])
    with pytest.raises(ChargeError):
        eval_correlator([(0.5, 0.0), (-0.5, 1.0)])
    with pytest.raises(ChargeError):
        eval_correlator([(1, complex(np.inf, 0)), (-1, 0.0)])


@given(neutral_sequences(), st.randoms(use_true_random=False))
def test_permutation_and_charge_reversal(Z, rnd):
    base = eval_correlator(Z)
    perm = list(Z)
    rnd.shuffle(perm)
    assert eval_correlator(perm) == base
    assert eval_correlator([(-k, z) for k, z in Z]) == base


def test_conformal_change_examples():
    F = Symbol.single([(1, 0.1), (-1, -0.2j)], 2.0)
    same = ml.conformal_change(F, lambda z: np.zeros(np.shape(z)))
    assert same.terms == F.terms
    s = 0.7
    scaled = ml.conformal_change(F, lambda z: np.full(np.shape(z), s))
    ratio = list(scaled.terms.values())[0] / 2.0
    assert ratio == pytest.approx(np.exp(s / (4 * np.pi)), rel=1e-14)


@given(neutral_sequences(), st.floats(-1, 1), st.floats(-1, 1))
def test_conformal_change_identity(Z, a, b):
    F = Symbol.single(Z, 1 - 0.5j)
    sigma = lambda z: a * np.real(z) + b * np.abs(z) ** 2 / (1 + np.abs(z) ** 2)  # noqa: E731
    assert ml.conformal_change_check(F, RoundMetric(), sigma)["residual"] <= 1e-12


def test_conformal_changes_compose():
    F = Symbol.single([(2, 0.3), (-1, 0.1j), (-1, -0.4)])
    s1 = lambda z: np.real(z)  # noqa: E731
    s2 = lambda z: np.imag(z) ** 2  # noqa: E731
    two = ml.conformal_change(ml.conformal_change(F, s1), s2)
    one = ml.conformal_change(F, lambda z: s1(z) + s2(z))
    for Z in F.terms:
        assert two.terms[Z] == pytest.approx(one.terms[Z], rel=1e-14)


def _random_mobius(rng):
    a, b, c, d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return MobiusMap(a, b, c, d)


def test_mobius_examples():
    F = Symbol.single([(1, 0.2), (-1, -0.3 + 0.1j)])
    ident = ml.mobius_covariance(F, MobiusMap.identity())
    assert ident["covariance_residual"] == 0 and ident["flat_residual"] == 0
    shift = MobiusMap(1, 0.7 - 0.2j, 0, 1)
    assert ml.tau_mobius(F, shift).expectation() == pytest.approx(F.expectation(), rel=1e-14)
    scale = ml.mobius_covariance(F, MobiusMap(2, 0, 0, 1))
    assert scale["flat_residual"] <= 1e-12 and scale["covariance_residual"] <= 1e-12
    with pytest.raises(ValueError):
        ml.mobius_covariance(F, MobiusMap(1, 0, 0, 1, anti=True))


@given(neutral_sequences(radius=1.0), st.integers(0, 2 ** 32 - 1))
def test_mobius_covariance_random(Z, seed):
    alpha = _random_mobius(np.random.default_rng(seed))
    image = [alpha(np.array([z]))[0] for _, z in Z]
    if min(abs(p) for p in image) > 1e6:
        return
    r = ml.mobius_covariance(Symbol.single(Z), alpha, standard_metric("flat", 0.2))
    assert r["covariance_residual"] <= 1e-12 and r["flat_residual"] <= 1e-12


def test_tau_functoriality(rng):
    F = Symbol.single([(1, 0.2), (-2, 0.4j), (1, -0.3)], 0.5 + 1j)
    for _ in range(10):
        a, b = _random_mobius(rng), _random_mobius(rng)
        lhs = ml.tau_mobius(ml.tau_mobius(F, b), a)
        rhs = ml.tau_mobius(F, a.compose(b))
        for (Z1, c1), (Z2, c2) in zip(lhs.terms.items(), rhs.terms.items()):
            assert c1 == c2
            for (k1, z1), (k2, z2) in zip(Z1, Z2):
                assert k1 == k2 and abs(z1 - z2) <= 1e-14 * max(1.0, abs(z1)) * 100


def test_theta_examples():
    th, tt = ml.theta_maps(Symbol.single([(1, 2.0)]))
    assert list(th.terms) == [((-1, 0.5 + 0j),)]
    _, on_circle = ml.theta_maps(Symbol.single([(1, np.exp(0.3j))], 1j))
    assert list(on_circle.terms.values())[0] == pytest.approx(-1j, rel=1e-14)
    _, tt = ml.theta_maps(Symbol.single([(1, 0.5)]))
    assert list(tt.terms.values())[0] == pytest.approx(2 ** (1 / (2 * np.pi)), rel=1e-14)
    assert list(tt.terms.values())[0] == pytest.approx(1.1166, abs=1e-4)
    with pytest.raises(ChargeError):
        ml.theta_maps(Symbol.single([(1, 0.0), (-1, 0.5)]))


def test_theta_is_involution():
    F = Symbol.single([(1, 0.2 + 0.1j), (-1, -0.3)], 0.3 - 2j) + Symbol.single([(2, 0.1), (-2, 0.4j)], 1.5)
    back = ml.theta_maps(ml.theta_maps(F)[0])[0]
    for Z, c in F.terms.items():
        match = [c2 for Z2, c2 in back.terms.items()
                 if all(k1 == k2 and abs(z1 - z2) < 1e-15 for (k1, z1), (k2, z2) in zip(Z, Z2))]
        assert match and match[0] == c


def test_rp_gram_flat_examples():
    F = Symbol.single([(1, 0.1), (-1, -0.2j)], 1.0) + Symbol.single([(2, 0.2), (-2, -0.1)], 0.5j)
    one = ml.rp_gram_flat([F], d=0.2)
    assert one["gram"][0, 0].real > 0 and one["standard_residual"] <= 1e-12
    two = ml.rp_gram_flat([F, F * 2], d=0.2)
    norm2 = one["gram"][0, 0].real
    np.testing.assert_allclose(np.sort(two["eigenvalues"]), [0.0, 5 * norm2], atol=1e-12 * norm2)
    assert ml.hilbert_quotient_flat(two["gram"]).dim == 1
    with pytest.raises(ChargeError):
        ml.rp_gram_flat([Symbol.single([(1, 0.9), (-1, 0.0)])], d=0.2)


def _random_symbol(rng, radius=0.6, n_terms=3, max_charge=2):
    out = Symbol()
    for _ in range(n_terms):
        n = int(rng.integers(2, 5))
        ks = list(rng.integers(-max_charge, max_charge + 1, n - 1))
        ks.append(-sum(ks))
        pts = radius * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))
        out = out + Symbol.single(list(zip(ks, pts)), complex(*rng.standard_normal(2)))
    return out


@given(st.integers(0, 2 ** 32 - 1))
def test_rp_gram_flat_positive(seed):
    rng = np.random.default_rng(seed)
    res = ml.rp_gram_flat([_random_symbol(rng) for _ in range(5)], d=0.2)
    assert res["hermitian_gap"] <= 1e-12 * max(res["norm"], 1.0)
    assert res["min_eig"] >= -1e-12 * res["norm"]
    assert res["standard_residual"] <= 1e-12


def test_flat_standard_metric_zone():
    g = ml.flat_standard_metric(0.2)
    r = ml.flat_zone_radius(0.2)
    z = r * 0.99 * np.exp(1j * np.linspace(0, 6, 7))
    np.testing.assert_allclose(g.log_density(z), 0.0, atol=1e-15)


def test_amplitude_form_examples(rng):
    g0 = ml.flat_standard_metric(0.2)
    assert ml.amplitude_form(ml.flat_configuration([], g0), {}) == 1
    F = Symbol.single([(1, 0.1), (-1, -0.2j)])
    cfg = ml.FlatConfiguration(g0, g0, (DiscSpec("interior", 0.0, 1.0, "in"), DiscSpec("exterior", 0.0, 1.0, "out")))
    form = ml.amplitude_form(cfg, {0: F, 1: F})
    assert form == pytest.approx(ml.rp_gram_flat([F], d=0.2)["gram"][0, 0], rel=1e-12)
    charged = Symbol.single([(1, 0.1), (1, -0.2j)])
    assert ml.amplitude_form(cfg, {0: charged, 1: F}) == 0


def test_amplitude_form_rejects_points_outside_flat_zone():
    g0 = ml.flat_standard_metric(0.2)
    cfg = ml.flat_configuration([DiscSpec("interior", 0.0, 1.0, "in")], g0)
    with pytest.raises(ChargeError):
        ml.amplitude_form(cfg, {0: Symbol.single([(1, 0.9), (-1, 0.0)])})


def test_one_disc_vector_examples():
    g0 = ml.flat_standard_metric(0.2)
    cfg = ml.flat_configuration([DiscSpec("exterior", 0.0, 1.0, "out")], g0)
    empty = ml.one_disc_vector(cfg, {})
    assert list(empty.terms.items()) == [((), 1.0)]
    F = Symbol.single([(1, 0.1), (-1, -0.2j)])
    inner = DiscSpec("interior", 0.2, 0.3, "in", 0.5)
    cfg = ml.flat_configuration([inner, DiscSpec("exterior", 0.0, 1.0, "out")], g0)
    X = ml.one_disc_vector(cfg, {0: F})
    for G in (F, Symbol.single([(2, 0.05), (-2, -0.1)])):
        assert ml.standard_inner(G, X, g0) == pytest.approx(ml.amplitude_form(cfg, {0: F, 1: G}), rel=1e-12)


@pytest.mark.parametrize("ins, outs", [
    ([DiscSpec("interior", 0.1, 0.3, "in", 0.4)], [DiscSpec("exterior", -0.2, 4.0, "out", 0.3)]),
    ([DiscSpec("interior", 0.4, 0.22, "in"), DiscSpec("interior", -0.4j, 0.22, "in", 0.3)],
     [DiscSpec("interior", 5, 1.5, "out"), DiscSpec("interior", -5j, 1.5, "out", 1.0)]),
])
def test_massless_sewing(rng, ins, outs):
    g0 = ml.flat_standard_metric(0.2)
    z = 0.3 * np.exp(2j * np.pi * rng.uniform(size=len(ins) + len(outs)))
    ks = [1] * len(ins) + [-1] * len(outs)
    # the first term carries net charge k, balanced only across discs
    symbols = [Symbol.single([(k, p)]) + Symbol.single([(k, p / 3), (-k, 0.5j * p)], 0.5)
               for k, p in zip(ks, z)]
    fi, fo = symbols[:len(ins)], symbols[len(ins):]
    r = ml.sewing_check_massless(g0, ins, outs, fi, fo)
    assert r["residual"] <= 1e-10
    assert abs(r["amplitude"]) > 0


def test_limit_oracle_neutral_pair():
    Z = [(1, 0.35), (-1, -0.35)]
    res = ml.massive_limit_oracle(Z, resolution=96)
    exact = eval_correlator(Z, standard_metric("flat", 0.1))
    assert abs(res["value"] - exact) / exact <= 1e-2


def test_limit_oracle_constant_sigma_anomaly():
    Z = [(1, 0.35), (-1, -0.35)]
    base = ml.massive_limit_oracle(Z, resolution=64)["value"]
    scaled = ScaledMetric(standard_metric("flat", 0.1), 0.7, 0.7)
    shifted = ml.massive_limit_oracle(Z, metric=scaled, resolution=64)["value"]
    assert abs(shifted / base / np.exp(-2 * 0.7 / (8 * np.pi)) - 1) <= 0.02


def test_limit_oracle_non_neutral_diverges():
    res = ml.non_neutral_divergence([(1, 0.2)], resolution=32)
    assert res["monotone"]
    assert abs(res["slope"] - 1) <= 0.05
    assert res["values"][-1] < res["values"][0]


def test_limit_oracle_rejects_close_points_and_coarse_mesh():
    with pytest.raises(ValueError):
        ml.massive_limit_oracle([(1, 0.05), (-1, -0.05)], resolution=32)
    with pytest.raises(ml.MeshResolutionError):
        ml.massive_limit_oracle([(1, 0.35), (-1, -0.35)], resolution=8, kappas=(40, 60))


def test_symbol_serialization():
    F = Symbol.single([(1, 0.1 + 0.2j), (-1, -0.3)], 0.5 - 1j)
    assert Symbol.from_list(F.to_list()).terms == F.terms
