"""Gaussian measure engine on a finite mesh.

Polynomials in the field are finite sums of terms ``c * B_1 ... B_r`` where
each block ``B`` is a product of pairings ``phi(h_1)...phi(h_n)``, either
plain or Wick-ordered against some covariance.  Moments are hafnians of
the pairing covariances, with the pairs inside a Wick block weighted by
(measure covariance - ordering covariance); for the usual case the two
agree and such pairs simply drop out.

Factors are test functions (:class:`Bump`, :class:`NodeDelta`) or load
vectors ``h = m * f`` given directly as arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import hermite_e as He
from scipy import integrate, linalg as sla

from .geometry import THETA, MobiusMap, reflect_z
from .mesh import GaussianFieldModel, NodeRegion, SphereMesh, check_separator

# --------------------------------------------------------------------------
# test functions


def _bump_profile(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    k = r < 1.0
    out[k] = np.exp(1.0 - 1.0 / (1.0 - r[k] ** 2))
    return out


_BUMP_INTEGRAL = 2 * np.pi * integrate.quad(lambda r: float(_bump_profile(np.array(r))) * r, 0, 1,
                                            epsabs=1e-14, epsrel=1e-14)[0]


class TestFunction:
    """A test function that can be sampled on a mesh and turned into a load vector."""

    __test__ = False  # not a pytest class

    def nodal(self, mesh: SphereMesh) -> np.ndarray:
        raise NotImplementedError

    def load(self, model: GaussianFieldModel) -> np.ndarray:
        return model.m * self.nodal(model.mesh)

    def reflect(self) -> "TestFunction":
        raise NotImplementedError

    def pullback(self, m: MobiusMap) -> "TestFunction":
        raise NotImplementedError(f"{type(self).__name__} cannot be pulled back by a Möbius map")

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class NodeDelta(TestFunction):
    """Point evaluation at a vertex: load vector ``e_v``."""

    vertex: int
    amplitude: float = 1.0
    reflected: bool = False

    def nodal(self, mesh):
        raise TypeError("a node delta has no nodal samples; use load()")

    def load(self, model):
        v = model.mesh.mirror[self.vertex] if self.reflected else self.vertex
        h = np.zeros(model.n)
        h[v] = self.amplitude
        return h

    def reflect(self):
        return NodeDelta(self.vertex, self.amplitude, not self.reflected)

    def to_dict(self):
        return {"delta": {"vertex": int(self.vertex), "amplitude": self.amplitude,
                          "reflected": self.reflected}}


@dataclass(frozen=True)
class Bump(TestFunction):
    """Smooth compactly supported bump ``amplitude * b(|p(z) - c|/w)/(w^2 I_b)``.

    ``b(r) = exp(1 - 1/(1 - r^2))`` on ``r < 1`` and ``I_b`` its planar
    integral.  With ``normalize="chart"`` the bump integrates to
    ``amplitude`` against ``|dz|^2`` in the coordinate ``p(z)``; with the
    default ``"metric"`` the load vector is rescaled so that its entries sum
    to ``amplitude`` (the discrete integral against the model's metric).
    ``p`` is an optional Möbius (or anti-Möbius) pullback; reflection and
    disc parametrizations compose into it exactly.
    """

    center: complex
    width: float
    amplitude: complex = 1.0
    pull: MobiusMap | None = None
    normalize: str = "metric"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("bump width must be positive")
        if self.normalize not in ("metric", "chart"):
            raise ValueError("normalize must be 'metric' or 'chart'")
        object.__setattr__(self, "center", complex(self.center))
        if self.pull is not None and self.pull.almost_equal(MobiusMap.identity(), 1e-15):
            object.__setattr__(self, "pull", None)

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        w = z if self.pull is None else self.pull(z)
        w = np.asarray(w)
        with np.errstate(invalid="ignore"):
            r = np.where(np.isfinite(w), np.abs(w - self.center) / self.width, np.inf)
        return self.amplitude * _bump_profile(r) / (self.width ** 2 * _BUMP_INTEGRAL)

    def nodal(self, mesh):
        vals = self.evaluate(mesh.z)
        if np.iscomplexobj(vals) and not np.any(vals.imag):
            vals = vals.real
        return vals

    def load(self, model):
        h = model.m * self.nodal(model.mesh)
        if self.normalize == "metric":
            total = np.sum(h)
            if total == 0:
                raise ValueError(f"bump at {self.center} has no mesh vertex in its support")
            h = h * (self.amplitude / total)
        return h

    def reflect(self):
        pull = THETA if self.pull is None else self.pull.compose(THETA)
        return Bump(self.center, self.width, self.amplitude, pull, self.normalize)

    def pullback(self, m):
        pull = m if self.pull is None else self.pull.compose(m)
        return Bump(self.center, self.width, self.amplitude, pull, self.normalize)

    def to_dict(self):
        out = {"bump": {"center": [self.center.real, self.center.imag], "width": self.width,
                        "amplitude": [complex(self.amplitude).real, complex(self.amplitude).imag]}}
        if self.pull is not None:
            out["bump"]["pull"] = self.pull.to_dict()
        if self.normalize != "metric":
            out["bump"]["normalize"] = self.normalize
        return out


def test_function_from_dict(data: dict) -> TestFunction:
    if "bump" in data:
        b = data["bump"]
        c = b["center"]
        amp = b.get("amplitude", 1.0)
        amp = complex(amp[0], amp[1]) if isinstance(amp, (list, tuple)) else complex(amp)
        pull = MobiusMap.from_dict(b["pull"]) if "pull" in b else None
        return Bump(complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c),
                    float(b["width"]), amp, pull, b.get("normalize", "metric"))
    if "delta" in data:
        dd = data["delta"]
        return NodeDelta(int(dd["vertex"]), float(dd.get("amplitude", 1.0)), bool(dd.get("reflected", False)))
    raise ValueError(f"unknown test function {data!r}")


test_function_from_dict.__test__ = False


# --------------------------------------------------------------------------
# polynomials

@dataclass(frozen=True)
class Block:
    """Product of pairings; ``wick`` is False (plain product), True (Wick-ordered
    against the model in use) or a specific model to order against."""

    factors: tuple
    wick: object = False

    def __len__(self):
        return len(self.factors)


@dataclass(frozen=True)
class Term:
    coef: complex
    blocks: tuple

    @property
    def degree(self) -> int:
        return sum(len(b) for b in self.blocks)


class WickPolynomial:
    """Finite complex combination of products of (possibly Wick-ordered) blocks."""

    def __init__(self, terms: Iterable[Term] = ()):
        self.terms = tuple(terms)

    # constructors -----------------------------------------------------------
    @classmethod
    def constant(cls, c: complex = 1.0) -> "WickPolynomial":
        return cls([Term(complex(c), ())])

    @classmethod
    def monomial(cls, *factors, coef: complex = 1.0) -> "WickPolynomial":
        """Plain product ``phi(f_1)...phi(f_n)``."""
        blocks = tuple(Block((f,), False) for f in factors)
        return cls([Term(complex(coef), blocks)])

    @classmethod
    def wick(cls, *factors, coef: complex = 1.0, model=True) -> "WickPolynomial":
        """Wick-ordered ``:phi(f_1)...phi(f_n):``."""
        if not factors:
            return cls.constant(coef)
        return cls([Term(complex(coef), (Block(tuple(factors), model),))])

    # algebra ---------------------------------------------------------------
    def __add__(self, other):
        other = _as_poly(other)
        return WickPolynomial(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def scale(self, c: complex) -> "WickPolynomial":
        return WickPolynomial(Term(t.coef * c, t.blocks) for t in self.terms)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(complex(other))
        other = _as_poly(other)
        return WickPolynomial(Term(a.coef * b.coef, a.blocks + b.blocks)
                              for a in self.terms for b in other.terms)

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(complex(other))
        return _as_poly(other) * self

    def conj(self) -> "WickPolynomial":
        """Complex conjugate (factors are real test functions)."""
        return WickPolynomial(Term(np.conj(t.coef), t.blocks) for t in self.terms)

    @property
    def degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    def map_factors(self, fn: Callable) -> "WickPolynomial":
        return WickPolynomial(Term(t.coef, tuple(Block(tuple(fn(f) for f in b.factors), b.wick)
                                                 for b in t.blocks)) for t in self.terms)

    def evaluate(self, model: GaussianFieldModel) -> "WickPolynomial":
        """Replace test functions by their load vectors in ``model``."""
        cache: dict[int, np.ndarray] = {}

        def ev(f):
            if isinstance(f, np.ndarray):
                return f
            key = id(f)
            if key not in cache:
                cache[key] = np.asarray(f.load(model))
            return cache[key]

        return self.map_factors(ev)

    def support(self, model: GaussianFieldModel) -> np.ndarray:
        """Vertices where some factor's load vector is nonzero."""
        ev = self.evaluate(model)
        mask = np.zeros(model.n, dtype=bool)
        for t in ev.terms:
            for b in t.blocks:
                for h in b.factors:
                    mask |= np.asarray(h) != 0
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        terms = []
        for t in self.terms:
            blocks = []
            for b in t.blocks:
                if any(isinstance(f, np.ndarray) for f in b.factors):
                    raise TypeError("polynomials with raw load vectors do not serialize")
                if not isinstance(b.wick, bool):
                    raise TypeError("only model-relative Wick ordering serializes")
                blocks.append({"wick": b.wick, "factors": [f.to_dict() for f in b.factors]})
            terms.append({"coef": [float(np.real(t.coef)), float(np.imag(t.coef))], "blocks": blocks})
        return {"terms": terms}

    @classmethod
    def from_dict(cls, data: dict) -> "WickPolynomial":
        terms = []
        for k, t in enumerate(data["terms"]):
            c = t.get("coef", 1.0)
            coef = complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c)
            try:
                blocks = tuple(Block(tuple(test_function_from_dict(f) for f in b["factors"]),
                                     bool(b.get("wick", False))) for b in t.get("blocks", []))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"polynomial term {k}: {exc}") from exc
            terms.append(Term(coef, blocks))
        return cls(terms)

    def __repr__(self):
        return f"WickPolynomial({len(self.terms)} terms, degree {self.degree})"


def _as_poly(x) -> WickPolynomial:
    if isinstance(x, WickPolynomial):
        return x
    if isinstance(x, (int, float, complex, np.number)):
        return WickPolynomial.constant(complex(x))
    raise TypeError(f"cannot combine polynomial with {type(x).__name__}")


def reflect_polynomial(P: WickPolynomial, mesh: SphereMesh | None = None) -> WickPolynomial:
    """``Theta``: conjugate coefficients and pull every factor back by the reflection.

    Raw load vectors are permuted by the mesh mirror, which is the pullback
    for metrics invariant under the reflection.
    """

    def refl(f):
        if isinstance(f, np.ndarray):
            if mesh is None:
                raise ValueError("reflecting load vectors needs the mesh")
            return f[mesh.mirror]
        return f.reflect()

    return P.map_factors(refl).conj()


# --------------------------------------------------------------------------
# pairing engine

def hafnian(W: np.ndarray):
    """Sum over perfect matchings of ``prod W[i, j]`` (recursive, memoized)."""
    n = W.shape[0]
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    if n == 2:
        return W[0, 1]
    memo: dict[int, object] = {}

    def rec(mask):
        if mask == 0:
            return 1.0
        hit = memo.get(mask)
        if hit is not None:
            return hit
        low = mask & -mask
        i = low.bit_length() - 1
        rest = mask ^ low
        s = 0.0
        m = rest
        while m:
            bit = m & -m
            j = bit.bit_length() - 1
            w = W[i, j]
            if w != 0:
                s = s + w * rec(rest ^ bit)
            m ^= bit
        memo[mask] = s
        return s

    return rec((1 << n) - 1)


class _Table:
    """Distinct factor vectors of a computation and their covariance Gram matrices."""

    def __init__(self, model: GaussianFieldModel):
        self.model = model
        self.vectors: list[np.ndarray] = []
        self.ids: dict[int, int] = {}
        self.grams: dict[int, np.ndarray] = {}
        self.providers: dict[int, object] = {}

    def index(self, h) -> int:
        key = id(h)
        k = self.ids.get(key)
        if k is None:
            k = len(self.vectors)
            self.vectors.append(np.asarray(h))
            self.ids[key] = k
            self.grams.clear()
        return k

    def gram(self, provider) -> np.ndarray:
        key = id(provider)
        G = self.grams.get(key)
        if G is None:
            if not self.vectors:
                return np.zeros((0, 0))
            H = np.stack(self.vectors, axis=1)
            G = H.T @ provider.solve(H)
            G = 0.5 * (G + G.T)
            self.grams[key] = G
            self.providers[key] = provider
        return G


def _wick_provider(block: Block, model):
    if block.wick is True:
        return model
    if block.wick is False or len(block.factors) < 2:
        return None
    return block.wick


def _term_indices(table: _Table, blocks, model):
    idx, tags = [], []
    for b_id, b in enumerate(blocks):
        prov = _wick_provider(b, model)
        for h in b.factors:
            idx.append(table.index(h))
            tags.append((b_id, prov))
    return idx, tags


def _pair_matrix(table: _Table, idx, tags, measure):
    K = table.gram(measure)
    n = len(idx)
    W = K[np.ix_(idx, idx)].copy()
    for a in range(n):
        ba, pa = tags[a]
        if pa is None:
            continue
        Ca = table.gram(pa)
        for b in range(n):
            if b != a and tags[b][0] == ba:
                W[a, b] -= Ca[idx[a], idx[b]]
    return W


def _check_evaluated(P: WickPolynomial):
    for t in P.terms:
        for b in t.blocks:
            for h in b.factors:
                if not isinstance(h, np.ndarray):
                    raise TypeError("evaluate the polynomial on a model first")


def _weighted_measure(model: GaussianFieldModel, weight):
    """Measure model and log normalization for the weight ``exp(-1/2 phi^T diag(weight) phi)``."""
    if weight is None:
        return model, 0.0
    G = np.broadcast_to(np.asarray(weight, dtype=float), (model.n,))
    if not np.any(G):
        return model, 0.0
    tilted = model.with_mass(model.mass + G / model.m, label="tilted")
    return tilted, 0.5 * (model.logdet() - tilted.logdet())


def _term_value(table, blocks, model, measure):
    idx, tags = _term_indices(table, blocks, model)
    if len(idx) % 2:
        return 0.0
    if not idx:
        return 1.0
    return hafnian(_pair_matrix(table, idx, tags, measure))


def expectation(model: GaussianFieldModel, *polys: WickPolynomial, weight=None,
                log_factor: float = 0.0) -> complex:
    """``< P_1 ... P_k exp(-1/2 phi^T diag(weight) phi) >`` under ``model``, times ``exp(log_factor)``.

    Wick blocks marked ``True`` are ordered against ``model`` (not the
    tilted measure).
    """
    return complex(expectation_tensor(model, [[P] for P in polys], weight, log_factor).reshape(()))


def expectation_tensor(model: GaussianFieldModel, families, weight=None,
                       log_factor: float = 0.0) -> np.ndarray:
    """Array ``T[a_1, ..., a_k] = < P^1_{a_1} ... P^k_{a_k} exp(-1/2 phi^T diag(weight) phi) >``.

    All entries share one covariance table, so the cost is one sparse solve
    per distinct factor plus the pairing sums.
    """
    fams = [[P.evaluate(model) for P in fam] for fam in families]
    measure, lognorm = _weighted_measure(model, weight)
    table = _Table(model)
    for fam in fams:
        for P in fam:
            for t in P.terms:
                _term_indices(table, t.blocks, model)
    out = np.zeros(tuple(len(f) for f in fams), dtype=complex)
    for pos in itertools.product(*(range(len(f)) for f in fams)):
        acc = 0.0 + 0.0j
        for combo in itertools.product(*(fams[k][a].terms for k, a in enumerate(pos))):
            coef = 1.0 + 0.0j
            blocks = ()
            for t in combo:
                coef *= t.coef
                blocks += t.blocks
            if coef != 0:
                acc += coef * _term_value(table, blocks, model, measure)
        out[pos] = acc
    return out * np.exp(lognorm + log_factor)


def moment(model: GaussianFieldModel, P: WickPolynomial) -> complex:
    return expectation(model, P)


def l2_norm(model: GaussianFieldModel, P: WickPolynomial) -> float:
    val = expectation(model, P.conj(), P)
    return float(np.sqrt(max(val.real, 0.0)))


def inner_product_matrix(model: GaussianFieldModel, left: Sequence[WickPolynomial],
                         right: Sequence[WickPolynomial], weight=None) -> np.ndarray:
    """Matrix ``<L_a R_b>`` sharing one covariance table across all entries."""
    return expectation_tensor(model, [list(left), list(right)], weight)


# --------------------------------------------------------------------------
# normal forms, second quantization, conditional expectations

def _partial_matchings(n: int, allowed):
    """All partial matchings of ``range(n)`` (as lists of pairs) with allowed pairs."""
    def rec(rem):
        if not rem:
            yield []
            return
        i, rest = rem[0], rem[1:]
        for tail in rec(rest):
            yield tail
        for k, j in enumerate(rest):
            if allowed(i, j):
                for tail in rec(rest[:k] + rest[k + 1:]):
                    yield [(i, j)] + tail
    yield from rec(tuple(range(n)))


def normal_form(model: GaussianFieldModel, P: WickPolynomial) -> WickPolynomial:
    """Rewrite ``P`` as a sum of single blocks Wick-ordered against ``model``."""
    ev = P.evaluate(model)
    table = _Table(model)
    out = []
    for t in ev.terms:
        idx, tags = _term_indices(table, t.blocks, model)
        if not idx:
            out.append(Term(t.coef, ()))
            continue
        factors = [h for b in t.blocks for h in b.factors]
        W = _pair_matrix(table, idx, tags, model)

        def allowed(i, j, tags=tags):
            # pairs inside a block already ordered against ``model`` carry weight zero
            return not (tags[i][0] == tags[j][0] and tags[i][1] is model)

        for match in _partial_matchings(len(idx), allowed):
            c = t.coef
            used = set()
            for i, j in match:
                c = c * W[i, j]
                used.update((i, j))
            rest = tuple(factors[k] for k in range(len(idx)) if k not in used)
            out.append(Term(c, (Block(rest, model),) if rest else ()))
    return WickPolynomial(out)


def to_ordinary(model: GaussianFieldModel, P: WickPolynomial) -> WickPolynomial:
    """Expand every Wick block into plain products (keeps all terms, even zero ones)."""
    ev = P.evaluate(model)
    table = _Table(model)
    out = []
    for t in ev.terms:
        idx, tags = _term_indices(table, t.blocks, model)
        factors = [h for b in t.blocks for h in b.factors]
        pieces = [(t.coef, [])]
        start = 0
        for b_id, b in enumerate(t.blocks):
            n = len(b.factors)
            prov = _wick_provider(b, model)
            local = list(range(start, start + n))
            new = []
            if prov is None:
                for c, fs in pieces:
                    new.append((c, fs + [factors[k] for k in local]))
            else:
                C = table.gram(prov)
                for match in _partial_matchings(n, lambda i, j: True):
                    w = 1.0
                    used = set()
                    for i, j in match:
                        w *= -C[idx[local[i]], idx[local[j]]]
                        used.update((i, j))
                    rest = [factors[local[k]] for k in range(n) if k not in used]
                    for c, fs in pieces:
                        new.append((c * w, fs + rest))
            pieces = new
            start += n
        for c, fs in pieces:
            out.append(Term(c, tuple(Block((h,), False) for h in fs)))
    return WickPolynomial(out)


def gamma_op(model: GaussianFieldModel, T, P: WickPolynomial) -> WickPolynomial:
    """Second quantization: ``Gamma(T) :phi(f_1)..phi(f_n): = :phi(T f_1)..phi(T f_n):``.

    ``T`` is a matrix acting on load vectors or a callable doing so.
    """
    apply = T if callable(T) else (lambda h: np.asarray(T) @ h)
    nf = normal_form(model, P)
    cache: dict[int, np.ndarray] = {}

    def tf(h):
        k = id(h)
        if k not in cache:
            cache[k] = np.asarray(apply(h))
        return cache[k]

    return WickPolynomial(Term(t.coef, tuple(Block(tuple(tf(h) for h in b.factors), model)
                                              for b in t.blocks)) for t in nf.terms)


def conditional_expectation(model: GaussianFieldModel, A, P: WickPolynomial) -> WickPolynomial:
    """``E_A = Gamma(e_A)``."""
    A = A if isinstance(A, NodeRegion) else NodeRegion(np.asarray(A))
    return gamma_op(model, lambda h: model.project(A.indices, h), P)


def aligned_difference(X: WickPolynomial, Y: WickPolynomial) -> WickPolynomial:
    """``X - Y`` for polynomials with the same term/block layout, written so that
    every term carries a small factor (coefficient difference or a telescoped
    factor difference).  Avoids cancellation when ``X`` and ``Y`` nearly agree.
    """
    if len(X.terms) != len(Y.terms):
        raise ValueError("polynomials are not aligned")
    out = []
    for tx, ty in zip(X.terms, Y.terms):
        shape_x = [(len(b), id(b.wick) if not isinstance(b.wick, bool) else b.wick) for b in tx.blocks]
        shape_y = [(len(b), id(b.wick) if not isinstance(b.wick, bool) else b.wick) for b in ty.blocks]
        if [s[0] for s in shape_x] != [s[0] for s in shape_y] or shape_x != shape_y:
            raise ValueError("polynomials are not aligned")
        if tx.coef != ty.coef:
            out.append(Term(tx.coef - ty.coef, ty.blocks))
        fx = [h for b in tx.blocks for h in b.factors]
        fy = [h for b in ty.blocks for h in b.factors]
        for k in range(len(fx)):
            diff = np.asarray(fx[k]) - np.asarray(fy[k])
            if not np.any(diff):
                continue
            mixed = fy[:k] + [diff] + fx[k + 1:]
            blocks, pos = [], 0
            for b in tx.blocks:
                blocks.append(Block(tuple(mixed[pos:pos + len(b)]), b.wick))
                pos += len(b)
            out.append(Term(tx.coef, tuple(blocks)))
    # constants from different terms may cancel each other; sum them before any norm is taken
    const = sum((t.coef for t in out if not t.blocks), 0j)
    rest = [t for t in out if t.blocks]
    return WickPolynomial(([Term(const, ())] if const != 0 else []) + rest)


def markov_check(model: GaussianFieldModel, inside: NodeRegion, separator: NodeRegion,
                 outside: NodeRegion, polys: Sequence[WickPolynomial]) -> dict:
    """Max over ``polys`` of ``||E_{outside+sep} E_{inside+sep} P - E_sep P||_2``.

    ``inside``/``outside`` are the open sides; the separator must disconnect them.
    """
    check_separator(model.mesh, inside, separator, outside)
    closed_in = inside.union(separator, "closed inside")
    closed_out = outside.union(separator, "closed outside")
    worst, norms = 0.0, []
    for P in polys:
        two = gamma_op(model, lambda h: model.project(closed_out.indices,
                                                      model.project(closed_in.indices, h)), P)
        one = conditional_expectation(model, separator, P)
        r = l2_norm(model, aligned_difference(two, one))
        norms.append(r)
        worst = max(worst, r)
    return {"residual": worst, "residuals": norms}


# --------------------------------------------------------------------------
# reflection positivity and the Hilbert space

def _check_reflection_symmetric(model: GaussianFieldModel, tol: float = 1e-12):
    mesh = model.mesh
    p = mesh.mirror
    gap = np.max(np.abs(model.m[p] - model.m)) / np.max(model.m)
    mass_gap = np.max(np.abs(model.mass[p] - model.mass)) / max(np.max(np.abs(model.mass)), 1e-300)
    if gap > tol or mass_gap > tol:
        raise ValueError(f"model is not reflection invariant (mass mismatch {max(gap, mass_gap):.2e})")


def _check_inside(model: GaussianFieldModel, P: WickPolynomial):
    supp = P.support(model)
    if supp.size and np.max(model.mesh.log_radius[supp]) > 1e-12:
        raise ValueError("polynomial is not supported in the closed unit disc")


def rp_gram(model: GaussianFieldModel, polys: Sequence[WickPolynomial],
            check_equality: bool = True) -> dict:
    """Gram matrix ``G_ab = <(Theta P_a) P_b>`` and its reflection-positivity diagnostics."""
    _check_reflection_symmetric(model)
    for P in polys:
        _check_inside(model, P)
    evs = [P.evaluate(model) for P in polys]
    refl = [reflect_polynomial(P, model.mesh) for P in evs]
    G = inner_product_matrix(model, refl, evs)
    herm = float(np.max(np.abs(G - G.conj().T))) if G.size else 0.0
    G = 0.5 * (G + G.conj().T)
    eig = np.linalg.eigvalsh(G) if G.size else np.zeros(0)
    norm = float(np.max(np.abs(eig))) if eig.size else 0.0
    out = {"gram": G, "hermitian_gap": herm, "min_eig": float(eig.min()) if eig.size else 0.0,
           "norm": norm, "eigenvalues": eig}
    if check_equality:
        sep = ring_region(model.mesh, 0.0)
        conds = [conditional_expectation(model, sep, P) for P in evs]
        diag = np.array([expectation(model, c.conj(), c).real for c in conds])
        gap = np.abs(np.real(np.diag(G)) - diag)
        out["equality_residual"] = float(np.max(gap / np.maximum(1.0, np.abs(diag)))) if len(diag) else 0.0
        L2 = inner_product_matrix(model, [c.conj() for c in conds], conds)
        out["third_construction_residual"] = float(np.max(np.abs(L2 - G)) / max(norm, 1e-300)) if G.size else 0.0
    return out


def ring_region(mesh: SphereMesh, t: float) -> NodeRegion:
    r = mesh.ring_index(t)
    return NodeRegion(1 + r * mesh.n_angle + np.arange(mesh.n_angle), f"ring t={t:g}")


@dataclass
class HilbertSpace:
    """Quotient of a family by the null space of its Gram matrix.

    ``basis`` columns are family coefficients of an orthonormal basis; ``nu``
    maps family coefficient vectors to coordinates in that basis.
    """

    gram: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    tol: float

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[1]

    @property
    def basis(self) -> np.ndarray:
        return self.eigenvectors / np.sqrt(self.eigenvalues)[None, :]

    def nu(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return np.sqrt(self.eigenvalues)[:, None] * (self.eigenvectors.conj().T @ x.reshape(len(self.gram), -1))

    def inner(self, x, y) -> complex:
        return complex((self.nu(x).conj().T @ self.nu(y)).squeeze())


def hilbert_space(G: np.ndarray, tol: float = 1e-10) -> HilbertSpace:
    """Orthonormal basis of the quotient by the null space (relative eigen cutoff ``tol``)."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    G = np.asarray(G, dtype=complex)
    G = 0.5 * (G + G.conj().T)
    w, U = np.linalg.eigh(G)
    top = max(float(np.max(np.abs(w))), 0.0) if w.size else 0.0
    if w.size and w.min() < -1e-10 * max(top, 1e-300):
        raise ValueError(f"Gram matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    keep = w > tol * top if top > 0 else np.zeros(w.shape, dtype=bool)
    return HilbertSpace(G, w[keep], U[:, keep], tol)


def combine(polys: Sequence[WickPolynomial], coefs) -> WickPolynomial:
    out = WickPolynomial()
    for P, c in zip(polys, coefs):
        if c != 0:
            out = out + P.scale(complex(c))
    return out


# --------------------------------------------------------------------------
# scalar helpers

def characteristic(model: GaussianFieldModel, f) -> float:
    """``<exp(i phi(f))> = exp(-||f||_{-1}^2/2)``; ``f`` a test function or load vector."""
    h = f if isinstance(f, np.ndarray) else f.load(model)
    return float(np.exp(-0.5 * h @ model.solve(h)))


def sample_field(model: GaussianFieldModel, n_samples: int, seed: int) -> np.ndarray:
    """Exact samples ``phi ~ N(0, Q^-1)`` (rows) via a dense Cholesky factor of ``Q``."""
    rng = np.random.default_rng(seed)
    Lc = np.linalg.cholesky(model.Q.toarray())
    z = rng.standard_normal((model.n, n_samples))
    return sla.solve_triangular(Lc.T, z, lower=False).T


def characteristic_mc(model: GaussianFieldModel, f, n_samples: int = 4000, seed: int = 0) -> dict:
    h = f if isinstance(f, np.ndarray) else f.load(model)
    vals = np.cos(sample_field(model, n_samples, seed) @ h)
    return {"mean": float(vals.mean()), "stderr": float(vals.std(ddof=1) / np.sqrt(n_samples))}


def gamma_trace(lams: Sequence[float], cutoff: int = 40) -> dict:
    """``Tr Gamma(T)`` for ``T`` with eigenvalues ``lams``: truncated Fock sum and product."""
    lams = np.asarray(list(lams), dtype=float)
    if np.any(lams >= 1) or np.any(lams < 0):
        raise ValueError("eigenvalues must satisfy 0 <= lambda < 1")
    coeffs = np.zeros(cutoff + 1)
    coeffs[0] = 1.0
    for lam in lams:
        # multiply by 1/(1 - lam x) truncated: c_j <- sum_{i<=j} c_i lam^{j-i}
        for j in range(1, cutoff + 1):
            coeffs[j] += lam * coeffs[j - 1]
    partial = np.cumsum(coeffs)
    product = float(np.prod(1.0 / (1.0 - lams))) if lams.size else 1.0
    lmax = float(lams.max()) if lams.size else 0.0
    k = len(lams)
    tail = 0.0
    if lmax > 0:
        j = cutoff + 1
        term = math.comb(j + k - 1, k - 1) * lmax ** j
        while term > 1e-18 * max(1.0, tail) and j < cutoff + 100000:
            tail += term
            j += 1
            term = math.comb(j + k - 1, k - 1) * lmax ** j
    return {"truncated": float(partial[-1]), "partial_sums": partial.tolist(), "product": product,
            "tail_bound": tail, "gap": product - float(partial[-1])}


def hypercontractivity_check_1mode(c: float, hermite_coeffs: Sequence[float], points: int = 80,
                                   enforce_bound: bool = True) -> dict:
    """Compare ``||Gamma(c) psi||_4`` with ``||psi||_2`` for one Gaussian mode.

    ``psi = sum_n a_n He_n`` (probabilists' Hermite polynomials) and
    ``Gamma(c) He_n = c^n He_n``; norms by Gauss-Hermite quadrature.
    """

    bound = 1.0 / np.sqrt(3.0)
    if enforce_bound and abs(c) > bound + 1e-15:
        raise ValueError(f"|c| must not exceed 1/sqrt(3) (got {c})")
    a = np.asarray(hermite_coeffs, dtype=float)
    need = 2 * len(a) + 2
    points = max(points, need)
    x, w = He.hermegauss(points)
    w = w / np.sqrt(2 * np.pi)
    if not np.isclose(w.sum(), 1.0, atol=1e-12):
        raise FloatingPointError("Gauss-Hermite weights underflowed")
    psi = He.hermeval(x, a)
    gpsi = He.hermeval(x, a * c ** np.arange(len(a)))
    lhs = float(np.sum(w * gpsi ** 4) ** 0.25)
    rhs = float(np.sqrt(np.sum(w * psi ** 2)))
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs <= rhs * (1 + 1e-8))}


@dataclass
class FockTruncation:
    """H^-1-orthonormal modes and a total degree cap (default 4)."""

    modes: np.ndarray
    max_degree: int = 4

    def check_orthonormal(self, model: GaussianFieldModel, tol: float = 1e-10) -> float:
        G = model.cov(self.modes)
        gap = float(np.max(np.abs(G - np.eye(G.shape[0]))))
        if gap > tol:
            raise ValueError(f"modes are not orthonormal (gap {gap:.2e})")
        return gap

    def occupations(self):
        k = self.modes.shape[1]
        for total in range(self.max_degree + 1):
            for combo in itertools.combinations_with_replacement(range(k), total):
                yield tuple(combo.count(i) for i in range(k))
