"""Conformal metrics on the Riemann sphere, radial reflection, Möbius maps,
disc parametrizations and geodesic distances.

Points are complex numbers in the ``z`` chart; the point at infinity is
handled through the ``zeta = 1/z`` chart.  A metric is ``rho(z)|dz|^2`` and
every metric knows its density in both charts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph

from .expressions import Expression, as_expression

__all__ = [
    "ComplexPoint", "MobiusMap", "THETA", "ConformalMetric", "FlatMetric", "RoundMetric",
    "CylindricalMetric", "StandardMetric", "PullbackMetric", "ScaledMetric", "BlendedMetric",
    "SplitMetric", "DiscSpec", "reflect", "reflect_z", "check_reflection_invariance",
    "standard_metric", "disc_map", "parametrization_maps", "conformal_factor",
    "geodesic_distance", "distance_ratio_limit", "smoothstep", "check_disjoint",
    "metric_from_dict", "disc_from_dict", "GeodesicError",
]


# --------------------------------------------------------------------------
# points and maps

@dataclass(frozen=True)
class ComplexPoint:
    """A point of the sphere given in the ``z`` chart or the ``zeta`` chart."""

    value: complex
    chart: str = "z"

    def __post_init__(self):
        if self.chart not in ("z", "zeta"):
            raise ValueError(f"unknown chart {self.chart!r}")
        if not np.isfinite(complex(self.value)):
            raise ValueError("chart coordinate must be finite")
        object.__setattr__(self, "value", complex(self.value))

    @property
    def is_infinity(self) -> bool:
        return self.chart == "zeta" and self.value == 0

    def to_chart(self, chart: str) -> "ComplexPoint":
        if chart == self.chart:
            return self
        if self.value == 0:
            raise ValueError("point is a pole of the requested chart")
        return ComplexPoint(1.0 / self.value, chart)

    def z(self) -> complex:
        """The ``z`` coordinate (``inf`` for the point at infinity)."""
        if self.chart == "z":
            return self.value
        return complex(np.inf) if self.value == 0 else 1.0 / self.value


def reflect_z(z):
    """Radial reflection ``z -> z/|z|^2`` on finite nonzero arrays."""
    z = np.asarray(z, dtype=complex)
    return z / (z.real ** 2 + z.imag ** 2)


def reflect(p: ComplexPoint | complex) -> ComplexPoint:
    """Radial reflection; 0 and infinity are exchanged through the chart switch."""
    if not isinstance(p, ComplexPoint):
        p = ComplexPoint(p)
    if p.chart == "z":
        if p.value == 0:
            return ComplexPoint(0.0, "zeta")
        return ComplexPoint(complex(reflect_z(p.value)), "z")
    # in the zeta chart the reflection reads zeta -> zeta/|zeta|^2 as well
    if p.value == 0:
        return ComplexPoint(0.0, "z")
    return ComplexPoint(complex(reflect_z(p.value)), "zeta")


@dataclass(frozen=True)
class MobiusMap:
    """``z -> (a w + b)/(c w + d)`` with ``w = z`` or ``w = conj(z)`` when ``anti``.

    Coefficients are normalized to unit determinant.  Anti-holomorphic maps
    are included so that the radial reflection composes with disc maps.
    """

    a: complex
    b: complex
    c: complex
    d: complex
    anti: bool = False

    def __post_init__(self):
        a, b, c, d = (complex(v) for v in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        if not abs(det) > 1e-300:
            raise ValueError("degenerate Möbius map (ad - bc = 0)")
        s = np.sqrt(det)
        a, b, c, d = a / s, b / s, c / s, d / s
        if abs(a * d - b * c) < 1e-12:
            raise ValueError("degenerate Möbius map after normalization")
        for name, v in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, v)

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(1, 0, 0, 1)

    @classmethod
    def rotation(cls, angle: float) -> "MobiusMap":
        return cls(np.exp(1j * angle), 0, 0, 1)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        w = np.conj(z) if self.anti else z
        with np.errstate(divide="ignore", invalid="ignore"):
            num = self.a * w + self.b
            den = self.c * w + self.d
            out = num / den
            inf_in = ~np.isfinite(w)
            if np.any(inf_in):
                lim = self.a / self.c if self.c != 0 else complex(np.inf)
                out = np.where(inf_in, lim, out)
            zero_den = (den == 0) & ~inf_in
            out = np.where(zero_den, complex(np.inf), out)
        return out if out.ndim else complex(out)

    def scale(self, z):
        """Conformal scale ``|dm/dz|`` (modulus of the complex derivative)."""
        z = np.asarray(z, dtype=complex)
        w = np.conj(z) if self.anti else z
        with np.errstate(divide="ignore"):
            return np.abs(1.0 / (self.c * w + self.d) ** 2)

    def derivative(self, z):
        """Complex derivative; for anti maps the derivative in ``conj(z)``."""
        z = np.asarray(z, dtype=complex)
        w = np.conj(z) if self.anti else z
        return 1.0 / (self.c * w + self.d) ** 2

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """Return ``self o other`` (apply ``other`` first)."""
        inner = other.matrix
        if self.anti:
            inner = np.conj(inner)
        m = self.matrix @ inner
        return MobiusMap(m[0, 0], m[0, 1], m[1, 0], m[1, 1], self.anti != other.anti)

    def inverse(self) -> "MobiusMap":
        a, b, c, d = self.a, self.b, self.c, self.d
        m = np.array([[d, -b], [-c, a]], dtype=complex)
        if self.anti:
            m = np.conj(m)
        return MobiusMap(m[0, 0], m[0, 1], m[1, 0], m[1, 1], self.anti)

    def almost_equal(self, other: "MobiusMap", tol: float = 1e-12) -> bool:
        if self.anti != other.anti:
            return False
        m1, m2 = self.matrix, other.matrix
        return bool(np.allclose(m1, m2, atol=tol) or np.allclose(m1, -m2, atol=tol))

    def to_dict(self) -> dict:
        return {"a": _cstr(self.a), "b": _cstr(self.b), "c": _cstr(self.c),
                "d": _cstr(self.d), "anti": self.anti}

    @classmethod
    def from_dict(cls, data: dict) -> "MobiusMap":
        return cls(*(_cparse(data[k]) for k in "abcd"), bool(data.get("anti", False)))


THETA = MobiusMap(0, 1, 1, 0, anti=True)
INVERT = MobiusMap(0, 1, 1, 0)


def _cstr(v: complex) -> list:
    v = complex(v)
    return [float(v.real), float(v.imag)]


def _cparse(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def smoothstep(u):
    """Quintic smoothstep on [0, 1]; C^2 with vanishing end derivatives."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


# --------------------------------------------------------------------------
# metrics

class ConformalMetric:
    """Base class for ``rho(z)|dz|^2``.

    Subclasses implement :meth:`log_density` for finite ``z`` and
    :meth:`log_density_at_infinity` for ``lim |z|^4 rho(z)``.
    """

    kind = "abstract"
    sphere_global = True

    def log_density(self, z) -> np.ndarray:
        raise NotImplementedError

    def log_density_at_infinity(self) -> float:
        raise NotImplementedError

    def density(self, z):
        return np.exp(self.log_density(z))

    def log_density_zeta(self, zeta):
        """Log density in the chart ``zeta = 1/z``: ``|zeta|^-4 rho(1/zeta)``."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
        out = np.empty(zeta.shape)
        at_inf = zeta == 0
        if np.any(at_inf):
            out[at_inf] = self.log_density_at_infinity()
        if np.any(~at_inf):
            zz = zeta[~at_inf]
            out[~at_inf] = self.log_density(1.0 / zz) - 4.0 * np.log(np.abs(zz))
        return out

    def density_zeta(self, zeta):
        return np.exp(self.log_density_zeta(zeta))

    def log_density_point(self, p: ComplexPoint) -> float:
        if p.chart == "z":
            return float(np.asarray(self.log_density(np.array([p.value])))[0])
        return float(self.log_density_zeta(np.array([p.value]))[0])

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class FlatMetric(ConformalMetric):
    kind = "flat"
    sphere_global = False

    def log_density(self, z):
        return np.zeros(np.shape(z))

    def log_density_at_infinity(self):
        return np.inf

    def to_dict(self):
        return {"kind": "flat"}


class RoundMetric(ConformalMetric):
    """``4/(1+|z|^2)^2``: the unit sphere, curvature one."""

    kind = "round"

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        return np.log(4.0) - 2.0 * np.log1p(np.abs(z) ** 2)

    def log_density_at_infinity(self):
        return np.log(4.0)

    def to_dict(self):
        return {"kind": "round"}


class CylindricalMetric(ConformalMetric):
    """``|z|^-2``: the infinite flat cylinder."""

    kind = "cylindrical"
    sphere_global = False

    def log_density(self, z):
        with np.errstate(divide="ignore"):
            return -2.0 * np.log(np.abs(np.asarray(z, dtype=complex)))

    def log_density_at_infinity(self):
        return np.inf

    def to_dict(self):
        return {"kind": "cylindrical"}


class StandardMetric(ConformalMetric):
    """Rotation and reflection invariant metric, cylindrical on ``e^-d < |z| < e^d``.

    Written in the cylinder coordinate ``t = log|z|`` as ``rho(z)|z|^2 = exp(h(t))``
    with ``h`` even, ``h = 0`` for ``|t| <= d`` and a quintic smoothstep
    blend on ``d <= |t| <= 2d``:

    * ``flat`` flavor: ``h = -2|t| s(u)``, so the metric is ``|dz|^2`` for
      ``|z| < e^{-2d}`` and ``|z|^-4|dz|^2`` for ``|z| > e^{2d}``;
    * ``massive`` flavor: ``h = -2(|t| - d) s(u)``, constant ``e^{2d}`` near 0.

    Both blends are monotone in ``|t|``, C^2, and exactly even in ``t``.
    """

    kind = "standard"

    def __init__(self, flavor: str, d: float):
        if flavor not in ("massive", "flat"):
            raise ValueError(f"unknown standard metric flavor {flavor!r}")
        d = float(d)
        if not d > 0 or not np.isfinite(d):
            raise ValueError(f"standard metric needs d > 0, got {d}")
        self.flavor = flavor
        self.d = d

    def cylinder_log_density(self, t):
        """``h(t) = log(rho(z)|z|^2)`` as a function of ``t = log|z|``."""
        a = np.abs(np.asarray(t, dtype=float))
        s = smoothstep((a - self.d) / self.d)
        if self.flavor == "flat":
            return -2.0 * a * s
        return -2.0 * (a - self.d) * s

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        out = np.empty(z.shape)
        zero = r == 0
        out[zero] = 0.0 if self.flavor == "flat" else 2.0 * self.d
        if np.any(~zero):
            t = np.log(r[~zero])
            out[~zero] = self.cylinder_log_density(t) - 2.0 * t
        return out

    def log_density_at_infinity(self):
        return 0.0 if self.flavor == "flat" else 2.0 * self.d

    def enlargement(self, level: int) -> float:
        """Radius of ``D_0`` (level 0), ``D_0+`` (1) and ``D_0++`` (2)."""
        return float(np.exp(level * self.d / 2.0))

    def to_dict(self):
        return {"kind": "standard", "flavor": self.flavor, "d": self.d}


def standard_metric(flavor: str, d: float) -> StandardMetric:
    """Standard metric of the given flavor (``"massive"`` or ``"flat"``)."""
    return StandardMetric(flavor, d)


def _pulled_log_density(base: ConformalMetric, m: MobiusMap, z) -> np.ndarray:
    """``log`` of the density of ``m^* base`` at finite points ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    w = np.atleast_1d(m(z))
    out = np.empty(z.shape)
    near = np.isfinite(w) & (np.abs(w) <= 1.0)
    if np.any(near):
        out[near] = base.log_density(w[near]) + 2.0 * np.log(m.scale(z[near]))
    far = ~near
    if np.any(far):
        mz = INVERT.compose(m)  # zeta coordinate of the image
        zeta = np.atleast_1d(mz(z[far]))
        out[far] = base.log_density_zeta(zeta) + 2.0 * np.log(mz.scale(z[far]))
    return out


class PullbackMetric(ConformalMetric):
    """``m^* base``: density ``rho_base(m(z)) |m'(z)|^2``."""

    kind = "pullback"

    def __init__(self, base: ConformalMetric, m: MobiusMap):
        self.base = base
        self.map = m
        self.sphere_global = base.sphere_global

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        return _pulled_log_density(self.base, self.map, z.ravel()).reshape(z.shape)

    def log_density_at_infinity(self):
        return float(_pulled_log_density(self.base, self.map.compose(INVERT), np.array([0j]))[0])

    def to_dict(self):
        return {"kind": "pullback", "base": self.base.to_dict(), "map": self.map.to_dict()}


class ScaledMetric(ConformalMetric):
    """``e^sigma * base`` with ``sigma`` a closed-form expression in ``z``."""

    kind = "scaled"

    def __init__(self, base: ConformalMetric, sigma, sigma_at_infinity: float | None = None):
        self.base = base
        self.sigma = as_expression(sigma)
        self.sigma_at_infinity = sigma_at_infinity
        self.sphere_global = base.sphere_global and sigma_at_infinity is not None

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        return self.base.log_density(z) + self.sigma.real(z)

    def log_density_at_infinity(self):
        if self.sigma_at_infinity is None:
            return np.inf
        return self.base.log_density_at_infinity() + float(self.sigma_at_infinity)

    def to_dict(self):
        out = {"kind": "scaled", "base": self.base.to_dict(), "sigma": self.sigma.source}
        if self.sigma_at_infinity is not None:
            out["sigma_at_infinity"] = float(self.sigma_at_infinity)
        return out


class SplitMetric(ConformalMetric):
    """``inner`` on ``|z| <= radius`` and ``outer`` on ``|z| > radius``."""

    kind = "split"

    def __init__(self, inner: ConformalMetric, outer: ConformalMetric, radius: float = 1.0):
        self.inner, self.outer, self.radius = inner, outer, float(radius)

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        inside = np.abs(z) <= self.radius
        out = np.empty(z.shape)
        if np.any(inside):
            out[inside] = self.inner.log_density(z[inside])
        if np.any(~inside):
            out[~inside] = self.outer.log_density(z[~inside])
        return out

    def log_density_at_infinity(self):
        return self.outer.log_density_at_infinity()

    def to_dict(self):
        return {"kind": "split", "inner": self.inner.to_dict(), "outer": self.outer.to_dict(),
                "radius": self.radius}


class BlendedMetric(ConformalMetric):
    """Background metric with disc patches glued in.

    Each patch is ``(disc, metric)``; the weight of a patch is 1 on the
    enlarged closure ``D_{i++}`` (``|alpha_i| <= e^d``) and decays to 0 by
    ``|alpha_i| = e^{d + collar}`` via the quintic smoothstep in
    ``log|alpha_i|``.  Where a weight is exactly 1 (or all weights vanish) the
    patch (or background) density is returned unchanged.
    """

    kind = "blended"

    def __init__(self, background: ConformalMetric, patches: Sequence[tuple["DiscSpec", ConformalMetric]],
                 d: float, collar: float = 0.5):
        self.background = background
        self.patches = list(patches)
        self.d = float(d)
        self.collar = float(collar)
        if self.collar <= 0:
            raise ValueError("collar must be positive")

    def weights(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        ws = np.zeros((len(self.patches), z.size))
        for k, (disc, _) in enumerate(self.patches):
            w = np.abs(np.atleast_1d(disc.alpha()(z.ravel())))
            with np.errstate(divide="ignore"):
                u = (np.log(w) - self.d) / self.collar
            ws[k] = 1.0 - smoothstep(u)
        return ws

    def _blend(self, logs_bg, logs_patch, ws):
        out = logs_bg.copy()
        total = ws.sum(axis=0)
        mixed = total > 0
        if np.any(mixed):
            acc = (1.0 - total[mixed]) * logs_bg[mixed]
            for k in range(len(self.patches)):
                acc = acc + ws[k, mixed] * logs_patch[k][mixed]
            out[mixed] = acc
        for k in range(len(self.patches)):
            exact = ws[k] == 1.0
            out[exact] = logs_patch[k][exact]
        return out

    def log_density(self, z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        ws = self.weights(flat)
        logs_bg = np.asarray(self.background.log_density(flat), dtype=float)
        logs_patch = []
        for k, (_, metric) in enumerate(self.patches):
            vals = np.zeros(flat.shape)
            active = ws[k] > 0
            if np.any(active):
                vals[active] = metric.log_density(flat[active])
            logs_patch.append(vals)
        return self._blend(logs_bg, logs_patch, ws).reshape(z.shape)

    def log_density_at_infinity(self):
        for disc, metric in self.patches:
            if disc.shape == "exterior":
                return metric.log_density_at_infinity()
        return self.background.log_density_at_infinity()

    def to_dict(self):
        return {"kind": "blended", "background": self.background.to_dict(), "d": self.d,
                "collar": self.collar,
                "patches": [{"disc": disc.to_dict(), "metric": m.to_dict()} for disc, m in self.patches]}


def metric_from_dict(data: dict) -> ConformalMetric:
    kind = data.get("kind")
    if kind == "flat":
        return FlatMetric()
    if kind == "round":
        return RoundMetric()
    if kind == "cylindrical":
        return CylindricalMetric()
    if kind == "standard":
        return StandardMetric(data["flavor"], float(data["d"]))
    if kind == "pullback":
        return PullbackMetric(metric_from_dict(data["base"]), MobiusMap.from_dict(data["map"]))
    if kind == "scaled":
        s_inf = data.get("sigma_at_infinity")
        return ScaledMetric(metric_from_dict(data["base"]), str(data["sigma"]),
                            None if s_inf is None else float(s_inf))
    if kind == "split":
        return SplitMetric(metric_from_dict(data["inner"]), metric_from_dict(data["outer"]),
                           float(data.get("radius", 1.0)))
    if kind == "blended":
        return BlendedMetric(metric_from_dict(data["background"]),
                             [(disc_from_dict(p["disc"]), metric_from_dict(p["metric"]))
                              for p in data["patches"]],
                             float(data["d"]), float(data.get("collar", 0.5)))
    raise ValueError(f"unknown metric kind {kind!r}")


def check_reflection_invariance(metric: ConformalMetric, samples, tol: float = 1e-12) -> dict:
    """Max relative deviation of ``|z|^-4 rho(1/conj z)`` from ``rho(z)``."""
    z = np.atleast_1d(np.asarray(samples, dtype=complex))
    if np.any(z == 0):
        raise ValueError("reflection samples must avoid z = 0")
    lhs = np.exp(metric.log_density(reflect_z(z)) - 4.0 * np.log(np.abs(z)))
    rhs = metric.density(z)
    with np.errstate(invalid="ignore"):
        err = np.abs(lhs - rhs) / rhs
    err = np.where(np.isfinite(err), err, np.inf)
    k = int(np.argmax(err))
    max_err = float(err[k])
    return {"maxError": max_err, "pass": bool(max_err <= tol), "worst": complex(z[k]), "tol": tol}


def conformal_factor(m1: ConformalMetric, m2: ConformalMetric, p) -> float:
    """``sigma = log(rho_1(p)/rho_2(p))``."""
    if not isinstance(p, ComplexPoint):
        p = ComplexPoint(p)
    s = m1.log_density_point(p) - m2.log_density_point(p)
    if not np.isfinite(s):
        raise ValueError(f"densities are not both positive and finite at {p}")
    return float(s)


# --------------------------------------------------------------------------
# discs

@dataclass(frozen=True)
class DiscSpec:
    """A disc ``|z - a| <= r`` (interior) or ``|z - a| >= r`` (exterior, contains infinity).

    ``alpha`` sends the disc to the closed unit disc; enlargement level
    ``k`` (0, 1, 2) is ``|alpha| <= e^{k d/2}``.
    """

    shape: str
    center: complex
    radius: float
    orientation: str = "in"
    twist: float = 0.0

    def __post_init__(self):
        if self.shape not in ("interior", "exterior"):
            raise ValueError(f"disc shape must be interior or exterior, got {self.shape!r}")
        if self.orientation not in ("in", "out"):
            raise ValueError(f"disc orientation must be in or out, got {self.orientation!r}")
        if not float(self.radius) > 0:
            raise ValueError("disc radius must be positive")
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "twist", float(self.twist))

    def alpha(self) -> MobiusMap:
        a, r = self.center, self.radius
        if self.shape == "interior":
            return MobiusMap(1.0, -a, 0.0, r)
        return MobiusMap(0.0, r, 1.0, -a)

    def parametrization(self) -> MobiusMap:
        """``j = e^{i twist} alpha`` for in-discs, ``j' = e^{i twist}/alpha`` for out-discs."""
        rot = MobiusMap.rotation(self.twist)
        if self.orientation == "in":
            return rot.compose(self.alpha())
        return rot.compose(INVERT).compose(self.alpha())

    def contains(self, z, level: int = 0, d: float = 0.0) -> np.ndarray:
        w = np.abs(np.atleast_1d(self.alpha()(np.asarray(z, dtype=complex))))
        return w <= np.exp(level * d / 2.0) * (1 + 1e-13)

    def boundary(self, n: int = 256, level: int = 0, d: float = 0.0) -> np.ndarray:
        """Sampled boundary circle of the level-``k`` enlargement."""
        w = np.exp(level * d / 2.0) * np.exp(2j * np.pi * np.arange(n) / n)
        return np.atleast_1d(self.alpha().inverse()(w))

    def to_dict(self):
        return {"shape": self.shape, "center": _cstr(self.center), "radius": self.radius,
                "orientation": self.orientation, "twist": self.twist}


def disc_from_dict(data: dict) -> DiscSpec:
    return DiscSpec(data["shape"], _cparse(data["center"]), float(data["radius"]),
                    data.get("orientation", "in"), float(data.get("twist", 0.0)))


def disc_map(disc: DiscSpec) -> MobiusMap:
    return disc.alpha()


def parametrization_maps(disc: DiscSpec) -> MobiusMap:
    return disc.parametrization()


def check_disjoint(discs: Sequence[DiscSpec], d: float, level: int = 2, n: int = 256) -> None:
    """Raise ``ValueError`` unless the level-``k`` enlargements are pairwise disjoint."""
    for i, di in enumerate(discs):
        for j, dj in enumerate(discs):
            if j <= i:
                continue
            bi = di.boundary(n, level, d)
            bj = dj.boundary(n, level, d)
            hit = np.any(dj.contains(bi, level, d)) or np.any(di.contains(bj, level, d))
            ci = di.alpha().inverse()(0.0)
            cj = dj.alpha().inverse()(0.0)
            nested = bool(np.any(dj.contains(np.array([ci]), level, d))) or \
                bool(np.any(di.contains(np.array([cj]), level, d)))
            if hit or nested:
                raise ValueError(f"enlarged discs {i} and {j} overlap")


# --------------------------------------------------------------------------
# geodesics

class GeodesicError(RuntimeError):
    pass


def _path_length(metric: ConformalMetric, pts: np.ndarray) -> float:
    """Length of a polyline with Simpson's rule on every segment."""
    a, b = pts[:-1], pts[1:]
    mid = 0.5 * (a + b)
    sq = np.sqrt(metric.density(np.concatenate([a, mid, b])))
    n = len(a)
    w = (sq[:n] + 4.0 * sq[n:2 * n] + sq[2 * n:]) / 6.0
    return float(np.sum(np.abs(b - a) * w))


def _grid_path(metric: ConformalMetric, x: complex, y: complex, refinement: int,
               margin: float) -> np.ndarray:
    """Dijkstra on a grid aligned with the segment ``x -> y`` (16-neighbour stencil)."""
    n = int(refinement)
    step = 1.0 / n
    m = int(np.ceil(margin * n))
    s = np.arange(-m, n + m + 1) * step
    v = np.arange(-m, m + 1) * step
    S, V = np.meshgrid(s, v, indexing="ij")
    pts = x + (y - x) * (S + 1j * V)
    ns, nv = S.shape
    idx = np.arange(ns * nv).reshape(ns, nv)
    rows, cols, lens = [], [], []
    for di, dj in [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)]:
        ia = np.arange(max(0, -di), ns - max(0, di))
        ja = np.arange(max(0, -dj), nv - max(0, dj))
        I, J = np.meshgrid(ia, ja, indexing="ij")
        p, q = pts[I, J].ravel(), pts[I + di, J + dj].ravel()
        mid = 0.5 * (p + q)
        dens = np.sqrt(metric.density(np.concatenate([p, mid, q])))
        k = len(p)
        w = np.abs(q - p) * (dens[:k] + 4 * dens[k:2 * k] + dens[2 * k:]) / 6.0
        rows.append(idx[I, J].ravel())
        cols.append(idx[I + di, J + dj].ravel())
        lens.append(w)
    rows, cols, lens = np.concatenate(rows), np.concatenate(cols), np.concatenate(lens)
    ok = np.isfinite(lens)
    graph = sparse.coo_matrix((lens[ok], (rows[ok], cols[ok])), shape=(ns * nv,) * 2).tocsr()
    src, dst = idx[m, m], idx[m + n, m]
    dist, pred = csgraph.dijkstra(graph, directed=False, indices=src, return_predecessors=True)
    if not np.isfinite(dist[dst]):
        raise GeodesicError("grid search found no path")
    path = [dst]
    while path[-1] != src:
        path.append(pred[path[-1]])
    return pts.ravel()[np.array(path[::-1])]


def _resample(pts: np.ndarray, k: int) -> np.ndarray:
    seg = np.abs(np.diff(pts))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    u = np.linspace(0.0, s[-1], k + 1)
    return np.interp(u, s, pts.real) + 1j * np.interp(u, s, pts.imag)


def geodesic_path(metric: ConformalMetric, x, y, refinement: int = 32, segments: int = 48,
                  margin: float = 0.5) -> tuple[np.ndarray, float]:
    """Approximate minimizing path and its length."""
    x, y = complex(x), complex(y)
    if x == y:
        raise ValueError("geodesic endpoints must differ")
    pts = _resample(_grid_path(metric, x, y, refinement, margin), segments)
    start = _path_length(metric, pts)

    def energy(flat):
        inner = flat[: segments - 1] + 1j * flat[segments - 1:]
        return _path_length(metric, np.concatenate([[x], inner, [y]]))

    p0 = np.concatenate([pts[1:-1].real, pts[1:-1].imag])
    res = optimize.minimize(energy, p0, method="L-BFGS-B",
                            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11})
    length = float(res.fun)
    if not np.isfinite(length) or length > start * (1 + 1e-12):
        raise GeodesicError(f"path smoothing failed (residual {res.fun - start:.3e})")
    inner = res.x[: segments - 1] + 1j * res.x[segments - 1:]
    return np.concatenate([[x], inner, [y]]), length


def geodesic_distance(metric: ConformalMetric, x, y, refinement: int = 32) -> float:
    """Distance between finite points, by grid shortest path plus path smoothing."""
    if isinstance(x, ComplexPoint):
        x = x.z()
    if isinstance(y, ComplexPoint):
        y = y.z()
    return geodesic_path(metric, x, y, refinement)[1]


def distance_ratio_limit(base: ConformalMetric, sigma, x, offsets: Sequence[float] | None = None,
                         direction: complex = 1.0, refinement: int = 24) -> dict:
    """Ratios ``d_{e^sigma base}(x, y)/d_base(x, y)`` along ``y -> x`` and their limit.

    The limit is extrapolated by a least-squares fit in the offset
    ``h = |y - x|`` of the form ``c0 + c1 h + c2 h^2``.
    """
    sigma = as_expression(sigma)
    scaled = ScaledMetric(base, sigma)
    if offsets is None:
        offsets = 0.2 * 0.5 ** np.arange(6)
    x = complex(x)
    direction = complex(direction) / abs(complex(direction))
    hs = np.asarray(offsets, dtype=float)
    ratios = np.array([geodesic_distance(scaled, x, x + h * direction, refinement)
                       / geodesic_distance(base, x, x + h * direction, refinement) for h in hs])
    design = np.vander(hs, 3, increasing=True)
    coef, *_ = np.linalg.lstsq(design, ratios, rcond=None)
    expected = float(np.exp(sigma.real(np.array([x]))[0] / 2.0))
    limit = float(coef[0])
    return {"offsets": hs.tolist(), "ratios": ratios.tolist(), "limit": limit,
            "expected": expected, "relative_error": abs(limit - expected) / expected}
