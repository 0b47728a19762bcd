"""Smooth monotone maps with analytic derivatives up to third order.

Carriers for the market's scale/price transformations. Each map knows its
open domain, its first three derivatives, and its monotonicity sign, which
is enough to evaluate the log-derivative ratio T_f = f''/f', the Schwarzian
S_f = f'''/f' - (3/2)(f''/f')^2, and the multiplicative path functional
built from them.

All evaluators are vectorized over numpy arrays. Derivatives are closed
form for every constructor (power law, logarithm, Moebius, compositions via
the exact chain rule); there is no automatic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

# Finite-difference cross-check constants used by the constructors' self-test
# (catches transcription errors in derivative code without flagging roundoff).
FD_EPS = 1e-5
FD_TOL = 1e-4


@dataclass(frozen=True)
class MobiusCoeffs:
    a: float
    b: float
    c: float
    d: float

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c


@dataclass(frozen=True)
class SmoothMap:
    """A thrice-differentiable strictly monotone map on an open interval.

    Fields
    ------
    domain : (lo, hi) open interval in the extended reals
    eval, d1, d2, d3 : vectorized evaluators for f, f', f'', f'''
    sign : +1 for increasing, -1 for decreasing
    descriptor : JSON-friendly construction record (used for hashing/serialization)
    """

    domain: tuple[float, float]
    eval: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    sign: int
    descriptor: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.eval(x)

    def contains(self, x) -> np.ndarray:
        lo, hi = self.domain
        x = np.asarray(x, dtype=float)
        return (x > lo) & (x < hi)

    def require(self, x) -> np.ndarray:
        """Return x as an array, raising DomainError if any point is outside."""
        x = np.asarray(x, dtype=float)
        ok = self.contains(x)
        if not np.all(ok):
            bad = np.atleast_1d(x)[~np.atleast_1d(ok)]
            raise DomainError(
                f"point {bad.flat[0]:.6g} outside domain ({self.domain[0]:.6g}, {self.domain[1]:.6g})"
            )
        return x


def _fd_cross_check(m: SmoothMap) -> None:
    # Probe a handful of interior points; compare analytic d1 against a
    # central difference of eval (and d2 against a difference of d1).
    lo, hi = m.domain
    a = lo if np.isfinite(lo) else -1.0
    b = hi if np.isfinite(hi) else max(a + 2.0, 3.0)
    pts = a + (b - a) * np.array([0.12, 0.31, 0.5, 0.77, 0.93])
    eps = FD_EPS * (1.0 + np.abs(pts))
    fd1 = (m.eval(pts + eps) - m.eval(pts - eps)) / (2 * eps)
    d1 = m.d1(pts)
    if np.any(np.abs(d1 - fd1) > FD_TOL * (1.0 + np.abs(d1))):
        raise DomainError(f"derivative cross-check failed for map {m.descriptor}")
    fd2 = (m.d1(pts + eps) - m.d1(pts - eps)) / (2 * eps)
    d2 = m.d2(pts)
    if np.any(np.abs(d2 - fd2) > FD_TOL * (1.0 + np.abs(d2))):
        raise DomainError(f"second-derivative cross-check failed for map {m.descriptor}")
    if np.any(m.sign * d1 <= 0):
        raise DomainError(f"monotonicity sign violated for map {m.descriptor}")


def power_law_map(alpha: float, xi: float = 0.0) -> SmoothMap:
    """f(x) = (x - xi)^alpha on (xi, inf); alpha = 0 means f(x) = log(x - xi).

    Closed forms: T_f(x) = (alpha-1)/(x-xi), S_f(x) = (1-alpha^2)/(2(x-xi)^2).
    """
    a = float(alpha)
    xi = float(xi)
    if a == 0.0:
        m = SmoothMap(
            domain=(xi, np.inf),
            eval=lambda x: np.log(np.asarray(x, dtype=float) - xi),
            d1=lambda x: 1.0 / (np.asarray(x, dtype=float) - xi),
            d2=lambda x: -1.0 / (np.asarray(x, dtype=float) - xi) ** 2,
            d3=lambda x: 2.0 / (np.asarray(x, dtype=float) - xi) ** 3,
            sign=1,
            descriptor={"kind": "log", "xi": xi},
        )
    else:
        m = SmoothMap(
            domain=(xi, np.inf),
            eval=lambda x: (np.asarray(x, dtype=float) - xi) ** a,
            d1=lambda x: a * (np.asarray(x, dtype=float) - xi) ** (a - 1),
            d2=lambda x: a * (a - 1) * (np.asarray(x, dtype=float) - xi) ** (a - 2),
            d3=lambda x: a * (a - 1) * (a - 2) * (np.asarray(x, dtype=float) - xi) ** (a - 3),
            sign=1 if a > 0 else -1,
            descriptor={"kind": "power_law", "alpha": a, "xi": xi},
        )
    _fd_cross_check(m)
    return m


def log_map(xi: float = 0.0) -> SmoothMap:
    return power_law_map(0.0, xi)


def mobius_map(coeffs: MobiusCoeffs | tuple) -> SmoothMap:
    """f(x) = (a x + b)/(c x + d), with ad - bc != 0.

    For c != 0 the domain is the branch to the right of the pole -d/c;
    affine maps (c = 0) live on the whole line. S_f vanishes identically.
    """
    if not isinstance(coeffs, MobiusCoeffs):
        coeffs = MobiusCoeffs(*coeffs)
    a, b, c, d = coeffs.a, coeffs.b, coeffs.c, coeffs.d
    det = coeffs.det
    if det == 0.0:
        raise DomainError("mobius map requires ad - bc != 0")
    if c == 0.0:
        dom = (-np.inf, np.inf)
    else:
        dom = (-d / c, np.inf)

    def ev(x):
        x = np.asarray(x, dtype=float)
        return (a * x + b) / (c * x + d)

    def ev1(x):
        x = np.asarray(x, dtype=float)
        return det / (c * x + d) ** 2

    def ev2(x):
        x = np.asarray(x, dtype=float)
        return -2 * c * det / (c * x + d) ** 3

    def ev3(x):
        x = np.asarray(x, dtype=float)
        return 6 * c * c * det / (c * x + d) ** 4

    m = SmoothMap(
        domain=dom, eval=ev, d1=ev1, d2=ev2, d3=ev3,
        sign=1 if det > 0 else -1,
        descriptor={"kind": "mobius", "a": a, "b": b, "c": c, "d": d},
    )
    _fd_cross_check(m)
    return m


def reciprocal_map() -> SmoothMap:
    """1/x on (0, inf) -- alias for mobius (0,1,1,0)."""
    return mobius_map(MobiusCoeffs(0.0, 1.0, 1.0, 0.0))


def affine_map(slope: float, intercept: float,
               domain: Optional[tuple[float, float]] = None) -> SmoothMap:
    """slope*x + intercept, optionally restricted to a subinterval."""
    m = mobius_map(MobiusCoeffs(float(slope), float(intercept), 0.0, 1.0))
    if domain is None:
        return m
    return SmoothMap(domain=(float(domain[0]), float(domain[1])),
                     eval=m.eval, d1=m.d1, d2=m.d2, d3=m.d3, sign=m.sign,
                     descriptor=dict(m.descriptor, domain=list(domain)))


def compose(outer: SmoothMap, inner: SmoothMap) -> SmoothMap:
    """outer after inner, derivatives via the exact chain rule to third order.

    The range of inner must lie in the domain of outer; this is spot-checked
    at construction on interior probe points.
    """
    lo, hi = inner.domain
    a = lo if np.isfinite(lo) else min(hi, 0.0) - 2.0 if np.isfinite(hi) else -2.0
    b = hi if np.isfinite(hi) else max(a + 2.0, 3.0)
    probes = a + (b - a) * np.linspace(0.02, 0.98, 9)
    vals = inner.eval(probes)
    if not np.all(outer.contains(vals)):
        raise DomainError(
            f"range of inner map {inner.descriptor} escapes domain of outer {outer.descriptor}"
        )

    def ev(x):
        return outer.eval(inner.eval(x))

    def ev1(x):
        return outer.d1(inner.eval(x)) * inner.d1(x)

    def ev2(x):
        u, u1, u2 = inner.eval(x), inner.d1(x), inner.d2(x)
        return outer.d2(u) * u1 ** 2 + outer.d1(u) * u2

    def ev3(x):
        u, u1, u2, u3 = inner.eval(x), inner.d1(x), inner.d2(x), inner.d3(x)
        return (outer.d3(u) * u1 ** 3 + 3 * outer.d2(u) * u1 * u2 + outer.d1(u) * u3)

    m = SmoothMap(
        domain=inner.domain, eval=ev, d1=ev1, d2=ev2, d3=ev3,
        sign=outer.sign * inner.sign,
        descriptor={"kind": "compose", "outer": outer.descriptor, "inner": inner.descriptor},
    )
    _fd_cross_check(m)
    return m


def shift_map(f: SmoothMap, j: float) -> SmoothMap:
    """f_j(x) = f(x + j): compose f with the unit-slope shift, exact domain."""
    lo, hi = f.domain
    inner = affine_map(1.0, float(j), domain=(lo - j, hi if np.isinf(hi) else hi - j))
    return compose(f, inner)


def from_descriptor(desc: dict) -> SmoothMap:
    """Build a map from a config descriptor (kind + parameters)."""
    kind = desc.get("kind")
    if kind == "power_law":
        return power_law_map(desc["alpha"], desc.get("xi", 0.0))
    if kind == "log":
        return log_map(desc.get("xi", 0.0))
    if kind == "mobius":
        return mobius_map(MobiusCoeffs(desc["a"], desc["b"], desc["c"], desc["d"]))
    if kind == "reciprocal":
        return reciprocal_map()
    if kind == "compose":
        return compose(from_descriptor(desc["outer"]), from_descriptor(desc["inner"]))
    raise DomainError(f"unknown map kind {kind!r}")


def pre_schwarzian(f: SmoothMap, x) -> np.ndarray:
    """T_f(x) = f''(x)/f'(x)."""
    x = f.require(x)
    return f.d2(x) / f.d1(x)


def schwarzian(f: SmoothMap, x) -> np.ndarray:
    """S_f(x) = f'''/f' - (3/2)(f''/f')^2."""
    x = f.require(x)
    t = f.d2(x) / f.d1(x)
    return f.d3(x) / f.d1(x) - 1.5 * t * t


def schwarzian_process(f: SmoothMap, path) -> np.ndarray:
    """The multiplicative functional sqrt(f'(X_0)/f'(X_t)) * exp(1/4 int S_f(X) du).

    The integral is accumulated by the trapezoidal rule on the path grid,
    with quadratic variation taken as d<X,X> = dt (every law simulated in
    this package has unit diffusion coefficient). The value at t=0 is
    exactly 1. If the path exits the domain of f the series is truncated at
    the last in-domain node (callers can consult path.truncated_at, which the
    simulators set for their own domain exits).

    Returns an array aligned to the path's grid nodes, possibly shorter when
    truncated.
    """
    X = np.asarray(path.X, dtype=float)
    inside = np.atleast_1d(f.contains(X))
    if not inside[0]:
        raise DomainError("path starts outside the domain of f")
    if not np.all(inside):
        n = int(np.argmin(inside))  # first exit node
        X = X[:n]
    t = path.grid.nodes[: len(X)]
    s = schwarzian(f, X)
    dt = np.diff(t)
    integral = np.concatenate(([0.0], np.cumsum(0.5 * (s[:-1] + s[1:]) * dt)))
    ratio = f.d1(X[0]) / f.d1(X)
    out = np.sqrt(ratio) * np.exp(0.25 * integral)
    out[0] = 1.0
    return out
