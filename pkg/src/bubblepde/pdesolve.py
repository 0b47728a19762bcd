"""Backward finite differences for v_t = -1/2 sigma^2(y) v_yy on (0, cap],
with interchangeable boundary schemes: the floor-anchored scheme fed by a
Monte Carlo boundary table, three truncation-based rivals, and a naive
Dirichlet diagnostic that deliberately picks up the wrong (linear) solution.

Also houses the bridge between the volatility function sigma and the space
transform f (f' o f^{-1} = -sigma), and the integral test telling strict
local martingales from true ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .boundary import PayoffSpec, ThetaTable
from .errors import ConfigError, DomainError, NumericsError
from .pathlab import TimeGrid
from .smoothmaps import SmoothMap, affine_map, compose, from_descriptor, power_law_map


# ---------------------------------------------------------------------------
# sigma handling.

def _sigma_callable(sigma) -> Callable:
    """Accept either a descriptor dict ({"kind": "power", "coefficient": a,
    "exponent": p} meaning a*y**p) or a plain callable sigma(y)."""
    if callable(sigma):
        return sigma
    if isinstance(sigma, dict) and sigma.get("kind") == "power":
        a = float(sigma.get("coefficient", 1.0))
        p = float(sigma["exponent"])
        if a <= 0:
            raise ConfigError("sigma coefficient must be positive")
        return lambda y: a * np.asarray(y, dtype=float) ** p
    raise ConfigError(f"unsupported sigma descriptor: {sigma!r}")


def _doubling_tail(func: Callable, start: float, n_panels: int = 60,
                   ratio_cut: float = 0.999):
    """Integrate func over [start, inf) by doubling panels [2^k, 2^k+1)*start
    and classify the tail: returns (converges: bool, partial_sum).

    The tail is declared convergent when panel increments either fall below
    an absolute floor or keep shrinking geometrically (ratio < ratio_cut);
    constant or growing increments mean divergence.
    """
    incs = []
    lo = start
    total = 0.0
    for _ in range(n_panels):
        hi = 2.0 * lo
        val, _err = quad(func, lo, hi, limit=200)
        incs.append(val)
        total += val
        lo = hi
    tail = np.array(incs[-8:])
    floor = 1e-13 * max(1.0, abs(total))
    if tail[-1] < floor:
        return True, total
    ratios = tail[1:] / np.where(tail[:-1] == 0, 1.0, tail[:-1])
    r = float(np.median(ratios))
    return (0 < r < ratio_cut), total


def is_strict_local_martingale(sigma) -> bool:
    """True when the integral of y / sigma(y)^2 over [1, inf) is finite --
    the criterion separating bubble dynamics (strict local martingale price)
    from true-martingale dynamics."""
    s = _sigma_callable(sigma)
    converges, _ = _doubling_tail(lambda y: y / s(y) ** 2, 1.0)
    return converges


def f_from_sigma(sigma) -> SmoothMap:
    """Recover the decreasing space transform f from sigma:
    f^{-1}(y) = integral_y^inf dy'/sigma(y'), so f'(f^{-1}(y)) = -sigma(y).

    Power-law sigma(y) = a*y^p (p > 1) is handled analytically:
    f(x) = (a(p-1))^{1/(1-p)} * x^{1/(1-p)}.  Other descriptors go through
    adaptive quadrature for f^{-1}, root bracketing for f, and the chain of
    sigma-derivatives (by central differences) for f'', f'''.

    Raises DomainError when the tail integral of 1/sigma diverges (no finite
    f^{-1} exists, e.g. sigma(y) = y).
    """
    if isinstance(sigma, dict) and sigma.get("kind") == "power":
        a = float(sigma.get("coefficient", 1.0))
        p = float(sigma["exponent"])
        if p <= 1:
            raise DomainError(
                f"tail integral of 1/sigma diverges for exponent {p} <= 1; "
                "no space transform exists")
        alpha = 1.0 / (1.0 - p)
        scale = (a * (p - 1.0)) ** alpha
        return compose(affine_map(scale, 0.0), power_law_map(alpha))

    s = _sigma_callable(sigma)
    converges, _ = _doubling_tail(lambda y: 1.0 / s(y), 1.0)
    if not converges:
        raise DomainError("tail integral of 1/sigma diverges; "
                          "no space transform exists")

    def f_inv(y):
        val, _ = quad(lambda u: 1.0 / s(u), y, np.inf, limit=400)
        return val

    def f_scalar(x):
        if x <= 0:
            raise DomainError("space transform defined for x > 0")
        y_lo, y_hi = 1.0, 1.0
        while f_inv(y_lo) < x:
            y_lo /= 4.0
            if y_lo < 1e-280:
                raise NumericsError("could not bracket f(x) from below")
        while f_inv(y_hi) > x:
            y_hi *= 4.0
            if y_hi > 1e280:
                raise NumericsError("could not bracket f(x) from above")
        return brentq(lambda y: f_inv(y) - x, y_lo, y_hi, xtol=1e-14, rtol=1e-13)

    def ds(y, k):  # central-difference sigma derivatives
        h = 1e-5 * max(abs(y), 1.0)
        if k == 1:
            return (s(y + h) - s(y - h)) / (2 * h)
        return (s(y + h) - 2 * s(y) + s(y - h)) / h ** 2

    f_eval = np.vectorize(f_scalar, otypes=[float])

    def d1(x):
        return -s(f_eval(x))

    def d2(x):
        y = f_eval(x)
        return ds(y, 1) * s(y)

    def d3(x):
        y = f_eval(x)
        return -(ds(y, 2) * s(y) + ds(y, 1) ** 2) * s(y)

    return SmoothMap(domain=(0.0, np.inf), eval=f_eval, d1=d1, d2=d2, d3=d3,
                     sign=-1.0, descriptor={"kind": "from_sigma",
                                            "sigma": getattr(sigma, "__name__", "callable")})


# ---------------------------------------------------------------------------
# Grids and schemes.

@dataclass(frozen=True)
class SpaceGrid:
    """Strictly increasing price-space nodes y_0 < ... < y_M, M >= 3."""

    nodes: np.ndarray
    rule: str = "custom"

    def __post_init__(self):
        y = np.asarray(self.nodes, dtype=float)
        if y.ndim != 1 or len(y) < 4:
            raise ConfigError("space grid needs at least 4 nodes")
        if np.any(np.diff(y) <= 0):
            raise ConfigError("space grid must be strictly increasing")
        object.__setattr__(self, "nodes", y)

    @classmethod
    def uniform(cls, lo: float, hi: float, m: int) -> "SpaceGrid":
        return cls(np.linspace(lo, hi, int(m) + 1), rule="uniform")

    @classmethod
    def geometric(cls, lo: float, hi: float, m: int) -> "SpaceGrid":
        """Log-uniform nodes: resolution concentrates toward y = 0 where the
        degenerate coefficient needs it."""
        if not 0 < lo < hi:
            raise ConfigError("geometric grid needs 0 < lo < hi")
        return cls(np.exp(np.linspace(np.log(lo), np.log(hi), int(m) + 1)),
                   rule="geometric")

    @classmethod
    def geometric_with_zero(cls, lo: float, hi: float, m: int) -> "SpaceGrid":
        """As geometric, but with an explicit y = 0 node for schemes whose
        domain is [0, n]."""
        if not 0 < lo < hi:
            raise ConfigError("geometric grid needs 0 < lo < hi")
        inner = np.exp(np.linspace(np.log(lo), np.log(hi), int(m)))
        return cls(np.concatenate([[0.0], inner]), rule="geometric_with_zero")

    @property
    def m(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class FundraiserScheme:
    """Floor-anchored scheme: solve on (0, f(j)] with the cap row pinned to
    the Monte Carlo boundary table Theta(T - t, j)."""

    j: float
    theta: ThetaTable
    kind = "fundraiser"

    def __post_init__(self):
        if self.j <= 0:
            raise ConfigError("floor j must be positive")
        if abs(self.theta.j - self.j) > 1e-12 * max(1.0, self.j):
            raise ConfigError(
                f"theta table was computed for j={self.theta.j}, scheme has j={self.j}")


@dataclass(frozen=True)
class NeumannCapScheme:
    """Truncate at y = n and impose a one-sided second-order v_y(t, n) = 0."""

    n: float
    kind = "neumann_cap"

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError("cap n must be positive")


@dataclass(frozen=True)
class TaperedTerminalScheme:
    """Truncate at y = n, replace the terminal datum by a continuous taper:
    payoff on [0, n/2], linear to 0 at n; Dirichlet 0 at the cap."""

    n: float
    kind = "tapered_terminal"

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError("cap n must be positive")


@dataclass(frozen=True)
class TransformedCauchyScheme:
    """Solve the convection form w_t = -1/2 sigma^2 w_yy - (sigma^2/y) w_y
    for w = v/y with terminal payoff(y)/y and Dirichlet 0 at both ends;
    report v = y * w.  Needs payoff(0) = 0 with bounded payoff(y)/y."""

    n: float
    kind = "transformed_cauchy"

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError("cap n must be positive")


@dataclass(frozen=True)
class NaiveDirichletScheme:
    """Diagnostic: Dirichlet v(t, cap) = payoff(cap).  For the forward payoff
    this locks onto the linear solution v = y, demonstrating that the Cauchy
    problem has more than one solution."""

    cap: float
    kind = "naive_dirichlet"

    def __post_init__(self):
        if self.cap <= 0:
            raise ConfigError("cap must be positive")


SchemeKind = Union[FundraiserScheme, NeumannCapScheme, TaperedTerminalScheme,
                   TransformedCauchyScheme, NaiveDirichletScheme]


@dataclass(frozen=True)
class PdeSolution:
    grid: SpaceGrid
    times: TimeGrid
    values: np.ndarray  # (len(times.nodes), len(grid.nodes))
    scheme: SchemeKind
    theta_weight: float

    def value_at(self, t: float, y) -> float:
        """Bilinear interpolation of the stored solution."""
        tn = self.times.nodes
        if not tn[0] <= t <= tn[-1]:
            raise DomainError("t outside the solved time range")
        k = min(int(np.searchsorted(tn, t, side="right")) - 1, len(tn) - 2)
        w = (t - tn[k]) / (tn[k + 1] - tn[k])
        row = (1 - w) * self.values[k] + w * self.values[k + 1]
        yn = self.grid.nodes
        if np.any(np.asarray(y) < yn[0]) or np.any(np.asarray(y) > yn[-1]):
            raise DomainError("y outside the space grid")
        out = np.interp(y, yn, row)
        return float(out) if np.ndim(y) == 0 else out

    def to_csv(self, path) -> None:
        """Matrix export: first row = y-nodes, first column = times."""
        lines = ["t," + ",".join(repr(float(y)) for y in self.grid.nodes)]
        for t, row in zip(self.times.nodes, self.values):
            lines.append(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# The solver.

_DEFAULT_M = 800
_DEFAULT_STEPS = 2048
_LO_FRAC = 1e-5  # default bottom node as a fraction of the cap


def _default_grid(scheme: SchemeKind, cap: float) -> SpaceGrid:
    lo = cap * _LO_FRAC
    if isinstance(scheme, FundraiserScheme):
        return SpaceGrid.geometric(lo, cap, _DEFAULT_M)
    return SpaceGrid.geometric_with_zero(lo, cap, _DEFAULT_M)


def _scheme_cap(sigma, scheme: SchemeKind) -> float:
    if isinstance(scheme, FundraiserScheme):
        # The cap is f(j) for the map the theta table was built with; taking
        # it from the table (rather than re-deriving f from sigma) keeps the
        # domain consistent with the boundary data by construction.
        f = from_descriptor(scheme.theta.map_descriptor)
        return float(f(scheme.j))
    if isinstance(scheme, NaiveDirichletScheme):
        return float(scheme.cap)
    return float(scheme.n)


def _taper(payoff: PayoffSpec, n: float, y: np.ndarray) -> np.ndarray:
    """Continuous piecewise-linear cut-off: payoff below n/2, straight line
    from payoff(n/2) down to 0 at n."""
    h = np.asarray(payoff(y), dtype=float)
    hmid = float(payoff(n / 2.0))
    ramp = hmid * (n - np.asarray(y, dtype=float)) / (n / 2.0)
    return np.where(y <= n / 2.0, h, np.maximum(ramp, 0.0))


def solve(sigma, payoff: PayoffSpec, T: float, scheme: SchemeKind,
          grid: Optional[SpaceGrid] = None, times: Optional[TimeGrid] = None,
          theta_weight: float = 1.0) -> PdeSolution:
    """Backward theta-weighted finite differences for the terminal-value
    problem v_t = -1/2 sigma^2(y) v_yy, v(T, .) = terminal datum, under the
    boundary rows of the given scheme.

    theta_weight = 1 is implicit Euler (default: unconditionally monotone),
    1/2 is Crank-Nicolson.  Off-diagonal sign violations (a non-monotone
    discretization) are rejected with the offending node named.
    """
    if not 0.0 <= theta_weight <= 1.0:
        raise ConfigError("theta_weight must lie in [0, 1]")
    if T <= 0:
        raise ConfigError("T must be positive")
    s = _sigma_callable(sigma)
    cap = _scheme_cap(sigma, scheme)
    if grid is None:
        grid = _default_grid(scheme, cap)
    if times is None:
        times = TimeGrid.uniform(T, _DEFAULT_STEPS)
    if abs(times.T - T) > 1e-12 * max(1.0, T):
        raise ConfigError("time grid does not end at T")
    y = grid.nodes
    if abs(y[-1] - cap) > 1e-9 * max(1.0, cap):
        raise ConfigError(
            f"grid must end at the scheme cap {cap}, got {y[-1]}")
    if isinstance(scheme, FundraiserScheme):
        if y[0] <= 0:
            raise ConfigError("the floor-anchored scheme lives on y > 0")
        if not scheme.theta.covers(T):
            raise ConfigError(
                f"theta table covers tau up to {scheme.theta.taus[-1]}, need {T}")
        theta_of = scheme.theta.interpolator()

    m = grid.m
    yi = y[1:-1]
    sig2 = np.asarray(s(yi), dtype=float) ** 2
    hm = yi - y[:-2]
    hp = y[2:] - yi
    a = sig2 / (hm * (hm + hp))
    c = sig2 / (hp * (hm + hp))
    if isinstance(scheme, TransformedCauchyScheme):
        conv = sig2 / yi  # central-difference coefficient of w_y
        a = a - conv * hp / (hm * (hm + hp))
        c = c + conv * hm / (hp * (hm + hp))
    b = -(a + c)  # the operator annihilates constants
    bad = np.where((a < 0) | (c < 0))[0]
    if len(bad):
        i = int(bad[0]) + 1
        raise NumericsError(
            f"non-monotone discretization: negative off-diagonal at node "
            f"i={i}, y={y[i]:.6g}")

    # terminal datum
    if isinstance(scheme, TaperedTerminalScheme):
        v = _taper(payoff, scheme.n, y)
    elif isinstance(scheme, TransformedCauchyScheme):
        v = np.zeros_like(y)
        v[1:] = np.asarray(payoff(y[1:]), dtype=float) / y[1:]
        if not np.all(np.isfinite(v)) or v.max() > 1e12:
            raise ConfigError(
                "transformed scheme needs payoff(y)/y bounded near 0")
    else:
        v = np.asarray(payoff(y), dtype=float)

    bottom = float(payoff(0.0))
    if isinstance(scheme, TransformedCauchyScheme):
        bottom = 0.0

    def top_datum(t_new: float) -> Optional[float]:
        if isinstance(scheme, FundraiserScheme):
            return float(theta_of(T - t_new))
        if isinstance(scheme, TaperedTerminalScheme):
            return 0.0
        if isinstance(scheme, TransformedCauchyScheme):
            return 0.0
        if isinstance(scheme, NaiveDirichletScheme):
            return float(payoff(scheme.cap))
        return None  # NeumannCap: handled by its own row

    neumann = isinstance(scheme, NeumannCapScheme)
    if neumann:
        h1 = y[m] - y[m - 1]
        h2 = y[m - 1] - y[m - 2]
        alpha = (2 * h1 + h2) / (h1 * (h1 + h2))
        beta = -(h1 + h2) / (h1 * h2)
        gamma = h1 / (h2 * (h1 + h2))

    n_t = times.n_steps
    dts = times.dt
    out = np.empty((n_t + 1, m + 1))
    out[n_t] = v if not isinstance(scheme, TransformedCauchyScheme) else v * y

    lower_bw = 2 if neumann else 1
    ab = np.zeros((lower_bw + 2, m + 1))
    rhs = np.empty(m + 1)

    # banded layout for solve_banded((lower_bw, 1)): row 0 holds A[i, i+1] at
    # column i+1, row 1 the diagonal, row 2 A[i, i-1] at column i-1, and (for
    # the Neumann cap row only) row 3 holds A[m, m-2] at column m-2.
    for k in range(n_t - 1, -1, -1):
        dt = dts[k]
        th = theta_weight
        expl = v[1:-1].copy()
        if th < 1.0:
            expl += (1 - th) * dt * (a * v[:-2] + b * v[1:-1] + c * v[2:])
        rhs[1:-1] = expl
        ab[:] = 0.0
        ab[0, 2:] = -th * dt * c
        ab[1, 0] = 1.0
        ab[1, 1:-1] = 1.0 - th * dt * b
        ab[2, 0:m - 1] = -th * dt * a
        rhs[0] = bottom
        if neumann:
            ab[1, m] = alpha
            ab[2, m - 1] = beta
            ab[3, m - 2] = gamma
            rhs[m] = 0.0
        else:
            ab[1, m] = 1.0
            rhs[m] = top_datum(times.nodes[k])
        v = solve_banded((lower_bw, 1), ab, rhs)
        out[k] = v if not isinstance(scheme, TransformedCauchyScheme) else v * y

    return PdeSolution(grid=grid, times=times, values=out,
                       scheme=scheme, theta_weight=float(theta_weight))


def corner_defect(sigma, payoff: PayoffSpec, T: float, scheme: SchemeKind,
                  grid: Optional[SpaceGrid] = None) -> float:
    """Mismatch between the terminal datum and the boundary condition at the
    space-time corner (t = T, y = cap): the instability driver of the
    truncation schemes, zero by construction for the floor-anchored scheme."""
    cap = _scheme_cap(sigma, scheme)
    if grid is None:
        grid = _default_grid(scheme, cap)
    y = grid.nodes
    if isinstance(scheme, FundraiserScheme):
        return abs(float(payoff(cap)) - float(scheme.theta.theta[0]))
    if isinstance(scheme, NeumannCapScheme):
        h1 = y[-1] - y[-2]
        h2 = y[-2] - y[-3]
        alpha = (2 * h1 + h2) / (h1 * (h1 + h2))
        beta = -(h1 + h2) / (h1 * h2)
        gamma = h1 / (h2 * (h1 + h2))
        h = np.asarray(payoff(y[-3:]), dtype=float)
        return abs(gamma * h[0] + beta * h[1] + alpha * h[2])
    if isinstance(scheme, TaperedTerminalScheme):
        return abs(float(_taper(payoff, scheme.n, np.array([cap]))[0]) - 0.0)
    if isinstance(scheme, TransformedCauchyScheme):
        return abs(float(payoff(cap)) / cap - 0.0)
    return abs(float(payoff(cap)) - float(payoff(scheme.cap)))


def convergence_study(sigma, payoff: PayoffSpec, T: float,
                      schemes: list, y_ref: float,
                      grid: Optional[SpaceGrid] = None,
                      times: Optional[TimeGrid] = None,
                      theta_weight: float = 1.0) -> list:
    """Solve once per scheme and tabulate the value at (t=0, y_ref).

    Returns a list of dicts with keys scheme, param, value, diff (successive
    difference along the given scheme order; None for the first row).
    """
    rows = []
    prev = None
    for sch in schemes:
        sol = solve(sigma, payoff, T, sch, grid=grid, times=times,
                    theta_weight=theta_weight)
        val = sol.value_at(0.0, y_ref)
        param = sch.j if isinstance(sch, FundraiserScheme) else (
            sch.cap if isinstance(sch, NaiveDirichletScheme) else sch.n)
        rows.append({"scheme": sch.kind, "param": float(param),
                     "value": float(val),
                     "diff": None if prev is None else float(val - prev)})
        prev = val
    return rows
