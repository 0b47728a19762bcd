"""Seeded path simulation: Wiener, Bessel-3 via the max-dual construction,
drifted unit-diffusion SDEs, and the reflected (floor-constrained) SDE with
its explicit Euler-Maruyama projection scheme; plus path functionals.

Reproducibility contract: every path index i owns a counter-based stream
keyed by (master seed, i) -- numpy Philox -- so path i is bit-identical no
matter how an ensemble is chunked or batched, and ensemble reductions run in
fixed path-index order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .smoothmaps import SmoothMap, schwarzian_process

# Relative guard keeping unreflected simulations off a finite domain edge.
EDGE_GUARD = 1e-12
# Ensemble runners process paths in blocks and draw increments in time chunks
# of bounded footprint; both knobs are implementation constants, invisible in
# results thanks to the per-path streams.
_BLOCK = 32768
_CHUNK_BUDGET = 2 ** 22  # floats per (block x chunk) increment draw


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes t_0 = 0 < t_1 < ... < t_N = T."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise DomainError("time grid needs at least two nodes")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise DomainError("time grid must start at 0 and be strictly increasing")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, float(T), int(n_steps) + 1))

    @classmethod
    def clustered(cls, T: float, n_steps: int, power: float = 2.0) -> "TimeGrid":
        """Nodes T*(k/N)^power: step sizes shrink toward t=0."""
        k = np.arange(int(n_steps) + 1, dtype=float)
        return cls(float(T) * (k / n_steps) ** power)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True)
class PathBundle:
    """One discretized path: values per node, optional floor series, raw
    Brownian increments, and the stream identity that produced it."""

    grid: TimeGrid
    X: np.ndarray
    increments: np.ndarray
    seed: int
    path_index: int = 0
    Jstar: Optional[np.ndarray] = None
    truncated_at: Optional[int] = None

    def stopped_at(self, node: int) -> "PathBundle":
        """The path restricted to nodes [0, node]."""
        return replace(
            self,
            grid=TimeGrid(self.grid.nodes[: node + 1]),
            X=self.X[: node + 1],
            increments=self.increments[:node],
            Jstar=None if self.Jstar is None else self.Jstar[: node + 1],
            truncated_at=self.truncated_at
            if self.truncated_at is not None and self.truncated_at <= node
            else None,
        )


def path_stream(seed: int, path_index: int = 0) -> np.random.Generator:
    """The counter-based generator owned by (seed, path_index)."""
    key = np.array([seed % 2 ** 64, path_index % 2 ** 64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _StreamBlock:
    """Per-path generators for a contiguous block of path indices, drawing
    increments in time chunks while preserving each stream's sequence."""

    def __init__(self, seed, indices):
        self.gens = [path_stream(seed, i) for i in indices]

    def normals(self, n_steps_chunk):
        out = np.empty((len(self.gens), n_steps_chunk))
        for row, g in enumerate(self.gens):
            out[row] = g.standard_normal(n_steps_chunk)
        return out


def _blocks(n_paths):
    for start in range(0, n_paths, _BLOCK):
        yield range(start, min(start + _BLOCK, n_paths))


def _chunks(n_steps, block_size):
    step = max(1, min(n_steps, _CHUNK_BUDGET // max(block_size, 1)))
    for a in range(0, n_steps, step):
        yield a, min(a + step, n_steps)


# ---------------------------------------------------------------------------
# Single-path simulators.

def simulate_wiener(x0: float, grid: TimeGrid, seed: int, path_index: int = 0) -> PathBundle:
    """Driftless unit-variance walk: X_n = X_{n-1} + sqrt(dt_n) * xi_n."""
    g = path_stream(seed, path_index)
    incr = g.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    # left-fold accumulation: keeps this bit-identical to the drifted
    # simulator with zero drift and to the chunked ensemble runners
    X = np.add.accumulate(np.concatenate(([x0], incr)))
    return PathBundle(grid=grid, X=X, increments=incr, seed=seed, path_index=path_index)


def simulate_bessel3_dual(x0: float, j0: float, grid: TimeGrid, seed: int,
                          path_index: int = 0) -> PathBundle:
    """Bessel-3 through its dual walk: X* Brownian from 2 j0 - x0,
    J*_n = max(J*_{n-1}, X*_n) from j0, X = 2 J* - X*.

    With j0 = x0 -> 0 this is the classical 2*max - walk representation of
    the Bessel-3 process from 0; for fixed 0 < j0 <= x0 it realizes the
    process conditioned to have overall infimum j0.
    """
    if not (0 < j0 <= x0):
        raise DomainError("simulate_bessel3_dual needs 0 < j0 <= x0")
    g = path_stream(seed, path_index)
    incr = g.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    Xstar = np.add.accumulate(np.concatenate(([2 * j0 - x0], incr)))
    Jstar = np.maximum(np.maximum.accumulate(Xstar), j0)
    X = 2 * Jstar - Xstar
    return PathBundle(grid=grid, X=X, increments=incr, seed=seed,
                      path_index=path_index, Jstar=Jstar)


def simulate_drifted(f: SmoothMap, x0: float, grid: TimeGrid, seed: int,
                     path_index: int = 0) -> PathBundle:
    """Euler-Maruyama for dX = -1/2 T_f(X) dt + dB, absorbing at the domain edge.

    A path whose proposal exits the (guarded) domain is parked at the edge
    from that node on and flagged via truncated_at -- matching the stopped
    process, not an error.
    """
    if not f.contains(x0):
        raise DomainError("x0 outside the domain of f")
    g = path_stream(seed, path_index)
    incr = g.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    lo, hi = f.domain
    lo_g = lo + EDGE_GUARD * (1 + abs(lo)) if np.isfinite(lo) else -np.inf
    hi_g = hi - EDGE_GUARD * (1 + abs(hi)) if np.isfinite(hi) else np.inf
    X = np.empty(grid.n_steps + 1)
    X[0] = x0
    truncated = None
    for n in range(1, grid.n_steps + 1):
        x = X[n - 1]
        x_new = x + (-0.5 * (f.d2(x) / f.d1(x)) * grid.dt[n - 1]) + incr[n - 1]
        if not (lo_g < x_new < hi_g):
            edge = lo_g if x_new <= lo_g else hi_g
            X[n:] = edge
            truncated = n
            break
        X[n] = x_new
    return PathBundle(grid=grid, X=X, increments=incr, seed=seed,
                      path_index=path_index, truncated_at=truncated)


def simulate_skorokhod(f: SmoothMap, x0: float, j0: float, grid: TimeGrid, seed: int,
                       path_index: int = 0) -> PathBundle:
    """Reflected Euler-Maruyama for the floor-constrained SDE.

    Per step, with chi_0 = x0 - j0 and l_0 = j0:
        proposal  chi^ = chi + dgamma - 1/2 T_f(chi + l) dt
        dl = max(-chi^, 0);  chi <- chi^ + dl;  l <- l + dl
        X = chi + l,  J* = l
    (incremental form of the running-max recipe; the floor level l increases
    only when the proposal falls below it, and X picks up 2 dl at contact).
    """
    if not (0 < j0 <= x0):
        raise DomainError("simulate_skorokhod needs 0 < j0 <= x0")
    lo, hi = f.domain
    if not (lo < j0):
        raise DomainError(f"floor j0={j0} outside domain of f")
    g = path_stream(seed, path_index)
    incr = g.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    X = np.empty(grid.n_steps + 1)
    J = np.empty(grid.n_steps + 1)
    chi, level = x0 - j0, j0
    X[0], J[0] = x0, j0
    truncated = None
    for n in range(1, grid.n_steps + 1):
        x_abs = chi + level
        if not (x_abs < hi):  # upward domain exit (finite hi only)
            X[n:] = X[n - 1]
            J[n:] = J[n - 1]
            truncated = n
            break
        drift = -0.5 * (f.d2(x_abs) / f.d1(x_abs)) * grid.dt[n - 1]
        prop = chi + drift + incr[n - 1]
        dl = max(-prop, 0.0)
        chi = prop + dl
        level += dl
        X[n] = chi + level
        J[n] = level
    return PathBundle(grid=grid, X=X, increments=incr, seed=seed,
                      path_index=path_index, Jstar=J, truncated_at=truncated)


# ---------------------------------------------------------------------------
# Vectorized ensemble runners (same streams as the single-path simulators).

def reflected_ensemble(f: SmoothMap, chi0: float, l0: float, grid: TimeGrid,
                       n_paths: int, seed: int, record: list[int]):
    """Run the reflection recursion over an ensemble.

    Returns (values, contact, floor): values[p, k] = X at record[k] for
    path p (X in the simulator's own coordinates, X = chi + l), contact[p]
    True when any reflection increment occurred (dl > 0) up to the horizon,
    floor[p] = the final floor level l_N.
    """
    record = sorted(set(int(r) for r in record))
    if record and record[-1] > grid.n_steps:
        raise DomainError("record index beyond the grid")
    dt = grid.dt
    sqdt = np.sqrt(dt)
    values = np.empty((n_paths, len(record)))
    contact = np.zeros(n_paths, dtype=bool)
    floor = np.empty(n_paths)
    rec_pos = {k: i for i, k in enumerate(record)}
    for block in _blocks(n_paths):
        rows = slice(block.start, block.stop)
        sampler = _StreamBlock(seed, block)
        chi = np.full(len(block), float(chi0))
        lev = np.full(len(block), float(l0))
        hit = np.zeros(len(block), dtype=bool)
        if 0 in rec_pos:
            values[rows, rec_pos[0]] = chi + lev
        for a, b in _chunks(grid.n_steps, len(block)):
            zs = sampler.normals(b - a)
            for n in range(a, b):
                x_abs = chi + lev
                drift = -0.5 * (f.d2(x_abs) / f.d1(x_abs)) * dt[n]
                prop = chi + drift + sqdt[n] * zs[:, n - a]
                dl = np.maximum(-prop, 0.0)
                np.add(prop, dl, out=chi)
                np.add(lev, dl, out=lev)
                hit |= dl > 0
                if (n + 1) in rec_pos:
                    values[rows, rec_pos[n + 1]] = chi + lev
        contact[rows] = hit
        floor[rows] = lev
    return values, contact, floor


def drifted_ensemble(f: SmoothMap, x0: float, grid: TimeGrid, n_paths: int,
                     seed: int, record: list[int]):
    """Vectorized version of simulate_drifted.

    Returns (values, alive): values[p, k] = X at record[k] (absorbed paths
    parked at the edge), alive[p] False when the path was absorbed.
    """
    record = sorted(set(int(r) for r in record))
    dt = grid.dt
    sqdt = np.sqrt(dt)
    lo, hi = f.domain
    lo_g = lo + EDGE_GUARD * (1 + abs(lo)) if np.isfinite(lo) else -np.inf
    hi_g = hi - EDGE_GUARD * (1 + abs(hi)) if np.isfinite(hi) else np.inf
    values = np.empty((n_paths, len(record)))
    alive_all = np.ones(n_paths, dtype=bool)
    rec_pos = {k: i for i, k in enumerate(record)}
    for block in _blocks(n_paths):
        rows = slice(block.start, block.stop)
        sampler = _StreamBlock(seed, block)
        X = np.full(len(block), float(x0))
        alive = np.ones(len(block), dtype=bool)
        if 0 in rec_pos:
            values[rows, rec_pos[0]] = X
        for a, b in _chunks(grid.n_steps, len(block)):
            zs = sampler.normals(b - a)
            for n in range(a, b):
                drift = np.where(alive, -0.5 * (f.d2(X) / f.d1(X)) * dt[n], 0.0)
                prop = X + drift + np.where(alive, sqdt[n] * zs[:, n - a], 0.0)
                exited = alive & ((prop <= lo_g) | (prop >= hi_g))
                prop[exited] = np.where(prop[exited] <= lo_g, lo_g, hi_g)
                alive &= ~exited
                X = np.where(alive | exited, prop, X)
                if (n + 1) in rec_pos:
                    values[rows, rec_pos[n + 1]] = X
        alive_all[rows] = alive
    return values, alive_all


def bessel_dual_ensemble(x0: float, grid: TimeGrid, n_paths: int, seed: int,
                         record: list[int], j0: Optional[float] = None):
    """Ensemble of dual-construction paths; j0=None draws each path's floor
    uniformly on (0, x0) (the overall-infimum law of the Bessel-3 process),
    giving the unconditioned process from x0.

    Returns (values, jstars): X and J* at the recorded node indices.
    """
    record = sorted(set(int(r) for r in record))
    sqdt = np.sqrt(grid.dt)
    values = np.empty((n_paths, len(record)))
    jstars = np.empty((n_paths, len(record)))
    rec_pos = {k: i for i, k in enumerate(record)}
    for block in _blocks(n_paths):
        rows = slice(block.start, block.stop)
        sampler = _StreamBlock(seed, block)
        if j0 is None:
            # the floor draw is the first variate of each path's stream
            u = np.array([g.uniform() for g in sampler.gens])
            floor = x0 * u
        else:
            if not (0 < j0 <= x0):
                raise DomainError("bessel_dual_ensemble needs 0 < j0 <= x0")
            floor = np.full(len(block), float(j0))
        Xstar = 2 * floor - x0
        Jstar = floor.copy()
        if 0 in rec_pos:
            values[rows, rec_pos[0]] = 2 * Jstar - Xstar
            jstars[rows, rec_pos[0]] = Jstar
        for a, b in _chunks(grid.n_steps, len(block)):
            zs = sampler.normals(b - a)
            for n in range(a, b):
                Xstar = Xstar + sqdt[n] * zs[:, n - a]
                np.maximum(Jstar, Xstar, out=Jstar)
                if (n + 1) in rec_pos:
                    values[rows, rec_pos[n + 1]] = 2 * Jstar - Xstar
                    jstars[rows, rec_pos[n + 1]] = Jstar
    return values, jstars


# ---------------------------------------------------------------------------
# Path functionals.

def first_hitting(path: PathBundle, level: float) -> Optional[float]:
    """First grid time with X <= level, linearly interpolated between the
    bracketing nodes; None if the level is never reached."""
    X = np.asarray(path.X, dtype=float)
    if level > X[0]:
        raise DomainError("first_hitting expects level <= X_0")
    below = X <= level
    if not below.any():
        return None
    k = int(np.argmax(below))
    if k == 0:
        return 0.0
    t = path.grid.nodes
    frac = (X[k - 1] - level) / (X[k - 1] - X[k])
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def future_infimum(path: PathBundle) -> np.ndarray:
    """Backward running minimum: inf over grid nodes u >= t of X_u."""
    X = np.asarray(path.X, dtype=float)
    return np.minimum.accumulate(X[::-1])[::-1]


def change_of_measure_expectation(s: SmoothMap, payoff: Callable[[PathBundle], float],
                                  x0: float, grid: TimeGrid, n_paths: int, seed: int,
                                  band: tuple[float, float]):
    """Importance-sampling oracle: Wiener paths stopped at the exit of a
    compact band, the payoff weighted by the multiplicative functional of s
    at the stopping time.  A path that overshoots the band on its exit step
    is projected onto the band edge at the exit node, so weight and payoff
    both see a value inside [lo, hi] (and hence inside the domain of s when
    the band is).

    Returns (estimate, stderr) over the n_paths ensemble.
    """
    lo, hi = band
    s.require(np.array([lo, hi]))
    if not (lo < x0 < hi):
        raise DomainError("x0 must start inside the band")
    vals = np.empty(n_paths)
    for i in range(n_paths):
        p = simulate_wiener(x0, grid, seed, path_index=i)
        outside = (p.X <= lo) | (p.X >= hi)
        if outside.any():
            stop = int(np.argmax(outside))
            p.X[stop] = min(max(p.X[stop], lo), hi)
            stopped = p.stopped_at(stop)
        else:
            stopped = p
        weight = schwarzian_process(s, stopped)[-1]
        vals[i] = weight * payoff(stopped)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_paths))
