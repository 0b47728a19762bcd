"""Monte Carlo layer: the boundary function Theta(tau, j) estimated on
floor-started reflected ensembles, direct MC pricing of the floor-constrained
claim, and the contact/no-contact decomposition of its value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, DomainError
from .pathlab import TimeGrid, reflected_ensemble
from .smoothmaps import SmoothMap, shift_map


@dataclass(frozen=True)
class PayoffSpec:
    """Terminal payoff h(y): call, bond, forward, or a tabulated curve.

    Payoffs are nonnegative with at most linear growth; a tabulated payoff is
    interpolated linearly inside its node range and held constant outside it.
    """

    kind: str
    strike: float = 0.0
    table: Optional[tuple] = None  # (y nodes, values) for kind="table"

    _KINDS = ("call", "bond", "forward", "table")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "call" and self.strike < 0:
            raise ConfigError("call strike must be >= 0")
        if self.kind == "table":
            if self.table is None:
                raise ConfigError("payoff kind 'table' needs (nodes, values)")
            y, h = (np.asarray(a, dtype=float) for a in self.table)
            if y.ndim != 1 or y.shape != h.shape or len(y) < 2:
                raise ConfigError("payoff table needs matching 1-d nodes and values")
            if np.any(np.diff(y) <= 0):
                raise ConfigError("payoff table nodes must be strictly increasing")
            if np.any(h < 0):
                raise ConfigError("payoff values must be nonnegative")
            object.__setattr__(self, "table", (y, h))

    @classmethod
    def call(cls, strike: float) -> "PayoffSpec":
        return cls("call", strike=float(strike))

    @classmethod
    def bond(cls) -> "PayoffSpec":
        return cls("bond")

    @classmethod
    def forward(cls) -> "PayoffSpec":
        return cls("forward")

    @classmethod
    def from_table(cls, nodes, values) -> "PayoffSpec":
        return cls("table", table=(nodes, values))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "bond":
            out = np.ones_like(y)
        elif self.kind == "forward":
            out = y.copy()
        elif self.kind == "call":
            out = np.maximum(y - self.strike, 0.0)
        else:
            nodes, values = self.table
            out = np.interp(y, nodes, values)
        return float(out) if out.ndim == 0 else out

    @property
    def descriptor(self) -> dict:
        if self.kind == "call":
            return {"kind": "call", "strike": self.strike}
        if self.kind == "table":
            nodes, values = self.table
            return {"kind": "table", "nodes": list(nodes), "values": list(values)}
        return {"kind": self.kind}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "PayoffSpec":
        kind = desc.get("kind")
        if kind == "call":
            return cls.call(desc["strike"])
        if kind == "bond":
            return cls.bond()
        if kind == "forward":
            return cls.forward()
        if kind == "table":
            return cls.from_table(desc["nodes"], desc["values"])
        raise ConfigError(f"unknown payoff descriptor kind {kind!r}")


@dataclass(frozen=True)
class ThetaTable:
    """Boundary values Theta(tau, j) on a tau grid, with their MC standard
    errors and the provenance needed to hand the table to the PDE solver."""

    j: float
    taus: np.ndarray
    theta: np.ndarray
    stderr: np.ndarray
    n_paths: int
    seed: int
    map_descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        stderr = np.asarray(self.stderr, dtype=float)
        if not (taus.shape == theta.shape == stderr.shape) or taus.ndim != 1:
            raise ConfigError("taus, theta, stderr must be matching 1-d arrays")
        if len(taus) < 2 or np.any(np.diff(taus) <= 0):
            raise ConfigError("taus must be strictly increasing with >= 2 entries")
        if taus[0] != 0.0:
            raise ConfigError("the table must include the tau=0 anchor")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(stderr))):
            raise ConfigError("non-finite entries in theta table")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "stderr", stderr)

    def covers(self, T: float) -> bool:
        return self.taus[-1] >= T - 1e-12 * max(1.0, abs(T))

    def interpolator(self):
        """Monotone piecewise-cubic interpolant of tau -> Theta; querying
        outside [0, max tau] raises (extrapolation is forbidden)."""
        pchip = PchipInterpolator(self.taus, self.theta, extrapolate=False)
        hi = self.taus[-1]
        grace = hi * (1 + 1e-12) + 1e-15  # tolerate roundoff at the top edge

        def theta_of(tau):
            t = np.asarray(tau, dtype=float)
            t = np.where((t > hi) & (t <= grace), hi, t)
            out = pchip(t)
            if np.any(np.isnan(out)):
                raise DomainError("Theta queried outside its tabulated range")
            return float(out) if out.ndim == 0 else out

        return theta_of

    def save(self, path) -> None:
        """CSV body `tau,theta,stderr` (round-trip float repr) plus a
        JSON side file `<name>.meta.json` with j, n_paths, seed, and the
        descriptor of the map the table was computed under."""
        path = Path(path)
        lines = ["tau,theta,stderr"]
        for t, v, s in zip(self.taus, self.theta, self.stderr):
            lines.append(f"{float(t)!r},{float(v)!r},{float(s)!r}")
        path.write_text("\n".join(lines) + "\n")
        meta = {"j": self.j, "n_paths": self.n_paths, "seed": self.seed,
                "map": self.map_descriptor}
        path.with_name(path.name + ".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ThetaTable":
        path = Path(path)
        meta_path = path.with_name(path.name + ".meta.json")
        if not path.exists() or not meta_path.exists():
            raise ConfigError(f"theta table {path} or its .meta.json side file missing")
        rows = path.read_text().strip().splitlines()
        if not rows or rows[0].strip() != "tau,theta,stderr":
            raise ConfigError(f"{path}: expected header 'tau,theta,stderr'")
        data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]])
        if data.ndim != 2 or data.shape[1] != 3:
            raise ConfigError(f"{path}: malformed theta table body")
        meta = json.loads(meta_path.read_text())
        return cls(j=float(meta["j"]), taus=data[:, 0], theta=data[:, 1],
                   stderr=data[:, 2], n_paths=int(meta["n_paths"]),
                   seed=int(meta["seed"]), map_descriptor=meta.get("map", {}))


def _floor_grid(horizon: float, taus: np.ndarray, grid_resolution: int) -> TimeGrid:
    """Quadratically clustered step grid over [0, horizon], augmented so every
    requested tau is an exact node.  Clustering near 0 keeps the small-tau
    boundary estimates honest where Theta bends fastest."""
    k = np.arange(int(grid_resolution) + 1, dtype=float)
    base = horizon * (k / grid_resolution) ** 2
    nodes = np.unique(np.concatenate([base, taus]))
    return TimeGrid(nodes)


def estimate_theta(f: SmoothMap, j: float, taus, payoff: PayoffSpec, n_paths: int,
                   grid_resolution: int, seed: int) -> ThetaTable:
    """Estimate Theta(tau, j) = E[h(f_j(X_tau))] for the reflected ensemble
    started exactly at the floor, f_j(x) = f(x + j), (chi_0, l_0) = (0, 0).

    One ensemble serves every tau (common random numbers): paths are recorded
    at each tau node of a shared time grid.  The tau=0 value is the exact
    anchor h(f(j)) with zero standard error.
    """
    taus = np.unique(np.concatenate([[0.0], np.asarray(taus, dtype=float)]))
    if np.any(taus < 0):
        raise DomainError("tau values must be nonnegative")
    if taus[-1] <= 0:
        raise DomainError("need at least one positive tau")
    lo, hi = f.domain
    if not (lo < j < hi):
        raise DomainError(f"floor j={j} outside the domain of the map")
    f_j = shift_map(f, j)
    try:
        t0 = float(f_j.d2(0.0) / f_j.d1(0.0))
    except Exception as exc:
        raise DomainError(f"shifted map not regular at the floor: {exc}") from exc
    if not np.isfinite(t0):
        raise DomainError(
            f"T_f(j)={t0} at j={j}: the drift is singular at the floor, "
            "so the floor-started ensemble is not defined")

    grid = _floor_grid(float(taus[-1]), taus, grid_resolution)
    rec = [int(np.searchsorted(grid.nodes, t)) for t in taus]
    for r, t in zip(rec, taus):
        if abs(grid.nodes[r] - t) > 1e-12 * max(1.0, t):
            raise DomainError(f"tau={t} missing from the simulation grid")
    values, _, _ = reflected_ensemble(f_j, 0.0, 0.0, grid, n_paths, seed, rec)

    theta = np.empty(len(taus))
    stderr = np.empty(len(taus))
    anchor = float(payoff(float(f(j))))
    theta[0], stderr[0] = anchor, 0.0
    for k in range(1, len(taus)):
        h = payoff(f_j(values[:, k]))
        theta[k] = h.mean()
        stderr[k] = h.std(ddof=1) / np.sqrt(n_paths)
    return ThetaTable(j=float(j), taus=taus, theta=theta, stderr=stderr,
                      n_paths=int(n_paths), seed=int(seed),
                      map_descriptor=f.descriptor)


def price_fundraiser_mc(f: SmoothMap, x0: float, j0: float, T: float,
                        payoff: PayoffSpec, n_paths: int, grid_resolution: int,
                        seed: int) -> tuple[float, float]:
    """MC mean of h(f(X_T)) over reflected paths started at (x0 - j0, j0).

    Returns (price, stderr).
    """
    if not (0 < j0 <= x0):
        raise DomainError("need 0 < j0 <= x0")
    lo, _ = f.domain
    if not lo < j0:
        raise DomainError(f"floor j0={j0} outside the domain of the map")
    grid = TimeGrid.uniform(T, grid_resolution)
    values, _, _ = reflected_ensemble(f, x0 - j0, j0, grid, n_paths, seed,
                                   [grid.n_steps])
    h = payoff(f(values[:, 0]))
    return float(h.mean()), float(h.std(ddof=1) / np.sqrt(n_paths))


def decompose_phi_psi(f: SmoothMap, x0: float, j0: float, T: float,
                      payoff: PayoffSpec, n_paths: int, seed: int,
                      grid_resolution: int = 2048):
    """Split the fundraiser value by floor contact before maturity.

    phi averages h(f(X_T)) over paths that never touch the floor (no
    reflection increment up to T), psi over the complement; on a shared
    ensemble phi + psi reproduces price_fundraiser_mc up to summation order.
    Starting exactly at the floor (x0 == j0) counts as immediate contact.

    Returns (phi, psi, (phi_stderr, psi_stderr)).
    """
    if not (0 < j0 <= x0):
        raise DomainError("need 0 < j0 <= x0")
    grid = TimeGrid.uniform(T, grid_resolution)
    values, contact, _ = reflected_ensemble(f, x0 - j0, j0, grid, n_paths, seed,
                                         [grid.n_steps])
    if x0 == j0:
        contact = np.ones_like(contact)
    h = payoff(f(values[:, 0]))
    h_phi = np.where(contact, 0.0, h)
    h_psi = np.where(contact, h, 0.0)
    phi, psi = float(h_phi.mean()), float(h_psi.mean())
    se = (float(h_phi.std(ddof=1) / np.sqrt(n_paths)),
          float(h_psi.std(ddof=1) / np.sqrt(n_paths)))
    return phi, psi, se
