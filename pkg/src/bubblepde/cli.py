"""Command-line experiment harness: config parsing, the price / theta /
simulate / compare-schemes / convergence / oracle subcommands, and CSV
emission.

Reports are plain CSV with deterministic bodies (repr-formatted floats, no
timestamps); runtimes and environment notes go to `.meta.json` side files so
identical resolved configs produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import closedform as cf
from .boundary import PayoffSpec, ThetaTable, decompose_phi_psi, estimate_theta, \
    price_fundraiser_mc
from .errors import ConfigError, DomainError, NumericsError
from .pathlab import TimeGrid, bessel_dual_ensemble, drifted_ensemble, \
    reflected_ensemble, simulate_bessel3_dual, simulate_drifted, \
    simulate_skorokhod, simulate_wiener
from .pdesolve import FundraiserScheme, NaiveDirichletScheme, NeumannCapScheme, \
    SpaceGrid, TaperedTerminalScheme, TransformedCauchyScheme, corner_defect, \
    f_from_sigma, solve
from .smoothmaps import from_descriptor

_NUMERIC_DEFAULTS = {
    "paths": 20000,
    "time_steps": 2048,
    "theta_paths": 20000,
    "theta_time_steps": 768,
    "theta_taus": 33,
    "space_nodes": 800,
    "theta_weight": 1.0,
    "seed": 12345,
    "levels": 2,
    "dump_paths": 10,
}

_SCHEME_NAMES = ("fundraiser", "neumann_cap", "tapered_terminal",
                 "transformed_cauchy", "naive_dirichlet")


# ---------------------------------------------------------------------------
# Config handling.

def _fail(path: str, why: str):
    raise ConfigError(f"config key {path}: {why}")


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            _fail(name, "missing section")
        return {}
    if not isinstance(sec, dict):
        _fail(name, "must be an object")
    return sec


def _number(sec: dict, path: str, key: str, default=None, positive=False,
            integer=False):
    val = sec.get(key, default)
    if val is None:
        _fail(f"{path}.{key}", "missing required value")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(f"{path}.{key}", f"expected a number, got {val!r}")
    if integer and int(val) != val:
        _fail(f"{path}.{key}", f"expected an integer, got {val!r}")
    if positive and val <= 0:
        _fail(f"{path}.{key}", f"must be positive, got {val!r}")
    return int(val) if integer else float(val)


def resolve_config(raw: dict, overrides: dict) -> dict:
    """Validate the raw config dict, fill defaults, apply CLI overrides.
    Returns the resolved config; raises ConfigError naming the violated key.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    model = dict(_section(raw, "model"))
    if ("sigma" in model) == ("f" in model):
        _fail("model", "exactly one of 'sigma' or 'f' must be given")
    if "sigma" in model and not isinstance(model["sigma"], dict):
        _fail("model.sigma", "must be a descriptor object")
    if "f" in model and not isinstance(model["f"], dict):
        _fail("model.f", "must be a map descriptor object")
    x0 = _number(model, "model", "x0", positive=True)
    j0 = _number(model, "model", "j0", positive=True)
    T = _number(model, "model", "T", positive=True)
    if j0 > x0:
        _fail("model.j0", f"j0={j0} violates 0 < j0 <= x0 (x0={x0})")
    model["x0"], model["j0"], model["T"] = x0, j0, T

    payoff_desc = _section(raw, "payoff")
    try:
        PayoffSpec.from_descriptor(payoff_desc)
    except (KeyError, ConfigError) as exc:
        _fail("payoff", str(exc))

    numerics = dict(_NUMERIC_DEFAULTS)
    numerics.update(_section(raw, "numerics", required=False))
    for key in ("paths", "time_steps", "theta_paths", "theta_time_steps",
                "theta_taus", "space_nodes", "levels", "dump_paths"):
        numerics[key] = _number(numerics, "numerics", key, positive=True,
                                integer=True)
    numerics["seed"] = _number(numerics, "numerics", "seed", integer=True)
    tw = _number(numerics, "numerics", "theta_weight")
    if not 0.0 <= tw <= 1.0:
        _fail("numerics.theta_weight", f"must lie in [0, 1], got {tw}")
    numerics["theta_weight"] = tw

    output = dict(_section(raw, "output", required=False))
    output.setdefault("dir", "out")

    resolved = {"model": model, "payoff": payoff_desc, "numerics": numerics,
                "output": output}
    for section, key in (("numerics", "seed"), ("numerics", "paths"),
                         ("output", "dir")):
        if overrides.get(key) is not None:
            resolved[section][key] = overrides[key]
    extra = raw.get("convergence")
    if extra is not None:
        seq = extra.get("j_sequence")
        if (not isinstance(seq, list) or len(seq) < 1
                or any(not isinstance(v, (int, float)) or v <= 0 for v in seq)
                or any(b >= a for a, b in zip(seq, seq[1:]))):
            _fail("convergence.j_sequence",
                  "must be a decreasing list of positive numbers")
        resolved["convergence"] = {"j_sequence": [float(v) for v in seq]}
    sim = raw.get("simulate")
    if sim is not None:
        kind = sim.get("kind", "skorokhod")
        if kind not in ("wiener", "bessel3", "drifted", "skorokhod"):
            _fail("simulate.kind", f"unknown simulator {kind!r}")
        resolved["simulate"] = {"kind": kind}
    return resolved


def config_hash(resolved: dict) -> str:
    """Digest of the semantic experiment: everything except where the output
    lands, so runs into different directories still compare equal."""
    body = {k: v for k, v in resolved.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _load_config(path_str: str, overrides: dict) -> dict:
    path = Path(path_str)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return resolve_config(raw, overrides)


def _model_map(cfg: dict):
    model = cfg["model"]
    if "sigma" in model:
        return f_from_sigma(model["sigma"])
    return from_descriptor(model["f"])


def _model_kind(f) -> str:
    """Classify the map by values: 'recip' (f = 1/x), 'bm' (f = x), or
    'other'.  Value-based so every descriptor spelling is recognized."""
    probes = np.array([0.31, 1.1, 3.7])
    try:
        vals = np.asarray(f(probes), dtype=float)
    except Exception:
        return "other"
    if np.max(np.abs(vals * probes - 1.0)) < 1e-9:
        return "recip"
    if np.max(np.abs(vals - probes)) < 1e-9:
        return "bm"
    return "other"


def _oracles(kind: str, payoff: PayoffSpec, x0, j0, T):
    """(investor, fundraiser) closed-form references, None when no formula
    applies to this model/payoff pair."""
    is_forward = payoff.kind == "forward" or (payoff.kind == "call"
                                              and payoff.strike == 0.0)
    if payoff.kind == "bond":
        if kind == "recip":
            return 1.0, 1.0
        if kind == "bm":
            return cf.bond_bm(x0, T), 1.0
        return None, 1.0
    if is_forward and kind == "recip":
        return (cf.forward_recip_bessel_investor(x0, T),
                cf.forward_recip_bessel_fundraiser(x0, j0, T))
    if is_forward and kind == "bm":
        return (cf.forward_bm_investor(x0, T),
                cf.forward_bm_fundraiser(x0, j0, T))
    return None, None


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: dict, out: Path) -> str:
    digest = config_hash(cfg)
    (out / "resolved_config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return digest


def _write_csv(path: Path, digest: str, header: str, rows: list[str]) -> None:
    body = [f"# config_hash: {digest}", header] + rows
    path.write_text("\n".join(body) + "\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


# ---------------------------------------------------------------------------
# Subcommand bodies.

def _make_theta(cfg: dict, f, out: Path):
    """Load a theta table if the config points at one (validating that it
    belongs to this (f, j)), otherwise estimate and save it."""
    model, num = cfg["model"], cfg["numerics"]
    payoff = PayoffSpec.from_descriptor(cfg["payoff"])
    table_path = num.get("theta_table")
    if table_path:
        table = ThetaTable.load(table_path)
        want = {"map": f.descriptor, "j": model["j0"]}
        got = {"map": table.map_descriptor, "j": table.j}
        if (hashlib.sha256(json.dumps(want, sort_keys=True).encode()).hexdigest()
                != hashlib.sha256(json.dumps(got, sort_keys=True).encode()).hexdigest()):
            raise ConfigError(
                f"theta table {table_path} was built for (map, j)={got}, "
                f"this run needs {want}")
        if not table.covers(model["T"]):
            raise ConfigError(
                f"theta table covers tau <= {table.taus[-1]}, need {model['T']}")
        return table
    k = np.arange(num["theta_taus"], dtype=float)
    taus = model["T"] * (k / (num["theta_taus"] - 1)) ** 2
    table = estimate_theta(f, model["j0"], taus, payoff, num["theta_paths"],
                           num["theta_time_steps"], num["seed"])
    table.save(out / "theta.csv")
    return table


def run_theta(cfg: dict) -> int:
    out = _out_dir(cfg)
    _write_resolved(cfg, out)
    f = _model_map(cfg)
    table = _make_theta(cfg, f, out)
    print(f"theta table: {len(table.taus)} tau nodes on [0, {table.taus[-1]}], "
          f"j={table.j}, {table.n_paths} paths -> {out / 'theta.csv'}")
    print(f"  anchor theta(0)={float(table.theta[0])!r}, "
          f"theta(T)={table.theta[-1]:.6f} +- {table.stderr[-1]:.6f}")
    return 0


def run_price(cfg: dict) -> int:
    t_start = time.perf_counter()
    out = _out_dir(cfg)
    digest = _write_resolved(cfg, out)
    model, num = cfg["model"], cfg["numerics"]
    payoff = PayoffSpec.from_descriptor(cfg["payoff"])
    f = _model_map(cfg)
    x0, j0, T = model["x0"], model["j0"], model["T"]

    mc, mc_se = price_fundraiser_mc(f, x0, j0, T, payoff, num["paths"],
                                    num["time_steps"], num["seed"])
    phi, psi, (phi_se, psi_se) = decompose_phi_psi(
        f, x0, j0, T, payoff, num["paths"], num["seed"],
        grid_resolution=num["time_steps"])

    pde_value = None
    if "sigma" in model:
        table = _make_theta(cfg, f, out)
        scheme = FundraiserScheme(j=j0, theta=table)
        cap = float(f(j0))
        grid = SpaceGrid.geometric(cap * 1e-5, cap, num["space_nodes"])
        sol = solve(model["sigma"], payoff, T, scheme, grid=grid,
                    times=TimeGrid.uniform(T, num["time_steps"]),
                    theta_weight=num["theta_weight"])
        pde_value = sol.value_at(0.0, float(f(x0)))

    inv_oracle, fund_oracle = _oracles(_model_kind(f), payoff, x0, j0, T)

    rows = [
        f"mc_price,{_fmt(mc)},{_fmt(mc_se)}",
        f"pde_price,{_fmt(pde_value)},",
        f"oracle_investor,{_fmt(inv_oracle)},",
        f"oracle_fundraiser,{_fmt(fund_oracle)},",
        f"phi,{_fmt(phi)},{_fmt(phi_se)}",
        f"psi,{_fmt(psi)},{_fmt(psi_se)}",
    ]
    _write_csv(out / "report.csv", digest, "quantity,value,stderr", rows)
    (out / "report.meta.json").write_text(json.dumps(
        {"config_hash": digest, "runtime_s": time.perf_counter() - t_start},
        indent=2) + "\n")

    print(f"fundraiser MC price   {mc:.6f} +- {mc_se:.6f}")
    if pde_value is not None:
        print(f"fundraiser PDE price  {pde_value:.6f}")
    if fund_oracle is not None:
        print(f"fundraiser closed form {fund_oracle:.6f}")
    if inv_oracle is not None:
        print(f"investor closed form  {inv_oracle:.6f}")
    print(f"phi (no floor contact) {phi:.6f} +- {phi_se:.6f}")
    print(f"psi (floor contact)    {psi:.6f} +- {psi_se:.6f}")
    print(f"report -> {out / 'report.csv'}")
    return 0


def _schemes_from_names(names, cfg, f, out) -> list:
    model, num = cfg["model"], cfg["numerics"]
    cap = float(f(model["j0"]))
    built = []
    for name in names:
        if name == "fundraiser":
            built.append(FundraiserScheme(j=model["j0"],
                                          theta=_make_theta(cfg, f, out)))
        elif name == "neumann_cap":
            built.append(NeumannCapScheme(n=cap))
        elif name == "tapered_terminal":
            built.append(TaperedTerminalScheme(n=cap))
        elif name == "transformed_cauchy":
            built.append(TransformedCauchyScheme(n=cap))
        elif name == "naive_dirichlet":
            built.append(NaiveDirichletScheme(cap=cap))
        else:
            raise ConfigError(f"unknown scheme {name!r}; choose from "
                              f"{', '.join(_SCHEME_NAMES)}")
    return built


def run_compare_schemes(cfg: dict, scheme_names) -> int:
    out = _out_dir(cfg)
    digest = _write_resolved(cfg, out)
    model, num = cfg["model"], cfg["numerics"]
    if "sigma" not in model:
        raise ConfigError("compare-schemes needs model.sigma")
    payoff = PayoffSpec.from_descriptor(cfg["payoff"])
    f = _model_map(cfg)
    x0, T = model["x0"], model["T"]
    y_ref = float(f(x0))
    names = list(scheme_names) if scheme_names else \
        ["fundraiser", "neumann_cap", "tapered_terminal", "transformed_cauchy"]
    schemes = _schemes_from_names(names, cfg, f, out)
    cap = float(f(model["j0"]))

    rows, runtimes = [], {}
    levels = num["levels"]
    for name, scheme in zip(names, schemes):
        for lev in range(levels):
            scale = 2 ** (levels - 1 - lev)
            m = max(8, num["space_nodes"] // scale)
            steps = max(8, num["time_steps"] // scale)
            if isinstance(scheme, FundraiserScheme):
                grid = SpaceGrid.geometric(cap * 1e-5, cap, m)
            else:
                grid = SpaceGrid.geometric_with_zero(cap * 1e-5, cap, m)
            t0 = time.perf_counter()
            sol = solve(model["sigma"], payoff, T, scheme, grid=grid,
                        times=TimeGrid.uniform(T, steps),
                        theta_weight=num["theta_weight"])
            elapsed = time.perf_counter() - t0
            val = sol.value_at(0.0, y_ref)
            defect = corner_defect(model["sigma"], payoff, T, scheme, grid=grid)
            rows.append((name, lev, m, steps, val, defect))
            runtimes[f"{name}/level{lev}"] = elapsed
    rows.sort(key=lambda r: (r[0], r[1]))
    body = [f"{n},{lev},{m},{steps},{_fmt(v)},{_fmt(d)}"
            for n, lev, m, steps, v, d in rows]
    _write_csv(out / "compare.csv", digest,
               "scheme,level,space_nodes,time_steps,value,corner_defect", body)
    (out / "compare.meta.json").write_text(json.dumps(
        {"config_hash": digest, "runtimes_s": runtimes}, indent=2,
        sort_keys=True) + "\n")
    width = max(len(n) for n, *_ in rows)
    for n, lev, m, steps, v, d in rows:
        print(f"{n:<{width}}  level {lev}  M={m:<5d} N={steps:<6d} "
              f"value={v:.6f}  corner_defect={d:.4g}")
    print(f"table -> {out / 'compare.csv'}")
    return 0


def run_convergence(cfg: dict) -> int:
    out = _out_dir(cfg)
    digest = _write_resolved(cfg, out)
    model, num = cfg["model"], cfg["numerics"]
    payoff = PayoffSpec.from_descriptor(cfg["payoff"])
    f = _model_map(cfg)
    x0, T = model["x0"], model["T"]
    kind = _model_kind(f)
    js = cfg.get("convergence", {}).get(
        "j_sequence", [0.4, 0.2, 0.1, 0.05, 0.02])
    have_sigma = "sigma" in model

    rows = []
    prev = None
    for j in js:
        sub = json.loads(json.dumps(cfg))  # per-j working copy
        sub["model"]["j0"] = j
        sub["numerics"].pop("theta_table", None)  # tables are per-j here
        mc, mc_se = price_fundraiser_mc(f, x0, j, T, payoff, num["paths"],
                                        num["time_steps"], num["seed"])
        pde_value = None
        if have_sigma:
            table = _make_theta(sub, f, out)
            (out / "theta.csv").rename(out / f"theta_j{j!r}.csv")
            (out / "theta.csv.meta.json").rename(
                out / f"theta_j{j!r}.csv.meta.json")
            cap = float(f(j))
            grid = SpaceGrid.geometric(cap * 1e-5, cap, num["space_nodes"])
            sol = solve(model["sigma"], payoff, T,
                        FundraiserScheme(j=j, theta=table), grid=grid,
                        times=TimeGrid.uniform(T, num["time_steps"]),
                        theta_weight=num["theta_weight"])
            pde_value = sol.value_at(0.0, float(f(x0)))
        _, fund_oracle = _oracles(kind, payoff, x0, j, T)
        ref = pde_value if pde_value is not None else mc
        diff = None if prev is None else ref - prev
        gap = None if fund_oracle is None else ref - fund_oracle
        prev = ref
        rows.append((j, mc, mc_se, pde_value, diff, fund_oracle, gap))

    body = [",".join(_fmt(c) for c in row) for row in rows]
    _write_csv(out / "convergence.csv", digest,
               "j,mc_price,mc_stderr,pde_price,diff,oracle,oracle_gap", body)
    for j, mc, se, pv, diff, orc, gap in rows:
        extras = ""
        if pv is not None:
            extras += f"  pde={pv:.6f}"
        if orc is not None:
            extras += f"  oracle={orc:.6f}"
        print(f"j={j:<6g} mc={mc:.6f}+-{se:.6f}{extras}")
    print(f"table -> {out / 'convergence.csv'}")
    return 0


def run_simulate(cfg: dict) -> int:
    out = _out_dir(cfg)
    digest = _write_resolved(cfg, out)
    model, num = cfg["model"], cfg["numerics"]
    f = _model_map(cfg)
    x0, j0, T = model["x0"], model["j0"], model["T"]
    kind = cfg.get("simulate", {}).get("kind", "skorokhod")
    grid = TimeGrid.uniform(T, num["time_steps"])
    seed, n_paths = num["seed"], num["paths"]

    def one(i):
        if kind == "wiener":
            return simulate_wiener(x0, grid, seed, i)
        if kind == "bessel3":
            return simulate_bessel3_dual(x0, j0, grid, seed, i)
        if kind == "drifted":
            return simulate_drifted(f, x0, grid, seed, i)
        return simulate_skorokhod(f, x0, j0, grid, seed, i)

    # path dumps through the single-path simulators, the ensemble summary
    # through the vectorized runners -- per-path streams make them identical
    n_dump = min(num["dump_paths"], n_paths)
    for i in range(n_dump):
        p = one(i)
        lines = ["t,X,Jstar"]
        for k_node in range(len(grid.nodes)):
            jcell = "" if p.Jstar is None else repr(float(p.Jstar[k_node]))
            lines.append(f"{float(grid.nodes[k_node])!r},"
                         f"{float(p.X[k_node])!r},{jcell}")
        (out / f"path_{i:04d}.csv").write_text("\n".join(lines) + "\n")

    jends = None
    if kind == "wiener":
        ends = np.array([simulate_wiener(x0, grid, seed, i).X[-1]
                         for i in range(n_paths)])
    elif kind == "bessel3":
        vals, jstars = bessel_dual_ensemble(x0, grid, n_paths, seed,
                                            [grid.n_steps], j0=j0)
        ends, jends = vals[:, 0], jstars[:, 0]
    elif kind == "drifted":
        vals, _alive = drifted_ensemble(f, x0, grid, n_paths, seed,
                                        [grid.n_steps])
        ends = vals[:, 0]
    else:
        vals, _contact, floor = reflected_ensemble(f, x0 - j0, j0, grid,
                                                   n_paths, seed,
                                                   [grid.n_steps])
        ends, jends = vals[:, 0], floor

    rows = [f"X_T_mean,{_fmt(ends.mean())},{_fmt(ends.std(ddof=1) / np.sqrt(n_paths))}",
            f"X_T_var,{_fmt(ends.var(ddof=1))},"]
    if jends is not None:
        rows.append(f"Jstar_T_mean,{_fmt(jends.mean())},"
                    f"{_fmt(jends.std(ddof=1) / np.sqrt(n_paths))}")
    _write_csv(out / "ensemble_summary.csv", digest,
               "functional,value,stderr", rows)
    print(f"{kind}: {n_paths} paths on {grid.n_steps} steps; "
          f"dumped {n_dump} path files")
    print(f"E[X_T] = {ends.mean():.6f} +- {ends.std(ddof=1) / np.sqrt(n_paths):.6f}")
    print(f"summary -> {out / 'ensemble_summary.csv'}")
    return 0


def run_oracle(cfg: dict) -> int:
    out = _out_dir(cfg)
    digest = _write_resolved(cfg, out)
    model = cfg["model"]
    x0, j0, T = model["x0"], model["j0"], model["T"]
    rows = []
    print("case,x,j,T,value")
    for case in cf.OracleCase.all_cases():
        oc = cf.OracleCase(case=case, x=x0, j=j0, T=T)
        row = f"{case},{_fmt(x0)},{_fmt(j0)},{_fmt(T)},{_fmt(oc.value())}"
        rows.append(row)
        print(row)
    _write_csv(out / "oracle.csv", digest, "case,x,j,T,value", rows)
    return 0


# ---------------------------------------------------------------------------
# Entry point.

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bubblepde",
        description="Option pricing in diffusion markets with bubbles: "
                    "Monte Carlo boundary estimation, finite-difference "
                    "schemes, and closed-form references.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("price", "fundraiser price by MC and PDE, with references"),
            ("theta", "estimate the boundary table Theta(tau, j)"),
            ("simulate", "dump simulated paths and ensemble summaries"),
            ("compare-schemes", "rival boundary schemes at matched refinement"),
            ("convergence", "price along a decreasing floor sequence"),
            ("oracle", "closed-form reference values")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--paths", type=int, default=None,
                       help="Monte Carlo path count")
        p.add_argument("--out", default=None, help="output directory")
        if name == "compare-schemes":
            p.add_argument("--scheme", default=None,
                           help="comma-separated scheme names "
                                f"({', '.join(_SCHEME_NAMES)})")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "paths": args.paths, "dir": args.out}
    try:
        cfg = _load_config(args.config, overrides)
        if args.command == "price":
            return run_price(cfg)
        if args.command == "theta":
            return run_theta(cfg)
        if args.command == "simulate":
            return run_simulate(cfg)
        if args.command == "compare-schemes":
            names = args.scheme.split(",") if args.scheme else None
            return run_compare_schemes(cfg, names)
        if args.command == "convergence":
            return run_convergence(cfg)
        return run_oracle(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
