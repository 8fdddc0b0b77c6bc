"""Command-line runner: every study as a subcommand, CSV tables and JSON manifests.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cache import (
    CacheError,
    SolutionCache,
    cache_key,
    file_digest,
    decode_matrix,
    decode_scalar,
    encode_matrix,
    encode_scalar,
    matrix_meta,
    scalar_meta,
)
from .config import ConfigError, RunConfig, parse_complex
from .grid import GridError
from .matrix_hitchin import (
    build_matrix_problem,
    common_matrix_bump,
    entry_distance,
    flow_solve,
)
from .moduli import ModuliError, Small, enumerate_cyclic_partitions, hitchin_base_dimension, partition_to_weights
from .regnorm import mu_big, mu_big_trace, mu_small, richardson_ratio
from .scalar_pde import (
    BigGamma0,
    DecayFitError,
    SolverError,
    annulus_distance,
    build_problem,
    common_bump,
    decay_fit,
    newton_solve,
)

log = logging.getLogger("wildhiggs")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def fmt(x) -> str:
    """Lossless decimal for CSV cells: 17 significant digits."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


# ---------------------------------------------------------------------------
# solve helpers (module level so worker processes can pickle them)


def solve_scalar(kind, grid: dict, cache_root: str | None, use_cache: bool, bump=None):
    problem = build_problem(
        kind, grid["R"], grid["n"], grid["eps"], grid["tol"], grid["max_iter"], bump=bump
    )
    store = SolutionCache(cache_root, use_cache)
    key = cache_key(problem.params())
    hit = store.load(key, decode_scalar, problem)
    if hit is not None:
        return hit, key, True
    t0 = time.perf_counter()
    sol = newton_solve(problem)
    sol.wall_time = time.perf_counter() - t0
    try:
        decay_fit(sol)
    except DecayFitError:
        pass
    if use_cache:
        store.store(key, encode_scalar(sol), scalar_meta(sol))
    return sol, key, False


def solve_matrix(gamma, omega, grid: dict, cache_root, use_cache, bump=None, initial=None):
    problem = build_matrix_problem(
        gamma, omega, grid["R"], grid["n"], grid["tol"], grid["max_iter"], bump=bump
    )
    store = SolutionCache(cache_root, use_cache)
    key = cache_key(problem.params())
    hit = store.load(key, decode_matrix, problem)
    if hit is not None:
        return hit, key, True
    sol = flow_solve(problem, initial=initial)
    if use_cache:
        store.store(key, encode_matrix(sol), matrix_meta(sol))
    return sol, key, False


def _mu_item(u, grid, cache_root, use_cache, refine, bump):
    """One mu-sweep row; never raises so a pool map keeps going."""
    row = {"u": u, "status": "ok"}
    try:
        sol, key, hit = solve_scalar(Small(u), grid, cache_root, use_cache, bump)
        res = mu_small(sol)
        row.update(
            mu=res.value,
            tail_estimate=res.tail_estimate,
            excision_estimate=res.excision_estimate,
            residual_sup=sol.residual_sup,
            iterations=sol.newton_iterations,
            key=key,
            wall_time=sol.wall_time,
        )
        if refine:
            fine = dict(grid, n=2 * grid["n"] - 1)
            sol2, _, _ = solve_scalar(Small(u), fine, cache_root, use_cache, bump)
            mu2 = mu_small(sol2).value
            row.update(mu_refined=mu2, refine_rel_change=abs(mu2 - res.value) / abs(res.value) if res.value else 0.0)
    except SolverError as exc:
        row.update(status=f"nonconverged: residual {exc.residual:.3e}")
    except (GridError, ValueError) as exc:
        row.update(status=f"error: {exc}")
    return row


# ---------------------------------------------------------------------------
# output


class Run:
    """Collects items and output files, then writes the manifest."""

    def __init__(self, out: Path, config: RunConfig, timings_path: str | None = None):
        self.out = out
        self.timings_path = timings_path
        self.config = config
        self.items: list[dict] = []
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.notes: dict = {}

    def write_text(self, name: str, text: str) -> Path:
        import hashlib

        path = self.out / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise CacheError(f"cannot write {path}: {exc}") from exc
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
        return self.write_text(name, buf.getvalue())

    def finish(self, status: str) -> None:
        self.write_text("config.txt", self.config.dumps())
        manifest = {
            "tool": "wildhiggs",
            "version": __version__,
            "command": self.config.command,
            "config": self.config.as_json(),
            "config_digest": self.config.digest(),
            "status": status,
            "items": self.items,
            "notes": self.notes,
            "outputs": dict(sorted(self.outputs.items())),
        }
        try:
            (self.out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2, default=_json_default) + "\n")
            # wall times and cache hits vary run to run, so they only go to an opt-in file
            if self.timings_path:
                Path(self.timings_path).write_text(json.dumps(self.timings, sort_keys=True, indent=2) + "\n")
        except OSError as exc:
            raise CacheError(f"cannot write manifest in {self.out}: {exc}") from exc


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _c(z: complex) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


# ---------------------------------------------------------------------------
# commands


def cmd_partitions(cfg: RunConfig, run: Run) -> int:
    K, N = cfg.params["k"], cfg.params["n"]
    classes = sorted(enumerate_cyclic_partitions(K, N), key=lambda b: b.parts, reverse=True)
    # rank one has no traceless coefficients
    degrees, dim = hitchin_base_dimension(K, N) if K >= 2 else ([], 0)
    rows = []
    for b in classes:
        w = partition_to_weights(b)
        rows.append([" ".join(map(str, b.parts)), " ".join(str(a) for a in w.alphas), dim])
        print(f"{b.parts} -> ({', '.join(str(a) for a in w.alphas)})")
    print(f"Hitchin base dimension: {dim}")
    run.write_csv("partitions.csv", ["partition", "weights", "base_dimension"], rows)
    run.notes["base_degrees"] = degrees
    run.notes["count"] = len(classes)
    return EXIT_OK


def _grid(cfg: RunConfig) -> dict:
    p = cfg.params
    return {"R": p["grid_r"], "n": p["grid_n"], "eps": p["eps"], "tol": p["tol"], "max_iter": p["max_iter"]}


def _scalar_command(kind, cfg: RunConfig, run: Run) -> int:
    try:
        sol, key, hit = solve_scalar(kind, _grid(cfg), cfg.params.get("cache_dir"), not cfg.params["no_cache"])
    except SolverError as exc:
        run.items.append({"status": "nonconverged", "residual": exc.residual, "iterations": exc.iterations})
        print(f"not converged: residual {exc.residual:.3e} after {exc.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    g = sol.problem.grid
    item = {
        "status": "ok",
        "cache_key": key,
        "residual_sup": sol.residual_sup,
        "iterations": sol.newton_iterations,
        "excisions": [{"center": _c(e.center), "radius": e.radius, "roots": len(e.roots)} for e in g.excisions],
        "decay": list(sol.decay) if sol.decay else None,
    }
    run.items.append(item)
    run.timings["solve"] = sol.wall_time
    run.timings["cache_hit"] = hit
    store = SolutionCache(cfg.params.get("cache_dir"))
    data_path, _ = store.paths(key)
    if data_path.exists():
        item["cache_file"] = data_path.name  # location depends on HML_CACHE_DIR, not on the run
        item["cache_digest"] = file_digest(data_path)
    print(f"residual {sol.residual_sup:.3e} after {sol.newton_iterations} Newton steps")
    if sol.decay:
        print(f"decay fit: c = {sol.decay[0]:.6g}, C = {sol.decay[1]:.6g}")
    if len(g.excisions) < len(sol.problem.roots):
        print(f"roots merged into {len(g.excisions)} excision disc(s)")
    return EXIT_OK


def cmd_solve_small(cfg, run):
    return _scalar_command(Small(cfg.params["u"]), cfg, run)


def cmd_solve_big0(cfg, run):
    return _scalar_command(BigGamma0(cfg.params["omega"]), cfg, run)


def cmd_big(cfg: RunConfig, run: Run) -> int:
    p = cfg.params
    grid = _grid(cfg)
    gamma, omega = p["gamma"], p["omega"]
    bump = common_matrix_bump([gamma], omega)
    root, use = p.get("cache_dir"), not p["no_cache"]
    try:
        base, _, _ = solve_scalar(BigGamma0(omega), grid, root, use, bump)
        sol, key, hit = solve_matrix(gamma, omega, grid, root, use, bump, initial=base)
    except SolverError as exc:
        run.items.append({"status": "nonconverged", "residual": exc.residual})
        print(f"not converged: residual {exc.residual:.3e}", file=sys.stderr)
        return EXIT_SOLVER
    f1, f2, g = sol.h.entries()
    mu = mu_big(sol, base)
    offdiag = float(np.max(np.abs(g)))
    run.items.append(
        {
            "status": "ok",
            "cache_key": key,
            "residual_sup": sol.residual_sup,
            "defect": sol.defect,
            "iterations": sol.iterations,
            "offdiag_sup": offdiag,
            "det_defect": sol.h.det_defect(),
            "mu": mu.value,
            "mu_trace": mu_big_trace(sol).value,
        }
    )
    run.timings["matrix_solve"] = sol.wall_time
    run.timings["cache_hit"] = hit
    run.write_csv(
        "big.csv",
        ["gamma_re", "gamma_im", "omega_re", "omega_im", "residual_sup", "defect", "offdiag_sup", "mu", "mu_trace", "status"],
        [[*_c(gamma), *_c(omega), sol.residual_sup, sol.defect, offdiag, mu.value, run.items[-1]["mu_trace"], "ok"]],
    )
    print(f"residual {sol.residual_sup:.3e}, off-diagonal sup {offdiag:.3e}, mu {mu.value:.10g}")
    return EXIT_OK


def _u_values(p: dict) -> list[complex]:
    if p.get("us"):
        return list(p["us"])
    if p.get("u_start") is not None:
        steps = p.get("steps") or 2
        a, b = p["u_start"], p["u_stop"]
        if steps < 2:
            return [a]
        return [a + (b - a) * k / (steps - 1) for k in range(steps)]
    raise ConfigError("give --u or --u-line")


def cmd_mu_sweep(cfg: RunConfig, run: Run) -> int:
    p = cfg.params
    us = _u_values(p)
    grid = _grid(cfg)
    bump = common_bump([Small(u) for u in us])
    args = [(u, grid, p.get("cache_dir"), not p["no_cache"], p["check_refine"], bump) for u in us]
    rows = _map(_mu_item, args, p["jobs"])
    header = [
        "kind", "u_re", "u_im", "mu", "tail_estimate", "excision_estimate",
        "residual_sup", "iterations", "mu_refined", "refine_rel_change", "status",
    ]
    table = []
    for r in rows:
        table.append(
            ["sweep", *_c(r["u"]), r.get("mu", ""), r.get("tail_estimate", ""), r.get("excision_estimate", ""),
             r.get("residual_sup", ""), r.get("iterations", ""), r.get("mu_refined", ""),
             r.get("refine_rel_change", ""), r["status"]]
        )
        run.items.append({k: v for k, v in r.items() if k != "wall_time"})
        run.timings[f"u={r['u']}"] = r.get("wall_time", 0.0)
    if p.get("probe_u0") is not None:
        u0, delta = p["probe_u0"], p["probe_delta"]
        g = {k: grid[k] for k in ("R", "n", "eps", "tol")}
        try:
            ratio, coarse, fine = richardson_ratio(u0, delta, **g)
            for name, val in [
                ("probe_d1", coarse["d1"]),
                ("probe_d1_wide", coarse["d1_wide"]),
                ("probe_d1_half", fine["d1"]),
                ("probe_d2", coarse["d2"]),
                ("probe_richardson_ratio", ratio),
            ]:
                table.append([name, *_c(u0), val, "", "", "", "", "", "", "ok"])
            run.notes["probe"] = {"u0": _c(u0), "delta": delta, "richardson_ratio": ratio}
        except SolverError as exc:
            table.append(["probe_richardson_ratio", *_c(u0), "", "", "", "", "", "", "", f"nonconverged: {exc}"])
    run.write_csv("mu_sweep.csv", header, table)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok}/{len(rows)} values of u solved; table in {run.out / 'mu_sweep.csv'}")
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_gamma_sweep(cfg: RunConfig, run: Run) -> int:
    p = cfg.params
    grid = _grid(cfg)
    omega = p["omega"]
    gammas = list(p["gammas"])
    root, use = p.get("cache_dir"), not p["no_cache"]
    bump = common_matrix_bump(gammas, omega)
    try:
        scalar0, _, _ = solve_scalar(BigGamma0(omega), grid, root, use, bump)
        base, _, _ = solve_matrix(0.0, omega, grid, root, use, bump, initial=scalar0)
    except SolverError as exc:
        run.items.append({"gamma": [0.0, 0.0], "status": f"nonconverged: residual {exc.residual:.3e}"})
        return EXIT_SOLVER
    mu0 = mu_big(base, scalar0).value
    solved = {0j: base}
    results = {}
    for gm in sorted(set(gammas), key=abs):
        if gm in solved:
            continue
        start = min(solved, key=lambda k: abs(k - gm))
        try:
            sol, key, hit = solve_matrix(gm, omega, grid, root, use, bump, initial=solved[start].h)
            solved[gm] = sol
        except SolverError as exc:
            results[gm] = {"status": f"nonconverged: residual {exc.residual:.3e}"}
    rows = []
    for gm in gammas:
        if gm in solved:
            sol = solved[gm]
            d = entry_distance(sol.h, base.h, 1.0, 2.0)
            mu = mu_big(sol, scalar0).value
            item = {
                "gamma": _c(gm),
                "status": "ok",
                "distance": d,
                "mu": mu,
                "mu_minus_mu0": abs(mu - mu0),
                "mu_trace": mu_big_trace(sol).value,
                "residual_sup": sol.residual_sup,
                "defect": sol.defect,
                "iterations": sol.iterations,
            }
            run.timings[f"gamma={gm}"] = sol.wall_time
        else:
            item = {"gamma": _c(gm), **results[gm]}
        run.items.append(item)
        rows.append(
            [*_c(gm)]
            + [item.get(k, "") for k in ("distance", "mu", "mu_minus_mu0", "mu_trace", "residual_sup", "defect", "iterations")]
            + [item["status"]]
        )
    run.write_csv(
        "gamma_sweep.csv",
        ["gamma_re", "gamma_im", "distance", "mu", "mu_minus_mu0", "mu_trace", "residual_sup", "defect", "iterations", "status"],
        rows,
    )
    run.notes["mu0"] = mu0
    ok = sum(i["status"] == "ok" for i in run.items)
    print(f"{ok}/{len(gammas)} values of gamma solved; table in {run.out / 'gamma_sweep.csv'}")
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_converge(cfg: RunConfig, run: Run) -> int:
    """Distances ||psi_{u_j} - psi_0|| on the annulus (1, 2) along u_j = u * 2^-j."""
    p = cfg.params
    grid = _grid(cfg)
    levels = p["levels"]
    us = [p["u"] * 2.0**-j for j in range(levels)]
    root, use = p.get("cache_dir"), not p["no_cache"]
    bump = common_bump([Small(u) for u in us] + [Small(0)])
    try:
        base, _, _ = solve_scalar(Small(0), grid, root, use, bump)
    except SolverError as exc:
        run.items.append({"u": [0.0, 0.0], "status": f"nonconverged: residual {exc.residual:.3e}"})
        return EXIT_SOLVER
    rows = []
    for j, u in enumerate(us):
        try:
            sol, _, _ = solve_scalar(Small(u), grid, root, use, bump)
            d = annulus_distance(sol.psi, base.psi, 1.0, 2.0)
            item = {"j": j, "u": _c(u), "distance": d, "status": "ok"}
        except SolverError as exc:
            item = {"j": j, "u": _c(u), "status": f"nonconverged: residual {exc.residual:.3e}"}
        run.items.append(item)
        rows.append([j, *_c(u), item.get("distance", ""), item["status"]])
    if p["floor"]:
        fine, _, _ = solve_scalar(Small(0), dict(grid, n=2 * grid["n"] - 1), root, use, bump)
        floor = float(np.nanmax(np.abs(fine.psi.values[::2, ::2] - base.psi.values)[base.problem.grid.annulus_mask(1.0, 2.0)]))
        run.notes["grid_error_floor"] = floor
        print(f"grid-error floor (n vs 2n-1 at u=0): {floor:.3e}")
    run.write_csv("converge.csv", ["j", "u_re", "u_im", "distance", "status"], rows)
    ok = sum(i["status"] == "ok" for i in run.items)
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_decay(cfg: RunConfig, run: Run) -> int:
    p = cfg.params
    grid = _grid(cfg)
    rows = []
    for u in p["us"]:
        try:
            sol, _, _ = solve_scalar(Small(u), grid, p.get("cache_dir"), not p["no_cache"])
            c, C = sol.decay or decay_fit(sol)
            g = sol.problem.grid
            ring = np.abs(np.abs(g.z) - 0.9 * g.R) < g.h
            bmax = float(np.nanmax(np.abs(sol.psi.values[ring])))
            item = {"u": _c(u), "c": c, "prefactor": C, "boundary_max": bmax, "status": "ok"}
        except (SolverError, DecayFitError) as exc:
            item = {"u": _c(u), "status": f"failed: {exc}"}
        run.items.append(item)
        rows.append([*_c(u), item.get("c", ""), item.get("prefactor", ""), item.get("boundary_max", ""), item["status"]])
    run.write_csv("decay.csv", ["u_re", "u_im", "c", "prefactor", "boundary_max", "status"], rows)
    ok = sum(i["status"] == "ok" for i in run.items)
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {
    "partitions": cmd_partitions,
    "solve-small": cmd_solve_small,
    "solve-big0": cmd_solve_big0,
    "big": cmd_big,
    "mu-sweep": cmd_mu_sweep,
    "gamma-sweep": cmd_gamma_sweep,
    "converge": cmd_converge,
    "decay": cmd_decay,
}


def _map(fn, args, jobs: int):
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


# ---------------------------------------------------------------------------
# argument parsing


def _complex_list(text: str) -> list[complex]:
    return [parse_complex(t) for t in text.split(",") if t.strip()]


def _u_line(text: str) -> tuple[complex, complex]:
    if ".." not in text:
        raise argparse.ArgumentTypeError("expected A..B")
    a, b = text.split("..", 1)
    return parse_complex(a), parse_complex(b)


def _cplx(text: str) -> complex:
    try:
        return parse_complex(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--config", help="flat key = value file; explicit flags override it")
    common.add_argument("--grid-n", type=int, default=None)
    common.add_argument("--grid-r", type=float, default=None)
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-iter", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None)
    common.add_argument("--cache-dir", default=None, help="overrides HML_CACHE_DIR")
    common.add_argument("--no-cache", action="store_true", default=None)
    common.add_argument("--timings", metavar="PATH", help="write wall times and cache hits here (not reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wildhiggs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("partitions", parents=[common], help="cyclic partitions, weights, base dimension")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--n", type=int, default=None)

    s = sub.add_parser("solve-small", parents=[common], help="scalar solve on the small stratum")
    s.add_argument("--u", type=_cplx, default=None)

    s = sub.add_parser("solve-big0", parents=[common], help="scalar solve on the big stratum at gamma = 0")
    s.add_argument("--omega", type=_cplx, default=None)

    s = sub.add_parser("big", parents=[common], help="matrix solve at (gamma, omega) and mu")
    s.add_argument("--gamma", type=_cplx, default=None)
    s.add_argument("--omega", type=_cplx, default=None)

    s = sub.add_parser("mu-sweep", parents=[common], help="mu over a list or line of u")
    s.add_argument("--u", dest="us", type=_complex_list, default=None, help="comma-separated values")
    s.add_argument("--u-line", type=_u_line, default=None, help="A..B")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--check-refine", action="store_true", default=None)
    s.add_argument("--probe", nargs=2, metavar=("U0", "DELTA"), default=None)

    s = sub.add_parser("gamma-sweep", parents=[common], help="matrix solves along a list of gamma")
    s.add_argument("--omega", type=_cplx, default=None)
    s.add_argument("--gammas", type=_complex_list, default=None)

    s = sub.add_parser("converge", parents=[common], help="u -> 0 distances on the annulus (1, 2)")
    s.add_argument("--u", type=_cplx, default=None, help="u_0 (default 1)")
    s.add_argument("--levels", type=int, default=None)
    s.add_argument("--floor", action="store_true", default=None, help="also measure the n vs 2n-1 grid floor")

    s = sub.add_parser("decay", parents=[common], help="decay fits for a list of u")
    s.add_argument("--u", dest="us", type=_complex_list, default=None)
    return parser


DEFAULTS = {
    "grid_n": 257,
    "grid_r": 8.0,
    "eps": 0.15,
    "tol": 1e-8,
    "max_iter": 50,
    "jobs": 1,
    "no_cache": False,
    "cache_dir": None,
}

COMMAND_DEFAULTS = {
    "partitions": {"k": 2, "n": 3},
    "solve-small": {"u": 1 + 0j},
    "solve-big0": {"omega": 1 + 0j},
    "big": {"gamma": 0j, "omega": 1 + 0j},
    "mu-sweep": {"check_refine": False, "steps": None, "us": None, "u_start": None, "u_stop": None,
                 "probe_u0": None, "probe_delta": None},
    "gamma-sweep": {"omega": 1 + 0j, "gammas": [1 + 0j, 0.5 + 0j, 0.25 + 0j, 0.125 + 0j]},
    "converge": {"u": 1 + 0j, "levels": 7, "floor": False},
    "decay": {"us": [0j, 1 + 0j, 1j, 2 + 1j, 4 + 0j]},
}

_NOT_CONFIG = {"command", "config", "out", "verbose", "u_line", "probe", "timings"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    params = dict(DEFAULTS)
    params.update(COMMAND_DEFAULTS[args.command])
    if args.config:
        loaded = RunConfig.load(args.config)
        if loaded.command != args.command:
            raise ConfigError(f"config is for {loaded.command!r}, not {args.command!r}")
        params.update(loaded.params)
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        params[key] = value
    if getattr(args, "u_line", None):
        params["u_start"], params["u_stop"] = args.u_line
        params["us"] = None
    if getattr(args, "probe", None):
        params["probe_u0"] = parse_complex(args.probe[0])
        params["probe_delta"] = float(args.probe[1])
    if args.command == "big" and params["gamma"] == 0 and params["omega"] == 0:
        raise ConfigError("omega = 0 with gamma = 0 has a triple root; use solve-small --u 0")
    if params.get("jobs", 1) < 1:
        raise ConfigError("--jobs must be positive")
    if params["grid_n"] % 2 == 0 or params["grid_n"] < 5:
        raise ConfigError("--grid-n must be odd and at least 5")
    if params["tol"] <= 0 or params["grid_r"] <= 0 or params["eps"] <= 0:
        raise ConfigError("--tol, --grid-r and --eps must be positive")
    if args.command == "partitions" and (params["k"] < 1 or params["n"] < 0):
        raise ConfigError("need K >= 1 and N >= 0")
    return RunConfig(args.command, params)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(Path(args.out), cfg, args.timings)
    status = "failed"
    code = EXIT_CONFIG
    try:
        code = COMMANDS[args.command](cfg, run)
        status = {EXIT_OK: "ok", EXIT_SOLVER: "nonconverged"}.get(code, "failed")
    except (ConfigError, GridError, ModuliError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code, status = EXIT_CONFIG, "config error"
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        code, status = EXIT_SOLVER, "nonconverged"
    except (OSError, CacheError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        run.finish(status)
    except (OSError, CacheError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
