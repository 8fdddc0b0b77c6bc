"""Acceptance criteria 1-12 at the desk-scale defaults (R=8, n=257, eps=0.15, tol=1e-8).

Each test prints one ``PASS criterion k`` or ``FAIL criterion k`` line, repeated
in the terminal summary, and then asserts. Runtime is roughly seven minutes on one core.
"""

import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from wildhiggs.cli import EXIT_OK, main
from wildhiggs.matrix_hitchin import (
    MetricField,
    adjoint,
    build_matrix_problem,
    common_matrix_bump,
    expm_traceless_hermitian,
    flow_solve,
    gamma_convergence,
)
from wildhiggs.moduli import (
    Big,
    Small,
    apply_gauge,
    char_poly,
    enumerate_cyclic_partitions,
    higgs_eval,
    hitchin_base_dimension,
    partition_to_weights,
)
from wildhiggs.regnorm import (
    default_patch,
    diagonal_metric,
    gamma0_scalar_solution,
    mu_big,
    mu_big_trace,
    mu_patched,
    mu_scalar,
    mu_small,
    richardson_ratio,
    trace_density,
    trace_density_small,
)
from wildhiggs.scalar_pde import (
    build_problem,
    common_bump,
    convergence_study,
    decay_fit,
    newton_solve,
    radial_variance,
    refinement_study,
    rotation_defect,
    conjugation_defect,
    ScalarField,
    annulus_distance,
)

pytestmark = pytest.mark.slow

N = 257
TOL = 1e-8
US = [0j, 1 + 0j, 1j, 2 + 1j, 4 + 0j]
U_SEQ = [2.0**-j for j in range(7)]
GAMMAS = [2.0**-j for j in range(6)]


def report(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


@pytest.fixture(scope="session")
def small_solutions():
    return {u: newton_solve(build_problem(Small(u), n=N, tol=TOL)) for u in US}


@pytest.fixture(scope="session")
def small_mu(small_solutions):
    return {u: mu_small(s) for u, s in small_solutions.items()}


@pytest.fixture(scope="session")
def matrix_runs():
    base = flow_solve(build_matrix_problem(0.0, 1.0, n=N, tol=TOL, bump=common_matrix_bump(GAMMAS, 1.0)))
    sols = {}
    dist = gamma_convergence(GAMMAS, 1.0, n=N, tol=TOL, base=base, solutions=sols)
    scalar = gamma0_scalar_solution(base.problem)
    return base, sols, dist, scalar


def test_criterion_01_scalar_residual(tmp_path, monkeypatch):
    monkeypatch.setenv("HML_CACHE_DIR", str(tmp_path / "cache"))
    worst, codes = 0.0, []
    for i, u in enumerate(["0", "1", "i", "2+i", "4"]):
        out = tmp_path / str(i)
        codes.append(main(["solve-small", "--u", u, "--out", str(out)]))
        if codes[-1] == EXIT_OK:
            item = json.loads((out / "manifest.json").read_text())["items"][0]
            worst = max(worst, item["residual_sup"])
    ok = all(c == EXIT_OK for c in codes) and worst <= 1e-8
    report(1, ok, f"exit codes {codes}, worst sup residual {worst:.2e} (<= 1e-8)")


def test_criterion_02_symmetries(small_solutions):
    rot = max(rotation_defect(s) for s in small_solutions.values())
    conj = max(conjugation_defect(small_solutions[u]) for u in US if u.imag == 0)
    radii = np.arange(0.5, 4.0 + 1e-9, 0.25)
    var = max(radial_variance(small_solutions[0j], radii).values())
    ok = rot <= 5e-3 and conj <= 1e-10 and var <= 5e-3
    report(2, ok, f"rotation {rot:.2e} (<= 5e-3), conjugation {conj:.2e} (<= 1e-10), radial variance {var:.2e} (<= 5e-3)")


def test_criterion_03_grid_order():
    # levels 129, 257, 513: a 1025 level is out of reach on one core
    ratios = {u: refinement_study(Small(u), n=129, tol=TOL)[2] for u in (1 + 0j, 0j)}
    ok = all(3.5 <= r <= 4.5 for r in ratios.values())
    text = ", ".join(f"u={u}: {r:.3f}" for u, r in ratios.items())
    report(3, ok, f"refinement ratios {text} (in [3.5, 4.5])")


def test_criterion_04_decay(small_solutions):
    rates, edge = [], 0.0
    for s in small_solutions.values():
        c, _ = decay_fit(s)
        rates.append(c)
        g = s.problem.grid
        ring = np.abs(np.abs(g.z) - 0.9 * g.R) < g.h
        edge = max(edge, float(np.nanmax(np.abs(s.psi.values[ring]))))
    ok = min(rates) > 0 and edge < 1e-6
    report(4, ok, f"min fitted rate {min(rates):.3g} (> 0), max |psi| at |z|=0.9R {edge:.2e} (< 1e-6)")


def test_criterion_05_u_to_zero():
    dist = [d for _, d in convergence_study(U_SEQ, n=N, tol=TOL)]
    bump = common_bump([Small(u) for u in U_SEQ] + [Small(0)])
    coarse = newton_solve(build_problem(Small(0), n=N, tol=TOL, bump=bump))
    fine = newton_solve(build_problem(Small(0), n=2 * N - 1, tol=TOL, bump=bump))
    floor = annulus_distance(coarse.psi, ScalarField(fine.psi.values[::2, ::2], coarse.problem.grid), 1.0, 2.0)
    ok = decreasing(dist) and dist[-1] <= 10 * floor
    seq = ", ".join(f"{d:.3g}" for d in dist)
    report(
        5,
        ok,
        f"distances [{seq}] strictly decreasing={decreasing(dist)}, "
        f"final/floor = {dist[-1]:.3e}/{floor:.3e} = {dist[-1] / floor:.1f} (<= 10)",
    )


def test_criterion_06_mu(small_solutions, small_mu):
    values = {u: m.value for u, m in small_mu.items()}
    refine, halve = {}, {}
    for u, s in small_solutions.items():
        bump = s.problem.bump
        fine = mu_small(newton_solve(build_problem(Small(u), n=2 * N - 1, tol=TOL, bump=bump))).value
        half = mu_small(newton_solve(build_problem(Small(u), n=N, eps=0.075, tol=TOL, bump=bump))).value
        refine[u] = abs(fine - values[u]) / values[u]
        halve[u] = abs(half - values[u]) / values[u]
    bump = common_bump([Small(u) for u in U_SEQ] + [Small(0)])
    mu0 = mu_small(newton_solve(build_problem(Small(0), n=N, tol=TOL, bump=bump))).value
    seq = [mu_small(newton_solve(build_problem(Small(u), n=N, tol=TOL, bump=bump))).value for u in U_SEQ]
    gaps = [abs(m - mu0) for m in seq]
    ratio, _, _ = richardson_ratio(1.0, 0.1, n=N, tol=TOL)
    everything = list(values.values()) + seq + [mu0]
    finite = all(math.isfinite(m) and m >= 0 for m in everything)
    ok = finite and max(refine.values()) <= 0.01 and max(halve.values()) <= 0.01 and decreasing(gaps) and 3 <= ratio <= 5
    report(
        6,
        ok,
        f"finite and nonnegative={finite}, max refinement change {max(refine.values()):.2e}, "
        f"max eps-halving change {max(halve.values()):.2e} (<= 1e-2), "
        f"|mu(u_j)-mu(0)| decreasing={decreasing(gaps)} (last {gaps[-1]:.2e}), Richardson ratio {ratio:.3f} (in [3, 5])",
    )


def test_criterion_07_junction(matrix_runs):
    base, _, _, scalar = matrix_runs
    p = base.problem
    f1, _, g = base.h.entries()
    ref_f1 = MetricField.from_scalar(scalar, p).entries()[0]
    mask = p.grid.annulus_mask(1.0, 2.0)
    off = float(np.max(np.abs(g)))
    f1_gap = float(np.max(np.abs(f1[mask] - ref_f1[mask])))
    mu_gap = abs(mu_big(base, scalar).value - mu_scalar(scalar).value)
    ok = off <= 1e-6 and f1_gap <= 1e-4 and mu_gap <= 1e-10
    report(7, ok, f"off-diagonal sup {off:.2e} (<= 1e-6), f1 gap {f1_gap:.2e} (<= 1e-4), mu gap {mu_gap:.2e} (<= 1e-10)")


def test_criterion_08_gamma_to_zero(matrix_runs):
    base, sols, dist, scalar = matrix_runs
    d = [x for _, x in dist]
    mu0 = mu_scalar(scalar).value
    gaps = [abs(mu_big(sols[complex(gm)], scalar).value - mu0) for gm in GAMMAS]
    trace_gaps = [abs(mu_big_trace(sols[complex(gm)]).value - mu0) for gm in GAMMAS]
    print("trace-form mu gaps (reported only):", ", ".join(f"{x:.3g}" for x in trace_gaps))
    worst = max(s.residual_sup for s in sols.values())
    ok = decreasing(d) and decreasing(gaps) and worst <= TOL
    report(
        8,
        ok,
        "metric distances [" + ", ".join(f"{x:.3g}" for x in d) + "], "
        "|mu(gamma_j)-mu(0)| [" + ", ".join(f"{x:.2g}" for x in gaps) + f"], both strictly decreasing; "
        f"worst residual {worst:.1e}",
    )


def test_criterion_09_identities():
    rng = np.random.default_rng(9)
    det_worst = 0.0
    for _ in range(1000):
        z = complex(*rng.normal(size=2))
        spec = Small(complex(*rng.normal(size=2))) if rng.random() < 0.5 else Big(*(complex(*rng.normal(size=2)) for _ in range(2)))
        gm = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        gm /= np.sqrt(np.linalg.det(gm))
        before = np.linalg.det(higgs_eval(spec, z))
        after = np.linalg.det(apply_gauge(gm, spec, z))
        det_worst = max(det_worst, abs(after - before) / max(1.0, abs(before)))
    trace_worst = 0.0
    for _ in range(1000):
        u, z = complex(*rng.normal(size=2)), complex(*rng.normal(size=2))
        psi = rng.normal() * 0.5
        q = z**3 + u
        lhs = trace_density(higgs_eval(Small(u), z), diagonal_metric(q, 1.0, psi)) - 2 * abs(q)
        trace_worst = max(trace_worst, abs(lhs - trace_density_small(u, psi, z)) / (1 + abs(q) * math.cosh(2 * psi)))
    # det-one metrics with log coordinates in [-1, 1]
    f1, f2, g = expm_traceless_hermitian(*rng.uniform(-1, 1, size=(3, 1000)))
    h = np.empty((1000, 2, 2), dtype=complex)
    h[:, 0, 0], h[:, 1, 1], h[:, 0, 1], h[:, 1, 0] = f1, f2, g, np.conj(g)
    phi = rng.normal(size=(1000, 2, 2)) + 1j * rng.normal(size=(1000, 2, 2))
    inv = np.max(np.abs(adjoint(adjoint(phi, h), h) - phi), axis=(1, 2)) / np.max(np.abs(phi), axis=(1, 2))
    inv_worst = float(inv.max())
    cp = char_poly(Big(2, 1))
    poly_ok = cp.P(1) == (0,) and cp.P(2) == (-3, 0, 0, -1)
    ok = det_worst <= 1e-12 and trace_worst <= 1e-12 and inv_worst <= 1e-12 and poly_ok
    report(
        9,
        ok,
        f"det defect {det_worst:.1e}, trace identity {trace_worst:.1e}, involution {inv_worst:.1e} (all <= 1e-12), "
        f"char_poly(Big(2,1)) = lambda^2 - (z^3+3) exact={poly_ok}",
    )


def _necklaces(K: int, N: int) -> int:
    seen = set()
    for parts in itertools.product(range(N + 1), repeat=K):
        if sum(parts) == N:
            seen.add(min(parts[i:] + parts[:i] for i in range(K)))
    return len(seen)


def test_criterion_10_combinatorics():
    mismatches = [(K, N) for K in range(1, 6) for N in range(9) if len(enumerate_cyclic_partitions(K, N)) != _necklaces(K, N)]
    parts = enumerate_cyclic_partitions(2, 3)
    weights = {tuple(b.parts): partition_to_weights(b).alphas for b in parts}
    expected = {(3, 0): (Fraction(3, 4), Fraction(-3, 4)), (2, 1): (Fraction(1, 4), Fraction(-1, 4))}
    dim = hitchin_base_dimension(2, 3)[1]
    ok = not mismatches and weights == expected and dim == 1
    report(10, ok, f"necklace mismatches {mismatches}, (2,3) weights {weights == expected}, base dimension {dim}")


def test_criterion_11_patched(small_solutions, small_mu):
    lines, ok = [], True
    for u in (1 + 0j, 1j):
        full = small_mu[u]
        patched = mu_patched(default_patch(small_solutions[u]))
        gap = abs(full.value - patched.value)
        bound = full.error_bound + patched.error_bound
        ok &= gap <= bound
        lines.append(f"u={u}: |{full.value:.4f} - {patched.value:.4f}| = {gap:.3f} <= {bound:.3f}")
    report(11, ok, "; ".join(lines))


DETERMINISM_COMMANDS = [
    ["partitions", "--k", "3", "--n", "5"],
    ["solve-small", "--u", "1+i"],
    ["solve-big0", "--omega", "1"],
    ["big", "--gamma", "0.5", "--omega", "1"],
    ["mu-sweep", "--u", "1,i"],
    ["gamma-sweep", "--omega", "1", "--gammas", "0.5,0.25"],
    ["converge", "--u", "1", "--levels", "3"],
    ["decay", "--u", "1,2+i"],
]


def test_criterion_12_determinism(tmp_path, monkeypatch):
    differing = []
    for i, argv in enumerate(DETERMINISM_COMMANDS):
        argv = argv + ["--grid-n", "65", "--eps", "0.25"]
        trees = []
        for rep in range(2):
            monkeypatch.setenv("HML_CACHE_DIR", str(tmp_path / f"cache{i}_{rep}"))
            out = tmp_path / f"out{i}_{rep}"
            assert main(argv + ["--out", str(out)]) == EXIT_OK
            files = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
            cache = tmp_path / f"cache{i}_{rep}"
            if cache.exists():
                files.update({p.relative_to(cache): p.read_bytes() for p in cache.rglob("*.hml")})
            trees.append(files)
        if trees[0] != trees[1]:
            differing.append(argv[0])
    report(12, not differing, f"{len(DETERMINISM_COMMANDS)} commands run twice with fresh caches, differing outputs: {differing}")
