import cmath
import math

import numpy as np
import pytest

from wildhiggs.grid import EXCISED, INTERIOR, OUTER, Grid, GridError
from wildhiggs.moduli import Small
from wildhiggs.scalar_pde import (
    BigGamma0,
    Bump,
    DecayFitError,
    ScalarField,
    SolverError,
    annulus_distance,
    boundary_value,
    build_problem,
    conjugation_defect,
    convergence_study,
    decay_fit_field,
    harmonic_initial,
    max_principle_gap,
    newton_solve,
    observed_order,
    radial_variance,
    residual,
    rotation_defect,
    smoothstep9,
)

N = 129  # unit tests run on a coarse grid; acceptance runs use 257


@pytest.fixture(scope="module")
def sol_u1():
    return newton_solve(build_problem(Small(1), n=N))


@pytest.fixture(scope="module")
def sol_u0():
    return newton_solve(build_problem(Small(0), n=N))


def test_excisions_small_u1():
    g = build_problem(Small(1)).grid
    centers = sorted((e.center for e in g.excisions), key=cmath.phase)
    expected = sorted((cmath.rect(1, math.pi * (2 * k + 1) / 3) for k in range(3)), key=cmath.phase)
    assert len(centers) == 3
    assert np.allclose(centers, expected, atol=1e-12)


def test_triple_root_gives_one_disc():
    g = build_problem(Small(0)).grid
    assert len(g.excisions) == 1
    assert g.excisions[0].center == 0
    assert len(g.excisions[0].roots) == 3


def test_excisions_big_gamma0():
    g = build_problem(BigGamma0(1)).grid
    centers = {complex(round(e.center.real, 9), round(e.center.imag, 9)) for e in g.excisions}
    expected = {complex(round(r.real, 9), round(r.imag, 9)) for r in (cmath.rect(1, 2 * math.pi * k / 3) for k in range(3))}
    assert centers == expected


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": Small(1), "n": 33},  # eps below h
        {"kind": Small(100)},  # roots outside R/2
        {"kind": Small(1), "n": 128},
        {"kind": Small(1), "bump": Bump(0.5, 2.0)},  # bump inside the roots
    ],
)
def test_build_problem_rejects(kwargs):
    with pytest.raises(GridError):
        build_problem(**kwargs)


def test_boundary_value_examples():
    p = build_problem(Small(1))
    assert boundary_value(p, 8.0 + 3.0j) == 0.0
    z = -1 + 0.15
    assert boundary_value(p, z) == pytest.approx(-0.5 * math.log(abs(z**3 + 1)), abs=1e-12)
    assert boundary_value(p, z) == pytest.approx(0.4761, abs=1e-4)
    pb = build_problem(BigGamma0(1))
    z = 1 + 0.15j
    assert boundary_value(pb, z) == pytest.approx(-0.5 * math.log(abs((z * z + z + 1) / (z - 1))))
    with pytest.raises(ValueError):
        boundary_value(p, 3.0)


def test_residual_of_zero_vanishes():
    p = build_problem(Small(0), n=N, formulation="excision")
    zero = np.where(p.grid.kind == EXCISED, np.nan, 0.0)
    r = residual(ScalarField(zero, p.grid), p)
    inner = p.grid.kind == INTERIOR
    assert np.nanmax(np.abs(r[inner])) == 0.0


def test_residual_constant_example():
    p = build_problem(Small(0), formulation="excision")
    psi = np.where(p.grid.kind == EXCISED, np.nan, 0.1)
    r = residual(ScalarField(psi, p.grid), p)
    i, j = np.unravel_index(np.argmin(np.abs(p.grid.z - 1)), p.grid.z.shape)
    assert p.grid.z[i, j] == 1
    assert r[i, j] == pytest.approx(-2 * math.sinh(0.2), abs=1e-12)
    assert r[i, j] == pytest.approx(-0.4027, abs=1e-4)


def test_newton_converges(sol_u1):
    assert sol_u1.residual_sup <= 1e-8
    r = residual(sol_u1.psi, sol_u1.problem)
    assert np.nanmax(np.abs(r)) <= 1e-8


def test_solution_independent_of_initial_guess(sol_u1):
    p = sol_u1.problem
    other = newton_solve(p, initial=harmonic_initial(p))
    assert annulus_distance(sol_u1.psi, other.psi, 0.0, 100.0) <= 1e-9


def test_nonconvergence_signals():
    p = build_problem(Small(1), n=N, max_iterations=1)
    with pytest.raises(SolverError) as exc:
        newton_solve(p)
    assert exc.value.residual > 1e-8
    assert exc.value.iterations == 1


def test_conjugation_symmetry(sol_u1):
    assert conjugation_defect(sol_u1) <= 1e-10


def test_rotation_symmetry(sol_u1):
    assert rotation_defect(sol_u1) <= 5e-2


def test_radial_at_zero(sol_u0):
    var = radial_variance(sol_u0, np.linspace(0.5, 4, 8))
    assert max(var.values()) <= 5e-3


def test_maximum_principle(sol_u1):
    assert max_principle_gap(sol_u1) <= 1e-8


def test_excised_nodes_are_nan(sol_u1):
    g = sol_u1.problem.grid
    assert np.all(np.isnan(sol_u1.psi.values[g.kind == EXCISED]))
    assert np.all(np.isfinite(sol_u1.psi.values[g.kind != EXCISED]))
    assert np.all(sol_u1.psi.values[g.kind == OUTER] == 0)


def test_decay_fit_recovers_planted_rate():
    g = Grid(8.0, 257)
    c, C = decay_fit_field(g, np.exp(-2 * np.abs(g.z)), 4.8, 7.2)
    assert c == pytest.approx(2, abs=0.05)
    assert C == pytest.approx(1, rel=1e-6)


def test_decay_fit_rejects_zero_field():
    g = Grid(8.0, 65)
    with pytest.raises(DecayFitError):
        decay_fit_field(g, np.zeros(g.z.shape), 4.8, 7.2)


def test_convergence_study_identical_problems():
    out = convergence_study([0, 0], n=N)
    assert [d for _, d in out] == [0.0, 0.0]


def test_convergence_study_warns_when_annulus_meets_discs(caplog):
    out = convergence_study([1.0], annulus=(0.5, 2.0), n=N)
    assert "meets the excision disc" in caplog.text
    assert np.isfinite(out[0][1])


def test_observed_order():
    assert observed_order([1, 0.5, 0.25], [4, 1, 0.25]) == pytest.approx(2)


def test_smoothstep9():
    s = np.linspace(-0.5, 1.5, 201)
    S, dS, d2S = smoothstep9(s)
    assert S[0] == 0 and S[-1] == 1
    assert np.all(np.diff(S) >= 0)
    mid = (s > 0.05) & (s < 0.95)
    num = np.gradient(S, s)
    assert np.allclose(num[mid], dS[mid], atol=1e-2)
