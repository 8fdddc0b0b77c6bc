import numpy as np
import pytest

from wildhiggs.grid import Grid, GridError
from wildhiggs.matrix_hitchin import (
    MetricField,
    _curvature_coords,
    _higgs_coords_at,
    adjoint,
    build_matrix_problem,
    commutator,
    curvature,
    entry_distance,
    expm_traceless_hermitian,
    far_field_metric,
    flow_solve,
    from_coords,
    higgs_term,
    hitchin_residual,
    log_commutator_correction,
    logm_hermitian_det1,
    pack,
    to_coords,
    unitary_frame,
)
from wildhiggs.scalar_pde import BigGamma0, SolverError, build_problem, newton_solve

rng = np.random.default_rng(2024)


def random_hermitian_det1(size):
    a, b, c = rng.normal(size=(3, size)) * 0.8
    f1, f2, g = expm_traceless_hermitian(a, b, c)
    h = np.empty((size, 2, 2), dtype=complex)
    h[:, 0, 0], h[:, 1, 1], h[:, 0, 1], h[:, 1, 0] = f1, f2, g, np.conj(g)
    return h


def random_matrices(size):
    return rng.normal(size=(size, 2, 2)) + 1j * rng.normal(size=(size, 2, 2))


def test_adjoint_examples():
    assert np.allclose(adjoint(np.array([[0, 1], [0, 0]]), np.eye(2)), [[0, 0], [1, 0]])
    q, psi = 2.0 - 1.0j, 0.3
    aq = abs(q)
    h = np.diag([aq**0.5 * np.exp(psi), aq**-0.5 * np.exp(-psi)])
    phi = np.array([[0, q], [1, 0]])
    expected = [[0, aq * np.exp(2 * psi)], [np.conj(q) / aq * np.exp(-2 * psi), 0]]
    assert np.allclose(adjoint(phi, h), expected, atol=1e-14)


def test_adjoint_involution():
    h = random_hermitian_det1(1000)
    phi = random_matrices(1000)
    twice = adjoint(adjoint(phi, h), h)
    err = np.max(np.abs(twice - phi), axis=(1, 2))
    cond = np.linalg.cond(h)
    assert np.all(err <= 1e-14 * cond**2 * np.max(np.abs(phi), axis=(1, 2)))


def test_exp_log_round_trip_and_det():
    a, b, c = rng.normal(size=(3, 1000)) * 2
    f1, f2, g = expm_traceless_hermitian(a, b, c)
    assert np.max(np.abs(f1 * f2 - np.abs(g) ** 2 - 1) / (f1 * f2)) <= 1e-12
    back = logm_hermitian_det1(f1, f2, g)
    assert np.allclose(back, (a, b, c), atol=1e-9)


def test_pauli_coordinates_round_trip():
    T = random_matrices(50)
    T = T - 0.5 * np.trace(T, axis1=1, axis2=2)[:, None, None] * np.eye(2)
    assert np.allclose(from_coords(to_coords(T)), T)
    X = pack(*rng.normal(size=(3, 50)))
    assert np.allclose(np.imag(to_coords(X)), 0)


def test_commutator_correction_series_matches_closed_form():
    # s just above and below the series threshold give the same answer
    M = pack(*rng.normal(size=3)).astype(complex) + 1j * pack(*rng.normal(size=3))
    for r in (0.004999, 0.005001):
        x = np.array([r, 0.0, 0.0])
        out = log_commutator_correction(pack(*x), M)
        assert np.all(np.isfinite(out))
    a = log_commutator_correction(pack(0.004999, 0, 0), M)
    b = log_commutator_correction(pack(0.005001, 0, 0), M)
    assert np.max(np.abs(a - b)) < 1e-5


def test_far_field_metric_makes_phi_normal():
    gamma, omega = 0.7 + 0.2j, 1.0
    z = rng.normal(size=200) * 3 + 1j * rng.normal(size=200) * 3
    P, Q = z * z + z * omega + omega * omega, z - omega
    f1, f2, g = far_field_metric(gamma, P, Q)
    assert np.allclose(f1 * f2 - np.abs(g) ** 2, 1)
    h = np.empty((200, 2, 2), dtype=complex)
    h[:, 0, 0], h[:, 1, 1], h[:, 0, 1], h[:, 1, 0] = f1, f2, g, np.conj(g)
    phi = np.zeros((200, 2, 2), dtype=complex)
    phi[:, 0, 0], phi[:, 0, 1], phi[:, 1, 0], phi[:, 1, 1] = gamma, P, Q, -gamma
    comm = commutator(phi, adjoint(phi, h))
    assert np.max(np.abs(comm) / (1 + np.abs(P * Q))[:, None, None]) < 1e-10
    f1, f2, g = far_field_metric(0.0, P, Q)
    assert np.allclose(f1, np.sqrt(np.abs(P / Q)))
    assert np.allclose(g, 0)


def test_explicit_higgs_term_matches_matrix_product():
    p = build_matrix_problem(0.4 - 0.3j, 1.0, n=33)
    eta = rng.normal(size=(3,) + p.grid.z.shape) * 0.3
    m = MetricField(eta, p.grid, p)
    explicit = from_coords(_higgs_coords_at(m.entries(), p))
    direct = higgs_term(m, p.phi())
    assert np.max(np.abs(explicit - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_curvature_of_constant_metric_vanishes():
    g = Grid(2.0, 33)
    eta = np.broadcast_to(np.array([0.3, -0.2, 0.5])[:, None, None], (3, 33, 33)).copy()
    assert np.max(np.abs(curvature(MetricField(eta, g)))) < 1e-12


def test_curvature_of_diagonal_quadratic():
    g = Grid(2.0, 65)
    x, y = g.z.real, g.z.imag
    w = 0.3 * x * x - 0.1 * x * y + 0.2 * y * y + 0.5 * x
    lap_w = 2 * 0.3 + 2 * 0.2
    eta = np.stack([w, np.zeros_like(w), np.zeros_like(w)])
    F = curvature(MetricField(eta, g))
    inner = np.s_[2:-2, 2:-2]
    assert np.allclose(F[inner][..., 0, 0], 0.25 * lap_w, atol=1e-10)
    assert np.allclose(F[inner][..., 0, 1], 0, atol=1e-10)


def test_curvature_matches_matrix_differencing():
    # dbar((dh) h^{-1}) by direct differencing of a smooth non-diagonal metric
    g = Grid(1.0, 129)
    x, y = g.z.real, g.z.imag
    eta = np.stack([0.4 * np.sin(x + 0.5 * y), 0.3 * np.cos(x * y), 0.2 * (x - y * y)])
    m = MetricField(eta, g)
    H = m.matrix
    Hinv = np.linalg.inv(H)
    hx = np.gradient(H, g.h, axis=0)
    hy = np.gradient(H, g.h, axis=1)
    A = 0.5 * (hx - 1j * hy) @ Hinv
    Ax = np.gradient(A, g.h, axis=0)
    Ay = np.gradient(A, g.h, axis=1)
    F_direct = 0.5 * (Ax + 1j * Ay)
    F = curvature(m)
    inner = np.s_[4:-4, 4:-4]
    assert np.max(np.abs(F[inner] - F_direct[inner])) < 5e-3


def test_unitary_frame_makes_self_adjoint_terms_hermitian():
    p = build_matrix_problem(0.8, 1.0, n=33)
    eta = rng.normal(size=(3,) + p.grid.z.shape) * 0.3
    m = MetricField(eta, p.grid, p)
    t = _higgs_coords_at(m.entries(), p)
    frame = unitary_frame(np.array(m.eta) + p.model()["x"], t)
    assert np.max(np.abs(frame.imag)) <= 1e-9 * (1 + np.max(np.abs(frame.real)))
    assert np.max(np.abs(t.imag)) > 1e-3  # not Hermitian before the change of frame


def test_residual_traceless_hermitian_structure():
    p = build_matrix_problem(0.5, 1.0, n=65)
    m = MetricField(np.zeros((3,) + p.grid.z.shape), p.grid, p)
    res = hitchin_residual(m, p)
    assert np.max(np.abs(np.trace(res.matrix, axis1=-2, axis2=-1))) < 1e-12
    assert res.sup > 0  # the far-field model is not a solution
    assert np.isfinite(res.sup)


@pytest.fixture(scope="module")
def junction():
    p = build_matrix_problem(0.0, 1.0, n=129)
    scalar = newton_solve(p.scalar_reference())
    return p, scalar


def test_scalar_embedding_solves_matrix_equation(junction):
    p, scalar = junction
    res = hitchin_residual(MetricField.from_scalar(scalar, p), p)
    assert res.sup <= 5 * max(scalar.residual_sup, 1e-12) + 1e-10


def test_flow_solve_gamma_zero_stays_diagonal(junction):
    p, scalar = junction
    sol = flow_solve(p)
    assert sol.residual_sup <= p.tolerance
    f1, _, g = sol.h.entries()
    assert np.max(np.abs(g)) <= 1e-6
    assert sol.h.det_defect() <= 1e-12
    ref = MetricField.from_scalar(scalar, p)
    assert entry_distance(sol.h, ref, 1.0, 2.0) <= 1e-4


def test_flow_solve_small_gamma():
    p = build_matrix_problem(0.1, 1.0, n=65)
    sol = flow_solve(p)
    assert sol.residual_sup <= p.tolerance
    assert sol.h.det_defect() <= 1e-12
    assert entry_distance(sol.h, sol.h, 1.0, 2.0) == 0.0


def test_flow_solve_reports_nonconvergence():
    p = build_matrix_problem(1.0, 1.0, n=65, max_iterations=1)
    with pytest.raises(SolverError):
        flow_solve(p)


def test_matrix_problem_rejects_small_box():
    with pytest.raises(GridError):
        build_matrix_problem(3.0, 2.0, R=3.0, n=65)
