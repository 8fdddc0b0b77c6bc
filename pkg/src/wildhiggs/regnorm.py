"""Regulated L2 norm mu on both strata, and the algebra around it.

All integrals use the measure (i/pi) dz dzbar = (2/pi) dx dy, discretized as
(2/pi) * sum(values) * h^2 over grid nodes.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .grid import EXCISED, OUTER, Grid, bicubic
from .matrix_hitchin import MatrixSolution, adjoint
from .moduli import Big, Small, higgs_eval
from .scalar_pde import (
    BigGamma0,
    DecayFitError,
    ScalarSolution,
    build_problem,
    common_bump,
    decay_fit,
    kind_polys,
    newton_solve,
    smoothstep9,
)

MEASURE = 2.0 / math.pi


class ReconstructionUndefined(ValueError):
    """The printed smooth-field formula has a negative real radicand or a zero denominator."""


@dataclass
class NormResult:
    value: float
    tail_estimate: float
    excision_estimate: float
    params: dict = field(default_factory=dict)

    @property
    def error_bound(self) -> float:
        return self.tail_estimate + self.excision_estimate

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "tail_estimate": self.tail_estimate,
            "excision_estimate": self.excision_estimate,
            **self.params,
        }


def quadrature(grid: Grid, values: np.ndarray, mask: np.ndarray | None = None) -> float:
    """(2/pi) * sum(values) * h^2 over finite entries (and ``mask`` if given)."""
    ok = np.isfinite(values)
    if mask is not None:
        ok &= mask
    return float(MEASURE * np.sum(values[ok]) * grid.h**2)


# ---------------------------------------------------------------------------
# densities


def trace_density_small(u: complex, psi, z):
    """4 |z^3 + u| sinh^2(psi)."""
    z = np.asarray(z, dtype=complex)
    return 4 * np.abs(z**3 + u) * np.sinh(psi) ** 2


def diagonal_metric(P, Q, psi):
    """diag(|P/Q|^(1/2) e^psi, |Q/P|^(1/2) e^-psi) as (..., 2, 2) values."""
    P = np.asarray(P, dtype=complex)
    ratio = np.sqrt(np.abs(P) / np.abs(Q)) * np.exp(psi)
    h = np.zeros(np.shape(ratio) + (2, 2), dtype=complex)
    h[..., 0, 0] = ratio
    h[..., 1, 1] = 1 / ratio
    return h


def trace_density(phi, h) -> np.ndarray:
    """Tr(phi phi^{*h}), real."""
    phi = np.asarray(phi, dtype=complex)
    return np.real(np.trace(phi @ adjoint(phi, h), axis1=-2, axis2=-1))


# ---------------------------------------------------------------------------
# small stratum


def _tail(c: float, C: float, u: complex, R: float) -> float:
    """(2/pi) int_{|z|>R} 4 (r^3 + |u|) C^2 e^{-2cr}: closed form via incomplete gamma."""
    a = 2 * c

    def moment(k):  # int_R^inf r^k e^{-a r} dr
        return gammaincc(k + 1, a * R) * gamma_fn(k + 1) / a ** (k + 1)

    return float(MEASURE * 2 * math.pi * 4 * C * C * (moment(4) + abs(u) * moment(1)))


def _excision_bound(solution: ScalarSolution, density: np.ndarray, samples: int = 64) -> float:
    """Sum over excision discs of sup(density on the circle) * disc area."""
    g = solution.problem.grid
    total = 0.0
    for e in g.excisions:
        ring = e.center + e.radius * np.exp(2j * np.pi * np.arange(samples) / samples)
        vals = bicubic(g, density, ring)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            total += float(np.max(np.abs(vals))) * math.pi * e.radius**2
    return MEASURE * total


def tail_estimate(solution: ScalarSolution, u: complex) -> float:
    try:
        c, C = solution.decay or decay_fit(solution)
    except DecayFitError:
        return 0.0
    if c <= 0:
        return math.inf
    return _tail(c, C, u, solution.problem.grid.R)


def _cone_cutoff(r, radius):
    return 1.0 - smoothstep9(np.asarray(r) / radius)[0]


def cone_correction(grid: Grid, u: complex, roots) -> tuple[np.ndarray, float]:
    """Node values and exact integral of the cone part of 2|q| at simple roots.

    q = z^3 + u has |q| ~ |q'(r0)| |z - r0| (1 + Re(a (z - r0))) near a simple root,
    a = q''/(2 q').  That kink makes the node sum of the density depend on
    where the root sits in the lattice.  Adding the cone back at the nodes
    and subtracting its integral leaves an O(|z - r0|^3) kink.  Only the
    singular expansion at r0 matters, so the cutoff may overlap other roots.
    Repeated roots are skipped (|q| is then O(|z - r0|^2) or flatter).
    """
    roots = [complex(r) for r in roots]
    values = np.zeros(grid.z.shape)
    integral = 0.0
    radius = 1.0
    for i, r0 in enumerate(roots):
        if any(abs(r0 - r) < 1e-9 for j, r in enumerate(roots) if j != i):
            continue
        dq = 3 * r0 * r0
        a = 6 * r0 / (2 * dq)
        zeta = grid.z - r0
        rho = np.abs(zeta)
        near = rho < radius
        values[near] += 2 * abs(dq) * rho[near] * (1 + np.real(a * zeta[near])) * _cone_cutoff(rho[near], radius)
        radial, _ = quad(lambda t: t * t * _cone_cutoff(t, radius), 0.0, radius, epsabs=1e-14, epsrel=1e-13)
        integral += 2 * abs(dq) * 2 * math.pi * radial
    return values, integral


def mu_scalar(solution: ScalarSolution) -> NormResult:
    """mu of a scalar solution (small stratum or gamma = 0).

    The density is written in the smooth variable, so the sum runs over every
    node, excision discs included; the excision bound is reported as an error
    bar.  The |q| kink at simple roots is integrated by singularity subtraction.
    """
    problem = solution.problem
    g = problem.grid
    density = solution.regulated_density()
    kind = problem.kind
    u = kind.u if isinstance(kind, Small) else kind.gamma**2 - kind.omega**3
    cone, exact = cone_correction(g, u, problem.roots)
    value = quadrature(g, density + cone, g.kind != OUTER) - MEASURE * exact
    return NormResult(
        value,
        tail_estimate(solution, u),
        _excision_bound(solution, density),
        {"problem": problem.params()},
    )


def mu_small(solution: ScalarSolution) -> NormResult:
    if not isinstance(solution.problem.kind, Small):
        raise ValueError("mu_small needs a small-stratum solution")
    return mu_scalar(solution)


def mu_smoothness_probe(
    u0: complex,
    delta: float,
    direction: complex = 1.0,
    R: float = 8.0,
    n: int = 257,
    eps: float = 0.15,
    tol: float = 1e-8,
    mus: dict | None = None,
    bump=None,
) -> dict:
    """Central differences of mu along u0 + t * direction, t in {+-delta, +-2 delta}.

    ``mus`` caches mu by u and is filled in; all solves share one bump so the
    discretization error varies smoothly with u.
    """
    direction = complex(direction) / abs(direction)
    ts = [-2, -1, 0, 1, 2]
    us = {t: complex(u0) + t * delta * direction for t in ts}
    if bump is None:
        bump = common_bump([Small(u) for u in us.values()] + [Small(u0 + 4 * delta * direction)])
    mus = {} if mus is None else mus
    for t, u in us.items():
        key = (u, R, n, eps, tol)
        if key not in mus:
            mus[key] = mu_small(newton_solve(build_problem(Small(u), R, n, eps, tol, bump=bump))).value
    m = {t: mus[(us[t], R, n, eps, tol)] for t in ts}
    return {
        "u0": complex(u0),
        "delta": delta,
        "direction": direction,
        "mu": m[0],
        "d1": (m[1] - m[-1]) / (2 * delta),
        "d1_wide": (m[2] - m[-2]) / (4 * delta),
        "d2": (m[1] - 2 * m[0] + m[-1]) / delta**2,
    }


def richardson_ratio(u0: complex, delta: float = 0.1, direction: complex = 1.0, **kw) -> tuple[float, dict, dict]:
    """Ratio of successive first-difference corrections at step delta and delta/2.

    An O(delta^2) first difference gives a ratio near 4.
    """
    mus: dict = {}
    d = complex(direction) / abs(direction)
    bump = common_bump([Small(u0 + t * delta * d) for t in (-2, 2, 4)])
    coarse = mu_smoothness_probe(u0, delta, direction, mus=mus, bump=bump, **kw)
    fine = mu_smoothness_probe(u0, delta / 2, direction, mus=mus, bump=bump, **kw)
    c1 = coarse["d1_wide"] - coarse["d1"]
    c2 = fine["d1_wide"] - fine["d1"]
    return c1 / c2, coarse, fine


# ---------------------------------------------------------------------------
# smooth part of the Higgs field near the roots


def smooth_higgs_reconstruction(u: complex, psi: float, z: complex, variant: str = "printed") -> np.ndarray:
    """Off-diagonal field whose trace density reproduces the regulated one.

    ``printed``:  [[0, q (e^{2psi}-1)^{1/2} e^{psi}], [(e^{-2psi}-1)^{-1/2} e^{-psi}, 0]]
    with principal square roots; undefined when e^{-2psi} - 1 <= 0.
    ``balanced``: [[0, sqrt2 q e^{psi} sinh psi], [sqrt2 e^{-psi} sinh psi, 0]], which
    splits 4|q| sinh^2 psi equally between the two entries.
    """
    q = z**3 + u
    out = np.zeros((2, 2), dtype=complex)
    if variant == "printed":
        rad = math.exp(-2 * psi) - 1
        if rad <= 0:
            raise ReconstructionUndefined(f"radicand e^(-2 psi) - 1 = {rad:.3g} at psi = {psi:.3g}")
        out[0, 1] = q * cmath.sqrt(math.exp(2 * psi) - 1) * math.exp(psi)
        out[1, 0] = math.exp(-psi) / math.sqrt(rad)
    elif variant == "balanced":
        s = math.sqrt(2) * math.sinh(psi)
        out[0, 1] = q * math.exp(psi) * s
        out[1, 0] = math.exp(-psi) * s
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out


def reconstruction_identity_defect(u: complex, psi: float, z: complex, variant: str = "printed") -> float:
    """Tr(phi_hat phi_hat^{*h}) - (Tr(phi phi^{*h}) - 2|q|) for the small-stratum metric."""
    h = diagonal_metric(z**3 + u, 1.0, psi)
    phi_hat = smooth_higgs_reconstruction(u, psi, z, variant)
    lhs = trace_density(phi_hat, h)
    rhs = trace_density(higgs_eval(Small(u), z), h) - 2 * abs(z**3 + u)
    return float(lhs - rhs)


@dataclass
class PatchedHiggsField:
    """phi_hat near each root, phi_u away from them, joined by a C^2 cutoff in |z - root|."""

    u: complex
    solution: ScalarSolution
    bumps: list[tuple[complex, float, float]]  # (center, inner, outer)

    def __post_init__(self):
        eps = min((e.radius for e in self.solution.problem.grid.excisions), default=0.0)
        for i, (c, inner, outer) in enumerate(self.bumps):
            if not 0 < inner < outer:
                raise ValueError("need 0 < inner < outer")
            if inner < eps:
                raise ValueError(f"bump inner radius {inner} is inside the excision radius {eps}")
            for j, (c2, inner2, _) in enumerate(self.bumps):
                if i != j and abs(c - c2) - inner2 <= outer:
                    raise ValueError("bump overlaps another root's inner disc")

    def cutoff(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        chi = np.zeros(z.shape)
        for c, inner, outer in self.bumps:
            s = np.clip((outer - np.abs(z - c)) / (outer - inner), 0.0, 1.0)
            chi = np.maximum(chi, s**3 * (10 - 15 * s + 6 * s * s))
        return chi


def default_patch(solution: ScalarSolution, outer_factor: float = 4.0) -> PatchedHiggsField:
    """Bumps of radii (eps, outer_factor * eps) around each excised root, shrunk to avoid overlap."""
    kind = solution.problem.kind
    g = solution.problem.grid
    centers = [e.center for e in g.excisions]
    bumps = []
    for e in g.excisions:
        others = [abs(e.center - c) for c in centers if c != e.center]
        outer = outer_factor * e.radius
        if others:
            outer = min(outer, 0.45 * min(others))
        bumps.append((e.center, e.radius, max(outer, 1.5 * e.radius)))
    return PatchedHiggsField(kind.u, solution, bumps)


def _psi_at(solution: ScalarSolution, z) -> np.ndarray:
    problem = solution.problem
    if problem.formulation != "regular":
        return bicubic(problem.grid, solution.psi.values, z)
    # v is smooth at every node, so interpolate it and restore the log part exactly
    z = np.asarray(z, dtype=complex)
    P, Q = kind_polys(problem.kind, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ell = 0.5 * (np.log(np.abs(P)) - np.log(np.abs(Q)))
    chi = problem.bump.evaluate(np.abs(z))[0]
    return bicubic(problem.grid, solution.state, z) - chi * ell


def patched_field(patched: PatchedHiggsField, z: complex) -> np.ndarray:
    """chi phi_hat + (1 - chi) phi_u at z (balanced reconstruction)."""
    psi = float(_psi_at(patched.solution, z))
    chi = float(patched.cutoff(z))
    phi = higgs_eval(Small(patched.u), z)
    if chi == 0:
        return phi
    return chi * smooth_higgs_reconstruction(patched.u, psi, z, "balanced") + (1 - chi) * phi


def patched_metric(patched: PatchedHiggsField, z: complex) -> np.ndarray:
    return diagonal_metric(z**3 + patched.u, 1.0, float(_psi_at(patched.solution, z)))


def moment_map(patched: PatchedHiggsField, z: complex) -> np.ndarray:
    """[phi_tilde, phi_tilde^{*h}] at z."""
    f = patched_field(patched, z)
    fs = adjoint(f, patched_metric(patched, z))
    return f @ fs - fs @ f


def patched_density(patched: PatchedHiggsField) -> np.ndarray:
    """chi Tr(phi_hat phi_hat*) + (1 - chi)(Tr(phi phi*) - 2|q|) at grid nodes, from psi and matrix traces.

    NaN inside the excision discs.
    """
    sol = patched.solution
    g = sol.problem.grid
    z = g.z
    psi = sol.psi.values
    ok = np.isfinite(psi) & (g.kind != EXCISED)
    q = np.where(ok, z**3 + patched.u, 1.0)
    psi = np.where(ok, psi, np.nan)
    h = diagonal_metric(q, np.ones_like(q), np.where(ok, psi, 0.0))
    phi = higgs_eval(Small(patched.u), np.where(ok, z, 0.0))
    phi[..., 0, 1] = q
    regulated = trace_density(phi, h) - 2 * np.abs(q)
    s = np.sqrt(2) * np.sinh(np.where(ok, psi, 0.0))
    hat = np.zeros_like(phi)
    hat[..., 0, 1] = q * np.exp(psi) * s
    hat[..., 1, 0] = np.exp(-psi) * s
    chi = patched.cutoff(z)
    out = chi * trace_density(hat, h) + (1 - chi) * regulated
    return np.where(ok, out, np.nan)


def mu_patched(patched: PatchedHiggsField) -> NormResult:
    """Quadrature of the patched density outside the excision discs, disc contribution bounded."""
    sol = patched.solution
    g = sol.problem.grid
    dens = patched_density(patched)
    value = quadrature(g, dens, g.kind != OUTER)
    u = patched.u
    return NormResult(
        value,
        tail_estimate(sol, u),
        _excision_bound(sol, sol.regulated_density()),
        {"problem": sol.problem.params(), "bumps": [(complex(c), a, b) for c, a, b in patched.bumps]},
    )


def disc_concentration(solution: ScalarSolution, radius_factor: float = 2.0) -> dict:
    """Share of mu carried by discs of radius radius_factor * eps around the roots."""
    g = solution.problem.grid
    density = solution.regulated_density()
    inside = np.zeros(g.z.shape, dtype=bool)
    for e in g.excisions:
        inside |= np.abs(g.z - e.center) < radius_factor * e.radius
    total = quadrature(g, density, g.kind != OUTER)
    disc = quadrature(g, density, inside & (g.kind != OUTER))
    return {"total": total, "discs": disc, "annulus": total - disc, "share": disc / total if total else 0.0}


def trivializing_gauge_vanishing(u: complex, solution: ScalarSolution, z: complex, branch: int = 0) -> float:
    """|Tr(phi' phi'^{*h'}) - 2|q|| in the frame g = trivializing gauge, h' = g h g^H."""
    from .moduli import trivializing_gauge

    g = trivializing_gauge(u, z, branch)
    psi = float(_psi_at(solution, z))
    if not math.isfinite(psi):
        raise ValueError(f"z = {z} is outside the solved region")
    h = diagonal_metric(z**3 + u, 1.0, psi)
    phi = higgs_eval(Small(u), z)
    phi_t = g @ phi @ np.linalg.inv(g)
    h_t = g @ h @ g.conj().T
    return abs(float(trace_density(phi_t, h_t)) - 2 * abs(z**3 + u))


# ---------------------------------------------------------------------------
# big stratum


def error_term(gamma: complex, omega: complex, f1, f2, g, psi0, z):
    """E_gamma in its expanded three-line form."""
    P = z * z + z * omega + omega * omega
    Q = z - omega
    return (
        2 * abs(gamma) ** 2 * f1 * f2
        + np.abs(P) ** 2 * f2**2
        + np.abs(Q) ** 2 * f1**2
        + 4 * np.real(gamma * np.conj(P) * f2 * g - gamma * np.conj(Q) * f1 * np.conj(g) - np.conj(P) * Q * g * g)
        - 2 * np.abs(z**3 - omega**3) * np.cosh(2 * psi0)
    )


def error_term_discrepancy(gamma: complex, omega: complex, f1, f2, g, psi0, z) -> dict:
    """Compare Tr(phi phi^{*h}) - 2|PQ| - E_gamma with the closed density.

    With f1 f2 - |g|^2 = 1 the expanded integrand equals
    2|gamma|^2 |g|^2 + 2 Re(conj(P) Q g^2) + 4|PQ| sinh^2(psi0), so it differs from
    the closed density by 2 Re(conj(P) Q g^2), which is not integrable at infinity.
    """
    P = z * z + z * omega + omega * omega
    Q = z - omega
    h = np.array([[f1, g], [np.conj(g), f2]], dtype=complex)
    phi = np.array([[gamma, P], [Q, -gamma]], dtype=complex)
    expanded = float(trace_density(phi, h)) - 2 * abs(P * Q) - float(error_term(gamma, omega, f1, f2, g, psi0, z))
    closed = big_density(gamma, g, abs(P * Q), psi0)
    return {
        "expanded": expanded,
        "closed": float(closed),
        "difference": expanded - float(closed),
        "predicted": float(2 * np.real(np.conj(P) * Q * g * g)),
    }


def big_density(gamma: complex, g, absPQ, psi0):
    """2 |gamma|^2 |g|^2 + 4 |PQ| sinh^2(psi0)."""
    return 2 * abs(gamma) ** 2 * np.abs(g) ** 2 + 4 * absPQ * np.sinh(psi0) ** 2


def mu_big(matrix_solution: MatrixSolution, gamma0_solution: ScalarSolution) -> NormResult:
    """mu at gamma from the off-diagonal metric entry and the gamma = 0 scalar solution.

    The sinh term is the scalar regulated density of the gamma = 0 problem,
    so at gamma = 0 this reduces to :func:`mu_scalar` exactly.
    """
    mp = matrix_solution.problem
    sp_ = gamma0_solution.problem
    if not isinstance(sp_.kind, Big) or sp_.kind.gamma != 0:
        raise ValueError("gamma0_solution must solve the gamma = 0 problem")
    if complex(sp_.kind.omega) != complex(mp.omega):
        raise ValueError(f"omega mismatch: {sp_.kind.omega} vs {mp.omega}")
    if sp_.grid.R != mp.grid.R or sp_.grid.n != mp.grid.n:
        raise ValueError("matrix and scalar solutions live on different grids")
    base = mu_scalar(gamma0_solution)
    gterm = np.zeros(mp.grid.z.shape)
    if mp.gamma != 0:
        _, _, g = matrix_solution.h.entries()
        gterm = 2 * abs(mp.gamma) ** 2 * np.abs(g) ** 2
    extra = quadrature(mp.grid, gterm, mp.grid.kind != OUTER)
    # |g|^2 ~ |gamma|^2 / |z|^3 beyond R
    tail_g = MEASURE * 2 * math.pi * 2 * abs(mp.gamma) ** 4 / mp.grid.R
    return NormResult(
        base.value + extra,
        base.tail_estimate + tail_g,
        base.excision_estimate,
        {"matrix": mp.params(), "scalar": sp_.params()},
    )


def mu_big_trace(matrix_solution: MatrixSolution) -> NormResult:
    """Cross-check: quadrature of Tr(phi phi^{*h}) - 2|gamma^2 + PQ| with the matrix metric."""
    mp = matrix_solution.problem
    f1, f2, g = matrix_solution.h.entries()
    phi = mp.phi()
    h = np.empty(phi.shape, dtype=complex)
    h[..., 0, 0], h[..., 1, 1], h[..., 0, 1], h[..., 1, 0] = f1, f2, g, np.conj(g)
    P, Q = mp.model()["P"], mp.model()["Q"]
    dens = trace_density(phi, h) - 2 * np.abs(mp.gamma**2 + P * Q)
    return NormResult(quadrature(mp.grid, dens, mp.grid.kind != OUTER), 0.0, 0.0, {"matrix": mp.params()})


def gamma0_scalar_solution(matrix_problem, eps: float = 0.15) -> ScalarSolution:
    """Scalar gamma = 0 solve on the matrix problem's grid and bump."""
    g = matrix_problem.grid
    p = build_problem(
        BigGamma0(matrix_problem.omega), g.R, g.n, eps=eps, tol=matrix_problem.tolerance, bump=matrix_problem.bump
    )
    return newton_solve(p)


def unit_disc_measure(grid: Grid) -> float:
    """(2/pi) * area of the unit disc by node counting; tends to 2."""
    return quadrature(grid, np.where(np.abs(grid.z) <= 1.0, 1.0, 0.0))
