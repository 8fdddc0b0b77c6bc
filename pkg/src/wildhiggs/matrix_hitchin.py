"""Full 2x2 Hitchin equation for phi = [[gamma, P], [Q, -gamma]] dz.

Conventions (pinned by the diagonal reduction to the scalar equation):

* metric values h are positive Hermitian with det h = 1;
* the adjoint is  phi^{*h} = h phi^H h^{-1};
* curvature is  dbar((d h) h^{-1}),  which for h = diag(e^w, e^-w) has
  (1,1) entry  dbar d w = Laplacian(w) / 4;
* the residual is  curvature + [phi, phi^{*h}] / 4, equal to one quarter of
  the scalar residual on diagonal metrics.

The metric is stored through its logarithm h = exp(X), X = X_model + eta, with
X_model = diag(m, -m) the smooth far-field model shared with the scalar
solver and eta traceless Hermitian (three real fields), eta = 0 on the
square's edge.  In log form the curvature reads

    dbar((d h) h^{-1}) = Laplacian(X)/4 + dbar[(Phi(ad_X) - 1) dX],
    Phi(t) = (e^t - 1)/t,

and the commutator correction vanishes identically for diagonal X.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import OUTER, Grid, GridError
from .moduli import Big
from .scalar_pde import (
    BigGamma0,
    Bump,
    ScalarProblem,
    ScalarSolution,
    SolverError,
    build_problem,
    default_bump,
    kind_roots,
    laplacian_matrix,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# pointwise 2x2 algebra (arrays of shape (..., 2, 2))


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def hermitian_inverse_det1(h: np.ndarray) -> np.ndarray:
    """Inverse of a det-1 2x2 matrix: [[d, -b], [-c, a]]."""
    inv = np.empty_like(h)
    inv[..., 0, 0] = h[..., 1, 1]
    inv[..., 1, 1] = h[..., 0, 0]
    inv[..., 0, 1] = -h[..., 0, 1]
    inv[..., 1, 0] = -h[..., 1, 0]
    return inv


def adjoint(phi: np.ndarray, h: np.ndarray) -> np.ndarray:
    """h phi^H h^{-1}."""
    phi = np.asarray(phi, dtype=complex)
    h = np.asarray(h, dtype=complex)
    return h @ dagger(phi) @ np.linalg.inv(h)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def pack(a, b, c) -> np.ndarray:
    """Traceless Hermitian [[a, b + ic], [b - ic, -a]]."""
    a = np.asarray(a, dtype=float)
    X = np.empty(a.shape + (2, 2), dtype=complex)
    X[..., 0, 0] = a
    X[..., 1, 1] = -a
    X[..., 0, 1] = b + 1j * np.asarray(c)
    X[..., 1, 0] = b - 1j * np.asarray(c)
    return X


def _sinhc(r):
    small = r < 1e-4
    rs = np.where(small, 1.0, r)
    return np.where(small, 1 + r * r / 6, np.sinh(rs) / rs)


def expm_traceless_hermitian(a, b, c) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f1, f2, g) of exp([[a, b+ic], [b-ic, -a]])."""
    r = np.sqrt(a * a + b * b + c * c)
    ch = np.cosh(r)
    sc = _sinhc(r)
    return ch + a * sc, ch - a * sc, (b + 1j * c) * sc


def logm_hermitian_det1(f1, f2, g) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`expm_traceless_hermitian`."""
    r = np.arccosh(np.maximum((np.asarray(f1) + np.asarray(f2)) / 2, 1.0))
    sc = _sinhc(r)
    return (f1 - f2) / (2 * sc), np.real(g) / sc, np.imag(g) / sc


def _series_or(s, small_series, large):
    small = s < 1e-2
    ss = np.where(small, 1.0, s)
    return np.where(small, small_series(s), large(ss))


def log_commutator_correction(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """(Phi(ad_X) - 1) M for traceless Hermitian X and traceless M.

    ad_X has eigenvalues 0, +-s on sl(2) with s = 2r, r^2 = -det X, which gives
        (Phi(ad_X) - 1) M = alpha M - alpha2 tr(XM) X + beta [X, M],
        alpha = sinh(s)/s - 1, alpha2 = 2 (sinh s - s)/s^3, beta = (cosh s - 1)/s^2.
    """
    r2 = np.maximum(np.real(X[..., 0, 0]) ** 2 + np.abs(X[..., 0, 1]) ** 2, 0.0)
    s = 2 * np.sqrt(r2)
    alpha = _series_or(s, lambda t: t * t / 6 + t**4 / 120 + t**6 / 5040, lambda t: np.sinh(t) / t - 1)
    alpha2 = _series_or(
        s, lambda t: 1 / 3 + t * t / 60 + t**4 / 2520, lambda t: 2 * (np.sinh(t) - t) / t**3
    )
    beta = _series_or(s, lambda t: 0.5 + t * t / 24 + t**4 / 720, lambda t: (np.cosh(t) - 1) / (t * t))
    trXM = np.einsum("...ij,...ji->...", X, M)
    out = alpha[..., None, None] * M - (alpha2 * trXM)[..., None, None] * X
    out = out + beta[..., None, None] * commutator(X, M)
    return out


def _d(field_: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """(d/dz, d/dzbar) by second-order differences over the grid axes (0 = x, 1 = y)."""
    fx = np.gradient(field_, h, axis=0, edge_order=2)
    fy = np.gradient(field_, h, axis=1, edge_order=2)
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def _lap(field_: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(field_)
    out[1:-1, 1:-1] = (
        field_[2:, 1:-1] + field_[:-2, 1:-1] + field_[1:-1, 2:] + field_[1:-1, :-2] - 4 * field_[1:-1, 1:-1]
    ) / (h * h)
    return out


# ---------------------------------------------------------------------------
# fields and problems


@dataclass
class MatrixProblem:
    gamma: complex
    omega: complex
    grid: Grid
    tolerance: float = 1e-8
    max_iterations: int = 40
    bump: Bump | None = None
    _model: dict = field(default=None, init=False, repr=False)

    def params(self) -> dict:
        g, w = complex(self.gamma), complex(self.omega)
        return {
            "kind": "big",
            "gamma": [g.real, g.imag],
            "omega": [w.real, w.imag],
            "R": self.grid.R,
            "n": self.grid.n,
            "tol": self.tolerance,
            "max_iter": self.max_iterations,
            "bump": [self.bump.inner, self.bump.outer],
        }

    def phi(self) -> np.ndarray:
        """Higgs field values on the grid, shape (n, n, 2, 2)."""
        z = self.grid.z
        out = np.empty(z.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = self.gamma
        out[..., 1, 1] = -self.gamma
        out[..., 0, 1] = z * z + z * self.omega + self.omega**2
        out[..., 1, 0] = z - self.omega
        return out

    def scalar_reference(self) -> ScalarProblem:
        """The gamma = 0 scalar problem sharing grid, bump and far-field model."""
        return build_problem(
            BigGamma0(self.omega),
            self.grid.R,
            self.grid.n,
            eps=max(self.grid.h, 0.15),
            tol=self.tolerance,
            bump=self.bump,
        )

    def model(self) -> dict:
        """Far-field log model, its Laplacian and the Higgs entries on the grid.

        The model is (1 - chi) log h_inf, with h_inf the flat metric making phi
        normal.  Its diagonal gamma = 0 part is shared with the scalar solver
        (closed-form Laplacian); the gamma correction is differenced.
        """
        if self._model is None:
            ref = self.scalar_reference().coefficients()
            chi, ell = ref["chi"], ref["ell"]
            outside = chi < 1.0
            m = np.where(outside, (1 - chi) * np.where(np.isfinite(ell), ell, 0.0), 0.0)
            z = self.grid.z
            P = z * z + z * self.omega + self.omega**2
            Q = z - self.omega
            x = np.zeros((3,) + z.shape)
            x[0] = m
            lap = np.zeros((3,) + z.shape)
            lap[0] = ref["S"]
            if self.gamma != 0:
                with np.errstate(divide="ignore", invalid="ignore"):
                    f1, f2, g = far_field_metric(self.gamma, P, Q)
                    a, b, c = logm_hermitian_det1(f1, f2, g)
                corr = np.stack([a - ell, b, c])
                corr = np.where(outside, (1 - chi) * np.where(np.isfinite(corr), corr, 0.0), 0.0)
                x += corr
                lap += np.stack([_lap(e, self.grid.h) for e in corr])
            self._model = {"x": x, "lap": lap, "P": P, "Q": Q}
        return self._model


def far_field_metric(gamma: complex, P, Q):
    """(f1, f2, g) of the flat det-1 metric making [[gamma, P], [Q, -gamma]] normal.

    With mu^2 = gamma^2 + PQ and eigenvector frame V = [[P, P], [mu - gamma, -mu - gamma]],
    h = V V^H / |det V|; at gamma = 0 this is diag(|P/Q|^(1/2), |Q/P|^(1/2)).
    """
    P = np.asarray(P, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    amu = np.sqrt(np.abs(gamma * gamma + P * Q))
    aP = np.abs(P)
    norm = aP * amu
    return aP / amu, (amu * amu + abs(gamma) ** 2) / norm, -P * np.conj(gamma) / norm


def big_roots(gamma: complex, omega: complex) -> np.ndarray:
    """Zeros of P Q and of the discriminant gamma^2 + P Q = z^3 - omega^3 + gamma^2."""
    omega = complex(omega)
    return np.concatenate(
        [np.roots([1, omega, omega**2]), [omega], np.roots([1, 0, 0, gamma * gamma - omega**3])]
    )


def build_matrix_problem(
    gamma: complex,
    omega: complex,
    R: float = 8.0,
    n: int = 257,
    tol: float = 1e-8,
    max_iterations: int = 40,
    bump: Bump | None = None,
) -> MatrixProblem:
    grid = Grid(R, n)
    rho = float(np.max(np.abs(big_roots(gamma, omega))))
    if R < 2 * rho:
        raise GridError(f"R = {R:g} must be at least twice the root modulus {rho:g}")
    if bump is None:
        bump = default_bump(rho)
    elif bump.inner <= rho:
        raise GridError(f"bump inner radius {bump.inner:g} does not cover the roots ({rho:g})")
    return MatrixProblem(complex(gamma), complex(omega), grid, tol, max_iterations, bump)


def common_matrix_bump(gammas, omega: complex) -> Bump:
    return default_bump(max(float(np.max(np.abs(big_roots(g, omega)))) for g in list(gammas) + [0]))


@dataclass
class MetricField:
    """h = exp(X_model + eta) on the grid; eta = (a, b, c) traceless Hermitian."""

    eta: np.ndarray  # shape (3, n, n)
    grid: Grid
    problem: MatrixProblem | None = None

    @property
    def log(self) -> np.ndarray:
        return pack(*_log_coords(self))

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return expm_traceless_hermitian(*_log_coords(self))

    @property
    def matrix(self) -> np.ndarray:
        f1, f2, g = self.entries()
        h = np.empty(f1.shape + (2, 2), dtype=complex)
        h[..., 0, 0] = f1
        h[..., 1, 1] = f2
        h[..., 0, 1] = g
        h[..., 1, 0] = np.conj(g)
        return h

    @classmethod
    def from_entries(cls, f1, f2, g, grid: Grid) -> "MetricField":
        a, b, c = logm_hermitian_det1(np.asarray(f1, float), np.asarray(f2, float), np.asarray(g, complex))
        return cls(np.stack([a, b, c]), grid)

    @classmethod
    def from_scalar(cls, solution: ScalarSolution, problem: MatrixProblem | None = None) -> "MetricField":
        """Diagonal embedding h = diag(e^w, e^-w) of a gamma = 0 scalar solution."""
        grid = solution.problem.grid
        if problem is not None and solution.problem.formulation == "regular":
            eta = np.zeros((3,) + grid.z.shape)
            eta[0] = solution.state
            return cls(eta, grid, problem)
        w = solution.log_metric()
        eta = np.zeros((3,) + grid.z.shape)
        eta[0] = w
        return cls(eta, grid)

    def det_defect(self) -> float:
        f1, f2, g = self.entries()
        return float(np.max(np.abs(f1 * f2 - np.abs(g) ** 2 - 1)))


def to_coords(T: np.ndarray) -> np.ndarray:
    """Complex coordinates (t1, t2, t3) of traceless T = t1 s3 + t2 s1 - t3 s2."""
    return np.stack(
        [
            0.5 * (T[..., 0, 0] - T[..., 1, 1]),
            0.5 * (T[..., 0, 1] + T[..., 1, 0]),
            (T[..., 0, 1] - T[..., 1, 0]) / 2j,
        ]
    )


def from_coords(t: np.ndarray) -> np.ndarray:
    T = np.empty(t.shape[1:] + (2, 2), dtype=complex)
    T[..., 0, 0] = t[0]
    T[..., 1, 1] = -t[0]
    T[..., 0, 1] = t[1] + 1j * t[2]
    T[..., 1, 0] = t[1] - 1j * t[2]
    return T


def _log_coords(metric: "MetricField") -> np.ndarray:
    x = np.array(metric.eta, dtype=float)
    if metric.problem is not None:
        x = x + metric.problem.model()["x"]
    return x


def _curvature_coords(metric: "MetricField") -> np.ndarray:
    h = metric.grid.h
    x = _log_coords(metric)
    if metric.problem is not None:
        lap = (np.stack([_lap(e, h) for e in metric.eta]) + metric.problem.model()["lap"]).astype(complex)
    else:
        lap = np.stack([_lap(e, h) for e in x]).astype(complex)
    dx = np.stack([_d(e, h)[0] for e in x])
    # (Phi(ad_X) - 1) dX in coordinates: tr(XM) = 2 x.m and [X, M] = -2i (x cross m)
    s = 2 * np.sqrt(np.sum(x * x, axis=0))
    alpha = _series_or(s, lambda t: t * t / 6 + t**4 / 120 + t**6 / 5040, lambda t: np.sinh(t) / t - 1)
    alpha2 = _series_or(
        s, lambda t: 1 / 3 + t * t / 60 + t**4 / 2520, lambda t: 2 * (np.sinh(t) - t) / t**3
    )
    beta = _series_or(s, lambda t: 0.5 + t * t / 24 + t**4 / 720, lambda t: (np.cosh(t) - 1) / (t * t))
    xm = np.sum(x * dx, axis=0)
    corr = alpha * dx - 2 * alpha2 * xm * x - 2j * beta * np.cross(x, dx, axis=0)
    C = 0.25 * lap + np.stack([_d(e, h)[1] for e in corr])
    C[:, metric.grid.kind == OUTER] = 0
    return C


def curvature(metric: MetricField) -> np.ndarray:
    """dbar((d h) h^{-1}) per node, shape (n, n, 2, 2); zero on the outer ring.

    With a problem attached, the Laplacian of the far-field model is taken
    in closed form and only eta is differenced.
    """
    return from_coords(_curvature_coords(metric))


def _higgs_coords(metric: MetricField, problem: MatrixProblem) -> np.ndarray:
    return _higgs_coords_at(metric.entries(), problem)


def _higgs_coords_at(entries, problem: MatrixProblem) -> np.ndarray:
    f1, f2, g = entries
    mod = problem.model()
    gam, P, Q = problem.gamma, mod["P"], mod["Q"]
    gb = np.conj(g)
    cgam, cP, cQ = np.conj(gam), np.conj(P), np.conj(Q)
    # U = h phi^H, S = U h^{-1} with h^{-1} = [[f2, -g], [-gb, f1]]
    u11 = f1 * cgam + g * cP
    u12 = f1 * cQ - g * cgam
    u21 = gb * cgam + f2 * cP
    u22 = gb * cQ - f2 * cgam
    s11 = u11 * f2 - u12 * gb
    s12 = -u11 * g + u12 * f1
    s21 = u21 * f2 - u22 * gb
    s22 = -u21 * g + u22 * f1
    # [phi, S] with phi = [[gam, P], [Q, -gam]]
    c11 = P * s21 - s12 * Q
    c12 = 2 * gam * s12 + P * (s22 - s11)
    c21 = -2 * gam * s21 + Q * (s11 - s22)
    return 0.25 * np.stack([c11, 0.5 * (c12 + c21), (c12 - c21) / 2j])


def higgs_term(metric: MetricField, phi: np.ndarray) -> np.ndarray:
    f1, f2, g = metric.entries()
    h = np.empty(f1.shape + (2, 2), dtype=complex)
    h[..., 0, 0] = f1
    h[..., 1, 1] = f2
    h[..., 0, 1] = g
    h[..., 1, 0] = np.conj(g)
    star = h @ dagger(phi) @ hermitian_inverse_det1(h)
    return 0.25 * commutator(phi, star)


@dataclass
class HitchinResidual:
    matrix: np.ndarray
    sup: float  # traceless Hermitian part: the equations the solver drives to zero
    defect: float  # remaining anti-Hermitian part, a discretization defect

    @property
    def equations(self) -> np.ndarray:
        return _equations(self.matrix)


def _equations(R: np.ndarray) -> np.ndarray:
    return to_coords(R).real


def unitary_frame(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Coordinates of exp(-X/2) T exp(X/2), X with real coordinates x.

    An h-self-adjoint T becomes Hermitian (real coordinates) in this frame.
    """
    r = np.sqrt(np.sum(x * x, axis=0))
    safe = np.where(r > 0, r, 1.0)
    xh = x / safe
    xt = np.sum(xh * t, axis=0)
    return t + 1j * np.sinh(r) * np.cross(xh, t, axis=0) + (1 - np.cosh(r)) * (xh * xt - t)


def _residual_coords(metric: MetricField, problem: MatrixProblem) -> np.ndarray:
    C = _curvature_coords(metric) + _higgs_coords(metric, problem)
    C = unitary_frame(_log_coords(metric), C)
    C[:, problem.grid.kind == OUTER] = 0
    return C


def hitchin_residual(metric: MetricField, problem: MatrixProblem) -> HitchinResidual:
    """Residual h^{-1/2} (F + [phi, phi*]/4) h^{1/2} of the metric.

    This is Hermitian for an exact curvature; its Hermitian part holds the
    solved equations and the rest is a discretization defect.
    """
    C = _residual_coords(metric, problem)
    return HitchinResidual(from_coords(C), float(np.max(np.abs(C.real))), float(np.max(np.abs(C.imag))))


@dataclass
class MatrixSolution:
    h: MetricField
    problem: MatrixProblem
    residual_sup: float
    iterations: int
    defect: float = 0.0
    wall_time: float = 0.0
    flow_steps: int = 0


def _higgs_jacobian(xt: np.ndarray, problem: MatrixProblem, interior: np.ndarray, step: float = 1e-6):
    """d/dx of the unitary-frame Higgs term at the nodes in ``interior``, shape (3, 3, m)."""
    mod = problem.model()
    sub = {"P": mod["P"].ravel()[interior], "Q": mod["Q"].ravel()[interior]}

    class _View:
        gamma = problem.gamma

        @staticmethod
        def model():
            return sub

    J = np.empty((3, 3, xt.shape[1]))
    for k in range(3):
        e = np.zeros((3, 1))
        e[k] = step
        hi = unitary_frame(xt + e, _higgs_coords_at(expm_traceless_hermitian(*(xt + e)), _View)).real
        lo = unitary_frame(xt - e, _higgs_coords_at(expm_traceless_hermitian(*(xt - e)), _View)).real
        J[:, k] = (hi - lo) / (2 * step)
    return J


def flow_solve(
    problem: MatrixProblem,
    initial: MetricField | ScalarSolution | None = None,
    gmres_rtol: float = 1e-6,
) -> MatrixSolution:
    """Damped Newton-Krylov on eta with a first-order flow fallback.

    Jacobian-vector products are one-sided differences of the residual;
    GMRES is preconditioned by the factorized scalar Jacobian applied to
    each of the three components.
    """
    t0 = time.perf_counter()
    grid = problem.grid
    n = grid.n
    interior = (grid.kind != OUTER).ravel()
    ni = int(interior.sum())
    model = problem.model()

    eta = np.zeros((3, n, n))
    if isinstance(initial, ScalarSolution):
        initial = MetricField.from_scalar(initial, problem)
    if initial is not None:
        eta = _log_coords(initial) - model["x"]
    eta[:, grid.kind == OUTER] = 0

    def unpack(x):
        e = np.zeros((3, n * n))
        e[:, interior] = x.reshape(3, ni)
        return e.reshape(3, n, n)

    def G(x):
        C = _residual_coords(MetricField(unpack(x), grid, problem), problem)
        return C.real.reshape(3, n * n)[:, interior].ravel()

    x = eta.reshape(3, n * n)[:, interior].ravel()
    r = G(x)
    rnorm = float(np.max(np.abs(r)))

    L = laplacian_matrix(n, grid.h)[interior][:, interior]

    def preconditioner(x):
        # principal part exp(-ad/2) Phi(ad) = sinh(ad/2)/(ad/2) of the curvature in
        # the unitary frame, plus the pointwise Jacobian of the Higgs term
        xt = _log_coords(MetricField(unpack(x), grid, problem)).reshape(3, -1)[:, interior]
        r = np.sqrt(np.sum(xt * xt, axis=0))
        xh = xt / np.where(r > 0, r, 1.0)
        sc = _sinhc(r)
        B = sc * np.eye(3)[:, :, None] + (1 - sc) * xh[:, None, :] * xh[None, :, :]
        JH = _higgs_jacobian(xt, problem, interior)
        blocks = [
            [0.25 * sp.diags(B[j, k]) @ L + sp.diags(JH[j, k]) for k in range(3)] for j in range(3)
        ]
        lu = spla.splu(sp.bmat(blocks, format="csc"))
        return spla.LinearOperator((3 * ni, 3 * ni), matvec=lu.solve), lu.solve

    it = 0
    flow = 0
    M = None
    krylov = [0]
    while rnorm > problem.tolerance:
        if it >= problem.max_iterations:
            raise SolverError(f"matrix solve stalled after {it} iterations (residual {rnorm:.3e})", rnorm, it)
        if M is None or krylov[0] > 12:
            M, apply_M = preconditioner(x)
        krylov[0] = 0
        xs = max(1.0, float(np.max(np.abs(x))))

        def jv(v, x=x, r=r, xs=xs):
            nv = np.max(np.abs(v))
            if nv == 0:
                return np.zeros_like(v)
            e = 1e-7 * xs / nv
            return (G(x + e * v) - r) / e

        J = spla.LinearOperator((3 * ni, 3 * ni), matvec=jv)
        # forcing term: loose while far from the solution
        rtol = max(gmres_rtol, min(1e-2, rnorm))
        dx, info = spla.gmres(
            J, -r, M=M, rtol=rtol, atol=0.0, restart=40, maxiter=3,
            callback=lambda _: krylov.__setitem__(0, krylov[0] + 1), callback_type="pr_norm",
        )
        accepted = False
        t = 1.0
        for _ in range(31):
            x_new = x + t * dx
            r_new = G(x_new)
            n_new = float(np.max(np.abs(r_new)))
            if n_new < rnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # flow fallback: preconditioned residual step, halved on increase
            delta = 1.0
            step = apply_M(r)
            for _ in range(31):
                x_new = x - delta * step
                r_new = G(x_new)
                n_new = float(np.max(np.abs(r_new)))
                if n_new < rnorm:
                    accepted = True
                    flow += 1
                    break
                delta *= 0.5
        if not accepted:
            raise SolverError(f"no descent step at residual {rnorm:.3e}", rnorm, it)
        if t < 1:
            krylov[0] = max(krylov[0], 13)
        x, r, rnorm = x_new, r_new, n_new
        it += 1
        log.debug("matrix it=%d t=%g krylov=%d residual=%.3e", it, t, krylov[0], rnorm)

    metric = MetricField(unpack(x), grid, problem)
    res = hitchin_residual(metric, problem)
    return MatrixSolution(metric, problem, res.sup, it, res.defect, time.perf_counter() - t0, flow)


def entry_distance(a: MetricField, b: MetricField, r_in: float, r_out: float) -> float:
    """sup over annulus nodes of the largest entrywise |h_a - h_b|."""
    grid = a.grid
    mask = grid.annulus_mask(r_in, r_out)
    fa, fb = a.entries(), b.entries()
    return float(max(np.max(np.abs(x[mask] - y[mask])) for x, y in zip(fa, fb)))


def gamma_convergence(
    gammas,
    omega: complex = 1.0,
    annulus=(1.0, 2.0),
    R: float = 8.0,
    n: int = 257,
    tol: float = 1e-8,
    base: MatrixSolution | None = None,
    solutions: dict | None = None,
) -> list[tuple[complex, float]]:
    """Distances ||h_gamma - h_0|| on the annulus, all solves on one grid.

    ``solutions`` (optional dict) receives every MatrixSolution keyed by gamma.
    """
    gammas = [complex(g) for g in gammas]
    if base is None:
        base = flow_solve(build_matrix_problem(0.0, omega, R, n, tol, bump=common_matrix_bump(gammas, omega)))
    solved = {0j: base}
    # continuation: smallest |gamma| first, each warm-started from its nearest solved neighbour
    for gm in sorted(set(gammas), key=abs):
        if gm in solved:
            continue
        start = min(solved, key=lambda k: abs(k - gm))
        p = build_matrix_problem(gm, omega, R, n, tol, bump=base.problem.bump)
        solved[gm] = flow_solve(p, initial=solved[start].h)
    if solutions is not None:
        solutions.update({g: solved[g] for g in gammas})
    return [(g, entry_distance(solved[g].h, base.h, *annulus)) for g in gammas]
