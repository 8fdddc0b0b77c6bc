"""Strata labels, parabolic weights, Hitchin base data and explicit Higgs fields.

Everything combinatorial is exact (``fractions.Fraction``); complex floating
point enters only when a field is evaluated at a point ``z``.
"""

from __future__ import annotations

import cmath
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np


class ModuliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cyclic partitions and weights


def canonical_rotation(parts: Sequence[int]) -> tuple[int, ...]:
    """Lexicographically greatest cyclic rotation of ``parts``."""
    parts = tuple(int(p) for p in parts)
    if not parts:
        return parts
    return max(parts[i:] + parts[:i] for i in range(len(parts)))


@dataclass(frozen=True)
class CyclicPartition:
    parts: tuple[int, ...]
    n_total: int

    def __post_init__(self):
        if any(p < 0 for p in self.parts):
            raise ModuliError(f"negative part in {self.parts}")
        if sum(self.parts) != self.n_total:
            raise ModuliError(f"parts {self.parts} do not sum to {self.n_total}")
        object.__setattr__(self, "parts", canonical_rotation(self.parts))

    @property
    def K(self) -> int:
        return len(self.parts)


@dataclass(frozen=True)
class WeightVector:
    alphas: tuple[Fraction, ...]
    K: int
    N: int

    def __post_init__(self):
        if len(self.alphas) != self.K:
            raise ModuliError("weight vector length must equal K")
        if sum(self.alphas) != 0:
            raise ModuliError(f"weights {self.alphas} do not sum to zero")
        for b in self.partition_parts():
            if b < 0 or b.denominator != 1:
                raise ModuliError(f"weights {self.alphas} induce non-integral part {b}")

    def partition_parts(self) -> list[Fraction]:
        """b_i = alpha_i - alpha_{i+1} + N/K, cyclic in i."""
        a = self.alphas
        shift = Fraction(self.N, self.K)
        return [a[i] - a[(i + 1) % self.K] + shift for i in range(self.K)]


def enumerate_cyclic_partitions(K: int, N: int) -> set[CyclicPartition]:
    """One representative per rotation class of compositions of N into K parts."""
    if K <= 0:
        raise ModuliError(f"K must be positive, got {K}")
    if N < 0:
        raise ModuliError(f"N must be nonnegative, got {N}")
    found: set[tuple[int, ...]] = set()
    for cuts in itertools.combinations_with_replacement(range(N + 1), K - 1):
        bounds = (0,) + cuts + (N,)
        comp = tuple(bounds[i + 1] - bounds[i] for i in range(K))
        found.add(canonical_rotation(comp))
    return {CyclicPartition(p, N) for p in found}


def partition_to_weights(b: CyclicPartition) -> WeightVector:
    K, N = b.K, b.n_total
    shift = Fraction(N, K)
    alphas = [Fraction(0)]
    for bi in b.parts[:-1]:
        alphas.append(alphas[-1] - (bi - shift))
    mean = sum(alphas) / K
    return WeightVector(tuple(a - mean for a in alphas), K, N)


def parabolic_degree(weights: WeightVector) -> Fraction:
    return sum(weights.alphas, Fraction(0))


def hitchin_base_dimension(K: int, N: int) -> tuple[list[int | None], int]:
    """Max degree of each P_i (i = 2..K) and the total complex dimension.

    An absent coefficient (bound below zero) is reported as ``None``.
    """
    if K < 2:
        raise ModuliError(f"K must be at least 2, got {K}")
    degrees: list[int | None] = []
    dim = 0
    for i in range(2, K + 1):
        bound = Fraction(N * (i - 1), K) - 1
        d = bound.numerator // bound.denominator
        if d < 0:
            degrees.append(None)
        else:
            degrees.append(d)
            dim += d + 1
    return degrees, dim


# ---------------------------------------------------------------------------
# Higgs fields of M_{2,3}


@dataclass(frozen=True)
class Small:
    u: complex


@dataclass(frozen=True)
class Big:
    gamma: complex
    omega: complex


HiggsFieldSpec = Small | Big


def fiber_invariant(spec: HiggsFieldSpec) -> complex:
    if isinstance(spec, Small):
        return complex(spec.u)
    return complex(spec.gamma) ** 2 - complex(spec.omega) ** 3


def off_diagonal_polys(spec: HiggsFieldSpec, z):
    """(P, Q) with the field written [[gamma, P], [Q, -gamma]] dz."""
    z = np.asarray(z, dtype=complex)
    if isinstance(spec, Small):
        return z**3 + spec.u, np.ones_like(z)
    w = complex(spec.omega)
    return z * z + z * w + w * w, z - w


def higgs_eval(spec: HiggsFieldSpec, z) -> np.ndarray:
    """dz-coefficient of the Higgs field; shape ``z.shape + (2, 2)``."""
    z = np.asarray(z, dtype=complex)
    P, Q = off_diagonal_polys(spec, z)
    c = 0.0 if isinstance(spec, Small) else complex(spec.gamma)
    out = np.empty(z.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = P
    out[..., 1, 0] = Q
    out[..., 1, 1] = -c
    return out


@dataclass(frozen=True)
class CharPolynomial:
    """lambda^K + sum_i P_i(z) dz^i lambda^(K-i); coefficients low-order first."""

    K: int
    coefficients: tuple[tuple[complex, ...], ...]

    def P(self, i: int) -> tuple[complex, ...]:
        return self.coefficients[i - 1]


def _trim(c: Sequence[complex]) -> tuple[complex, ...]:
    c = list(c)
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return tuple(c)


def char_poly(spec: HiggsFieldSpec) -> CharPolynomial:
    """det(lambda - phi) for the 2x2 traceless field, from exact polynomial products.

    P_1 = -trace = 0 and P_2 = det(phi) = -(gamma^2 + P Q).
    """
    if isinstance(spec, Small):
        P = (complex(spec.u), 0, 0, 1)
        Q = (1,)
        c = 0j
    else:
        w = complex(spec.omega)
        P = (w * w, w, 1)
        Q = (-w, 1)
        c = complex(spec.gamma)
    PQ = np.polynomial.polynomial.polymul(P, Q)
    det = -np.asarray(PQ, dtype=complex)
    det[0] -= c * c
    return CharPolynomial(2, ((0j,), _trim(det)))


def apply_gauge(g: Callable[[complex], np.ndarray] | np.ndarray, field, z: complex) -> np.ndarray:
    """g(z) phi(z) g(z)^-1 for a gauge and a field given as callables or values."""
    gz = np.asarray(g(z) if callable(g) else g, dtype=complex)
    if isinstance(field, (Small, Big)):
        pz = higgs_eval(field, z)
    else:
        pz = np.asarray(field(z) if callable(field) else field, dtype=complex)
    det = np.linalg.det(gz)
    scale = np.max(np.abs(gz)) ** 2
    if not np.all(np.abs(det) > 1e-14 * np.maximum(scale, 1e-300)):
        raise ModuliError(f"gauge is not invertible at z={z}")
    return gz @ pz @ np.linalg.inv(gz)


def stratum_gauge(gamma: complex, omega: complex, z: complex) -> np.ndarray:
    """i [[gamma/omega, omega + z], [0, -gamma/omega]], as printed for the big-to-small limit."""
    r = gamma / omega
    return 1j * np.array([[r, omega + z], [0.0, -r]], dtype=complex)


def rescaled_stratum_gauge(gamma: complex, omega: complex, z: complex) -> np.ndarray:
    """diag(1, 1/omega) composed with :func:`stratum_gauge`.

    With gamma^2 = omega^3 + u this sends phi_{omega,gamma} to phi_u as
    omega -> infinity; the unscaled gauge leaves the (2,1) entry at omega - z.
    """
    return np.diag([1.0, 1.0 / omega]).astype(complex) @ stratum_gauge(gamma, omega, z)


def _sqrt_branch(x: complex, branch: int) -> complex:
    r = cmath.sqrt(x)
    return -r if branch % 2 else r


def model_higgs_field(K: int, N: int, z: complex, branch: int = 0) -> np.ndarray:
    """diag(e^{2 pi i k/K}, k = 1..K) z^{N/K}, principal root times e^{2 pi i branch N/K}."""
    if z == 0:
        raise ModuliError("model field is singular at z = 0")
    root = cmath.exp(N / K * (cmath.log(z) + 2j * cmath.pi * branch))
    phases = [cmath.exp(2j * cmath.pi * k / K) for k in range(1, K + 1)]
    return np.diag([p * root for p in phases]).astype(complex)


def trivializing_gauge(u: complex, z: complex, branch: int = 0) -> np.ndarray:
    """-1/2 [[q^{-1/2}, -1], [-1, -q^{1/2}]] with q = z^3 + u.

    Conjugating phi_u by it gives diag(-q^{1/2}, q^{1/2}).
    """
    q = z**3 + u
    if q == 0:
        raise ModuliError(f"z={z} is a zero of z^3 + u")
    s = _sqrt_branch(q, branch)
    return -0.5 * np.array([[1.0 / s, -1.0], [-1.0, -s]], dtype=complex)
