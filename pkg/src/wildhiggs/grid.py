"""Truncated-plane tensor grid with excision discs around the zeros of q."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
OUTER = 1
EXCISION_BOUNDARY = 2
EXCISED = 3


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Excision:
    center: complex
    radius: float
    roots: tuple[complex, ...] = ()


def cluster_roots(roots, eps: float, h: float) -> list[Excision]:
    """Merge roots closer than 2*eps + 2*h into one disc of covering radius."""
    clusters: list[list[complex]] = [[complex(r)] for r in roots]
    merged = True
    while merged:
        merged = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if min(abs(a - b) for a in clusters[i] for b in clusters[j]) < 2 * eps + 2 * h:
                    clusters[i] += clusters.pop(j)
                    merged = True
                    break
            if merged:
                break
    out = []
    for c in clusters:
        center = complex(np.mean(c))
        # snap tiny imaginary/real noise so symmetric configurations stay symmetric
        center = complex(round(center.real, 14), round(center.imag, 14))
        radius = max(abs(r - center) for r in c) + eps
        out.append(Excision(center, float(radius), tuple(c)))
    return out


@dataclass
class Grid:
    R: float
    n: int
    excisions: tuple[Excision, ...] = ()
    x: np.ndarray = field(init=False, repr=False)
    z: np.ndarray = field(init=False, repr=False)
    kind: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.R <= 0:
            raise GridError(f"R must be positive, got {self.R}")
        if self.n < 5 or self.n % 2 == 0:
            raise GridError(f"n must be odd and >= 5, got {self.n}")
        self.excisions = tuple(self.excisions)
        self.x = np.linspace(-self.R, self.R, self.n)
        X, Y = np.meshgrid(self.x, self.x, indexing="ij")
        self.z = X + 1j * Y
        h = self.h
        for e in self.excisions:
            if e.radius < h:
                raise GridError(f"excision radius {e.radius:g} below grid spacing {h:g}")
            if abs(e.center) + e.radius >= self.R / 2:
                raise GridError(
                    f"excision at {e.center} (radius {e.radius:g}) leaves |z| < R/2 = {self.R / 2:g}"
                )
        for i, a in enumerate(self.excisions):
            for b in self.excisions[i + 1 :]:
                if abs(a.center - b.center) <= a.radius + b.radius:
                    raise GridError(f"excision discs at {a.center} and {b.center} overlap")
        kind = np.full((self.n, self.n), INTERIOR, dtype=np.int8)
        inside = self.excised_mask()
        kind[inside] = EXCISED
        ring = np.zeros_like(inside)
        ring[1:, :] |= inside[:-1, :]
        ring[:-1, :] |= inside[1:, :]
        ring[:, 1:] |= inside[:, :-1]
        ring[:, :-1] |= inside[:, 1:]
        kind[ring & ~inside] = EXCISION_BOUNDARY
        kind[0, :] = kind[-1, :] = kind[:, 0] = kind[:, -1] = OUTER
        self.kind = kind

    @property
    def h(self) -> float:
        return 2 * self.R / (self.n - 1)

    def excised_mask(self) -> np.ndarray:
        m = np.zeros(self.z.shape, dtype=bool)
        for e in self.excisions:
            m |= np.abs(self.z - e.center) < e.radius
        return m

    def distance_to_excisions(self, z) -> np.ndarray:
        """Distance from z to the nearest excision circle (negative inside)."""
        z = np.asarray(z, dtype=complex)
        d = np.full(z.shape, np.inf)
        for e in self.excisions:
            d = np.minimum(d, np.abs(z - e.center) - e.radius)
        return d

    def annulus_mask(self, r_in: float, r_out: float) -> np.ndarray:
        r = np.abs(self.z)
        return (r >= r_in) & (r <= r_out) & (self.kind != EXCISED)

    def refined(self) -> "Grid":
        return Grid(self.R, 2 * self.n - 1, self.excisions)

    def params(self) -> dict:
        return {
            "R": self.R,
            "n": self.n,
            "excisions": [
                {"center": [e.center.real, e.center.imag], "radius": e.radius} for e in self.excisions
            ],
        }


def _keys_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom (a = -1/2) weights for offsets -1, 0, 1, 2 at fraction t."""
    t2, t3 = t * t, t * t * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ],
        axis=-1,
    )


def bicubic(grid: Grid, values: np.ndarray, z) -> np.ndarray:
    """Local bicubic interpolation of node data at points z.

    Returns NaN wherever the 4x4 stencil leaves the grid or touches a NaN
    (excised) node.
    """
    z = np.asarray(z, dtype=complex)
    fx = (z.real + grid.R) / grid.h
    fy = (z.imag + grid.R) / grid.h
    ix = np.floor(fx).astype(int)
    iy = np.floor(fy).astype(int)
    tx = fx - ix
    ty = fy - iy
    wx = _keys_weights(tx)
    wy = _keys_weights(ty)
    ok = (ix >= 1) & (ix <= grid.n - 3) & (iy >= 1) & (iy <= grid.n - 3)
    ixc = np.clip(ix, 1, grid.n - 3)
    iyc = np.clip(iy, 1, grid.n - 3)
    out = np.zeros(z.shape)
    for a in range(4):
        for b in range(4):
            out = out + wx[..., a] * wy[..., b] * values[ixc - 1 + a, iyc - 1 + b]
    return np.where(ok, out, np.nan)
