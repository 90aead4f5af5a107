"""Kleinschmidt fans with all twisting parameters equal to one.

The fan lives in Z^n and has n+2 rays v_0..v_{n+1}:

    v_k = e_k              (1 <= k <= n)
    v_0 = -(e_1 + ... + e_m)
    v_{n+1} = -(e_{r+1} + ... + e_n)

Ray i is the torsor variable x_i (0 <= i <= r), y_i (r < i <= m) or
z_i (m < i <= n+1).  Maximal cones drop one ray from {0..r} and one from
{r+1..n+1}.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

__all__ = [
    "FanError",
    "DivisorClass",
    "KleinschmidtFan",
    "FanValidation",
    "build_fan",
    "picard_class",
    "anticanonical_class",
    "section_polytope",
    "monomial_of",
    "bidegree_monomials",
    "validate_fan",
    "int_det",
]


class FanError(ValueError):
    """Invalid fan parameters or lattice data."""


@dataclass(frozen=True)
class DivisorClass:
    """Class a[D_0] + b[D_{n+1}] in Pic(X) = Z^2."""

    a: int
    b: int

    def __add__(self, other: "DivisorClass") -> "DivisorClass":
        return DivisorClass(self.a + other.a, self.b + other.b)


@dataclass(frozen=True)
class KleinschmidtFan:
    n: int
    r: int
    m: int
    rays: Tuple[Tuple[int, ...], ...]
    max_cones: Tuple[Tuple[int, ...], ...]

    @property
    def num_vars(self) -> int:
        return self.n + 2

    @property
    def nx(self) -> int:
        return self.r + 1

    @property
    def ny(self) -> int:
        return self.m - self.r

    @property
    def nz(self) -> int:
        return self.n - self.m + 1

    def betas(self, d1: int, d2: int) -> Tuple[int, int]:
        """Height exponents (m+1-d1, n-r+1-d2) of the anticanonical class of Y."""
        return self.m + 1 - d1, self.n - self.r + 1 - d2

    def var_names(self) -> List[str]:
        names = [f"x{i}" for i in range(self.r + 1)]
        names += [f"y{j}" for j in range(self.r + 1, self.m + 1)]
        names += [f"z{k}" for k in range(self.m + 1, self.n + 2)]
        return names

    @property
    def params(self) -> Tuple[int, int, int]:
        return (self.n, self.r, self.m)


def build_fan(n: int, r: int, m: int) -> KleinschmidtFan:
    for name, v in (("n", n), ("r", r), ("m", m)):
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
            raise FanError(f"{name} must be an integer, got {v!r}")
    n, r, m = int(n), int(r), int(m)
    if n < 2:
        raise FanError(f"need n >= 2, got n={n}")
    if not 1 <= r:
        raise FanError(f"need r >= 1, got r={r}")
    if r > m:
        raise FanError(f"need r <= m, got r={r} > m={m}")
    if m > n:
        raise FanError(f"need m <= n, got m={m} > n={n}")
    if r == n:
        # v_{n+1} would be the zero vector
        raise FanError(f"need r < n so that v_(n+1) is nonzero, got r=n={n}")

    rays: List[Tuple[int, ...]] = []
    v0 = [0] * n
    for i in range(m):
        v0[i] = -1
    rays.append(tuple(v0))
    for k in range(n):
        e = [0] * n
        e[k] = 1
        rays.append(tuple(e))
    vlast = [0] * n
    for i in range(r, n):
        vlast[i] = -1
    rays.append(tuple(vlast))

    cones = []
    for i in range(r + 1):
        for j in range(r + 1, n + 2):
            cones.append(tuple(k for k in range(n + 2) if k not in (i, j)))
    return KleinschmidtFan(n, r, m, tuple(rays), tuple(cones))


def picard_class(fan: KleinschmidtFan, i: int) -> DivisorClass:
    if not 0 <= i <= fan.n + 1:
        raise IndexError(f"ray index {i} outside 0..{fan.n + 1}")
    if i <= fan.r:
        return DivisorClass(1, 0)
    if i <= fan.m:
        return DivisorClass(1, 1)
    return DivisorClass(0, 1)


def anticanonical_class(fan: KleinschmidtFan) -> DivisorClass:
    return DivisorClass(fan.m + 1, fan.n - fan.r + 1)


def _pair(u: Sequence[int], v: Sequence[int]) -> int:
    return sum(a * b for a, b in zip(u, v))


def section_polytope(fan: KleinschmidtFan, d1: int, d2: int) -> List[Tuple[int, ...]]:
    """Lattice points of the polytope of global sections of d1[D_0] + d2[D_{n+1}].

    Scans the box 0 <= u_k <= d1 + d2 and keeps the points meeting every
    facet inequality.  Output is sorted lexicographically.
    """
    if d1 < 0 or d2 < 0:
        raise FanError(f"bidegree must be nonnegative, got ({d1}, {d2})")
    n = fan.n
    v0, vlast = fan.rays[0], fan.rays[n + 1]
    bound = d1 + d2
    out = []
    for u in itertools.product(range(bound + 1), repeat=n):
        if _pair(u, v0) >= -d1 and _pair(u, vlast) >= -d2:
            out.append(tuple(u))
    return out


def monomial_of(fan: KleinschmidtFan, d1: int, d2: int, u: Sequence[int]) -> Tuple[int, ...]:
    """Exponent vector over (x_0..x_r, y_{r+1}..y_m, z_{m+1}..z_{n+1}) of the section u."""
    n = fan.n
    if len(u) != n:
        raise FanError(f"lattice point has length {len(u)}, expected {n}")
    exps = []
    for k in range(n + 2):
        e = _pair(u, fan.rays[k])
        if k == 0:
            e += d1
        elif k == n + 1:
            e += d2
        exps.append(e)
    if min(exps) < 0:
        raise FanError(f"u={tuple(u)} lies outside the section polytope of ({d1}, {d2})")
    return tuple(exps)


def bidegree_monomials(fan: KleinschmidtFan, d1: int, d2: int) -> List[Tuple[int, ...]]:
    """All exponent vectors of the monomial basis, via the section polytope."""
    return sorted(monomial_of(fan, d1, d2, u) for u in section_polytope(fan, d1, d2))


def int_det(rows: Sequence[Sequence[int]]) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    a = [list(map(int, row)) for row in rows]
    size = len(a)
    if size == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(size - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, size) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, size):
            for j in range(k + 1, size):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


@dataclass
class FanValidation:
    determinants: List[Tuple[Tuple[int, ...], int]]
    coverage_samples: int
    coverage_misses: List[Tuple[int, ...]] = field(default_factory=list)
    containment_ok: bool = True

    @property
    def unimodular(self) -> bool:
        return all(abs(d) == 1 for _, d in self.determinants)

    @property
    def ok(self) -> bool:
        return self.unimodular and not self.coverage_misses and self.containment_ok


def validate_fan(fan: KleinschmidtFan, samples: int = 1000, seed: int = 20240611) -> FanValidation:
    """Check smoothness, completeness (by sampling) and the effective-cone containment.

    The containment test asks that -v_{n+1} and -v_0 have nonnegative
    coordinates in the basis e_1..e_n, i.e. both lie in the cone spanned by
    -v_1..-v_n.
    """
    rays = np.array(fan.rays, dtype=np.int64)
    dets = []
    inverses = []
    for cone in fan.max_cones:
        mat = rays[list(cone)]
        dets.append((cone, int_det(mat.tolist())))
        inverses.append(np.linalg.inv(mat.T.astype(float)))

    rng = np.random.default_rng(seed)
    pts = rng.integers(-5, 6, size=(samples, fan.n))
    pts[0] = 0
    covered = np.zeros(samples, dtype=bool)
    for inv in inverses:
        coeffs = inv @ pts.T.astype(float)
        covered |= np.all(coeffs >= -1e-9, axis=0)
    misses = [tuple(int(c) for c in pts[i]) for i in np.nonzero(~covered)[0]]

    containment = all(c <= 0 for c in fan.rays[fan.n + 1]) and all(c <= 0 for c in fan.rays[0])
    return FanValidation(dets, samples, misses, containment)
