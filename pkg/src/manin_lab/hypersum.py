"""Two-parameter hyperbola sums over k^b1 l^b2 <= P.

Region boundaries are decided with integer arithmetic: for integers k, l
the test k^b1 l^b2 <= P is k^b1 l^b2 <= floor(P), and l^b2 > sqrt(P) is
l^(2 b2) > floor(P).  The summand is either a vectorized callable
f(k, l) or a sparse TableFunction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from ._intmath import Number, as_fraction, iroot

__all__ = [
    "TableFunction",
    "SummationInstance",
    "SchemeResult",
    "FitResult",
    "direct_sum",
    "split_identity",
    "scheme_sum",
    "fit_BlogB",
    "ones",
]

CHUNK = 1 << 20


def ones(k: np.ndarray, l: np.ndarray) -> np.ndarray:
    """The summand f = 1."""
    return np.ones(len(k), dtype=np.int64)


@dataclass(frozen=True)
class TableFunction:
    """f(k, l) from a finite table; zero off the table."""

    table: Tuple[Tuple[int, int, Union[int, Fraction, float]], ...]

    @classmethod
    def from_dict(cls, data: Dict[Tuple[int, int], Union[int, Fraction, float]]) -> "TableFunction":
        rows = []
        for (k, l), v in sorted(data.items()):
            if k < 1 or l < 1:
                continue
            if v < 0:
                raise ValueError(f"table value at ({k}, {l}) is negative")
            if v:
                rows.append((int(k), int(l), v))
        return cls(tuple(rows))

    @classmethod
    def from_csv(cls, path: str) -> "TableFunction":
        data: Dict[Tuple[int, int], Union[int, Fraction]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                try:
                    key = (int(row["k"]), int(row["l"]))
                    val = Fraction(row["value"])
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"bad table row {row}: {exc}") from None
                data[key] = int(val) if val.denominator == 1 else val
        return cls.from_dict(data)

    def __call__(self, k: np.ndarray, l: np.ndarray) -> np.ndarray:
        lookup = {(a, b): v for a, b, v in self.table}
        return np.array([lookup.get((int(a), int(b)), 0) for a, b in zip(k, l)], dtype=object)


@dataclass(frozen=True)
class SummationInstance:
    """Summand f with exponents (beta1, beta2), scale d and the T1/T2 split exponent mu."""

    f: Callable
    beta1: int
    beta2: int
    d: int = 1
    mu: Optional[float] = None

    def __post_init__(self):
        if self.beta1 < 1 or self.beta2 < 1:
            raise ValueError(f"exponents must be positive integers, got ({self.beta1}, {self.beta2})")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.mu is None:
            object.__setattr__(self, "mu", 1.0 / (4 * max(self.beta1, self.beta2)))
        if not 0 < self.mu < 1.0 / (2 * self.beta1):
            raise ValueError(f"mu must lie in (0, 1/(2 beta1)), got {self.mu}")


# ---------------------------------------------------------------------------
# core range summation


def _pfloor(P: Number) -> int:
    p = as_fraction(P)
    return p.numerator // p.denominator if p >= 0 else -1


def _lmax(Pf: int, k: int, b1: int, b2: int) -> int:
    return iroot(Pf // k**b1, b2)


def _exact_total(vals: np.ndarray):
    if vals.dtype == object:
        return sum(vals.tolist(), 0)
    if np.issubdtype(vals.dtype, np.integer):
        return int(vals.sum())
    return float(math.fsum(vals.tolist()))


def _sum_dense(f: Callable, blocks: Iterable[Tuple[int, int, int]]):
    """Sum f over rows (k, l_lo..l_hi) given as (k, l_lo, l_hi), vectorized in chunks."""
    total = 0
    ks: List[int] = []
    los: List[int] = []
    his: List[int] = []
    pending = 0

    def flush():
        nonlocal total, ks, los, his, pending
        if not ks:
            return
        k = np.array(ks, dtype=np.int64)
        lo = np.array(los, dtype=np.int64)
        cnt = np.array(his, dtype=np.int64) - lo + 1
        kk = np.repeat(k, cnt)
        first = np.repeat(np.cumsum(cnt) - cnt, cnt)
        ll = np.repeat(lo, cnt) + (np.arange(int(cnt.sum()), dtype=np.int64) - first)
        total += _exact_total(np.asarray(f(kk, ll)))
        ks, los, his, pending = [], [], [], 0

    for k, lo, hi in blocks:
        if hi < lo:
            continue
        ks.append(k)
        los.append(lo)
        his.append(hi)
        pending += hi - lo + 1
        if pending >= CHUNK:
            flush()
    flush()
    return total


def _range_sum(inst: SummationInstance, Pf: int, k_lo: int, k_hi: int, l_min: int):
    """Sum of f over k_lo <= k <= k_hi, l_min <= l, k^b1 l^b2 <= Pf."""
    b1, b2 = inst.beta1, inst.beta2
    k_lo = max(k_lo, 1)
    l_min = max(l_min, 1)
    if Pf < 1 or k_hi < k_lo:
        return 0
    k_hi = min(k_hi, iroot(Pf, b1))
    if isinstance(inst.f, TableFunction):
        total = 0
        for k, l, v in inst.f.table:
            if k_lo <= k <= k_hi and l >= l_min and k**b1 * l**b2 <= Pf:
                total += v
        return total
    return _sum_dense(inst.f, ((k, l_min, _lmax(Pf, k, b1, b2)) for k in range(k_lo, k_hi + 1)))


def direct_sum(inst: SummationInstance, P: Number):
    """Sum of f(k, l) over k, l >= 1 with k^b1 l^b2 <= P."""
    Pf = _pfloor(P)
    return _range_sum(inst, Pf, 1, max(Pf, 0), 1)


def split_identity(inst: SummationInstance, P: Number):
    """(A, B, box): the parts with l^b2 > sqrt(P), with k^b1 > sqrt(P), and with neither."""
    Pf = _pfloor(P)
    if Pf < 1:
        return 0, 0, 0
    kA = iroot(Pf, 2 * inst.beta1)  # k^b1 <= sqrt(P)
    lA = iroot(Pf, 2 * inst.beta2)  # l^b2 <= sqrt(P)
    part_a = _range_sum(inst, Pf, 1, kA, lA + 1)
    part_b = _range_sum(inst, Pf, kA + 1, Pf, 1)
    box = _range_sum(inst, Pf, 1, kA, 1) - part_a
    return part_a, part_b, box


# ---------------------------------------------------------------------------
# T1 / T2 scheme


@dataclass(frozen=True)
class SchemeResult:
    T1: Union[int, float]
    T2: Union[int, float]
    total: Union[int, float]
    C_hat: float
    sum_A: Union[int, float]
    sum_B: Union[int, float]
    box: Union[int, float]
    theta: float
    boundaries: Tuple[int, ...] = field(default=())

    @property
    def exact(self) -> bool:
        return self.T1 + self.T2 == self.sum_A


def _walk_boundaries(P: float, Pf: int, inst: SummationInstance, J: int) -> Tuple[int, float, List[int]]:
    """k1 = floor(P^mu / d) and the integer K_j walk ending at floor(P^(1/(2 b1)))."""
    b1, mu, d = inst.beta1, inst.mu, inst.d
    kA = iroot(Pf, 2 * b1)
    growth = d * P ** (1.0 / (2 * b1) - mu)
    if not math.isfinite(growth) or growth <= 1.0:
        raise ValueError(
            f"degenerate step: d P^(1/(2 beta1) - mu) = {growth} must exceed 1 (P too small for these parameters)"
        )
    theta = math.exp(math.log(growth) / J) - 1.0
    if not theta > 0 or not math.isfinite(theta):
        raise ValueError(f"degenerate theta={theta} for J={J}")
    k0 = P**mu / d
    k1 = min(int(math.floor(k0)), kA)
    bounds = [k1]
    for j in range(1, J):
        bj = int(math.floor(k0 * (1.0 + theta) ** j))
        bounds.append(min(max(bj, bounds[-1]), kA))
    bounds.append(kA)
    return k1, theta, bounds


def scheme_sum(inst: SummationInstance, P: Number, J_steps: int = 16, grid_points: int = 8):
    """T1 and T2 (the K_j walk) of the part with l^b2 > sqrt(P), checked against that part directly.

    C_hat fits A + B against C P log P through the origin over a geometric
    grid of grid_points values from P/100 to P.
    """
    if J_steps < 8:
        raise ValueError(f"J_steps must be >= 8, got {J_steps}")
    Pq = as_fraction(P)
    Pf = _pfloor(Pq)
    if Pf < 2:
        raise ValueError("P must be at least 2")
    b2 = inst.beta2
    lA = iroot(Pf, 2 * b2)
    k1, theta, bounds = _walk_boundaries(float(Pq), Pf, inst, J_steps)
    t1 = _range_sum(inst, Pf, 1, k1, lA + 1)
    t2 = 0
    for lo, hi in zip(bounds, bounds[1:]):
        if hi > lo:
            t2 += _range_sum(inst, Pf, lo + 1, hi, lA + 1)
    part_a, part_b, box = split_identity(inst, Pq)
    if t1 + t2 != part_a and not isinstance(part_a, float):
        raise AssertionError(f"T1 + T2 = {t1 + t2} differs from the A-part {part_a}")
    c_hat = _fit_through_origin(inst, float(Pq), grid_points)
    return SchemeResult(t1, t2, part_a + part_b + box, c_hat, part_a, part_b, box, theta, tuple(bounds))


def _fit_through_origin(inst: SummationInstance, P: float, points: int) -> float:
    grid = np.unique(np.floor(np.geomspace(max(P / 100.0, 2.0), P, points)).astype(np.int64))
    xs, ys = [], []
    for q in grid:
        a, b, _ = split_identity(inst, int(q))
        xs.append(q * math.log(q))
        ys.append(float(a + b))
    x = np.array(xs)
    y = np.array(ys)
    return float(x @ y / (x @ x))


# ---------------------------------------------------------------------------
# B log B fits


@dataclass(frozen=True)
class FitResult:
    C_hat: float
    rms_residual: float
    b: float
    C_hat_single: float
    rms_single: float


def fit_BlogB(series) -> FitResult:
    """Least squares of counts against a B log B + b B (and against a B log B alone).

    `series` is a CountSeries or a sequence of (B, count) pairs.  Needs at
    least 4 points with max(B) / min(B) >= 100.
    """
    pts = series.points if hasattr(series, "points") else list(series)
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points, got {len(pts)}")
    B = np.array([float(b) for b, _ in pts])
    y = np.array([float(c) for _, c in pts])
    if np.any(B <= 1):
        raise ValueError("all B must exceed 1 for the B log B model")
    if B.max() / B.min() < 100:
        raise ValueError("B must span at least two decades")
    X = np.stack([B * np.log(B), B], axis=1)
    scale = np.abs(X).max(axis=0)
    Xn = X / scale
    if np.linalg.cond(Xn) > 1e12:
        raise ValueError("ill-conditioned grid for the B log B + B model")
    coef, *_ = np.linalg.lstsq(Xn, y, rcond=None)
    a, b = coef / scale
    rms = float(np.sqrt(np.mean((X @ np.array([a, b]) - y) ** 2)))
    x1 = X[:, 0]
    a1 = float(x1 @ y / (x1 @ x1))
    rms1 = float(np.sqrt(np.mean((a1 * x1 - y) ** 2)))
    return FitResult(float(a), rms, float(b), a1, rms1)
