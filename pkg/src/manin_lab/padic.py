"""Residue counts modulo prime powers, complete exponential sums and local densities.

Everything here is exact integer arithmetic except the floating values of
complete exponential sums whose phases are not in Q(i).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._intmath import is_prime, mobius, primes_upto
from .forms import BidegreeForm, partial_form, scale_x

__all__ = [
    "ResidueCapExceeded",
    "DensityEstimate",
    "ExpSum",
    "count_mod",
    "count_mod_brute",
    "local_density",
    "complete_sum",
    "A_d",
    "partial_sum_identity",
    "singular_series",
    "density_table",
]

RESIDUE_CAP = 10**8
BLOCK = 1 << 18


class ResidueCapExceeded(ValueError):
    """A residue scan would exceed the configured work cap."""


@dataclass(frozen=True)
class DensityEstimate:
    """A truncated density: exact for p-adic factors, value +/- stderr for real ones."""

    value: Union[Fraction, float]
    truncation: Tuple
    stabilized: bool = False
    stderr: Optional[float] = None
    history: Tuple = field(default=())


@dataclass(frozen=True)
class ExpSum:
    """A complete exponential sum; `exact` holds (re, im) when both are rational."""

    real: float
    imag: float
    exact: Optional[Tuple[Fraction, Fraction]] = None

    def __complex__(self) -> complex:
        return complex(self.real, self.imag)


def _check_prime(p: int) -> None:
    if not isinstance(p, (int, np.integer)) or not is_prime(int(p)):
        raise ValueError(f"p must be prime, got {p!r}")


# ---------------------------------------------------------------------------
# vectorized evaluation modulo q


def _eval_mod(terms, cols: Sequence[np.ndarray], size: int, q: int) -> np.ndarray:
    """sum c * prod cols[i]**e_i reduced into [0, q), with all columns already in [0, q)."""
    if q < 2**31:
        out = np.zeros(size, dtype=np.int64)
        powers = {}
        for exps, c in terms:
            term = np.full(size, c % q, dtype=np.int64)
            for i, e in enumerate(exps):
                if not e:
                    continue
                key = (i, e)
                if key not in powers:
                    base = cols[i] % q
                    acc = np.ones(size, dtype=np.int64)
                    for _ in range(e):
                        acc = (acc * base) % q
                    powers[key] = acc
                term = (term * powers[key]) % q
            out = (out + term) % q
        return out
    out = np.zeros(size, dtype=object)
    for exps, c in terms:
        term = np.full(size, c, dtype=object)
        for i, e in enumerate(exps):
            if e:
                term = term * cols[i].astype(object) ** e
        out = out + term
    return out % q


def _residue_blocks(dim: int, q: int) -> Iterator[np.ndarray]:
    """All vectors in [0, q)^dim, in lexicographic blocks."""
    if dim == 0:
        yield np.zeros((1, 0), dtype=np.int64)
        return
    inner = 0
    while inner < dim and q ** (inner + 1) <= BLOCK:
        inner += 1
    inner = max(inner, 1)
    outer = dim - inner
    ax = np.arange(q, dtype=np.int64)
    grids = np.meshgrid(*([ax] * inner), indexing="ij")
    tail = np.stack([g.ravel() for g in grids], axis=1)
    for head in product(range(q), repeat=outer):
        block = np.empty((len(tail), dim), dtype=np.int64)
        block[:, :outer] = head
        block[:, outer:] = tail
        yield block


def _check_cap(work: int, what: str, cap: int = RESIDUE_CAP) -> None:
    if work > cap:
        raise ResidueCapExceeded(f"{what} needs {work} residue evaluations, above the cap {cap}")


# ---------------------------------------------------------------------------
# M_p(N), M*_p(N)


def _nonzero_mod_p(block: np.ndarray, cols: range, p: int) -> np.ndarray:
    mask = np.zeros(len(block), dtype=bool)
    for i in cols:
        mask |= block[:, i] % p != 0
    return mask


def _mstar_tree(form: BidegreeForm, p: int, N: int, cap: int) -> int:
    """M*_p(N) by Hensel lifting from the level-1 residues.

    A zero mod p^t whose gradient is nonzero mod p has exactly p^{(N-t)(n+1)}
    lifts to zeros mod p^N.  Zeros with vanishing gradient mod p keep that
    property under lifting and are expanded explicitly.
    """
    n, r, m = form.fan_params
    nv = n + 2
    _check_cap(p**nv, "the level-1 residue scan", cap)
    grads = [t for t in (partial_form(form, i) for i in range(nv)) if t]
    xs, yz = range(0, r + 1), range(r + 1, nv)
    total = 0
    singular: List[np.ndarray] = []
    for block in _residue_blocks(nv, p):
        keep = _nonzero_mod_p(block, xs, p) & _nonzero_mod_p(block, yz, p)
        block = block[keep]
        cols = [block[:, i] for i in range(nv)]
        zero = _eval_mod(form.monomials, cols, len(block), p) == 0
        block = block[zero]
        cols = [block[:, i] for i in range(nv)]
        smooth = np.zeros(len(block), dtype=bool)
        for g in grads:
            smooth |= _eval_mod(g, cols, len(block), p) != 0
        total += int(np.count_nonzero(smooth)) * p ** ((N - 1) * (n + 1))
        if np.any(~smooth):
            singular.append(block[~smooth])
    level = np.concatenate(singular) if singular else np.zeros((0, nv), dtype=np.int64)
    work = p**nv
    steps = np.stack(np.meshgrid(*([np.arange(p, dtype=np.int64)] * nv), indexing="ij"), -1).reshape(-1, nv)
    for t in range(1, N):
        if not len(level):
            break
        work += len(level) * len(steps)
        _check_cap(work, "the singular Hensel expansion", cap)
        pt = p**t
        mod = pt * p
        nxt = []
        for s in range(0, len(level), max(1, BLOCK // len(steps))):
            par = level[s : s + max(1, BLOCK // len(steps))]
            kids = (par[:, None, :] + pt * steps[None, :, :]).reshape(-1, nv)
            cols = [kids[:, i] for i in range(nv)]
            nxt.append(kids[_eval_mod(form.monomials, cols, len(kids), mod) == 0])
        level = np.concatenate(nxt)
    return total + len(level)


def _all_count(p: int, N: int, r: int, n: int, j: int) -> int:
    """#{x mod p^N, x != 0 mod p} * #{(y, z) mod p^N with min valuation exactly j}."""
    nx = (p ** (r + 1) - 1) * p ** ((r + 1) * (N - 1))
    k = n - r + 1
    if j >= N:
        return nx
    return nx * (p ** (k * (N - j)) - p ** (k * (N - j - 1)))


def count_mod(
    form: BidegreeForm, p: int, N: int, star: bool = False, cap: int = RESIDUE_CAP
) -> int:
    """M_p(N), or M*_p(N) with star=True: zeros mod p^N with x != 0 mod p (and (y, z) != 0 mod p)."""
    _check_prime(p)
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return _count_mod_cached(form, int(p), int(N), bool(star), cap)


@lru_cache(maxsize=512)
def _count_mod_cached(form: BidegreeForm, p: int, N: int, star: bool, cap: int) -> int:
    if star:
        return _mstar_tree(form, p, N, cap)
    n, r, m = form.fan_params
    d2 = form.d2
    if d2 == 0:
        # F does not see (y, z) scalings; count directly
        return _count_mod_cached(form, p, N, True, cap) + _zero_yz_direct(form, p, N, cap)
    k = n - r + 1
    total = 0
    for j in range(0, N + 1):
        if j * d2 < N:
            mult = p ** ((r + 1) * j * d2 + k * (j * d2 - j))
            total += mult * _count_mod_cached(form, p, N - j * d2, True, cap)
        else:
            total += _all_count(p, N, r, n, j)
    return total


def _zero_yz_direct(form: BidegreeForm, p: int, N: int, cap: int) -> int:
    """Zeros mod p^N with x != 0 mod p and (y, z) = 0 mod p, by direct scan (d2 = 0 only)."""
    n, r, m = form.fan_params
    nv = n + 2
    q = p**N
    _check_cap(q**nv, "the direct residue scan", cap)
    total = 0
    for block in _residue_blocks(nv, q):
        keep = _nonzero_mod_p(block, range(r + 1), p) & ~_nonzero_mod_p(block, range(r + 1, nv), p)
        block = block[keep]
        cols = [block[:, i] for i in range(nv)]
        total += int(np.count_nonzero(_eval_mod(form.monomials, cols, len(block), q) == 0))
    return total


def count_mod_brute(form: BidegreeForm, p: int, N: int, star: bool = False, cap: int = RESIDUE_CAP) -> int:
    """Reference count by scanning every residue class mod p^N."""
    _check_prime(p)
    n, r, m = form.fan_params
    nv = n + 2
    q = p**N
    _check_cap(q**nv, "the direct residue scan", cap)
    total = 0
    for block in _residue_blocks(nv, q):
        keep = _nonzero_mod_p(block, range(r + 1), p)
        if star:
            keep &= _nonzero_mod_p(block, range(r + 1, nv), p)
        block = block[keep]
        cols = [block[:, i] for i in range(nv)]
        total += int(np.count_nonzero(_eval_mod(form.monomials, cols, len(block), q) == 0))
    return total


def local_density(
    form: BidegreeForm, p: int, N_max: int, star: bool = False, cap: int = RESIDUE_CAP
) -> DensityEstimate:
    """M_p(N) / p^{N(n+1)} for N = 1..N_max; stabilized when the last two agree."""
    if N_max < 1:
        raise ValueError(f"N_max must be >= 1, got {N_max}")
    n = form.n
    seq = tuple(
        Fraction(count_mod(form, p, N, star, cap), p ** (N * (n + 1))) for N in range(1, N_max + 1)
    )
    stable = len(seq) >= 2 and seq[-1] == seq[-2]
    return DensityEstimate(seq[-1], (p, N_max), stable, None, seq)


# ---------------------------------------------------------------------------
# exponential sums


def _value_histogram(form: BidegreeForm, d: int, q: int, cap: int) -> np.ndarray:
    """Counts of F(d b1, b2, b3) mod q over all b mod q."""
    nv = form.num_vars
    _check_cap(q**nv, f"the complete sum modulo {q}", cap)
    g = scale_x(form, d)
    counts = np.zeros(q, dtype=np.int64)
    for block in _residue_blocks(nv, q):
        vals = _eval_mod(g.monomials, [block[:, i] for i in range(nv)], len(block), q)
        counts += np.bincount(vals.astype(np.int64), minlength=q)
    return counts


@lru_cache(maxsize=256)
def _histogram_cached(form: BidegreeForm, d: int, q: int, cap: int) -> Tuple[int, ...]:
    return tuple(int(c) for c in _value_histogram(form, d, q, cap))


def complete_sum(form: BidegreeForm, d: int, a: int, q: int, cap: int = RESIDUE_CAP) -> ExpSum:
    """S_{a,q,d} = sum over b mod q of e(a F(d b1, b2, b3) / q)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if not 0 <= a < q:
        raise ValueError(f"need 0 <= a < q, got a={a}, q={q}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    counts = _histogram_cached(form, d, q, cap)
    re = im = 0.0
    for t, c in enumerate(counts):
        if c:
            w = cmath.exp(2j * math.pi * ((a * t) % q) / q)
            re += c * w.real
            im += c * w.imag
    exact = None
    if q in (1, 2, 4):
        units = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}
        ex_re = ex_im = 0
        for t, c in enumerate(counts):
            ur, ui = units[((a * t) % q) * (4 // q)]
            ex_re += c * ur
            ex_im += c * ui
        exact = (Fraction(ex_re), Fraction(ex_im))
    elif q == 3:
        by_phase = [0, 0, 0]
        for t, c in enumerate(counts):
            by_phase[(a * t) % 3] += c
        if by_phase[1] == by_phase[2]:
            exact = (Fraction(2 * by_phase[0] - by_phase[1] - by_phase[2], 2), Fraction(0))
    if exact is not None:
        re, im = float(exact[0]), float(exact[1])
    return ExpSum(re, im, exact)


def _ramanujan(q: int, t: int) -> int:
    """c_q(t) = sum over a in (Z/q)^* of e(a t / q)."""
    g = math.gcd(q, t)
    total = 0
    for e in range(1, g + 1):
        if g % e == 0:
            total += mobius(q // e) * e
    return total


def A_d(form: BidegreeForm, d: int, q: int, cap: int = RESIDUE_CAP) -> Fraction:
    """q^{-(n+2)} sum over a in (Z/q)^* of S_{a,q,d}, exact via Ramanujan sums."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    counts = _histogram_cached(form, d, q, cap)
    total = sum(c * _ramanujan(q, t) for t, c in enumerate(counts) if c)
    return Fraction(total, q**form.num_vars)


def partial_sum_identity(
    form: BidegreeForm, p: int, N: int, r: Optional[int] = None, cap: int = RESIDUE_CAP
) -> Tuple[Fraction, Fraction]:
    """(sum_{k<=N} (A_1(p^k) - A_p(p^k)/p^{r+1}),  M_p(N)/p^{N(n+1)})."""
    _check_prime(p)
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    r = form.r if r is None else r
    if r != form.r:
        raise ValueError(f"r={r} does not match the form's fan (r={form.r})")
    lhs = Fraction(0)
    for k in range(N + 1):
        q = p**k
        lhs += A_d(form, 1, q, cap) - A_d(form, p, q, cap) / p ** (r + 1)
    if N == 0:
        rhs = 1 - Fraction(1, p ** (r + 1))
    else:
        rhs = Fraction(count_mod(form, p, N, False, cap), p ** (N * (form.n + 1)))
    return lhs, rhs


def singular_series(
    form: BidegreeForm, p_max: int, N_max: int, cap: int = RESIDUE_CAP
) -> Tuple[DensityEstimate, DensityEstimate]:
    """(prod sigma'_p, prod (1 - p^{-b2}) sigma'_p) over primes p <= p_max at level N_max.

    history holds (p, sigma'_p, stabilized) per prime.  The Euler tail is
    not estimated.
    """
    _, b2 = form.betas()
    prod_s = Fraction(1)
    prod_t = Fraction(1)
    hist = []
    all_stable = True
    for p in primes_upto(p_max):
        est = local_density(form, p, N_max, False, cap)
        prod_s *= est.value
        prod_t *= (1 - Fraction(1, p**b2)) * est.value
        hist.append((p, est.value, est.stabilized))
        all_stable &= est.stabilized
    trunc = (p_max, N_max)
    return (
        DensityEstimate(prod_s, trunc, all_stable, None, tuple(hist)),
        DensityEstimate(prod_t, trunc, all_stable, None, tuple(hist)),
    )


def density_table(form: BidegreeForm, p_max: int, N_max: int, cap: int = RESIDUE_CAP) -> List[dict]:
    """Rows p,N,M,Mstar,density,stabilized for every prime p <= p_max and N <= N_max."""
    rows = []
    n = form.n
    for p in primes_upto(p_max):
        prev = None
        for N in range(1, N_max + 1):
            M = count_mod(form, p, N, False, cap)
            Ms = count_mod(form, p, N, True, cap)
            dens = Fraction(M, p ** (N * (n + 1)))
            rows.append(
                {"p": p, "N": N, "M": M, "Mstar": Ms, "density": dens, "stabilized": prev == dens}
            )
            prev = dens
    return rows
