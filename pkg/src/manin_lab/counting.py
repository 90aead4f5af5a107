"""Torsor heights and exact bounded-height point counts.

Counting runs an outer loop over sup-norm shells |x| = k and, on each fiber,
solves F(dx, y, z) = 0 exactly for one or two of the free coordinates
instead of scanning them.  When there are no y-variables the region
|x|^b1 |z|^b2 <= B is also cut along the hyperbola: shells of small |x|
are scanned over z, shells of small |z| over x.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ._intmath import (
    Number,
    as_fraction,
    floor_root_of_fraction,
    iroot,
    mobius,
    vgcd_rows,
    visqrt,
    vxgcd,
)
from .forms import (
    BidegreeForm,
    TorsorPoint,
    eval_terms,
    partial_form,
    pick_dtype,
    scale_x,
    value_bound,
)
from .toric import KleinschmidtFan, bidegree_monomials

__all__ = [
    "TorsorPoint",
    "Caps",
    "CapExhausted",
    "CountResult",
    "CountSeries",
    "OPENSETS",
    "height",
    "height_leq",
    "height_monomial",
    "admissible",
    "count_N_U",
    "count_N_U_series",
    "count_N_dU",
    "count_moebius",
    "count_moebius_series",
    "count_box",
    "histogram_h",
    "histogram_hyperbola",
    "sandwich",
]

OPENSETS = ("all", "grad-xy", "specialize-nonzero")
CHUNK_ROWS = 1 << 19


class CapExhausted(RuntimeError):
    """The derived enumeration range exceeds the user cap (or is unbounded)."""


@dataclass(frozen=True)
class Caps:
    """Enumeration limits.

    x_cap bounds |x| of the original torsor coordinates.  on_cap is "raise"
    (default) or "flag"; with "flag" the count is truncated to |x| <= x_cap
    and reported with cap_hit = True.
    """

    x_cap: Optional[int] = None
    on_cap: str = "raise"

    def __post_init__(self):
        if self.on_cap not in ("raise", "flag"):
            raise ValueError(f"on_cap must be 'raise' or 'flag', got {self.on_cap!r}")
        if self.x_cap is not None and self.x_cap < 0:
            raise ValueError("x_cap must be nonnegative")


@dataclass(frozen=True)
class CountResult:
    B: Fraction
    count: int
    raw_count: int
    openset_id: str
    cap_hit: bool


@dataclass
class CountSeries:
    points: List[Tuple[Fraction, int]]
    form_hash: str = ""
    openset_id: str = "all"
    caps: Caps = field(default_factory=Caps)
    cap_hit: bool = False

    def __post_init__(self):
        bs = [b for b, _ in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
            raise ValueError("B values must be strictly increasing")
        cs = [c for _, c in self.points]
        if any(c2 < c1 for c1, c2 in zip(cs, cs[1:])):
            raise ValueError("counts must be nondecreasing in B")

    @property
    def B(self) -> np.ndarray:
        return np.array([float(b) for b, _ in self.points])

    @property
    def counts(self) -> np.ndarray:
        return np.array([c for _, c in self.points], dtype=float)


# ---------------------------------------------------------------------------
# scalar height and admissibility


def _sup(v: Sequence[int]) -> int:
    return max((abs(int(c)) for c in v), default=0)


def height(p: TorsorPoint, beta1: int, beta2: int) -> Fraction:
    k = _sup(p.x)
    if k == 0:
        raise ValueError("height needs x != 0")
    first = Fraction(k**beta1 * _sup(p.z) ** beta2)
    second = Fraction(k) ** (beta1 - beta2) * _sup(p.y) ** beta2
    return max(first, second)


def height_leq(p: TorsorPoint, beta1: int, beta2: int, B: Number) -> bool:
    k = _sup(p.x)
    if k == 0:
        raise ValueError("height needs x != 0")
    b = as_fraction(B)
    bn, bd = b.numerator, b.denominator
    if k**beta1 * _sup(p.z) ** beta2 * bd > bn:
        return False
    return k**beta1 * _sup(p.y) ** beta2 * bd <= bn * k**beta2


@lru_cache(maxsize=64)
def _basis(fan: KleinschmidtFan, b1: int, b2: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(bidegree_monomials(fan, b1, b2))


def height_monomial(p: TorsorPoint, fan: KleinschmidtFan, d1: int, d2: int) -> Fraction:
    """Max of |monomial(p)| over the basis of the class (m+1-d1)[D_0] + (n-r+1-d2)[D_{n+1}].

    Agrees with height() whenever beta1 >= beta2 or there are no y-variables.
    """
    if _sup(p.x) == 0:
        raise ValueError("height needs x != 0")
    if _sup(p.y) == 0 and _sup(p.z) == 0:
        raise ValueError("height_monomial needs (y, z) != 0")
    b1, b2 = fan.betas(d1, d2)
    coords = [abs(c) for c in p.flat()]
    best = 0
    for exps in _basis(fan, b1, b2):
        val = 1
        for c, e in zip(coords, exps):
            if e:
                val *= c**e
        best = max(best, val)
    return Fraction(best)


def admissible(p: TorsorPoint) -> bool:
    if _sup(p.x) == 0 or (_sup(p.y) == 0 and _sup(p.z) == 0):
        return False
    return math.gcd(*p.x) == 1 and math.gcd(*(p.y + p.z)) == 1


# ---------------------------------------------------------------------------
# open-set predicates (vectorized over solution rows)


def _grouped(form: BidegreeForm, keep: range) -> List[List[Tuple[Tuple[int, ...], int]]]:
    """Group monomials by their exponents outside `keep`; each group is a polynomial in `keep`."""
    groups: Dict[Tuple[int, ...], List] = {}
    for exps, c in form.monomials:
        key = tuple(e for i, e in enumerate(exps) if i not in keep)
        groups.setdefault(key, []).append((exps, c))
    return list(groups.values())


def openset_mask(form: BidegreeForm, pts: np.ndarray, openset_id: str) -> np.ndarray:
    """Membership of each row (x, y, z) of pts in the chosen open set, for the form given."""
    size = len(pts)
    if openset_id == "all" or size == 0:
        return np.ones(size, dtype=bool)
    radii = [int(v) for v in np.abs(pts).max(axis=0)]
    dtype = pick_dtype(value_bound(form, [max(r, 1) for r in radii]) * max(form.d1, form.d2, 1))
    cols = {i: pts[:, i] for i in range(form.num_vars)}
    n, r, m = form.fan_params
    if openset_id == "grad-xy":
        mask = np.zeros(size, dtype=bool)
        for i in range(m + 1):
            terms = partial_form(form, i)
            if terms:
                mask |= eval_terms(terms, cols, size, dtype) != 0
        return mask
    if openset_id == "specialize-nonzero":
        xs = range(0, r + 1)
        zs = range(m + 1, n + 2)
        ok_x = np.zeros(size, dtype=bool)
        for grp in _grouped(form, xs):
            ok_x |= eval_terms(grp, {i: cols[i] for i in xs}, size, dtype) != 0
        ok_z = np.zeros(size, dtype=bool)
        for grp in _grouped(form, zs):
            ok_z |= eval_terms(grp, {i: cols[i] for i in zs}, size, dtype) != 0
        return ok_x & ok_z
    raise ValueError(f"unknown open set id {openset_id!r}; choose from {OPENSETS}")


# ---------------------------------------------------------------------------
# fiber solver


def _shell(k: int, dim: int) -> np.ndarray:
    """All integer vectors of sup-norm exactly k in dimension dim."""
    if k == 0:
        return np.zeros((1, dim), dtype=np.int64)
    blocks = []
    for i in range(dim):
        ranges = [np.arange(-(k - 1), k) for _ in range(i)] + [np.array([-k, k])]
        ranges += [np.arange(-k, k + 1) for _ in range(dim - i - 1)]
        grids = np.meshgrid(*ranges, indexing="ij")
        blocks.append(np.stack([g.ravel() for g in grids], axis=1))
    return np.concatenate(blocks).astype(np.int64)


def _grid(radii: Sequence[int]) -> np.ndarray:
    if not radii:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(-r, r + 1) for r in radii], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def _reduce_terms(terms, solved: Sequence[int]):
    """Split terms by their exponents in the solved variables."""
    out: Dict[Tuple[int, ...], List] = {}
    for exps, c in terms:
        key = tuple(exps[v] for v in solved)
        rest = tuple(0 if i in solved else e for i, e in enumerate(exps))
        out.setdefault(key, []).append((rest, c))
    return out


def _expand(rows: np.ndarray, counts: np.ndarray, starts: np.ndarray):
    """Repeat each row by its count and attach offsets start, start+1, ..."""
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    idx = np.repeat(rows, counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    offs = np.arange(total, dtype=np.int64) - first
    return idx, np.repeat(starts, counts) + offs


def _solve_univariate(coeffs: List[np.ndarray], radius: int):
    """Integer roots in [-radius, radius] of sum coeffs[j] w^j, per row."""
    size = len(coeffs[0])
    deg = len(coeffs) - 1
    rows = np.arange(size)
    nonzero = np.zeros(size, dtype=bool)
    for c in coeffs:
        nonzero |= c != 0
    out_rows, out_w = [], []

    zero_rows = rows[~nonzero]
    if len(zero_rows):
        idx, w = _expand(zero_rows, np.full(len(zero_rows), 2 * radius + 1), np.full(len(zero_rows), -radius))
        out_rows.append(idx)
        out_w.append(w)

    if deg >= 3:
        cand = np.arange(-radius, radius + 1, dtype=np.int64)
        live = rows[nonzero]
        step = max(1, CHUNK_ROWS // max(len(cand), 1))
        for s in range(0, len(live), step):
            sel = live[s : s + step]
            val = np.zeros((len(sel), len(cand)), dtype=coeffs[0].dtype)
            for c in reversed(coeffs):
                val = val * cand[None, :] + c[sel][:, None]
            ri, ci = np.nonzero(val == 0)
            out_rows.append(sel[ri])
            out_w.append(cand[ci])
        return _cat(out_rows, out_w)

    c0 = coeffs[0]
    c1 = coeffs[1] if deg >= 1 else np.zeros_like(c0)
    c2 = coeffs[2] if deg >= 2 else np.zeros_like(c0)

    lin = (c2 == 0) & (c1 != 0)
    if np.any(lin):
        sel = rows[lin]
        a, b = c1[sel], c0[sel]
        ok = (b % a) == 0
        sel, a, b = sel[ok], a[ok], b[ok]
        w = -(b // a)
        ok = abs(w) <= radius
        out_rows.append(sel[ok])
        out_w.append(w[ok])

    quad = c2 != 0
    if np.any(quad):
        sel = rows[quad]
        a, b, c = c2[sel], c1[sel], c0[sel]
        if a.dtype != object:
            big = max(int(abs(a).max()), int(abs(b).max()), int(abs(c).max()))
            if 5 * big * big >= 2**62:
                a, b, c = a.astype(object), b.astype(object), c.astype(object)
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sel, a, b, disc = sel[ok], a[ok], b[ok], disc[ok]
        s = visqrt(disc)
        ok = s * s == disc
        sel, a, b, s = sel[ok], a[ok], b[ok], s[ok]
        den = 2 * a
        for sign, keep in ((1, np.ones(len(s), dtype=bool)), (-1, s != 0)):
            num = -b + sign * s
            good = keep & ((num % den) == 0)
            w = num[good] // den[good]
            inr = abs(w) <= radius
            out_rows.append(sel[good][inr])
            out_w.append(np.asarray(w[inr]).astype(np.int64))
    return _cat(out_rows, out_w)


def _cat(rows_list, vals_list):
    if not rows_list:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return (
        np.concatenate(rows_list).astype(np.int64),
        np.concatenate([np.asarray(v).astype(np.int64) for v in vals_list]),
    )


def _ceil_div(p, q):
    return -((-p) // q)


def _solve_pair(c0, a, b, ru: int, rw: int):
    """Integer solutions of a*u + b*w + c0 = 0 with |u| <= ru, |w| <= rw, per row."""
    size = len(c0)
    rows = np.arange(size)
    out_r, out_u, out_w = [], [], []

    both0 = (a == 0) & (b == 0)
    sel = rows[both0 & (c0 == 0)]
    if len(sel):
        nu, nw = 2 * ru + 1, 2 * rw + 1
        idx, off = _expand(sel, np.full(len(sel), nu * nw), np.zeros(len(sel), dtype=np.int64))
        out_r.append(idx)
        out_u.append(off // nw - ru)
        out_w.append(off % nw - rw)

    for lone, other, r_fixed, r_free, flip in ((a, b, ru, rw, False), (b, a, rw, ru, True)):
        mask = (lone != 0) & (other == 0)
        sel = rows[mask]
        if not len(sel):
            continue
        coef, rhs = lone[sel], -c0[sel]
        ok = (rhs % coef) == 0
        sel, coef, rhs = sel[ok], coef[ok], rhs[ok]
        fixed = rhs // coef
        ok = abs(fixed) <= r_fixed
        sel, fixed = sel[ok], np.asarray(fixed[ok]).astype(np.int64)
        n_free = 2 * r_free + 1
        idx, free = _expand(np.arange(len(sel)), np.full(len(sel), n_free), np.full(len(sel), -r_free))
        out_r.append(sel[idx])
        if flip:
            out_u.append(free)
            out_w.append(fixed[idx])
        else:
            out_u.append(fixed[idx])
            out_w.append(free)

    mask = (a != 0) & (b != 0)
    sel = rows[mask]
    if len(sel):
        aa, bb, cc = a[sel], b[sel], c0[sel]
        if aa.dtype != object:
            big = max(int(abs(aa).max()), int(abs(bb).max()), int(abs(cc).max()), ru, rw)
            if big * big * 4 >= 2**62:
                aa, bb, cc = aa.astype(object), bb.astype(object), cc.astype(object)
        g, s, t = vxgcd(aa, bb)
        ok = (cc % g) == 0
        sel, aa, bb, cc, g, s, t = sel[ok], aa[ok], bb[ok], cc[ok], g[ok], s[ok], t[ok]
        bg, ag = bb // g, aa // g
        h = -(cc // g)
        # particular solution reduced mod |bg| to keep magnitudes small
        u0 = ((h % abs(bg)) * (s % abs(bg))) % abs(bg)
        w0 = (-cc - aa * u0) // bb
        # u = u0 + k*bg, w = w0 - k*ag
        lo_u = np.where(bg > 0, _ceil_div(-ru - u0, bg), _ceil_div(ru - u0, bg))
        hi_u = np.where(bg > 0, (ru - u0) // bg, (-ru - u0) // bg)
        lo_w = np.where(ag > 0, _ceil_div(w0 - rw, ag), _ceil_div(w0 + rw, ag))
        hi_w = np.where(ag > 0, (w0 + rw) // ag, (w0 - rw) // ag)
        lo = np.maximum(lo_u, lo_w)
        hi = np.minimum(hi_u, hi_w)
        cnt = np.maximum(hi - lo + 1, 0)
        live = np.nonzero(cnt > 0)[0]
        if len(live):
            idx, kk = _expand(
                live,
                np.asarray(cnt[live]).astype(np.int64),
                np.asarray(lo[live]).astype(np.int64),
            )
            out_r.append(sel[idx])
            out_u.append(np.asarray(u0[idx] + kk * bg[idx]).astype(np.int64))
            out_w.append(np.asarray(w0[idx] - kk * ag[idx]).astype(np.int64))

    if not out_r:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    return (
        np.concatenate(out_r).astype(np.int64),
        np.concatenate(out_u).astype(np.int64),
        np.concatenate(out_w).astype(np.int64),
    )


def _plan(terms, free: List[Tuple[int, int]]):
    """Pick the variables solved exactly on each fiber."""
    exps = [e for e, _ in terms]
    pairs = []
    for i in range(len(free)):
        for j in range(i + 1, len(free)):
            u, w = free[i][0], free[j][0]
            if all(e[u] + e[w] <= 1 for e in exps):
                pairs.append(((free[i][1] + 1) * (free[j][1] + 1), -j, -i, (free[i], free[j])))
    if pairs:
        return ("pair", max(pairs)[3])
    degs = [(max(e[v] for e in exps), v, rad) for v, rad in free]
    low = [d for d in degs if d[0] <= 2]
    if low:
        best = max(low, key=lambda d: (d[2], -d[0], d[1]))
    else:
        best = min(degs, key=lambda d: (d[0], -d[2]))
    return ("single", ((best[1], best[2]),))


def fiber_solutions(
    terms, fixed: Dict[int, np.ndarray], n_rows: int, free: List[Tuple[int, int]], num_vars: int
) -> Iterator[Tuple[np.ndarray, Dict[int, np.ndarray]]]:
    """Yield (outer row index, {free var: value}) for all zeros of the polynomial on each fiber.

    `fixed` maps variable index to an array of length n_rows; `free` lists
    (variable, radius) pairs, each variable ranging over [-radius, radius].
    """
    zero_free = {v for v, r in free if r <= 0}
    free = [(v, r) for v, r in free if r > 0]
    radii = [0] * num_vars
    for v, col in fixed.items():
        radii[v] = int(abs(col).max()) if n_rows else 0
    for v, r in free:
        radii[v] = r
    bound = value_bound_terms(terms, radii)
    dtype = pick_dtype(4 * bound * bound + 1)
    if not free:
        cols = {v: c for v, c in fixed.items()}
        val = eval_terms(terms, cols, n_rows, dtype)
        yield np.nonzero(val == 0)[0], {}
        return

    kind, solved_spec = _plan(terms, free)
    solved = [v for v, _ in solved_spec]
    prefix = [(v, r) for v, r in free if v not in solved]
    grid = _grid([r for _, r in prefix])
    groups = _reduce_terms(terms, solved)
    g_len = len(grid)
    outer_step = max(1, CHUNK_ROWS // g_len)
    grid_step = min(g_len, CHUNK_ROWS)

    for o0 in range(0, n_rows, outer_step):
        o1 = min(n_rows, o0 + outer_step)
        n_o = o1 - o0
        for g0 in range(0, g_len, grid_step):
            piece = grid[g0 : g0 + grid_step]
            n_g = len(piece)
            size = n_o * n_g
            outer_idx = np.repeat(np.arange(o0, o1), n_g)
            cols = {v: col[outer_idx] for v, col in fixed.items()}
            for j, (v, _) in enumerate(prefix):
                cols[v] = np.tile(piece[:, j], n_o)
            zero = np.zeros(size, dtype=dtype)

            def coef(key):
                t = groups.get(key)
                return eval_terms(t, cols, size, dtype) if t else zero

            if kind == "pair":
                (u, ru), (w, rw) = solved_spec
                c0, a, b = coef((0, 0)), coef((1, 0)), coef((0, 1))
                rows, uu, ww = _solve_pair(c0, a, b, ru, rw)
                vals = {u: uu, w: ww}
            else:
                (s, rs), = solved_spec
                deg = max(k[0] for k in groups)
                coeffs = [coef((j,)) for j in range(deg + 1)]
                rows, ws = _solve_univariate(coeffs, rs)
                vals = {s: ws}
            for j, (v, _) in enumerate(prefix):
                vals[v] = np.tile(piece[:, j], n_o)[rows]
            for v in zero_free:
                vals[v] = np.zeros(len(rows), dtype=np.int64)
            yield outer_idx[rows], vals


def value_bound_terms(terms, radii: Sequence[int]) -> int:
    total = 0
    for exps, c in terms:
        t = abs(c)
        for rad, e in zip(radii, exps):
            if e:
                t *= int(rad) ** e
        total += t
    return total


# ---------------------------------------------------------------------------
# enumeration jobs


@dataclass(frozen=True)
class _Job:
    """One enumeration problem; picklable so shells can be farmed out to workers."""

    form: BidegreeForm  # already scaled: G(x,y,z) = F(dx,y,z)
    d: int
    mode: str  # "height", "box", "floor"
    side: str  # "x" or "z"
    bound: Fraction  # B for height/floor modes, P2 for box mode
    P1: Fraction = Fraction(0)
    openset: str = "all"
    primitive: bool = False
    x_cap: Optional[int] = None
    split: bool = False  # restrict by the hyperbola cut k^(2 b1) <= B / l^(2 b2) <= B


def _betas(form: BidegreeForm) -> Tuple[int, int]:
    b1, b2 = form.betas()
    if b1 < 1 or b2 < 1:
        raise ValueError(f"height exponents must be positive, got beta=({b1}, {b2})")
    return b1, b2


def _x_radii(job: _Job, k: int) -> Tuple[int, int]:
    """(y radius, z radius) on the shell |x| = k."""
    form = job.form
    b1, b2 = _betas(form)
    if job.mode == "box":
        p2 = job.bound
        lz = math.floor(p2)
        ry = math.floor(job.d * k * p2)
        return ry, lz
    B = job.bound
    bn, bd = B.numerator, B.denominator
    if job.mode == "floor":
        lmax = iroot(bn // (bd * k**b1), b2)
        return job.d * k * (lmax + 1) - 1, lmax
    lz = iroot(bn // (bd * k**b1), b2)
    ry = iroot(bn * (job.d * k) ** b2 // (bd * k**b1), b2)
    return ry, lz


def _collect_x_shell(job: _Job, k: int):
    form = job.form
    n, r, m = form.fan_params
    nx = r + 1
    X = _shell(k, nx)
    if job.primitive and k > 0:
        X = X[vgcd_rows(X) == 1]
    if job.mode == "box" and k == 0:
        ry, lz = 0, math.floor(job.bound)
    else:
        ry, lz = _x_radii(job, k)
    ys = list(range(r + 1, m + 1))
    zs = list(range(m + 1, n + 2))
    if job.mode != "box" and ry <= 0 and lz <= 0:
        return np.zeros((0, n + 2), dtype=np.int64)
    fixed = {i: X[:, i] for i in range(nx)}
    free = [(v, ry) for v in ys] + [(v, lz) for v in zs]
    for v, rad in free:
        if rad <= 0:
            fixed[v] = np.zeros(len(X), dtype=np.int64)
    free = [(v, rad) for v, rad in free if rad > 0]
    parts = []
    for idx, vals in fiber_solutions(form.monomials, fixed, len(X), free, n + 2):
        pts = np.empty((len(idx), n + 2), dtype=np.int64)
        for i in range(n + 2):
            pts[:, i] = vals[i] if i in vals else fixed[i][idx]
        parts.append(pts)
    return np.concatenate(parts) if parts else np.zeros((0, n + 2), dtype=np.int64)


def _collect_z_shell(job: _Job, l: int):
    """Points with |z| = l and |x| free (only used without y-variables)."""
    form = job.form
    n, r, m = form.fan_params
    b1, b2 = _betas(form)
    Z = _shell(l, n - m + 1)
    if job.primitive:
        Z = Z[vgcd_rows(Z) == 1]
    B = job.bound
    kx = iroot(B.numerator // (B.denominator * l**b2), b1)
    if job.x_cap is not None:
        kx = min(kx, job.x_cap)
    if kx <= 0 or len(Z) == 0:
        return np.zeros((0, n + 2), dtype=np.int64)
    fixed = {m + 1 + j: Z[:, j] for j in range(n - m + 1)}
    free = [(i, kx) for i in range(r + 1)]
    parts = []
    for idx, vals in fiber_solutions(form.monomials, fixed, len(Z), free, n + 2):
        pts = np.empty((len(idx), n + 2), dtype=np.int64)
        for i in range(n + 2):
            pts[:, i] = vals[i] if i in vals else fixed[i][idx]
        parts.append(pts)
    return np.concatenate(parts) if parts else np.zeros((0, n + 2), dtype=np.int64)


def _filter(job: _Job, pts: np.ndarray):
    """Apply region, open-set and gcd conditions; return surviving points and (k, Y, Z)."""
    form = job.form
    n, r, m = form.fan_params
    b1, b2 = _betas(form)
    X, Y, Z = pts[:, : r + 1], pts[:, r + 1 : m + 1], pts[:, m + 1 :]
    k = np.abs(X).max(axis=1)
    ymax = np.abs(Y).max(axis=1) if Y.shape[1] else np.zeros(len(pts), dtype=np.int64)
    zmax = np.abs(Z).max(axis=1)
    keep = np.ones(len(pts), dtype=bool)
    if job.mode != "box":
        keep &= (k > 0) & ((ymax > 0) | (zmax > 0))
    B = job.bound
    if job.mode == "height":
        num, den = _height_parts(k, ymax, zmax, job.d, b1, b2)
        keep &= num * B.denominator <= den * B.numerator
    elif job.mode == "floor":
        l = np.maximum(ymax // np.maximum(job.d * k, 1), zmax)
        keep &= _monomial_leq(k, b1, l, b2, B)
    if job.split:
        inner = _monomial_leq(k, 2 * b1, np.ones_like(k), 0, B)
        keep &= inner if job.side == "x" else ~inner
    if job.primitive:
        keep &= vgcd_rows(X) == 1
        keep &= vgcd_rows(pts[:, r + 1 :]) == 1
    pts, k, ymax, zmax = pts[keep], k[keep], ymax[keep], zmax[keep]
    pm = openset_mask(job.form, pts, job.openset)
    return pts[pm], k[pm], ymax[pm], zmax[pm]


def _monomial_leq(k: np.ndarray, e1: int, l: np.ndarray, e2: int, B: Fraction) -> np.ndarray:
    """Elementwise k^e1 l^e2 <= B, in int64 when that cannot overflow."""
    if not len(k):
        return np.zeros(0, dtype=bool)
    top = int(k.max()) ** e1 * int(l.max()) ** e2 * B.denominator
    if top < 2**62 and B.numerator < 2**62:
        return k**e1 * l**e2 * B.denominator <= B.numerator
    return (k.astype(object) ** e1) * (l.astype(object) ** e2) * B.denominator <= B.numerator


def _height_parts(k, ymax, zmax, d: int, b1: int, b2: int):
    """H_d = num/den with num = k^b1 max(|y|, d k |z|)^b2 and den = (d k)^b2, as object arrays."""
    k = k.astype(object)
    mx = np.maximum(ymax.astype(object), d * k * zmax.astype(object))
    return k**b1 * mx**b2, (d * k) ** b2


def _run_job(job: _Job, shells: Sequence[int]):
    """Enumerate the given shells; returns (num, den) arrays, an int count, or a histogram."""
    nums, dens = [], []
    total = 0
    hist: Dict[Tuple[int, int], int] = {}
    b1, b2 = job.form.betas()
    for s in shells:
        pts = _collect_x_shell(job, s) if job.side == "x" else _collect_z_shell(job, s)
        if not len(pts):
            continue
        pts, k, ymax, zmax = _filter(job, pts)
        if job.mode == "height":
            num, den = _height_parts(k, ymax, zmax, job.d, b1, b2)
            nums.append(num)
            dens.append(den)
        elif job.mode == "box":
            total += len(pts)
        else:
            l = np.maximum(ymax // np.maximum(job.d * k, 1), zmax)
            keys, cnt = np.unique(np.stack([k, l], axis=1), axis=0, return_counts=True)
            for (kk, ll), c in zip(keys.tolist(), cnt.tolist()):
                hist[(kk, ll)] = hist.get((kk, ll), 0) + c
    if job.mode == "height":
        if nums:
            return np.concatenate(nums), np.concatenate(dens)
        return np.zeros(0, dtype=object), np.zeros(0, dtype=object)
    if job.mode == "box":
        return total
    return hist


def _dispatch(job: _Job, shells: List[int], workers: int):
    """Run shells over `workers` processes with a fixed round-robin slab assignment."""
    if workers <= 1 or len(shells) < 2:
        return [_run_job(job, shells)]
    slabs = [shells[i::workers] for i in range(workers)]
    slabs = [s for s in slabs if s]
    with ProcessPoolExecutor(max_workers=len(slabs)) as pool:
        return list(pool.map(_run_job, [job] * len(slabs), slabs))


class HeightSet:
    """Exact heights num/den of a point set, queried by thresholds."""

    def __init__(self, num: np.ndarray, den: np.ndarray):
        approx = np.array([a / b for a, b in zip(num.tolist(), den.tolist())], dtype=float)
        order = np.argsort(approx, kind="stable")
        self.num = num[order]
        self.den = den[order]
        self.approx = approx[order]

    def __len__(self) -> int:
        return len(self.num)

    def count_leq(self, B: Fraction) -> int:
        if not len(self.num):
            return 0
        fb = float(B)
        lo = int(np.searchsorted(self.approx, fb * (1 - 1e-9), side="left"))
        hi = int(np.searchsorted(self.approx, fb * (1 + 1e-9), side="right"))
        mid = self.num[lo:hi] * B.denominator <= self.den[lo:hi] * B.numerator
        return lo + int(np.count_nonzero(mid))


# ---------------------------------------------------------------------------
# x-range bookkeeping


def _y_stratum_empty(form: BidegreeForm) -> bool:
    """True when F(x, y, 0) = 0 provably has no solution with x != 0, y != 0."""
    n, r, m = form.fan_params
    if m == r:
        return True
    zs = range(m + 1, n + 2)
    terms = [(e, c) for e, c in form.monomials if all(e[i] == 0 for i in zs)]
    if not terms:
        return False
    # with one y-variable F(x, y, 0) = y^d2 P(x); constant nonzero P has no zeros
    if m - r == 1 and form.d1 == form.d2:
        return True
    return False


def derived_x_bound(form: BidegreeForm, d: int, B: Fraction) -> Optional[int]:
    """Largest |x| that can carry a point with H_d <= B, or None if unbounded."""
    b1, b2 = _betas(form)
    k1 = floor_root_of_fraction(B, b1)
    if _y_stratum_empty(form):
        return k1
    if b1 > b2:
        return max(k1, floor_root_of_fraction(B * d**b2, b1 - b2))
    return None


def _resolve_cap(form: BidegreeForm, d: int, B: Fraction, caps: Caps, x_cap: Optional[int]):
    """Return (kmax, cap_hit); raises CapExhausted under on_cap='raise'."""
    derived = derived_x_bound(form, d, B)
    if derived is not None and (x_cap is None or derived <= x_cap):
        return derived, False
    if x_cap is None:
        raise CapExhausted(
            f"x-range is unbounded for beta={form.betas()} with y-variables; supply an x cap"
        )
    if caps.on_cap == "raise":
        raise CapExhausted(f"derived |x| bound {derived if derived is not None else 'infinite'} exceeds cap {x_cap}")
    return x_cap, True


def _height_points(
    form: BidegreeForm,
    d: int,
    B: Fraction,
    openset_id: str,
    primitive: bool,
    kmax: int,
    workers: int,
    strategy: str = "auto",
) -> HeightSet:
    """All points (no scaling of B) with H_d <= B and |x| <= kmax, as a HeightSet."""
    if openset_id not in OPENSETS:
        raise ValueError(f"unknown open set id {openset_id!r}; choose from {OPENSETS}")
    g = scale_x(form, d)
    b1, b2 = _betas(form)
    use_split = strategy == "split" or (strategy == "auto" and form.m == form.r)
    if use_split and form.m != form.r:
        raise ValueError("the hyperbola split needs a form without y-variables")
    results = []
    if use_split:
        kx = min(kmax, floor_root_of_fraction(B, 2 * b1))
        job = _Job(g, d, "height", "x", B, openset=openset_id, primitive=primitive, split=True)
        results += _dispatch(job, list(range(1, kx + 1)), workers)
        lz = floor_root_of_fraction(B, 2 * b2)
        job = _Job(g, d, "height", "z", B, openset=openset_id, primitive=primitive, x_cap=kmax, split=True)
        results += _dispatch(job, list(range(1, lz + 1)), workers)
    else:
        job = _Job(g, d, "height", "x", B, openset=openset_id, primitive=primitive)
        results += _dispatch(job, list(range(1, kmax + 1)), workers)
    nums = [a for a, _ in results if len(a)]
    dens = [b for a, b in results if len(a)]
    if not nums:
        return HeightSet(np.zeros(0, dtype=object), np.zeros(0, dtype=object))
    return HeightSet(np.concatenate(nums), np.concatenate(dens))


# ---------------------------------------------------------------------------
# public counts


def count_N_U_series(
    form: BidegreeForm,
    Bs: Sequence[Number],
    openset_id: str = "all",
    caps: Optional[Caps] = None,
    workers: int = 1,
    strategy: str = "auto",
) -> List[CountResult]:
    """Direct counts of admissible points (gcd sieve) for each B, from one enumeration."""
    caps = caps or Caps()
    bs = [as_fraction(b) for b in Bs]
    if not bs:
        return []
    bmax = max(bs)
    if bmax < 0:
        raise ValueError("B must be nonnegative")
    kmax, hit = _resolve_cap(form, 1, bmax, caps, caps.x_cap)
    hs = _height_points(form, 1, bmax, openset_id, True, kmax, workers, strategy)
    out = []
    for b in bs:
        raw = hs.count_leq(b) if b >= 0 else 0
        if raw % 4:
            raise AssertionError(f"raw admissible count {raw} not divisible by 4")
        out.append(CountResult(b, raw // 4, raw, openset_id, hit))
    return out


def count_N_U(
    form: BidegreeForm,
    B: Number,
    openset_id: str = "all",
    caps: Optional[Caps] = None,
    workers: int = 1,
    strategy: str = "auto",
) -> int:
    return count_N_U_series(form, [B], openset_id, caps, workers, strategy)[0].count


def count_N_dU(
    form: BidegreeForm,
    d: int,
    B: Number,
    openset_id: str = "all",
    caps: Optional[Caps] = None,
    workers: int = 1,
    strategy: str = "auto",
) -> int:
    """Points with x != 0, (y, z) != 0, F(dx, y, z) = 0 and H_d <= B (no gcd conditions).

    The cap applies to the enumerated x.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    caps = caps or Caps()
    b = as_fraction(B)
    if b < 0:
        return 0
    kmax, _ = _resolve_cap(form, d, b, caps, caps.x_cap)
    return len(_height_points(form, d, b, openset_id, False, kmax, workers, strategy))


def count_moebius_series(
    form: BidegreeForm,
    Bs: Sequence[Number],
    caps: Optional[Caps] = None,
    openset_id: str = "all",
    workers: int = 1,
    strategy: str = "auto",
) -> List[CountResult]:
    """(1/4) sum_{d,e} mu(d) mu(e) N_{d,U}(B / (d^b1 e^b2)) for each B.

    For each d the points of N_{d,U} are enumerated once at the largest
    bound and every (e, B) term is read off the sorted heights.  A cap on
    the original |x| becomes the cap floor(x_cap / d) on the d-scaled x.
    """
    caps = caps or Caps()
    bs = [as_fraction(b) for b in Bs]
    if not bs:
        return []
    bmax = max(bs)
    b1, b2 = _betas(form)
    kmax, hit = _resolve_cap(form, 1, bmax, caps, caps.x_cap)
    totals = [0] * len(bs)
    for d in range(1, kmax + 1):
        mu_d = mobius(d)
        if mu_d == 0:
            continue
        bd = bmax / d**b1
        derived = derived_x_bound(form, d, bd)
        kd = kmax // d if derived is None else min(derived, kmax // d)
        if kd < 1:
            continue
        hs = _height_points(form, d, bd, openset_id, False, kd, workers, strategy)
        if not len(hs):
            continue
        for j, b in enumerate(bs):
            e = 1
            acc = 0
            while True:
                c = hs.count_leq(b / (d**b1 * e**b2))
                if c == 0:
                    break
                acc += mobius(e) * c
                e += 1
            totals[j] += mu_d * acc
    out = []
    for b, raw in zip(bs, totals):
        if raw % 4:
            raise AssertionError(f"Moebius raw count {raw} not divisible by 4")
        out.append(CountResult(b, raw // 4, raw, openset_id, hit))
    return out


def count_moebius(
    form: BidegreeForm,
    B: Number,
    caps: Optional[Caps] = None,
    openset_id: str = "all",
    workers: int = 1,
    strategy: str = "auto",
) -> int:
    return count_moebius_series(form, [B], caps, openset_id, workers, strategy)[0].count


def count_box(form: BidegreeForm, d: int, P1: Number, P2: Number, workers: int = 1) -> int:
    """#{|x| <= P1, |y| <= d|x|P2, |z| <= P2, F(dx, y, z) = 0}, the origin included."""
    if d < 1:
        raise ValueError("d must be >= 1")
    p1, p2 = as_fraction(P1), as_fraction(P2)
    if p1 < 0 or p2 < 0:
        return 0
    job = _Job(scale_x(form, d), d, "box", "x", p2, P1=p1)
    return sum(_dispatch(job, list(range(0, math.floor(p1) + 1)), workers))


def histogram_h(
    form: BidegreeForm,
    d: int,
    P1: Number,
    P2: Number,
    openset_id: str = "all",
    workers: int = 1,
) -> Dict[Tuple[int, int], int]:
    """h_d(k, l) for 1 <= k <= P1, 0 <= l <= P2 with l = max(floor(|y|/(d|x|)), |z|).

    Points with (y, z) = 0 are excluded; the l = 0 row holds z = 0, 0 < |y| < d|x|.
    """
    p1, p2 = math.floor(as_fraction(P1)), math.floor(as_fraction(P2))
    hist: Dict[Tuple[int, int], int] = {}
    g = scale_x(form, d)
    n, r, m = g.fan_params
    for k in range(1, p1 + 1):
        pts = _collect_box_floor(g, d, k, p2)
        if not len(pts):
            continue
        Y, Z = pts[:, r + 1 : m + 1], pts[:, m + 1 :]
        ymax = np.abs(Y).max(axis=1) if Y.shape[1] else np.zeros(len(pts), dtype=np.int64)
        zmax = np.abs(Z).max(axis=1)
        keep = (ymax > 0) | (zmax > 0)
        keep &= openset_mask(g, pts, openset_id)
        l = np.maximum(ymax // (d * k), zmax)[keep]
        vals, cnt = np.unique(l, return_counts=True)
        for ll, c in zip(vals.tolist(), cnt.tolist()):
            hist[(k, ll)] = hist.get((k, ll), 0) + c
    return dict(sorted(hist.items()))


def _collect_box_floor(g: BidegreeForm, d: int, k: int, p2: int) -> np.ndarray:
    n, r, m = g.fan_params
    X = _shell(k, r + 1)
    ry, lz = d * k * (p2 + 1) - 1, p2
    fixed = {i: X[:, i] for i in range(r + 1)}
    free = [(v, ry) for v in range(r + 1, m + 1)] + [(v, lz) for v in range(m + 1, n + 2)]
    for v, rad in free:
        if rad <= 0:
            fixed[v] = np.zeros(len(X), dtype=np.int64)
    free = [(v, rad) for v, rad in free if rad > 0]
    parts = []
    for idx, vals in fiber_solutions(g.monomials, fixed, len(X), free, n + 2):
        pts = np.empty((len(idx), n + 2), dtype=np.int64)
        for i in range(n + 2):
            pts[:, i] = vals[i] if i in vals else fixed[i][idx]
        parts.append(pts)
    return np.concatenate(parts) if parts else np.zeros((0, n + 2), dtype=np.int64)


def histogram_hyperbola(
    form: BidegreeForm,
    d: int,
    P: Number,
    openset_id: str = "all",
    workers: int = 1,
) -> Dict[Tuple[int, int], int]:
    """h_d(k, l) restricted to l >= 1 and k^b1 l^b2 <= P (the summation region)."""
    p = as_fraction(P)
    b1, b2 = _betas(form)
    g = scale_x(form, d)
    if form.m == form.r:
        # no y-variables, so l = |z| and the region splits at k^(2 b1) <= P
        job = _Job(g, d, "floor", "x", p, openset=openset_id, split=True)
        parts = _dispatch(job, list(range(1, floor_root_of_fraction(p, 2 * b1) + 1)), workers)
        job = _Job(g, d, "floor", "z", p, openset=openset_id, split=True)
        parts += _dispatch(job, list(range(1, floor_root_of_fraction(p, 2 * b2) + 1)), workers)
    else:
        job = _Job(g, d, "floor", "x", p, openset=openset_id)
        parts = _dispatch(job, list(range(1, floor_root_of_fraction(p, b1) + 1)), workers)
    hist: Dict[Tuple[int, int], int] = {}
    for part in parts:
        for key, c in part.items():
            if key[1] >= 1:
                hist[key] = hist.get(key, 0) + c
    return dict(sorted(hist.items()))


@dataclass(frozen=True)
class Sandwich:
    lower: int
    middle: int
    upper: int
    l0_points: int


def sandwich(form: BidegreeForm, d: int, B: Number, openset_id: str = "all") -> Sandwich:
    """Compare N_{d,U}(B) with the floor-variant counts built from h_d.

    upper sums h_d(k, l) over k^b1 l^b2 <= B with l >= 1; lower uses
    (l + 1) in place of l.  l0_points counts the l = 0 row (z = 0,
    0 < |y| < d|x|) with H_d <= B, so lower <= middle <= upper + l0_points.
    """
    b = as_fraction(B)
    b1, b2 = _betas(form)
    middle = count_N_dU(form, d, b, openset_id, Caps())
    hist = histogram_hyperbola(form, d, b, openset_id)
    upper = sum(hist.values())
    lower = sum(
        c for (k, l), c in hist.items() if k**b1 * (l + 1) ** b2 * b.denominator <= b.numerator
    )
    l0 = 0
    if form.m > form.r:
        g = scale_x(form, d)
        job = _Job(g, d, "height", "x", b, openset=openset_id)
        for k in range(1, derived_x_bound(form, d, b) + 1):
            pts = _collect_box_floor(g, d, k, 0)
            if len(pts):
                pts, kk, ymax, zmax = _filter(job, pts)
                l0 += int(np.count_nonzero(ymax < d * kk))
    return Sandwich(lower, middle, upper, l0)
