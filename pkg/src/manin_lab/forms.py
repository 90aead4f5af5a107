"""Integer forms of bidegree (d1, d2) on the universal torsor.

A form is stored as a canonical tuple of (exponent vector, coefficient) pairs
over the n+2 torsor variables in ray order (x_0..x_r, y_{r+1}..y_m,
z_{m+1}..z_{n+1}).  Coefficients are Python integers.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .toric import KleinschmidtFan, bidegree_monomials, build_fan

__all__ = [
    "FormError",
    "TorsorPoint",
    "BidegreeForm",
    "form_from_literal",
    "random_form",
    "evaluate",
    "evaluate_many",
    "eval_terms",
    "gradient",
    "bidegree",
    "scale_x",
    "partial_form",
    "value_bound",
    "pick_dtype",
    "nonsingularity_probe",
]

Exps = Tuple[int, ...]
INT64_SAFE = 2**62


class FormError(ValueError):
    """Malformed or inconsistent form data."""


@dataclass(frozen=True)
class TorsorPoint:
    x: Tuple[int, ...]
    y: Tuple[int, ...]
    z: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(int(v) for v in self.x))
        object.__setattr__(self, "y", tuple(int(v) for v in self.y))
        object.__setattr__(self, "z", tuple(int(v) for v in self.z))

    def flat(self) -> Tuple[int, ...]:
        return self.x + self.y + self.z

    @classmethod
    def from_flat(cls, fan_params: Tuple[int, int, int], coords: Sequence[int]) -> "TorsorPoint":
        n, r, m = fan_params
        if len(coords) != n + 2:
            raise FormError(f"expected {n + 2} coordinates, got {len(coords)}")
        c = tuple(int(v) for v in coords)
        return cls(c[: r + 1], c[r + 1 : m + 1], c[m + 1 :])


def _split(n: int, r: int, m: int) -> Tuple[range, range, range]:
    return range(0, r + 1), range(r + 1, m + 1), range(m + 1, n + 2)


@dataclass(frozen=True)
class BidegreeForm:
    fan_params: Tuple[int, int, int]
    d1: int
    d2: int
    monomials: Tuple[Tuple[Exps, int], ...]

    def __post_init__(self):
        n, r, m = self.fan_params
        merged: Dict[Exps, int] = {}
        for exps, coeff in self.monomials:
            exps = tuple(int(e) for e in exps)
            if len(exps) != n + 2:
                raise FormError(f"exponent vector {exps} has length {len(exps)}, expected {n + 2}")
            if min(exps) < 0:
                raise FormError(f"negative exponent in {exps}")
            merged[exps] = merged.get(exps, 0) + int(coeff)
        canon = tuple(sorted((e, c) for e, c in merged.items() if c != 0))
        if not canon:
            raise FormError("the zero polynomial is not a valid form")
        object.__setattr__(self, "monomials", canon)
        bidegree(self)

    @property
    def n(self) -> int:
        return self.fan_params[0]

    @property
    def r(self) -> int:
        return self.fan_params[1]

    @property
    def m(self) -> int:
        return self.fan_params[2]

    @property
    def num_vars(self) -> int:
        return self.n + 2

    def fan(self) -> KleinschmidtFan:
        return build_fan(*self.fan_params)

    def betas(self) -> Tuple[int, int]:
        n, r, m = self.fan_params
        return m + 1 - self.d1, n - r + 1 - self.d2

    def exponent_matrix(self) -> np.ndarray:
        return np.array([e for e, _ in self.monomials], dtype=np.int64)

    def coefficients(self) -> List[int]:
        return [c for _, c in self.monomials]

    def coeff_norm(self) -> int:
        return sum(abs(c) for _, c in self.monomials)

    def to_literal(self) -> List[dict]:
        return [{"exponents": list(e), "coeff": c} for e, c in self.monomials]

    def digest(self) -> str:
        payload = json.dumps(
            {"fan": list(self.fan_params), "d": [self.d1, self.d2], "mono": self.to_literal()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def pretty(self) -> str:
        names = build_fan(*self.fan_params).var_names()
        terms = []
        for exps, c in self.monomials:
            mono = "*".join(
                name if e == 1 else f"{name}^{e}" for name, e in zip(names, exps) if e
            )
            terms.append(f"{c:+d}*{mono}" if mono else f"{c:+d}")
        return " ".join(terms)


def bidegree(form: BidegreeForm) -> Tuple[int, int]:
    """Verify every monomial and return (d1, d2)."""
    xs, ys, zs = _split(*form.fan_params)
    for exps, _ in form.monomials:
        dxy = sum(exps[i] for i in xs) + sum(exps[i] for i in ys)
        dyz = sum(exps[i] for i in ys) + sum(exps[i] for i in zs)
        if (dxy, dyz) != (form.d1, form.d2):
            raise FormError(
                f"monomial {exps} has bidegree ({dxy}, {dyz}), expected ({form.d1}, {form.d2})"
            )
    return form.d1, form.d2


def _coords(form: BidegreeForm, p: Union[TorsorPoint, Sequence[int]]) -> Tuple[int, ...]:
    c = p.flat() if isinstance(p, TorsorPoint) else tuple(p)
    if len(c) != form.num_vars:
        raise FormError(f"point has {len(c)} coordinates, form expects {form.num_vars}")
    return c


def evaluate(form: BidegreeForm, p: Union[TorsorPoint, Sequence[int]]) -> int:
    c = _coords(form, p)
    total = 0
    for exps, coeff in form.monomials:
        term = coeff
        for v, e in zip(c, exps):
            if e:
                term *= v**e
        total += term
    return total


def gradient(form: BidegreeForm, p: Union[TorsorPoint, Sequence[int]]) -> Tuple[int, ...]:
    c = _coords(form, p)
    grad = [0] * form.num_vars
    for exps, coeff in form.monomials:
        for i, ei in enumerate(exps):
            if ei == 0:
                continue
            term = coeff * ei
            for j, (v, e) in enumerate(zip(c, exps)):
                k = e - 1 if j == i else e
                if k:
                    term *= v**k
            grad[i] += term
    return tuple(grad)


def scale_x(form: BidegreeForm, d: int) -> BidegreeForm:
    """The form G with G(x, y, z) = F(d x, y, z)."""
    if d < 1:
        raise FormError(f"scale factor must be >= 1, got {d}")
    if d == 1:
        return form
    xs = range(form.r + 1)
    mono = tuple((e, c * d ** sum(e[i] for i in xs)) for e, c in form.monomials)
    return BidegreeForm(form.fan_params, form.d1, form.d2, mono)


def random_form(
    fan: KleinschmidtFan, d1: int, d2: int, coeff_bound: int, seed: int
) -> BidegreeForm:
    """Nonzero coefficients drawn uniformly from [-b, b] \\ {0} on the full monomial basis."""
    if coeff_bound < 1:
        raise FormError(f"coeff_bound must be >= 1, got {coeff_bound}")
    rng = random.Random(seed)
    choices = [c for c in range(-coeff_bound, coeff_bound + 1) if c != 0]
    mono = tuple((e, rng.choice(choices)) for e in bidegree_monomials(fan, d1, d2))
    return BidegreeForm(fan.params, d1, d2, mono)


def form_from_literal(
    fan_params: Tuple[int, int, int], d1: int, d2: int, literal: Iterable[dict]
) -> BidegreeForm:
    mono = []
    for i, item in enumerate(literal):
        try:
            mono.append((tuple(item["exponents"]), int(item["coeff"])))
        except (KeyError, TypeError) as exc:
            raise FormError(f"form term {i} must have 'exponents' and 'coeff': {exc}") from None
    return BidegreeForm(tuple(fan_params), d1, d2, tuple(mono))


# ---------------------------------------------------------------------------
# vectorized evaluation


def value_bound(form: BidegreeForm, radii: Sequence[int]) -> int:
    """Upper bound for |F| when coordinate i ranges over [-radii[i], radii[i]]."""
    total = 0
    for exps, c in form.monomials:
        t = abs(c)
        for rad, e in zip(radii, exps):
            if e:
                t *= int(rad) ** e
        total += t
    return total


def pick_dtype(bound: int):
    """int64 when the bound certifies no overflow, else Python-int object arrays."""
    return np.int64 if bound < INT64_SAFE else object


def eval_terms(
    monomials: Sequence[Tuple[Exps, int]], cols: Dict[int, np.ndarray], size: int, dtype
) -> np.ndarray:
    """Evaluate sum c * prod cols[i]**e_i over the given variables, vectorized."""
    out = np.zeros(size, dtype=dtype)
    powers: Dict[Tuple[int, int], np.ndarray] = {}
    for exps, c in monomials:
        term = np.full(size, c, dtype=dtype)
        for i, e in enumerate(exps):
            if e == 0 or i not in cols:
                continue
            key = (i, e)
            if key not in powers:
                powers[key] = cols[i].astype(dtype) ** e if dtype is not object else _obj_pow(cols[i], e)
            term = term * powers[key]
        out = out + term
    return out


def _obj_pow(a: np.ndarray, e: int) -> np.ndarray:
    a = a.astype(object)
    out = np.ones(a.shape, dtype=object)
    for _ in range(e):
        out = out * a
    return out


def evaluate_many(form: BidegreeForm, pts: np.ndarray, bound: int | None = None) -> np.ndarray:
    """F at each row of an integer array of shape (N, n+2)."""
    if bound is None:
        radii = np.abs(pts).max(axis=0) if len(pts) else np.zeros(form.num_vars, dtype=np.int64)
        bound = value_bound(form, [int(v) for v in radii])
    dtype = pick_dtype(bound)
    cols = {i: pts[:, i] for i in range(form.num_vars)}
    return eval_terms(form.monomials, cols, len(pts), dtype)


def partial_form(form: BidegreeForm, i: int) -> List[Tuple[Exps, int]]:
    """Monomials of dF/dx_i (as a plain term list, possibly empty)."""
    out = []
    for exps, c in form.monomials:
        if exps[i]:
            e = list(exps)
            e[i] -= 1
            out.append((tuple(e), c * exps[i]))
    return out


def nonsingularity_probe(form: BidegreeForm, samples: int = 200, seed: int = 0) -> float:
    """Fraction of sampled real zeros (found by bisection along z_{n+1}) with nonzero gradient.

    A heuristic only: smoothness of Y is not certified anywhere.
    """
    rng = np.random.default_rng(seed)
    hits = ok = 0
    last = form.num_vars - 1
    grads = [partial_form(form, i) for i in range(form.num_vars)]

    def f_at(pt):
        return sum(c * np.prod([pt[j] ** e for j, e in enumerate(ex)]) for ex, c in form.monomials)

    for _ in range(samples):
        base = rng.uniform(-1, 1, size=form.num_vars)
        lo, hi = base.copy(), base.copy()
        lo[last], hi[last] = -1.0, 1.0
        flo, fhi = f_at(lo), f_at(hi)
        if flo == 0 or fhi == 0 or np.sign(flo) == np.sign(fhi):
            continue
        for _ in range(60):
            mid = (lo + hi) / 2
            fm = f_at(mid)
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        hits += 1
        g = [sum(c * np.prod([lo[j] ** e for j, e in enumerate(ex)]) for ex, c in terms) for terms in grads]
        if max(abs(v) for v in g) > 1e-8:
            ok += 1
    return ok / hits if hits else 1.0
