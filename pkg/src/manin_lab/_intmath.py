"""Small exact-integer helpers shared by the counting and summation code."""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import List, Union

import numpy as np

Number = Union[int, float, Fraction, str]


def as_fraction(value: Number) -> Fraction:
    """Exact rational from int, Fraction, decimal string or float (via its repr)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"bound must be finite, got {value}")
        return Fraction(repr(float(value)))
    return Fraction(value)


def iroot(value: int, e: int) -> int:
    """Largest t >= 0 with t**e <= value (0 for negative value)."""
    if value < 0:
        return 0
    if e == 1:
        return value
    if e == 2:
        return math.isqrt(value)
    t = int(round(value ** (1.0 / e))) if value < 2**1000 else 1 << (value.bit_length() // e + 1)
    while t**e > value:
        t -= 1
    while (t + 1) ** e <= value:
        t += 1
    return t


def floor_root_of_fraction(q: Fraction, e: int) -> int:
    """Largest integer t >= 0 with t**e <= q."""
    if q < 0:
        return 0
    return iroot(q.numerator // q.denominator, e)


@lru_cache(maxsize=None)
def mobius(n: int) -> int:
    if n < 1:
        raise ValueError("mobius needs n >= 1")
    result = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    if n > 1:
        result = -result
    return result


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def primes_upto(limit: int) -> List[int]:
    if limit < 2:
        return []
    sieve = bytearray([1]) * (limit + 1)
    sieve[0:2] = b"\x00\x00"
    for p in range(2, math.isqrt(limit) + 1):
        if sieve[p]:
            sieve[p * p :: p] = bytearray(len(sieve[p * p :: p]))
    return [i for i, v in enumerate(sieve) if v]


def factorize(n: int) -> dict:
    out: dict = {}
    p = 2
    while p * p <= n:
        while n % p == 0:
            out[p] = out.get(p, 0) + 1
            n //= p
        p += 1
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return out


def vgcd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise nonnegative gcd; works on int64 and object arrays."""
    a = abs(a)
    b = abs(b)
    if a.dtype != object and b.dtype != object:
        return np.gcd(a, b)
    while True:
        nz = b != 0
        if not np.any(nz):
            return a
        safe = np.where(nz, b, 1)
        a, b = np.where(nz, b, a), np.where(nz, a % safe, 0)


def vgcd_rows(m: np.ndarray) -> np.ndarray:
    """gcd across each row of a 2-D integer array (0 for an all-zero row)."""
    if m.shape[1] == 0:
        return np.zeros(m.shape[0], dtype=np.int64)
    g = abs(m[:, 0])
    for j in range(1, m.shape[1]):
        g = vgcd(g, m[:, j])
    return g


def vxgcd(a: np.ndarray, b: np.ndarray):
    """Elementwise (g, s, t) with a*s + b*t = g = gcd(a, b) >= 0."""
    sa = np.where(a < 0, -1, 1)
    sb = np.where(b < 0, -1, 1)
    old_r, r = abs(a), abs(b)
    one = np.ones_like(old_r)
    zero = np.zeros_like(old_r)
    old_s, s = one, zero
    old_t, t = zero, one
    while True:
        nz = r != 0
        if not np.any(nz):
            break
        q = np.where(nz, old_r // np.where(nz, r, 1), 0)
        old_r, r = np.where(nz, r, old_r), np.where(nz, old_r - q * r, r)
        old_s, s = np.where(nz, s, old_s), np.where(nz, old_s - q * s, s)
        old_t, t = np.where(nz, t, old_t), np.where(nz, old_t - q * t, t)
    return old_r, old_s * sa, old_t * sb


def visqrt(d: np.ndarray) -> np.ndarray:
    """Elementwise floor square root of a nonnegative integer array."""
    if d.dtype != object and (len(d) == 0 or int(d.max()) < 2**52):
        s = np.floor(np.sqrt(d.astype(np.float64))).astype(np.int64)
        s = s - (s * s > d)
        s = s + ((s + 1) * (s + 1) <= d)
        return s
    f = np.frompyfunc(lambda v: math.isqrt(int(v)), 1, 1)
    return f(d).astype(object)
