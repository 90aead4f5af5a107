"""Deterministic CSV output."""

from __future__ import annotations

import csv
import os
from fractions import Fraction
from typing import Iterable, Mapping, Sequence


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Mapping]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[h]) for h in header])
    return path


def fmt_bound(q: Fraction) -> str:
    """q as a finite decimal when its denominator is 2^a 5^b, else as a/b."""
    den, a, b = q.denominator, 0, 0
    while den % 2 == 0:
        den //= 2
        a += 1
    while den % 5 == 0:
        den //= 5
        b += 1
    if den != 1:
        return str(q)
    k = max(a, b)
    if k == 0:
        return str(q.numerator)
    scaled = q.numerator * 10**k // q.denominator
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(k + 1, "0")
    return f"{sign}{digits[:-k]}.{digits[-k:]}".rstrip("0").rstrip(".")


COUNT_HEADER = ("B", "count", "raw_count", "openset_id", "cap_hit")


def count_rows(results) -> list:
    return [
        {"B": fmt_bound(r.B), "count": r.count, "raw_count": r.raw_count, "openset_id": r.openset_id, "cap_hit": r.cap_hit}
        for r in results
    ]
