"""Real density of the height-one region: a Monte Carlo slab volume and the
oscillatory integrals I(beta), J(phi) as an independent route.

Both routes integrate over the region |y| <= |x| <= 1, |z| <= 1 in R^{n+2}.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import List

import numpy as np

from .forms import BidegreeForm
from .padic import DensityEstimate

__all__ = [
    "SLAB_BLOCK",
    "slab_sigma_inf",
    "slab_schedule",
    "oscillatory_I",
    "oscillatory_J",
    "estimate_J",
    "tau_inf",
]

SLAB_BLOCK = 1 << 20
MAX_QUAD_DIM = 6


def _eval_float(form: BidegreeForm, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    for exps, c in form.monomials:
        term = np.full(len(pts), float(c))
        for i, e in enumerate(exps):
            if e:
                term *= pts[:, i] ** e
        out += term
    return out


def _in_region(form: BidegreeForm, pts: np.ndarray) -> np.ndarray:
    r, m = form.r, form.m
    if m == r:
        return np.ones(len(pts), dtype=bool)
    xs = np.abs(pts[:, : r + 1]).max(axis=1)
    ys = np.abs(pts[:, r + 1 : m + 1]).max(axis=1)
    return ys <= xs


def _region_weight(form: BidegreeForm, pts: np.ndarray) -> np.ndarray:
    """Quadrature weight of the region: 1 inside, 1/2 on |y| = |x| (the cell is cut in half), 0 outside."""
    r, m = form.r, form.m
    xs = np.abs(pts[:, : r + 1]).max(axis=1)
    ys = np.abs(pts[:, r + 1 : m + 1]).max(axis=1)
    return np.where(ys < xs, 1.0, np.where(ys == xs, 0.5, 0.0))


def _slab_block(args) -> int:
    form, eps, seed, block, size = args
    bitgen = np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,)))
    pts = np.random.Generator(bitgen).uniform(-1.0, 1.0, size=(size, form.num_vars))
    hit = _in_region(form, pts) & (np.abs(_eval_float(form, pts)) <= eps)
    return int(np.count_nonzero(hit))


def slab_sigma_inf(
    form: BidegreeForm, eps: float, samples: int, seed: int, workers: int = 1
) -> DensityEstimate:
    """vol{|y| <= |x|, |F| <= eps in [-1, 1]^{n+2}} / (2 eps), with its Monte Carlo standard error.

    Samples are drawn in fixed blocks of SLAB_BLOCK points; block b uses a
    Philox stream keyed by (seed, b), so the estimate does not depend on the
    number of workers.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    jobs = []
    for b, start in enumerate(range(0, samples, SLAB_BLOCK)):
        jobs.append((form, float(eps), int(seed), b, min(SLAB_BLOCK, samples - start)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            hits = sum(pool.map(_slab_block, jobs))
    else:
        hits = sum(_slab_block(j) for j in jobs)
    frac = hits / samples
    scale = 2.0**form.num_vars / (2.0 * eps)
    stderr = scale * math.sqrt(frac * (1.0 - frac) / samples)
    return DensityEstimate(scale * frac, (float(eps), int(samples)), False, stderr, (("seed", int(seed)), ("hits", hits)))


def slab_schedule(
    form: BidegreeForm, eps: float, samples: int, seed: int, workers: int = 1
) -> List[dict]:
    """Rows eps,samples,estimate,stderr,seed for the levels eps, eps/2, eps/4."""
    rows = []
    for level in range(3):
        e = eps / 2**level
        est = slab_sigma_inf(form, e, samples, seed, workers)
        rows.append(
            {"eps": e, "samples": samples, "estimate": est.value, "stderr": est.stderr, "seed": seed}
        )
    return rows


# ---------------------------------------------------------------------------
# oscillatory route


def _affine_split(form: BidegreeForm, var: int):
    """(a-terms, b-terms) with F = a + b * x_var, or None when F is not affine in x_var."""
    a, b = [], []
    for exps, c in form.monomials:
        e = exps[var]
        if e > 1:
            return None
        rest = tuple(0 if i == var else v for i, v in enumerate(exps))
        (b if e else a).append((rest, c))
    return a, b


def _eval_terms_float(terms, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    for exps, c in terms:
        term = np.full(len(pts), float(c))
        for i, e in enumerate(exps):
            if e and i < pts.shape[1]:
                term *= pts[:, i] ** e
        out += term
    return out


def _midpoints(grid: int) -> np.ndarray:
    h = 2.0 / grid
    return -1.0 + h * (np.arange(grid) + 0.5)


def oscillatory_I(form: BidegreeForm, beta: float, grid: int) -> complex:
    """Midpoint-rule value of the integral of e(beta F) over |y| <= |x| <= 1, |z| <= 1.

    When F is affine in the last variable, that variable is integrated in
    closed form: the integral of e(beta (a + b w)) over [-1, 1] is
    2 e(beta a) sinc(2 beta b).
    """
    nv = form.num_vars
    if nv > MAX_QUAD_DIM:
        raise ValueError(f"quadrature limited to {MAX_QUAD_DIM} variables, form has {nv}")
    if grid < 8:
        raise ValueError(f"need at least 8 grid points per axis, got {grid}")
    last = nv - 1
    split = _affine_split(form, last)
    dims = nv - 1 if split is not None else nv
    nodes = _midpoints(grid)
    h = 2.0 / grid
    total = 0j
    # iterate over the first axis to bound memory
    rest = np.stack(np.meshgrid(*([nodes] * (dims - 1)), indexing="ij"), -1).reshape(-1, dims - 1)
    for x0 in nodes:
        pts = np.empty((len(rest), dims))
        pts[:, 0] = x0
        pts[:, 1:] = rest
        weight = _region_weight(form, pts) if form.m > form.r else None
        if split is not None:
            a = _eval_terms_float(split[0], pts)
            b = _eval_terms_float(split[1], pts)
            vals = np.exp(2j * np.pi * beta * a) * 2.0 * np.sinc(2.0 * beta * b)
        else:
            vals = np.exp(2j * np.pi * beta * _eval_float(form, pts))
        if weight is not None:
            vals = vals * weight
        total += vals.sum()
    return complex(total * h**dims)


def oscillatory_J(form: BidegreeForm, phi: float, beta_grid: int, grid: int) -> float:
    """Trapezoid rule for the integral of I(beta) over [-phi, phi].

    Uses I(-beta) = conj I(beta), so only beta >= 0 is evaluated and the real
    part is doubled.
    """
    if phi < 0:
        raise ValueError(f"phi must be nonnegative, got {phi}")
    if phi == 0:
        return 0.0
    if beta_grid < 2:
        raise ValueError("beta_grid must be >= 2")
    betas = np.linspace(0.0, phi, beta_grid + 1)
    vals = np.array([oscillatory_I(form, float(b), grid).real for b in betas])
    step = phi / beta_grid
    return float(2.0 * step * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def estimate_J(
    form: BidegreeForm, phi: float, beta_grid: int, grid: int
) -> DensityEstimate:
    """J(phi) with an error indicator |J(phi) - J(phi/2)| + |J_grid - J_{grid/2}|.

    The first term bounds the truncation in beta when |I(beta)| decays like
    beta^-2; the second is the quadrature change under grid halving.
    """
    full = oscillatory_J(form, phi, beta_grid, grid)
    half_phi = oscillatory_J(form, phi / 2, max(2, beta_grid // 2), grid)
    coarse = oscillatory_J(form, phi, beta_grid, max(8, grid // 2))
    err = abs(full - half_phi) + abs(full - coarse)
    return DensityEstimate(full, (float(phi), int(beta_grid), int(grid)), False, err, (("J_half_phi", half_phi), ("J_coarse", coarse)))


def tau_inf(form: BidegreeForm, sigma_inf: float) -> float:
    """(b1 b2 / 4) sigma_inf."""
    b1, b2 = form.betas()
    return b1 * b2 / 4.0 * sigma_inf
