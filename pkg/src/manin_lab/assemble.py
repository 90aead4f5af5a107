"""The leading constant of N_U(B) ~ sigma B log B, two ways, and the regime checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .padic import DensityEstimate
from .toric import KleinschmidtFan

__all__ = [
    "PeyreBreakdown",
    "RegimeDiagnostics",
    "sigma_d",
    "peyre_constant",
    "check_hypotheses",
    "end_to_end_report",
]

Real = Union[int, float, Fraction]


def _exact(v: Real) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


def sigma_d(d: int, S_d: Real, J: Real, fan: KleinschmidtFan, d1: int):
    """d^{m-r-d1} S_d J (exact when S_d and J are)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    value = Fraction(d) ** (fan.m - fan.r - d1) * _exact(S_d) * _exact(J)
    if isinstance(J, float) or isinstance(S_d, float):
        return float(value)
    return value


@dataclass(frozen=True)
class PeyreBreakdown:
    alpha: Fraction
    beta_cohom: int
    J_est: DensityEstimate
    local_product: Fraction
    local_primes: Tuple[int, ...]
    sigma_route1: float
    sigma_route2: float
    agree: bool
    tau_inf: float
    beta_factor: Fraction


def peyre_constant(
    J_est: Union[DensityEstimate, Real],
    local_factors: Sequence[Tuple[int, Real]],
    fan: KleinschmidtFan,
    d1: int,
    d2: int,
) -> PeyreBreakdown:
    """sigma = (1/4) J prod sigma'_p prod (1 - p^{-b2}), and alpha beta tau_inf prod tau_p.

    Both routes run in exact rationals from the same inputs (J is taken at
    its exact binary value), so they agree exactly; `agree` records the
    comparison after rounding both to float.
    """
    if not local_factors:
        raise ValueError("need at least one local factor")
    if not isinstance(J_est, DensityEstimate):
        J_est = DensityEstimate(J_est, (), False, None)
    b1, b2 = fan.betas(d1, d2)
    if b1 < 1 or b2 < 1:
        raise ValueError(f"height exponents must be positive, got ({b1}, {b2})")
    J = _exact(J_est.value)
    primes = tuple(int(p) for p, _ in local_factors)
    if len(set(primes)) != len(primes):
        raise ValueError("repeated prime in local factors")

    prod_sigma = Fraction(1)
    prod_conv = Fraction(1)
    for p, s in local_factors:
        prod_sigma *= _exact(s)
        prod_conv *= 1 - Fraction(1, p**b2)
    route1 = Fraction(1, 4) * J * prod_sigma * prod_conv

    alpha = Fraction(1, b1 * b2)
    beta_cohom = 1
    tau_inf = Fraction(b1 * b2, 4) * J
    prod_tau = Fraction(1)
    for p, s in local_factors:
        prod_tau *= (1 - Fraction(1, p**b2)) * _exact(s)
    route2 = alpha * beta_cohom * tau_inf * prod_tau

    r1, r2 = float(route1), float(route2)
    return PeyreBreakdown(alpha, beta_cohom, J_est, prod_sigma, primes, r1, r2, r1 == r2, float(tau_inf), prod_conv)


# ---------------------------------------------------------------------------
# regime diagnostics


@dataclass(frozen=True)
class RegimeDiagnostics:
    d_tilde: int
    K: float
    K1: Optional[float]
    K2: Optional[float]
    m_required: Optional[float]
    b1_opt: Optional[float]
    u1_opt: Optional[float]
    mu: Optional[int]
    lam: Optional[int]
    r_ok: bool
    applies: bool
    failures: Tuple[str, ...] = field(default=())
    eps: float = 1e-6
    dims: Tuple[int, int] = (0, 0)

    def summary(self) -> str:
        lines = [
            f"d_tilde={self.d_tilde} K={self.K:.6g} K1={_fmt(self.K1)} K2={_fmt(self.K2)}",
            f"m_required={_fmt(self.m_required)} mu={self.mu} lambda={self.lam} dims={self.dims} eps={self.eps:g}",
            f"applies={self.applies}",
        ]
        lines += [f"fails: {f}" for f in self.failures]
        return "\n".join(lines)


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6g}"


def _minimize(fun, lo: float, hi: float, points: int = 20001) -> Tuple[float, float]:
    """Grid minimum of fun over the open interval (lo, hi), refined once around the best node."""
    xs = np.linspace(lo, hi, points)[1:]
    vals = [fun(x) for x in xs]
    i = int(np.argmin(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, len(xs) - 1)]
    fine = np.linspace(a, b, 2001)
    fv = [fun(x) for x in fine]
    j = int(np.argmin(fv))
    if fv[j] < vals[i]:
        return float(fine[j]), float(fv[j])
    return float(xs[i]), float(vals[i])


def _thresholds(d1: int, d2: int, delta: float):
    """(m1, b1, m2, u1) from the two one-dimensional minimizations; m2/u1 use the d2 = 1 variant when d2 = 1."""
    dt = d1 + d2 - 2
    two_dt = 2.0**dt

    def g1(b):
        return 5 * (d1 - 1) * (4 * d2 / b + 2 * delta) / (1 - 5 * d2 / b - delta)

    def g1p(b):
        return 5 * (d1 - 1) * (10 * d2 / (3 * b) + 2 * delta) / (1 - 5 * d2 / b - delta)

    def f1(b):
        c = math.ceil(b * d1 + d2 + delta)
        return max(
            two_dt * (b * d1 + d2),
            two_dt * (5 * b + 2) * (dt + 1),
            2 ** (d1 - 1) * (4 * (d1 - 1) + 2 * g1(b) + c),
            2 ** (d1 - 1) * (7 * (d1 - 1) + 3 * g1p(b) + c),
        )

    def g2(u):
        return 5 * (d2 - 1) * (3 * d1 / u + 2 * delta) / (1 - 5 * d1 / u - delta)

    def f2(u):
        return max(
            two_dt * (d1 + u * d2),
            7 * two_dt * (dt + 1),
            2 ** (d2 - 1) * (2 * (d2 - 1) + g2(u) + math.ceil(d1 + u * d2 + delta)),
        )

    lo_b = 5 * d2 / (1 - delta)
    b1, m1 = _minimize(f1, lo_b, 40 * d2)
    if d2 == 1:
        u1 = d1 + delta
        m2 = 7 * d1 * 2 ** (d1 - 1)
        lam = math.ceil(d1 + u1 + delta)
    else:
        lo_u = 5 * d1 / (1 - delta)
        u1, m2 = _minimize(f2, lo_u, 40 * d1)
        lam = math.ceil(d1 + u1 * d2 + delta)
    mu = math.ceil(b1 * d1 + d2 + delta)
    return m1, b1, m2, u1, mu, lam


def check_hypotheses(
    fan: KleinschmidtFan,
    d1: int,
    d2: int,
    dimV1: int = 0,
    dimV2: int = 0,
    eps: float = 1e-6,
) -> RegimeDiagnostics:
    """Evaluate K, K1, K2, the variable-count threshold and r >= 6 d1 - 3.

    The threshold is max(m1, m2) from the two minimizations over b > 5 d2
    and u > 5 d1 (with m2 = 7 d1 2^{d1-1} when d2 = 1); delta is taken equal
    to eps.  Requires d1 >= 2 and d2 >= 1 for the threshold to be defined.
    """
    n, r = fan.n, fan.r
    dt = d1 + d2 - 2
    dmax = max(dimV1, dimV2)
    K = (n + 2 - dmax - eps) / 2.0**dt
    failures: List[str] = []
    r_ok = r >= 6 * d1 - 3
    if d1 < 2 or d2 < 1:
        failures.append(f"d1 >= 2 and d2 >= 1 (have d1={d1}, d2={d2})")
        if not r_ok:
            failures.append(f"r >= 6 d1 - 3 (have r={r}, need {6 * d1 - 3})")
        return RegimeDiagnostics(dt, K, None, None, None, None, None, None, None, r_ok, False, tuple(failures), eps, (dimV1, dimV2))
    m1, b1, m2, u1, mu, lam = _thresholds(d1, d2, eps)
    m_req = max(m1, m2)
    K1 = (n + 2 - dimV1 - mu) / 2.0 ** (d1 - 1)
    K2 = (n + 2 - dimV2 - lam) / 2.0 ** (d2 - 1)
    if not n + 2 - dmax > m_req:
        failures.append(f"n + 2 - max(dim V1*, dim V2*) > m_required ({n + 2 - dmax} <= {m_req:.6g})")
    if not r_ok:
        failures.append(f"r >= 6 d1 - 3 (have r={r}, need {6 * d1 - 3})")
    return RegimeDiagnostics(
        dt, K, K1, K2, m_req, b1, u1, mu, lam, r_ok, not failures, tuple(failures), eps, (dimV1, dimV2)
    )


# ---------------------------------------------------------------------------
# end-to-end report


DENSITY_P_HEADER = ("p", "N", "M", "Mstar", "density", "stabilized")
DENSITY_INF_HEADER = ("eps", "samples", "estimate", "stderr", "seed")


def end_to_end_report(config, out_dir: str, workers: Optional[int] = None) -> Dict[str, str]:
    """Counts over the B grid, local and real densities, the constant, the fit and the regime check.

    Writes counts.csv, densities_p.csv, density_inf.csv, constant.csv and
    report.txt into out_dir and returns their paths.
    """
    import os

    from ._io import COUNT_HEADER, count_rows, write_csv
    from .arch import estimate_J, slab_schedule
    from .counting import CountSeries, count_N_U_series
    from .hypersum import fit_BlogB
    from .padic import density_table, singular_series

    workers = config.workers if workers is None else workers
    form = config.form()
    fan = config.fan()
    dens = config.density
    os.makedirs(out_dir, exist_ok=True)
    paths: Dict[str, str] = {}

    grid = config.B_grid.grid()
    results = count_N_U_series(form, grid, config.openset_id, config.caps(), workers)
    rows = count_rows(results)
    paths["counts"] = write_csv(os.path.join(out_dir, "counts.csv"), COUNT_HEADER, rows)

    table = density_table(form, dens.p_max, dens.N_max)
    paths["densities_p"] = write_csv(os.path.join(out_dir, "densities_p.csv"), DENSITY_P_HEADER, table)
    S_trunc, S_conv = singular_series(form, dens.p_max, dens.N_max)

    slab_rows = slab_schedule(form, dens.eps, dens.samples, dens.seed, workers)
    paths["density_inf"] = write_csv(os.path.join(out_dir, "density_inf.csv"), DENSITY_INF_HEADER, slab_rows)
    slab = slab_rows[0]
    J_slab = DensityEstimate(slab["estimate"], (slab["eps"], slab["samples"]), False, slab["stderr"])
    osc = None
    if form.num_vars <= 6:
        osc = estimate_J(form, dens.phi, dens.beta_grid, dens.quad_grid)

    factors = [(p, s) for p, s, _ in S_trunc.history]
    if factors:
        peyre = peyre_constant(J_slab, factors, fan, config.d1, config.d2)
    else:
        peyre = None
    const_rows = []
    if peyre is not None:
        const_rows.append(
            {
                "alpha": peyre.alpha,
                "beta": peyre.beta_cohom,
                "J": float(J_slab.value),
                "J_stderr": J_slab.stderr,
                "local_product": peyre.local_product,
                "convergence_factor": peyre.beta_factor,
                "sigma_route1": peyre.sigma_route1,
                "sigma_route2": peyre.sigma_route2,
                "agree": peyre.agree,
            }
        )
    paths["constant"] = write_csv(
        os.path.join(out_dir, "constant.csv"),
        ("alpha", "beta", "J", "J_stderr", "local_product", "convergence_factor", "sigma_route1", "sigma_route2", "agree"),
        const_rows,
    )

    series = CountSeries([(r.B, r.count) for r in results], form.digest(), config.openset_id, config.caps(), any(r.cap_hit for r in results))
    fit_line = "fit: skipped"
    ratio = None
    usable = [(b, c) for b, c in series.points if b > 1]
    try:
        fit = fit_BlogB(usable)
        fit_line = (
            f"fit: C_hat={fit.C_hat:.6g} (b={fit.b:.6g}, rms={fit.rms_residual:.6g}); "
            f"one-term C_hat={fit.C_hat_single:.6g} (rms={fit.rms_single:.6g})"
        )
        if peyre is not None and peyre.sigma_route1:
            ratio = fit.C_hat / peyre.sigma_route1
    except ValueError as exc:
        fit_line = f"fit: skipped ({exc})"

    regime = check_hypotheses(fan, config.d1, config.d2, config.dimV1, config.dimV2, config.regime_eps)
    lines = [
        "manin-lab report",
        f"instance: fan=({config.n},{config.r},{config.m}) d=({config.d1},{config.d2}) beta={form.betas()} form={form.pretty()}",
        f"form digest: {form.digest()}",
        f"open set: {config.openset_id}  caps: x_cap={config.x_cap} on_cap={config.on_cap}",
        f"counts: {len(results)} grid points, last B={results[-1].B} count={results[-1].count}" if results else "counts: none",
        f"singular series (p <= {dens.p_max}, N = {dens.N_max}): {float(S_trunc.value):.10g} stabilized={S_trunc.stabilized}",
        f"with convergence factors: {float(S_conv.value):.10g}",
        f"J slab (eps={dens.eps:g}, samples={dens.samples}, seed={dens.seed}): {J_slab.value:.6g} +/- {J_slab.stderr:.3g}",
        (f"J oscillatory (phi={dens.phi:g}, beta_grid={dens.beta_grid}, grid={dens.quad_grid}): {osc.value:.6g} +/- {osc.stderr:.3g}" if osc else "J oscillatory: skipped (more than 6 variables)"),
    ]
    if peyre is not None:
        lines.append(f"sigma: route1={peyre.sigma_route1:.10g} route2={peyre.sigma_route2:.10g} agree={peyre.agree}")
    lines.append(fit_line)
    lines.append(f"C_hat/sigma: {ratio:.6g}" if ratio is not None else "C_hat/sigma: n/a")
    lines.append("regime:")
    lines.append(regime.summary())
    lines.append("tolerances: " + ", ".join(f"{k}={v}" for k, v in sorted(vars(dens).items())) + f", regime_eps={config.regime_eps}")
    path = os.path.join(out_dir, "report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    paths["report"] = path
    return paths
