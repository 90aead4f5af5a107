"""Command-line front end: `manin-lab <subcommand> --config instance.json [flags]`.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 cap
exhaustion, 64 usage error.  Failures print one line
`error: code=<c> kind=<kind> message=<text>` to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import List, Optional

from ._io import COUNT_HEADER, count_rows, write_csv
from .config import ConfigError, InstanceConfig, load_config

EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_USAGE = 64

SUBCOMMANDS = (
    "fan",
    "monomials",
    "count",
    "histogram",
    "density-p",
    "density-inf",
    "hypersum",
    "constant",
    "report",
    "check",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"error: code={code} kind={kind} message={message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="manin-lab", description="Bounded-height point counts and local densities.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    helps = {
        "fan": "rays, cones, Picard classes and fan validation",
        "monomials": "monomial basis of the bidegree (d1, d2)",
        "count": "bounded-height counts over the B grid",
        "histogram": "the table h_d(k, l)",
        "density-p": "M_p(N), M*_p(N) and local densities",
        "density-inf": "slab estimates of the real density",
        "hypersum": "hyperbola split and T1/T2 scheme",
        "constant": "the leading constant by both routes",
        "report": "full pipeline with report.txt",
        "check": "regime diagnostics",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="instance JSON file")
        p.add_argument("--out", default=None, help="output directory (default $MANIN_LAB_OUT or ./manin_out)")
        p.add_argument("--workers", type=int, default=None, help="worker processes")
        p.add_argument("--seed", type=int, default=None, help="overrides density.seed")
        p.add_argument("--cap-x", type=int, default=None, help="overrides caps.x_cap")
        if name == "count":
            p.add_argument("--method", choices=("direct", "moebius"), default="direct")
        if name == "histogram":
            p.add_argument("--d", type=int, default=1)
            p.add_argument("--P1", type=int, required=True)
            p.add_argument("--P2", type=int, required=True)
    return parser


def _apply_overrides(cfg: InstanceConfig, args) -> InstanceConfig:
    changes = {}
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        changes["workers"] = args.workers
    if args.cap_x is not None:
        changes["x_cap"] = args.cap_x
    if args.seed is not None:
        changes["density"] = dataclasses.replace(cfg.density, seed=args.seed)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _out_dir(args) -> str:
    out = args.out or os.environ.get("MANIN_LAB_OUT") or "manin_out"
    os.makedirs(out, exist_ok=True)
    return out


def _run(args, cfg: InstanceConfig, out: str) -> None:
    from .toric import anticanonical_class, bidegree_monomials, picard_class, validate_fan

    fan = cfg.fan()
    form = cfg.form()
    cmd = args.command

    if cmd == "fan":
        rows = []
        for i, ray in enumerate(fan.rays):
            c = picard_class(fan, i)
            rows.append({"ray": i, "name": fan.var_names()[i], "coords": " ".join(map(str, ray)), "class_a": c.a, "class_b": c.b})
        write_csv(os.path.join(out, "fan.csv"), ("ray", "name", "coords", "class_a", "class_b"), rows)
        v = validate_fan(fan)
        ac = anticanonical_class(fan)
        print(f"fan ({fan.n},{fan.r},{fan.m}): {len(fan.rays)} rays, {len(fan.max_cones)} maximal cones")
        print(f"anticanonical class: ({ac.a}, {ac.b})  betas: {fan.betas(cfg.d1, cfg.d2)}")
        print(f"unimodular={v.unimodular} coverage_misses={len(v.coverage_misses)} containment={v.containment_ok}")
    elif cmd == "monomials":
        mons = bidegree_monomials(fan, cfg.d1, cfg.d2)
        names = fan.var_names()
        rows = [dict(zip(names, e)) for e in mons]
        write_csv(os.path.join(out, "monomials.csv"), names, rows)
        print(f"{len(mons)} monomials of bidegree ({cfg.d1}, {cfg.d2})")
    elif cmd == "count":
        from .counting import count_moebius_series, count_N_U_series

        grid = cfg.B_grid.grid()
        if args.method == "direct":
            res = count_N_U_series(form, grid, cfg.openset_id, cfg.caps(), cfg.workers)
        else:
            res = count_moebius_series(form, grid, cfg.caps(), cfg.openset_id, cfg.workers)
        rows = count_rows(res)
        write_csv(os.path.join(out, "counts.csv"), COUNT_HEADER, rows)
        for r in res:
            print(f"B={r.B} count={r.count}")
    elif cmd == "histogram":
        from .counting import histogram_h

        hist = histogram_h(form, args.d, args.P1, args.P2, cfg.openset_id, cfg.workers)
        rows = [{"k": k, "l": l, "value": v} for (k, l), v in sorted(hist.items())]
        write_csv(os.path.join(out, "histogram.csv"), ("k", "l", "value"), rows)
        print(f"{len(rows)} nonzero cells, total {sum(hist.values())}")
    elif cmd == "density-p":
        from .padic import density_table, singular_series

        rows = density_table(form, cfg.density.p_max, cfg.density.N_max)
        write_csv(os.path.join(out, "densities_p.csv"), ("p", "N", "M", "Mstar", "density", "stabilized"), rows)
        s, t = singular_series(form, cfg.density.p_max, cfg.density.N_max)
        print(f"singular series truncated: {s.value} (~{float(s.value):.10g}); with convergence factors ~{float(t.value):.10g}")
    elif cmd == "density-inf":
        from .arch import estimate_J, slab_schedule

        d = cfg.density
        rows = slab_schedule(form, d.eps, d.samples, d.seed, cfg.workers)
        write_csv(os.path.join(out, "density_inf.csv"), ("eps", "samples", "estimate", "stderr", "seed"), rows)
        for r in rows:
            print(f"eps={r['eps']:g} estimate={r['estimate']:.6g} stderr={r['stderr']:.3g}")
        if form.num_vars <= 6:
            j = estimate_J(form, d.phi, d.beta_grid, d.quad_grid)
            print(f"J(phi={d.phi:g}) = {j.value:.6g} +/- {j.stderr:.3g}")
    elif cmd == "hypersum":
        _hypersum(cfg, form, out)
    elif cmd == "constant":
        from .arch import slab_sigma_inf
        from .assemble import peyre_constant
        from .padic import singular_series

        d = cfg.density
        s, _ = singular_series(form, d.p_max, d.N_max)
        J = slab_sigma_inf(form, d.eps, d.samples, d.seed, cfg.workers)
        factors = [(p, v) for p, v, _ in s.history]
        pb = peyre_constant(J, factors, fan, cfg.d1, cfg.d2)
        row = {
            "alpha": pb.alpha, "beta": pb.beta_cohom, "J": J.value, "J_stderr": J.stderr,
            "local_product": pb.local_product, "convergence_factor": pb.beta_factor,
            "sigma_route1": pb.sigma_route1, "sigma_route2": pb.sigma_route2, "agree": pb.agree,
        }
        write_csv(os.path.join(out, "constant.csv"), tuple(row), [row])
        print(f"sigma route1={pb.sigma_route1:.10g} route2={pb.sigma_route2:.10g} agree={pb.agree}")
    elif cmd == "report":
        from .assemble import end_to_end_report

        paths = end_to_end_report(cfg, out)
        with open(paths["report"], encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
    elif cmd == "check":
        from .assemble import check_hypotheses

        diag = check_hypotheses(fan, cfg.d1, cfg.d2, cfg.dimV1, cfg.dimV2, cfg.regime_eps)
        print(diag.summary())


def _hypersum(cfg: InstanceConfig, form, out: str) -> None:
    from .counting import histogram_hyperbola
    from .hypersum import SummationInstance, TableFunction, direct_sum, ones, scheme_sum

    h = cfg.hypersum
    b1, b2 = form.betas()
    if h.f == "ones":
        f = ones
    elif h.f == "histogram":
        f = TableFunction.from_dict(histogram_hyperbola(form, h.d, h.P, cfg.openset_id, cfg.workers))
    else:
        raise ConfigError(f"hypersum.f must be 'ones' or 'histogram', got {h.f!r}")
    inst = SummationInstance(f, b1, b2, h.d, h.mu)
    res = scheme_sum(inst, h.P, h.J_steps)
    row = {
        "P": h.P, "direct": direct_sum(inst, h.P), "A": res.sum_A, "B": res.sum_B, "box": res.box,
        "T1": res.T1, "T2": res.T2, "exact": res.exact, "C_hat": res.C_hat,
    }
    write_csv(os.path.join(out, "hypersum.csv"), tuple(row), [row])
    print(f"A+B+box={res.total} direct={row['direct']} T1+T2=A: {res.exact} C_hat={res.C_hat:.6g}")


def main(argv: Optional[List[str]] = None) -> int:
    from .counting import CapExhausted
    from .padic import ResidueCapExceeded

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return _fail(EXIT_USAGE, "usage", exc)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = _out_dir(args)
        _run(args, cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (CapExhausted, ResidueCapExceeded) as exc:
        return _fail(EXIT_CAP, "cap", exc)
    except (ValueError, ArithmeticError, OSError) as exc:
        return _fail(EXIT_OTHER, type(exc).__name__, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
