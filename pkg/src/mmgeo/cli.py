"""Command-line interface: ``mmgeo <subcommand> ...``.

Spaces are read from the JSON space format; mass vectors from .json lists,
.npy arrays or whitespace/comma separated text.  Results go to stdout or
``--out`` as JSON (sorted keys) or CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import cubic_tail_weight, constant_weight, gaussian_weight, load_space, validate
from .entropyflow import GraphDirichlet, jko_flow
from .gromov import cyl_discrepancy, cyl_equal, cyl_pushforward, dpsi_bracket, pgw, pgw_fm, reconstruction_test
from .lab import ExperimentConfig, SUITES, circle_cross_distance, circle_positions, gen_circle, pmgh_compare, run_suite
from .spectral import eigen_convergence, heat_semigroup, laplacian, mosco_diagnostic, spectrum
from .transport import cost_from_name, sinkhorn, w2, wc


def load_vector(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".json":
        return np.asarray(json.loads(p.read_text()), dtype=float)
    if p.suffix == ".npy":
        return np.load(p).astype(float)
    return np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None, dtype=float).ravel()


def _psi(spec: str):
    if spec == "const":
        return constant_weight()
    if spec == "cubic-tail":
        return cubic_tail_weight()
    if spec.startswith("gauss:"):
        return gaussian_weight(float(spec.split(":", 1)[1]))
    raise argparse.ArgumentTypeError(f"unknown weight {spec!r}")


def _k_range(spec: str | None):
    if spec is None:
        return None, None
    lo, hi = spec.split(":")
    return int(lo), int(hi)


def _bracket(b) -> dict:
    return {"lower": b.lower, "upper": b.upper, "lower_method": b.lower_method, "upper_method": b.upper_method}


def _graph(space, eps, dim):
    return GraphDirichlet.eps_graph(space, eps, dim)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(args, record=None, header=None, rows=None) -> None:
    if args.format == "csv" and rows is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        text = buf.getvalue()
    else:
        if record is None:
            record = {"columns": list(header), "rows": [list(r) for r in rows]}
        text = json.dumps(_clean(record), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    rep = validate(load_space(args.space), rel_slack=args.tol if args.tol is not None else 1e-9)
    _emit(args, {"ok": rep.ok, "truncated": rep.truncated, "violations": [{"kind": v.kind, "indices": list(v.indices), "detail": v.detail} for v in rep.violations]})
    return 0 if rep.ok else 1


def cmd_transport(args) -> int:
    space = load_space(args.space)
    mu, nu = load_vector(args.mu), load_vector(args.nu)
    if args.cmd == "w2":
        rec = {"w2": w2(space, mu, nu)}
    elif args.cmd == "wc":
        rec = {"wc": wc(space, mu, nu, cost_from_name(args.cost)), "cost": args.cost}
    else:
        res = sinkhorn(mu, nu, space.dist**2, args.eps)
        rec = {"value": res.value, "entropic_value": res.entropic_value, "converged": res.converged, "iterations": res.iterations, "marginal_error": res.marginal_error, "eps": args.eps}
    _emit(args, rec)
    return 0


def cmd_dpsi(args) -> int:
    a, b = load_space(args.a), load_space(args.b)
    br = dpsi_bracket(a, b, _psi(args.psi), seeds=args.seeds, seed=args.seed)
    _emit(args, {"dpsi": _bracket(br), "psi": args.psi})
    return 0


def cmd_pgw(args) -> int:
    a, b = load_space(args.a), load_space(args.b)
    cost = cost_from_name(args.cost)
    if args.fm:
        br = pgw_fm(a, b, mode=args.mode, cost=cost, seeds=args.seeds, seed=args.seed)
        _emit(args, {"pgw_fm": _bracket(br)})
        return 0
    k_min, k_max = _k_range(args.k_range)
    res = pgw(a, b, k_min, k_max, per_k_mode=args.mode, cost=cost, seeds=args.seeds, seed=args.seed)
    rec = {"pgw": _bracket(res.bracket), "tail": res.tail, "terms": [{"k": k, "weight": w, "lower": t.lower, "upper": t.upper} for k, w, t in res.terms]}
    _emit(args, rec)
    return 0


def cmd_cyl(args) -> int:
    a, b = load_space(args.a), load_space(args.b)
    rec = {
        "N": args.N,
        "equal": cyl_equal(cyl_pushforward(a, args.N, max_order=args.N), cyl_pushforward(b, args.N, max_order=args.N)),
        "discrepancy": cyl_discrepancy(a, b, args.N, cost_from_name(args.cost), max_order=args.N),
    }
    _emit(args, rec)
    return 0


def cmd_recon(args) -> int:
    a, b = load_space(args.a), load_space(args.b)
    r = reconstruction_test(a, b, args.n_max)
    _emit(args, {"cyl_equal": r.cyl_equal, "first_difference": r.first_difference, "checked_up_to": r.checked_up_to, "isomorphism": r.isomorphism})
    return 0


def _start(spec: str, n: int) -> np.ndarray:
    if spec == "uniform":
        return np.full(n, 1.0 / n)
    if spec.startswith("dirac:"):
        mu = np.zeros(n)
        mu[int(spec.split(":", 1)[1])] = 1.0
        return mu
    mu = load_vector(spec)
    return mu / mu.sum()


def cmd_jko(args) -> int:
    space = load_space(args.space)
    graph = _graph(space, args.eps_graph, args.dim)
    trace = jko_flow(_start(args.start, space.n), args.tau, args.T, space, graph)
    _emit(args, header=("time", "entropy", "speed", "fisher", "residual"), rows=trace.rows())
    return 0


def cmd_heat(args) -> int:
    space = load_space(args.space)
    op = laplacian(_graph(space, args.eps_graph, args.dim))
    out = heat_semigroup(op, load_vector(args.f), args.t, args.k_steps, args.mode)
    _emit(args, header=("index", "value"), rows=[(i, float(v)) for i, v in enumerate(out)])
    return 0


def cmd_spectrum(args) -> int:
    space = load_space(args.space)
    sp = spectrum(laplacian(_graph(space, args.eps_graph, args.dim)), args.k)
    if args.format == "csv":
        _emit(args, header=("j", "eigenvalue"), rows=[(j + 1, float(v)) for j, v in enumerate(sp.eigenvalues)])
    else:
        _emit(args, {"eigenvalues": sp.eigenvalues, "residual": sp.residual, "minmax_error": sp.minmax_error, "zero_multiplicity": sp.zero_multiplicity, "disconnected": sp.disconnected})
    return 0


def cmd_mosco(args) -> int:
    sizes = sorted(args.sizes)
    finest = sizes[-1]
    fine_x = circle_positions(finest)
    f_inf = np.cos(2 * np.pi * fine_x)
    levels = [(gen_circle(n)[1], circle_cross_distance(fine_x, circle_positions(n))) for n in sizes]
    rep = mosco_diagnostic(levels, (gen_circle(finest)[1],), f_inf)
    rows = [(n, lv.energy, lv.energy_gap, lv.norm_gap, lv.plan_gap) for n, lv in zip(sizes, rep.levels)]
    if args.format == "csv":
        _emit(args, header=("n", "energy", "energy_gap", "norm_gap", "plan_gap"), rows=rows)
    else:
        _emit(args, {"limit_energy": rep.limit_energy, "levels": [dict(zip(("n", "energy", "energy_gap", "norm_gap", "plan_gap"), r)) for r in rows], "liminf_flags": list(rep.liminf_flags), "note": rep.note})
    return 0


def cmd_eigconv(args) -> int:
    sizes = sorted(args.sizes)
    table = eigen_convergence([gen_circle(n)[1] for n in sizes], args.k)
    rows = [(j + 1, *[float(v) for v in table.values[j]]) for j in range(args.k)]
    _emit(args, header=("j", *[f"n={n}" for n in sizes]), rows=rows)
    return 0


def cmd_pmgh(args) -> int:
    r = pmgh_compare(load_space(args.a), load_space(args.b))
    _emit(args, {"lower": r.lower, "upper": r.upper, "lower_method": r.lower_method, "upper_method": r.upper_method, "exhaustive": r.exhaustive})
    return 0


def cmd_suite(args) -> int:
    tolerances = {}
    if args.tol is not None:
        tolerances = {"identification": args.tol}
    cfg = ExperimentConfig(args.name, sizes=tuple(args.sizes) if args.sizes is not None else None, seed=args.seed, out=args.out, tolerances=tolerances)
    result = run_suite(cfg)
    if not args.out:
        sys.stdout.write(result.csv_text() if args.format == "csv" else result.json_text())
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--out", default=None, help="output file (directory for suite)")
    common.add_argument("--format", choices=("csv", "json"), default="json")

    p = argparse.ArgumentParser(prog="mmgeo", description="Finite pointed metric measure space toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("validate", parents=[common])
    s.add_argument("--space", required=True)
    s.set_defaults(fn=cmd_validate)

    for name in ("w2", "wc", "sinkhorn"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--space", required=True)
        s.add_argument("--mu", required=True)
        s.add_argument("--nu", required=True)
        s.add_argument("--cost", choices=("min1", "tanh"), default="min1")
        s.add_argument("--eps", type=float, default=1e-2)
        s.set_defaults(fn=cmd_transport)

    def pair(s):
        s.add_argument("--a", required=True)
        s.add_argument("--b", required=True)

    s = sub.add_parser("dpsi", parents=[common])
    pair(s)
    s.add_argument("--psi", default="cubic-tail")
    s.add_argument("--seeds", type=int, default=8)
    s.set_defaults(fn=cmd_dpsi)

    s = sub.add_parser("pgw", parents=[common])
    pair(s)
    s.add_argument("--cost", choices=("min1", "tanh"), default="min1")
    s.add_argument("--k-range", default=None, help="k_min:k_max; automatic when omitted")
    s.add_argument("--mode", choices=("exact-tiny", "bracket"), default="bracket")
    s.add_argument("--seeds", type=int, default=8)
    s.add_argument("--fm", action="store_true", help="only the finite-mass distance, no dyadic sum")
    s.set_defaults(fn=cmd_pgw)

    s = sub.add_parser("cyl", parents=[common])
    pair(s)
    s.add_argument("--N", type=int, default=2)
    s.add_argument("--cost", choices=("min1", "tanh"), default="min1")
    s.set_defaults(fn=cmd_cyl)

    s = sub.add_parser("recon", parents=[common])
    pair(s)
    s.add_argument("--n-max", type=int, default=None)
    s.set_defaults(fn=cmd_recon)

    def graph_args(s):
        s.add_argument("--space", required=True)
        s.add_argument("--eps-graph", type=float, required=True)
        s.add_argument("--dim", type=int, default=1)

    s = sub.add_parser("jko", parents=[common])
    graph_args(s)
    s.add_argument("--start", default="uniform", help="dirac:i | uniform | vector file")
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--T", type=float, required=True)
    s.set_defaults(fn=cmd_jko)

    s = sub.add_parser("heat", parents=[common])
    graph_args(s)
    s.add_argument("--f", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--k-steps", type=int, default=16)
    s.add_argument("--mode", choices=("resolvent", "spectral"), default="resolvent")
    s.set_defaults(fn=cmd_heat)

    s = sub.add_parser("spectrum", parents=[common])
    graph_args(s)
    s.add_argument("--k", type=int, default=6)
    s.set_defaults(fn=cmd_spectrum)

    s = sub.add_parser("mosco", parents=[common], help="circle refinement Mosco diagnostic")
    s.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    s.set_defaults(fn=cmd_mosco)

    s = sub.add_parser("eigconv", parents=[common], help="circle refinement eigenvalue table")
    s.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    s.add_argument("--k", type=int, default=5)
    s.set_defaults(fn=cmd_eigconv)

    s = sub.add_parser("pmgh", parents=[common])
    pair(s)
    s.set_defaults(fn=cmd_pmgh)

    s = sub.add_parser("suite", parents=[common])
    s.add_argument("name", choices=sorted(SUITES))
    s.add_argument("--sizes", type=int, nargs="*", default=None)
    s.set_defaults(fn=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"mmgeo {args.cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
