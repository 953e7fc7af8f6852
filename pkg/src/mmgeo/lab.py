"""Space generators, the pmGH comparison, and reproducible experiment suites."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FinitePmmSpace, cubic_tail_weight, point_space
from .entropyflow import (
    GraphDirichlet,
    apriori_check,
    contraction_check,
    ede_residual,
    jko_flow,
)
from .gromov import cyl_pushforward, cyl_equal, dpsi_bracket, pgw
from .spectral import (
    eigen_convergence,
    heat_flow_trace,
    heat_semigroup,
    laplacian,
    mosco_diagnostic,
    quadratic_form_check,
)
from .transport import min1_cost, w2, wc

__all__ = [
    "interval_grid",
    "gen_interval_with_atom",
    "gen_split_interval",
    "gen_reference_interval",
    "gen_circle",
    "circle_positions",
    "circle_cross_distance",
    "PmghReport",
    "pmgh_compare",
    "search_cyl_separating_pair",
    "ExperimentConfig",
    "SuiteResult",
    "run_suite",
    "SUITES",
    "max_workers",
    "CSV_SCHEMA_VERSION",
]

CSV_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# generators


def interval_grid(lo: float, hi: float, pitch: float):
    """Grid points lo, lo + pitch, ..., hi with trapezoid-rule Lebesgue weights."""
    cells = int(round((hi - lo) / pitch))
    if cells < 1 or abs(cells * pitch - (hi - lo)) > 1e-9 * max(1.0, hi - lo):
        raise ValueError("interval length must be a positive multiple of the pitch")
    x = lo + pitch * np.arange(cells + 1)
    w = np.full(cells + 1, pitch)
    w[[0, -1]] /= 2
    return x, w


def _line_space(x, m, base) -> FinitePmmSpace:
    return FinitePmmSpace(np.abs(x[:, None] - x[None, :]), m, base)


def gen_interval_with_atom(n: int) -> FinitePmmSpace:
    """[0, 1] on the grid of pitch 1/n with mass Leb / n plus an atom 1 - 1/n at the grid point nearest 1/2 (the base)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    x, w = interval_grid(0.0, 1.0, 1.0 / n)
    m = w / n
    atom = int(np.argmin(np.abs(x - 0.5)))
    m[atom] += 1.0 - 1.0 / n
    return _line_space(x, m, atom)


def gen_split_interval(n: int) -> FinitePmmSpace:
    """[0, 1 - 1/n] and [2, 2 + 1/n] with Lebesgue weights on the grid of pitch 1/(4n); base 0."""
    if n < 2:
        raise ValueError("n must be at least 2")
    h = 1.0 / (4 * n)
    x1, w1 = interval_grid(0.0, 1.0 - 1.0 / n, h)
    x2, w2_ = interval_grid(2.0, 2.0 + 1.0 / n, h)
    return _line_space(np.concatenate([x1, x2]), np.concatenate([w1, w2_]), 0)


def gen_reference_interval(pitch: float = 1.0 / 128) -> FinitePmmSpace:
    """[0, 1] with trapezoid Lebesgue weights, base 0; the limit of the split family."""
    x, w = interval_grid(0.0, 1.0, pitch)
    return _line_space(x, w, 0)


def circle_positions(n: int, circumference: float = 1.0) -> np.ndarray:
    return circumference * np.arange(n) / n


def circle_cross_distance(x, y, circumference: float = 1.0) -> np.ndarray:
    """Arc-length distances between two sets of positions on the same circle."""
    diff = np.abs(np.asarray(x)[:, None] - np.asarray(y)[None, :]) % circumference
    return np.minimum(diff, circumference - diff)


def gen_circle(n: int, total_mass: float = 1.0, circumference: float = 1.0):
    """n equally spaced points on a circle with arc-length metric, uniform mass, nearest-neighbour graph.

    With pitch h the edge weights are total_mass / (n h^2), so E(f) tends to
    1/2 of the Dirichlet integral against the uniform measure and the graph
    Laplacian has eigenvalues (2 - 2 cos(2 pi k / n)) / h^2.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    x = circle_positions(n, circumference)
    space = FinitePmmSpace(circle_cross_distance(x, x, circumference), np.full(n, total_mass / n), 0)
    h = circumference / n
    graph = GraphDirichlet.eps_graph(space, 1.5 * h)
    return space, graph


# ---------------------------------------------------------------------------
# pointed measured Gromov-Hausdorff comparison


@dataclass(frozen=True)
class PmghReport:
    lower: float
    upper: float
    lower_method: str
    upper_method: str
    map: tuple | None  # image index of each point of a inside the ball, or None
    exhaustive: bool


def _ball(d_base: np.ndarray, radius: float) -> np.ndarray:
    return np.flatnonzero(d_base <= radius * (1 + 1e-12))


def _pmgh_contradiction(a: FinitePmmSpace, b: FinitePmmSpace, eps: float) -> bool:
    """True when no base-preserving map can have distortion and density gap at most eps."""
    ra, rb = a.base_dist, b.base_dist
    rho = math.inf if eps == 0 else 1.0 / eps
    xa = _ball(ra, rho)
    rad_x = float(ra[xa].max())
    diam_x = float(a.dist[np.ix_(xa, xa)].max())
    # images lie in b: radius and diameter cannot shrink by more than eps
    if rad_x - eps > float(rb.max()) * (1 + 1e-12) or diam_x - eps > b.diameter * (1 + 1e-12):
        return True
    yb = _ball(rb, rho - eps) if rho - eps >= 0 else np.array([], dtype=int)
    if yb.size:
        rad_y = float(rb[yb].max())
        diam_y = float(b.dist[np.ix_(yb, yb)].max())
        # every such point is within eps of an image
        if rad_y > (rad_x + 2 * eps) * (1 + 1e-12) or diam_y > (diam_x + 3 * eps) * (1 + 1e-12):
            return True
    return False


def _pmgh_lower(a: FinitePmmSpace, b: FinitePmmSpace) -> float:
    """Infimum of eps at which the radius / diameter profile stops forbidding a map.

    The contradiction test is piecewise constant between breakpoints (ball
    radii crossing base distances, and the linear inequalities switching), so
    it is evaluated on each breakpoint and each gap midpoint.
    """
    ra, rb = a.base_dist, b.base_dist
    brk = {0.0}
    for r in np.concatenate([ra, rb]):
        if r > 0:
            brk.add(1.0 / r)
    profile = np.concatenate([ra, rb, [a.diameter, b.diameter]])
    for u, v in itertools.product(profile, repeat=2):
        for div in (1.0, 2.0, 3.0):
            val = (u - v) / div
            if val > 0:
                brk.add(float(val))
    pts = np.array(sorted(brk))
    # also breakpoints where 1/eps - eps crosses a base distance of b
    extra = [(-r + math.sqrt(r * r + 4)) / 2 for r in rb]
    pts = np.unique(np.concatenate([pts, extra]))
    for i, p in enumerate(pts):
        if not _pmgh_contradiction(a, b, p):
            return float(p)
        nxt = pts[i + 1] if i + 1 < pts.size else p * 2 + 1
        mid = 0.5 * (p + nxt)
        if not _pmgh_contradiction(a, b, mid):
            return float(p)
    return float(pts[-1])


def _map_score(a, b, xa, f, eps, cost) -> float:
    """Largest of distortion, density gap and the measure gap for the map xa -> f at scale eps."""
    da = a.dist[np.ix_(xa, xa)]
    db = b.dist[np.ix_(f, f)]
    distortion = float(np.max(np.abs(da - db), initial=0.0))
    rho = math.inf if eps == 0 else 1.0 / eps
    yb = _ball(b.base_dist, rho - eps) if rho - eps >= 0 else np.array([], dtype=int)
    density = float(np.max(np.min(b.dist[np.ix_(yb, np.unique(f))], axis=1), initial=0.0)) if yb.size else 0.0
    push = np.zeros(b.n)
    np.add.at(push, f, a.mass[xa])
    target = np.zeros(b.n)
    yb_all = _ball(b.base_dist, rho)
    target[yb_all] = b.mass[yb_all]
    ma, mb = push.sum(), target.sum()
    measure = abs(ma - mb) + (wc(b, push / ma, target / mb, cost) if ma > 0 and mb > 0 else 0.0)
    return max(distortion, density, measure)


def _greedy_map(a, b, xa) -> np.ndarray:
    order = xa[np.argsort(a.base_dist[xa], kind="stable")]
    f = {}
    for x in order:
        if x == a.base:
            f[x] = b.base
            continue
        done = np.array(list(f.keys()))
        imgs = np.array([f[k] for k in done])
        dist = np.max(np.abs(a.dist[x, done][None, :] - b.dist[:, imgs]), axis=1)
        used = np.zeros(b.n, dtype=bool)
        used[imgs] = True
        key = np.lexsort((np.abs(b.mass - a.mass[x]), used, np.round(dist, 12)))
        f[x] = int(key[0])
    return np.array([f[x] for x in xa])


def _local_search(a, b, xa, f, eps, cost, sweeps: int = 3):
    best = _map_score(a, b, xa, f, eps, cost)
    for _ in range(sweeps):
        improved = False
        for pos, x in enumerate(xa):
            if x == a.base:
                continue
            others = np.delete(np.arange(xa.size), pos)
            dist = np.max(np.abs(a.dist[x, xa[others]][None, :] - b.dist[:, f[others]]), axis=1, initial=0.0)
            for y in np.argsort(dist, kind="stable")[:5]:
                if y == f[pos]:
                    continue
                g = f.copy()
                g[pos] = y
                s = _map_score(a, b, xa, g, eps, cost)
                if s < best - 1e-15:
                    best, f, improved = s, g, True
        if not improved:
            break
    return f, best


def pmgh_compare(a: FinitePmmSpace, b: FinitePmmSpace, eps_grid: Sequence[float] | None = None, cap: int = 50_000) -> PmghReport:
    """Bracket the smallest eps admitting a base-preserving eps-isometry from a into b.

    The lower bound comes from radius and diameter profiles of the balls
    involved.  The upper bound is the first eps on the grid for which a map
    found by exhaustive search (when b.n ** (ball size - 1) <= cap) or by a
    greedy profile match plus local search has distortion, density gap and
    measure gap (mass gap plus W_c with c = min(d, 1)) all at most eps.
    """
    cost = min1_cost()
    lower = _pmgh_lower(a, b)
    if eps_grid is None:
        eps_grid = np.concatenate([[0.0], np.geomspace(1e-3, 4.0, 49)])
    grid = sorted(float(e) for e in eps_grid if e >= lower - 1e-15)
    exhaustive_all = True
    for eps in grid:
        rho = math.inf if eps == 0 else 1.0 / eps
        xa = _ball(a.base_dist, rho)
        base_pos = int(np.flatnonzero(xa == a.base)[0])
        rest = [i for i in range(xa.size) if i != base_pos]
        if b.n ** len(rest) <= cap:
            best_f, best = None, math.inf
            for combo in itertools.product(range(b.n), repeat=len(rest)):
                f = np.empty(xa.size, dtype=np.int64)
                f[base_pos] = b.base
                f[rest] = combo
                s = _map_score(a, b, xa, f, eps, cost)
                if s < best:
                    best, best_f = s, f
            f, score = best_f, best
        else:
            exhaustive_all = False
            f = _greedy_map(a, b, xa)
            f, score = _local_search(a, b, xa, f, eps, cost)
        if score <= eps + 1e-12:
            return PmghReport(lower, max(eps, lower), "radius/diameter profile", "map search", tuple(int(v) for v in f), exhaustive_all)
    return PmghReport(lower, math.inf, "radius/diameter profile", "map search (none found on grid)", None, exhaustive_all)


# ---------------------------------------------------------------------------
# cylinder separation search


def search_cyl_separating_pair(trials: int = 2000, max_points: int = 5, seed: int = 0):
    """Random small integer-distance spaces until one pair agrees at N = 2 but not at N = 3.

    Returns (a, b) or None when nothing was found within ``trials``.
    """
    rng = np.random.default_rng(seed)
    seen = {}
    for _ in range(trials):
        n = int(rng.integers(3, max_points + 1))
        pts = rng.integers(0, 3, size=(n, 2)).astype(float)
        if len({tuple(p) for p in pts}) < n:
            continue
        d = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
        s = FinitePmmSpace(d, np.ones(n), 0)
        c2 = cyl_pushforward(s, 2)
        key = (c2.atoms.tobytes(), c2.weights.tobytes())
        for other in seen.get(key, []):
            if not cyl_equal(cyl_pushforward(other, 3), cyl_pushforward(s, 3)):
                return other, s
        seen.setdefault(key, []).append(s)
    return None


# ---------------------------------------------------------------------------
# experiment suites


def max_workers() -> int:
    raw = os.environ.get("MMGEO_THREADS", "")
    try:
        val = int(raw)
    except ValueError:
        val = 0
    return max(1, val) if raw else max(1, min(4, os.cpu_count() or 1))


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str
    sizes: tuple | None = None  # None picks the suite's default ladder
    seed: int = 0
    out: str | None = None
    circle_n: int = 32
    taus: tuple = (1e-2, 1e-3)
    flow_T: float = 0.1
    random_starts: int = 20
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; choose from {sorted(SUITES)}")
        sizes = DEFAULT_SIZES[self.suite] if self.sizes is None else tuple(int(s) for s in self.sizes)
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        object.__setattr__(self, "sizes", sizes)

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


@dataclass(frozen=True)
class SuiteResult:
    name: str
    header: tuple
    rows: tuple
    summary: dict

    @property
    def passed(self) -> bool:
        return bool(self.summary.get("passed", True))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"# schema={CSV_SCHEMA_VERSION}", f"suite={self.name}"])
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(_jsonable(self.summary), sort_keys=True, indent=2) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def decays(values: Sequence[float], factor: float = 4.0) -> bool:
    """Monotone nonincreasing and last <= first / factor."""
    v = list(values)
    if not v:
        return True
    mono = all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(v, v[1:]))
    return mono and v[-1] <= v[0] / factor


def _parallel_map(fn, items):
    items = list(items)
    if max_workers() == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_workers()) as ex:
        return list(ex.map(fn, items))


def _suite_convergence(cfg: ExperimentConfig) -> SuiteResult:
    psi = cubic_tail_weight()
    ref = gen_reference_interval()
    one = point_space()

    def per_size(n):
        atom = gen_interval_with_atom(n)
        p_atom = pgw(atom, one, seed=cfg.seed)
        d_atom = dpsi_bracket(atom, one, psi, seed=cfg.seed)
        split = gen_split_interval(n)
        p_split = pgw(split, ref, seed=cfg.seed)
        gh = pmgh_compare(split, ref)
        return [
            ("interval_with_atom", n, "pgw", p_atom.lower, p_atom.upper),
            ("interval_with_atom", n, "dpsi", d_atom.lower, d_atom.upper),
            ("split_interval", n, "pgw", p_split.lower, p_split.upper),
            ("split_interval", n, "pmgh", gh.lower, gh.upper),
        ]

    rows = [r for block in _parallel_map(per_size, cfg.sizes) for r in block]

    def col(fam, quantity, idx):
        return [r[idx] for r in rows if r[0] == fam and r[2] == quantity]

    checks = {
        "interval_with_atom_pgw_decays": decays(col("interval_with_atom", "pgw", 4)),
        "interval_with_atom_dpsi_decays": decays(col("interval_with_atom", "dpsi", 4)),
        "split_interval_pgw_decays": decays(col("split_interval", "pgw", 4)),
        "split_interval_pmgh_lower_at_least_half": all(v >= 0.5 for v in col("split_interval", "pmgh", 3)),
    }
    summary = {"suite": "convergence", "sizes": list(cfg.sizes), "seed": cfg.seed, "checks": checks, "passed": all(checks.values())}
    return SuiteResult("convergence", ("family", "n", "quantity", "lower", "upper"), tuple(rows), summary)


def two_atom_start(n: int, i: int = 3, j: int | None = None) -> np.ndarray:
    j = n // 2 + 1 if j is None else j
    mu = np.zeros(n)
    mu[i] = mu[j] = 0.5
    return mu


def dirac_start(n: int, i: int) -> np.ndarray:
    mu = np.zeros(n)
    mu[i] = 1.0
    return mu


def flow_identification(space, graph, mu0, tau, check_times=(0.01, 0.05, 0.1)):
    """W2 gaps between the minimizing-movement flow and the exact heat flow at the given times."""
    T = max(check_times)
    trace = jko_flow(mu0, tau, round(T / tau) * tau, space, graph)
    heat = heat_flow_trace(laplacian(graph), space, mu0, trace.times)
    gaps = []
    for t in check_times:
        k = int(round(t / tau))
        gaps.append(w2(space, trace.states[k], heat.states[k]))
    return gaps


def _suite_flow(cfg: ExperimentConfig) -> SuiteResult:
    n = cfg.circle_n
    space, graph = gen_circle(n)
    op = laplacian(graph)
    rows = []
    summary_checks = {}
    start = two_atom_start(n)
    other = dirac_start(n, 0)

    id_gap = {}
    ede = {}
    for tau in cfg.taus:
        gaps = flow_identification(space, graph, start, tau)
        id_gap[tau] = max(gaps)
        for t, g in zip((0.01, 0.05, 0.1), gaps):
            rows.append(("identification", tau, t, "w2_gap", g))
        tr = jko_flow(start, tau, cfg.flow_T, space, graph)
        rep = ede_residual(tr)
        ede[tau] = rep.max_residual
        rows.append(("ede", tau, cfg.flow_T, "max_residual", rep.max_residual))
        rows.append(("ede", tau, cfg.flow_T, "upper_direction_violations", float(len(rep.violations))))
    fine, coarse = min(cfg.taus), max(cfg.taus)
    summary_checks["identification_gap_small"] = id_gap[fine] <= cfg.tol("identification", 5e-2)
    summary_checks["identification_gap_shrinks"] = id_gap[fine] <= id_gap[coarse]
    summary_checks["ede_residual_shrinks"] = ede[fine] < ede[coarse]

    tr_a = jko_flow(start, fine, cfg.flow_T, space, graph)
    tr_b = jko_flow(other, fine, cfg.flow_T, space, graph)
    h_a = heat_flow_trace(op, space, start, tr_a.times)
    h_b = heat_flow_trace(op, space, other, tr_a.times)
    c_jko = contraction_check(tr_a, tr_b, 0.0).max_violation
    c_heat = contraction_check(h_a, h_b, 0.0).max_violation
    rows.append(("contraction", fine, cfg.flow_T, "jko_violation", c_jko))
    rows.append(("contraction", fine, cfg.flow_T, "heat_violation", c_heat))
    summary_checks["contraction_heat"] = c_heat <= cfg.tol("contraction_heat", 1e-3)
    summary_checks["contraction_jko"] = c_jko <= cfg.tol("contraction_jko", 5e-3)

    rng = np.random.default_rng(cfg.seed)
    C = 1.0
    horizon = 1.0 / (8.0 * C)
    times = fine * np.arange(int(round(horizon / fine)) + 1)
    worst = math.inf
    for s in range(cfg.random_starts):
        mu0 = rng.dirichlet(np.full(n, 0.5))
        rep = apriori_check(heat_flow_trace(op, space, mu0, times), C=C)
        worst = min(worst, rep.speed_slack, rep.min_theorem_slack)
        rows.append(("apriori", fine, float(s), "speed_slack", rep.speed_slack))
        rows.append(("apriori", fine, float(s), "theorem_slack", rep.min_theorem_slack))
    summary_checks["apriori_nonnegative"] = worst >= 0
    summary = {
        "suite": "flow",
        "circle_n": n,
        "seed": cfg.seed,
        "identification_gap": {repr(k): v for k, v in id_gap.items()},
        "ede_max_residual": {repr(k): v for k, v in ede.items()},
        "checks": summary_checks,
        "passed": all(summary_checks.values()),
    }
    return SuiteResult("flow", ("check", "tau", "time_or_start", "quantity", "value"), tuple(rows), summary)


def circle_eigen_limit(j: int, circumference: float = 1.0) -> float:
    """j-th (1-based) eigenvalue of -d^2/dx^2 on the circle: 0, then pairs (2 pi k / L)^2."""
    k = j // 2
    return (2 * math.pi * k / circumference) ** 2


def _suite_mosco_spectral(cfg: ExperimentConfig) -> SuiteResult:
    ladder = (16, 32, 64, 128)
    rows = []
    checks = {}
    graphs = [gen_circle(n)[1] for n in ladder]
    table = eigen_convergence(graphs, 5)
    errs = {}
    for j in range(1, 6):
        limit = circle_eigen_limit(j)
        e = [abs(table.values[j - 1, c] - limit) for c in range(len(ladder))]
        errs[j] = e
        for n, val, err in zip(ladder, table.values[j - 1], e):
            rows.append(("eigen", n, j, "lambda", float(val)))
            rows.append(("eigen", n, j, "abs_error", float(err)))
    checks["lambda1_zero"] = all(abs(v) <= 1e-10 for v in table.values[0])
    checks["eigen_errors_decrease"] = all(all(b < a for a, b in zip(errs[j], errs[j][1:])) for j in range(2, 6))
    checks["eigen_final_relative_error"] = all(errs[j][-1] / circle_eigen_limit(j) <= 0.02 for j in range(2, 6))
    checks["minmax"] = bool(np.all(table.minmax_errors <= 1e-6))

    qf = max(quadratic_form_check(g, seed=cfg.seed) for g in graphs + [gen_circle(cfg.circle_n)[1]])
    rows.append(("quadratic_form", 0, 0, "max_residual", qf))
    checks["quadratic_form"] = qf <= 1e-10

    space, graph = gen_circle(cfg.circle_n)
    op = laplacian(graph)
    rng = np.random.default_rng(cfg.seed)
    worst_ratio = 0.0
    t = 0.1
    for trial in range(20):
        f = rng.standard_normal(space.n)
        exact = heat_semigroup(op, f, t, mode="spectral")
        bound_c = 2.0 * graph.energy(f)
        for k in (1, 4, 16, 64):
            err = op.norm(exact - heat_semigroup(op, f, t, k)) ** 2
            bound = bound_c * t / k
            worst_ratio = max(worst_ratio, err / bound)
            rows.append(("resolvent_bound", k, trial, "err_over_bound", err / bound))
    checks["resolvent_bound"] = worst_ratio <= 1.0

    if not cfg.sizes:
        raise ValueError("the Mosco diagnostic needs at least one refinement level")
    finest = max(cfg.sizes)
    fine_x = circle_positions(finest)
    g_inf = gen_circle(finest)[1]
    f_inf = np.cos(2 * math.pi * fine_x)
    levels = []
    for n in cfg.sizes:
        x = circle_positions(n)
        levels.append((gen_circle(n)[1], circle_cross_distance(fine_x, x)))
    rep = mosco_diagnostic(levels, (g_inf,), f_inf)
    for n, lv in zip(cfg.sizes, rep.levels):
        rows.append(("mosco", n, 0, "energy_gap", lv.energy_gap))
        rows.append(("mosco", n, 0, "plan_gap", lv.plan_gap))
    gaps = [lv.energy_gap for lv in rep.levels]
    checks["mosco_energy_gap_nonincreasing"] = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    checks["mosco_liminf_unflagged"] = not rep.liminf_flags
    summary = {"suite": "mosco-spectral", "seed": cfg.seed, "checks": checks, "passed": all(checks.values())}
    return SuiteResult("mosco-spectral", ("check", "n_or_k", "index", "quantity", "value"), tuple(rows), summary)


DEFAULT_SIZES = {"convergence": (4, 8, 16, 32), "flow": (), "mosco-spectral": (8, 16, 32, 64)}

SUITES = {
    "convergence": _suite_convergence,
    "flow": _suite_flow,
    "mosco-spectral": _suite_mosco_spectral,
}


def run_suite(config: ExperimentConfig) -> SuiteResult:
    """Run one suite; write <suite>.csv and <suite>.json under config.out when given."""
    try:
        if not config.sizes and config.suite == "convergence":
            result = SuiteResult("convergence", ("family", "n", "quantity", "lower", "upper"), (), {"suite": "convergence", "sizes": [], "seed": config.seed, "checks": {}, "passed": True})
        else:
            result = SUITES[config.suite](config)
    except Exception as exc:  # abort with context
        raise RuntimeError(f"suite {config.suite!r} failed: {exc}") from exc
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{result.name}.csv").write_text(result.csv_text())
        (out / f"{result.name}.json").write_text(result.json_text())
    return result


def read_suite_csv(path) -> tuple[tuple, list]:
    """Load a suite CSV back into (header, rows of strings); checks the schema line."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        meta = next(r)
        if not meta or meta[0] != f"# schema={CSV_SCHEMA_VERSION}":
            raise ValueError(f"unsupported CSV schema line {meta!r}")
        header = tuple(next(r))
        return header, [row for row in r]
