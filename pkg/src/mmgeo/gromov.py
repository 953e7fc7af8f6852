"""Distances between pointed metric measure spaces and intrinsic diagnostics.

Both distances take an infimum over isometric embeddings into a common space.
For finite spaces every such embedding restricts to a metric on the disjoint
union, determined by the cross block ``cross[i, j]`` of distances between the
two point sets.  Conversely every admissible cross block is realized by the
disjoint union itself.  So the infimum over embeddings equals the infimum over
admissible cross blocks, which is what is searched here.

A cross block X (n1 x n2) is admissible iff X >= 0 and, for all indices,
|X[i, j] - X[i2, j]| <= d1(i, i2) <= X[i, j] + X[i2, j] and the same with the
roles of the two spaces exchanged.  These are linear constraints, so the set
of admissible blocks is a polyhedron.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import (
    CutoffSpec,
    FinitePmmSpace,
    ValidationReport,
    WeightSpec,
    cutoff_rescale,
    default_cutoff,
    is_isomorphic,
    reweight,
    support_restrict,
    validate,
)
from .transport import CostSpec, Coupling, min1_cost, monotone_coupling, optimal_coupling

__all__ = [
    "GluedSpace",
    "DistanceBracket",
    "PgwResult",
    "CylMeasure",
    "ReconstructionResult",
    "glue_by_relation",
    "glue_by_coupling",
    "cross_constraints",
    "dpsi_upper",
    "dpsi_lower",
    "dpsi_bracket",
    "pgw_fm",
    "pgw",
    "dyadic_tail_weight",
    "default_k_range",
    "cyl_pushforward",
    "cyl_equal",
    "cyl_discrepancy",
    "reconstruction_test",
]

EXACT_TINY_CAP = 4


# ---------------------------------------------------------------------------
# gluing


@dataclass(frozen=True, eq=False)
class GluedSpace:
    """Two spaces glued along a cross-distance block."""

    a: FinitePmmSpace
    b: FinitePmmSpace
    cross: np.ndarray
    eta: float = 0.0

    def block_metric(self) -> np.ndarray:
        return np.block([[self.a.dist, self.cross], [self.cross.T, self.b.dist]])

    def as_space(self) -> FinitePmmSpace:
        """Disjoint union carrying both measures, based at the base of ``a``."""
        return FinitePmmSpace(self.block_metric(), np.concatenate([self.a.mass, self.b.mass]), self.a.base)

    def validate(self, rel_slack: float = 1e-9) -> ValidationReport:
        return validate(self.as_space(), rel_slack)


def _relation_distance(d1: np.ndarray, d2: np.ndarray, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    """D[i, j] = min over (p, q) in the relation of d1[i, p] + d2[q, j]."""
    by_p: dict[int, list[int]] = {}
    for p, q in pairs:
        by_p.setdefault(int(p), []).append(int(q))
    if not by_p:
        raise ValueError("relation must be nonempty")
    D = np.full((d1.shape[0], d2.shape[0]), np.inf)
    for p in sorted(by_p):
        g = d2[sorted(set(by_p[p]))].min(axis=0)
        np.minimum(D, d1[:, p, None] + g[None, :], out=D)
    return D


def _minimal_slack(d1: np.ndarray, d2: np.ndarray, D: np.ndarray) -> float:
    """Smallest eta >= 0 such that D + eta is an admissible cross block."""
    eta = 0.0
    for j in range(D.shape[1]):
        col = D[:, j]
        eta = max(eta, float(np.max(d1 - col[:, None] - col[None, :])) / 2.0)
    for i in range(D.shape[0]):
        row = D[i]
        eta = max(eta, float(np.max(d2 - row[:, None] - row[None, :])) / 2.0)
    return eta


def glue_by_relation(a: FinitePmmSpace, b: FinitePmmSpace, pairs: Iterable[tuple[int, int]]) -> GluedSpace:
    """Glue by declaring each related pair (p, q) to be at distance eta.

    The cross block is D + eta where D is the path distance through the
    relation.  D is 1-Lipschitz in each index, so only the lower constraints
    can fail, and eta is the least uniform shift repairing them.
    """
    D = _relation_distance(a.dist, b.dist, pairs)
    eta = _minimal_slack(a.dist, b.dist, D)
    return GluedSpace(a, b, D + eta, eta)


def glue_by_coupling(a: FinitePmmSpace, b: FinitePmmSpace, coupling, tol: float = 0.0) -> GluedSpace:
    """Glue along the support of a transport plan (a ``Coupling`` or plain matrix)."""
    plan = coupling.plan if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=float)
    if plan.shape != (a.n, b.n):
        raise ValueError(f"plan shape {plan.shape} does not match spaces ({a.n}, {b.n})")
    ii, jj = np.nonzero(plan > tol)
    return glue_by_relation(a, b, zip(ii.tolist(), jj.tolist()))


def cross_constraints(d1: np.ndarray, d2: np.ndarray):
    """Sparse inequality system A x <= rhs describing admissible cross blocks (x = X.ravel())."""
    n1, n2 = d1.shape[0], d2.shape[0]
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(entries, bound):
        nonlocal r
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        rhs.append(bound)
        r += 1

    for j in range(n2):
        for i, k in itertools.combinations(range(n1), 2):
            a, b = i * n2 + j, k * n2 + j
            add(((a, 1.0), (b, -1.0)), d1[i, k])
            add(((a, -1.0), (b, 1.0)), d1[i, k])
            add(((a, -1.0), (b, -1.0)), -d1[i, k])
    for i in range(n1):
        for j, k in itertools.combinations(range(n2), 2):
            a, b = i * n2 + j, i * n2 + k
            add(((a, 1.0), (b, -1.0)), d2[j, k])
            add(((a, -1.0), (b, 1.0)), d2[j, k])
            add(((a, -1.0), (b, -1.0)), -d2[j, k])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n1 * n2))
    return A, np.asarray(rhs)


class _CrossLP:
    """Linear minimization over admissible cross blocks, built once per pair of spaces."""

    def __init__(self, d1: np.ndarray, d2: np.ndarray):
        self.shape = (d1.shape[0], d2.shape[0])
        self.A, self.rhs = cross_constraints(d1, d2)
        # any admissible block can be clipped entrywise at this bound without loss
        self.upper = float(max(d1.max(initial=0.0), d2.max(initial=0.0))) * 2.0 + 1.0

    def minimize(self, weights: np.ndarray) -> np.ndarray | None:
        kwargs = {}
        if self.A.shape[0]:
            kwargs = {"A_ub": self.A, "b_ub": self.rhs}
        res = linprog(weights.ravel(), bounds=(0.0, self.upper), method="highs", **kwargs)
        if res.status != 0:
            return None
        X = res.x.reshape(self.shape)
        return _repair(X, self)

    @staticmethod
    def small_enough(n1: int, n2: int, budget: int = 20_000) -> bool:
        return n1 * n2 * (n1 + n2) <= budget


def _repair(X: np.ndarray, lp: _CrossLP) -> np.ndarray:
    """Remove LP round-off so the block is admissible to machine precision."""
    X = np.maximum(X, 0.0)
    if lp.A.shape[0]:
        viol = float(np.max(lp.A @ X.ravel() - lp.rhs))
        if viol > 0:
            X = X + viol
    return X


# ---------------------------------------------------------------------------
# brackets


@dataclass(frozen=True)
class DistanceBracket:
    lower: float
    upper: float
    lower_method: str = ""
    upper_method: str = ""
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.lower > self.upper + 1e-9:
            raise ValueError(f"bracket is inverted: lower {self.lower} > upper {self.upper}")

    @property
    def value(self) -> float:
        """Best available point value: the upper end (an attained gluing)."""
        return self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _canonical_pair(a: FinitePmmSpace, b: FinitePmmSpace):
    """Order a pair deterministically so the computation is the same for (a, b) and (b, a)."""
    return (b, a, True) if b.canonical_key() < a.canonical_key() else (a, b, False)


# ---------------------------------------------------------------------------
# generic cross-block search


@dataclass
class _Problem:
    d1: np.ndarray
    d2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    b1: int
    b2: int
    value: Callable[[np.ndarray], tuple[float, np.ndarray]]  # X -> (objective without log term, plan)
    step: Callable[[np.ndarray, np.ndarray], np.ndarray | None] | None = None  # (X, plan) -> improved X


def _trimmed_relations(pr: _Problem, plan: np.ndarray, levels: int = 6) -> list[list[tuple[int, int]]]:
    """Sub-relations of a plan's support, keeping pairs whose base distances nearly agree."""
    ii, jj = np.nonzero(plan > 0)
    base_pair = (pr.b1, pr.b2)
    if ii.size == 0:
        return [[base_pair]]
    gap = np.abs(pr.d1[pr.b1, ii] - pr.d2[pr.b2, jj])
    thresholds = np.unique(np.quantile(gap, np.linspace(0.0, 1.0, levels)))
    thresholds = np.unique(np.concatenate([[0.0], thresholds]))
    out = []
    seen = set()
    for t in thresholds:
        keep = gap <= t
        rel = sorted(set(zip(ii[keep].tolist(), jj[keep].tolist())) | {base_pair})
        key = tuple(rel)
        if key not in seen:
            seen.add(key)
            out.append(rel)
    return out


def _quantile_plan(pr: _Problem) -> np.ndarray:
    plan, _ = monotone_coupling(pr.d1[pr.b1], pr.p1, pr.d2[pr.b2], pr.p2)
    return plan


def _seed_relations(pr: _Problem, rng: np.random.Generator, n_random: int, witness) -> list[list[tuple[int, int]]]:
    base_pair = (pr.b1, pr.b2)
    seeds: list[list[tuple[int, int]]] = [[base_pair]]
    if witness is not None:
        seeds.append(sorted(set(witness) | {base_pair}))
    q = _quantile_plan(pr)
    seeds.extend(_trimmed_relations(pr, q))
    ii, jj = np.nonzero(q > 0)
    support = list(zip(ii.tolist(), jj.tolist()))
    for _ in range(n_random):
        keep = rng.random(len(support)) < 0.5
        seeds.append(sorted({p for p, k in zip(support, keep) if k} | {base_pair}))
    return seeds


def _cross_of(pr: _Problem, rel) -> np.ndarray:
    D = _relation_distance(pr.d1, pr.d2, rel)
    return D + _minimal_slack(pr.d1, pr.d2, D)


def _search(pr: _Problem, seeds: list, refine_iters: int, n_refine: int = 3):
    """Evaluate seed gluings, then alternate plan and cross updates from the best few."""
    evaluated = []
    seen = set()
    for rel in seeds:
        key = tuple(rel)
        if key in seen:
            continue
        seen.add(key)
        X = _cross_of(pr, rel)
        val, plan = pr.value(X)
        evaluated.append((val, len(evaluated), X, plan))
    evaluated.sort(key=lambda t: (t[0], t[1]))
    best_val, _, best_X, best_plan = evaluated[0]
    rounds = 0
    for val, _, X, plan in evaluated[:n_refine]:
        for _ in range(refine_iters):
            rounds += 1
            cand = []
            if pr.step is not None:
                Xs = pr.step(X, plan)
                if Xs is not None:
                    cand.append(Xs)
            for rel in _trimmed_relations(pr, plan):
                cand.append(_cross_of(pr, rel))
            improved = False
            for Xc in cand:
                vc, pc = pr.value(Xc)
                if vc < val - 1e-13:
                    val, X, plan, improved = vc, Xc, pc, True
            if not improved:
                break
        if val < best_val:
            best_val, best_X, best_plan = val, X, plan
    return best_val, best_X, best_plan, {"seeds": len(evaluated), "refine_rounds": rounds}


def _witness_pairs(a: FinitePmmSpace, b: FinitePmmSpace, cap: int = 10):
    if a.n != b.n or a.n > cap:
        return None
    res = is_isomorphic(a, b, tol=1e-9, max_support=cap)
    return sorted(res.witness.items()) if res.isomorphic else None


# ---------------------------------------------------------------------------
# weighted distance with quadratic transport


def _dpsi_parts(a: FinitePmmSpace, b: FinitePmmSpace, psi: WeightSpec):
    z1, ra = reweight(a, psi)
    z2, rb = reweight(b, psi)
    return abs(math.log(z1 / z2)), support_restrict(ra), support_restrict(rb)


def dpsi_lower(a: FinitePmmSpace, b: FinitePmmSpace, psi: WeightSpec) -> float:
    """Certified lower bound: log term plus W2 between the laws of the distance to the base.

    In any gluing, |d1(i, b1) - d2(j, b2)| <= X[i, j] + X[b1, b2], so by
    Minkowski the W2 distance between the two distance-to-base laws is at most
    W2 of the glued measures plus the base gap.
    """
    log_term, ra, rb = _dpsi_parts(a, b, psi)
    plan, _ = monotone_coupling(ra.base_dist, ra.mass, rb.base_dist, rb.mass)
    # round-off leftovers of the corner rule would inflate a lower bound through the sqrt
    plan[plan < 1e-14] = 0.0
    cost = float(np.sum(plan * (ra.base_dist[:, None] - rb.base_dist[None, :]) ** 2))
    return log_term + math.sqrt(cost)


def _dpsi_problem(ra: FinitePmmSpace, rb: FinitePmmSpace) -> _Problem:
    p1, p2 = ra.mass, rb.mass

    def value(X):
        coupling, v = optimal_coupling(p1, p2, X * X)
        return X[ra.base, rb.base] + math.sqrt(max(v, 0.0)), coupling.plan

    pr = _Problem(ra.dist, rb.dist, p1, p2, ra.base, rb.base, value)
    if _CrossLP.small_enough(ra.n, rb.n, budget=2_000):
        pr.step = _dpsi_convex_step(ra, rb)
    return pr


def _dpsi_convex_step(ra: FinitePmmSpace, rb: FinitePmmSpace):
    """For a fixed plan, minimize base gap + sqrt(sum plan X^2) over admissible blocks (an SOCP)."""
    import cvxpy as cp

    A, rhs = cross_constraints(ra.dist, rb.dist)
    n1, n2 = ra.n, rb.n
    x = cp.Variable(n1 * n2, nonneg=True)
    w = cp.Parameter(n1 * n2, nonneg=True)
    cons = [A @ x <= rhs] if A.shape[0] else []
    prob = cp.Problem(cp.Minimize(x[ra.base * n2 + rb.base] + cp.norm(cp.multiply(w, x), 2)), cons)
    lp = _CrossLP.__new__(_CrossLP)
    lp.A, lp.rhs, lp.shape = A, rhs, (n1, n2)

    def step(X, plan):
        w.value = np.sqrt(np.maximum(plan, 0.0)).ravel()
        try:
            prob.solve(solver="CLARABEL")
        except cp.error.SolverError:
            return None
        if x.value is None:
            return None
        return _repair(np.asarray(x.value).reshape(n1, n2), lp)

    return step


def dpsi_upper(
    a: FinitePmmSpace,
    b: FinitePmmSpace,
    psi: WeightSpec,
    seeds: int = 8,
    refine_iters: int = 20,
    seed: int = 0,
) -> float:
    """Upper bound on the weighted distance from the best gluing found by the multi-start search."""
    return dpsi_bracket(a, b, psi, seeds, refine_iters, seed).upper


def dpsi_bracket(
    a: FinitePmmSpace,
    b: FinitePmmSpace,
    psi: WeightSpec,
    seeds: int = 8,
    refine_iters: int = 20,
    seed: int = 0,
) -> DistanceBracket:
    a, b, _ = _canonical_pair(a, b)
    log_term, ra, rb = _dpsi_parts(a, b, psi)
    lower = dpsi_lower(a, b, psi)
    pr = _dpsi_problem(ra, rb)
    rng = np.random.default_rng(seed)
    rels = _seed_relations(pr, rng, seeds, _witness_pairs(ra, rb))
    val, X, plan, info = _search(pr, rels, refine_iters)
    upper = log_term + val
    info.update(cross=X, plan=plan, log_term=log_term)
    return DistanceBracket(min(lower, upper), upper, "distance-to-base law", "glued search", info)


# ---------------------------------------------------------------------------
# finite-mass distance with a bounded concave cost


def _pgw_lower(ra: FinitePmmSpace, rb: FinitePmmSpace, cost: CostSpec) -> float:
    """W_c between distance-to-base laws, scaled by min(1, 1/Lip c).

    With s the base gap, c(|d1(i,b1) - d2(j,b2)|) <= c(X[i,j]) + c(s) and
    c(s) <= Lip * s, so s + W_c(glued) >= min(1, 1/Lip) * W_c(laws).
    """
    gap = np.abs(ra.base_dist[:, None] - rb.base_dist[None, :])
    _, v = optimal_coupling(ra.mass, rb.mass, cost(gap))
    return v * min(1.0, 1.0 / cost.lipschitz) if cost.lipschitz > 0 else 0.0


def _pgw_problem(ra: FinitePmmSpace, rb: FinitePmmSpace, cost: CostSpec, with_lp: bool) -> _Problem:
    p1, p2 = ra.mass, rb.mass

    def value(X):
        coupling, v = optimal_coupling(p1, p2, cost(X))
        return X[ra.base, rb.base] + v, coupling.plan

    pr = _Problem(ra.dist, rb.dist, p1, p2, ra.base, rb.base, value)
    if with_lp and cost.derivative is not None:
        lp = _CrossLP(ra.dist, rb.dist)

        def step(X, plan):
            # the plan cost is concave in X: minimizing its linearization decreases it
            w = plan * cost.derivative(X)
            w[ra.base, rb.base] += 1.0
            return lp.minimize(w)

        pr.step = step
    return pr


def _partial_injections(n1: int, n2: int):
    for k in range(0, min(n1, n2) + 1):
        for rows in itertools.combinations(range(n1), k):
            for cols in itertools.permutations(range(n2), k):
                yield list(zip(rows, cols))


def pgw_fm(
    a: FinitePmmSpace,
    b: FinitePmmSpace,
    mode: str = "bracket",
    cost: CostSpec | None = None,
    seeds: int = 8,
    refine_iters: int = 20,
    seed: int = 0,
) -> DistanceBracket:
    """Finite-mass distance: |log mass ratio| + inf over gluings of (base gap + W_c of normalized measures).

    ``mode="exact-tiny"`` (supports of at most four points) starts the
    alternating search from every partial matching of the supports.
    ``mode="bracket"`` uses seeded gluings and reports a certified lower bound
    with the best upper bound found.
    """
    cost = min1_cost() if cost is None else cost
    if cost.kind != "concave":
        raise ValueError("pgw_fm needs a concave cost")
    if not (a.total_mass > 0 and b.total_mass > 0):
        raise ValueError("both spaces need positive total mass")
    if mode not in ("bracket", "exact-tiny"):
        raise ValueError(f"unknown mode {mode!r}")
    a, b, _ = _canonical_pair(a, b)
    sa, sb = support_restrict(a), support_restrict(b)
    if mode == "exact-tiny" and max(sa.n, sb.n) > EXACT_TINY_CAP:
        raise ValueError(
            f"exact-tiny mode accepts supports of at most {EXACT_TINY_CAP} points (got {sa.n} and {sb.n})"
        )
    log_term = abs(math.log(sa.total_mass / sb.total_mass))
    ra = sa.with_mass(sa.mass / sa.total_mass)
    rb = sb.with_mass(sb.mass / sb.total_mass)
    lower = log_term + _pgw_lower(ra, rb, cost)
    rng = np.random.default_rng(seed)
    if mode == "exact-tiny":
        pr = _pgw_problem(ra, rb, cost, with_lp=True)
        rels = [sorted(set(m) | {(ra.base, rb.base)}) for m in _partial_injections(ra.n, rb.n)]
        rels += _seed_relations(pr, rng, seeds, None)
        val, X, plan, info = _search(pr, rels, refine_iters, n_refine=4)
        method = "exact-tiny alternating search"
    else:
        pr = _pgw_problem(ra, rb, cost, with_lp=_CrossLP.small_enough(ra.n, rb.n))
        rels = _seed_relations(pr, rng, seeds, _witness_pairs(ra, rb))
        val, X, plan, info = _search(pr, rels, refine_iters)
        method = "glued search"
    upper = log_term + val
    info.update(cross=X, plan=plan, log_term=log_term)
    return DistanceBracket(min(lower, upper), upper, "distance-to-base law", method, info)


# ---------------------------------------------------------------------------
# dyadic sum over cutoffs


def dyadic_tail_weight(k_from: int, direction: str) -> float:
    """sum of 2^-|k| over k <= k_from ("below") or k >= k_from ("above")."""
    K = k_from if direction == "below" else -k_from
    # sum over k <= K of 2^-|k|
    if K <= 0:
        return 2.0 ** (K + 1)
    return 3.0 - 2.0 ** (-K)


def default_k_range(a: FinitePmmSpace, b: FinitePmmSpace) -> tuple[int, int] | None:
    """(k_lo, k_hi) outside which the cutoff spaces no longer change; None if both are single points."""
    rs = []
    for s in (a, b):
        r = s.base_dist[s.support]
        rs.append(r[r > 0])
    allr = np.concatenate(rs)
    if allr.size == 0:
        return None
    k_lo = math.floor(math.log2(float(allr.min()))) - 1
    k_hi = math.ceil(math.log2(float(allr.max())))
    return k_lo, k_hi


@dataclass(frozen=True)
class PgwResult:
    bracket: DistanceBracket
    terms: tuple  # (k, weight, DistanceBracket of the k-th term)
    tail: float  # truncation allowance included in bracket.upper

    @property
    def lower(self) -> float:
        return self.bracket.lower

    @property
    def upper(self) -> float:
        return self.bracket.upper


def pgw(
    a: FinitePmmSpace,
    b: FinitePmmSpace,
    k_min: int | None = None,
    k_max: int | None = None,
    per_k_mode: str = "bracket",
    cost: CostSpec | None = None,
    zeta: CutoffSpec | None = None,
    seeds: int = 8,
    refine_iters: int = 20,
    seed: int = 0,
) -> PgwResult:
    """Dyadic sum of 2^-|k| min(1, finite-mass distance of the k-th cutoffs).

    Without an explicit range, the cutoffs are constant below and above an
    automatically detected window, so the two infinite tails are summed
    exactly.  With an explicit ``[k_min, k_max]`` every omitted term is
    bounded by 1 and its weight is added to the upper bound.
    """
    zeta = default_cutoff() if zeta is None else zeta

    def term(k):
        return pgw_fm(cutoff_rescale(a, k, zeta), cutoff_rescale(b, k, zeta), per_k_mode, cost, seeds, refine_iters, seed)

    terms = []
    tail = 0.0
    if k_min is None and k_max is None:
        rng_k = default_k_range(a, b)
        if rng_k is None:
            t = term(0)
            terms.append((0, 3.0, t))
        else:
            k_lo, k_hi = rng_k
            for k in range(k_lo, k_hi + 1):
                if k == k_lo:
                    w = dyadic_tail_weight(k_lo, "below")
                elif k == k_hi:
                    w = dyadic_tail_weight(k_hi, "above")
                else:
                    w = 2.0 ** (-abs(k))
                terms.append((k, w, term(k)))
    else:
        if k_min is None or k_max is None or not k_min <= 0 <= k_max:
            raise ValueError("explicit range needs k_min <= 0 <= k_max")
        for k in range(k_min, k_max + 1):
            terms.append((k, 2.0 ** (-abs(k)), term(k)))
        tail = dyadic_tail_weight(k_min - 1, "below") + dyadic_tail_weight(k_max + 1, "above")
    lower = sum(w * min(1.0, t.lower) for _, w, t in terms)
    upper = sum(w * min(1.0, t.upper) for _, w, t in terms) + tail
    bracket = DistanceBracket(lower, upper, "per-k lower", "per-k upper + tail", {"tail": tail})
    return PgwResult(bracket, tuple(terms), tail)


# ---------------------------------------------------------------------------
# cylinder measures


@dataclass(frozen=True, eq=False)
class CylMeasure:
    """Law of the distance matrix of (base, x_2, ..., x_N) with x_i drawn from the mass.

    Atoms are stored in canonical order (lexicographic on the flattened matrix)
    with equal matrices merged, so two measures are equal iff the arrays are.
    """

    atoms: np.ndarray  # (K, N, N)
    weights: np.ndarray  # (K,)
    order: int

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.weights.size


def _canonicalize(G: np.ndarray, w: np.ndarray):
    K = G.shape[0]
    flat = G.reshape(K, -1)
    order = np.lexsort(np.vstack([w[None, :], flat.T[::-1]]))
    flat, w = flat[order], w[order]
    if K > 1:
        new = np.ones(K, dtype=bool)
        new[1:] = np.any(flat[1:] != flat[:-1], axis=1)
        starts = np.flatnonzero(new)
        w = np.add.reduceat(w, starts)
        flat = flat[starts]
    return flat.reshape(-1, G.shape[1], G.shape[2]), w


def cyl_pushforward(space: FinitePmmSpace, N: int, max_order: int = 3, max_atoms: int = 2_000_000) -> CylMeasure:
    """Push delta_base x m^(N-1) forward under the distance-matrix map."""
    if N < 1:
        raise ValueError("order N must be at least 1")
    if N > max_order:
        raise ValueError(f"order {N} exceeds the configured cap {max_order}")
    s = support_restrict(space)
    count = s.n ** (N - 1)
    if count > max_atoms:
        raise ValueError(f"{count} tuples exceed the atom cap {max_atoms}")
    grids = np.meshgrid(*([np.arange(s.n)] * (N - 1)), indexing="ij")
    idx = np.column_stack([np.full(count, s.base)] + [g.ravel() for g in grids]) if N > 1 else np.full((1, 1), s.base)
    G = s.dist[idx[:, :, None], idx[:, None, :]]
    w = np.ones(idx.shape[0])
    for c in range(1, N):
        w = w * s.mass[idx[:, c]]
    atoms, weights = _canonicalize(G, w)
    return CylMeasure(atoms, weights, N)


def cyl_equal(x: CylMeasure, y: CylMeasure, tol: float = 0.0) -> bool:
    if x.order != y.order or x.atoms.shape != y.atoms.shape:
        return False
    if tol == 0.0:
        return bool(np.array_equal(x.atoms, y.atoms) and np.array_equal(x.weights, y.weights))
    return bool(np.allclose(x.atoms, y.atoms, rtol=0, atol=tol) and np.allclose(x.weights, y.weights, rtol=0, atol=tol))


def cyl_discrepancy(a: FinitePmmSpace, b: FinitePmmSpace, N: int, cost: CostSpec | None = None, max_order: int = 3) -> float:
    """|log total-weight ratio| + W_c between the normalized cylinder laws (max-norm on matrices).

    A convergence diagnostic; no inequality with the pointed distances is claimed.
    """
    cost = min1_cost() if cost is None else cost
    a, b, _ = _canonical_pair(a, b)
    x, y = cyl_pushforward(a, N, max_order), cyl_pushforward(b, N, max_order)
    log_term = abs(math.log(x.total / y.total))
    fx, fy = x.atoms.reshape(len(x), -1), y.atoms.reshape(len(y), -1)
    ground = np.zeros((len(x), len(y)))
    for c in range(fx.shape[1]):
        np.maximum(ground, np.abs(fx[:, c, None] - fy[None, :, c]), out=ground)
    _, v = optimal_coupling(x.weights / x.total, y.weights / y.total, cost(ground))
    return log_term + v


@dataclass(frozen=True)
class ReconstructionResult:
    cyl_equal: bool
    first_difference: int | None  # smallest N where the cylinder laws differ
    checked_up_to: int
    isomorphism: str  # status from is_isomorphic


def reconstruction_test(
    a: FinitePmmSpace,
    b: FinitePmmSpace,
    N_max: int | None = None,
    tol: float = 1e-12,
    max_support: int = 10,
    max_atoms: int = 2_000_000,
) -> ReconstructionResult:
    """Compare cylinder laws for N = 1..N_max and decide isomorphism independently.

    Equality of all cylinder laws forces isomorphism; for finite supports of
    size n, orders up to n + 1 suffice, which is the default ``N_max`` (capped
    by ``max_atoms``).
    """
    n = max(support_restrict(a).n, support_restrict(b).n)
    if N_max is None:
        N_max = n + 1
        while N_max > 1 and n ** (N_max - 1) > max_atoms:
            N_max -= 1
    first = None
    for N in range(1, N_max + 1):
        x = cyl_pushforward(a, N, max_order=N_max, max_atoms=max_atoms)
        y = cyl_pushforward(b, N, max_order=N_max, max_atoms=max_atoms)
        if not cyl_equal(x, y, tol):
            first = N
            break
    iso = is_isomorphic(a, b, tol=max(tol, 1e-9), max_support=max_support)
    return ReconstructionResult(first is None, first, N_max, iso.status)
