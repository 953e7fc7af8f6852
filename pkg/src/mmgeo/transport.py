"""Optimal transport between finite measures: exact plans, W2, bounded-cost Wc and Sinkhorn."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import ot
from scipy.special import logsumexp

from .core import FinitePmmSpace

__all__ = [
    "Coupling",
    "CostSpec",
    "quadratic_cost",
    "min1_cost",
    "tanh_cost",
    "cost_from_name",
    "optimal_coupling",
    "ot_value",
    "w2",
    "wc",
    "SinkhornResult",
    "sinkhorn",
    "tail_second_moment",
    "monotone_coupling",
]

MARGINAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Coupling:
    """Nonnegative plan with prescribed row sums ``mu`` and column sums ``nu``."""

    plan: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if plan.shape != (mu.size, nu.size):
            raise ValueError(f"plan shape {plan.shape} does not match marginals ({mu.size}, {nu.size})")
        if np.any(plan < 0):
            raise ValueError("plan has negative entries")
        scale = max(1.0, float(mu.sum()))
        if np.max(np.abs(plan.sum(1) - mu), initial=0.0) > MARGINAL_TOL * scale:
            raise ValueError("plan row sums do not match mu")
        if np.max(np.abs(plan.sum(0) - nu), initial=0.0) > MARGINAL_TOL * scale:
            raise ValueError("plan column sums do not match nu")
        for name, arr in (("plan", plan), ("mu", mu), ("nu", nu)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def support(self, tol: float = 0.0) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(self.plan > tol)
        return list(zip(ii.tolist(), jj.tolist()))

    def cost(self, cost: np.ndarray) -> float:
        return float(np.sum(self.plan * cost))


@dataclass(frozen=True)
class CostSpec:
    """Transport cost as a function of distance.

    ``kind`` is ``"quadratic"`` (c(d) = d^2) or ``"concave"`` (bounded concave
    c with c(0) = 0).  ``lipschitz`` is the slope of c at 0, used by lower
    bounds that need c(s) <= lipschitz * s.
    """

    kind: str
    func: Callable[[np.ndarray], np.ndarray]
    name: str
    lipschitz: float = math.inf
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    bound: float = math.inf

    def __call__(self, d):
        return self.func(np.asarray(d, dtype=float))

    def check(self, grid: np.ndarray | None = None) -> list[str]:
        if self.kind == "quadratic":
            return []
        grid = np.linspace(0.0, 20.0, 2001) if grid is None else np.asarray(grid, dtype=float)
        v = self(grid)
        issues = []
        if abs(float(self(np.array([0.0]))[0])) > 0:
            issues.append("c(0) != 0")
        if np.any(np.diff(v) < -1e-15):
            issues.append("not nondecreasing")
        mid = self((grid[:-1] + grid[1:]) / 2)
        if np.any(mid < (v[:-1] + v[1:]) / 2 - 1e-12):
            issues.append("not midpoint concave")
        if not v[-1] > 0:
            issues.append("constant")
        if not math.isfinite(self.bound) or v.max() > self.bound + 1e-12:
            issues.append("not bounded")
        return issues


def quadratic_cost() -> CostSpec:
    return CostSpec("quadratic", lambda d: d * d, "quadratic", math.inf, lambda d: 2 * d, math.inf)


def min1_cost() -> CostSpec:
    # the derivative at the kink is taken from the left; any value in [0,1] is a supergradient
    return CostSpec(
        "concave",
        lambda d: np.minimum(d, 1.0),
        "min1",
        1.0,
        lambda d: (np.asarray(d) <= 1.0).astype(float),
        1.0,
    )


def tanh_cost() -> CostSpec:
    return CostSpec("concave", np.tanh, "tanh", 1.0, lambda d: 1.0 - np.tanh(d) ** 2, 1.0)


def cost_from_name(name: str) -> CostSpec:
    table = {"min1": min1_cost, "tanh": tanh_cost, "quadratic": quadratic_cost}
    if name not in table:
        raise ValueError(f"unknown cost {name!r}; choose from {sorted(table)}")
    return table[name]()


def _check_measures(mu, nu, cost):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (mu.size, nu.size):
        raise ValueError(f"cost shape {cost.shape} does not match ({mu.size}, {nu.size})")
    if np.any(mu < 0) or np.any(nu < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(nu))):
        raise ValueError("measures must be finite and nonnegative")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise ValueError("cost must be finite and nonnegative")
    gap = abs(mu.sum() - nu.sum())
    if gap > 1e-8:
        raise ValueError(f"marginal mismatch: total masses differ by {gap:.3g}")
    return mu, nu, cost


def optimal_coupling(mu, nu, cost) -> tuple[Coupling, float]:
    """Exact optimal plan by network simplex.  Returns (coupling, <plan, cost>)."""
    mu, nu, cost = _check_measures(mu, nu, cost)
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    plan = np.zeros((mu.size, nu.size))
    if rows.size == 0:
        return Coupling(plan, mu, nu), 0.0
    a, b = mu[rows], nu[cols]
    # make totals agree to the last bit so the solver does not rescale
    b = b * (a.sum() / b.sum())
    sub = cost[np.ix_(rows, cols)]
    if rows.size == 1 or cols.size == 1:
        g = np.outer(a, b) / a.sum()
    else:
        g, log = ot.emd(a, b, np.ascontiguousarray(sub), numItermax=10_000_000, log=True)
        if log.get("result_code", 1) != 1:
            raise RuntimeError(f"network simplex failed: {log.get('warning')}")
    plan[np.ix_(rows, cols)] = np.maximum(g, 0.0)
    return _coupling_loose(plan, mu, nu), float(np.sum(plan * cost))


def _coupling_loose(plan, mu, nu) -> Coupling:
    try:
        return Coupling(plan, mu, nu)
    except ValueError:
        # inputs whose totals differ by up to 1e-8 produce plans matching rescaled marginals
        return Coupling(plan, plan.sum(1), plan.sum(0))


def ot_value(mu, nu, cost) -> float:
    return optimal_coupling(mu, nu, cost)[1]


def _dist_of(space_or_dist) -> np.ndarray:
    if isinstance(space_or_dist, FinitePmmSpace):
        return space_or_dist.dist
    return np.asarray(space_or_dist, dtype=float)


def _ordered(mu, nu):
    # solve every unordered pair in one fixed orientation so symmetry is exact
    mu = np.asarray(mu, dtype=float).reshape(-1)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    return (nu, mu) if nu.tobytes() < mu.tobytes() else (mu, nu)


def w2(space_or_dist, mu, nu) -> float:
    """Quadratic Wasserstein distance on a finite metric (space or distance matrix)."""
    d = _dist_of(space_or_dist)
    mu, nu = _ordered(mu, nu)
    return math.sqrt(max(ot_value(mu, nu, d * d), 0.0))


def wc(space_or_dist, mu, nu, cost: CostSpec | None = None) -> float:
    """Transport distance for a bounded concave cost of the distance (default min(d, 1))."""
    cost = min1_cost() if cost is None else cost
    if cost.kind != "concave":
        raise ValueError("wc expects a concave cost")
    d = _dist_of(space_or_dist)
    mu, nu = _ordered(mu, nu)
    return ot_value(mu, nu, cost(d))


def monotone_coupling(x, p, y, q) -> tuple[np.ndarray, float]:
    """Optimal plan between 1-D laws sum p_i delta_{x_i} and sum q_j delta_{y_j} for convex costs.

    North-west corner rule on sorted atoms.  Returns (plan indexed like the
    inputs, squared-distance cost).
    """
    x, p, y, q = (np.asarray(v, dtype=float) for v in (x, p, y, q))
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    plan = np.zeros((x.size, y.size))
    i = j = 0
    pr, qr = p[ox].copy(), q[oy].copy()
    while i < x.size and j < y.size:
        t = min(pr[i], qr[j])
        plan[ox[i], oy[j]] += t
        pr[i] -= t
        qr[j] -= t
        if pr[i] <= qr[j]:
            i += 1
        else:
            j += 1
    return plan, float(np.sum(plan * (x[:, None] - y[None, :]) ** 2))


# ---------------------------------------------------------------------------
# Sinkhorn


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    value: float  # transport cost <plan, cost> of the rounded, exactly feasible plan
    entropic_value: float  # regularized objective <P, C> + eps * KL(P | mu x nu) before rounding
    plan: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float  # before rounding


def _round_to_feasible(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a positive matrix onto the transport polytope (Altschuler, Weed, Rigollet)."""
    r = np.minimum(a / np.maximum(P.sum(1), 1e-300), 1.0)
    P = P * r[:, None]
    c = np.minimum(b / np.maximum(P.sum(0), 1e-300), 1.0)
    P = P * c[None, :]
    ea = a - P.sum(1)
    eb = b - P.sum(0)
    tot = ea.sum()
    if tot > 0:
        P = P + np.outer(ea, eb) / tot
    return np.maximum(P, 0.0)


def sinkhorn(mu, nu, cost, eps: float, max_iter: int = 100_000, tol: float = 1e-12) -> SinkhornResult:
    """Log-domain Sinkhorn with a final rounding step that makes the plan exactly feasible."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    mu, nu, cost = _check_measures(mu, nu, cost)
    rows, cols = np.flatnonzero(mu > 0), np.flatnonzero(nu > 0)
    plan = np.zeros((mu.size, nu.size))
    if rows.size == 0:
        return SinkhornResult(0.0, 0.0, plan, True, 0, 0.0)
    a, b = mu[rows], nu[cols]
    b = b * (a.sum() / b.sum())
    C = cost[np.ix_(rows, cols)]
    la, lb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    # Warm-started eps schedule: near-permutation plans make plain iterations
    # converge only like 1/k at small eps.
    span = float(C.max() - C.min())
    schedule = [eps]
    while schedule[-1] < span:
        schedule.append(schedule[-1] * 4.0)
    converged = False
    it = 0
    err = math.inf
    for stage, e in enumerate(reversed(schedule)):
        last = stage == len(schedule) - 1
        stage_tol = tol if last else max(tol, 1e-6)
        for _ in range(max_iter - it):
            it += 1
            f = e * (la - logsumexp((g[None, :] - C) / e, axis=1))
            g = e * (lb - logsumexp((f[:, None] - C) / e, axis=0))
            if it % 10 == 0 or it == max_iter:
                logP = (f[:, None] + g[None, :] - C) / e
                err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - a).sum())
                if err <= stage_tol:
                    converged = last
                    break
        if it >= max_iter:
            break
    logP = (f[:, None] + g[None, :] - C) / eps
    P = np.exp(logP)
    err = float(np.abs(P.sum(1) - a).sum() + np.abs(P.sum(0) - b).sum())
    kl = float(np.sum(P * (logP - la[:, None] - lb[None, :])) - P.sum() + a.sum())
    entropic = float(np.sum(P * C)) + eps * kl
    R = _round_to_feasible(P, a, b)
    plan[np.ix_(rows, cols)] = R
    return SinkhornResult(float(np.sum(R * C)), entropic, plan, converged, it, err)


def tail_second_moment(space: FinitePmmSpace, mu, R: float) -> float:
    """sum over points with d(., base) > R of d(., base)^2 mu."""
    if R < 0:
        raise ValueError("R must be nonnegative")
    mu = np.asarray(mu, dtype=float)
    r = space.base_dist
    mask = r > R
    return float(np.sum(r[mask] ** 2 * mu[mask]))
