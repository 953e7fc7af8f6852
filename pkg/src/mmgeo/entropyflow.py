"""Relative entropy, Fisher information and the minimizing-movement (JKO) entropy flow.

The Cheeger energy of a finite space is modeled by a graph Dirichlet form
E(f) = 1/2 sum over edges of w_ij (f_i - f_j)^2.  On a finite metric space
there are no nonconstant rectifiable curves, so a curve-based energy would
vanish identically; the graph form is the discrete stand-in, calibrated on
refining grids so that E(f) approximates 1/2 int |f'|^2 dm.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .core import FinitePmmSpace, exp_tilt
from .transport import optimal_coupling, w2

__all__ = [
    "GraphDirichlet",
    "FlowTrace",
    "JKOConvergenceError",
    "JKOReport",
    "entropy",
    "entropy_decomposition",
    "fisher",
    "slope_sup",
    "jko_step",
    "jko_flow",
    "EDEReport",
    "ede_residual",
    "ContractionReport",
    "contraction_check",
    "AprioriReport",
    "apriori_check",
    "I_K",
    "RecoveryResult",
    "recovery_sequence",
]

DENSITY_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# graph Dirichlet form


@dataclass(frozen=True, eq=False)
class GraphDirichlet:
    """Node masses plus undirected weighted edges (i < j)."""

    node_mass: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    weight: np.ndarray
    provenance: str = "explicit"

    def __post_init__(self):
        m = np.asarray(self.node_mass, dtype=float)
        i = np.asarray(self.edge_i, dtype=np.int64)
        j = np.asarray(self.edge_j, dtype=np.int64)
        w = np.asarray(self.weight, dtype=float)
        if np.any(m <= 0):
            raise ValueError("graph node masses must be strictly positive")
        if not (i.shape == j.shape == w.shape):
            raise ValueError("edge arrays must have equal length")
        if np.any(i == j):
            raise ValueError("self-loops are not allowed")
        if np.any(w < 0):
            raise ValueError("edge weights must be nonnegative")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if i.size and (lo.min() < 0 or hi.max() >= m.size):
            raise ValueError("edge index out of range")
        for name, arr in (("node_mass", m), ("edge_i", lo), ("edge_j", hi), ("weight", w)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n_comp, _ = self.components()
        if n_comp > 1:
            warnings.warn(f"graph has {n_comp} connected components", RuntimeWarning, stacklevel=3)

    @property
    def n(self) -> int:
        return self.node_mass.size

    @classmethod
    def from_weight_matrix(cls, node_mass, W, provenance: str = "explicit") -> "GraphDirichlet":
        W = sparse.triu(sparse.csr_matrix(W), k=1).tocoo()
        keep = W.data > 0
        return cls(node_mass, W.row[keep], W.col[keep], W.data[keep], provenance)

    @classmethod
    def eps_graph(cls, space: FinitePmmSpace, eps: float, dim: int = 1) -> "GraphDirichlet":
        """Connect points within distance eps; weights 2 dim m_i m_j / M2.

        M2 is the mass-averaged local second moment sum_{d_ij <= eps} m_j d_ij^2.
        For a linear function on a refining grid in ``dim`` dimensions this
        makes E(f) equal to 1/2 |grad f|^2 times the total mass.
        """
        m = space.mass
        if np.any(m <= 0):
            raise ValueError("eps-graph needs strictly positive masses (restrict to the support first)")
        d = space.dist
        adj = (d <= eps) & (d > 0)
        local = (adj * d**2) @ m
        m2 = float(local @ m / m.sum())
        if not m2 > 0:
            raise ValueError(f"eps={eps} connects no pairs")
        i, j = np.nonzero(np.triu(adj, k=1))
        w = 2.0 * dim * m[i] * m[j] / m2
        return cls(m, i, j, w, f"eps-graph(eps={eps:g}, dim={dim})")

    def weight_matrix(self) -> sparse.csr_matrix:
        W = sparse.coo_matrix((self.weight, (self.edge_i, self.edge_j)), shape=(self.n, self.n))
        return (W + W.T).tocsr()

    def degree(self) -> np.ndarray:
        return np.asarray(self.weight_matrix().sum(axis=1)).ravel()

    def components(self):
        return connected_components(self.weight_matrix(), directed=False)

    def energy(self, f) -> float:
        f = np.asarray(f, dtype=float)
        diff = f[self.edge_i] - f[self.edge_j]
        return 0.5 * float(np.sum(self.weight * diff * diff))


# ---------------------------------------------------------------------------
# entropy, Fisher information, slope


def _mass_of(space_or_mass) -> np.ndarray:
    if isinstance(space_or_mass, FinitePmmSpace):
        return space_or_mass.mass
    if isinstance(space_or_mass, GraphDirichlet):
        return space_or_mass.node_mass
    return np.asarray(space_or_mass, dtype=float)


def entropy(mu, space_or_mass) -> float:
    """sum mu log(mu / m), with 0 log 0 = 0; +inf when mu charges a point of zero mass."""
    m = _mass_of(space_or_mass)
    mu = np.asarray(mu, dtype=float)
    pos = mu > DENSITY_FLOOR
    if np.any(pos & (m <= 0)):
        return math.inf
    return float(np.sum(mu[pos] * np.log(mu[pos] / m[pos])))


def entropy_decomposition(mu, space: FinitePmmSpace, C: float):
    """Return (lhs, rhs, residual) for Ent_m(mu) = Ent_tilde(mu) - C sum d^2 mu - log z."""
    z, tilted = exp_tilt(space, C)
    mu = np.asarray(mu, dtype=float)
    lhs = entropy(mu, space)
    rhs = entropy(mu, tilted) - C * float(np.sum(space.base_dist**2 * mu)) - math.log(z)
    if math.isinf(lhs) or math.isinf(rhs):
        return lhs, rhs, 0.0 if lhs == rhs else math.inf
    return lhs, rhs, abs(lhs - rhs)


def fisher(mu, graph: GraphDirichlet) -> float:
    """8 E(sqrt(rho)) with rho = mu / node_mass."""
    rho = np.asarray(mu, dtype=float) / graph.node_mass
    if np.any(rho < 0):
        raise ValueError("mu must be nonnegative")
    return 8.0 * graph.energy(np.sqrt(rho))


def slope_sup(mu, space: FinitePmmSpace, K: float, candidates: Sequence) -> float:
    """Lower estimate of the descending slope: positive part of the best difference quotient."""
    e0 = entropy(mu, space)
    if math.isinf(e0):
        raise ValueError("slope is only estimated at finite entropy")
    best = 0.0
    for nu in candidates:
        dist = w2(space, mu, nu)
        if dist <= 0:
            continue
        e1 = entropy(nu, space)
        if math.isinf(e1):
            continue
        best = max(best, (e0 - e1) / dist + 0.5 * K * dist)
    return best


# ---------------------------------------------------------------------------
# JKO step


class JKOConvergenceError(RuntimeError):
    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (duality gap {gap:.3g})")
        self.gap = gap


@dataclass(frozen=True)
class JKOReport:
    gap: float  # primal objective minus certified dual value
    objective: float
    w2: float
    stationary: bool  # the input was kept because no candidate beat it


def _transport_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Exact transport value by HiGHS; used when the network simplex stalls on widely spread masses."""
    from scipy.optimize import linprog

    n1, n2 = cost.shape
    idx = np.arange(n1 * n2)
    A = sparse.vstack(
        [
            sparse.csr_matrix((np.ones(n1 * n2), (idx // n2, idx)), shape=(n1, n1 * n2)),
            sparse.csr_matrix((np.ones(n1 * n2), (idx % n2, idx)), shape=(n2, n1 * n2)),
        ]
    )
    res = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([a, b * (a.sum() / b.sum())]), bounds=(0, None), method="highs")
    return float(res.fun) if res.status == 0 else math.inf


class _JKOSolver:
    """Dual of min over nu of OT(mu, nu; d^2 / 2 tau) + Ent_m(nu), compiled once per (space, tau).

    Dual: maximize sum mu phi - log sum m exp(-psi) subject to
    phi_i + psi_j <= C_ij.  The interior-point solution only locates the
    active constraints; the minimizer is then rebuilt exactly from them and
    certified by its duality gap.
    """

    def __init__(self, space: FinitePmmSpace, tau: float):
        import cvxpy as cp

        if not tau > 0:
            raise ValueError("tau must be positive")
        self.space = space
        self.tau = tau
        self.supp = space.support
        self.m = space.mass[self.supp]
        d = space.dist[np.ix_(self.supp, self.supp)]
        self.C = d * d / (2.0 * tau)
        n = self.supp.size
        self._mu = cp.Parameter(n, nonneg=True)
        self._phi = cp.Variable(n)
        self._psi = cp.Variable(n)
        logm = np.log(self.m)
        obj = self._mu @ self._phi - cp.log_sum_exp(logm - self._psi)
        self._prob = cp.Problem(cp.Maximize(obj), [self._phi[:, None] + self._psi[None, :] <= self.C])
        self._lock = threading.Lock()  # the compiled problem holds mutable parameter state

    def _certify(self, mu: np.ndarray, nu: np.ndarray) -> tuple[float, float, float]:
        """Return (gap, primal objective, transport cost) for a positive candidate nu.

        With psi = -log(nu / m) and phi its c-transform, the duality gap is
        exactly the optimal transport value for the slack cost
        C - phi - psi >= 0, so it is computed directly rather than as a
        difference of two nearly equal numbers.
        """
        rows = np.flatnonzero(mu > 0)
        psi = -np.log(nu / self.m)
        phi = np.min(self.C[rows] - psi[None, :], axis=1)
        slack = np.maximum(self.C[rows] - phi[:, None] - psi[None, :], 0.0)
        a = mu[rows]
        _, gap = optimal_coupling(a, nu, slack)
        if gap > 1e-13:
            gap = min(gap, _transport_lp(a, nu, slack))
        cost = float(a @ phi + nu @ psi) + gap
        return gap, cost + entropy(nu, self.m), cost

    def _rebuild(self, psi0: np.ndarray, mu: np.ndarray):
        """Exact minimizer from the tight constraints of an approximate dual solution."""
        n = mu.size
        rows = mu > 0
        phi0 = np.where(rows, np.min(self.C - psi0[None, :], axis=1), 0.0)
        slack = self.C - phi0[:, None] - psi0[None, :]
        slack[~rows] = np.inf
        argmin_rows = np.argmin(slack, axis=0)
        live = np.flatnonzero(rows)
        argmin_cols = np.argmin(slack[live], axis=1)
        scale = max(1.0, float(np.max(np.abs(self.C))))
        best = None
        for delta in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 0.0):
            tight = slack <= delta * scale
            tight[argmin_rows, np.arange(n)] = True
            tight[live, argmin_cols] = True
            r, c = np.nonzero(tight)
            G = sparse.coo_matrix((np.ones(r.size), (r, c + n)), shape=(2 * n, 2 * n)).tocsr()
            G = G + G.T
            n_comp, label = connected_components(G, directed=False)
            phi = np.full(n, np.nan)
            psi = np.full(n, np.nan)
            nu = np.zeros(n)
            ok = True
            for comp in range(n_comp):
                members = np.flatnonzero(label == comp)
                comp_rows = members[members < n]
                comp_cols = members[members >= n] - n
                if comp_cols.size == 0:
                    continue
                root = int(comp_rows[0])
                order, pred = breadth_first_order(G, root, directed=False, return_predecessors=True)
                phi[root] = 0.0
                for node in order[1:]:
                    p = pred[node]
                    if node >= n:
                        psi[node - n] = self.C[p, node - n] - phi[p]
                    else:
                        phi[node] = self.C[node, p - n] - psi[p - n]
                w = self.m[comp_cols] * np.exp(-(psi[comp_cols] - psi[comp_cols].min()))
                nu[comp_cols] = mu[comp_rows].sum() * w / w.sum()
            if np.any(np.isnan(psi)) or np.any(nu <= 0):
                ok = False
            if not ok:
                continue
            nu = nu / nu.sum()
            gap, primal, cost = self._certify(mu, nu)
            if best is None or gap < best[0]:
                best = (gap, nu, primal, cost)
            if gap <= 1e-13:
                break
        return best

    def _attempt(self, mu: np.ndarray, cutoff: float):
        import cvxpy as cp

        trimmed = np.where(mu >= cutoff * mu.max(), mu, 0.0)
        self._mu.value = trimmed / trimmed.sum()
        try:
            self._prob.solve(solver="CLARABEL")
        except cp.error.SolverError:
            return None
        if self._psi.value is None or self._phi.value is None:
            return None
        # Columns reached only by dropped rows get no usable potential from
        # the solve; extend from the kept rows by a c-transform instead.
        kept = trimmed > 0
        extended = np.min(self.C[kept] - np.asarray(self._phi.value)[kept, None], axis=0)
        best = None
        for psi0 in (np.asarray(self._psi.value), extended):
            candidate = self._rebuild(psi0, mu)
            if candidate is not None and (best is None or candidate[0] < best[0]):
                best = candidate
        return best

    def step(self, mu_full: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, JKOReport]:
        with self._lock:
            return self._step(mu_full, tol)

    def _step(self, mu_full: np.ndarray, tol: float) -> tuple[np.ndarray, JKOReport]:
        mu_full = np.asarray(mu_full, dtype=float)
        if abs(mu_full.sum() - 1.0) > 1e-9 or np.any(mu_full < 0):
            raise ValueError("mu must be a probability vector")
        outside = np.ones(self.space.n, dtype=bool)
        outside[self.supp] = False
        if np.any(mu_full[outside] > 0):
            raise ValueError("mu charges points of zero mass (infinite entropy)")
        mu = mu_full[self.supp] / mu_full[self.supp].sum()
        e_mu = entropy(mu, self.m)
        best = None
        # Interior-point accuracy suffers from masses many orders below the
        # rest; they are dropped from the dual solve only, and the rebuilt
        # minimizer is certified against the full input.
        for cutoff in (1e-12, 1e-9, 1e-6):
            candidate = self._attempt(mu, cutoff)
            if candidate is not None and (best is None or candidate[0] < best[0]):
                best = candidate
            if best is not None and best[0] <= tol * max(1.0, abs(best[2])):
                break
        if best is None:
            raise JKOConvergenceError("could not rebuild a positive minimizer from the dual solution", math.inf)
        for _ in range(6):
            if best[0] <= 1e-13 * max(1.0, abs(best[2])):
                break
            candidate = self._rebuild(-np.log(best[1] / self.m), mu)
            if candidate is None or candidate[0] >= best[0]:
                break
            best = candidate
        gap, nu, primal, cost = best
        if gap > tol * max(1.0, abs(primal)):
            raise JKOConvergenceError("minimizing movement not certified", gap)
        out = np.zeros(self.space.n)
        if primal <= e_mu:
            out[self.supp] = nu
            return out, JKOReport(gap, primal, math.sqrt(2.0 * self.tau * max(cost, 0.0)), False)
        out[self.supp] = mu
        return out, JKOReport(gap, e_mu, 0.0, True)


_SOLVER_CACHE: dict = {}


def _solver_for(space: FinitePmmSpace, tau: float) -> _JKOSolver:
    key = (space.canonical_key(), float(tau))
    solver = _SOLVER_CACHE.get(key)
    if solver is None:
        if len(_SOLVER_CACHE) >= 8:
            _SOLVER_CACHE.pop(next(iter(_SOLVER_CACHE)))
        solver = _SOLVER_CACHE[key] = _JKOSolver(space, tau)
    return solver


def jko_step(mu, tau: float, space: FinitePmmSpace, tol: float = 1e-8, return_report: bool = False):
    """One minimizing-movement step: argmin over nu of W2^2(nu, mu) / (2 tau) + Ent_m(nu).

    The result is certified by a duality gap of at most ``tol`` (relative to
    the objective size); otherwise ``JKOConvergenceError`` is raised.
    """
    nu, report = _solver_for(space, tau).step(mu, tol)
    return (nu, report) if return_report else nu


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, eq=False)
class FlowTrace:
    """Time-stamped probability vectors with the bookkeeping used by the flow checks."""

    times: np.ndarray
    states: np.ndarray  # (T, n)
    step_w2: np.ndarray  # (T-1,)
    entropies: np.ndarray  # (T,)
    slopes_fisher: np.ndarray  # (T,), nan without a graph
    residuals: np.ndarray  # (T-1,), nan without a graph
    space: FinitePmmSpace
    graph: GraphDirichlet | None = None
    kind: str = ""
    certificates: np.ndarray | None = None

    @classmethod
    def build(cls, space, times, states, graph=None, kind="", certificates=None) -> "FlowTrace":
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[0] != times.size:
            raise ValueError("states must be (len(times), n)")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.abs(states.sum(axis=1) - 1.0) > 1e-9) or np.any(states < 0):
            raise ValueError("states must be probability vectors")
        steps = np.array([w2(space, states[k], states[k + 1]) for k in range(times.size - 1)])
        ents = np.array([entropy(s, space) for s in states])
        if graph is not None:
            fis = np.array([fisher(s, graph) for s in states])
            dt = np.diff(times)
            speed = steps / dt
            res = np.abs(ents[:-1] - ents[1:] - 0.5 * (speed**2 + fis[:-1]) * dt)
        else:
            fis = np.full(times.size, np.nan)
            res = np.full(times.size - 1, np.nan)
        frozen = []
        for arr in (times, states, steps, ents, fis, res):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            frozen.append(arr)
        return cls(*frozen, space=space, graph=graph, kind=kind, certificates=certificates)

    @property
    def speeds(self) -> np.ndarray:
        return self.step_w2 / np.diff(self.times)

    def rows(self):
        """(time, entropy, speed, fisher, residual) per time; the last row has no interval."""
        sp = self.speeds
        out = []
        for k, t in enumerate(self.times):
            last = k == self.times.size - 1
            out.append(
                (
                    float(t),
                    float(self.entropies[k]),
                    float("nan") if last else float(sp[k]),
                    float(self.slopes_fisher[k]),
                    float("nan") if last else float(self.residuals[k]),
                )
            )
        return out


def _steps_for(T: float, tau: float) -> int:
    k = round(T / tau)
    if k < 1 or abs(k * tau - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a positive integer multiple of tau={tau}")
    return int(k)


def jko_flow(mu0, tau: float, T: float, space: FinitePmmSpace, graph: GraphDirichlet | None = None, tol: float = 1e-8) -> FlowTrace:
    """Iterate :func:`jko_step` up to time T (an integer multiple of tau)."""
    steps = _steps_for(T, tau)
    solver = _solver_for(space, tau)
    mu = np.asarray(mu0, dtype=float)
    states = [mu]
    gaps = []
    ent = entropy(mu, space)
    for _ in range(steps):
        nxt, rep = solver.step(mu, tol)
        e_next = entropy(nxt, space)
        if e_next > ent + 1e-12 * max(1.0, abs(ent)):
            raise JKOConvergenceError("entropy increased along the scheme", rep.gap)
        states.append(nxt)
        gaps.append(rep.gap)
        mu, ent = nxt, e_next
    times = tau * np.arange(steps + 1)
    return FlowTrace.build(space, times, np.array(states), graph, "jko", np.array(gaps))


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class EDEReport:
    residuals: np.ndarray
    violations: tuple  # intervals where the entropy drop exceeds the dissipation by more than tol
    max_residual: float


def ede_residual(trace: FlowTrace, graph: GraphDirichlet | None = None, tol: float = 1e-9) -> EDEReport:
    """Per-interval |Ent(mu_k) - Ent(mu_k+1) - 1/2 (speed_k^2 + fisher_k) dt|, left Riemann sums."""
    graph = trace.graph if graph is None else graph
    if graph is None:
        raise ValueError("a graph is needed for the Fisher term")
    dt = np.diff(trace.times)
    fis = np.array([fisher(s, graph) for s in trace.states[:-1]])
    diss = 0.5 * (trace.speeds**2 + fis) * dt
    drop = trace.entropies[:-1] - trace.entropies[1:]
    res = np.abs(drop - diss)
    viol = tuple(int(k) for k in np.flatnonzero(drop > diss + tol))
    return EDEReport(res, viol, float(res.max(initial=0.0)))


@dataclass(frozen=True)
class ContractionReport:
    max_violation: float
    gaps: np.ndarray  # W2(mu_t, nu_t) - exp(-K t) W2(mu_0, nu_0)


def contraction_check(trace_a: FlowTrace, trace_b: FlowTrace, K: float = 0.0) -> ContractionReport:
    if trace_a.times.shape != trace_b.times.shape or np.any(np.abs(trace_a.times - trace_b.times) > 1e-12):
        raise ValueError("traces must share their time grid")
    d0 = w2(trace_a.space, trace_a.states[0], trace_b.states[0])
    gaps = np.array(
        [
            w2(trace_a.space, x, y) - math.exp(-K * t) * d0
            for t, x, y in zip(trace_a.times, trace_a.states, trace_b.states)
        ]
    )
    gaps[0] = 0.0
    return ContractionReport(float(max(0.0, gaps.max())), gaps)


def I_K(t, K: float = 0.0):
    """int_0^t exp(K s) ds."""
    t = np.asarray(t, dtype=float)
    if K == 0:
        return t
    return np.expm1(K * t) / K


@dataclass(frozen=True)
class AprioriReport:
    speed_lhs: float
    speed_rhs: float
    speed_slack: float
    theorem_slacks: np.ndarray  # one per trace time in (0, horizon]
    horizon: float
    passed: bool

    @property
    def min_theorem_slack(self) -> float:
        return float(self.theorem_slacks.min(initial=math.inf))


def apriori_check(
    trace: FlowTrace,
    space: FinitePmmSpace | None = None,
    C: float = 1.0,
    K: float = 0.0,
    graph: GraphDirichlet | None = None,
    nu=None,
) -> AprioriReport:
    """Evaluate both a priori estimates on a trace over the horizon 1 / (8C).

    Speed bound: 1/2 int |mu'|^2 <= 2 Ent(mu_0) + 4 C sum d^2 mu_0 + 2 log z.
    Entropy-slope bound at each time t: I Ent(mu_t) + I^2/2 |D Ent|^2(mu_t)
    <= I Ent(nu) + 1/2 W2^2(nu, mu_0), with I = I_K(t) and nu the tilted
    reference measure unless given.
    """
    space = trace.space if space is None else space
    graph = trace.graph if graph is None else graph
    if graph is None:
        raise ValueError("a graph is needed for the slope term")
    horizon = 1.0 / (8.0 * C)
    if trace.times[-1] < horizon - 1e-12:
        raise ValueError(f"trace ends at {trace.times[-1]:g}, before the horizon {horizon:g}")
    z, tilted = exp_tilt(space, C)
    mu0 = trace.states[0]
    dt = np.diff(trace.times)
    inside = trace.times[1:] <= horizon + 1e-12
    lhs = 0.5 * float(np.sum((trace.speeds[inside] ** 2) * dt[inside]))
    rhs = 2.0 * entropy(mu0, space) + 4.0 * C * float(np.sum(space.base_dist**2 * mu0)) + 2.0 * math.log(z)
    ref = tilted.mass if nu is None else np.asarray(nu, dtype=float)
    e_ref = entropy(ref, space)
    w_ref = w2(space, ref, mu0) ** 2
    slacks = []
    for t, state in zip(trace.times, trace.states):
        if t <= 0 or t > horizon + 1e-12:
            continue
        I = float(I_K(t, K))
        left = I * entropy(state, space) + 0.5 * I * I * fisher(state, graph)
        right = I * e_ref + 0.5 * w_ref
        slacks.append(right - left)
    slacks = np.array(slacks)
    passed = (rhs - lhs) >= 0 and bool(np.all(slacks >= 0))
    return AprioriReport(lhs, rhs, rhs - lhs, slacks, horizon, passed)


# ---------------------------------------------------------------------------
# recovery sequences


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    mu_n: np.ndarray
    plan: np.ndarray


def recovery_sequence(mu_inf, space_inf: FinitePmmSpace, space_n: FinitePmmSpace, C: float = 1.0, cross=None) -> RecoveryResult:
    """Transport mu_inf along an optimal plan between the tilted measures.

    With rho = d mu_inf / d tilde m_inf and gamma optimal between the tilted
    measures, mu_n(y) = sum_x rho(x) gamma(x, y).  By Jensen the tilted
    entropy does not increase, and W2^2(mu_n, mu_inf) <= max rho * W2^2
    between the tilted measures.  ``cross`` gives the distances between the
    two point sets in a common space; by default the two spaces share points.
    """
    if cross is None:
        if space_inf.n != space_n.n or not np.array_equal(space_inf.dist, space_n.dist):
            raise ValueError("spaces on different point sets need an explicit cross-distance matrix")
        cross = space_inf.dist
    cross = np.asarray(cross, dtype=float)
    _, t_inf = exp_tilt(space_inf, C)
    _, t_n = exp_tilt(space_n, C)
    coupling, _ = optimal_coupling(t_inf.mass, t_n.mass, cross**2)
    mu_inf = np.asarray(mu_inf, dtype=float)
    rho = np.zeros_like(mu_inf)
    pos = t_inf.mass > 0
    if np.any(mu_inf[~pos] > 0):
        raise ValueError("mu_inf must be absolutely continuous")
    rho[pos] = mu_inf[pos] / t_inf.mass[pos]
    mu_n = rho @ coupling.plan
    return RecoveryResult(mu_n / mu_n.sum(), coupling.plan)
