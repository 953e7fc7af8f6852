"""Graph Laplacian, resolvent, L2 heat semigroup and the spectral / Mosco diagnostics.

Convention: (L f)_i = (1/m_i) sum_j w_ij (f_i - f_j), so <L f, f>_m = 2 E(f)
with E the graph Dirichlet form.  All inner products are m-weighted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh, spsolve

from .core import FinitePmmSpace
from .entropyflow import FlowTrace, GraphDirichlet
from .transport import optimal_coupling

__all__ = [
    "LaplaceOperator",
    "Spectrum",
    "laplacian",
    "spectrum",
    "resolvent",
    "heat_semigroup",
    "heat_flow_trace",
    "quadratic_form_check",
    "WlstiEstimate",
    "wlsti_fit",
    "MoscoLevel",
    "MoscoReport",
    "mosco_diagnostic",
    "EigenTable",
    "eigen_convergence",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class LaplaceOperator:
    graph: GraphDirichlet

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """D - W, so that f^T K f = 2 E(f)."""
        W = self.graph.weight_matrix()
        return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()

    @property
    def mass(self) -> np.ndarray:
        return self.graph.node_mass

    @property
    def n(self) -> int:
        return self.graph.n

    def __call__(self, f) -> np.ndarray:
        return self.stiffness @ np.asarray(f, dtype=float) / self.mass

    def inner(self, f, g) -> float:
        return float(np.sum(np.asarray(f) * np.asarray(g) * self.mass))

    def norm(self, f) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def energy(self, f) -> float:
        return self.graph.energy(f)

    def symmetric_matrix(self):
        """M^{-1/2} K M^{-1/2}; same spectrum as L, Euclidean-symmetric."""
        s = sparse.diags(1.0 / np.sqrt(self.mass))
        return (s @ self.stiffness @ s).tocsr()

    def invariant_residuals(self, trials: int = 20, seed: int = 0) -> dict:
        """Largest relative residuals of self-adjointness, the form identity and L 1 = 0."""
        rng = np.random.default_rng(seed)
        adj = form = 0.0
        for _ in range(trials):
            f, g = rng.standard_normal((2, self.n))
            lf, lg = self(f), self(g)
            scale = max(1.0, abs(self.inner(lf, g)))
            adj = max(adj, abs(self.inner(lf, g) - self.inner(f, lg)) / scale)
            two_e = 2.0 * self.energy(f)
            form = max(form, abs(self.inner(lf, f) - two_e) / max(1.0, two_e))
        const = float(np.max(np.abs(self(np.ones(self.n)))))
        return {"self_adjoint": adj, "form_identity": form, "kernel_constant": const}

    @cached_property
    def full_spectrum(self) -> "Spectrum":
        return spectrum(self, self.n)


def laplacian(graph: GraphDirichlet) -> LaplaceOperator:
    if np.any(graph.node_mass <= 0):
        raise ValueError("node masses must be positive")
    return LaplaceOperator(graph)


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, m-orthonormal
    residual: float
    orthonormality_error: float
    minmax_error: float
    zero_multiplicity: int

    @property
    def disconnected(self) -> bool:
        return self.zero_multiplicity > 1


def spectrum(op: LaplaceOperator, k: int | None = None, minmax_samples: int = 64, seed: int = 0) -> Spectrum:
    """Lowest k eigenpairs, with residual, orthonormality and min-max checks."""
    n = op.n
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    S = op.symmetric_matrix()
    if n <= DENSE_LIMIT or k >= n - 1:
        vals, U = eigh(S.toarray(), subset_by_index=(0, k - 1))
    else:
        vals, U = eigsh(S, k=k, sigma=-1e-6, which="LM", tol=1e-12)
        order = np.argsort(vals)
        vals, U = vals[order], U[:, order]
    V = U / np.sqrt(op.mass)[:, None]
    # residual and orthonormality in the m-weighted norm
    R = op.stiffness @ V / op.mass[:, None] - V * vals[None, :]
    res = float(np.max(np.sqrt(np.sum(R * R * op.mass[:, None], axis=0)), initial=0.0))
    gram = V.T @ (V * op.mass[:, None])
    ortho = float(np.max(np.abs(gram - np.eye(k))))
    if res > 1e-8 * max(1.0, float(np.max(np.abs(vals)))):
        raise RuntimeError(f"eigensolver residual {res:.3g} exceeds tolerance")
    minmax = _minmax_error(op, V, vals, minmax_samples, seed)
    scale = max(1.0, float(np.max(np.abs(vals))))
    zero_mult = int(np.sum(np.abs(vals) <= 1e-9 * scale))
    vals = np.array(vals, copy=True)
    vals.setflags(write=False)
    V.setflags(write=False)
    return Spectrum(vals, V, res, ortho, minmax, zero_mult)


def _minmax_error(op, V, vals, samples, seed) -> float:
    """For each j, max of 2E over unit vectors of span(v_1..v_j) must equal lambda_j.

    The maximum is attained at v_j and sampled unit vectors must not exceed it.
    """
    rng = np.random.default_rng(seed)
    K = op.stiffness
    err = 0.0
    for j in range(V.shape[1]):
        top = 2.0 * op.energy(V[:, j])
        err = max(err, abs(top - vals[j]))
        if samples and j > 0:
            c = rng.standard_normal((j + 1, samples))
            c /= np.linalg.norm(c, axis=0)
            F = V[:, : j + 1] @ c  # m-orthonormal columns give unit m-norm
            forms = np.einsum("ij,ij->j", F, K @ F)
            err = max(err, float(np.max(forms)) - vals[j], 0.0)
    return float(err)


def resolvent(op: LaplaceOperator, f, tau: float) -> np.ndarray:
    """(I + tau L)^{-1} f, the minimizer of |g - f|_m^2 / (2 tau) + E(g)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    f = np.asarray(f, dtype=float)
    A = (sparse.diags(op.mass) + tau * op.stiffness).tocsc()
    rhs = op.mass * f
    if op.n <= DENSE_LIMIT:
        g = np.linalg.solve(A.toarray(), rhs)
    else:
        g = spsolve(A, rhs)
    res = float(np.max(np.abs(A @ g - rhs), initial=0.0))
    if not np.all(np.isfinite(g)) or res > 1e-10 * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
        raise RuntimeError(f"resolvent solve residual {res:.3g}")
    return g


def heat_semigroup(op: LaplaceOperator, f, t: float, k_steps: int = 1, mode: str = "resolvent") -> np.ndarray:
    """H_t f, either as k implicit Euler steps J_{t/k}^k f or exactly from the full spectrum."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    if mode == "spectral":
        sp = op.full_spectrum
        coeff = sp.eigenvectors.T @ (op.mass * f)
        return sp.eigenvectors @ (np.exp(-sp.eigenvalues * t) * coeff)
    if mode != "resolvent":
        raise ValueError(f"unknown mode {mode!r}")
    if k_steps < 1:
        raise ValueError("k_steps must be at least 1")
    tau = t / k_steps
    A = (sparse.diags(op.mass) + tau * op.stiffness).tocsc()
    if op.n <= DENSE_LIMIT:
        from scipy.linalg import lu_factor, lu_solve

        lu = lu_factor(A.toarray())
        solve = lambda b: lu_solve(lu, b)  # noqa: E731
    else:
        from scipy.sparse.linalg import splu

        solve = splu(A).solve
    g = f
    for _ in range(k_steps):
        g = solve(op.mass * g)
    return g


def heat_flow_trace(op: LaplaceOperator, space: FinitePmmSpace, mu0, times) -> FlowTrace:
    """Spectral-exact heat flow of a probability vector, mu_t = (H_t rho_0) m, as a FlowTrace."""
    mu0 = np.asarray(mu0, dtype=float)
    if space.n != op.n or not np.allclose(space.mass, op.mass, rtol=1e-12, atol=0):
        raise ValueError("space and graph must share points and masses")
    rho0 = mu0 / op.mass
    states = []
    for t in np.asarray(times, dtype=float):
        mu = np.maximum(heat_semigroup(op, rho0, float(t), mode="spectral") * op.mass, 0.0)
        states.append(mu / mu.sum())
    return FlowTrace.build(space, times, np.array(states), op.graph, "heat")


def quadratic_form_check(graph: GraphDirichlet, trials: int = 100, seed: int = 0) -> float:
    """Max |E(f+g) + E(f-g) - 2E(f) - 2E(g)| over random pairs, relative to the energies involved."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        f, g = rng.standard_normal((2, graph.n))
        ef, eg = graph.energy(f), graph.energy(g)
        r = abs(graph.energy(f + g) + graph.energy(f - g) - 2 * ef - 2 * eg)
        worst = max(worst, r / max(1.0, ef + eg))
    return worst


# ---------------------------------------------------------------------------
# weak log-Sobolev-Talagrand constant


@dataclass(frozen=True)
class WlstiEstimate:
    B: float  # lower estimate of the minimal constant (sup over the test family)
    infeasible_on_constants: bool
    family_size: int
    bracket_open: bool = True  # no matching upper certificate is computed


def wlsti_fit(space: FinitePmmSpace, graph: GraphDirichlet, A: float, n_random: int = 200, seed: int = 0) -> WlstiEstimate:
    """Smallest B making |d(., base) f|_m <= A |f|_m + B sqrt(E(f)) on a test family.

    The family: low eigenvectors, point spikes, and resolvent-smoothed random
    vectors.  Constants have zero energy and only constrain A.
    """
    if A < 0:
        raise ValueError("A must be nonnegative")
    if graph.n != space.n:
        raise ValueError("graph and space sizes differ")
    m = graph.node_mass
    r = space.base_dist
    weighted = lambda f: math.sqrt(float(np.sum(r * r * f * f * m)))  # noqa: E731
    plain = lambda f: math.sqrt(float(np.sum(f * f * m)))  # noqa: E731
    ones = np.ones(graph.n)
    infeasible = weighted(ones) > A * plain(ones) * (1 + 1e-12)
    op = laplacian(graph)
    family = []
    if graph.n > 1:
        sp = spectrum(op, min(graph.n, 50), minmax_samples=0)
        family.extend(sp.eigenvectors.T)
    family.extend(np.eye(graph.n))
    rng = np.random.default_rng(seed)
    scale = 1.0 / max(1.0, float(np.mean(graph.degree() / m)))
    for _ in range(n_random):
        family.append(resolvent(op, rng.standard_normal(graph.n), scale * rng.uniform(0.1, 10.0)))
    B = 0.0
    for f in family:
        e = graph.energy(f)
        if e <= 1e-14 * max(1.0, plain(f) ** 2):
            continue
        B = max(B, max(weighted(f) - A * plain(f), 0.0) / math.sqrt(e))
    return WlstiEstimate(B, bool(infeasible), len(family))


# ---------------------------------------------------------------------------
# Mosco diagnostics


@dataclass(frozen=True)
class MoscoLevel:
    energy: float  # E_n of the recovery function
    energy_gap: float  # |E_n(f_n) - E(f)|
    norm_gap: float  # | |f_n|_{m_n} - |f|_m |
    plan_gap: float  # L2 distance along the optimal plan
    perturbed_energies: dict  # family name -> E_n of the weakly converging perturbation


@dataclass(frozen=True)
class MoscoReport:
    limit_energy: float
    levels: tuple
    liminf_flags: tuple  # perturbation families whose energy deficit is not vanishing
    note: str = (
        "liminf side tested on smoothed, spiked and transported perturbations only; "
        "it does not quantify over all weakly converging sequences"
    )


def _recover(f_inf, m_inf, m_n, cross):
    """Conditional expectation of f_inf along an optimal plan between the normalized masses."""
    a = m_inf / m_inf.sum()
    b = m_n / m_n.sum()
    coupling, _ = optimal_coupling(a, b, cross**2)
    plan = coupling.plan
    col = plan.sum(axis=0)
    f_n = (f_inf @ plan) / np.where(col > 0, col, 1.0)
    gap = math.sqrt(float(np.sum(plan * (f_inf[:, None] - f_n[None, :]) ** 2)) * m_inf.sum())
    return f_n, plan, gap


def mosco_diagnostic(levels: Sequence, limit: tuple, f_inf, tol: float = 1e-2) -> MoscoReport:
    """Recovery and liminf diagnostics for Cheeger-energy surrogates along a sequence.

    ``levels`` holds (graph_n, cross_n) pairs, where cross_n[i, j] is the
    distance between point i of the limit and point j of level n inside a
    common space.  ``limit`` is (graph_inf,).  Masses are compared after the
    optimal plan between normalized measures; energies use each level's graph.
    """
    (g_inf,) = limit if isinstance(limit, tuple) else (limit,)
    f_inf = np.asarray(f_inf, dtype=float)
    m_inf = g_inf.node_mass
    e_inf = g_inf.energy(f_inf)
    norm_inf = math.sqrt(float(np.sum(f_inf**2 * m_inf)))
    out = []
    flags = []
    for idx, level in enumerate(levels):
        if level is None or len(level) != 2 or level[1] is None:
            raise ValueError(f"level {idx} lacks an embedding into the limit")
        g_n, cross = level
        cross = np.asarray(cross, dtype=float)
        if cross.shape != (g_inf.n, g_n.n):
            raise ValueError(f"level {idx}: cross-distance shape {cross.shape} != {(g_inf.n, g_n.n)}")
        m_n = g_n.node_mass
        f_n, plan, plan_gap = _recover(f_inf, m_inf, m_n, cross)
        e_n = g_n.energy(f_n)
        norm_n = math.sqrt(float(np.sum(f_n**2 * m_n)))
        op = laplacian(g_n)
        h = 1.0 / max(1.0, g_n.n)
        spike = np.zeros(g_n.n)
        spike[int(np.argmax(np.abs(f_n)))] = math.sqrt(h)
        W = g_n.weight_matrix()
        deg = np.asarray(W.sum(axis=1)).ravel()
        shifted = np.where(deg > 0, W @ f_n / np.where(deg > 0, deg, 1.0), f_n)
        perturbed = {
            "smoothed": g_n.energy(resolvent(op, f_n, h * h)),
            "spiked": g_n.energy(f_n + spike),
            "transported": g_n.energy(shifted),
        }
        out.append(MoscoLevel(e_n, abs(e_n - e_inf), abs(norm_n - norm_inf), plan_gap, perturbed))
    # The liminf inequality is asymptotic: a family is flagged when its energy
    # deficit below the limit is still above tol at the last level and did not
    # shrink from the previous level.
    families = out[0].perturbed_energies.keys() if out else ()
    for name in families:
        deficits = [max(e_inf - lv.perturbed_energies[name], 0.0) for lv in out]
        last = deficits[-1]
        shrinking = len(deficits) > 1 and last < deficits[-2]
        if last > tol * max(1.0, e_inf) and not shrinking:
            flags.append(name)
    return MoscoReport(e_inf, tuple(out), tuple(flags))


# ---------------------------------------------------------------------------
# eigenvalue convergence


@dataclass(frozen=True, eq=False)
class EigenTable:
    values: np.ndarray  # (k, number of levels)
    minmax_errors: np.ndarray
    residuals: np.ndarray
    zero_multiplicity: np.ndarray

    @property
    def flagged_disconnected(self) -> list:
        return [i for i, z in enumerate(self.zero_multiplicity) if z > 1]


def eigen_convergence(graphs: Sequence[GraphDirichlet], k: int) -> EigenTable:
    cols, mm, res, zm = [], [], [], []
    for g in graphs:
        sp = spectrum(laplacian(g), k)
        cols.append(sp.eigenvalues)
        mm.append(sp.minmax_error)
        res.append(sp.residual)
        zm.append(sp.zero_multiplicity)
    return EigenTable(np.array(cols).T, np.array(mm), np.array(res), np.array(zm))
