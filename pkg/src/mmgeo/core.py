"""Finite pointed metric measure spaces: representation, validation, reweighting and comparison.

A space is a distance matrix, a nonnegative mass vector and a base index.
Everything here is immutable: operations return new spaces and never touch
their inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "FinitePmmSpace",
    "ValidationReport",
    "Violation",
    "validate",
    "metric_violations",
    "support_restrict",
    "CutoffSpec",
    "default_cutoff",
    "cutoff_rescale",
    "WeightSpec",
    "psi_from_growth",
    "constant_weight",
    "gaussian_weight",
    "cubic_tail_weight",
    "reweight",
    "exp_tilt",
    "IsomorphismResult",
    "is_isomorphic",
    "doubling_constant",
    "covering_number",
    "relabel",
    "random_relabel",
    "random_euclidean_space",
    "point_space",
    "space_from_dict",
    "space_to_dict",
    "load_space",
    "save_space",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FinitePmmSpace:
    """Distance matrix, mass vector and base index of a finite pointed space.

    Construction only checks shapes; metric axioms are checked by :func:`validate`.
    """

    dist: np.ndarray
    mass: np.ndarray
    base: int = 0

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError(f"dist must be a square matrix, got shape {dist.shape}")
        if mass.shape[0] != dist.shape[0]:
            raise ValueError(f"mass has length {mass.shape[0]} but dist is {dist.shape[0]}x{dist.shape[0]}")
        base = int(self.base)
        if not 0 <= base < mass.shape[0]:
            raise ValueError(f"base index {base} out of range for {mass.shape[0]} points")
        object.__setattr__(self, "dist", _frozen(dist))
        object.__setattr__(self, "mass", _frozen(mass))
        object.__setattr__(self, "base", base)

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0)

    @property
    def base_dist(self) -> np.ndarray:
        """Distances from every point to the base point."""
        return self.dist[self.base]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n else 0.0

    def with_mass(self, mass) -> "FinitePmmSpace":
        return FinitePmmSpace(self.dist, mass, self.base)

    def canonical_key(self) -> bytes:
        """Byte string identifying the exact arrays; used for deterministic pair ordering."""
        head = np.array([self.n, self.base], dtype=np.int64).tobytes()
        return head + self.dist.tobytes() + self.mass.tobytes()

    def __repr__(self) -> str:
        return f"FinitePmmSpace(n={self.n}, base={self.base}, total_mass={self.total_mass:.6g})"


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()
    truncated: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> set:
        return {v.kind for v in self.violations}


def metric_violations(dist: np.ndarray, rel_slack: float = 1e-9, limit: int = 200):
    """Return (triples, count) of triangle violations d(i,j) > d(i,k) + d(k,j) + slack.

    ``count`` is the number of violating (i<j, k) inequalities; at most ``limit``
    distinct sorted triples are listed.  Slack is ``rel_slack * diameter``.
    """
    d = np.asarray(dist, dtype=float)
    n = d.shape[0]
    if n < 3:
        return [], 0
    slack = rel_slack * max(float(d.max()), 0.0)
    found = set()
    count = 0
    for k in range(n):
        bad = np.triu(d > d[:, k, None] + d[None, k, :] + slack)
        if bad.any():
            ii, jj = np.nonzero(bad)
            count += ii.size
            for i, j in zip(ii.tolist(), jj.tolist()):
                if len(found) >= limit:
                    break
                found.add(tuple(sorted((i, j, k))))
    return sorted(found), count


def validate(space: FinitePmmSpace, rel_slack: float = 1e-9) -> ValidationReport:
    """List every violated invariant of ``space``; an empty report means the space is valid."""
    d, m = space.dist, space.mass
    out: list[Violation] = []
    truncated = 0
    if not np.all(np.isfinite(d)):
        out.append(Violation("nonfinite-distance", tuple(map(tuple, np.argwhere(~np.isfinite(d)).tolist()))))
        return ValidationReport(tuple(out))
    scale = max(float(np.abs(d).max()), 1.0)
    neg = np.argwhere(d < 0)
    if len(neg):
        out.append(Violation("negative-distance", tuple(map(tuple, neg.tolist()))))
    asym = np.argwhere(np.triu(np.abs(d - d.T) > 1e-12 * scale))
    if len(asym):
        out.append(Violation("asymmetric", tuple(map(tuple, asym.tolist()))))
    diag = np.flatnonzero(np.diag(d) != 0)
    if len(diag):
        out.append(Violation("nonzero-diagonal", tuple(diag.tolist())))
    triples, count = metric_violations(d, rel_slack)
    if triples:
        out.append(Violation("triangle", tuple(triples), f"{count} violating triples"))
        truncated = count - len(triples)
    if not np.all(np.isfinite(m)):
        out.append(Violation("nonfinite-mass", tuple(np.flatnonzero(~np.isfinite(m)).tolist())))
    else:
        negm = np.flatnonzero(m < 0)
        if len(negm):
            out.append(Violation("negative-mass", tuple(negm.tolist())))
        if not np.any(m > 0):
            out.append(Violation("zero-total-mass", ()))
        if not m[space.base] > 0:
            out.append(Violation("base-not-in-support", (space.base,)))
    return ValidationReport(tuple(out), truncated)


def support_restrict(space: FinitePmmSpace) -> FinitePmmSpace:
    """Drop zero-mass points and remap the base index."""
    keep = space.support
    if keep.shape[0] == space.n:
        return space
    if space.base not in set(keep.tolist()):
        raise ValueError("base point carries no mass")
    new_base = int(np.searchsorted(keep, space.base))
    return FinitePmmSpace(space.dist[np.ix_(keep, keep)], space.mass[keep], new_base)


# ---------------------------------------------------------------------------
# cutoff and weights


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff r -> zeta(r) equal to 1 on [0,1] and 0 on [2, inf)."""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float = 1.0
    name: str = "piecewise-linear"

    def __call__(self, r):
        return np.clip(self.func(np.asarray(r, dtype=float)), 0.0, 1.0)

    def check(self, grid: np.ndarray | None = None) -> list[str]:
        grid = np.linspace(0.0, 4.0, 4001) if grid is None else np.asarray(grid, dtype=float)
        vals = self(grid)
        issues = []
        if np.any(np.abs(vals[grid <= 1.0] - 1.0) > 0):
            issues.append("not identically 1 on [0,1]")
        if np.any(vals[grid >= 2.0] != 0.0):
            issues.append("not identically 0 on [2,inf)")
        steps = np.abs(np.diff(vals)) / np.maximum(np.diff(grid), 1e-300)
        if steps.size and steps.max() > self.lipschitz * (1 + 1e-9):
            issues.append("Lipschitz bound exceeded")
        return issues


def _linear_cutoff(r):
    return np.minimum(1.0, np.maximum(0.0, 2.0 - r))


def default_cutoff() -> CutoffSpec:
    return CutoffSpec(_linear_cutoff, 1.0, "piecewise-linear")


def cutoff_rescale(space: FinitePmmSpace, k: int, zeta: CutoffSpec | None = None) -> FinitePmmSpace:
    """Multiply each mass by zeta(d(x, base) / 2**k)."""
    zeta = default_cutoff() if zeta is None else zeta
    scaled = np.ldexp(space.base_dist, -int(k))
    return space.with_mass(space.mass * zeta(scaled))


@dataclass(frozen=True)
class WeightSpec:
    """Positive nonincreasing radial weight r -> psi(r)."""

    func: Callable[[np.ndarray], np.ndarray]
    kind: str = "explicit-formula"
    name: str = ""

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("weights are defined for nonnegative radii only")
        return np.asarray(self.func(r), dtype=float)

    def check(self, grid: np.ndarray | None = None, decay_tol: float = 1e-3) -> list[str]:
        """Sample-grid check of positivity, monotonicity and decay at infinity."""
        grid = np.concatenate([[0.0], np.geomspace(1e-4, 1e4, 400)]) if grid is None else np.asarray(grid, float)
        vals = self(grid)
        issues = []
        if np.any(vals <= 0):
            issues.append("not strictly positive")
        if np.any(np.diff(vals) > 1e-15 * max(1.0, float(vals.max()))):
            issues.append("not nonincreasing")
        if vals[-1] > decay_tol * vals[0]:
            issues.append("does not decay on the sample grid")
        return issues


def constant_weight() -> WeightSpec:
    """psi = 1. Adequate for bounded spaces; it does not decay."""
    return WeightSpec(lambda r: np.ones_like(np.asarray(r, dtype=float)), "explicit-formula", "const")


def gaussian_weight(C: float) -> WeightSpec:
    if not C > 0:
        raise ValueError("gaussian weight needs C > 0")
    return WeightSpec(lambda r: np.exp(-C * np.asarray(r, dtype=float) ** 2), "explicit-formula", f"gauss:{C:g}")


def _growth_integrand(phi):
    def f(s):
        return 1.0 / ((1.0 + s**3) ** 2 * phi(s))

    return f


def psi_from_growth(
    phi: Callable[[float], float],
    r_max: float = 1e3,
    grid_size: int = 1200,
    rtol: float = 1e-10,
) -> WeightSpec:
    """Weight psi(r) = int_r^inf ds / ((1+s^3)^2 phi(s)) for a nondecreasing growth bound phi.

    Values are tabulated on a geometric grid by adaptive quadrature; an
    off-grid radius adds the integral up to the next grid node, and radii
    beyond the grid are integrated directly.  Raises ValueError when phi is not admissible or the quadrature
    does not meet its tolerance.
    """
    phi0 = float(phi(0.0))
    if not (math.isfinite(phi0) and phi0 > 0):
        raise ValueError("growth function must satisfy phi(0) > 0")
    grid = np.concatenate([[0.0], np.geomspace(1e-6, r_max, grid_size - 1)])
    phis = np.array([float(phi(s)) for s in grid])
    if not np.all(np.isfinite(phis)) or np.any(np.diff(phis) < -1e-12 * np.abs(phis[:-1])):
        raise ValueError("growth function must be finite and nondecreasing")
    f = _growth_integrand(phi)

    def tail(r: float) -> float:
        val, err = integrate.quad(f, r, np.inf, epsabs=0.0, epsrel=rtol, limit=200)
        bound = integrate.quad(lambda s: 1.0 / (1.0 + s**3) ** 2, r, np.inf, epsabs=0.0, epsrel=rtol)[0] / phi0
        if not (math.isfinite(val) and val > 0) or err > max(1e-6 * val, 1e-300) or val > bound * (1 + 1e-8):
            raise ValueError(f"tail quadrature of the growth weight failed at r={r:g} (err={err:.3g})")
        return val

    pieces = np.empty(grid.size - 1)
    for i in range(grid.size - 1):
        val, err = integrate.quad(f, grid[i], grid[i + 1], epsabs=0.0, epsrel=rtol, limit=100)
        if not math.isfinite(val) or err > 1e-6 * max(val, 1e-300) + 1e-300:
            raise ValueError(f"quadrature of the growth weight failed on [{grid[i]:g}, {grid[i + 1]:g}]")
        pieces[i] = val
    values = np.empty(grid.size)
    values[-1] = tail(float(grid[-1]))
    values[:-1] = values[-1] + np.cumsum(pieces[::-1])[::-1]
    top = float(grid[-1])

    def one(x: float) -> float:
        if x > top:
            return tail(x)
        k = int(np.searchsorted(grid, x, side="left"))
        if grid[k] == x:
            return float(values[k])
        return float(values[k]) + integrate.quad(f, x, grid[k], epsabs=0.0, epsrel=rtol)[0]

    def psi(r):
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1)
        # evaluate each distinct radius once; spaces repeat radii a lot
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.array([one(float(x)) for x in uniq])
        out = vals[inv.reshape(-1)]
        return out.reshape(r.shape) if r.ndim else float(out[0])

    spec = WeightSpec(psi, "tabulated", "growth")
    object.__setattr__(spec, "grid", grid)
    object.__setattr__(spec, "table", values)
    return spec


_CUBIC_TAIL = None


def cubic_tail_weight() -> WeightSpec:
    """Growth weight for the constant growth bound phi = 1 (cached)."""
    global _CUBIC_TAIL
    if _CUBIC_TAIL is None:
        spec = psi_from_growth(lambda s: 1.0)
        _CUBIC_TAIL = WeightSpec(spec.func, "tabulated", "cubic-tail")
    return _CUBIC_TAIL


def reweight(space: FinitePmmSpace, psi: WeightSpec):
    """Return (z, normalized space) with masses psi(d(., base)) m / z."""
    w = psi(space.base_dist) * space.mass
    z = float(w.sum())
    if not z > 0:
        raise ValueError("reweighted total mass is not positive")
    return z, space.with_mass(w / z)


def exp_tilt(space: FinitePmmSpace, C: float):
    """Return (z, tilted space) with masses exp(-C d^2(., base)) m / z."""
    if not C >= 0:
        raise ValueError("tilt constant must be nonnegative")
    w = np.exp(-C * space.base_dist**2) * space.mass
    z = float(w.sum())
    return z, space.with_mass(w / z)


# ---------------------------------------------------------------------------
# isomorphism


@dataclass(frozen=True)
class IsomorphismResult:
    status: str  # "isomorphic" | "not_isomorphic" | "undecided"
    witness: dict | None = None  # original index in a -> original index in b
    certificate: str = ""

    @property
    def isomorphic(self) -> bool:
        return self.status == "isomorphic"

    def __bool__(self) -> bool:
        return self.isomorphic


def _close_multisets(x: np.ndarray, y: np.ndarray, tol: float) -> bool:
    return x.shape == y.shape and bool(np.all(np.abs(np.sort(x, axis=0) - np.sort(y, axis=0)) <= tol))


def is_isomorphic(a: FinitePmmSpace, b: FinitePmmSpace, tol: float = 1e-9, max_support: int = 10) -> IsomorphismResult:
    """Decide whether the supports of ``a`` and ``b`` are isomorphic as pointed measured spaces.

    Cheap invariants are compared first; if they agree, a branch-and-prune
    search over base-preserving bijections runs, capped at ``max_support``
    points.
    """
    ia, ib = a.support, b.support
    sa, sb = support_restrict(a), support_restrict(b)
    if sa.n != sb.n:
        return IsomorphismResult("not_isomorphic", None, f"support sizes differ ({sa.n} vs {sb.n})")
    if abs(sa.mass[sa.base] - sb.mass[sb.base]) > tol:
        return IsomorphismResult("not_isomorphic", None, "base masses differ")
    if not _close_multisets(sa.mass, sb.mass, tol):
        return IsomorphismResult("not_isomorphic", None, "mass multisets differ")
    prof_a = np.stack([sa.base_dist, sa.mass], axis=1)
    prof_b = np.stack([sb.base_dist, sb.mass], axis=1)
    order_a = np.lexsort((prof_a[:, 1], prof_a[:, 0]))
    order_b = np.lexsort((prof_b[:, 1], prof_b[:, 0]))
    if np.any(np.abs(prof_a[order_a] - prof_b[order_b]) > tol):
        return IsomorphismResult("not_isomorphic", None, "distance-to-base profiles with masses differ")
    if not _row_multisets_match(sa, sb, tol):
        return IsomorphismResult("not_isomorphic", None, "row distance multisets differ")
    if sa.n > max_support:
        return IsomorphismResult("undecided", None, f"support size {sa.n} exceeds search cap {max_support}")

    n = sa.n
    da, db = sa.dist, sb.dist
    rows_a = np.sort(da, axis=1)
    rows_b = np.sort(db, axis=1)
    compatible = (
        (np.abs(sa.mass[:, None] - sb.mass[None, :]) <= tol)
        & (np.abs(sa.base_dist[:, None] - sb.base_dist[None, :]) <= tol)
        & np.all(np.abs(rows_a[:, None, :] - rows_b[None, :, :]) <= tol, axis=2)
    )
    if not compatible[sa.base, sb.base]:
        return IsomorphismResult("not_isomorphic", None, "base points have different local profiles")
    order = [sa.base] + [int(i) for i in order_a if i != sa.base]
    assign = {sa.base: sb.base}
    used = np.zeros(n, dtype=bool)
    used[sb.base] = True

    def search(depth: int) -> bool:
        if depth == n:
            return True
        x = order[depth]
        done = order[:depth]
        for y in np.flatnonzero(compatible[x] & ~used):
            y = int(y)
            if all(abs(da[x, p] - db[y, assign[p]]) <= tol for p in done):
                assign[x] = y
                used[y] = True
                if search(depth + 1):
                    return True
                used[y] = False
                del assign[x]
        return False

    if search(1):
        witness = {int(ia[x]): int(ib[y]) for x, y in sorted(assign.items())}
        return IsomorphismResult("isomorphic", witness, "")
    return IsomorphismResult("not_isomorphic", None, "exhaustive base-preserving search found no isometry")


def _row_multisets_match(sa: FinitePmmSpace, sb: FinitePmmSpace, tol: float) -> bool:
    ra = np.sort(sa.dist, axis=1)
    rb = np.sort(sb.dist, axis=1)
    oa = np.lexsort(ra.T[::-1])
    ob = np.lexsort(rb.T[::-1])
    return bool(np.all(np.abs(ra[oa] - rb[ob]) <= tol))


# ---------------------------------------------------------------------------
# doubling and covering


def doubling_constant(space: FinitePmmSpace, radii: Iterable[float] | None = None) -> float:
    """sup over support points x and radii R of m(B_2R(x)) / m(B_R(x)), closed balls.

    With ``radii=None`` the supremum over all R > 0 is computed exactly: the
    ratio is piecewise constant with jumps only at pairwise distances and
    their halves.
    """
    s = support_restrict(space)
    d, m = s.dist, s.mass
    if radii is None:
        pos = np.unique(d[d > 0])
        radii = np.unique(np.concatenate([pos / 2.0, pos]))
    radii = np.asarray(list(radii), dtype=float)
    radii = radii[radii > 0]
    best = 1.0
    for R in radii:
        inner = (d <= R) @ m
        outer = (d <= 2.0 * R) @ m
        best = max(best, float(np.max(outer / inner)))
    return best


def _greedy_cover(d: np.ndarray, eps: float) -> int:
    cover = d <= eps
    uncovered = np.ones(d.shape[0], dtype=bool)
    count = 0
    while uncovered.any():
        gains = cover[:, uncovered].sum(axis=1)
        c = int(np.argmax(gains))
        uncovered &= ~cover[c]
        count += 1
    return count


def covering_number(space: FinitePmmSpace, eps: float, subset_radius: float = math.inf) -> int:
    """Greedy count of closed eps-balls covering supp(m) within ``subset_radius`` of the base.

    Greedy set cover can overcount the true minimum (by at most a logarithmic
    factor).  The result is made monotone in eps by taking the best greedy
    cover over all thresholds not exceeding eps.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    keep = space.support[space.base_dist[space.support] <= subset_radius]
    if keep.size == 0:
        return 0
    d = space.dist[np.ix_(keep, keep)]
    thresholds = np.unique(np.concatenate([d[(d > 0) & (d <= eps)], [eps]]))
    return min(_greedy_cover(d, float(t)) for t in thresholds)


# ---------------------------------------------------------------------------
# constructors and relabeling


def point_space(mass: float = 1.0) -> FinitePmmSpace:
    return FinitePmmSpace(np.zeros((1, 1)), [mass], 0)


def relabel(space: FinitePmmSpace, perm: Sequence[int]) -> FinitePmmSpace:
    """New point i is old point perm[i]."""
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(space.n)):
        raise ValueError("perm must be a permutation of range(n)")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return FinitePmmSpace(space.dist[np.ix_(perm, perm)], space.mass[perm], int(inv[space.base]))


def random_relabel(space: FinitePmmSpace, rng: np.random.Generator):
    perm = rng.permutation(space.n)
    return relabel(space, perm), perm


def random_euclidean_space(
    n: int,
    rng: np.random.Generator,
    dim: int = 2,
    mass_range=(0.2, 1.5),
    scale: float = 1.0,
) -> FinitePmmSpace:
    """Random points in a cube with random positive masses and a random base."""
    pts = rng.uniform(0.0, scale, size=(n, dim))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    mass = rng.uniform(*mass_range, size=n)
    return FinitePmmSpace(d, mass, int(rng.integers(n)))


# ---------------------------------------------------------------------------
# JSON format


def _dist_from_points(spec: dict) -> np.ndarray:
    pts = np.asarray(spec["points"], dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    metric = spec.get("metric", "euclidean")
    if metric == "euclidean":
        return np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    if metric == "circle":
        # points are arc-length positions on a circle of the given circumference
        L = float(spec.get("circumference", 1.0))
        diff = np.abs(pts[:, None, 0] - pts[None, :, 0]) % L
        return np.minimum(diff, L - diff)
    raise ValueError(f"unknown metric {metric!r}")


def space_from_dict(obj: dict) -> FinitePmmSpace:
    dist = obj["dist"]
    dist = _dist_from_points(dist) if isinstance(dist, dict) else np.asarray(dist, dtype=float)
    space = FinitePmmSpace(dist, obj["mass"], obj.get("base", 0))
    if "n" in obj and int(obj["n"]) != space.n:
        raise ValueError(f"declared n={obj['n']} but data has {space.n} points")
    return space


def space_to_dict(space: FinitePmmSpace) -> dict:
    return {
        "n": space.n,
        "dist": space.dist.tolist(),
        "mass": space.mass.tolist(),
        "base": space.base,
    }


def load_space(path) -> FinitePmmSpace:
    with open(path) as fh:
        return space_from_dict(json.load(fh))


def save_space(space: FinitePmmSpace, path) -> None:
    Path(path).write_text(json.dumps(space_to_dict(space)))
