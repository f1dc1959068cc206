"""Pairwise-fusion penalized functional regression and the grouping path.

Predictor coefficient functions are estimated under a concave pairwise
fusion penalty (MCP or SCAD) on coefficient differences; sweeping the
penalty level from zero to full fusion yields an ordered sequence of
partitions of the predictors.

The functional problem is solved in a truncated score representation: all
curves are projected onto the leading principal directions of the pooled
second-moment operator (orthonormal under the grid quadrature), so the L2
distance between two coefficient functions equals the Euclidean distance
between their score vectors. The solver alternates exact minimization over
the coefficient block and over auxiliary pairwise-difference variables
(concave-penalty group thresholding); each half-step is an exact block
minimizer, so the recorded splitting objective never increases. Pairs whose
auxiliary difference is thresholded to zero are consolidated by a final
least-squares refit with equality constraints, which makes fusions exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConvergenceError, DimensionError
from .fdata import CurveSet, ResponseVector, l2_norm

__all__ = [
    "GroupingStructure",
    "GroupingPath",
    "PathEntry",
    "FusedCoefficients",
    "Penalty",
    "ScoreBasis",
    "fit_fused",
    "extract_grouping",
    "compute_path",
    "default_lambda_grid",
]


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupingStructure:
    """A partition of predictor indices 1..p in canonical order."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        canon = tuple(sorted((tuple(sorted(g)) for g in self.groups), key=lambda g: g[0]))
        seen: set[int] = set()
        for g in canon:
            if not g:
                raise ValueError("groups must be nonempty")
            if seen & set(g):
                raise ValueError("groups must be pairwise disjoint")
            seen |= set(g)
        if not seen or seen != set(range(1, max(seen) + 1)):
            raise ValueError("groups must cover {1..p} exactly")
        object.__setattr__(self, "groups", canon)

    @classmethod
    def single_group(cls, p: int) -> "GroupingStructure":
        return cls((tuple(range(1, p + 1)),))

    @classmethod
    def singletons(cls, p: int) -> "GroupingStructure":
        return cls(tuple((j,) for j in range(1, p + 1)))

    @property
    def n_predictors(self) -> int:
        return max(g[-1] for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def refines(self, other: "GroupingStructure") -> bool:
        """True when every group here is contained in some group of ``other``."""
        container: dict[int, tuple[int, ...]] = {}
        for g in other.groups:
            for j in g:
                container[j] = g
        for g in self.groups:
            parent = container.get(g[0])
            if parent is None or not set(g) <= set(parent):
                return False
        return True

    def restrict(self, active: set[int] | frozenset[int]) -> tuple[tuple[int, ...], ...]:
        """Groups intersected with ``active``, empty intersections dropped."""
        out = []
        for g in self.groups:
            kept = tuple(j for j in g if j in active)
            if kept:
                out.append(kept)
        return tuple(out)

    def membership(self) -> np.ndarray:
        """0-based group label per predictor."""
        lab = np.empty(self.n_predictors, dtype=int)
        for i, g in enumerate(self.groups):
            for j in g:
                lab[j - 1] = i
        return lab


@dataclass(frozen=True)
class PathEntry:
    lam: float
    structure: GroupingStructure


@dataclass(frozen=True)
class GroupingPath:
    """Deduplicated grouping structures ordered coarse to fine."""

    entries: tuple[PathEntry, ...]
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty path")
        counts = [e.structure.n_groups for e in self.entries]
        if any(b < a for a, b in zip(counts, counts[1:])):
            raise ValueError("path entries must be ordered by non-decreasing group count")
        sigs = {e.structure.groups for e in self.entries}
        if len(sigs) != len(self.entries):
            raise ValueError("path entries must be deduplicated")
        p = self.entries[0].structure.n_predictors
        if counts[0] != 1 or counts[-1] != p:
            raise ValueError("path must run from one group to all singletons")

    @property
    def structures(self) -> tuple[GroupingStructure, ...]:
        return tuple(e.structure for e in self.entries)


# ---------------------------------------------------------------------------
# Concave penalties
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Penalty:
    """Concave fusion penalty applied to pairwise coefficient distances."""

    kind: str = "mcp"
    gamma: float = 3.0

    def __post_init__(self):
        if self.kind not in ("mcp", "scad"):
            raise ValueError("penalty kind must be 'mcp' or 'scad'")
        if self.kind == "mcp" and self.gamma <= 1:
            raise ValueError("MCP requires gamma > 1")
        if self.kind == "scad" and self.gamma <= 2:
            raise ValueError("SCAD requires gamma > 2")

    def value(self, r: np.ndarray, lam: float) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        g = self.gamma
        if self.kind == "mcp":
            return np.where(r <= g * lam, lam * r - r * r / (2.0 * g), 0.5 * g * lam * lam)
        inner = lam * r
        mid = (2.0 * g * lam * r - r * r - lam * lam) / (2.0 * (g - 1.0))
        outer = np.full_like(r, 0.5 * lam * lam * (g + 1.0))
        return np.where(r <= lam, inner, np.where(r <= g * lam, mid, outer))

    def prox_scale(self, r: np.ndarray, lam: float, rho: float) -> np.ndarray:
        """Multiplier m(r) with prox(v) = m(|v|) * v for the grouped penalty."""
        r = np.asarray(r, dtype=float)
        g = self.gamma
        safe = np.where(r > 0, r, 1.0)
        if self.kind == "mcp":
            mid = g * (rho * r - lam) / ((g * rho - 1.0) * safe)
            scale = np.where(r <= lam / rho, 0.0, np.where(r <= g * lam, mid, 1.0))
        else:
            soft = (r - lam / rho) / safe
            mid = ((g - 1.0) * rho * r - g * lam) / (((g - 1.0) * rho - 1.0) * safe)
            scale = np.where(
                r <= lam / rho,
                0.0,
                np.where(r <= lam + lam / rho, soft, np.where(r <= g * lam, mid, 1.0)),
            )
        return np.clip(scale, 0.0, 1.0)

    def min_rho(self) -> float:
        # prox uniqueness needs rho > 1/gamma (MCP) or 1/(gamma-1) (SCAD)
        return 1.0 / (self.gamma - 1.0) if self.kind == "scad" else 1.0 / self.gamma


# ---------------------------------------------------------------------------
# Truncated score representation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreBasis:
    """Leading pooled principal directions and per-predictor curve scores."""

    grid: object
    directions: np.ndarray  # (K, G), orthonormal under quadrature
    scores: np.ndarray  # (N, p, K)
    explained_fraction: float

    @classmethod
    def fit(
        cls,
        curves: CurveSet,
        var_frac: float = 0.995,
        n_components: int | None = None,
        max_components: int = 40,
    ) -> "ScoreBasis":
        n, p, g = curves.values.shape
        w = curves.grid.weights
        sqw = np.sqrt(w)
        flat = (curves.values * sqw[None, None, :]).reshape(n * p, g)
        _, svals, vt = np.linalg.svd(flat, full_matrices=False)
        ev = svals * svals / (n * p)
        total = float(ev.sum())
        if total <= 0:
            raise ValueError("curves carry no variation")
        usable = int(np.sum(ev > ev[0] * 1e-12))
        if n_components is not None:
            k = min(n_components, usable)
        else:
            frac = np.cumsum(ev[:usable]) / total
            k = int(np.searchsorted(frac, var_frac) + 1)
            k = min(k, usable, max_components)
        directions = vt[:k] / sqw[None, :]
        scores = np.tensordot(curves.values * w[None, None, :], directions, axes=([2], [1]))
        return cls(curves.grid, directions, scores, float(ev[:k].sum() / total))

    @property
    def n_components(self) -> int:
        return self.directions.shape[0]

    def reconstruct(self, coefs: np.ndarray) -> np.ndarray:
        """Map (p, K) score-space coefficients to curves on the grid."""
        return coefs @ self.directions


@dataclass(frozen=True)
class FusedCoefficients:
    """Per-predictor coefficient curves from one fused fit."""

    grid: object
    curves: np.ndarray  # (p, G)
    intercept: float
    objective_trace: tuple[float, ...] = ()
    converged: bool = True
    n_iterations: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.curves)):
            raise ValueError("coefficient curves must be finite")


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


class _FusionWorkspace:
    """Shared quantities reused across a lambda sweep on fixed data."""

    def __init__(
        self,
        curves: CurveSet,
        response: ResponseVector,
        penalty: Penalty,
        rho: float | None,
        var_frac: float,
        n_components: int | None,
    ):
        if response.values.size != curves.n_samples:
            raise DimensionError("response length does not match curve set")
        self.penalty = penalty
        self.basis = ScoreBasis.fit(curves, var_frac=var_frac, n_components=n_components)
        n, p, k = self.basis.scores.shape
        self.n, self.p, self.k = n, p, k
        self.design = self.basis.scores.reshape(n, p * k)
        self.y = response.values
        self.sty = self.design.T @ self.y
        sts = self.design.T @ self.design
        self.rho = max(rho if rho is not None else 1.0, 1.1 * penalty.min_rho())
        self.pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
        lap = p * np.eye(p) - np.ones((p, p))
        self.cho = cho_factor(sts + self.rho * np.kron(lap, np.eye(k)))

    def ols(self) -> np.ndarray:
        c, *_ = np.linalg.lstsq(self.design, self.y, rcond=None)
        return c.reshape(self.p, self.k)

    def residual_ss(self, coefs: np.ndarray) -> float:
        r = self.y - self.design @ coefs.ravel()
        return float(r @ r)

    def deltas(self, coefs: np.ndarray) -> np.ndarray:
        return np.stack([coefs[i] - coefs[j] for i, j in self.pairs])

    def split_objective(self, coefs: np.ndarray, eta: np.ndarray, lam: float) -> float:
        dist = np.linalg.norm(self.deltas(coefs) - eta, axis=1)
        r = np.linalg.norm(eta, axis=1)
        return (
            0.5 * self.residual_ss(coefs)
            + float(np.sum(self.penalty.value(r, lam)))
            + 0.5 * self.rho * float(dist @ dist)
        )

    def solve_coef(self, eta: np.ndarray) -> np.ndarray:
        rhs = self.sty.copy().reshape(self.p, self.k)
        for q, (i, j) in enumerate(self.pairs):
            rhs[i] += self.rho * eta[q]
            rhs[j] -= self.rho * eta[q]
        return cho_solve(self.cho, rhs.ravel()).reshape(self.p, self.k)

    def consolidate(self, eta: np.ndarray, coefs: np.ndarray) -> np.ndarray:
        """Equality-constrained LS refit over the zero-difference components."""
        parent = list(range(self.p))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        fused = np.linalg.norm(eta, axis=1) == 0.0
        for q, (i, j) in enumerate(self.pairs):
            if fused[q]:
                parent[find(i)] = find(j)
        labels = np.array([find(i) for i in range(self.p)])
        roots = sorted(set(labels))
        if len(roots) == self.p:
            return coefs
        cols = np.zeros((self.n, len(roots) * self.k))
        scores = self.basis.scores
        for gi, r in enumerate(roots):
            members = np.where(labels == r)[0]
            cols[:, gi * self.k : (gi + 1) * self.k] = scores[:, members, :].sum(axis=1)
        sol, *_ = np.linalg.lstsq(cols, self.y, rcond=None)
        out = np.empty_like(coefs)
        for gi, r in enumerate(roots):
            out[labels == r] = sol[gi * self.k : (gi + 1) * self.k]
        return out

    def fit(
        self,
        lam: float,
        warm: np.ndarray | None,
        tol: float,
        max_iter: int,
    ) -> tuple[np.ndarray, list[float], int]:
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if lam == 0.0:
            coefs = self.ols()
            return coefs, [0.5 * self.residual_ss(coefs)], 1
        coefs = warm.copy() if warm is not None else self.ols()
        trace: list[float] = []
        eta = None
        for it in range(1, max_iter + 1):
            delta = self.deltas(coefs)
            r = np.linalg.norm(delta, axis=1)
            eta = delta * self.penalty.prox_scale(r, lam, self.rho)[:, None]
            coefs = self.solve_coef(eta)
            trace.append(self.split_objective(coefs, eta, lam))
            if len(trace) > 1:
                prev, cur = trace[-2], trace[-1]
                if abs(prev - cur) <= tol * max(1.0, abs(prev)):
                    return self.consolidate(eta, coefs), trace, it
        raise ConvergenceError(
            f"fused fit did not converge in {max_iter} iterations (lambda={lam:g})",
            last_iterate=coefs,
            objective_trace=trace,
        )


def fit_fused(
    curves: CurveSet,
    response: ResponseVector,
    lam: float,
    penalty: Penalty = Penalty(),
    warm_start: np.ndarray | None = None,
    rho: float | None = None,
    var_frac: float = 0.995,
    n_components: int | None = None,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> FusedCoefficients:
    """Fit the pairwise-fusion penalized regression at one penalty level.

    ``warm_start`` takes score-space coefficients of shape (p, K) as found in
    a previous fit on the same data. Raises ConvergenceError when the
    splitting objective has not stabilized after ``max_iter`` rounds.
    """
    ws = _FusionWorkspace(curves, response, penalty, rho, var_frac, n_components)
    coefs, trace, iters = ws.fit(lam, warm_start, tol, max_iter)
    return FusedCoefficients(
        grid=curves.grid,
        curves=ws.basis.reconstruct(coefs),
        intercept=response.mean,
        objective_trace=tuple(trace),
        converged=True,
        n_iterations=iters,
    )


def extract_grouping(coefs: FusedCoefficients, tol: float = 1e-3) -> GroupingStructure:
    """Connected components of near-equal coefficient curves.

    Predictors i and j join when ||beta_i - beta_j|| <= tol * max_k ||beta_k||.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    curves = coefs.curves
    p = curves.shape[0]
    grid = coefs.grid
    norms = [l2_norm(curves[j], grid) for j in range(p)]
    cutoff = tol * max(norms)
    parent = list(range(p))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(p):
        for j in range(i + 1, p):
            if l2_norm(curves[i] - curves[j], grid) <= cutoff:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for j in range(p):
        groups.setdefault(find(j), []).append(j + 1)
    return GroupingStructure(tuple(tuple(g) for g in groups.values()))


def default_lambda_grid(
    curves: CurveSet,
    response: ResponseVector,
    penalty: Penalty = Penalty(),
    n_lambdas: int = 40,
    rho: float | None = None,
    var_frac: float = 0.995,
    n_components: int | None = None,
) -> np.ndarray:
    """Log-spaced grid reaching the scale at which all pairs fuse.

    The thresholding step zeroes a pairwise difference once its magnitude
    falls below lambda/rho, so lambda_max is set a little above
    rho * (largest pairwise distance of the unpenalized solution).
    """
    ws = _FusionWorkspace(curves, response, penalty, rho, var_frac, n_components)
    dist = np.linalg.norm(ws.deltas(ws.ols()), axis=1)
    top = float(dist.max()) if dist.size else 1.0
    if top <= 0:
        top = 1.0
    lam_max = 1.25 * ws.rho * top
    return np.geomspace(lam_max * 1e-3, lam_max, n_lambdas)


def compute_path(
    curves: CurveSet,
    response: ResponseVector,
    lambda_grid=None,
    penalty: Penalty = Penalty(),
    group_tol: float = 1e-3,
    rho: float | None = None,
    var_frac: float = 0.995,
    n_components: int | None = None,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> GroupingPath:
    """Sweep the penalty level and collect the grouping path.

    Fits are warm-started in ascending lambda order; a lambda whose fit fails
    to converge is dropped and recorded in the diagnostics. The returned
    entries are deduplicated, sorted coarse to fine, and augmented with the
    all-singleton and one-group endpoints when the sweep did not reach them.
    """
    p = curves.n_predictors
    ws = _FusionWorkspace(curves, response, penalty, rho, var_frac, n_components)
    if lambda_grid is None:
        dist = np.linalg.norm(ws.deltas(ws.ols()), axis=1)
        top = max(float(dist.max()) if dist.size else 1.0, 1e-12)
        lam_max = 1.25 * ws.rho * top
        lambda_grid = np.geomspace(lam_max * 1e-3, lam_max, 40)
    lambda_grid = np.sort(np.asarray(lambda_grid, dtype=float))
    if lambda_grid.size < 10:
        raise ValueError("lambda grid needs at least 10 points")

    raw: list[tuple[float, GroupingStructure]] = []
    dropped: list[float] = []
    fit_info: list[dict] = []
    warm = None
    lams = list(lambda_grid)
    extensions = 0
    i = 0
    while i < len(lams):
        lam = float(lams[i])
        i += 1
        try:
            coefs, trace, iters = ws.fit(lam, warm, tol, max_iter)
        except ConvergenceError as err:
            dropped.append(lam)
            warm = np.asarray(err.last_iterate)
            fit_info.append({"lambda": lam, "converged": False, "iterations": max_iter})
            continue
        warm = coefs
        structure = extract_grouping(
            FusedCoefficients(curves.grid, ws.basis.reconstruct(coefs), response.mean),
            tol=group_tol,
        )
        raw.append((lam, structure))
        fit_info.append(
            {"lambda": lam, "converged": True, "iterations": iters, "objective": trace[-1]}
        )
        # auto-extend until the largest lambda reaches full fusion
        if i == len(lams) and structure.n_groups > 1 and extensions < 12:
            lams.append(lam * 2.0)
            extensions += 1

    if p == 1:
        entry = PathEntry(0.0, GroupingStructure.single_group(1))
        return GroupingPath((entry,), {"dropped": dropped, "fits": fit_info})

    by_structure: dict[tuple, PathEntry] = {}
    for lam, structure in raw:
        key = structure.groups
        if key not in by_structure or lam > by_structure[key].lam:
            by_structure[key] = PathEntry(lam, structure)
    entries = list(by_structure.values())
    if not any(e.structure.n_groups == p for e in entries):
        entries.append(PathEntry(0.0, GroupingStructure.singletons(p)))
    if not any(e.structure.n_groups == 1 for e in entries):
        entries.append(PathEntry(float(lams[-1]) * 2.0, GroupingStructure.single_group(p)))
    entries.sort(key=lambda e: (e.structure.n_groups, -e.lam, e.structure.groups))
    return GroupingPath(tuple(entries), {"dropped": dropped, "fits": fit_info})
