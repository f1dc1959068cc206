"""Filtrated functional partial least squares.

One filtration layer takes the current predictor and response residuals and
a partition of the active predictors, extracts one unit-norm basis direction
per group (the normalized response-covariance curve), pools each group's
projection scores into a shared component, solves a joint least-squares
problem for the component coefficients, and deflates both the predictor
curves and the response before the next, finer layer.

Deflation regresses every active predictor's residual curves on the full
layer score matrix, which enforces exact sample-level orthogonality between
each layer's scores and everything extracted later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .fdata import CurveSet, Grid, ResponseVector, Standardization
from .fusionpath import GroupingStructure

__all__ = [
    "StoppingConfig",
    "FiltrationState",
    "LayerFit",
    "FitDiagnostics",
    "FittedModel",
    "estimate_basis",
    "compute_scores",
    "fit_layer",
    "deflate",
    "run_filtration",
]

DEGENERATE_TOL = 1e-12
RANK_RIDGE = 1e-10


@dataclass(frozen=True)
class StoppingConfig:
    """Filtration stopping thresholds.

    e_y: stop once a layer's relative response-SS improvement falls below it.
    e_x: drop a predictor once its residual energy fraction falls below it.
    """

    e_y: float = 0.01
    e_x: float = 0.01
    d_max: int = 12

    def __post_init__(self):
        if self.e_y < 0 or self.e_x < 0:
            raise ValueError("thresholds must be nonnegative")
        if self.d_max < 1:
            raise ValueError("d_max must be at least 1")


class FiltrationState:
    """Working residuals of one filtration pass (mutated only by replacement)."""

    __slots__ = ("layer_index", "grid", "curves", "response", "active", "initial_energy")

    def __init__(self, layer_index, grid, curves, response, active, initial_energy):
        self.layer_index = layer_index
        self.grid = grid
        self.curves = curves  # (N, p, G) residual curves
        self.response = response  # (N,) residual response
        self.active = tuple(active)  # 1-based predictor indices
        self.initial_energy = initial_energy  # (p,) layer-1 energies

    @classmethod
    def initial(cls, curves: CurveSet, response: ResponseVector) -> "FiltrationState":
        if response.values.size != curves.n_samples:
            raise DimensionError("response length does not match curve set")
        energy = predictor_energy(curves.values, curves.grid)
        return cls(
            1,
            curves.grid,
            curves.values.copy(),
            response.values.copy(),
            tuple(range(1, curves.n_predictors + 1)),
            energy,
        )

    @property
    def n_samples(self) -> int:
        return self.curves.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.curves.shape[1]

    def response_ss(self) -> float:
        return float(self.response @ self.response)

    def energy_fractions(self) -> np.ndarray:
        cur = predictor_energy_raw(self.curves, self.grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(self.initial_energy > 0, cur / self.initial_energy, 0.0)
        return frac


def predictor_energy_raw(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.einsum("npg,g->p", values * values, grid.weights)


def predictor_energy(values: np.ndarray, grid: Grid) -> np.ndarray:
    out = predictor_energy_raw(values, grid)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LayerFit:
    """Everything extracted at one filtration layer."""

    groups: tuple[tuple[int, ...], ...]  # partition of the active set, 1-based
    active: tuple[int, ...]
    basis: np.ndarray  # (m, G) unit-norm directions; zero rows when degenerate
    scores: np.ndarray  # (N, m) pooled shared components; zero for degenerate
    coef_scores: np.ndarray  # (m,)
    loadings: np.ndarray  # (n_active, m, G) deflation loadings
    degenerate: np.ndarray  # (m,) bool
    rank_deficient: bool
    ss_before: float
    ss_after: float

    @property
    def explained_ss(self) -> float:
        return max(self.ss_before - self.ss_after, 0.0)

    @property
    def n_groups(self) -> int:
        return len(self.groups)


def _normalize_groups(partition, active: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    if isinstance(partition, GroupingStructure):
        groups = partition.restrict(set(active))
    else:
        groups = tuple(tuple(sorted(g)) for g in partition)
    seen: set[int] = set()
    for g in groups:
        if not g:
            raise ValueError("empty group in partition")
        if seen & set(g):
            raise ValueError("groups overlap")
        seen |= set(g)
    if seen != set(active):
        raise ValueError("partition must cover exactly the active predictors")
    return tuple(sorted(groups, key=lambda g: g[0]))


def estimate_basis(group, state: FiltrationState) -> np.ndarray | None:
    """Normalized pooled response-covariance curve, or None when degenerate.

    The unnormalized direction is sum_n y_n * sum_{j in group} X_jn(t); a
    group whose covariance curve norm is negligible relative to the data
    scale contributes nothing this layer.
    """
    idx = [j - 1 for j in group]
    pooled = state.curves[:, idx, :].sum(axis=1)  # (N, G)
    cov = state.response @ pooled  # (G,)
    w = state.grid.weights
    cov_norm = float(np.sqrt(max(np.dot(cov * w, cov), 0.0)))
    n = state.n_samples
    rms_y = float(np.sqrt(state.response @ state.response / n))
    rms_pool = float(np.sqrt(np.einsum("ng,g,ng->", pooled, w, pooled) / n))
    if cov_norm <= DEGENERATE_TOL * n * rms_y * rms_pool or cov_norm == 0.0:
        return None
    return cov / cov_norm


def compute_scores(group, basis: np.ndarray, state: FiltrationState) -> np.ndarray:
    """Pooled projection scores sum_{j in group} <X_jn, basis> for each sample."""
    idx = [j - 1 for j in group]
    pooled = state.curves[:, idx, :].sum(axis=1)
    return pooled @ (basis * state.grid.weights)


def fit_layer(partition, state: FiltrationState, compute_loadings: bool = True) -> LayerFit:
    """Fit one filtration layer: bases, shared components, joint OLS, loadings.

    ``compute_loadings=False`` skips the deflation-loading regression (used
    for cheap structure probes that are discarded unless committed).
    """
    groups = _normalize_groups(partition, state.active)
    n, g = state.n_samples, state.curves.shape[2]
    m = len(groups)
    basis = np.zeros((m, g))
    scores = np.zeros((n, m))
    degenerate = np.zeros(m, dtype=bool)
    for i, grp in enumerate(groups):
        psi = estimate_basis(grp, state)
        if psi is None:
            degenerate[i] = True
            continue
        basis[i] = psi
        scores[:, i] = compute_scores(grp, psi, state)

    live = ~degenerate
    coef = np.zeros(m)
    rank_deficient = False
    act_idx = [j - 1 for j in state.active]
    loadings = np.zeros((len(act_idx), m, g))
    ss_before = state.response_ss()

    if live.any():
        z = scores[:, live]
        svals = np.linalg.svd(z, compute_uv=False)
        rank = int(np.sum(svals > svals[0] * max(z.shape) * np.finfo(float).eps))
        # one joint solve: first rhs column is the response, the rest are the
        # active predictors' residual curves (for the deflation loadings)
        if compute_loadings:
            rhs = np.concatenate(
                [state.response[:, None], state.curves[:, act_idx, :].reshape(n, -1)], axis=1
            )
        else:
            rhs = state.response[:, None]
        if rank < z.shape[1]:
            rank_deficient = True
            gram = z.T @ z
            gram_r = gram + RANK_RIDGE * np.trace(gram) * np.eye(gram.shape[0])
            sol = np.linalg.solve(gram_r, z.T @ rhs)
        else:
            q, r_mat = np.linalg.qr(z)
            sol = np.linalg.solve(r_mat, q.T @ rhs)
        coef[live] = sol[:, 0]
        if compute_loadings:
            loadings[:, live, :] = (
                sol[:, 1:].reshape(z.shape[1], len(act_idx), g).transpose(1, 0, 2)
            )

    resid = state.response - scores @ coef
    return LayerFit(
        groups=groups,
        active=state.active,
        basis=basis,
        scores=scores,
        coef_scores=coef,
        loadings=loadings,
        degenerate=degenerate,
        rank_deficient=rank_deficient,
        ss_before=ss_before,
        ss_after=float(resid @ resid),
    )


def deflate(state: FiltrationState, layer: LayerFit) -> FiltrationState:
    """Remove the layer's fitted contribution from curves and response."""
    new_curves = state.curves.copy()
    live = ~layer.degenerate
    if live.any():
        z = layer.scores[:, live]
        act_idx = [j - 1 for j in layer.active]
        phi = layer.loadings[:, live, :]  # (a, m, G)
        a, m, g = phi.shape
        update = (z @ phi.transpose(1, 0, 2).reshape(m, a * g)).reshape(-1, a, g)
        new_curves[:, act_idx, :] -= update
    new_response = state.response - layer.scores @ layer.coef_scores
    return FiltrationState(
        state.layer_index + 1,
        state.grid,
        new_curves,
        new_response,
        state.active,
        state.initial_energy,
    )


@dataclass(frozen=True)
class FitDiagnostics:
    stopping_reason: str
    ss_trace: tuple[float, ...]  # response SS before layer 1, after each layer
    improvements: tuple[float, ...]
    final_residual: np.ndarray  # y residual after the last layer
    rank_deficient_layers: tuple[int, ...]


@dataclass(frozen=True)
class FittedModel:
    """A fitted multiscale model, immutable and serializable."""

    grid: Grid
    n_predictors: int
    response_mean: float
    standardization: Standardization | None
    forest: tuple[GroupingStructure, ...]
    layers: tuple[LayerFit, ...]
    diagnostics: FitDiagnostics

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def run_filtration(
    forest,
    curves: CurveSet,
    response: ResponseVector,
    stop: StoppingConfig = StoppingConfig(),
    standardization: Standardization | None = None,
) -> FittedModel:
    """Iterate fit/deflate over the forest layers with the stopping rules.

    ``curves`` must already be standardized and ``response`` centered; pass
    the fitted Standardization to embed it for prediction on raw curves.
    The layer that first fails the improvement test is kept (it was fitted
    and deflated) and filtration ends there.
    """
    structures = [s if isinstance(s, GroupingStructure) else GroupingStructure(tuple(map(tuple, s))) for s in forest]
    if not structures:
        raise ValueError("forest must contain at least one layer")
    state = FiltrationState.initial(curves, response)
    layers: list[LayerFit] = []
    improvements: list[float] = []
    ss_trace = [state.response_ss()]
    reason = "layers exhausted" if len(structures) <= stop.d_max else "d_max reached"

    for d, structure in enumerate(structures[: stop.d_max], start=1):
        frac = state.energy_fractions()
        active = tuple(j for j in state.active if frac[j - 1] > stop.e_x)
        if not active:
            if d == 1:
                raise ValueError("no active predictors at the first layer")
            reason = "active set empty"
            break
        state.active = active
        layer = fit_layer(structure, state)
        if layer.ss_before <= 0.0:
            reason = "zero residual"
            break
        rel = (layer.ss_before - layer.ss_after) / layer.ss_before
        # a layer whose improvement is negligible is not kept
        if max(rel, 0.0) < stop.e_y:
            reason = "improvement below e_y"
            break
        state = deflate(state, layer)
        layers.append(layer)
        ss_trace.append(layer.ss_after)
        improvements.append(rel)

    diagnostics = FitDiagnostics(
        stopping_reason=reason,
        ss_trace=tuple(ss_trace),
        improvements=tuple(improvements),
        final_residual=state.response.copy(),
        rank_deficient_layers=tuple(d for d, lf in enumerate(layers, start=1) if lf.rank_deficient),
    )
    return FittedModel(
        grid=curves.grid,
        n_predictors=curves.n_predictors,
        response_mean=response.mean,
        standardization=standardization,
        forest=tuple(structures[: len(layers)]),
        layers=tuple(layers),
        diagnostics=diagnostics,
    )
