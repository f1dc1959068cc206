"""Forest-structure learning.

Builds nested candidate chains from the grouping path, scores them by
resampled prediction error, refines the layer sequence under a generalized
information criterion with a geometrically decaying complexity weight, and
tunes that weight by Monte Carlo cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EvaluationError, FiltraError, SelectionError
from .fdata import CurveSet, ResponseVector, Standardization, center_response
from .filtpls import (
    FitDiagnostics,
    FiltrationState,
    FittedModel,
    StoppingConfig,
    deflate,
    fit_layer,
    run_filtration,
)
from .fusionpath import GroupingPath, GroupingStructure
from .model import predict, predict_layers
from .seeding import rng_for

__all__ = [
    "CandidateSet",
    "Forest",
    "GicConfig",
    "McCvConfig",
    "enumerate_candidate_sets",
    "evaluate_candidate_set",
    "select_candidate_set",
    "gic",
    "refine_layers",
    "refine_and_fit",
    "select_theta",
    "default_theta_grid",
    "fit_grouped_model",
]


@dataclass(frozen=True)
class CandidateSet:
    """A strictly nested chain of structures from one group to singletons."""

    structures: tuple[GroupingStructure, ...]

    def __post_init__(self):
        s = self.structures
        if not s:
            raise ValueError("candidate set cannot be empty")
        p = s[0].n_predictors
        if s[0].n_groups != 1:
            raise ValueError("first structure must be the one-group partition")
        if s[-1].n_groups != p:
            raise ValueError("last structure must be all singletons")
        for a, b in zip(s, s[1:]):
            if b.groups == a.groups or not b.refines(a):
                raise ValueError("structures must form a strictly nested coarse-to-fine chain")

    def __len__(self) -> int:
        return len(self.structures)

    @property
    def signature(self) -> tuple:
        return tuple(s.groups for s in self.structures)


@dataclass(frozen=True)
class Forest:
    """Ordered filtration layers; each layer refines or repeats the previous."""

    layers: tuple[GroupingStructure, ...]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if not b.refines(a):
                raise ValueError("each layer must be nested within the previous one")

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)


@dataclass(frozen=True)
class GicConfig:
    """GIC refinement parameters; the layer-d complexity weight is rho * gamma**(1-d)."""

    rho: float
    gamma: float = 1.0
    e_y: float = 0.01
    e_x: float = 0.01
    window: int = 2
    window_e: float = 0.1
    d_max: int = 12

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1 so the complexity weight is non-increasing")
        if not (0.0 <= self.e_y < 1.0 and 0.0 <= self.e_x < 1.0):
            raise ValueError("e_y and e_x must lie in [0, 1)")
        if self.window < 1 or self.d_max < 1:
            raise ValueError("window and d_max must be positive")

    def tau(self, d: int) -> float:
        return self.rho * self.gamma ** (-(d - 1))


@dataclass(frozen=True)
class McCvConfig:
    """Monte Carlo cross-validation: repeated random train/test splits."""

    n_splits: int = 100
    test_frac: float = 0.2
    seed: int = 0
    max_depth: int = 10
    inner_folds: int = 5
    per_structure_average: bool = False

    def split(self, n: int, index: int) -> tuple[np.ndarray, np.ndarray]:
        perm = rng_for(self.seed, "mccv", index).permutation(n)
        n_test = max(1, int(round(self.test_frac * n)))
        return perm[n_test:], perm[:n_test]


# ---------------------------------------------------------------------------
# Candidate chains
# ---------------------------------------------------------------------------

_CHAIN_ENUM_LIMIT = 5000


def enumerate_candidate_sets(path, cap: int = 50) -> list[CandidateSet]:
    """All maximal nested chains through the path structures.

    Endpoints (one group, singletons) are added when absent. Chains follow
    cover relations of the refinement order, so no returned chain is a
    sub-collection of another. When more than ``cap`` chains exist, the
    ``cap`` longest are kept (ties broken by structure signature).
    """
    structures = list(path.structures) if isinstance(path, GroupingPath) else list(path)
    if not structures:
        raise ValueError("empty path")
    p = structures[0].n_predictors
    pool: dict[tuple, GroupingStructure] = {s.groups: s for s in structures}
    top = GroupingStructure.single_group(p)
    bottom = GroupingStructure.singletons(p)
    pool.setdefault(top.groups, top)
    pool.setdefault(bottom.groups, bottom)
    nodes = list(pool.values())

    strictly_finer: dict[tuple, list[GroupingStructure]] = {}
    for x in nodes:
        strictly_finer[x.groups] = [s for s in nodes if s.groups != x.groups and s.refines(x)]

    def covers(x: GroupingStructure) -> list[GroupingStructure]:
        finer = strictly_finer[x.groups]
        out = []
        for s in finer:
            if not any(
                s.groups != m.groups and s.refines(m) for m in finer if m.groups != x.groups
            ):
                out.append(s)
        return sorted(out, key=lambda s: s.groups)

    chains: list[tuple[GroupingStructure, ...]] = []
    stack = [(top, (top,))]
    while stack and len(chains) < _CHAIN_ENUM_LIMIT:
        node, chain = stack.pop()
        if node.groups == bottom.groups:
            chains.append(chain)
            continue
        for child in reversed(covers(node)):
            stack.append((child, chain + (child,)))

    chains.sort(key=lambda c: (-len(c), tuple(s.groups for s in c)))
    return [CandidateSet(c) for c in chains[:cap]]


# ---------------------------------------------------------------------------
# Grouped-model fitting (fixed structure repeated across layers)
# ---------------------------------------------------------------------------


def _fit_constant_structure(
    curves: CurveSet,
    y: np.ndarray,
    structure: GroupingStructure,
    depth: int,
    e_x: float = 0.0,
) -> FittedModel:
    std = Standardization.fit(curves)
    resp = center_response(y)
    return run_filtration(
        [structure] * depth,
        std.apply(curves),
        resp,
        StoppingConfig(e_y=0.0, e_x=e_x, d_max=depth),
        standardization=std,
    )


def fit_grouped_model(
    structure: GroupingStructure,
    curves: CurveSet,
    y,
    seed: int = 0,
    max_depth: int = 10,
    inner_folds: int = 5,
) -> FittedModel:
    """Fit one grouping structure repeated across layers, depth chosen by CV.

    The layer count is selected over 1..max_depth by ``inner_folds``-fold
    cross-validation on the training data, then the model is refit at the
    chosen depth on all of it.
    """
    y = np.asarray(y, dtype=float)
    n = curves.n_samples
    folds = np.arange(n) % inner_folds
    folds = folds[rng_for(seed, "depth-folds").permutation(n)]
    sse = np.zeros(max_depth + 1)
    for f in range(inner_folds):
        tr, va = np.where(folds != f)[0], np.where(folds == f)[0]
        if tr.size < 3 or va.size == 0:
            continue
        sub = CurveSet(curves.grid, curves.values[tr])
        mod = _fit_constant_structure(sub, y[tr], structure, max_depth)
        preds = predict_layers(mod, CurveSet(curves.grid, curves.values[va]))
        fitted_depth = preds.shape[1] - 1
        for k in range(1, max_depth + 1):
            col = preds[:, min(k, fitted_depth)]
            sse[k] += float(np.sum((y[va] - col) ** 2))
    best_depth = int(np.argmin(sse[1:]) + 1)
    return _fit_constant_structure(curves, y, structure, best_depth)


def _structure_split_errors(
    structure: GroupingStructure,
    curves: CurveSet,
    y: np.ndarray,
    cfg: McCvConfig,
) -> tuple[list[float], int]:
    """Per-split test MSE of the grouped model; failed splits are counted."""
    errors: list[float] = []
    failed = 0
    n = curves.n_samples
    for s in range(cfg.n_splits):
        train, test = cfg.split(n, s)
        try:
            mod = fit_grouped_model(
                structure,
                CurveSet(curves.grid, curves.values[train]),
                y[train],
                seed=cfg.seed + 1_000_003 * s,
                max_depth=cfg.max_depth,
                inner_folds=cfg.inner_folds,
            )
            pred = predict(mod, CurveSet(curves.grid, curves.values[test]))
            errors.append(float(np.mean((y[test] - pred) ** 2)))
        except (FiltraError, np.linalg.LinAlgError, ValueError):
            failed += 1
    return errors, failed


def evaluate_candidate_set(
    cset: CandidateSet,
    curves: CurveSet,
    y,
    resampling: McCvConfig = McCvConfig(),
    _cache: dict | None = None,
) -> float:
    """Average resampled prediction error of the grouped models in the set.

    Each structure is fit on every training split (standardization refit per
    split) and scored on the held-out part; the default aggregates uniformly
    over (structure, split) pairs. More than 20% failed fits raise.
    """
    y = np.asarray(y, dtype=float)
    cache = _cache if _cache is not None else {}
    all_errors: list[list[float]] = []
    failed = 0
    for structure in cset.structures:
        key = structure.groups
        if key not in cache:
            cache[key] = _structure_split_errors(structure, curves, y, resampling)
        errs, nf = cache[key]
        all_errors.append(errs)
        failed += nf
    total = len(cset.structures) * resampling.n_splits
    if failed > 0.2 * total:
        raise EvaluationError(f"{failed}/{total} grouped fits failed during evaluation")
    if resampling.per_structure_average:
        means = [float(np.mean(e)) for e in all_errors if e]
        return float(np.mean(means))
    flat = [v for errs in all_errors for v in errs]
    return float(np.mean(flat))


def select_candidate_set(
    sets,
    curves: CurveSet,
    y,
    resampling: McCvConfig = McCvConfig(),
    structure_cache: dict | None = None,
) -> CandidateSet:
    """Candidate set with the lowest average prediction error."""
    sets = list(sets)
    if not sets:
        raise SelectionError("no candidate sets to select from")
    cache: dict = structure_cache if structure_cache is not None else {}
    best = None
    for cset in sets:
        try:
            score = evaluate_candidate_set(cset, curves, y, resampling, _cache=cache)
        except EvaluationError:
            continue
        key = (score, -len(cset), cset.signature)
        if best is None or key < best[0]:
            best = (key, cset)
    if best is None:
        raise SelectionError("every candidate set failed evaluation")
    return best[1]


def gic(residual_response, n_groups: int, tau_d: float) -> float:
    """N^-1 * sum of squared residuals plus tau_d times the group count."""
    r = np.asarray(residual_response, dtype=float)
    return float(r @ r) / r.size + tau_d * n_groups


@dataclass(frozen=True)
class RefinementReport:
    chosen_indices: tuple[int, ...]
    gic_tables: tuple[tuple[dict, ...], ...]
    stopping_reason: str
    improvements: tuple[float, ...]


def refine_and_fit(
    cset: CandidateSet,
    curves: CurveSet,
    response: ResponseVector,
    config: GicConfig,
    standardization: Standardization | None = None,
) -> tuple[Forest, FittedModel, RefinementReport]:
    """Layer-by-layer GIC selection over the candidate chain, plus the fit.

    At layer d every chain structure at or after the previous layer's
    position is probed with a one-layer fit on the current residuals; the
    GIC minimizer is committed. Stops when the relative response-SS
    improvement drops below e_y, when ``window`` consecutive improvements
    stay below ``window_e``, when the active set empties, or at d_max.
    """
    state = FiltrationState.initial(curves, response)
    chain = cset.structures
    pos = 0
    layers = []
    chosen: list[int] = []
    tables: list[tuple[dict, ...]] = []
    improvements: list[float] = []
    ss_trace = [state.response_ss()]
    reason = "d_max reached"

    for d in range(1, config.d_max + 1):
        frac = state.energy_fractions()
        active = tuple(j for j in state.active if frac[j - 1] > config.e_x)
        if not active:
            if d == 1:
                raise ValueError("no active predictors at the first layer")
            reason = "active set empty"
            break
        state.active = active
        tau_d = config.tau(d)
        rows = []
        best = None
        for idx in range(pos, len(chain)):
            try:
                groups = chain[idx].restrict(set(active))
                probe = fit_layer(groups, state, compute_loadings=False)
            except (FiltraError, np.linalg.LinAlgError, ValueError):
                rows.append({"index": idx, "failed": True})
                continue
            val = probe.ss_after / state.n_samples + tau_d * len(groups)
            rows.append(
                {"index": idx, "n_groups": len(groups), "gic": val, "ss_after": probe.ss_after}
            )
            if best is None or val < best[0]:
                best = (val, idx)
        tables.append(tuple(rows))
        if best is None:
            reason = "no viable structure"
            break
        _, idx = best
        layer = fit_layer(chain[idx].restrict(set(active)), state)
        if layer.ss_before <= 0.0:
            reason = "zero residual"
            break
        rel = max((layer.ss_before - layer.ss_after) / layer.ss_before, 0.0)
        # stopping is decided before committing: a layer that fails the
        # improvement test (or closes a window of weak layers) is not kept
        if rel < config.e_y:
            reason = "improvement below e_y"
            break
        recent = improvements[-(config.window - 1) :] if config.window > 1 else []
        if len(recent) == config.window - 1 and all(
            r < config.window_e for r in recent + [rel]
        ):
            reason = "weak improvements over window"
            break
        pos = idx
        chosen.append(idx)
        layers.append(layer)
        state = deflate(state, layer)
        ss_trace.append(layer.ss_after)
        improvements.append(rel)

    forest = Forest(tuple(chain[i] for i in chosen))
    diagnostics = FitDiagnostics(
        stopping_reason=reason,
        ss_trace=tuple(ss_trace),
        improvements=tuple(improvements),
        final_residual=state.response.copy(),
        rank_deficient_layers=tuple(d for d, lf in enumerate(layers, start=1) if lf.rank_deficient),
    )
    model = FittedModel(
        grid=curves.grid,
        n_predictors=curves.n_predictors,
        response_mean=response.mean,
        standardization=standardization,
        forest=forest.layers,
        layers=tuple(layers),
        diagnostics=diagnostics,
    )
    report = RefinementReport(tuple(chosen), tuple(tables), reason, tuple(improvements))
    return forest, model, report


def refine_layers(
    cset: CandidateSet,
    curves: CurveSet,
    response: ResponseVector,
    config: GicConfig,
) -> Forest:
    """Forest learned by iterative GIC selection (see refine_and_fit)."""
    forest, _, _ = refine_and_fit(cset, curves, response, config)
    return forest


def default_theta_grid(y) -> list[tuple[float, float]]:
    """rho proportional to var(y), crossed with a few decay rates."""
    scale = float(np.var(np.asarray(y, dtype=float)))
    return [
        (r * scale, g)
        for r in (0.005, 0.01, 0.05, 0.1, 0.5)
        for g in (1.0, 1.25, 1.5, 2.0)
    ]


def select_theta(
    theta_grid,
    curves: CurveSet,
    y,
    resampling: McCvConfig,
    cset: CandidateSet,
    base: GicConfig | None = None,
) -> GicConfig:
    """Pick (rho, gamma) minimizing mean out-of-sample MSE over MC splits.

    Every theta sees the same splits; for each split the forest is relearned
    on the training part and scored on the held-out part. Ties keep the
    earliest grid entry.
    """
    theta_grid = list(theta_grid)
    if not theta_grid:
        raise SelectionError("empty theta grid")
    y = np.asarray(y, dtype=float)
    n = curves.n_samples
    base = base or GicConfig(rho=1.0)
    best = None
    for rho, gamma in theta_grid:
        config = replace(base, rho=rho, gamma=gamma)
        errors = []
        failed = 0
        for s in range(resampling.n_splits):
            train, test = resampling.split(n, s)
            try:
                sub = CurveSet(curves.grid, curves.values[train])
                std = Standardization.fit(sub)
                resp = center_response(y[train])
                _, model, _ = refine_and_fit(cset, std.apply(sub), resp, config, std)
                pred = predict(model, CurveSet(curves.grid, curves.values[test]))
                errors.append(float(np.mean((y[test] - pred) ** 2)))
            except (FiltraError, np.linalg.LinAlgError, ValueError):
                failed += 1
        if failed > 0.2 * resampling.n_splits or not errors:
            continue
        score = float(np.mean(errors))
        if best is None or score < best[0]:
            best = (score, config)
    if best is None:
        raise SelectionError("every theta failed evaluation")
    return best[1]
