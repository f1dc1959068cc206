"""Prediction and post-fit inference for fitted multiscale models.

Prediction replays the training filtration on new curves with the stored
bases, loadings, and coefficient scores; inference covers component
importance (partial sums of squares), fixed-structure bootstrap confidence
intervals for the coefficient scores, and shared-layer pair counts.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EvaluationError, FiltraError, SchemaError
from .fdata import CurveSet, Grid, ResponseVector, Standardization
from .filtpls import (
    FitDiagnostics,
    FiltrationState,
    FittedModel,
    LayerFit,
    deflate,
    fit_layer,
)
from .fusionpath import GroupingStructure
from .seeding import rng_for

__all__ = [
    "SharedLayerMatrix",
    "predict",
    "predict_layers",
    "pss",
    "coefficient_cis",
    "shared_layer_counts",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "atomic_write_text",
]

MODEL_SCHEMA_VERSION = "1.0"


def _standardized_values(model: FittedModel, curves: CurveSet) -> np.ndarray:
    if curves.n_predictors != model.n_predictors:
        raise DimensionError(
            f"model expects {model.n_predictors} predictors, got {curves.n_predictors}"
        )
    if curves.grid != model.grid:
        raise DimensionError("curves are not on the model grid")
    if model.standardization is not None:
        return model.standardization.apply(curves).values.copy()
    return curves.values.copy()


def _layer_component_scores(resid: np.ndarray, layer: LayerFit, weights: np.ndarray) -> np.ndarray:
    """Scores of every group of one layer from current residual curves."""
    n = resid.shape[0]
    z = np.zeros((n, layer.n_groups))
    for i, grp in enumerate(layer.groups):
        if layer.degenerate[i]:
            continue
        idx = [j - 1 for j in grp]
        pooled = resid[:, idx, :].sum(axis=1)
        z[:, i] = pooled @ (layer.basis[i] * weights)
    return z


def _deflate_resid(resid: np.ndarray, layer: LayerFit, z: np.ndarray) -> None:
    live = ~layer.degenerate
    if live.any():
        act_idx = [j - 1 for j in layer.active]
        phi = layer.loadings[:, live, :]  # (a, m, G)
        a, m, g = phi.shape
        update = (z[:, live] @ phi.transpose(1, 0, 2).reshape(m, a * g)).reshape(-1, a, g)
        resid[:, act_idx, :] -= update


def _replay_scores(model: FittedModel, values: np.ndarray) -> list[np.ndarray]:
    """Per-layer score matrices obtained by replaying the filtration."""
    resid = values
    w = model.grid.weights
    out = []
    for layer in model.layers:
        z = _layer_component_scores(resid, layer, w)
        out.append(z)
        _deflate_resid(resid, layer, z)
    return out


def predict(model: FittedModel, new_curves: CurveSet) -> np.ndarray:
    """Predicted responses for new curves."""
    values = _standardized_values(model, new_curves)
    acc = np.full(values.shape[0], model.response_mean)
    for layer, z in zip(model.layers, _replay_scores(model, values)):
        acc = acc + z @ layer.coef_scores
    return acc


def predict_layers(model: FittedModel, new_curves: CurveSet) -> np.ndarray:
    """Cumulative predictions after 0, 1, ..., D layers, shape (N, D+1)."""
    values = _standardized_values(model, new_curves)
    acc = np.full(values.shape[0], model.response_mean)
    cols = [acc.copy()]
    for layer, z in zip(model.layers, _replay_scores(model, values)):
        acc = acc + z @ layer.coef_scores
        cols.append(acc.copy())
    return np.column_stack(cols)


def _component_matrix(model: FittedModel, curves: CurveSet) -> tuple[np.ndarray, list[tuple[int, int]]]:
    values = _standardized_values(model, curves)
    blocks = _replay_scores(model, values)
    labels = [
        (d, i)
        for d, layer in enumerate(model.layers, start=1)
        for i in range(1, layer.n_groups + 1)
    ]
    return np.column_stack(blocks) if blocks else np.empty((values.shape[0], 0)), labels


def pss(model: FittedModel, curves: CurveSet, y, layer: int, group: int) -> float:
    """Partial sum of squares of one extracted shared component.

    Refits the joint least squares of the centered response on all extracted
    components except component ``group`` of layer ``layer`` (both 1-based)
    and returns RSS(reduced) - RSS(full).
    """
    t, labels = _component_matrix(model, curves)
    if (layer, group) not in labels:
        raise IndexError(f"no component at layer {layer}, group {group}")
    yc = np.asarray(y, dtype=float) - model.response_mean

    def rss(cols: np.ndarray) -> float:
        if cols.shape[1] == 0:
            return float(yc @ yc)
        coef, *_ = np.linalg.lstsq(cols, yc, rcond=None)
        r = yc - cols @ coef
        return float(r @ r)

    keep = [k for k, lab in enumerate(labels) if lab != (layer, group)]
    return rss(t[:, keep]) - rss(t)


def _refit_fixed_structure(model: FittedModel, curves: CurveSet, y: np.ndarray) -> np.ndarray:
    """Coefficient scores from refitting with the model's structure held fixed."""
    std = Standardization.fit(curves)
    x = std.apply(curves)
    resp = ResponseVector(np.asarray(y, float) - float(np.mean(y)), float(np.mean(y)))
    state = FiltrationState.initial(x, resp)
    out = []
    for layer in model.layers:
        state.active = layer.active
        lf = fit_layer(layer.groups, state)
        state = deflate(state, lf)
        out.append(lf.coef_scores)
    return np.concatenate(out) if out else np.empty(0)


def coefficient_cis(
    model: FittedModel,
    curves: CurveSet,
    y,
    n_boot: int = 200,
    level: float = 0.95,
    seed: int = 0,
):
    """Percentile bootstrap intervals for every coefficient score.

    Samples are resampled with replacement and the whole estimation chain
    (standardization, bases, scores, joint OLS) is refit with the learned
    forest held fixed. Returns one record per component with the original
    estimate, the interval, and a significance flag (interval excludes 0).
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    y = np.asarray(y, dtype=float)
    n = curves.n_samples
    draws = []
    dropped = 0
    for b in range(n_boot):
        idx = rng_for(seed, "bootstrap", b).integers(0, n, size=n)
        try:
            resampled = CurveSet(curves.grid, curves.values[idx])
            draws.append(_refit_fixed_structure(model, resampled, y[idx]))
        except (FiltraError, np.linalg.LinAlgError, ValueError):
            dropped += 1
    if dropped > 0.2 * n_boot:
        raise EvaluationError(f"{dropped}/{n_boot} bootstrap resamples failed")
    samples = np.vstack(draws)
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(samples, alpha, axis=0)
    upper = np.quantile(samples, 1.0 - alpha, axis=0)
    records = []
    k = 0
    for d, layer in enumerate(model.layers, start=1):
        for i in range(layer.n_groups):
            records.append(
                {
                    "layer": d,
                    "group": i + 1,
                    "members": list(layer.groups[i]),
                    "estimate": float(layer.coef_scores[i]),
                    "lower": float(lower[k]),
                    "upper": float(upper[k]),
                    "significant": bool(lower[k] > 0.0 or upper[k] < 0.0),
                }
            )
            k += 1
    return records


@dataclass(frozen=True)
class SharedLayerMatrix:
    """Pairwise counts of layers in which two predictors share a group."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.allclose(c, c.T):
            raise ValueError("counts must be a symmetric square matrix")
        c = np.ascontiguousarray(c)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)


def shared_layer_counts(forest, p: int | None = None) -> SharedLayerMatrix:
    """Count, per pair, the layers where both predictors occupy one group.

    Accepts a FittedModel (layers restricted to their active sets) or a
    sequence of GroupingStructure; the diagonal counts active layers.
    """
    if isinstance(forest, FittedModel):
        p = forest.n_predictors
        layer_groups = [layer.groups for layer in forest.layers]
    else:
        structures = list(forest)
        if p is None:
            p = max(s.n_predictors for s in structures)
        layer_groups = [s.groups for s in structures]
    counts = np.zeros((p, p))
    for groups in layer_groups:
        for grp in groups:
            for a in grp:
                for b in grp:
                    counts[a - 1, b - 1] += 1.0
    return SharedLayerMatrix(counts)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def _arr(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model: FittedModel) -> dict:
    return {
        "version": MODEL_SCHEMA_VERSION,
        "kind": "filtra-model",
        "grid": {"points": _arr(model.grid.points), "weights": _arr(model.grid.weights)},
        "n_predictors": model.n_predictors,
        "response_mean": model.response_mean,
        "standardization": None
        if model.standardization is None
        else {
            "mean_curves": _arr(model.standardization.mean_curves),
            "scales": _arr(model.standardization.scales),
        },
        "forest": [list(map(list, s.groups)) for s in model.forest],
        "layers": [
            {
                "groups": list(map(list, lf.groups)),
                "active": list(lf.active),
                "basis": _arr(lf.basis),
                "coef_scores": _arr(lf.coef_scores),
                "loadings": _arr(lf.loadings),
                "degenerate": [bool(x) for x in lf.degenerate],
                "rank_deficient": lf.rank_deficient,
                "ss_before": lf.ss_before,
                "ss_after": lf.ss_after,
            }
            for lf in model.layers
        ],
        "diagnostics": {
            "stopping_reason": model.diagnostics.stopping_reason,
            "ss_trace": list(model.diagnostics.ss_trace),
            "improvements": list(model.diagnostics.improvements),
            "final_residual": _arr(model.diagnostics.final_residual),
            "rank_deficient_layers": list(model.diagnostics.rank_deficient_layers),
        },
    }


def model_from_dict(data: dict) -> FittedModel:
    version = str(data.get("version", ""))
    if version.split(".")[0] != MODEL_SCHEMA_VERSION.split(".")[0]:
        raise SchemaError(
            f"unsupported model schema version: expected {MODEL_SCHEMA_VERSION}, found {version or 'none'}"
        )
    if data.get("kind") != "filtra-model":
        raise SchemaError("not a model artifact")
    grid = Grid(np.array(data["grid"]["points"]), np.array(data["grid"]["weights"]))
    std = None
    if data["standardization"] is not None:
        std = Standardization(
            grid,
            np.array(data["standardization"]["mean_curves"]),
            np.array(data["standardization"]["scales"]),
        )
    layers = []
    for lf in data["layers"]:
        groups = tuple(tuple(g) for g in lf["groups"])
        n_groups = len(groups)
        layers.append(
            LayerFit(
                groups=groups,
                active=tuple(lf["active"]),
                basis=np.array(lf["basis"], dtype=float).reshape(n_groups, -1),
                scores=np.zeros((0, n_groups)),  # training scores are not persisted
                coef_scores=np.array(lf["coef_scores"], dtype=float),
                loadings=np.array(lf["loadings"], dtype=float),
                degenerate=np.array(lf["degenerate"], dtype=bool),
                rank_deficient=bool(lf["rank_deficient"]),
                ss_before=float(lf["ss_before"]),
                ss_after=float(lf["ss_after"]),
            )
        )
    diag = data["diagnostics"]
    diagnostics = FitDiagnostics(
        stopping_reason=diag["stopping_reason"],
        ss_trace=tuple(diag["ss_trace"]),
        improvements=tuple(diag["improvements"]),
        final_residual=np.array(diag["final_residual"], dtype=float),
        rank_deficient_layers=tuple(diag["rank_deficient_layers"]),
    )
    return FittedModel(
        grid=grid,
        n_predictors=int(data["n_predictors"]),
        response_mean=float(data["response_mean"]),
        standardization=std,
        forest=tuple(GroupingStructure(tuple(map(tuple, s))) for s in data["forest"]),
        layers=tuple(layers),
        diagnostics=diagnostics,
    )


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory plus atomic rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: FittedModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model)))


def load_model(path) -> FittedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
