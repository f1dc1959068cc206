"""End-to-end fitting pipelines shared by the CLI and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fdata import CurveSet, Standardization, center_response
from .filtpls import FittedModel, StoppingConfig, run_filtration
from .forest import (
    CandidateSet,
    GicConfig,
    McCvConfig,
    enumerate_candidate_sets,
    refine_and_fit,
    select_candidate_set,
    select_theta,
)
from .fusionpath import GroupingPath, Penalty, compute_path

__all__ = ["PipelineSettings", "fit_filtrated", "fit_with_forest"]


@dataclass(frozen=True)
class PipelineSettings:
    """Every tuning knob of the structure-learning pipeline, with defaults."""

    seed: int = 0
    # grouping path
    n_lambdas: int = 40
    penalty: Penalty = field(default_factory=Penalty)
    group_tol: float = 1e-3
    # candidate sets
    chain_cap: int = 50
    splits: int = 20
    test_frac: float = 0.2
    grouped_max_depth: int = 6
    # GIC refinement
    theta_rhos: tuple[float, ...] = (0.005, 0.01, 0.05, 0.1, 0.5)
    theta_gammas: tuple[float, ...] = (1.0, 1.25, 1.5, 2.0)
    e_y: float = 0.01
    e_x: float = 0.01
    window: int = 2
    window_e: float = 0.1
    d_max: int = 12

    def resampling(self) -> McCvConfig:
        return McCvConfig(
            n_splits=self.splits,
            test_frac=self.test_frac,
            seed=self.seed,
            max_depth=self.grouped_max_depth,
        )

    def gic_base(self) -> GicConfig:
        return GicConfig(
            rho=1.0,
            gamma=1.0,
            e_y=self.e_y,
            e_x=self.e_x,
            window=self.window,
            window_e=self.window_e,
            d_max=self.d_max,
        )

    def stopping(self) -> StoppingConfig:
        return StoppingConfig(e_y=self.e_y, e_x=self.e_x, d_max=self.d_max)

    def theta_grid(self, y) -> list[tuple[float, float]]:
        scale = float(np.var(np.asarray(y, dtype=float)))
        return [(r * scale, g) for r in self.theta_rhos for g in self.theta_gammas]


def fit_filtrated(
    curves: CurveSet,
    y,
    settings: PipelineSettings = PipelineSettings(),
    path: GroupingPath | None = None,
    structure_cache: dict | None = None,
) -> tuple[FittedModel, dict]:
    """Full structure-learning pipeline on raw curves and raw responses.

    Runs path computation (unless one is supplied), candidate-set
    enumeration and selection, theta tuning, and GIC layer refinement.
    Returns the fitted model plus a structure report.
    """
    y = np.asarray(y, dtype=float)
    std = Standardization.fit(curves)
    x = std.apply(curves)
    resp = center_response(y)

    if path is None:
        path = compute_path(
            x,
            resp,
            penalty=settings.penalty,
            group_tol=settings.group_tol,
            n_components=None,
        )
    csets = enumerate_candidate_sets(path, cap=settings.chain_cap)
    resampling = settings.resampling()
    cset = select_candidate_set(csets, curves, y, resampling, structure_cache=structure_cache)
    config = select_theta(
        settings.theta_grid(y), curves, y, resampling, cset, base=settings.gic_base()
    )
    forest, model, refinement = refine_and_fit(cset, x, resp, config, std)
    report = {
        "path": [
            {"lambda": e.lam, "groups": [list(g) for g in e.structure.groups]}
            for e in path.entries
        ],
        "n_candidate_sets": len(csets),
        "selected_candidate_set": [[list(g) for g in s.groups] for s in cset.structures],
        "theta": {"rho": config.rho, "gamma": config.gamma},
        "forest": [[list(g) for g in s.groups] for s in forest.layers],
        "chosen_indices": list(refinement.chosen_indices),
        "gic_tables": [list(rows) for rows in refinement.gic_tables],
        "stopping_reason": refinement.stopping_reason,
        "improvements": list(refinement.improvements),
    }
    return model, report


def fit_with_forest(
    curves: CurveSet,
    y,
    forest,
    settings: PipelineSettings = PipelineSettings(),
) -> FittedModel:
    """Fit a known forest (sequence of structures) on raw data."""
    std = Standardization.fit(curves)
    return run_filtration(
        forest,
        std.apply(curves),
        center_response(np.asarray(y, dtype=float)),
        settings.stopping(),
        standardization=std,
    )
