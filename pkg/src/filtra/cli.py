"""Command-line interface.

Subcommands: simulate, path, fit, predict, report, evaluate. Every output
file is written atomically (temp file + rename) and every JSON artifact
embeds the effective configuration, which can be fed back via --config to
reproduce the run. Exit codes: 0 success, 1 usage error, 2 data or
convergence error (a machine-readable error JSON goes to stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .errors import FiltraError, SchemaError
from .fdata import (
    center_response,
    read_curves_csv,
    read_response_csv,
    standardize_curves,
)
from .fusionpath import GroupingPath, GroupingStructure, PathEntry, Penalty, compute_path
from .model import (
    atomic_write_text,
    coefficient_cis,
    load_model,
    predict,
    pss,
    save_model,
    shared_layer_counts,
)
from .pipeline import PipelineSettings, fit_filtrated
from .simgen import SimConfig, gen_dataset, run_experiment

ARTIFACT_VERSION = "1.0"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# per-subcommand defaults; None-valued CLI flags fall back to these or to a
# --config file (flag > config file > default)
DEFAULTS = {
    "simulate": {"n": 200, "sigma": 0.5, "decay": "strong", "seed": 0, "grid_size": 101},
    "path": {
        "grid_size": 101,
        "lambdas": 40,
        "penalty": "mcp",
        "penalty_gamma": 3.0,
        "group_tol": 1e-3,
    },
    "fit": {
        "grid_size": 101,
        "seed": 0,
        "splits": 20,
        "theta_grid": "default",
        "e_y": 0.01,
        "e_x": 0.01,
        "d_max": 12,
        "window": 2,
        "window_e": 0.1,
        "chain_cap": 50,
        "lambdas": 40,
    },
    "predict": {"grid_size": 101},
    "report": {"grid_size": 101, "boot": 200, "level": 0.95, "seed": 0},
    "evaluate": {
        "n": 200,
        "sigma": 0.5,
        "decay": "strong",
        "seed": 0,
        "reps": 50,
        "methods": "filtrated,grouped,ordinary,setup",
        "splits": 10,
        "test_size": 200,
        "grid_size": 101,
    },
}


def _merge_config(cmd: str, args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        file_cfg = loaded.get("config", loaded)
        if not isinstance(file_cfg, dict):
            raise SchemaError(f"{args.config}: config payload is not an object")
        for k, v in file_cfg.items():
            if k in merged:
                merged[k] = v
    for k in merged:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    merged["subcommand"] = cmd
    return merged


def _json_artifact(kind: str, config: dict, body: dict) -> str:
    return json.dumps({"version": ARTIFACT_VERSION, "kind": kind, "config": config, **body})


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _load_dataset(curves_path, response_path, grid_size: int):
    sample_ids, curves = read_curves_csv(curves_path, grid_size=grid_size)
    resp_ids, y = read_response_csv(response_path)
    lookup = {sid: val for sid, val in zip(resp_ids, y)}
    missing = [sid for sid in sample_ids if sid not in lookup]
    if missing or len(resp_ids) != len(sample_ids):
        raise SchemaError(
            f"response file does not match curves file (first mismatch: {missing[:1] or set(resp_ids) - set(sample_ids)})"
        )
    return sample_ids, curves, np.array([lookup[sid] for sid in sample_ids])


def _path_to_json(path: GroupingPath, config: dict) -> str:
    body = {
        "entries": [
            {"lambda": e.lam, "groups": [list(g) for g in e.structure.groups]}
            for e in path.entries
        ]
    }
    return _json_artifact("filtra-path", config, body)


def _path_from_json(path_file) -> GroupingPath:
    with open(path_file) as fh:
        data = json.load(fh)
    version = str(data.get("version", ""))
    if version.split(".")[0] != ARTIFACT_VERSION.split(".")[0]:
        raise SchemaError(
            f"unsupported path schema version: expected {ARTIFACT_VERSION}, found {version or 'none'}"
        )
    entries = tuple(
        PathEntry(float(e["lambda"]), GroupingStructure(tuple(map(tuple, e["groups"]))))
        for e in data["entries"]
    )
    return GroupingPath(entries)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = _merge_config("simulate", args)
    os.makedirs(args.out, exist_ok=True)
    sim = SimConfig(
        n_samples=int(cfg["n"]),
        sigma=float(cfg["sigma"]),
        decay=cfg["decay"],
        seed=int(cfg["seed"]),
        grid_size=int(cfg["grid_size"]),
    )
    curves, y, truth = gen_dataset(sim)
    ids = [str(i + 1) for i in range(curves.n_samples)]
    curve_rows = [
        [sid, j + 1, repr(float(t)), repr(float(v))]
        for i, sid in enumerate(ids)
        for j in range(curves.n_predictors)
        for t, v in zip(curves.grid.points, curves.values[i, j])
    ]
    atomic_write_text(
        os.path.join(args.out, "curves.csv"),
        _csv_text(["sample_id", "predictor_id", "t", "value"], curve_rows),
    )
    atomic_write_text(
        os.path.join(args.out, "response.csv"),
        _csv_text(["sample_id", "y"], [[sid, repr(float(v))] for sid, v in zip(ids, y)]),
    )
    atomic_write_text(
        os.path.join(args.out, "truth.json"),
        _json_artifact("filtra-truth", cfg, truth.to_dict()),
    )
    return 0


def _cmd_path(args) -> int:
    cfg = _merge_config("path", args)
    _, curves, y = _load_dataset(args.curves, args.response, int(cfg["grid_size"]))
    x = standardize_curves(curves)
    resp = center_response(y)
    penalty = Penalty(kind=cfg["penalty"], gamma=float(cfg["penalty_gamma"]))
    grid = None
    if int(cfg["lambdas"]) != 40:
        from .fusionpath import default_lambda_grid

        grid = default_lambda_grid(x, resp, penalty, n_lambdas=int(cfg["lambdas"]))
    path = compute_path(x, resp, lambda_grid=grid, penalty=penalty, group_tol=float(cfg["group_tol"]))
    atomic_write_text(args.out, _path_to_json(path, cfg))
    diag_out = args.diagnostics or args.out + ".diag.json"
    atomic_write_text(diag_out, _json_artifact("filtra-path-diagnostics", cfg, path.diagnostics))
    return 0


def _settings_from_config(cfg: dict, y) -> PipelineSettings:
    kw = dict(
        seed=int(cfg["seed"]),
        n_lambdas=int(cfg["lambdas"]),
        chain_cap=int(cfg["chain_cap"]),
        splits=int(cfg["splits"]),
        e_y=float(cfg["e_y"]),
        e_x=float(cfg["e_x"]),
        window=int(cfg["window"]),
        window_e=float(cfg["window_e"]),
        d_max=int(cfg["d_max"]),
    )
    if cfg["theta_grid"] != "default":
        spec = cfg["theta_grid"]
        grid = json.loads(spec) if isinstance(spec, str) else spec
        kw["theta_rhos"] = tuple(float(r) for r in grid["rhos"])
        kw["theta_gammas"] = tuple(float(g) for g in grid["gammas"])
    return PipelineSettings(**kw)


def _cmd_fit(args) -> int:
    cfg = _merge_config("fit", args)
    _, curves, y = _load_dataset(args.curves, args.response, int(cfg["grid_size"]))
    path = None
    if args.path:
        path = _path_from_json(args.path)
        p_path = path.structures[0].n_predictors
        if p_path != curves.n_predictors:
            raise SchemaError(
                f"predictor-count mismatch: path file has {p_path} predictors, "
                f"curves file has {curves.n_predictors}"
            )
    settings = _settings_from_config(cfg, y)
    model, report = fit_filtrated(curves, y, settings, path=path)
    save_model(model, args.out)
    report_out = args.report or args.out + ".report.json"
    atomic_write_text(report_out, _json_artifact("filtra-structure-report", cfg, report))
    return 0


def _cmd_predict(args) -> int:
    cfg = _merge_config("predict", args)
    model = load_model(args.model)
    sample_ids, curves = read_curves_csv(args.curves, grid=model.grid)
    preds = predict(model, curves)
    rows = [[sid, repr(float(v))] for sid, v in zip(sample_ids, preds)]
    atomic_write_text(args.out, _csv_text(["sample_id", "y_hat"], rows))
    atomic_write_text(args.out + ".config.json", json.dumps({"config": cfg}))
    return 0


def _cmd_report(args) -> int:
    cfg = _merge_config("report", args)
    model = load_model(args.model)
    sample_ids, curves = read_curves_csv(args.curves, grid=model.grid)
    resp_ids, y = read_response_csv(args.response)
    lookup = dict(zip(resp_ids, y))
    y = np.array([lookup[sid] for sid in sample_ids])
    os.makedirs(args.out_dir, exist_ok=True)

    pss_rows = []
    for d, layer in enumerate(model.layers, start=1):
        for i in range(1, layer.n_groups + 1):
            val = pss(model, curves, y, d, i)
            pss_rows.append(
                {
                    "layer": d,
                    "group": i,
                    "members": list(layer.groups[i - 1]),
                    "pss": val,
                }
            )
    cis = coefficient_cis(
        model, curves, y, n_boot=int(cfg["boot"]), level=float(cfg["level"]), seed=int(cfg["seed"])
    )
    counts = shared_layer_counts(model).counts

    body = {"pss": pss_rows, "confidence_intervals": cis, "shared_layers": counts.tolist()}
    atomic_write_text(
        os.path.join(args.out_dir, "report.json"),
        _json_artifact("filtra-report", cfg, body),
    )
    atomic_write_text(
        os.path.join(args.out_dir, "pss.csv"),
        _csv_text(
            ["layer", "group", "members", "pss"],
            [[r["layer"], r["group"], " ".join(map(str, r["members"])), repr(r["pss"])] for r in pss_rows],
        ),
    )
    atomic_write_text(
        os.path.join(args.out_dir, "ci.csv"),
        _csv_text(
            ["layer", "group", "members", "estimate", "lower", "upper", "significant"],
            [
                [
                    r["layer"],
                    r["group"],
                    " ".join(map(str, r["members"])),
                    repr(r["estimate"]),
                    repr(r["lower"]),
                    repr(r["upper"]),
                    int(r["significant"]),
                ]
                for r in cis
            ],
        ),
    )
    p = counts.shape[0]
    atomic_write_text(
        os.path.join(args.out_dir, "shared_layers.csv"),
        _csv_text(
            ["predictor_i", "predictor_j", "layers"],
            [[i + 1, j + 1, repr(float(counts[i, j]))] for i in range(p) for j in range(p)],
        ),
    )
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _merge_config("evaluate", args)
    methods = tuple(m.strip() for m in str(cfg["methods"]).split(",") if m.strip())
    sim = SimConfig(
        n_samples=int(cfg["n"]),
        sigma=float(cfg["sigma"]),
        decay=cfg["decay"],
        seed=int(cfg["seed"]),
        grid_size=int(cfg["grid_size"]),
    )
    settings = PipelineSettings(seed=int(cfg["seed"]), splits=int(cfg["splits"]))
    report = run_experiment(
        sim,
        n_reps=int(cfg["reps"]),
        methods=methods,
        settings=settings,
        test_size=int(cfg["test_size"]),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    body = report.to_dict()
    atomic_write_text(
        os.path.join(args.out_dir, "report.json"), _json_artifact("filtra-experiment", cfg, body)
    )
    mse_rows = [
        [m, r, "" if v is None else repr(v)]
        for m in report.methods
        for r, v in enumerate(report.mse[m])
    ]
    atomic_write_text(
        os.path.join(args.out_dir, "mse_long.csv"),
        _csv_text(["method", "replication", "mse"], mse_rows),
    )
    if report.mean_shared_layers is not None:
        counts = report.mean_shared_layers
        p = counts.shape[0]
        atomic_write_text(
            os.path.join(args.out_dir, "shared_layers.csv"),
            _csv_text(
                ["predictor_i", "predictor_j", "mean_layers"],
                [[i + 1, j + 1, repr(float(counts[i, j]))] for i in range(p) for j in range(p)],
            ),
        )
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="filtra", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, handler, flags):
        sp = sub.add_parser(name, prog=f"filtra {name}")
        for flag, kw in flags:
            sp.add_argument(flag, **kw)
        sp.add_argument("--config", help="JSON artifact whose config section seeds the defaults")
        sp.set_defaults(func=handler)

    add(
        "simulate",
        _cmd_simulate,
        [
            ("--n", dict(type=int)),
            ("--sigma", dict(type=float)),
            ("--decay", dict(choices=["strong", "weak"])),
            ("--seed", dict(type=int)),
            ("--grid-size", dict(type=int, dest="grid_size")),
            ("--out", dict(required=True)),
        ],
    )
    add(
        "path",
        _cmd_path,
        [
            ("--curves", dict(required=True)),
            ("--response", dict(required=True)),
            ("--grid-size", dict(type=int, dest="grid_size")),
            ("--lambdas", dict(type=int)),
            ("--penalty", dict(choices=["mcp", "scad"])),
            ("--penalty-gamma", dict(type=float, dest="penalty_gamma")),
            ("--group-tol", dict(type=float, dest="group_tol")),
            ("--out", dict(required=True)),
            ("--diagnostics", dict()),
        ],
    )
    add(
        "fit",
        _cmd_fit,
        [
            ("--curves", dict(required=True)),
            ("--response", dict(required=True)),
            ("--path", dict()),
            ("--grid-size", dict(type=int, dest="grid_size")),
            ("--theta-grid", dict(dest="theta_grid")),
            ("--splits", dict(type=int)),
            ("--seed", dict(type=int)),
            ("--e-y", dict(type=float, dest="e_y")),
            ("--e-x", dict(type=float, dest="e_x")),
            ("--d-max", dict(type=int, dest="d_max")),
            ("--window", dict(type=int)),
            ("--window-e", dict(type=float, dest="window_e")),
            ("--chain-cap", dict(type=int, dest="chain_cap")),
            ("--lambdas", dict(type=int)),
            ("--out", dict(required=True)),
            ("--report", dict()),
        ],
    )
    add(
        "predict",
        _cmd_predict,
        [
            ("--model", dict(required=True)),
            ("--curves", dict(required=True)),
            ("--out", dict(required=True)),
        ],
    )
    add(
        "report",
        _cmd_report,
        [
            ("--model", dict(required=True)),
            ("--curves", dict(required=True)),
            ("--response", dict(required=True)),
            ("--boot", dict(type=int)),
            ("--level", dict(type=float)),
            ("--seed", dict(type=int)),
            ("--out-dir", dict(required=True, dest="out_dir")),
        ],
    )
    add(
        "evaluate",
        _cmd_evaluate,
        [
            ("--reps", dict(type=int)),
            ("--methods", dict()),
            ("--n", dict(type=int)),
            ("--sigma", dict(type=float)),
            ("--decay", dict(choices=["strong", "weak"])),
            ("--seed", dict(type=int)),
            ("--splits", dict(type=int)),
            ("--test-size", dict(type=int, dest="test_size")),
            ("--grid-size", dict(type=int, dest="grid_size")),
            ("--out-dir", dict(required=True, dest="out_dir")),
        ],
    )
    return parser


def dispatch(argv) -> int:
    """Run one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"filtra: error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # argparse -h
        return int(err.code or 0)
    try:
        return args.func(args)
    except (FiltraError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as err:
        payload = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(payload), file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
