"""``flpre`` command line: simulate, fit, subsample, benchmark, predict.

Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure.
Settings resolve as flags > ``--config`` JSON > built-in defaults, and the
resolved settings are echoed and written next to every output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import io
from .basis import BasisConfig, knots_rule_n14
from .datagen import COVARIATE_LAWS, ERROR_LAWS, SimConfig, simulate as sim_data, true_beta
from .lpre import ExpOverflowError, predict_beta
from .simulation import (IMSE_GRID, METHODS, aggregate, fit_method, subsample_study,
                         worker_count)
from .subsampling import KINDS, PilotFitError, ZeroScoreError, two_step_fit
from .tuning import DEFAULT_LAMBDA_GRID, BICUndefinedError, imse, mape_mppe, rpse

log = logging.getLogger("flpre")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("simulate", "fit", "subsample", "benchmark", "predict")

DEFAULTS = {
    "common": {"seed": 0, "results": None, "run_id": None, "verbose": False},
    "model": {"degree": 3, "penalty_order": 2, "method": "FLPRE",
              "lambda_grid": list(DEFAULT_LAMBDA_GRID), "jitter": 0.0},
    "simulate": {"n": 1000, "covariate": "C1", "error": "R1", "grid_size": 100,
                 "gen_basis_dim": 10, "output": "data"},
    "fit": {"output": "model.json", "true_beta": False, "beta_curve": None, "test_input": None},
    "subsample": {"output": "model.json", "subsample_kind": "FLopt", "r0": 500, "r": [1000],
                  "alpha_mix": 0.0, "pilot_lambda": 0.0, "full_model": None,
                  "true_beta": False, "beta_curve": None, "test_input": None,
                  "scheme_out": None},
    "benchmark": {"output": "bench", "n": 10000, "covariate": "C1", "error": "R1",
                  "grid_size": 100, "gen_basis_dim": None, "subsample_kind": "uniform,FLopt",
                  "r0": 500, "r": [500, 1000, 2000], "alpha_mix": 0.0, "pilot_lambda": 0.0,
                  "replications": 10, "test_n": 1000},
    "predict": {"output": "predictions.csv"},
}


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of settings (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--output", help="output file (or directory for simulate/benchmark)")
    common.add_argument("--results", help="append a metric row to this CSV")
    common.add_argument("--run-id", dest="run_id")
    common.add_argument("--verbose", action="store_true")

    basis = argparse.ArgumentParser(add_help=False, argument_default=S)
    kgrp = basis.add_mutually_exclusive_group()
    kgrp.add_argument("--knots", type=int, help="number of interior knots K")
    kgrp.add_argument("--knots-rule", dest="knots_rule", choices=["n14"],
                      help="K = ceil(n^(1/4))")
    basis.add_argument("--degree", type=int)
    basis.add_argument("--penalty-order", dest="penalty_order", type=int)

    model = argparse.ArgumentParser(add_help=False, argument_default=S)
    model.add_argument("--input", help="long-format curves CSV (id,t,x)")
    model.add_argument("--responses", help="responses CSV (id,y)")
    model.add_argument("--method", choices=METHODS)
    lgrp = model.add_mutually_exclusive_group()
    lgrp.add_argument("--lambda", dest="lambda_", type=float, help="fixed penalty")
    lgrp.add_argument("--lambda-grid", dest="lambda_grid", type=_float_list,
                      help="comma-separated grid searched by BIC")
    model.add_argument("--jitter", type=float, help="ridge added to singular Hessians")
    model.add_argument("--test-input", dest="test_input", help="test curves CSV for RPSE")
    model.add_argument("--true-beta", dest="true_beta", action="store_true",
                       help="score IMSE/RPSE against the simulation slope")
    model.add_argument("--beta-curve", dest="beta_curve",
                       help="write the fitted slope on a 1001-point grid")

    sim = argparse.ArgumentParser(add_help=False, argument_default=S)
    sim.add_argument("--n", type=int)
    sim.add_argument("--covariate", choices=COVARIATE_LAWS)
    sim.add_argument("--error", choices=ERROR_LAWS)
    sim.add_argument("--grid-size", dest="grid_size", type=int)
    sim.add_argument("--gen-basis-dim", dest="gen_basis_dim", type=int)

    sub = argparse.ArgumentParser(add_help=False, argument_default=S)
    sub.add_argument("--r0", type=int)
    sub.add_argument("--alpha-mix", dest="alpha_mix", type=float)
    sub.add_argument("--pilot-lambda", dest="pilot_lambda", type=float)

    p = argparse.ArgumentParser(prog="flpre", description=__doc__.splitlines()[0])
    sp = p.add_subparsers(dest="command", required=True)

    sp.add_parser("simulate", parents=[common, sim], argument_default=S,
                  help="write a synthetic dataset (curves.csv, responses.csv, meta.json)")

    sp.add_parser("fit", parents=[common, basis, model], argument_default=S,
                  help="full-data fit; writes a model JSON")

    ps = sp.add_parser("subsample", parents=[common, basis, model, sub], argument_default=S,
                       help="two-step (or uniform) subsample fit")
    ps.add_argument("--subsample-kind", dest="subsample_kind", choices=KINDS)
    ps.add_argument("--r", type=_int_list)
    ps.add_argument("--full-model", dest="full_model",
                    help="model JSON of the full-data fit; IMSE is measured against it")
    ps.add_argument("--scheme-out", dest="scheme_out", help="write sampling probabilities")

    pb = sp.add_parser("benchmark", parents=[common, basis, sim, sub], argument_default=S,
                       help="replicated subsampling study with timing")
    pb.add_argument("--method", choices=["FLPRE"])
    lgrp = pb.add_mutually_exclusive_group()
    lgrp.add_argument("--lambda", dest="lambda_", type=float)
    lgrp.add_argument("--lambda-grid", dest="lambda_grid", type=_float_list)
    pb.add_argument("--subsample-kind", dest="subsample_kind",
                    help=f"comma-separated subset of {KINDS}")
    pb.add_argument("--r", type=_int_list, help="comma-separated subsample sizes")
    pb.add_argument("--replications", type=int)
    pb.add_argument("--test-n", dest="test_n", type=int, help="test curves for RPSE (0: none)")

    pp = sp.add_parser("predict", parents=[common], argument_default=S,
                       help="predict responses for new curves from a model JSON")
    pp.add_argument("--model", required=True)
    pp.add_argument("--input", help="curves CSV")
    pp.add_argument("--responses", help="optional true responses for MAPE/MPPE")
    pp.add_argument("--knots", type=int)
    pp.add_argument("--degree", type=int)
    pp.add_argument("--penalty-order", dest="penalty_order", type=int)
    return p


def _load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise io.DataError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    out = {}
    for k, v in raw.items():
        key = k.lstrip("-").replace("-", "_")
        out["lambda_" if key == "lambda" else key] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    flags = {k: v for k, v in vars(args).items() if k != "config"}
    cmd = flags["command"]
    cfg = dict(DEFAULTS["common"])
    if cmd in ("fit", "subsample", "benchmark"):
        cfg.update(DEFAULTS["model"])
    cfg.update(DEFAULTS[cmd])
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for a, b in (("knots", "knots_rule"), ("lambda_", "lambda_grid")):
        if a in file_cfg and b in file_cfg:
            raise UsageError(f"config sets both {a.rstrip('_')} and {b}; they are mutually exclusive")
    # an explicit choice on the command line displaces either form from the file
    for a, b in (("knots", "knots_rule"), ("lambda_", "lambda_grid")):
        if a in flags or b in flags:
            file_cfg.pop(a, None)
            file_cfg.pop(b, None)
    cfg.update(file_cfg)
    if "lambda_" in cfg and cfg.get("lambda_") is not None:
        cfg.pop("lambda_grid", None)
    cfg.update(flags)
    if "lambda_" in flags:
        cfg.pop("lambda_grid", None)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key, allowed in (("covariate", COVARIATE_LAWS), ("error", ERROR_LAWS),
                         ("method", METHODS)):
        if key in cfg and cfg[key] not in allowed:
            raise UsageError(f"invalid {key} {cfg[key]!r}; expected one of {allowed}")
    if cfg.get("knots_rule") not in (None, "n14"):
        raise UsageError(f"unknown knots rule {cfg['knots_rule']!r}; only 'n14' is defined")
    if cfg.get("knots") is not None and cfg["knots"] < 0:
        raise UsageError("--knots must be non-negative")
    if "replications" in cfg and int(cfg["replications"]) < 1:
        raise UsageError("--replications must be at least 1")
    if "n" in cfg and cfg["n"] is not None and int(cfg["n"]) < 1:
        raise UsageError("--n must be positive")
    if "alpha_mix" in cfg and not 0.0 <= float(cfg["alpha_mix"]) <= 1.0:
        raise UsageError("--alpha-mix must lie in [0, 1]")
    if cfg.get("lambda_") is not None and cfg["lambda_"] < 0:
        raise UsageError("--lambda must be non-negative")
    if any(v < 0 for v in cfg.get("lambda_grid") or []):
        raise UsageError("--lambda-grid values must be non-negative")
    if "r" in cfg:
        cfg["r"] = [int(v) for v in np.atleast_1d(cfg["r"])]
        if any(v < 1 for v in cfg["r"]):
            raise UsageError("--r must be positive")
    if "subsample_kind" in cfg:
        kinds = cfg["subsample_kind"]
        kinds = kinds.split(",") if isinstance(kinds, str) else list(kinds)
        bad = [k for k in kinds if k not in KINDS]
        if bad:
            raise UsageError(f"invalid subsample kind {bad[0]!r}; expected one of {KINDS}")
    try:
        BasisConfig(int(cfg.get("knots") or 0), int(cfg.get("degree", 3)),
                    int(cfg.get("penalty_order", 2)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _lambda_grid(cfg: dict) -> list[float]:
    if cfg.get("lambda_") is not None:
        return [float(cfg["lambda_"])]
    return [float(v) for v in cfg["lambda_grid"]]


def _basis(cfg: dict, n: int) -> BasisConfig:
    K = cfg.get("knots")
    if K is None:
        K = knots_rule_n14(n)
    return BasisConfig(int(K), int(cfg["degree"]), int(cfg["penalty_order"]))


def _echo(cfg: dict) -> None:
    print("config: " + json.dumps(_jsonable(cfg), sort_keys=True))


def _jsonable(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, np.generic):
            v = v.item()
        out["lambda" if k == "lambda_" else k] = v
    return out


def _write_meta(path, cfg: dict, extra: Optional[dict] = None) -> None:
    doc = {"config": _jsonable(cfg)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _meta_path(output) -> Path:
    p = Path(output)
    return p.with_name(p.name + ".meta.json")


def _require(cfg: dict, *keys) -> None:
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"--{k.replace('_', '-')} is required for {cfg['command']}")


def _load_xy(cfg: dict):
    _require(cfg, "input", "responses")
    ids, curves = io.read_curves(cfg["input"])
    y = io.read_responses(cfg["responses"], ids)
    return ids, curves, y


def _test_curves(cfg: dict):
    if not cfg.get("test_input"):
        return None
    _, curves = io.read_curves(cfg["test_input"])
    if isinstance(curves, list):
        raise io.DataError(f"{cfg['test_input']}: test curves must share one grid for RPSE")
    return curves


def _write_beta_curve(path, fit, basis: BasisConfig, reference=None) -> None:
    cols = {"t": IMSE_GRID}
    has_var = getattr(fit, "V_full", None) is not None or getattr(fit, "V", None) is not None
    if has_var:
        band = predict_beta(fit, basis, IMSE_GRID, with_se=True)
        cols.update(beta=band.beta, se=band.se, lower=band.lower, upper=band.upper)
    else:
        cols["beta"] = predict_beta(fit, basis, IMSE_GRID)
    if reference is not None:
        cols["beta_reference"] = reference
    pd.DataFrame(cols).to_csv(path, index=False, float_format=io.FLOAT_FORMAT,
                              lineterminator="\n")


def _row(cfg: dict, **values) -> dict:
    row = {"run_id": cfg.get("run_id") or cfg["command"]}
    row.update(values)
    return row


def cmd_simulate(cfg: dict) -> int:
    gen_dim = cfg["gen_basis_dim"] if cfg["gen_basis_dim"] is not None else 10
    sc = SimConfig(int(cfg["n"]), cfg["covariate"], cfg["error"], int(cfg["grid_size"]),
                   int(gen_dim), int(cfg["seed"]))
    curves, y = sim_data(sc)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_curves(out / "curves.csv", curves)
    io.write_responses(out / "responses.csv", y)
    _write_meta(out / "meta.json", cfg, {"simulation": sc.to_dict()})
    print(f"wrote {sc.n} curves to {out}")
    return EXIT_OK


def _check_fit(fit, what: str) -> int:
    if not fit.converged:
        print(f"{what}: did not converge (gradient max-norm {fit.final_gradient_norm:.3g})",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    ids, curves, y = _load_xy(cfg)
    basis = _basis(cfg, len(y))
    design = io.design_for(curves, basis)
    grid = _lambda_grid(cfg)
    t0 = time.perf_counter()
    lam, fit, path = fit_method(design, y, cfg["method"], grid, float(cfg["jitter"]),
                                variance=True)
    seconds = time.perf_counter() - t0
    io.save_model(cfg["output"], fit, basis, cfg["method"])
    _write_meta(_meta_path(cfg["output"]), cfg,
                {"basis": _basis_doc(basis), "bic_path": {repr(k): v for k, v in path.items()}})
    print(f"{cfg['method']}: n={design.n} K={basis.interior_knot_count} lambda={lam:.6g} "
          f"iterations={fit.iterations} converged={fit.converged} "
          f"gradient={fit.final_gradient_norm:.3g} loss={fit.loss:.6g}")
    mape, mppe = mape_mppe(y, np.exp(design.rows @ fit.theta))
    imse_v = rpse_v = float("nan")
    test = _test_curves(cfg)
    if cfg["true_beta"]:
        imse_v = imse(predict_beta(fit, basis, IMSE_GRID), true_beta(IMSE_GRID), IMSE_GRID)
        if test is not None:
            rpse_v = rpse(predict_beta(fit, basis, test.grid), true_beta, test)
        print(f"IMSE={imse_v:.6g}" + ("" if np.isnan(rpse_v) else f" RPSE={rpse_v:.6g}"))
    if cfg.get("beta_curve"):
        _write_beta_curve(cfg["beta_curve"], fit, basis,
                          true_beta(IMSE_GRID) if cfg["true_beta"] else None)
    if cfg.get("results"):
        io.append_rows(cfg["results"], [_row(
            cfg, method=cfg["method"], n=design.n, r0="", r="", K=basis.interior_knot_count,
            **{"lambda": lam}, imse=imse_v, rpse=rpse_v, mape=mape, mppe=mppe,
            seconds=seconds)], io.RESULT_COLUMNS)
    return _check_fit(fit, cfg["method"])


def _basis_doc(basis: BasisConfig) -> dict:
    return {"interior_knots": basis.interior_knot_count, "degree": basis.degree,
            "penalty_order": basis.penalty_order}


def cmd_subsample(cfg: dict) -> int:
    ids, curves, y = _load_xy(cfg)
    if len(cfg["r"]) != 1:
        raise UsageError("subsample takes a single --r; use benchmark for several sizes")
    r, r0, kind = cfg["r"][0], int(cfg["r0"]), cfg["subsample_kind"]
    if cfg["method"] != "FLPRE":
        raise UsageError("subsampling is defined for the FLPRE loss only")
    basis = _basis(cfg, len(y))
    if kind != "uniform" and r0 < basis.dim:
        raise UsageError(f"--r0={r0} is below the basis dimension {basis.dim}")
    reference = None
    if cfg.get("full_model"):
        _, ref_basis, ref_theta = io.load_model(cfg["full_model"])
        if ref_basis != basis:
            raise UsageError(f"full model basis {_basis_doc(ref_basis)} differs from the "
                             f"requested basis {_basis_doc(basis)}")
        reference = predict_beta(ref_theta, basis, IMSE_GRID)
    elif cfg["true_beta"]:
        reference = true_beta(IMSE_GRID)
    design = io.design_for(curves, basis)
    rng = np.random.default_rng(int(cfg["seed"]))
    t0 = time.perf_counter()
    fit = two_step_fit(design, y, r0, r, _lambda_grid(cfg), rng, kind=kind,
                       alpha=float(cfg["alpha_mix"]), variance=True,
                       pilot_lambda=float(cfg["pilot_lambda"]))
    seconds = time.perf_counter() - t0
    doc = io.model_document(fit, basis, "FLPRE")
    doc.update(kind=kind, r=r, r0=fit.r0, n=design.n)
    Path(cfg["output"]).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    _write_meta(_meta_path(cfg["output"]), cfg, {"basis": _basis_doc(basis)})
    print(f"{kind}: n={design.n} r0={fit.r0} r={r} lambda={fit.lambda_:.6g} "
          f"iterations={fit.iterations} converged={fit.converged}")
    imse_v = rpse_v = float("nan")
    if reference is not None:
        imse_v = imse(predict_beta(fit, basis, IMSE_GRID), reference, IMSE_GRID)
        test = _test_curves(cfg)
        if test is not None:
            ref_t = np.interp(test.grid, IMSE_GRID, reference)
            rpse_v = rpse(predict_beta(fit, basis, test.grid), ref_t, test)
        print(f"IMSE={imse_v:.6g}" + ("" if np.isnan(rpse_v) else f" RPSE={rpse_v:.6g}"))
    if cfg.get("beta_curve"):
        _write_beta_curve(cfg["beta_curve"], fit, basis, reference)
    if cfg.get("scheme_out"):
        io.write_scheme(cfg["scheme_out"], fit.scheme.probabilities, ids)
    mape, mppe = mape_mppe(y, np.exp(design.rows @ fit.theta))
    if cfg.get("results"):
        io.append_rows(cfg["results"], [_row(
            cfg, method=kind, n=design.n, r0=fit.r0 if fit.r0 is not None else "", r=r,
            K=basis.interior_knot_count, **{"lambda": fit.lambda_}, imse=imse_v, rpse=rpse_v,
            mape=mape, mppe=mppe, seconds=seconds)], io.RESULT_COLUMNS)
    return _check_fit(fit, kind)


def cmd_benchmark(cfg: dict) -> int:
    n = int(cfg["n"])
    kinds = cfg["subsample_kind"]
    kinds = kinds.split(",") if isinstance(kinds, str) else list(kinds)
    basis = _basis(cfg, n)
    gen_dim = cfg["gen_basis_dim"] if cfg["gen_basis_dim"] is not None else basis.dim
    ss = np.random.SeedSequence(int(cfg["seed"]))
    data_ss, test_ss, rep_ss = ss.spawn(3)
    sc = SimConfig(n, cfg["covariate"], cfg["error"], int(cfg["grid_size"]), int(gen_dim))
    curves, y = sim_data(sc, np.random.default_rng(data_ss))
    test = None
    if int(cfg["test_n"]) > 0:
        test, _ = sim_data(SimConfig(int(cfg["test_n"]), cfg["covariate"], cfg["error"],
                                     int(cfg["grid_size"]), int(gen_dim)),
                           np.random.default_rng(test_ss))
    design = curves.design(basis)
    grid = _lambda_grid(cfg)

    t0 = time.perf_counter()
    lam_full, full, _ = fit_method(design, y, "FLPRE", grid)
    full_seconds = time.perf_counter() - t0
    beta_full = predict_beta(full, basis, IMSE_GRID)
    full_row = {"method": "full", "r": n, "replications": 1,
                "imse_mean": imse(beta_full, true_beta(IMSE_GRID), IMSE_GRID),
                "fit_seconds_mean": full_seconds, "lambda": lam_full}

    rows = subsample_study(design, y, basis, beta_full, kinds, cfg["r"], int(cfg["r0"]),
                           int(cfg["replications"]), grid, rep_ss, test,
                           float(cfg["alpha_mix"]), float(cfg["pilot_lambda"]),
                           workers=worker_count())
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_rows(out / "records.csv", rows, io.RECORD_COLUMNS)
    summary = aggregate(rows) + [full_row]
    cols = ("method", "r", "replications", "imse_mean", "imse_sd", "rpse_mean", "rpse_sd",
            "fit_seconds_mean", "fit_seconds_sd", "lambda")
    io.write_rows(out / "summary.csv", summary, cols)
    _write_meta(out / "meta.json", cfg, {"simulation": sc.to_dict(), "basis": _basis_doc(basis),
                                         "full_lambda": lam_full})
    for row in summary:
        print(f"{row['method']:>8} r={row['r']:<7} IMSE={row['imse_mean']:.4g} "
              f"seconds={row['fit_seconds_mean']:.4g}")
    if cfg.get("results"):
        io.append_rows(cfg["results"], [_row(
            cfg, method=row["method"], n=n, r0=cfg["r0"] if row["method"] != "full" else "",
            r=row["r"], K=basis.interior_knot_count, imse=row["imse_mean"],
            rpse=row.get("rpse_mean", float("nan")), seconds=row["fit_seconds_mean"])
            for row in summary], io.RESULT_COLUMNS)
    return EXIT_OK if full.converged else EXIT_NUMERIC


def cmd_predict(cfg: dict) -> int:
    _require(cfg, "input")
    doc, basis, theta = io.load_model(cfg["model"])
    requested = {"interior_knots": cfg.get("knots", basis.interior_knot_count),
                 "degree": cfg.get("degree", basis.degree),
                 "penalty_order": cfg.get("penalty_order", basis.penalty_order)}
    if requested != _basis_doc(basis):
        raise UsageError(f"basis mismatch: model {cfg['model']} has {_basis_doc(basis)}, "
                         f"request has {requested}")
    ids, curves = io.read_curves(cfg["input"])
    design = io.design_for(curves, basis)
    eta = design.rows @ theta
    if np.any(np.abs(eta) > 700):
        raise ExpOverflowError("fitted index exceeds the exp-safe bound")
    y_pred = np.exp(eta)
    cols = {"id": ids}
    mape = mppe = float("nan")
    if cfg.get("responses"):
        y = io.read_responses(cfg["responses"], ids)
        cols["y_true"] = y
        mape, mppe = mape_mppe(y, y_pred)
        print(f"MAPE={mape:.6g} MPPE={mppe:.6g}")
    cols["y_pred"] = y_pred
    pd.DataFrame(cols).to_csv(cfg["output"], index=False, float_format=io.FLOAT_FORMAT,
                              lineterminator="\n")
    _write_meta(_meta_path(cfg["output"]), cfg, {"basis": _basis_doc(basis)})
    print(f"wrote {len(ids)} predictions to {cfg['output']}")
    if cfg.get("results"):
        io.append_rows(cfg["results"], [_row(
            cfg, method=doc.get("method", ""), n=len(ids), K=basis.interior_knot_count,
            **{"lambda": doc.get("lambda")}, mape=mape, mppe=mppe)], io.RESULT_COLUMNS)
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "subsample": cmd_subsample,
            "benchmark": cmd_benchmark, "predict": cmd_predict}

NUMERIC_ERRORS = (np.linalg.LinAlgError, ExpOverflowError, FloatingPointError, PilotFitError,
                  BICUndefinedError, ZeroScoreError, NumericalError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _echo(cfg)
        return HANDLERS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"flpre: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"flpre: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataError, OSError, ValueError) as exc:
        print(f"flpre: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
