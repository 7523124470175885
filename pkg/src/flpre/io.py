"""CSV ingestion of functional data, model persistence and result tables."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .basis import BasisConfig, CurveSet, DesignMatrix, FunctionalSample, build_design

MODEL_FORMAT_VERSION = 1
RESULT_COLUMNS = ("run_id", "method", "n", "r0", "r", "K", "lambda",
                  "imse", "rpse", "mape", "mppe", "seconds")
RECORD_COLUMNS = ("seed", "method", "r0", "r", "lambda", "imse", "rpse", "fit_seconds")
FLOAT_FORMAT = "%.17g"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV: {exc}") from None
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}; header is {list(df.columns)}")
    df["id"] = df["id"].str.strip()
    for col in columns[1:]:
        raw = df[col].str.strip()
        num = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(num.isna().to_numpy() | ~np.isfinite(num.to_numpy(dtype=float)))
        if bad.size:
            i = int(bad[0])
            # line 1 is the header
            raise DataError(f"{path}, line {i + 2}: column {col!r} has non-numeric value {raw.iloc[i]!r}")
        # pandas' fast parser is not correctly rounded; numpy's is, so written files round-trip
        df[col] = raw.to_numpy(dtype=str).astype(float)
    return df


def read_curves(path) -> tuple[list[str], Union[CurveSet, list[FunctionalSample]]]:
    """Read long-format ``id,t,x`` curves.

    Returns the ids in order of first appearance and either a CurveSet (all
    curves on one grid) or a list of FunctionalSample.
    """
    df = _read_table(path, ("id", "t", "x"))
    if df.empty:
        raise DataError(f"{path}: no observations")
    bad = np.flatnonzero((df["t"] < 0).to_numpy() | (df["t"] > 1).to_numpy())
    if bad.size:
        raise DataError(f"{path}, line {int(bad[0]) + 2}: t must lie in [0, 1]")
    ids = list(dict.fromkeys(df["id"]))
    order = {k: i for i, k in enumerate(ids)}
    df["_pos"] = df["id"].map(order)
    df = df.sort_values(["_pos", "t"], kind="stable")
    counts = df.groupby("_pos", sort=True).size().to_numpy()
    t = df["t"].to_numpy()
    x = df["x"].to_numpy()
    if np.all(counts == counts[0]):
        T = t.reshape(len(ids), counts[0])
        if np.all(T == T[0]):
            try:
                return ids, CurveSet(T[0], x.reshape(len(ids), counts[0]))
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
    samples = []
    start = 0
    for k, c in zip(ids, counts):
        try:
            samples.append(FunctionalSample(t[start:start + c], x[start:start + c]))
        except ValueError as exc:
            raise DataError(f"{path}: curve {k!r}: {exc}") from None
        start += c
    return ids, samples


def read_responses(path, ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Read ``id,y``; when ``ids`` is given, align to that order."""
    df = _read_table(path, ("id", "y"))
    bad = np.flatnonzero(df["y"].to_numpy() <= 0)
    if bad.size:
        raise DataError(f"{path}, line {int(bad[0]) + 2}: responses must be strictly positive")
    if df["id"].duplicated().any():
        dup = df["id"][df["id"].duplicated()].iloc[0]
        raise DataError(f"{path}: duplicate id {dup!r}")
    if ids is None:
        return df["y"].to_numpy()
    lookup = dict(zip(df["id"], df["y"]))
    missing = [k for k in ids if k not in lookup]
    if missing:
        raise DataError(f"{path}: no response for curve id(s) {missing[:5]}")
    return np.array([lookup[k] for k in ids], dtype=float)


def design_for(curves, basis: BasisConfig) -> DesignMatrix:
    if isinstance(curves, CurveSet):
        return curves.design(basis)
    return build_design(curves, basis)


def write_curves(path, curves: CurveSet, ids: Optional[Sequence[str]] = None) -> None:
    n, G = curves.values.shape
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    df = pd.DataFrame({
        "id": np.repeat(np.asarray(ids, dtype=object), G),
        "t": np.tile(curves.grid, n),
        "x": curves.values.ravel(),
    })
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_responses(path, y, ids: Optional[Sequence[str]] = None) -> None:
    y = np.asarray(y, dtype=float)
    ids = [str(i) for i in range(y.size)] if ids is None else list(ids)
    pd.DataFrame({"id": ids, "y": y}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def model_document(fit, basis: BasisConfig, method: Optional[str] = None) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "method": method or getattr(fit, "method", "FLPRE"),
        "degree": basis.degree,
        "penalty_order": basis.penalty_order,
        "interior_knots": basis.interior_knot_count,
        "knot_vector": basis.knots.tolist(),
        "theta": [float(v) for v in np.asarray(fit.theta)],
        "lambda": float(fit.lambda_),
        "converged": bool(fit.converged),
        "n": int(getattr(fit, "n", getattr(fit, "r", 0))),
        "loss": None if getattr(fit, "loss", None) is None else float(fit.loss),
    }


def save_model(path, fit, basis: BasisConfig, method: Optional[str] = None) -> dict:
    """Write the model as JSON; floats use the shortest exact round-trip repr."""
    doc = model_document(fit, basis, method)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return doc


def load_model(path) -> tuple[dict, BasisConfig, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        basis = BasisConfig(int(doc["interior_knots"]), int(doc["degree"]), int(doc["penalty_order"]))
        theta = np.asarray(doc["theta"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid model document: {exc}") from None
    if theta.size != basis.dim:
        raise DataError(f"{path}: theta has {theta.size} entries, basis dimension is {basis.dim}")
    if "knot_vector" in doc and not np.allclose(doc["knot_vector"], basis.knots, rtol=0, atol=1e-12):
        raise DataError(f"{path}: knot_vector is not the clamped uniform vector for this basis")
    return doc, basis, theta


def append_rows(path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    """Append rows to a CSV, writing the header when the file is new or empty."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                           lineterminator="\n")
        if new:
            w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})


def write_rows(path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    path = Path(path)
    if path.exists():
        os.remove(path)
    append_rows(path, rows, columns)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return "" if v is None else v


def write_scheme(path, probabilities, ids: Optional[Sequence[str]] = None) -> None:
    pi = np.asarray(probabilities, dtype=float)
    ids = [str(i) for i in range(pi.size)] if ids is None else list(ids)
    pd.DataFrame({"id": ids, "pi": pi}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
