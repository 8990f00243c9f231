"""Depth and normal error metrics and the benchmark table."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .camera import normals_from_depth
from .exceptions import DomainError
from .validation import check_mask, check_scalar_field, check_vector_field

METHOD_ORDER = ("Ortho", "Naive", "PG", "PTGV")
METRICS = ("RMSE", "MAE")


def rmse(d_hat, d_gt, eval_mask):
    """Root-mean-square difference of two depth maps over ``eval_mask``."""
    d_hat = check_scalar_field(d_hat, "d_hat")
    d_gt = check_scalar_field(d_gt, "d_gt", d_hat.shape)
    eval_mask = check_mask(eval_mask, "eval_mask", d_hat.shape, nonempty=True)
    diff = d_hat[eval_mask] - d_gt[eval_mask]
    if not np.all(np.isfinite(diff)):
        raise DomainError("depth maps must be finite on the evaluation mask")
    return float(np.sqrt(np.mean(diff * diff)))


def angular_error(a, b):
    """Per-pixel angle in radians between two (..., 3) vector fields.

    Uses ``atan2(|a x b|, a . b)``, which stays accurate for nearly parallel
    vectors where ``arccos`` loses half the digits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def mae_normals(d_hat, n_gt, camera, eval_mask, return_excluded=False):
    """Mean angular error of the normals implied by ``d_hat``.

    Normals are estimated from ``d_hat`` by finite differences of the
    back-projected points. Pixels where that estimate is undefined are left
    out; with ``return_excluded`` their count is returned as well.
    """
    d_hat = check_scalar_field(d_hat, "d_hat")
    n_gt = check_vector_field(n_gt, 3, "n_gt", d_hat.shape)
    eval_mask = check_mask(eval_mask, "eval_mask", d_hat.shape, nonempty=True)
    n_hat, valid = normals_from_depth(d_hat, eval_mask, camera)
    use = valid & np.all(np.isfinite(n_gt), axis=-1)
    if not use.any():
        raise DomainError("no pixel has a valid estimated normal")
    mae = float(np.mean(angular_error(n_hat[use], n_gt[use])))
    if return_excluded:
        return mae, int(np.count_nonzero(eval_mask & ~use))
    return mae


@dataclass
class BenchResult:
    scene: str
    method: str
    rmse: float
    mae: float
    excluded: int = 0
    seconds: float = float("nan")


def _ordered_methods(records):
    seen = []
    for r in records:
        if r.method not in seen:
            seen.append(r.method)
    known = [m for m in METHOD_ORDER if m in seen]
    return known + [m for m in seen if m not in METHOD_ORDER]


def benchmark_table(records):
    """Wide table: one row per scene plus ``Average``.

    Returns ``(header, rows)``. Columns are ``<method> RMSE`` and
    ``<method> MAE`` for Ortho, Naive, PG, PTGV and then any other methods
    in order of first appearance. ``Average`` is the unweighted mean over
    scenes; a missing cell makes its column average NaN.
    """
    records = list(records)
    if not records:
        raise ValueError("benchmark_table needs at least one result")
    methods = _ordered_methods(records)
    scenes = []
    for r in records:
        if r.scene not in scenes:
            scenes.append(r.scene)
    cell = {(r.scene, r.method): r for r in records}
    header = ["scene"] + [f"{m} {k}" for m in methods for k in METRICS]
    rows = []
    for s in scenes:
        row = [s]
        for m in methods:
            r = cell.get((s, m))
            row += [r.rmse, r.mae] if r is not None else [math.nan, math.nan]
        rows.append(row)
    cols = np.array([row[1:] for row in rows], dtype=np.float64)
    rows.append(["Average"] + [float(v) for v in cols.mean(axis=0)])
    return header, rows


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def benchmark_report(records, external=None):
    """Wide CSV text of :func:`benchmark_table`; ``external`` results go after ours."""
    records = list(records) + list(external or [])
    return _to_csv(*benchmark_table(records))


def long_format(records):
    """One CSV line per (scene, method, metric)."""
    rows = []
    for r in records:
        rows.append([r.scene, r.method, "RMSE", float(r.rmse)])
        rows.append([r.scene, r.method, "MAE", float(r.mae)])
    return _to_csv(["scene", "method", "metric", "value"], rows)


def parse_report(text):
    """Read a wide CSV in the :func:`benchmark_report` layout back to results.

    The ``Average`` row is skipped; it is recomputed on merge. Used to bring
    in externally computed columns such as Nehab or BiNI.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty CSV") from None
    if not header or header[0] != "scene":
        raise ValueError("first column must be 'scene'")
    pairs = {}
    for j, name in enumerate(header[1:], start=1):
        method, _, metric = name.rpartition(" ")
        if metric not in METRICS or not method:
            raise ValueError(f"column {name!r} is not '<method> RMSE' or '<method> MAE'")
        pairs.setdefault(method, {})[metric] = j
    out = []
    for line, row in enumerate(reader, start=2):
        if not row or row[0] == "Average":
            continue
        if len(row) != len(header):
            raise ValueError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        for method, cols in pairs.items():
            vals = {k: float(row[j]) for k, j in cols.items()}
            out.append(BenchResult(row[0], method, vals.get("RMSE", math.nan),
                                   vals.get("MAE", math.nan)))
    return out
