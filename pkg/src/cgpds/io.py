"""CSV dataset loading, JSON model persistence, and the output writers.

Every writer builds the full text first and lands it with a temp file plus
os.replace, so a failure never leaves a partial output file.  Model files
round-trip bitwise: floats are serialized with repr, which json reads back
to the identical double.
"""

from __future__ import annotations

import csv
import io as _stringio
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kernels import KernelParams, KernelSpec
from .latent_prior import TemporalGrid, VariationalLatentX
from .model import ModelState
from .sparse_layer import GaussianVariational, InducingSet

FORMAT_VERSION = 1


@dataclass
class SequenceDataset:
    grid: TemporalGrid
    Y: np.ndarray                # N x D, NaN only where missing is True
    column_names: list
    missing: np.ndarray          # N x D bool


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path, allow_missing: bool = False) -> SequenceDataset:
    """Parse a header-ful CSV whose first column is "t".

    Training data must be fully observed; reconstruction inputs may carry
    NaN cells, which become the missing mask.
    """
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or not rows[0]:
        raise DataError(f"{path}: missing header row")
    header = [c.strip() for c in rows[0]]
    if header[0] != "t":
        raise DataError(f"{path}: first column must be named 't', got {header[0]!r}")
    if len(header) < 2:
        raise DataError(f"{path}: need at least one value column")
    width = len(header)
    times = []
    values = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataError(f"{path}: line {i} has {len(row)} cells, expected {width}")
        try:
            parsed = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: {exc}") from exc
        times.append(parsed[0])
        values.append(parsed[1:])
    if len(times) < 2:
        raise DataError(f"{path}: need at least two data rows")
    t = np.asarray(times)
    Y = np.asarray(values)
    if not np.all(np.isfinite(t)):
        raise DataError(f"{path}: time column must be finite")
    if np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: time column must be strictly increasing")
    missing = np.isnan(Y)
    if np.any(np.isinf(Y)):
        raise DataError(f"{path}: values must be finite (NaN only marks missing)")
    if missing.any() and not allow_missing:
        raise DataError(f"{path}: training data must not contain missing entries")
    return SequenceDataset(TemporalGrid(t), Y, header[1:], missing)


# ---------------------------------------------------------------------------
# model file


def _params_block(params: KernelParams) -> dict:
    block = {"signal_variance": float(params.signal_variance),
             "lengthscales": np.asarray(params.lengthscales, float).tolist()}
    if params.period is not None:
        block["period"] = float(params.period)
    return block


def _params_from_block(block: dict) -> KernelParams:
    return KernelParams(float(block["signal_variance"]),
                        np.asarray(block["lengthscales"], dtype=float),
                        float(block["period"]) if "period" in block else None)


def _kernel_block(spec: KernelSpec, params) -> dict:
    if spec.family == "rbf+periodic":
        rbf, per = params
        return {"family": spec.family, "rbf": _params_block(rbf),
                "periodic": _params_block(per)}
    return {"family": spec.family, **_params_block(params)}


def _kernel_from_block(block: dict, input_dim: int):
    family = block["family"]
    spec = KernelSpec(family, input_dim)
    if family == "rbf+periodic":
        return spec, (_params_from_block(block["rbf"]),
                      _params_from_block(block["periodic"]))
    return spec, _params_from_block(block)


def save_model(path, state: ModelState, Y, column_names, training: dict) -> None:
    """Single self-describing JSON document holding every parameter array,
    the training data block, and the run metadata."""
    Y = np.asarray(Y, dtype=float)
    j = state.j
    doc = {
        "format_version": FORMAT_VERSION,
        "shape": {"n": state.n, "d": state.d, "q": state.q,
                  "j": j, "m": state.m},
        "times": state.grid.times.tolist(),
        "column_names": list(column_names),
        "Y": Y.tolist(),
        "kernel_x": _kernel_block(*state.kernel_x),
        "kernel_h": _kernel_block(*state.kernel_h),
        "kernels_g": [_kernel_block(s, p) for s, p in state.kernels_g],
        "W": state.W.tolist(),
        "beta": float(state.beta),
        "latent_means": state.qx.means.T.tolist(),
        "latent_variances": state.qx.variances.T.tolist(),
        "Z_g": [state.inducing[a].Z.tolist() for a in range(j)],
        "Z_h": state.inducing[j].Z.tolist(),
        "m_u": [state.qu[a].mean.tolist() for a in range(j)],
        "L_u": [state.qu[a].cov_factor.tolist() for a in range(j)],
        "m_v": state.qu[j].mean.tolist(),
        "L_v": state.qu[j].cov_factor.tolist(),
        "training": {"seed": int(training["seed"]),
                     "iterations": int(training["iterations"]),
                     "final_elbo": float(training["final_elbo"])},
    }
    _atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


@dataclass
class SavedModel:
    state: ModelState
    Y: np.ndarray
    column_names: list
    training: dict


def load_model(path) -> SavedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {version!r}")
    try:
        shape = doc["shape"]
        n, d, q, j, m = (int(shape[k]) for k in ("n", "d", "q", "j", "m"))
        grid = TemporalGrid(np.asarray(doc["times"], dtype=float))
        qx = VariationalLatentX(np.asarray(doc["latent_means"], dtype=float).T,
                                np.asarray(doc["latent_variances"], dtype=float).T)
        kernel_x = _kernel_from_block(doc["kernel_x"], 1)
        kernel_h = _kernel_from_block(doc["kernel_h"], q)
        kernels_g = [_kernel_from_block(b, q) for b in doc["kernels_g"]]
        inducing = [InducingSet(np.asarray(z, dtype=float)) for z in doc["Z_g"]]
        inducing.append(InducingSet(np.asarray(doc["Z_h"], dtype=float)))
        qu = [GaussianVariational(np.asarray(mu, dtype=float),
                                  np.asarray(L, dtype=float))
              for mu, L in zip(doc["m_u"], doc["L_u"])]
        qu.append(GaussianVariational(np.asarray(doc["m_v"], dtype=float),
                                      np.asarray(doc["L_v"], dtype=float)))
        state = ModelState(grid=grid, qx=qx, kernel_x=kernel_x,
                           kernel_h=kernel_h, kernels_g=kernels_g,
                           W=np.asarray(doc["W"], dtype=float),
                           beta=float(doc["beta"]),
                           inducing=inducing, qu=qu)
        Y = np.asarray(doc["Y"], dtype=float)
        names = [str(c) for c in doc["column_names"]]
        training = dict(doc["training"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file: {exc}") from exc
    if (state.n, state.d, state.q, state.j, state.m) != (n, d, q, j, m):
        raise DataError(f"{path}: shape block disagrees with the stored arrays")
    if Y.shape != (n, d) or len(names) != d:
        raise DataError(f"{path}: stored data block disagrees with the shape block")
    return SavedModel(state, Y, names, training)


# ---------------------------------------------------------------------------
# CSV writers


def _write_rows(path, header, rows) -> None:
    buf = _stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_text(path, buf.getvalue())


def write_trace(path, trace) -> None:
    _write_rows(path, ["iter", "elbo", "grad_norm", "seconds"],
                [(int(it), repr(float(val)), repr(float(gn)), repr(float(sec)))
                 for it, val, gn, sec in trace.records])


def write_prediction(path, times, moments, column_names) -> None:
    header = (["t"] + [f"mean_{c}" for c in column_names]
              + [f"var_{c}" for c in column_names])
    rows = [[repr(float(t))] + [repr(float(v)) for v in moments.mean[i]]
            + [repr(float(v)) for v in moments.variance[i]]
            for i, t in enumerate(times)]
    _write_rows(path, header, rows)


def write_reconstruction(path, times, moments, missing, column_names) -> None:
    """Filled values for the missing entries only, plus an index file giving
    their (row, col) positions in the input."""
    rows = []
    index_rows = []
    for i in range(missing.shape[0]):
        for col in range(missing.shape[1]):
            if missing[i, col]:
                rows.append([repr(float(times[i])), column_names[col],
                             repr(float(moments.mean[i, col])),
                             repr(float(moments.variance[i, col]))])
                index_rows.append([i, col])
    _write_rows(path, ["t", "dim", "mean", "var"], rows)
    _write_rows(os.fspath(path) + ".index.csv", ["row", "col"], index_rows)
