"""Reading ensembles and measurement data; writing reports and plot tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .density import SampleEnsemble
from .qoi import MeasurementData

SCHEMA_VERSION = "1"
PARAM_PREFIX = "lam_"
QOI_PREFIX = "q_"
WEIGHT_COLUMN = "weight"


class IngestError(ValueError):
    pass


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("csv", "json"):
        raise IngestError(f"cannot tell the format of {path}; pass csv or json")
    return fmt


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"row {row}, column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return value


def _read_csv_table(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise IngestError(
                    f"{path}: line {lineno} has {len(raw)} fields, header has {len(header)}")
            rows.append((lineno, [c.strip() for c in raw]))
    return header, rows


def ingest_ensemble(path, fmt: Optional[str] = None, initial_density=None) -> SampleEnsemble:
    """Load a sample ensemble from CSV or JSON.

    CSV: parameter columns start with ``lam_``, QoI columns with ``q_``, and
    an optional ``weight`` column.  JSON: an object with ``params`` and
    ``qoi`` arrays (rows are samples) and optional ``weights``.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        header, rows = _read_csv_table(path)
        p_cols = [i for i, h in enumerate(header) if h.startswith(PARAM_PREFIX)]
        q_cols = [i for i, h in enumerate(header) if h.startswith(QOI_PREFIX)]
        w_col = header.index(WEIGHT_COLUMN) if WEIGHT_COLUMN in header else None
        if not p_cols or not q_cols:
            raise IngestError(
                f"{path}: header must name '{PARAM_PREFIX}*' and '{QOI_PREFIX}*' columns")
        if not rows:
            raise IngestError(f"{path}: no data rows")
        values = np.array([[_parse_float(r[i], n, header[i]) for i in range(len(header))
                            if i in p_cols or i in q_cols or i == w_col]
                           for n, r in rows])
        order = [i for i in range(len(header)) if i in p_cols or i in q_cols or i == w_col]
        pos = {c: k for k, c in enumerate(order)}
        params = values[:, [pos[i] for i in p_cols]]
        qoi = values[:, [pos[i] for i in q_cols]]
        weights = values[:, pos[w_col]] if w_col is not None else None
    else:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: malformed JSON ({exc})") from None
        if not isinstance(doc, dict) or "params" not in doc or "qoi" not in doc:
            raise IngestError(f"{path}: expected an object with 'params' and 'qoi'")
        params = _json_matrix(doc["params"], "params", path)
        qoi = _json_matrix(doc["qoi"], "qoi", path)
        weights = doc.get("weights")
        if weights is not None:
            weights = _json_matrix([[w] for w in weights], "weights", path)[:, 0]
        if params.shape[0] != qoi.shape[0]:
            raise IngestError(
                f"{path}: {params.shape[0]} parameter rows but {qoi.shape[0]} qoi rows")
    try:
        return SampleEnsemble(params, qoi, initial_density, weights)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None


def _json_matrix(rows, name: str, path: Path) -> np.ndarray:
    if not isinstance(rows, list) or not rows:
        raise IngestError(f"{path}: '{name}' must be a non-empty list of rows")
    rows = [r if isinstance(r, list) else [r] for r in rows]
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise IngestError(f"{path}: '{name}' row {i + 1} has {len(r)} entries, expected {width}")
        for j, v in enumerate(r):
            if v is None or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise IngestError(f"{path}: '{name}' row {i + 1}, column {j + 1}: invalid value {v!r}")
            out[i, j] = v
    return out


def emit_ensemble(ensemble: SampleEnsemble, path, fmt: Optional[str] = None) -> Path:
    """Write an ensemble so that :func:`ingest_ensemble` reads it back exactly."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    p, m = ensemble.n_params, ensemble.n_qoi
    if fmt == "csv":
        header = [f"{PARAM_PREFIX}{i + 1}" for i in range(p)] + [f"{QOI_PREFIX}{i + 1}" for i in range(m)]
        if ensemble.weights is not None:
            header.append(WEIGHT_COLUMN)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(ensemble.n_samples):
                row = list(ensemble.params[k]) + list(ensemble.qoi[k])
                if ensemble.weights is not None:
                    row.append(ensemble.weights[k])
                writer.writerow([repr(float(v)) for v in row])
    else:
        doc = {"schema_version": SCHEMA_VERSION,
               "params": ensemble.params.tolist(), "qoi": ensemble.qoi.tolist()}
        if ensemble.weights is not None:
            doc["weights"] = ensemble.weights.tolist()
        path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def load_measurements(path) -> MeasurementData:
    """Read ``device,index,value,sigma`` rows.

    Devices keep the order in which they first appear; data within a device
    are ordered by ``index``.  This is the column order expected of ensemble
    QoI values.  The noise level must be constant within a device.
    """
    path = Path(path)
    header, rows = _read_csv_table(path)
    need = ["device", "index", "value", "sigma"]
    missing = [c for c in need if c not in header]
    if missing:
        raise IngestError(f"{path}: missing column(s) {missing}")
    col = {c: header.index(c) for c in need}
    devices: Dict[str, list] = {}
    sigmas: Dict[str, float] = {}
    for lineno, r in rows:
        dev = r[col["device"]]
        idx = _parse_float(r[col["index"]], lineno, "index")
        val = _parse_float(r[col["value"]], lineno, "value")
        sig = _parse_float(r[col["sigma"]], lineno, "sigma")
        if sig <= 0:
            raise IngestError(f"row {lineno}, column 'sigma': must be positive")
        if dev in sigmas and sigmas[dev] != sig:
            raise IngestError(f"row {lineno}: device {dev!r} has more than one sigma")
        sigmas[dev] = sig
        devices.setdefault(dev, []).append((idx, val))
    if not devices:
        raise IngestError(f"{path}: no data rows")
    values = tuple(np.array([v for _, v in sorted(items, key=lambda t: t[0])])
                   for items in devices.values())
    return MeasurementData(values, np.array([sigmas[d] for d in devices]))


def write_measurements(data: MeasurementData, path, names: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    names = names or [str(j + 1) for j in range(data.n_devices)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device", "index", "value", "sigma"])
        for j, vals in enumerate(data.values):
            for i, v in enumerate(vals):
                writer.writerow([names[j], i + 1, repr(float(v)), repr(float(data.sigmas[j]))])
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(payload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a leading ``schema_version`` column."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schema_version", *header])
        for row in rows:
            writer.writerow([SCHEMA_VERSION, *(_cell(v) for v in row)])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_table(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
