"""CSV and JSON formats: panels, statistics, chains, run configuration and manifests.

Floats are written with ``repr``, the shortest string that parses back to the
same double, so files round-trip bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import jsonschema
import numpy as np

from .errors import IngestionError, ParameterError
from .model import Constant, DriftSpec, ModelSpec, TimeGrid, factor_from_name
from .simulate import CovariatePath, Panel, SubjectPath

__all__ = [
    "CONFIG_SCHEMA",
    "write_panel_csv",
    "ingest_panel",
    "default_spec",
    "write_csv",
    "write_json",
    "read_json",
    "load_config",
    "validate_config",
    "spec_from_config",
    "config_hash",
    "file_hash",
    "versions",
]

SPACING_RTOL = 1e-9


def _f(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# panels


def write_panel_csv(panel: Panel, path) -> Path:
    """Long format ``subject,time,x,z1,...,zp``, sorted by subject then time."""
    path = Path(path)
    p = panel.spec.p
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "time", "x"] + [f"z{l}" for l in range(1, p + 1)])
        for sp, cov in panel:
            t = sp.grid.knots
            for k in range(len(t)):
                w.writerow([str(sp.subject), _f(t[k]), _f(sp.states[k])]
                           + [_f(z) for z in cov.values[k]])
    return path


def default_spec(p: int) -> ModelSpec:
    """``(xi_0 + sum_l xi_l z_l)(beta_1 + beta_2 x)`` with unit diffusion."""
    return ModelSpec(DriftSpec(("identity",) * p, factor_from_name("affine")), Constant(1.0))


def _parse_float(text, lineno, column):
    if text is None or text.strip() == "":
        raise IngestionError(f"row {lineno}: missing value in column {column!r}")
    try:
        v = float(text)
    except ValueError:
        raise IngestionError(f"row {lineno}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"row {lineno}: column {column!r} is not finite: {text!r}")
    return v


def _subject_id(ids):
    try:
        ints = [int(s) for s in ids]
    except ValueError:
        return list(ids)
    if all(str(i) == s for i, s in zip(ints, ids)):
        return ints
    return list(ids)


def ingest_panel(path, spec: ModelSpec | None = None) -> Panel:
    """Read a long-format panel CSV.

    Each subject's grid is inferred from its time column, which must be
    increasing and uniformly spaced (relative tolerance 1e-9).  The number of
    covariates comes from the header.  Row numbers in error messages count
    the header as row 1.

    Raises
    ------
    IngestionError
        Malformed header, ragged or missing values, interleaved subjects,
        fewer than two rows for a subject, or nonuniform spacing.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:3] != ["subject", "time", "x"]:
            raise IngestionError(f"row 1: header must start with subject,time,x; got {header[:3]}")
        p = len(header) - 3
        if header[3:] != [f"z{l}" for l in range(1, p + 1)]:
            raise IngestionError(f"row 1: covariate columns must be z1..z{p}; got {header[3:]}")
        blocks: dict = {}
        order = []
        last = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            sid = row[0].strip()
            if sid == "":
                raise IngestionError(f"row {lineno}: missing subject id")
            if sid != last:
                if sid in blocks:
                    raise IngestionError(f"row {lineno}: rows of subject {sid!r} are not contiguous")
                blocks[sid] = []
                order.append(sid)
                last = sid
            vals = [_parse_float(row[c], lineno, header[c]) for c in range(1, len(header))]
            blocks[sid].append((lineno, vals))
    if not order:
        raise IngestionError(f"{path}: no data rows")
    ids = _subject_id(order)
    paths, covs = [], []
    for sid, key in zip(ids, order):
        rows = blocks[key]
        if len(rows) < 2:
            raise IngestionError(f"row {rows[0][0]}: subject {key!r} has a single observation")
        data = np.array([v for _, v in rows])
        t = data[:, 0]
        dt = np.diff(t)
        if np.any(dt <= 0):
            k = int(np.flatnonzero(dt <= 0)[0]) + 1
            raise IngestionError(f"row {rows[k][0]}: time does not increase for subject {key!r}")
        span = t[-1] - t[0]
        n_steps = len(t) - 1
        # the first interval sets the spacing, so the error points at the first odd row
        off = np.abs(dt - dt[0]) > SPACING_RTOL * dt[0]
        if off.any():
            k = int(np.flatnonzero(off)[0]) + 1
            raise IngestionError(f"row {rows[k][0]}: nonuniform time spacing for subject {key!r}")
        grid = TimeGrid(span, n_steps)
        paths.append(SubjectPath(sid, grid, data[:, 1]))
        covs.append(CovariatePath(sid, grid, data[:, 2:].reshape(len(t), p)))
    if spec is None:
        spec = default_spec(p)
    return Panel(spec, tuple(paths), tuple(covs))


# ---------------------------------------------------------------------------
# generic writers


def write_csv(path, header, rows) -> Path:
    """Write rows, formatting floats with ``repr``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else
                        (int(v) if isinstance(v, (np.integer, np.bool_)) else v) for v in r])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__
    return {"sdecov": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# run configuration

_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_POS_INT = {"type": "integer", "minimum": 1}
_DIFFUSION = {
    "oneOf": [
        {"type": "object", "required": ["family"], "additionalProperties": False,
         "properties": {"family": {"const": "constant"},
                        "sigma": {"type": "number", "exclusiveMinimum": 0}}},
        {"type": "object", "required": ["family", "A", "B"], "additionalProperties": False,
         "properties": {"family": {"const": "ckls"},
                        "A": {"type": "number", "exclusiveMinimum": 0},
                        "B": {"type": "number", "minimum": 0}}},
    ]
}
_PRIOR = {
    "type": "object", "additionalProperties": False,
    "properties": {"kind": {"enum": ["normal", "empirical-bayes"]},
                   "mean": {"type": ["number", "array"]},
                   "sd": {"type": ["number", "array"]},
                   "bootstrap_B": _POS_INT},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "sdecov run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "drift": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "transforms": {"type": "array",
                                       "items": {"enum": ["identity", "tanh", "square", "exp",
                                                          "arctan"]}},
                        "factor": {"enum": ["affine", "linear", "identity", "neg_identity",
                                            "unit"]},
                        "covariate_ranges": {"type": ["array", "null"], "items": _RANGE},
                    },
                },
                "diffusion": {"oneOf": [_DIFFUSION, {"type": "array", "items": _DIFFUSION,
                                                     "minItems": 1}]},
                "bounds": {"type": "array", "items": _RANGE},
                "names": {"type": "array", "items": {"type": "string"}},
            },
        },
        "grid": {"type": "object", "required": ["t_end", "n_steps"], "additionalProperties": False,
                 "properties": {"t_end": {"type": "number", "exclusiveMinimum": 0},
                                "n_steps": _POS_INT}},
        "preset": {"enum": ["product", "nse-like"]},
        "n": _POS_INT,
        "x0": {"type": ["number", "array"]},
        "covariates": {
            "type": "object", "additionalProperties": False,
            "properties": {"xi_mean": {"type": "number"},
                           "xi_sd": {"type": "number", "minimum": 0},
                           "z0": {"type": "number"},
                           "bounds": {"oneOf": [_RANGE, {"type": "null"}]}},
        },
        "theta": {"type": "array", "items": {"type": "number"}},
        "init": {"oneOf": [{"const": "random"}, {"type": "array", "items": {"type": "number"}}]},
        "seed": {"type": "integer", "minimum": 0},
        "fit": {"type": "object", "additionalProperties": False,
                "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                               "max_sweeps": _POS_INT}},
        "bootstrap": {"type": "object", "additionalProperties": False,
                      "properties": {"B": _POS_INT, "level": {"type": "number",
                                                              "exclusiveMinimum": 0,
                                                              "exclusiveMaximum": 1},
                                     "regenerate_covariates": {"type": "boolean"},
                                     "workers": _POS_INT}},
        "abc": {"type": "object", "additionalProperties": False,
                "properties": {"epsilon": {"type": "number", "exclusiveMinimum": 0},
                               "n_accept": _POS_INT, "max_trials": _POS_INT,
                               "distance": {"enum": ["rms", "mean-path"]},
                               "prior": _PRIOR, "workers": _POS_INT}},
        "gibbs": {"type": "object", "additionalProperties": False,
                  "properties": {"iters": _POS_INT, "thin": _POS_INT, "prior": _PRIOR,
                                 "init": {"type": ["number", "array"]},
                                 "fixed": {"type": "array", "items": {"type": "string"}}}},
        "experiments": {"type": "object", "additionalProperties": False,
                        "properties": {"n_list": {"type": "array", "items": _POS_INT,
                                                  "minItems": 1},
                                       "n": _POS_INT, "reps": _POS_INT,
                                       "setup": {"enum": ["iid", "non-iid"]},
                                       "n_steps": _POS_INT, "workers": _POS_INT,
                                       "theta0": {"type": "array",
                                                  "items": {"type": "number"}}}},
    },
}


def validate_config(config: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA`; errors name the offending field."""
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParameterError(f"config field {where!r}: {exc.message}") from None
    return config


def load_config(path) -> dict:
    return validate_config(read_json(path))


def spec_from_config(config: dict, p: int | None = None) -> ModelSpec:
    """Model from the ``model`` block; ``p`` (from data) fills in identity transforms."""
    m = config.get("model")
    if m is None:
        if p is None:
            raise ParameterError("config has no 'model' block and no data to infer it from")
        return default_spec(p)
    m = dict(m)
    drift = dict(m.get("drift", {}))
    if "transforms" not in drift and p is not None:
        drift["transforms"] = ["identity"] * p
    m["drift"] = drift
    spec = ModelSpec.from_dict(m)
    if p is not None and spec.p != p:
        raise ParameterError(f"config field 'model/drift/transforms': model has {spec.p} "
                             f"covariates, data has {p}")
    return spec
