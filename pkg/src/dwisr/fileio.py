"""Bit-exact persistence: volumes, gradient tables, schemes, configs.

Volumes use a bespoke raw+JSON pair: `<stem>.json` carries the header,
`<stem>.f32` the little-endian float32 payload with x fastest, then y, then
z, then q.  All writers are deterministic byte-for-byte: JSON keys are
sorted and floats are formatted with 17 significant digits.
"""

import json
import math
import os

import numpy as np

from .encoding import DwiVolumeSet, EncodingBasis
from .qspace import QSpaceDesign, SamplingScheme
from .solver import SolverConfig


class CorruptFileError(ValueError):
    pass


class UnsupportedFormatError(ValueError):
    pass


class GradientParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


VOLUME_DTYPE_TAG = "f32le"
VOLUME_ORDER_TAG = "x-fastest,q-slowest"


def _fmt_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _dumps(obj):
    """Deterministic JSON: sorted keys, 17-significant-digit floats."""
    if isinstance(obj, dict):
        items = (f"{json.dumps(k)}: {_dumps(obj[k])}" for k in sorted(obj))
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps(v) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    return json.dumps(obj)


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_volume(stem, volume, description=""):
    """Write `<stem>.json` (header) and `<stem>.f32` (raw payload)."""
    if not np.all(np.isfinite(volume.values)):
        raise ValueError("volume contains non-finite values")
    header = {
        "dims": list(volume.dims),
        "n_q": volume.n_q,
        "voxel_size_mm": [float(v) for v in volume.voxel_size],
        "dtype": VOLUME_DTYPE_TAG,
        "order": VOLUME_ORDER_TAG,
        "description": description,
    }
    _write_text(f"{stem}.json", _dumps(header) + "\n")
    payload = np.asarray(volume.values, dtype="<f4").ravel(order="F")
    try:
        with open(f"{stem}.f32", "wb") as f:
            f.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {stem}.f32: {exc}") from exc


def read_volume(stem):
    """Inverse of write_volume; validates tags and payload length."""
    with open(f"{stem}.json", "r", encoding="utf-8") as f:
        header = json.load(f)
    if header.get("dtype") != VOLUME_DTYPE_TAG:
        raise UnsupportedFormatError(f"unsupported dtype tag {header.get('dtype')!r}")
    if header.get("order") != VOLUME_ORDER_TAG:
        raise UnsupportedFormatError(f"unsupported order tag {header.get('order')!r}")
    dims = tuple(header["dims"])
    n_q = header["n_q"]
    n_elem = dims[0] * dims[1] * dims[2] * n_q
    with open(f"{stem}.f32", "rb") as f:
        raw = f.read()
    if len(raw) != 4 * n_elem:
        raise CorruptFileError(
            f"{stem}.f32: expected {4 * n_elem} bytes, found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(dims + (n_q,), order="F")
    return DwiVolumeSet(
        values=values.astype(np.float64),
        voxel_size=tuple(header["voxel_size_mm"]),
    )


def write_gradients(path, design):
    """One `gx gy gz b` line per direction, LF endings."""
    lines = [
        " ".join(_fmt_float(v) for v in (d[0], d[1], d[2], design.bvalue))
        for d in design.directions
    ]
    _write_text(path, "\n".join(lines) + "\n")


def read_gradients(path, n_b0=1):
    """Parse a gradient table; unit norms validated within 1e-4, renormalized."""
    dirs = []
    bvals = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise GradientParseError(f"{path}:{lineno}: expected 4 fields")
            try:
                gx, gy, gz, b = (float(p) for p in parts)
            except ValueError as exc:
                raise GradientParseError(f"{path}:{lineno}: {exc}") from exc
            norm = math.sqrt(gx * gx + gy * gy + gz * gz)
            if abs(norm - 1.0) > 1e-4:
                raise GradientParseError(
                    f"{path}:{lineno}: direction norm {norm:.6g} not within 1e-4 of 1"
                )
            dirs.append((gx / norm, gy / norm, gz / norm))
            bvals.append(b)
    if not dirs:
        raise GradientParseError(f"{path}: no directions found")
    if len(set(bvals)) != 1:
        raise GradientParseError(f"{path}: mixed b-values are not supported")
    return QSpaceDesign(
        directions=np.asarray(dirs), bvalue=bvals[0], n_b0=n_b0
    )


def write_scheme(path, scheme, factor):
    obj = {
        "n_rf": scheme.n_rf,
        "factor": factor,
        "assignments": [list(a) for a in scheme.assignments],
    }
    _write_text(path, _dumps(obj) + "\n")


def read_scheme(path):
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return SamplingScheme(
        n_rf=obj["n_rf"],
        assignments=tuple(tuple(a) for a in obj["assignments"]),
        acceleration_label=f"{obj['factor']}X",
    )


CONFIG_FIELDS = {
    "lambda": "lam",
    "lambda_tv": "lambda_tv",
    "rho1": "rho1",
    "rho2": "rho2",
    "n_iter": "n_iter",
    "epsilon": "epsilon",
    "bp_inner_iters": "bp_inner_iters",
    "tv_inner_iters": "tv_inner_iters",
    "tikhonov_mu": "tikhonov_mu",
}


def write_config(path, cfg):
    obj = {key: getattr(cfg, attr) for key, attr in CONFIG_FIELDS.items()}
    _write_text(path, _dumps(obj) + "\n")


def read_config(path):
    """Strict solver-config reader: every field required, none unknown."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    unknown = set(obj) - set(CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    missing = set(CONFIG_FIELDS) - set(obj)
    if missing:
        raise ConfigError(f"missing config field(s): {', '.join(sorted(missing))}")
    return SolverConfig(**{attr: obj[key] for key, attr in CONFIG_FIELDS.items()})


def write_basis(path, basis):
    obj = {"af": basis.af, "matrix": [list(row) for row in basis.matrix]}
    _write_text(path, _dumps(obj) + "\n")


def read_basis(path):
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    matrix = np.asarray(obj["matrix"], dtype=np.float64)
    if matrix.shape != (obj["af"], obj["af"]):
        raise CorruptFileError(f"{path}: matrix shape does not match af")
    return EncodingBasis(matrix=matrix)


def write_dictionary(stem, dictionary):
    """Debug export: JSON header plus raw f64 matrix, column-major."""
    header = {
        "N_q": dictionary.n_q,
        "M": dictionary.n_atoms,
        "rho": dictionary.rho,
        "n_max": dictionary.n_max,
        "levels": list(dictionary.levels),
        "orientations_per_level": list(dictionary.orientations_per_level),
    }
    _write_text(f"{stem}.json", _dumps(header) + "\n")
    with open(f"{stem}.f64", "wb") as f:
        f.write(np.asarray(dictionary.matrix, dtype="<f8").ravel(order="F").tobytes())


def write_summary_csv(path, rows):
    """Metric summary CSV: header `scheme,metric,statistic,value`."""
    lines = ["scheme,metric,statistic,value"]
    for scheme, metric, stat, value in rows:
        lines.append(f"{scheme},{metric},{stat},{_fmt_float(float(value))}")
    _write_text(path, "\n".join(lines) + "\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
