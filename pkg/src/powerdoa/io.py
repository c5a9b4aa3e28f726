"""File formats: CSV frames and training sets, model / power-vector JSON, reports.

Floats are written with Python's shortest round-trip ``repr`` and CSVs use a
``.`` decimal separator independent of locale, so outputs are byte-stable.
Angles are stored in degrees rounded to 10 decimals, which makes
load/save of a model an exact round trip.
"""

import csv
import io as _io
import json
import math
import os
from pathlib import Path
import tempfile

import numpy as np

from .directivity import wrap_angle
from .exceptions import InvalidInputError
from .power import NoiseStats, PowerVector, SignalFrame
from .training import DirectivityModel, TrainingSet

FORMAT_VERSION = 1
MODEL_KEYS = ("order", "alpha", "gains", "theta", "sigma2", "frame_length", "facing_angles_deg",
              "format_version")


def deg(rad):
    """Radians to degrees, rounded to 10 decimals (no negative zero)."""
    return round(math.degrees(float(rad)), 10) + 0.0


def num(x):
    """JSON-safe float: non-finite values become ``None``."""
    x = float(x)
    return x if math.isfinite(x) else None


def fmt(x):
    """CSV float text."""
    return repr(float(x))


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj):
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidInputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None


def csv_text(header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InvalidInputError(f"file not found: {path}") from None
    if not rows:
        raise InvalidInputError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _float_table(path, rows, width):
    try:
        table = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric value ({exc})") from None
    if table.ndim != 2 or table.shape[1] != width:
        raise InvalidInputError(f"{path}: every row must have {width} columns")
    return table


def _check_keys(obj, required, path, optional=()):
    if not isinstance(obj, dict):
        raise InvalidInputError(f"{path}: expected a JSON object")
    missing = [k for k in required if k not in obj]
    unknown = [k for k in obj if k not in required and k not in optional]
    if missing:
        raise InvalidInputError(f"{path}: missing key(s) {missing}")
    if unknown:
        raise InvalidInputError(f"{path}: unknown key(s) {unknown}")


# signal frames ------------------------------------------------------------

def read_signal_csv(path, sample_rate):
    """Samples laid out one row per sample with header ``mic_1,...,mic_N``."""
    header, rows = _read_csv(path)
    expected = [f"mic_{i + 1}" for i in range(len(header))]
    if header != expected:
        raise InvalidInputError(f"{path}: header must be {','.join(expected)}")
    if not rows:
        raise InvalidInputError(f"{path}: no samples")
    table = _float_table(path, rows, len(header))
    return SignalFrame(samples=table.T, sample_rate=sample_rate)


def signal_csv_text(frame):
    header = [f"mic_{i + 1}" for i in range(frame.n_mics)]
    return csv_text(header, [[fmt(v) for v in col] for col in frame.samples.T])


# power vectors ------------------------------------------------------------

def power_vector_to_dict(pv):
    return {"power": [float(p) for p in pv.power], "frame_length": int(pv.frame_length)}


def power_vector_from_dict(obj, path="power vector"):
    _check_keys(obj, ("power", "frame_length"), path)
    return PowerVector(power=np.asarray(obj["power"], dtype=float), frame_length=obj["frame_length"])


def read_power_vector(path):
    return power_vector_from_dict(read_json(path), str(path))


# training sets ------------------------------------------------------------

def training_csv_text(data):
    header = ["angle_deg"] + [f"P_{n + 1}" for n in range(data.n_mics)]
    rows = [[fmt(deg(a))] + [fmt(p) for p in row] for a, row in zip(data.angles, data.powers)]
    return csv_text(header, rows)


def sidecar_dict(data):
    return {
        "sigma2": [float(s) for s in data.noise.sigma2],
        "frame_length": int(data.noise.frame_length),
        "facing_angles_deg": [deg(a) for a in data.facing_angles],
    }


def write_training_set(csv_path, sidecar_path, data):
    atomic_write_text(csv_path, training_csv_text(data))
    write_json(sidecar_path, sidecar_dict(data))


def read_training_set(csv_path, sidecar_path):
    header, rows = _read_csv(csv_path)
    n_mics = len(header) - 1
    expected = ["angle_deg"] + [f"P_{n + 1}" for n in range(n_mics)]
    if n_mics < 1 or header != expected:
        raise InvalidInputError(f"{csv_path}: header must be angle_deg,P_1,...,P_N")
    if not rows:
        raise InvalidInputError(f"{csv_path}: no training rows")
    table = _float_table(csv_path, rows, n_mics + 1)
    side = read_json(sidecar_path)
    _check_keys(side, ("sigma2", "frame_length", "facing_angles_deg"), str(sidecar_path))
    noise = NoiseStats(np.asarray(side["sigma2"], dtype=float), side["frame_length"])
    return TrainingSet(
        angles=np.radians(table[:, 0]),
        powers=table[:, 1:],
        noise=noise,
        facing_angles=np.radians(np.asarray(side["facing_angles_deg"], dtype=float)),
    )


# models -------------------------------------------------------------------

def model_to_dict(model):
    return {
        "order": int(model.order),
        "alpha": float(model.alpha),
        "gains": [float(g) for g in model.gains],
        "theta": [[float(t) for t in row] for row in model.theta],
        "sigma2": [float(s) for s in model.noise.sigma2],
        "frame_length": int(model.noise.frame_length),
        "facing_angles_deg": [deg(a) for a in model.facing_angles],
        "format_version": FORMAT_VERSION,
    }


def model_from_dict(obj, path="model"):
    _check_keys(obj, MODEL_KEYS, path)
    if obj["format_version"] != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format_version {obj['format_version']!r}")
    try:
        return DirectivityModel(
            alpha=obj["alpha"],
            gains=np.asarray(obj["gains"], dtype=float),
            theta=np.asarray(obj["theta"], dtype=float),
            order=obj["order"],
            noise=NoiseStats(np.asarray(obj["sigma2"], dtype=float), obj["frame_length"]),
            facing_angles=wrap_angle(np.radians(np.asarray(obj["facing_angles_deg"], dtype=float))),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def write_model(path, model):
    write_json(path, model_to_dict(model))


def read_model(path):
    return model_from_dict(read_json(path), str(path))


# CRLB curves --------------------------------------------------------------

def crlb_csv_text(curve):
    rows = []
    for a, v, d in zip(curve.angles, curve.values_deg2, curve.degenerate_mask):
        rows.append([fmt(deg(a)), "inf" if d else fmt(v), "1" if d else "0"])
    return csv_text(["angle_deg", "crlb_deg2", "degenerate"], rows)


# benchmark ----------------------------------------------------------------

def benchmark_trials_csv_text(report):
    rows = [
        [signal, fmt(angle), str(trial), fmt(psi), fmt(err)]
        for signal, angle, trial, psi, err in report.rows
    ]
    return csv_text(["signal", "angle_deg", "trial", "psi_hat_deg", "error_deg"], rows)


def benchmark_summary_csv_text(report):
    header = ["signal", "n_ok", "n_failed", "mean_error_deg", "rmse_deg", "std_error_deg"]
    rows = []
    for s in report.summary:
        rows.append([s["signal"], str(s["n_ok"]), str(s["n_failed"])] + [
            "nan" if s[k] is None else fmt(s[k]) for k in header[3:]
        ])
    return csv_text(header, rows)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return num(obj)
    return obj
