"""File formats.

Binary payloads are little-endian and row-major with a JSON sidecar at
``<path>.json`` describing them:

* IQ capture: float32 interleaved I, Q; sidecar ``kind = "iq"``.
* Spectrogram: float32 ``[rows, cols]``; sidecar ``kind = "spectrogram"``.
* Occupancy grid: uint8 ``[rows, cols]``; sidecar ``kind = "occupancy"``.

Every writer goes through a temporary file and an atomic rename.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .detection import OccupancyGrid
from .frames import Frame, FrameSet
from .spectrogram import IQRecording, Spectrogram, dbm_to_watts

LE_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def atomic_write(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj):
    return atomic_write(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_header(path) -> dict:
    side = sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing metadata file {side.name}")
    header = read_json(side)
    if "kind" not in header:
        raise FormatError(f"{side}: no 'kind' field")
    return header


def _read_payload(path, dtype, count):
    data = np.fromfile(path, dtype=dtype)
    if data.size != count:
        raise FormatError(f"{path}: expected {count} values, found {data.size}")
    return data


def write_iq(path, rec: IQRecording):
    buf = np.empty(2 * rec.total_samples, dtype=LE_F32)
    buf[0::2] = rec.samples.real
    buf[1::2] = rec.samples.imag
    atomic_write(path, buf.tobytes())
    write_json(sidecar(path), {"kind": "iq", "sample_rate": rec.sample_rate,
                               "center_frequency": rec.center_frequency,
                               "samples": rec.total_samples, "format": "cf32_le"})


def read_iq(path) -> IQRecording:
    h = read_header(path)
    if h["kind"] != "iq":
        raise FormatError(f"{path}: not an IQ capture")
    raw = _read_payload(path, LE_F32, 2 * int(h["samples"]))
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2]
    return IQRecording(samples, float(h["sample_rate"]), float(h.get("center_frequency", 0.0)))


def write_spectrogram(path, spec: Spectrogram):
    atomic_write(path, np.ascontiguousarray(spec.values, dtype=LE_F32).tobytes())
    rows, cols = spec.shape
    write_json(sidecar(path), {
        "kind": "spectrogram", "rows": rows, "cols": cols, "unit": spec.unit,
        "t0": float(spec.time_axis[0]) if rows else 0.0, "dt": spec.dt,
        "freq_axis": [float(f) for f in spec.freq_axis], "time_span": spec.time_span,
        "format": "f32_le",
    })


def read_spectrogram(path) -> Spectrogram:
    h = read_header(path)
    if h["kind"] != "spectrogram":
        raise FormatError(f"{path}: not a spectrogram")
    rows, cols = int(h["rows"]), int(h["cols"])
    values = _read_payload(path, LE_F32, rows * cols).astype(np.float64).reshape(rows, cols)
    time_axis = float(h["t0"]) + np.arange(rows) * float(h["dt"])
    freq_axis = np.asarray(h["freq_axis"], dtype=float)
    df = float(freq_axis[1] - freq_axis[0]) if cols > 1 else 0.0
    return Spectrogram(values, time_axis, freq_axis, float(h["time_span"]),
                       unit=h.get("unit", "W/Hz"), meta={"dt": float(h["dt"]), "df": df})


def write_grid(path, grid: OccupancyGrid, time_span: float | None = None):
    atomic_write(path, np.ascontiguousarray(grid.bits, dtype=np.uint8).tobytes())
    rows, cols = grid.shape
    write_json(sidecar(path), {
        "kind": "occupancy", "grid_kind": grid.kind, "rows": rows, "cols": cols,
        "threshold_w_per_hz": grid.threshold, "t0": float(grid.time_axis[0]) if rows else 0.0,
        "dt": grid.dt, "f0": float(grid.freq_axis[0]) if cols else 0.0, "df": grid.df,
        "time_span": time_span if time_span is not None else grid.meta.get("time_span"),
        "format": "u8",
    })


def read_grid(path) -> OccupancyGrid:
    h = read_header(path)
    if h["kind"] != "occupancy":
        raise FormatError(f"{path}: not an occupancy grid")
    rows, cols = int(h["rows"]), int(h["cols"])
    bits = _read_payload(path, np.uint8, rows * cols).reshape(rows, cols)
    t = float(h["t0"]) + np.arange(rows) * float(h["dt"])
    f = float(h["f0"]) + np.arange(cols) * float(h["df"])
    meta = {"dt": float(h["dt"]), "df": float(h["df"])}
    if h.get("time_span") is not None:
        meta["time_span"] = float(h["time_span"])
    return OccupancyGrid(bits, t, f, threshold=float(h["threshold_w_per_hz"]),
                         kind=h["grid_kind"], meta=meta)


def write_spectrogram_csv(path, spec: Spectrogram):
    """Small grids only: header row of frequencies, then ``time, values...``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s"] + [repr(float(f)) for f in spec.freq_axis])
    for t, row in zip(spec.time_axis, spec.values):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    atomic_write(path, buf.getvalue())


def read_spectrogram_csv(path, unit: str = "W/Hz") -> Spectrogram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError(f"{path}: no data rows")
    freq = np.array([float(v) for v in rows[0][1:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    t = data[:, 0]
    span = float(t[-1] - t[0] + (t[1] - t[0] if len(t) > 1 else 0.0))
    return Spectrogram(data[:, 1:], t, freq, span, unit=unit)


def read_noise_csv(path) -> np.ndarray:
    """PSD samples in dBm/Hz, one or more numeric columns; returns linear W/Hz."""
    values = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            for cell in row:
                try:
                    values.append(float(cell))
                except ValueError:
                    continue
    if not values:
        raise FormatError(f"{path}: no numeric samples")
    return dbm_to_watts(np.array(values))


def read_capture(path, spectrogram_config=None):
    """Load a spectrogram from any supported capture, computing it from IQ if needed."""
    from .spectrogram import compute_spectrogram

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".csv":
        return read_spectrogram_csv(path)
    kind = read_header(path)["kind"]
    if kind == "spectrogram":
        return read_spectrogram(path)
    if kind == "iq":
        return compute_spectrogram(read_iq(path), spectrogram_config)
    raise FormatError(f"{path}: cannot read a capture of kind {kind!r}")


FRAME_FIELDS = ["cluster_id", "t_center_s", "f_center_hz", "toa_s", "bandwidth_hz",
                "point_count", "row0", "row1", "col0", "col1"]


def frames_csv(frames) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, FRAME_FIELDS, lineterminator="\n")
    w.writeheader()
    for f in frames:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in f.as_dict().items()})
    return buf.getvalue()


def frameset_to_dict(fs: FrameSet) -> dict:
    return {"dt": fs.dt, "df": fs.df, "time_span": fs.time_span, "shape": list(fs.shape),
            "t0": fs.t0, "f0": fs.f0, "frames": [f.as_dict() for f in fs.frames],
            "overlaps": [list(o) for o in fs.overlaps], "dropped": list(fs.dropped)}


def frameset_from_dict(d: dict) -> FrameSet:
    frames = [Frame(cluster_id=int(f["cluster_id"]), row0=int(f["row0"]), row1=int(f["row1"]),
                    col0=int(f["col0"]), col1=int(f["col1"]), t_center=float(f["t_center_s"]),
                    f_center=float(f["f_center_hz"]), toa=float(f["toa_s"]),
                    bandwidth=float(f["bandwidth_hz"]), point_count=int(f["point_count"]))
              for f in d["frames"]]
    return FrameSet(frames=frames, dt=float(d["dt"]), df=float(d["df"]),
                    time_span=float(d["time_span"]), shape=tuple(d["shape"]),
                    t0=float(d.get("t0", 0.0)), f0=float(d.get("f0", 0.0)),
                    overlaps=[tuple(o) for o in d.get("overlaps", [])],
                    dropped=list(d.get("dropped", [])))


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()
