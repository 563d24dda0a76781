"""File formats, run configuration, and manifests.

CSV schemas (all comma-separated, header row required, floats written with
repr so values round-trip bit-exactly):

* dataset.csv  pixel_id, parcel_id, region_id, step, doy, ndvi,
               sig_vv_db, sig_vh_db, coh_vv, coh_vh
               (ndvi empty = absent; derived radar features are computed on
               load, never stored)
* labels.csv   parcel_id, event_doy (empty event_doy = labeled unmown)
* masks.csv    mask_id, region_id, bit_0..bit_{T-1}
* events.csv   parcel_id, event_doy, score (empty pair = no events found)

Model files are a magic line, a one-line JSON header (architecture, stats,
grid, parameter names/shapes/offsets) and raw little-endian float32 blobs.
All writes go through a temp-file-then-rename so readers never observe a
partial file.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .cloudsim import MaskPool, SynthConfig
from .core import (
    CloudMask,
    Dataset,
    ParcelLabel,
    PixelSeries,
    TemporalGrid,
)
from .detect import Event, EventSet, Mda1Params, Mda2Params
from .features import derive_channels
from .preprocess import DensityCriteria, OutlierParams
from .sfmodel import NormStats, SfArchitecture, SfModel, SfNet, TrainConfig

VERSION = "0.1.0"
MANIFEST_TOOL = "gapfuse"

MODEL_MAGIC = b"GAPFUSE-MODEL-V1\n"

DATASET_HEADER = (
    "pixel_id", "parcel_id", "region_id", "step", "doy",
    "ndvi", "sig_vv_db", "sig_vh_db", "coh_vv", "coh_vh",
)
LABELS_HEADER = ("parcel_id", "event_doy")
EVENTS_HEADER = ("parcel_id", "event_doy", "score")

DATASET_FILE = "dataset.csv"
LABELS_FILE = "labels.csv"


class FileFormatError(ValueError):
    """Schema violation carrying file/row/column context."""

    def __init__(self, path, message: str, row: int | None = None, column: str | None = None):
        where = str(path)
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.row = row
        self.column = column


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so the target is never
    observed half-written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_int(path, row: int, column: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise FileFormatError(path, f"not an integer: {raw!r}", row, column) from None


def _parse_float(path, row: int, column: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise FileFormatError(path, f"not a number: {raw!r}", row, column) from None
    if not np.isfinite(v):
        raise FileFormatError(path, f"non-finite value: {raw!r}", row, column)
    return v


def _check_header(path, got: list[str] | None, want: tuple[str, ...]) -> None:
    if got is None:
        raise FileFormatError(path, "empty file, expected a header row")
    if tuple(got) != want:
        raise FileFormatError(path, f"bad header {got!r}, expected {list(want)!r}", row=1)


_RAW_TO_CHANNEL = {
    "sig_vv_db": "sigma0_vv_db",
    "sig_vh_db": "sigma0_vh_db",
    "coh_vv": "coh_vv",
    "coh_vh": "coh_vh",
}


def write_dataset(dataset: Dataset, path) -> None:
    """Write `dataset.csv` and `labels.csv` under the directory `path`.

    Rows ordered by (pixel_id, step); only the four measured radar columns
    are stored, the derived features being recomputed on read."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    for px in sorted(dataset.pixels, key=lambda p: p.pixel_id):
        vv = px.sar["sigma0_vv_db"]
        vh = px.sar["sigma0_vh_db"]
        cvv = px.sar["coh_vv"]
        cvh = px.sar["coh_vh"]
        doys = dataset.grid.doys
        for t in range(px.length):
            ndvi = "" if np.isnan(px.ndvi[t]) else _fmt(px.ndvi[t])
            w.writerow([
                px.pixel_id, px.parcel_id, px.region_id, t, int(doys[t]),
                ndvi, _fmt(vv[t]), _fmt(vh[t]), _fmt(cvv[t]), _fmt(cvh[t]),
            ])
    atomic_write_text(path / DATASET_FILE, buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    for pid in sorted(dataset.labels):
        doys = dataset.labels[pid].event_doys
        if not doys:
            w.writerow([pid, ""])
        for d in doys:
            w.writerow([pid, d])
    atomic_write_text(path / LABELS_FILE, buf.getvalue())


def _infer_grid(path, step_doys: dict[int, int]) -> TemporalGrid:
    steps = sorted(step_doys)
    if steps != list(range(len(steps))):
        missing = sorted(set(range(max(steps) + 1)) - set(steps))
        raise FileFormatError(path, f"steps are not contiguous from 0; missing {missing[:5]}")
    doys = [step_doys[s] for s in steps]
    if len(doys) == 1:
        return TemporalGrid(start_doy=doys[0], step_days=6, length=1)
    diffs = {doys[i + 1] - doys[i] for i in range(len(doys) - 1)}
    if len(diffs) != 1 or min(diffs) <= 0:
        raise FileFormatError(path, f"day-of-year stamps are not evenly spaced: {sorted(diffs)}")
    return TemporalGrid(start_doy=doys[0], step_days=diffs.pop(), length=len(doys))


def read_dataset(path) -> Dataset:
    """Read a dataset directory written by `write_dataset`."""
    path = Path(path)
    csv_path = path / DATASET_FILE
    if not csv_path.exists():
        raise FileFormatError(csv_path, "file not found")
    rows_by_pixel: dict[int, dict[int, tuple]] = {}
    meta: dict[int, tuple[int, int]] = {}
    step_doys: dict[int, int] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(csv_path, header, DATASET_HEADER)
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(DATASET_HEADER):
                raise FileFormatError(csv_path, f"expected {len(DATASET_HEADER)} fields, got {len(row)}", rownum)
            pid = _parse_int(csv_path, rownum, "pixel_id", row[0])
            parcel = _parse_int(csv_path, rownum, "parcel_id", row[1])
            region = _parse_int(csv_path, rownum, "region_id", row[2])
            step = _parse_int(csv_path, rownum, "step", row[3])
            doy = _parse_int(csv_path, rownum, "doy", row[4])
            if step < 0:
                raise FileFormatError(csv_path, "negative step", rownum, "step")
            if step in step_doys:
                if step_doys[step] != doy:
                    raise FileFormatError(
                        csv_path, f"step {step} maps to both doy {step_doys[step]} and {doy}", rownum, "doy")
            else:
                step_doys[step] = doy
            if row[5] == "":
                ndvi = np.nan
            else:
                ndvi = _parse_float(csv_path, rownum, "ndvi", row[5])
                if not -1.0 <= ndvi <= 1.0:
                    raise FileFormatError(csv_path, f"ndvi {ndvi} outside [-1, 1]", rownum, "ndvi")
            vv = _parse_float(csv_path, rownum, "sig_vv_db", row[6])
            vh = _parse_float(csv_path, rownum, "sig_vh_db", row[7])
            cvv = _parse_float(csv_path, rownum, "coh_vv", row[8])
            cvh = _parse_float(csv_path, rownum, "coh_vh", row[9])
            for col, v in (("coh_vv", cvv), ("coh_vh", cvh)):
                if not 0.0 <= v <= 1.0:
                    raise FileFormatError(csv_path, f"coherence {v} outside [0, 1]", rownum, col)
            if pid in meta and meta[pid] != (parcel, region):
                raise FileFormatError(
                    csv_path, f"pixel {pid} changes parcel/region mid-file", rownum, "parcel_id")
            meta[pid] = (parcel, region)
            per_pixel = rows_by_pixel.setdefault(pid, {})
            if step in per_pixel:
                raise FileFormatError(csv_path, f"duplicate (pixel {pid}, step {step})", rownum, "step")
            per_pixel[step] = (ndvi, vv, vh, cvv, cvh)
    if not rows_by_pixel:
        raise FileFormatError(csv_path, "no data rows")
    grid = _infer_grid(csv_path, step_doys)
    pixels = []
    for pid in sorted(rows_by_pixel):
        per_pixel = rows_by_pixel[pid]
        if sorted(per_pixel) != list(range(grid.length)):
            raise FileFormatError(csv_path, f"pixel {pid} does not cover every step of the grid")
        cols = np.asarray([per_pixel[s] for s in range(grid.length)], dtype=np.float64)
        sar = derive_channels(cols[:, 1], cols[:, 2], cols[:, 3], cols[:, 4])
        parcel, region = meta[pid]
        pixels.append(PixelSeries(pid, parcel, region, cols[:, 0], sar))
    labels = read_labels(path / LABELS_FILE) if (path / LABELS_FILE).exists() else {}
    return Dataset(grid=grid, pixels=tuple(pixels), labels=labels)


def read_labels(path) -> dict[int, ParcelLabel]:
    path = Path(path)
    doys: dict[int, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(path, header, LABELS_HEADER)
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise FileFormatError(path, f"expected 2 fields, got {len(row)}", rownum)
            pid = _parse_int(path, rownum, "parcel_id", row[0])
            bucket = doys.setdefault(pid, [])
            if row[1] != "":
                bucket.append(_parse_int(path, rownum, "event_doy", row[1]))
    return {pid: ParcelLabel(pid, tuple(v)) for pid, v in doys.items()}


def write_mask_pools(pools: Mapping[int, MaskPool], path) -> None:
    """All pools in one CSV; T taken from the masks (must agree)."""
    all_masks = [m for r in sorted(pools) for m in pools[r].masks]
    if not all_masks:
        raise ValueError("no masks to write")
    t = all_masks[0].bits.shape[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mask_id", "region_id"] + [f"bit_{i}" for i in range(t)])
    for m in sorted(all_masks, key=lambda m: m.mask_id):
        w.writerow([m.mask_id, m.region_id] + [int(b) for b in m.bits])
    atomic_write_text(path, buf.getvalue())


def read_mask_pools(path) -> dict[int, MaskPool]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[:2] != ["mask_id", "region_id"]:
            raise FileFormatError(path, f"bad header {header!r}", row=1)
        t = len(header) - 2
        if header[2:] != [f"bit_{i}" for i in range(t)]:
            raise FileFormatError(path, "bit columns must be bit_0..bit_{T-1} in order", row=1)
        by_region: dict[int, list[CloudMask]] = {}
        seen: set[int] = set()
        for rownum, row in enumerate(reader, start=2):
            if len(row) != t + 2:
                raise FileFormatError(path, f"expected {t + 2} fields, got {len(row)}", rownum)
            mid = _parse_int(path, rownum, "mask_id", row[0])
            region = _parse_int(path, rownum, "region_id", row[1])
            if mid in seen:
                raise FileFormatError(path, f"duplicate mask_id {mid}", rownum, "mask_id")
            seen.add(mid)
            bits = np.empty(t, dtype=bool)
            for i, raw in enumerate(row[2:]):
                if raw not in ("0", "1"):
                    raise FileFormatError(path, f"bit must be 0 or 1, got {raw!r}", rownum, f"bit_{i}")
                bits[i] = raw == "1"
            by_region.setdefault(region, []).append(CloudMask(mid, region, bits))
    if not by_region:
        raise FileFormatError(path, "no mask rows")
    return {r: MaskPool(r, tuple(ms)) for r, ms in sorted(by_region.items())}


def write_events(events: Iterable[EventSet], path) -> None:
    """One row per event; parcels with none get a single empty row so the
    evaluated-but-unmown population survives the round trip."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENTS_HEADER)
    for es in sorted(events, key=lambda e: e.parcel_id):
        if not es.events:
            w.writerow([es.parcel_id, "", ""])
        for ev in es.events:
            w.writerow([es.parcel_id, ev.doy, _fmt(ev.score)])
    atomic_write_text(path, buf.getvalue())


def read_events(path) -> dict[int, EventSet]:
    path = Path(path)
    collected: dict[int, list[Event]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(path, header, EVENTS_HEADER)
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FileFormatError(path, f"expected 3 fields, got {len(row)}", rownum)
            pid = _parse_int(path, rownum, "parcel_id", row[0])
            bucket = collected.setdefault(pid, [])
            if (row[1] == "") != (row[2] == ""):
                raise FileFormatError(path, "event_doy and score must be both empty or both set", rownum)
            if row[1] != "":
                doy = _parse_int(path, rownum, "event_doy", row[1])
                score = _parse_float(path, rownum, "score", row[2])
                bucket.append(Event(doy=doy, score=score))
    return {pid: EventSet(pid, tuple(evs)) for pid, evs in collected.items()}


def save_model(model: SfModel, path) -> None:
    """Self-describing binary: magic, one-line JSON header, float32 blobs."""
    params = [(name, p) for name, p, _ in model.net.params()]
    entries = []
    offset = 0
    blobs = []
    for name, p in params:
        blob = np.ascontiguousarray(p, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": 1,
        "dtype": "<f4",
        "arch": {
            "channels": list(model.arch.channels),
            "conv_filters": list(model.arch.conv_filters),
            "kernel": model.arch.kernel,
            "pool": model.arch.pool,
            "branch_dense": list(model.arch.branch_dense),
            "lstm_hidden": model.arch.lstm_hidden,
            "head": model.arch.head,
        },
        "stats": {
            "channels": list(model.stats.channels),
            "mean": model.stats.mean.tolist(),
            "sd": model.stats.sd.tolist(),
        },
        "grid": {
            "start_doy": model.grid.start_doy,
            "step_days": model.grid.step_days,
            "length": model.grid.length,
        },
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    atomic_write_bytes(path, MODEL_MAGIC + head + b"".join(blobs))


def load_model(path) -> SfModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MODEL_MAGIC:
            raise FileFormatError(path, f"bad magic {magic!r}")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FileFormatError(path, f"unreadable header: {e}") from None
        body = fh.read()
    if header.get("dtype") != "<f4":
        raise FileFormatError(path, f"unsupported dtype {header.get('dtype')!r}")
    a = header["arch"]
    arch = SfArchitecture(
        channels=tuple(a["channels"]),
        conv_filters=tuple(a["conv_filters"]),
        kernel=a["kernel"],
        pool=a["pool"],
        branch_dense=tuple(a["branch_dense"]),
        lstm_hidden=a["lstm_hidden"],
        head=a["head"],
    )
    s = header["stats"]
    stats = NormStats(
        channels=tuple(s["channels"]),
        mean=np.asarray(s["mean"], dtype=np.float64),
        sd=np.asarray(s["sd"], dtype=np.float64),
    )
    g = header["grid"]
    grid = TemporalGrid(start_doy=g["start_doy"], step_days=g["step_days"], length=g["length"])
    net = SfNet(arch, np.random.default_rng(0))
    state: dict[str, np.ndarray] = {}
    for e in header["params"]:
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if hi > len(body):
            raise FileFormatError(path, f"parameter {e['name']} extends past end of file")
        arr = np.frombuffer(body[lo:hi], dtype="<f4").reshape(e["shape"])
        state[e["name"]] = arr.astype(np.float32)
    try:
        net.set_state(state)
    except ValueError as e:
        raise FileFormatError(path, str(e)) from None
    return SfModel(arch=arch, stats=stats, grid=grid, net=net)


@dataclass(frozen=True)
class PipelineParams:
    """Cross-command tunables that belong to no single algorithm."""

    fill_method: str = "sf"
    algorithm: str = "mda1"
    tolerance_days: int = 12
    cloud_filter_threshold: float = 0.15
    decode_threshold: float = 0.5
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tolerance_days < 0:
            raise ValueError("tolerance_days must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


_SECTIONS: dict[str, type] = {
    "outlier": OutlierParams,
    "density": DensityCriteria,
    "train": TrainConfig,
    "synth": SynthConfig,
    "mda1": Mda1Params,
    "mda2": Mda2Params,
    "pipeline": PipelineParams,
}


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, grouped by stage.

    Unknown sections or keys are rejected; values can be overridden by
    GAPFUSE_<SECTION>_<FIELD> environment variables (JSON-parsed when
    possible, e.g. GAPFUSE_TRAIN_MAX_EPOCHS=5)."""

    outlier: OutlierParams = OutlierParams()
    density: DensityCriteria = DensityCriteria()
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()
    mda1: Mda1Params = Mda1Params()
    mda2: Mda2Params = Mda2Params()
    pipeline: PipelineParams = PipelineParams()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in _SECTIONS:
            section = getattr(self, name)
            sec: dict[str, Any] = {}
            for f in fields(section):
                sec[f.name] = _to_jsonable(getattr(section, f.name))
            out[name] = sec
        return out

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, cls in _SECTIONS.items():
            if name in d:
                kwargs[name] = _section_from_dict(cls, d[name], name)
        return RunConfig(**kwargs)

    def replace_section(self, name: str, **updates) -> "RunConfig":
        section = dataclasses.replace(getattr(self, name), **updates)
        return dataclasses.replace(self, **{name: section})


def _to_jsonable(v: Any) -> Any:
    if isinstance(v, TemporalGrid):
        return {"start_doy": v.start_doy, "step_days": v.step_days, "length": v.length}
    if isinstance(v, tuple):
        return [_to_jsonable(x) for x in v]
    if isinstance(v, Mapping):
        return {str(k): _to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _coerce(value: Any, typestr: str, where: str) -> Any:
    t = typestr.replace(" ", "")
    if t == "TemporalGrid":
        if not isinstance(value, Mapping):
            raise ValueError(f"{where}: expected an object with start_doy/step_days/length")
        unknown = set(value) - {"start_doy", "step_days", "length"}
        if unknown:
            raise ValueError(f"{where}: unknown grid keys {sorted(unknown)}")
        return TemporalGrid(**{k: int(v) for k, v in value.items()})
    if t.startswith("Mapping[int") or t.startswith("dict[int"):
        if not isinstance(value, Mapping):
            raise ValueError(f"{where}: expected an object")
        return {int(k): float(v) for k, v in value.items()}
    if t.startswith("tuple["):
        if isinstance(value, str) or not isinstance(value, Iterable):
            raise ValueError(f"{where}: expected a list")
        inner = t[len("tuple["):-1].split(",")[0]
        elem = {"int": int, "float": float, "str": str}.get(inner)
        if elem is None:
            raise ValueError(f"{where}: unsupported tuple element type {inner!r}")
        return tuple(elem(x) for x in value)
    if t == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(f"{where}: expected a boolean, got {value!r}")
    if t == "int":
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if t == "float":
        if isinstance(value, bool):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if t == "str":
        return str(value)
    raise ValueError(f"{where}: unsupported config field type {typestr!r}")


def _section_from_dict(cls: type, d: Mapping[str, Any], section: str) -> Any:
    if not isinstance(d, Mapping):
        raise ValueError(f"config section {section!r} must be an object")
    by_name = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(by_name)
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in config section {section!r}")
    kwargs = {}
    for k, v in d.items():
        kwargs[k] = _coerce(v, str(by_name[k].type), f"{section}.{k}")
    return cls(**kwargs)


ENV_PREFIX = "GAPFUSE_"


def _env_overrides(env: Mapping[str, str]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        section, _, fieldname = rest.partition("_")
        if section not in _SECTIONS or not fieldname:
            raise ValueError(f"unrecognized override variable {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.setdefault(section, {})[fieldname] = value
    return out


def load_config(path=None, env: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then the JSON config file, then environment overrides."""
    merged: dict[str, dict[str, Any]] = {}
    if path is not None:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise FileFormatError(path, f"not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise FileFormatError(path, "config must be a JSON object")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        for sec, vals in data.items():
            if not isinstance(vals, Mapping):
                raise ValueError(f"config section {sec!r} must be an object")
            merged.setdefault(sec, {}).update(vals)
    if env is None:
        env = os.environ
    for sec, vals in _env_overrides(env).items():
        merged.setdefault(sec, {}).update(vals)
    return RunConfig.from_dict(merged)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def hash_tree(path) -> dict[str, str]:
    """Relative-path -> digest for a file or every file under a directory."""
    path = Path(path)
    if path.is_file():
        return {path.name: sha256_file(path)}
    out = {}
    for p in sorted(path.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(path))] = sha256_file(p)
    return out


def write_json(path, obj: Any) -> None:
    """Canonical JSON: sorted keys, 2-space indent, trailing newline."""
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_table_csv(path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    """Plot-ready companion table for a JSON report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def write_manifest(
    path,
    command: str,
    argv: list[str],
    config: RunConfig,
    inputs: Mapping[str, str],
    outputs: Mapping[str, str],
) -> None:
    """Everything needed to replay a run and check its outputs."""
    manifest = {
        "tool": MANIFEST_TOOL,
        "version": VERSION,
        "command": command,
        "argv": list(argv),
        "config": config.to_dict(),
        "seed": config.pipeline.seed,
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
    }
    write_json(path, manifest)


def read_manifest(path) -> dict[str, Any]:
    data = read_json(path)
    for key in ("tool", "version", "command", "config"):
        if key not in data:
            raise FileFormatError(path, f"manifest missing key {key!r}")
    if data["tool"] != MANIFEST_TOOL:
        raise FileFormatError(path, f"manifest written by {data['tool']!r}, not {MANIFEST_TOOL!r}")
    return data
