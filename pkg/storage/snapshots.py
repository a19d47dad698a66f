import csv
import json
import logging
import re
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from storage.models import FORMAT_VERSION, PARAM_ALIASES, PARAM_NAMES, SnapshotHeader
from viscolab.exceptions import DomainError, FormatError
from viscolab.services.constitutive import ModelParams
from viscolab.services.diagnostics import EnergyLedger, PositivityReport, RelEntropyReport
from viscolab.services.dynamics import State, StepReport
from viscolab.services.fields import FIELD_TYPES, Field, Grid, field_type_for

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

STATE_FIELDS = ("rho", "u", "eta", "T")
HEADER_KEYS = {f.name for f in fields(SnapshotHeader)}
_STEP_PATTERN = re.compile(r"^state_(\d+)\.json$")

# допустимые JSON-типы значений заголовка
_HEADER_TYPES = {
    "dim": int, "n": int, "component_count": int, "format_version": int,
    "length": (int, float), "time": (int, float),
    "field_name": str, "kind": str, "byte_order": str,
}


# ==================== СНАПШОТЫ ====================

def header_for(field: Field, time: float = 0.0, name: Optional[str] = None) -> SnapshotHeader:
    grid = field.grid
    return SnapshotHeader(
        dim=grid.dim,
        n=grid.n,
        length=grid.length,
        field_name=name or field.name,
        component_count=field.component_count(grid),
        kind=field.rank,
        time=float(time),
    )


def write_snapshot(field: Field, header: SnapshotHeader, path: PathLike) -> Path:
    """
    Пишет `<path>` (сырые little-endian float64, компоненты первыми)
    и заголовок `<path>.json` рядом.
    """
    path = Path(path)
    grid = field.grid
    if (header.dim, header.n, header.component_count) != (grid.dim, grid.n, field.component_count(grid)):
        raise FormatError(f"header {header} does not describe field {field!r}")
    if header.byte_order != "little":
        raise FormatError(f"unsupported byte order {header.byte_order!r}")

    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    if len(payload) != header.payload_bytes:
        raise FormatError(f"payload of {len(payload)} bytes, header expects {header.payload_bytes}")

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    path.with_suffix(".json").write_text(json.dumps(header.to_dict(), indent=2), encoding="utf-8")
    return path


def read_header(path: PathLike) -> SnapshotHeader:
    sidecar = Path(path).with_suffix(".json")
    try:
        raw = json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read header {sidecar}: {e}") from e
    if not isinstance(raw, dict) or set(raw) != HEADER_KEYS:
        raise FormatError(f"header {sidecar} must have exactly the keys {sorted(HEADER_KEYS)}")
    for key, expected in _HEADER_TYPES.items():
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, expected):
            raise FormatError(f"header {sidecar}: {key} has invalid value {value!r}")
    header = SnapshotHeader(**raw)
    if header.format_version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.format_version}")
    if header.byte_order != "little":
        raise FormatError(f"byte order {header.byte_order!r} is not supported (no byte-swap in v{FORMAT_VERSION})")
    return header


def read_snapshot(path: PathLike) -> Field:
    path = Path(path)
    header = read_header(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read payload {path}: {e}") from e
    if len(payload) != header.payload_bytes:
        raise FormatError(f"payload {path} has {len(payload)} bytes, header expects {header.payload_bytes}")

    try:
        grid = Grid(dim=header.dim, n=header.n, length=header.length)
    except DomainError as e:
        raise FormatError(f"header of {path} describes an invalid grid: {e}") from e
    cls = FIELD_TYPES.get(header.kind) or field_type_for(grid, header.component_count)
    if cls.component_count(grid) != header.component_count:
        raise FormatError(f"kind {header.kind!r} does not have {header.component_count} components")
    data = np.frombuffer(payload, dtype="<f8").reshape(cls.component_shape(grid) + grid.shape)
    return cls(grid, data.astype(float), name=header.field_name)


# ==================== НАБОРЫ СНАПШОТОВ ====================

def snapshot_path(directory: PathLike, name: str, step: int) -> Path:
    return Path(directory) / f"{name}_{step:06d}.bin"


def write_state(state: State, directory: PathLike, step: int) -> Path:
    """Набор снапшотов шага: по файлу на поле и манифест state_<step>.json"""
    directory = Path(directory)
    for name in STATE_FIELDS:
        field = getattr(state, name)
        write_snapshot(field, header_for(field, state.time, name), snapshot_path(directory, name, step))

    params = {PARAM_NAMES.get(k, k): v for k, v in asdict(state.params).items()}
    manifest = directory / f"state_{step:06d}.json"
    manifest.write_text(
        json.dumps({"step": step, "time": state.time, "params": params, "fields": list(STATE_FIELDS)}, indent=2),
        encoding="utf-8",
    )
    logger.info(f"Snapshot set for step {step} written to {directory}")
    return manifest


def available_steps(directory: PathLike) -> List[int]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    steps = [int(m.group(1)) for p in directory.iterdir() if (m := _STEP_PATTERN.match(p.name))]
    return sorted(steps)


def read_state(directory: PathLike, step: Optional[int] = None) -> State:
    """Читает набор снапшотов (по умолчанию — последний шаг)"""
    directory = Path(directory)
    steps = available_steps(directory)
    if not steps:
        raise FormatError(f"no snapshot sets in {directory}")
    if step is None:
        step = steps[-1]
    elif step not in steps:
        raise FormatError(f"no snapshot set for step {step} in {directory}")

    try:
        manifest = json.loads((directory / f"state_{step:06d}.json").read_text(encoding="utf-8"))
        params = ModelParams(**{PARAM_ALIASES.get(k, k): v for k, v in manifest["params"].items()})
        time = float(manifest["time"])
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise FormatError(f"broken manifest for step {step} in {directory}: {e}") from e

    loaded = {name: read_snapshot(snapshot_path(directory, name, step)) for name in STATE_FIELDS}
    grids = {f.grid for f in loaded.values()}
    if len(grids) != 1:
        raise FormatError(f"snapshot set for step {step} mixes grids {grids}")
    return State(time=time, params=params, **loaded)


# ==================== ВРЕМЕННОЙ РЯД ====================

def timeseries_columns(twin: bool = False) -> List[str]:
    columns = ["step", "time"]
    columns += [c for c in EnergyLedger.columns() if c != "time"]
    columns += PositivityReport.columns()
    columns += [f.name for f in fields(StepReport)]
    if twin:
        columns += RelEntropyReport.columns()
    return columns


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


class TimeSeriesWriter:
    """CSV по строке на точку вывода; каждая строка сразу сбрасывается на диск"""

    def __init__(self, path: PathLike, columns: Iterable[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self.rows = 0
        self._file = None
        self._writer = None

    def __enter__(self) -> "TimeSeriesWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.columns)
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def write_row(self, row: Dict[str, object]):
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise FormatError(f"time-series row lacks columns {missing}")
        self._writer.writerow([_format(row[c]) for c in self.columns])
        self._file.flush()
        self.rows += 1

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None
            logger.info(f"Time series closed: {self.path} ({self.rows} rows)")


def read_timeseries(path: PathLike) -> Dict[str, np.ndarray]:
    """Колонки CSV как массивы float"""
    with Path(path).open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path} is empty")
        rows = [[float(x) for x in row] for row in reader if row]
    if not rows:
        return {c: np.empty(0) for c in header}
    data = np.array(rows, dtype=float)
    return {c: data[:, i] for i, c in enumerate(header)}
