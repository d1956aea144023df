"""
ThermoCH - Run artifacts.

Layout of a run directory:
    config.txt            flat config the run was started with
    balances.csv          one row per state (header first)
    snapshots/            step_000010_u.txt, step_000010_theta.txt, step_000010_chi.txt
    monitor_report.json   MonitorReport
    weak_forms.json       WeakFormReport

Floats are written with repr(), so re-reading reproduces them bit-exactly.
Snapshot files carry a `# key = value` header block followed by one value
per line in row-major order.
"""
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union
import csv
import logging
import re

import numpy as np
from pydantic import BaseModel

from ..grid import Grid, GridError
from ..schemas import MonitorReport, StepRow

logger = logging.getLogger("thermoch.output")

PathLike = Union[str, Path]

BALANCE_COLUMNS = ["t", "dt", "mass", "energy", "entropy", "production", "min_theta", "newton_iters"]
_SNAPSHOT_NAME = re.compile(r"^step_(\d{6,})_([a-z]+)\.txt$")


class OutputError(Exception):
    """Custom exception for artifact I/O failures."""

    def __init__(self, message: str, path: PathLike):
        super().__init__(f"{message}: {path}")
        self.path = Path(path)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create directory ({exc.strerror})", path) from exc
    return path


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write file ({exc.strerror})", path) from exc
    return path


def balance_values(row: StepRow) -> List:
    return [row.t, row.dt, row.mass, row.internal_energy, row.total_entropy,
            row.entropy_production_rate, row.min_theta, row.newton_iters]


class BalanceWriter:
    """
    Streams balance rows to CSV, flushing after each row.

    Usage:
        with BalanceWriter(path) as writer:
            writer.write(row)
    """

    def __init__(self, path: PathLike):
        self.path = Path(path)
        try:
            self._handle = self.path.open("w", encoding="utf-8", newline="")
        except OSError as exc:
            raise OutputError(f"cannot open balance file ({exc.strerror})", self.path) from exc
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(BALANCE_COLUMNS)

    def write(self, row: StepRow) -> None:
        try:
            self._writer.writerow([_fmt(v) for v in balance_values(row)])
            self._handle.flush()
        except OSError as exc:
            raise OutputError(f"cannot write balance row ({exc.strerror})", self.path) from exc

    def close(self) -> None:
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_balance_series(path: PathLike) -> List[Dict[str, float]]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames != BALANCE_COLUMNS:
                raise OutputError(f"unexpected balance header {reader.fieldnames}", path)
            return [
                {k: (int(v) if k == "newton_iters" else float(v)) for k, v in record.items()}
                for record in reader
            ]
    except OSError as exc:
        raise OutputError(f"cannot read balance file ({exc.strerror})", path) from exc


def write_table(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Generic CSV table with a header row."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    except OSError as exc:
        raise OutputError(f"cannot write table ({exc.strerror})", path) from exc
    logger.info("Wrote %s", path)
    return path


def read_table(path: PathLike) -> List[Dict[str, str]]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise OutputError(f"cannot read table ({exc.strerror})", path) from exc


# --- Snapshots ---

def snapshot_path(directory: PathLike, step: int, field: str) -> Path:
    return Path(directory) / f"step_{step:06d}_{field}.txt"


def write_snapshot(directory: PathLike, grid: Grid, t: float, step: int,
                   field: str, values: np.ndarray) -> Path:
    values = grid.check_field(values)
    header = [
        f"# dim = {grid.dim}",
        f"# n = {','.join(str(k) for k in grid.n)}",
        f"# length = {','.join(repr(x) for x in grid.length)}",
        f"# time = {float(t)!r}",
        f"# step = {step}",
        f"# field = {field}",
    ]
    body = [repr(float(v)) for v in values.ravel()]
    return write_text(snapshot_path(directory, step, field), "\n".join(header + body) + "\n")


def read_snapshot(path: PathLike) -> Tuple[Dict[str, str], Grid, np.ndarray]:
    """Return (header, grid, field) of one snapshot file."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot ({exc.strerror})", path) from exc
    header: Dict[str, str] = {}
    values: List[float] = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            values.append(float(line))
    try:
        grid = Grid(
            n=tuple(int(k) for k in header["n"].split(",")),
            length=tuple(float(x) for x in header["length"].split(",")),
        )
        field = grid.check_field(np.array(values))
    except (KeyError, ValueError, GridError) as exc:
        raise OutputError(f"malformed snapshot ({exc})", path) from exc
    return header, grid, field


def list_snapshots(directory: PathLike) -> Dict[int, Dict[str, Path]]:
    """Snapshot files grouped by step: {step: {field: path}}."""
    directory = Path(directory)
    if not directory.is_dir():
        raise OutputError("snapshot directory not found", directory)
    grouped: Dict[int, Dict[str, Path]] = {}
    for path in sorted(directory.iterdir()):
        match = _SNAPSHOT_NAME.match(path.name)
        if match:
            grouped.setdefault(int(match.group(1)), {})[match.group(2)] = path
    return dict(sorted(grouped.items()))


# --- JSON reports ---

def write_model(path: PathLike, model: BaseModel) -> Path:
    path = write_text(path, model.model_dump_json(indent=2) + "\n")
    logger.info("Wrote %s", path)
    return path


def read_monitor_report(path: PathLike) -> MonitorReport:
    path = Path(path)
    try:
        return MonitorReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OutputError(f"cannot read monitor report ({exc.strerror})", path) from exc
