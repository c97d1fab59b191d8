"""Case-file and measurement-dump IO.

Case schema (one record per line, `#` starts a comment)::

    bus <id> <V> <theta>
    ref <id>
    line <i> <j> <R> <X> <status>
    sensor inj <i>
    sensor flow <i> <j>

Sensor lines are kept in file order; that order is the measurement row order.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.exceptions import (
    CaseFormatError,
    DanglingBusError,
    DuplicateLineError,
    DuplicateSensorError,
    InvalidCaseError,
)
from .case import Bus, GridCase, Line, SensorSpec, parse_label

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_STATUS = {
    "1": True, "on": True, "connected": True, "closed": True,
    "0": False, "off": False, "disconnected": False, "open": False,
}


def _number(token: str, kind, line_number: int):
    try:
        return kind(token)
    except ValueError:
        raise CaseFormatError(f"expected {kind.__name__}, got {token!r}", line_number)


def parse_case(text: str, name: str = "") -> GridCase:
    buses: Dict[int, Tuple[Bus, int]] = {}
    lines: List[Tuple[Line, int]] = []
    sensors: List[Tuple[SensorSpec, int]] = []
    reference: Optional[Tuple[int, int]] = None

    for line_number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        tokens = content.split()
        record = tokens[0].lower()

        if record == "bus":
            if len(tokens) != 4:
                raise CaseFormatError("bus record needs <id> <V> <theta>", line_number)
            bus_id = _number(tokens[1], int, line_number)
            if bus_id in buses:
                raise CaseFormatError(f"duplicate bus {bus_id}", line_number)
            buses[bus_id] = (
                Bus(bus_id, _number(tokens[2], float, line_number), _number(tokens[3], float, line_number)),
                line_number,
            )
        elif record == "ref":
            if len(tokens) != 2:
                raise CaseFormatError("ref record needs <id>", line_number)
            if reference is not None:
                raise CaseFormatError("reference bus declared twice", line_number)
            reference = (_number(tokens[1], int, line_number), line_number)
        elif record == "line":
            if len(tokens) != 6:
                raise CaseFormatError("line record needs <i> <j> <R> <X> <status>", line_number)
            status = tokens[5].lower()
            if status not in _STATUS:
                raise CaseFormatError(f"unknown line status {tokens[5]!r}", line_number)
            lines.append((
                Line(
                    _number(tokens[1], int, line_number),
                    _number(tokens[2], int, line_number),
                    _number(tokens[3], float, line_number),
                    _number(tokens[4], float, line_number),
                    _STATUS[status],
                ),
                line_number,
            ))
        elif record == "sensor":
            if len(tokens) == 3 and tokens[1] == "inj":
                sensor = SensorSpec.injection(_number(tokens[2], int, line_number))
            elif len(tokens) == 4 and tokens[1] == "flow":
                sensor = SensorSpec.flow(_number(tokens[2], int, line_number), _number(tokens[3], int, line_number))
            else:
                raise CaseFormatError("sensor record needs `inj <i>` or `flow <i> <j>`", line_number)
            sensors.append((sensor, line_number))
        else:
            raise CaseFormatError(f"unknown record {tokens[0]!r}", line_number)

    if reference is None:
        raise CaseFormatError("missing ref record")
    if reference[0] not in buses:
        raise DanglingBusError(f"reference bus {reference[0]} is not declared", reference[1])

    line_keys = set()
    for line, line_number in lines:
        for end in (line.from_bus, line.to_bus):
            if end not in buses:
                raise DanglingBusError(f"line references unknown bus {end}", line_number)
        if line.key in line_keys:
            raise DuplicateLineError(f"duplicate line {line.from_bus}-{line.to_bus}", line_number)
        line_keys.add(line.key)

    seen = set()
    for sensor, line_number in sensors:
        for end in sensor.buses:
            if end not in buses:
                raise DanglingBusError(f"sensor {sensor.label} references unknown bus {end}", line_number)
        if not sensor.is_injection and frozenset(sensor.buses) not in line_keys:
            raise CaseFormatError(f"sensor {sensor.label} is not on a declared line", line_number)
        if sensor in seen:
            raise DuplicateSensorError(f"duplicate sensor {sensor.label}", line_number)
        seen.add(sensor)

    return GridCase(
        buses=tuple(bus for bus, _ in buses.values()),
        lines=tuple(line for line, _ in lines),
        reference=reference[0],
        sensors=tuple(sensor for sensor, _ in sensors),
        name=name,
    )


def load_case(path: PathLike) -> GridCase:
    """Load a case file; pypower cases are addressed as `pypower:<name>`."""
    path_text = str(path)
    if path_text.startswith("pypower:"):
        from .pypower_loader import from_pypower
        return from_pypower(path_text.split(":", 1)[1])

    path = Path(path)
    if not path.is_absolute() and not path.exists() and (Path(settings.CASES_DIR) / path).exists():
        path = Path(settings.CASES_DIR) / path
    logger.info(f"Loading case file: {path}")
    try:
        text = path.read_text()
    except OSError as e:
        logger.error(f"Cannot read case file {path}: {str(e)}")
        raise InvalidCaseError(f"Cannot read case file {path}: {str(e)}")
    case = parse_case(text, name=path.stem)
    logger.info(
        f"Loaded case {case.name}: {case.n_buses} buses, {len(case.lines)} lines, {case.n_sensors} sensors"
    )
    return case


def format_case(case: GridCase) -> str:
    out = [f"# {case.name}" if case.name else "# grid case"]
    for bus in case.buses:
        out.append(f"bus {bus.id} {float(bus.magnitude)!r} {float(bus.angle)!r}")
    out.append(f"ref {case.reference}")
    for line in case.lines:
        out.append(f"line {line.from_bus} {line.to_bus} {float(line.resistance)!r} {float(line.reactance)!r} {int(line.connected)}")
    for sensor in case.sensors:
        if sensor.is_injection:
            out.append(f"sensor inj {sensor.bus}")
        else:
            out.append(f"sensor flow {sensor.bus} {sensor.to_bus}")
    return "\n".join(out) + "\n"


def write_case(case: GridCase, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_case(case))
    logger.info(f"Wrote case {case.name} to {path}")
    return path


def write_measurements_csv(values: np.ndarray, labels: Sequence[str], path: PathLike) -> Path:
    """One row per sample, header = sensor labels, per-unit values."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(values, columns=list(labels)).to_csv(path, index=False, float_format="%.12g")
    return path


def read_measurements_csv(path: PathLike) -> Tuple[np.ndarray, List[str]]:
    frame = pd.read_csv(path)
    labels = list(frame.columns)
    for label in labels:
        parse_label(label)
    return frame.to_numpy(dtype=float), labels
