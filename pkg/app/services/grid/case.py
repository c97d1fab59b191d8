"""Grid case types: buses, lines, sensors and the immutable GridCase."""
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.exceptions import (
    DanglingBusError,
    DuplicateLineError,
    DuplicateSensorError,
    InvalidCaseError,
    ZeroImpedanceError,
)

logger = logging.getLogger(__name__)


class SensorKind(str, Enum):
    INJECTION = "inj"
    FLOW = "flow"


@dataclass(frozen=True)
class Bus:
    id: int
    magnitude: float = 1.0  # p.u.
    angle: float = 0.0  # rad


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    connected: bool = True

    @property
    def key(self) -> FrozenSet[int]:
        return frozenset((self.from_bus, self.to_bus))

    @property
    def impedance(self) -> complex:
        return complex(self.resistance, self.reactance)

    @property
    def admittance(self) -> complex:
        if self.impedance == 0:
            raise ZeroImpedanceError(
                f"Line {self.from_bus}-{self.to_bus} has zero impedance"
            )
        return 1.0 / self.impedance

    @property
    def susceptance(self) -> float:
        """DC susceptance B_ij = -Im(1/Z_ij), positive for inductive lines."""
        return -self.admittance.imag


@dataclass(frozen=True)
class SensorSpec:
    kind: SensorKind
    bus: int
    to_bus: Optional[int] = None

    @classmethod
    def injection(cls, bus: int) -> "SensorSpec":
        return cls(SensorKind.INJECTION, int(bus))

    @classmethod
    def flow(cls, from_bus: int, to_bus: int) -> "SensorSpec":
        return cls(SensorKind.FLOW, int(from_bus), int(to_bus))

    @property
    def is_injection(self) -> bool:
        return self.kind == SensorKind.INJECTION

    @property
    def label(self) -> str:
        if self.is_injection:
            return f"inj:{self.bus}"
        return f"flow:{self.bus}:{self.to_bus}"

    @property
    def buses(self) -> Tuple[int, ...]:
        if self.is_injection:
            return (self.bus,)
        return (self.bus, self.to_bus)

    def __str__(self) -> str:
        return self.label


def parse_label(text: str) -> SensorSpec:
    """Parse `inj:i` or `flow:i:j`."""
    parts = text.strip().split(":")
    try:
        if parts[0] == SensorKind.INJECTION.value and len(parts) == 2:
            return SensorSpec.injection(int(parts[1]))
        if parts[0] == SensorKind.FLOW.value and len(parts) == 3:
            return SensorSpec.flow(int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise InvalidCaseError(f"Malformed sensor label: {text!r}")


@dataclass(frozen=True)
class GridCase:
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    reference: int
    sensors: Tuple[SensorSpec, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        bus_ids = [bus.id for bus in self.buses]
        if len(set(bus_ids)) != len(bus_ids):
            raise InvalidCaseError("Duplicate bus id in bus list")
        known = set(bus_ids)
        if self.reference not in known:
            raise DanglingBusError(f"Reference bus {self.reference} is not in the bus list")

        seen_lines = set()
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in known:
                    raise DanglingBusError(f"Line {line.from_bus}-{line.to_bus} references unknown bus {end}")
            if line.from_bus == line.to_bus:
                raise InvalidCaseError(f"Line {line.from_bus}-{line.to_bus} is a self loop")
            if line.key in seen_lines:
                raise DuplicateLineError(f"Duplicate line {line.from_bus}-{line.to_bus}")
            seen_lines.add(line.key)

        seen_sensors = set()
        for sensor in self.sensors:
            for end in sensor.buses:
                if end not in known:
                    raise DanglingBusError(f"Sensor {sensor.label} references unknown bus {end}")
            if not sensor.is_injection and frozenset(sensor.buses) not in seen_lines:
                raise InvalidCaseError(f"Sensor {sensor.label} is not on an existing line")
            if sensor in seen_sensors:
                raise DuplicateSensorError(f"Duplicate sensor {sensor.label}")
            seen_sensors.add(sensor)

        if self.sensors and not self._reference_is_measured():
            raise InvalidCaseError(
                f"No injection or flow sensor touches reference bus {self.reference}"
            )

    def _reference_is_measured(self) -> bool:
        return any(self.reference in sensor.buses for sensor in self.sensors)

    # Indexing

    @cached_property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @cached_property
    def bus_position(self) -> Dict[int, int]:
        return {bus_id: k for k, bus_id in enumerate(self.bus_ids)}

    @cached_property
    def state_buses(self) -> Tuple[int, ...]:
        """Buses carrying an angle state, in bus-list order (reference excluded)."""
        return tuple(b for b in self.bus_ids if b != self.reference)

    @cached_property
    def state_column(self) -> Dict[int, int]:
        return {bus_id: k for k, bus_id in enumerate(self.state_buses)}

    @cached_property
    def line_lookup(self) -> Dict[FrozenSet[int], int]:
        return {line.key: k for k, line in enumerate(self.lines)}

    @cached_property
    def sensor_position(self) -> Dict[SensorSpec, int]:
        return {sensor: k for k, sensor in enumerate(self.sensors)}

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def dc_dimension(self) -> int:
        return self.n_buses - 1

    @property
    def ac_dimension(self) -> int:
        return 2 * self.n_buses - 1

    @property
    def sensor_labels(self) -> Tuple[str, ...]:
        return tuple(sensor.label for sensor in self.sensors)

    @property
    def state_labels(self) -> Tuple[str, ...]:
        return tuple(f"theta:{b}" for b in self.state_buses)

    def line_between(self, i: int, j: int) -> Optional[Line]:
        k = self.line_lookup.get(frozenset((i, j)))
        return None if k is None else self.lines[k]

    def incident_lines(self, bus: int) -> List[Line]:
        return [line for line in self.lines if bus in (line.from_bus, line.to_bus)]

    def operating_magnitudes(self) -> np.ndarray:
        return np.array([bus.magnitude for bus in self.buses], dtype=float)

    def operating_angles(self) -> np.ndarray:
        """Angle states θ at the operating point (reference excluded)."""
        return np.array([bus.angle for bus in self.buses if bus.id != self.reference], dtype=float)

    def reference_angle(self) -> float:
        return self.buses[self.bus_position[self.reference]].angle

    def full_angles(self, angles: np.ndarray) -> np.ndarray:
        """Insert the reference angle into state angles; works on (..., n-1) arrays."""
        angles = np.asarray(angles, dtype=float)
        ref = self.bus_position[self.reference]
        return np.insert(angles, ref, self.reference_angle(), axis=-1)

    def sensor_indices(self, sensors: Iterable) -> List[int]:
        """Resolve sensor labels, SensorSpecs or row indices to measurement rows."""
        rows = []
        for item in sensors:
            if isinstance(item, (int, np.integer)):
                if not 0 <= int(item) < self.n_sensors:
                    raise InvalidCaseError(f"Sensor row {item} out of range")
                rows.append(int(item))
                continue
            sensor = parse_label(item) if isinstance(item, str) else item
            if sensor not in self.sensor_position:
                raise InvalidCaseError(f"Sensor {sensor.label} is not part of case {self.name or '<unnamed>'}")
            rows.append(self.sensor_position[sensor])
        return rows

    def with_reference(self, bus: int) -> "GridCase":
        return replace(self, reference=int(bus))


def fully_measured(buses: Sequence[Bus], lines: Sequence[Line]) -> Tuple[SensorSpec, ...]:
    """Injection on every bus, flow in both directions on every line."""
    sensors = [SensorSpec.injection(bus.id) for bus in buses]
    for line in lines:
        sensors.append(SensorSpec.flow(line.from_bus, line.to_bus))
        sensors.append(SensorSpec.flow(line.to_bus, line.from_bus))
    return tuple(sensors)
