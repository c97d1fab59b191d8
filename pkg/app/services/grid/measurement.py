"""AC and DC real-power measurement models.

Every sensor row is a linear combination of directed line flows: a flow sensor
picks one direction of one line, an injection sums the outgoing flows of its
bus. Both models share that selector, so the DC Jacobian is the AC model
linearized at the flat state.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from app.core.config import settings
from .case import GridCase

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class AcState:
    """Voltage magnitudes at all buses and angles at non-reference buses.

    Arrays may carry a leading batch axis: (K, n) magnitudes and (K, n-1) angles.
    """
    magnitudes: np.ndarray
    angles: np.ndarray

    @classmethod
    def operating(cls, case: GridCase) -> "AcState":
        return cls(case.operating_magnitudes(), case.operating_angles())

    @classmethod
    def flat(cls, case: GridCase) -> "AcState":
        return cls(np.ones(case.n_buses), np.zeros(case.dc_dimension))

    @classmethod
    def from_vector(cls, case: GridCase, x: np.ndarray) -> "AcState":
        x = np.asarray(x, dtype=float)
        n = case.n_buses
        if x.shape[-1] != case.ac_dimension:
            raise ValueError(f"AC state needs {case.ac_dimension} entries, got {x.shape[-1]}")
        return cls(x[..., :n], x[..., n:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.magnitudes, self.angles], axis=-1)

    def __len__(self) -> int:
        return 1 if np.ndim(self.angles) == 1 else np.shape(self.angles)[0]


@dataclass(frozen=True)
class MeasurementMatrix:
    entries: np.ndarray
    row_labels: Tuple[str, ...]
    column_labels: Tuple[str, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    def __array__(self, dtype=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def select_rows(self, rows: Sequence[int]) -> "MeasurementMatrix":
        rows = list(rows)
        return MeasurementMatrix(
            self.entries[rows, :], tuple(self.row_labels[r] for r in rows), self.column_labels
        )



def _rows(case: GridCase, sensors: Optional[Iterable]) -> Tuple[int, ...]:
    if sensors is None:
        return tuple(range(case.n_sensors))
    return tuple(case.sensor_indices(sensors))


@lru_cache(maxsize=64)
def _flow_selector(case: GridCase, rows: Tuple[int, ...]) -> np.ndarray:
    """(m, 2L) matrix mapping directed flows [l: from->to, l: to->from] to sensor rows."""
    selector = np.zeros((len(rows), 2 * len(case.lines)))
    for k, row in enumerate(rows):
        sensor = case.sensors[row]
        if sensor.is_injection:
            for l, line in enumerate(case.lines):
                if not line.connected:
                    continue
                if line.from_bus == sensor.bus:
                    selector[k, 2 * l] = 1.0
                elif line.to_bus == sensor.bus:
                    selector[k, 2 * l + 1] = 1.0
        else:
            l = case.line_lookup[frozenset(sensor.buses)]
            line = case.lines[l]
            if not line.connected:
                continue
            selector[k, 2 * l if line.from_bus == sensor.bus else 2 * l + 1] = 1.0
    return selector


@lru_cache(maxsize=16)
def _line_arrays(case: GridCase):
    connected = np.array([line.connected for line in case.lines], dtype=bool)
    admittance = np.array(
        [line.admittance if line.connected else 0.0 for line in case.lines], dtype=complex
    )
    f = np.array([case.bus_position[line.from_bus] for line in case.lines], dtype=int)
    t = np.array([case.bus_position[line.to_bus] for line in case.lines], dtype=int)
    return connected, admittance, f, t


def _directed_flows(case: GridCase, magnitudes: np.ndarray, full_angles: np.ndarray) -> np.ndarray:
    _, y, f, t = _line_arrays(case)
    voltage = magnitudes * np.exp(1j * full_angles)
    vf, vt = voltage[..., f], voltage[..., t]
    # P_ij + jQ_ij = V_i (conj((V_i - V_j) / Z_ij))
    s_ft = vf * np.conj((vf - vt) * y)
    s_tf = vt * np.conj((vt - vf) * y)
    flows = np.empty(s_ft.shape[:-1] + (2 * len(case.lines),))
    flows[..., 0::2] = s_ft.real
    flows[..., 1::2] = s_tf.real
    return flows


def ac_measure(case: GridCase, x: AcState, sensors: Optional[Iterable] = None) -> np.ndarray:
    """Real power seen by each sensor at AC state x; batches give (K, m)."""
    magnitudes = np.asarray(x.magnitudes, dtype=float)
    angles = np.asarray(x.angles, dtype=float)
    if magnitudes.shape[-1] != case.n_buses or angles.shape[-1] != case.dc_dimension:
        raise ValueError(
            f"State dimensions {magnitudes.shape[-1]}/{angles.shape[-1]} do not match case "
            f"({case.n_buses}/{case.dc_dimension})"
        )
    flows = _directed_flows(case, magnitudes, case.full_angles(angles))
    return flows @ _flow_selector(case, _rows(case, sensors)).T


def ac_jacobian(case: GridCase, x: AcState, sensors: Optional[Iterable] = None) -> MeasurementMatrix:
    """Derivative of the real-power rows with respect to the angle states at x."""
    connected, y, f, t = _line_arrays(case)
    rows = _rows(case, sensors)
    magnitudes = np.asarray(x.magnitudes, dtype=float)
    theta = case.full_angles(x.angles)
    g, b = y.real, y.imag
    vv = magnitudes[f] * magnitudes[t]
    delta = theta[f] - theta[t]
    # dP_ij/dθ_i = V_i V_j (g sin θ_ij - b cos θ_ij), dP_ij/dθ_j is its negative
    d_ft = vv * (g * np.sin(delta) - b * np.cos(delta))
    d_tf = vv * (-g * np.sin(delta) - b * np.cos(delta))

    directed = np.zeros((2 * len(case.lines), case.n_buses))
    idx = np.arange(len(case.lines))
    directed[2 * idx, f] += d_ft
    directed[2 * idx, t] -= d_ft
    directed[2 * idx + 1, t] += d_tf
    directed[2 * idx + 1, f] -= d_tf
    directed[:, case.bus_position[case.reference]] = 0.0
    keep = [case.bus_position[bus] for bus in case.state_buses]
    entries = _flow_selector(case, rows) @ directed[:, keep]
    return MeasurementMatrix(entries, tuple(case.sensors[r].label for r in rows), case.state_labels)


def dc_jacobian(case: GridCase, sensors: Optional[Iterable] = None) -> MeasurementMatrix:
    """DC measurement matrix: flow row (i,j) has +B_ij at θ_i and -B_ij at θ_j."""
    rows = _rows(case, sensors)
    directed = np.zeros((2 * len(case.lines), case.n_buses))
    for l, line in enumerate(case.lines):
        if not line.connected:
            continue
        susceptance = line.susceptance
        f, t = case.bus_position[line.from_bus], case.bus_position[line.to_bus]
        directed[2 * l, f], directed[2 * l, t] = susceptance, -susceptance
        directed[2 * l + 1, t], directed[2 * l + 1, f] = susceptance, -susceptance
    keep = [case.bus_position[bus] for bus in case.state_buses]
    entries = _flow_selector(case, rows) @ directed[:, keep]
    return MeasurementMatrix(entries, tuple(case.sensors[r].label for r in rows), case.state_labels)


def snr_noise_std(case: GridCase, snr_db: Optional[float] = None, sensors: Optional[Iterable] = None) -> float:
    """σ such that 10 log10(mean(z0²) / σ²) = snr_db at the operating state."""
    snr_db = settings.SNR_DB if snr_db is None else snr_db
    z0 = ac_measure(case, AcState.operating(case), sensors)
    return float(np.sqrt(np.mean(z0 ** 2) / 10.0 ** (snr_db / 10.0)))


def state_covariance(case: GridCase, angle_std: Optional[float] = None,
                     magnitude_std: Optional[float] = None) -> np.ndarray:
    """Diagonal covariance over the AC state vector [V_1..V_n, θ_2..θ_n]."""
    angle_std = settings.ANGLE_STD if angle_std is None else angle_std
    magnitude_std = settings.MAGNITUDE_STD if magnitude_std is None else magnitude_std
    return np.diag(np.concatenate([
        np.full(case.n_buses, magnitude_std ** 2), np.full(case.dc_dimension, angle_std ** 2)
    ]))


def sample_states(case: GridCase, count: int, state_cov: Optional[np.ndarray] = None,
                  seed: SeedLike = None) -> AcState:
    """Draw `count` AC states from Gaussian(operating state, state_cov)."""
    cov = state_covariance(case) if state_cov is None else np.asarray(state_cov, dtype=float)
    if cov.shape != (case.ac_dimension, case.ac_dimension):
        raise ValueError(f"State covariance must be {case.ac_dimension}x{case.ac_dimension}")
    if not np.allclose(cov, cov.T):
        raise ValueError("State covariance must be symmetric")
    rng = np.random.default_rng(seed)
    mean = AcState.operating(case).to_vector()
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        x = mean + rng.standard_normal((count, mean.size)) * std
    else:
        eigenvalues = np.linalg.eigvalsh(cov)
        if eigenvalues.min() < -1e-12 * max(1.0, eigenvalues.max()):
            raise ValueError("State covariance must be positive semidefinite")
        x = rng.multivariate_normal(mean, cov, size=count, method="eigh")
    return AcState.from_vector(case, x)


@dataclass(frozen=True)
class MeasurementSamples:
    states: AcState
    values: np.ndarray  # (K, m)
    noise_std: float
    labels: Tuple[str, ...]

    def __len__(self) -> int:
        return self.values.shape[0]


def sample_measurements(case: GridCase, count: int, noise_std: float,
                        state_cov: Optional[np.ndarray] = None, seed: SeedLike = None,
                        sensors: Optional[Iterable] = None) -> MeasurementSamples:
    """z_i = ac_measure(x_i) + e_i with x_i ~ N(operating, state_cov), e_i ~ N(0, σ²I)."""
    if noise_std <= 0:
        raise ValueError("noise_std must be positive")
    rng = np.random.default_rng(seed)
    states = sample_states(case, count, state_cov, rng)
    rows = _rows(case, sensors)
    clean = ac_measure(case, states, rows)
    values = clean + noise_std * rng.standard_normal(clean.shape)
    return MeasurementSamples(states, values, noise_std, tuple(case.sensors[r].label for r in rows))
