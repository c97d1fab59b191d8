from .case import Bus, GridCase, Line, SensorKind, SensorSpec, fully_measured, parse_label
from .io import load_case, parse_case, write_case, format_case, read_measurements_csv, write_measurements_csv
from .measurement import (
    AcState,
    MeasurementMatrix,
    MeasurementSamples,
    ac_jacobian,
    ac_measure,
    dc_jacobian,
    sample_measurements,
    sample_states,
    snr_noise_std,
    state_covariance,
)
from .network import ReducedNetwork, reduced_network, topology

__all__ = [
    "AcState",
    "Bus",
    "GridCase",
    "Line",
    "MeasurementMatrix",
    "MeasurementSamples",
    "ReducedNetwork",
    "SensorKind",
    "SensorSpec",
    "ac_jacobian",
    "ac_measure",
    "dc_jacobian",
    "format_case",
    "fully_measured",
    "load_case",
    "parse_case",
    "parse_label",
    "read_measurements_csv",
    "reduced_network",
    "sample_measurements",
    "sample_states",
    "snr_noise_std",
    "state_covariance",
    "topology",
    "write_case",
    "write_measurements_csv",
]
