import numpy as np
import pytest

from app.core.exceptions import (
    CaseFormatError,
    DanglingBusError,
    DuplicateLineError,
    DuplicateSensorError,
    InvalidCaseError,
    ZeroImpedanceError,
)
from app.services.grid import (
    AcState,
    Line,
    SensorSpec,
    ac_jacobian,
    ac_measure,
    dc_jacobian,
    format_case,
    load_case,
    parse_case,
    parse_label,
    read_measurements_csv,
    reduced_network,
    sample_measurements,
    snr_noise_std,
    topology,
    write_measurements_csv,
)
from tests.conftest import RING_CASE


def test_ieee14_shape(case14):
    assert case14.n_buses == 14
    assert len(case14.lines) == 20
    assert case14.n_sensors == 54
    assert case14.reference == 1
    assert case14.dc_dimension == 13
    assert case14.sensor_labels[0] == "inj:1"


def test_parse_error_carries_line_number():
    with pytest.raises(CaseFormatError) as e:
        parse_case("bus 1 1.0 0.0\nbus x 1.0 0.0\nref 1\n")
    assert e.value.line_number == 2
    assert str(e.value).startswith("line 2:")


def test_dangling_bus_rejected():
    with pytest.raises(DanglingBusError):
        parse_case("bus 1 1.0 0.0\nref 1\nline 1 2 0.0 0.1 1\n")


def test_duplicate_sensor_and_line_rejected():
    base = "bus 1 1.0 0.0\nbus 2 1.0 0.0\nref 1\nline 1 2 0.0 0.1 1\n"
    with pytest.raises(DuplicateSensorError):
        parse_case(base + "sensor inj 1\nsensor inj 1\n")
    with pytest.raises(DuplicateLineError):
        parse_case(base + "line 2 1 0.0 0.2 1\n")


def test_reference_must_be_measured():
    text = "bus 1 1.0 0.0\nbus 2 1.0 0.0\nbus 3 1.0 0.0\nref 1\nline 1 2 0 0.1 1\nline 2 3 0 0.1 1\nsensor flow 2 3\n"
    with pytest.raises(InvalidCaseError):
        parse_case(text)


def test_labels():
    assert parse_label("flow:1:5") == SensorSpec.flow(1, 5)
    assert parse_label("inj:4").label == "inj:4"
    with pytest.raises(InvalidCaseError):
        parse_label("voltage:3")


def test_unknown_sensor_label(case14):
    with pytest.raises(InvalidCaseError):
        case14.sensor_indices(["flow:1:14"])


def test_format_then_parse(ring_case):
    again = parse_case(format_case(ring_case), name="ring")
    assert again == ring_case


def test_missing_case_file(tmp_path):
    with pytest.raises(InvalidCaseError):
        load_case(tmp_path / "nope.case")


def test_zero_impedance():
    with pytest.raises(ZeroImpedanceError):
        Line(1, 2, 0.0, 0.0).admittance


def test_injection_is_sum_of_outgoing_flows(case14):
    z = ac_measure(case14, AcState.operating(case14))
    labels = case14.sensor_labels
    for bus in case14.bus_ids:
        outgoing = []
        for line in case14.incident_lines(bus):
            other = line.to_bus if line.from_bus == bus else line.from_bus
            outgoing.append(z[labels.index(f"flow:{bus}:{other}")])
        assert z[labels.index(f"inj:{bus}")] == pytest.approx(sum(outgoing), abs=1e-12)


def test_two_bus_flows_match_closed_form():
    case = parse_case(
        "bus 1 1.0 0.0\nbus 2 1.0 0.0\nref 1\nline 1 2 0.02 0.1 1\n"
        "sensor flow 1 2\nsensor flow 2 1\nsensor inj 2\n"
    )
    v1, v2, theta = 1.05, 0.98, 0.1
    y = 1.0 / complex(0.02, 0.1)
    g, b = y.real, -y.imag
    p12 = v1 ** 2 * g - v1 * v2 * (g * np.cos(theta) - b * np.sin(theta))
    p21 = v2 ** 2 * g - v1 * v2 * (g * np.cos(theta) + b * np.sin(theta))
    z = ac_measure(case, AcState(np.array([v1, v2]), np.array([-theta])))
    np.testing.assert_allclose(z, [p12, p21, p21], rtol=1e-12)
    assert p12 + p21 > 0.0


def test_ac_jacobian_matches_finite_differences(case14):
    state = AcState.operating(case14)
    J = ac_jacobian(case14, state).entries
    step = 1e-6
    numeric = np.zeros_like(J)
    for k in range(case14.dc_dimension):
        delta = np.zeros(case14.dc_dimension)
        delta[k] = step
        up = ac_measure(case14, AcState(state.magnitudes, state.angles + delta))
        down = ac_measure(case14, AcState(state.magnitudes, state.angles - delta))
        numeric[:, k] = (up - down) / (2 * step)
    np.testing.assert_allclose(J, numeric, atol=1e-6)


def test_dc_jacobian_is_flat_linearization(case14):
    flat = AcState.flat(case14)
    np.testing.assert_allclose(dc_jacobian(case14).entries, ac_jacobian(case14, flat).entries, atol=1e-12)


def test_dc_flow_row(ring_case):
    H = dc_jacobian(ring_case, ["flow:2:3"]).entries
    b = ring_case.line_between(2, 3).susceptance
    # state columns are buses 2, 3, 4
    np.testing.assert_allclose(H, [[b, -b, 0.0]])


def test_snr_noise_std(case14):
    sigma = snr_noise_std(case14, 46.0)
    z0 = ac_measure(case14, AcState.operating(case14))
    assert 10 * np.log10(np.mean(z0 ** 2) / sigma ** 2) == pytest.approx(46.0)


def test_sampling_is_seeded(case14):
    first = sample_measurements(case14, 5, 0.01, seed=3)
    second = sample_measurements(case14, 5, 0.01, seed=3)
    assert first.values.shape == (5, 54)
    np.testing.assert_array_equal(first.values, second.values)
    with pytest.raises(ValueError):
        sample_measurements(case14, 5, 0.0)


def test_batched_measure_matches_single(case14):
    samples = sample_measurements(case14, 3, 0.01, seed=5)
    single = ac_measure(case14, AcState(samples.states.magnitudes[1], samples.states.angles[1]))
    batch = ac_measure(case14, samples.states)
    np.testing.assert_allclose(batch[1], single, atol=1e-12)


def test_topology_and_reduced_network(case14):
    assert topology(case14).number_of_edges() == 20
    reduced = reduced_network(case14, ["flow:5:6"])
    assert reduced.edges == ((5, 6),)
    reduced = reduced_network(case14, ["inj:8"])
    assert reduced.edges == ((7, 8),)
    with pytest.raises(InvalidCaseError):
        reduced_network(case14, [])


def test_disconnected_line_carries_no_flow():
    text = RING_CASE.replace("line 2 3 0.02 0.20 1", "line 2 3 0.02 0.20 0")
    case = parse_case(text)
    z = ac_measure(case, AcState.operating(case), ["flow:2:3"])
    assert z[0] == 0.0


def test_measurement_csv(tmp_path, ring_case):
    values = np.arange(12, dtype=float).reshape(2, 6) / 7.0
    path = write_measurements_csv(values, ring_case.sensor_labels, tmp_path / "z.csv")
    read, labels = read_measurements_csv(path)
    assert labels == list(ring_case.sensor_labels)
    np.testing.assert_allclose(read, values, rtol=1e-11)


def test_pypower_case118(case118):
    assert case118.n_buses == 118
    assert case118.reference == 27
    assert case118.line_between(114, 115) is not None
