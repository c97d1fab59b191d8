import numpy as np
import pytest

from app.core.exceptions import DegenerateSamplesError, EmptyFeasibleSpaceError, InfeasibleAttackError, InvalidCaseError
from app.services.estimation import linear_wls
from app.services.grid import dc_jacobian, sample_measurements
from app.services.linalg import direction_angle, residual_projector
from app.services.subspace_attack import (
    SubspaceBasis,
    apply_attack,
    build_framing_problem,
    calibrate_eta,
    estimate_dimension,
    estimate_subspace,
    exact_basis,
    format_plan,
    framing_attack_full,
    framing_attack_partial,
    parse_plan,
    principal_angle,
    solve_framing_qcqp,
    spectrum_csv,
    unobservable_attack_full,
    unobservable_attack_partial,
)
from tests.conftest import (
    ADVERSARY_14,
    CRITICAL_118,
    FRAMED_14,
    FRAMING_ADVERSARY_14,
    FRAMING_OBSERVED_14,
    OBSERVED_14,
    OBSERVED_118,
)


def _noiseless_samples(H, count, rng, scale=0.1):
    return (scale * rng.standard_normal((count, H.shape[1]))) @ H.T


@pytest.fixture(scope="module")
def full_plan(H14):
    return unobservable_attack_full(exact_basis(H14), ADVERSARY_14)


def test_noiseless_subspace_matches_range(H14, rng):
    basis = estimate_subspace(_noiseless_samples(H14.entries, 50, rng), 13, labels=H14.row_labels)
    assert basis.dimension == 13
    assert principal_angle(basis.matrix, H14.entries) < 1e-8


def test_subspace_labels_follow_samples(case14):
    samples = sample_measurements(case14, 30, 0.01, seed=1)
    basis = estimate_subspace(samples, 13)
    assert basis.labels == case14.sensor_labels
    assert basis.rows == tuple(range(54))


def test_degenerate_samples(H14, rng):
    with pytest.raises(DegenerateSamplesError):
        estimate_subspace(_noiseless_samples(H14.entries, 5, rng), 13)
    thin = _noiseless_samples(H14.entries[:, :3], 40, rng)
    with pytest.raises(DegenerateSamplesError):
        estimate_subspace(thin, 13)
    with pytest.raises(ValueError):
        estimate_subspace(thin, 0)


def test_estimate_dimension():
    assert estimate_dimension(np.array([10.0, 9.0, 8.0, 0.01, 0.009])) == 3
    assert estimate_dimension(np.array([1.0])) == 1


def test_exact_unobservable_attack(H14, full_plan):
    a = full_plan.embedded(54)
    assert np.linalg.norm(full_plan.direction) == pytest.approx(1.0)
    assert full_plan.direction[0] > 0
    assert full_plan.labels == tuple(ADVERSARY_14)
    assert full_plan.off_support_energy < 1e-12
    np.testing.assert_allclose(residual_projector(H14.entries) @ a, 0.0, atol=1e-8)


def test_unobservable_attack_rejects_bad_sets(H14):
    basis = exact_basis(H14)
    with pytest.raises(InfeasibleAttackError):
        unobservable_attack_full(basis, [])
    with pytest.raises(InfeasibleAttackError):
        unobservable_attack_full(basis, ["flow:1:2"])
    with pytest.raises(InvalidCaseError):
        unobservable_attack_full(basis, ["flow:1:2", "flow:1:2"])


def test_data_driven_attack_matches_exact(H14, rng, full_plan):
    basis = estimate_subspace(_noiseless_samples(H14.entries, 60, rng), 13, labels=H14.row_labels)
    plan = unobservable_attack_full(basis, ADVERSARY_14)
    np.testing.assert_allclose(plan.direction, full_plan.direction, atol=1e-6)


def test_attack_ignores_basis_rotation_and_sign(H14, full_plan):
    basis = exact_basis(H14)
    order = np.random.default_rng(7).permutation(13)
    flips = np.where(np.arange(13) % 2 == 0, -1.0, 1.0)
    rotated = SubspaceBasis(basis.matrix[:, order] * flips, basis.labels, basis.rows, exact=True)
    plan = unobservable_attack_full(rotated, ADVERSARY_14)
    np.testing.assert_allclose(plan.direction, full_plan.direction, atol=1e-10)


def test_partial_attack_is_consistent_with_full_model(case14, H14, full_plan):
    rows = case14.sensor_indices(OBSERVED_14)
    basis = exact_basis(H14.select_rows(rows), rows=rows)
    plan = unobservable_attack_partial(basis, ADVERSARY_14)
    assert plan.kind == "unobservable-partial"
    assert plan.rows == tuple(case14.sensor_indices(ADVERSARY_14))
    np.testing.assert_allclose(residual_projector(H14.entries) @ plan.embedded(54), 0.0, atol=1e-8)
    np.testing.assert_allclose(plan.direction, full_plan.direction, atol=1e-8)


def test_partial_attack_needs_one_dimensional_null_space(case14, H14):
    rows = case14.sensor_indices(OBSERVED_14)
    basis = exact_basis(H14.select_rows(rows), rows=rows)
    with pytest.raises(InfeasibleAttackError):
        unobservable_attack_partial(basis, ["flow:1:2"])


def test_framing_feasible_space(H14):
    basis = exact_basis(H14)
    problem = build_framing_problem(basis, FRAMING_ADVERSARY_14, FRAMED_14)
    assert problem.dimension == 1
    outside = [k for k in range(54) if k not in problem.adversary]
    np.testing.assert_allclose(problem.feasible_basis[outside], 0.0, atol=1e-14)
    with pytest.raises(EmptyFeasibleSpaceError):
        build_framing_problem(basis, ["flow:1:2"], ["flow:2:1"])
    with pytest.raises(InvalidCaseError):
        build_framing_problem(basis, ["flow:1:2"], ["flow:1:2"])


def test_framing_objective(H14):
    problem = build_framing_problem(exact_basis(H14), FRAMING_ADVERSARY_14, FRAMED_14)
    plan = solve_framing_qcqp(problem)
    a = np.zeros(54)
    a[list(problem.adversary)] = plan.direction
    expected = np.sum((problem.omega * (problem.projector @ a))[list(problem.framed)] ** 2)
    assert plan.objective == pytest.approx(expected, rel=1e-8)
    assert plan.objective > 0.0
    assert plan.framed == tuple(FRAMED_14)


def test_framing_qcqp_on_two_dimensional_space():
    rng = np.random.default_rng(11)
    H = rng.standard_normal((8, 3))
    H[4:] = np.outer(rng.standard_normal(4), rng.standard_normal(3))
    basis = exact_basis(H)
    problem = build_framing_problem(basis, [0, 1, 2], [3])
    assert problem.dimension == 2
    plan = solve_framing_qcqp(problem)

    B = problem.feasible_basis
    M = (problem.omega[:, None] * (problem.projector @ B))[list(problem.framed)]
    theta = np.linspace(0.0, np.pi, 20001)
    x = np.stack([np.cos(theta), np.sin(theta)])
    grid = np.sum((M @ x) ** 2, axis=0) / np.sum((B @ x) ** 2, axis=0)
    assert plan.objective >= grid.max() - 1e-12
    assert plan.objective == pytest.approx(grid.max(), rel=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_framing_qcqp_beats_sampled_directions(seed):
    rng = np.random.default_rng(100 + seed)
    dimension = 2 + seed % 3
    m, n, framed = 12, 5, 2
    attacked = m - framed - (n - dimension)
    basis = exact_basis(rng.standard_normal((m, n)))
    problem = build_framing_problem(basis, range(attacked), range(attacked, attacked + framed))
    assert problem.dimension == dimension
    plan = solve_framing_qcqp(problem)

    B = problem.feasible_basis
    M = (problem.omega[:, None] * (problem.projector @ B))[list(problem.framed)]
    x = rng.standard_normal((dimension, 100000))
    sampled = np.sum((M @ x) ** 2, axis=0) / np.sum((B @ x) ** 2, axis=0)
    assert plan.objective >= sampled.max() * (1.0 - 1e-9)
    assert plan.objective == pytest.approx(sampled.max(), rel=1e-2)


def test_partial_framing_matches_full_framing(case14, H14):
    full = framing_attack_full(exact_basis(H14), FRAMING_ADVERSARY_14, FRAMED_14)
    rows = case14.sensor_indices(FRAMING_OBSERVED_14)
    partial = framing_attack_partial(exact_basis(H14.select_rows(rows), rows=rows), FRAMING_ADVERSARY_14,
                                     framed=FRAMED_14)
    assert partial.kind == "framing-partial"
    assert partial.framed == tuple(FRAMED_14)
    np.testing.assert_allclose(partial.direction, full.direction, atol=1e-8)


def test_framing_direction_is_forced_on_fourteen_bus(H14, full_plan):
    # one feasible direction: the unobservable attack on S_A ∪ S_F seen through S_A only
    plan = framing_attack_full(exact_basis(H14), FRAMING_ADVERSARY_14, FRAMED_14)
    position = {label: k for k, label in enumerate(full_plan.labels)}
    on_adversary = full_plan.direction[[position[label] for label in FRAMING_ADVERSARY_14]]
    on_framed = full_plan.direction[[position[label] for label in FRAMED_14]]
    assert direction_angle(plan.direction, on_adversary) < 1e-8
    # the adversary carries the smaller share of it, which the largest-residue test blames first
    assert np.linalg.norm(on_adversary) < np.linalg.norm(on_framed)


def test_apply_attack(full_plan, rng):
    z = rng.standard_normal(54)
    np.testing.assert_array_equal(apply_attack(z, full_plan, 0.0), z)
    a = full_plan.embedded(54)
    np.testing.assert_allclose(apply_attack(z, full_plan, 0.3) - z, 0.3 * a, atol=1e-15)
    np.testing.assert_allclose(apply_attack(z, full_plan, -0.3) - z, -0.3 * a, atol=1e-15)
    untouched = [k for k in range(54) if k not in full_plan.rows]
    np.testing.assert_array_equal(apply_attack(z, full_plan, 2.0)[untouched], z[untouched])
    with pytest.raises(InvalidCaseError):
        apply_attack(z[:10], full_plan, 1.0)


def test_calibrate_eta(full_plan, rng):
    z = rng.standard_normal(54)
    eta = calibrate_eta(z, full_plan, 0.05)
    attack = apply_attack(z, full_plan, eta) - z
    assert np.sum(np.abs(attack)) / np.sum(np.abs(z)) == pytest.approx(0.05)


def test_estimate_shift_scales_with_magnitude(H14, full_plan, rng):
    z = H14.entries @ rng.standard_normal(13) + 0.01 * rng.standard_normal(54)
    clean = linear_wls(H14, z)
    shifts = [linear_wls(H14, apply_attack(z, full_plan, eta)).estimate - clean.estimate for eta in (1.0, 2.0)]
    np.testing.assert_allclose(shifts[1], 2.0 * shifts[0], atol=1e-9)
    assert np.linalg.norm(shifts[0]) > 0.0
    attacked = linear_wls(H14, apply_attack(z, full_plan, 2.0))
    np.testing.assert_allclose(attacked.residue, clean.residue, atol=1e-9)


def test_plan_text(case14, full_plan):
    plan = full_plan.scaled(0.25)
    again = parse_plan(format_plan(plan), case14)
    assert again.labels == plan.labels
    assert again.rows == plan.rows
    assert again.eta == 0.25
    np.testing.assert_array_equal(again.direction, plan.direction)
    with pytest.raises(InvalidCaseError):
        parse_plan("kind=unobservable-full\nsensor=inj:1 abc\n", case14)
    with pytest.raises(InvalidCaseError):
        parse_plan("kind=unobservable-full\n", case14)


def test_framing_plan_text(case14, H14):
    plan = framing_attack_full(exact_basis(H14), FRAMING_ADVERSARY_14, FRAMED_14).scaled(np.float64(0.5))
    text = format_plan(plan)
    assert "np." not in text
    assert "eta=0.5\n" in text
    again = parse_plan(text, case14)
    assert again.framed == tuple(FRAMED_14)
    assert again.objective == plan.objective
    np.testing.assert_array_equal(again.direction, plan.direction)


def test_spectrum_csv(case14, tmp_path):
    basis = estimate_subspace(sample_measurements(case14, 40, 0.01, seed=2), 13)
    text = spectrum_csv(basis, tmp_path / "spectrum.csv")
    lines = text.strip().splitlines()
    assert lines[0] == "index,singular_value,relative,retained"
    assert len(lines) == 55
    assert sum(line.endswith("True") for line in lines[1:]) == 13
    assert (tmp_path / "spectrum.csv").read_text() == text


@pytest.mark.slow
def test_noisy_subspace_close_to_range(H14):
    rng = np.random.default_rng(99)
    Z = _noiseless_samples(H14.entries, 2000, rng) + 1e-3 * rng.standard_normal((2000, 54))
    basis = estimate_subspace(Z, 13, labels=H14.row_labels)
    assert principal_angle(basis.matrix, H14.entries) < 0.05
    plan = unobservable_attack_full(basis, ADVERSARY_14)
    exact = unobservable_attack_full(exact_basis(H14), ADVERSARY_14)
    assert direction_angle(plan.direction, exact.direction) < 0.05


def test_bus_115_partial_attack(case118):
    H = dc_jacobian(case118)
    rows = case118.sensor_indices(OBSERVED_118)
    plan = unobservable_attack_partial(exact_basis(H.select_rows(rows), rows=rows), CRITICAL_118)
    assert plan.null_values[1] > 10 * plan.null_values[0]
    a = plan.embedded(case118.n_sensors)
    np.testing.assert_allclose(residual_projector(H.entries) @ a, 0.0, atol=1e-8)


def test_bus_115_partial_framing(case118):
    H = dc_jacobian(case118)
    framed = ["inj:114", "inj:115", "inj:27", "flow:115:27"]
    rows = [r for r in case118.sensor_indices(OBSERVED_118) if r not in case118.sensor_indices(framed)]
    attacked = ["flow:114:115", "flow:115:114", "flow:27:115"]
    plan = framing_attack_partial(exact_basis(H.select_rows(rows), rows=rows), attacked, framed=framed)
    assert plan.null_values[1] > 10 * plan.null_values[0]
    # the only free angle behind the attack is the one at bus 115
    column = case118.state_column[115]
    expected = H.entries[case118.sensor_indices(attacked), column]
    np.testing.assert_allclose(np.abs(plan.direction), np.abs(expected) / np.linalg.norm(expected), atol=1e-8)
