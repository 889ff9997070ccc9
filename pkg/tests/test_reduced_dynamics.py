import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from ssmpar.model import ForcingExpansion, NonlinearityExpansion, SecondOrderModel
from ssmpar.models_gallery import bernoulli_beam, coupled_mathieu
from ssmpar.reduced_dynamics import (
    FRCPoint,
    ROMError,
    build_polar_rom,
    classify_stability,
    default_rho_max,
    find_fixed_points,
    frc_sweep,
    infer_kappa0,
    lift_to_physical,
    split_branches,
)
from ssmpar.spectral import solve_master_modes
from ssmpar.ssm_autonomous import compute_autonomous_ssm
from ssmpar.ssm_nonautonomous import compute_nonautonomous_ssm

from conftest import master

DUFFING_GRID = np.linspace(0.95, 1.1, 16)


def duffing(damping=0.02, cubic=0.5, force=0.01):
    nl = NonlinearityExpansion(1, {((3,), (0,)): [cubic]})
    fo = ForcingExpansion(1, 1, {((0,), (0,), (1,)): [force / 2], ((0,), (0,), (-1,)): [force / 2]})
    return SecondOrderModel(np.eye(1), [[damping]], [[1.0]], nl, fo, 1.0)


@pytest.fixture(scope="module")
def duffing_setup():
    model = duffing()
    sub = solve_master_modes(model)
    auto = compute_autonomous_ssm(model, sub, 6)
    return model, sub, auto


def duffing_rom(duffing_setup, omega, order=5):
    model, sub, auto = duffing_setup
    na = compute_nonautonomous_ssm(model, sub, auto, omega, order=order,
                                   resonance_frequency=sub.eigenvalues[0].imag)
    return build_polar_rom(auto, na, 1, 1.0), na


@pytest.fixture(scope="module")
def self_excited_rom(self_excited):
    sub = master(self_excited)
    auto = compute_autonomous_ssm(self_excited, sub, 6)
    ref = sub.eigenvalues[0].imag
    na = compute_nonautonomous_ssm(self_excited, sub, auto, 2.6, order=5, resonance_frequency=ref)
    return auto, na, build_polar_rom(auto, na, 1, 1.0)


def direct_polar_field(auto, na, kappa0, epsilon, rho, psi):
    """``e^{-i theta}(R + eps S) - i kappa0 Omega rho`` at ``phi = 0`` straight from the tables."""
    p1, p2 = rho * np.exp(1j * psi), rho * np.exp(-1j * psi)
    total = 0.0
    for m, r in auto.R.items():
        total = total + r[0] * p1 ** m[0] * p2 ** m[1]
    for (m, k), s in na.S.items():
        total = total + epsilon * s[0] * p1 ** m[0] * p2 ** m[1]
    out = np.exp(-1j * psi) * total - 1j * kappa0 * na.omega * rho
    return np.stack([out.real, out.imag])


def brute_force_root_clusters(field, rho_max, n=2000):
    rho = np.linspace(rho_max / n, rho_max, n + 1)
    psi = np.linspace(0, 2 * np.pi, n + 1)
    RR, PP = np.meshgrid(rho, psi, indexing="ij")
    vals = field(RR, PP)
    flag = np.ones((n, n), dtype=bool)
    for comp in vals:
        corners = np.stack([comp[:-1, :-1], comp[1:, :-1], comp[:-1, 1:], comp[1:, 1:]])
        flag &= (corners.min(axis=0) < 0) & (corners.max(axis=0) > 0)
    labels, count = ndimage.label(flag, structure=np.ones((3, 3)))
    # psi is periodic: merge clusters touching both seams
    merged = count
    seen = set()
    for i in range(n):
        a, b = labels[i, 0], labels[i, -1]
        if a and b and a != b and (min(a, b), max(a, b)) not in seen:
            seen.add((min(a, b), max(a, b)))
            merged -= 1
    centers = [np.argwhere(labels == c).mean(axis=0) for c in range(1, count + 1)]
    return merged, [(rho[0] + (i + 0.5) * (rho[1] - rho[0]), (j + 0.5) * 2 * np.pi / n) for i, j in centers]


def test_rom_field_matches_direct_evaluation(self_excited_rom, rng):
    auto, na, rom = self_excited_rom
    rho = rng.uniform(0.01, 0.3, 50)
    psi = rng.uniform(0, 2 * np.pi, 50)
    expected = direct_polar_field(auto, na, 1, 1.0, rho, psi)
    np.testing.assert_allclose(rom.r(rho, psi), expected, rtol=1e-10, atol=1e-14)


def test_self_excited_rom_terms(self_excited_rom):
    _, _, rom = self_excited_rom
    tags = {(t.multi_index, t.kappa) for t in rom.forced}
    assert {((0, 0), 1), ((0, 1), 2), ((2, 0), -1), ((1, 1), 1), ((3, 0), -2)} <= tags
    for t in rom.forced:
        assert t.kappa == (1 - t.multi_index[0] + t.multi_index[1]) * rom.kappa0
    assert all(l % 2 == 1 for l, _ in rom.autonomous)


def test_linear_unforced_rom():
    model = coupled_mathieu(kappa=0.0)
    sub = solve_master_modes(model, mode_indices=[2])
    auto = compute_autonomous_ssm(model, sub, 3)
    rom = build_polar_rom(auto, omega=3.4)
    lam = sub.eigenvalues[0]
    np.testing.assert_allclose(rom.r(0.3, 1.2), [lam.real * 0.3, (lam.imag - 3.4) * 0.3], atol=1e-15)
    roots = find_fixed_points(rom, 1.0)
    assert list(roots) == [] and roots.trivial
    np.testing.assert_allclose(rom.polar_jacobian(0.3, 1.0), [[lam.real, 0.0], [0.0, 0.0]], atol=1e-15)


def test_external_leading_order_rom(duffing_setup):
    model, sub, auto = duffing_setup
    na = compute_nonautonomous_ssm(model, sub, auto, 1.0, order=0)
    rom = build_polar_rom(auto, na, 1, 0.5)
    assert [(t.multi_index, t.kappa) for t in rom.forced] == [((0, 0), 1)]
    s = na.S[((0, 0), 1)][0]
    rho, psi = 0.1, 0.7
    rot = np.array([[np.cos(psi), np.sin(psi)], [-np.sin(psi), np.cos(psi)]])
    expected = np.array([rom.a(rho), rom.b(rho)]) + 0.5 * rot @ [s.real, s.imag]
    np.testing.assert_allclose(rom.r(rho, psi), expected, rtol=1e-13)


def test_rom_rejects_wrong_dimension(mathieu):
    auto = compute_autonomous_ssm(mathieu, solve_master_modes(mathieu, pairs=2), 3)
    with pytest.raises(ROMError, match="two-dimensional"):
        build_polar_rom(auto, omega=1.0)


def test_rom_rejects_phase_incompatible_terms(duffing_setup):
    _, _, auto = duffing_setup
    fake = types.SimpleNamespace(omega=1.0, S={((1, 1), 2): np.array([1.0, 1.0])})
    with pytest.raises(ROMError, match="kappa"):
        build_polar_rom(auto, fake, 1)
    graph = types.SimpleNamespace(M=2, R={(2, 0): np.array([1.0, 0.0])})
    with pytest.raises(ROMError, match="normal-form"):
        build_polar_rom(graph, omega=1.0)


def test_fixed_point_search_rejects_bad_window(duffing_setup):
    rom, _ = duffing_rom(duffing_setup, 1.0)
    with pytest.raises(ValueError):
        find_fixed_points(rom, -1.0)


def test_duffing_root_counts_against_brute_force(duffing_setup):
    _, _, auto = duffing_setup
    rho_max = default_rho_max(auto)
    counts = []
    for omega in DUFFING_GRID:
        rom, na = duffing_rom(duffing_setup, omega)
        roots = find_fixed_points(rom, rho_max)
        field = lambda R, P: direct_polar_field(auto, na, 1, 1.0, R, P)
        oracle_count, centers = brute_force_root_clusters(field, rho_max)
        assert len(roots) == oracle_count, omega
        for rc, pc in centers:
            d = [np.hypot((rc - r) / rho_max, np.angle(np.exp(1j * (pc - p))) / (2 * np.pi)) for r, p in roots]
            assert min(d) < 2e-3
        counts.append(len(roots))
    assert set(counts) == {1, 3}


def test_duffing_stability_flips_across_fold(duffing_setup):
    model, sub, auto = duffing_setup
    res = frc_sweep(model, sub, auto, DUFFING_GRID)
    by_omega = {}
    for p in res:
        by_omega.setdefault(p.omega, []).append(p)
    for pts in by_omega.values():
        labels = [p.stability for p in sorted(pts, key=lambda q: q.rho)]
        assert labels in (["stable"], ["stable", "saddle", "stable"])


def test_fixed_points_satisfy_zero_set(self_excited, self_excited_rom):
    auto, _, rom = self_excited_rom
    roots = find_fixed_points(rom, default_rho_max(auto))
    assert roots
    for rho, psi in roots:
        assert np.linalg.norm(rom.r(rho, psi)) <= 1e-10 * rom.scale(rho)
        assert rho > 0 and 0 <= psi < 2 * np.pi


def test_self_excited_completeness_against_dense_grid(self_excited):
    sub = master(self_excited)
    auto = compute_autonomous_ssm(self_excited, sub, 6)
    rho_max = default_rho_max(auto)
    for omega in (2.58, 2.605, 2.63):
        na = compute_nonautonomous_ssm(self_excited, sub, auto, omega, order=5,
                                       resonance_frequency=sub.eigenvalues[0].imag)
        rom = build_polar_rom(auto, na, 1, 1.0)
        roots = find_fixed_points(rom, rho_max)
        oracle_count, _ = brute_force_root_clusters(lambda R, P: rom.r(R, P), rho_max)
        assert len(roots) == oracle_count


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.02, 0.3), psi=st.floats(0.0, 2 * np.pi))
def test_polar_jacobian_matches_finite_differences(self_excited_rom, rho, psi):
    _, _, rom = self_excited_rom
    J = rom.polar_jacobian(rho, psi)
    h_rho, h_psi = 1e-6 * rho, 1e-6
    fd = np.column_stack([
        (rom.polar_field(rho + h_rho, psi) - rom.polar_field(rho - h_rho, psi)) / (2 * h_rho),
        (rom.polar_field(rho, psi + h_psi) - rom.polar_field(rho, psi - h_psi)) / (2 * h_psi),
    ])
    assert np.max(np.abs(J - fd)) <= 1e-6 * np.max(np.abs(J))


def test_r_jacobian_matches_finite_differences(self_excited_rom, rng):
    _, _, rom = self_excited_rom
    for rho, psi in zip(rng.uniform(0.02, 0.3, 20), rng.uniform(0, 2 * np.pi, 20)):
        J = rom.r_jacobian(rho, psi)
        h = 1e-6
        fd = np.column_stack([(rom.r(rho + h * rho, psi) - rom.r(rho - h * rho, psi)) / (2 * h * rho),
                              (rom.r(rho, psi + h) - rom.r(rho, psi - h)) / (2 * h)])
        assert np.max(np.abs(J - fd)) <= 1e-6 * np.max(np.abs(J))


def test_stability_rejects_trivial_point(self_excited_rom):
    _, _, rom = self_excited_rom
    with pytest.raises(ROMError):
        classify_stability(rom, 0.0, 0.0)


def test_lift_at_zero_amplitude_is_linear_response(duffing_setup):
    model, sub, auto = duffing_setup
    na = compute_nonautonomous_ssm(model, sub, auto, 0.9, order=2)
    rom = build_polar_rom(auto, na, 1, 0.3)
    orbit = lift_to_physical(auto, na, rom, 0.0, 0.0, samples=64)
    phase = 0.9 * orbit.times
    expected = sum(0.3 * np.exp(1j * k * phase) * na.x[((0, 0), k)][0] for k in na.harmonics)
    np.testing.assert_allclose(orbit.output, expected.real, atol=1e-15)
    assert orbit.imag_residue <= 1e-15


def test_lifted_orbit_is_real(self_excited_rom):
    auto, na, rom = self_excited_rom
    for rho, psi in find_fixed_points(rom, default_rho_max(auto)):
        orbit = lift_to_physical(auto, na, rom, rho, psi)
        assert orbit.imag_residue <= 1e-10 * np.max(np.abs(orbit.states))
        assert orbit.amplitude == pytest.approx(np.max(np.abs(orbit.output)))


def test_frc_empty_grid(duffing_setup):
    model, sub, auto = duffing_setup
    res = frc_sweep(model, sub, auto, [])
    assert list(res) == [] and res.errors == {}


def test_frc_grid_permutation_invariance(duffing_setup):
    model, sub, auto = duffing_setup
    grid = list(DUFFING_GRID[::3])
    a = frc_sweep(model, sub, auto, grid)
    b = frc_sweep(model, sub, auto, grid[::-1])
    assert a == b


def test_frc_points_are_sorted_and_sound(duffing_setup):
    model, sub, auto = duffing_setup
    res = frc_sweep(model, sub, auto, DUFFING_GRID)
    keys = [(p.omega, p.rho, p.psi) for p in res]
    assert keys == sorted(keys)
    assert all(p.residual <= 1e-10 * 1.0 for p in res)


def test_frc_records_errors_per_frequency():
    model = bernoulli_beam(elements=3)
    sub = master(model)
    auto = compute_autonomous_ssm(model, sub, 3)
    # order above the autonomous tables is still solvable; kappa0 = 0 fails in every worker
    res = frc_sweep(model, sub, auto, [10.0, 11.0], kappa0=0)
    assert list(res) == [] and set(res.errors) == {10.0, 11.0}


def test_infer_kappa0(self_excited):
    sub = master(self_excited)
    assert infer_kappa0(self_excited, sub, 2.6) == 1
    assert infer_kappa0(coupled_mathieu(), solve_master_modes(coupled_mathieu(), mode_indices=[2]), 3.46) == 1


def _pt(omega, rho, psi=1.0):
    return FRCPoint(omega, rho, psi, "stable", rho)


def test_split_branches_separates_isola():
    grid = np.linspace(0, 1, 11)
    main = [_pt(w, 1.0 + 0.01 * i) for i, w in enumerate(grid)]
    isola = [_pt(w, 3.0) for w in grid[4:7]] + [_pt(w, 3.5) for w in grid[4:7]]
    branches = split_branches(main + isola)
    assert len(branches) == 2
    flags = sorted((b.isola, len(b.points)) for b in branches)
    assert flags == [(False, 11), (True, 6)]
    iso = next(b for b in branches if b.isola)
    assert iso.omega_range == (grid[4], grid[6])


def test_split_branches_keeps_fold_connected(duffing_setup):
    model, sub, auto = duffing_setup
    res = frc_sweep(model, sub, auto, np.linspace(0.95, 1.1, 46))
    branches = split_branches(res)
    assert not any(b.isola for b in branches)
    assert sum(len(b.points) for b in branches) == len(res)


def test_split_branches_empty():
    assert split_branches([]) == []
