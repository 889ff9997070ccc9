"""Acceptance suite: one recorded line per criterion at its stated tolerance.

Each test calls ``report(label, passed, detail)`` which prints a
``CRITERION n: PASS/FAIL | ...`` line (also repeated in the pytest terminal
summary) and then asserts the outcome. Expected values are either quoted
reference numbers, closed-form facts, or oracle results frozen in
``tests/oracles/frozen_oracles.json`` by ``tests/oracles/generate_oracles.py``.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from ssmpar.floquet import full_system_monodromy, reduced_monodromy, trace_tongue, verify_periodic_response
from ssmpar.models_gallery import bernoulli_beam, coupled_mathieu, prismatic_beam, self_excited_oscillator
from ssmpar.multiindex import indices_up_to, vector_power_coefficients, zero
from ssmpar.reduced_dynamics import (
    build_polar_rom,
    default_rho_max,
    frc_sweep,
    lift_to_physical,
    split_branches,
)
from ssmpar.spectral import full_spectrum
from ssmpar.ssm_autonomous import autonomous_residual, compute_autonomous_ssm, conjugate_symmetric_points
from ssmpar.ssm_firstorder import compute_autonomous_first, compute_nonautonomous_first
from ssmpar.ssm_nonautonomous import compute_nonautonomous_ssm, nonautonomous_residual

from conftest import master

README = Path(__file__).resolve().parents[1] / "README.md"


def nearest_distance(values, target):
    return float(np.min(np.abs(np.asarray(values) - target)))


# ---------------------------------------------------------------- criterion 1

REFERENCE_EIGENVALUES = {
    "coupled_mathieu": (coupled_mathieu, [-0.0250 + 0.9997j, -0.0500 + 1.7304j], "abs", 1e-3),
    "self_excited_oscillator": (self_excited_oscillator, [0.0013 + 2.5887j, 0.0037 + 0.5463j], "abs", 1e-3),
    "prismatic_beam": (prismatic_beam, [-0.0200 + 5.3361j], "abs", 1e-3),
    "bernoulli_beam": (lambda: bernoulli_beam(elements=5, sigma=1.0), [-0.1238 + 6.9995j], "rel", 1e-2),
}


@pytest.mark.parametrize("name", sorted(REFERENCE_EIGENVALUES))
def test_criterion_1_eigenvalues(report, name):
    builder, targets, kind, tol = REFERENCE_EIGENVALUES[name]
    start = time.perf_counter()
    ev = full_spectrum(builder())
    errors = []
    for target in targets:
        err = nearest_distance(ev, target)
        errors.append(err / abs(target) if kind == "rel" else err)
    found = [complex(np.round(ev[np.argmin(np.abs(ev - t))], 4)) for t in targets]
    passed = max(errors) <= tol
    note = ""
    if name == "bernoulli_beam":
        alt = full_spectrum(bernoulli_beam(elements=5, sigma=20.0))
        best = alt[np.argmin(np.abs(alt - targets[0]))]
        note = f"; diagnostic: sigma=20 gives {complex(np.round(best, 4))}"
    report(f"1 ({name})", passed,
           f"computed {found} vs reference {targets}; worst {kind} error {max(errors):.3g} (tol {tol:g}); "
           f"{time.perf_counter() - start:.2f} s{note}")
    assert passed


# ---------------------------------------------------------------- criterion 2

def residual_slope(model, sub, order):
    ssm = compute_autonomous_ssm(model, sub, order)
    # radii keep the order-7 residual well above the roundoff floor (~1e-15)
    r1 = autonomous_residual(model, ssm, radius=0.2, samples=16)["max_abs"]
    r2 = autonomous_residual(model, ssm, radius=0.1, samples=16)["max_abs"]
    return float(np.log2(r1 / r2))


@pytest.mark.parametrize("name", ["coupled_mathieu", "self_excited_oscillator"])
def test_criterion_2_autonomous_residual_order(report, name):
    model = coupled_mathieu() if name == "coupled_mathieu" else self_excited_oscillator()
    sub = master(model, mode_indices=[2]) if name == "coupled_mathieu" else master(model)
    slopes = {order: residual_slope(model, sub, order) for order in (3, 5, 7)}
    passed = all(abs(s - (order + 1)) <= 0.5 for order, s in slopes.items())
    detail = ", ".join(f"order {o}: slope {s:.2f} (expected {o + 1}+-0.5)" for o, s in slopes.items())
    report(f"2 (autonomous residual, {name})", passed, detail)
    assert passed


@pytest.mark.parametrize("name", ["coupled_mathieu", "self_excited_oscillator"])
def test_criterion_2_nonautonomous_halving(report, name):
    if name == "coupled_mathieu":
        model, omega = coupled_mathieu(), 3.5
        sub = master(model, mode_indices=[2])
        ref = 2 * sub.eigenvalues[0].imag
    else:
        model, omega = self_excited_oscillator(), 2.6
        sub = master(model)
        ref = sub.eigenvalues[0].imag
    auto = compute_autonomous_ssm(model, sub, 6)
    na = compute_nonautonomous_ssm(model, sub, auto, omega, order=5, resonance_frequency=ref)
    points = conjugate_symmetric_points(2, 1e-3, 8, 11)
    r1 = nonautonomous_residual(model, auto, na, 0.02, points=points)["max_abs"]
    r2 = nonautonomous_residual(model, auto, na, 0.01, points=points)["max_abs"]
    ratio = r1 / r2
    passed = 3.5 <= ratio <= 4.5
    report(f"2 (O(eps) residual halving, {name})", passed, f"ratio {ratio:.3f} (required [3.5, 4.5])")
    assert passed


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_path_equivalence(report):
    model = coupled_mathieu()
    sub = master(model, mode_indices=[2])
    ref = 2 * sub.eigenvalues[0].imag
    second = compute_autonomous_ssm(model, sub, 5)
    first = compute_autonomous_first(model, sub, 5)
    w_scale = max(np.max(np.abs(v)) for v in second.w.values())
    auto_dev = max(np.max(np.abs(first.W[m][: model.n] - w)) for m, w in second.w.items()) / w_scale
    red_dev = max(np.max(np.abs(first.R[m] - r)) / np.max(np.abs(r)) for m, r in second.R.items())
    n2 = compute_nonautonomous_ssm(model, sub, second, 3.5, order=5, resonance_frequency=ref)
    n1 = compute_nonautonomous_first(model, sub, first, 3.5, order=5, resonance_frequency=ref)
    x_scale = max(np.max(np.abs(v)) for v in n2.x.values())
    nonaut_dev = max(np.max(np.abs(n1.X[k][: model.n] - x)) for k, x in n2.x.items()) / x_scale
    s_dev = max(np.max(np.abs(n1.S[k] - s)) / np.max(np.abs(s)) for k, s in n2.S.items())
    worst = max(auto_dev, red_dev, nonaut_dev, s_dev)
    passed = worst <= 1e-8 and set(n1.S) == set(n2.S)
    report("3", passed, f"W {auto_dev:.2e}, R {red_dev:.2e}, X {nonaut_dev:.2e}, S {s_dev:.2e} (tol 1e-8)")
    assert passed


# ---------------------------------------------------------------- criterion 4

def dense_power(series_by_coord, power, dim, order):
    out = {zero(dim): 1.0 + 0j}
    for i, count in enumerate(power):
        for _ in range(count):
            nxt = {}
            for ma, ca in out.items():
                for mb, cb in series_by_coord[i].items():
                    h = tuple(x + y for x, y in zip(ma, mb))
                    if sum(h) <= order:
                        nxt[h] = nxt.get(h, 0) + ca * cb
            out = nxt
    return out


def test_criterion_4_composition_oracle(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    cases = 0
    for dim in (1, 2, 3):
        for coords in (1, 2, 3):
            for _ in range(6):
                series = {m: rng.standard_normal(coords) + 1j * rng.standard_normal(coords)
                          for m in indices_up_to(3, dim, min_order=1)}
                power = tuple(int(x) for x in rng.integers(0, 3, coords))
                by_coord = [{m: complex(v[i]) for m, v in series.items()} for i in range(coords)]
                expected = dense_power(by_coord, power, dim, 6)
                got = vector_power_coefficients(series, power, 6, dimension=dim)
                scale = max([abs(v) for v in expected.values()] + [1.0])
                for h in set(expected) | set(got):
                    worst = max(worst, abs(got.get(h, 0) - expected.get(h, 0)) / scale)
                cases += 1
    passed = worst <= 1e-12
    report("4", passed, f"{cases} random cubic series, M<=3, order 6: max relative deviation {worst:.2e} (tol 1e-12)")
    assert passed


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_mathieu_tongue(report, frozen_oracles):
    start = time.perf_counter()
    model = coupled_mathieu()
    sub = master(model, mode_indices=[2])
    auto = compute_autonomous_ssm(model, sub, 4)
    oracle = np.array(frozen_oracles["mathieu_tongue"]["boundary"])
    tongue = trace_tongue(model, sub, auto, oracle[:, 0], frozen_oracles["mathieu_tongue"]["eps_max"], order=3)
    omegas, eps = tongue.as_arrays()
    complete = len(omegas) == len(oracle) and np.allclose(omegas, oracle[:, 0])
    deviation = float(np.max(np.abs(eps / oracle[:, 1] - 1))) if complete else float("inf")
    tip = tongue.minimum().omega
    tip_err = abs(tip - 3.4609) / 3.4609
    elapsed = time.perf_counter() - start
    passed = complete and deviation <= 0.02 and tip_err <= 0.01 and elapsed < 120
    report("5", passed, f"minimum at Omega={tip:.4f} ({100 * tip_err:.2f}% from 3.4609, tol 1%); "
           f"max eps deviation vs full-system oracle {100 * deviation:.2f}% over {len(oracle)} points (tol 2%); "
           f"{elapsed:.1f} s")
    assert passed


# ---------------------------------------------------------------- criterion 6

@pytest.mark.slow
def test_criterion_6_beam_tongues(report, frozen_oracles):
    start = time.perf_counter()
    data = frozen_oracles["beam_tongue"]
    worst = {}
    for sigma, entry in data["sigmas"].items():
        model = bernoulli_beam(elements=5, sigma=float(sigma))
        sub = master(model)
        auto = compute_autonomous_ssm(model, sub, 4)
        oracle = np.array(entry["boundary"])
        tongue = trace_tongue(model, sub, auto, oracle[:, 0], data["eps_max"], order=3)
        omegas, eps = tongue.as_arrays()
        if len(omegas) != len(oracle) or not np.allclose(omegas, oracle[:, 0]):
            worst[sigma] = float("inf")
        else:
            worst[sigma] = float(np.max(np.abs(eps / oracle[:, 1] - 1)))
    elapsed = time.perf_counter() - start
    passed = max(worst.values()) <= 0.02 and elapsed < 300
    detail = ", ".join(f"sigma={s}: {100 * w:.2f}%" for s, w in worst.items())
    report("6", passed, f"max eps deviation vs full-system oracle (n=10, tol 2%): {detail}; {elapsed:.1f} s")
    assert passed


# ---------------------------------------------------------------- criterion 7

REFERENCE_SELF_EXCITED_TERMS = {
    ("R", (1, 0)), ("R", (2, 1)),
    ("S", (0, 1), 2), ("S", (2, 0), -1), ("S", (1, 1), 1), ("S", (3, 0), -2),
}


@pytest.fixture(scope="module")
def self_excited_tables():
    model = self_excited_oscillator()
    sub = master(model)
    auto = compute_autonomous_ssm(model, sub, 4)
    na = compute_nonautonomous_ssm(model, sub, auto, 2.6, order=3, resonance_frequency=sub.eigenvalues[0].imag)
    return model, sub, auto, na


def test_criterion_7_term_structure(report, self_excited_tables):
    _, _, auto, na = self_excited_tables
    rom = build_polar_rom(auto, na, 1, 1.0)
    terms = {("R", m) for m, v in auto.R.items() if v[0] != 0 and m[0] + m[1] <= 3}
    terms |= {("S", t.multi_index, t.kappa) for t in rom.forced}
    missing = REFERENCE_SELF_EXCITED_TERMS - terms
    extra = terms - REFERENCE_SELF_EXCITED_TERMS
    passed = not missing and not extra
    extra_detail = "; ".join(
        f"{t[1]},kappa={t[2]}: {1e4 * na.S[(t[1], t[2])][0]:.3f}" for t in sorted(extra) if t[0] == "S")
    report("7 (six-term normal form)", passed,
           f"missing {sorted(missing)}; extra terms with rescaled coefficients: {extra_detail or 'none'}")
    assert passed


def test_criterion_7_linear_coefficient(report, self_excited_tables):
    _, sub, auto, _ = self_excited_tables
    coefficient = 1e4 * complex(auto.R[(1, 0)][0])
    err = abs(coefficient.imag - 25887.3) / 25887.3
    passed = err <= 0.005
    report("7 (rescaled linear coefficient)", passed,
           f"Im = {coefficient.imag:.1f} vs 25887.3 ({100 * err:.3f}%, tol 0.5%); "
           f"Re = {coefficient.real:.2f} (quoted 1328.6 is not 1e4 Re(lambda_1); recorded, not asserted)")
    assert passed


@pytest.mark.slow
def test_criterion_7_frc_and_full_verification(report):
    start = time.perf_counter()
    model = self_excited_oscillator()
    sub = master(model)
    auto = compute_autonomous_ssm(model, sub, 6)
    omegas = np.linspace(2.55, 2.65, 21)
    frc = frc_sweep(model, sub, auto, omegas, order=5)
    counts = {}
    for p in frc:
        counts[p.omega] = counts.get(p.omega, 0) + 1
    loop_omega = max(counts, key=counts.get)
    ref = sub.eigenvalues[0].imag
    worst, checked, failures = 0.0, 0, []
    for p in frc:
        if not p.stable:
            continue
        na = compute_nonautonomous_ssm(model, sub, auto, p.omega, order=5, resonance_frequency=ref)
        orbit = lift_to_physical(auto, na, build_polar_rom(auto, na, 1, 1.0), p.rho, p.psi)
        full = verify_periodic_response(model, p.omega, 1.0, orbit.states[:, 0])
        dev = abs(full.amplitude / p.amplitude - 1)
        worst = max(worst, dev)
        checked += 1
        if dev > 0.02 or not full.stable:
            failures.append(p.omega)
    elapsed = time.perf_counter() - start
    passed = counts[loop_omega] >= 3 and checked > 0 and not failures and not frc.errors and elapsed < 300
    report("7 (FRC loop and full-system check)", passed,
           f"{len(frc)} points; {counts[loop_omega]} coexisting states at Omega={loop_omega:.3f}; "
           f"{checked} stable points shot, worst amplitude deviation {100 * worst:.2f}% (tol 2%); {elapsed:.1f} s")
    assert passed


# ---------------------------------------------------------------- criterion 8

@pytest.mark.slow
def test_criterion_8_isola(report):
    start = time.perf_counter()
    eps = 2e-3
    model = bernoulli_beam(elements=20, sigma=1.0, parametric_amplitude=45.0, parametric_harmonic=2,
                           external_amplitude=1.0, epsilon=eps)
    sub = master(model)
    auto = compute_autonomous_ssm(model, sub, 6)
    outdof = model.n - 2
    frc = frc_sweep(model, sub, auto, np.linspace(6.9, 7.3, 41), order=5, outdof=outdof)
    branches = split_branches(frc)
    isolas = [b for b in branches if b.isola]
    residual = max((p.residual for b in isolas for p in b.points), default=float("inf"))
    stable = [p for b in isolas for p in b.points if p.stable]
    deviation = float("inf")
    sample = None
    if stable:
        sample = min(stable, key=lambda p: abs(p.omega - 7.08))
        na = compute_nonautonomous_ssm(model, sub, auto, sample.omega, order=5,
                                       resonance_frequency=sub.eigenvalues[0].imag)
        rom = build_polar_rom(auto, na, 1, eps)
        orbit = lift_to_physical(auto, na, rom, sample.rho, sample.psi, outdof)
        full = verify_periodic_response(model, sample.omega, eps, orbit.states[:, 0], outdof=outdof)
        deviation = abs(full.amplitude / sample.amplitude - 1)
    elapsed = time.perf_counter() - start
    passed = bool(isolas) and residual <= 1e-10 and deviation <= 0.03 and elapsed < 600
    where = f"Omega {isolas[0].omega_range[0]:.2f}-{isolas[0].omega_range[1]:.2f}" if isolas else "none"
    report("8", passed, f"{len(isolas)} isola branch(es) ({where}); max isola |r| {residual:.1e} (tol 1e-10); "
           f"stable isola point at Omega={sample.omega if sample else float('nan'):.3f} matches full system "
           f"to {100 * deviation:.2f}% (tol 3%); {elapsed:.1f} s")
    assert passed


# ---------------------------------------------------------------- criterion 9

def jacobian_cases():
    # the polar ROM needs forcing near the master frequency; the subharmonic
    # parametric models (Mathieu, prismatic) are covered by the Floquet checks
    selfex = self_excited_oscillator()
    sub_s = master(selfex)
    isola_beam = bernoulli_beam(elements=5, parametric_amplitude=45.0, parametric_harmonic=2,
                                external_amplitude=1.0, epsilon=2e-3)
    sub_i = master(isola_beam)
    external_beam = bernoulli_beam(elements=5, parametric_amplitude=0.0, external_amplitude=1.0, epsilon=2e-3)
    sub_e = master(external_beam)
    return {
        "self_excited_oscillator": (selfex, sub_s, 2.6, 1.0),
        "bernoulli_beam (external + parametric)": (isola_beam, sub_i, 7.08, 2e-3),
        "bernoulli_beam (external)": (external_beam, sub_e, 7.02, 2e-3),
    }


def test_criterion_9_polar_jacobian(report):
    rng = np.random.default_rng(99)
    worst = {}
    for name, (model, sub, omega, eps) in jacobian_cases().items():
        auto = compute_autonomous_ssm(model, sub, 4)
        na = compute_nonautonomous_ssm(model, sub, auto, omega, order=3,
                                       resonance_frequency=sub.eigenvalues[0].imag)
        rom = build_polar_rom(auto, na, 1, eps)
        rho_max = default_rho_max(auto)
        err = 0.0
        for rho, psi in zip(rng.uniform(0.05, 1.0, 20) * rho_max, rng.uniform(0, 2 * np.pi, 20)):
            J = rom.polar_jacobian(rho, psi)
            h_rho, h_psi = 1e-6 * rho, 1e-6
            fd = np.column_stack([
                (rom.polar_field(rho + h_rho, psi) - rom.polar_field(rho - h_rho, psi)) / (2 * h_rho),
                (rom.polar_field(rho, psi + h_psi) - rom.polar_field(rho, psi - h_psi)) / (2 * h_psi),
            ])
            err = max(err, np.max(np.abs(J - fd)) / np.max(np.abs(J)))
        worst[name] = err
    passed = max(worst.values()) <= 1e-6
    report("9 (polar Jacobian vs finite differences)", passed,
           ", ".join(f"{k}: {v:.1e}" for k, v in worst.items()) + " (tol 1e-6)")
    assert passed


@pytest.mark.slow
def test_criterion_9_liouville(report, frozen_oracles):
    errors = {}
    mathieu = coupled_mathieu()
    sub = master(mathieu, mode_indices=[2])
    auto = compute_autonomous_ssm(mathieu, sub, 4)
    ref = 2 * sub.eigenvalues[0].imag
    for omega in (3.3, 3.46, 3.6):
        na = compute_nonautonomous_ssm(mathieu, sub, auto, omega, order=3, resonance_frequency=ref)
        for eps in (0.0, 0.3, 0.8):
            errors[f"mathieu full {omega},{eps}"] = full_system_monodromy(mathieu, omega, eps).liouville_error()
            errors[f"mathieu reduced {omega},{eps}"] = reduced_monodromy(auto, na, eps).liouville_error()
    for sigma in frozen_oracles["beam_tongue"]["sigmas"]:
        beam = bernoulli_beam(elements=5, sigma=float(sigma))
        sub_b = master(beam)
        auto_b = compute_autonomous_ssm(beam, sub_b, 4)
        omega = 2 * sub_b.eigenvalues[0].imag
        na = compute_nonautonomous_ssm(beam, sub_b, auto_b, omega, order=3, resonance_frequency=omega)
        errors[f"beam sigma={sigma} reduced"] = reduced_monodromy(auto_b, na, 4.0).liouville_error()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            errors[f"beam sigma={sigma} full"] = full_system_monodromy(beam, omega, 4.0).liouville_error()
    bad = {k: v for k, v in errors.items() if not v <= 1e-8}
    passed = not bad
    worst_ok = max(v for v in errors.values() if v <= 1e-8)
    report("9 (Liouville identity)", passed,
           f"{len(errors) - len(bad)}/{len(errors)} monodromies within 1e-8 (worst passing {worst_ok:.1e}); "
           f"failing: {', '.join(f'{k}={v:.3g}' for k, v in bad.items()) or 'none'}")
    assert passed


# ---------------------------------------------------------------- criterion 10

def test_criterion_10_exclusions_documented(report):
    text = README.read_text().lower()
    topics = ("wall-clock", "50,000", "collocation")
    present = [t for t in topics if t in text]
    passed = len(present) == len(topics)
    report("10", passed, f"excluded claims listed in README: {present} (wall-clock timing tables, 50,000-DOF "
           "sweep and collocation parameter tables are not reproduced)")
    assert passed
