"""First-order-in-forcing SSM correction for periodic excitation.

The time-periodic manifold is ``y = w(p) + eps x(p, phi)`` with reduced
dynamics ``p' = R(p) + eps S(p, phi)``, ``phi = Omega t``; ``x`` and ``S``
are expanded in monomials ``p^m`` and harmonics ``exp(i kappa phi)``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .model import SecondOrderModel, require_periodic
from .multiindex import MultiIndex, enumerate_indices, zero
from .spectral import MasterSubspace
from .ssm_autonomous import (
    AutonomousSSM,
    PolynomialComposer,
    SeriesTable,
    conjugate_index,
    conjugate_symmetric_points,
    conjugate_vector,
    contract_jacobian,
    default_resonance_tolerance,
    mixing_sum,
    solve_homological,
)

__all__ = [
    "NonAutonomousSSM",
    "compute_nonautonomous_ssm",
    "reconstruct_velocity_nonaut",
    "sweep_frequencies",
    "nonautonomous_residual",
    "canonical_harmonic_pairs",
]

Key = Tuple[MultiIndex, int]


@dataclass(eq=False)
class NonAutonomousSSM:
    """O(eps) coefficient tables at one forcing frequency.

    Attributes
    ----------
    omega : float
        Forcing frequency.
    harmonics : list of int
        Harmonic support, closed under negation.
    x, xdot : dict
        ``(m, kappa) -> n-vector``.
    S : dict
        ``(m, kappa) -> M-vector``; nonzero entries only.
    resonance_log : list of (m, kappa, i)
    order : int
        Highest ``|m|`` solved.
    """

    omega: float
    harmonics: List[int]
    order: int
    x: Dict[Key, np.ndarray]
    xdot: Dict[Key, np.ndarray]
    S: Dict[Key, np.ndarray]
    resonance_log: List[Tuple[MultiIndex, int, int]]
    tolerance: float
    reference_frequency: float
    subspace: MasterSubspace = field(repr=False, default=None)
    style: str = "lifted"

    def harmonic_table(self, kappa: int, which: str = "x") -> SeriesTable:
        src = {"x": self.x, "xdot": self.xdot, "S": self.S}[which]
        coeffs = {m: v for (m, k), v in src.items() if k == kappa}
        M = self.subspace.M
        size = M if which == "S" else len(next(iter(self.x.values())))
        return SeriesTable(coeffs, M, size)

    def phase_space(self) -> Dict[Key, np.ndarray]:
        return {key: np.concatenate([self.x[key], self.xdot[key]]) for key in self.x}


def canonical_harmonic_pairs(indices: Sequence[MultiIndex], harmonics: Sequence[int]) -> List[Key]:
    """One ``(m, kappa)`` per conjugate pair ``{(m, kappa), (conj m, -kappa)}``."""
    seen = set()
    out = []
    for kap in harmonics:
        for m in indices:
            key = (m, kap)
            if key in seen:
                continue
            partner = (conjugate_index(m), -kap)
            seen.add(key)
            seen.add(partner)
            out.append(max(key, partner))
    return out


def _forcing_by_harmonic(model: SecondOrderModel) -> Dict[int, Dict[MultiIndex, np.ndarray]]:
    out: Dict[int, Dict[MultiIndex, np.ndarray]] = {}
    for (nidx, kap), vec in model.forcing.first_order_terms().items():
        out.setdefault(kap, {})[nidx] = vec
    return out


def _forcing_coefficients(by_harmonic, series, M, order):
    """``kappa -> (m -> sum_n g_{n,kappa} H_{n,m})`` including the constant term."""
    out = {}
    for kap, terms in by_harmonic.items():
        comp = PolynomialComposer(terms, len(next(iter(series.values()))))
        out[kap] = comp.coefficients(series, M, order, min_order=0)
    return out


def compute_nonautonomous_ssm(model: SecondOrderModel, subspace: MasterSubspace, auto: AutonomousSSM,
                              omega: float, order: int | None = None,
                              resonance_tolerance: float | None = None,
                              resonance_frequency: float | None = None,
                              style: str | None = None,
                              _solve_order=None) -> NonAutonomousSSM:
    """Solve the O(eps) invariance equations at one forcing frequency.

    Parameters
    ----------
    model : SecondOrderModel
    subspace : MasterSubspace
    auto : AutonomousSSM
        Autonomous tables; terms needing autonomous coefficients above
        ``auto.order`` are truncated, so compute ``auto`` one order higher
        than ``order`` for a consistent expansion.
    omega : float
        Forcing frequency; all coefficients are evaluated here.
    order : int, optional
        Highest ``|m|`` solved; defaults to ``auto.order``.
    resonance_tolerance : float, optional
        Threshold on ``|Im(lambda_i - Lambda.m - i kappa Omega_ref)|``.
    resonance_frequency : float, optional
        ``Omega_ref`` used only for resonance detection, so that the set of
        retained reduced terms stays fixed across a frequency sweep; defaults
        to ``omega``.
    style : {"lifted", "displacement"}, optional
        Solvability convention; defaults to the autonomous one.

    Returns
    -------
    NonAutonomousSSM
    """
    require_periodic(model.frequency_count)
    style = auto.style if style is None else style
    order = auto.order if order is None else int(order)
    if order < 0:
        raise ValueError("order must be >= 0")
    omega_ref = float(omega) if resonance_frequency is None else float(resonance_frequency)
    tol = default_resonance_tolerance(subspace) if resonance_tolerance is None else float(resonance_tolerance)
    Mm, Cm, Km = model.mass, model.damping, model.stiffness
    n = model.n
    lam = subspace.eigenvalues
    Mdim = subspace.M
    phi, theta = subspace.phi, subspace.theta
    by_harm = _forcing_by_harmonic(model)
    harmonics = sorted(by_harm)

    series = auto.phase_space()
    gco = _forcing_coefficients(by_harm, series, Mdim, order)
    jac = PolynomialComposer(model.nonlinearity.first_order_terms(), 2 * n).jacobian_tables(series, Mdim, order)
    w, wd = auto.w, auto.wdot
    R_high = {m: r for m, r in auto.R.items() if sum(m) >= 2}

    x: Dict[Key, np.ndarray] = {}
    xd: Dict[Key, np.ndarray] = {}
    S: Dict[Key, np.ndarray] = {}
    log: List[Tuple[MultiIndex, int, int]] = []
    zero_n = np.zeros(n, dtype=complex)

    for k in range(0, order + 1):
        indices = list(enumerate_indices(k, Mdim))
        keys = canonical_harmonic_pairs(indices, harmonics)
        if _solve_order is not None:
            keys = list(_solve_order(keys))
        new_x, new_xd, new_S = {}, {}, {}
        for (m, kap) in keys:
            Lam = complex(np.dot(lam, m)) + 1j * kap * omega
            Lam_ref = complex(np.dot(lam, m)) + 1j * kap * omega_ref
            S_k = {mm: v for (mm, kk), v in S.items() if kk == kap}
            x_k = {mm: v for (mm, kk), v in x.items() if kk == kap}
            xd_k = {mm: v for (mm, kk), v in xd.items() if kk == kap}
            # w_u S_k with |u| >= 2, plus x_u R_k with |k| >= 2
            V = mixing_sum(w, S_k, m, 2, k + 1, n) + mixing_sum(x_k, R_high, m, 1, k - 1, n)
            Vd = mixing_sum(wd, S_k, m, 2, k + 1, n) + mixing_sum(xd_k, R_high, m, 1, k - 1, n)

            def lookup(h, kap=kap):
                if (h, kap) not in x:
                    return None
                return np.concatenate([x[(h, kap)], xd[(h, kap)]])

            dterm = contract_jacobian(jac, lookup, m, n) if jac else zero_n
            gterm = gco.get(kap, {}).get(m, zero_n)
            Y = Cm @ V + Mm @ Vd + dterm - gterm
            Cvec = -(Lam * (Mm @ V) + Y)
            resonant = [i for i in range(Mdim) if abs((lam[i] - Lam_ref).imag) < tol]
            Sm = np.zeros(Mdim, dtype=complex)
            if resonant:
                if style == "lifted":
                    for i in resonant:
                        Sm[i] = -np.vdot(theta[:, i], Y + lam[i] * (Mm @ V))
                else:
                    P = np.array([[np.vdot(theta[:, i], ((Lam + lam[j]) * Mm + Cm) @ phi[:, j])
                                   for j in resonant] for i in resonant])
                    rhs = np.array([np.vdot(theta[:, i], Cvec) for i in resonant])
                    Sm[resonant] = np.linalg.solve(P, rhs)
            Dm = np.column_stack([-(((Lam + lam[j]) * Mm + Cm) @ phi[:, j]) for j in range(Mdim)])
            rhs = Dm @ Sm + Cvec
            L = Km + Lam * Cm + Lam * Lam * Mm

            def constraint(i, Lam=Lam, Sm=Sm, V=V):
                if style == "lifted":
                    row = theta[:, i].conj() @ (Cm + (lam[i] + Lam) * Mm)
                    return row, -np.vdot(theta[:, i], Mm @ (phi @ Sm + V))
                return theta[:, i].conj() @ Mm, 0.0

            nearest = lam[int(np.argmin(np.abs(lam - Lam)))]
            xm = solve_homological(L, rhs, resonant, constraint, f"m={m}, kappa={kap}", nearest)
            xdm = Lam * xm + phi @ Sm + V
            new_x[(m, kap)], new_xd[(m, kap)] = xm, xdm
            if np.any(Sm != 0):
                new_S[(m, kap)] = Sm
            log.extend((m, kap, i) for i in resonant)
            partner = (conjugate_index(m), -kap)
            if partner != (m, kap):
                new_x[partner], new_xd[partner] = np.conj(xm), np.conj(xdm)
                if np.any(Sm != 0):
                    new_S[partner] = conjugate_vector(Sm)
                log.extend((partner[0], partner[1], subspace.conjugate_slot(i)) for i in resonant)
        x.update(new_x)
        xd.update(new_xd)
        S.update(new_S)
    log.sort()
    return NonAutonomousSSM(float(omega), harmonics, order, x, xd, S, log, tol, omega_ref, subspace, style)


def reconstruct_velocity_nonaut(auto: AutonomousSSM, nonaut: NonAutonomousSSM, m: MultiIndex,
                                kappa: int) -> np.ndarray:
    """``[Dw S + Dx R + Omega d_phi x]`` at ``(m, kappa)`` by direct summation."""
    m = tuple(m)
    n = len(next(iter(auto.w.values())))
    S_k = {mm: v for (mm, kk), v in nonaut.S.items() if kk == kappa}
    x_k = {mm: v for (mm, kk), v in nonaut.x.items() if kk == kappa}
    out = mixing_sum(auto.w, S_k, m, 1, sum(m) + 1, n)
    out += mixing_sum(x_k, auto.R, m, 0, sum(m), n)
    out += 1j * kappa * nonaut.omega * x_k.get(m, np.zeros(n, dtype=complex))
    return out


def _sweep_worker(args):
    model, subspace, auto, omega, kwargs = args
    try:
        return compute_nonautonomous_ssm(model, subspace, auto, omega, **kwargs), None
    except Exception as exc:  # per-frequency failures are collected, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def sweep_frequencies(model, subspace, auto, omegas: Sequence[float], order: int | None = None,
                      jobs: int = 1, **kwargs) -> Tuple[List[NonAutonomousSSM | None], Dict[float, str]]:
    """Independent non-autonomous solves on a frequency list.

    Returns the results in input order (``None`` where a frequency failed)
    and a map ``omega -> error message``.
    """
    kwargs = dict(kwargs, order=order)
    tasks = [(model, subspace, auto, float(om), kwargs) for om in omegas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_sweep_worker, tasks))
    else:
        out = [_sweep_worker(t) for t in tasks]
    results = [r for r, _ in out]
    errors = {float(om): err for om, (_, err) in zip(omegas, out) if err is not None}
    return results, errors


def nonautonomous_residual(model: SecondOrderModel, auto: AutonomousSSM, nonaut: NonAutonomousSSM,
                           epsilon: float, points=None, phases=None, radius: float = 0.01,
                           samples: int = 8, seed: int = 0) -> dict:
    """Full invariance residual of ``W + eps X`` with reduced dynamics ``R + eps S``.

    Evaluated in first-order form ``B (D_p W_eps R_eps + Omega d_phi W_eps) -
    A W_eps - F(W_eps) - eps G(phi, W_eps)`` at reduced points of norm
    ``radius`` and phases drawn with a fixed seed.
    """
    fom = model.lifted()
    Mdim = auto.M
    if points is None:
        points = conjugate_symmetric_points(Mdim, radius, samples, seed)
    P = np.asarray(points, dtype=complex)
    K = P.shape[1]
    if phases is None:
        phases = np.random.default_rng(seed + 1).uniform(0, 2 * np.pi, K)
    phases = np.asarray(phases, dtype=float)
    Wt, Rt = auto.phase_table(), auto.reduced_table()
    ps = nonaut.phase_space()
    res_norm = np.zeros(K)
    scale = 0.0
    Om = nonaut.omega
    tabs = {}
    for kap in nonaut.harmonics:
        tabs[kap] = (
            SeriesTable({m: v for (m, kk), v in ps.items() if kk == kap}, Mdim, 2 * model.n),
            SeriesTable({m: v for (m, kk), v in nonaut.S.items() if kk == kap}, Mdim, Mdim),
        )
    for c in range(K):
        p = P[:, c]
        ph = phases[c]
        Xv = np.zeros(2 * model.n, dtype=complex)
        Sv = np.zeros(Mdim, dtype=complex)
        dphiX = np.zeros(2 * model.n, dtype=complex)
        for kap, (Xt, St) in tabs.items():
            e = np.exp(1j * kap * ph)
            xv = Xt.value(p)
            Xv += e * xv
            dphiX += 1j * kap * e * xv
            Sv += e * St.value(p)
        Rp = Rt.value(p)
        Reps = Rp + epsilon * Sv
        Weps = Wt.value(p) + epsilon * Xv
        DW = Wt.derivative(p, Reps)
        DX = np.zeros(2 * model.n, dtype=complex)
        for kap, (Xt, _) in tabs.items():
            DX += np.exp(1j * kap * ph) * Xt.derivative(p, Reps)
        lhs = fom.B @ (DW + epsilon * DX + epsilon * Om * dphiX)
        rhs = fom.rhs_complex(Weps, ph / Om if Om else 0.0, Om, epsilon)
        res_norm[c] = np.linalg.norm(lhs - rhs)
        scale = max(scale, np.linalg.norm(fom.A @ Weps))
    return {"max_abs": float(res_norm.max()), "max_rel": float(res_norm.max() / max(scale, 1e-300)),
            "scale": float(scale)}
