"""Reference SSM computation on the first-order form ``B z' = A z + F(z) + eps G``.

Every homological equation here is ``N``-dimensional. The second-order
solvers are the fast path; this module serves user-supplied first-order
systems and acts as an independent cross-check for lifted models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .model import FirstOrderModel, SecondOrderModel, require_periodic
from .multiindex import MultiIndex, enumerate_indices, unit
from .spectral import MasterSubspace
from .ssm_autonomous import (
    PolynomialComposer,
    SeriesTable,
    canonical_representatives,
    conjugate_index,
    conjugate_vector,
    contract_jacobian,
    default_resonance_tolerance,
    mixing_sum,
    solve_homological,
)
from .ssm_nonautonomous import canonical_harmonic_pairs

__all__ = ["FirstOrderSSM", "compute_autonomous_first", "compute_nonautonomous_first"]


@dataclass(eq=False)
class FirstOrderSSM:
    """Coefficient tables of the first-order path.

    ``W``/``R`` hold the autonomous part; ``X``/``S`` the O(eps) part at
    ``omega`` (empty until :func:`compute_nonautonomous_first` is called).
    """

    subspace: MasterSubspace
    order: int
    W: Dict[MultiIndex, np.ndarray]
    R: Dict[MultiIndex, np.ndarray]
    resonance_log: List[Tuple[MultiIndex, int]]
    tolerance: float
    omega: float | None = None
    X: Dict[Tuple[MultiIndex, int], np.ndarray] = field(default_factory=dict)
    S: Dict[Tuple[MultiIndex, int], np.ndarray] = field(default_factory=dict)
    nonaut_log: List[Tuple[MultiIndex, int, int]] = field(default_factory=list)
    harmonics: List[int] = field(default_factory=list)

    @property
    def M(self) -> int:
        return self.subspace.M

    def phase_table(self) -> SeriesTable:
        return SeriesTable(self.W, self.M, len(next(iter(self.W.values()))))

    def reduced_table(self) -> SeriesTable:
        return SeriesTable(self.R, self.M, self.M)


def _as_first(model) -> FirstOrderModel:
    return model.lifted() if isinstance(model, SecondOrderModel) else model


def compute_autonomous_first(model, subspace: MasterSubspace, order: int,
                             resonance_tolerance: float | None = None) -> FirstOrderSSM:
    """Autonomous SSM from ``(A - Lambda_m B) W_m = sum_j B v_j R^j_m + C_m``.

    Resonant reduced coefficients are ``R^i_m = -u_i^* C_m`` with
    ``C_m = B V_m - F_m``, which makes ``u_i^* B W_m = 0``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    fom = _as_first(model)
    A, B = fom.A, fom.B
    N = fom.N
    lam = subspace.eigenvalues
    Mdim = subspace.M
    Vv, Uu = subspace.V, subspace.U
    tol = default_resonance_tolerance(subspace) if resonance_tolerance is None else float(resonance_tolerance)
    W: Dict[MultiIndex, np.ndarray] = {}
    R: Dict[MultiIndex, np.ndarray] = {}
    for j in range(Mdim):
        e = unit(j, Mdim)
        W[e] = Vv[:, j].copy()
        r = np.zeros(Mdim, dtype=complex)
        r[j] = lam[j]
        R[e] = r
    log: List[Tuple[MultiIndex, int]] = []
    composer = PolynomialComposer(fom.F, N)
    BV = B @ Vv
    for k in range(2, order + 1):
        Fk = composer.coefficients(W, Mdim, k, min_order=k)
        R_high = {m: r for m, r in R.items() if sum(m) >= 2}
        new_W, new_R = {}, {}
        for m in canonical_representatives(list(enumerate_indices(k, Mdim))):
            Lam = complex(np.dot(lam, m))
            Vm = mixing_sum(W, R_high, m, 2, k - 1, N)
            Cm = B @ Vm - Fk.get(m, np.zeros(N, dtype=complex))
            resonant = [i for i in range(Mdim) if abs((lam[i] - Lam).imag) < tol]
            Rm = np.zeros(Mdim, dtype=complex)
            for i in resonant:
                Rm[i] = -np.vdot(Uu[:, i], Cm)
            L = A - Lam * B
            rhs = BV @ Rm + Cm
            nearest = lam[int(np.argmin(np.abs(lam - Lam)))]
            Wm = solve_homological(L, rhs, resonant, lambda i: (Uu[:, i].conj() @ B, 0.0), f"m={m}", nearest)
            new_W[m] = Wm
            if np.any(Rm != 0):
                new_R[m] = Rm
            log.extend((m, i) for i in resonant)
            cm = conjugate_index(m)
            if cm != m:
                new_W[cm] = np.conj(Wm)
                if np.any(Rm != 0):
                    new_R[cm] = conjugate_vector(Rm)
                log.extend((cm, subspace.conjugate_slot(i)) for i in resonant)
        W.update(new_W)
        R.update(new_R)
    log.sort()
    return FirstOrderSSM(subspace, order, W, R, log, tol)


def compute_nonautonomous_first(model, subspace: MasterSubspace, auto: FirstOrderSSM, omega: float,
                                order: int | None = None, resonance_tolerance: float | None = None,
                                resonance_frequency: float | None = None) -> FirstOrderSSM:
    """O(eps) tables from ``(A - Lambda_{m,kappa} B) X = sum_j B v_j S^j + C_{m,kappa}``.

    ``C_{m,kappa} = B V_{m,kappa} - [DF(W) X]_{m,kappa} - [G(W)]_{m,kappa}`` and
    resonant ``S^i = -u_i^* C_{m,kappa}``; at ``m = 0`` this reduces to
    ``S^i_{0,kappa} = u_i^* G_{0,kappa}``. Returns a copy of ``auto`` with the
    non-autonomous tables filled in.
    """
    fom = _as_first(model)
    require_periodic(fom.frequency_count)
    A, B = fom.A, fom.B
    N = fom.N
    lam = subspace.eigenvalues
    Mdim = subspace.M
    Vv, Uu = subspace.V, subspace.U
    order = auto.order if order is None else int(order)
    omega_ref = float(omega) if resonance_frequency is None else float(resonance_frequency)
    tol = auto.tolerance if resonance_tolerance is None else float(resonance_tolerance)
    by_harm: Dict[int, Dict[MultiIndex, np.ndarray]] = {}
    for (nidx, kap), vec in fom.G.items():
        by_harm.setdefault(kap, {})[nidx] = vec
    harmonics = sorted(by_harm)
    Gco = {kap: PolynomialComposer(t, N).coefficients(auto.W, Mdim, order) for kap, t in by_harm.items()}
    jac = PolynomialComposer(fom.F, N).jacobian_tables(auto.W, Mdim, order)
    R_high = {m: r for m, r in auto.R.items() if sum(m) >= 2}
    BV = B @ Vv
    X: Dict[Tuple[MultiIndex, int], np.ndarray] = {}
    S: Dict[Tuple[MultiIndex, int], np.ndarray] = {}
    log: List[Tuple[MultiIndex, int, int]] = []
    zero_N = np.zeros(N, dtype=complex)
    for k in range(0, order + 1):
        new_X, new_S = {}, {}
        for (m, kap) in canonical_harmonic_pairs(list(enumerate_indices(k, Mdim)), harmonics):
            Lam = complex(np.dot(lam, m)) + 1j * kap * omega
            Lam_ref = complex(np.dot(lam, m)) + 1j * kap * omega_ref
            S_k = {mm: v for (mm, kk), v in S.items() if kk == kap}
            X_k = {mm: v for (mm, kk), v in X.items() if kk == kap}
            Vm = mixing_sum(auto.W, S_k, m, 2, k + 1, N) + mixing_sum(X_k, R_high, m, 1, k - 1, N)
            dterm = contract_jacobian(jac, lambda h: X_k.get(h), m, N) if jac else zero_N
            Cm = B @ Vm - dterm - Gco.get(kap, {}).get(m, zero_N)
            resonant = [i for i in range(Mdim) if abs((lam[i] - Lam_ref).imag) < tol]
            Sm = np.zeros(Mdim, dtype=complex)
            for i in resonant:
                Sm[i] = -np.vdot(Uu[:, i], Cm)
            L = A - Lam * B
            nearest = lam[int(np.argmin(np.abs(lam - Lam)))]
            Xm = solve_homological(L, BV @ Sm + Cm, resonant, lambda i: (Uu[:, i].conj() @ B, 0.0),
                                   f"m={m}, kappa={kap}", nearest)
            new_X[(m, kap)] = Xm
            if np.any(Sm != 0):
                new_S[(m, kap)] = Sm
            log.extend((m, kap, i) for i in resonant)
            partner = (conjugate_index(m), -kap)
            if partner != (m, kap):
                new_X[partner] = np.conj(Xm)
                if np.any(Sm != 0):
                    new_S[partner] = conjugate_vector(Sm)
                log.extend((partner[0], partner[1], subspace.conjugate_slot(i)) for i in resonant)
        X.update(new_X)
        S.update(new_S)
    log.sort()
    return FirstOrderSSM(subspace, auto.order, auto.W, auto.R, auto.resonance_log, auto.tolerance,
                         float(omega), X, S, log, harmonics)
