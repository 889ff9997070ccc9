"""Floquet stability of the trivial response and the full-system oracle.

Reduced monodromies come from the SSM-reduced linearization about ``p = 0``;
full monodromies integrate the ``N``-dimensional variational equations.
Tongue boundaries are bracketed per frequency in ``eps`` and refined with
Brent's method.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import FirstOrderModel, ModelError, SecondOrderModel, require_periodic
from .spectral import MasterSubspace
from .ssm_autonomous import SeriesTable

__all__ = [
    "FloquetError",
    "MonodromyResult",
    "TongueBoundary",
    "SubharmonicPoint",
    "FullSystem",
    "linear_reduced_generator",
    "reduced_monodromy",
    "full_system_monodromy",
    "trace_tongue",
    "subharmonic_branch",
    "integrate_full",
    "shoot_periodic_orbit",
    "ShootingResult",
    "FullResponse",
    "verify_periodic_response",
]

FULL_SIZE_LIMIT = 200
ODE_TOL = 1e-10
STIFF_RATIO = 2e3
ESCAPE_FACTOR = 10.0


class FloquetError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MonodromyResult:
    """Floquet multipliers over ``period``.

    ``log_det_liouville`` is ``int_0^T trace`` of the linear vector field,
    so ``sum(log|mu|)`` should match its real part.
    """

    multipliers: np.ndarray
    period: float
    matrix: np.ndarray = field(repr=False, default=None)
    log_det_liouville: float = float("nan")

    @property
    def max_modulus(self) -> float:
        return float(np.max(np.abs(self.multipliers)))

    @property
    def distance_to_minus_one(self) -> float:
        return float(np.min(np.abs(self.multipliers + 1)))

    @property
    def dominant(self) -> complex:
        return complex(self.multipliers[int(np.argmax(np.abs(self.multipliers)))])

    def liouville_error(self) -> float:
        """Relative mismatch between ``prod mu`` and ``exp(int trace)``."""
        with np.errstate(divide="ignore"):
            log_prod = float(np.sum(np.log(np.abs(self.multipliers))))
        try:
            return abs(math.expm1(log_prod - self.log_det_liouville))
        except OverflowError:
            return float("inf")


# ---------------------------------------------------------------- full system

def _first(model) -> FirstOrderModel:
    return model.lifted() if isinstance(model, SecondOrderModel) else model


def _inverse_b(fom: FirstOrderModel) -> np.ndarray:
    """``B^{-1}``; block formula for lifted models, where ``cond(B) ~ cond(M)^2``."""
    n = fom.n_second
    if not n:
        return np.linalg.inv(fom.B)
    Minv = np.linalg.inv(fom.B[n:, :n])
    C = fom.B[:n, :n]
    return np.block([[np.zeros((n, n)), Minv], [Minv, -Minv @ C @ Minv]])


class FullSystem:
    """Real explicit form ``z' = B^{-1}(A z + F(z) + eps G(Omega t, z))``.

    For lifted second-order models the velocity block is kept explicit
    (``y'' = M^{-1}(...)``); the state ordering is ``[y; y']``.
    """

    def __init__(self, model, omega: float, epsilon: float | None = None):
        fom = _first(model)
        require_periodic(fom.frequency_count)
        self.fom = fom
        self.omega = float(omega)
        self.epsilon = fom.epsilon if epsilon is None else float(epsilon)
        fom.b_factor()
        self.Binv = _inverse_b(fom)
        self.Alin = self.Binv @ fom.A
        self.N = fom.N
        self._f = fom.f_poly()
        self._g = fom.g_polys()
        self._glin = {k: self.Binv @ v for k, v in fom.linear_forcing().items()}
        self._nonlinear_g = {k: p for k, p in self._g.items() if p.size and np.any(p.exps.sum(axis=1) > 1)}

    def rhs(self, t: float, z: np.ndarray) -> np.ndarray:
        out = self.fom.A @ z + self._f.value(z).real if self._f.size else self.fom.A @ z
        if self.epsilon:
            acc = np.zeros(self.N, dtype=complex)
            for kap, poly in self._g.items():
                acc += np.exp(1j * kap * self.omega * t) * poly.value(z)
            out = out + self.epsilon * acc.real
        return self.Binv @ out

    def jacobian(self, t: float, z: np.ndarray) -> np.ndarray:
        J = self.fom.A + self._f.jacobian(z).real if self._f.size else self.fom.A.copy()
        if self.epsilon:
            acc = np.zeros((self.N, self.N), dtype=complex)
            for kap, poly in self._g.items():
                acc += np.exp(1j * kap * self.omega * t) * poly.jacobian(z)
            J = J + self.epsilon * acc.real
        return self.Binv @ J

    def linear_generator(self, t: float) -> np.ndarray:
        """Variational matrix about ``z = 0``."""
        out = self.Alin.astype(complex)
        if self.epsilon:
            for kap, mat in self._glin.items():
                out = out + self.epsilon * np.exp(1j * kap * self.omega * t) * mat
        return out.real

    def stiffness_ratio(self) -> float:
        """``max |lambda| T`` for one forcing period; large values need implicit integration."""
        w = np.linalg.eigvals(self.Alin)
        return float(np.max(np.abs(w)) * 2 * np.pi / self.omega)

    def trace_integral(self, period: float) -> float:
        """``int_0^T trace`` of the variational matrix; only non-oscillating parts survive."""
        val = np.trace(self.Alin) * period
        if self.epsilon and 0 in self._glin:
            val += self.epsilon * np.trace(self._glin[0]).real * period
        return float(val)

    def has_constant_forcing(self) -> bool:
        return any(np.any(v != 0) for v in self.fom.constant_forcing().values())


def integrate_full(model, omega: float, epsilon: float, z0: np.ndarray, t_span: Tuple[float, float],
                   t_eval=None, method: str | None = None, rtol: float = ODE_TOL, atol: float = ODE_TOL):
    """Integrate the full real system; ``method`` defaults by stiffness (DOP853 or LSODA)."""
    sysf = FullSystem(model, omega, epsilon)
    if method is None:
        method = "LSODA" if sysf.stiffness_ratio() > STIFF_RATIO * 10 else "DOP853"
    kw = {"jac": sysf.jacobian} if method in ("Radau", "BDF", "LSODA") else {}
    sol = solve_ivp(sysf.rhs, t_span, np.asarray(z0, dtype=float), method=method, t_eval=t_eval,
                    rtol=rtol, atol=atol, **kw)
    if not sol.success:
        raise FloquetError(f"full-system integration failed: {sol.message}")
    return sol


def _variational_flow(sysf: FullSystem, z0: np.ndarray, period: float, method: str):
    N = sysf.N

    def rhs(t, y):
        z = y[:N]
        Phi = y[N:].reshape(N, N)
        return np.concatenate([sysf.rhs(t, z), (sysf.jacobian(t, z) @ Phi).ravel()])

    y0 = np.concatenate([z0, np.eye(N).ravel()])
    sol = solve_ivp(rhs, (0.0, period), y0, method=method, rtol=ODE_TOL, atol=ODE_TOL)
    if not sol.success:
        raise FloquetError(f"variational integration failed: {sol.message}")
    yT = sol.y[:, -1]
    return yT[:N], yT[N:].reshape(N, N)


def _magnus_monodromy(sysf: FullSystem, period: float, steps: int) -> np.ndarray:
    """Fourth-order Magnus integrator with two Gauss points per step."""
    h = period / steps
    offs = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
    Phi = np.eye(sysf.N)
    for k in range(steps):
        t0 = k * h
        A1 = sysf.linear_generator(t0 + offs[0] * h)
        A2 = sysf.linear_generator(t0 + offs[1] * h)
        Om = 0.5 * h * (A1 + A2) + (math.sqrt(3) / 12) * h * h * (A2 @ A1 - A1 @ A2)
        Phi = sla.expm(Om) @ Phi
    return Phi


def full_system_monodromy(model, omega: float, epsilon: float | None = None, period_multiplier: int = 1,
                          method: str = "auto", magnus_steps: int = 400) -> MonodromyResult:
    """Monodromy of the full linearization about ``z = 0``.

    Parameters
    ----------
    model : SecondOrderModel or FirstOrderModel
        Parametric-only forcing, so that ``z = 0`` is a solution.
    omega : float
    epsilon : float, optional
    period_multiplier : int
        Integrate over this many forcing periods.
    method : {"auto", "dop853", "magnus"}
        ``auto`` picks the Magnus exponential integrator for stiff spectra.
    magnus_steps : int
        Steps per forcing period for the Magnus integrator.

    Raises
    ------
    FloquetError
        System larger than 200 states, or ``z = 0`` not invariant.
    """
    fom = _first(model)
    if fom.N > FULL_SIZE_LIMIT:
        raise FloquetError(f"full-system monodromy limited to N <= {FULL_SIZE_LIMIT} (got {fom.N}); "
                           "use the reduced monodromy instead")
    sysf = FullSystem(fom, omega, epsilon)
    if sysf.epsilon and sysf.has_constant_forcing():
        raise FloquetError("trivial orbit not invariant: forcing has a state-independent term")
    period = 2 * np.pi / omega
    if method == "auto":
        method = "magnus" if sysf.stiffness_ratio() > STIFF_RATIO else "dop853"
    if method == "magnus":
        P1 = _magnus_monodromy(sysf, period, magnus_steps)
    elif method == "dop853":
        def rhs(t, y):
            return (sysf.linear_generator(t) @ y.reshape(sysf.N, sysf.N)).ravel()
        sol = solve_ivp(rhs, (0.0, period), np.eye(sysf.N).ravel(), method="DOP853", rtol=ODE_TOL, atol=ODE_TOL)
        if not sol.success:
            raise FloquetError(f"variational integration failed: {sol.message}")
        P1 = sol.y[:, -1].reshape(sysf.N, sysf.N)
    else:
        raise ValueError(f"unknown method {method!r}")
    P = np.linalg.matrix_power(P1, int(period_multiplier))
    mult = np.linalg.eigvals(P)
    return MonodromyResult(mult, period * period_multiplier, P,
                           sysf.trace_integral(period * period_multiplier))


# ---------------------------------------------------------------- reduced system

def _real_basis(M: int) -> np.ndarray:
    """``p = T q`` with ``p_{2k} = q_{2k} + i q_{2k+1}`` and its conjugate in slot ``2k+1``."""
    T = np.zeros((M, M), dtype=complex)
    for k in range(0, M, 2):
        T[k, k], T[k, k + 1] = 1, 1j
        T[k + 1, k], T[k + 1, k + 1] = 1, -1j
    return T


def linear_reduced_generator(auto, nonaut, epsilon: float):
    """Linear part about ``p = 0``: ``(Lambda, {kappa: S1_kappa})``.

    ``S1_kappa[:, j] = S_{e_j, kappa}``. Raises when a state-independent
    coefficient ``S_{0,kappa}`` is nonzero.
    """
    M = auto.M
    Lam = np.zeros((M, M), dtype=complex)
    for m, v in auto.R.items():
        if sum(m) == 1:
            Lam[:, m.index(1)] += v
    lin: Dict[int, np.ndarray] = {}
    for (m, kap), v in nonaut.S.items():
        if sum(m) == 0 and np.any(np.abs(v) > 0):
            raise FloquetError("trivial orbit not invariant: nonzero state-independent reduced forcing")
        if sum(m) == 1:
            lin.setdefault(kap, np.zeros((M, M), dtype=complex))[:, m.index(1)] += v
    return Lam, lin


def reduced_monodromy(auto, nonaut, epsilon: float, omega: float | None = None,
                      period_multiplier: int = 1) -> MonodromyResult:
    """Floquet multipliers of ``p' = R(p) + eps S(p, Omega t)`` about ``p = 0``.

    Integrated in real coordinates with DOP853 at tolerance ``1e-10``.
    """
    omega = nonaut.omega if omega is None else float(omega)
    Lam, lin = linear_reduced_generator(auto, nonaut, epsilon)
    M = auto.M
    T = _real_basis(M)
    Tinv = np.linalg.inv(T)
    L0 = (Tinv @ Lam @ T)
    L1 = {k: Tinv @ v @ T for k, v in lin.items()}

    def gen(t):
        out = L0.copy()
        for k, v in L1.items():
            out = out + epsilon * np.exp(1j * k * omega * t) * v
        return out.real

    period = 2 * np.pi / omega * period_multiplier
    sol = solve_ivp(lambda t, y: (gen(t) @ y.reshape(M, M)).ravel(), (0.0, period), np.eye(M).ravel(),
                    method="DOP853", rtol=ODE_TOL, atol=ODE_TOL)
    if not sol.success:
        raise FloquetError(f"reduced variational integration failed: {sol.message}")
    P = sol.y[:, -1].reshape(M, M)
    trace = np.trace(Lam).real * period
    if 0 in lin:
        trace += epsilon * np.trace(lin[0]).real * period
    return MonodromyResult(np.linalg.eigvals(P), period, P, float(trace))


# ---------------------------------------------------------------- tongue boundary

@dataclass(frozen=True)
class TongueSample:
    omega: float
    epsilon: float
    bracket: Tuple[float, float]
    crossing_multiplier: complex


@dataclass(eq=False)
class TongueBoundary:
    """Boundary samples of a parametric resonance tongue.

    ``gaps`` lists frequencies without a crossing in the ``eps`` window.
    """

    samples: List[TongueSample]
    mode: Tuple[int, ...]
    source: str
    gaps: List[float] = field(default_factory=list)
    errors: Dict[float, str] = field(default_factory=dict)

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.array([s.omega for s in self.samples]), np.array([s.epsilon for s in self.samples]))

    def minimum(self) -> TongueSample:
        return min(self.samples, key=lambda s: s.epsilon)


def _bracket_crossing(fun, eps_max: float, scans: int, xtol: float):
    grid = np.linspace(0.0, eps_max, scans + 1)
    prev = fun(grid[0])
    if prev >= 0:
        return None
    for lo, hi in zip(grid[:-1], grid[1:]):
        val = fun(hi)
        if val >= 0:
            root = brentq(fun, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
            return root, (lo, hi)
    return None


def _tongue_worker(args):
    (model, subspace, auto, omega, order, eps_max, source, scans, res_tol, omega_ref, magnus_steps) = args
    try:
        xtol = 1e-4 * eps_max
        if source == "reduced":
            from .ssm_nonautonomous import compute_nonautonomous_ssm
            nonaut = compute_nonautonomous_ssm(model, subspace, auto, omega, order=order,
                                               resonance_tolerance=res_tol, resonance_frequency=omega_ref)
            mono = lambda e: reduced_monodromy(auto, nonaut, e, omega)
        else:
            mono = lambda e: full_system_monodromy(model, omega, e, magnus_steps=magnus_steps)
        fun = lambda e: mono(e).max_modulus - 1.0
        found = _bracket_crossing(fun, eps_max, scans, xtol)
        if found is None:
            return None, None
        root, br = found
        return TongueSample(float(omega), float(root), br, mono(root).dominant), None
    except Exception as exc:  # per-frequency failure is recorded
        return None, f"{type(exc).__name__}: {exc}"


def trace_tongue(model, subspace: MasterSubspace, auto, omegas: Sequence[float], eps_max: float,
                 order: int | None = None, source: str = "reduced", scans: int = 8,
                 resonance_tolerance: float | None = None, jobs: int = 1,
                 magnus_steps: int = 400) -> TongueBoundary:
    """Period-doubling boundary ``eps(Omega)`` of the principal parametric tongue.

    Parameters
    ----------
    model : SecondOrderModel
        Parametric-only forcing.
    subspace : MasterSubspace
        One master pair; resonance is detected against ``Omega = 2 Im lambda_1``.
    auto : AutonomousSSM or None
        Needed for ``source="reduced"``.
    omegas : sequence of float
    eps_max : float
        Upper end of the search window ``[0, eps_max]``.
    source : {"reduced", "full"}
        SSM-reduced monodromy or the full-system oracle.
    scans : int
        Coarse samples used to bracket the first crossing before Brent refinement.

    Returns
    -------
    TongueBoundary
        One sample per frequency with a crossing; tolerance ``1e-4 eps_max``.
    """
    if source not in ("reduced", "full"):
        raise ValueError("source must be 'reduced' or 'full'")
    omega_ref = 2 * subspace.eigenvalues[0].imag
    if order is None and auto is not None:
        order = max(auto.order - 1, 1)
    tasks = [(model, subspace, auto, float(om), order, float(eps_max), source, scans, resonance_tolerance,
              omega_ref, magnus_steps) for om in omegas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_tongue_worker, tasks))
    else:
        out = [_tongue_worker(t) for t in tasks]
    samples, gaps, errors = [], [], {}
    for om, (s, err) in zip(omegas, out):
        if err is not None:
            errors[float(om)] = err
        elif s is None:
            gaps.append(float(om))
        else:
            samples.append(s)
    samples.sort(key=lambda s: s.omega)
    return TongueBoundary(samples, subspace.pair_indices, source, gaps, errors)


# ---------------------------------------------------------------- subharmonic orbits

@dataclass(frozen=True, eq=False)
class SubharmonicPoint:
    """Period ``4 pi / Omega`` orbit of the reduced dynamics.

    ``initial`` is the reduced state ``p(0)``; ``multipliers`` are the
    eigenvalues of the period-2 stroboscopic map linearization.
    """

    epsilon: float
    amplitude: float
    initial: np.ndarray
    multipliers: np.ndarray
    times: np.ndarray = field(repr=False, default=None)
    output: np.ndarray = field(repr=False, default=None)
    state0: np.ndarray = field(repr=False, default=None)

    @property
    def stable(self) -> bool:
        return bool(np.all(np.abs(self.multipliers) < 1))


class ReducedFlow:
    """Real-coordinate reduced vector field ``p' = R(p) + eps S(p, Omega t)``."""

    def __init__(self, auto, nonaut, epsilon: float):
        self.M = auto.M
        self.R = auto.reduced_table()
        self.S = {}
        for kap in sorted({k for (_, k) in nonaut.S}):
            self.S[kap] = SeriesTable({m: v for (m, k), v in nonaut.S.items() if k == kap}, self.M, self.M)
        self.epsilon = epsilon
        self.omega = nonaut.omega
        self.T = _real_basis(self.M)

    def to_complex(self, q):
        return self.T @ q

    def rhs(self, t, q):
        p = self.T @ q
        dp = self.R.value(p)
        if self.epsilon:
            for kap, tab in self.S.items():
                dp = dp + self.epsilon * np.exp(1j * kap * self.omega * t) * tab.value(p)
        out = np.empty(self.M)
        out[0::2] = dp[0::2].real
        out[1::2] = dp[0::2].imag
        return out

    def flow(self, q0, t_end, t_eval=None, escape_radius=None):
        events = None
        if escape_radius is not None:
            # truncated polynomial flows can blow up; stop once the orbit leaves the trusted ball
            def escape(t, q):
                return escape_radius - np.linalg.norm(q)
            escape.terminal = True
            events = escape
        sol = solve_ivp(self.rhs, (0.0, t_end), q0, method="DOP853", rtol=ODE_TOL, atol=ODE_TOL * 1e-2,
                        t_eval=t_eval, events=events)
        if not sol.success:
            raise FloquetError(sol.message)
        if sol.status == 1:
            raise FloquetError(f"reduced orbit left the ball of radius {escape_radius:.3g}")
        return sol


def _period_map_newton(flow: ReducedFlow, q0: np.ndarray, period: float, tol: float, maxiter: int = 30,
                       escape_radius: float | None = None):
    q = np.array(q0, dtype=float)
    n = q.size
    try:
        for _ in range(maxiter):
            qT = flow.flow(q, period, escape_radius=escape_radius).y[:, -1]
            G = qT - q
            h = 1e-7 * max(np.linalg.norm(q), 1e-8)
            J = np.empty((n, n))
            for j in range(n):
                dq = np.zeros(n)
                dq[j] = h
                J[:, j] = (flow.flow(q + dq, period, escape_radius=escape_radius).y[:, -1] - qT) / h
            if np.linalg.norm(G) <= tol * max(np.linalg.norm(q), 1e-300):
                return q, J
            step = np.linalg.solve(J - np.eye(n), -G)
            # damped step: at most half the current amplitude (plus a floor near the origin)
            cap = 0.5 * np.linalg.norm(q) + 1e-3
            norm = np.linalg.norm(step)
            if norm > cap:
                step *= cap / norm
            q = q + step
            if not np.all(np.isfinite(q)):
                return None, None
    except (FloquetError, np.linalg.LinAlgError):
        return None, None
    return None, None


def _relax_period_map(flow: ReducedFlow, q0: np.ndarray, period: float, escape_radius: float,
                      maxiter: int = 200, rtol: float = 1e-4):
    """Forward iterates of the stroboscopic map; an attracting orbit pulls the iterate in."""
    q = np.array(q0, dtype=float)
    try:
        for _ in range(maxiter):
            nxt = flow.flow(q, period, escape_radius=escape_radius).y[:, -1]
            if np.linalg.norm(nxt - q) <= rtol * np.linalg.norm(nxt):
                return nxt
            q = nxt
    except FloquetError:
        return None
    return q


def subharmonic_branch(model, subspace: MasterSubspace, auto, omega: float, eps_list: Sequence[float],
                       order: int | None = None, outdof: int = 0, samples: int = 512,
                       seed_amplitudes: Sequence[float] = (1e-3, 1e-2, 3e-2, 0.1, 0.3),
                       tol: float = 1e-10) -> Tuple[List[SubharmonicPoint], Dict[float, str]]:
    """Period-doubled orbits of the reduced dynamics for each ``eps``.

    Newton shooting on the period-2 stroboscopic map. Seeds are, in order,
    the previous point's orbit, the forward-relaxed iterate of the map
    started along the real eigenvector of the trivial orbit's multiplier
    below ``-1``, and scaled copies of that eigenvector. Returns points and a
    map ``eps -> diagnostic`` for skipped values.
    """
    from .reduced_dynamics import default_rho_max, evaluate_parametrization
    from .ssm_nonautonomous import compute_nonautonomous_ssm

    order = max(auto.order - 1, 1) if order is None else order
    nonaut = compute_nonautonomous_ssm(model, subspace, auto, omega, order=order,
                                       resonance_frequency=2 * subspace.eigenvalues[0].imag)
    period2 = 4 * np.pi / omega
    points: List[SubharmonicPoint] = []
    skipped: Dict[float, str] = {}
    warm = None
    for eps in eps_list:
        eps = float(eps)
        mono = reduced_monodromy(auto, nonaut, eps, omega)
        flow = ReducedFlow(auto, nonaut, eps)
        seeds = []
        if warm is not None:
            seeds.append(warm)
        k = int(np.argmin(mono.multipliers.real))
        if mono.multipliers[k].real < -1:
            w, vr = np.linalg.eig(mono.matrix)
            vec = vr[:, int(np.argmin(w.real))].real
            vec = vec / np.linalg.norm(vec)
            relaxed = _relax_period_map(flow, seed_amplitudes[0] * vec, period2,
                                        ESCAPE_FACTOR * default_rho_max(auto))
            if relaxed is not None:
                seeds.append(relaxed)
            seeds += [a * vec for a in seed_amplitudes]
        elif warm is None:
            skipped[eps] = "trivial orbit stable; no period-doubled orbit seeded"
            continue
        found = None
        radius = ESCAPE_FACTOR * max(max(np.linalg.norm(s) for s in seeds), default_rho_max(auto))
        for s in seeds:
            q, J = _period_map_newton(flow, s, period2, tol, escape_radius=radius)
            if q is not None and np.linalg.norm(q) > 1e-6 * max(np.linalg.norm(s), 1e-12):
                found = (q, J)
                break
        if found is None:
            skipped[eps] = "Newton did not converge to a nontrivial orbit"
            continue
        q, J = found
        warm = q
        t = np.linspace(0.0, period2, samples, endpoint=False)
        sol = flow.flow(q, period2, t_eval=t)
        p = flow.T @ sol.y
        z = evaluate_parametrization(auto, nonaut, p, omega * t, eps).real
        out = z[outdof]
        points.append(SubharmonicPoint(eps, float(np.max(np.abs(out))), flow.T @ q, np.linalg.eigvals(J),
                                       t, out, z[:, 0]))
    return points, skipped


# ---------------------------------------------------------------- full-system periodic orbits

@dataclass(frozen=True, eq=False)
class ShootingResult:
    """Converged periodic orbit of the full system.

    ``multipliers`` are the full Floquet multipliers (direct shooting) or
    those of the slow block (Newton-Picard); ``method`` names the variant.
    """

    state: np.ndarray
    multipliers: np.ndarray
    iterations: int
    method: str


def _slow_projector(sysf: FullSystem, period: float, threshold: float):
    """Real spectral projector onto modes with ``|exp(lambda T)| > threshold`` and an orthonormal range basis."""
    w, vl, vr = sla.eig(sysf.fom.A, sysf.fom.B, left=True, right=True)
    keep = np.isfinite(w) & (np.exp(w.real * period) > threshold)
    P = np.zeros((sysf.N, sysf.N), dtype=complex)
    for k in np.nonzero(keep)[0]:
        v, u = vr[:, k], vl[:, k]
        P += np.outer(v, u.conj() @ sysf.fom.B) / (u.conj() @ sysf.fom.B @ v)
    P = P.real
    q = int(np.count_nonzero(keep))
    basis, _ = np.linalg.qr(P @ np.random.default_rng(0).standard_normal((sysf.N, q)))
    return P, basis


def shoot_periodic_orbit(model, omega: float, epsilon: float, z0: np.ndarray, period: float,
                         tol: float | None = None, maxiter: int = 40, method: str | None = None,
                         picard_threshold: float = 0.1) -> ShootingResult:
    """Periodic orbit ``z(period) = z(0)`` of the full system by shooting.

    Parameters
    ----------
    method : {"newton", "newton-picard"}, optional
        ``newton`` integrates the variational equations with DOP853;
        ``newton-picard`` (default for stiff spectra) applies a chord
        Newton step on the slow spectral subspace, with a finite-difference
        Jacobian, and a Picard step on the fast complement, integrating with LSODA.
    tol : float, optional
        Relative residual ``|z(T) - z(0)| / |z(0)|``; defaults to 1e-9 for
        ``newton`` and 1e-7 for ``newton-picard`` (its LSODA flow is run at
        ``rtol=1e-9``, so tighter targets stall on integration noise).
    picard_threshold : float
        Linear multipliers above this modulus are treated as slow.

    Raises
    ------
    FloquetError
        When the iteration does not converge.
    """
    sysf = FullSystem(model, omega, epsilon)
    if method is None:
        method = "newton-picard" if sysf.stiffness_ratio() > STIFF_RATIO * 10 else "newton"
    z = np.array(z0, dtype=float)
    N = sysf.N
    if tol is None:
        tol = 1e-9 if method == "newton" else 1e-7
    if method == "newton":
        for it in range(maxiter):
            zT, Phi = _variational_flow(sysf, z, period, "DOP853")
            G = zT - z
            if np.linalg.norm(G) <= tol * max(np.linalg.norm(z), 1e-300):
                return ShootingResult(z, np.linalg.eigvals(Phi), it, method)
            z = z + np.linalg.solve(Phi - np.eye(N), -G)
        raise FloquetError("shooting Newton did not converge")
    if method != "newton-picard":
        raise ValueError(f"unknown method {method!r}")

    def period_map(x):
        sol = solve_ivp(sysf.rhs, (0.0, period), x, method="LSODA", jac=sysf.jacobian,
                        rtol=1e-9, atol=1e-12 * max(np.linalg.norm(x), 1e-12))
        if not sol.success:
            raise FloquetError(f"full-system integration failed: {sol.message}")
        return sol.y[:, -1]

    Pslow, V = _slow_projector(sysf, period, picard_threshold)
    Pz = period_map(z)
    J = None
    for it in range(maxiter):
        G = Pz - z
        if np.linalg.norm(G) <= tol * max(np.linalg.norm(z), 1e-300):
            slow = np.linalg.eigvals(J + np.eye(V.shape[1])) if J is not None else np.zeros(0)
            return ShootingResult(z, slow, it, method)
        if J is None:
            h = 1e-5 * max(np.linalg.norm(z), 1e-12)
            cols = [(V.T @ Pslow @ (period_map(z + h * V[:, j]) - Pz)) / h for j in range(V.shape[1])]
            J = np.array(cols).T - np.eye(V.shape[1])
        a = V.T @ (Pslow @ z)
        da = np.linalg.solve(J, -V.T @ (Pslow @ G))
        z = V @ (a + da) + (Pz - Pslow @ Pz)
        Pz = period_map(z)
    raise FloquetError("Newton-Picard shooting did not converge")


@dataclass(frozen=True, eq=False)
class FullResponse:
    """Full-system periodic response converged from a ROM prediction."""

    amplitude: float
    stable: bool
    shooting: ShootingResult
    times: np.ndarray
    output: np.ndarray


def verify_periodic_response(model, omega: float, epsilon: float, initial_state: np.ndarray,
                             outdof: int = 0, period: float | None = None,
                             samples: int = 512) -> FullResponse:
    """Shoot the full system from a lifted ROM state and sample the converged orbit.

    ``amplitude`` is ``max |z_outdof|`` over ``samples`` points of one period
    (default ``2 pi / omega``); ``stable`` means every computed multiplier
    lies inside the unit circle.
    """
    period = 2 * np.pi / omega if period is None else float(period)
    shot = shoot_periodic_orbit(model, omega, epsilon, initial_state, period)
    times = np.linspace(0.0, period, samples, endpoint=False)
    stiff = shot.method == "newton-picard"
    sol = integrate_full(model, omega, epsilon, shot.state, (0.0, period), t_eval=times,
                         method="LSODA" if stiff else "DOP853",
                         rtol=1e-9 if stiff else ODE_TOL, atol=1e-12 if stiff else ODE_TOL)
    out = sol.y[outdof]
    stable = bool(np.all(np.abs(shot.multipliers) < 1.0))
    return FullResponse(float(np.max(np.abs(out))), stable, shot, times, out)
