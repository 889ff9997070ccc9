"""Polar reduced dynamics on a two-dimensional time-periodic SSM.

The reduced flow ``p' = R(p) + eps S(p, phi)`` is rewritten in the polar
amplitude ``rho`` and the phase lag ``psi = theta - kappa0 phi``. Fixed points
of the polar flow are periodic responses, found here as zero-level sets
rather than by continuation.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .model import SecondOrderModel
from .multiindex import MultiIndex
from .spectral import MasterSubspace
from .ssm_autonomous import SeriesTable

__all__ = [
    "ROMError",
    "PolarROM",
    "FRCPoint",
    "RootList",
    "Stability",
    "PhysicalOrbit",
    "build_polar_rom",
    "find_fixed_points",
    "classify_stability",
    "lift_to_physical",
    "default_rho_max",
    "infer_kappa0",
    "frc_sweep",
    "FRCBranch",
    "split_branches",
]

TAIL_FRACTION = 0.1
DEDUP_RADIUS = 1e-6
HYPERBOLIC_RTOL = 1e-8
NEWTON_MAXITER = 60
NEWTON_RTOL = 1e-13


class ROMError(ValueError):
    pass


@dataclass(frozen=True)
class ForcedTerm:
    """One ``S^1_{m,kappa}`` entry: ``rho^|m| Q((kappa/kappa0) psi) [Re S, Im S]``."""

    multi_index: MultiIndex
    kappa: int
    order: int
    ratio: float
    coefficient: complex


@dataclass(frozen=True, eq=False)
class PolarROM:
    """Polar reduced dynamics ``[rho', rho psi'] = r(rho, psi, Omega)``.

    Attributes
    ----------
    kappa0 : int
        Resonant harmonic, ``kappa0 Omega ~ Im lambda_1``.
    omega, epsilon : float
    autonomous : tuple of (order, complex)
        First-row coefficients ``R^1_m``; only ``m = (l, l-1)`` occur.
    forced : tuple of ForcedTerm
        First-row coefficients ``S^1_{m,kappa}`` with their tags.
    """

    kappa0: int
    omega: float
    epsilon: float
    autonomous: Tuple[Tuple[int, complex], ...]
    forced: Tuple[ForcedTerm, ...] = ()

    @property
    def linear_eigenvalue(self) -> complex:
        return next((c for l, c in self.autonomous if l == 1), 0j)

    def _auto_series(self, rho, derivative=False):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho, dtype=complex)
        for l, c in self.autonomous:
            out = out + (c * l * rho ** (l - 1) if derivative else c * rho ** l)
        return out

    def a(self, rho):
        return self._auto_series(rho).real

    def b(self, rho):
        return self._auto_series(rho).imag - self.kappa0 * self.omega * np.asarray(rho, dtype=float)

    def _cd(self, term: ForcedTerm, psi):
        angle = term.ratio * np.asarray(psi, dtype=float)
        re, im = term.coefficient.real, term.coefficient.imag
        return re * np.cos(angle) + im * np.sin(angle), -re * np.sin(angle) + im * np.cos(angle)

    def r(self, rho, psi) -> np.ndarray:
        """``r(rho, psi)``; broadcasts, result has a leading axis of length 2."""
        rho = np.asarray(rho, dtype=float)
        psi = np.asarray(psi, dtype=float)
        r1 = self.a(rho) + 0 * psi
        r2 = self.b(rho) + 0 * psi
        for t in self.forced:
            c, d = self._cd(t, psi)
            w = self.epsilon * rho ** t.order
            r1 = r1 + w * c
            r2 = r2 + w * d
        return np.stack([r1, r2])

    def r_jacobian(self, rho: float, psi: float) -> np.ndarray:
        """Derivative of ``r`` with respect to ``(rho, psi)``."""
        da = self._auto_series(rho, derivative=True)
        J = np.array([[da.real, 0.0], [da.imag - self.kappa0 * self.omega, 0.0]], dtype=float)
        for t in self.forced:
            c, d = self._cd(t, psi)
            e = self.epsilon
            drho = t.order * rho ** (t.order - 1) if t.order else 0.0
            J[0, 0] += e * c * drho
            J[1, 0] += e * d * drho
            J[0, 1] += e * t.ratio * d * rho ** t.order
            J[1, 1] -= e * t.ratio * c * rho ** t.order
        return J

    def polar_field(self, rho, psi) -> np.ndarray:
        """``[rho', psi']``; singular at ``rho = 0``."""
        out = self.r(rho, psi)
        return np.stack([out[0], out[1] / np.asarray(rho, dtype=float)])

    def polar_jacobian(self, rho: float, psi: float) -> np.ndarray:
        """Jacobian of ``[rho', psi']`` assembled term by term from ``c``, ``d``."""
        if rho <= 0:
            raise ROMError("polar Jacobian is undefined at rho = 0; use the Floquet analysis of the trivial orbit")
        da = self._auto_series(rho, derivative=True)
        series = self._auto_series(rho)
        # d(b/rho)/drho; the -kappa0 Omega part is constant in rho
        db_over_rho = (da.imag * rho - series.imag) / rho ** 2
        J = np.array([[da.real, 0.0], [db_over_rho, 0.0]])
        for t in self.forced:
            c, d = self._cd(t, psi)
            k, q = t.order, t.ratio
            J += self.epsilon * np.array([
                [c * k * rho ** (k - 1) if k else 0.0, q * d * rho ** k],
                [d * (k - 1) * rho ** (k - 2), -q * c * rho ** (k - 1)],
            ])
        return J

    def scale(self, rho: float) -> float:
        """Sum of term magnitudes at ``rho``; reference for residual tolerances."""
        s = sum(abs(c) * rho ** l for l, c in self.autonomous) + abs(self.kappa0 * self.omega) * rho
        s += sum(abs(self.epsilon * t.coefficient) * rho ** t.order for t in self.forced)
        return float(s)


def _first_row(table: Dict) -> List:
    return [(key, complex(v[0])) for key, v in table.items() if abs(v[0]) > 0]


def build_polar_rom(auto, nonaut=None, kappa0: int = 1, epsilon: float | None = None,
                    omega: float | None = None) -> PolarROM:
    """Assemble the polar ROM from normal-form coefficient tables.

    Parameters
    ----------
    auto : AutonomousSSM or FirstOrderSSM
        Must have ``M = 2``.
    nonaut : NonAutonomousSSM or FirstOrderSSM, optional
        ``O(eps)`` tables at one frequency; omitted for the unforced ROM.
    kappa0 : int
        Resonant harmonic.
    epsilon : float, optional
        Forcing scale (default 0 when ``nonaut`` is omitted, else 1).
    omega : float, optional
        Defaults to the frequency stored on ``nonaut``.

    Raises
    ------
    ROMError
        Wrong SSM dimension, or a coefficient violating
        ``m1 - m2 = 1`` (autonomous) or ``kappa = (1 - m1 + m2) kappa0``
        (non-autonomous), which indicates a graph-style rather than
        normal-form parametrization.
    """
    if auto.M != 2:
        raise ROMError(f"polar reduction needs a two-dimensional SSM, got M={auto.M}")
    if kappa0 == 0:
        raise ROMError("kappa0 must be nonzero")
    kappa0 = int(kappa0)
    auto_terms = []
    for m, c in _first_row(auto.R):
        if m[0] - m[1] != 1:
            raise ROMError(f"autonomous coefficient at m={m} is not phase compatible (normal-form style expected)")
        auto_terms.append((sum(m), c))
    auto_terms.sort()
    forced = []
    if nonaut is not None:
        omega = nonaut.omega if omega is None else omega
        for (m, kap), c in _first_row(nonaut.S):
            if kap != (1 - m[0] + m[1]) * kappa0:
                raise ROMError(f"non-autonomous coefficient at (m={m}, kappa={kap}) violates "
                               f"kappa = (1 - m1 + m2) kappa0 with kappa0={kappa0}")
            forced.append(ForcedTerm(m, kap, sum(m), kap / kappa0, c))
        forced.sort(key=lambda t: (t.order, t.kappa, t.multi_index))
        epsilon = 1.0 if epsilon is None else float(epsilon)
    else:
        epsilon = 0.0 if epsilon is None else float(epsilon)
    if omega is None:
        raise ROMError("omega is required when no non-autonomous tables are given")
    return PolarROM(kappa0, float(omega), epsilon, tuple(auto_terms), tuple(forced))


class RootList(list):
    """Fixed points ``(rho, psi)`` with search diagnostics.

    Attributes
    ----------
    candidates : int
        Grid cells whose corners bracket both components.
    dropped : int
        Candidates whose Newton iteration did not converge.
    trivial : bool
        Whether ``rho = 0`` is a root (no constant forcing term).
    """

    def __init__(self, items=(), candidates=0, dropped=0, trivial=False):
        super().__init__(items)
        self.candidates = candidates
        self.dropped = dropped
        self.trivial = trivial


def _newton(rom: PolarROM, rho: float, psi: float, rho_cap: float):
    x = np.array([rho, psi], dtype=float)
    for _ in range(NEWTON_MAXITER):
        res = rom.r(x[0], x[1])
        tol = NEWTON_RTOL * max(rom.scale(abs(x[0])), 1e-300)
        if np.linalg.norm(res) <= tol:
            return x
        try:
            step = np.linalg.solve(rom.r_jacobian(x[0], x[1]), -res)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        # limit step length to keep Newton inside the trusted window
        lim = 0.25 * rho_cap
        if abs(step[0]) > lim:
            step *= lim / abs(step[0])
        x = x + step
        if x[0] <= 0 or x[0] > 2 * rho_cap:
            return None
    res = rom.r(x[0], x[1])
    return x if np.linalg.norm(res) <= 1e3 * NEWTON_RTOL * max(rom.scale(x[0]), 1e-300) else None


def find_fixed_points(rom: PolarROM, rho_max: float, rho_min: float = 0.0,
                      grid: Tuple[int, int] = (200, 200)) -> RootList:
    """Zeros of ``r`` with ``rho_min < rho <= rho_max``.

    Scans a ``(rho, psi)`` node grid for cells on which both components
    of ``r`` change sign, polishes each cell center by Newton with the
    analytic Jacobian, and merges roots closer than ``1e-6`` in
    ``(rho / rho_max, psi / 2 pi)``. The trivial root is excluded.
    """
    if rho_max <= 0 or rho_min < 0 or rho_min >= rho_max:
        raise ValueError("need 0 <= rho_min < rho_max")
    n_rho, n_psi = grid
    rho_nodes = np.linspace(rho_min, rho_max, n_rho + 1)
    if rho_nodes[0] == 0.0:
        rho_nodes[0] = 1e-3 * (rho_nodes[1] - rho_nodes[0])
    psi_nodes = np.linspace(0.0, 2 * np.pi, n_psi + 1)
    RR, PP = np.meshgrid(rho_nodes, psi_nodes, indexing="ij")
    vals = rom.r(RR, PP)
    flagged = np.ones((n_rho, n_psi), dtype=bool)
    for comp in vals:
        corners = np.stack([comp[:-1, :-1], comp[1:, :-1], comp[:-1, 1:], comp[1:, 1:]])
        flagged &= (corners.min(axis=0) < 0) & (corners.max(axis=0) > 0)
    cells = np.argwhere(flagged)
    roots: List[Tuple[float, float]] = []
    dropped = 0
    for i, j in cells:
        start_rho = 0.5 * (rho_nodes[i] + rho_nodes[i + 1])
        start_psi = 0.5 * (psi_nodes[j] + psi_nodes[j + 1])
        sol = _newton(rom, start_rho, start_psi, rho_max)
        if sol is None:
            dropped += 1
            continue
        rho, psi = float(sol[0]), float(sol[1] % (2 * np.pi))
        if rho <= 1e-9 * rho_max or rho <= rho_min or rho > rho_max * (1 + 1e-9):
            continue
        dup = False
        for r0, p0 in roots:
            dpsi = abs(psi - p0) % (2 * np.pi)
            dpsi = min(dpsi, 2 * np.pi - dpsi)
            if math.hypot((rho - r0) / rho_max, dpsi / (2 * np.pi)) < DEDUP_RADIUS:
                dup = True
                break
        if not dup:
            roots.append((rho, psi))
    roots.sort()
    trivial = not any(t.order == 0 for t in rom.forced) or rom.epsilon == 0
    return RootList(roots, candidates=len(cells), dropped=dropped, trivial=trivial)


@dataclass(frozen=True)
class Stability:
    label: str
    eigenvalues: np.ndarray

    @property
    def stable(self) -> bool:
        return self.label == "stable"


def classify_stability(rom: PolarROM, rho: float, psi: float) -> Stability:
    """Eigenvalues of the polar Jacobian at a fixed point.

    Labels are ``stable`` (both real parts negative), ``unstable`` (both
    positive), ``saddle`` or ``marginal`` when a real part is within
    ``1e-8`` of the Jacobian scale.
    """
    if rho <= 0:
        raise ROMError("stability of the trivial response is a Floquet problem; rho must be positive")
    J = rom.polar_jacobian(rho, psi)
    ev = np.linalg.eigvals(J)
    scale = max(np.max(np.abs(ev)), abs(rom.linear_eigenvalue.real), 1e-300)
    re = ev.real
    if np.any(np.abs(re) <= HYPERBOLIC_RTOL * scale):
        label = "marginal"
    elif np.all(re < 0):
        label = "stable"
    elif np.all(re > 0):
        label = "unstable"
    else:
        label = "saddle"
    return Stability(label, ev)


@dataclass(frozen=True, eq=False)
class PhysicalOrbit:
    """Lifted steady state over one forcing period.

    ``states`` has shape ``(N, samples)``; ``output`` is the sampled
    displacement of the chosen DOF; ``imag_residue`` the largest imaginary
    part discarded when taking the real orbit.
    """

    times: np.ndarray
    states: np.ndarray
    output: np.ndarray
    amplitude: float
    imag_residue: float


def _tables(auto, nonaut):
    W = auto.phase_table()
    X = {}
    if nonaut is not None:
        ps = nonaut.phase_space() if hasattr(nonaut, "phase_space") else dict(nonaut.X)
        size = W.size
        for kap in sorted({k for (_, k) in ps}):
            X[kap] = SeriesTable({m: v for (m, k), v in ps.items() if k == kap}, auto.M, size)
    return W, X


def evaluate_parametrization(auto, nonaut, p: np.ndarray, phases: np.ndarray, epsilon: float) -> np.ndarray:
    """``W(p) + eps sum_kappa e^{i kappa phi} X_kappa(p)`` for columns of ``p``."""
    W, X = _tables(auto, nonaut)
    out = W.value(p)
    if epsilon:
        for kap, tab in X.items():
            out = out + epsilon * np.exp(1j * kap * phases)[None, :] * tab.value(p)
    return out


def lift_to_physical(auto, nonaut, rom: PolarROM, rho: float, psi: float, outdof: int = 0,
                     samples: int = 512) -> PhysicalOrbit:
    """Map a polar fixed point to a sampled periodic orbit of the full system.

    ``p(t) = rho exp(i (psi + kappa0 Omega t))`` with its conjugate, and
    ``phi = Omega t`` over ``[0, 2 pi / Omega)``. The amplitude is the largest
    sampled ``|y_outdof|``.
    """
    Om = rom.omega
    t = np.arange(samples) * (2 * np.pi / Om / samples)
    theta = psi + rom.kappa0 * Om * t
    p = np.vstack([rho * np.exp(1j * theta), rho * np.exp(-1j * theta)])
    z = evaluate_parametrization(auto, nonaut, p, Om * t, rom.epsilon)
    resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
    states = z.real
    out = states[outdof]
    return PhysicalOrbit(t, states, out, float(np.max(np.abs(out))), resid)


def default_rho_max(auto, tail_fraction: float = TAIL_FRACTION, fallback: float = 1.0) -> float:
    """Amplitude at which the top-order autonomous term reaches ``tail_fraction |lambda_1| rho``."""
    row = sorted((sum(m), complex(v[0])) for m, v in auto.R.items() if abs(v[0]) > 0)
    lam = next((c for l, c in row if l == 1), None)
    top = [(l, c) for l, c in row if l >= 2]
    if lam is None or not top:
        return fallback
    l, c = top[-1]
    return float((tail_fraction * abs(lam) / abs(c)) ** (1.0 / (l - 1)))


def infer_kappa0(model, subspace: MasterSubspace, omega: float) -> int:
    """Positive forcing harmonic nearest ``Im lambda_1 / Omega``."""
    source = model.forcing.harmonics if isinstance(model, SecondOrderModel) else model.harmonics
    harm = sorted({int(k) for k in source if k > 0})
    if not harm:
        return 1
    target = subspace.eigenvalues[0].imag / omega
    return int(min(harm, key=lambda k: (abs(k - target), k)))


@dataclass(frozen=True)
class FRCPoint:
    omega: float
    rho: float
    psi: float
    stability: str
    amplitude: float
    eigenvalues: Tuple[complex, complex] = ()
    residual: float = 0.0

    @property
    def stable(self) -> bool:
        return self.stability == "stable"


class FRCResult(list):
    """Sorted FRC points with per-frequency error messages in ``errors``."""

    def __init__(self, items=(), errors=None, diagnostics=None):
        super().__init__(items)
        self.errors: Dict[float, str] = dict(errors or {})
        self.diagnostics: Dict[float, dict] = dict(diagnostics or {})


def _frc_worker(args):
    (model, subspace, auto, omega, order, kappa0, outdof, epsilon, rho_max, grid, samples,
     res_tol, omega_ref, first_order) = args
    try:
        if first_order:
            from .ssm_firstorder import compute_nonautonomous_first
            nonaut = compute_nonautonomous_first(model, subspace, auto, omega, order=order,
                                                 resonance_tolerance=res_tol, resonance_frequency=omega_ref)
        else:
            from .ssm_nonautonomous import compute_nonautonomous_ssm
            nonaut = compute_nonautonomous_ssm(model, subspace, auto, omega, order=order,
                                               resonance_tolerance=res_tol, resonance_frequency=omega_ref)
        rom = build_polar_rom(auto, nonaut, kappa0, epsilon)
        roots = find_fixed_points(rom, rho_max, grid=grid)
        pts = []
        for rho, psi in roots:
            st = classify_stability(rom, rho, psi)
            orbit = lift_to_physical(auto, nonaut, rom, rho, psi, outdof, samples)
            res = float(np.linalg.norm(rom.r(rho, psi)))
            pts.append(FRCPoint(float(omega), rho, psi, st.label, orbit.amplitude,
                                tuple(complex(e) for e in st.eigenvalues), res))
        return pts, None, {"candidates": roots.candidates, "dropped": roots.dropped}
    except Exception as exc:  # recorded per frequency; the sweep continues
        return [], f"{type(exc).__name__}: {exc}", {}


def frc_sweep(model, subspace: MasterSubspace, auto, omegas: Sequence[float], order: int | None = None,
              kappa0: int | None = None, outdof: int = 0, epsilon: float | None = None,
              rho_max: float | None = None, grid: Tuple[int, int] = (200, 200), samples: int = 512,
              resonance_tolerance: float | None = None, jobs: int = 1,
              first_order: bool = False) -> FRCResult:
    """Forced response curve by independent per-frequency zero-set searches.

    Parameters
    ----------
    model : SecondOrderModel
    subspace : MasterSubspace
        A single master pair.
    auto : AutonomousSSM or FirstOrderSSM
        Autonomous tables; their order should exceed ``order`` by one.
    omegas : sequence of float
    order : int, optional
        Non-autonomous truncation order (default ``auto.order - 1``).
    kappa0 : int, optional
        Inferred from the mid-grid frequency when omitted.
    outdof : int
        Index into the phase-space state used for the amplitude.
    epsilon : float, optional
        Defaults to the model's forcing scale.
    rho_max : float, optional
        Defaults to :func:`default_rho_max`.
    jobs : int
        Worker processes; results do not depend on it.
    first_order : bool
        Use the first-order reference path for the non-autonomous tables.

    Returns
    -------
    FRCResult
        Points sorted by ``(omega, rho)``; failures in ``errors``.
    """
    omegas = [float(o) for o in omegas]
    if not omegas:
        return FRCResult()
    if order is None:
        order = max(auto.order - 1, 1)
    if kappa0 is None:
        kappa0 = infer_kappa0(model, subspace, float(np.median(omegas)))
    if epsilon is None:
        epsilon = model.epsilon
    if rho_max is None:
        rho_max = default_rho_max(auto)
    # resonance sets must not change along the sweep
    omega_ref = subspace.eigenvalues[0].imag / kappa0 if kappa0 else None
    tasks = [(model, subspace, auto, om, order, kappa0, outdof, epsilon, rho_max, grid, samples,
              resonance_tolerance, omega_ref, first_order) for om in omegas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_frc_worker, tasks))
    else:
        out = [_frc_worker(t) for t in tasks]
    pts, errors, diag = [], {}, {}
    for om, (p, err, d) in zip(omegas, out):
        pts.extend(p)
        diag[om] = d
        if err is not None:
            errors[om] = err
    pts.sort(key=lambda q: (q.omega, q.rho, q.psi))
    return FRCResult(pts, errors, diag)


@dataclass
class FRCBranch:
    """Connected FRC component; ``isola`` when no point lies on the sweep boundary."""

    points: List[FRCPoint]
    isola: bool

    @property
    def omega_range(self) -> Tuple[float, float]:
        om = [p.omega for p in self.points]
        return min(om), max(om)


def _point_distance(p: FRCPoint, q: FRCPoint, rho_scale: float) -> float:
    dpsi = (p.psi - q.psi + math.pi) % (2 * math.pi) - math.pi
    return math.hypot((p.rho - q.rho) / rho_scale, dpsi / math.pi)


def split_branches(points: Sequence[FRCPoint], max_jump: float = 0.3) -> List[FRCBranch]:
    """Group FRC points into connected branches.

    Adjacent frequency columns are linked by an optimal assignment on the
    distance ``hypot(d rho / rho_max, d psi / pi)``; links longer than
    ``max_jump`` are cut. Chain ends that stop in the same column within
    ``max_jump`` of each other are joined as a fold. Components touching
    neither the first nor the last column are flagged as isolas.
    """
    from scipy.optimize import linear_sum_assignment

    pts = list(points)
    if not pts:
        return []
    columns = sorted({p.omega for p in pts})
    col_of = {om: k for k, om in enumerate(columns)}
    by_col: List[List[int]] = [[] for _ in columns]
    for i, p in enumerate(pts):
        by_col[col_of[p.omega]].append(i)
    rho_scale = max(max(p.rho for p in pts), 1e-300)
    parent = list(range(len(pts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    has_next = set()
    has_prev = set()
    for k in range(len(columns) - 1):
        left, right = by_col[k], by_col[k + 1]
        if not left or not right:
            continue
        cost = np.array([[_point_distance(pts[i], pts[j], rho_scale) for j in right] for i in left])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] <= max_jump:
                union(left[r], right[c])
                has_next.add(left[r])
                has_prev.add(right[c])
    # fold joins: two chain ends in the same column facing the same direction
    for k, col in enumerate(columns):
        for missing in (has_next, has_prev):
            if (missing is has_next and k == len(columns) - 1) or (missing is has_prev and k == 0):
                continue
            ends = [i for i in by_col[k] if i not in missing]
            used = set()
            pairs = sorted((_point_distance(pts[i], pts[j], rho_scale), i, j)
                           for a, i in enumerate(ends) for j in ends[a + 1:])
            for d, i, j in pairs:
                if d <= max_jump and i not in used and j not in used:
                    union(i, j)
                    used.update((i, j))
    groups: Dict[int, List[int]] = {}
    for i in range(len(pts)):
        groups.setdefault(find(i), []).append(i)
    last = len(columns) - 1
    branches = []
    for members in groups.values():
        members.sort(key=lambda i: (pts[i].omega, pts[i].rho, pts[i].psi))
        touches = any(col_of[pts[i].omega] in (0, last) for i in members)
        branches.append(FRCBranch([pts[i] for i in members], isola=not touches and len(columns) > 2))
    branches.sort(key=lambda b: (b.points[0].omega, b.points[0].rho))
    return branches
