"""Order-by-order autonomous SSM for second-order systems in normal-form style.

The parametrization is ``y = w(p)``, ``y' = w'(p)`` with reduced dynamics
``p' = R(p)``; coefficients are stored per multi-index over the ``M`` master
coordinates. Shared machinery (polynomial composition, mixing sums, series
evaluation) lives here and is reused by the non-autonomous and first-order
solvers.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .model import SecondOrderModel, FirstOrderModel
from .multiindex import (
    CompositionTable,
    MultiIndex,
    add,
    enumerate_indices,
    multiply_series,
    unit,
    zero,
)
from .spectral import MasterSubspace

__all__ = [
    "SSMSolveError",
    "SeriesTable",
    "PolynomialComposer",
    "AutonomousSSM",
    "InvarianceWorkspace",
    "compute_autonomous_ssm",
    "reconstruct_velocity",
    "autonomous_residual",
    "default_resonance_tolerance",
    "conjugate_vector",
]

CONDITION_LIMIT = 1e12
PIVOT_TOL = 1e-14


class SSMSolveError(ArithmeticError):
    """Singular or ill-posed homological equation."""


# ---------------------------------------------------------------- helpers

def default_resonance_tolerance(subspace: MasterSubspace) -> float:
    return 0.5 * float(np.max(np.abs(subspace.eigenvalues.real)))


def conjugate_index(m: MultiIndex) -> MultiIndex:
    out = list(m)
    for k in range(0, len(out), 2):
        out[k], out[k + 1] = out[k + 1], out[k]
    return tuple(out)


def conjugate_vector(r: np.ndarray) -> np.ndarray:
    """Reduced-coordinate vector at the conjugate index: slot-swapped conjugate."""
    out = np.empty_like(r, dtype=complex)
    out[0::2], out[1::2] = np.conj(r[1::2]), np.conj(r[0::2])
    return out


def canonical_representatives(indices: Sequence[MultiIndex]) -> List[MultiIndex]:
    """One index per conjugate pair, preserving input order."""
    seen = set()
    out = []
    for m in indices:
        if m in seen:
            continue
        cm = conjugate_index(m)
        seen.add(m)
        seen.add(cm)
        out.append(max(m, cm))
    return out


class SeriesTable:
    """Dense evaluator for ``sum_m c_m p^m`` with vector coefficients.

    Parameters
    ----------
    coefficients : mapping
        ``m -> vector``; all vectors share one length.
    dimension : int
        Number of reduced coordinates.
    size : int
        Output length (used when the mapping is empty).
    """

    def __init__(self, coefficients: Mapping[MultiIndex, np.ndarray], dimension: int, size: int):
        items = sorted(coefficients.items())
        self.dimension = dimension
        self.size = size
        if items:
            self.exps = np.array([m for m, _ in items], dtype=int).reshape(len(items), dimension)
            self.coeffs = np.array([np.asarray(v, dtype=complex) for _, v in items]).T.reshape(size, len(items))
        else:
            self.exps = np.zeros((0, dimension), dtype=int)
            self.coeffs = np.zeros((size, 0), dtype=complex)

    def _monomials(self, p: np.ndarray) -> np.ndarray:
        # p: (M, K) -> (terms, K)
        return np.prod(p[None, :, :] ** self.exps[:, :, None], axis=1)

    def value(self, p) -> np.ndarray:
        """Values at ``p`` of shape ``(M,)`` or ``(M, K)``."""
        p = np.asarray(p, dtype=complex)
        single = p.ndim == 1
        P = p[:, None] if single else p
        out = self.coeffs @ self._monomials(P)
        return out[:, 0] if single else out

    def derivative(self, p, direction) -> np.ndarray:
        """Directional derivative ``D(series)(p) @ direction``; arrays as in :meth:`value`."""
        p = np.asarray(p, dtype=complex)
        d = np.asarray(direction, dtype=complex)
        single = p.ndim == 1
        P = p[:, None] if single else p
        D = d[:, None] if single else d
        out = np.zeros((self.size, P.shape[1]), dtype=complex)
        for j in range(self.dimension):
            e = self.exps[:, j]
            mask = e > 0
            if not np.any(mask):
                continue
            ex = self.exps[mask].copy()
            ex[:, j] -= 1
            mono = np.prod(P[None, :, :] ** ex[:, :, None], axis=1) * e[mask][:, None]
            out += (self.coeffs[:, mask] @ mono) * D[j][None, :]
        return out[:, 0] if single else out


class PolynomialComposer:
    """Coefficients of ``sum_n c_n Z(p)^n`` for a truncated vector series ``Z``.

    ``terms`` maps multi-indices over the ``dim`` coordinates of ``Z`` to
    output vectors. Powers are assembled from per-coordinate
    :class:`CompositionTable` objects built only for the coordinates that
    appear in some term.
    """

    def __init__(self, terms: Mapping[MultiIndex, np.ndarray], dim: int):
        self.terms = {tuple(n): np.asarray(v, dtype=complex) for n, v in terms.items() if np.any(v != 0)}
        self.dim = dim
        self.coordinates = sorted({i for n in self.terms for i, e in builtins.enumerate(n) if e})
        self.out_size = len(next(iter(self.terms.values()))) if self.terms else 0

    def _tables(self, series, reduced_dim: int, target: int) -> Dict[int, CompositionTable]:
        tables = {}
        for i in self.coordinates:
            scal = {}
            for m, v in series.items():
                c = complex(v[i])
                if c != 0 and 0 < sum(m) <= target:
                    scal[m] = c
            tables[i] = CompositionTable(scal, reduced_dim, target)
        return tables

    @staticmethod
    def _power(tables, n, reduced_dim, target):
        out = {zero(reduced_dim): 1.0 + 0j}
        for i, ni in builtins.enumerate(n):
            if ni:
                out = multiply_series(out, tables[i].power(ni), target)
                if not out:
                    break
        return out

    def coefficients(self, series: Mapping[MultiIndex, np.ndarray], reduced_dim: int,
                     target: int, min_order: int = 0) -> Dict[MultiIndex, np.ndarray]:
        """``h -> sum_n c_n H_{n,h}`` for ``min_order <= |h| <= target``."""
        out: Dict[MultiIndex, np.ndarray] = {}
        if not self.terms:
            return out
        tables = self._tables(series, reduced_dim, target)
        for n, c in self.terms.items():
            for h, val in self._power(tables, n, reduced_dim, target).items():
                if sum(h) < min_order:
                    continue
                if h in out:
                    out[h] = out[h] + c * val
                else:
                    out[h] = c * val
        return out

    def jacobian_tables(self, series, reduced_dim: int, target: int) -> Dict[int, Dict[MultiIndex, np.ndarray]]:
        """``l -> (h -> sum_n n_l c_n H_{n-e_l,h})``: the Jacobian along ``Z(p)`` as a series."""
        out: Dict[int, Dict[MultiIndex, np.ndarray]] = {}
        if not self.terms:
            return out
        tables = self._tables(series, reduced_dim, target)
        for n, c in self.terms.items():
            for l, nl in builtins.enumerate(n):
                if not nl:
                    continue
                reduced = tuple(e - (1 if k == l else 0) for k, e in builtins.enumerate(n))
                dest = out.setdefault(l, {})
                for h, val in self._power(tables, reduced, reduced_dim, target).items():
                    term = nl * c * val
                    dest[h] = dest[h] + term if h in dest else term
        return out


def contract_jacobian(jac: Mapping[int, Mapping[MultiIndex, np.ndarray]], lookup: Callable[[MultiIndex], np.ndarray | None],
                      m: MultiIndex, size: int) -> np.ndarray:
    """``sum_l sum_{h <= m, |h| >= 1} J_l[h] * xi_l(m - h)`` with ``xi`` fetched by ``lookup``."""
    acc = np.zeros(size, dtype=complex)
    for l, table in jac.items():
        for h, vec in table.items():
            if sum(h) == 0:
                continue
            if any(a < b for a, b in zip(m, h)):
                continue
            xi = lookup(tuple(a - b for a, b in zip(m, h)))
            if xi is not None and xi[l] != 0:
                acc += vec * xi[l]
    return acc


def mixing_sum(values: Mapping[MultiIndex, np.ndarray], reduced: Mapping[MultiIndex, np.ndarray],
               m: MultiIndex, min_u: int, max_u: int, size: int) -> np.ndarray:
    """``sum_j sum_{u + k - e_j = m} u_j values[u] reduced[k]_j`` for ``min_u <= |u| <= max_u``."""
    acc = np.zeros(size, dtype=complex)
    order = sum(m)
    for k, rk in reduced.items():
        uo = order - sum(k) + 1
        if uo < min_u or uo > max_u:
            continue
        for j, rkj in builtins.enumerate(rk):
            if rkj == 0:
                continue
            u = []
            ok = True
            for a, (mi, ki) in builtins.enumerate(zip(m, k)):
                val = mi - ki + (1 if a == j else 0)
                if val < 0:
                    ok = False
                    break
                u.append(val)
            if not ok:
                continue
            u = tuple(u)
            wu = values.get(u)
            if wu is not None:
                acc += u[j] * rkj * wu
    return acc


# ---------------------------------------------------------------- data types

@dataclass
class InvarianceWorkspace:
    """Per-index intermediates ``L_m``, ``D_m``, ``V_m``, ``Y_m`` and ``Lambda_m``."""

    Lambda: complex
    L: np.ndarray
    D: np.ndarray
    V: np.ndarray
    Y: np.ndarray


@dataclass(eq=False)
class AutonomousSSM:
    """Autonomous SSM coefficient tables.

    Attributes
    ----------
    subspace : MasterSubspace
    order : int
    w, wdot : dict
        ``m -> n-vector`` displacement and velocity coefficients.
    R : dict
        ``m -> M-vector`` reduced dynamics; only nonzero entries are stored.
    resonance_log : list of (m, i)
    tolerance : float
        Resonance tolerance on ``|Im(lambda_i - Lambda.m)|``.
    style : str
        Solvability convention, ``"lifted"`` or ``"displacement"``.
    """

    subspace: MasterSubspace
    order: int
    w: Dict[MultiIndex, np.ndarray]
    wdot: Dict[MultiIndex, np.ndarray]
    R: Dict[MultiIndex, np.ndarray]
    resonance_log: List[Tuple[MultiIndex, int]]
    tolerance: float
    style: str = "lifted"
    workspace: Dict[MultiIndex, InvarianceWorkspace] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.subspace.M

    def phase_space(self) -> Dict[MultiIndex, np.ndarray]:
        """``m -> [w_m; wdot_m]``."""
        return {m: np.concatenate([self.w[m], self.wdot[m]]) for m in self.w}

    def displacement_table(self) -> SeriesTable:
        n = len(next(iter(self.w.values())))
        return SeriesTable(self.w, self.M, n)

    def phase_table(self) -> SeriesTable:
        ps = self.phase_space()
        return SeriesTable(ps, self.M, len(next(iter(ps.values()))))

    def reduced_table(self) -> SeriesTable:
        return SeriesTable(self.R, self.M, self.M)

    def truncated(self, order: int) -> "AutonomousSSM":
        keep = lambda d: {m: v for m, v in d.items() if sum(m) <= order}
        return AutonomousSSM(self.subspace, order, keep(self.w), keep(self.wdot), keep(self.R),
                             [(m, i) for m, i in self.resonance_log if sum(m) <= order],
                             self.tolerance, self.style)


# ---------------------------------------------------------------- solver

def _nonlinearity_terms(model: SecondOrderModel) -> Dict[MultiIndex, np.ndarray]:
    return model.nonlinearity.first_order_terms()


def _bordered_solve(L, rhs, rows, values):
    Aug = np.vstack([L, np.atleast_2d(rows)])
    b = np.concatenate([rhs, values])
    sol, *_ = np.linalg.lstsq(Aug, b, rcond=None)
    return sol


def solve_homological(L: np.ndarray, rhs: np.ndarray, resonant: Sequence[int], constraint,
                      label: str, nearest: complex) -> np.ndarray:
    """Solve ``L x = rhs``; bordered least squares when ``L`` is numerically singular.

    ``constraint(i)`` returns ``(row, value)`` pinning the kernel component of
    resonant mode ``i``.
    """
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        if not resonant:
            raise SSMSolveError(f"homological operator singular at {label} (condition {cond:.3e}) "
                                f"with no resonance detected; nearest master eigenvalue {nearest:.6g}; "
                                "increase the resonance tolerance")
        rows, vals = zip(*(constraint(i) for i in resonant))
        return _bordered_solve(L, rhs, np.array(rows), np.array(vals))
    return np.linalg.solve(L, rhs)


def compute_autonomous_ssm(model: SecondOrderModel, subspace: MasterSubspace, order: int,
                           resonance_tolerance: float | None = None, style: str = "lifted",
                           keep_workspace: bool = False,
                           _solve_order: Callable[[List[MultiIndex]], List[MultiIndex]] | None = None) -> AutonomousSSM:
    """Solve the autonomous invariance equation order by order.

    Parameters
    ----------
    model : SecondOrderModel
    subspace : MasterSubspace
        Master modes from :func:`ssmpar.spectral.solve_master_modes`.
    order : int
        Truncation order ``>= 1``.
    resonance_tolerance : float, optional
        Inner resonance threshold on ``|Im(lambda_i - Lambda.m)|``; defaults to
        half the largest master damping rate.
    style : {"lifted", "displacement"}
        ``"lifted"`` picks reduced coefficients so that the phase-space
        coefficient is B-orthogonal to the resonant left eigenvectors (agrees
        with the first-order path); ``"displacement"`` annihilates the
        projection of the displacement equation onto the left mode shape.
    keep_workspace : bool
        Store ``L_m, D_m, V_m, Y_m`` per index.

    Returns
    -------
    AutonomousSSM

    Raises
    ------
    SSMSolveError
        Singular homological operator without detected resonance, or a
        vanishing solvability pivot.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if style not in ("lifted", "displacement"):
        raise ValueError("style must be 'lifted' or 'displacement'")
    if subspace.phi is None:
        raise ValueError("second-order solver needs a subspace computed from a SecondOrderModel")
    Mm, Cm, Km = model.mass, model.damping, model.stiffness
    n = model.n
    lam = subspace.eigenvalues
    Mdim = subspace.M
    phi, theta = subspace.phi, subspace.theta
    tol = default_resonance_tolerance(subspace) if resonance_tolerance is None else float(resonance_tolerance)

    w: Dict[MultiIndex, np.ndarray] = {}
    wd: Dict[MultiIndex, np.ndarray] = {}
    R: Dict[MultiIndex, np.ndarray] = {}
    for j in range(Mdim):
        e = unit(j, Mdim)
        w[e] = phi[:, j].copy()
        wd[e] = lam[j] * phi[:, j]
        r = np.zeros(Mdim, dtype=complex)
        r[j] = lam[j]
        R[e] = r
    log: List[Tuple[MultiIndex, int]] = []
    work: Dict[MultiIndex, InvarianceWorkspace] = {}
    composer = PolynomialComposer(_nonlinearity_terms(model), 2 * n)

    for k in range(2, order + 1):
        series = {m: np.concatenate([w[m], wd[m]]) for m in w}
        fk = composer.coefficients(series, Mdim, k, min_order=k)
        higher_R = {m: r for m, r in R.items() if sum(m) >= 2}
        indices = list(enumerate_indices(k, Mdim))
        if _solve_order is not None:
            indices = list(_solve_order(indices))
        new_w, new_wd, new_R = {}, {}, {}
        for m in canonical_representatives(indices):
            Lam = complex(np.dot(lam, m))
            V = mixing_sum(w, higher_R, m, 2, k - 1, n)
            Vd = mixing_sum(wd, higher_R, m, 2, k - 1, n)
            fm = fk.get(m, np.zeros(n, dtype=complex))
            Y = Cm @ V + Mm @ Vd + fm
            Cvec = -(Lam * (Mm @ V) + Y)
            resonant = [i for i in range(Mdim) if abs((lam[i] - Lam).imag) < tol]
            Rm = np.zeros(Mdim, dtype=complex)
            if resonant:
                if style == "lifted":
                    for i in resonant:
                        Rm[i] = -np.vdot(theta[:, i], Y + lam[i] * (Mm @ V))
                else:
                    P = np.array([[np.vdot(theta[:, i], ((Lam + lam[j]) * Mm + Cm) @ phi[:, j])
                                   for j in resonant] for i in resonant])
                    if np.min(np.abs(np.diag(P))) < PIVOT_TOL * max(1.0, np.max(np.abs(P))):
                        raise SSMSolveError(f"solvability pivot vanishes at m={m}")
                    rhs = np.array([np.vdot(theta[:, i], Cvec) for i in resonant])
                    Rm[resonant] = np.linalg.solve(P, rhs)
            Dm = np.column_stack([-(((Lam + lam[j]) * Mm + Cm) @ phi[:, j]) for j in range(Mdim)])
            rhs = Dm @ Rm + Cvec
            L = Km + Lam * Cm + Lam * Lam * Mm

            def constraint(i, Lam=Lam, Rm=Rm, V=V):
                if style == "lifted":
                    row = theta[:, i].conj() @ (Cm + (lam[i] + Lam) * Mm)
                    val = -np.vdot(theta[:, i], Mm @ (phi @ Rm + V))
                    return row, val
                return theta[:, i].conj() @ Mm, 0.0

            nearest = lam[int(np.argmin(np.abs(lam - Lam)))]
            wm = solve_homological(L, rhs, resonant, constraint, f"m={m}", nearest)
            wdm = Lam * wm + phi @ Rm + V
            new_w[m], new_wd[m] = wm, wdm
            if np.any(Rm != 0):
                new_R[m] = Rm
            for i in resonant:
                log.append((m, i))
            if keep_workspace:
                work[m] = InvarianceWorkspace(Lam, L, Dm, V, Y)
            cm = conjugate_index(m)
            if cm != m:
                new_w[cm], new_wd[cm] = np.conj(wm), np.conj(wdm)
                if np.any(Rm != 0):
                    new_R[cm] = conjugate_vector(Rm)
                for i in resonant:
                    log.append((cm, subspace.conjugate_slot(i)))
                if keep_workspace:
                    work[cm] = InvarianceWorkspace(np.conj(Lam), np.conj(L), np.conj(Dm[:, _slot_perm(Mdim)]),
                                                   np.conj(V), np.conj(Y))
        w.update(new_w)
        wd.update(new_wd)
        R.update(new_R)

    log.sort()
    return AutonomousSSM(subspace, order, w, wd, R, log, tol, style, work)


def _slot_perm(M: int) -> List[int]:
    return [j + 1 if j % 2 == 0 else j - 1 for j in range(M)]


def reconstruct_velocity(w: Mapping[MultiIndex, np.ndarray], R: Mapping[MultiIndex, np.ndarray],
                         m: MultiIndex) -> np.ndarray:
    """Velocity coefficient ``sum_j sum_{u + k - e_j = m} u_j w_u R^j_k`` by direct summation."""
    size = len(next(iter(w.values())))
    return mixing_sum(w, R, tuple(m), 1, sum(m), size)


def autonomous_residual(model, ssm: AutonomousSSM, points=None, radius: float = 0.1,
                        samples: int = 16, seed: int = 0) -> dict:
    """Invariance residual of the autonomous SSM in first-order form.

    Evaluates ``B DW(p) R(p) - A W(p) - F(W(p))`` at reduced points and
    reports the maximum norm relative to ``max ||A W(p)||``.

    Parameters
    ----------
    model : SecondOrderModel or FirstOrderModel
    ssm : AutonomousSSM or FirstOrderSSM
    points : array_like, optional
        Shape ``(M, K)``; defaults to ``samples`` conjugate-symmetric points of
        norm ``radius`` drawn with a fixed seed.
    """
    fom = model.lifted() if isinstance(model, SecondOrderModel) else model
    Mdim = ssm.subspace.M
    if points is None:
        points = conjugate_symmetric_points(Mdim, radius, samples, seed)
    P = np.asarray(points, dtype=complex)
    Wt = ssm.phase_table()
    Rt = ssm.reduced_table()
    Wp = Wt.value(P)
    Rp = Rt.value(P)
    lhs = fom.B @ Wt.derivative(P, Rp)
    AW = fom.A @ Wp
    Fp = np.column_stack([fom.f_poly().value(Wp[:, k]) for k in range(P.shape[1])])
    res = lhs - AW - Fp
    scale = max(np.max(np.linalg.norm(AW, axis=0)), 1e-300)
    absmax = float(np.max(np.linalg.norm(res, axis=0)))
    return {"max_abs": absmax, "max_rel": absmax / scale, "scale": float(scale)}


def conjugate_symmetric_points(M: int, radius: float, samples: int, seed: int = 0) -> np.ndarray:
    """Random reduced points with ``p_{2k+1} = conj p_{2k}`` and Euclidean norm ``radius``."""
    rng = np.random.default_rng(seed)
    half = M // 2
    z = rng.normal(size=(half, samples)) + 1j * rng.normal(size=(half, samples))
    P = np.zeros((M, samples), dtype=complex)
    P[0::2] = z
    P[1::2] = np.conj(z)
    P *= radius / np.linalg.norm(P, axis=0)[None, :]
    return P
