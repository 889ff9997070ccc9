"""Master-mode eigenproblem, selection and biorthonormal normalization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .model import FirstOrderModel, SecondOrderModel
from .multiindex import indices_up_to

__all__ = [
    "SpectralError",
    "SemisimpleViolation",
    "UnstableMasterWarning",
    "MasterSubspace",
    "solve_master_modes",
    "full_spectrum",
    "check_outer_resonances",
]

HYPERBOLIC_TOL = 1e-10
CLUSTER_RTOL = 1e-8


class SpectralError(ValueError):
    pass


class SemisimpleViolation(SpectralError):
    pass


class UnstableMasterWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MasterSubspace:
    """Selected conjugate pairs with right and left mode shapes.

    Attributes
    ----------
    eigenvalues : ndarray, shape (M,)
        ``(lambda_1, conj lambda_1, lambda_2, ...)``.
    phi, theta : ndarray, shape (n, M) or None
        Second-order right and left shapes (``None`` for generic first-order models).
    V, U : ndarray, shape (N, M)
        Lifted right and left vectors with ``U^* B V = I``.
    others : ndarray
        Finite eigenvalues not in the master set.
    """

    eigenvalues: np.ndarray
    phi: np.ndarray | None
    theta: np.ndarray | None
    V: np.ndarray
    U: np.ndarray
    others: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    pair_indices: Tuple[int, ...] = ()

    @property
    def M(self) -> int:
        return self.eigenvalues.shape[0]

    def conjugate_slot(self, j: int) -> int:
        return j + 1 if j % 2 == 0 else j - 1

    def conjugate_index(self, m: Sequence[int]) -> Tuple[int, ...]:
        """Multi-index with each conjugate slot pair swapped."""
        out = list(m)
        for k in range(0, len(out), 2):
            out[k], out[k + 1] = out[k + 1], out[k]
        return tuple(out)

    @property
    def is_stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))


def _eig_lifted(A: np.ndarray, B: np.ndarray):
    w, vl, vr = sla.eig(A, B, left=True, right=True)
    finite = np.isfinite(w)
    return w[finite], vl[:, finite], vr[:, finite]


def full_spectrum(model) -> np.ndarray:
    """All finite eigenvalues of the linearization, sorted by ``|Re|`` then ``Im``."""
    fom = model.lifted() if isinstance(model, SecondOrderModel) else model
    w = sla.eigvals(fom.A, fom.B)
    w = w[np.isfinite(w)]
    return w[_slowest_first(w)]


def _slowest_first(w: np.ndarray) -> np.ndarray:
    """Sort by ``|Re|``; equal damping rates (relative 1e-9) fall back to ``|Im|`` then ``Im``."""
    scale = max(float(np.max(np.abs(w.real))), 1e-300) if w.size else 1.0
    damping = np.round(np.abs(w.real) / scale, 9)
    return np.lexsort((w.imag, np.abs(w.imag), damping))


def solve_master_modes(model, pairs: int = 1, target_frequency: float | None = None,
                       mode_indices: Sequence[int] | None = None,
                       allow_unstable: bool = True) -> MasterSubspace:
    """Solve the linearized eigenproblem and return the normalized master pairs.

    Parameters
    ----------
    model : SecondOrderModel or FirstOrderModel
    pairs : int
        Number of slowest conjugate pairs (smallest ``|Re lambda|``) to select.
    target_frequency : float, optional
        Select the ``pairs`` pairs whose ``Im lambda`` is nearest this value instead.
    mode_indices : sequence of int, optional
        Explicit 1-based positions in the slowest-first list of pairs.
    allow_unstable : bool
        Accept master eigenvalues with positive real part (with a warning).

    Returns
    -------
    MasterSubspace
        Pairs ordered by increasing ``|Re lambda|``; right shapes have their
        largest-magnitude entry real positive and left shapes satisfy
        ``u_i^* B v_j = delta_ij``.

    Raises
    ------
    SpectralError
        Non-hyperbolic linearization or real (overdamped) master eigenvalues.
    SemisimpleViolation
        A master eigenvalue is repeated within the clustering tolerance.
    """
    second = isinstance(model, SecondOrderModel)
    fom = model.lifted() if second else model
    A, B = fom.A, fom.B
    w, vl, vr = _eig_lifted(A, B)
    scale = max(np.max(np.abs(w)), 1.0) if w.size else 1.0
    if w.size and np.min(np.abs(w.real)) <= HYPERBOLIC_TOL * scale:
        k = int(np.argmin(np.abs(w.real)))
        raise SpectralError(f"non-hyperbolic linearization: eigenvalue {w[k]:.6g} on the imaginary axis")

    upper = np.nonzero(w.imag > CLUSTER_RTOL * np.abs(w))[0]
    order = upper[_slowest_first(w[upper])]
    if mode_indices is not None:
        chosen = [order[i - 1] for i in mode_indices]
    elif target_frequency is not None:
        dist = np.abs(w[order].imag - target_frequency)
        chosen = [order[i] for i in np.argsort(dist, kind="stable")[:pairs]]
        chosen = [k for k in order if k in set(chosen)]
    else:
        chosen = list(order[:pairs])
    if len(chosen) == 0:
        raise SpectralError("no complex conjugate pair available for the master subspace "
                            "(overdamped real eigenvalues are not supported)")

    n = fom.n_second if second else None
    lams, vs, us, phis, thetas = [], [], [], [], []
    for k in chosen:
        lam = w[k]
        gap = np.abs(w - lam)
        gap[k] = np.inf
        if np.min(gap) <= CLUSTER_RTOL * max(abs(lam), 1.0):
            raise SemisimpleViolation(f"semisimple assumption violated: eigenvalue {lam:.6g} is repeated")
        v = vr[:, k].astype(complex)
        u = vl[:, k].astype(complex)
        if second:
            phi = v[:n]
            phi = phi / np.linalg.norm(phi)
            imax = int(np.argmax(np.abs(phi)))
            phi = phi * (abs(phi[imax]) / phi[imax])
            phi[imax] = phi[imax].real
            theta = u[:n]
            s = theta.conj() @ ((model.damping + 2 * lam * model.mass) @ phi)
            theta = theta / np.conj(s)
            v = np.concatenate([phi, lam * phi])
            u = np.concatenate([theta, np.conj(lam) * theta])
            phis.append(phi)
            thetas.append(theta)
        else:
            v = v / np.linalg.norm(v)
            imax = int(np.argmax(np.abs(v)))
            v = v * (abs(v[imax]) / v[imax])
            s = u.conj() @ (B @ v)
            u = u / np.conj(s)
        lams.append(lam)
        vs.append(v)
        us.append(u)

    eig = []
    V = []
    U = []
    PH = []
    TH = []
    for i, lam in enumerate(lams):
        eig += [lam, np.conj(lam)]
        V += [vs[i], np.conj(vs[i])]
        U += [us[i], np.conj(us[i])]
        if second:
            PH += [phis[i], np.conj(phis[i])]
            TH += [thetas[i], np.conj(thetas[i])]
    eig = np.array(eig)
    if np.any(eig.real > 0):
        if not allow_unstable:
            raise SpectralError("master eigenvalues have positive real part")
        warnings.warn("master eigenvalues have positive real part; the origin is unstable "
                      "and the SSM is computed formally", UnstableMasterWarning, stacklevel=2)
    chosen_set = set(int(k) for k in chosen)
    others = np.array([w[k] for k in range(w.size)
                       if k not in chosen_set and not any(abs(w[k] - np.conj(w[c])) <= CLUSTER_RTOL * max(abs(w[c]), 1.0)
                                                          for c in chosen)])
    return MasterSubspace(
        eigenvalues=eig,
        phi=np.array(PH).T if second else None,
        theta=np.array(TH).T if second else None,
        V=np.array(V).T,
        U=np.array(U).T,
        others=others,
        pair_indices=tuple(int(np.nonzero(order == k)[0][0]) + 1 for k in chosen),
    )


def check_outer_resonances(subspace: MasterSubspace, others: Sequence[complex] | None = None,
                           max_order: int = 5, rtol: float = 0.05) -> List[dict]:
    """Flag non-master eigenvalues near integer combinations of master eigenvalues.

    A resonance ``lambda_k ~ Lambda . m`` is reported when
    ``|lambda_k - Lambda . m| < rtol |lambda_k|`` for ``1 <= |m| <= max_order``.
    The report is advisory; a warning is issued when it is nonempty.
    """
    if others is None:
        others = subspace.others
    others = np.asarray(others, dtype=complex)
    report = []
    lam = subspace.eigenvalues
    for m in indices_up_to(max_order, subspace.M, min_order=1):
        Lm = complex(np.dot(lam, m))
        for k, lk in enumerate(others):
            d = abs(lk - Lm)
            if d < rtol * abs(lk):
                report.append({"multi_index": m, "order": sum(m), "eigenvalue": complex(lk), "distance": d})
    if report:
        warnings.warn(f"{len(report)} outer resonance(s) between master and non-master modes", stacklevel=2)
    return report
