"""Second-order mechanical models, their first-order lift and the model file format."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .multiindex import MultiIndex, check_index

__all__ = [
    "ModelError",
    "QuasiperiodicNotImplemented",
    "NonlinearityExpansion",
    "ForcingExpansion",
    "SecondOrderModel",
    "FirstOrderModel",
    "lift_to_first_order",
    "evaluate_full_rhs",
    "parse_model_file",
    "serialize_model",
    "model_to_dict",
    "model_from_dict",
    "require_periodic",
    "models_equal",
]

REALNESS_RTOL = 1e-12


class ModelError(ValueError):
    """Invalid model data; the message starts with the offending location."""


class QuasiperiodicNotImplemented(NotImplementedError):
    pass


def require_periodic(frequency_count: int) -> None:
    if frequency_count != 1:
        raise QuasiperiodicNotImplemented(
            f"quasiperiodic not implemented (frequency_count={frequency_count})")


def _as_dense(mat, name: str) -> np.ndarray:
    if sp.issparse(mat):
        mat = mat.toarray()
    arr = np.array(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ModelError(f"{name}: matrix must be square, got shape {arr.shape}")
    return arr


def _vec(coeff, n: int, where: str) -> np.ndarray:
    v = np.asarray(coeff, dtype=complex).reshape(-1)
    if v.shape != (n,):
        raise ModelError(f"{where}: coefficient vector must have length {n}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class NonlinearityExpansion:
    """Polynomial internal force ``f(y, ydot) = sum f_{a,b} y^a ydot^b``.

    Parameters
    ----------
    n : int
        Number of degrees of freedom.
    terms : mapping
        ``(a, b) -> f_{a,b}`` with ``a, b`` multi-indices of length ``n`` and
        ``|a| + |b| >= 2``.
    """

    n: int
    terms: Mapping[Tuple[MultiIndex, MultiIndex], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, (key, coeff) in enumerate(self.terms.items()):
            a, b = key
            where = f"nonlinear_terms[{k}]"
            a, b = _check_pair(a, b, self.n, where)
            if sum(a) + sum(b) < 2:
                raise ModelError(f"{where}: nonlinear term of total degree {sum(a) + sum(b)} "
                                 "(constant and linear terms belong in the matrices)")
            v = _vec(coeff, self.n, where)
            key2 = (a, b)
            clean[key2] = clean.get(key2, 0) + v
        object.__setattr__(self, "terms", clean)

    @property
    def degree(self) -> int:
        return max((sum(a) + sum(b) for a, b in self.terms), default=0)

    def first_order_terms(self) -> Dict[MultiIndex, np.ndarray]:
        """Map ``a ⊕ b -> f_{a,b}`` over the ``2n`` phase-space coordinates."""
        return {tuple(a) + tuple(b): v for (a, b), v in self.terms.items()}


@dataclass(frozen=True)
class ForcingExpansion:
    """Harmonic forcing ``g = sum g_{a,b,kappa} e^{i kappa.phi} y^a ydot^b``.

    Every stored ``(a, b, kappa)`` must have a partner at ``-kappa`` carrying
    the complex-conjugate vector, so that ``g`` is real.
    """

    n: int
    frequency_count: int = 1
    terms: Mapping[Tuple[MultiIndex, MultiIndex, Tuple[int, ...]], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, (key, coeff) in enumerate(self.terms.items()):
            a, b, kappa = key
            where = f"forcing_terms[{k}]"
            a, b = _check_pair(a, b, self.n, where)
            kappa = tuple(int(x) for x in np.atleast_1d(kappa))
            if len(kappa) != self.frequency_count:
                raise ModelError(f"{where}: kappa must have {self.frequency_count} entries, got {len(kappa)}")
            if all(x == 0 for x in kappa):
                raise ModelError(f"{where}: kappa = 0 terms are not harmonic forcing")
            v = _vec(coeff, self.n, where)
            key2 = (a, b, kappa)
            clean[key2] = clean.get(key2, 0) + v
        for k, ((a, b, kappa), v) in enumerate(clean.items()):
            partner = clean.get((a, b, tuple(-x for x in kappa)))
            where = f"forcing_terms[{k}] (a={list(a)}, b={list(b)}, kappa={list(kappa)})"
            if partner is None:
                raise ModelError(f"{where}: realness violated, no conjugate term at kappa={[-x for x in kappa]}")
            scale = max(np.max(np.abs(v)), 1e-300)
            if np.max(np.abs(partner - np.conj(v))) > REALNESS_RTOL * scale:
                raise ModelError(f"{where}: realness violated, term at -kappa is not the conjugate")
        object.__setattr__(self, "terms", clean)

    @property
    def harmonics(self) -> List[int]:
        return sorted({kappa[0] for (_, _, kappa) in self.terms})

    def first_order_terms(self) -> Dict[Tuple[MultiIndex, int], np.ndarray]:
        """Map ``(a ⊕ b, kappa) -> g`` for a single base frequency."""
        require_periodic(self.frequency_count)
        return {(tuple(a) + tuple(b), kappa[0]): v for (a, b, kappa), v in self.terms.items()}

    def is_parametric_only(self) -> bool:
        return all(sum(a) + sum(b) > 0 for (a, b, _) in self.terms)


def _check_pair(a, b, n: int, where: str) -> Tuple[MultiIndex, MultiIndex]:
    try:
        a = check_index(a)
        b = check_index(b)
    except ValueError as exc:
        raise ModelError(f"{where}: {exc}") from None
    if len(a) != n or len(b) != n:
        raise ModelError(f"{where}: exponent vectors a, b must have length {n}")
    return a, b


@dataclass(frozen=True, eq=False)
class SecondOrderModel:
    """``M y'' + C y' + K y + f(y, y') = eps g(Omega t, y, y')``.

    Parameters
    ----------
    mass, damping, stiffness : array_like or sparse
        Square ``n x n`` real matrices; stored dense.
    nonlinearity : NonlinearityExpansion
    forcing : ForcingExpansion
    epsilon : float
        Forcing scale.
    frequency_count : int
        Number of base frequencies; only ``1`` is supported by the solvers.
    name : str
        Free-form label.
    """

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    nonlinearity: NonlinearityExpansion
    forcing: ForcingExpansion
    epsilon: float = 1.0
    frequency_count: int = 1
    name: str = ""

    def __post_init__(self):
        M = _as_dense(self.mass, "mass")
        C = _as_dense(self.damping, "damping")
        K = _as_dense(self.stiffness, "stiffness")
        n = M.shape[0]
        for nm, mat in (("damping", C), ("stiffness", K)):
            if mat.shape != (n, n):
                raise ModelError(f"{nm}: shape {mat.shape} does not match mass {M.shape}")
        if self.nonlinearity.n != n:
            raise ModelError(f"nonlinear_terms: built for {self.nonlinearity.n} dofs, model has {n}")
        if self.forcing.n != n:
            raise ModelError(f"forcing_terms: built for {self.forcing.n} dofs, model has {n}")
        if self.forcing.frequency_count != self.frequency_count:
            raise ModelError("forcing_terms: frequency_count mismatch")
        object.__setattr__(self, "mass", M)
        object.__setattr__(self, "damping", C)
        object.__setattr__(self, "stiffness", K)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "_lift_cache", None)
        object.__setattr__(self, "_lock", threading.Lock())

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    def lifted(self) -> "FirstOrderModel":
        with self._lock:
            if self._lift_cache is None:
                object.__setattr__(self, "_lift_cache", lift_to_first_order(self))
        return self._lift_cache

    def with_epsilon(self, epsilon: float) -> "SecondOrderModel":
        return SecondOrderModel(self.mass, self.damping, self.stiffness, self.nonlinearity,
                                self.forcing, epsilon, self.frequency_count, self.name)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_lock", None)
        state["_lift_cache"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        object.__setattr__(self, "_lock", threading.Lock())


class _Polynomial:
    """Vectorized evaluation of ``sum_k c_k z^{n_k}`` and its Jacobian."""

    def __init__(self, terms: Mapping[MultiIndex, np.ndarray], dim: int, out_dim: int):
        items = [(k, v) for k, v in terms.items() if np.any(v != 0)]
        self.size = len(items)
        self.dim = dim
        if items:
            self.exps = np.array([k for k, _ in items], dtype=int)
            self.coeffs = np.array([v for _, v in items]).T.astype(complex)
            self.active = np.nonzero(self.exps.sum(axis=0))[0]
        else:
            self.exps = np.zeros((0, dim), dtype=int)
            self.coeffs = np.zeros((out_dim, 0), dtype=complex)
            self.active = np.zeros(0, dtype=int)

    def monomials(self, z: np.ndarray) -> np.ndarray:
        za = z[self.active]
        ea = self.exps[:, self.active]
        return np.prod(za[None, :] ** ea, axis=1)

    def value(self, z: np.ndarray) -> np.ndarray:
        if self.size == 0:
            return np.zeros(self.coeffs.shape[0], dtype=complex)
        return self.coeffs @ self.monomials(z)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros((self.coeffs.shape[0], self.dim), dtype=complex)
        if self.size == 0:
            return out
        za = z[self.active]
        ea = self.exps[:, self.active]
        for col, c in enumerate(self.active):
            e = ea[:, col]
            mask = e > 0
            if not np.any(mask):
                continue
            ed = ea[mask].copy()
            ed[:, col] -= 1
            d = e[mask] * np.prod(za[None, :] ** ed, axis=1)
            out[:, c] = self.coeffs[:, mask] @ d
        return out


@dataclass(frozen=True, eq=False)
class FirstOrderModel:
    """``B z' = A z + F(z) + eps G(Omega t, z)`` with polynomial ``F`` and ``G``.

    ``F`` maps multi-indices over ``N`` to ``N``-vectors; ``G`` maps
    ``(multi-index, kappa)`` to ``N``-vectors. ``n_second`` is the number of
    second-order degrees of freedom for lifted models and ``None`` otherwise.
    """

    A: np.ndarray
    B: np.ndarray
    F: Mapping[MultiIndex, np.ndarray]
    G: Mapping[Tuple[MultiIndex, int], np.ndarray]
    epsilon: float = 1.0
    frequency_count: int = 1
    n_second: int | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError("A and B must be square and of equal size")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        N = A.shape[0]
        F = {check_index(k): np.asarray(v, dtype=complex) for k, v in self.F.items()}
        G = {(check_index(k), int(kap)): np.asarray(v, dtype=complex) for (k, kap), v in self.G.items()}
        for k in F:
            if len(k) != N or sum(k) < 2:
                raise ModelError(f"F: invalid multi-index {k}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "_cache", {})
        object.__setattr__(self, "_lock", threading.Lock())

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def harmonics(self) -> List[int]:
        return sorted({k for (_, k) in self.G})

    def _get(self, key, builder):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = builder()
            return self._cache[key]

    def b_factor(self):
        """LU factorization of ``B``, computed once."""
        def build():
            if not np.all(np.isfinite(self.B)):
                raise ModelError("B contains non-finite entries")
            # det B = +-det(M)^2 for lifted models, so test the mass block alone
            probe = self.B[self.n_second:, :self.n_second] if self.n_second else self.B
            if np.linalg.matrix_rank(probe) < probe.shape[0]:
                raise ModelError("B is singular (singular mass matrix?); cannot form an explicit ODE")
            return sla.lu_factor(self.B)
        return self._get("lu", build)

    def solve_b(self, rhs: np.ndarray) -> np.ndarray:
        """``B^{-1} rhs``; lifted models use the mass block twice instead of factoring ``B``.

        ``cond(B)`` grows like ``cond(M)^2``, so the block route keeps
        stiff finite-element models accurate.
        """
        lu = self.b_factor()
        n = self.n_second
        if not n:
            return sla.lu_solve(lu, rhs)
        mass = self.B[n:, :n]
        damping = self.B[:n, :n]
        mlu = self._get("mass_lu", lambda: sla.lu_factor(mass))
        vel = sla.lu_solve(mlu, rhs[n:])
        acc = sla.lu_solve(mlu, rhs[:n] - damping @ vel)
        return np.concatenate([vel, acc])

    def f_poly(self) -> _Polynomial:
        return self._get("F", lambda: _Polynomial(self.F, self.N, self.N))

    def g_polys(self) -> Dict[int, _Polynomial]:
        def build():
            by_k: Dict[int, Dict[MultiIndex, np.ndarray]] = {}
            for (k, kap), v in self.G.items():
                by_k.setdefault(kap, {})[k] = v
            return {kap: _Polynomial(t, self.N, self.N) for kap, t in by_k.items()}
        return self._get("G", build)

    def linear_forcing(self) -> Dict[int, np.ndarray]:
        """``kappa -> dG/dz`` restricted to terms linear in ``z``."""
        def build():
            out: Dict[int, np.ndarray] = {}
            for (k, kap), v in self.G.items():
                if sum(k) == 1:
                    mat = out.setdefault(kap, np.zeros((self.N, self.N), dtype=complex))
                    mat[:, k.index(1)] += v
            return out
        return self._get("Glin", build)

    def constant_forcing(self) -> Dict[int, np.ndarray]:
        return {kap: v for (k, kap), v in self.G.items() if sum(k) == 0}

    def rhs_complex(self, z: np.ndarray, t: float, omega: float, epsilon: float | None = None) -> np.ndarray:
        """Right-hand side ``A z + F(z) + eps G`` before solving with ``B``."""
        eps = self.epsilon if epsilon is None else epsilon
        z = np.asarray(z)
        out = self.A @ z + self.f_poly().value(z)
        if eps != 0.0:
            for kap, poly in self.g_polys().items():
                out = out + eps * np.exp(1j * kap * omega * t) * poly.value(z)
        return out

    def rhs_jacobian_complex(self, z: np.ndarray, t: float, omega: float,
                             epsilon: float | None = None) -> np.ndarray:
        eps = self.epsilon if epsilon is None else epsilon
        out = self.A + self.f_poly().jacobian(np.asarray(z))
        if eps != 0.0:
            for kap, poly in self.g_polys().items():
                out = out + eps * np.exp(1j * kap * omega * t) * poly.jacobian(np.asarray(z))
        return out

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_lock", None)
        state["_cache"] = {}
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        object.__setattr__(self, "_lock", threading.Lock())


def lift_to_first_order(model: SecondOrderModel) -> FirstOrderModel:
    """Lift to ``z = [y; y']`` with ``A = [[-K, 0], [0, M]]``, ``B = [[C, M], [M, 0]]``.

    ``F_(a,b) = [-f_{a,b}; 0]`` and ``G_{(a,b),kappa} = [g_{a,b,kappa}; 0]``,
    the pair ``(a, b)`` being re-indexed as one multi-index over ``2n``.
    """
    n = model.n
    Z = np.zeros((n, n))
    A = np.block([[-model.stiffness, Z], [Z, model.mass]])
    B = np.block([[model.damping, model.mass], [model.mass, Z]])
    pad = np.zeros(n, dtype=complex)
    F = {k: np.concatenate([-v, pad]) for k, v in model.nonlinearity.first_order_terms().items()}
    G = {}
    if model.forcing.terms:
        G = {key: np.concatenate([v, pad]) for key, v in model.forcing.first_order_terms().items()}
    return FirstOrderModel(A, B, F, G, model.epsilon, model.frequency_count, n_second=n)


def evaluate_full_rhs(model, z, t: float, omega: float, epsilon: float | None = None) -> np.ndarray:
    """State derivative of the full system.

    Parameters
    ----------
    model : SecondOrderModel or FirstOrderModel
    z : array_like
        Phase-space state ``[y; y']`` (length ``2n``) or first-order state.
    t : float
        Time.
    omega : float
        Base forcing frequency.
    epsilon : float, optional
        Overrides the model's forcing scale.

    Returns
    -------
    numpy.ndarray
        ``z'``; real when ``z`` is real.

    Raises
    ------
    ModelError
        If ``B`` is singular.
    """
    fom = model.lifted() if isinstance(model, SecondOrderModel) else model
    require_periodic(fom.frequency_count)
    rhs = fom.rhs_complex(np.asarray(z), t, omega, epsilon)
    out = fom.solve_b(rhs)
    if np.isrealobj(z):
        return out.real
    return out


# ---------------------------------------------------------------- file format

def _cplx_out(v) -> list:
    return [[float(np.real(x)), float(np.imag(x))] for x in np.asarray(v).reshape(-1)]


def _cplx_in(raw, where: str) -> np.ndarray:
    if not isinstance(raw, list):
        raise ModelError(f"{where}: expected a list of numbers or [re, im] pairs")
    out = []
    for k, item in enumerate(raw):
        if isinstance(item, (int, float)) and not isinstance(item, bool):
            out.append(complex(item))
        elif isinstance(item, list) and len(item) == 2 and all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in item):
            out.append(complex(item[0], item[1]))
        else:
            raise ModelError(f"{where}[{k}]: expected a number or an [re, im] pair")
    return np.array(out, dtype=complex)


def _matrix_in(raw, n: int, where: str) -> np.ndarray:
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ModelError(f"{where}: matrix entries must be real numbers") from None
    if arr.shape != (n, n):
        raise ModelError(f"{where}: expected shape ({n}, {n}), got {arr.shape}")
    return arr


def model_to_dict(model: SecondOrderModel) -> dict:
    return {
        "name": model.name,
        "dof": model.n,
        "mass": model.mass.tolist(),
        "damping": model.damping.tolist(),
        "stiffness": model.stiffness.tolist(),
        "nonlinear_terms": [
            {"a": list(a), "b": list(b), "coeff": _cplx_out(v)}
            for (a, b), v in model.nonlinearity.terms.items()
        ],
        "forcing_terms": [
            {"a": list(a), "b": list(b), "kappa": list(kap), "coeff": _cplx_out(v)}
            for (a, b, kap), v in model.forcing.terms.items()
        ],
        "epsilon": model.epsilon,
        "frequency_count": model.frequency_count,
    }


def model_from_dict(data: dict, source: str = "<model>") -> SecondOrderModel:
    if not isinstance(data, dict):
        raise ModelError(f"{source}: top level must be a mapping")
    for key in ("dof", "mass", "damping", "stiffness"):
        if key not in data:
            raise ModelError(f"{source}: missing field '{key}'")
    n = data["dof"]
    if not isinstance(n, int) or n < 1:
        raise ModelError(f"{source}: dof: must be a positive integer")
    M = _matrix_in(data["mass"], n, f"{source}: mass")
    C = _matrix_in(data["damping"], n, f"{source}: damping")
    K = _matrix_in(data["stiffness"], n, f"{source}: stiffness")
    kfreq = data.get("frequency_count", 1)
    if not isinstance(kfreq, int) or kfreq < 1:
        raise ModelError(f"{source}: frequency_count: must be a positive integer")
    nl_terms = {}
    for k, item in enumerate(data.get("nonlinear_terms", [])):
        where = f"{source}: nonlinear_terms[{k}]"
        for fld in ("a", "b", "coeff"):
            if fld not in item:
                raise ModelError(f"{where}: missing field '{fld}'")
        a, b = _check_pair(item["a"], item["b"], n, where)
        if (a, b) in nl_terms:
            raise ModelError(f"{where}: duplicate term")
        nl_terms[(a, b)] = _vec(_cplx_in(item["coeff"], f"{where}.coeff"), n, f"{where}.coeff")
    f_terms = {}
    for k, item in enumerate(data.get("forcing_terms", [])):
        where = f"{source}: forcing_terms[{k}]"
        for fld in ("a", "b", "kappa", "coeff"):
            if fld not in item:
                raise ModelError(f"{where}: missing field '{fld}'")
        a, b = _check_pair(item["a"], item["b"], n, where)
        kap = item["kappa"]
        kap = tuple(kap) if isinstance(kap, list) else (kap,)
        if not all(isinstance(x, int) for x in kap):
            raise ModelError(f"{where}.kappa: harmonics must be integers")
        if (a, b, kap) in f_terms:
            raise ModelError(f"{where}: duplicate term")
        f_terms[(a, b, kap)] = _vec(_cplx_in(item["coeff"], f"{where}.coeff"), n, f"{where}.coeff")
    try:
        nl = NonlinearityExpansion(n, nl_terms)
        fe = ForcingExpansion(n, kfreq, f_terms)
    except ModelError as exc:
        raise ModelError(f"{source}: {exc}") from None
    eps = data.get("epsilon", 1.0)
    if not isinstance(eps, (int, float)) or not math.isfinite(eps):
        raise ModelError(f"{source}: epsilon: must be a finite number")
    return SecondOrderModel(M, C, K, nl, fe, float(eps), kfreq, str(data.get("name", "")))


def parse_model_file(path) -> SecondOrderModel:
    """Read a JSON model file; errors name the file and the offending field."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno} column {exc.colno}: malformed JSON ({exc.msg})") from None
    return model_from_dict(data, str(path))


def serialize_model(model: SecondOrderModel, path=None) -> str:
    """Write the model as JSON; returns the text (and writes it when ``path`` is given)."""
    text = json.dumps(model_to_dict(model), indent=1) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def models_equal(a: SecondOrderModel, b: SecondOrderModel) -> bool:
    if a.n != b.n or a.epsilon != b.epsilon or a.frequency_count != b.frequency_count:
        return False
    for x, y in ((a.mass, b.mass), (a.damping, b.damping), (a.stiffness, b.stiffness)):
        if not np.array_equal(x, y):
            return False
    for ta, tb in ((a.nonlinearity.terms, b.nonlinearity.terms), (a.forcing.terms, b.forcing.terms)):
        if set(ta) != set(tb):
            return False
        if any(not np.array_equal(ta[k], tb[k]) for k in ta):
            return False
    return True
