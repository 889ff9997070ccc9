"""Benchmark mechanical models used throughout the tests and the CLI."""

from __future__ import annotations

import inspect
from typing import Callable, Dict

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .model import ForcingExpansion, ModelError, NonlinearityExpansion, SecondOrderModel

__all__ = [
    "coupled_mathieu",
    "bernoulli_beam",
    "prismatic_beam",
    "self_excited_oscillator",
    "clamped_hinged_roots",
    "GALLERY",
    "gallery_params",
    "build_gallery_model",
]


def _e(i: int, n: int) -> tuple:
    return tuple(1 if k == i else 0 for k in range(n))


def _z(n: int) -> tuple:
    return (0,) * n


def coupled_mathieu(m1: float = 1.0, m2: float = 1.0, k: float = 1.0, c: float = 0.05,
                    kappa: float = 0.1, epsilon: float = 0.0) -> SecondOrderModel:
    """Two masses coupled by springs with stiffness ``k (1 + eps cos Omega t)``.

    The parametric term ``eps Q cos(Omega t) y`` is carried as forcing terms
    ``-Q[:, j] / 2`` at harmonics ``+-1``. The cubic force is written on the
    left-hand side.
    """
    M = np.diag([m1, m2])
    C = np.array([[2 * c, -c], [-c, 2 * c]])
    K = np.array([[2 * k, -k], [-k, 2 * k]])
    Q = np.array([[k, -k], [-k, k]])
    n = 2
    z = _z(n)
    # kappa * [-y1^3 - (y1 - y2)^3, -y2^3 + (y1 - y2)^3] expanded by monomial
    cubic = {
        (3, 0): [-2.0, 1.0],
        (2, 1): [3.0, -3.0],
        (1, 2): [-3.0, 3.0],
        (0, 3): [1.0, -2.0],
    }
    nl = {(a, z): kappa * np.array(v) for a, v in cubic.items()} if kappa != 0 else {}
    forcing = {}
    for j in range(n):
        for sign in (1, -1):
            forcing[(_e(j, n), z, (sign,))] = -Q[:, j] / 2
    return SecondOrderModel(M, C, K, NonlinearityExpansion(n, nl), ForcingExpansion(n, 1, forcing),
                            epsilon, 1, "coupled_mathieu")


def _beam_element(EI: float, rhoA: float, h: float):
    k = EI / h**3 * np.array([
        [12, 6 * h, -12, 6 * h],
        [6 * h, 4 * h * h, -6 * h, 2 * h * h],
        [-12, -6 * h, 12, -6 * h],
        [6 * h, 2 * h * h, -6 * h, 4 * h * h]])
    m = rhoA * h / 420 * np.array([
        [156, 22 * h, 54, -13 * h],
        [22 * h, 4 * h * h, 13 * h, -3 * h * h],
        [54, 13 * h, 156, -22 * h],
        [-13 * h, -3 * h * h, -22 * h, 4 * h * h]])
    return k, m


def bernoulli_beam(elements: int = 5, sigma: float = 1.0, kappa: float = 50.0, gamma: float = 0.01,
                   parametric_amplitude: float = 1.0, parametric_harmonic: int = 1,
                   external_amplitude: float = 0.0, epsilon: float = 0.0,
                   length: float = 2.7, height: float = 0.01, width: float = 0.01,
                   youngs_modulus: float = 45e9, density: float = 1780.0,
                   alpha: float = 1.25e-4, beta: float = 2.5e-4) -> SecondOrderModel:
    """Cantilevered Euler-Bernoulli beam with a cubic spring and damper at the tip.

    Two-node cubic Hermite elements with consistent mass; DOFs per free node are
    (transverse displacement, rotation), so the tip transverse DOF is index
    ``n - 2``. SI units throughout.

    Parameters
    ----------
    elements : int
        Number of elements (``n = 2 * elements``).
    sigma : float
        Scale of the proportional damping ``C = sigma (alpha M + beta K)``.
    kappa, gamma : float
        Cubic stiffness (N/m^3) and cubic damping (N s^3/m^3) at the tip.
    parametric_amplitude : float
        Tip stiffness modulation ``eps * amplitude * cos(h Omega t) * y_tip``.
    parametric_harmonic : int
        Harmonic ``h`` of the modulation.
    external_amplitude : float
        Tip force ``eps * amplitude * cos(Omega t)``; ``0`` disables it.
    """
    if elements < 2:
        raise ModelError("bernoulli_beam: at least 2 elements required")
    inertia = width * height**3 / 12.0
    EI = youngs_modulus * inertia
    rhoA = density * width * height
    h = length / elements
    ndof = 2 * (elements + 1)
    K = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    ke, me = _beam_element(EI, rhoA, h)
    for e in range(elements):
        sl = slice(2 * e, 2 * e + 4)
        K[sl, sl] += ke
        M[sl, sl] += me
    K, M = K[2:, 2:], M[2:, 2:]
    n = ndof - 2
    C = sigma * (alpha * M + beta * K)
    tip = n - 2
    z = _z(n)
    et = _e(tip, n)
    unit_tip = np.zeros(n)
    unit_tip[tip] = 1.0
    nl = {}
    if kappa != 0:
        nl[(tuple(3 * x for x in et), z)] = kappa * unit_tip
    if gamma != 0:
        nl[(z, tuple(3 * x for x in et))] = gamma * unit_tip
    forcing = {}
    if parametric_amplitude != 0:
        for s in (1, -1):
            forcing[(et, z, (s * parametric_harmonic,))] = -parametric_amplitude / 2 * unit_tip
    if external_amplitude != 0:
        for s in (1, -1):
            forcing[(z, z, (s,))] = external_amplitude / 2 * unit_tip
    return SecondOrderModel(M, C, K, NonlinearityExpansion(n, nl), ForcingExpansion(n, 1, forcing),
                            epsilon, 1, "bernoulli_beam")


def clamped_hinged_roots(count: int) -> np.ndarray:
    """Positive roots of ``tan x = tanh x``, one per interval ``(j pi, j pi + pi/2)``."""
    def char(x):
        return np.sin(x) - np.tanh(x) * np.cos(x)

    roots = []
    for j in range(1, count + 1):
        lo, hi = j * np.pi + 1e-9, j * np.pi + np.pi / 2 - 1e-9
        try:
            roots.append(brentq(char, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200))
        except ValueError as exc:
            raise ModelError(f"prismatic_beam: root {j} of the characteristic equation not bracketed") from exc
    return np.array(roots)


def prismatic_beam(modes: int = 10, l: float = 1.7, c: float = 200.0, beam_epsilon: float = 1e-4,
                   slenderness: float = 1e-4, epsilon: float = 0.0) -> SecondOrderModel:
    """Galerkin model of a hinged-clamped beam under harmonic axial load.

    Mode ``j`` satisfies ``z_j'' + 2 eb c z_j' + w_j^2 z_j = eb sum alpha z^3 +
    eb mu cos(Omega t) sum_i a_ji z_i`` with ``eb = beam_epsilon``; the axial
    load amplitude ``mu`` is the model's forcing scale ``epsilon``.

    Parameters
    ----------
    modes : int
        Number of retained modes ``n``.
    l : float
        Nondimensional length.
    c : float
        Distributed damping parameter.
    beam_epsilon : float
        Bookkeeping scale multiplying damping, stretching and axial load.
    slenderness : float
        ``r^2 / L^2``.
    epsilon : float
        Axial load amplitude ``mu``.
    """
    if modes < 1:
        raise ModelError("prismatic_beam: modes must be >= 1")
    roots = clamped_hinged_roots(modes)
    betas = roots / l
    omegas = betas**2

    def shapes(j):
        b = betas[j]
        ratio = np.sin(b * l) / np.sinh(b * l)
        f0 = lambda y: np.sin(b * y) - ratio * np.sinh(b * y)
        f1 = lambda y: b * (np.cos(b * y) - ratio * np.cosh(b * y))
        f2 = lambda y: -b * b * (np.sin(b * y) + ratio * np.sinh(b * y))
        return f0, f1, f2

    integ = lambda f: quad(f, 0.0, l, epsabs=1e-12, epsrel=1e-10, limit=400)[0]
    raw = [shapes(j) for j in range(modes)]
    norms = np.array([np.sqrt(integ(lambda y, f=raw[j][0]: f(y) ** 2)) for j in range(modes)])
    psi = [tuple((lambda y, f=f, s=norms[j]: f(y) / s) for f in raw[j]) for j in range(modes)]
    a = np.array([[integ(lambda y, i=i, j=j: psi[j][0](y) * psi[i][2](y)) for i in range(modes)]
                  for j in range(modes)])
    b = np.array([[integ(lambda y, k=k, s=s: psi[k][1](y) * psi[s][1](y)) for s in range(modes)]
                  for k in range(modes)])
    n = modes
    z = _z(n)
    cubic: Dict[tuple, np.ndarray] = {}
    pref = slenderness / 2.0
    for i in range(n):
        for k in range(n):
            for s in range(n):
                key = tuple(np.array(_e(i, n)) + np.array(_e(k, n)) + np.array(_e(s, n)))
                vec = cubic.setdefault(key, np.zeros(n))
                vec += pref * a[:, i] * b[k, s]
    # left-hand side carries minus the stretching force
    nl = {(key, z): -beam_epsilon * v for key, v in cubic.items() if np.any(v != 0)}
    forcing = {}
    for i in range(n):
        for sgn in (1, -1):
            forcing[(_e(i, n), z, (sgn,))] = beam_epsilon / 2 * a[:, i]
    M = np.eye(n)
    C = 2 * beam_epsilon * c * np.eye(n)
    K = np.diag(omegas**2)
    model = SecondOrderModel(M, C, K, NonlinearityExpansion(n, nl), ForcingExpansion(n, 1, forcing),
                             epsilon, 1, "prismatic_beam")
    object.__setattr__(model, "galerkin", {"roots": roots, "omegas": omegas, "a": a, "b": b, "norms": norms})
    return model


def self_excited_oscillator(k: float = 4.0, mu: float = 0.02, kappa: float = 0.1, c: float = 0.01,
                            gamma: float = 0.05, mass_ratio: float = 0.5, q: float = 0.02,
                            epsilon: float = 1.0) -> SecondOrderModel:
    """Two oscillators with negative linear damping, cubic damping and 2:1 mixed forcing.

    The coupling stiffness is modulated at twice the base frequency while the
    first mass carries an external force at the base frequency.
    """
    n = 2
    M = np.eye(2)
    K = np.array([[k + 1.0, -k], [-k * mass_ratio, k * mass_ratio]])
    C = np.diag([0.0, -c])
    z = _z(n)
    nl = {}
    if kappa != 0:
        nl[((3, 0), z)] = np.array([kappa, 0.0])
    if gamma != 0:
        nl[(z, (0, 3))] = np.array([0.0, gamma])
    lam = k * mu
    forcing = {}
    for s in (1, -1):
        if q != 0:
            forcing[(z, z, (s,))] = np.array([q / 2, 0.0])
        if lam != 0:
            forcing[((1, 0), z, (2 * s,))] = np.array([lam / 2, -mass_ratio * lam / 2])
            forcing[((0, 1), z, (2 * s,))] = np.array([-lam / 2, mass_ratio * lam / 2])
    return SecondOrderModel(M, C, K, NonlinearityExpansion(n, nl), ForcingExpansion(n, 1, forcing),
                            epsilon, 1, "self_excited_oscillator")


GALLERY: Dict[str, Callable[..., SecondOrderModel]] = {
    "coupled_mathieu": coupled_mathieu,
    "bernoulli_beam": bernoulli_beam,
    "prismatic_beam": prismatic_beam,
    "self_excited_oscillator": self_excited_oscillator,
}


def gallery_params(name: str) -> Dict[str, object]:
    """Default constructor parameters of a gallery model."""
    if name not in GALLERY:
        raise KeyError(f"unknown gallery model '{name}'; choose from {sorted(GALLERY)}")
    sig = inspect.signature(GALLERY[name])
    return {k: p.default for k, p in sig.parameters.items()}


def build_gallery_model(name: str, **overrides) -> SecondOrderModel:
    defaults = gallery_params(name)
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise KeyError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    kwargs = dict(defaults)
    for key, val in overrides.items():
        kwargs[key] = type(defaults[key])(val) if defaults[key] is not None else val
    return GALLERY[name](**kwargs)
