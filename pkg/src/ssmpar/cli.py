"""Command-line entry point ``ssmpar``.

Every subcommand writes deterministic CSV (``%.12e`` floats) to the output
directory; ``--svg`` adds a polyline plot where one makes sense.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .model import ModelError, SecondOrderModel, model_from_dict, parse_model_file, serialize_model
from .models_gallery import GALLERY, build_gallery_model, gallery_params

__all__ = ["RunConfig", "ConfigError", "build_parser", "run", "main", "format_float", "write_svg"]

OUT_DIR_ENV = "SSMPAR_OUT_DIR"
FLOAT_FORMAT = "%.12e"


class ConfigError(ValueError):
    pass


def format_float(x: float) -> str:
    return FLOAT_FORMAT % float(x)


@dataclass
class RunConfig:
    """Validated settings for one subcommand run."""

    command: str
    model_path: str | None = None
    gallery: str | None = None
    gallery_overrides: Dict[str, str] = field(default_factory=dict)
    order: int = 5
    omega_min: float | None = None
    omega_max: float | None = None
    omega_steps: int = 0
    omega: float | None = None
    eps: float | None = None
    eps_list: List[float] = field(default_factory=list)
    eps_max: float | None = None
    kappa0: int | None = None
    outdof: int = 0
    res_tol: float | None = None
    jobs: int = 1
    out_dir: Path = Path(".")
    first_order: bool = False
    svg: bool = False
    modes: List[int] = field(default_factory=lambda: [1])
    source: str = "reduced"
    rho_max: float | None = None
    out_file: str | None = None

    def omega_grid(self) -> np.ndarray:
        if self.omega_steps == 0:
            return np.zeros(0)
        if self.omega_steps == 1:
            return np.array([self.omega_min])
        return np.linspace(self.omega_min, self.omega_max, self.omega_steps)

    def validate(self) -> "RunConfig":
        if self.command == "gallery":
            if self.gallery not in GALLERY:
                raise ConfigError(f"unknown gallery model {self.gallery!r}; choose from {sorted(GALLERY)}")
            return self
        if (self.model_path is None) == (self.gallery is None):
            raise ConfigError("exactly one of --model or --gallery is required")
        if self.gallery is not None and self.gallery not in GALLERY:
            raise ConfigError(f"unknown gallery model {self.gallery!r}; choose from {sorted(GALLERY)}")
        if self.order < 1:
            raise ConfigError("--order must be >= 1")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if self.outdof < 0:
            raise ConfigError("--outdof must be non-negative")
        if any(m < 1 for m in self.modes):
            raise ConfigError("--mode entries are 1-based and must be >= 1")
        if self.res_tol is not None and self.res_tol <= 0:
            raise ConfigError("--res-tol must be positive")
        if self.command in ("frc", "tongue"):
            if self.omega_steps < 0:
                raise ConfigError("--omega-steps must be >= 0")
            if self.omega_steps > 0:
                if self.omega_min is None or self.omega_max is None:
                    raise ConfigError("--omega-min and --omega-max are required when --omega-steps > 0")
                if not (0 < self.omega_min <= self.omega_max):
                    raise ConfigError("need 0 < --omega-min <= --omega-max")
        if self.command == "tongue" and self.omega_steps > 0:
            if self.eps_max is None or self.eps_max <= 0:
                raise ConfigError("tongue needs a positive --eps-max")
            if self.source not in ("reduced", "full"):
                raise ConfigError("--source must be 'reduced' or 'full'")
        if self.command == "subharmonic":
            if self.omega is None or self.omega <= 0:
                raise ConfigError("subharmonic needs a positive --omega")
            if not self.eps_list:
                raise ConfigError("subharmonic needs --eps-list")
        if self.command in ("frc", "tongue", "subharmonic") and len(self.modes) != 1:
            raise ConfigError(f"{self.command} works on a single master pair; pass one --mode")
        if self.command in ("tongue", "subharmonic") and self.first_order:
            raise ConfigError(f"--first-order is not available for {self.command}")
        return self


# ---------------------------------------------------------------- parsing

def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmpar", description="SSM reduction of parametrically excited mechanical systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("model")
    src.add_argument("--model", help="model JSON file ('-' reads standard input)")
    src.add_argument("--gallery", help="built-in model name")
    src.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a gallery parameter (repeatable)")
    opts = common.add_argument_group("solver")
    opts.add_argument("--order", type=int, default=5, help="SSM truncation order (default 5)")
    opts.add_argument("--mode", type=_int_list, default=[1], help="1-based master pair(s), slowest first (default 1)")
    opts.add_argument("--res-tol", type=float, default=None, help="resonance tolerance on |Im| differences")
    opts.add_argument("--first-order", action="store_true", help="use the first-order reference path")
    opts.add_argument("--jobs", type=int, default=1, help="worker processes over frequencies")
    out = common.add_argument_group("output")
    out.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or '.')")
    out.add_argument("--svg", action="store_true", help="also write an SVG plot")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--omega-min", type=float)
    grid.add_argument("--omega-max", type=float)
    grid.add_argument("--omega-steps", "--steps", dest="omega_steps", type=int, default=0)

    sub.add_parser("modes", parents=[common], help="eigenvalues of the linearization")
    p = sub.add_parser("ssm", parents=[common], help="SSM and reduced-dynamics coefficients")
    p.add_argument("--omega", type=float, help="also solve the O(eps) tables at this frequency")
    p = sub.add_parser("frc", parents=[common, grid], help="forced response curve")
    p.add_argument("--eps", type=float)
    p.add_argument("--kappa0", type=int)
    p.add_argument("--outdof", type=int, default=0)
    p.add_argument("--rho-max", type=float)
    p = sub.add_parser("tongue", parents=[common, grid], help="parametric resonance tongue boundary")
    p.add_argument("--eps-max", type=float)
    p.add_argument("--source", choices=["reduced", "full"], default="reduced")
    p = sub.add_parser("subharmonic", parents=[common], help="period-doubled response branch")
    p.add_argument("--omega", type=float)
    p.add_argument("--eps-list", type=_float_list, default=[])
    p.add_argument("--outdof", type=int, default=0)
    p = sub.add_parser("verify", parents=[common], help="oracle cross-checks")
    p.add_argument("--omega", type=float, help="frequency for the non-autonomous checks")
    p = sub.add_parser("gallery", help="write a built-in model as JSON")
    p.add_argument("name", help=f"one of {', '.join(sorted(GALLERY))}")
    p.add_argument("--out", help="output file (default standard output)")
    return parser


def _split_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _gallery_extra(extra: Sequence[str]) -> Dict[str, str]:
    """``--param value`` pairs left over by argparse for the gallery subcommand."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {tok}") from None
        out[key] = val
    return out


def config_from_args(argv: Sequence[str] | None = None) -> RunConfig:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "gallery":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    out_dir = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV) or "."
    if args.command == "gallery":
        return RunConfig("gallery", gallery=args.name, gallery_overrides=_gallery_extra(extra),
                         out_file=args.out).validate()
    cfg = RunConfig(
        command=args.command,
        model_path=args.model,
        gallery=args.gallery,
        gallery_overrides=_split_overrides(args.set),
        order=args.order,
        modes=args.mode,
        res_tol=args.res_tol,
        first_order=args.first_order,
        jobs=args.jobs,
        out_dir=Path(out_dir),
        svg=args.svg,
        omega_min=getattr(args, "omega_min", None),
        omega_max=getattr(args, "omega_max", None),
        omega_steps=getattr(args, "omega_steps", 0) or 0,
        omega=getattr(args, "omega", None),
        eps=getattr(args, "eps", None),
        eps_list=getattr(args, "eps_list", []) or [],
        eps_max=getattr(args, "eps_max", None),
        kappa0=getattr(args, "kappa0", None),
        outdof=getattr(args, "outdof", 0) or 0,
        source=getattr(args, "source", "reduced"),
        rho_max=getattr(args, "rho_max", None),
    )
    return cfg.validate()


# ---------------------------------------------------------------- output helpers

def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(x) if isinstance(x, (float, np.floating)) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_svg(path: Path, series: Sequence[Sequence[tuple]], xlabel: str, ylabel: str, title: str = "",
              width: int = 640, height: int = 480, markers: bool = False) -> Path:
    """Minimal SVG with labeled axes; each series is a list of ``(x, y)`` drawn as a polyline."""
    pts = [p for s in series for p in s]
    margin = 60
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda x: margin + (x - x0) / (x1 - x0) * (width - 2 * margin)
    sy = lambda y: height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
            f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
            f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{xlabel}</text>',
            f'<text x="15" y="{height / 2}" text-anchor="middle" transform="rotate(-90 15 {height / 2})">{ylabel}</text>',
            f'<text x="{width / 2}" y="25" text-anchor="middle">{title}</text>',
            f'<text x="{margin}" y="{height - margin + 18}" text-anchor="middle">{x0:.4g}</text>',
            f'<text x="{width - margin}" y="{height - margin + 18}" text-anchor="middle">{x1:.4g}</text>',
            f'<text x="{margin - 5}" y="{height - margin}" text-anchor="end">{y0:.4g}</text>',
            f'<text x="{margin - 5}" y="{margin + 5}" text-anchor="end">{y1:.4g}</text>']
    for k, s in enumerate(series):
        color = colors[k % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        if markers:
            body += [f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="{color}"/>' for x, y in s]
        elif coords:
            body.append(f'<polyline fill="none" stroke="{color}" points="{coords}"/>')
    body.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(body) + "\n")
    return path


# ---------------------------------------------------------------- commands

def load_model(cfg: RunConfig) -> SecondOrderModel:
    if cfg.gallery is not None:
        try:
            return build_gallery_model(cfg.gallery, **cfg.gallery_overrides)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if cfg.model_path == "-":
        return model_from_dict(json.load(sys.stdin), "<stdin>")
    return parse_model_file(cfg.model_path)


def _subspace(model, cfg):
    from .spectral import solve_master_modes
    return solve_master_modes(model, mode_indices=cfg.modes)


def _autonomous(model, sub, cfg, order):
    if cfg.first_order:
        from .ssm_firstorder import compute_autonomous_first
        return compute_autonomous_first(model, sub, order, resonance_tolerance=cfg.res_tol)
    from .ssm_autonomous import compute_autonomous_ssm
    return compute_autonomous_ssm(model, sub, order, resonance_tolerance=cfg.res_tol)


def _cmd_modes(model, cfg) -> List[Path]:
    from .spectral import full_spectrum
    w = full_spectrum(model)
    rows = [(k + 1, float(z.real), float(z.imag)) for k, z in enumerate(w)]
    return [write_csv(cfg.out_dir / "modes.csv", ["index", "real", "imag"], rows)]


def _key_text(m) -> str:
    return "(" + " ".join(str(x) for x in m) + ")"


def _cmd_ssm(model, cfg) -> List[Path]:
    sub = _subspace(model, cfg)
    auto = _autonomous(model, sub, cfg, cfg.order + (1 if cfg.omega is not None else 0))
    W = auto.W if cfg.first_order else auto.phase_space()
    rows = []
    for m in sorted(W):
        if sum(m) > cfg.order:
            continue
        for i, v in enumerate(W[m]):
            rows.append(("W", _key_text(m), 0, i, float(v.real), float(v.imag)))
    for m in sorted(auto.R):
        if sum(m) > cfg.order:
            continue
        for i, v in enumerate(auto.R[m]):
            rows.append(("R", _key_text(m), 0, i, float(v.real), float(v.imag)))
    if cfg.omega is not None:
        omega_ref = None
        if cfg.first_order:
            from .ssm_firstorder import compute_nonautonomous_first
            na = compute_nonautonomous_first(model, sub, auto, cfg.omega, order=cfg.order,
                                             resonance_tolerance=cfg.res_tol, resonance_frequency=omega_ref)
            X = na.X
        else:
            from .ssm_nonautonomous import compute_nonautonomous_ssm
            na = compute_nonautonomous_ssm(model, sub, auto, cfg.omega, order=cfg.order,
                                           resonance_tolerance=cfg.res_tol, resonance_frequency=omega_ref)
            X = na.phase_space()
        for (m, k) in sorted(X):
            for i, v in enumerate(X[(m, k)]):
                rows.append(("X", _key_text(m), k, i, float(v.real), float(v.imag)))
        for (m, k) in sorted(na.S):
            for i, v in enumerate(na.S[(m, k)]):
                rows.append(("S", _key_text(m), k, i, float(v.real), float(v.imag)))
    return [write_csv(cfg.out_dir / "ssm.csv", ["table", "multi_index", "kappa", "component", "real", "imag"], rows)]


def _cmd_frc(model, cfg) -> List[Path]:
    from .reduced_dynamics import frc_sweep
    omegas = cfg.omega_grid()
    paths = []
    if omegas.size == 0:
        pts = []
    else:
        sub = _subspace(model, cfg)
        auto = _autonomous(model, sub, cfg, cfg.order + 1)
        pts = frc_sweep(model, sub, auto, omegas, order=cfg.order, kappa0=cfg.kappa0, outdof=cfg.outdof,
                        epsilon=cfg.eps, rho_max=cfg.rho_max, resonance_tolerance=cfg.res_tol,
                        jobs=cfg.jobs, first_order=cfg.first_order)
        for om, msg in sorted(pts.errors.items()):
            print(f"warning: omega={om:.6g}: {msg}", file=sys.stderr)
    rows = [(p.omega, p.rho, p.psi, p.amplitude, int(p.stable)) for p in pts]
    paths.append(write_csv(cfg.out_dir / "frc.csv", ["omega", "rho", "psi", "amplitude", "stable"], rows))
    if cfg.svg:
        stable = [(p.omega, p.amplitude) for p in pts if p.stable]
        unstable = [(p.omega, p.amplitude) for p in pts if not p.stable]
        paths.append(write_svg(cfg.out_dir / "frc.svg", [stable, unstable], "Omega [rad/s]",
                               f"amplitude of DOF {cfg.outdof}", "forced response (blue stable, red unstable)",
                               markers=True))
    return paths


def _cmd_tongue(model, cfg) -> List[Path]:
    from .floquet import trace_tongue
    omegas = cfg.omega_grid()
    samples = []
    if omegas.size:
        sub = _subspace(model, cfg)
        auto = _autonomous(model, sub, cfg, cfg.order + 1) if cfg.source == "reduced" else None
        tb = trace_tongue(model, sub, auto, omegas, cfg.eps_max, order=cfg.order, source=cfg.source,
                          resonance_tolerance=cfg.res_tol, jobs=cfg.jobs)
        samples = tb.samples
        for om, msg in sorted(tb.errors.items()):
            print(f"warning: omega={om:.6g}: {msg}", file=sys.stderr)
    rows = [(s.omega, s.epsilon) for s in samples]
    paths = [write_csv(cfg.out_dir / "tongue.csv", ["omega", "eps_boundary"], rows)]
    if cfg.svg:
        paths.append(write_svg(cfg.out_dir / "tongue.svg", [rows], "Omega [rad/s]", "epsilon",
                               f"tongue boundary ({cfg.source})"))
    return paths


def _cmd_subharmonic(model, cfg) -> List[Path]:
    from .floquet import subharmonic_branch
    sub = _subspace(model, cfg)
    auto = _autonomous(model, sub, cfg, cfg.order + 1)
    pts, skipped = subharmonic_branch(model, sub, auto, cfg.omega, cfg.eps_list, order=cfg.order, outdof=cfg.outdof)
    for e, msg in sorted(skipped.items()):
        print(f"warning: eps={e:.6g}: {msg}", file=sys.stderr)
    rows = [(p.epsilon, p.amplitude) for p in pts]
    paths = [write_csv(cfg.out_dir / "subharmonic.csv", ["eps", "amplitude"], rows)]
    if cfg.svg:
        paths.append(write_svg(cfg.out_dir / "subharmonic.svg", [rows], "epsilon",
                               f"amplitude of DOF {cfg.outdof}", "period-doubled branch", markers=True))
    return paths


def verification_report(model, cfg) -> List[tuple]:
    """Oracle checks as ``(name, value, threshold, passed)``."""
    from .ssm_autonomous import autonomous_residual, compute_autonomous_ssm, reconstruct_velocity
    from .ssm_firstorder import compute_autonomous_first, compute_nonautonomous_first
    from .ssm_nonautonomous import compute_nonautonomous_ssm, nonautonomous_residual

    sub = _subspace(model, cfg)
    order = cfg.order
    second = compute_autonomous_ssm(model, sub, order + 1, resonance_tolerance=cfg.res_tol)
    first = compute_autonomous_first(model, sub, order + 1, resonance_tolerance=cfg.res_tol)
    W2 = second.phase_space()
    scale = max(np.max(np.abs(v)) for v in W2.values())
    d_auto = max(np.max(np.abs(W2[m] - first.W[m])) for m in first.W) / scale
    rows = [("path_equivalence_autonomous", d_auto, 1e-8, d_auto <= 1e-8)]
    vel = max(np.max(np.abs(reconstruct_velocity(second.w, second.R, m) - second.wdot[m]))
              for m in second.w if sum(m) >= 2) if order >= 1 else 0.0
    rows.append(("velocity_reconstruction", vel / scale, 1e-10, vel / scale <= 1e-10))
    res = autonomous_residual(model, second.truncated(order), radius=0.01)
    rows.append(("autonomous_residual_rel_rho_0.01", res["max_rel"], 1e-6, res["max_rel"] <= 1e-6))
    if model.forcing.terms:
        omega = cfg.omega if cfg.omega is not None else 2 * sub.eigenvalues[0].imag
        na2 = compute_nonautonomous_ssm(model, sub, second, omega, order=order, resonance_tolerance=cfg.res_tol)
        na1 = compute_nonautonomous_first(model, sub, first, omega, order=order, resonance_tolerance=cfg.res_tol)
        X2 = na2.phase_space()
        # X may vanish identically when the forcing misses the master pair
        xs = max([np.max(np.abs(v)) for v in X2.values()] + [scale])
        d_non = max(np.max(np.abs(X2[k] - na1.X[k])) for k in na1.X) / xs
        rows.append(("path_equivalence_nonautonomous", d_non, 1e-8, d_non <= 1e-8))
        r1 = nonautonomous_residual(model, second, na2, 1e-2, radius=0.01)
        r2 = nonautonomous_residual(model, second, na2, 5e-3, radius=0.01)
        if r1["max_rel"] < 1e-12:
            rows.append(("nonautonomous_residual_rel_eps_0.01", r1["max_rel"], 1e-12, True))
        else:
            ratio = r1["max_abs"] / max(r2["max_abs"], 1e-300)
            rows.append(("nonautonomous_residual_halving_ratio", ratio, 4.0, 3.5 <= ratio <= 4.5))
    return rows


def _cmd_verify(model, cfg) -> List[Path]:
    rows = verification_report(model, cfg)
    path = write_csv(cfg.out_dir / "verify.csv", ["check", "value", "threshold", "pass"],
                     [(n, float(v), float(t), int(bool(ok))) for n, v, t, ok in rows])
    for n, v, t, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {n}: {v:.3e} (threshold {t:.1e})")
    if not all(ok for *_, ok in rows):
        raise RuntimeError("verification failed")
    return [path]


def _cmd_gallery(cfg) -> List[Path]:
    try:
        model = build_gallery_model(cfg.gallery, **cfg.gallery_overrides)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.out_file:
        serialize_model(model, cfg.out_file)
        return [Path(cfg.out_file)]
    sys.stdout.write(serialize_model(model))
    return []


COMMANDS = {
    "modes": _cmd_modes,
    "ssm": _cmd_ssm,
    "frc": _cmd_frc,
    "tongue": _cmd_tongue,
    "subharmonic": _cmd_subharmonic,
    "verify": _cmd_verify,
}


def run(cfg: RunConfig) -> List[Path]:
    """Execute a validated configuration; returns the written artifact paths."""
    if cfg.command == "gallery":
        return _cmd_gallery(cfg)
    model = load_model(cfg)
    return COMMANDS[cfg.command](model, cfg)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = config_from_args(argv)
    except ConfigError as exc:
        print(f"ssmpar: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            paths = run(cfg)
    except ConfigError as exc:
        print(f"ssmpar: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any fatal solver error maps to a nonzero exit
        print(f"ssmpar: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
