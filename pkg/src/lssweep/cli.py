"""``lssweep`` command line: solve, stencil-eval, calibrate-pml, selftest."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from lssweep import fieldio, selftest, stencil_eval
from lssweep.problem import make_grid, plane_wave, velocity_from_config
from lssweep.solver import SolverConfig, solve_scattering

logger = logging.getLogger("lssweep")

THREADS_ENV = "LS_SWEEP_THREADS"


@dataclass
class RunConfig:
    omega_over_2pi: float = 16.0
    ppw: float = 8.0
    b: int = 8
    C_pml: float = 10.0
    velocity: dict | str | None = "i"
    solver: dict = field(default_factory=dict)
    fronts: int = 1
    seed: int | None = None
    threads: int = 1
    out: str = "out"
    # stencil-eval
    schemes: list = field(default_factory=lambda: list(stencil_eval.SCHEMES))
    ppw_list: list = field(default_factory=lambda: [3, 4, 5])
    exact_green: bool = False
    # calibrate-pml
    C_list: list = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    b_list: list | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.omega_over_2pi <= 0 or self.ppw <= 2:
            raise ValueError("need omega_over_2pi > 0 and ppw > 2")
        if self.b < 2 or self.C_pml < 0 or self.threads < 1:
            raise ValueError("need b >= 2, C_pml >= 0 and threads >= 1")
        if self.fronts not in (1, 2):
            raise ValueError("fronts must be 1 or 2")
        bad = set(self.schemes) - set(stencil_eval.SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes: {sorted(bad)}")
        SolverConfig(**self.solver)

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.omega_over_2pi

    def velocity_spec(self):
        spec = self.velocity
        if self.seed is None or spec is None:
            return spec
        spec = {"preset": spec} if isinstance(spec, str) else dict(spec)
        spec["seed"] = self.seed
        return spec


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = make_grid(cfg.omega, cfg.ppw, cfg.b, cfg.C_pml)
    m = velocity_from_config(grid, cfg.velocity_spec())
    u_inc = plane_wave(grid)
    u, report = solve_scattering(grid, m, u_inc, SolverConfig(**cfg.solver), fronts=cfg.fronts)
    total = u.data + u_inc.data
    kw = {"omega": grid.omega, "h": grid.h}
    fieldio.write_lsf(out / "u.lsf", u.data, **kw)
    fieldio.write_lsf(out / "total.lsf", total, **kw)
    fieldio.write_pgm(out / "u_abs.pgm", np.abs(u.data), "|u|")
    fieldio.write_pgm(out / "u_real.pgm", u.data.real, "Re u")
    fieldio.write_pgm(out / "total_real.pgm", total.real, "Re(u + u_I)")
    fieldio.write_pgm(out / "velocity.pgm", 1 / np.sqrt(1 - m.m), "c")
    rep = report.to_dict()
    rep.update(omega_over_2pi=cfg.omega_over_2pi, ppw=cfg.ppw, n=grid.n, b=grid.b, C_pml=grid.C_pml)
    _write_json(out / "report.json", rep)
    print(f"N={grid.N} N_iter={report.iterations} converged={report.converged} "
          f"T_setup={report.T_setup:.3g}s T_apply={report.T_apply:.3g}s T_solve={report.T_solve:.3g}s")
    return 0 if report.converged else 3


def cmd_stencil_eval(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for scheme in cfg.schemes:
        for ppw in cfg.ppw_list:
            grid = stencil_eval.homogeneous_grid(cfg.omega, ppw, cfg.b, cfg.C_pml)
            if cfg.exact_green:
                u = stencil_eval.green_on_interior(grid)
            else:
                u = stencil_eval.solve_homogeneous(scheme, cfg.omega, ppw, cfg.b, cfg.C_pml).data
            rep = stencil_eval.phase_error(u, cfg.omega, grid=grid)
            tag = f"phase_{scheme}_ppw{ppw:g}"
            delta = np.nan_to_num(rep.delta, nan=0.0)
            fieldio.write_lsf(out / f"{tag}.lsf", delta.astype(np.complex128), omega=grid.omega, h=grid.h)
            fieldio.write_pgm(out / f"{tag}.pgm", delta, "phase error (cycles)")
            row = {"scheme": scheme, "ppw": ppw, "n": grid.n, **rep.summary()}
            summary.append(row)
            print(f"{scheme:9s} ppw={ppw:<4g} max|delta|={rep.max_error:.3e} relative={rep.relative_error:.3e}")
    _write_json(out / "summary.json", {"omega_over_2pi": cfg.omega_over_2pi, "runs": summary})
    return 0


def cmd_calibrate_pml(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    b_list = cfg.b_list or [cfg.b]
    rows = []
    for b in b_list:
        for C in cfg.C_list:
            proxy = stencil_eval.reflection_proxy(cfg.omega, cfg.ppw, int(b), float(C))
            rows.append({"b": int(b), "C_pml": float(C), "reflection_proxy": proxy})
            print(f"b={b:<3d} C={C:<6g} reflection proxy={proxy:.3e}")
    at_b = [r for r in rows if r["b"] == cfg.b] or rows
    best = min(at_b, key=lambda r: (r["reflection_proxy"], r["C_pml"]))
    _write_json(out / "calibration.json", {
        "omega_over_2pi": cfg.omega_over_2pi, "ppw": cfg.ppw, "b": best["b"],
        "recommended_C_pml": best["C_pml"], "runs": rows,
    })
    return 0


def cmd_selftest(cfg: RunConfig | None = None, corrupt_kernel: bool = False) -> int:
    return selftest.main(corrupt_kernel=corrupt_kernel)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help=f"thread cap (env {THREADS_ENV} wins)")
    common.add_argument("--omega-over-2pi", type=float, dest="omega_over_2pi")
    common.add_argument("--ppw", type=float)
    common.add_argument("--b", type=int)
    common.add_argument("--c-pml", type=float, dest="C_pml")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lssweep", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="scattering solve with report and field dumps")
    s.add_argument("--field", dest="velocity", help="velocity preset (i, ii, iii, iv, homogeneous)")
    sub.add_parser("stencil-eval", parents=[common], help="phase error of the compact schemes")
    sub.add_parser("calibrate-pml", parents=[common], help="reflection proxy over C_pml")
    t = sub.add_parser("selftest", parents=[common], help="brute-force oracle checks")
    t.add_argument("--corrupt-kernel", action="store_true", help=argparse.SUPPRESS)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    for key in ("out", "threads", "omega_over_2pi", "ppw", "b", "C_pml", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    preset = getattr(args, "velocity", None)
    if preset is not None:
        data["velocity"] = {"kind": "homogeneous"} if preset == "homogeneous" else preset
    env = os.environ.get(THREADS_ENV)
    if env:
        data["threads"] = int(env)
    return RunConfig.from_dict(data)


COMMANDS = {
    "solve": cmd_solve,
    "stencil-eval": cmd_stencil_eval,
    "calibrate-pml": cmd_calibrate_pml,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with threadpool_limits(limits=cfg.threads):
            if args.command == "selftest":
                return cmd_selftest(cfg, corrupt_kernel=args.corrupt_kernel)
            return COMMANDS[args.command](cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"lssweep {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
