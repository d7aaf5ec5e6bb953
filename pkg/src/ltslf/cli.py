"""Command-line entry point: ``ltslf {alpha,run,verify}``.

Configs are flat ``section.key = value`` files with ``#`` comments.  Exit
codes: 0 success, 1 numerical failure (blow-up), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import export, harness
from .lts import (BlowUpError, StepConfig, alpha_closed_form, alpha_recursive, lambda_max_asp,
                  verify_cfl)

EXPERIMENTS = ("run", "converge", "stability", "lshape", "bench")
GEOMETRY_NAMES = {"interval": "interval", "square": "unit-square", "unit-square": "unit-square",
                  "lshape": "lshape"}
REQUIRED = object()


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _dt(text):
    return "auto" if text.lower() == "auto" else float(text)


def _choice(*names):
    def parse(text):
        if text not in names:
            raise ValueError(f"expected one of {', '.join(names)}")
        return text
    return parse


# key -> (parser, default); REQUIRED marks keys that must be given
SCHEMA = {
    "mesh.type": (_choice(*GEOMETRY_NAMES), REQUIRED),
    "mesh.h_init": (float, REQUIRED),
    "mesh.corner_refinements": (int, 2),
    "mesh.global_refinements": (int, 0),
    "mesh.overlap": (int, 1),
    "fem.degree": (int, 1),
    "fem.lumping": (_bool, False),
    "fem.solver": (_choice("cg", "direct"), "cg"),
    "lts.p": (int, REQUIRED),
    "lts.safety": (float, 0.95),
    "time.T": (float, 1.0),
    "time.dt": (_dt, "auto"),
    "problem.preset": (_choice(*EXPERIMENTS), REQUIRED),
    "problem.initial": (_choice("manufactured", "gaussian"), None),
    "problem.mode": (_choice("standing", "forced"), "standing"),
    "problem.study": (_choice("space", "time"), "space"),
    "problem.delta": (float, 0.02),
    "problem.x0": (float, 0.25),
    "problem.transfer": (_choice("projection", "interpolation"), "projection"),
    "problem.steps": (int, 2000),
    "output.dir": (str, REQUIRED),
}

REQUIRED_BY_COMMAND = {
    "run": ("mesh.type", "mesh.h_init", "lts.p", "problem.preset", "output.dir"),
    "verify": ("mesh.type", "mesh.h_init", "lts.p"),
}


@dataclass
class RunConfig:
    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]


def parse_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def resolve_config(raw: dict, command: str, overrides: dict | None = None) -> RunConfig:
    raw = dict(raw)
    raw.update(overrides or {})
    for key in REQUIRED_BY_COMMAND[command]:
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {exc}") from None
        elif default is not REQUIRED:
            values[key] = default
    return RunConfig(command, values)


def load_config(path, command: str, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return resolve_config(parse_config_text(text), command, overrides)


def spec_from_config(cfg: RunConfig) -> harness.ExperimentSpec:
    geometry = GEOMETRY_NAMES[cfg["mesh.type"]]
    h_init = cfg["mesh.h_init"]
    if not h_init > 0:
        raise ConfigError("bad value for 'mesh.h_init': must be positive")
    initial = cfg["problem.initial"] or ("gaussian" if geometry == "lshape" else "manufactured")
    dt = cfg["time.dt"]
    kw = dict(
        geometry=geometry,
        levels=cfg["mesh.global_refinements"] + 1,
        degree=cfg["fem.degree"],
        p=cfg["lts.p"],
        T=cfg["time.T"],
        dt_rule="cfl" if dt == "auto" else "fixed",
        dt=None if dt == "auto" else dt,
        safety=cfg["lts.safety"],
        initial=initial,
        mode=cfg["problem.mode"],
        study=cfg["problem.study"],
        n0=max(1, round(1.0 / h_init)),
        h_init=h_init,
        corner_refinements=cfg["mesh.corner_refinements"],
        overlap=cfg["mesh.overlap"],
        lumping=cfg["fem.lumping"],
        mass_mode=cfg["fem.solver"],
        delta=cfg["problem.delta"],
        x0=cfg["problem.x0"],
        transfer=cfg["problem.transfer"],
    )
    try:
        StepConfig(dt=0.0, p=kw["p"], safety=kw["safety"])
        return harness.ExperimentSpec(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_manifest(cfg: RunConfig, out: Path, extra: dict) -> None:
    lines = [f"# resolved configuration for '{cfg.command}'"]
    for key in sorted(cfg.values):
        lines.append(f"{key} = {_show(cfg.values[key])}")
    for key in sorted(extra):
        lines.append(f"{key} = {_show(extra[key])}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _show(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return "auto" if v is None else str(v)


# ---------------------------------------------------------------- commands


def cmd_alpha(p: int, fmt: str = "csv", stream=None) -> int:
    stream = stream or sys.stdout
    if p < 1:
        print(f"error: p must be at least 1, got {p}", file=sys.stderr)
        return 2
    rec = alpha_recursive(p).alphas
    closed = alpha_closed_form(p).alphas
    rows = []
    for j, (a, b) in enumerate(zip(rec, closed), 1):
        rel = abs(a - b) / abs(a) if a != 0 else abs(b)
        rows.append((j, a, b, rel))
    header = ("j", "recursive", "closed_form", "rel_diff")
    if fmt == "csv":
        print(",".join(header), file=stream)
        for j, a, b, rel in rows:
            print(f"{j},{a:.16e},{b:.16e},{rel:.16e}", file=stream)
    else:
        print(f"{'j':>3} {'recursive':>24} {'closed_form':>24} {'rel_diff':>12}", file=stream)
        for j, a, b, rel in rows:
            print(f"{j:>3} {a:>24.16g} {b:>24.16g} {rel:>12.3e}", file=stream)
    max_rel = max((r[3] for r in rows), default=0.0)
    footer = f"# p = {p}, max rel diff = {max_rel:.3e}"
    print(footer, file=stream if fmt == "text" else sys.stderr)
    return 0


def cmd_verify(cfg: RunConfig, fmt: str = "text", stream=None) -> int:
    stream = stream or sys.stdout
    spec = spec_from_config(cfg)
    prob = harness.prepare(spec)
    dt = 0.0 if spec.dt_rule == "cfl" else spec.dt
    rep = verify_cfl(prob.ops, StepConfig(dt=dt, p=spec.p, safety=spec.safety), prob.alphas)
    if spec.dt_rule == "cfl":
        # time.dt = auto resolves to the admissible bound itself
        dt = rep.dt_max
        cfg_dt = StepConfig(dt=dt, p=spec.p, safety=spec.safety)
        rep = replace(rep, ok=True, lambda_max_asp=lambda_max_asp(prob.ops, cfg_dt, prob.alphas))
    fields = [("n_dofs", prob.ops.n), ("p", spec.p), ("lambda_max_a", rep.lambda_max_a),
              ("lambda_max_asp", rep.lambda_max_asp), ("dt_crit", rep.dt_crit),
              ("dt_max", rep.dt_max), ("dt", dt), ("ok", rep.ok)]
    if fmt == "csv":
        print(",".join(k for k, _ in fields), file=stream)
        print(",".join(export.format_value(v) for _, v in fields), file=stream)
    else:
        for k, v in fields:
            print(f"{k:>15}: {export.format_value(v) if not isinstance(v, float) else f'{v:.12g}'}",
                  file=stream)
    return 0


def _dt_or_cfl(prob, spec):
    return spec.dt if spec.dt_rule == "fixed" else harness.cfl_dt(prob)


def _run_single(spec, out):
    prob = harness.prepare(spec)
    dt_max = _dt_or_cfl(prob, spec)
    n = harness._steps_for(spec.T, dt_max)
    dt = spec.T / n
    traj = harness.simulate(prob, dt, n, energy=True)
    nodes = prob.disc.dofmap.nodes
    export.write_nodal_csv(out / "solution.csv", nodes, prob.full(traj.state.u_curr))
    rows = [(e.n, e.t, e.kinetic, e.potential, e.total, traj.norms[e.n])
            for e in traj.energies]
    export.write_csv(out / "energy.csv", harness.ENERGY_HEADER, rows)
    summary = [("dt", dt), ("steps", n), ("growth", traj.growth)]
    if prob.exact is not None:
        l2, h1 = harness._final_errors(prob, traj.state.u_curr, spec.T)
        summary += [("l2_error", l2), ("h1_error", h1)]
    export.write_csv(out / "summary.csv", [k for k, _ in summary], [[v for _, v in summary]])


def _run_stability(spec, out, steps):
    prob = harness.prepare(spec)
    dt_max = _dt_or_cfl(prob, spec)
    factors = (0.5, 0.75, 0.9, 1.0, 1.05, 1.1, 1.25)
    res = harness.run_stability_sweep(spec, [f * dt_max for f in factors], steps, problem=prob)
    rows = [(r.dt, f, r.stable, r.growth) for f, r in zip(factors, res)]
    export.write_csv(out / "stability.csv", ("dt", "dt_over_dt_max", "stable", "growth"), rows)


def cmd_run(cfg: RunConfig, threads: int = 1) -> int:
    spec = spec_from_config(cfg)
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    preset = cfg["problem.preset"]
    write_manifest(cfg, out, {"run.threads": threads})
    try:
        if preset == "run":
            _run_single(spec, out)
        elif preset == "converge":
            table = harness.run_convergence(spec)
            export.write_csv(out / "convergence.csv", table.HEADER, table.as_rows())
            if any(r.failed for r in table.rows):
                print("error: a convergence level blew up", file=sys.stderr)
                return 1
        elif preset == "stability":
            _run_stability(spec, out, cfg["problem.steps"])
        elif preset == "lshape":
            harness.run_lshape(spec, out_dir=out)
        else:
            rep = harness.run_benchmark(spec)
            export.write_csv(out / "runtime.csv", rep.HEADER, rep.as_rows())
    except BlowUpError as exc:
        print(f"error: simulation blew up: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltslf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    pa = sub.add_parser("alpha", help="print the alpha coefficient table")
    pa.add_argument("p", type=int)
    pa.add_argument("--format", choices=("csv", "text"), default="csv")
    for name, helptext in (("run", "run the configured experiment"),
                           ("verify", "spectral CFL check without time stepping")):
        sp_ = sub.add_parser(name, help=helptext)
        sp_.add_argument("--config", required=True, metavar="PATH")
        sp_.add_argument("--out", metavar="DIR", help="overrides output.dir")
        sp_.add_argument("--threads", type=int, default=1, metavar="N")
        sp_.add_argument("--format", choices=("csv", "text"), default="text")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "alpha":
        return cmd_alpha(args.p, args.format)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    overrides = {"output.dir": args.out} if getattr(args, "out", None) else {}
    try:
        cfg = load_config(args.config, args.command, overrides)
        if args.command == "verify":
            return cmd_verify(cfg, args.format)
        return cmd_run(cfg, args.threads)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BlowUpError as exc:
        print(f"error: simulation blew up: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
