"""Command-line front end: ``simulate``, ``audit``, ``difflimit`` and ``compare``.

Exit codes: 0 success, 1 runtime termination, 2 configuration error,
3 assumption audit failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from ._io import _fmt, atomic_write_text
from .config import ConfigError, RunConfig, build_system, defaulted_fields, load_config
from .experiments import fit_convergence_order, run_difflimit_study, run_side_by_side
from .grid import Field, snapshot_csv
from .integrate import run
from .reactions import SAMPLER_NOTE, audit

OUT_ENV = "NONLOCAL_RD_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("nonlocal_rd")


def _out_dir(args, cfg: Optional[RunConfig] = None) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg is not None and cfg.output.dir:
        out = Path(cfg.output.dir)
    else:
        out = Path(os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(title: str, cfg: RunConfig, source: str) -> list[str]:
    lines = [f"# {title}", "", f"config: {source}", "", "## Defaulted parameters", ""]
    defaults = defaulted_fields(cfg)
    lines += [f"- {k} = {v!r}" for k, v in defaults] or ["- none"]
    lines.append("")
    return lines


def _audit_lines(reports) -> list[str]:
    lines = ["## Assumption audit", "", f"_{SAMPLER_NOTE}_", ""]
    lines += [f"- {r.summary()}" for r in reports]
    lines.append("")
    return lines


def _load(path, overrides):
    cfg = load_config(path, overrides)
    return cfg, build_system(cfg)


def cmd_simulate(args) -> int:
    cfg, spec = _load(args.config[0], args.override)
    out = _out_dir(args, cfg)
    lines = _header("Simulation report", cfg, args.config[0])
    if cfg.solver.audit:
        reports = audit(spec.reaction)
        lines += _audit_lines(reports)
        if not all(r.passed for r in reports):
            lines.append("status: audit_failed (no steps taken)")
            atomic_write_text(out / "report.md", "\n".join(lines) + "\n")
            print("assumption audit failed", file=sys.stderr)
            return EXIT_AUDIT
    solver = cfg.solver.build()
    try:
        traj = run(spec, solver)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    label = cfg.output.label
    for k, (t, U) in enumerate(zip(traj.times, traj.snapshots)):
        name = "initial" if k == 0 else f"snapshot_{k:04d}"
        atomic_write_text(out / f"{label}_{name}.csv", snapshot_csv(Field(spec.grid, U)))
    atomic_write_text(out / f"{label}_final.csv", snapshot_csv(Field(spec.grid, traj.final)))
    if traj.diagnostics is not None:
        atomic_write_text(out / f"{label}_diagnostics.csv", traj.diagnostics.to_csv())
        lines += ["## Energy weights", ""] + [f"- {c}" for c in traj.diagnostics.certificates()] + [""]
    lines += [
        "## Run", "",
        f"- status: {traj.termination.describe()}",
        f"- scheme: {solver.scheme}",
        f"- dt: {_fmt(traj.dt)} (stable bound {_fmt(traj.stable_dt)}, rule {solver.cfl_rule})",
        f"- steps: {traj.n_steps}",
        f"- t_final: {_fmt(traj.t_final)}",
        f"- min value: {_fmt(traj.min_value)}",
        f"- max value: {_fmt(traj.max_value)}",
    ]
    if traj.newton_iterations:
        lines.append(f"- newton iterations: max {max(traj.newton_iterations)}, total {sum(traj.newton_iterations)}")
    lines += [f"- note: {n}" for n in traj.notes]
    atomic_write_text(out / "report.md", "\n".join(lines) + "\n")
    print(traj.termination.describe())
    return EXIT_OK if traj.termination.ok else EXIT_RUNTIME


def cmd_audit(args) -> int:
    cfg, spec = _load(args.config[0], args.override)
    out = _out_dir(args, cfg)
    reports = audit(spec.reaction)
    lines = _header("Audit report", cfg, args.config[0]) + _audit_lines(reports)
    atomic_write_text(out / "audit.md", "\n".join(lines))
    for r in reports:
        print(r.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_AUDIT


def cmd_difflimit(args) -> int:
    cfg, spec = _load(args.config[0], args.override)
    out = _out_dir(args, cfg)
    psi = cfg.kernel.spec()
    res = run_difflimit_study(spec, psi, cfg.experiment.j_list, cfg.experiment.eps_schedule,
                              cfg.solver.build(), threads=args.threads, storage=cfg.kernel.storage)
    table = res.table
    atomic_write_text(out / "convergence.csv", table.to_csv())
    lines = _header("Diffusive-limit study", cfg, args.config[0])
    lines += ["## Convergence table", "", table.to_markdown()]
    if len(table.rows) >= 3:
        for i in range(spec.m):
            fit = fit_convergence_order(table, "l2", i)
            lines.append(f"- fitted L2 order u{i + 1}: {fit}")
    lines.append(f"- common dt: {_fmt(res.dt)}")
    lines += [f"- note: {n}" for n in table.notes]
    atomic_write_text(out / "convergence.md", "\n".join(lines) + "\n")
    print(table.to_markdown(), end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.config) != 2:
        raise ConfigError("compare needs exactly two --config files")
    cfg_a, spec_a = _load(args.config[0], args.override)
    cfg_b, spec_b = _load(args.config[1], args.override)
    out = _out_dir(args, cfg_a)
    sa, sb = cfg_a.solver.build(), cfg_b.solver.build()
    # smoothness needs a time series; fall back to every step when no stride is given
    sa = replace(sa, snapshot_stride=sa.snapshot_stride or 1)
    sb = replace(sb, snapshot_stride=sb.snapshot_stride or 1)
    label_a, label_b = cfg_a.output.label, cfg_b.output.label
    if label_a == label_b:
        label_a, label_b = label_a + "_a", label_b + "_b"
    try:
        res = run_side_by_side(spec_a, spec_b, sa, sb, labels=(label_a, label_b), threads=args.threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for k, label in enumerate(res.labels):
        atomic_write_text(out / f"{label}_smoothness.csv", res.smoothness_csv(k))
        atomic_write_text(out / f"{label}_final.csv", snapshot_csv(Field(spec_a.grid, res.trajectories[k].final)))
    lines = _header("Comparison report", cfg_a, f"{args.config[0]} vs {args.config[1]}")
    lines.append(res.report())
    atomic_write_text(out / "compare.md", "\n".join(lines))
    print(res.report(), end="")
    ok = all(t.termination.ok for t in res.trajectories)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"simulate": cmd_simulate, "audit": cmd_audit, "difflimit": cmd_difflimit, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-rd", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", action="append", default=[], metavar="PATH",
                        help="run configuration (YAML); give twice for compare")
    parser.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./out)")
    parser.add_argument("--threads", type=int, default=1, metavar="N", help="parallel independent runs")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. solver.dt=1e-3")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if not args.config:
        print("--config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(1):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
