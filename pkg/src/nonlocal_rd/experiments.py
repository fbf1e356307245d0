"""Studies built on the integrator: diffusive-limit sweeps and side-by-side comparisons."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from ._io import _fmt, csv_text
from .diagnostics import h1_seminorm, max_second_difference
from .grid import Grid
from .integrate import SolverConfig, SystemSpec, Trajectory, run, stable_dt
from .kernels import KernelSpec, assemble_operator, effective_diffusivity, second_moment
from .operators import Local, Nonlocal

log = logging.getLogger(__name__)


# ------------------------------------------------------------ initial data


def gaussian_bump(grid: Grid, center=None, width: float = 0.1, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * exp(-|x - center|^2 / width)``; the default centre is the domain middle."""
    if not width > 0:
        raise ValueError("width must be positive")
    c = np.asarray(center if center is not None else [e / 2 for e in grid.extents], dtype=float)
    if c.shape != (grid.dim,):
        raise ValueError(f"center needs {grid.dim} coordinates")
    r2 = np.sum((grid.nodes - c) ** 2, axis=1)
    return amplitude * np.exp(-r2 / width)


def constant_profile(grid: Grid, value: float = 1.0) -> np.ndarray:
    return np.full(grid.n_nodes, float(value))


def cosine_mode(grid: Grid, mode: int = 1, axis: int = 0, mean: float = 1.0, amplitude: float = 0.5) -> np.ndarray:
    """``mean + amplitude cos(mode pi x_axis / L_axis)``, a Neumann eigenfunction."""
    x = grid.nodes[:, axis]
    return mean + amplitude * np.cos(mode * np.pi * x / grid.extents[axis])


def random_uniform(grid: Grid, seed: int = 0, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(low, high, size=grid.n_nodes)


# ------------------------------------------------------------ diffusive limit


@dataclass
class ConvergenceTable:
    """One row per ``j``: norm differences and the first five nodal differences per component."""

    m: int
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    n_nodes_listed: int = 5

    @property
    def header(self) -> list[str]:
        cols = ["j", "eps"]
        cols += [f"l2_diff_u{i + 1}" for i in range(self.m)]
        cols += [f"linf_diff_u{i + 1}" for i in range(self.m)]
        for i in range(self.m):
            cols += [f"node{k}_diff_u{i + 1}" for k in range(self.n_nodes_listed)]
        return cols

    def add(self, j, eps, l2, linf, nodes):
        if self.rows and not j > self.rows[-1]["j"]:
            raise ValueError("j must increase strictly across rows")
        self.rows.append({"j": float(j), "eps": float(eps), "l2": np.asarray(l2, dtype=float),
                          "linf": np.asarray(linf, dtype=float), "nodes": np.asarray(nodes, dtype=float)})

    def j(self) -> np.ndarray:
        return np.array([r["j"] for r in self.rows])

    def column(self, norm: str = "l2", component: int = 0) -> np.ndarray:
        return np.array([r[norm][component] for r in self.rows])

    def as_rows(self) -> list[list]:
        out = []
        for r in self.rows:
            row = [r["j"], r["eps"], *r["l2"], *r["linf"]]
            for i in range(self.m):
                row += list(r["nodes"][i])
            out.append(row)
        return out

    def to_csv(self) -> str:
        return csv_text(self.header, self.as_rows())

    def to_markdown(self) -> str:
        head = ["j", "eps"] + [f"L2 u{i + 1}" for i in range(self.m)] + [f"Linf u{i + 1}" for i in range(self.m)]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in self.rows:
            cells = [f"{r['j']:g}", f"{r['eps']:g}"] + [f"{v:.4e}" for v in r["l2"]] + [f"{v:.4e}" for v in r["linf"]]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


@dataclass
class ConvergenceFit:
    order: float
    residual: float

    def __str__(self):
        return f"order={self.order!r} residual={self.residual!r}"


def fit_convergence_order(table: Union[ConvergenceTable, tuple], norm: str = "l2", component: int = 0) -> ConvergenceFit:
    """Least-squares slope ``q`` in ``diff ~ C j^(-q)``.

    ``table`` may also be a pair ``(j, diff)``. Any zero difference gives ``inf``.
    """
    if isinstance(table, ConvergenceTable):
        j, diff = table.j(), table.column(norm, component)
    else:
        j, diff = (np.asarray(a, dtype=float) for a in table)
    if j.size < 3:
        raise ValueError("need at least three rows to fit an order")
    if np.any(diff <= 0):
        return ConvergenceFit(math.inf, 0.0)
    X = np.column_stack([np.ones_like(j), np.log(j)])
    coef, *_ = np.linalg.lstsq(X, np.log(diff), rcond=None)
    resid = float(np.linalg.norm(X @ coef - np.log(diff)))
    return ConvergenceFit(float(-coef[1]), resid)


EpsSchedule = Union[None, str, Sequence[float], Callable[[float], float]]


def _eps_for(psi: KernelSpec, j: float, k: int, schedule: EpsSchedule) -> float:
    if schedule is None:
        return psi.eps
    if schedule == "inverse":
        return psi.eps / j
    if callable(schedule):
        return float(schedule(j))
    return float(schedule[k])


def _l2(grid: Grid, e: np.ndarray) -> np.ndarray:
    return np.sqrt((e * e) @ grid.cell_weight)


@dataclass
class DiffLimitResult:
    table: ConvergenceTable
    dt: float
    trajectories: dict
    local_trajectories: dict


def run_difflimit_study(base_spec: SystemSpec, psi: KernelSpec, j_list: Sequence[float],
                        eps_schedule: EpsSchedule = None, config: Optional[SolverConfig] = None,
                        threads: int = 1, storage: str = "auto") -> DiffLimitResult:
    """Compare nonlocal runs with kernels ``phi_j`` against the matched local system.

    ``base_spec`` supplies grid, reaction, initial data and ``t_end``; each
    component's diffusivity ``d_i`` is taken from its mode. The local
    reference uses ``D_i = d_i M / (2n)``, recomputed whenever the profile
    changes through ``eps_schedule``. All runs share one step, the smallest
    stable step over the sweep, so results do not depend on run order.
    """
    j_list = [float(j) for j in j_list]
    if not j_list or any(b <= a for a, b in zip(j_list, j_list[1:])):
        raise ValueError("j_list must be nonempty and strictly increasing")
    config = config or SolverConfig()
    grid, n = base_spec.grid, base_spec.grid.dim
    d = [mode.diffusivity for mode in base_spec.modes]

    nonlocal_specs, local_specs, eps_used = [], {}, []
    for k, j in enumerate(j_list):
        eps = _eps_for(psi, j, k, eps_schedule)
        kspec = replace(psi, eps=eps, scale_index=j)
        M = second_moment(kspec, n)
        op = assemble_operator(grid, kspec, storage=storage)
        nonlocal_specs.append(replace_modes(base_spec, tuple(Nonlocal(di, op) for di in d)))
        D = tuple(effective_diffusivity(M, di, n) for di in d)
        if D not in local_specs:
            local_specs[D] = replace_modes(base_spec, tuple(Local(Di) for Di in D))
        eps_used.append((eps, D))

    notes = []
    dt = config.dt
    if config.scheme == "explicit_euler":
        bound = min(stable_dt(s, config.cfl_fraction, config.cfl_rule)
                    for s in nonlocal_specs + list(local_specs.values()))
        if dt is None or dt > bound:
            if dt is not None:
                msg = f"dt reduced from {dt!r} to {bound!r} for stability at j={j_list[-1]:g}"
                log.info(msg)
                notes.append(msg)
            dt = bound
    cfg = replace(config, dt=dt)

    jobs = [("local", D, s) for D, s in local_specs.items()] + \
           [("nonlocal", j, s) for j, s in zip(j_list, nonlocal_specs)]

    def work(job):
        with threadpool_limits(1):
            return run(job[2], cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    local_traj, nonlocal_traj = {}, {}
    for job, traj in zip(jobs, results):
        if not traj.termination.ok:
            raise RuntimeError(f"{job[0]} run ({job[1]}) terminated: {traj.termination.describe()}")
        (local_traj if job[0] == "local" else nonlocal_traj)[job[1]] = traj

    table = ConvergenceTable(base_spec.m, notes=notes)
    listed = min(table.n_nodes_listed, grid.n_nodes)
    table.n_nodes_listed = listed
    for j, (eps, D) in zip(j_list, eps_used):
        e = np.abs(nonlocal_traj[j].final - local_traj[D].final)
        table.add(j, eps, _l2(grid, e), e.max(axis=1), e[:, :listed])
    return DiffLimitResult(table, traj_dt(results), nonlocal_traj, local_traj)


def traj_dt(results: Sequence[Trajectory]) -> float:
    return results[0].dt if results else math.nan


def replace_modes(spec: SystemSpec, modes: tuple) -> SystemSpec:
    return SystemSpec(spec.grid, spec.reaction, modes, spec.initial.copy(), spec.t_end)


# ------------------------------------------------------------ side by side


@dataclass
class SideBySide:
    labels: tuple
    trajectories: tuple
    smoothness: tuple
    h1_final: np.ndarray
    smoother: Optional[int]

    def smoothness_csv(self, k: int) -> str:
        m = self.trajectories[k].final.shape[0]
        header = ["t"] + [f"h1_u{i + 1}" for i in range(m)] + [f"d2max_u{i + 1}" for i in range(m)]
        return csv_text(header, self.smoothness[k])

    def report(self) -> str:
        lines = ["# Side-by-side comparison", ""]
        for k, label in enumerate(self.labels):
            tr = self.trajectories[k]
            lines.append(f"- {label}: {tr.termination.describe()}, steps={tr.n_steps}, dt={_fmt(tr.dt)}, "
                         f"final H1 seminorm per component={[_fmt(v) for v in self.h1_final[k]]}")
        if self.smoother is not None:
            lines.append(f"- last component smoother in run `{self.labels[self.smoother]}`")
        return "\n".join(lines) + "\n"


def _smoothness_series(grid: Grid, traj: Trajectory) -> list:
    rows = []
    for t, U in zip(traj.times, traj.snapshots):
        rows.append([t] + [h1_seminorm(grid, u) for u in U] + [max_second_difference(grid, u) for u in U])
    return rows


def run_side_by_side(spec_a: SystemSpec, spec_b: SystemSpec, config_a: Optional[SolverConfig] = None,
                     config_b: Optional[SolverConfig] = None, labels=("a", "b"), threads: int = 1) -> SideBySide:
    """Run two matched systems and compare smoothness of their solutions over time."""
    if not spec_a.grid.same_as(spec_b.grid):
        raise ValueError("side-by-side runs need the same grid")
    if spec_a.m != spec_b.m or not np.array_equal(spec_a.initial, spec_b.initial):
        raise ValueError("side-by-side runs need matched components and initial data")
    config_a = config_a or SolverConfig()
    config_b = config_b or config_a

    def work(args):
        with threadpool_limits(1):
            return run(*args)

    jobs = [(spec_a, config_a), (spec_b, config_b)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            trajs = tuple(pool.map(work, jobs))
    else:
        trajs = tuple(work(j) for j in jobs)
    series = tuple(_smoothness_series(spec_a.grid, t) for t in trajs)
    h1 = np.array([[h1_seminorm(spec_a.grid, u) for u in t.final] for t in trajs])
    smoother = None
    if all(t.termination.ok for t in trajs):
        if h1[0, -1] < h1[1, -1]:
            smoother = 0
        elif h1[1, -1] < h1[0, -1]:
            smoother = 1
    return SideBySide(tuple(labels), trajs, series, h1, smoother)


# ------------------------------------------------------------ kernel probe


def kernel_independence_probe(base_spec: SystemSpec, kernels: Sequence[KernelSpec], p: int = 2,
                              config: Optional[SolverConfig] = None) -> dict:
    """Time-maximum of ``||u||_p`` for the same system under several kernels.

    All runs use the smallest stable step among the kernels.
    """
    config = config or SolverConfig()
    d = [mode.diffusivity for mode in base_spec.modes]
    specs = []
    for k in kernels:
        op = assemble_operator(base_spec.grid, k)
        specs.append(replace_modes(base_spec, tuple(Nonlocal(di, op) for di in d)))
    dt = config.dt or min(stable_dt(s, config.cfl_fraction, config.cfl_rule) for s in specs)
    cfg = replace(config, dt=dt, snapshot_stride=max(config.snapshot_stride, 1))
    w = base_spec.grid.cell_weight
    peaks = []
    for s in specs:
        tr = run(s, cfg)
        norms = [float(np.sum(np.abs(U) ** p @ w) ** (1.0 / p)) for U in tr.snapshots]
        peaks.append(max(norms) if tr.termination.ok else math.inf)
    initial = float(np.sum(np.abs(base_spec.initial) ** p @ w) ** (1.0 / p))
    peaks = np.array(peaks)
    return {"dt": dt, "peaks": peaks, "initial_norm": initial,
            "spread": float(peaks.max() / peaks.min()) if peaks.min() > 0 else math.inf}
