"""Fixed-step time integration of nonlocal, local and mixed reaction-diffusion systems."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .diagnostics import DiagnosticsRecord
from .grid import Field, Grid
from .operators import DiffusionMode, Local, Nonlocal, apply_laplacian_neumann
from .reactions import ReactionSystem

log = logging.getLogger(__name__)


class NewtonFailure(RuntimeError):
    def __init__(self, t: float, iterations: int, residual: float):
        super().__init__(f"Newton did not converge at t={t:.6g} after {iterations} iterations "
                         f"(residual {residual:.3g})")
        self.t = t
        self.iterations = iterations
        self.residual = residual


@dataclass
class SystemSpec:
    """Grid, reaction, per-component diffusion and nonnegative initial data."""

    grid: Grid
    reaction: ReactionSystem
    modes: tuple
    initial: np.ndarray
    t_end: float

    def __post_init__(self):
        self.modes = tuple(self.modes)
        if isinstance(self.initial, Field):
            self.initial = self.initial.values
        self.initial = np.atleast_2d(np.asarray(self.initial, dtype=float))
        m = self.reaction.m
        if len(self.modes) != m:
            raise ValueError(f"{len(self.modes)} diffusion modes for {m} components")
        if self.initial.shape != (m, self.grid.n_nodes):
            raise ValueError(f"initial data has shape {self.initial.shape}, expected {(m, self.grid.n_nodes)}")
        if not np.all(np.isfinite(self.initial)) or self.initial.min() < 0:
            raise ValueError("initial data must be finite and componentwise nonnegative")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        for mode in self.modes:
            if isinstance(mode, Nonlocal) and not mode.operator.grid.same_as(self.grid):
                raise ValueError("nonlocal operator assembled on a different grid")
        # nonlocal components sharing one operator are applied as a block
        groups: dict[int, list[int]] = {}
        self._ops = {}
        for i, mode in enumerate(self.modes):
            if isinstance(mode, Nonlocal):
                groups.setdefault(id(mode.operator), []).append(i)
                self._ops[id(mode.operator)] = mode.operator
        self._groups = [(self._ops[k], np.array(v)) for k, v in groups.items()]
        self._local = [i for i, mode in enumerate(self.modes) if isinstance(mode, Local)]

    @property
    def m(self) -> int:
        return self.reaction.m

    def diffusion(self, U: np.ndarray) -> np.ndarray:
        out = np.empty_like(U)
        for op, idx in self._groups:
            d = np.array([self.modes[i].d for i in idx])[:, None]
            block = U[idx]
            out[idx] = d * (op.matvec(block) - op.row_mass * block)
        for i in self._local:
            out[i] = apply_laplacian_neumann(self.grid, U[i], self.modes[i].D)
        return out

    def rhs(self, t: float, U: np.ndarray) -> np.ndarray:
        return self.diffusion(U) + self.reaction.eval(t, U)


@dataclass
class SolverConfig:
    scheme: Literal["explicit_euler", "implicit_bdf2"] = "explicit_euler"
    dt: Optional[float] = None
    cfl_fraction: float = 0.9
    cfl_rule: Literal["von_neumann", "cell_area"] = "von_neumann"
    newton_tol: float = 1e-8
    newton_max_iter: int = 25
    krylov_rtol: float = 1e-8
    negativity_tol: float = 1e-10
    blowup_value: float = 1e12
    snapshot_stride: int = 0
    diagnostics_stride: int = 1
    lp_orders: tuple = (2,)
    dissipation: bool = True
    allow_unstable_dt: bool = False

    def __post_init__(self):
        if self.scheme not in ("explicit_euler", "implicit_bdf2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.cfl_rule not in ("von_neumann", "cell_area"):
            raise ValueError(f"unknown cfl_rule {self.cfl_rule!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_fraction <= 1:
            raise ValueError("cfl_fraction must lie in (0, 1]")
        for name in ("newton_tol", "negativity_tol", "krylov_rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        self.lp_orders = tuple(int(p) for p in self.lp_orders)


def stable_dt(spec: SystemSpec, cfl_fraction: float = 0.9, rule: str = "von_neumann") -> float:
    """Largest explicit step allowed by the diffusion terms, times ``cfl_fraction``.

    Nonlocal components need ``dt d mu_max <= 1``. Local components use the
    von Neumann bound ``dt D sum_a 2/h_a^2 <= 1``; ``rule='cell_area'`` uses the
    looser ``dt D / prod(h_a) <= 1/2`` instead. Reaction stiffness is ignored.
    """
    bounds = []
    h = spec.grid.spacing
    for mode in spec.modes:
        if isinstance(mode, Nonlocal):
            if mode.operator.mu_max > 0:
                bounds.append(1.0 / (mode.d * mode.operator.mu_max))
        elif rule == "cell_area":
            cell = h[0] * h[0] if spec.grid.dim == 1 else h[0] * h[1]
            bounds.append(0.5 * cell / mode.D)
        else:
            bounds.append(1.0 / (mode.D * sum(2.0 / (x * x) for x in h)))
    if not bounds:
        return math.inf
    return cfl_fraction * min(bounds)


def step_explicit(spec: SystemSpec, U: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One forward Euler step of the full system."""
    return U + dt * spec.rhs(t, U)


@dataclass
class NewtonResult:
    U: np.ndarray
    iterations: int
    residual: float


def _newton(spec: SystemSpec, t_new: float, gamma_dt: float, base: np.ndarray, guess: np.ndarray,
            config: SolverConfig) -> NewtonResult:
    """Solve ``V - gamma_dt F(t_new, V) = base`` by damped Jacobian-free Newton-Krylov."""
    shape = base.shape
    size = base.size

    def G(V):
        return V - gamma_dt * spec.rhs(t_new, V) - base

    V = guess.copy()
    R = G(V)
    sqrt_eps = math.sqrt(np.finfo(float).eps)
    rnorm = float(np.max(np.abs(R)))
    for it in range(1, config.newton_max_iter + 1):
        if rnorm <= config.newton_tol * (1.0 + float(np.max(np.abs(V)))):
            return NewtonResult(V, it, rnorm)
        vnorm = 1.0 + float(np.linalg.norm(V))

        def jv(x, V=V, R=R):
            x = x.reshape(shape)
            xn = float(np.linalg.norm(x))
            if xn == 0.0:
                return np.zeros(size)
            eps = sqrt_eps * vnorm / xn
            return ((G(V + eps * x) - R) / eps).ravel()

        J = LinearOperator((size, size), matvec=jv, dtype=float)
        delta, info = gmres(J, -R.ravel(), rtol=config.krylov_rtol, atol=0.0, restart=60, maxiter=20)
        delta = delta.reshape(shape)
        lam = 1.0
        while True:
            V_try = V + lam * delta
            R_try = G(V_try)
            r_try = float(np.max(np.abs(R_try)))
            if r_try < (1.0 - 1e-4 * lam) * rnorm or lam <= 1.0 / 64:
                break
            lam *= 0.5
        V, R, rnorm = V_try, R_try, r_try
    if rnorm <= config.newton_tol * (1.0 + float(np.max(np.abs(V)))):
        return NewtonResult(V, config.newton_max_iter, rnorm)
    raise NewtonFailure(t_new, config.newton_max_iter, rnorm)


def step_implicit(spec: SystemSpec, history: Sequence[np.ndarray], t: float, dt: float,
                  config: Optional[SolverConfig] = None) -> NewtonResult:
    """One implicit step from ``t`` to ``t + dt``.

    With a single history level this is backward Euler (the startup step);
    with ``[U^{n-1}, U^n]`` it is BDF2,
    ``3 U^{n+1} - 4 U^n + U^{n-1} = 2 dt F(U^{n+1})``.
    """
    config = config or SolverConfig(scheme="implicit_bdf2")
    if len(history) == 1:
        (Un,) = history
        return _newton(spec, t + dt, dt, Un, Un, config)
    Um1, Un = history[-2], history[-1]
    base = (4.0 * Un - Um1) / 3.0
    return _newton(spec, t + dt, 2.0 * dt / 3.0, base, Un, config)


@dataclass
class Termination:
    status: Literal["completed", "blow_up", "negativity", "newton_failure"] = "completed"
    t: Optional[float] = None
    component: Optional[int] = None
    value: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status == "completed"

    def describe(self) -> str:
        if self.ok:
            return "completed"
        parts = [self.status, f"t={self.t!r}"]
        if self.component is not None:
            parts.append(f"component={self.component + 1}")
        if self.value is not None:
            parts.append(f"value={self.value!r}")
        return " ".join(parts)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    diagnostics: Optional[DiagnosticsRecord] = None
    termination: Termination = field(default_factory=Termination)
    dt: float = 0.0
    stable_dt: float = math.inf
    n_steps: int = 0
    newton_iterations: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    final: Optional[np.ndarray] = None
    t_final: float = 0.0
    min_value: float = math.inf
    max_value: float = -math.inf

    @property
    def cfl_margin(self) -> float:
        """``dt / stable_dt``; values above 1 mean the stability bound was overridden."""
        return self.dt / self.stable_dt if math.isfinite(self.stable_dt) else 0.0


def _check_state(U: np.ndarray, t: float, config: SolverConfig) -> Optional[Termination]:
    if not np.all(np.isfinite(U)):
        bad = np.argwhere(~np.isfinite(U))[0]
        return Termination("blow_up", t, int(bad[0]), float(U[tuple(bad)]))
    amax = float(np.max(np.abs(U)))
    if amax > config.blowup_value:
        i = int(np.unravel_index(np.argmax(np.abs(U)), U.shape)[0])
        return Termination("blow_up", t, i, amax)
    umin = float(U.min())
    if umin < -config.negativity_tol * (1.0 + amax):
        i = int(np.unravel_index(np.argmin(U), U.shape)[0])
        return Termination("negativity", t, i, umin)
    return None


def run(spec: SystemSpec, config: Optional[SolverConfig] = None, *, audit: bool = False) -> Trajectory:
    """Integrate ``spec`` to ``t_end`` with uniform steps, recording diagnostics.

    The step is ``t_end / ceil(t_end / dt)`` so the final time is hit exactly.
    Negative values below the tolerance stop the run; nothing is clamped.
    """
    config = config or SolverConfig()
    if audit:
        from .reactions import AuditFailure, audit as run_audit

        reports = run_audit(spec.reaction)
        failed = [r for r in reports if not r.passed]
        if failed:
            raise AuditFailure(failed)

    traj = Trajectory()
    traj.stable_dt = stable_dt(spec, config.cfl_fraction, config.cfl_rule)
    dt_req = config.dt if config.dt is not None else traj.stable_dt
    if not math.isfinite(dt_req):
        dt_req = spec.t_end
    if config.scheme == "explicit_euler" and dt_req > traj.stable_dt * (1 + 1e-12):
        msg = f"dt={dt_req:.6g} exceeds the explicit stability bound {traj.stable_dt:.6g}"
        if not config.allow_unstable_dt:
            raise ValueError(msg + "; set allow_unstable_dt to override")
        log.warning(msg + " (override)")
        traj.notes.append(msg + " (override)")
    n_steps = max(1, int(math.ceil(spec.t_end / dt_req - 1e-9)))
    dt = spec.t_end / n_steps
    traj.dt = dt
    if config.scheme == "explicit_euler":
        traj.notes.append("reaction stiffness is not part of the explicit step bound")

    mass_w = spec.reaction.qbal_weights or (1.0,) * spec.m
    diag = None
    if config.diagnostics_stride > 0:
        diag = DiagnosticsRecord(spec.grid, spec.modes, mass_w, config.lp_orders, config.dissipation)
    traj.diagnostics = diag

    U = spec.initial.copy()
    prev = None

    def observe(n, t, U):
        traj.min_value = min(traj.min_value, float(U.min()))
        traj.max_value = max(traj.max_value, float(U.max()))
        last = n == n_steps
        if diag is not None and (n % config.diagnostics_stride == 0 or last):
            diag.record(t, U)
        if config.snapshot_stride > 0 and (n % config.snapshot_stride == 0 or last):
            traj.times.append(t)
            traj.snapshots.append(U.copy())
        elif config.snapshot_stride <= 0 and (n == 0 or last):
            traj.times.append(t)
            traj.snapshots.append(U.copy())

    observe(0, 0.0, U)
    for n in range(1, n_steps + 1):
        t_old = (n - 1) * dt
        t_new = n * dt if n < n_steps else spec.t_end
        if config.scheme == "explicit_euler":
            U_new = step_explicit(spec, U, t_old, dt)
        else:
            history = [U] if prev is None else [prev, U]
            try:
                res = step_implicit(spec, history, t_old, dt, config)
            except NewtonFailure as exc:
                traj.termination = Termination("newton_failure", exc.t, None, exc.residual)
                break
            U_new = res.U
            traj.newton_iterations.append(res.iterations)
        bad = _check_state(U_new, t_new, config)
        if bad is not None:
            traj.termination = bad
            break
        prev, U = U, U_new
        traj.n_steps = n
        observe(n, t_new, U)
    traj.final = U
    traj.t_final = traj.n_steps * dt if traj.n_steps < n_steps else spec.t_end
    return traj
