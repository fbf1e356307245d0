"""Energy-type diagnostics for nonlocal and mixed diffusion systems.

The weighted ``L^p`` energy is

    L_p[u] = int sum_{|beta|=p} (p choose beta) theta^(beta^2) u^beta dx,

with weights ``theta`` certified so that the symmetric matrix with diagonal
``d_i theta_i^2`` and off-diagonal ``(d_i + d_j)/2`` is positive definite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ._io import csv_text
from .grid import Grid
from .kernels import DiscreteNonlocalOperator
from .operators import Nonlocal, apply_laplacian_neumann, apply_nonlocal

MAX_MULTI_INDICES = 1_000_000
MAX_DOUBLINGS = 60


class ThetaCertificationError(RuntimeError):
    pass


def build_m_matrix(theta: Sequence[float], d: Sequence[float]) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    if theta.shape != d.shape or theta.ndim != 1:
        raise ValueError("theta and d must be vectors of equal length")
    if np.any(theta <= 0) or np.any(d <= 0):
        raise ValueError("theta and d must be positive")
    M = 0.5 * (d[:, None] + d[None, :])
    np.fill_diagonal(M, d * theta**2)
    return M


def is_positive_definite(M: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class ThetaWeights:
    theta: tuple[float, ...]
    p: int
    certified: bool
    M: np.ndarray = field(repr=False, compare=False)

    def certificate(self) -> str:
        status = "certified positive definite" if self.certified else "NOT certified"
        return f"theta={list(self.theta)} p={self.p}: {status}"


def choose_theta(d: Sequence[float], p: int = 2) -> ThetaWeights:
    """Weights ``theta_i = s**(i-1)`` with ``s`` doubled until the matrix is PD.

    Doubling only grows the diagonal while the off-diagonal stays fixed, so
    this terminates; failure after ``MAX_DOUBLINGS`` raises.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size == 0 or np.any(d <= 0):
        raise ValueError("diffusivities must be a nonempty positive vector")
    if p < 2:
        raise ValueError("p must be at least 2")
    powers = np.arange(d.size)
    s = 1.0
    for _ in range(MAX_DOUBLINGS + 1):
        theta = s**powers
        M = build_m_matrix(theta, d)
        if is_positive_definite(M):
            return ThetaWeights(tuple(float(x) for x in theta), int(p), True, M)
        s *= 2.0
    raise ThetaCertificationError(f"no certified theta for d={d.tolist()} within {MAX_DOUBLINGS} doublings")


@lru_cache(maxsize=64)
def multi_indices(m: int, p: int) -> tuple[tuple[int, ...], ...]:
    """All ``beta`` in ``Z_+^m`` with ``|beta| = p``, lexicographically descending."""
    count = math.comb(p + m - 1, m - 1)
    if count > MAX_MULTI_INDICES:
        raise ValueError(f"{count} multi-indices for m={m}, p={p} exceeds the cap {MAX_MULTI_INDICES}")

    def rec(k, rest):
        if k == m - 1:
            yield (rest,)
            return
        for b in range(rest, -1, -1):
            for tail in rec(k + 1, rest - b):
                yield (b,) + tail

    return tuple(rec(0, p))


def _coefficients(theta: np.ndarray, p: int) -> tuple[tuple[tuple[int, ...], ...], np.ndarray]:
    betas = multi_indices(theta.size, p)
    fact_p = math.factorial(p)
    coef = np.empty(len(betas))
    for k, beta in enumerate(betas):
        multinom = fact_p // math.prod(math.factorial(b) for b in beta)
        coef[k] = multinom * math.prod(float(t) ** (b * b) for t, b in zip(theta, beta))
    return betas, coef


def lp_density(U: np.ndarray, theta: Sequence[float], p: int) -> np.ndarray:
    """Pointwise ``H_p[u]`` for ``U`` of shape ``(m, N)``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if theta.size != U.shape[0]:
        raise ValueError("theta length must match the component count")
    betas, coef = _coefficients(theta, p)
    umax = float(np.max(np.abs(U))) if U.size else 0.0
    if umax > 0 and p * math.log10(umax) + math.log10(coef.max()) > 300:
        raise OverflowError(
            f"L^{p} energy would overflow (max |u| = {umax:.3g}); rescale the field before evaluating"
        )
    powers = U[:, None, :] ** np.arange(p + 1)[None, :, None]  # (m, p+1, N)
    H = np.zeros(U.shape[1])
    for beta, c in zip(betas, coef):
        term = np.full(U.shape[1], c)
        for i, b in enumerate(beta):
            if b:
                term = term * powers[i, b]
        H += term
    return H


def lp_energy(grid: Grid, U: np.ndarray, weights: ThetaWeights, negativity_tol: float = 1e-10) -> float:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.size and U.min() < -negativity_tol * (1.0 + np.abs(U).max()):
        raise ValueError(f"L^p energy needs a nonnegative field; min value {U.min():.3g}")
    return float(grid.cell_weight @ lp_density(U, weights.theta, weights.p))


def norm_equivalence_bounds(theta: Sequence[float], p: int) -> tuple[float, float]:
    """Constants ``lo, hi`` with ``lo ||u||_p <= L_p[u]^(1/p) <= hi ||u||_p`` for ``u >= 0``.

    ``||u||_p^p = int sum_i u_i^p``. The lower constant is the one-hot value
    ``min_i theta_i^p``; the upper uses ``(sum u_i)^p <= m^(p-1) sum u_i^p``.
    """
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    betas = multi_indices(m, p)
    max_w = max(math.prod(float(t) ** (b * b) for t, b in zip(theta, beta)) for beta in betas)
    lo = float(np.min(theta**p))
    hi = float((max_w * m ** (p - 1)) ** (1.0 / p))
    return lo, hi


def _pair_sum(op: DiscreteNonlocalOperator, z: np.ndarray, chunk: int = 256) -> float:
    """``sum_pq w_p K_pq w_q (z_p - z_q)^2`` from explicit differences."""
    w = op.col_weight
    if op.storage == "dense":
        K = op.kernel_matrix
        total = 0.0
        for start in range(0, z.size, chunk):
            sl = slice(start, start + chunk)
            diff = z[sl, None] - z[None, :]
            total += float(np.sum(w[sl, None] * (K[sl] * w[None, :]) * diff * diff))
        return total
    grid = op.grid
    Z = grid.reshape(z)
    Wg = grid.reshape(w)
    total = 0.0
    for off, val in zip(op.offsets, op.offset_values):
        a_sl, b_sl = [], []
        for axis in range(grid.dim):
            o, n = off[axis], grid.counts[axis]
            a_sl.append(slice(0, n - o) if o >= 0 else slice(-o, n))
            b_sl.append(slice(o, n) if o >= 0 else slice(0, n + o))
        a = tuple(reversed(a_sl))
        b = tuple(reversed(b_sl))
        diff = Z[a] - Z[b]
        total += float(val * np.sum(Wg[a] * Wg[b] * diff * diff))
    return total


def dissipation_Y(op: DiscreteNonlocalOperator, z) -> float:
    """Discrete ``int int phi(x, y) (z(x) - z(y))^2`` with both quadrature measures."""
    z = np.asarray(z, dtype=float)
    if z.shape != (op.n_nodes,):
        raise ValueError(f"expected a scalar field with {op.n_nodes} nodes")
    return _pair_sum(op, z)


def weighted_mass(grid: Grid, U: np.ndarray, a: Sequence[float]) -> float:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    a = np.asarray(a, dtype=float)
    if a.shape != (U.shape[0],):
        raise ValueError(f"need {U.shape[0]} mass weights, got {a.size}")
    return float(a @ (U @ grid.cell_weight))


def h1_seminorm(grid: Grid, u) -> float:
    """Discrete ``H^1`` seminorm from forward differences on every axis."""
    V = grid.reshape(np.asarray(u, dtype=float))
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        ax = V.ndim - 1 - axis
        diff = np.diff(V, axis=ax)
        if grid.dim == 1:
            total += float(np.sum(diff * diff) / h)
        else:
            other = 1 - axis
            wt = np.full(grid.counts[other], grid.spacing[other])
            wt[0] = wt[-1] = 0.5 * grid.spacing[other]
            shape = [1, 1]
            shape[V.ndim - 1 - other] = -1
            total += float(np.sum(wt.reshape(shape) * diff * diff) / h)
    return math.sqrt(total)


def max_second_difference(grid: Grid, u) -> float:
    V = grid.reshape(np.asarray(u, dtype=float))
    out = 0.0
    for axis, h in enumerate(grid.spacing):
        d2 = np.diff(V, n=2, axis=V.ndim - 1 - axis) / (h * h)
        out = max(out, float(np.max(np.abs(d2))))
    return out


def dissipation_rate(grid: Grid, modes, U: np.ndarray) -> float:
    """``-2 sum_i <u_i, A_i u_i>``: decay rate of ``sum_i ||u_i||_2^2`` from diffusion alone.

    For a nonlocal component this equals ``d Y[u_i]`` by symmetry; the inner
    product form costs one operator application instead of a pair sum.
    """
    total = 0.0
    for mode, u in zip(modes, U):
        if isinstance(mode, Nonlocal):
            Au = apply_nonlocal(mode.operator, u, mode.d)
        else:
            Au = apply_laplacian_neumann(grid, u, mode.D)
        total += -2.0 * float(grid.cell_weight @ (u * Au))
    return total


class DiagnosticsRecord:
    """Per-step diagnostics: extrema, weighted mass, ``L^p`` energies, dissipation."""

    def __init__(self, grid: Grid, modes, mass_weights: Sequence[float], lp_orders: Sequence[int] = (2,),
                 dissipation: bool = True):
        self.grid = grid
        self.modes = tuple(modes)
        self.m = len(self.modes)
        self.mass_weights = tuple(float(a) for a in mass_weights)
        d = [mode.diffusivity for mode in self.modes]
        self.theta = {p: choose_theta(d, p) for p in lp_orders}
        self.with_dissipation = dissipation
        self.rows: list[tuple] = []

    @property
    def header(self) -> list[str]:
        cols = ["t"]
        for i in range(self.m):
            cols += [f"min_u{i + 1}", f"max_u{i + 1}"]
        cols.append("weighted_mass")
        cols += [f"lp_energy_p{p}" for p in self.theta]
        if self.with_dissipation:
            cols.append("dissipation")
        return cols

    def record(self, t: float, U: np.ndarray) -> tuple:
        row = [float(t)]
        for u in U:
            row += [float(u.min()), float(u.max())]
        row.append(weighted_mass(self.grid, U, self.mass_weights))
        for w in self.theta.values():
            try:
                row.append(lp_energy(self.grid, U, w, negativity_tol=math.inf))
            except OverflowError:
                row.append(math.inf)
        if self.with_dissipation:
            row.append(dissipation_rate(self.grid, self.modes, U))
        row = tuple(row)
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        k = self.header.index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self) -> str:
        return csv_text(self.header, self.rows)

    def certificates(self) -> list[str]:
        return [w.certificate() for w in self.theta.values()]
