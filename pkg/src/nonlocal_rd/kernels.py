"""Radial interaction kernels and their quadrature on a grid.

A kernel is a radial profile ``psi``; with ``scale_index=j`` it becomes the
concentrating family ``phi_j(x, y) = j**(n+2) psi(j |x - y|)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np

from .grid import Grid

log = logging.getLogger(__name__)

Shape = Literal["gaussian", "truncated_gaussian", "bump", "uniform", "constant"]
SHAPES = ("gaussian", "truncated_gaussian", "bump", "uniform", "constant")

DEFAULT_DENSE_BUDGET = 20_000

# unit-sphere surface measure in R^n
_SPHERE = {1: 2.0, 2: 2.0 * math.pi}

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel description.

    ``eps`` is the Gaussian standard deviation, ``cutoff`` the truncation
    radius of ``truncated_gaussian``, ``value`` the level of ``constant``.
    ``distance_weighted`` replaces the cell-measure quadrature by the
    distance-weighted double sum used in some published MATLAB scripts;
    it exists for table comparison only.
    """

    shape: Shape = "gaussian"
    eps: float = 1.0
    cutoff: Optional[float] = None
    value: float = 1.0
    scale_index: Optional[float] = None
    normalization: Literal["raw", "unit_mass"] = "raw"
    distance_weighted: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise KernelError(f"unknown kernel shape {self.shape!r}; expected one of {SHAPES}")
        if self.normalization not in ("raw", "unit_mass"):
            raise KernelError(f"unknown normalization {self.normalization!r}")
        if self.shape in ("gaussian", "truncated_gaussian") and not self.eps > 0:
            raise KernelError(f"eps must be positive, got {self.eps}")
        if self.shape == "truncated_gaussian" and not (self.cutoff and self.cutoff > 0):
            raise KernelError("truncated_gaussian needs a positive cutoff")
        if self.shape == "constant":
            if self.value < 0:
                raise KernelError("constant kernel value must be nonnegative")
            if self.scale_index is not None or self.normalization != "raw":
                raise KernelError("constant kernel cannot be scaled or normalized")
        if self.scale_index is not None and not self.scale_index > 0:
            raise KernelError(f"scale_index must be positive, got {self.scale_index}")

    @property
    def profile_support(self) -> float:
        """Support radius of the unscaled profile ``psi`` (``inf`` if global)."""
        if self.shape in ("bump", "uniform"):
            return 1.0
        if self.shape == "truncated_gaussian":
            return float(self.cutoff)
        return math.inf

    @property
    def support(self) -> float:
        """Support radius of ``phi`` after scaling."""
        j = 1.0 if self.scale_index is None else float(self.scale_index)
        return self.profile_support / j

    @property
    def compact(self) -> bool:
        return math.isfinite(self.profile_support)


def _raw_profile(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if spec.shape == "gaussian":
        return np.exp(-(r * r) / (2.0 * spec.eps**2))
    if spec.shape == "truncated_gaussian":
        return np.where(r < spec.cutoff, np.exp(-(r * r) / (2.0 * spec.eps**2)), 0.0)
    if spec.shape == "bump":
        inside = r < 1.0
        rr = np.where(inside, r, 0.0)
        return np.where(inside, np.exp(-1.0 / (1.0 - rr * rr)), 0.0)
    if spec.shape == "uniform":
        return np.where(r < 1.0, 1.0, 0.0)
    return np.full_like(r, spec.value)


def radial_integral(func, upper: float, rtol: float = 1e-13, max_levels: int = 18) -> float:
    """``int_0^upper func(r) dr`` by composite Gauss-Legendre with panel doubling.

    Raises KernelError if ``upper`` is infinite or successive refinements
    fail to agree to ``rtol``.
    """
    if not math.isfinite(upper):
        raise KernelError("radial integral over an unbounded range does not converge")
    prev = None
    panels = 4
    for _ in range(max_levels):
        edges = np.linspace(0.0, upper, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        r = mid[:, None] + half[:, None] * _GL_X[None, :]
        val = float(np.sum(half[:, None] * _GL_W[None, :] * func(r)))
        if not math.isfinite(val):
            raise KernelError("radial integral is not finite")
        if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
            return val
        prev = val
        panels *= 2
    raise KernelError("radial quadrature did not converge under refinement")


def profile_upper(spec: KernelSpec) -> float:
    """Integration radius for ``psi``; Gaussians are cut where exp underflows."""
    if spec.shape == "gaussian":
        return 40.0 * spec.eps
    return spec.profile_support


@lru_cache(maxsize=None)
def profile_mass(spec: KernelSpec, n: int) -> float:
    """``int_{R^n} psi_raw(|z|) dz``."""
    sigma = _SPHERE[n]
    return sigma * radial_integral(lambda r: r ** (n - 1) * _raw_profile(spec, r), profile_upper(spec))


def _norm_factor(spec: KernelSpec, n: int) -> float:
    if spec.normalization == "raw":
        return 1.0
    return 1.0 / profile_mass(spec, n)


def profile(spec: KernelSpec, r, n: int) -> np.ndarray:
    """The (possibly unit-mass normalised) radial profile ``psi(r)`` in ``R^n``."""
    return _norm_factor(spec, n) * _raw_profile(spec, r)


def kernel_of_distance(spec: KernelSpec, r, n: int) -> np.ndarray:
    """``phi`` as a function of distance, scaled family applied."""
    if spec.scale_index is None:
        return profile(spec, r, n)
    j = float(spec.scale_index)
    return j ** (n + 2) * profile(spec, j * np.asarray(r, dtype=float), n)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate ``phi(x, y)``; symmetric bit-for-bit since only ``|x - y|`` enters."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    diff = x - y
    r = math.sqrt(float(np.sum(diff * diff)))
    return float(kernel_of_distance(spec, r, x.size))


def second_moment(spec: KernelSpec, n: int) -> float:
    """``M = int_{R^n} |z|^2 psi(|z|) dz`` of the unscaled profile."""
    if n not in _SPHERE:
        raise KernelError(f"dimension {n} not supported")
    if not spec.compact and spec.shape != "gaussian":
        raise KernelError(f"{spec.shape} kernel has no finite second moment")
    sigma = _SPHERE[n]
    c = _norm_factor(spec, n)
    return c * sigma * radial_integral(lambda r: r ** (n + 1) * _raw_profile(spec, r), profile_upper(spec))


def effective_diffusivity(spec_or_moment, d: float, n: int) -> float:
    """Limit diffusivity ``D = d M / (2n)`` of the scaled family.

    The first argument is a :class:`KernelSpec` or a precomputed moment ``M``.
    """
    if not d > 0:
        raise ValueError(f"d must be positive, got {d}")
    M = second_moment(spec_or_moment, n) if isinstance(spec_or_moment, KernelSpec) else float(spec_or_moment)
    return d * M / (2 * n)


class DiscreteNonlocalOperator:
    """Quadrature realisation of ``u -> int_Omega phi(x, y) u(y) dy`` on a grid.

    With ``K`` symmetric (``K_pq = phi(x_p, x_q)``) and column weights ``w``
    (the cell measures), the weight matrix is ``W_pq = K_pq w_q`` and the row
    mass ``mu = W 1``. The generator is ``d (W u - mu * u)``.

    ``storage='dense'`` keeps ``K``; ``'matrix_free'`` keeps only the kernel
    values on the finite set of grid offsets inside the support radius.
    """

    def __init__(self, grid: Grid, spec: Optional[KernelSpec], *, kernel_matrix=None,
                 col_weight=None, storage: str = "dense", offsets=None, offset_values=None):
        self.grid = grid
        self.spec = spec
        self.storage = storage
        self.col_weight = np.asarray(grid.cell_weight if col_weight is None else col_weight, dtype=float)
        self.kernel_matrix = kernel_matrix
        self.offsets = offsets
        self.offset_values = offset_values
        if storage == "dense":
            if kernel_matrix is None:
                raise KernelError("dense storage needs a kernel matrix")
            self.kernel_matrix = np.asarray(kernel_matrix, dtype=float)
        elif storage != "matrix_free":
            raise KernelError(f"unknown storage {storage!r}")
        self.row_mass = self.matvec(np.ones(self.n_nodes))
        self.row_mass.setflags(write=False)
        self.mu_max = float(self.row_mass.max())

    @property
    def n_nodes(self) -> int:
        return self.col_weight.size

    @classmethod
    def from_matrix(cls, grid: Grid, kernel_matrix, col_weight=None) -> "DiscreteNonlocalOperator":
        """Wrap an explicit symmetric kernel matrix (used for hand-built cases)."""
        K = np.asarray(kernel_matrix, dtype=float)
        if col_weight is None:
            col_weight = grid.cell_weight
        return cls(grid, None, kernel_matrix=K, col_weight=col_weight, storage="dense")

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """``W u`` for a nodal vector, or row-wise for an ``(m, N)`` block."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n_nodes:
            raise ValueError(f"field has {u.shape[-1]} nodes, operator has {self.n_nodes}")
        wu = u * self.col_weight
        if self.storage == "dense":
            # K symmetric: (K (w u))^T = (w u)^T K
            return wu @ self.kernel_matrix
        return self._stencil_apply(wu)

    def _stencil_apply(self, wu: np.ndarray) -> np.ndarray:
        lead = wu.shape[:-1]
        src = self.grid.reshape(wu)
        out = np.zeros_like(src)
        dim = self.grid.dim
        for off, val in zip(self.offsets, self.offset_values):
            # out[p] += val * src[p + off] where p + off stays on the grid
            dst_sl, src_sl = [], []
            for axis in range(dim):
                # grid arrays are (..., ny, nx): axis 0 (x) is the last array axis
                o = off[axis]
                n = self.grid.counts[axis]
                if o >= 0:
                    dst_sl.append(slice(0, n - o))
                    src_sl.append(slice(o, n))
                else:
                    dst_sl.append(slice(-o, n))
                    src_sl.append(slice(0, n + o))
            dst = (Ellipsis,) + tuple(reversed(dst_sl))
            sl = (Ellipsis,) + tuple(reversed(src_sl))
            out[dst] += val * src[sl]
        return out.reshape(lead + (self.n_nodes,))

    @property
    def weights(self) -> np.ndarray:
        """Materialised ``W`` (``N x N``); intended for small grids and tests."""
        if self.storage == "dense":
            return self.kernel_matrix * self.col_weight[None, :]
        return np.stack([self.matvec(e) for e in np.eye(self.n_nodes)], axis=1)

    def row_nnz(self) -> np.ndarray:
        """Number of nonzero weights per row."""
        if self.storage == "dense":
            return np.count_nonzero(self.kernel_matrix * self.col_weight[None, :], axis=1)
        counts = np.zeros(self.grid.shape, dtype=int)
        for off, val in zip(self.offsets, self.offset_values):
            if val == 0.0:
                continue
            ones = np.zeros(self.grid.shape, dtype=int)
            sl = []
            for axis in range(self.grid.dim):
                o, n = off[axis], self.grid.counts[axis]
                sl.append(slice(0, n - o) if o >= 0 else slice(-o, n))
            ones[tuple(reversed(sl))] = 1
            counts += ones
        return counts.ravel()


def _offset_table(grid: Grid, spec: KernelSpec):
    radius = spec.support
    n = grid.dim
    ranges = [
        range(-min(c - 1, int(math.ceil(radius / h))), min(c - 1, int(math.ceil(radius / h))) + 1)
        for h, c in zip(grid.spacing, grid.counts)
    ]
    if n == 1:
        offs = [(a,) for a in ranges[0]]
    else:
        offs = [(a, b) for b in ranges[1] for a in ranges[0]]
    offs = np.array(offs, dtype=int)
    disp = offs * np.array(grid.spacing)[None, :]
    r = np.sqrt(np.sum(disp * disp, axis=1))
    vals = kernel_of_distance(spec, r, n)
    keep = vals != 0.0
    return [tuple(int(v) for v in o) for o in offs[keep]], vals[keep], r[keep]


def assemble_operator(grid: Grid, spec: KernelSpec, storage: str = "auto",
                      dense_budget: int = DEFAULT_DENSE_BUDGET) -> DiscreteNonlocalOperator:
    """Assemble the discrete nonlocal operator for ``spec`` on ``grid``.

    ``storage='auto'`` uses the matrix-free offset stencil for compact kernels
    whose stencil is small relative to the grid, dense storage otherwise.
    """
    N = grid.n_nodes
    if storage == "auto":
        storage = "dense"
        if spec.compact:
            n_offsets = len(_offset_table(grid, spec)[0])
            if n_offsets * 4 <= N or N > dense_budget:
                storage = "matrix_free"
    if storage == "matrix_free":
        if not spec.compact:
            raise KernelError("matrix-free assembly requires a compactly supported kernel")
        offs, vals, dist = _offset_table(grid, spec)
        col_weight = None
        if spec.distance_weighted:
            vals = vals * dist
            col_weight = np.ones(N)
        op = DiscreteNonlocalOperator(grid, spec, storage="matrix_free", offsets=offs,
                                      offset_values=vals, col_weight=col_weight)
    elif storage == "dense":
        if N > dense_budget:
            raise KernelError(
                f"dense assembly of {N} nodes exceeds the node budget {dense_budget}; "
                "use a compact kernel with matrix_free storage or raise the budget"
            )
        X = grid.nodes
        sq = np.zeros((N, N))
        for axis in range(grid.dim):
            diff = X[:, axis][:, None] - X[:, axis][None, :]
            sq += diff * diff
        dist = np.sqrt(sq, out=sq)
        K = kernel_of_distance(spec, dist, grid.dim)
        col_weight = None
        if spec.distance_weighted:
            K = K * dist
            col_weight = np.ones(N)
        del dist, sq
        op = DiscreteNonlocalOperator(grid, spec, kernel_matrix=K, col_weight=col_weight, storage="dense")
    else:
        raise KernelError(f"unknown storage {storage!r}")
    log.debug("assembled %s operator (%s) on %d nodes, mu_max=%g", spec.shape, op.storage, N, op.mu_max)
    return op
