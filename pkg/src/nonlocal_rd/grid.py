"""Uniform node-centred grids on rectangles with trapezoid quadrature."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import atomic_write_text


@dataclass(frozen=True)
class Grid:
    """Node-centred rectangular grid including boundary nodes.

    Nodes are flattened row-major with x fastest: node ``p = i + nx * j``
    sits at ``(x_i, y_j)``.
    """

    dim: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False)
    axes: tuple[np.ndarray, ...] = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)
    cell_weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        spacing = tuple(e / (c - 1) for e, c in zip(self.extents, self.counts))
        axes = tuple(np.linspace(0.0, e, c) for e, c in zip(self.extents, self.counts))
        weights_1d = []
        for h, c in zip(spacing, self.counts):
            w = np.full(c, h)
            w[0] = w[-1] = 0.5 * h
            weights_1d.append(w)
        if self.dim == 1:
            nodes = axes[0][:, None].copy()
            weight = weights_1d[0]
        else:
            X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
            nodes = np.column_stack([X.ravel(), Y.ravel()])
            weight = np.outer(weights_1d[1], weights_1d[0]).ravel()
        for arr in (*axes, nodes, weight):
            arr.setflags(write=False)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cell_weight", weight)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a component reshaped to the grid (``(ny, nx)`` in 2D)."""
        return tuple(reversed(self.counts))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def index(self, *ij: int) -> int:
        """Flat node index from axis indices ``(i[, j])``."""
        if len(ij) != self.dim:
            raise ValueError(f"expected {self.dim} indices, got {len(ij)}")
        for k, c in zip(ij, self.counts):
            if not 0 <= k < c:
                raise IndexError(f"axis index {k} out of range [0, {c})")
        return ij[0] if self.dim == 1 else ij[0] + self.counts[0] * ij[1]

    def unravel(self, p: int) -> tuple[int, ...]:
        if not 0 <= p < self.n_nodes:
            raise IndexError(f"node {p} out of range")
        if self.dim == 1:
            return (p,)
        return (p % self.counts[0], p // self.counts[0])

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View a flat nodal vector (or ``m x N`` block) on the grid shape."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.shape)

    def same_as(self, other: "Grid") -> bool:
        return (
            self is other
            or (self.dim == other.dim and self.extents == other.extents and self.counts == other.counts)
        )


def build_grid(dim: int, extents: float | Sequence[float], counts: int | Sequence[int]) -> Grid:
    """Build a uniform grid on ``(0, L_1) x ... x (0, L_dim)``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    extents : float or sequence of float
        Side length per axis.
    counts : int or sequence of int
        Number of nodes per axis (boundary nodes included), at least 3.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extents = (extents,) if np.isscalar(extents) else tuple(extents)
    counts = (counts,) if np.isscalar(counts) else tuple(counts)
    if len(extents) != dim or len(counts) != dim:
        raise ValueError(f"need {dim} extents and counts, got {len(extents)} and {len(counts)}")
    extents = tuple(float(e) for e in extents)
    if any(not np.isfinite(e) or e <= 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(int(c) != c for c in counts):
        raise ValueError(f"counts must be integers, got {counts}")
    counts = tuple(int(c) for c in counts)
    if any(c < 3 for c in counts):
        raise ValueError(f"need at least 3 nodes per axis, got {counts}")
    return Grid(dim, extents, counts)


@dataclass
class Field:
    """``m`` nodal components on a grid; ``values`` has shape ``(m, N)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n_nodes:
            raise ValueError(
                f"field has {self.values.shape[1]} nodes, grid has {self.grid.n_nodes}"
            )

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


def integrate_field(field: Field, component: int) -> float:
    """Trapezoid quadrature of one component over the domain."""
    if not 0 <= component < field.m:
        raise IndexError(f"component {component} out of range for m={field.m}")
    return float(field.grid.cell_weight @ field.values[component])


def snapshot_csv(field: Field) -> str:
    """Render a field as CSV: ``x[,y],u_1,...,u_m`` with one row per node."""
    grid = field.grid
    coords = ["x", "y"][: grid.dim]
    header = ",".join(coords + [f"u_{i + 1}" for i in range(field.m)])
    block = np.column_stack([grid.nodes, field.values.T])
    rows = "\n".join(",".join(repr(float(v)) for v in row) for row in block)
    return header + "\n" + rows + "\n"


def write_snapshot_csv(field: Field, path) -> None:
    atomic_write_text(path, snapshot_csv(field))
