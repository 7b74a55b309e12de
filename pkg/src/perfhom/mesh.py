"""Uniform simplicial grids on the unit box.

Piecewise-linear elements on the standard diagonal split (2 triangles per
square, 6 Kuhn tetrahedra per cube).  Gradients are element-wise constants,
so p-Dirichlet energies and their derivatives are exact per element; linear
and penalty terms use the lumped (vertex) rule, which is exact for P1
integrands.
"""

from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np
from scipy import sparse

from .errors import DomainError, ResolutionError
from .field import PerforationSpec

PHGF_MAGIC = b"PHGF1"


class Grid:
    """Structured simplicial grid over (0,1)^n with N subdivisions per side."""

    def __init__(self, n: int, N: int):
        if n not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {n}")
        if N < 2:
            raise DomainError(f"need N >= 2 subdivisions, got {N}")
        self.n = n
        self.N = N
        self.h = 1.0 / N
        axes = [np.linspace(0.0, 1.0, N + 1)] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=1)
        self.num_nodes = len(self.nodes)
        self.boundary_mask = np.any(
            (self.nodes <= 0.0) | (self.nodes >= 1.0), axis=1
        )
        self.interior_mask = ~self.boundary_mask
        self._build_elements()
        self._build_gradients()
        # Lumped mass: vol/(n+1) per element vertex, exact for P1 integrands.
        self.lumped_mass = np.zeros(self.num_nodes)
        np.add.at(
            self.lumped_mass,
            self.elements.ravel(),
            np.repeat(self.volumes / (self.n + 1), self.n + 1),
        )
        self._grad_op = None

    # -- construction ---------------------------------------------------

    def node_index(self, multi) -> int:
        """Flat node index from per-axis integer indices."""
        idx = 0
        for m in multi:
            idx = idx * (self.N + 1) + int(m)
        return idx

    def node_index_at(self, point) -> int:
        """Index of the grid node at ``point``; DomainError if off-grid."""
        multi = np.asarray(point, dtype=float) * self.N
        rounded = np.rint(multi)
        if np.any(np.abs(multi - rounded) > 1e-9 * self.N):
            raise DomainError(f"point {tuple(point)} is not a grid node at N={self.N}")
        return self.node_index(rounded.astype(int))

    def nearest_node(self, point) -> int:
        multi = np.clip(np.rint(np.asarray(point, dtype=float) * self.N), 0, self.N)
        return self.node_index(multi.astype(int))

    def _build_elements(self):
        N, n = self.N, self.n
        corner_axes = [np.arange(N)] * n
        corners = np.stack(
            [m.ravel() for m in np.meshgrid(*corner_axes, indexing="ij")], axis=1
        )
        strides = np.array([(N + 1) ** (n - 1 - d) for d in range(n)])
        base = corners @ strides  # flat index of each cell's low corner
        if n == 2:
            # split each square along the main diagonal
            sx, sy = strides
            a = base
            b = base + sx
            c = base + sy
            d = base + sx + sy
            tris = np.stack(
                [np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)], axis=1
            )
            self.elements = tris.reshape(-1, 3)
            self.elem_type = np.tile(np.array([0, 1]), len(base))
            self._type_offsets = [
                np.array([[0, 0], [1, 0], [1, 1]]),
                np.array([[0, 0], [1, 1], [0, 1]]),
            ]
        else:
            # Kuhn split: one tet per permutation of the axes
            perms = list(itertools.permutations(range(3)))
            offsets = []
            for perm in perms:
                verts = [np.zeros(3, dtype=int)]
                for axis in perm:
                    nxt = verts[-1].copy()
                    nxt[axis] = 1
                    verts.append(nxt)
                offsets.append(np.array(verts))
            self._type_offsets = offsets
            tets = []
            for verts in offsets:
                flat = verts @ strides
                tets.append(base[:, None] + flat[None, :])
            # interleave per cell so element order is cell-major
            self.elements = np.stack(tets, axis=1).reshape(-1, 4)
            self.elem_type = np.tile(np.arange(len(offsets)), len(base))
        self.num_elements = len(self.elements)
        vol = self.h**n / (1 if n == 1 else (2 if n == 2 else 6))
        self.volumes = np.full(self.num_elements, vol)

    def _build_gradients(self):
        """Per-type P1 gradient coefficients: grad u = sum_i B[i] u_i."""
        n = self.n
        Btypes = []
        for offsets in self._type_offsets:
            verts = offsets.astype(float) * self.h
            V = np.hstack([np.ones((n + 1, 1)), verts])
            C = np.linalg.inv(V)  # rows: [const, d/dx1, ..., d/dxn]
            Btypes.append(C[1:, :].T.copy())  # (n+1, n)
        self._Btypes = np.stack(Btypes)  # (T, n+1, n)

    @property
    def grad_operator(self) -> sparse.csr_matrix:
        """Sparse map nodal values -> stacked element gradients (num_el*n,)."""
        if self._grad_op is None:
            n = self.n
            B = self._Btypes[self.elem_type]  # (num_el, n+1, n)
            rows = (
                np.arange(self.num_elements)[:, None, None] * n
                + np.arange(n)[None, None, :]
            )
            rows = np.broadcast_to(rows, (self.num_elements, n + 1, n)).ravel()
            cols = np.broadcast_to(
                self.elements[:, :, None], (self.num_elements, n + 1, n)
            ).ravel()
            data = np.transpose(B, (0, 1, 2)).ravel()
            self._grad_op = sparse.csr_matrix(
                (data, (rows, cols)), shape=(self.num_elements * n, self.num_nodes)
            )
        return self._grad_op

    # -- calculus -------------------------------------------------------

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Element-wise constant gradient of the P1 interpolant, (num_el, n)."""
        vals = np.asarray(values)
        B = self._Btypes[self.elem_type]
        return np.einsum("eld,el->ed", B, vals[self.elements])

    def element_means(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.elements].mean(axis=1)

    def integrate_nodal(self, nodal_values) -> float:
        """Vertex-rule integral of a nodal field; exact for P1 integrands."""
        return float(np.dot(self.lumped_mass, np.asarray(nodal_values)))

    def integrate_elements(self, elem_values) -> float:
        return float(np.dot(self.volumes, np.asarray(elem_values)))

    def lp_norm(self, values, p: float) -> float:
        return float(self.integrate_nodal(np.abs(values) ** p) ** (1.0 / p))

    def w1p_seminorm(self, values, p: float) -> float:
        g = self.gradient(values)
        mag = np.sqrt(np.sum(g * g, axis=1))
        return float(self.integrate_elements(mag**p) ** (1.0 / p))

    def interpolate(self, fn) -> "GridFunction":
        try:
            vals = np.asarray(fn(*self.nodes.T), dtype=float)
            if vals.shape != (self.num_nodes,):
                raise ValueError
        except Exception:
            vals = np.array([fn(*x) for x in self.nodes], dtype=float)
        return GridFunction(self, vals)

    def zero(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.num_nodes))


@dataclass
class GridFunction:
    """Nodal scalar field on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.num_nodes,):
            raise DomainError(
                f"expected {self.grid.num_nodes} nodal values, got {self.values.shape}"
            )

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def norms(self, p: float) -> tuple:
        """(L^p norm, W^{1,p} seminorm)."""
        return self.grid.lp_norm(self.values, p), self.grid.w1p_seminorm(self.values, p)


def norms(gf: GridFunction, p: float) -> tuple:
    return gf.norms(p)


def integrate(grid: Grid, nodal=None, element=None) -> float:
    """Integral over the box of a nodal field, an element field, or both."""
    total = 0.0
    if nodal is not None:
        total += grid.integrate_nodal(nodal)
    if element is not None:
        total += grid.integrate_elements(element)
    return total


class HoleStrategy(Enum):
    """How hole balls become node sets.

    resolved: all nodes inside each ball (radii must be mesh-resolved);
    nearest_node: the single closest node, Dirichlet value 1;
    calibrated: the single closest node, but with the Dirichlet value
    scaled so the discrete one-node capacity matches the prescribed
    gamma eps^n (see the corrector module) — the only strategy that
    reproduces capacity effects when radii are far below the mesh size.
    """

    RESOLVED = "resolved"
    NEAREST_NODE = "nearest_node"
    CALIBRATED = "calibrated"


@dataclass
class HoleNodeSets:
    """Discrete carrier of the perforation: node indices per hole."""

    strategy: HoleStrategy
    node_sets: list  # list of int arrays
    perforation: PerforationSpec
    counts: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.array([len(s) for s in self.node_sets])

    def all_nodes(self) -> np.ndarray:
        if not self.node_sets:
            return np.array([], dtype=int)
        return np.unique(np.concatenate(self.node_sets))


def realize_holes(
    grid: Grid, perforation: PerforationSpec, strategy: HoleStrategy
) -> HoleNodeSets:
    """Turn hole balls into node sets.

    resolved: all nodes within each hole radius (every radius must be >= h);
    nearest_node / calibrated: exactly the node closest to each center.
    """
    if isinstance(strategy, str):
        strategy = HoleStrategy(strategy)
    node_sets = []
    if strategy is HoleStrategy.RESOLVED:
        too_small = perforation.radii < grid.h - 1e-12
        if np.any(too_small):
            r_min = float(perforation.radii[too_small].min())
            min_N = int(np.ceil(1.0 / r_min))
            raise ResolutionError(
                f"{int(too_small.sum())} hole(s) have radius < h = {grid.h:.3g}; "
                f"need N >= {min_N} to resolve, or use the nearest_node strategy",
                min_subdivisions=min_N,
            )
        for center, radius in zip(perforation.centers, perforation.radii):
            d = np.linalg.norm(grid.nodes - center[None, :], axis=1)
            inside = np.flatnonzero(d <= radius + 1e-12)
            node_sets.append(inside)
    else:
        for center in perforation.centers:
            node_sets.append(np.array([grid.nearest_node(center)]))
    return HoleNodeSets(strategy=strategy, node_sets=node_sets, perforation=perforation)


# -- grid-function I/O ---------------------------------------------------


def write_phgf(gf: GridFunction, path) -> None:
    """Binary snapshot: magic 'PHGF1', uint32 n, N, count (LE), float64 payload."""
    with open(path, "wb") as fh:
        fh.write(PHGF_MAGIC)
        fh.write(struct.pack("<III", gf.grid.n, gf.grid.N, gf.grid.num_nodes))
        fh.write(gf.values.astype("<f8").tobytes())


def read_phgf(path, grid: Grid = None) -> GridFunction:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != PHGF_MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}")
        n, N, count = struct.unpack("<III", fh.read(12))
        payload = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if grid is None:
        grid = Grid(n, N)
    elif (grid.n, grid.N) != (n, N):
        raise DomainError(f"{path}: grid mismatch, file has n={n}, N={N}")
    if len(payload) != grid.num_nodes:
        raise DomainError(f"{path}: truncated payload")
    return GridFunction(grid, payload.copy())


def export_gridfunction_csv(gf: GridFunction, path) -> None:
    """CSV with node coordinates and value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{d + 1}" for d in range(gf.grid.n)] + ["value"])
        for coords, v in zip(gf.grid.nodes, gf.values):
            writer.writerow([*(repr(float(c)) for c in coords), repr(float(v))])


def restrict_to_coarse(fine: GridFunction, coarse: Grid) -> GridFunction:
    """Nodal restriction; fine N must be a multiple of coarse N."""
    ratio, rem = divmod(fine.grid.N, coarse.N)
    if rem != 0 or fine.grid.n != coarse.n:
        raise DomainError(
            f"cannot restrict N={fine.grid.N} onto N={coarse.N}: not nested"
        )
    n, Nc, Nf = coarse.n, coarse.N, fine.grid.N
    axes = [np.arange(Nc + 1) * ratio] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    fine_multi = np.stack([m.ravel() for m in mesh], axis=1)
    strides = np.array([(Nf + 1) ** (n - 1 - d) for d in range(n)])
    return GridFunction(coarse, fine.values[fine_multi @ strides])
