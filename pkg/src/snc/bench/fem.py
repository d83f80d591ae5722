"""P1 finite-element assembly for -lap(u) = 4(x^4 + y^4) on [-3, 3]^2, u = 0 on the boundary.

Element stiffness entries and load entries are built symbolically in the
vertex coordinates (x1, y1, x2, y2, x3, y3) and evaluated for all elements
at once with a vectorized batch function. The load uses the 3-point
interior rule with barycentric points (2/3, 1/6, 1/6) and its permutations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..codegen import interpret, linearize
from ..expr import Expr, SymbolTable, num, symbols
from .common import Evaluator

COORDS = symbols("x1 y1 x2 y2 x3 y3")
HALF_WIDTH = 3.0
# local (i, j) pairs of the upper triangle of the 3x3 element matrix
K_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_QUAD = ((2 / 3, 1 / 6, 1 / 6), (1 / 6, 2 / 3, 1 / 6), (1 / 6, 1 / 6, 2 / 3))


def source(x: Expr, y: Expr) -> Expr:
    return 4 * (x ** 4 + y ** 4)


@lru_cache(maxsize=1)
def element_exprs() -> tuple[Expr, ...]:
    """Six stiffness entries then three load entries of one triangle."""
    x1, y1, x2, y2, x3, y3 = COORDS
    xs, ys = (x1, x2, x3), (y1, y2, y3)
    det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)  # twice the signed area
    b = (y2 - y3, y3 - y1, y1 - y2)
    c = (x3 - x2, x1 - x3, x2 - x1)
    K = [(b[i] * b[j] + c[i] * c[j]) / (2 * det) for i, j in K_PAIRS]
    loads = []
    for i in range(3):
        terms = []
        for lam in _QUAD:
            px = sum((num(lam[k]) * xs[k] for k in range(3)), num(0))
            py = sum((num(lam[k]) * ys[k] for k in range(3)), num(0))
            terms.append(source(px, py) * num(lam[i]))
        # area/3 per point, area = det/2
        loads.append(det / 6 * sum(terms, num(0)))
    return tuple(K + loads)


@dataclass
class Mesh:
    nodes: np.ndarray  # (n_nodes, 2)
    triangles: np.ndarray  # (n_tri, 3), counter-clockwise
    boundary: np.ndarray  # bool per node

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)


def structured_mesh(n: int, jitter: float = 0.0, seed: int = 0) -> Mesh:
    """n x n squares on [-3, 3]^2, each split along its lower-left/upper-right diagonal.

    ``jitter`` (at most 0.2, in cell sizes) moves interior vertices by a
    seeded uniform offset; the bound keeps every triangle positively oriented.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= jitter <= 0.2:
        raise ValueError("jitter must lie in [0, 0.2]")
    h = 2 * HALF_WIDTH / n
    g = np.linspace(-HALF_WIDTH, HALF_WIDTH, n + 1)
    gx, gy = np.meshgrid(g, g, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[row j, col i]
    boundary = np.zeros((n + 1, n + 1), dtype=bool)
    boundary[0, :] = boundary[-1, :] = boundary[:, 0] = boundary[:, -1] = True
    boundary = boundary.ravel()
    if jitter:
        rng = np.random.default_rng(seed)
        off = rng.uniform(-jitter * h, jitter * h, size=nodes.shape)
        nodes = nodes + np.where(boundary[:, None], 0.0, off)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return Mesh(nodes, tris, boundary)


@dataclass
class FemSystem:
    mesh: Mesh
    K_full: sp.csr_matrix
    b_full: np.ndarray
    K: sp.csr_matrix  # interior rows and columns only
    b: np.ndarray
    element_values: np.ndarray  # (9, n_tri)


def element_coords(mesh: Mesh) -> np.ndarray:
    """Arguments of the element functions, shaped (6, n_tri)."""
    v = mesh.nodes[mesh.triangles]  # (n_tri, 3, 2)
    return np.ascontiguousarray(v.reshape(len(mesh.triangles), 6).T)


def evaluate_elements(mesh: Mesh, mode: str = "jit", remote: str | None = None) -> np.ndarray:
    coords = element_coords(mesh)
    exprs = element_exprs()
    if mode == "interp":
        # straight loop over elements through the scalar reference interpreter
        table = SymbolTable(COORDS)
        irs = [linearize(e, table) for e in exprs]
        out = np.empty((len(exprs), coords.shape[1]))
        for t in range(coords.shape[1]):
            col = coords[:, t].tolist()
            for k, ir in enumerate(irs):
                out[k, t] = interpret(ir, col)
        return out
    ev = Evaluator(COORDS, exprs, vec_len=coords.shape[1], mode=mode, remote=remote)
    try:
        return ev(coords)
    finally:
        ev.close()


def fem_assemble(n: int = 8, mode: str = "jit", remote: str | None = None, jitter: float = 0.0,
                 seed: int = 0) -> FemSystem:
    mesh = structured_mesh(n, jitter, seed)
    vals = evaluate_elements(mesh, mode, remote)
    tri = mesh.triangles
    rows, cols, data = [], [], []
    for k, (i, j) in enumerate(K_PAIRS):
        rows.append(tri[:, i])
        cols.append(tri[:, j])
        data.append(vals[k])
        if i != j:
            rows.append(tri[:, j])
            cols.append(tri[:, i])
            data.append(vals[k])
    n_nodes = len(mesh.nodes)
    K_full = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n_nodes, n_nodes)).tocsr()
    b_full = np.bincount(tri.ravel(), weights=vals[6:9].T.ravel(), minlength=n_nodes)
    inner = mesh.interior
    K = K_full[inner][:, inner].tocsr()
    return FemSystem(mesh, K_full, b_full, K, b_full[inner], vals)
