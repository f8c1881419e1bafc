"""Composite Gauss-Legendre quadrature helpers.

Every oscillatory integral in the package runs through these routines so that
resolution policy (points per oscillation, panel grading) lives in one place.
"""

from __future__ import annotations

import numpy as np

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the `order`-point Gauss-Legendre rule on [-1, 1]."""
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def panel_nodes(edges: np.ndarray, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for the composite rule on the given panel edges.

    `edges` is a strictly increasing 1-d array; one GL rule is placed on each
    consecutive pair.  Returns flat arrays (nodes, weights) with
    sum(weights) = edges[-1] - edges[0].
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two panel edges")
    x, w = gauss_legendre(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def uniform_panel_nodes(a: float, b: float, n_panels: int, order: int = 4):
    """Composite GL nodes/weights on [a, b] with `n_panels` equal panels."""
    edges = np.linspace(a, b, n_panels + 1)
    return panel_nodes(edges, order)


def integrate(f, a: float, b: float, n_panels: int, order: int = 4) -> float:
    """Integral of a vectorized callable on [a, b] by composite GL."""
    nodes, weights = uniform_panel_nodes(a, b, n_panels, order)
    return float(np.dot(weights, f(nodes)))


def integrate_on_edges(f, edges: np.ndarray, order: int = 4) -> float:
    """Integral of a vectorized callable on panels given by `edges`."""
    nodes, weights = panel_nodes(edges, order)
    return float(np.dot(weights, f(nodes)))


def tensor_nodes(axes: list[tuple[np.ndarray, np.ndarray]]):
    """Tensor product of per-axis (nodes, weights) pairs.

    Returns (points, weights) with points of shape (M, d) in row-major axis
    order and weights the product weights.
    """
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    weights = np.ones(points.shape[0])
    for wg in wgrids:
        weights = weights * wg.ravel()
    return points, weights


def cell_nodes(dimension: int, n_panels: int = 32, order: int = 4,
               periods=None):
    """Composite GL nodes/weights over the unit cell [0, P1] x ... x [0, Pd]."""
    if periods is None:
        periods = np.ones(dimension)
    axes = [uniform_panel_nodes(0.0, float(periods[i]), n_panels, order)
            for i in range(dimension)]
    if dimension == 1:
        return axes[0][0], axes[0][1]
    return tensor_nodes(axes)


def merge_edges(lo: float, hi: float, *edge_sets, min_edges: int = 2) -> np.ndarray:
    """Union of edge sets clipped to [lo, hi], always containing lo and hi."""
    pieces = [np.array([lo, hi])]
    for es in edge_sets:
        es = np.asarray(es, dtype=float)
        pieces.append(es[(es > lo) & (es < hi)])
    edges = np.unique(np.concatenate(pieces))
    if edges.size < min_edges:
        edges = np.linspace(lo, hi, min_edges)
    return edges
