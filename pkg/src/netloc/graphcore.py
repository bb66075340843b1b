"""Graph construction from range measurements.

Hard thresholding produces a fixed symmetric graph (GCN/MLP path);
the soft threshold is the differentiable surrogate that lets a
per-node cutoff be learned by gradient descent. Soft adjacencies are
in general NOT symmetric (each row uses its own threshold), so nothing
downstream may assume symmetry for learned graphs.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericError
from . import numcore as nc

SPARSE_DENSITY_CUTOFF = 0.25


@dataclass
class GraphStructure:
    """Adjacency bundle. mode="hard": numpy/CSR arrays, Â included.

    mode="soft": adjacency / degree / masked_distances are numcore
    Tensors wired into a DiffGraph, norm_adjacency is None (attention
    layers do their own normalization), thresholds holds the rescaled
    per-node cutoffs.
    """

    adjacency: object
    degree: object
    norm_adjacency: Optional[object]
    masked_distances: object
    mode: str = "hard"
    lonely_nodes: Optional[list] = None  # self-loop-only nodes (hard mode)
    thresholds: Optional[object] = None  # soft mode: Nx1 tensor of cutoffs


@dataclass
class SoftThresholdParams:
    raw_thresholds: np.ndarray  # unconstrained, N x 1
    gamma: float = 100.0  # slope of the step surrogate
    max_range: float = 1.0  # rescale ceiling for the cutoffs, meters

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.max_range <= 0:
            raise ConfigError(f"max_range must be > 0, got {self.max_range}")
        self.raw_thresholds = np.asarray(self.raw_thresholds, dtype=np.float64).reshape(-1, 1)


def hard_threshold(measurements, threshold):
    """Keep edges with measured distance <= threshold.

    The diagonal survives any threshold >= 0 (measured self-distance is
    zero), so the result is the self-loop-augmented adjacency and every
    degree is >= 1. Nodes whose only edge is that self-loop are listed
    in lonely_nodes for diagnostics.
    """
    if threshold < 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    x = measurements.x
    adj = (x <= threshold).astype(np.float64)
    degree = adj.sum(axis=1)
    lonely = np.flatnonzero(degree <= 1.0).tolist()
    xhat = adj * x
    density = adj.mean()
    if density < SPARSE_DENSITY_CUTOFF:
        adj_store = sp.csr_matrix(adj)
        norm = normalize_adjacency(adj_store, degree)
        xhat = sp.csr_matrix(xhat)
    else:
        adj_store = adj
        norm = normalize_adjacency(adj, degree)
    return GraphStructure(
        adjacency=adj_store,
        degree=degree,
        norm_adjacency=norm,
        masked_distances=xhat,
        mode="hard",
        lonely_nodes=lonely,
    )


def normalize_adjacency(adj, degree):
    """D^{-1/2} A D^{-1/2} for dense or CSR adjacency."""
    degree = np.asarray(degree, dtype=np.float64).ravel()
    if np.any(degree <= 0):
        node = int(np.flatnonzero(degree <= 0)[0])
        raise NumericError(f"cannot normalize: node {node} has degree {degree[node]}")
    dinv = 1.0 / np.sqrt(degree)
    if sp.issparse(adj):
        return sp.csr_matrix(adj.multiply(dinv[:, None]).multiply(dinv[None, :]))
    return adj * dinv[:, None] * dinv[None, :]


def approx_step(value, gamma):
    """Smooth step surrogate max(0, tanh(gamma * v)).

    Approaches the unit step as gamma grows; differentiable everywhere
    with derivative 0 at the ReLU kink. Works on scalars and arrays.
    """
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    return np.maximum(0.0, np.tanh(gamma * np.asarray(value, dtype=np.float64)))


def soft_threshold(measurements, params, graph, param_name="raw_thresholds"):
    """Differentiable thresholding with a learnable per-node cutoff.

    cutoff_i = max_range * sigmoid(raw_i)
    a_ij     = relu(-tanh(gamma * (x_ij - cutoff_i)))
    xhat_ij  = x_ij * a_ij

    a_ij is 1 well below the cutoff, exactly 0 at and above it, and
    smooth in between; gradients reach the raw threshold vector through
    entries inside the transition band. Rows own their cutoffs, so the
    result is asymmetric.
    """
    n = measurements.n
    if params.raw_thresholds.shape != (n, 1):
        raise ConfigError(
            f"raw_thresholds shape {params.raw_thresholds.shape} != ({n}, 1)"
        )
    x = graph.constant(measurements.x)
    raw = graph.parameter(param_name, params.raw_thresholds)
    cutoffs = nc.scalar_mul(nc.sigmoid(raw), params.max_range)
    margin = nc.subtract(x, cutoffs)  # broadcasts cutoffs across columns
    adj = nc.relu(nc.scalar_mul(nc.tanh(nc.scalar_mul(margin, params.gamma)), -1.0))
    xhat = nc.hadamard(x, adj)
    ones = graph.constant(np.ones((n, 1)))
    degree = nc.matmul(adj, ones)
    return GraphStructure(
        adjacency=adj,
        degree=degree,
        norm_adjacency=None,
        masked_distances=xhat,
        mode="soft",
        thresholds=cutoffs,
    )


def export_edge_list_csv(path, adjacency):
    """Edge-list dump `i,j,weight` of the nonzero adjacency entries."""
    if sp.issparse(adjacency):
        coo = adjacency.tocoo()
        rows, cols, vals = coo.row, coo.col, coo.data
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    else:
        rows, cols = np.nonzero(adjacency)
        vals = np.asarray(adjacency)[rows, cols]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j", "weight"])
        for i, j, w in zip(rows, cols, vals):
            out.writerow([int(i), int(j), repr(float(w))])
