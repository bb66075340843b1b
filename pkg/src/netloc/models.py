"""Model zoo: MLP baseline, GCN, and the two attention models.

The attention models share one structure: an adjacency-learning stage
(per-node learned cutoff, or attention-scored per-edge cutoffs inside a
coarse neighborhood) produces a soft adjacency and masked distance
matrix, which feed a stack of multi-head graph attention layers.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import numcore as nc
from .errors import ConfigError, ShapeError
from .graphcore import GraphStructure, SoftThresholdParams, hard_threshold, soft_threshold

MODEL_KINDS = ("mlp", "gcn", "agnn1", "agnn2")


@dataclass
class ModelConfig:
    kind: str = "gcn"
    hidden: int = 2000  # hidden width for mlp/gcn
    heads: int = 4  # attention heads per layer
    head_dim: int = 256  # per-head hidden width
    att_dim: int = 64  # width of the pair-score network
    score_dim: int = 64  # width of the edge-cutoff score network (agnn2)
    gamma: float = 100.0  # slope of the soft step
    threshold: float = 1.2  # hard cutoff for mlp/gcn graphs
    coarse_threshold: float = 4.0  # first-stage cutoff for agnn2
    max_range: Optional[float] = None  # cutoff ceiling; None -> max measured
    leaky_slope: float = 0.2
    out_dim: int = 2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        for name in ("hidden", "head_dim", "att_dim", "score_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.coarse_threshold <= 0:
            raise ConfigError("coarse_threshold must be > 0")


@dataclass
class GcnParams:
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class MgalLayerParams:
    """Per-head weights of one graph attention layer (lists of length heads)."""

    w: list
    w_att: list
    v_att: list

    @property
    def heads(self):
        return len(self.w)


@dataclass
class Alm2Params:
    score_weight: np.ndarray  # N x score_dim
    score_vec: np.ndarray  # score_dim x 1
    coarse_threshold: float
    gamma: float

    def __post_init__(self):
        if self.score_weight.shape[1] < 1:
            raise ConfigError("score_dim must be >= 1")
        if self.coarse_threshold <= 0:
            raise ConfigError("coarse_threshold must be > 0")


@dataclass
class NeighborSets:
    coarse: list  # per-node index arrays (self included)
    fine: list  # per-node (index array, weight array), fine subset of coarse


@dataclass
class ForwardOutput:
    predictions: object  # N x 2 tensor
    soft_graph: Optional[GraphStructure] = None
    neighbor_sets: Optional[NeighborSets] = None
    fine_edges: Optional[nc.EdgeSet] = None


def glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


# ---------------------------------------------------------------------------
# forward passes


def mlp_forward(graph, xhat, params, training=False, dropout_p=0.0, rng=None):
    """sigma(Xhat W1) W2: a GCN with the aggregation replaced by identity."""
    h = nc.relu(nc.matmul(xhat, params["w1"]))
    if training and dropout_p > 0.0:
        h = nc.dropout(h, dropout_p, rng)
    return nc.matmul(h, params["w2"])


def gcn_forward(graph, ahat, xhat, params, training=False, dropout_p=0.0, rng=None):
    """Ahat sigma(Ahat Xhat W1) W2 (two-layer graph convolution)."""
    h = nc.relu(nc.matmul(ahat, nc.matmul(xhat, params["w1"])))
    if training and dropout_p > 0.0:
        h = nc.dropout(h, dropout_p, rng)
    return nc.matmul(ahat, nc.matmul(h, params["w2"]))


def mgal_layer(graph, h, edges, layer, final_layer=False, slope=0.2,
               out_activation=None):
    """One multi-head graph attention layer over the fine neighbor sets.

    Per head: scores e_ij = leaky_relu([h_i W || h_j W] W_att) . v_att for
    each edge (i,j), softmax over each node's neighbors, then the
    attention-weighted sum of transformed neighbor features. Hidden
    layers apply relu per head and concatenate; the final layer averages
    heads (out_activation, when given, is applied after the mean).
    """
    head_outputs = []
    for w, w_att, v_att in zip(layer.w, layer.w_att, layer.v_att):
        d_out = w.shape[1]
        if w_att.shape[0] != 2 * d_out:
            raise ShapeError(
                f"w_att rows {w_att.shape[0]} != 2 * head width {d_out}"
            )
        hh = nc.matmul(h, w)
        w_left = nc.slice_rows(w_att, 0, d_out)
        w_right = nc.slice_rows(w_att, d_out, 2 * d_out)
        u = nc.matmul(hh, w_left)
        v = nc.matmul(hh, w_right)
        e = nc.edge_pair_score(u, v, v_att, edges, slope)
        alpha = nc.edge_softmax(e, edges)
        agg = nc.edge_aggregate(alpha, hh, edges)
        head_outputs.append(agg)
    if final_layer:
        total = head_outputs[0]
        for part in head_outputs[1:]:
            total = nc.add(total, part)
        out = nc.scalar_mul(total, 1.0 / len(head_outputs))
        if out_activation is not None:
            out = out_activation(out)
        return out
    activated = [nc.relu(a) for a in head_outputs]
    out = activated[0]
    for part in activated[1:]:
        out = nc.concat_cols(out, part)
    return out


def alm1(measurements, params, graph, param_name="alm.raw_thresholds"):
    """Per-node learned cutoff; returns the soft GraphStructure."""
    return soft_threshold(measurements, params, graph, param_name=param_name)


def alm2(measurements, params, graph, name_prefix="alm"):
    """Distance-aware per-edge cutoffs inside a coarse neighborhood.

    Stage 1: hard cutoff at coarse_threshold fixes the candidate edges.
    Stage 2: symmetric pair scores e_ij = |phi(x_i W) - phi(x_j W)| . v
    are squashed into per-edge cutoffs T_ij = rowmax(x_i) sigmoid(e_ij);
    the soft step of ALM-I then keeps x_ij below its own cutoff.
    Entries outside the coarse set stay exactly zero with no gradient.
    """
    n = measurements.n
    x = measurements.x
    if params.score_weight.shape[0] != n:
        raise ConfigError(
            f"score_weight rows {params.score_weight.shape[0]} != n {n}"
        )
    coarse_mask = x <= params.coarse_threshold  # diagonal always true
    off_diag_degree = coarse_mask.sum(axis=1) - 1
    if np.any(off_diag_degree == 0):
        node = int(np.flatnonzero(off_diag_degree == 0)[0])
        raise ConfigError(
            f"coarse neighbor set of node {node} is empty; "
            f"increase coarse_threshold (currently {params.coarse_threshold})"
        )
    edges = nc.EdgeSet.from_mask(coarse_mask)

    x_t = graph.constant(x)
    w_score = graph.parameter(f"{name_prefix}.score_weight", params.score_weight)
    v_score = graph.parameter(f"{name_prefix}.score_vec", params.score_vec)
    z = nc.leaky_relu(nc.matmul(x_t, w_score), 0.2)
    scores = nc.edge_abs_diff_score(z, v_score, edges)  # symmetric in (i,j)
    row_peak = x.max(axis=1)
    peak_e = graph.constant(row_peak[edges.src].reshape(-1, 1))
    cutoffs_e = nc.hadamard(peak_e, nc.sigmoid(scores))
    x_e = graph.constant(x[edges.src, edges.dst].reshape(-1, 1))
    a_e = nc.relu(nc.scalar_mul(
        nc.tanh(nc.scalar_mul(nc.subtract(x_e, cutoffs_e), params.gamma)), -1.0))
    xhat_e = nc.hadamard(x_e, a_e)

    adjacency = nc.edge_to_dense(a_e, edges, (n, n))
    xhat = nc.edge_to_dense(xhat_e, edges, (n, n))
    cutoffs = nc.edge_to_dense(cutoffs_e, edges, (n, n))
    ones = graph.constant(np.ones((n, 1)))
    degree = nc.matmul(adjacency, ones)

    coarse_sets = [np.flatnonzero(coarse_mask[i]) for i in range(n)]
    a_dense = adjacency.data
    fine_sets = []
    for i in range(n):
        idx = np.flatnonzero(a_dense[i] > 0.0)
        if i not in idx:
            idx = np.sort(np.append(idx, i))
        fine_sets.append((idx, a_dense[i, idx].copy()))
    nbrs = NeighborSets(coarse=coarse_sets, fine=fine_sets)

    structure = GraphStructure(
        adjacency=adjacency,
        degree=degree,
        norm_adjacency=None,
        masked_distances=xhat,
        mode="soft",
        thresholds=cutoffs,
    )
    return structure, nbrs


def _fine_edge_set(adjacency_data):
    """Edge set from the soft adjacency's support, self-loops forced in."""
    mask = adjacency_data > 0.0
    np.fill_diagonal(mask, True)
    return nc.EdgeSet.from_mask(mask)


def agnn_forward(kind, measurements, alm_params, mgal_layers, graph,
                 training=False, dropout_p=0.0, rng=None, slope=0.2):
    """Full attention pipeline: learned (A, Xhat) into the MGAL stack.

    Initial node features are the masked distance rows; the softmax mask
    of every attention layer is the support of the learned adjacency.
    """
    if kind == "agnn1":
        structure = alm1(measurements, alm_params, graph)
        nbrs = None
    elif kind == "agnn2":
        structure, nbrs = alm2(measurements, alm_params, graph)
    else:
        raise ConfigError(f"agnn_forward: bad kind {kind!r}")
    edges = _fine_edge_set(structure.adjacency.data)
    h = structure.masked_distances
    last = len(mgal_layers) - 1
    for k, layer in enumerate(mgal_layers):
        h = mgal_layer(graph, h, edges, layer, final_layer=(k == last), slope=slope)
        if k != last and training and dropout_p > 0.0:
            h = nc.dropout(h, dropout_p, rng)
    return ForwardOutput(
        predictions=h, soft_graph=structure, neighbor_sets=nbrs, fine_edges=edges
    )


# ---------------------------------------------------------------------------
# parameter initialization and the runnable model wrapper


def init_params(kind, n, config, rng):
    """Fresh parameter dict for a model kind (seeded, variance-preserving)."""
    params = {}
    if kind in ("mlp", "gcn"):
        params["w1"] = glorot(rng, n, config.hidden)
        params["w2"] = glorot(rng, config.hidden, config.out_dim)
        return params
    if kind == "agnn1":
        params["alm.raw_thresholds"] = rng.standard_normal((n, 1))
    elif kind == "agnn2":
        params["alm.score_weight"] = glorot(rng, n, config.score_dim)
        params["alm.score_vec"] = glorot(rng, config.score_dim, 1)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    dims = [n, config.head_dim, config.out_dim]
    for k in range(2):
        d_in = dims[k] if k == 0 else dims[k] * config.heads
        d_out = dims[k + 1]
        for l in range(config.heads):
            tag = f"gat{k}.h{l}"
            params[f"{tag}.w"] = glorot(rng, d_in, d_out)
            params[f"{tag}.w_att"] = glorot(rng, 2 * d_out, config.att_dim)
            params[f"{tag}.v_att"] = glorot(rng, config.att_dim, 1)
    return params


# below this many nodes, dense BLAS beats CSR kernels at the edge
# densities a 1.2 m cutoff produces, so compute runs on dense copies
DENSE_COMPUTE_MAX = 4000


@dataclass
class Model:
    kind: str
    config: ModelConfig
    params: dict
    measurements: object
    hard_graph: Optional[GraphStructure] = None  # mlp/gcn only
    max_range: float = 0.0
    _ahat: object = None  # compute-layout copies of the hard graph
    _xhat: object = None

    def mgal_layer_params(self, tensors):
        layers = []
        for k in range(2):
            layers.append(MgalLayerParams(
                w=[tensors[f"gat{k}.h{l}.w"] for l in range(self.config.heads)],
                w_att=[tensors[f"gat{k}.h{l}.w_att"] for l in range(self.config.heads)],
                v_att=[tensors[f"gat{k}.h{l}.v_att"] for l in range(self.config.heads)],
            ))
        return layers

    def forward(self, graph, training=False, dropout_p=0.0, rng=None):
        tensors = {name: graph.parameter(name, arr)
                   for name, arr in self.params.items()
                   if not name.startswith("alm.")}
        if self.kind in ("mlp", "gcn"):
            xhat = graph.constant(self._xhat)
            if self.kind == "mlp":
                pred = mlp_forward(graph, xhat, tensors, training, dropout_p, rng)
            else:
                ahat = graph.constant(self._ahat)
                pred = gcn_forward(graph, ahat, xhat, tensors, training, dropout_p, rng)
            return ForwardOutput(predictions=pred)
        if self.kind == "agnn1":
            alm_params = SoftThresholdParams(
                raw_thresholds=self.params["alm.raw_thresholds"],
                gamma=self.config.gamma,
                max_range=self.max_range,
            )
        else:
            alm_params = Alm2Params(
                score_weight=self.params["alm.score_weight"],
                score_vec=self.params["alm.score_vec"],
                coarse_threshold=self.config.coarse_threshold,
                gamma=self.config.gamma,
            )
        return agnn_forward(
            self.kind, self.measurements, alm_params,
            self.mgal_layer_params(tensors), graph,
            training=training, dropout_p=dropout_p, rng=rng,
            slope=self.config.leaky_slope,
        )


def build_model(kind, measurements, config, rng):
    """Assemble a runnable model: params + any fixed graph structure."""
    if kind != config.kind:
        config = ModelConfig(**{**config.__dict__, "kind": kind})
    n = measurements.n
    params = init_params(kind, n, config, rng)
    hard = ahat = xhat = None
    if kind in ("mlp", "gcn"):
        hard = hard_threshold(measurements, config.threshold)
        ahat, xhat = hard.norm_adjacency, hard.masked_distances
        if n <= DENSE_COMPUTE_MAX:
            if sp.issparse(ahat):
                ahat = ahat.toarray()
            if sp.issparse(xhat):
                xhat = xhat.toarray()
    max_range = config.max_range if config.max_range is not None else measurements.max_range()
    return Model(
        kind=kind, config=config, params=params,
        measurements=measurements, hard_graph=hard, max_range=max_range,
        _ahat=ahat, _xhat=xhat,
    )
