"""Reverse-mode autodiff over a dynamic tape of 2-D float64 tensors.

Every value is a matrix (scalars are 1x1, vectors are Nx1). Ops record
themselves on the owning DiffGraph's tape in construction order, which
is already a topological order, so backward() is a single reverse scan.
Constants may be scipy CSR matrices (matmul lhs only); gradients never
flow into sparse operands.
"""

import numpy as np
import scipy.sparse as sp

from ..errors import NumericError, ShapeError
from . import kernels

_CHECK_FINITE = False  # flipped by tests / debugging via set_check_finite


def set_check_finite(flag):
    """Globally enable per-op NaN/Inf checks (slow, for debugging)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def _as_matrix(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D; got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "graph", "name")

    def __init__(self, data, graph, requires_grad=False, name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.graph = graph
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.data)

    def __repr__(self):
        kind = "param" if self.name else "tensor"
        return f"<{kind} {self.name or ''} {self.data.shape} grad={self.requires_grad}>"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


class _Record:
    __slots__ = ("out", "inputs", "backward_fn", "op", "differentiable")

    def __init__(self, out, inputs, backward_fn, op, differentiable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op
        self.differentiable = differentiable


class DiffGraph:
    """Dynamic computation graph: tape + named parameter store."""

    def __init__(self):
        self._tape = []
        self.parameters = {}

    def parameter(self, name, data):
        """Register a trainable leaf. `data` is referenced, not copied."""
        if name in self.parameters:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(_as_matrix(data), self, requires_grad=True, name=name)
        self.parameters[name] = t
        return t

    def constant(self, data):
        if sp.issparse(data):
            return Tensor(data.tocsr().astype(np.float64), self)
        return Tensor(_as_matrix(data), self)

    def record(self, out_data, inputs, backward_fn, op, differentiable=True):
        needs_grad = any(t.requires_grad for t in inputs)
        if _CHECK_FINITE and not sp.issparse(out_data):
            if not np.all(np.isfinite(out_data)):
                raise NumericError(f"non-finite output from op {op!r}")
        out = Tensor(out_data, self, requires_grad=needs_grad)
        if needs_grad:
            self._tape.append(_Record(out, inputs, backward_fn, op, differentiable))
        return out

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into every parameter's .grad.

        Calling twice without zero_grad() adds a second full pass
        (gradients accumulate; this is the documented contract).
        """
        if loss.graph is not self:
            raise ValueError("loss tensor belongs to a different graph")
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        pending = {id(loss): np.ones((1, 1))}
        consumed = {id(loss): loss}
        for rec in reversed(self._tape):
            gout = pending.pop(id(rec.out), None)
            if gout is None:
                continue
            if not rec.differentiable:
                raise NumericError(
                    f"backward reached non-differentiable op {rec.op!r}"
                )
            grads = rec.backward_fn(gout)
            for tin, gin in zip(rec.inputs, grads):
                if gin is None or not tin.requires_grad:
                    continue
                if tin.name is not None:  # named leaf: persistent accumulator
                    if tin.grad is None:
                        tin.grad = np.zeros_like(tin.data)
                    tin.grad += gin
                else:
                    key = id(tin)
                    if key in pending:
                        pending[key] = pending[key] + gin
                    else:
                        pending[key] = gin
                        consumed[key] = tin
        # leaves created with requires_grad but never named cannot exist:
        # parameter() is the only rg leaf constructor.

    def gradients(self):
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.parameters.items()
        }

    def zero_grad(self):
        for t in self.parameters.values():
            t.grad = None


def _same_graph(*tensors):
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise ValueError("tensors belong to different graphs")
    return g


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy 2-D broadcasting)."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    g = _same_graph(a, b)
    _broadcast_check(a, b, "add")
    out = a.data + b.data

    def bwd(gout):
        return (_unbroadcast(gout, a.shape), _unbroadcast(gout, b.shape))

    return g.record(out, (a, b), bwd, "add")


def subtract(a, b):
    g = _same_graph(a, b)
    _broadcast_check(a, b, "subtract")
    out = a.data - b.data

    def bwd(gout):
        return (_unbroadcast(gout, a.shape), _unbroadcast(-gout, b.shape))

    return g.record(out, (a, b), bwd, "subtract")


def hadamard(a, b):
    g = _same_graph(a, b)
    _broadcast_check(a, b, "hadamard")
    out = a.data * b.data

    def bwd(gout):
        return (
            _unbroadcast(gout * b.data, a.shape),
            _unbroadcast(gout * a.data, b.shape),
        )

    return g.record(out, (a, b), bwd, "hadamard")


def scalar_mul(a, c):
    c = float(c)

    def bwd(gout):
        return (gout * c,)

    return a.graph.record(a.data * c, (a,), bwd, "scalar_mul")


def matmul(a, b):
    """a @ b. `a` may be a sparse constant (CSR); `b` must be dense."""
    g = _same_graph(a, b)
    if b.is_sparse:
        raise ShapeError("matmul rhs must be dense")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    if a.is_sparse:
        if a.requires_grad:
            raise ShapeError("sparse matmul lhs cannot require grad")
        out = np.asarray(a.data @ b.data)

        def bwd(gout):
            return (None, np.asarray(a.data.T @ gout))

    else:
        out = a.data @ b.data

        def bwd(gout):
            ga = gout @ b.data.T if a.requires_grad else None
            gb = a.data.T @ gout if b.requires_grad else None
            return (ga, gb)

    return g.record(out, (a, b), bwd, "matmul")


def transpose(a):
    def bwd(gout):
        return (gout.T,)

    return a.graph.record(a.data.T.copy(), (a,), bwd, "transpose")


def concat_rows(a, b):
    g = _same_graph(a, b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: {a.shape} vs {b.shape}")
    n = a.shape[0]

    def bwd(gout):
        return (gout[:n], gout[n:])

    return g.record(np.vstack([a.data, b.data]), (a, b), bwd, "concat_rows")


def concat_cols(a, b):
    g = _same_graph(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: {a.shape} vs {b.shape}")
    m = a.shape[1]

    def bwd(gout):
        return (gout[:, :m], gout[:, m:])

    return g.record(np.hstack([a.data, b.data]), (a, b), bwd, "concat_cols")


def slice_rows(a, start, stop):
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] of {a.shape}")

    def bwd(gout):
        full = np.zeros(a.shape)
        full[start:stop] = gout
        return (full,)

    return a.graph.record(a.data[start:stop].copy(), (a,), bwd, "slice_rows")


def absolute(a):
    s = np.sign(a.data)  # sign(0)=0: derivative 0 at the kink

    def bwd(gout):
        return (gout * s,)

    return a.graph.record(np.abs(a.data), (a,), bwd, "abs")


def relu(a):
    mask = a.data > 0.0  # derivative 0 at the kink

    def bwd(gout):
        return (gout * mask,)

    return a.graph.record(np.where(mask, a.data, 0.0), (a,), bwd, "relu")


def leaky_relu(a, slope=0.2):
    mask = a.data >= 0.0

    def bwd(gout):
        return (gout * np.where(mask, 1.0, slope),)

    out = np.where(mask, a.data, slope * a.data)
    return a.graph.record(out, (a,), bwd, "leaky_relu")


def tanh(a):
    out = np.tanh(a.data)

    def bwd(gout):
        return (gout * (1.0 - out * out),)

    return a.graph.record(out, (a,), bwd, "tanh")


def sigmoid(a):
    # stable two-branch form
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(gout):
        return (gout * out * (1.0 - out),)

    return a.graph.record(out, (a,), bwd, "sigmoid")


def row_softmax(a, mask=None):
    """Softmax along each row, restricted to entries where mask is True.

    Masked-out entries get weight exactly 0 and receive no gradient;
    surviving entries normalize to 1 per row. A row with no surviving
    entries is an error (the caller has an empty neighborhood).
    """
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"row_softmax mask {mask.shape} vs data {x.shape}")
        alive = mask.any(axis=1)
        if not alive.all():
            row = int(np.flatnonzero(~alive)[0])
            raise NumericError(f"row_softmax: row {row} has no unmasked entries")
        z = np.where(mask, x, -np.inf)
    else:
        z = x
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(gout):
        dot = (gout * out).sum(axis=1, keepdims=True)
        return (out * (gout - dot),)

    return a.graph.record(out, (a,), bwd, "row_softmax")


def row_max(a):
    """Per-row maximum as an Nx1 tensor; gradient routes to the first argmax."""
    idx = np.argmax(a.data, axis=1)  # ties: lowest index
    out = a.data[np.arange(a.shape[0]), idx].reshape(-1, 1)

    def bwd(gout):
        ga = np.zeros(a.shape)
        ga[np.arange(a.shape[0]), idx] = gout[:, 0]
        return (ga,)

    return a.graph.record(out, (a,), bwd, "row_max")


def frobenius_sq(a):
    out = np.array([[float(np.sum(a.data * a.data))]])

    def bwd(gout):
        return (2.0 * gout[0, 0] * a.data,)

    return a.graph.record(out, (a,), bwd, "frobenius_sq")


def sum_all(a):
    out = np.array([[float(a.data.sum())]])

    def bwd(gout):
        return (np.full(a.shape, gout[0, 0]),)

    return a.graph.record(out, (a,), bwd, "sum_all")


def dropout(a, p, rng):
    """Inverted dropout: zero entries with prob p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0,1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def bwd(gout):
        return (gout * keep,)

    return a.graph.record(a.data * keep, (a,), bwd, "dropout")


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows index must be 1-D")

    def bwd(gout):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, gout)
        return (ga,)

    return a.graph.record(a.data[idx].copy(), (a,), bwd, "gather_rows")


def argmax_rows(a):
    """Diagnostic: per-row argmax as an Nx1 tensor. Not differentiable."""
    out = np.argmax(a.data, axis=1).astype(np.float64).reshape(-1, 1)
    return a.graph.record(out, (a,), None, "argmax_rows", differentiable=False)


# --------------------------------------------------------------------------
# per-edge ops (attention plumbing)


class EdgeSet:
    """Directed edge list sorted by source row, with segment boundaries.

    `src` must be non-decreasing and every row in [0, n_nodes) must own
    at least one edge for the segment ops (softmax normalizes per source
    row). Construction from an arbitrary boolean adjacency sorts for you.
    """

    __slots__ = ("src", "dst", "n_nodes", "starts", "counts")

    def __init__(self, src, dst, n_nodes):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise ShapeError("edge arrays must be matching 1-D")
        if src.size and np.any(np.diff(src) < 0):
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
        self.src = src
        self.dst = dst
        self.n_nodes = int(n_nodes)
        counts = np.bincount(src, minlength=self.n_nodes)
        if np.any(counts == 0):
            node = int(np.flatnonzero(counts == 0)[0])
            raise NumericError(f"node {node} has an empty neighbor set")
        self.counts = counts
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        src, dst = np.nonzero(mask)
        return cls(src, dst, mask.shape[0])

    def __len__(self):
        return self.src.shape[0]


def edge_pair_score(left, right, vec, edges, slope=0.2):
    """e_k = leaky_relu(left[src_k] + right[dst_k]) . vec, as an |E|x1 tensor."""
    g = _same_graph(left, right, vec)
    if left.shape != right.shape or vec.shape != (left.shape[1], 1):
        raise ShapeError(
            f"edge_pair_score: left {left.shape}, right {right.shape}, vec {vec.shape}"
        )
    v = vec.data[:, 0]
    out = kernels.pair_score_fwd(left.data, right.data, v, edges.src, edges.dst, slope)

    def bwd(gout):
        gl, gr, gv = kernels.pair_score_bwd(
            left.data, right.data, v, edges.src, edges.dst, slope, gout[:, 0]
        )
        return (gl, gr, gv.reshape(-1, 1))

    return g.record(out.reshape(-1, 1), (left, right, vec), bwd, "edge_pair_score")


def edge_abs_diff_score(feats, vec, edges):
    """e_k = |feats[src_k] - feats[dst_k]| . vec (symmetric in src/dst)."""
    g = _same_graph(feats, vec)
    if vec.shape != (feats.shape[1], 1):
        raise ShapeError(
            f"edge_abs_diff_score: feats {feats.shape}, vec {vec.shape}"
        )
    v = vec.data[:, 0]
    out = kernels.abs_diff_score_fwd(feats.data, v, edges.src, edges.dst)

    def bwd(gout):
        gf, gv = kernels.abs_diff_score_bwd(
            feats.data, v, edges.src, edges.dst, gout[:, 0]
        )
        return (gf, gv.reshape(-1, 1))

    return g.record(out.reshape(-1, 1), (feats, vec), bwd, "edge_abs_diff_score")


def edge_softmax(scores, edges):
    """Softmax of per-edge scores within each source-row segment."""
    if scores.shape != (len(edges), 1):
        raise ShapeError(f"edge_softmax: scores {scores.shape}, |E|={len(edges)}")
    s = scores.data[:, 0]
    seg_max = np.maximum.reduceat(s, edges.starts)
    e = np.exp(s - np.repeat(seg_max, edges.counts))
    denom = np.add.reduceat(e, edges.starts)
    out = e / np.repeat(denom, edges.counts)

    def bwd(gout):
        go = gout[:, 0]
        seg_dot = np.add.reduceat(go * out, edges.starts)
        return ((out * (go - np.repeat(seg_dot, edges.counts))).reshape(-1, 1),)

    return scores.graph.record(out.reshape(-1, 1), (scores,), bwd, "edge_softmax")


def edge_aggregate(weights, feats, edges):
    """out[i] = sum over edges (i -> j) of w_ij * feats[j]."""
    g = _same_graph(weights, feats)
    if weights.shape != (len(edges), 1):
        raise ShapeError(f"edge_aggregate: weights {weights.shape}, |E|={len(edges)}")
    w = weights.data[:, 0]
    out = kernels.aggregate_fwd(w, feats.data, edges.src, edges.dst, edges.n_nodes)

    def bwd(gout):
        gw, gf = kernels.aggregate_bwd(w, feats.data, edges.src, edges.dst, gout)
        return (gw.reshape(-1, 1), gf)

    return g.record(out, (weights, feats), bwd, "edge_aggregate")


def edge_to_dense(values, edges, shape):
    """Scatter per-edge values into a dense matrix (zeros elsewhere)."""
    if values.shape != (len(edges), 1):
        raise ShapeError(f"edge_to_dense: values {values.shape}, |E|={len(edges)}")
    out = np.zeros(shape)
    out[edges.src, edges.dst] = values.data[:, 0]

    def bwd(gout):
        return (gout[edges.src, edges.dst].reshape(-1, 1),)

    return values.graph.record(out, (values,), bwd, "edge_to_dense")
