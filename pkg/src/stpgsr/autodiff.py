"""Reverse-mode differentiation over dense float64 arrays.

A ``Tape`` records every operation applied to tensors that descend from one of
its leaves; ``Tape.backward`` replays the records in reverse, accumulating
gradients into the ``Parameter`` objects that were attached via
``Parameter.use``. Operations applied to plain constants (tensors without a
tape) are evaluated eagerly and record nothing, which is what the finite
difference checker relies on.

Only the operations the edge-learning models actually need are provided:
dense matrix math for node-space computation, and gather/segment primitives
so attention over a sparse dual graph works on edge-indexed vectors without
ever materializing a dense dual adjacency.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, ShapeError


def _as_f64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """Dense float64 array, optionally tracked on a tape."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape=None, node_id=None):
        self.values = _as_f64(values)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.values.shape

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # small amount of operator sugar; everything funnels into the op functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values) -> Tensor:
    return Tensor(values)


class Parameter:
    """Named learnable array with a persistent gradient accumulator."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values):
        self.name = name
        self.values = _as_f64(values)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def use(self, tape: "Tape") -> Tensor:
        """Attach this parameter to ``tape`` as a leaf for one forward pass."""
        return tape.leaf(self.values, param=self)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


class _Record:
    __slots__ = ("output_id", "inputs")

    def __init__(self, output_id, inputs):
        self.output_id = output_id
        self.inputs = inputs  # tuple of (input node id, grad -> contribution)


class Tape:
    """Ordered operation log; append order is execution order, hence topological."""

    def __init__(self):
        self._records = []
        self._params = {}  # leaf node id -> Parameter
        self._next_id = 0
        self._last_grads = {}

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def leaf(self, values, param: Parameter | None = None) -> Tensor:
        t = Tensor(values, tape=self, node_id=self._new_id())
        if param is not None:
            self._params[t.node_id] = param
        return t

    def _record(self, values, inputs) -> Tensor:
        """Register one operation; ``inputs`` pairs node ids with backward rules."""
        tracked = tuple((nid, fn) for nid, fn in inputs if nid is not None)
        out = Tensor(values, tape=self, node_id=self._new_id())
        self._records.append(_Record(out.node_id, tracked))
        return out

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(param) into every attached Parameter's grad.

        Repeated calls on the same tape add on top of earlier accumulations.
        """
        if loss.tape is not self:
            raise DomainError("loss tensor does not belong to this tape")
        if loss.values.size != 1:
            raise DomainError(f"loss must be scalar, got shape {loss.values.shape}")
        grads = {loss.node_id: np.ones_like(loss.values)}
        for rec in reversed(self._records):
            g = grads.get(rec.output_id)
            if g is None:
                continue
            for nid, fn in rec.inputs:
                contrib = fn(g)
                if nid in grads:
                    grads[nid] = grads[nid] + contrib
                else:
                    grads[nid] = contrib
        for nid, param in self._params.items():
            if nid in grads:
                param.grad += grads[nid].reshape(param.grad.shape)
        self._last_grads = grads

    def gradient(self, t: Tensor) -> np.ndarray:
        """Gradient of the most recent backward pass w.r.t. tensor ``t``."""
        g = self._last_grads.get(t.node_id)
        if g is None:
            return np.zeros_like(t.values)
        return g


def _join_tape(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise DomainError("operands live on different tapes")
            tape = t.tape
    return tape


def _emit(tape, values, inputs) -> Tensor:
    if tape is None:
        return Tensor(values)
    return tape._record(values, inputs)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# dense matrix ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return _emit(
        _join_tape(a, b),
        av @ bv,
        [(a.node_id, lambda g: g @ bv.T), (b.node_id, lambda g: av.T @ g)],
    )


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(_join_tape(a), a.values.T.copy(), [(a.node_id, lambda g: g.T)])


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit(
        _join_tape(a, b),
        a.values + b.values,
        [(a.node_id, lambda g: g), (b.node_id, lambda g: g)],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return _emit(
        _join_tape(a, b),
        a.values - b.values,
        [(a.node_id, lambda g: g), (b.node_id, lambda g: -g)],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return _emit(
        _join_tape(a, b),
        av * bv,
        [(a.node_id, lambda g: g * bv), (b.node_id, lambda g: g * av)],
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(_join_tape(a), a.values * c, [(a.node_id, lambda g: g * c)])


def add_const(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(_join_tape(a), a.values + c, [(a.node_id, lambda g: g)])


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.values < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.values)
    return _emit(_join_tape(a), out, [(a.node_id, lambda g: g * (0.5 / out))])


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at the kink; np.maximum keeps NaN visible instead of
    # laundering it to zero, so diverged runs stay detectable
    mask = a.values > 0
    return _emit(
        _join_tape(a), np.maximum(a.values, 0.0), [(a.node_id, lambda g: g * mask)]
    )


def reshape(a: Tensor, shape) -> Tensor:
    old = a.values.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _emit(_join_tape(a), out, [(a.node_id, lambda g: g.reshape(old))])


# ---------------------------------------------------------------------------
# reductions and scalar broadcasting (scalar operands are 0-d tensors)


def reduce_min(a: Tensor) -> Tensor:
    flat = a.values.ravel()
    idx = int(np.argmin(flat))
    shape = a.values.shape

    def back(g):
        out = np.zeros(shape)
        out.ravel()[idx] = g
        return out

    return _emit(_join_tape(a), np.float64(flat[idx]), [(a.node_id, back)])


def reduce_max(a: Tensor) -> Tensor:
    flat = a.values.ravel()
    idx = int(np.argmax(flat))
    shape = a.values.shape

    def back(g):
        out = np.zeros(shape)
        out.ravel()[idx] = g
        return out

    return _emit(_join_tape(a), np.float64(flat[idx]), [(a.node_id, back)])


def sub_scalar(a: Tensor, s: Tensor) -> Tensor:
    if s.values.size != 1:
        raise ShapeError(f"scalar operand has shape {s.shape}")
    return _emit(
        _join_tape(a, s),
        a.values - s.values,
        [(a.node_id, lambda g: g), (s.node_id, lambda g: -np.sum(g))],
    )


def div_scalar(a: Tensor, s: Tensor) -> Tensor:
    if s.values.size != 1:
        raise ShapeError(f"scalar operand has shape {s.shape}")
    sv = float(s.values)
    if sv == 0.0:
        raise DomainError("division by zero scalar")
    av = a.values
    return _emit(
        _join_tape(a, s),
        av / sv,
        [
            (a.node_id, lambda g: g / sv),
            (s.node_id, lambda g: -np.sum(g * av) / (sv * sv)),
        ],
    )


def minmax_scale(a: Tensor) -> Tensor:
    """Affine-map values onto [0, 1]; a constant input maps to all zeros."""
    lo = reduce_min(a)
    hi = reduce_max(a)
    if float(hi.values) == float(lo.values):
        return Tensor(np.zeros_like(a.values))
    return div_scalar(sub_scalar(a, lo), sub(hi, lo))


# ---------------------------------------------------------------------------
# gather / segment primitives for edge-indexed computation


def _check_index(idx, bound, what):
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ShapeError(f"{what} must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise DomainError(f"{what} out of range [0, {bound})")
    return idx.astype(np.int64)


def gather_rows(a: Tensor, idx) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got {a.shape}")
    idx = _check_index(idx, a.shape[0], "row index")
    shape = a.values.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _emit(_join_tape(a), a.values[idx], [(a.node_id, back)])


def take_flat(a: Tensor, flat_idx) -> Tensor:
    """Pick entries of ``a`` (C order) at flat positions; backward scatters."""
    flat_idx = _check_index(flat_idx, a.values.size, "flat index")
    shape = a.values.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out.ravel(), flat_idx, g)
        return out

    return _emit(_join_tape(a), a.values.ravel()[flat_idx], [(a.node_id, back)])


def symmetric_from_upper(v: Tensor, n: int) -> Tensor:
    """Place an upper-triangle vector into a symmetric zero-diagonal matrix."""
    if v.values.ndim != 1 or v.values.size != n * (n - 1) // 2:
        raise ShapeError(
            f"need a vector of length n(n-1)/2 = {n * (n - 1) // 2}, got {v.shape}"
        )
    iu = np.triu_indices(n, k=1)
    out = np.zeros((n, n))
    out[iu] = v.values
    out.T[iu] = v.values

    def back(g):
        return g[iu] + g.T[iu]

    return _emit(_join_tape(v), out, [(v.node_id, back)])


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"segment_sum needs a matrix, got {a.shape}")
    seg = _check_index(segments, num_segments, "segment id")
    if seg.size != a.shape[0]:
        raise ShapeError("one segment id per row required")
    out = np.zeros((num_segments, a.shape[1]))
    np.add.at(out, seg, a.values)
    return _emit(_join_tape(a), out, [(a.node_id, lambda g: g[seg])])


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape or a.values.ndim != 2:
        raise ShapeError(f"row_dot shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return _emit(
        _join_tape(a, b),
        np.sum(av * bv, axis=1),
        [
            (a.node_id, lambda g: g[:, None] * bv),
            (b.node_id, lambda g: g[:, None] * av),
        ],
    )


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row e of ``a`` by scalar ``s[e]``."""
    if a.values.ndim != 2 or s.values.ndim != 1 or s.shape[0] != a.shape[0]:
        raise ShapeError(f"scale_rows shape mismatch: {a.shape} vs {s.shape}")
    av, sv = a.values, s.values
    return _emit(
        _join_tape(a, s),
        av * sv[:, None],
        [
            (a.node_id, lambda g: g * sv[:, None]),
            (s.node_id, lambda g: np.sum(g * av, axis=1)),
        ],
    )


def outer_vec(s: Tensor, v: Tensor) -> Tensor:
    """Rank-1 product: row e of the output is ``s[e] * v``."""
    s, v = _as_tensor(s), _as_tensor(v)
    if s.values.ndim != 1 or v.values.ndim != 1:
        raise ShapeError(f"outer_vec needs vectors, got {s.shape} and {v.shape}")
    sv, vv = s.values, v.values
    return _emit(
        _join_tape(s, v),
        sv[:, None] * vv[None, :],
        [
            (s.node_id, lambda g: g @ vv),
            (v.node_id, lambda g: sv @ g),
        ],
    )


def segment_softmax(logits: Tensor, segments) -> Tensor:
    """Softmax within groups of entries sharing a segment id.

    Numerically stabilized by subtracting each segment's max. Every segment
    present in ``segments`` is nonempty by construction; an empty logit vector
    is rejected.
    """
    if logits.values.ndim != 1:
        raise ShapeError(f"segment_softmax needs a vector, got {logits.shape}")
    if logits.values.size == 0:
        raise DomainError("segment_softmax on empty input")
    seg = np.asarray(segments)
    if seg.ndim != 1 or seg.size != logits.values.size:
        raise ShapeError("one segment id per logit required")
    if seg.min() < 0:
        raise DomainError("segment ids must be nonnegative")
    seg = seg.astype(np.int64)
    nseg = int(seg.max()) + 1

    maxes = np.full(nseg, -np.inf)
    np.maximum.at(maxes, seg, logits.values)
    e = np.exp(logits.values - maxes[seg])
    denom = np.zeros(nseg)
    np.add.at(denom, seg, e)
    y = e / denom[seg]

    def back(g):
        dot = np.zeros(nseg)
        np.add.at(dot, seg, g * y)
        return y * (g - dot[seg])

    return _emit(_join_tape(logits), y, [(logits.node_id, back)])


def concat_features(parts) -> Tensor:
    """Column-wise concatenation of [n x d_h] blocks, in the given order."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_features needs at least one part")
    n = parts[0].shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.shape[0] != n:
            raise ShapeError("concat_features parts must share the node dimension")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    out = np.concatenate([p.values for p in parts], axis=1)

    def slice_back(k):
        lo, hi = offsets[k], offsets[k + 1]
        return lambda g: g[:, lo:hi]

    return _emit(
        _join_tape(*parts),
        out,
        [(p.node_id, slice_back(k)) for k, p in enumerate(parts)],
    )


# ---------------------------------------------------------------------------
# feature statistics and row-vector broadcasting (for graph normalization)


def feature_mean_var(x: Tensor):
    """Per-feature mean and population variance across the node axis."""
    if x.values.ndim != 2:
        raise ShapeError(f"feature_mean_var needs a matrix, got {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise DomainError("feature_mean_var on empty node axis")
    xv = x.values
    mean_v = xv.mean(axis=0)
    var_v = xv.var(axis=0)
    tape = _join_tape(x)
    mean = _emit(tape, mean_v, [(x.node_id, lambda g: np.tile(g / n, (n, 1)))])
    centered = xv - mean_v
    var = _emit(tape, var_v, [(x.node_id, lambda g: (2.0 / n) * centered * g)])
    return mean, var


def _check_rowvec(x: Tensor, v: Tensor):
    if x.values.ndim != 2 or v.values.ndim != 1 or v.shape[0] != x.shape[1]:
        raise ShapeError(f"row-vector op shape mismatch: {x.shape} vs {v.shape}")


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    _check_rowvec(x, v)
    return _emit(
        _join_tape(x, v),
        x.values + v.values[None, :],
        [(x.node_id, lambda g: g), (v.node_id, lambda g: g.sum(axis=0))],
    )


def sub_rowvec(x: Tensor, v: Tensor) -> Tensor:
    _check_rowvec(x, v)
    return _emit(
        _join_tape(x, v),
        x.values - v.values[None, :],
        [(x.node_id, lambda g: g), (v.node_id, lambda g: -g.sum(axis=0))],
    )


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    _check_rowvec(x, v)
    xv, vv = x.values, v.values
    return _emit(
        _join_tape(x, v),
        xv * vv[None, :],
        [
            (x.node_id, lambda g: g * vv[None, :]),
            (v.node_id, lambda g: (g * xv).sum(axis=0)),
        ],
    )


def div_rowvec(x: Tensor, v: Tensor) -> Tensor:
    _check_rowvec(x, v)
    if np.any(v.values == 0):
        raise DomainError("division by zero in div_rowvec")
    xv, vv = x.values, v.values
    return _emit(
        _join_tape(x, v),
        xv / vv[None, :],
        [
            (x.node_id, lambda g: g / vv[None, :]),
            (v.node_id, lambda g: -(g * xv).sum(axis=0) / (vv * vv)),
        ],
    )


# ---------------------------------------------------------------------------
# stochastic and loss ops


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero entries w.p. ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return _emit(_join_tape(x), x.values.copy(), [(x.node_id, lambda g: g)])
    if rng is None:
        raise DomainError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.values.shape) >= p) / (1.0 - p)
    return _emit(_join_tape(x), x.values * keep, [(x.node_id, lambda g: g * keep)])


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 at exact ties."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.values - target.values
    count = diff.size
    sign = np.sign(diff)
    return _emit(
        _join_tape(pred, target),
        np.float64(np.abs(diff).mean()),
        [
            (pred.node_id, lambda g: g * sign / count),
            (target.node_id, lambda g: -g * sign / count),
        ],
    )


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor. The relative error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    base = np.array(x.values, dtype=np.float64, copy=True)
    tape = Tape()
    xt = tape.leaf(base.copy())
    loss = f(xt)
    if loss.values.size != 1:
        raise DomainError("grad_check target must be scalar-valued")
    tape.backward(loss)
    analytic = tape.gradient(xt).reshape(base.shape)

    numeric = np.zeros_like(base)
    flat = base.ravel()
    num_flat = numeric.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(Tensor(base.reshape(base.shape))).values)
        flat[k] = orig - h
        fm = float(f(Tensor(base.reshape(base.shape))).values)
        flat[k] = orig
        num_flat[k] = (fp - fm) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
