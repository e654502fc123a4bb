"""Reverse-mode differentiation over coarse numpy primitives.

A :class:`Tape` is a Wengert list: every primitive applied to a recorded
:class:`Var` appends one node holding its output value, its parents and a
vector-Jacobian product (VJP). Each VJP is itself written with the primitives
in this module, so running :meth:`Tape.grad` with ``create_graph=True`` records
the backward pass too and the result can be differentiated again. That is how
the force term of the training loss (a gradient of a gradient) is obtained.

Primitives accept plain arrays as well; when no input is a recorded ``Var`` the
result is a plain ``ndarray`` and nothing is recorded.
"""

from __future__ import annotations

import contextlib
import string
import threading

import numpy as np

from .errors import NumericError

_STATE = threading.local()  # recording switch, per thread


def _recording():
    return getattr(_STATE, "recording", True)


@contextlib.contextmanager
def no_record():
    saved = _recording()
    _STATE.recording = False
    try:
        yield
    finally:
        _STATE.recording = saved


class Var:
    __slots__ = ("value", "parents", "vjp", "op", "tape", "index")
    __array_ufunc__ = None  # make ndarray defer to the reflected operators below

    def __init__(self, value, parents, vjp, op, tape):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.tape = tape
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Tape:
    """Recorded computation graph; create leaves with :meth:`var`."""

    def __init__(self, check_finite=False):
        self.nodes = []
        self.check_finite = check_finite

    def var(self, value):
        value = np.asarray(value, dtype=np.float64 if not np.iscomplexobj(value) else None)
        return Var(value, (), None, "leaf", self)

    def grad(self, output, inputs, create_graph=False, seed=None):
        """Gradients of ``sum(seed * output)`` with respect to ``inputs``.

        Inputs that ``output`` does not depend on get a zero array.
        """
        if not isinstance(output, Var):
            return [np.zeros_like(value_of(x)) for x in inputs]
        seed = np.ones_like(output.value) if seed is None else seed
        cot = {output.index: seed}
        wanted = {x.index for x in inputs if isinstance(x, Var)}
        ctx = contextlib.nullcontext() if create_graph else no_record()
        with ctx:
            for idx in range(output.index, -1, -1):
                g = cot.get(idx)
                if g is None:
                    continue
                node = self.nodes[idx]
                if node.vjp is None:
                    continue
                if idx not in wanted:
                    del cot[idx]
                needs = tuple(isinstance(p, Var) for p in node.parents)
                grads = node.vjp(g, needs)
                for parent, pg, need in zip(node.parents, grads, needs):
                    if not need or pg is None:
                        continue
                    if self.check_finite and not np.all(np.isfinite(value_of(pg))):
                        raise NumericError(f"non-finite adjoint produced by primitive '{node.op}'")
                    prev = cot.get(parent.index)
                    cot[parent.index] = pg if prev is None else add(prev, pg)
        out = []
        for x in inputs:
            g = cot.get(x.index) if isinstance(x, Var) else None
            if g is None:
                g = np.zeros_like(value_of(x))
            elif not create_graph:
                g = value_of(g)
            out.append(g)
        return out


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _node(value, parents, vjp, op):
    if not _recording():
        return value
    tape = None
    for p in parents:
        if isinstance(p, Var):
            tape = p.tape
            break
    if tape is None:
        return value
    if tape.check_finite and not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by primitive '{op}'")
    return Var(value, parents, vjp, op, tape)


def _sum_to_shape(g, shape):
    """Reduce a broadcast cotangent back to ``shape``."""
    gs = value_of(g).shape
    if gs == tuple(shape):
        return g
    lead = len(gs) - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and gs[i + lead] != 1
    )
    out = sum_(g, axis=axes, keepdims=True)
    return reshape(out, shape)


# --------------------------------------------------------------------------- #
# elementwise primitives
# --------------------------------------------------------------------------- #


def add(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g, needs):
        return (
            _sum_to_shape(g, sa) if needs[0] else None,
            _sum_to_shape(g, sb) if needs[1] else None,
        )

    return _node(av + bv, (a, b), vjp, "add")


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g, needs):
        return (
            _sum_to_shape(g, sa) if needs[0] else None,
            _sum_to_shape(neg(g), sb) if needs[1] else None,
        )

    return _node(av - bv, (a, b), vjp, "sub")


def neg(a):
    def vjp(g, needs):
        return (neg(g),)

    return _node(-value_of(a), (a,), vjp, "neg")


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g, needs):
        return (
            _sum_to_shape(mul(g, b), sa) if needs[0] else None,
            _sum_to_shape(mul(g, a), sb) if needs[1] else None,
        )

    return _node(av * bv, (a, b), vjp, "mul")


def div(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _sum_to_shape(div(g, b), sa)
        if needs[1]:
            gb = _sum_to_shape(neg(div(mul(g, a), mul(b, b))), sb)
        return ga, gb

    return _node(av / bv, (a, b), vjp, "div")


def power(a, p):
    """Integer power ``a**p`` (p >= 0)."""
    p = int(p)
    av = value_of(a)
    if p == 0:
        return np.ones_like(av)

    def vjp(g, needs):
        return (mul(g, mul(float(p), power(a, p - 1))),)

    return _node(av**p, (a,), vjp, f"pow{p}")


def sqrt(a):
    out = np.sqrt(value_of(a))

    def vjp(g, needs):
        return (div(mul(g, 0.5), res),)

    res = _node(out, (a,), vjp, "sqrt")
    return res


def sin(a):
    def vjp(g, needs):
        return (mul(g, cos(a)),)

    return _node(np.sin(value_of(a)), (a,), vjp, "sin")


def cos(a):
    def vjp(g, needs):
        return (neg(mul(g, sin(a))),)

    return _node(np.cos(value_of(a)), (a,), vjp, "cos")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu_derivative(x, order):
    s = _sigmoid(x)
    if order == 0:
        return x * s
    if order == 1:
        return s * (1.0 + x * (1.0 - s))
    ds = s * (1.0 - s)
    if order == 2:
        return ds * (2.0 + x * (1.0 - 2.0 * s))
    if order == 3:
        return ds * ((1.0 - 2.0 * s) * (3.0 + x * (1.0 - 2.0 * s)) - 2.0 * x * ds)
    raise NotImplementedError("SiLU derivatives above third order are not provided")


def _silu_family(a, order):
    def vjp(g, needs):
        return (mul(g, _silu_family(a, order + 1)),)

    return _node(_silu_derivative(value_of(a), order), (a,), vjp, f"silu_d{order}")


def silu(a):
    """``x * sigmoid(x)``; derivatives up to third order are closed-form primitives."""
    return _silu_family(a, 0)


# --------------------------------------------------------------------------- #
# shape primitives
# --------------------------------------------------------------------------- #


def sum_(a, axis=None, keepdims=False):
    av = value_of(a)
    shape = av.shape
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if axis is None:
        axes = tuple(range(av.ndim))
    elif isinstance(axis, int):
        axes = (axis % av.ndim,)
    else:
        axes = tuple(ax % av.ndim for ax in axis)

    def vjp(g, needs):
        if not keepdims:
            kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
            g = reshape(g, kshape)
        return (broadcast_to(g, shape),)

    return _node(out, (a,), vjp, "sum")


def broadcast_to(a, shape):
    av = value_of(a)
    src = av.shape

    def vjp(g, needs):
        return (_sum_to_shape(g, src),)

    return _node(np.broadcast_to(av, shape), (a,), vjp, "broadcast")


def reshape(a, shape):
    av = value_of(a)
    src = av.shape

    def vjp(g, needs):
        return (reshape(g, src),)

    return _node(np.reshape(av, shape), (a,), vjp, "reshape")


def transpose(a, axes):
    inv = tuple(np.argsort(axes))

    def vjp(g, needs):
        return (transpose(g, inv),)

    return _node(np.transpose(value_of(a), axes), (a,), vjp, "transpose")


def slice_axis(a, start, stop, axis=-1):
    av = value_of(a)
    axis = axis % av.ndim
    n = av.shape[axis]
    idx = (slice(None),) * axis + (slice(start, stop),)

    def vjp(g, needs):
        return (pad_axis(g, start, n - stop, axis),)

    return _node(av[idx], (a,), vjp, "slice")


def pad_axis(a, before, after, axis=-1):
    av = value_of(a)
    axis = axis % av.ndim
    width = [(0, 0)] * av.ndim
    width[axis] = (before, after)
    stop = before + av.shape[axis]

    def vjp(g, needs):
        return (slice_axis(g, before, stop, axis),)

    return _node(np.pad(av, width), (a,), vjp, "pad")


def concatenate(xs, axis=-1):
    vals = [value_of(x) for x in xs]
    axis = axis % vals[0].ndim
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def vjp(g, needs):
        return tuple(
            slice_axis(g, int(bounds[i]), int(bounds[i + 1]), axis) if needs[i] else None
            for i in range(len(xs))
        )

    return _node(np.concatenate(vals, axis=axis), tuple(xs), vjp, "concat")


def stack_last(xs):
    return concatenate([reshape(x, value_of(x).shape + (1,)) for x in xs], axis=-1)


# --------------------------------------------------------------------------- #
# gather / scatter
# --------------------------------------------------------------------------- #


def _segment_sum(flat, index, size):
    n_cols = flat.shape[1]
    bucket = (index[:, None] * n_cols + np.arange(n_cols)).ravel()

    def real_sum(x):
        return np.bincount(bucket, weights=x.ravel(), minlength=size * n_cols)

    out = real_sum(flat.real) + 1j * real_sum(flat.imag) if np.iscomplexobj(flat) else real_sum(flat)
    return out.reshape(size, n_cols)


def take(a, index, axis=0):
    """Gather along ``axis`` (repeated indices allowed)."""
    av = value_of(a)
    axis = axis % av.ndim
    index = np.asarray(index, dtype=np.int64)
    size = av.shape[axis]

    def vjp(g, needs):
        return (index_add(g, index, size, axis),)

    return _node(np.take(av, index, axis=axis), (a,), vjp, "take")


def _canonical_segment_sum(flat, index, size):
    # each bucket is summed in ascending value order, so the result is independent
    # of the order in which contributions arrive
    n_rows, n_cols = flat.shape
    vals = flat.ravel()
    bucket = (index[:, None] * n_cols + np.arange(n_cols)).ravel()
    order = np.lexsort((vals, bucket))
    return np.bincount(bucket[order], weights=vals[order], minlength=size * n_cols).reshape(size, n_cols)


def index_add(a, index, size, axis=0, canonical=False):
    """Scatter-add slices of ``a`` along ``axis`` into ``size`` buckets.

    With ``canonical`` the sums do not depend on the order of the input slices
    (bit for bit), at the cost of a sort.
    """
    av = value_of(a)
    axis = axis % av.ndim
    index = np.asarray(index, dtype=np.int64)
    moved = np.moveaxis(av, axis, 0)
    flat = moved.reshape(moved.shape[0], int(np.prod(moved.shape[1:])))
    if canonical:
        out = _canonical_segment_sum(flat, index, size)
    else:
        out = _segment_sum(flat, index, size)
    out = np.moveaxis(np.asarray(out).reshape((size,) + moved.shape[1:]), 0, axis)

    def vjp(g, needs):
        return (take(g, index, axis),)

    return _node(out, (a,), vjp, "index_add")


# --------------------------------------------------------------------------- #
# contractions
# --------------------------------------------------------------------------- #


def _parse_einsum(subscripts, n):
    lhs, out = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n:
        raise ValueError(f"einsum expects {len(ins)} operands, got {n}")
    return ins, out


def einsum(subscripts, *operands):
    """Differentiable ``np.einsum`` (explicit output, no repeated indices per operand).

    Every index of an operand must appear in the output or in another operand.
    """
    vals = [value_of(x) for x in operands]
    ins, out = _parse_einsum(subscripts, len(vals))
    for s in ins + [out]:
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in einsum term '{s}'")
    for i, s in enumerate(ins):
        others = set(out).union(*(ins[j] for j in range(len(ins)) if j != i))
        if not set(s) <= others:
            raise ValueError(f"index of operand {i} in '{subscripts}' is summed only there")
    optimize = len(vals) > 2
    result = np.einsum(subscripts, *vals, optimize=optimize)

    def vjp(g, needs):
        grads = []
        for i, s in enumerate(ins):
            if not needs[i]:
                grads.append(None)
                continue
            terms = [out] + [ins[j] for j in range(len(ins)) if j != i]
            ops = [g] + [operands[j] for j in range(len(ins)) if j != i]
            grads.append(einsum(",".join(terms) + "->" + s, *ops))
        return tuple(grads)

    return _node(result, tuple(operands), vjp, "einsum")


def einsum_subscripts(n):
    """``n`` distinct single-letter index names (for generated einsum strings)."""
    return string.ascii_letters[:n]


def spmm(a, mat):
    """``a @ mat`` over the last axis with a constant scipy sparse matrix."""
    av = value_of(a)
    lead = av.shape[:-1]
    flat = av.reshape(-1, av.shape[-1])
    out = np.asarray((mat.T @ flat.T).T).reshape(lead + (mat.shape[1],))
    mat_t = None

    def vjp(g, needs):
        nonlocal mat_t
        if mat_t is None:
            mat_t = mat.T.tocsr()
        return (spmm(g, mat_t),)

    return _node(out, (a,), vjp, "spmm")


def poly_eval(u, table):
    """Evaluate a :class:`~mace_engine.equivariant.PolyTable` on vectors ``u`` (..., 3)."""
    uv = value_of(u)

    def vjp(g, needs):
        parts = [sum_(mul(g, poly_eval(u, table.derivative(ax))), axis=-1) for ax in range(3)]
        return (stack_last(parts),)

    return _node(table(uv), (u,), vjp, "poly")


PRIMITIVES = (
    "add sub neg mul div power sqrt sin cos silu sum_ broadcast_to reshape transpose "
    "slice_axis pad_axis concatenate take index_add einsum spmm poly_eval"
).split()
