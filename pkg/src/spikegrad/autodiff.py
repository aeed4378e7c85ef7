"""Reverse-mode automatic differentiation over f64 scalars and dense arrays.

Values are Python floats or numpy float64 arrays (1-D vectors, 2-D
matrices).  Every simulation trial owns exactly one :class:`Tape`; node
append order is topological order and ``backward`` walks the node list in
strict reverse, so two backward passes over the same tape are bit
identical.  Custom adjoint rules (used for event-time gradients) are
registered through :meth:`Tape.custom_adjoint` or the lower level
:meth:`Tape.raw_custom`.

Broadcasting is deliberately restricted to (scalar op vector) and
(matrix @ vector); anything else raises.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class TapeError(RuntimeError):
    """Raised on tape misuse: no active tape, mixed tapes, bad backward."""


_ACTIVE: list["Tape"] = []


def _as_value(x):
    """Normalize to a Python float or a float64 ndarray."""
    if type(x) is float:
        return x
    if isinstance(x, (int, np.integer, np.floating)):
        return float(x)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    return a


def _acc(buf, i, g):
    """Accumulate cotangent g into slot i (skipping constants, i < 0)."""
    if i >= 0:
        cur = buf[i]
        buf[i] = g if cur is None else cur + g


def _gsum(g):
    # reduce a vector cotangent onto a broadcast scalar operand
    return float(g.sum()) if type(g) is not float else g


class _AdjDict(dict):
    """dict adjoint buffer for scoped partials; missing slots read as None."""

    def __missing__(self, key):
        return None


class _ColAccum:
    """Lazy column-structured gradient of a weight matrix.

    Weight matrices are consumed almost exclusively through ``column``;
    accumulating full dense matrices per spike event would dominate the
    backward pass, so deposits are kept as per-column sums and densified
    once at the end.
    """

    __slots__ = ("shape", "cols")

    def __init__(self, shape):
        self.shape = shape
        self.cols = {}

    def add_col(self, j, g):
        cur = self.cols.get(j)
        self.cols[j] = g if cur is None else cur + g

    def dense(self):
        out = np.zeros(self.shape)
        for j, g in self.cols.items():
            out[:, j] += g
        return out

    # dense deposits can still land on the same slot (e.g. via matvec)
    def __add__(self, other):
        if isinstance(other, _ColAccum):
            out = self.dense() + other.dense()
        else:
            out = self.dense() + other
        return out

    __radd__ = __add__


def _densify(g):
    return g.dense() if type(g) is _ColAccum else g


class Var:
    """A value on a tape.  ``_idx`` is the node handle (-1 for constants)."""

    __slots__ = ("value", "_idx", "_tape")

    def __init__(self, value, tape, idx):
        self.value = value
        self._tape = tape
        self._idx = idx

    def __repr__(self):
        return f"Var({self.value!r})"

    # operator sugar; constants (plain numbers) are allowed on either side
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub_from(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div_from(other, self)

    def __neg__(self):
        return neg(self)


class Gradients:
    """Read-only gradient map produced by :meth:`Tape.backward`."""

    def __init__(self, buf):
        self._buf = buf

    def __getitem__(self, var):
        i = var._idx
        g = self._buf[i] if 0 <= i < len(self._buf) else None
        if g is None:
            v = var.value
            return 0.0 if type(v) is float else np.zeros(v.shape)
        return _densify(g)


class Tape:
    """Append-only operation record; one per trial, discarded after backward."""

    __slots__ = ("nodes", "recording")

    def __init__(self):
        self.nodes = []
        self.recording = True

    # -- context management -------------------------------------------------
    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    @contextmanager
    def paused(self):
        """Compute values without recording (event probes, metrics)."""
        prev = self.recording
        self.recording = False
        try:
            yield self
        finally:
            self.recording = prev

    # -- node creation -------------------------------------------------------
    def _out(self, value):
        if self.recording:
            i = len(self.nodes)
            self.nodes.append(None)
            return Var(value, self, i)
        return Var(value, self, -1)

    def leaf(self, value):
        """Register an input node; its adjoint after backward is dL/d(leaf)."""
        return self._out(_as_value(value))

    def constant(self, value):
        """A value excluded from differentiation (never receives adjoints)."""
        return Var(_as_value(value), self, -1)

    def mark(self):
        return len(self.nodes)

    def truncate(self, mark):
        """Drop nodes from position ``mark`` on (scratch evaluations only)."""
        del self.nodes[mark:]

    # -- custom adjoints -----------------------------------------------------
    def raw_custom(self, values, parent_ids, bwd_factory):
        """Emit consecutive output nodes whose joint backward is custom.

        ``bwd_factory(out_ids)`` must return a closure ``fn(buf)`` that reads
        the outputs' adjoints from ``buf`` and deposits into ``parent_ids``
        (or any earlier node) via ``_acc``.  The closure is registered at the
        first output so it runs after every consumer.
        """
        if not self.recording:
            return [Var(_as_value(v), self, -1) for v in values]
        outs = [self._out(_as_value(v)) for v in values]
        out_ids = [o._idx for o in outs]
        self.nodes[out_ids[0]] = bwd_factory(out_ids)
        return outs

    def custom_adjoint(self, forward, adjoint, inputs):
        """Wrap ``forward`` so that backward calls ``adjoint`` instead.

        ``forward(*input_values)`` is evaluated once and may return one value
        or a sequence.  ``adjoint(input_values, output_values, out_cotangents)``
        must return one cotangent per input (None for no contribution).
        """
        in_vals = [v.value for v in inputs]
        res = forward(*in_vals)
        values = list(res) if isinstance(res, (tuple, list)) else [res]
        single = not isinstance(res, (tuple, list))
        parent_ids = [v._idx for v in inputs]

        def factory(out_ids):
            def bwd(buf):
                gs = [buf[i] for i in out_ids]
                if all(g is None for g in gs):
                    return
                gs = [
                    (0.0 if type(v) is float else np.zeros(np.shape(v)))
                    if g is None
                    else g
                    for g, v in zip(gs, values)
                ]
                cots = adjoint(in_vals, values, gs[0] if single else gs)
                if len(cots) != len(parent_ids):
                    raise TapeError(
                        "custom adjoint returned %d cotangents for %d inputs"
                        % (len(cots), len(parent_ids))
                    )
                for pid, c in zip(parent_ids, cots):
                    if c is not None:
                        _acc(buf, pid, c)

            return bwd

        outs = self.raw_custom(values, parent_ids, factory)
        return outs[0] if single else outs

    # -- reverse pass ----------------------------------------------------
    def backward(self, out):
        """Reverse sweep from scalar ``out``; returns a :class:`Gradients`."""
        if out._tape is not self:
            raise TapeError("output belongs to a different tape")
        if type(out.value) is not float:
            raise TapeError("backward requires a scalar output")
        if out._idx < 0:
            raise TapeError("backward of a constant")
        buf = [None] * len(self.nodes)
        buf[out._idx] = 1.0
        nodes = self.nodes
        for i in range(out._idx, -1, -1):
            fn = nodes[i]
            if fn is not None:
                fn(buf)
        return Gradients(buf)

    def partials(self, out, mark):
        """Adjoints of scalar ``out`` over the tape segment ``[mark, out]``.

        Runs an isolated reverse sweep (the main adjoint state is untouched)
        and returns the raw ``{node_id: cotangent}`` buffer.  Entries with
        ids below ``mark`` are the partials with respect to pre-existing
        nodes (e.g. model parameters referenced by a spike condition).
        """
        if type(out.value) is not float:
            raise TapeError("partials requires a scalar output")
        buf = _AdjDict()
        buf[out._idx] = 1.0
        nodes = self.nodes
        for i in range(out._idx, mark - 1, -1):
            fn = nodes[i]
            if fn is not None:
                fn(buf)
        return buf


def active_tape():
    if not _ACTIVE:
        raise TapeError("no active tape")
    return _ACTIVE[-1]


def leaf(value, tape=None):
    return (tape or active_tape()).leaf(value)


def constant(value, tape=None):
    return (tape or active_tape()).constant(value)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def _chk(a, b):
    if a._tape is not b._tape:
        raise TapeError("operands belong to different tapes")


def _shape_ok(av, bv):
    if type(av) is not float and type(bv) is not float and av.shape != bv.shape:
        raise ValueError(f"shape mismatch: {av.shape} vs {bv.shape}")


def _broadcasts(av, out_v):
    # operand is scalar but the result is an array -> adjoint must reduce
    return type(av) is float and type(out_v) is not float


def add(a, b):
    t = a._tape
    av = a.value
    if isinstance(b, Var):
        _chk(a, b)
        bv = b.value
        _shape_ok(av, bv)
        out = t._out(av + bv)
        if out._idx >= 0:
            ai, bi, oi = a._idx, b._idx, out._idx
            ra, rb = _broadcasts(av, out.value), _broadcasts(bv, out.value)

            def bwd(buf):
                g = buf[oi]
                if g is None:
                    return
                _acc(buf, ai, _gsum(g) if ra else g)
                _acc(buf, bi, _gsum(g) if rb else g)

            t.nodes[oi] = bwd
        return out
    bv = _as_value(b)
    out = t._out(av + bv)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx
        ra = _broadcasts(av, out.value)

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, _gsum(g) if ra else g)

        t.nodes[oi] = bwd
    return out


def sub(a, b):
    t = a._tape
    av = a.value
    if isinstance(b, Var):
        _chk(a, b)
        bv = b.value
        _shape_ok(av, bv)
        out = t._out(av - bv)
        if out._idx >= 0:
            ai, bi, oi = a._idx, b._idx, out._idx
            ra, rb = _broadcasts(av, out.value), _broadcasts(bv, out.value)

            def bwd(buf):
                g = buf[oi]
                if g is None:
                    return
                _acc(buf, ai, _gsum(g) if ra else g)
                _acc(buf, bi, -_gsum(g) if rb else -g)

            t.nodes[oi] = bwd
        return out
    bv = _as_value(b)
    out = t._out(av - bv)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx
        ra = _broadcasts(av, out.value)

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, _gsum(g) if ra else g)

        t.nodes[oi] = bwd
    return out


def sub_from(a_const, b):
    """a_const - b with a plain-number minuend."""
    t = b._tape
    av = _as_value(a_const)
    bv = b.value
    out = t._out(av - bv)
    if out._idx >= 0:
        bi, oi = b._idx, out._idx
        rb = _broadcasts(bv, out.value)

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, bi, -_gsum(g) if rb else -g)

        t.nodes[oi] = bwd
    return out


def mul(a, b):
    t = a._tape
    av = a.value
    if isinstance(b, Var):
        _chk(a, b)
        bv = b.value
        _shape_ok(av, bv)
        out = t._out(av * bv)
        if out._idx >= 0:
            ai, bi, oi = a._idx, b._idx, out._idx
            ra, rb = _broadcasts(av, out.value), _broadcasts(bv, out.value)

            def bwd(buf):
                g = buf[oi]
                if g is None:
                    return
                ga = g * bv
                gb = g * av
                _acc(buf, ai, _gsum(ga) if ra else ga)
                _acc(buf, bi, _gsum(gb) if rb else gb)

            t.nodes[oi] = bwd
        return out
    bv = _as_value(b)
    out = t._out(av * bv)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx
        ra = _broadcasts(av, out.value)

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                ga = g * bv
                _acc(buf, ai, _gsum(ga) if ra else ga)

        t.nodes[oi] = bwd
    return out


def div(a, b):
    t = a._tape
    av = a.value
    if isinstance(b, Var):
        _chk(a, b)
        bv = b.value
        _shape_ok(av, bv)
        ov = av / bv
        out = t._out(ov)
        if out._idx >= 0:
            ai, bi, oi = a._idx, b._idx, out._idx
            ra, rb = _broadcasts(av, out.value), _broadcasts(bv, out.value)

            def bwd(buf):
                g = buf[oi]
                if g is None:
                    return
                ga = g / bv
                gb = -(g * ov) / bv
                _acc(buf, ai, _gsum(ga) if ra else ga)
                _acc(buf, bi, _gsum(gb) if rb else gb)

            t.nodes[oi] = bwd
        return out
    return mul(a, 1.0 / _as_value(b))


def div_from(a_const, b):
    """a_const / b with a plain-number numerator."""
    t = b._tape
    av = _as_value(a_const)
    bv = b.value
    ov = av / bv
    out = t._out(ov)
    if out._idx >= 0:
        bi, oi = b._idx, out._idx
        rb = _broadcasts(bv, out.value)

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                gb = -(g * ov) / bv
                _acc(buf, bi, _gsum(gb) if rb else gb)

        t.nodes[oi] = bwd
    return out


def neg(a):
    t = a._tape
    out = t._out(-a.value)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, -g)

        t.nodes[oi] = bwd
    return out


def exp(a):
    t = a._tape
    av = a.value
    ov = math.exp(av) if type(av) is float else np.exp(av)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, g * ov)

        t.nodes[oi] = bwd
    return out


def log(a):
    t = a._tape
    av = a.value
    if type(av) is float:
        if av <= 0.0:
            raise ValueError("log of non-positive value")
        ov = math.log(av)
    else:
        if not np.all(av > 0.0):
            raise ValueError("log of non-positive value")
        ov = np.log(av)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, g / av)

        t.nodes[oi] = bwd
    return out


def sin(a):
    t = a._tape
    av = a.value
    ov = math.sin(av) if type(av) is float else np.sin(av)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                c = math.cos(av) if type(av) is float else np.cos(av)
                _acc(buf, ai, g * c)

        t.nodes[oi] = bwd
    return out


def cos(a):
    t = a._tape
    av = a.value
    ov = math.cos(av) if type(av) is float else np.cos(av)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                s = math.sin(av) if type(av) is float else np.sin(av)
                _acc(buf, ai, -g * s)

        t.nodes[oi] = bwd
    return out


def tanh(a):
    t = a._tape
    av = a.value
    ov = math.tanh(av) if type(av) is float else np.tanh(av)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, g * (1.0 - ov * ov))

        t.nodes[oi] = bwd
    return out


def _sigmoid_value(x):
    if type(x) is float:
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    t = a._tape
    ov = _sigmoid_value(a.value)
    out = t._out(ov)
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, g * ov * (1.0 - ov))

        t.nodes[oi] = bwd
    return out


def maximum(a, b):
    """Elementwise max; ties route the cotangent to the first argument."""
    t = a._tape
    _chk(a, b)
    av, bv = a.value, b.value
    _shape_ok(av, bv)
    if type(av) is float and type(bv) is float:
        take_a = av >= bv
        out = t._out(av if take_a else bv)
        if out._idx >= 0:
            ai, bi, oi = a._idx, b._idx, out._idx

            def bwd(buf):
                g = buf[oi]
                if g is not None:
                    _acc(buf, ai if take_a else bi, g)

            t.nodes[oi] = bwd
        return out
    mask = av >= bv
    out = t._out(np.where(mask, av, bv))
    if out._idx >= 0:
        ai, bi, oi = a._idx, b._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            _acc(buf, ai, g * mask)
            _acc(buf, bi, g * ~mask)

        t.nodes[oi] = bwd
    return out


def max_reduce(a):
    """Max over a vector; ties break toward the lowest index, which gets
    the full cotangent."""
    t = a._tape
    av = a.value
    k = int(np.argmax(av))
    n = av.shape[0]
    out = t._out(float(av[k]))
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                z = np.zeros(n)
                z[k] = g
                _acc(buf, ai, z)

        t.nodes[oi] = bwd
    return out


def where(cond, a, b):
    """Select per the plain boolean ``cond`` (scalar or array, never a Var).

    The unselected branch receives exactly zero adjoint.  Either branch may
    be a plain number.
    """
    a_var = isinstance(a, Var)
    b_var = isinstance(b, Var)
    t = a._tape if a_var else b._tape
    if a_var and b_var:
        _chk(a, b)
    av = a.value if a_var else _as_value(a)
    bv = b.value if b_var else _as_value(b)
    if isinstance(cond, np.ndarray):
        ov = np.where(cond, av, bv)
        if type(ov) is not np.ndarray or ov.ndim == 0:
            ov = _as_value(ov)
    else:
        ov = av if cond else bv
    out = t._out(ov)
    if out._idx >= 0:
        ai = a._idx if a_var else -1
        bi = b._idx if b_var else -1
        oi = out._idx
        ra = _broadcasts(av, ov) if a_var else False
        rb = _broadcasts(bv, ov) if b_var else False

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            if isinstance(cond, np.ndarray):
                ga = g * cond
                gb = g * ~cond
                if ai >= 0:
                    _acc(buf, ai, _gsum(ga) if ra else ga)
                if bi >= 0:
                    _acc(buf, bi, _gsum(gb) if rb else gb)
            elif cond:
                _acc(buf, ai, g)
            else:
                _acc(buf, bi, g)

        t.nodes[oi] = bwd
    return out


def vsum(a):
    """Sum of a vector's entries."""
    t = a._tape
    av = a.value
    n = av.shape[0]
    out = t._out(float(av.sum()))
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                _acc(buf, ai, np.full(n, g))

        t.nodes[oi] = bwd
    return out


def dot(a, b):
    t = a._tape
    _chk(a, b)
    av, bv = a.value, b.value
    _shape_ok(av, bv)
    out = t._out(float(av @ bv))
    if out._idx >= 0:
        ai, bi, oi = a._idx, b._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            _acc(buf, ai, g * bv)
            _acc(buf, bi, g * av)

        t.nodes[oi] = bwd
    return out


def matvec(m, x):
    """Matrix-vector product; ``m`` may be a constant ndarray or a Var."""
    t = x._tape
    m_var = isinstance(m, Var)
    if m_var:
        _chk(m, x)
    mv = m.value if m_var else np.asarray(m, dtype=np.float64)
    xv = x.value
    if mv.ndim != 2 or xv.ndim != 1 or mv.shape[1] != xv.shape[0]:
        raise ValueError(f"matvec shape mismatch: {mv.shape} @ {xv.shape}")
    out = t._out(mv @ xv)
    if out._idx >= 0:
        mi = m._idx if m_var else -1
        xi, oi = x._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            if mi >= 0:
                _acc(buf, mi, np.outer(g, xv))
            _acc(buf, xi, mv.T @ g)

        t.nodes[oi] = bwd
    return out


def column(m, j):
    """Select column ``j`` of a weight matrix as a vector."""
    t = m._tape
    mv = m.value
    out = t._out(mv[:, j].copy())
    if out._idx >= 0:
        mi, oi = m._idx, out._idx
        shape = mv.shape

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            cur = buf[mi]
            if cur is None:
                cur = _ColAccum(shape)
                buf[mi] = cur
            if type(cur) is _ColAccum:
                cur.add_col(j, g)
            else:
                d = np.zeros(shape)
                d[:, j] = g
                buf[mi] = cur + d

        t.nodes[oi] = bwd
    return out


def index(a, k):
    """Entry ``k`` of a vector as a scalar."""
    t = a._tape
    av = a.value
    n = av.shape[0]
    out = t._out(float(av[k]))
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                z = np.zeros(n)
                z[k] = g
                _acc(buf, ai, z)

        t.nodes[oi] = bwd
    return out


def stack(vars_):
    """Stack scalar Vars into a vector."""
    vars_ = list(vars_)
    t = vars_[0]._tape
    for v in vars_[1:]:
        _chk(vars_[0], v)
    out = t._out(np.array([v.value for v in vars_], dtype=np.float64))
    if out._idx >= 0:
        ids = [v._idx for v in vars_]
        oi = out._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            for k, i in enumerate(ids):
                _acc(buf, i, float(g[k]))

        t.nodes[oi] = bwd
    return out


def concat(vars_):
    """Concatenate vector Vars."""
    vars_ = list(vars_)
    t = vars_[0]._tape
    out = t._out(np.concatenate([v.value for v in vars_]))
    if out._idx >= 0:
        oi = out._idx
        ids = [v._idx for v in vars_]
        sizes = [v.value.shape[0] for v in vars_]

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            off = 0
            for i, n in zip(ids, sizes):
                _acc(buf, i, g[off : off + n].copy())
                off += n

        t.nodes[oi] = bwd
    return out


def vslice(a, lo, hi):
    """Contiguous slice of a vector."""
    t = a._tape
    av = a.value
    n = av.shape[0]
    out = t._out(av[lo:hi].copy())
    if out._idx >= 0:
        ai, oi = a._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is not None:
                z = np.zeros(n)
                z[lo:hi] = g
                _acc(buf, ai, z)

        t.nodes[oi] = bwd
    return out


def scatter_add(dest, offset, sub_):
    """Add vector ``sub_`` into ``dest`` at ``offset`` (out of place)."""
    t = dest._tape
    _chk(dest, sub_)
    dv, sv = dest.value, sub_.value
    m = sv.shape[0]
    v = dv.copy()
    v[offset : offset + m] += sv
    out = t._out(v)
    if out._idx >= 0:
        di, si, oi = dest._idx, sub_._idx, out._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            _acc(buf, di, g)
            _acc(buf, si, g[offset : offset + m].copy())

        t.nodes[oi] = bwd
    return out


def axpy(a, x, y):
    """Fused ``a * x + y`` with scalar ``a`` (Var or number); the solver's
    per-step workhorse."""
    t = x._tape
    _chk(x, y)
    a_var = isinstance(a, Var)
    if a_var:
        _chk(a, x)
    av = a.value if a_var else _as_value(a)
    xv, yv = x.value, y.value
    _shape_ok(xv, yv)
    if t.recording:
        nodes = t.nodes
        oi = len(nodes)
        nodes.append(None)
        out = Var(av * xv + yv, t, oi)
        ai = a._idx if a_var else -1
        xi, yi = x._idx, y._idx

        def bwd(buf):
            g = buf[oi]
            if g is None:
                return
            if ai >= 0:
                ga = g * xv
                _acc(buf, ai, float(ga.sum()) if type(ga) is not float else ga)
            _acc(buf, xi, g * av)
            _acc(buf, yi, g)

        nodes[oi] = bwd
        return out
    return Var(av * xv + yv, t, -1)
