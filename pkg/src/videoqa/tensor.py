"""Dense float64 tensors with taped reverse-mode differentiation.

Ops are module-level functions. While a Tape is active (``with Tape() as t:``)
every op appends itself in execution order; ``t.backward(loss)`` replays the
record in exact reverse order and accumulates gradients with += into the
``.grad`` buffers of tensors that require them. With no active tape, ops run
forward-only, which is what evaluation and finite differences use.

Shapes never broadcast implicitly except against true scalars; mismatches
raise DimensionError up front instead of misbehaving silently.
"""

from __future__ import annotations

import threading

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class ContractError(ValueError):
    """An op precondition was violated (non-scalar loss, bad label, ...)."""


_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tensor:
    """A contiguous float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # 0-d scalars are always contiguous; ascontiguousarray would
            # promote them to 1-d, so only copy when actually needed
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g, own: bool = False):
        """+= into the grad buffer; own=True may take g without copying."""
        if self.grad is None:
            self.grad = g if own else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class Tape:
    """Ordered op record; single-owner, one per thread at a time."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, name, inputs, output, backward_fn):
        self._entries.append((name, inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for requires_grad tensors.

        Each call contributes one full set of adjoints, so calling twice
        without zero_grad doubles every gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        # adjoints live in a per-call dict keyed by tensor identity; .grad is
        # only written once per tensor per call, which keeps += accumulation
        # across calls exact
        adjoint = {id(loss): [loss, np.ones_like(loss.data)]}
        for _name, inputs, output, backward_fn in reversed(self._entries):
            held = adjoint.pop(id(output), None)
            if held is None:
                continue
            out_tensor, g = held
            if out_tensor.requires_grad:
                out_tensor.accumulate_grad(g)
            grads = backward_fn(g)
            for t, gt in zip(inputs, grads):
                if gt is None:
                    continue
                slot = adjoint.get(id(t))
                if slot is None:
                    # backward rules may hand back g itself or a view of it;
                    # those need a copy before they become an owned adjoint
                    if gt is g or gt.base is not None:
                        gt = np.array(gt, dtype=np.float64)
                    adjoint[id(t)] = [t, gt]
                else:
                    slot[1] += gt
        for t, g in adjoint.values():
            if t.requires_grad:
                t.accumulate_grad(g, own=True)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _record(name, inputs, out, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape.record(name, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", (a, b), out, backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.data.shape}")
    out = Tensor(x.data.T)

    def backward_fn(g):
        return (g.T,)

    return _record("transpose", (x,), out, backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"reshape {x.data.shape} -> {shape}")
    out = Tensor(x.data.reshape(shape))
    orig = x.data.shape

    def backward_fn(g):
        return (g.reshape(orig),)

    return _record("reshape", (x,), out, backward_fn)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m-by-n matrix."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise DimensionError(f"add_rowvec: shapes {x.data.shape} and {v.data.shape}")
    out = Tensor(x.data + v.data[None, :])

    def backward_fn(g):
        return g, g.sum(axis=0)

    return _record("add_rowvec", (x, v), out, backward_fn)


# ---------------------------------------------------------------------------
# softmax / concat / slicing


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def backward_fn(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - dot) * y,)

    return _record("softmax_rows", (x,), out, backward_fn)


def concat_last(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_last of an empty list")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise DimensionError(
                "concat_last: leading dims differ: "
                + ", ".join(str(p.data.shape) for p in parts)
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.data.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=-1))

    return _record("concat_last", tuple(parts), out, backward_fn)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows of an empty list")
    tail = parts[0].data.shape[1:]
    for p in parts[1:]:
        if p.data.shape[1:] != tail:
            raise DimensionError(
                "concat_rows: trailing dims differ: "
                + ", ".join(str(p.data.shape) for p in parts)
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    counts = [p.data.shape[0] for p in parts]
    splits = np.cumsum(counts)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=0))

    return _record("concat_rows", tuple(parts), out, backward_fn)


def stack_first(parts) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    parts = list(parts)
    if not parts:
        raise DimensionError("stack_first of an empty list")
    shape = parts[0].data.shape
    for p in parts[1:]:
        if p.data.shape != shape:
            raise DimensionError("stack_first: shapes differ")
    out = Tensor(np.stack([p.data for p in parts], axis=0))

    def backward_fn(g):
        return tuple(g[i] for i in range(len(parts)))

    return _record("stack_first", tuple(parts), out, backward_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice_rows [{start}:{stop}] on {x.data.shape}")
    out = Tensor(x.data[start:stop])
    shape = x.data.shape

    def backward_fn(g):
        gx = np.zeros(shape)
        gx[start:stop] = g
        return (gx,)

    return _record("slice_rows", (x,), out, backward_fn)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.data.shape[-1]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice_last [{start}:{stop}] on {x.data.shape}")
    out = Tensor(x.data[..., start:stop])
    shape = x.data.shape

    def backward_fn(g):
        gx = np.zeros(shape)
        gx[..., start:stop] = g
        return (gx,)

    return _record("slice_last", (x,), out, backward_fn)


# ---------------------------------------------------------------------------
# elementwise


def _as_operands(x, y, op_name):
    """Validate a binary pair; scalars (python numbers or size-1 tensors)
    may broadcast, equal shapes otherwise."""
    if isinstance(y, (int, float)):
        return y, None
    if not isinstance(y, Tensor):
        raise TypeError(f"{op_name}: second operand must be Tensor or number")
    if y.data.shape == x.data.shape or y.data.size == 1 or x.data.size == 1:
        return y.data, y
    raise DimensionError(f"{op_name}: shapes {x.data.shape} and {y.data.shape}")


def add(x: Tensor, y) -> Tensor:
    yd, yt = _as_operands(x, y, "add")
    out = Tensor(x.data + yd)
    xshape, x_size = x.data.shape, x.data.size

    def backward_fn(g):
        gx = g if x_size != 1 else np.full(xshape, g.sum())
        if yt is None:
            return (gx,)
        gy = g if yt.data.size != 1 else np.full(yt.data.shape, g.sum())
        return gx, gy

    inputs = (x,) if yt is None else (x, yt)
    return _record("add", inputs, out, backward_fn)


def sub(x: Tensor, y) -> Tensor:
    yd, yt = _as_operands(x, y, "sub")
    out = Tensor(x.data - yd)
    xshape, x_size = x.data.shape, x.data.size

    def backward_fn(g):
        gx = g if x_size != 1 else np.full(xshape, g.sum())
        if yt is None:
            return (gx,)
        gy = -g if yt.data.size != 1 else np.full(yt.data.shape, -g.sum())
        return gx, gy

    inputs = (x,) if yt is None else (x, yt)
    return _record("sub", inputs, out, backward_fn)


def mul(x: Tensor, y) -> Tensor:
    yd, yt = _as_operands(x, y, "mul")
    out = Tensor(x.data * yd)
    xd = x.data

    def backward_fn(g):
        if yt is None:
            return (g * yd,)
        gx = g * yt.data
        gy = g * xd
        if x.data.size == 1 and yt.data.size != 1:
            gx = np.full(x.data.shape, gx.sum())
        if yt.data.size == 1 and x.data.size != 1:
            gy = np.full(yt.data.shape, gy.sum())
        return gx, gy

    inputs = (x,) if yt is None else (x, yt)
    return _record("mul", inputs, out, backward_fn)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _record("relu", (x,), out, backward_fn)


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1: x for x > 0, exp(x) - 1 otherwise."""
    y = np.where(x.data > 0, x.data, np.expm1(x.data))
    out = Tensor(y)
    pos = x.data > 0

    def backward_fn(g):
        return (g * np.where(pos, 1.0, y + 1.0),)

    return _record("elu", (x,), out, backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)

    def backward_fn(g):
        return (g * s * (1.0 - s),)

    return _record("sigmoid", (x,), out, backward_fn)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward_fn(g):
        return (g * (1.0 - t * t),)

    return _record("tanh", (x,), out, backward_fn)


def elementwise(x: Tensor, kind: str, y=None) -> Tensor:
    """Dispatch wrapper: add/sub/mul need y, relu/elu/sigmoid/tanh do not."""
    binary = {"add": add, "sub": sub, "mul": mul}
    unary = {"relu": relu, "elu": elu, "sigmoid": sigmoid, "tanh": tanh}
    if kind in binary:
        if y is None:
            raise ContractError(f"elementwise '{kind}' needs a second operand")
        return binary[kind](x, y)
    if kind in unary:
        return unary[kind](x)
    raise ContractError(f"unknown elementwise kind '{kind}'")


# ---------------------------------------------------------------------------
# reductions


def reduce(x: Tensor, kind: str, axis: int) -> Tensor:
    if not (0 <= axis < x.data.ndim):
        raise DimensionError(f"reduce axis {axis} out of range for shape {x.data.shape}")
    shape = x.data.shape
    n = shape[axis]
    if kind == "sum":
        out = Tensor(x.data.sum(axis=axis))

        def backward_fn(g):
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    elif kind == "mean":
        out = Tensor(x.data.mean(axis=axis))

        def backward_fn(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    elif kind == "max":
        out = Tensor(x.data.max(axis=axis))
        # first index on ties, so training stays deterministic
        idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)

        def backward_fn(g):
            gx = np.zeros(shape)
            np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
            return (gx,)

    else:
        raise ContractError(f"unknown reduce kind '{kind}'")
    return _record(f"reduce_{kind}", (x,), out, backward_fn)


# ---------------------------------------------------------------------------
# gather / losses


def gather_rows(table: Tensor, ids, frozen_rows=()) -> Tensor:
    """Row gather; ids may be any int array shape, output shape ids.shape + (dim,).

    Rows listed in frozen_rows receive no gradient (embedding pad rows).
    """
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError("gather_rows expects a matrix table")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DimensionError(
            f"gather_rows: id out of range [0, {table.data.shape[0]}) in {ids.tolist()}"
        )
    out = Tensor(table.data[ids])
    dim = table.data.shape[1]
    tshape = table.data.shape

    def backward_fn(g):
        gt = np.zeros(tshape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, dim))
        for r in frozen_rows:
            gt[r] = 0.0
        return (gt,)

    return _record("gather_rows", (table,), out, backward_fn)


def cross_entropy_logits(scores: Tensor, target: int) -> Tensor:
    """-log softmax(scores)[target] for a 1-D score vector, numerically stable."""
    if scores.data.ndim != 1:
        raise DimensionError(f"cross_entropy_logits expects a vector, got {scores.data.shape}")
    n = scores.data.shape[0]
    if not (0 <= target < n):
        raise ContractError(f"label {target} out of range [0, {n})")
    z = scores.data - scores.data.max()
    logsum = np.log(np.exp(z).sum())
    out = Tensor(np.array(logsum - z[target]))
    p = np.exp(z - logsum)

    def backward_fn(g):
        d = p.copy()
        d[target] -= 1.0
        return (d * float(g),)

    return _record("cross_entropy_logits", (scores,), out, backward_fn)


# ---------------------------------------------------------------------------
# convolutions (fused ops: numpy forward, hand-written backward)


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 1-D convolution over the leading axis.

    x: [L, c_in], kernels: [c_out, c_in, k], bias: [c_out] -> [L, c_out].
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise DimensionError("conv1d_same expects x [L,c_in], kernels [c_out,c_in,k]")
    length, c_in = x.data.shape
    c_out, k_in, width = kernels.data.shape
    if k_in != c_in or bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv1d_same: x {x.data.shape}, kernels {kernels.data.shape}, bias {bias.data.shape}"
        )
    pl = (width - 1) // 2
    pr = width - 1 - pl
    xp = np.pad(x.data, ((pl, pr), (0, 0)))
    y = np.tile(bias.data, (length, 1))
    for t in range(width):
        y += xp[t : t + length] @ kernels.data[:, :, t].T
    out = Tensor(y)
    kd = kernels.data

    def backward_fn(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for t in range(width):
            gxp[t : t + length] += g @ kd[:, :, t]
            gk[:, :, t] = g.T @ xp[t : t + length]
        gb = g.sum(axis=0)
        return gxp[pl : pl + length], gk, gb

    return _record("conv1d_same", (x, kernels, bias), out, backward_fn)


def conv2d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 2-D convolution, channels-last input.

    x: [H, W, c_in], kernels: [c_out, c_in, kh, kw], bias: [c_out]
    -> [H-kh+1, W-kw+1, c_out].
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError("conv2d_valid expects x [H,W,c_in], kernels [c_out,c_in,kh,kw]")
    h, w, c_in = x.data.shape
    c_out, k_in, kh, kw = kernels.data.shape
    if k_in != c_in or bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv2d_valid: x {x.data.shape}, kernels {kernels.data.shape}, bias {bias.data.shape}"
        )
    ho, wo = h - kh + 1, w - kw + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d_valid: kernel {kh}x{kw} larger than input {h}x{w}")
    y = np.empty((ho, wo, c_out))
    y[:] = bias.data
    for a in range(kh):
        for b in range(kw):
            y += x.data[a : a + ho, b : b + wo, :] @ kernels.data[:, :, a, b].T
    out = Tensor(y)
    xd, kd = x.data, kernels.data

    def backward_fn(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for a in range(kh):
            for b in range(kw):
                gx[a : a + ho, b : b + wo, :] += g @ kd[:, :, a, b]
                gk[:, :, a, b] = np.einsum("xyc,xyo->oc", xd[a : a + ho, b : b + wo, :], g)
        gb = g.sum(axis=(0, 1))
        return gx, gk, gb

    return _record("conv2d_valid", (x, kernels, bias), out, backward_fn)


# ---------------------------------------------------------------------------
# verification


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor and must be deterministic. The numeric
    side never touches the tape machinery: f is re-evaluated forward-only at
    x +- eps per coordinate.
    """
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
        if y.data.size != 1:
            raise ContractError(f"grad_check needs scalar f output, got {y.data.shape}")
        tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# parameter checkpoint format: text manifest + little-endian f64 blob


def save_params(params: dict, manifest_path, blob_path) -> None:
    """Write `name dim0 dim1 ...` lines plus one concatenated <f8 blob."""
    lines = []
    chunks = []
    for name, p in params.items():
        lines.append(name + " " + " ".join(str(d) for d in p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(manifest_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(blob_path, "wb") as f:
        f.write(b"".join(chunks))


def load_params(manifest_path, blob_path) -> dict:
    """Read back a dict name -> float64 ndarray, validating blob length."""
    entries = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            entries.append((fields[0], tuple(int(d) for d in fields[1:])))
    with open(blob_path, "rb") as f:
        blob = f.read()
    out = {}
    offset = 0
    for name, shape in entries:
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(blob):
            raise ContractError(f"parameter blob truncated at '{name}'")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise ContractError(f"parameter blob has {len(blob) - offset} trailing bytes")
    return out
