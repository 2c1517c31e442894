"""Dense fp64 tensors with reverse-mode gradients on an explicit tape.

Everything is 2-D (scalars are 1x1, biases are 1xd rows). Ops executed
while a :class:`Tape` is active are recorded in execution order; the
backward pass replays the record in exact reverse, accumulating adjoints
into ``.grad`` buffers. Outside a tape, ops are plain forward evaluation.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy import sparse as _sparse

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "FixedSparse",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "scale_rows",
    "relu",
    "leaky_relu",
    "softmax_rows",
    "log",
    "clamp_min",
    "sum_all",
    "mean_rows",
    "sq_norm",
    "masked_sq_norm",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "affine",
    "add_scaled",
    "mask_blend",
    "film_modulate",
    "sparse_matmul",
    "dropout",
    "fd_check",
]


class TapeError(RuntimeError):
    """Misuse of the tape (repeated backward, loss not recorded)."""


class Tensor:
    """A 2-D fp64 array, optionally tracked for gradients.

    ``grad`` is populated by :meth:`Tape.backward` and has the same shape
    as ``data``. Scalars passed in are promoted to 1x1, 1-D arrays to a
    single row.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    def __rmul__(self, other):
        return scalar_mul(self, float(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_tls = threading.local()


def _stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


class Tape:
    """Execution-ordered record of differentiable ops for one context.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the resulting scalar loss. A tape can run backward
    once; build a fresh tape per training step.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, list]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every tensor the loss depends on."""
        if self._used:
            raise TapeError("backward was already run on this tape")
        if not isinstance(loss, Tensor) or loss.shape != (1, 1):
            raise ValueError("loss must be a 1x1 tensor")
        if not loss.requires_grad:
            raise TapeError("loss is not connected to any tracked tensor")
        self._used = True
        loss.grad = np.ones((1, 1))
        # Identity-style vjps can hand the same buffer to several tensors;
        # copy on first assignment if the buffer is already owned.
        owned: set[int] = set()
        for out, pairs in reversed(self._entries):
            g = out.grad
            if g is None:
                continue
            owned.add(id(g))
            for parent, vjp in pairs:
                contrib = vjp(g)
                if parent.grad is None:
                    if id(contrib) in owned:
                        contrib = contrib.copy()
                    parent.grad = contrib
                    owned.add(id(contrib))
                elif id(parent.grad) in owned:
                    parent.grad = parent.grad + contrib
                    owned.add(id(parent.grad))
                else:
                    # Pre-existing buffer (a zeroed parameter grad) is owned
                    # by the parent alone; accumulate in place.
                    np.add(parent.grad, contrib, out=parent.grad)
                    owned.add(id(parent.grad))


def _record(out: Tensor, pairs) -> Tensor:
    stack = _stack()
    if not stack:
        return out
    tracked = [(p, vjp) for p, vjp in pairs if p.requires_grad]
    if tracked:
        out.requires_grad = True
        stack[-1]._entries.append((out, tracked))
    return out


# ------------------------------------------------------------------ core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record(
        out,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1xd bias row broadcast over rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)
        return _record(out, [(a, lambda g: g), (b, lambda g: g)])
    if b.shape == (1, a.shape[1]):
        out = Tensor(a.data + b.data)
        return _record(
            out,
            [(a, lambda g: g), (b, lambda g: g.sum(axis=0, keepdims=True))],
        )
    raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)
    return _record(out, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)
    return _record(out, [(a, lambda g: g * b.data), (b, lambda g: g * a.data)])


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, [(a, lambda g: g * c)])


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` (n x d) by the scalar ``s[i]`` (n x 1)."""
    x, s = as_tensor(x), as_tensor(s)
    if s.shape != (x.shape[0], 1):
        raise ValueError(f"scale_rows needs s of shape ({x.shape[0]}, 1), got {s.shape}")
    out = Tensor(x.data * s.data)
    return _record(
        out,
        [
            (x, lambda g: g * s.data),
            (s, lambda g: (g * x.data).sum(axis=1, keepdims=True)),
        ],
    )


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, [(x, lambda g: g * mask)])


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, alpha * x.data))
    return _record(out, [(x, lambda g: g * np.where(mask, 1.0, alpha))])


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, computed with row-max subtraction for stability."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)
    return _record(
        out,
        [(x, lambda g: p * (g - (g * p).sum(axis=1, keepdims=True)))],
    )


def log(x: Tensor) -> Tensor:
    """Natural log; inputs must be strictly positive (clamp first)."""
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log of non-positive value; clamp probabilities first")
    out = Tensor(np.log(x.data))
    return _record(out, [(x, lambda g: g / x.data)])


def clamp_min(x: Tensor, floor: float) -> Tensor:
    x = as_tensor(x)
    mask = x.data > floor
    out = Tensor(np.where(mask, x.data, floor))
    return _record(out, [(x, lambda g: g * mask)])


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum())
    return _record(out, [(x, lambda g: np.full(x.shape, g[0, 0]))])


def mean_rows(x: Tensor) -> Tensor:
    """Column means: (n x d) -> (1 x d)."""
    x = as_tensor(x)
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))
    return _record(out, [(x, lambda g: np.repeat(g / n, n, axis=0))])


def sq_norm(x: Tensor) -> Tensor:
    """Sum of squared entries (squared Frobenius / L2 norm), as 1x1."""
    x = as_tensor(x)
    out = Tensor(np.einsum("ij,ij->", x.data, x.data))
    return _record(out, [(x, lambda g: 2.0 * g[0, 0] * x.data)])


def masked_sq_norm(x: Tensor, row_mask: np.ndarray) -> Tensor:
    """Sum of squared entries over the rows where the 0/1 mask is set."""
    x = as_tensor(x)
    mask = np.asarray(row_mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != x.shape[0]:
        raise ValueError("mask length does not match the row count")
    out = Tensor(np.einsum("ij,ij,i->", x.data, x.data, mask))
    col = mask[:, None]
    return _record(out, [(x, lambda g: (2.0 * g[0, 0]) * (col * x.data))])


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of ``x`` by index; adjoint scatter-adds back."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    rows, cols = x.shape

    def vjp(g):
        # One flat bincount is much faster than np.add.at and accumulates
        # duplicates in input order (deterministic).
        flat = (idx[:, None] * cols + np.arange(cols)[None, :]).ravel()
        return np.bincount(flat, weights=g.ravel(), minlength=rows * cols).reshape(
            rows, cols
        )

    out = Tensor(x.data[idx])
    return _record(out, [(x, vjp)])


def segment_sum(x: Tensor, offsets: np.ndarray) -> Tensor:
    """Sum contiguous row segments: segment v is rows offsets[v]:offsets[v+1].

    Uses a cumulative-sum reduction, so accumulation order is fixed.
    """
    x = as_tensor(x)
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[-1] != x.shape[0]:
        raise ValueError("segment offsets do not cover the input rows")
    nseg = offsets.shape[0] - 1
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x.data, axis=0)])
    out = Tensor(csum[offsets[1:]] - csum[offsets[:-1]])
    seg_id = np.repeat(np.arange(nseg), np.diff(offsets))
    return _record(out, [(x, lambda g: g[seg_id])])


def segment_softmax(x: Tensor, offsets: np.ndarray) -> Tensor:
    """Softmax over contiguous segments of a column vector (n x 1)."""
    x = as_tensor(x)
    if x.shape[1] != 1:
        raise ValueError(f"segment_softmax needs an (n, 1) input, got {x.shape}")
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[-1] != x.shape[0]:
        raise ValueError("segment offsets do not cover the input rows")
    nseg = offsets.shape[0] - 1
    seg_id = np.repeat(np.arange(nseg), np.diff(offsets))
    v = x.data[:, 0]
    m = np.full(nseg, -np.inf)
    np.maximum.at(m, seg_id, v)
    e = np.exp(v - m[seg_id])
    denom = np.bincount(seg_id, weights=e, minlength=nseg)
    p = e / denom[seg_id]

    def vjp(g):
        gv = g[:, 0]
        dot = np.bincount(seg_id, weights=gv * p, minlength=nseg)
        return (p * (gv - dot[seg_id]))[:, None]

    out = Tensor(p[:, None])
    return _record(out, [(x, vjp)])


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer in one op: x @ w + b (b is a 1xd bias row)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ValueError(f"affine shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    out = Tensor(x.data @ w.data + b.data)
    return _record(
        out,
        [
            (x, lambda g: g @ w.data.T),
            (w, lambda g: x.data.T @ g),
            (b, lambda g: g.sum(axis=0, keepdims=True)),
        ],
    )


def add_scaled(a: Tensor, b: Tensor, c: float) -> Tensor:
    """a + c * b in one op, same shapes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add_scaled shape mismatch: {a.shape} + {c} * {b.shape}")
    c = float(c)
    out = Tensor(a.data + c * b.data)
    return _record(out, [(a, lambda g: g), (b, lambda g: c * g)])


def mask_blend(mask_col: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise selection: rows of ``a`` where the 0/1 mask is 1, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mask_blend shape mismatch: {a.shape} vs {b.shape}")
    mask = np.asarray(mask_col).reshape(-1, 1) != 0
    if mask.shape[0] != a.shape[0]:
        raise ValueError("mask length does not match the row count")
    out = Tensor(np.where(mask, a.data, b.data))
    return _record(
        out,
        [
            (a, lambda g: np.where(mask, g, 0.0)),
            (b, lambda g: np.where(mask, 0.0, g)),
        ],
    )


def film_modulate(base: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Feature-wise modulation in one op: (scale + 1) * base + shift."""
    base, scale, shift = as_tensor(base), as_tensor(scale), as_tensor(shift)
    if base.shape != scale.shape or base.shape != shift.shape:
        raise ValueError(
            f"film_modulate shape mismatch: {base.shape}, {scale.shape}, {shift.shape}"
        )
    out = Tensor((scale.data + 1.0) * base.data + shift.data)
    return _record(
        out,
        [
            (base, lambda g: g * (scale.data + 1.0)),
            (scale, lambda g: g * base.data),
            (shift, lambda g: g),
        ],
    )


class FixedSparse:
    """A constant sparse matrix used as a linear operator on the tape.

    The adjoint of ``y = S @ x`` is ``S.T @ g``; the transpose is converted
    to CSR once at construction.
    """

    def __init__(self, mat):
        self.fwd = _sparse.csr_matrix(mat)
        self.bwd = _sparse.csr_matrix(mat.T)

    @property
    def shape(self):
        return self.fwd.shape


def sparse_matmul(op: FixedSparse, x: Tensor) -> Tensor:
    x = as_tensor(x)
    if op.shape[1] != x.shape[0]:
        raise ValueError(f"sparse_matmul shape mismatch: {op.shape} @ {x.shape}")
    out = Tensor(op.fwd @ x.data)
    return _record(out, [(x, lambda g: op.bwd @ g)])


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale survivors.

    In eval mode (or p=0) this is a bit-exact identity and consumes no
    randomness.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    scale = keep / (1.0 - p)
    out = Tensor(x.data * scale)
    return _record(out, [(x, lambda g: g * scale)])


# --------------------------------------------------------- gradient checking


def fd_check(
    program,
    params,
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
    min_coords: int = 32,
) -> float:
    """Compare taped gradients of ``program()`` against central differences.

    ``program`` must be a deterministic closure returning a scalar Tensor
    (disable dropout). For each parameter, up to ``min_coords`` coordinates
    are sampled and perturbed by +/- eps; returns the maximum over sampled
    coordinates of ``|ad - fd| / max(1e-8, |ad| + |fd|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = program()
    if loss.requires_grad:
        tape.backward(loss)

    worst = 0.0
    for p in params:
        size = p.data.size
        chosen = rng.choice(size, size=min(min_coords, size), replace=False)
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        for flat in chosen:
            idx = np.unravel_index(int(flat), p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + eps
            f_plus = program().item()
            p.data[idx] = orig - eps
            f_minus = program().item()
            p.data[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = float(grad[idx])
            err = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            worst = max(worst, err)
    return worst
