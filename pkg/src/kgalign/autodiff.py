"""Dense 2-D tensors with reverse-mode automatic differentiation.

Covers exactly what the alignment encoders need: matmul, column
concatenation/slicing, elementwise arithmetic, ReLU, sigmoid, row gathers,
segment softmax / weighted segment sums over edge lists, L1 row distances,
and an Adam optimizer. Everything is float64 and strictly 2-D; broadcasting
is limited to scalar (1x1), row (1,d) and column (n,1) operands. Segment
ops treat columns independently, so a (rows x heads) score block is h
independent per-segment softmaxes.

Forward kernels are plain numpy; scatter reductions use ``np.add.at`` /
``np.maximum.at``, which run sequentially, so single-threaded results are
bit-identical across runs.
"""

from __future__ import annotations

import base64
from pathlib import Path

import numpy as np

__all__ = [
    "Tensor",
    "SegmentIndex",
    "Adam",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "relu",
    "sigmoid",
    "concat_cols",
    "slice_cols",
    "gather_rows",
    "segment_softmax",
    "segment_sum",
    "l1_distance_rows",
    "sum_all",
    "save_tensors",
    "load_tensors",
]


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 array plus an optional gradient accumulator.

    Leaf tensors created with ``requires_grad=True`` are trainable
    parameters; tensors returned by ops carry the tape needed to reach
    them on ``backward()``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_grad_fns")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = _as_matrix(values)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: tuple | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar (1x1) tensor, got {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._grad_fns is None or node.grad is None:
                continue
            g = node.grad
            for parent, fn in zip(node._parents, node._grad_fns):
                if parent.requires_grad:
                    parent._accumulate(fn(g))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor {self.shape}{tag} requires_grad={self.requires_grad}>"

    # operator sugar, all routed through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fns: tuple) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fns = grad_fns
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for ax in (0, 1):
        if a.shape[ax] != b.shape[ax] and 1 not in (a.shape[ax], b.shape[ax]):
            raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    for ax in (0, 1):
        if shape[ax] == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "add")
    return _node(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "sub")
    return _node(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(t.data * c, (t,), (lambda g: g * c,))


def shift(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(t.data + c, (t,), (lambda g: g,))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0.0
    # np.maximum (unlike where) propagates NaN, so divergence stays visible
    return _node(np.maximum(t.data, 0.0), (t,), (lambda g: g * mask,))


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (t,), (lambda g: g * out * (1.0 - out),))


def concat_cols(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise ValueError("concat_cols needs at least one tensor")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ValueError(
                f"concat_cols: row mismatch {tensors[0].shape} vs {t.shape}"
            )
    offsets = np.cumsum([0] + [t.shape[1] for t in tensors])

    def make_fn(i: int):
        return lambda g: g[:, offsets[i] : offsets[i + 1]]

    return _node(
        np.concatenate([t.data for t in tensors], axis=1),
        tuple(tensors),
        tuple(make_fn(i) for i in range(len(tensors))),
    )


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= t.shape[1]):
        raise ValueError(f"slice_cols: [{start}:{stop}] out of range for shape {t.shape}")

    def backward(g: np.ndarray) -> np.ndarray:
        gt = np.zeros_like(t.data)
        gt[:, start:stop] = g
        return gt

    return _node(t.data[:, start:stop].copy(), (t,), (backward,))


def gather_rows(t: Tensor, index) -> Tensor:
    """Rows of ``t`` selected by an integer index; scatter-add on backward."""
    idx = np.asarray(index, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {t.shape[0]} rows")

    def backward(g: np.ndarray) -> np.ndarray:
        gt = np.zeros_like(t.data)
        np.add.at(gt, idx, g)
        return gt

    return _node(t.data[idx], (t,), (backward,))


class SegmentIndex:
    """Maps each edge row to the segment (e.g. head entity) it belongs to."""

    __slots__ = ("ids", "n_segments")

    def __init__(self, ids, n_segments: int):
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
            raise ValueError(
                f"segment ids must lie in [0, {n_segments}), got max {ids.max()}"
            )
        self.ids = ids
        self.n_segments = int(n_segments)

    def __len__(self) -> int:
        return self.ids.size


def segment_softmax(scores: Tensor, seg: SegmentIndex) -> Tensor:
    """Softmax within each segment, independently per column.

    Stabilized by per-segment max subtraction; outputs in every non-empty
    segment are positive and sum to 1 per column.
    """
    if scores.shape[0] != len(seg):
        raise ValueError(
            f"segment_softmax: {scores.shape[0]} rows vs {len(seg)} segment ids"
        )
    x = scores.data
    ids = seg.ids
    peak = np.full((seg.n_segments, x.shape[1]), -np.inf)
    np.maximum.at(peak, ids, x)
    e = np.exp(x - peak[ids])
    denom = np.zeros((seg.n_segments, x.shape[1]))
    np.add.at(denom, ids, e)
    out = e / denom[ids]

    def backward(g: np.ndarray) -> np.ndarray:
        inner = np.zeros((seg.n_segments, x.shape[1]))
        np.add.at(inner, ids, out * g)
        return out * (g - inner[ids])

    return _node(out, (scores,), (backward,))


def segment_sum(rows: Tensor, weights: Tensor, seg: SegmentIndex) -> Tensor:
    """Weighted per-segment sum: out[s] = sum over rows in s of w*row.

    Segments with no rows come out as zero rows.
    """
    if rows.shape[0] != len(seg):
        raise ValueError(f"segment_sum: {rows.shape[0]} rows vs {len(seg)} segment ids")
    if weights.shape != (rows.shape[0], 1):
        raise ValueError(
            f"segment_sum: weights must be ({rows.shape[0]}, 1), got {weights.shape}"
        )
    ids = seg.ids
    out = np.zeros((seg.n_segments, rows.shape[1]))
    np.add.at(out, ids, weights.data * rows.data)

    def backward_rows(g: np.ndarray) -> np.ndarray:
        return weights.data * g[ids]

    def backward_weights(g: np.ndarray) -> np.ndarray:
        return (rows.data * g[ids]).sum(axis=1, keepdims=True)

    return _node(out, (rows, weights), (backward_rows, backward_weights))


def l1_distance_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Manhattan distance, shape (n, 1)."""
    if a.shape != b.shape:
        raise ValueError(f"l1_distance_rows: shape mismatch {a.shape} vs {b.shape}")
    diff_sign = np.sign(a.data - b.data)
    out = np.abs(a.data - b.data).sum(axis=1, keepdims=True)
    return _node(out, (a, b), (lambda g: g * diff_sign, lambda g: -g * diff_sign))


def sum_all(t: Tensor) -> Tensor:
    out = np.array([[t.data.sum()]])
    return _node(out, (t,), (lambda g: np.full_like(t.data, g[0, 0]),))


class Adam:
    """Adam with bias correction; grads are zeroed after each step.

    A parameter whose grad is still ``None`` is treated as zero-gradient.
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def save_tensors(path, named: dict[str, Tensor | np.ndarray]) -> None:
    """Write a flat named-tensor file: name, rows, cols, base64 of <f8 bytes."""
    lines = []
    for name, t in named.items():
        if "\t" in name or "\n" in name:
            raise ValueError(f"tensor name may not contain tabs or newlines: {name!r}")
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
        payload = base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")
        lines.append(f"{name}\t{arr.shape[0]}\t{arr.shape[1]}\t{payload}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
        name, rows, cols, payload = parts
        arr = np.frombuffer(base64.b64decode(payload), dtype="<f8").astype(np.float64)
        out[name] = arr.reshape(int(rows), int(cols))
    return out
