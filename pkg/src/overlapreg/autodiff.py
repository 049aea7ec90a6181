"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; ops build the
graph eagerly and `Tensor.backward()` walks it once in reverse topological
order. Only the operations the registration network needs are provided. All
arithmetic stays in float64; forward passes are deterministic functions of
their inputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

F64 = np.float64
Array = NDArray[np.float64]


class Tensor:
    """Node of the autodiff graph.

    `grad` is lazily allocated during backward. Leaf tensors created with
    requires_grad=True act as parameters; everything else derives its flag
    from its parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: object,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ) -> None:
        self.data = np.asarray(data, dtype=F64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def grad_buffer(self) -> Array:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def constant(data: object) -> Tensor:
    return Tensor(data, requires_grad=False)


def _result(data: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        parents=tuple(parents),
        backward=backward if requires else None,
    )


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("add requires equal shapes")

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("sub requires equal shapes")

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _result(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("mul requires equal shapes")

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), bwd)


def add_const(x: Tensor, c: object) -> Tensor:
    c_arr = np.asarray(c, dtype=F64)

    def bwd(g: Array) -> None:
        x.accumulate(g)

    return _result(x.data + c_arr, (x,), bwd)


def mul_const(x: Tensor, c: object) -> Tensor:
    c_arr = np.asarray(c, dtype=F64)
    out = x.data * c_arr
    if out.shape != x.data.shape:
        raise ValueError("constant factor must broadcast to the tensor shape")

    def bwd(g: Array) -> None:
        x.accumulate(g * c_arr)

    return _result(out, (x,), bwd)


def const_minus(c: object, x: Tensor) -> Tensor:
    c_arr = np.asarray(c, dtype=F64)

    def bwd(g: Array) -> None:
        x.accumulate(-g)

    return _result(c_arr - x.data, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bwd)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materialising a transpose node."""

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g @ b.data)
        if b.requires_grad:
            b.accumulate(g.T @ a.data)

    return _result(a.data @ b.data.T, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def bwd(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat_cols needs at least one tensor")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def bwd(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate(g[:, lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, bwd)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    def bwd(g: Array) -> None:
        buf = x.grad_buffer()
        buf[:, lo:hi] += g

    return _result(x.data[:, lo:hi].copy(), (x,), bwd)


def gather_rows(x: Tensor, index: NDArray[np.int64]) -> Tensor:
    """y[i] = x[index[i]]; repeated indices accumulate gradient."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("index must be one-dimensional")
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    boundaries = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    rows = sorted_idx[boundaries]

    def bwd(g: Array) -> None:
        seg = np.add.reduceat(g[order], boundaries, axis=0)
        buf = x.grad_buffer()
        buf[rows] += seg

    return _result(x.data[idx], (x,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalisation
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    # subgradient at zero takes the positive-side slope
    gate = np.where(x.data >= 0.0, 1.0, slope)

    def bwd(g: Array) -> None:
        x.accumulate(g * gate)

    return _result(x.data * gate, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    y = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def bwd(g: Array) -> None:
        x.accumulate(g * y * (1.0 - y))

    return _result(y, (x,), bwd)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each channel over the row dimension of a single instance."""
    n = x.data.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    y = xhat * gamma.data + beta.data

    def bwd(g: Array) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = n * dxhat - dxhat.sum(axis=0, keepdims=True) - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
            x.accumulate(ivar / n * term)

    return _result(y, (x, gamma, beta), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g: Array) -> None:
        dot = (g * y).sum(axis=1, keepdims=True)
        x.accumulate(y * (g - dot))

    return _result(y, (x,), bwd)


def l2_normalize_rows(x: Tensor) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True) + 1e-24)
    y = x.data / norm

    def bwd(g: Array) -> None:
        dot = (g * y).sum(axis=1, keepdims=True)
        x.accumulate((g - y * dot) / norm)

    return _result(y, (x,), bwd)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def neighborhood_max(x: Tensor, k: int) -> Tensor:
    """Channelwise max over consecutive groups of k rows; (n*k, c) -> (n, c).

    Gradient flows to the first maximiser of each group and channel.
    """
    rows, c = x.data.shape
    if rows % k != 0:
        raise ValueError("row count must be divisible by k")
    n = rows // k
    cube = x.data.reshape(n, k, c)
    args = cube.argmax(axis=1)
    y = np.take_along_axis(cube, args[:, None, :], axis=1)[:, 0, :]

    def bwd(g: Array) -> None:
        buf = np.zeros((n, k, c))
        np.put_along_axis(buf, args[:, None, :], g[:, None, :], axis=1)
        x.accumulate(buf.reshape(rows, c))

    return _result(y, (x,), bwd)


def segment_max(x: Tensor, order: NDArray[np.int64], starts: NDArray[np.int64]) -> Tensor:
    """Channelwise max over row segments.

    `order` lists row indices of x grouped segment by segment and `starts`
    marks each segment's first position in `order`. Rows may appear in more
    than one segment. Output row s is the max over segment s.
    """
    order = np.asarray(order, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    xs = x.data[order]
    n_seg = len(starts)
    c = x.data.shape[1]
    ends = np.r_[starts[1:], len(order)]
    vals = np.empty((n_seg, c))
    arg_rows = np.empty((n_seg, c), dtype=np.int64)
    for s in range(n_seg):
        seg = xs[starts[s] : ends[s]]
        a = seg.argmax(axis=0)
        vals[s] = seg[a, np.arange(c)]
        arg_rows[s] = order[starts[s] + a]

    cols = np.tile(np.arange(c), n_seg)

    def bwd(g: Array) -> None:
        buf = x.grad_buffer()
        np.add.at(buf, (arg_rows.ravel(), cols), g.ravel())

    return _result(vals, (x,), bwd)


# ---------------------------------------------------------------------------
# distances, reductions, scalar maps
# ---------------------------------------------------------------------------


def pairwise_dist(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance matrix of row vectors: (n, c) x (m, c) -> (n, m).

    Coincident pairs get zero gradient (the distance is not differentiable
    there).
    """
    a2 = (a.data * a.data).sum(axis=1)[:, None]
    b2 = (b.data * b.data).sum(axis=1)[None, :]
    sq = np.maximum(a2 + b2 - 2.0 * (a.data @ b.data.T), 0.0)
    d = np.sqrt(sq)

    def bwd(g: Array) -> None:
        w = np.where(d > 1e-12, g / np.where(d > 1e-12, d, 1.0), 0.0)
        if a.requires_grad:
            a.accumulate(w.sum(axis=1)[:, None] * a.data - w @ b.data)
        if b.requires_grad:
            b.accumulate(w.sum(axis=0)[:, None] * b.data - w.T @ a.data)

    return _result(d, (a, b), bwd)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bwd(g: Array) -> None:
        x.accumulate(g * y)

    return _result(y, (x,), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        x.accumulate(g / x.data)

    return _result(np.log(x.data), (x,), bwd)


def log1p(x: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        x.accumulate(g / (1.0 + x.data))

    return _result(np.log1p(x.data), (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def bwd(g: Array) -> None:
        x.accumulate(g * inside)

    return _result(np.clip(x.data, lo, hi), (x,), bwd)


def rowsum(x: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        x.accumulate(np.broadcast_to(g[:, None], x.data.shape))

    return _result(x.data.sum(axis=1), (x,), bwd)


def total_sum(x: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        x.accumulate(np.broadcast_to(g, x.data.shape))

    return _result(x.data.sum(), (x,), bwd)


def mean(x: Tensor) -> Tensor:
    size = x.data.size

    def bwd(g: Array) -> None:
        x.accumulate(np.broadcast_to(g / size, x.data.shape))

    return _result(x.data.mean(), (x,), bwd)


# ---------------------------------------------------------------------------
# parameters and optimisation
# ---------------------------------------------------------------------------


class ParamStore:
    """Named parameter tensors with seeded initialisation and SGD state.

    Insertion order is the canonical parameter order; initialisation draws
    consume the store's generator in that order, so a store is reproducible
    from its seed and the sequence of add_* calls.
    """

    def __init__(self, seed: int = 0) -> None:
        self.params: dict[str, Tensor] = {}
        self.velocity: dict[str, Array] = {}
        self.init_records: dict[str, str] = {}
        self.seed = int(seed)
        self._rng = np.random.default_rng(seed)

    def add(self, name: str, value: Array, scheme: str = "explicit") -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(value, dtype=F64), requires_grad=True)
        self.params[name] = t
        self.init_records[name] = scheme
        return t

    def add_linear(self, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.add(
            f"{name}.weight",
            self._rng.uniform(-limit, limit, size=(n_in, n_out)),
            scheme="glorot_uniform",
        )
        if bias:
            self.add(f"{name}.bias", np.zeros(n_out), scheme="zeros")

    def add_norm(self, name: str, dim: int) -> None:
        self.add(f"{name}.gamma", np.ones(dim), scheme="ones")
        self.add(f"{name}.beta", np.zeros(dim), scheme="zeros")

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict[str, Array]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, Array]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=F64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def sgd_step(store: ParamStore, lr: float, momentum: float, weight_decay: float) -> ParamStore:
    """Classical momentum update; raises on non-finite gradients, naming the parameter."""
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        v = store.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            store.velocity[name] = v
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= lr * v
        p.grad = None
    return store


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    probes_per_param: int = 4,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of the scalar `f()` against central differences.

    Returns the worst relative error over randomly probed coordinates, with
    the denominator floored at 1 so tiny gradients are compared absolutely.
    `f` must be deterministic and must depend on `params` only through their
    `.data` arrays.
    """
    for t in params.values():
        t.grad = None
    loss = f()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n_probe = min(probes_per_param, flat.size)
        coords = rng.choice(flat.size, size=n_probe, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f().data)
            flat[i] = orig - step
            f_minus = float(f().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            ad = float(analytic[name].reshape(-1)[i])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1.0)
            worst = max(worst, rel)
    for t in params.values():
        t.grad = None
    return worst
