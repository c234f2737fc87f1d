"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tape`` records every operation of one loss evaluation in creation order
(which is already a valid topological order), and ``backward`` walks the
record once, accumulating vector-Jacobian products into the watched
parameters.  Only the handful of ops needed for dense policy/value losses is
provided; everything is computed in 64-bit floats so gradient checks against
central finite differences are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, TapeError


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Parameter:
    """Named trainable float64 array."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, data) -> None:
        self.name = name
        self.data = _as_f64(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Node:
    """One value recorded on a tape, with vjp closures toward its parents."""

    __slots__ = ("tape", "data", "parents", "vjps", "index", "param")

    def __init__(
        self,
        tape: "Tape",
        data: np.ndarray,
        parents: tuple["Node", ...] = (),
        vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = (),
        param: Parameter | None = None,
    ) -> None:
        self.tape = tape
        self.data = data
        self.parents = parents
        self.vjps = vjps
        self.param = param
        self.index = tape._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _coerce(self, other) -> "Node":
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise TapeError("cannot combine nodes from different tapes")
            return other
        return self.tape.constant(other)

    # -- elementwise arithmetic (broadcasting allowed) --

    def __add__(self, other) -> "Node":
        other = self._coerce(other)
        a, b = self, other
        return Node(
            self.tape,
            a.data + b.data,
            (a, b),
            (
                lambda g: _unbroadcast(g, a.data.shape),
                lambda g: _unbroadcast(g, b.data.shape),
            ),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Node":
        other = self._coerce(other)
        a, b = self, other
        return Node(
            self.tape,
            a.data - b.data,
            (a, b),
            (
                lambda g: _unbroadcast(g, a.data.shape),
                lambda g: _unbroadcast(-g, b.data.shape),
            ),
        )

    def __rsub__(self, other) -> "Node":
        return self._coerce(other).__sub__(self)

    def __neg__(self) -> "Node":
        return Node(self.tape, -self.data, (self,), (lambda g: -g,))

    def __mul__(self, other) -> "Node":
        other = self._coerce(other)
        a, b = self, other
        return Node(
            self.tape,
            a.data * b.data,
            (a, b),
            (
                lambda g: _unbroadcast(g * b.data, a.data.shape),
                lambda g: _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    # -- nonlinearities and reductions --

    def tanh(self) -> "Node":
        out = np.tanh(self.data)
        return Node(self.tape, out, (self,), (lambda g: g * (1.0 - out * out),))

    def exp(self) -> "Node":
        out = np.exp(self.data)
        return Node(self.tape, out, (self,), (lambda g: g * out,))

    def square(self) -> "Node":
        x = self.data
        return Node(self.tape, x * x, (self,), (lambda g: g * (2.0 * x),))

    def sum(self, axis: int | None = None) -> "Node":
        x = self.data
        out = _as_f64(x.sum(axis=axis))
        if axis is None:
            vjp = lambda g: np.broadcast_to(g, x.shape).astype(np.float64)
        else:
            vjp = lambda g: np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(
                np.float64
            )
        return Node(self.tape, out, (self,), (vjp,))

    def mean(self) -> "Node":
        x = self.data
        inv = 1.0 / x.size
        return Node(
            self.tape,
            _as_f64(x.mean()),
            (self,),
            (lambda g: np.broadcast_to(g * inv, x.shape).astype(np.float64),),
        )

    def reshape(self, shape: tuple[int, ...]) -> "Node":
        x = self.data
        return Node(
            self.tape,
            x.reshape(shape),
            (self,),
            (lambda g: g.reshape(x.shape),),
        )


class Tape:
    """Operation record for one loss evaluation; consumed by one backward pass."""

    def __init__(self) -> None:
        self._nodes: list[Node] = []
        self._watched: list[Node] = []
        self._watch_map: dict[int, Node] = {}
        self._consumed = False

    def _register(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def constant(self, value) -> Node:
        return Node(self, _as_f64(value))

    def watch(self, param: Parameter) -> Node:
        """Track `param`; its gradient is collected by backward().

        Watching the same parameter twice returns the original node, so all
        gradient paths share one accumulator.
        """
        node = self._watch_map.get(id(param))
        if node is None:
            node = Node(self, param.data, param=param)
            self._watched.append(node)
            self._watch_map[id(param)] = node
        return node


def affine(x: Node, w: Node, b: Node) -> Node:
    """Batched dense layer: x @ w.T + b, with w shaped (out, in)."""
    if x.data.ndim != 2:
        raise ShapeError(f"affine expects a (batch, features) input, got {x.data.shape}")
    if w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"affine shapes do not compose: {x.data.shape} vs {w.data.shape}")
    out = x.data @ w.data.T + b.data
    return Node(
        x.tape,
        out,
        (x, w, b),
        (
            lambda g: g @ w.data,
            lambda g: g.T @ x.data,
            lambda g: g.sum(axis=0),
        ),
    )


def minimum(a: Node, b: Node) -> Node:
    """Elementwise min; on ties the gradient routes to the first argument."""
    b = a._coerce(b)
    take_a = a.data <= b.data
    return Node(
        a.tape,
        np.where(take_a, a.data, b.data),
        (a, b),
        (
            lambda g: _unbroadcast(g * take_a, a.data.shape),
            lambda g: _unbroadcast(g * ~take_a, b.data.shape),
        ),
    )


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; gradient is zero outside the open interval."""
    inside = (x.data > lo) & (x.data < hi)
    return Node(
        x.tape,
        np.clip(x.data, lo, hi),
        (x,),
        (lambda g: g * inside,),
    )


class Grads:
    """Gradient lookup for the parameters watched on a tape.

    Watched parameters that the loss never touched read back as zeros.
    """

    def __init__(self, table: dict[int, np.ndarray], params: dict[int, Parameter]) -> None:
        self._table = table
        self._params = params

    def __getitem__(self, param: Parameter) -> np.ndarray:
        got = self._table.get(id(param))
        if got is not None:
            return got
        return np.zeros_like(param.data)

    def __contains__(self, param: Parameter) -> bool:
        return id(param) in self._params

    def params(self) -> Iterable[Parameter]:
        return self._params.values()


def backward(tape: Tape, loss: Node) -> Grads:
    """Accumulate d(loss)/d(param) for every watched parameter of `tape`.

    `loss` must be a scalar node recorded on `tape`; the tape can only be
    consumed once.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.tape is not tape:
        raise TapeError("loss node does not belong to this tape")
    if loss.data.ndim != 0:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    tape._consumed = True

    grads: list[np.ndarray | None] = [None] * len(tape._nodes)
    grads[loss.index] = np.ones((), dtype=np.float64)
    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape._nodes[i]
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            if grads[parent.index] is None:
                grads[parent.index] = pg.copy() if pg.base is not None else pg
            else:
                grads[parent.index] = grads[parent.index] + pg

    table: dict[int, np.ndarray] = {}
    params: dict[int, Parameter] = {}
    for node in tape._watched:
        assert node.param is not None
        params[id(node.param)] = node.param
        g = grads[node.index]
        if g is not None:
            table[id(node.param)] = np.asarray(g, dtype=np.float64)
    return Grads(table, params)
