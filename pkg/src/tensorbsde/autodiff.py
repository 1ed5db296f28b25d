"""Reverse-mode automatic differentiation over numpy arrays.

Expressions form an acyclic graph of :class:`Expr` nodes.  Values are
computed eagerly when every input is bound, so in the common case
(constants and parameters only) building the graph is the forward pass;
graphs containing placeholders are finished by :func:`evaluate`.

Two differentiation entry points:

* :func:`backward` — numeric reverse sweep from a scalar root, returning
  a map from parameter names to gradient arrays.
* :func:`input_gradient` — symbolic reverse sweep that emits new graph
  nodes for the derivative of the output with respect to chosen leaves.
  Because the emitted derivative is itself an expression built from the
  network's parameters, running :func:`backward` through it yields exact
  second-order derivatives (gradients of input-gradients).

``input_gradient`` seeds the sweep with ones, which equals the per-row
input gradient whenever each output row depends only on the same row of
the leaf (true for the batched row-wise networks in this package).

Restrictions kept deliberately: 2-D matmul only, broadcasting only for
bias-style (B, n) + (n,) addition, binary einsum specs without repeated
indices.  Leaky ReLU at exactly zero uses the left derivative (slope).
"""

from __future__ import annotations

import math

import numpy as np

GradientMap = dict[str, np.ndarray]


class UnboundLeafError(ValueError):
    """Raised when evaluation reaches a placeholder with no binding."""


class Expr:
    """One node of an expression graph."""

    __slots__ = ("op", "parents", "value", "payload", "name")

    def __init__(self, op, parents=(), value=None, payload=None, name=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.payload = payload
        self.name = name

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        tag = f" {self.name!r}" if self.name else ""
        return f"<Expr {self.op}{tag} shape={shape}>"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return smul(-1.0, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _coerce(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def constant(x) -> Expr:
    return Expr("const", value=_coerce(x))


def parameter(name: str, x) -> Expr:
    """Named trainable leaf; backward() reports gradients under `name`."""
    return Expr("param", value=_coerce(x), name=name)


def placeholder(name: str) -> Expr:
    """Unbound input leaf; bind it via evaluate(root, {name: value})."""
    return Expr("placeholder", name=name)


def _wrap(x) -> Expr:
    return x if isinstance(x, Expr) else constant(x)


def _node(op, parents, forward, payload=None) -> Expr:
    out = Expr(op, parents=tuple(parents), payload=payload)
    if all(p.value is not None for p in out.parents):
        out.value = forward(*(p.value for p in out.parents), payload)
    return out


# ---------------------------------------------------------------------------
# forward rules


def _fw_add(a, b, _):
    return a + b


def _fw_sub(a, b, _):
    return a - b


def _fw_mul(a, b, _):
    return a * b


def _fw_smul(a, c):
    return c * a


def _fw_matmul(a, b, _):
    return a @ b


def _logcosh(y):
    # |y| + log1p(exp(-2|y|)) - log 2 equals log(cosh(y)) without overflow.
    ay = np.abs(y)
    return ay + np.log1p(np.exp(-2.0 * ay)) - math.log(2.0)


_FORWARD = {
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "smul": lambda a, c: c * a,
    "matmul": _fw_matmul,
    "transpose": lambda a, _: a.T,
    "tanh": lambda a, _: np.tanh(a),
    "leaky_relu": lambda a, slope: np.where(a > 0.0, a, slope * a),
    "leaky_relu_prime": lambda a, slope: np.where(a > 0.0, 1.0, slope),
    "logcosh": lambda a, _: _logcosh(a),
    "square": lambda a, _: a * a,
    "reshape": lambda a, shape: a.reshape(shape),
    "take": lambda a, key: a[key],
    "sum": lambda a, _: np.asarray(a.sum()),
    "mean": lambda a, _: np.asarray(a.mean()),
    "einsum2": lambda a, b, spec: np.einsum(spec, a, b),
}


def add(a, b) -> Expr:
    a, b = _wrap(a), _wrap(b)
    return _node("add", (a, b), _fw_add)


def sub(a, b) -> Expr:
    a, b = _wrap(a), _wrap(b)
    return _node("sub", (a, b), _fw_sub)


def mul(a, b) -> Expr:
    if isinstance(b, (int, float)) and not isinstance(a, (int, float)):
        return smul(float(b), _wrap(a))
    if isinstance(a, (int, float)):
        return smul(float(a), _wrap(b))
    return _node("mul", (a, b), _fw_mul)


def smul(c: float, a) -> Expr:
    a = _wrap(a)
    return _node("smul", (a,), lambda v, cc: cc * v, payload=float(c))


def matmul(a, b) -> Expr:
    a, b = _wrap(a), _wrap(b)
    return _node("matmul", (a, b), _fw_matmul)


def transpose(a) -> Expr:
    return _node("transpose", (_wrap(a),), lambda v, _: v.T)


def tanh(a) -> Expr:
    return _node("tanh", (_wrap(a),), lambda v, _: np.tanh(v))


def leaky_relu(a, slope: float = 0.01) -> Expr:
    return _node(
        "leaky_relu",
        (_wrap(a),),
        lambda v, s: np.where(v > 0.0, v, s * v),
        payload=float(slope),
    )


def _leaky_relu_prime(a, slope: float) -> Expr:
    return _node(
        "leaky_relu_prime",
        (a,),
        lambda v, s: np.where(v > 0.0, 1.0, s),
        payload=float(slope),
    )


def logcosh(a) -> Expr:
    return _node("logcosh", (_wrap(a),), lambda v, _: _logcosh(v))


def square(a) -> Expr:
    return _node("square", (_wrap(a),), lambda v, _: v * v)


def reshape(a, shape) -> Expr:
    return _node("reshape", (_wrap(a),), lambda v, s: v.reshape(s), payload=tuple(shape))


def take(a, key) -> Expr:
    """Basic slicing (slices / ints only, no advanced indexing)."""
    return _node("take", (_wrap(a),), lambda v, k: v[k], payload=key)


def sum_all(a) -> Expr:
    return _node("sum", (_wrap(a),), lambda v, _: np.asarray(v.sum()))


def mean_all(a) -> Expr:
    return _node("mean", (_wrap(a),), lambda v, _: np.asarray(v.mean()))


def einsum2(spec: str, a, b) -> Expr:
    """Binary einsum; each operand must use distinct indices."""
    _einsum_vjp_specs(spec)  # validates eagerly
    return _node(
        "einsum2", (_wrap(a), _wrap(b)), lambda x, y, s: np.einsum(s, x, y), payload=spec
    )


# ---------------------------------------------------------------------------
# evaluation


def topo_order(root: Expr) -> list[Expr]:
    """Parents-before-children ordering (iterative, deterministic)."""
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def evaluate(root: Expr, bindings: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Compute and cache values for the graph under `root`.

    `bindings` maps placeholder names to arrays.  A placeholder without a
    binding raises :class:`UnboundLeafError`.
    """
    bindings = bindings or {}
    for node in topo_order(root):
        if node.op == "placeholder":
            if node.name in bindings:
                node.value = _coerce(bindings[node.name])
            elif node.value is None:
                raise UnboundLeafError(f"placeholder {node.name!r} has no binding")
        elif node.value is None:
            node.value = _FORWARD[node.op](
                *(p.value for p in node.parents), node.payload
            )
    return root.value


# ---------------------------------------------------------------------------
# numeric reverse sweep


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` after a broadcasting add."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _take_adjoint(grad, value_shape, key):
    out = np.zeros(value_shape)
    out[key] = grad
    return out


def _einsum_vjp_specs(spec: str) -> tuple[str, str]:
    inputs, out = spec.replace(" ", "").split("->")
    a_spec, b_spec = inputs.split(",")
    for s in (a_spec, b_spec, out):
        if len(set(s)) != len(s):
            raise ValueError(f"einsum2 spec {spec!r} repeats an index")
    if not set(a_spec) <= set(out) | set(b_spec):
        raise ValueError(f"einsum2 spec {spec!r}: index of a missing from output+b")
    if not set(b_spec) <= set(out) | set(a_spec):
        raise ValueError(f"einsum2 spec {spec!r}: index of b missing from output+a")
    return (f"{out},{b_spec}->{a_spec}", f"{out},{a_spec}->{b_spec}")


def _vjp(node: Expr, grad: np.ndarray):
    """Yield (parent, parent_gradient) contributions for one node."""
    op = node.op
    a = node.parents[0]
    if op == "add":
        b = node.parents[1]
        yield a, _unbroadcast(grad, a.value.shape)
        yield b, _unbroadcast(grad, b.value.shape)
    elif op == "sub":
        b = node.parents[1]
        yield a, _unbroadcast(grad, a.value.shape)
        yield b, _unbroadcast(-grad, b.value.shape)
    elif op == "mul":
        b = node.parents[1]
        yield a, _unbroadcast(grad * b.value, a.value.shape)
        yield b, _unbroadcast(grad * a.value, b.value.shape)
    elif op == "smul":
        yield a, node.payload * grad
    elif op == "matmul":
        b = node.parents[1]
        yield a, grad @ b.value.T
        yield b, a.value.T @ grad
    elif op == "transpose":
        yield a, grad.T
    elif op == "tanh":
        yield a, grad * (1.0 - node.value * node.value)
    elif op == "leaky_relu":
        yield a, grad * np.where(a.value > 0.0, 1.0, node.payload)
    elif op == "leaky_relu_prime":
        yield a, np.zeros_like(a.value)  # piecewise constant
    elif op == "logcosh":
        yield a, grad * np.tanh(a.value)
    elif op == "square":
        yield a, grad * (2.0 * a.value)
    elif op == "reshape":
        yield a, grad.reshape(a.value.shape)
    elif op == "take":
        yield a, _take_adjoint(grad, a.value.shape, node.payload)
    elif op == "sum":
        yield a, np.broadcast_to(grad, a.value.shape)
    elif op == "mean":
        yield a, np.broadcast_to(grad / a.value.size, a.value.shape)
    elif op == "einsum2":
        b = node.parents[1]
        spec_a, spec_b = _einsum_vjp_specs(node.payload)
        yield a, np.einsum(spec_a, grad, b.value)
        yield b, np.einsum(spec_b, grad, a.value)
    else:  # const / param / placeholder
        raise AssertionError(f"leaf op {op!r} reached in reverse sweep")


def backward(root: Expr, bindings: dict[str, np.ndarray] | None = None) -> GradientMap:
    """Gradients of a scalar root with respect to every parameter leaf."""
    value = evaluate(root, bindings)
    if value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {value.shape}")
    order = topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    out: GradientMap = {}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.op == "param":
            out[node.name] = out.get(node.name, 0.0) + grad
            continue
        if node.op in ("const", "placeholder"):
            continue
        for parent, pg in _vjp(node, grad):
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    for name in out:
        out[name] = np.asarray(out[name])
    return out


# ---------------------------------------------------------------------------
# symbolic reverse sweep (derivative nodes stay differentiable)


def _symbolic_vjp(node: Expr, grad: Expr):
    op = node.op
    a = node.parents[0]
    if op == "add":
        yield a, grad
        yield node.parents[1], grad
    elif op == "sub":
        yield a, grad
        yield node.parents[1], smul(-1.0, grad)
    elif op == "mul":
        b = node.parents[1]
        yield a, mul(grad, b)
        yield b, mul(grad, a)
    elif op == "smul":
        yield a, smul(node.payload, grad)
    elif op == "matmul":
        b = node.parents[1]
        yield a, matmul(grad, transpose(b))
        yield b, matmul(transpose(a), grad)
    elif op == "transpose":
        yield a, transpose(grad)
    elif op == "tanh":
        yield a, mul(grad, sub(constant(1.0), square(node)))
    elif op == "leaky_relu":
        yield a, mul(grad, _leaky_relu_prime(a, node.payload))
    elif op == "square":
        yield a, mul(grad, smul(2.0, a))
    elif op == "reshape":
        yield a, reshape(grad, a.value.shape)
    elif op == "einsum2":
        b = node.parents[1]
        spec_a, spec_b = _einsum_vjp_specs(node.payload)
        yield a, einsum2(spec_a, grad, b)
        yield b, einsum2(spec_b, grad, a)
    else:
        raise NotImplementedError(
            f"no symbolic derivative rule for op {op!r}; "
            "input_gradient supports network-forward ops only"
        )


def input_gradient(output: Expr, leaves: list[Expr]) -> list[Expr]:
    """Graph nodes for d(sum output)/d leaf, one per requested leaf.

    The returned expressions remain functions of every parameter the
    output depends on, so backward() through them differentiates the
    input-gradient with respect to the parameters.  For row-wise batched
    networks the sum-seed equals the per-row gradient.
    """
    evaluate(output)
    wanted = {id(leaf) for leaf in leaves}
    needs: dict[int, bool] = {}
    order = topo_order(output)
    for node in order:  # parents first
        needs[id(node)] = id(node) in wanted or any(
            needs[id(p)] for p in node.parents
        )
    if not needs[id(output)]:
        raise ValueError("output does not depend on the requested leaves")
    grads: dict[int, Expr] = {id(output): constant(np.ones_like(output.value))}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None or id(node) in wanted:
            if grad is not None:
                grads[id(node)] = grad  # keep leaf grads
            continue
        if not node.parents:
            continue
        for parent, pg in _symbolic_vjp(node, grad):
            if not needs[id(parent)]:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else add(acc, pg)
    result = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = constant(np.zeros_like(leaf.value))
        result.append(g)
    return result
