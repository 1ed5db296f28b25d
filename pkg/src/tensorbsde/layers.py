"""Network architectures: dense layers, MPO-factorised layers, losses, Adam.

Architecture naming follows the two-hidden-layer family used throughout:

* ``DNN(a,b)`` — dense layer of width a, dense layer of width b.
* ``TNN(x)`` — dense layer of width x, then an MPO-factorised layer of
  width x whose weight matrix is contracted from its two rank-3 tensors
  on every forward pass; the tensor entries are the trainable
  parameters.
* ``TNN_INIT(x)`` — same shape as DNN(x,x), but the second weight matrix
  is initialised by contracting a random MPO once; training then updates
  the dense matrix directly.

All networks end in a linear dense output head of width 1 (the head and
zero bias initialisation are implementation choices; they are not part
of the architecture names).  Weight matrices are stored (fan_in,
fan_out) and applied to row batches as ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import uniform_generator
from .tensorops import MpoPair, contract_mpo

ACTIVATIONS = ("tanh", "leaky_relu")
LEAKY_SLOPE = 0.01


def _balanced_factors(width: int) -> tuple[int, int]:
    """Factor width into (p, q), p <= q, with p the largest divisor <= sqrt."""
    p = int(np.sqrt(width))
    while width % p:
        p -= 1
    return p, width // p


@dataclass(frozen=True)
class NetworkSpec:
    """Descriptor for one two-hidden-layer architecture."""

    kind: str  # "DNN" | "TNN" | "TNN_INIT"
    widths: tuple[int, int]
    bond_dim: int | None = None
    activation: str = "tanh"
    input_dim: int = 3
    output_dim: int = 1

    def __post_init__(self):
        if self.kind not in ("DNN", "TNN", "TNN_INIT"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if len(self.widths) != 2 or min(self.widths) < 1:
            raise ValueError(f"widths must be two positive ints, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("TNN", "TNN_INIT"):
            if self.bond_dim is None or self.bond_dim < 1:
                raise ValueError(f"{self.kind} needs a positive bond_dim")
            if self.widths[0] != self.widths[1]:
                raise ValueError(f"{self.kind} uses equal layer widths, got {self.widths}")
            p, q = _balanced_factors(self.widths[1])
            if self.kind == "TNN" and p != q:
                raise ValueError(
                    f"TNN width {self.widths[1]} is not a perfect square"
                )
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")

    @property
    def name(self) -> str:
        if self.kind == "DNN":
            return f"DNN({self.widths[0]},{self.widths[1]})"
        return f"{self.kind}({self.widths[1]})"

    @property
    def phys_dims(self) -> tuple[int, int] | None:
        if self.kind == "DNN":
            return None
        return _balanced_factors(self.widths[1])


def parse_architecture(
    name: str,
    bond_dim: int = 2,
    activation: str = "tanh",
    input_dim: int = 3,
    output_dim: int = 1,
) -> NetworkSpec:
    """Parse "DNN(4,24)" / "TNN(16)" / "TNN_INIT(16)" into a spec."""
    text = name.strip().replace(" ", "")
    if not text.endswith(")") or "(" not in text:
        raise ValueError(f"cannot parse architecture name {name!r}")
    kind, args = text[:-1].split("(", 1)
    parts = [int(x) for x in args.split(",")]
    if kind == "DNN":
        if len(parts) != 2:
            raise ValueError(f"DNN takes two widths, got {name!r}")
        widths = (parts[0], parts[1])
        bd = None
    elif kind in ("TNN", "TNN_INIT"):
        if len(parts) != 1:
            raise ValueError(f"{kind} takes one width, got {name!r}")
        widths = (parts[0], parts[0])
        bd = bond_dim
    else:
        raise ValueError(f"unknown architecture kind in {name!r}")
    return NetworkSpec(
        kind=kind,
        widths=widths,
        bond_dim=bd,
        activation=activation,
        input_dim=input_dim,
        output_dim=output_dim,
    )


def param_count(spec: NetworkSpec) -> int:
    """Exact trainable-parameter total, biases included."""
    w1, w2 = spec.widths
    total = spec.input_dim * w1 + w1
    if spec.kind == "TNN":
        p, q = _balanced_factors(w2)
        total += spec.bond_dim * (p * p + q * q) + w2
    else:
        total += w1 * w2 + w2
    total += w2 * spec.output_dim + spec.output_dim
    return total


# ---------------------------------------------------------------------------
# initialisation


def init_glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix: entries on +-sqrt(6/(fan_in+fan_out))."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"shape must be positive, got {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_mpo(d: int | tuple[int, int], chi: int, rng: np.random.Generator) -> MpoPair:
    """Random MpoPair, each tensor Glorot-uniform on its (dim*chi, dim) unfolding."""
    p, q = (d, d) if isinstance(d, int) else d
    if min(p, q, chi) < 1:
        raise ValueError("physical and bond dimensions must be positive")
    lim1 = np.sqrt(6.0 / (p * chi + p))
    lim2 = np.sqrt(6.0 / (q * chi + q))
    w1 = rng.uniform(-lim1, lim1, size=(p, chi, p))
    w2 = rng.uniform(-lim2, lim2, size=(chi, q, q))
    return MpoPair(w1, w2)


def tnn_init_weights(
    d: int | tuple[int, int], chi: int, rng: np.random.Generator
) -> np.ndarray:
    """Dense weight matrix obtained by contracting a fresh random MPO.

    The result has Kronecker rank at most chi but is trained afterwards
    as an ordinary dense matrix.
    """
    return contract_mpo(init_mpo(d, chi, rng))


# ---------------------------------------------------------------------------
# layers and networks


class DenseLayer:
    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str | None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.activation = activation

    def weight_matrix(self) -> np.ndarray:
        return self.weight

    def parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def forward_expr(self, x: ad.Expr, prefix: str) -> ad.Expr:
        w = ad.parameter(f"{prefix}.weight", self.weight)
        b = ad.parameter(f"{prefix}.bias", self.bias)
        return _activate(ad.add(ad.matmul(x, w), b), self.activation)


class TNLayer:
    """Layer whose weight matrix is contracted from an MpoPair each pass."""

    def __init__(self, mpo: MpoPair, bias: np.ndarray, activation: str | None):
        self.mpo = mpo
        self.bias = np.asarray(bias, dtype=np.float64)
        self.activation = activation

    def weight_matrix(self) -> np.ndarray:
        return contract_mpo(self.mpo)

    def parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.w1": self.mpo.w1,
            f"{prefix}.w2": self.mpo.w2,
            f"{prefix}.bias": self.bias,
        }

    def forward_expr(self, x: ad.Expr, prefix: str) -> ad.Expr:
        w1 = ad.parameter(f"{prefix}.w1", self.mpo.w1)
        w2 = ad.parameter(f"{prefix}.w2", self.mpo.w2)
        width = self.mpo.width
        contracted = ad.reshape(ad.einsum2("uav,aij->uivj", w1, w2), (width, width))
        b = ad.parameter(f"{prefix}.bias", self.bias)
        return _activate(ad.add(ad.matmul(x, contracted), b), self.activation)


def _activate(z: ad.Expr, activation: str | None) -> ad.Expr:
    if activation is None:
        return z
    if activation == "tanh":
        return ad.tanh(z)
    if activation == "leaky_relu":
        return ad.leaky_relu(z, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {activation!r}")


def _apply_activation(z: np.ndarray, activation: str | None) -> np.ndarray:
    if activation is None:
        return z
    if activation == "tanh":
        return np.tanh(z)
    if activation == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    raise ValueError(f"unknown activation {activation!r}")


class Network:
    """A built architecture: two hidden layers plus a linear head."""

    def __init__(self, spec: NetworkSpec, layers: list):
        self.spec = spec
        self.layers = layers

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"layer{i}"))
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass for a (batch, input_dim) array."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.spec.input_dim:
            raise ValueError(
                f"expected (batch, {self.spec.input_dim}) input, got {h.shape}"
            )
        if not np.all(np.isfinite(h)):
            raise ValueError("network input contains non-finite values")
        for layer in self.layers:
            h = _apply_activation(h @ layer.weight_matrix() + layer.bias, layer.activation)
        return h

    def forward_expr(self, x: ad.Expr) -> ad.Expr:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward_expr(h, f"layer{i}")
        return h


def build_network(spec: NetworkSpec, seed: int) -> Network:
    """Construct and initialise a network; same (spec, seed) gives the
    same parameters."""
    rng = uniform_generator(seed, stream=0)
    w1, w2 = spec.widths
    act = spec.activation
    layers: list = [
        DenseLayer(init_glorot((spec.input_dim, w1), rng), np.zeros(w1), act)
    ]
    if spec.kind == "TNN":
        mpo = init_mpo(spec.phys_dims, spec.bond_dim, rng)
        layers.append(TNLayer(mpo, np.zeros(w2), act))
    elif spec.kind == "TNN_INIT":
        weight = tnn_init_weights(spec.phys_dims, spec.bond_dim, rng)
        layers.append(DenseLayer(weight, np.zeros(w2), act))
    else:
        layers.append(DenseLayer(init_glorot((w1, w2), rng), np.zeros(w2), act))
    layers.append(
        DenseLayer(init_glorot((w2, spec.output_dim), rng), np.zeros(spec.output_dim), None)
    )
    return Network(spec, layers)


# ---------------------------------------------------------------------------
# persistence

FORMAT_VERSION = 1


def network_to_dict(net: Network) -> dict:
    spec = net.spec
    return {
        "format_version": FORMAT_VERSION,
        "spec": {
            "kind": spec.kind,
            "widths": list(spec.widths),
            "bond_dim": spec.bond_dim,
            "activation": spec.activation,
            "input_dim": spec.input_dim,
            "output_dim": spec.output_dim,
        },
        "params": {name: arr.tolist() for name, arr in net.parameters().items()},
    }


def network_from_dict(data: dict) -> Network:
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format {data.get('format_version')!r}")
    s = data["spec"]
    spec = NetworkSpec(
        kind=s["kind"],
        widths=tuple(s["widths"]),
        bond_dim=s["bond_dim"],
        activation=s["activation"],
        input_dim=s["input_dim"],
        output_dim=s["output_dim"],
    )
    net = build_network(spec, seed=0)
    for name, arr in net.parameters().items():
        stored = np.asarray(data["params"][name], dtype=np.float64)
        if stored.shape != arr.shape:
            raise ValueError(f"parameter {name} has shape {stored.shape}, want {arr.shape}")
        arr[...] = stored
    return net


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# losses and optimiser


def logcosh_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean log-cosh of the residuals (overflow-safe for large residuals)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: {predictions.shape} vs {targets.shape}"
        )
    return float(np.mean(ad._logcosh(predictions - targets)))


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: {predictions.shape} vs {targets.shape}"
        )
    return float(np.mean((predictions - targets) ** 2))


@dataclass
class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    params: dict[str, np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict)
    _v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self._m[name] = np.zeros_like(p)
            self._v[name] = np.zeros_like(p)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} of shape {p.shape}"
                )
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
