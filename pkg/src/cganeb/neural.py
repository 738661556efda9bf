"""Small dense-network engine used by the CGAN.

Only what the generator and discriminator need: dense layers with ELU,
ReLU, Sigmoid or linear activations, an optional two-branch input that is
concatenated before a shared trunk, binary cross-entropy, Adam with
inverse-time learning-rate decay and a finite-difference gradient check.
Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("elu", "relu", "sigmoid", "linear")
BCE_EPS = 1e-7


class StaleCacheError(RuntimeError):
    """Raised when backward() receives a cache from another forward state."""


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "elu":
        # expm1(min(x, 0)) >= x wherever x <= 0, so the max selects the right branch
        y = np.expm1(np.minimum(x, 0.0))
        return np.maximum(x, y, out=y)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "linear":
        return x
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``x`` (output ``y``)."""
    if name == "elu":
        return np.minimum(y, 0.0) + 1.0
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "linear":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    biases: np.ndarray  # (fan_out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError("weights must be (in, out) and biases (out,)")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(cls, fan_in: int, fan_out: int, activation: str, rng: np.random.Generator):
        """He-style uniform initialisation scaled by fan-in, zero biases."""
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(w, np.zeros(fan_out), activation)


@dataclass
class Network:
    """Dense network with one or more input branches feeding a shared trunk.

    With several branches, each branch output is concatenated (in branch
    order) before the trunk.  A single-branch network with an empty trunk is
    a plain stack of layers.
    """

    branches: list[list[DenseLayer]]
    trunk: list[DenseLayer]
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.branches:
            raise ValueError("network needs at least one input branch")
        width = 0
        for branch in self.branches:
            if not branch:
                raise ValueError("empty branch")
            for a, b in zip(branch, branch[1:]):
                if a.fan_out != b.fan_in:
                    raise ValueError("incompatible layer dimensions in branch")
            width += branch[-1].fan_out
        for layer in self.trunk:
            if layer.fan_in != width:
                raise ValueError(
                    f"trunk layer expects {layer.fan_in} inputs, got {width}")
            width = layer.fan_out

    @property
    def input_dims(self) -> list[int]:
        return [b[0].fan_in for b in self.branches]

    @property
    def output_dim(self) -> int:
        return (self.trunk or self.branches[-1])[-1].fan_out

    def layers(self) -> list[DenseLayer]:
        out = [layer for branch in self.branches for layer in branch]
        return out + list(self.trunk)

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order: each layer's weights then biases."""
        params = []
        for layer in self.layers():
            params.append(layer.weights)
            params.append(layer.biases)
        return params

    def copy(self) -> Network:
        def dup(layers):
            return [DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in layers]
        return Network([dup(b) for b in self.branches], dup(self.trunk))

    def to_dict(self) -> dict:
        def enc(layers):
            return [{
                "in": l.fan_in,
                "out": l.fan_out,
                "activation": l.activation,
                "weights": l.weights.tolist(),
                "biases": l.biases.tolist(),
            } for l in layers]
        return {"branches": [enc(b) for b in self.branches], "trunk": enc(self.trunk)}

    @classmethod
    def from_dict(cls, data: dict) -> Network:
        def dec(layers):
            return [DenseLayer(np.array(l["weights"], dtype=np.float64).reshape(l["in"], l["out"]),
                               np.array(l["biases"], dtype=np.float64), l["activation"])
                    for l in layers]
        return cls([dec(b) for b in data["branches"]], dec(data["trunk"]))


@dataclass
class ForwardCache:
    net_id: int
    version: int
    # per layer, in Network.layers() order: (input, pre-activation, output)
    records: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    branch_widths: list[int]


def _as_inputs(net: Network, inputs) -> list[np.ndarray]:
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    inputs = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in inputs]
    if len(inputs) != len(net.branches):
        raise ValueError(f"network takes {len(net.branches)} inputs, got {len(inputs)}")
    n = inputs[0].shape[0]
    for x, dim in zip(inputs, net.input_dims):
        if x.shape[1] != dim:
            raise ValueError(f"input has {x.shape[1]} columns, layer expects {dim}")
        if x.shape[0] != n:
            raise ValueError("inputs disagree on batch size")
    return inputs


def _run(layer: DenseLayer, x: np.ndarray, records: list):
    z = x @ layer.weights + layer.biases
    y = activate(layer.activation, z)
    records.append((x, z, y))
    return y


def forward(net: Network, inputs) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch; ``inputs`` is one array per branch."""
    inputs = _as_inputs(net, inputs)
    records: list = []
    outs = []
    for branch, x in zip(net.branches, inputs):
        for layer in branch:
            x = _run(layer, x, records)
        outs.append(x)
    h = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)
    for layer in net.trunk:
        h = _run(layer, h, records)
    cache = ForwardCache(id(net), net.version, records, [o.shape[1] for o in outs])
    return h, cache


def predict(net: Network, inputs) -> np.ndarray:
    return forward(net, inputs)[0]


def backward(net: Network, cache: ForwardCache, upstream: np.ndarray,
             need_params: bool = True, need_inputs: bool = True):
    """Backpropagate ``upstream`` = dLoss/dOutput.

    Returns ``(param_grads, input_grads)``: gradients aligned with
    ``net.parameters()`` and one gradient array per input branch.  Either
    part can be skipped (returned as ``None``) to save work.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache does not match the current network state")
    grad = np.asarray(upstream, dtype=np.float64)
    records = cache.records
    grads: list | None = [None] * (2 * len(records)) if need_params else None

    def back(layer, k, g, want_input=True):
        x, z, y = records[k]
        delta = g * activation_grad(layer.activation, z, y)
        if grads is not None:
            grads[2 * k] = x.T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
        return delta @ layer.weights.T if want_input else None

    k = len(records) - 1
    for layer in reversed(net.trunk):
        grad = back(layer, k, grad)
        k -= 1

    if len(net.branches) > 1:
        branch_grads = np.split(grad, np.cumsum(cache.branch_widths)[:-1], axis=1)
    else:
        branch_grads = [grad]
    input_grads = [] if need_inputs else None
    off = 0
    for branch, g in zip(net.branches, branch_grads):
        for j in range(len(branch) - 1, -1, -1):
            g = back(branch[j], off + j, g, want_input=j > 0 or need_inputs)
        if need_inputs:
            input_grads.append(g)
        off += len(branch)
    return grads, input_grads


def bce_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    n = p.size
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    grad = (p - t) / (p * (1.0 - p)) / n
    return float(loss), grad


@dataclass
class AdamState:
    lr: float = 0.001
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    epoch: int = 0  # drives the inverse-time decay
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @property
    def effective_lr(self) -> float:
        return self.lr / (1.0 + self.decay * self.epoch)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied in place. Returns ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif any(m.shape != p.shape for m, p in zip(state.m, params)) or len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameters")
    state.t += 1
    lr = state.effective_lr
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def apply_adam(net: Network, grads: list[np.ndarray], state: AdamState) -> None:
    """Adam step on a network's parameters; invalidates earlier caches."""
    adam_step(net.parameters(), grads, state)
    net.version += 1


def _loss_and_grad(out, target, loss):
    if loss == "mse":
        diff = out - target
        return 0.5 * float(np.sum(diff * diff)), diff
    if loss == "bce":
        return bce_loss(out, target)
    raise ValueError(f"unknown loss {loss!r}")


def _relu_masks(net: Network, inputs):
    _, cache = forward(net, inputs)
    return [r[1] > 0 for layer, r in zip(net.layers(), cache.records) if layer.activation == "relu"]


def gradient_check(net: Network, inputs, target, h: float = 1e-5, loss: str = "mse",
                   floor: float = 1e-8) -> float:
    """Max relative error between backprop and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  Parameters whose
    perturbation by ``±h`` flips any ReLU unit across its kink are skipped.
    """
    inputs = _as_inputs(net, inputs)
    out, cache = forward(net, inputs)
    _, g_out = _loss_and_grad(out, target, loss)
    analytic, _ = backward(net, cache, g_out)
    base_masks = _relu_masks(net, inputs)

    def loss_at():
        return _loss_and_grad(forward(net, inputs)[0], target, loss)[0]

    worst = 0.0
    for p, g in zip(net.parameters(), analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            kink = any((a != b).any() for a, b in zip(_relu_masks(net, inputs), base_masks))
            flat[i] = orig - h
            down = loss_at()
            kink = kink or any((a != b).any() for a, b in zip(_relu_masks(net, inputs), base_masks))
            flat[i] = orig
            if kink:
                continue
            num = (up - down) / (2.0 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
