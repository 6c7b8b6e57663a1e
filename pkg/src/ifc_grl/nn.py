"""
Small numpy layer library with hand-written backward passes.

Every layer caches what it needs during ``forward`` and returns the gradient
with respect to its input from ``backward``; parameter gradients accumulate
into ``Parameter.grad`` until ``zero_grad`` is called. All arithmetic is
float64.
"""

from __future__ import annotations

import io
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

CHECKPOINT_FORMAT = "ifc-grl-ckpt/1"


class ShapeMismatch(ValueError):
    pass


class BatchTooSmall(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Parameter:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Module:
    """Base class: tracks child modules, parameters and buffers by name."""

    def __init__(self):
        self._modules: "OrderedDict[str, Module]" = OrderedDict()
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.training = True

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value)
        self._params[name] = p
        return p

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.value.copy()) for n, p in self.named_parameters())
        state.update((n, b.copy()) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets: Dict[str, np.ndarray] = {n: p.value for n, p in self.named_parameters()}
        targets.update(self.named_buffers())
        missing = set(targets) - set(state)
        extra = set(state) - set(targets)
        if missing or extra:
            raise CheckpointError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, dest in targets.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != dest.shape:
                raise ShapeMismatch(f"{name}: expected {dest.shape}, got {src.shape}")
            dest[...] = src


class Linear(Module):
    """y = x W^T + b over the last axis; leading axes are batch axes."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = np.sqrt(1.0 / in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, (out_features, in_features)))
        self.bias = self.add_param("bias", np.zeros(out_features))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"linear expects {self.in_features} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._x
        if grad_out.shape != x.shape[:-1] + (self.out_features,):
            raise ShapeMismatch(f"gradient shape {grad_out.shape} does not match output")
        g2 = grad_out.reshape(-1, self.out_features)
        self.weight.grad += g2.T @ x.reshape(-1, self.in_features)
        self.bias.grad += g2.sum(axis=0)
        return grad_out @ self.weight.value


class BatchNorm1d(Module):
    """Per-feature normalization over every axis except the last.

    Training mode uses biased batch statistics and updates the running
    estimates (unbiased variance) with momentum; eval mode uses the running
    estimates and leaves them untouched.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(num_features))
        self.beta = self.add_param("beta", np.zeros(num_features))
        self._buffers["running_mean"] = np.zeros(num_features)
        self._buffers["running_var"] = np.ones(num_features)
        self._cache = None

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        f = self.num_features
        if x.shape[-1] != f:
            raise ShapeMismatch(f"batchnorm expects {f} features, got {x.shape[-1]}")
        x2 = x.reshape(-1, f)
        if self.training:
            n = x2.shape[0]
            if n < 2:
                raise BatchTooSmall("batch normalization needs at least 2 samples in training mode")
            mean = x2.mean(axis=0)
            xhat = x2 - mean
            var = np.einsum("ij,ij->j", xhat, xhat) / n
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat *= inv_std
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * (n / (n - 1))
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x2 - self.running_mean) * inv_std
        self._cache = (xhat, inv_std, self.training, x.shape)
        y = xhat * self.gamma.value
        y += self.beta.value
        return y.reshape(x.shape)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xhat, inv_std, training, shape = self._cache
        g = grad_out.reshape(-1, self.num_features)
        sum_g = g.sum(axis=0)
        sum_gx = np.einsum("ij,ij->j", g, xhat)
        self.gamma.grad += sum_gx
        self.beta.grad += sum_g
        scale = self.gamma.value * inv_std
        dx = g * scale
        if training:
            n = g.shape[0]
            # dx = scale * (g - mean(g) - xhat * mean(g * xhat))
            dx -= xhat * (scale * sum_gx / n)
            dx -= scale * sum_g / n
        return dx.reshape(shape)


class ReLU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._mask


class MaxPoolSet(Module):
    """Max over the set axis of a (batch, k, features) array."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] < 1:
            raise ShapeMismatch(f"expected (batch, k>=1, features), got {x.shape}")
        # argmax returns the first maximal index, which fixes the tie-break
        self._idx = np.argmax(x, axis=1)[:, None, :]
        self._shape = x.shape
        return np.take_along_axis(x, self._idx, axis=1)[:, 0, :]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = np.zeros(self._shape)
        np.put_along_axis(grad, self._idx, grad_out[:, None, :], axis=1)
        return grad


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_module(str(i), layer)

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, i: int) -> Module:
        return list(self._modules.values())[i]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self._modules.values():
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self._modules.values()):
            grad_out = layer.backward(grad_out)
        return grad_out


def dense_stage(in_features: int, out_features: int, rng: np.random.Generator) -> Sequential:
    """Linear -> BatchNorm -> ReLU."""
    return Sequential(Linear(in_features, out_features, rng), BatchNorm1d(out_features), ReLU())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeMismatch(f"{b} logits rows but {labels.shape} labels")
    if b and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float((logsumexp - z[rows, labels]).mean())
    grad = np.exp(z - logsumexp[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / b


class AdamState:
    def __init__(self, shapes: Sequence[Tuple[int, ...]], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    Weight decay is added to the gradient before the moment updates.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter, gradient and state counts differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState([p.shape for p in self.params], lr, betas[0], betas[1], eps, weight_decay)

    def step(self) -> None:
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: Dict[str, np.ndarray], path: Union[str, Path]) -> None:
    """Text registry (name and shape per entry) followed by little-endian float64 data."""
    lines = [CHECKPOINT_FORMAT, str(len(state))]
    for name, arr in state.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        lines.append(f"{name} {','.join(str(d) for d in np.shape(arr))}")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("ascii"))
    for arr in state.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    raw = Path(path).read_bytes()
    pos = 0

    def next_line() -> str:
        nonlocal pos
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint header")
        text = raw[pos:end].decode("ascii")
        pos = end + 1
        return text

    tag = next_line()
    if tag != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {tag!r}")
    entries = []
    for _ in range(int(next_line())):
        name, _, dims = next_line().partition(" ")
        shape = tuple(int(d) for d in dims.split(",") if d)
        entries.append((name, shape))
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise CheckpointError("truncated checkpoint data")
        state[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError("trailing bytes after checkpoint data")
    return state
