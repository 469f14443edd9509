"""Minimal deterministic tensor + reverse-mode autodiff engine.

Exactly the primitives the delta-encoder needs: dense linear maps, layer
normalization, multi-head attention in PreNorm residual blocks, strided 3x3
convolutions, pointwise nonlinearities, reductions, and an AdamW optimizer
with cosine/warmup scheduling. float64 is the training dtype (finite
difference checks are run at f64); float32 is accepted for bulk inference.

Every op validates that its output is finite; NaN/Inf raises NonFiniteError.
"""

from __future__ import annotations

import math

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    # single-pass probe: any NaN/Inf poisons the sum
    if not np.isfinite(data.sum()):
        raise NonFiniteError(f"non-finite values produced by {op}")
    return data


class Tensor:
    """Node of the reverse-mode tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        if data.dtype not in _FLOAT_DTYPES:
            data = data.astype(np.float64)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable (or frozen) leaf with a checkpoint path name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.asarray(data, dtype=np.float64), requires_grad=trainable)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(_check_finite(data, op))
    tracked = [p for p in parents if p.requires_grad]
    if tracked:
        out.requires_grad = True
        out._parents = tuple(tracked)
        out._backward = backward
    return out


def _accum(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(grad):
        _accum(a, _unbroadcast(grad, a.shape))
        _accum(b, _unbroadcast(grad, b.shape))

    return _node(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(grad):
        _accum(a, _unbroadcast(grad * b.data, a.shape))
        _accum(b, _unbroadcast(grad * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ValueError(f"matmul needs matching 2D or 3D operands, got {a.shape} @ {b.shape}")

    def backward(grad):
        _accum(a, grad @ b.data.swapaxes(-1, -2))
        _accum(b, a.data.swapaxes(-1, -2) @ grad)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for 2D x; one tape node instead of matmul-then-add."""
    if x.data.ndim != 2:
        raise ValueError(f"affine expects a 2D input, got shape {x.shape}")

    def backward(grad):
        _accum(x, grad @ w.data.T)
        _accum(w, x.data.T @ grad)
        _accum(b, grad.sum(axis=0))

    return _node(x.data @ w.data + b.data, (x, w, b), backward, "affine")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(grad):
        _accum(a, grad.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(grad):
        _accum(a, grad.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), backward, "transpose")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(lo, hi)
            _accum(t, grad[tuple(index)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward, "concat")


def narrow(a: Tensor, start: int, length: int, axis: int = 0) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(grad):
        full = np.zeros_like(a.data)
        full[index] = grad
        _accum(a, full)

    return _node(a.data[index].copy(), (a,), backward, "narrow")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(grad):
        _accum(a, grad * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    def backward(grad):
        _accum(a, grad * (a.data > 0))

    return _node(np.maximum(a.data, 0.0), (a,), backward, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-form GELU (self-contained, smooth everywhere)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def backward(grad):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return _node(0.5 * x * (1.0 + t), (a,), backward, "gelu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (numerically shifted)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(grad):
        dot = (grad * s).sum(axis=-1, keepdims=True)
        _accum(a, (grad - dot) * s)

    return _node(s, (a,), backward, "softmax")


def sum_all(a: Tensor) -> Tensor:
    def backward(grad):
        _accum(a, np.full_like(a.data, float(grad)))

    return _node(np.asarray(a.data.sum()), (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(grad):
        _accum(a, np.full_like(a.data, float(grad) / n))

    return _node(np.asarray(a.data.mean()), (a,), backward, "mean")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def backward(grad):
        dy = grad * gamma.data
        _accum(gamma, _unbroadcast(grad * y, gamma.shape))
        _accum(beta, _unbroadcast(grad, beta.shape))
        mean_dy = dy.mean(axis=-1, keepdims=True)
        mean_dyy = (dy * y).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dy - mean_dy - y * mean_dyy))

    return _node(y * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def conv2d_stride2(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 2, zero padding 1.

    x: (H, W, C_in) with H, W even; kernel: (3, 3, C_in, C_out); bias: (C_out,).
    Output is (H/2, W/2, C_out).
    """
    h, w, c_in = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"conv2d_stride2 needs even dims, got {h}x{w}")
    _, _, kc_in, c_out = kernel.shape
    if kc_in != c_in:
        raise ValueError(f"kernel expects {kc_in} input channels, got {c_in}")
    ho, wo = h // 2, w // 2
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((ho * wo, 9 * c_in), dtype=x.data.dtype)
    for u in range(3):
        for v in range(3):
            patch = xp[u : u + 2 * ho - 1 : 2, v : v + 2 * wo - 1 : 2, :]
            cols[:, (u * 3 + v) * c_in : (u * 3 + v + 1) * c_in] = patch.reshape(ho * wo, c_in)
    w_mat = kernel.data.reshape(9 * c_in, c_out)
    out_data = (cols @ w_mat + bias.data).reshape(ho, wo, c_out)

    def backward(grad):
        grad_mat = grad.reshape(ho * wo, c_out)
        _accum(kernel, (cols.T @ grad_mat).reshape(kernel.shape))
        _accum(bias, grad_mat.sum(axis=0))
        if x.requires_grad:
            d_cols = grad_mat @ w_mat.T
            dxp = np.zeros_like(xp)
            for u in range(3):
                for v in range(3):
                    block = d_cols[:, (u * 3 + v) * c_in : (u * 3 + v + 1) * c_in]
                    dxp[u : u + 2 * ho - 1 : 2, v : v + 2 * wo - 1 : 2, :] += block.reshape(
                        ho, wo, c_in
                    )
            _accum(x, dxp[1:-1, 1:-1, :])

    return _node(out_data, (x, kernel, bias), backward, "conv2d_stride2")


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container; children are discovered in attribute order."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for value in self.__dict__.values():
            if isinstance(value, Parameter):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.trainable_parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint is missing parameter {p.name!r}")
            data = np.asarray(state[p.name], dtype=np.float64)
            if data.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {p.name!r}: {data.shape} != {p.data.shape}"
                )
            p.data = data

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, name: str,
                 trainable: bool = True):
        self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out)),
                                f"{name}.weight", trainable)
        self.bias = Parameter(uniform_init(rng, d_in, (d_out,)), f"{name}.bias", trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, name: str):
        self.gamma = Parameter(np.ones(d), f"{name}.gamma")
        self.beta = Parameter(np.zeros(d), f"{name}.beta")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    """Full (unmasked) scaled dot-product self-attention over the sequence."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, name: str):
        if d % heads:
            raise ValueError(f"embedding dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.q = Linear(rng, d, d, f"{name}.q")
        self.k = Linear(rng, d, d, f"{name}.k")
        self.v = Linear(rng, d, d, f"{name}.v")
        self.out = Linear(rng, d, d, f"{name}.out")

    def __call__(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        dh = self.d // self.heads

        def split(t: Tensor) -> Tensor:  # (L, d) -> (heads, L, dh)
            return transpose(reshape(t, (length, self.heads, dh)), (1, 0, 2))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        mixed = matmul(softmax(scores), v)
        merged = reshape(transpose(mixed, (1, 0, 2)), (length, self.d))
        return self.out(merged)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d: int, hidden: int, name: str):
        self.lift = Linear(rng, d, hidden, f"{name}.lift")
        self.drop = Linear(rng, hidden, d, f"{name}.drop")

    def __call__(self, x: Tensor) -> Tensor:
        return self.drop(gelu(self.lift(x)))


class PreNormBlock(Module):
    """x + Attn(LN(x)) followed by x + MLP(LN(x))."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, name: str,
                 mlp_ratio: int = 4):
        self.ln_attn = LayerNorm(d, f"{name}.ln_attn")
        self.attn = MultiHeadAttention(rng, d, heads, f"{name}.attn")
        self.ln_mlp = LayerNorm(d, f"{name}.ln_mlp")
        self.mlp = FeedForward(rng, d, mlp_ratio * d, f"{name}.mlp")

    def __call__(self, x: Tensor) -> Tensor:
        x = add(x, self.attn(self.ln_attn(x)))
        return add(x, self.mlp(self.ln_mlp(x)))


class TransformerStack(Module):
    """A run of PreNorm blocks; no trailing norm so zero-init output
    projections make the stack an exact identity."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, depth: int, name: str):
        self.blocks = [PreNormBlock(rng, d, heads, f"{name}.block{i}") for i in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def zero_output_projections(self) -> None:
        for block in self.blocks:
            block.attn.out.weight.data = np.zeros_like(block.attn.out.weight.data)
            block.attn.out.bias.data = np.zeros_like(block.attn.out.bias.data)
            block.mlp.drop.weight.data = np.zeros_like(block.mlp.drop.weight.data)
            block.mlp.drop.bias.data = np.zeros_like(block.mlp.drop.bias.data)


class Conv2dStride2(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, name: str):
        fan_in = 9 * c_in
        self.kernel = Parameter(uniform_init(rng, fan_in, (3, 3, c_in, c_out)),
                                f"{name}.kernel")
        self.bias = Parameter(uniform_init(rng, fan_in, (c_out,)), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_stride2(x, self.kernel, self.bias)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def cosine_warmup_lr(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to base_lr, then cosine decay to zero.

    step is 1-based (the step about to be applied). Defaults elsewhere follow
    a 1000-step warmup at full scale.
    """
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: list[Parameter], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**t)
            v_hat = self.v[i] / (1 - b2**t)
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
