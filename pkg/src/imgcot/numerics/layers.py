"""Small transformer building blocks composed from the tensor primitives."""

from __future__ import annotations

import math

import numpy as np

from imgcot.numerics.tensor import (
    Tensor,
    add,
    gelu,
    get_default_dtype,
    layernorm,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Attribute-walking parameter container (Tensors, Modules and lists of Modules)."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad and val.op == "leaf":
                    yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        from imgcot.errors import ContractError

        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise ContractError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.data.shape:
                    raise ContractError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
                p.data = arr.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    """Affine map with weights drawn from U(-1/sqrt(d_in), 1/sqrt(d_in)) and zero bias."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = param(np.ones(d))
        self.shift = param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layernorm(x), self.gain), self.shift)


def causal_mask(t: int, dtype=None) -> np.ndarray:
    dtype = dtype or get_default_dtype()
    return np.triu(np.full((t, t), -1e9, dtype=dtype), k=1)


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        assert d % heads == 0, "model width must divide evenly into heads"
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        dh = x.shape[-1] // self.heads
        return transpose(reshape(x, (b, t, self.heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, d = x.shape
        q = self._split(self.q(x), b, t)
        k = self._split(self.k(x), b, t)
        v = self._split(self.v(x), b, t)
        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self.heads))
        if mask is not None:
            scores = add(scores, Tensor(mask.astype(scores.data.dtype)))
        ctx = matmul(softmax(scores), v)
        ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.out(ctx)


class MLP(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc = Linear(d, hidden, rng)
        self.proj = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(gelu(self.fc(x)))


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = add(x, self.attn(self.ln1(x), mask))
        return add(x, self.mlp(self.ln2(x)))


def concat_rows(parts) -> Tensor:
    """Stack tensors along the second-to-last axis via constant selector matmuls."""
    total = sum(p.shape[-2] for p in parts)
    dtype = parts[0].data.dtype
    out = None
    start = 0
    for p in parts:
        n = p.shape[-2]
        sel = np.zeros((total, n), dtype=dtype)
        sel[np.arange(start, start + n), np.arange(n)] = 1.0
        term = matmul(Tensor(sel), p)
        out = term if out is None else add(out, term)
        start += n
    return out
