"""Minimal dense float32 tensor kernel with reverse-mode differentiation.

Every tensor op records its inputs and a vector-Jacobian closure; calling
``backward`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into ``.grad`` buffers. Attention masking
is done by exclusion from the softmax normalizer (masked weights are exact
zeros, never large-negative logits), which makes leakage invariants exactly
testable.
"""

from __future__ import annotations

import contextlib
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))

# Model execution is float32 throughout. check_gradients temporarily widens
# the working dtype: float32 forward noise would otherwise swamp the finite
# differences of weakly-coupled parameters (for example pre-attention
# LayerNorm shifts), making a 1e-3 relative comparison meaningless.
_ACTIVE_DTYPE: list = [np.float32]


def active_dtype():
    return _ACTIVE_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    _ACTIVE_DTYPE.append(dtype)
    try:
        yield
    finally:
        _ACTIVE_DTYPE.pop()

__all__ = [
    "Tensor",
    "AttentionMask",
    "AttentionDiagnostics",
    "ParamStore",
    "NumericError",
    "ShapeError",
    "ContractError",
    "as_array",
    "constant",
    "add",
    "concat",
    "embedding",
    "masked_softmax",
    "masked_attention",
    "gelu_op",
    "layernorm_op",
    "backward",
    "check_gradients",
    "precision",
    "rng_for",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class ContractError(ValueError):
    """An op precondition was violated."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the contract forbids it."""


def as_array(x) -> np.ndarray:
    """Coerce to a C-contiguous ndarray in the active working dtype."""
    a = np.asarray(x, dtype=active_dtype())
    return np.ascontiguousarray(a)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense ndarray plus the graph edges needed for reverse mode.

    ``data`` is row-major in the active working dtype (float32 everywhere
    except inside gradient verification); ``grad`` is allocated lazily on the
    first backward pass. ``_parents`` holds ``(tensor, vjp)`` pairs where
    ``vjp(grad_out) -> grad contribution`` for that parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence[tuple["Tensor", Callable]] = ()):
        self.data = as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in parents)
        self._parents = tuple(p for p in parents if p[0].requires_grad)

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- elementwise ops ---------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _wrap(other)
        out = Tensor(self.data + other.data,
                     parents=[(self, lambda g: _unbroadcast(g, self.shape)),
                              (other, lambda g: _unbroadcast(g, other.shape))])
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, parents=[(self, lambda g: -g)])

    def __sub__(self, other) -> "Tensor":
        return self + (-_wrap(other))

    def __rsub__(self, other) -> "Tensor":
        return (-self) + _wrap(other)

    def __mul__(self, other) -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data
        return Tensor(a * b,
                      parents=[(self, lambda g: _unbroadcast(g * b, self.shape)),
                               (other, lambda g: _unbroadcast(g * a, other.shape))])

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _wrap(other)
        return self * other ** -1.0

    def __pow__(self, p: float) -> "Tensor":
        p = float(p)
        x = self.data
        # np.power on float32 is slow; route the common exponents through
        # multiply/sqrt/reciprocal kernels instead.
        f = x.dtype.type
        if p == 2.0:
            return Tensor(x * x, parents=[(self, lambda g: g * (f(2.0) * x))])
        if p == 3.0:
            return Tensor(x * x * x, parents=[(self, lambda g: g * (f(3.0) * x * x))])
        if p == -1.0:
            inv = f(1.0) / x
            return Tensor(inv, parents=[(self, lambda g: -g * inv * inv)])
        if p == -0.5:
            inv = f(1.0) / np.sqrt(x)
            return Tensor(inv, parents=[(self, lambda g: g * f(-0.5) * inv * inv * inv)])
        if p == 0.5:
            root = np.sqrt(x)
            return Tensor(root, parents=[(self, lambda g: g * f(0.5) / root)])
        out = x ** f(p)
        return Tensor(out, parents=[(self, lambda g: g * f(p) * x ** f(p - 1.0))])

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        return Tensor(e, parents=[(self, lambda g: g * e)])

    def log(self) -> "Tensor":
        x = self.data
        return Tensor(np.log(x), parents=[(self, lambda g: g / x)])

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return Tensor(t, parents=[(self, lambda g: g * (1.0 - t * t))])

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(self.data.reshape(shape),
                      parents=[(self, lambda g: g.reshape(old))])

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor(np.ascontiguousarray(self.data.swapaxes(a, b)),
                      parents=[(self, lambda g: g.swapaxes(a, b))])

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        inv = tuple(np.argsort(axes))
        return Tensor(np.ascontiguousarray(self.data.transpose(axes)),
                      parents=[(self, lambda g: g.transpose(inv))])

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape
        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(p, (slice, int)) for p in parts)

        def vjp(g: np.ndarray) -> np.ndarray:
            full = np.zeros(shape, dtype=g.dtype)
            if basic:
                full[idx] = g  # disjoint destination, no accumulation needed
            else:
                np.add.at(full, idx, g)
            return full

        return Tensor(self.data[idx], parents=[(self, vjp)])

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def vjp(g: np.ndarray) -> np.ndarray:
            if axis is None:
                return (np.full(shape, g, dtype=g.dtype) if np.ndim(g) == 0
                        else np.broadcast_to(g, shape).copy())
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            return np.broadcast_to(gg, shape).copy()

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims, dtype=self.data.dtype),
                      parents=[(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- matmul --------------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
        out = a @ b

        def vjp_a(g: np.ndarray) -> np.ndarray:
            return _unbroadcast(g @ b.swapaxes(-1, -2), a.shape)

        def vjp_b(g: np.ndarray) -> np.ndarray:
            return _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape)

        return Tensor(out, parents=[(self, vjp_a), (other, vjp_b)])

    # -- autodiff --------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; accumulates into ``.grad``."""
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            for parent, vjp in node._parents:
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS, reversed; avoids recursion limits on deep graphs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A graph leaf that never receives gradient."""
    return Tensor(x)


def add(*tensors: Tensor) -> Tensor:
    out = tensors[0]
    for t in tensors[1:]:
        out = out + t
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return Tensor(np.concatenate(datas, axis=axis),
                  parents=[(t, make_vjp(i)) for i, t in enumerate(tensors)])


def gelu_op(x: Tensor) -> Tensor:
    """tanh-approximation GELU as one fused op (hot path)."""
    v = x.data
    f = v.dtype.type
    c = f(SQRT_2_OVER_PI)
    a = f(0.044715)
    u = c * (v + a * v * v * v)
    th = np.tanh(u)
    out = f(0.5) * v * (f(1.0) + th)

    def vjp(g: np.ndarray) -> np.ndarray:
        sech2 = f(1.0) - th * th
        du = c * (f(1.0) + f(3.0) * a * v * v)
        return g * (f(0.5) * (f(1.0) + th) + f(0.5) * v * sech2 * du)

    return Tensor(out, parents=[(x, vjp)])


def layernorm_op(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row normalization over the last axis as one fused op (hot path)."""
    v = x.data
    f = v.dtype.type
    mu = v.mean(axis=-1, keepdims=True, dtype=v.dtype)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=v.dtype)
    inv = f(1.0) / np.sqrt(var + f(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp_x(g: np.ndarray) -> np.ndarray:
        gg = g * gamma.data
        mean_gg = gg.mean(axis=-1, keepdims=True, dtype=g.dtype)
        mean_gg_xhat = (gg * xhat).mean(axis=-1, keepdims=True, dtype=g.dtype)
        return (gg - mean_gg - xhat * mean_gg_xhat) * inv

    def vjp_gamma(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(g * xhat, gamma.shape)

    def vjp_beta(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(g, beta.shape)

    return Tensor(out, parents=[(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)])


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, ids, g)
        return full

    return Tensor(table.data[ids], parents=[(table, vjp)])


# -- masked attention ----------------------------------------------------------


@dataclass
class AttentionMask:
    """Boolean attention layout: ``allowed[i, j]`` permits query row i to read key j."""

    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {self.allowed.shape}")

    @classmethod
    def full(cls, n: int, m: int) -> "AttentionMask":
        return cls(np.ones((n, m), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape  # type: ignore[return-value]


@dataclass
class AttentionDiagnostics:
    """Mutable flags surfaced by masked attention."""

    empty_rows: int = 0


def masked_softmax(scores: Tensor, allowed: np.ndarray,
                   diagnostics: AttentionDiagnostics | None = None) -> Tensor:
    """Softmax over the allowed entries of the last axis; others are exact zeros.

    Excluded positions never enter the max shift or the normalizer, so the
    output is exactly independent of their score values. Rows with no
    allowed entry come out all-zero and are counted in ``diagnostics``.
    """
    mask = np.broadcast_to(np.asarray(allowed, dtype=bool), scores.shape)
    x = scores.data
    f = x.dtype.type
    neg = np.array(-np.inf, dtype=x.dtype)
    shifted_max = np.where(mask, x, neg).max(axis=-1, keepdims=True)
    empty = ~mask.any(axis=-1, keepdims=True)
    if diagnostics is not None:
        diagnostics.empty_rows += int(empty.sum())
    shifted_max = np.where(empty, f(0.0), shifted_max)
    e = np.exp(np.where(mask, x - shifted_max, neg))
    z = e.sum(axis=-1, keepdims=True, dtype=x.dtype)
    z = np.where(z == 0.0, f(1.0), z)
    w = e / z

    def vjp(g: np.ndarray) -> np.ndarray:
        inner = (g * w).sum(axis=-1, keepdims=True, dtype=g.dtype)
        return w * (g - inner)

    return Tensor(w, parents=[(scores, vjp)])


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask,
                     diagnostics: AttentionDiagnostics | None = None) -> Tensor:
    """Scaled dot-product attention over the keys each query row may see.

    Shapes: q ``[..., n, d]``, k/v ``[..., m, d]``, mask ``[n, m]``. Masked
    positions receive exactly zero weight by exclusion from the softmax
    normalizer; a query row with zero allowed keys yields a zero output row
    and bumps ``diagnostics.empty_rows``.
    """
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeError("attention operands must be at least 2-D")
    n, d = q.shape[-2], q.shape[-1]
    m = k.shape[-2]
    if k.shape[-1] != d:
        raise ShapeError(f"q/k width mismatch: {q.shape} vs {k.shape}")
    if v.shape[-2] != m:
        raise ShapeError(f"k/v length mismatch: {k.shape} vs {v.shape}")
    if d <= 0:
        raise ContractError("attention width must be positive")
    if mask.shape != (n, m):
        raise ShapeError(f"mask shape {mask.shape} does not match ({n}, {m})")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / float(np.sqrt(d)))
    weights = masked_softmax(scores, mask.allowed, diagnostics)
    return weights @ v


# -- parameters ------------------------------------------------------------------


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Deterministic generator keyed by a root seed plus arbitrary tags.

    Strings hash via crc32 so streams are stable across runs and platforms.
    """
    keys = [int(seed) & 0xFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            keys.append(zlib.crc32(t.encode()) & 0xFFFFFFFF)
        else:
            keys.append(int(t) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))


@dataclass
class ParamStore:
    """Named parameter tensors with gradient buffers, initialized purely from a seed.

    Each parameter's values depend only on ``(seed, name, init kind)``, never
    on creation order, so rebuilding the same architecture reproduces weights
    bitwise.
    """

    seed: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def add(self, name: str, shape: tuple[int, ...], init: str = "fan_in") -> Tensor:
        """Create (or fetch) a parameter.

        init kinds: ``fan_in`` uniform +-1/sqrt(shape[0]) for x @ W matrices;
        ``embed`` uniform +-1/sqrt(shape[-1]) for lookup tables, query slots
        and positional rows; ``zeros`` / ``ones`` for biases and LayerNorm.
        """
        if name in self.params:
            existing = self.params[name]
            if existing.shape != tuple(shape):
                raise ContractError(f"parameter {name} re-registered with new shape")
            return existing
        rng = rng_for(self.seed, "param", name)
        if init == "fan_in":
            bound = 1.0 / float(np.sqrt(shape[0]))
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "embed":
            bound = 1.0 / float(np.sqrt(shape[-1]))
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ContractError(f"unknown init kind {init!r}")
        t = Tensor(as_array(data), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params.keys())

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())


def backward(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Fill every parameter's gradient buffer with d(loss)/d(param).

    Parameters the loss does not depend on get exact zero buffers, which is
    what the disabled-head isolation invariants assert against.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    grads = {}
    for name, t in params.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        grads[name] = t.grad
    return grads


def check_gradients(fn: Callable[[ParamStore], Tensor], params: ParamStore,
                    eps: float = 1e-3, seed: int = 0) -> float:
    """Directional gradient check against central finite differences.

    For each parameter a seeded random unit probe direction u is drawn; the
    autodiff directional derivative grad . u is compared with
    (f(p + eps u) - f(p - eps u)) / (2 eps). Returns the max over parameters
    of |autodiff - central| / (|central| + 1e-8).

    The whole comparison runs under float64: weakly-coupled parameters have
    directional derivatives far below float32 forward noise, which would make
    the relative error meaningless rather than diagnostic. Model parameters
    themselves are restored to their float32 values afterwards.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    originals = {name: p.data for name, p in params.items()}
    try:
        with precision(np.float64):
            for p in params.params.values():
                p.data = p.data.astype(np.float64)
            params.zero_grad()
            loss = fn(params)
            if not np.isfinite(loss.data).all():
                raise NumericError("non-finite loss in gradient check")
            backward(loss, params)
            worst = 0.0
            for name, p in params.items():
                rng = rng_for(seed, "gradcheck", name)
                u = rng.standard_normal(p.shape)
                norm = float(np.linalg.norm(u))
                if norm == 0.0:
                    continue
                u = u / norm
                auto = float(np.sum(p.grad * u))
                base = p.data
                p.data = np.ascontiguousarray(base + eps * u)
                f_plus = fn(params).item()
                p.data = np.ascontiguousarray(base - eps * u)
                f_minus = fn(params).item()
                p.data = base
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise NumericError(f"non-finite perturbed loss at parameter {name}")
                central = (f_plus - f_minus) / (2.0 * eps)
                rel = abs(auto - central) / (abs(central) + 1e-8)
                worst = max(worst, rel)
            return worst
    finally:
        for name, p in params.items():
            p.data = originals[name]
        params.zero_grad()
