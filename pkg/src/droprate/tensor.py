"""Dense tensors with reverse-mode gradients.

A small numpy-backed autograd: each operation records a closure that routes
the output gradient back to its inputs, and `backward` replays the closures
in reverse topological order. Tensors are float32 by default; gradcheck can
promote a parameter store to float64 for tighter finite-difference bounds.
Rank is capped at 3, which is all a [batch, seq, channel] transformer needs
when attention heads are looped rather than stacked on a fourth axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidRateError, StateError, VocabularyError
from .rng import RngState

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable-by-convention dense array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 3:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of 3 (shape {arr.shape})")
        # note: np.ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.data.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Fill `.grad` on every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise StateError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad or not loss._parents:
        raise StateError("backward called before a forward pass was recorded")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# kernels


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    out._backward = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"add operands do not broadcast: {a.shape} + {b.shape}") from None
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"mul operands do not broadcast: {a.shape} * {b.shape}") from None
    out = Tensor(a.data * b.data, parents=(a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward = bw
    return out


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s, parents=(x,))
    out._backward = lambda g: _accumulate(x, g * s)
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), parents=(x,))

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        _accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du))

    out._backward = bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-channel gain and bias."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({c},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y * gain.data + bias.data, parents=(x, gain, bias))

    def bw(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * y).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))
        _accumulate(x, gx)

    out._backward = bw
    return out


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, parents=(x,))

    def bw(g):
        _accumulate(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward = bw
    return out


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabularyError(
            f"token id out of range: ids span [{ids.min()}, {ids.max()}], table has {table.shape[0]} rows"
        )
    out = Tensor(table.data[ids], parents=(table,))

    def bw(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]).astype(table.dtype, copy=False))

    out._backward = bw
    return out


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood in nats, averaged over all positions."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    tgt = targets.reshape(-1)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= v):
        raise VocabularyError(f"target id out of range: targets span [{tgt.min()}, {tgt.max()}], {v} classes")
    n = flat.shape[0]
    z = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(z)
    esum = e.sum(axis=-1, keepdims=True)
    logp = z - np.log(esum)
    nll = -logp[np.arange(n), tgt]
    out = Tensor(np.asarray(nll.mean(dtype=np.float64), dtype=logits.dtype), parents=(logits,))

    def bw(g):
        probs = e / esum
        probs[np.arange(n), tgt] -= 1.0
        _accumulate(logits, (float(g) / n) * probs.reshape(logits.shape))

    out._backward = bw
    return out


def dropout(x: Tensor, p: float, training: bool, rng: RngState | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Eval mode and p == 0 return the input untouched and consume no
    randomness, so a decayed-to-zero rate costs literally nothing.
    """
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise InvalidRateError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise StateError("training-mode dropout with p > 0 requires an RngState")
    mask = (rng.uniform(x.shape) >= p).astype(x.dtype) * np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out = Tensor(x.data * mask, parents=(x,))
    out._backward = lambda g: _accumulate(x, g * mask)
    return out


def transpose_last2(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise DimensionError(f"transpose_last2 needs rank >= 2, got shape {x.shape}")
    out = Tensor(x.data.swapaxes(-1, -2), parents=(x,))
    out._backward = lambda g: _accumulate(x, g.swapaxes(-1, -2))
    return out


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[..., start:stop], parents=(x,))

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _accumulate(x, full)

    out._backward = bw
    return out


def concat_lastdim(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1), parents=tuple(parts))

    def bw(g):
        offset = 0
        for p in parts:
            w = p.shape[-1]
            _accumulate(p, g[..., offset : offset + w])
            offset += w

    out._backward = bw
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype), parents=(x,))
    out._backward = lambda g: _accumulate(x, np.broadcast_to(g, x.shape))
    return out


# ---------------------------------------------------------------------------
# parameter store


class ParamStore:
    """Named parameters in a fixed insertion order, with parallel gradients."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._params.items():
            if t.grad is not None and t.grad.shape != t.data.shape:
                raise DimensionError(f"gradient shape {t.grad.shape} != parameter shape {t.data.shape} for {name}")
            out[name] = t.grad
        return out

    def clone(self, dtype=None) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.data.astype(dtype or t.data.dtype, copy=True))
        return other

    def fingerprint(self) -> str:
        """SHA-256 over names and raw little-endian bytes, order-sensitive."""
        import hashlib

        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradcheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradcheckReport:
    passed: bool
    tol: float
    h: float
    n_checked: int
    max_rel_err: float
    worst: list[GradcheckEntry] = field(default_factory=list)

    def __str__(self) -> str:
        lines = [
            f"gradcheck: {'PASS' if self.passed else 'FAIL'} "
            f"(max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e}, {self.n_checked} coords, h={self.h:.1e})"
        ]
        for e in self.worst[:10]:
            lines.append(f"  {e.name}[{e.index}]: analytic={e.analytic:+.6e} numeric={e.numeric:+.6e} rel={e.rel_err:.3e}")
        return "\n".join(lines)


def gradcheck(
    f,
    params: ParamStore,
    h: float = 1e-3,
    tol: float = 1e-2,
    n_coords: int = 200,
    seed: int = 0,
    use_float64: bool = True,
    analytic: dict[str, np.ndarray] | None = None,
    include: list[tuple[str, int]] | None = None,
) -> GradcheckReport:
    """Compare autodiff gradients of a scalar `f(params)` against central differences.

    `f` must be deterministic (run dropout in eval mode). A random subsample
    of coordinates is perturbed by +-h. The error metric per coordinate is
    |a - n| / max(|a|, |n|, max_j|a_j|), i.e. discrepancies are normalized
    by the dominant gradient magnitude: pure relative error at the scale
    that matters, while near-zero coordinates (whose central differences
    are all truncation and roundoff noise) are held to the same absolute
    accuracy as everything else instead of having that noise amplified.
    Failures are reported, never raised. Pass `analytic` to check externally
    supplied gradients instead of the autodiff ones.
    """
    work = params.clone(dtype=np.float64 if use_float64 else np.float32)

    if analytic is None:
        work.zero_grad()
        loss = f(work)
        backward(loss)
        analytic = {name: t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for name, t in work.items()}

    coords = []
    for name, t in work.items():
        coords.extend((name, i) for i in range(t.data.size))
    picker = np.random.Generator(np.random.Philox(key=seed))
    if len(coords) > n_coords:
        chosen = picker.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(chosen)]
    for forced in include or []:
        if forced not in coords:
            coords.append(forced)

    grad_scale = max(float(np.abs(g).max()) for g in analytic.values()) if analytic else 0.0
    floor = grad_scale if grad_scale > 0 else 1e-12

    entries = []
    for name, i in coords:
        t = work[name]
        orig = t.data.flat[i]
        t.data.flat[i] = orig + h
        f_plus = float(f(work).data)
        t.data.flat[i] = orig - h
        f_minus = float(f(work).data)
        t.data.flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[name].flat[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        entries.append(GradcheckEntry(name, int(i), a, numeric, rel))

    entries.sort(key=lambda e: e.rel_err, reverse=True)
    max_rel = entries[0].rel_err if entries else 0.0
    return GradcheckReport(
        passed=max_rel < tol,
        tol=tol,
        h=h,
        n_checked=len(entries),
        max_rel_err=max_rel,
        worst=entries[:10],
    )
