"""Float64 tensors with an explicit reverse-mode gradient tape.

Everything differentiable in this package (graph convolutions, the
alignment losses, the classifier head) is composed from the primitive
operations below.  Each primitive computes its forward value with numpy
and, when a :class:`Tape` is active, records an entry holding the input
tensors, the output tensor, a local gradient rule, and a replay closure.
``Tape.backward`` walks the record in reverse to accumulate gradients;
``Tape.replay`` re-executes every entry and demands bit-identical
outputs.  ``finite_diff_check`` is the independent central-difference
oracle used to validate any composite scalar function of the primitives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DivergenceError",
    "GradientCheckError",
    "matmul",
    "transpose",
    "add",
    "scale",
    "relu",
    "log",
    "exp",
    "mean",
    "softmax",
    "kl_divergence",
    "l2_normalize",
    "cross_entropy",
    "take",
    "graph_apply",
    "channel_map",
    "finite_diff_errors",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class DivergenceError(ValueError):
    """KL divergence is undefined: q has zero mass where p does not."""


class GradientCheckError(RuntimeError):
    """Function under finite-difference test produced a non-finite value."""


class Tensor:
    """Immutable dense float64 array.

    Values are validated to be finite at construction and the backing
    numpy buffer is frozen, so a tensor can be shared freely between
    tape entries without defensive copies.
    """

    __slots__ = ("data",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64)
        _validate_array(arr)
        arr.flags.writeable = False
        self.data: np.ndarray = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # No-copy path for freshly allocated op outputs; same validation.
        _validate_array(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out = object.__new__(cls)
        out.data = arr
        return out

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
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _validate_array(arr: np.ndarray) -> None:
    if arr.dtype != np.float64:
        raise TypeError(f"tensor values must be float64, got {arr.dtype}")
    if arr.size == 0:
        raise ShapeError("tensor dimensions must be positive")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite (no NaN or Inf)")


class _TapeEntry:
    __slots__ = ("rule", "inputs", "output", "grad_fn", "forward_fn")

    def __init__(self, rule, inputs, output, grad_fn, forward_fn):
        self.rule: str = rule
        self.inputs: tuple[Tensor, ...] = inputs
        self.output: Tensor = output
        self.grad_fn: Callable[[np.ndarray], tuple] = grad_fn
        self.forward_fn: Callable[..., np.ndarray] = forward_fn


_ACTIVE: "Tape | None" = None


class Tape:
    """Ordered record of the primitive operations applied under it.

    Use as a context manager around a forward computation; the entry
    list is append-only during the forward pass and is consumed by
    ``backward`` (reverse-mode gradients) and ``replay`` (bit-identical
    re-execution check).  Tapes may nest; ops record on the innermost.
    """

    def __init__(self) -> None:
        self._entries: list[_TapeEntry] = []
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._outer = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE
        _ACTIVE = self._outer
        self._outer = None

    def __len__(self) -> int:
        return len(self._entries)

    def rules(self) -> list[str]:
        """Names of the recorded operations, in application order."""
        return [e.rule for e in self._entries]

    def backward(self, output: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar ``output`` with respect to every tensor on the tape.

        Returns a mapping keyed by tensor identity.  Tensors that do not
        influence ``output`` are simply absent; use :meth:`gradients` to
        get explicit zeros for a parameter list.
        """
        if not isinstance(output, Tensor):
            raise TypeError("backward expects a Tensor output")
        if output.shape != ():
            raise ShapeError(f"backward requires a scalar output, got shape {output.shape}")
        grads: dict[Tensor, np.ndarray] = {output: np.ones(())}
        for entry in reversed(self._entries):
            g_out = grads.get(entry.output)
            if g_out is None:
                continue
            for tensor, g_in in zip(entry.inputs, entry.grad_fn(g_out)):
                if g_in is None:
                    continue
                prev = grads.get(tensor)
                grads[tensor] = g_in if prev is None else prev + g_in
        return grads

    def gradients(self, output: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Per-parameter gradients; zeros for parameters not on the path."""
        table = self.backward(output)
        return [table.get(p, np.zeros(p.shape)) for p in params]

    def replay(self) -> None:
        """Re-run every recorded op from its stored inputs.

        Raises ``RuntimeError`` on the first entry whose recomputed value
        is not bit-identical to the recorded output.
        """
        for i, entry in enumerate(self._entries):
            fresh = np.asarray(entry.forward_fn(*(t.data for t in entry.inputs)))
            if fresh.shape != entry.output.data.shape or not np.array_equal(
                fresh, entry.output.data
            ):
                raise RuntimeError(f"replay mismatch at entry {i} ({entry.rule})")


def _record(rule, inputs, out_arr, grad_fn, forward_fn) -> Tensor:
    out = Tensor._wrap(out_arr)
    if _ACTIVE is not None:
        _ACTIVE._entries.append(_TapeEntry(rule, tuple(inputs), out, grad_fn, forward_fn))
    return out


def _as_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a = _as_tensor(a, "a")
    b = _as_tensor(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def fwd(x, y):
        return x @ y

    out = fwd(a.data, b.data)

    def grad(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, grad, fwd)


def transpose(x: Tensor) -> Tensor:
    """2-D transpose."""
    x = _as_tensor(x, "x")
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {x.shape}")

    def fwd(a):
        return a.T

    def grad(g):
        return (g.T,)

    return _record("transpose", (x,), fwd(x.data), grad, fwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over the last axis."""
    a = _as_tensor(a, "a")
    b = _as_tensor(b, "b")
    if a.shape == b.shape:

        def fwd(x, y):
            return x + y

        def grad(g):
            return g, g

        return _record("add", (a, b), fwd(a.data, b.data), grad, fwd)
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:

        def fwd(x, y):
            return x + y

        lead = tuple(range(a.ndim - 1))

        def grad(g):
            return g, g.sum(axis=lead)

        return _record("add_bias", (a, b), fwd(a.data, b.data), grad, fwd)
    raise ShapeError(f"add cannot combine shapes {a.shape} and {b.shape}")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every element by a constant."""
    x = _as_tensor(x, "x")
    factor = float(factor)
    if not np.isfinite(factor):
        raise ValueError("scale factor must be finite")

    def fwd(a):
        return a * factor

    def grad(g):
        return (g * factor,)

    return _record("scale", (x,), fwd(x.data), grad, fwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x, "x")

    def fwd(a):
        return np.maximum(a, 0.0)

    mask = x.data > 0.0

    def grad(g):
        return (g * mask,)

    return _record("relu", (x,), fwd(x.data), grad, fwd)


def log(x: Tensor) -> Tensor:
    """Natural logarithm; requires strictly positive input."""
    x = _as_tensor(x, "x")
    if np.any(x.data <= 0.0):
        raise ValueError("log requires strictly positive values")

    def fwd(a):
        return np.log(a)

    def grad(g):
        return (g / x.data,)

    return _record("log", (x,), fwd(x.data), grad, fwd)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x, "x")

    def fwd(a):
        # overflow surfaces as the wrapper's non-finite ValueError, not a warning
        with np.errstate(over="ignore"):
            return np.exp(a)

    out = Tensor._wrap(fwd(x.data))

    def grad(g):
        return (g * out.data,)

    if _ACTIVE is not None:
        _ACTIVE._entries.append(_TapeEntry("exp", (x,), out, grad, fwd))
    return out


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    axes = tuple(sorted(a % ndim if -ndim <= a < ndim else _axis_err(a, ndim) for a in axis))
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes in {axis}")
    return axes


def _axis_err(a, ndim):
    raise ShapeError(f"axis {a} out of range for ndim {ndim}")


def mean(x: Tensor, axis=None) -> Tensor:
    """Arithmetic mean over one axis, a tuple of axes, or all axes."""
    x = _as_tensor(x, "x")
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]

    def fwd(a):
        return np.mean(a, axis=axes)

    def grad(g):
        expanded = g
        for a in axes:
            expanded = np.expand_dims(expanded, a)
        return (np.broadcast_to(expanded, x.shape) / count,)

    return _record("mean", (x,), fwd(x.data), grad, fwd)


def softmax(x: Tensor, axis: int, temperature: float = 1.0) -> Tensor:
    """Temperature-scaled softmax along ``axis``; max-shifted for stability."""
    x = _as_tensor(x, "x")
    temperature = float(temperature)
    if not np.isfinite(temperature) or temperature <= 0.0:
        raise ValueError("softmax temperature must be positive")
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for ndim {x.ndim}")
    ax = axis % x.ndim

    def fwd(a):
        z = a / temperature
        z = z - np.max(z, axis=ax, keepdims=True)
        e = np.exp(z)
        return e / np.sum(e, axis=ax, keepdims=True)

    out = Tensor._wrap(fwd(x.data))

    def grad(g):
        s = out.data
        inner = np.sum(g * s, axis=ax, keepdims=True)
        return ((g - inner) * s / temperature,)

    if _ACTIVE is not None:
        _ACTIVE._entries.append(_TapeEntry("softmax", (x,), out, grad, fwd))
    return out


def kl_divergence(p: Tensor, q: Tensor, axis: int) -> Tensor:
    """KL(p || q) along ``axis`` with the 0*log(0) = 0 convention.

    Both operands must hold probability slices along ``axis`` (nonnegative,
    summing to 1 within 1e-9).  A zero in q where p is positive raises
    :class:`DivergenceError`.
    """
    p = _as_tensor(p, "p")
    q = _as_tensor(q, "q")
    if p.shape != q.shape:
        raise ShapeError(f"kl_divergence shapes differ: {p.shape} vs {q.shape}")
    if not -p.ndim <= axis < p.ndim:
        raise ShapeError(f"axis {axis} out of range for ndim {p.ndim}")
    ax = axis % p.ndim
    for name, arr in (("p", p.data), ("q", q.data)):
        if np.any(arr < -1e-12):
            raise ValueError(f"{name} must be nonnegative")
        sums = arr.sum(axis=ax)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError(f"{name} slices along axis {ax} must sum to 1")
    mask = p.data > 0.0
    if np.any(mask & (q.data <= 0.0)):
        raise DivergenceError("q has zero mass where p is positive")

    def fwd(pa, qa):
        m = pa > 0.0
        terms = np.zeros_like(pa)
        terms[m] = pa[m] * (np.log(pa[m]) - np.log(qa[m]))
        return terms.sum(axis=ax)

    out = fwd(p.data, q.data)

    def grad(g):
        g_e = np.expand_dims(g, ax)
        gp = np.zeros_like(p.data)
        gq = np.zeros_like(q.data)
        pm = p.data[mask]
        qm = q.data[mask]
        gp[mask] = np.log(pm / qm) + 1.0
        gq[mask] = -pm / qm
        return gp * g_e, gq * g_e

    return _record("kl_divergence", (p, q), out, grad, fwd)


def l2_normalize(x: Tensor, axis: int) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm."""
    x = _as_tensor(x, "x")
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for ndim {x.ndim}")
    ax = axis % x.ndim
    norms = np.sqrt(np.sum(x.data * x.data, axis=ax, keepdims=True))
    if np.any(norms < 1e-30):
        raise ValueError("l2_normalize cannot scale a zero-norm slice")

    def fwd(a):
        n = np.sqrt(np.sum(a * a, axis=ax, keepdims=True))
        return a / n

    out = Tensor._wrap(fwd(x.data))

    def grad(g):
        y = out.data
        inner = np.sum(g * y, axis=ax, keepdims=True)
        return ((g - y * inner) / norms,)

    if _ACTIVE is not None:
        _ACTIVE._entries.append(_TapeEntry("l2_normalize", (x,), out, grad, fwd))
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    ``logits`` may be 1-D (single example, integer label) or 2-D
    ``[batch, classes]`` with a label per row.  Computed via log-sum-exp,
    so extreme logits stay finite.
    """
    logits = _as_tensor(logits, "logits")
    if logits.ndim == 1:
        mat = logits.data[None, :]
        label_list = [labels]
    elif logits.ndim == 2:
        mat = logits.data
        label_list = list(labels)
    else:
        raise ShapeError(f"cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    batch, classes = mat.shape
    if len(label_list) != batch:
        raise ShapeError(f"expected {batch} labels, got {len(label_list)}")
    idx = []
    for lab in label_list:
        lab = int(lab)
        if not 0 <= lab < classes:
            raise ValueError(f"label {lab} out of range for {classes} classes")
        idx.append(lab)
    idx = np.asarray(idx)
    rows = np.arange(batch)
    one_d = logits.ndim == 1

    def fwd(a):
        m = a[None, :] if one_d else a
        shift = m - np.max(m, axis=1, keepdims=True)
        lse = np.log(np.sum(np.exp(shift), axis=1)) + np.max(m, axis=1)
        return np.asarray(np.mean(lse - m[rows, idx]))

    out = fwd(logits.data)

    def grad(g):
        m = logits.data[None, :] if one_d else logits.data
        shift = m - np.max(m, axis=1, keepdims=True)
        e = np.exp(shift)
        s = e / e.sum(axis=1, keepdims=True)
        s[rows, idx] -= 1.0
        gx = s * (float(g) / batch)
        return (gx[0] if one_d else gx,)

    return _record("cross_entropy", (logits,), out, grad, fwd)


def take(x: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Select ``indices`` along ``axis`` (gather); duplicates are allowed."""
    x = _as_tensor(x, "x")
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for ndim {x.ndim}")
    ax = axis % x.ndim
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("indices must be a non-empty 1-D sequence")
    if np.any(idx < 0) or np.any(idx >= x.shape[ax]):
        raise ValueError(f"index out of range for axis {ax} of size {x.shape[ax]}")

    def fwd(a):
        return np.take(a, idx, axis=ax)

    def grad(g):
        buf = np.zeros(x.shape)
        np.add.at(buf, tuple([slice(None)] * ax + [idx]), g)
        return (buf,)

    return _record("take", (x,), fwd(x.data), grad, fwd)


def graph_apply(adj: Tensor, x: Tensor) -> Tensor:
    """Mix node features with a dense operator: ``out[..., n, c] = sum_m adj[n, m] x[..., m, c]``.

    ``adj`` is [N, N]; ``x`` carries nodes on its second-to-last axis.
    Gradients flow to both operands, so learnable adjacency offsets work.
    """
    adj = _as_tensor(adj, "adj")
    x = _as_tensor(x, "x")
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adj must be square 2-D, got {adj.shape}")
    if x.ndim < 2 or x.shape[-2] != adj.shape[0]:
        raise ShapeError(f"x node axis {x.shape} does not match adj {adj.shape}")

    def fwd(a, b):
        return np.matmul(a, b)

    out = fwd(adj.data, x.data)
    lead = tuple(range(x.ndim - 2))

    def grad(g):
        g_x = np.matmul(adj.data.T, g)
        g_adj = np.tensordot(g, x.data, axes=(lead + (x.ndim - 1,), lead + (x.ndim - 1,)))
        return g_adj, g_x

    return _record("graph_apply", (adj, x), out, grad, fwd)


def channel_map(x: Tensor, theta: Tensor) -> Tensor:
    """Linear map over the trailing channel axis: ``out[..., d] = sum_c x[..., c] theta[c, d]``."""
    x = _as_tensor(x, "x")
    theta = _as_tensor(theta, "theta")
    if theta.ndim != 2:
        raise ShapeError(f"theta must be 2-D, got {theta.shape}")
    if x.ndim < 2 or x.shape[-1] != theta.shape[0]:
        raise ShapeError(f"channel axis {x.shape} does not match theta {theta.shape}")

    def fwd(a, t):
        return np.matmul(a, t)

    out = fwd(x.data, theta.data)
    lead = tuple(range(x.ndim - 1))

    def grad(g):
        g_x = np.matmul(g, theta.data.T)
        g_theta = np.tensordot(x.data, g, axes=(lead, lead))
        return g_x, g_theta

    return _record("channel_map", (x, theta), out, grad, fwd)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_errors(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> list[float]:
    """Per-parameter max relative error between tape and central-difference gradients.

    ``f`` must be a pure function of the parameter list returning a scalar
    tensor.  For each coordinate the relative error is
    ``|analytic - numeric| / max(1e-8, |numeric|)`` with
    ``numeric = (f(x + eps) - f(x - eps)) / (2 eps)``.
    """
    eps = float(eps)
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        _as_tensor(p, "param")
    with Tape() as tape:
        out = f(params)
    if not isinstance(out, Tensor) or out.shape != ():
        raise ShapeError("f must return a scalar Tensor")
    analytic = tape.gradients(out, params)

    def value_at(plist) -> float:
        result = f(plist)
        v = result.item() if isinstance(result, Tensor) else float(result)
        if not np.isfinite(v):
            raise GradientCheckError("function returned a non-finite value")
        return v

    errors: list[float] = []
    for k, p in enumerate(params):
        flat = p.data.ravel()
        a_flat = analytic[k].ravel()
        worst = 0.0
        for j in range(flat.size):
            plus = flat.copy()
            plus[j] += eps
            minus = flat.copy()
            minus[j] -= eps
            hi = params[:k] + [Tensor(plus.reshape(p.shape))] + params[k + 1 :]
            lo = params[:k] + [Tensor(minus.reshape(p.shape))] + params[k + 1 :]
            numeric = (value_at(hi) - value_at(lo)) / (2.0 * eps)
            err = abs(float(a_flat[j]) - numeric) / max(1e-8, abs(numeric))
            if err > worst:
                worst = err
        errors.append(worst)
    return errors


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max over all parameters of :func:`finite_diff_errors`."""
    return max(finite_diff_errors(f, params, eps))
