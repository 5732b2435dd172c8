"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float32 or float64 array. Operations in
:mod:`lfmdt.ops` build a graph of tensors; :func:`backward` walks it in
reverse topological order and accumulates gradients on every node that
requires them.

Multiply-accumulate work is recorded by the innermost active
:class:`MacCounter`, attributed to the scope opened with :func:`mac_scope`.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import UsageError

_FLOAT_TYPES = (np.float32, np.float64)

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_counters: contextvars.ContextVar[tuple] = contextvars.ContextVar("mac_counters", default=())
_scope: contextvars.ContextVar[tuple] = contextvars.ContextVar("mac_scope", default=())
_kink_log: contextvars.ContextVar[list | None] = contextvars.ContextVar("kink_log", default=None)


class Tensor:
    """An n-dimensional array that participates in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        if arr.dtype.type not in _FLOAT_TYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        if any(n < 1 for n in arr.shape):
            raise UsageError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, linking it into the graph when any parent needs gradients.

    ``backward_fn`` maps the output gradient to a tuple with one entry per
    parent (``None`` for parents that receive nothing).
    """
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every node that requires grad."""
    if any(n != 1 for n in root.shape):
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise UsageError("root does not depend on any tensor that requires grad")
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


class MacCounter:
    """Counts scalar multiply-accumulates executed while it is the active counter.

    Use as a context manager. Counts are attributed to the dotted scope
    opened by :func:`mac_scope` (``""`` outside any scope).
    """

    def __init__(self) -> None:
        self.total = 0
        self.by_scope: dict[str, int] = defaultdict(int)
        self._token = None

    def add(self, n: int) -> None:
        n = int(n)
        self.total += n
        self.by_scope[".".join(_scope.get())] += n

    def reset(self) -> None:
        self.total = 0
        self.by_scope.clear()

    def merge(self, other: "MacCounter") -> None:
        self.total += other.total
        for key, value in other.by_scope.items():
            self.by_scope[key] += value

    def __enter__(self) -> "MacCounter":
        self._token = _counters.set(_counters.get() + (self,))
        return self

    def __exit__(self, *exc) -> None:
        _counters.reset(self._token)
        self._token = None


@contextlib.contextmanager
def mac_scope(name: str):
    token = _scope.set(_scope.get() + (name,))
    try:
        yield
    finally:
        _scope.reset(token)


def record_macs(n: int) -> None:
    stack = _counters.get()
    if stack:
        stack[-1].add(n)


def _as_named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    if isinstance(params, Tensor):
        return [("param0", params)]
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def sample_coordinates(
    params, n_samples: int, rng: np.random.Generator
) -> list[tuple[str, int]]:
    """Pick ``n_samples`` distinct flat coordinates, at least one from every array.

    The remaining picks are size-weighted over arrays, so uniform over scalars.
    """
    named = _as_named(params)
    picks = [(name, int(rng.integers(t.size))) for name, t in named]
    sizes = np.array([t.size for _, t in named], dtype=np.float64)
    target = min(max(n_samples, len(picks)), int(sizes.sum()))
    seen = set(picks)
    while len(picks) < target:
        name, t = named[int(rng.choice(len(named), p=sizes / sizes.sum()))]
        p = (name, int(rng.integers(t.size)))
        if p not in seen:
            seen.add(p)
            picks.append(p)
    return picks


def note_kinks(x: np.ndarray) -> None:
    """Record the sign pattern of an input to a piecewise-linear op (no-op unless probing)."""
    log = _kink_log.get()
    if log is not None:
        log.append(x > 0)


def kink_signature(f: Callable[[], Tensor]) -> list[np.ndarray]:
    token = _kink_log.set([])
    try:
        f()
        return _kink_log.get()
    finally:
        _kink_log.reset(token)


def _same_side(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class FiniteDiffReport:
    errors: list[tuple[str, int, float, float, float]]
    skipped: list[tuple[str, int]]

    @property
    def max_rel_err(self) -> float:
        return max((e[4] for e in self.errors), default=0.0)


def finite_diff_report(
    f: Callable[[], Tensor],
    params,
    h: float = 1e-3,
    n_samples: int = 200,
    seed: int = 0,
    coords: Iterable[tuple[str, int]] | None = None,
    skip_kinks: bool = False,
    max_redraws: int = 50,
) -> FiniteDiffReport:
    """Compare analytic and central-difference gradients at sampled coordinates.

    ``f`` is a zero-argument callable that rebuilds the scalar loss from the
    current parameter values. With ``skip_kinks``, a coordinate whose
    ``p +- h`` evaluations flip the sign of any leaky-ReLU or abs input is
    not differentiable over the stencil; it is recorded in ``skipped`` and
    replaced by a fresh coordinate from the same array.
    """
    named = dict(_as_named(params))
    for t in named.values():
        t.grad = None
        t.requires_grad = True
    loss = f()
    backward(loss)
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in named.items()}
    rng = np.random.default_rng(seed)
    if coords is None:
        coords = sample_coordinates(named, n_samples, rng)
    coords = list(coords)
    used = set(coords)
    results, skipped = [], []
    with no_grad():
        base = kink_signature(f) if skip_kinks else None

        def evaluate(name: str, idx: int):
            flat = named[name].data.reshape(-1)
            saved = flat[idx]
            vals, sides = [], []
            for delta in (h, -h):
                flat[idx] = saved + delta
                if skip_kinks:
                    token = _kink_log.set([])
                    try:
                        vals.append(float(f().data.sum()))
                        sides.append(_kink_log.get())
                    finally:
                        _kink_log.reset(token)
                else:
                    vals.append(float(f().data.sum()))
            flat[idx] = saved
            smooth = not skip_kinks or all(_same_side(base, sd) for sd in sides)
            return (vals[0] - vals[1]) / (2 * h), smooth

        for name, idx in coords:
            for _ in range(max_redraws):
                numeric, smooth = evaluate(name, idx)
                if smooth:
                    break
                skipped.append((name, idx))
                size = named[name].size
                if len(used) >= sum(t.size for t in named.values()) or all((name, i) in used for i in range(size)):
                    break
                idx = int(rng.integers(size))
                while (name, idx) in used:
                    idx = int(rng.integers(size))
                used.add((name, idx))
            a = float(analytic[name].reshape(-1)[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            results.append((name, idx, a, numeric, rel))
    return FiniteDiffReport(results, skipped)


def finite_diff_errors(
    f: Callable[[], Tensor],
    params,
    h: float = 1e-3,
    n_samples: int = 200,
    seed: int = 0,
    coords: Iterable[tuple[str, int]] | None = None,
) -> list[tuple[str, int, float, float, float]]:
    """``(name, flat_index, analytic, numeric, rel_err)`` per sampled coordinate."""
    return finite_diff_report(f, params, h=h, n_samples=n_samples, seed=seed, coords=coords).errors


def finite_diff_check(
    f: Callable[[], Tensor],
    params,
    h: float = 1e-3,
    n_samples: int = 200,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    errors = finite_diff_errors(f, params, h=h, n_samples=n_samples, seed=seed)
    return max((e[4] for e in errors), default=0.0)
