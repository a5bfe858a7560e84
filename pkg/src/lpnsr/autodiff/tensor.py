"""Tensor value type, operation tape and reverse-mode sweep."""

import threading

import numpy as np

from ..errors import ShapeError

DTYPE = np.float32

_state = threading.local()


class Tensor:
    """Dense float32 array with optional gradient tracking.

    Tensors are value-like: operations never modify ``data`` in place, and the
    backward sweep only writes to ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=getattr(_state, "dtype", DTYPE))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name!r}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}{flag})"


class reference_precision:
    """Evaluate new tensors in float64 on this thread (finite-difference oracle only)."""

    def __enter__(self):
        self.prev = getattr(_state, "dtype", DTYPE)
        _state.dtype = np.float64
        return self

    def __exit__(self, *exc):
        _state.dtype = self.prev
        return False


def as_tensor(value):
    """Wrap arrays and scalars; pass tensors through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class _Record:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, output, inputs, backward_fn, op):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered log of differentiable operations executed while active.

    Use as a context manager; operations run outside any active tape are not
    recorded and their outputs carry no gradient history. A tape belongs to
    the thread that entered it.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def __len__(self):
        return len(self.records)

    def ops(self):
        return [r.op for r in self.records]


def active_tape():
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def record(op, output, inputs, backward_fn):
    """Attach ``output`` to the active tape if any input needs a gradient.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.records.append(_Record(output, tuple(inputs), backward_fn, op))
    return output


def backward(root, tape, leaves=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Gradients are added to existing ``grad`` buffers, so clear them between
    optimisation steps. Tensors listed in ``leaves`` that the root does not
    depend on receive an explicit zero gradient.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    produced = {id(r.output) for r in tape.records}
    grads = {id(root): np.ones(root.shape, dtype=DTYPE)}
    touched = {}
    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.output), None)
        if g_out is None:
            continue
        in_grads = rec.backward_fn(g_out)
        for tensor, g in zip(rec.inputs, in_grads):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                touched[key] = tensor
    for key, tensor in touched.items():
        g = grads[key].astype(DTYPE, copy=False)
        tensor.grad = g if tensor.grad is None else tensor.grad + g
    for leaf in leaves or ():
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape, dtype=DTYPE)


class kink_watch:
    """Collect sign patterns at non-smooth points of piecewise ops.

    Used by the finite-difference checker to detect perturbations that move
    an activation or an absolute value across its kink.
    """

    def __enter__(self):
        self.signs = []
        stack = getattr(_state, "watches", None)
        if stack is None:
            stack = _state.watches = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.watches.pop()
        return False


def note_kinks(values):
    stack = getattr(_state, "watches", None)
    if stack:
        stack[-1].signs.append(values > 0)
