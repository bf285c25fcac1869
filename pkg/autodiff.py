from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nica_errors import ContractError, DimensionError, NumericError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("autodiff")

# ============================================
# autodiff MODULE OVERVIEW
#
# A Tensor is a 2-D float64 numpy array (rows = batch / time).
# A Tape records Nodes in the order they are computed (define-by-run),
# so reversing the node list is a valid topological order for the
# backward pass. A new Tape is built for every batch.
#
#   tape = Tape()
#   w = tape.parameter("w", W)
#   loss = tape.mean(tape.elementwise(tape.matmul(tape.constant(x), w), np.tanh, dtanh))
#   grads = tape.backward(loss)   # {"w": dloss/dW}

Tensor = np.ndarray


def check_finite(value: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"ERROR: non-finite values in {where}")
    return value


def as_tensor(values, name: str = "tensor") -> Tensor:
    '''
    Return a new 2-D float64 array. A scalar becomes 1x1 and a
    1-D sequence becomes a single row.
    '''
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise DimensionError(f"ERROR: {name} must be 2-D not {arr.ndim}-D")
    if arr.size == 0:
        raise DimensionError(f"ERROR: {name} is empty")
    return check_finite(arr, name)


def _unbroadcast(grad: Tensor, shape: Tuple[int, int]) -> Tensor:
    # sum the adjoint over the axes a (1, n) or (n, 1) operand was broadcast along
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class Node:
    value: Tensor
    parents: Tuple["Node", ...]
    backward_fn: Optional[Callable[[Tensor], Tuple[Tensor, ...]]]
    name: str
    grad: Optional[Tensor]

    def __init__(self, value: Tensor, parents: Tuple["Node", ...] = (),
                 backward_fn: Callable = None, name: str = ""):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.grad = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name}, shape={self.value.shape})"


NodeLike = Union[Node, Tensor]


class Tape:
    nodes: List[Node]
    parameters: Dict[str, Node]

    def __init__(self):
        self.nodes = []
        self.parameters = {}

    def _record(self, value: Tensor, parents: Sequence[Node],
                backward_fn: Callable, name: str) -> Node:
        check_finite(value, name)
        node = Node(value, tuple(parents), backward_fn, name)
        self.nodes.append(node)
        return node

    def _lift(self, a: NodeLike) -> Node:
        return a if isinstance(a, Node) else self.constant(a)

    # leaves

    def parameter(self, name: str, value: Tensor) -> Node:
        '''
        Register a trainable leaf. Registering the same name twice
        returns the first node, so a network applied twice on one
        tape shares its parameters and accumulates their adjoints.
        '''
        if name in self.parameters:
            return self.parameters[name]
        node = self._record(np.asarray(value, dtype=np.float64), (), None, name)
        self.parameters[name] = node
        return node

    def constant(self, value, name: str = "constant") -> Node:
        return self._record(as_tensor(value, name), (), None, name)

    # primitives

    def matmul(self, a: NodeLike, b: NodeLike, name: str = "matmul") -> Node:
        a, b = self._lift(a), self._lift(b)
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"ERROR: {name} shapes {a.shape} and {b.shape} are not aligned")
        av, bv = a.value, b.value
        return self._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), name)

    def add(self, a: NodeLike, b: NodeLike, name: str = "add") -> Node:
        a, b = self._lift(a), self._lift(b)
        try:
            value = a.value + b.value
        except ValueError:
            raise DimensionError(f"ERROR: {name} cannot broadcast {a.shape} and {b.shape}")
        sa, sb = a.shape, b.shape
        return self._record(value, (a, b),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), name)

    def mul(self, a: NodeLike, b: NodeLike, name: str = "mul") -> Node:
        a, b = self._lift(a), self._lift(b)
        try:
            value = a.value * b.value
        except ValueError:
            raise DimensionError(f"ERROR: {name} cannot broadcast {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        return self._record(value, (a, b),
                            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                            name)

    def elementwise(self, a: NodeLike, fn: Callable[[Tensor], Tensor],
                    dfn: Callable[[Tensor], Tensor], name: str = "elementwise") -> Node:
        '''apply fn entrywise; dfn is its derivative evaluated at the input'''
        a = self._lift(a)
        av = a.value
        return self._record(fn(av), (a,), lambda g: (g * dfn(av),), name)

    def sum(self, a: NodeLike, name: str = "sum") -> Node:
        a = self._lift(a)
        shape = a.shape
        return self._record(np.array([[a.value.sum()]]), (a,),
                            lambda g: (np.full(shape, g[0, 0]),), name)

    def mean(self, a: NodeLike, name: str = "mean") -> Node:
        a = self._lift(a)
        shape = a.shape
        n = a.value.size
        return self._record(np.array([[a.value.mean()]]), (a,),
                            lambda g: (np.full(shape, g[0, 0] / n),), name)

    def slice_cols(self, a: NodeLike, start: int, stop: int, name: str = "slice") -> Node:
        a = self._lift(a)
        shape = a.shape
        if not 0 <= start < stop <= shape[1]:
            raise DimensionError(f"ERROR: {name} columns [{start}:{stop}] outside width {shape[1]}")

        def backward(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)
        return self._record(a.value[:, start:stop], (a,), backward, name)

    def concat_cols(self, parts: Sequence[NodeLike], name: str = "concat") -> Node:
        parts = [self._lift(p) for p in parts]
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise DimensionError(f"ERROR: {name} row counts differ: {sorted(rows)}")
        widths = [p.shape[1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def backward(g):
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))
        return self._record(np.hstack([p.value for p in parts]), parts, backward, name)

    # loss heads

    def softmax_cross_entropy(self, logits: NodeLike, labels: np.ndarray,
                              name: str = "softmax_xent") -> Node:
        '''mean multinomial logistic loss; labels are 0-based class indices'''
        logits = self._lift(logits)
        labels = np.asarray(labels, dtype=int)
        n, k = logits.shape
        if labels.shape != (n,):
            raise DimensionError(f"ERROR: {name} expects {n} labels not {labels.shape}")
        if labels.min() < 0 or labels.max() >= k:
            raise ContractError(f"ERROR: {name} labels outside 0..{k - 1}")
        shifted = logits.value - logits.value.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        loss = -log_probs[np.arange(n), labels].mean()

        def backward(g):
            probs = np.exp(log_probs)
            probs[np.arange(n), labels] -= 1.0
            return (g[0, 0] * probs / n,)
        return self._record(np.array([[loss]]), (logits,), backward, name)

    def logistic_loss(self, logits: NodeLike, targets: np.ndarray,
                      name: str = "logistic") -> Node:
        '''mean binary cross-entropy of a single logit column against 0/1 targets'''
        logits = self._lift(logits)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
        if logits.shape[1] != 1 or targets.shape[0] != logits.shape[0]:
            raise DimensionError(f"ERROR: {name} expects a ({targets.shape[0]}, 1) logit column not {logits.shape}")
        v = logits.value
        n = v.shape[0]
        # log(1 + exp(v)) - t v, computed without overflow
        loss = (np.logaddexp(0.0, v) - targets * v).mean()

        def backward(g):
            return (g[0, 0] * (_sigmoid(v) - targets) / n,)
        return self._record(np.array([[loss]]), (logits,), backward, name)

    # backward pass

    def backward(self, loss: Node) -> Dict[str, Tensor]:
        '''
        Populate adjoints of every node reachable from loss and return the
        adjoint of each registered parameter (zeros when unreachable).
        '''
        if loss.value.shape != (1, 1):
            raise ContractError(f"ERROR: backward needs a scalar loss, {loss.name} has shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, grad in zip(node.parents, parent_grads):
                if parent.grad is None:
                    parent.grad = np.array(grad, dtype=np.float64)
                else:
                    parent.grad = parent.grad + grad
        grads = {}
        for name, node in self.parameters.items():
            grad = node.grad if node.grad is not None else np.zeros_like(node.value)
            grads[name] = check_finite(grad, f"gradient of {name}")
        return grads


def _sigmoid(v: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * v))
