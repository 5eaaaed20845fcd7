"""张量与反向自动微分模块

以 numpy float64 数组为底层存储，实现 PASTN 所需的全部可微算子：
矩阵乘、einsum、膨胀因果卷积、softmax、layer norm、逐元素运算、
dropout、拼接/切分、转置、求和/均值等，并通过计算带（tape）做反向传播。

使用示例:
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = (x * x).sum()
    backward(loss)
    x.grad  # [2, 4, 6]
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from common.exceptions import ContractError, DimensionError, LengthError

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """当前线程是否记录计算带"""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """在上下文内不记录计算带（评估模式使用）"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass
class TapeNode:
    """计算带节点：算子名、输入句柄、反向规则（闭包中保存前向激活）"""

    op: str
    inputs: Tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """带可选梯度槽的稠密张量"""

    # 让 numpy 数组/标量与 Tensor 运算时交给 Tensor 的反射运算符
    __array_ufunc__ = None

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        frozen: bool = False,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.frozen = frozen
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None

    # ------------------------------------------------------------------
    # 基本属性
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    @property
    def tracks_grad(self) -> bool:
        """是否参与反向传播（冻结的叶子不参与）"""
        return self.requires_grad and not (self.is_leaf and self.frozen)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() 需要单元素张量，得到形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self):
        return self.shape[0]

    # ------------------------------------------------------------------
    # 运算符
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # ------------------------------------------------------------------
    # 方法形式
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def abs(self) -> "Tensor":
        return tensor_abs(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis=axis)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    """把常量包装为不需要梯度的张量"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """构造算子输出，必要时在计算带上登记节点"""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.name = None
    out.frozen = False
    out.grad = None
    out.node = None
    out.requires_grad = is_grad_enabled() and any(t.tracks_grad for t in inputs)
    if out.requires_grad:
        out.node = TapeNode(op=op, inputs=tuple(inputs), backward=backward_fn)
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: 形状无法广播 {a.shape} 与 {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和回原形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# 逐元素二元运算
# ----------------------------------------------------------------------
def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, "div", (a, b), backward)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


# ----------------------------------------------------------------------
# 逐元素一元运算
# ----------------------------------------------------------------------
def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    # 0.5 * (1 + tanh(x/2)) 在大幅值输入下不会溢出
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, "exp", (a,), lambda g: (g * y,))


def tensor_abs(a: TensorLike) -> Tensor:
    """绝对值，在 0 处次梯度取 0"""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))


# ----------------------------------------------------------------------
# 归约
# ----------------------------------------------------------------------
def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tensor_sum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(y, "sum", (a,), backward)


def tensor_mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tensor_sum(a, axis=axes, keepdims=keepdims) / float(count)


# ----------------------------------------------------------------------
# 形状变换
# ----------------------------------------------------------------------
def reshape(a: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: 无法把 {a.shape} 变为 {shape}")
    return _result(y, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inverse),))


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)
    y = a.data[index]
    advanced = any(
        isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,))
    )

    def backward(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(np.array(y, copy=True), "getitem", (a,), backward)


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: 输入为空")
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: 形状不兼容 {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(y, "concat", tensors, backward)


def split(a: TensorLike, sections: int, axis: int = -1) -> List[Tensor]:
    """沿轴等分为 sections 份"""
    a = as_tensor(a)
    extent = a.shape[axis]
    if sections < 1 or extent % sections != 0:
        raise DimensionError(f"split: 轴长度 {extent} 不能被 {sections} 整除")
    width = extent // sections
    axis = axis % a.ndim
    parts = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * width, (i + 1) * width)
        parts.append(getitem(a, tuple(index)))
    return parts


def pad_left(a: TensorLike, amount: int, axis: int = -1) -> Tensor:
    """沿轴在左侧补零"""
    a = as_tensor(a)
    if amount <= 0:
        return a
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (amount, 0)
    index = [slice(None)] * a.ndim
    index[axis] = slice(amount, None)
    index = tuple(index)
    return _result(np.pad(a.data, widths), "pad_left", (a,), lambda g: (g[index],))


# ----------------------------------------------------------------------
# 线性代数
# ----------------------------------------------------------------------
def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """矩阵乘（支持前导批维广播），dA = dZ·Bᵀ，dB = Aᵀ·dZ"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: 维度不匹配 {a.shape} × {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: 批维无法广播 {a.shape} × {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def einsum(subscripts: str, *operands: TensorLike) -> Tensor:
    """显式输出下标的 einsum（每个操作数内不允许重复下标）"""
    tensors = [as_tensor(o) for o in operands]
    spec = subscripts.replace(" ", "")
    if "->" not in spec or "." in spec:
        raise ContractError(f"einsum 需要显式输出且不支持省略号: {subscripts}")
    inputs_spec, out_spec = spec.split("->")
    subs = inputs_spec.split(",")
    if len(subs) != len(tensors):
        raise ContractError(f"einsum 下标个数 {len(subs)} 与操作数个数 {len(tensors)} 不符")
    for sub_spec, t in zip(subs, tensors):
        if len(set(sub_spec)) != len(sub_spec) or len(sub_spec) != t.ndim:
            raise DimensionError(f"einsum: 下标 '{sub_spec}' 与形状 {t.shape} 不匹配")
    try:
        y = np.einsum(spec, *[t.data for t in tensors], optimize=True)
    except ValueError as e:
        raise DimensionError(f"einsum: {e}")

    def backward(g):
        grads = []
        for i, t in enumerate(tensors):
            if not t.tracks_grad:
                grads.append(None)
                continue
            others = [(subs[j], tensors[j].data) for j in range(len(tensors)) if j != i]
            available = set(out_spec).union(*[set(s) for s, _ in others])
            target = "".join(c for c in subs[i] if c in available)
            expr = ",".join([out_spec] + [s for s, _ in others]) + "->" + target
            gi = np.einsum(expr, g, *[d for _, d in others], optimize=True)
            if target != subs[i]:
                # 仅在该操作数中出现并被求和的下标：广播回原形状
                keep = [t.shape[k] if c in available else 1 for k, c in enumerate(subs[i])]
                gi = np.broadcast_to(gi.reshape(keep), t.shape)
            grads.append(gi)
        return grads

    return _result(y, "einsum", tensors, backward)


# ----------------------------------------------------------------------
# 网络算子
# ----------------------------------------------------------------------
def softmax(a: TensorLike, axis: int = -1) -> Tensor:
    """减最大值的数值稳定 softmax"""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, "softmax", (a,), backward)


def layer_norm(x: TensorLike, gamma: TensorLike, beta: TensorLike, eps: float = 1e-5) -> Tensor:
    """最后一维上的层归一化（总体方差），再做仿射变换"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(f"layer_norm: gamma/beta 需要形状 ({width},)，得到 {gamma.shape}/{beta.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gamma.data + beta.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=reduce_axes)
        g_beta = g.sum(axis=reduce_axes)
        dxhat = g * gamma.data
        gx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    return _result(y, "layer_norm", (x, gamma, beta), backward)


def dropout(
    a: TensorLike,
    p: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """反向缩放 dropout；评估模式或 p=0 时原样返回"""
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if not 0.0 < p < 1.0:
        raise ContractError(f"dropout 概率必须在 [0, 1) 内，得到 {p}")
    if rng is None:
        raise ContractError("训练模式的 dropout 需要随机数流")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _result(a.data * mask, "dropout", (a,), lambda g: (g * mask,))


def dilated_causal_conv(x: TensorLike, f: TensorLike, dilation: int = 1) -> Tensor:
    """膨胀因果卷积 y(t) = Σ_s f(s)·x(t − dilation·s)，无隐式补零

    Args:
        x: (C_in, T) 或 (B, C_in, N, T)，沿最后一维（时间）卷积，各节点独立
        f: (C_out, C_in, k)
        dilation: 膨胀因子

    Returns:
        (C_out, T') 或 (B, C_out, N, T')，T' = T − dilation·(k−1)
    """
    x, f = as_tensor(x), as_tensor(f)
    squeeze = x.ndim == 2
    xd = x.data[None, :, None, :] if squeeze else x.data
    if xd.ndim != 4 or f.ndim != 3 or f.shape[1] != xd.shape[1]:
        raise DimensionError(f"dilated_causal_conv: 输入 {x.shape} 与卷积核 {f.shape} 不匹配")
    if dilation < 1:
        raise ContractError(f"dilation 必须为正整数，得到 {dilation}")
    k = f.shape[2]
    length = xd.shape[-1]
    span = dilation * (k - 1)
    if length <= span:
        raise LengthError(f"序列长度 {length} 不足以覆盖感受野 {span + 1}")
    out_len = length - span
    starts = [dilation * (k - 1 - s) for s in range(k)]

    y = np.zeros((xd.shape[0], f.shape[0], xd.shape[2], out_len))
    for s, start in enumerate(starts):
        y += np.einsum("oi,bint->bont", f.data[:, :, s], xd[..., start:start + out_len], optimize=True)

    def backward(g):
        g4 = g[None, :, None, :] if squeeze else g
        gx = np.zeros_like(xd)
        gf = np.zeros_like(f.data)
        for s, start in enumerate(starts):
            gx[..., start:start + out_len] += np.einsum("oi,bont->bint", f.data[:, :, s], g4, optimize=True)
            gf[:, :, s] = np.einsum("bont,bint->oi", g4, xd[..., start:start + out_len], optimize=True)
        if squeeze:
            gx = gx[0, :, 0, :]
        return gx, gf

    return _result(y[0, :, 0, :] if squeeze else y, "dilated_causal_conv", (x, f), backward)


# ----------------------------------------------------------------------
# 反向传播
# ----------------------------------------------------------------------
def _topological_order(root: Tensor) -> List[Tensor]:
    """迭代式后序遍历，得到计算带的拓扑序"""
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in reversed(tensor.node.inputs):
                if parent.tracks_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """对标量损失做反向传播，梯度累加到 requires_grad 的叶子上"""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss)
        raise ContractError(f"backward 只能作用于标量，得到 {shape}")
    if not loss.requires_grad:
        raise ContractError("损失不在计算带上（没有需要梯度的输入）")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(order):
        g = grads.pop(id(tensor), None)
        if g is None:
            continue
        if tensor.node is None:
            if tensor.tracks_grad:
                tensor.grad = np.array(g, copy=True) if tensor.grad is None else tensor.grad + g
            continue
        for parent, pg in zip(tensor.node.inputs, tensor.node.backward(g)):
            if pg is None or not parent.tracks_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
