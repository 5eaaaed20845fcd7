"""梯度检查模块

用中心差分校验解析梯度，供各算子和整网的梯度测试使用
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    """梯度检查结果"""

    max_rel_error: float
    checked: int
    worst: str = ""
    errors: Dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    index: Tuple[int, ...],
    eps: float = 1e-5,
) -> float:
    """单个元素的中心差分 (f(x+h) − f(x−h)) / 2h"""
    original = tensor.data[index]
    with no_grad():
        tensor.data[index] = original + eps
        f_plus = fn().item()
        tensor.data[index] = original - eps
        f_minus = fn().item()
    tensor.data[index] = original
    return (f_plus - f_minus) / (2.0 * eps)


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = 1e-6,
) -> GradCheckResult:
    """比较解析梯度与中心差分

    相对误差 = |a − n| / max(|a|, |n|, abs_floor)。
    max_entries 不为 None 时每个张量随机抽取该数量的元素。
    """
    for t in tensors:
        t.zero_grad()
    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst_error, worst_label, checked = 0.0, "", 0
    errors: Dict[str, float] = {}
    for position, (t, grad) in enumerate(zip(tensors, analytic)):
        indices: List[Tuple[int, ...]] = list(np.ndindex(t.shape))
        if max_entries is not None and len(indices) > max_entries:
            picks = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picks)]
        label = t.name or f"tensor{position}"
        tensor_worst = 0.0
        for index in indices:
            numeric = numerical_gradient(fn, t, index, eps)
            value = float(grad[index])
            denom = max(abs(value), abs(numeric), abs_floor)
            error = abs(value - numeric) / denom
            tensor_worst = max(tensor_worst, error)
            checked += 1
            if error > worst_error:
                worst_error, worst_label = error, f"{label}{list(index)}"
        errors[label] = tensor_worst
    return GradCheckResult(max_rel_error=worst_error, checked=checked, worst=worst_label, errors=errors)
