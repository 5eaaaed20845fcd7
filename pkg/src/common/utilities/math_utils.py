"""数学工具模块

提供随机数流派生、特征分解（幂迭代）、高斯核、圆周统计等数值功能
"""

import math
import zlib
from typing import Tuple

import numpy as np


class MathUtils:
    """数学计算工具类"""

    @staticmethod
    def derive_rng(seed: int, tag: str) -> np.random.Generator:
        """由 (seed, 用途标签) 派生独立的随机数流

        同一 (seed, tag) 总是得到同一个流；不同 tag 之间互不影响。
        """
        entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode("utf-8"))]
        return np.random.default_rng(np.random.SeedSequence(entropy))

    @staticmethod
    def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        """按 fan-in 缩放的均匀初始化，区间 [-1/sqrt(fan_in), 1/sqrt(fan_in)]"""
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    @staticmethod
    def gaussian_kernel(distance: float, sigma: float) -> float:
        """高斯核 exp(-d^2 / sigma^2)"""
        return math.exp(-(distance ** 2) / (sigma ** 2))

    @staticmethod
    def power_iteration(
        matrix: np.ndarray,
        num_vectors: int = 2,
        max_iter: int = 2000,
        tol: float = 1e-13,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """对称半正定矩阵的前 k 个特征向量（幂迭代 + 收缩）

        Returns:
            (特征值数组, 以列排列的特征向量矩阵)
        """
        size = matrix.shape[0]
        work = np.array(matrix, dtype=np.float64)
        values = np.zeros(num_vectors)
        vectors = np.zeros((size, num_vectors))
        scale = max(float(np.max(np.abs(work))), 1.0)

        for j in range(num_vectors):
            # 确定性的起始向量
            v = np.cos(np.arange(1, size + 1) * (j + 1.0)) + 1.0 / (j + 2.0)
            v = MathUtils._orthogonalize(v, vectors[:, :j])
            norm = np.linalg.norm(v)
            if norm == 0.0:
                v = np.eye(size)[:, j % size]
                v = MathUtils._orthogonalize(v, vectors[:, :j])
                norm = np.linalg.norm(v)
            v = v / norm

            eigenvalue = 0.0
            for _ in range(max_iter):
                w = work @ v
                w = MathUtils._orthogonalize(w, vectors[:, :j])
                w_norm = np.linalg.norm(w)
                if w_norm <= 1e-14 * scale:
                    # 剩余子空间特征值为 0，保留当前正交单位向量
                    eigenvalue = 0.0
                    break
                w = w / w_norm
                eigenvalue = float(w @ work @ w)
                if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
                    v = w
                    break
                v = w

            values[j] = eigenvalue
            vectors[:, j] = v
            work = work - eigenvalue * np.outer(v, v)

        return values, vectors

    @staticmethod
    def _orthogonalize(v: np.ndarray, basis: np.ndarray) -> np.ndarray:
        """对已有基做 Gram-Schmidt 正交化"""
        for i in range(basis.shape[1]):
            v = v - (basis[:, i] @ v) * basis[:, i]
        return v

    @staticmethod
    def resultant_length(angles: np.ndarray) -> float:
        """圆周合成向量长度 R = |mean(exp(i*theta))|"""
        if angles.size == 0:
            return 1.0
        return float(math.hypot(np.mean(np.cos(angles)), np.mean(np.sin(angles))))

    @staticmethod
    def autocorrelation(series: np.ndarray, lag: int) -> float:
        """给定滞后的样本自相关系数"""
        series = np.asarray(series, dtype=np.float64)
        if lag <= 0 or lag >= series.size:
            raise ValueError(f"滞后必须在 (0, {series.size}) 之间")
        a = series[:-lag] - series.mean()
        b = series[lag:] - series.mean()
        denom = np.sum((series - series.mean()) ** 2)
        if denom == 0.0:
            return 0.0
        return float(np.sum(a * b) / denom)
