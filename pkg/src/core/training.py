"""训练模块

MAE 目标、带全局范数裁剪的 Adam、按时间顺序切分、带早停的训练循环和验证评估
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import logging

from common.constants import (
    DEFAULT_ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_CLIP_NORM,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_MAPE_MASK_EPS,
    DEFAULT_PATIENCE,
    DEFAULT_SPLIT_RATIOS,
)
from common.exceptions import ConfigurationError, ContractError, DataError, DimensionError, DivergenceError
from common.utilities import MathUtils, SystemUtils, ValidationUtils
from core.metrics import MetricsReport, compute_metrics
from core.tensor import Tensor, as_tensor, backward, no_grad, tensor_abs

logger = logging.getLogger(__name__)

NamedTensors = Sequence[Tuple[str, Tensor]]


def mae_loss(pred: Tensor, target) -> Tensor:
    """mean|pred − target|（在标准化后的数值上）"""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mae_loss: 预测 {pred.shape} 与目标 {target.shape} 形状不同")
    return tensor_abs(pred - target).mean()


@dataclass
class TrainingConfig:
    learning_rate: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    patience: int = DEFAULT_PATIENCE
    seed: int = 1
    record_timing: bool = True
    mape_mask_eps: float = DEFAULT_MAPE_MASK_EPS

    def __post_init__(self):
        ValidationUtils.require_positive_int("batch_size", self.batch_size)
        ValidationUtils.require_positive_int("epochs", self.epochs)
        ValidationUtils.require_positive_int("patience", self.patience)
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate 不能为负，得到 {self.learning_rate}")


@dataclass
class TrainState:
    """优化器状态；一阶/二阶矩与参数同形"""

    epoch: int = 0
    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    best_val_mae: float = math.inf
    best_epoch: int = 0
    seed: int = 0
    learning_rate: float = DEFAULT_LR


def global_grad_norm(named: NamedTensors) -> float:
    return math.sqrt(sum(float(np.sum(t.grad ** 2)) for _, t in named if t.grad is not None))


def adam_step(
    named: NamedTensors,
    state: TrainState,
    lr: Optional[float] = None,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_ADAM_EPS,
    clip: Optional[float] = DEFAULT_CLIP_NORM,
) -> float:
    """全局范数裁剪后做一步带偏差修正的 Adam，原地更新；返回裁剪前的梯度范数"""
    lr = state.learning_rate if lr is None else lr
    active = [(name, t) for name, t in named if not t.frozen]
    missing = [name for name, t in active if t.grad is None]
    if missing:
        raise ContractError(f"以下可训练参数没有梯度: {missing[:5]}")

    norm = global_grad_norm(active)
    scale = clip / norm if clip and norm > clip else 1.0
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, t in active:
        grad = t.grad * scale
        m = state.first_moments.setdefault(name, np.zeros_like(t.data))
        v = state.second_moments.setdefault(name, np.zeros_like(t.data))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        t.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return norm


@dataclass
class SplitRanges:
    train: range
    val: range
    test: range

    def get(self, name: str) -> range:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def chronological_split(
    num_windows: int,
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
    gap: int = 0,
) -> SplitRanges:
    """按时间顺序切分窗口下标

    边界取 floor(W·r)；gap>0 时丢弃验证/测试段开头的 gap 个窗口，
    使相邻两段的窗口覆盖的原始时间步互不重叠。
    """
    r = ValidationUtils.require_ratios(ratios)
    first = int(math.floor(num_windows * r[0] + 1e-9))
    second = int(math.floor(num_windows * (r[0] + r[1]) + 1e-9))
    splits = SplitRanges(
        train=range(0, first),
        val=range(min(first + gap, second), second),
        test=range(min(second + gap, num_windows), num_windows),
    )
    for name in ("train", "val", "test"):
        if len(splits.get(name)) == 0:
            raise DataError(f"{num_windows} 个窗口（间隔 {gap}）不足以让 {name} 段至少有一个窗口")
    return splits


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: Optional[float]
    seconds: float

    def as_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_mae": self.val_mae,
            "val_rmse": self.val_rmse,
            "val_mape": self.val_mape,
            "seconds": self.seconds,
        }


@dataclass
class TrainResult:
    best_snapshot: Dict[str, np.ndarray]
    log: List[EpochRecord]
    state: TrainState
    mean_epoch_seconds: float = 0.0


def _batches(indices: np.ndarray, batch_size: int) -> List[np.ndarray]:
    return [indices[i:i + batch_size] for i in range(0, len(indices), batch_size)]


def prefetch_batches(dataset, batches: Sequence[np.ndarray]) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """单线程预取下一批，产出顺序与 batches 一致"""
    if not batches:
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(dataset.batch, batches[0])
        for i, indices in enumerate(batches):
            x, y = pending.result()
            if i + 1 < len(batches):
                pending = pool.submit(dataset.batch, batches[i + 1])
            yield indices, x, y


def predict_windows(model, dataset, indices: Sequence[int], batch_size: int = DEFAULT_BATCH_SIZE,
                    threads: Optional[int] = None) -> np.ndarray:
    """评估模式下对若干窗口做预测，返回原始单位 len×T'×N"""
    indices = np.asarray(list(indices), dtype=np.int64)
    threads = SystemUtils.get_thread_cap() if threads is None else max(1, threads)

    def run(batch: np.ndarray) -> np.ndarray:
        with no_grad():
            out = model.forward(dataset.inputs[batch])
        return dataset.scaler.inverse_transform(out.data[..., 0])

    batches = _batches(indices, batch_size)
    if threads == 1:
        outputs = [run(batch) for batch in batches]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, batches))
    return np.concatenate(outputs, axis=0)


def evaluate_split(model, dataset, split: str = "val", batch_size: int = DEFAULT_BATCH_SIZE,
                   threads: Optional[int] = None, mask_eps: float = DEFAULT_MAPE_MASK_EPS) -> MetricsReport:
    """某一段窗口上的原始单位指标"""
    indices = dataset.splits.get(split)
    pred = predict_windows(model, dataset, indices, batch_size, threads)
    return compute_metrics(pred, dataset.targets_original(indices), mask_eps)


def train_loop(model, dataset, config: TrainingConfig) -> TrainResult:
    """训练并按验证 MAE 选出最佳参数

    每轮用 (seed, "shuffle") 派生的随机流打乱训练窗口；dropout 用 (seed, "dropout")。
    连续 patience 轮验证 MAE 没有改善则提前停止。
    """
    params = model.params
    state = TrainState(seed=config.seed, learning_rate=config.learning_rate)
    shuffle_rng = MathUtils.derive_rng(config.seed, "shuffle")
    dropout_rng = MathUtils.derive_rng(config.seed, "dropout")
    train_indices = np.asarray(list(dataset.splits.train), dtype=np.int64)
    best = params.snapshot()
    log: List[EpochRecord] = []
    stale = 0
    durations = []

    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        started = time.perf_counter()
        order = shuffle_rng.permutation(train_indices)
        total = 0.0
        for batch_index, (indices, x, y) in enumerate(prefetch_batches(dataset, _batches(order, config.batch_size))):
            params.zero_grad()
            loss = mae_loss(model.forward(x, training=True, rng=dropout_rng), y)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(batch_index, value)
            backward(loss)
            adam_step(
                params.trainable(), state,
                beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps, clip=config.clip_norm,
            )
            total += value * len(indices)
        train_loss = total / len(order)

        report = evaluate_split(model, dataset, "val", config.batch_size, mask_eps=config.mape_mask_eps)
        elapsed = time.perf_counter() - started
        durations.append(elapsed)
        val = report.overall
        if val.mae < state.best_val_mae:
            state.best_val_mae, state.best_epoch = val.mae, epoch
            best = params.snapshot()
            stale = 0
        else:
            stale += 1
        log.append(EpochRecord(epoch, train_loss, val.mae, val.rmse, val.mape,
                               elapsed if config.record_timing else 0.0))
        logger.info(
            f"epoch {epoch}: train_loss={train_loss:.6f} val_mae={val.mae:.4f} "
            f"val_rmse={val.rmse:.4f} best={state.best_val_mae:.4f}@{state.best_epoch} ({elapsed:.1f}s)"
        )
        if stale >= config.patience:
            logger.info(f"验证 MAE 连续 {config.patience} 轮未改善，提前停止")
            break

    return TrainResult(
        best_snapshot=best,
        log=log,
        state=state,
        mean_epoch_seconds=float(np.mean(durations)) if config.record_timing else 0.0,
    )
