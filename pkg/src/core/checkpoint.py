"""检查点读写模块

二进制布局（全部小端）：
    8 字节魔数 | uint32 版本 | uint64 JSON 长度 | JSON（模型配置 + 元数据 + 参数名）
    | uint32 张量个数 | 每个张量：uint32 维数、uint64×维数 形状、float64 数据
张量按 ModelParams 的声明顺序排列，读回按位一致。
"""

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
import logging

from common.exceptions import CheckpointError, ConfigurationError
from core.model import ModelConfig, ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"PASTNCKP"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    metadata: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(config: ModelConfig, params: ModelParams, metadata: Dict[str, Any] = None) -> bytes:
    named = params.named_tensors()
    header = {
        "model": config.to_dict(),
        "metadata": metadata or {},
        "parameters": [name for name, _ in named],
    }
    text = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<IQ", VERSION, len(text)))
    buffer.write(text)
    buffer.write(struct.pack("<I", len(named)))
    for _, tensor in named:
        buffer.write(struct.pack("<I", tensor.ndim))
        if tensor.ndim:
            buffer.write(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        buffer.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return buffer.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"检查点在偏移 {self.offset} 处被截断")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("不是 PASTN 检查点（魔数不符）")
    version, length = reader.unpack("<IQ")
    if version != VERSION:
        raise CheckpointError(f"不支持的检查点版本 {version}")
    try:
        header = json.loads(reader.take(length).decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError, ConfigurationError) as e:
        raise CheckpointError(f"检查点 JSON 段无效: {e}") from e

    params = ModelParams(config, seed=0)
    named = params.named_tensors()
    names: List[str] = header.get("parameters", [])
    (count,) = reader.unpack("<I")
    if count != len(named) or names != [name for name, _ in named]:
        raise CheckpointError(f"检查点有 {count} 个张量，与配置推出的 {len(named)} 个不一致")
    for name, tensor in named:
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        if tuple(shape) != tensor.shape:
            raise CheckpointError(f"张量 {name} 形状为 {tuple(shape)}，期望 {tensor.shape}")
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape)
        tensor.data[...] = values
    if reader.offset != len(blob):
        raise CheckpointError(f"检查点末尾有 {len(blob) - reader.offset} 字节多余数据")
    return Checkpoint(config=config, params=params, metadata=header.get("metadata", {}))


def save_checkpoint(path: str, config: ModelConfig, params: ModelParams, metadata: Dict[str, Any] = None) -> None:
    blob = encode_checkpoint(config, params, metadata)
    with open(path, "wb") as f:
        f.write(blob)
    logger.info(f"检查点已保存: {path} ({len(blob)} 字节)")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"无法读取检查点 {path}: {e}") from e
    return decode_checkpoint(blob)
