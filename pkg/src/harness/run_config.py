"""运行配置

合并顺序：config/config.json 默认值 → 预设 → 用户 JSON 文件 → 命令行参数。
合并结果以规范 JSON（键排序）写到输出目录，重新解析后再序列化字节一致。
"""

import json
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import logging

from common.exceptions import ConfigurationError
from common.utilities import FileUtils
from config import Config
from core.model import ModelConfig, ablation_variant
from core.training import TrainingConfig

logger = logging.getLogger(__name__)

SECTIONS = ("model", "training", "data", "metrics")


def _merge(base: Dict[str, Any], update: Dict[str, Any], section: str) -> Dict[str, Any]:
    unknown = sorted(set(update) - set(base))
    if unknown:
        raise ConfigurationError(f"配置段 {section} 中有未知键: {unknown}")
    merged = dict(base)
    merged.update(update)
    return merged


@dataclass
class RunConfig:
    model: Dict[str, Any]
    training: Dict[str, Any]
    data: Dict[str, Any]
    metrics: Dict[str, Any]
    seeds: List[int]
    ablation: Dict[str, bool] = field(default_factory=dict)
    preset: Optional[str] = None
    data_dir: Optional[str] = None
    output_dir: Optional[str] = None

    @classmethod
    def defaults(cls) -> "RunConfig":
        config = Config.get_instance()
        training = config.get_training_config()
        return cls(
            model=config.get_model_config(),
            training=training,
            data=config.get_data_config(),
            metrics=config.get_metrics_config(),
            seeds=[int(training.get("seed", 1))],
        )

    @classmethod
    def build(
        cls,
        config_file: Optional[str] = None,
        preset: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "RunConfig":
        """按优先级合并出有效配置

        overrides 的结构与配置文件相同，值为 None 的项被忽略。
        """
        run = cls.defaults()
        user = FileUtils.read_json(config_file) if config_file else {}
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

        preset = overrides.get("preset") or user.get("preset") or preset
        if preset:
            try:
                run.model = _merge(run.model, Config.get_instance().get_preset(preset), "presets")
            except KeyError as e:
                raise ConfigurationError(str(e)) from e
            run.preset = preset

        for layer in (user, overrides):
            run._apply(layer)
        if "seeds" not in user and "seeds" not in overrides:
            run.seeds = [int(run.training.get("seed", 1))]
        return run

    def _apply(self, layer: Dict[str, Any]) -> None:
        allowed = set(SECTIONS) | {"seeds", "ablation", "preset", "data_dir", "output_dir"}
        unknown = sorted(set(layer) - allowed)
        if unknown:
            raise ConfigurationError(f"未知的配置项: {unknown}")
        for section in SECTIONS:
            values = {k: v for k, v in layer.get(section, {}).items() if v is not None}
            if values:
                setattr(self, section, _merge(getattr(self, section), values, section))
        if layer.get("ablation"):
            self.ablation = {**self.ablation, **{k: bool(v) for k, v in layer["ablation"].items() if v}}
        if layer.get("seeds"):
            self.seeds = [int(s) for s in layer["seeds"]]
        for name in ("data_dir", "output_dir"):
            if layer.get(name):
                setattr(self, name, layer[name])

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return FileUtils.canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"未知的配置项: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def model_config(self, num_nodes: int, flags: Optional[Dict[str, bool]] = None) -> ModelConfig:
        base = ModelConfig.from_dict({**self.model, "num_nodes": num_nodes})
        return ablation_variant(base, self.ablation if flags is None else flags)

    def training_config(self, seed: int) -> TrainingConfig:
        known = {f.name for f in fields(TrainingConfig)}
        values = {k: v for k, v in self.training.items() if k in known}
        values["seed"] = seed
        values["mape_mask_eps"] = float(self.metrics.get("mape_mask_eps", values.get("mape_mask_eps", 1.0)))
        return TrainingConfig(**values)
