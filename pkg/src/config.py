"""配置管理模块

加载和管理 PASTN 的默认配置（config/config.json）
"""

import copy
import json
import logging
import os
from typing import Dict, Any, Optional

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "config.json"
)


class Config:
    """配置管理器"""

    _instance: Optional['Config'] = None

    def __init__(self, config_path: str = DEFAULT_CONFIG_PATH):
        self.config_path = config_path
        self._config: Dict[str, Any] = {}
        self.load()

    @classmethod
    def get_instance(cls, config_path: str = DEFAULT_CONFIG_PATH) -> 'Config':
        """获取配置实例（单例模式）"""
        if cls._instance is None:
            cls._instance = cls(config_path)
        return cls._instance

    def load(self):
        """加载配置文件"""
        if os.path.exists(self.config_path):
            with open(self.config_path, "r", encoding="utf-8") as f:
                self._config = json.load(f)
        else:
            logger.warning(f"Config file '{self.config_path}' not found, using empty defaults")
            self._config = {}

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置值（支持点分隔符，如 'model.channels'）"""
        keys = key.split('.')
        value = self._config
        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return copy.deepcopy(value)

    def get_model_config(self) -> Dict[str, Any]:
        """获取模型配置"""
        return self.get("model", {})

    def get_preset(self, name: str) -> Dict[str, Any]:
        """获取预设（desk / paper_best）"""
        presets = self.get("presets", {})
        if name not in presets:
            raise KeyError(f"未知预设: {name}，可选: {sorted(presets)}")
        return presets[name]

    def get_training_config(self) -> Dict[str, Any]:
        """获取训练配置"""
        return self.get("training", {})

    def get_data_config(self) -> Dict[str, Any]:
        """获取数据配置"""
        return self.get("data", {})

    def get_metrics_config(self) -> Dict[str, Any]:
        """获取评估配置"""
        return self.get("metrics", {})

    def get_logging_config(self) -> Dict[str, Any]:
        """获取日志配置"""
        return self.get("logging", {})
