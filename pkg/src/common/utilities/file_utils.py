"""文件处理工具模块

提供目录创建、规范 JSON 读写、CSV 写出等功能
"""

import json
import os
from typing import Any, Dict, List

import pandas as pd
import logging

logger = logging.getLogger(__name__)


class FileUtils:
    """文件处理工具类"""

    @staticmethod
    def ensure_dir(path: str) -> str:
        """确保目录存在"""
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def canonical_json(data: Dict[str, Any]) -> str:
        """规范 JSON 文本（键排序、2 空格缩进、末尾换行）"""
        return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @staticmethod
    def write_json(file_path: str, data: Dict[str, Any]) -> None:
        """写入规范 JSON 文件"""
        try:
            parent = os.path.dirname(file_path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(file_path, "w", encoding="utf-8", newline="\n") as f:
                f.write(FileUtils.canonical_json(data))
        except Exception as e:
            logger.error(f"写入JSON文件失败 {file_path}: {str(e)}")
            raise

    @staticmethod
    def read_json(file_path: str) -> Dict[str, Any]:
        """读取 JSON 文件"""
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                return json.load(f)
        except Exception as e:
            logger.error(f"读取JSON文件失败 {file_path}: {str(e)}")
            raise

    @staticmethod
    def write_csv(
        file_path: str,
        rows: List[Dict[str, Any]],
        columns: List[str],
    ) -> None:
        """写入 CSV（列顺序固定，浮点用 repr 精度，缺失值写 NA）"""
        parent = os.path.dirname(file_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        frame = pd.DataFrame(rows, columns=columns)
        with open(file_path, "w", encoding="utf-8", newline="") as f:
            frame.to_csv(f, index=False, float_format="%.17g", na_rep="NA", lineterminator="\n")

