"""命令行端到端测试

小规模数据 + 小模型，跑通 generate-data → train → evaluate → diagnose → ablate
"""
import sys
import os
import json
import logging

import pandas as pd
import pytest

ROOT = os.path.join(os.path.dirname(__file__), '..', '..')
sys.path.insert(0, os.path.join(ROOT, 'src'))
sys.path.insert(0, ROOT)

from core.checkpoint import load_checkpoint
from harness.command_manager import get_command_manager
from pastn_cli import main

SMALL_CONFIG = {
    "model": {"layers": 2, "channels": 8, "diffusion_depth": 1, "heads": 2},
    "training": {"epochs": 2, "batch_size": 64, "patience": 5},
}


def _run(*argv, log_dir):
    return main([*argv, "--log-dir", str(log_dir)])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pastn")
    logs = root / "logs"
    config = root / "small.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    data = root / "data"
    assert _run("generate-data", "--nodes", "4", "--days", "2", "--seed", "3", "--radius", "0.8",
                "--out", str(data), log_dir=logs) == 0
    return {"root": root, "logs": logs, "config": config, "data": data}


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace["root"] / "run"
    code = _run("train", "--config", str(workspace["config"]), "--data", str(workspace["data"]),
                "--out", str(out), "--seed", "2", "--no-timing", log_dir=workspace["logs"])
    assert code == 0
    return out


def test_commands_are_registered():
    """五个子命令都已注册"""
    names = get_command_manager().get_command_names()
    assert names == ["ablate", "diagnose", "evaluate", "generate-data", "train"]


def test_generate_data_is_byte_identical(workspace):
    """同样参数生成两次，输出文件逐字节相同"""
    again = workspace["root"] / "data_again"
    assert _run("generate-data", "--nodes", "4", "--days", "2", "--seed", "3", "--radius", "0.8",
                "--out", str(again), log_dir=workspace["logs"]) == 0
    for name in ("flow.csv", "adjacency.csv", "positions.csv", "generation.json"):
        assert (workspace["data"] / name).read_bytes() == (again / name).read_bytes()
    flow = pd.read_csv(workspace["data"] / "flow.csv")
    assert list(flow.columns) == ["timestamp", "node_0", "node_1", "node_2", "node_3"]
    assert len(flow) == 576


def test_usage_errors_exit_with_two(workspace):
    """未知参数/未知命令/无参数返回 2；--help 返回 0"""
    assert _run("train", "--bogus", log_dir=workspace["logs"]) == 2
    assert main(["fly"]) == 2
    assert main([]) == 2
    assert main(["--help"]) == 0


def test_missing_data_exits_with_one(workspace, capsys):
    """数据目录不存在时返回 1 并在 stderr 说明原因"""
    code = _run("train", "--data", str(workspace["root"] / "nowhere"), "--out", str(workspace["root"] / "x"),
                log_dir=workspace["logs"])
    assert code == 1
    assert "数据文件不存在" in capsys.readouterr().err


def test_train_writes_outputs(trained):
    """训练写出检查点、epoch 日志、效率统计和规范化的有效配置"""
    for name in ("checkpoint.bin", "epoch_log.csv", "efficiency.json", "effective_config.json"):
        assert (trained / name).exists()
    log = pd.read_csv(trained / "epoch_log.csv")
    assert list(log.columns) == ["epoch", "train_loss", "val_mae", "val_rmse", "val_mape", "seconds"]
    assert len(log) == 2 and (log["seconds"] == 0).all()
    effective = json.loads((trained / "effective_config.json").read_text())
    assert effective["model"]["channels"] == 8 and effective["seeds"] == [2]


def test_same_seed_runs_are_byte_identical(trained, workspace):
    """同一种子再训练一次：检查点、epoch 日志、有效配置逐字节相同"""
    again = workspace["root"] / "run_again"
    code = _run("train", "--config", str(workspace["config"]), "--data", str(workspace["data"]),
                "--out", str(again), "--seed", "2", "--no-timing", log_dir=workspace["logs"])
    assert code == 0
    for name in ("checkpoint.bin", "epoch_log.csv", "efficiency.json"):
        assert (trained / name).read_bytes() == (again / name).read_bytes()


def test_evaluate_reproduces_best_val_mae(trained, workspace):
    """评估重算的验证 MAE 与训练时记录的最优值一致"""
    code = _run("evaluate", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(workspace["data"]),
                log_dir=workspace["logs"])
    assert code == 0
    meta = load_checkpoint(str(trained / "checkpoint.bin")).metadata
    evaluation = json.loads((trained / "evaluation.json").read_text())
    assert abs(evaluation["val_mae"] - meta["best_val_mae"]) < 1e-12
    metrics = pd.read_csv(trained / "metrics.csv", na_values=["NA"], keep_default_na=False)
    horizons = list(metrics["horizon"])
    assert horizons[:12] == [f"step_{j}" for j in range(1, 13)]
    assert horizons[12:] == ["h15min", "h30min", "h1h", "overall", "persistence_overall"]


def test_evaluate_rejects_other_data(trained, workspace):
    """换一份数据（标准化统计量不同）时拒绝评估"""
    other = workspace["root"] / "other"
    assert _run("generate-data", "--nodes", "4", "--days", "2", "--seed", "4", "--radius", "0.8",
                "--out", str(other), log_dir=workspace["logs"]) == 0
    code = _run("evaluate", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(other),
                "--out", str(workspace["root"] / "eval_other"), log_dir=workspace["logs"])
    assert code == 1


def test_diagnose_outputs(trained, workspace):
    """离散度 CSV/JSON 与单节点注意力图"""
    out = workspace["root"] / "diag"
    code = _run("diagnose", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(workspace["data"]),
                "--out", str(out), "--samples", "4", "--attention-node", "1", log_dir=workspace["logs"])
    assert code == 0
    dispersion = pd.read_csv(out / "dispersion.csv")
    assert set(dispersion["stage"]) == {"spae_layer", "st_output"}
    assert set(dispersion["variant"]) == {"with_spae", "table_zeroed"}
    assert len(dispersion) == 2 * 2 * 4
    summary = json.loads((out / "dispersion_summary.json").read_text())
    assert 0.0 <= summary["st_output.with_spae"]["resultant_length"] <= 1.0
    for head in range(2):
        grid = pd.read_csv(out / f"attention_node1_head{head}.csv")
        assert grid.shape == (9, 9)
        assert (grid.sum(axis=1) - 1.0).abs().max() < 1e-9


def test_ablate_writes_summary(workspace):
    """消融：六个变体各一行，full 与 st_only 的比较写入 JSON"""
    out = workspace["root"] / "ablation"
    code = _run("ablate", "--config", str(workspace["config"]), "--data", str(workspace["data"]),
                "--out", str(out), "--seed", "1", "--epochs", "1", "--no-timing", log_dir=workspace["logs"])
    assert code == 0
    summary = pd.read_csv(out / "summary.csv")
    assert list(summary["variant"]) == ["full", "no_spae", "no_tpam", "st_only", "spae_random_init", "spae_frozen"]
    params = dict(zip(summary["variant"], summary["parameters"]))
    assert params["no_spae"] == params["full"] - 4 * 8
    assert params["spae_frozen"] == params["full"]
    assert params["st_only"] < params["no_tpam"] < params["full"]
    result = json.loads((out / "ablation_summary.json").read_text())
    assert set(result["full_le_st_only"]) == {"1"}
    assert (out / "st_only" / "seed_1" / "checkpoint.bin").exists()
    assert (out / "full" / "metrics.csv").exists()


def test_log_file_and_level_follow_config(workspace, monkeypatch):
    """未给 --log-dir 时日志写到 --out 下；未给 --log-level 时取 config.json 的级别"""
    from config import Config

    monkeypatch.setitem(Config.get_instance()._config["logging"], "level", "DEBUG")
    out = workspace["root"] / "data_logged"
    assert main(["generate-data", "--nodes", "4", "--days", "2", "--seed", "3", "--radius", "0.8",
                 "--out", str(out)]) == 0
    assert logging.getLogger().level == logging.DEBUG
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "generate-data" in (out / "pastn.log").read_text(encoding="utf-8")

    assert main(["generate-data", "--nodes", "4", "--days", "2", "--seed", "3", "--radius", "0.8",
                 "--out", str(out), "--log-level", "WARNING"]) == 0
    assert logging.getLogger().level == logging.WARNING


def test_generate_data_defaults_come_from_config(workspace, monkeypatch):
    """generate-data 未给出的参数取 config.json 的 data 段"""
    from config import Config

    data = Config.get_instance()._config["data"]
    monkeypatch.setitem(data, "nodes", 3)
    monkeypatch.setitem(data, "days", 1)
    monkeypatch.setitem(data, "radius", 1.5)
    out = workspace["root"] / "data_defaults"
    assert _run("generate-data", "--out", str(out), log_dir=workspace["logs"]) == 0
    generation = json.loads((out / "generation.json").read_text())
    assert (generation["nodes"], generation["days"], generation["radius"]) == (3, 1, 1.5)
    assert generation["threshold"] == Config.get_instance().get("data.threshold")
    assert generation["seed"] == Config.get_instance().get("training.seed")
    flow = pd.read_csv(out / "flow.csv")
    assert list(flow.columns) == ["timestamp", "node_0", "node_1", "node_2"]
    assert len(flow) == 288


@pytest.mark.parametrize("flag, value", [("--attention-layer", "5"), ("--attention-layer", "-3"), ("--attention-node", "9")])
def test_diagnose_rejects_out_of_range_attention_target(trained, workspace, capsys, flag, value):
    """注意力层号/节点号越界时在诊断开始前报配置错误"""
    out = workspace["root"] / f"diag_bad{flag}{value}"
    argv = ["diagnose", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(workspace["data"]),
            "--out", str(out), "--attention-node", "0", flag, value]
    assert _run(*argv, log_dir=workspace["logs"]) == 1
    assert flag in capsys.readouterr().err
    assert not (out / "dispersion.csv").exists()
