"""PASTN 子命令

generate-data / train / evaluate / ablate / diagnose
"""

import os
from argparse import Namespace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import logging

from common.constants import (
    ABLATION_VARIANTS,
    ADJACENCY_CSV,
    CHECKPOINT_FILE,
    EFFECTIVE_CONFIG,
    EPOCH_LOG_COLUMNS,
    EPOCH_LOG_CSV,
    FLOW_CSV,
    METRICS_COLUMNS,
    METRICS_CSV,
)
from common.exceptions import ConfigurationError, DataError
from common.utilities import FileUtils, SystemUtils
from config import Config
from core.checkpoint import load_checkpoint, save_checkpoint
from core.data_pipeline import (
    WindowedDataset,
    featurize_and_window,
    generate_synthetic,
    load_flow_csv,
    persistence_forecasts,
    random_geometric_edges,
    save_flow_csv,
)
from core.graph import GraphBundle, build_adjacency, load_adjacency_csv, save_adjacency_csv
from core.metrics import MetricRow, MetricsReport, compute_metrics, format_horizon_table, metrics_rows, write_metrics_csv
from core.model import PASTNModel, variant_flags
from core.spae import dispersion_score
from core.tensor import no_grad
from core.training import TrainResult, evaluate_split, train_loop
from harness.command_manager import arg, command
from harness.run_config import RunConfig

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["variant", "seeds", "parameters", "val_mae", "test_mae", "test_rmse", "test_mape", "final_train_loss"]
SEED_SUMMARY_COLUMNS = ["variant", "seed", "parameters", "val_mae", "test_mae", "test_rmse", "test_mape", "final_train_loss"]
DISPERSION_COLUMNS = ["stage", "variant", "node", "angle", "resultant_length"]

# generate-data 未给出的参数从 config.json 读取
_GENERATION_DEFAULTS = {
    "nodes": "data.nodes",
    "days": "data.days",
    "radius": "data.radius",
    "threshold": "data.threshold",
    "seed": "training.seed",
}

_TRAINING_ARGS = [
    arg("--config", default=None, help="JSON 配置文件"),
    arg("--data", required=True, help="包含 flow.csv 与 adjacency.csv 的目录"),
    arg("--out", required=True, help="输出目录"),
    arg("--preset", default=None, help="模型预设 desk / paper_best"),
    arg("--seed", type=int, default=None, help="随机种子"),
    arg("--seeds", default=None, help="逗号分隔的多个种子"),
    arg("--epochs", type=int, default=None),
    arg("--batch-size", type=int, default=None),
    arg("--lr", type=float, default=None),
    arg("--patience", type=int, default=None),
    arg("--no-timing", action="store_true", help="epoch 日志的 seconds 列写 0"),
]

_ABLATION_ARGS = [
    arg("--no-spae", action="store_true"),
    arg("--no-tpam", action="store_true"),
    arg("--st-only", action="store_true"),
    arg("--spae-random-init", action="store_true"),
    arg("--spae-frozen", action="store_true"),
]


def _parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigurationError(f"--seeds 必须是逗号分隔的整数: {text}") from e


def _run_config(args: Namespace) -> RunConfig:
    seeds = _parse_seeds(getattr(args, "seeds", None))
    if seeds is None and args.seed is not None:
        seeds = [args.seed]
    overrides: Dict[str, Any] = {
        "preset": args.preset,
        "seeds": seeds,
        "data_dir": args.data,
        "output_dir": args.out,
        "training": {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "patience": args.patience,
            "record_timing": False if args.no_timing else None,
        },
        "ablation": {
            flag: getattr(args, flag, False)
            for flag in ("no_spae", "no_tpam", "st_only", "spae_random_init", "spae_frozen")
        },
    }
    run = RunConfig.build(config_file=args.config, overrides=overrides)
    logger.info(f"有效配置: preset={run.preset} seeds={run.seeds} model={run.model}")
    return run


def _load_data(data_dir: str, threshold: float) -> Tuple[Any, np.ndarray]:
    flow_path = os.path.join(data_dir, FLOW_CSV)
    adjacency_path = os.path.join(data_dir, ADJACENCY_CSV)
    for path in (flow_path, adjacency_path):
        if not os.path.exists(path):
            raise DataError(f"数据文件不存在: {path}")
    raw = load_flow_csv(flow_path)
    adjacency = load_adjacency_csv(adjacency_path, raw.num_nodes, threshold=threshold)
    return raw, adjacency


def _build_dataset(run: RunConfig, raw) -> WindowedDataset:
    return featurize_and_window(
        raw,
        input_steps=int(run.model["input_steps"]),
        output_steps=int(run.model["output_steps"]),
        ratios=run.data["split_ratios"],
    )


def _train_one(run: RunConfig, dataset: WindowedDataset, adjacency: np.ndarray, seed: int,
               out_dir: str, flags: Optional[Dict[str, bool]] = None) -> Tuple[PASTNModel, TrainResult]:
    """训练一个种子，写出检查点、epoch 日志和效率统计"""
    FileUtils.ensure_dir(out_dir)
    model_config = run.model_config(dataset.num_nodes, flags)
    training = run.training_config(seed)
    model = PASTNModel(model_config, adjacency, seed)
    logger.info(f"训练 seed={seed}: {model.params.count()} 个参数 -> {out_dir}")

    result = train_loop(model, dataset, training)
    model.params.load_snapshot(result.best_snapshot)
    metadata = {
        "seed": seed,
        "scaler": dataset.scaler.to_dict(),
        "input_steps": dataset.input_steps,
        "output_steps": dataset.output_steps,
        "split_ratios": list(dataset.ratios),
        "threshold": run.data["threshold"],
        "batch_size": training.batch_size,
        "mape_mask_eps": training.mape_mask_eps,
        "best_epoch": result.state.best_epoch,
        "best_val_mae": result.state.best_val_mae,
    }
    save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE), model_config, model.params, metadata)
    FileUtils.write_csv(os.path.join(out_dir, EPOCH_LOG_CSV), [r.as_dict() for r in result.log], EPOCH_LOG_COLUMNS)
    FileUtils.write_json(os.path.join(out_dir, "efficiency.json"), {
        "parameters": model.params.count(),
        "parameter_breakdown": dict(model_config.parameter_breakdown()),
        "epochs_run": len(result.log),
        "seconds_per_epoch": result.mean_epoch_seconds,
        "rss_mb": SystemUtils.get_process_memory_mb() if training.record_timing else 0.0,
    })
    return model, result


def _persistence_row(dataset: WindowedDataset, split: str, mask_eps: float) -> MetricRow:
    indices = dataset.splits.get(split)
    report = compute_metrics(persistence_forecasts(dataset, indices), dataset.targets_original(indices), mask_eps)
    row = report.overall
    return MetricRow("persistence_overall", row.mae, row.rmse, row.mape, row.masked_count, row.count)


def _evaluate(model: PASTNModel, dataset: WindowedDataset, batch_size: int,
              mask_eps: float) -> Tuple[MetricsReport, MetricsReport, MetricRow]:
    val = evaluate_split(model, dataset, "val", batch_size, mask_eps=mask_eps)
    test = evaluate_split(model, dataset, "test", batch_size, mask_eps=mask_eps)
    return val, test, _persistence_row(dataset, "test", mask_eps)


def _load_for_evaluation(checkpoint_path: str, data_dir: str) -> Tuple[PASTNModel, WindowedDataset, Dict[str, Any]]:
    """由检查点与数据目录重建模型和数据集；标准化器不一致时拒绝"""
    checkpoint = load_checkpoint(checkpoint_path)
    meta = checkpoint.metadata
    raw, adjacency = _load_data(data_dir, float(meta.get("threshold", 0.1)))
    dataset = featurize_and_window(raw, int(meta["input_steps"]), int(meta["output_steps"]), meta["split_ratios"])
    if dataset.scaler.to_dict() != meta["scaler"]:
        raise ConfigurationError(f"数据的标准化统计量 {dataset.scaler.to_dict()} 与检查点 {meta['scaler']} 不一致")
    model = PASTNModel(checkpoint.config, adjacency, int(meta.get("seed", 0)), params=checkpoint.params)
    return model, dataset, meta


@command(
    "generate-data",
    help="生成合成流量与随机几何图",
    arguments=[
        arg("--nodes", type=int, default=None, help="节点数（默认 data.nodes）"),
        arg("--days", type=int, default=None, help="天数（默认 data.days）"),
        arg("--seed", type=int, default=None, help="随机种子（默认 training.seed）"),
        arg("--out", required=True),
        arg("--radius", type=float, default=None, help="连边半径（默认 data.radius）"),
        arg("--threshold", type=float, default=None, help="邻接阈值（默认 data.threshold）"),
    ],
)
def generate_data(args: Namespace) -> int:
    config = Config.get_instance()
    for key, dotted in _GENERATION_DEFAULTS.items():
        if getattr(args, key) is None:
            setattr(args, key, config.get(dotted))
    FileUtils.ensure_dir(args.out)
    edges, positions = random_geometric_edges(args.nodes, args.seed, args.radius)
    adjacency = build_adjacency(edges, args.nodes, threshold=args.threshold)
    raw = generate_synthetic(args.nodes, args.days, GraphBundle.from_adjacency(adjacency), args.seed)

    save_flow_csv(os.path.join(args.out, FLOW_CSV), raw)
    save_adjacency_csv(os.path.join(args.out, ADJACENCY_CSV), edges)
    FileUtils.write_csv(
        os.path.join(args.out, "positions.csv"),
        [{"node": i, "x": x, "y": y} for i, (x, y) in enumerate(positions)],
        ["node", "x", "y"],
    )
    FileUtils.write_json(os.path.join(args.out, "generation.json"), {
        "nodes": args.nodes, "days": args.days, "seed": args.seed,
        "radius": args.radius, "threshold": args.threshold, "edges": len(edges),
    })
    logger.info(f"合成数据已写入 {args.out}")
    return 0


@command("train", help="训练 PASTN", arguments=_TRAINING_ARGS + _ABLATION_ARGS)
def train(args: Namespace) -> int:
    run = _run_config(args)
    FileUtils.ensure_dir(args.out)
    with open(os.path.join(args.out, EFFECTIVE_CONFIG), "w", encoding="utf-8", newline="\n") as f:
        f.write(run.to_json())

    raw, adjacency = _load_data(args.data, float(run.data["threshold"]))
    dataset = _build_dataset(run, raw)
    logger.info(f"平台: {SystemUtils.get_platform_info()}，并行上限 {SystemUtils.get_thread_cap()}")
    for seed in run.seeds:
        out_dir = args.out if len(run.seeds) == 1 else os.path.join(args.out, f"seed_{seed}")
        _, result = _train_one(run, dataset, adjacency, seed, out_dir)
        logger.info(f"seed={seed}: 最佳验证 MAE {result.state.best_val_mae:.4f} (epoch {result.state.best_epoch})")
    return 0


@command(
    "evaluate",
    help="在验证/测试段评估检查点",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--data", required=True),
        arg("--out", default=None, help="输出目录（默认与检查点同目录）"),
    ],
)
def evaluate(args: Namespace) -> int:
    model, dataset, meta = _load_for_evaluation(args.checkpoint, args.data)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    FileUtils.ensure_dir(out)
    batch_size = int(meta.get("batch_size", 16))
    mask_eps = float(meta.get("mape_mask_eps", 1.0))

    val, test, persistence = _evaluate(model, dataset, batch_size, mask_eps)
    write_metrics_csv(os.path.join(out, METRICS_CSV), test, extra_rows=[persistence])
    write_metrics_csv(os.path.join(out, "metrics_val.csv"), val)
    improvement = 1.0 - test.overall.mae / persistence.mae if persistence.mae > 0 else None
    FileUtils.write_json(os.path.join(out, "evaluation.json"), {
        "val_mae": val.overall.mae,
        "test_mae": test.overall.mae,
        "persistence_test_mae": persistence.mae,
        "relative_improvement": improvement,
    })
    logger.info("测试段各时距指标:\n" + format_horizon_table(test))
    logger.info(f"验证 MAE {val.overall.mae:.4f}，测试 MAE {test.overall.mae:.4f}，持续性基线 {persistence.mae:.4f}")
    return 0


def _seed_row(variant: str, seed: int, model: PASTNModel, result: TrainResult,
              val: MetricsReport, test: MetricsReport) -> Dict[str, Any]:
    return {
        "variant": variant,
        "seed": seed,
        "parameters": model.params.count(),
        "val_mae": val.overall.mae,
        "test_mae": test.overall.mae,
        "test_rmse": test.overall.rmse,
        "test_mape": test.overall.mape,
        "final_train_loss": result.log[-1].train_loss,
    }


def _average_reports(reports: List[MetricsReport]) -> List[Dict[str, Any]]:
    """各种子的 metrics.csv 行逐项取平均"""
    tables = [metrics_rows(r) for r in reports]
    averaged = []
    for rows in zip(*tables):
        mapes = [row["mape"] for row in rows]
        averaged.append({
            "horizon": rows[0]["horizon"],
            "mae": float(np.mean([row["mae"] for row in rows])),
            "rmse": float(np.mean([row["rmse"] for row in rows])),
            "mape": None if any(m is None for m in mapes) else float(np.mean(mapes)),
            "masked_count": int(round(np.mean([row["masked_count"] for row in rows]))),
        })
    return averaged


@command("ablate", help="依次训练全部消融变体", arguments=_TRAINING_ARGS)
def ablate(args: Namespace) -> int:
    run = _run_config(args)
    run.ablation = {}
    FileUtils.ensure_dir(args.out)
    with open(os.path.join(args.out, EFFECTIVE_CONFIG), "w", encoding="utf-8", newline="\n") as f:
        f.write(run.to_json())

    raw, adjacency = _load_data(args.data, float(run.data["threshold"]))
    dataset = _build_dataset(run, raw)
    mask_eps = float(run.metrics.get("mape_mask_eps", 1.0))
    batch_size = int(run.training["batch_size"])

    per_seed: List[Dict[str, Any]] = []
    summary: List[Dict[str, Any]] = []
    for variant in ABLATION_VARIANTS:
        flags = variant_flags(variant)
        reports = []
        rows = []
        for seed in run.seeds:
            seed_dir = os.path.join(args.out, variant, f"seed_{seed}")
            model, result = _train_one(run, dataset, adjacency, seed, seed_dir, flags)
            val, test, persistence = _evaluate(model, dataset, batch_size, mask_eps)
            write_metrics_csv(os.path.join(seed_dir, METRICS_CSV), test, extra_rows=[persistence])
            reports.append(test)
            rows.append(_seed_row(variant, seed, model, result, val, test))
        FileUtils.write_csv(os.path.join(args.out, variant, METRICS_CSV), _average_reports(reports),
                            METRICS_COLUMNS)
        per_seed.extend(rows)
        mapes = [r["test_mape"] for r in rows]
        summary.append({
            "variant": variant,
            "seeds": " ".join(str(s) for s in run.seeds),
            "parameters": rows[0]["parameters"],
            "val_mae": float(np.mean([r["val_mae"] for r in rows])),
            "test_mae": float(np.mean([r["test_mae"] for r in rows])),
            "test_rmse": float(np.mean([r["test_rmse"] for r in rows])),
            "test_mape": None if any(m is None for m in mapes) else float(np.mean(mapes)),
            "final_train_loss": float(np.mean([r["final_train_loss"] for r in rows])),
        })
        logger.info(f"变体 {variant}: 平均验证 MAE {summary[-1]['val_mae']:.4f}")

    FileUtils.write_csv(os.path.join(args.out, "summary.csv"), summary, SUMMARY_COLUMNS)
    FileUtils.write_csv(os.path.join(args.out, "summary_per_seed.csv"), per_seed, SEED_SUMMARY_COLUMNS)
    full = {r["seed"]: r["val_mae"] for r in per_seed if r["variant"] == "full"}
    st_only = {r["seed"]: r["val_mae"] for r in per_seed if r["variant"] == "st_only"}
    held = {str(seed): bool(full[seed] <= st_only[seed]) for seed in run.seeds}
    FileUtils.write_json(os.path.join(args.out, "ablation_summary.json"), {
        "variants": list(ABLATION_VARIANTS),
        "full_le_st_only": held,
        "held_count": sum(held.values()),
    })
    return 0


def _node_embeddings(model: PASTNModel, inputs: np.ndarray) -> Tuple[Dict[str, np.ndarray], List[np.ndarray]]:
    """SPAE 层输出与最后一层 ST 输出，按批和时间平均成 N×C"""
    capture: Dict[str, Any] = {}
    with no_grad():
        model.forward(inputs, capture=capture)
    stages = {
        "spae_layer": capture["spae_layer"].mean(axis=(0, 3)).T,
        "st_output": capture["layer_outputs"][-1].mean(axis=(0, 3)).T,
    }
    return stages, capture["attention"]


def _check_attention_target(args: Namespace, model: PASTNModel) -> None:
    """校验注意力图导出的节点与层号；层号允许负下标，从末层数起"""
    layers, nodes = model.config.layers, model.config.num_nodes
    if args.attention_node is not None and not 0 <= args.attention_node < nodes:
        raise ConfigurationError(f"--attention-node={args.attention_node} 超出 [0, {nodes})")
    if not -layers <= args.attention_layer < layers:
        raise ConfigurationError(f"--attention-layer={args.attention_layer} 超出 [{-layers}, {layers})")


@command(
    "diagnose",
    help="嵌入离散度诊断与注意力图导出",
    arguments=[
        arg("--checkpoint", required=True),
        arg("--data", required=True),
        arg("--out", required=True),
        arg("--samples", type=int, default=16, help="取验证段前若干个窗口"),
        arg("--attention-node", type=int, default=None, help="导出该节点的注意力图"),
        arg("--attention-layer", type=int, default=-1),
    ],
)
def diagnose(args: Namespace) -> int:
    model, dataset, _ = _load_for_evaluation(args.checkpoint, args.data)
    _check_attention_target(args, model)
    FileUtils.ensure_dir(args.out)
    indices = list(dataset.splits.val)[:max(1, args.samples)]
    inputs = dataset.inputs[indices]

    with_spae, attention = _node_embeddings(model, inputs)
    spae = model.params.spae
    if spae is None:
        logger.warning("模型没有 SPAE 表，两组嵌入相同")
        zeroed = with_spae
    else:
        saved = spae.table.data.copy()
        spae.table.data[...] = 0.0
        try:
            zeroed, _ = _node_embeddings(model, inputs)
        finally:
            spae.table.data[...] = saved

    rows: List[Dict[str, Any]] = []
    summary: Dict[str, Any] = {}
    for variant, stages in (("with_spae", with_spae), ("table_zeroed", zeroed)):
        for stage, embeddings in stages.items():
            result = dispersion_score(embeddings)
            summary[f"{stage}.{variant}"] = {
                "resultant_length": result.resultant_length,
                "collapsed": result.collapsed,
                "skipped": result.skipped,
            }
            for node, angle in enumerate(result.angles):
                rows.append({
                    "stage": stage, "variant": variant, "node": node,
                    "angle": None if np.isnan(angle) else float(angle),
                    "resultant_length": result.resultant_length,
                })
    for stage in ("spae_layer", "st_output"):
        delta = summary[f"{stage}.table_zeroed"]["resultant_length"] - summary[f"{stage}.with_spae"]["resultant_length"]
        summary[f"{stage}.spae_more_dispersed"] = bool(delta > 0)
    FileUtils.write_csv(os.path.join(args.out, "dispersion.csv"), rows, DISPERSION_COLUMNS)
    FileUtils.write_json(os.path.join(args.out, "dispersion_summary.json"), summary)
    logger.info(
        f"R(st_output): 有 SPAE {summary['st_output.with_spae']['resultant_length']:.4f}，"
        f"表置零 {summary['st_output.table_zeroed']['resultant_length']:.4f}"
    )

    if args.attention_node is not None:
        if not attention:
            logger.warning("模型没有 TPAM，跳过注意力图导出")
        else:
            maps = attention[args.attention_layer][0, args.attention_node]  # H×T×T
            for head, grid in enumerate(maps):
                path = os.path.join(args.out, f"attention_node{args.attention_node}_head{head}.csv")
                frame = pd.DataFrame(grid, columns=[f"t{j}" for j in range(grid.shape[1])])
                frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return 0
