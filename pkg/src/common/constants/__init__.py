"""通用常量定义

包含项目中使用的各种常量，如默认超参数、文件名、CSV 表头等
"""

# 数据采样
STEPS_PER_DAY = 288  # 5 分钟粒度
INTERVAL_MINUTES = 5
DEFAULT_INPUT_STEPS = 12
DEFAULT_OUTPUT_STEPS = 12
INPUT_FEATURES = 3  # flow, time-of-day, day-of-week
DEFAULT_SPLIT_RATIOS = (0.6, 0.2, 0.2)
SYNTHETIC_START = "2024-01-01 00:00:00"  # 周一

# 图构建
DEFAULT_ADJ_THRESHOLD = 0.1
DEFAULT_GRAPH_RADIUS = 0.3
ADAPTIVE_EMBEDDING_DIM = 10

# 模型
KERNEL_SIZE = 2
DEFAULT_DROPOUT = 0.3
LAYER_NORM_EPS = 1e-5
SPAE_BASE = 10000.0

# 优化器
DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_CLIP_NORM = 5.0
DEFAULT_BATCH_SIZE = 16
DEFAULT_EPOCHS = 20
DEFAULT_PATIENCE = 15

# 评估
DEFAULT_MAPE_MASK_EPS = 1.0
HORIZON_STEPS = {"h15min": 3, "h30min": 6, "h1h": 12}

# 文件
FLOW_CSV = "flow.csv"
ADJACENCY_CSV = "adjacency.csv"
CHECKPOINT_FILE = "checkpoint.bin"
EPOCH_LOG_CSV = "epoch_log.csv"
METRICS_CSV = "metrics.csv"
EFFECTIVE_CONFIG = "effective_config.json"
EPOCH_LOG_COLUMNS = ["epoch", "train_loss", "val_mae", "val_rmse", "val_mape", "seconds"]
METRICS_COLUMNS = ["horizon", "mae", "rmse", "mape", "masked_count"]
ABLATION_VARIANTS = ["full", "no_spae", "no_tpam", "st_only", "spae_random_init", "spae_frozen"]

# 日志配置
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_LOG_FILE = "pastn.log"
DEFAULT_LOG_DIR = "logs"

# 环境变量
THREADS_ENV = "PASTN_THREADS"
