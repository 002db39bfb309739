"""通信库配置"""
import os

# 错误处理策略: raise 抛出异常 | return 返回错误码
ERROR_POLICY = os.getenv("COMMKIT_ERROR_POLICY", "raise")

# 模拟网络 (fabric) 配置
_watchdog = os.getenv("COMMKIT_WATCHDOG_TIMEOUT", "")
WATCHDOG_TIMEOUT = float(_watchdog) if _watchdog else None  # 秒，未设置则不检测死锁
POLL_INTERVAL = 0.05  # 阻塞 rank 等待进度通知的最长时间（秒）
DEFAULT_SEED = 0

# 集合通信算法: auto (树形/环形) | linear (线性参考实现)
COLLECTIVE_ALGORITHM = os.getenv("COMMKIT_COLLECTIVE_ALGORITHM", "auto")

# 枚举类型默认映射的整数宽度
DEFAULT_ENUM_KIND = "int32"

# 基准测试配置
BENCH_RANKS = 4
BENCH_MIN_EXP = 1
BENCH_MAX_EXP = 17  # 消息长度 2^n 字节, 0 < n < 18
BENCH_ITERATIONS = 10
BENCH_WARMUP_ROUNDS = 1
BENCH_OPERATIONS = [
    "barrier",
    "broadcast",
    "gather",
    "scatter",
    "all_gather",
    "all_to_all",
    "reduce",
    "all_reduce",
    "reduce_scatter",
    "scan",
    "exclusive_scan",
]
BENCH_MODES = ["ergonomic", "raw"]
BENCH_OUTPUT = os.getenv("COMMKIT_BENCH_OUTPUT", "bench_results.csv")

# 日志
LOG_LEVEL = os.getenv("COMMKIT_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
