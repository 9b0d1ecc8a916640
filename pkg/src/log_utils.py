import logging
import os
import platform
import socket
from typing import Any, Dict, Optional

import numpy as np
import scipy

LOG_FORMAT = '%(asctime)s.%(msecs)03d - %(name)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

logger = logging.getLogger("RunInfo")


def setup_logging(level: int = logging.INFO) -> None:
    """
    设置日志格式，包含具体时间（精确到毫秒）
    """
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT)


def log_run_info(command: str, settings: Optional[Dict[str, Any]] = None):
    """
    输出运行环境信息到日志
    """
    logger.info("=== 运行环境信息 ===")
    logger.info(f"命令: {command}")

    try:
        hostname = socket.gethostname()
    except OSError:
        hostname = "未知"
    logger.info(f"主机名: {hostname}")
    logger.info(f"进程ID: {os.getpid()}")
    logger.info(f"Python版本: {platform.python_version()}")
    logger.info(f"numpy版本: {np.__version__}, scipy版本: {scipy.__version__}")

    if settings:
        logger.info("配置参数:")
        for key, value in settings.items():
            logger.info(f"  - {key}: {value}")

    logger.info("===")
