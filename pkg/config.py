"""
Configuration for sybilscope
"""
import logging
import os
from typing import List

from dotenv import load_dotenv

from errors import ConfigError
from settings.settings_loader import settings_loader

# Optional .env next to the working directory; real environment wins
load_dotenv(override=False)

DEFAULTS_FILE = 'defaults.yaml'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
_handler = None


class Config:
    """Configuration class for the system"""

    # Churn analysis
    CHURN_THRESHOLD: float = settings_loader.get_setting(DEFAULTS_FILE, 'churn', 'threshold')
    CHURN_WINDOWS: List[int] = settings_loader.get_setting(DEFAULTS_FILE, 'churn', 'windows')
    SWEEP_THRESHOLDS: List[float] = settings_loader.get_setting(DEFAULTS_FILE, 'churn', 'sweep_thresholds')
    NEW_FINGERPRINT_THRESHOLD: int = settings_loader.get_setting(DEFAULTS_FILE, 'churn', 'new_fingerprint_threshold')
    EXPECTED_SPACING_SECONDS: int = settings_loader.get_setting(DEFAULTS_FILE, 'churn', 'expected_spacing_seconds')

    # Uptime matrix
    UPTIME_IMAGE_WIDTH: int = settings_loader.get_setting(DEFAULTS_FILE, 'uptime', 'image_width')

    # Fingerprint tracking and neighbor search
    FINGERPRINT_TOP_N: int = settings_loader.get_setting(DEFAULTS_FILE, 'fingerprints', 'top_n')
    NEIGHBOR_TOP_N: int = settings_loader.get_setting(DEFAULTS_FILE, 'neighbors', 'top_n')

    # Runtime
    WORKERS: int = int(os.getenv('SYBILSCOPE_WORKERS', settings_loader.get_setting(DEFAULTS_FILE, 'runtime', 'workers')))
    LOG_LEVEL: str = os.getenv('SYBILSCOPE_LOG', settings_loader.get_setting(DEFAULTS_FILE, 'runtime', 'log_level')).upper()

    # File Paths
    DATA_DIR: str = settings_loader.get_setting(DEFAULTS_FILE, 'paths', 'data_dir')
    OUTPUT_DIR: str = settings_loader.get_setting(DEFAULTS_FILE, 'paths', 'output_dir')

    @classmethod
    def validate(cls) -> bool:
        """Validate configuration"""
        if cls.CHURN_THRESHOLD <= 0:
            raise ConfigError(f"churn threshold must be positive, got {cls.CHURN_THRESHOLD}")
        if not cls.CHURN_WINDOWS or min(cls.CHURN_WINDOWS) < 1:
            raise ConfigError(f"churn windows must be >= 1, got {cls.CHURN_WINDOWS}")
        if cls.UPTIME_IMAGE_WIDTH < 1:
            raise ConfigError(f"uptime image width must be >= 1, got {cls.UPTIME_IMAGE_WIDTH}")
        if cls.WORKERS < 1:
            raise ConfigError(f"worker count must be >= 1, got {cls.WORKERS}")
        if not isinstance(logging.getLevelName(cls.LOG_LEVEL), int):
            raise ConfigError(f"unknown log level {cls.LOG_LEVEL!r} in SYBILSCOPE_LOG")
        return True


def configure_logging(level: str = None) -> None:
    """Send log records to stderr at the configured level"""
    global _handler
    root = logging.getLogger()
    if _handler is None:
        _handler = logging.StreamHandler()
        _handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(_handler)
    root.setLevel((level or Config.LOG_LEVEL).upper())
