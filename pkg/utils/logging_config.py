import logging
import os
from typing import Optional

from dotenv import load_dotenv

from config.app_config import AppConfig


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once for CLI runs.

    The level comes from the argument, then ``TRANSDUCER_LOG_LEVEL`` (``.env``
    files are honoured), then the AppConfig default.
    """
    load_dotenv()
    level_name = (level or os.getenv(AppConfig.ENV_LOG_LEVEL) or AppConfig.DEFAULT_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=AppConfig.LOG_FORMAT,
        force=True,
    )
