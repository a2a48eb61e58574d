import os
from logging import Filter, LogRecord, config, getLogger

import dotenv
from yaml import safe_load

logger = getLogger(__name__)

LOG_CONF_PATH = "etc/log-conf.yaml"
LOG_CONF_ENV = "JOINT_ANNOTATOR_LOG_CONF"

FALLBACK_LOG_CONF = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "[%(asctime)s] %(name)s - %(levelname)s: %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S",
        }
    },
    "filters": {"stream_handler_filter": {"()": "joint_annotator.config.StreamHandlerFilter"}},
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
            "stream": "ext://sys.stderr",
            "level": "INFO",
            "filters": ["stream_handler_filter"],
        }
    },
    "loggers": {"joint_annotator": {"level": "DEBUG", "handlers": ["console"]}},
}


class StreamHandlerFilter(Filter):
    def filter(self, record: LogRecord):
        return "joint_annotator.trainer.steps" != record.name


def load_config():
    """`.env`を読み込んでからログ設定を適用します。
    `JOINT_ANNOTATOR_LOG_CONF`（既定は`etc/log-conf.yaml`）がなければ、標準エラー出力だけに書く設定を使います。"""
    dotenv.load_dotenv()  # type: ignore

    log_conf = os.environ.get(LOG_CONF_ENV, LOG_CONF_PATH)
    if not os.path.isfile(log_conf):
        config.dictConfig(FALLBACK_LOG_CONF)
        logger.debug(f"load_config: {log_conf} not found, logging to stderr only")
        return

    with open(log_conf, "r", encoding="utf-8") as f:
        yml = safe_load(f)
    os.makedirs("log", exist_ok=True)
    config.dictConfig(yml)
