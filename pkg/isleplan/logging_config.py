"""Structured JSON logging for the library and the CLI"""
import logging
import os
from logging.config import dictConfig

from pythonjsonlogger import jsonlogger


class JsonFormatter(jsonlogger.JsonFormatter):
    def add_fields(self, log_record, record, message_dict):
        super().add_fields(log_record, record, message_dict)
        log_record['timestamp'] = log_record.get('asctime')
        log_record['level'] = record.levelname
        log_record['logger'] = record.name


def configure_logging(level=None):
    """Install the JSON handler on the package logger.

    Logs go to stderr so artifacts written by the CLI stay byte-identical
    between runs.
    """
    level = (level or os.getenv('ISLEPLAN_LOG_LEVEL', 'WARNING')).upper()
    dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'json': {
                '()': JsonFormatter,
                'format': '%(asctime)s %(levelname)s %(message)s',
            },
        },
        'handlers': {
            'default': {
                'level': level,
                'formatter': 'json',
                'class': 'logging.StreamHandler',
                'stream': 'ext://sys.stderr',
            },
        },
        'loggers': {
            'isleplan': {'handlers': ['default'], 'level': level, 'propagate': False},
        },
    })
    return logging.getLogger('isleplan')
