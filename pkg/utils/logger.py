import logging
import os
import sys
from typing import Optional

LOGGER_NAME = "ambivote"
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def get_logger(module_name: str) -> logging.Logger:
    """Return the child logger for a library module (``ambivote.<module>``)"""
    short_name = module_name.rsplit('.', 1)[-1]
    return logging.getLogger(f"{LOGGER_NAME}.{short_name}")


class Logger:
    """Handles logging operations for the application"""

    def __init__(self, log_file: Optional[str] = None, quiet: bool = False):
        self.log_file = log_file
        self.quiet = quiet
        self.setup_logging()

    def setup_logging(self):
        """Setup logging configuration"""
        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.WARNING if self.quiet else logging.INFO)
        self.logger.propagate = False

        # At most one stream and one file handler per process
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()

        formatter = logging.Formatter(LOG_FORMAT)

        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(formatter)
        self.logger.addHandler(stream_handler)

        if self.log_file:
            try:
                log_dir = os.path.dirname(self.log_file) or '.'
                os.makedirs(log_dir, exist_ok=True)
                file_handler = logging.FileHandler(self.log_file, encoding='utf-8')
                file_handler.setFormatter(formatter)
                self.logger.addHandler(file_handler)
            except OSError as e:
                self.logger.warning(f"Could not open log file {self.log_file}: {str(e)}")

    def log(self, level: str, message: str):
        """
        Log a message with specified level

        Args:
            level: Log level (info, warning, error, debug)
            message: Message to log
        """
        level = level.lower()
        if level == 'info':
            self.logger.info(message)
        elif level == 'warning':
            self.logger.warning(message)
        elif level == 'error':
            self.logger.error(message)
        elif level == 'debug':
            self.logger.debug(message)
        else:
            self.logger.info(f"[{level.upper()}] {message}")

    def log_stage(self, stage: str, name: str, success: bool, details: str = None):
        """
        Log a pipeline stage with structured format

        Args:
            stage: Stage family (features, committee, ensemble, ...)
            name: Stage or subcommand name
            success: Whether the stage completed
            details: Additional details
        """
        status = "SUCCESS" if success else "FAILED"
        message = f"{stage.upper()} {name.upper()} - {status}"
        if details:
            message += f" - {details}"
        self.log('info' if success else 'error', message)

    def log_file_operation(self, filename: str, operation: str, success: bool,
                           details: str = None):
        """
        Log file operation

        Args:
            filename: Name of file
            operation: Operation type (read, write, validate)
            success: Whether operation was successful
            details: Additional details
        """
        status = "SUCCESS" if success else "FAILED"
        message = f"FILE {operation.upper()} - {filename} - {status}"
        if details:
            message += f" - {details}"
        self.log('info' if success else 'error', message)
