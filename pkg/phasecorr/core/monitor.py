import json
import logging
import time
from functools import wraps
from typing import Any, Callable, Optional

from phasecorr.config import LOG_FILE, LOG_LEVEL

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    """Configure structured logging for the command-line entry point"""
    handlers = [logging.StreamHandler()]
    log_file = log_file or LOG_FILE
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt='%Y-%m-%d %H:%M:%S',
        handlers=handlers,
        force=True,
    )


class PipelineMetrics:
    """Centralized metrics collection for pipeline stages"""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.logger = logger or logging.getLogger(__name__)

    def log_processing_metrics(self,
                               stage: str,
                               processing_time: float,
                               success: bool,
                               error: Optional[str] = None,
                               **extra: Any):
        """Log one structured metric line for monitoring"""
        metrics = {
            "stage": stage,
            "processing_time_ms": round(processing_time * 1000, 3),
            "success": success,
            "error": error,
        }
        metrics.update(extra)
        self.logger.info(f"PQ_METRICS: {json.dumps(metrics, default=str)}")

    def track_performance(self, stage: Optional[str] = None):
        """Decorator to time a pipeline stage and report success or failure"""
        def decorator(func: Callable) -> Callable:
            name = stage or func.__name__

            @wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.perf_counter()
                try:
                    result = func(*args, **kwargs)
                except Exception as e:
                    self.log_processing_metrics(
                        stage=name,
                        processing_time=time.perf_counter() - start_time,
                        success=False,
                        error=str(e),
                    )
                    raise
                self.log_processing_metrics(
                    stage=name,
                    processing_time=time.perf_counter() - start_time,
                    success=True,
                )
                return result
            return wrapper
        return decorator


metrics = PipelineMetrics()
track_performance = metrics.track_performance
