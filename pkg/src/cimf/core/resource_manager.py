"""
Resource management for the engine.

This module provides:
- Worker pools for step execution and run drivers
- Active-run admission control (saturation)
- Host resource statistics for the health endpoint
"""

import atexit
import logging
import shutil
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Callable, Dict, Optional, Set

import psutil

from .errors import SaturatedError

logger = logging.getLogger(__name__)


class ResourceMonitor:
    """Monitor system resource usage."""

    def __init__(self):
        self.process = psutil.Process()
        self.start_time = time.time()
        self.peak_memory = 0.0

    def get_memory_usage_mb(self) -> float:
        try:
            memory_mb = self.process.memory_info().rss / 1024 / 1024
            self.peak_memory = max(self.peak_memory, memory_mb)
            return memory_mb
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            return 0.0

    def get_disk_usage(self, path: str) -> Dict[str, float]:
        try:
            usage = shutil.disk_usage(path)
            return {
                'total_gb': usage.total / (1024**3),
                'free_gb': usage.free / (1024**3),
                'percent': ((usage.total - usage.free) / usage.total) * 100,
            }
        except OSError:
            return {'total_gb': 0, 'free_gb': 0, 'percent': 0}

    def get_stats(self) -> Dict[str, Any]:
        return {
            'memory_mb': self.get_memory_usage_mb(),
            'peak_memory_mb': self.peak_memory,
            'cpu_count': psutil.cpu_count(logical=True) or 1,
            'uptime_seconds': time.time() - self.start_time,
        }


class ThreadPoolManager:
    """Manage a thread pool with proper lifecycle."""

    def __init__(self, max_workers: int, name: str):
        self.max_workers = max_workers
        self.executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix=name)
        self.active_futures: Set[Future] = set()
        self.lock = threading.RLock()
        atexit.register(self.shutdown, False)

    def submit(self, fn: Callable, *args, **kwargs) -> Future:
        with self.lock:
            future = self.executor.submit(fn, *args, **kwargs)
            self.active_futures.add(future)
            for done in [f for f in self.active_futures if f.done()]:
                self.active_futures.discard(done)
            return future

    def active(self) -> int:
        with self.lock:
            return sum(1 for f in self.active_futures if not f.done())

    def shutdown(self, wait: bool = True) -> None:
        try:
            self.executor.shutdown(wait=wait)
        except Exception as e:
            logger.error(f"Error shutting down thread pool: {e}")


class ResourceManager:
    """
    Worker pools plus admission control for workflow runs.

    Steps of all runs share one pool of `workers` threads. Each accepted run
    holds one of `max_active_runs` slots while its driver executes.
    """

    def __init__(self, workers: int, max_active_runs: int):
        self.monitor = ResourceMonitor()
        self.step_pool = ThreadPoolManager(workers, "cimf-step")
        self.run_pool = ThreadPoolManager(max_active_runs, "cimf-run")
        self.max_active_runs = max_active_runs
        self.active_runs: Set[str] = set()
        self.lock = threading.RLock()
        logger.info(f"Resource manager initialized: {workers} step workers, {max_active_runs} run slots")

    def acquire_run(self, run_id: str) -> None:
        """
        Reserve a run slot.

        Raises:
            SaturatedError: If every slot is taken
        """
        with self.lock:
            if len(self.active_runs) >= self.max_active_runs:
                raise SaturatedError(
                    f"Engine saturated: {len(self.active_runs)} active runs (limit {self.max_active_runs})"
                )
            self.active_runs.add(run_id)

    def release_run(self, run_id: str) -> None:
        with self.lock:
            self.active_runs.discard(run_id)

    def start_run(self, run_id: str, driver: Callable[[], Any]) -> Future:
        """Run `driver` on the run pool; the slot must already be held and is released afterwards."""
        def wrapped():
            try:
                return driver()
            except Exception:
                logger.exception(f"Run driver for {run_id} crashed")
                raise
            finally:
                self.release_run(run_id)
        return self.run_pool.submit(wrapped)

    def get_resource_stats(self, path: Optional[str] = None) -> Dict[str, Any]:
        stats = self.monitor.get_stats()
        with self.lock:
            stats.update({
                'active_runs': len(self.active_runs),
                'max_active_runs': self.max_active_runs,
                'step_workers': self.step_pool.max_workers,
                'steps_in_flight': self.step_pool.active(),
            })
        if path:
            stats['disk_usage'] = self.monitor.get_disk_usage(path)
        return stats

    def shutdown(self, wait: bool = True) -> None:
        self.run_pool.shutdown(wait=wait)
        self.step_pool.shutdown(wait=wait)
