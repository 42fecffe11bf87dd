import threading
from typing import Dict

from src.core.errors import MemoryBudgetExceeded
from src.core.logging import get_logger

logger = get_logger(__name__)


class MemoryTracker:
    """
    Counts live bytes of the solver's large allocations and remembers the peak.
    """
    def __init__(self, limit_bytes: int = 0):
        if limit_bytes < 0:
            raise ValueError("Memory limit must be non-negative.")
        self.limit_bytes = limit_bytes
        self.live: Dict[str, int] = {}
        self.current_bytes = 0
        self.peak_bytes = 0
        self._lock = threading.Lock()
        if limit_bytes:
            logger.info(f"Memory tracker initialized with limit {limit_bytes} bytes.")

    def allocate(self, name: str, nbytes: int):
        """
        Registers an allocation under `name`, replacing an earlier one of the same name.
        """
        with self._lock:
            previous = self.live.get(name, 0)
            total = self.current_bytes - previous + nbytes
            if self.limit_bytes and total > self.limit_bytes:
                raise MemoryBudgetExceeded(
                    f"allocating {nbytes} bytes for '{name}' exceeds the limit of "
                    f"{self.limit_bytes} bytes ({self.current_bytes - previous} in use)"
                )
            self.live[name] = nbytes
            self.current_bytes = total
            self.peak_bytes = max(self.peak_bytes, total)
        logger.debug(f"allocate {name}: {nbytes} bytes (current {total}, peak {self.peak_bytes})")

    def release(self, name: str):
        with self._lock:
            self.current_bytes -= self.live.pop(name, 0)
