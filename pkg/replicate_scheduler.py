import asyncio
import functools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import psutil
from tqdm import tqdm

import settings
from utils import format_bytes

logger = logging.getLogger(__name__)


class ReplicatePriority(Enum):
    HIGH = 1    # reference and oracle draws
    NORMAL = 2  # ordinary Monte Carlo replicates


@dataclass
class ReplicateTask:
    index: int
    seed: int
    n_samples: int
    priority: ReplicatePriority = ReplicatePriority.NORMAL
    stream: str = "main"
    seed_index: int = 0
    created_at: float = field(default_factory=time.time)


def partition(total: int, replicates: int) -> List[int]:
    """Split ``total`` samples into ``replicates`` shares; the split never depends on the worker count"""
    replicates = max(1, min(replicates, total)) if total > 0 else 1
    base, extra = divmod(total, replicates)
    return [base + (1 if i < extra else 0) for i in range(replicates)]


def memory_usage() -> Dict[str, float]:
    process = psutil.Process(os.getpid())
    info = process.memory_info()
    return {"rss_mb": info.rss / (1024 * 1024), "vms_mb": info.vms / (1024 * 1024),
            "percentage": process.memory_percent()}


class ReplicateScheduler:
    """
    Slot-based runner for independent replicates.

    Every slot pulls the next task (HIGH priority first, then by replicate index) and runs the
    blocking replicate function in a process pool. Results come back keyed by replicate index and
    are always returned in index order.
    """

    def __init__(self, workers: Optional[int] = None, show_progress: Optional[bool] = None):
        self.workers = max(1, workers or settings.default_workers())
        self.show_progress = settings.SHOW_PROGRESS if show_progress is None else show_progress
        self.queue: List[ReplicateTask] = []
        self.active: Dict[int, ReplicateTask] = {}   # slot_id -> task
        self.known: Dict[int, ReplicateTask] = {}    # index -> task
        self.stats = {
            "total_queued": 0,
            "total_completed": 0,
            "total_failed": 0,
            "high_priority_completed": 0,
        }
        logger.info(f"🎛️ Replicate scheduler initialized with {self.workers} slot(s)")

    def add_task(self, task: ReplicateTask) -> bool:
        if task.index in self.known:
            return False
        self.queue.append(task)
        self.known[task.index] = task
        self.stats["total_queued"] += 1
        return True

    def get_next_task(self) -> Optional[ReplicateTask]:
        if not self.queue:
            return None
        best = min(self.queue, key=lambda t: (t.priority.value, t.index))
        self.queue.remove(best)
        return best

    def _complete(self, slot_id: int, task: ReplicateTask, success: bool):
        self.active.pop(slot_id, None)
        if success:
            self.stats["total_completed"] += 1
            if task.priority is ReplicatePriority.HIGH:
                self.stats["high_priority_completed"] += 1
        else:
            self.stats["total_failed"] += 1
            logger.error(f"❌ [Slot {slot_id}] replicate {task.index} ({task.stream}) failed")

    async def _slot(self, slot_id: int, fn: Callable[[ReplicateTask], Any], executor, results: Dict[int, Any],
                    progress):
        loop = asyncio.get_running_loop()
        while True:
            task = self.get_next_task()
            if task is None:
                return
            self.active[slot_id] = task
            try:
                if executor is None:
                    result = fn(task)
                else:
                    result = await loop.run_in_executor(executor, functools.partial(fn, task))
            except Exception:
                self._complete(slot_id, task, False)
                raise
            results[task.index] = result
            self._complete(slot_id, task, True)
            if progress is not None:
                progress.update(1)

    async def run_async(self, fn: Callable[[ReplicateTask], Any]) -> List[Any]:
        pending = len(self.queue)
        if pending == 0:
            return []
        results: Dict[int, Any] = {}
        slots = min(self.workers, pending)
        progress = tqdm(total=pending, desc="replicates", leave=False) if self.show_progress else None
        started = time.time()
        logger.info(f"🚀 Running {pending} replicate(s) on {slots} slot(s)")
        try:
            if slots == 1:
                await self._slot(0, fn, None, results, progress)
            else:
                with ProcessPoolExecutor(max_workers=slots) as executor:
                    await asyncio.gather(*(self._slot(i, fn, executor, results, progress) for i in range(slots)))
        finally:
            if progress is not None:
                progress.close()
        memory = memory_usage()
        logger.info(f"✅ {len(results)} replicate(s) done in {time.time() - started:.1f}s "
                    f"(rss {format_bytes(memory['rss_mb'] * 1024 * 1024)})")
        return [results[i] for i in sorted(results)]

    def run(self, fn: Callable[[ReplicateTask], Any], tasks: List[ReplicateTask]) -> List[Any]:
        """Queue ``tasks``, run them all and return the results in replicate-index order"""
        for task in tasks:
            if not self.add_task(task):
                logger.warning(f"⚠️ Replicate {task.index} already queued; skipped")
        try:
            return asyncio.run(self.run_async(fn))
        finally:
            self.known.clear()

    def get_status(self) -> dict:
        return {
            "queued": len(self.queue),
            "active": len(self.active),
            "available_slots": self.workers - len(self.active),
            **self.stats,
        }

    def log_detailed_status(self):
        status = self.get_status()
        logger.info(f"📊 Replicates: queued {status['queued']}, active {status['active']}, "
                    f"completed {status['total_completed']} (H:{status['high_priority_completed']}), "
                    f"failed {status['total_failed']}, free slots {status['available_slots']}/{self.workers}")
