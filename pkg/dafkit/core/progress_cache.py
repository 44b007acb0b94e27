"""
任务进度内存缓存模块

记录合成存储生成、实验单元等长任务的实时进度，供日志和命令行汇报使用。
"""
from dataclasses import dataclass
from threading import Lock
from typing import Dict, Optional

from loguru import logger


@dataclass
class TaskProgress:
    """任务进度数据"""
    total: int = 0
    done: int = 0
    failed: int = 0
    current: str = ""

    @property
    def progress(self) -> int:
        """完成百分比"""
        if self.total <= 0:
            return 0
        return int(((self.done + self.failed) / self.total) * 100)


class ProgressCache:
    """
    线程安全的进度缓存

    工作线程完成一项后调用 advance，按 log_every 间隔输出一次进度日志。
    """

    def __init__(self):
        self._cache: Dict[str, TaskProgress] = {}
        self._lock = Lock()

    def start(self, task_id: str, total: int) -> None:
        """登记新任务"""
        with self._lock:
            self._cache[task_id] = TaskProgress(total=total)

    def advance(
        self,
        task_id: str,
        *,
        ok: bool = True,
        current: Optional[str] = None,
        log_every: int = 0,
    ) -> None:
        """推进任务进度"""
        with self._lock:
            entry = self._cache.setdefault(task_id, TaskProgress())
            if ok:
                entry.done += 1
            else:
                entry.failed += 1
            if current is not None:
                entry.current = current
            finished = entry.done + entry.failed
            should_log = log_every > 0 and (finished % log_every == 0 or finished == entry.total)
            snapshot = TaskProgress(entry.total, entry.done, entry.failed, entry.current)
        if should_log:
            logger.info(
                "[{}] 进度 {}/{} ({}%) 失败 {} 当前 {}",
                task_id, finished, snapshot.total, snapshot.progress, snapshot.failed, snapshot.current,
            )

    def get(self, task_id: str) -> Optional[TaskProgress]:
        """获取任务进度"""
        with self._lock:
            return self._cache.get(task_id)

    def remove(self, task_id: str) -> None:
        """移除任务进度（任务完成后调用）"""
        with self._lock:
            self._cache.pop(task_id, None)

    def clear(self) -> None:
        """清空所有缓存"""
        with self._lock:
            self._cache.clear()


# 全局单例
progress_cache = ProgressCache()
