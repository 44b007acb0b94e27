"""
进度缓存测试
"""
from concurrent.futures import ThreadPoolExecutor

from dafkit.core.progress_cache import ProgressCache, TaskProgress


def test_progress_percentage():
    assert TaskProgress(total=0).progress == 0
    assert TaskProgress(total=4, done=1, failed=1).progress == 50


def test_start_advance_remove():
    cache = ProgressCache()
    cache.start("store", 3)
    cache.advance("store", current="c0_0000")
    cache.advance("store", ok=False)
    entry = cache.get("store")
    assert (entry.total, entry.done, entry.failed, entry.current) == (3, 1, 1, "c0_0000")
    cache.remove("store")
    assert cache.get("store") is None


def test_advance_unknown_task_creates_entry():
    cache = ProgressCache()
    cache.advance("x")
    assert cache.get("x").done == 1


def test_concurrent_advance():
    cache = ProgressCache()
    cache.start("cells", 400)
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda _: cache.advance("cells", log_every=50), range(400)))
    assert cache.get("cells").done == 400


def test_clear():
    cache = ProgressCache()
    cache.start("a", 1)
    cache.start("b", 1)
    cache.clear()
    assert cache.get("a") is None and cache.get("b") is None
