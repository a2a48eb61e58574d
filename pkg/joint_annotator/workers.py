from asyncio import Semaphore, Task, create_task, gather, run, to_thread
from collections.abc import Callable, Sequence
from logging import getLogger
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = getLogger(__name__)


async def _run_with_semaphore(
    semaphore: Semaphore, func: Callable[[T], R], item: T
) -> R:
    async with semaphore:
        return await to_thread(func, item)


async def gather_all(
    func: Callable[[T], R], items: Sequence[T], limit: int = 1
) -> list[R]:
    """`func(item)`をワーカースレッド上で同時実行数`limit`で並行実行し、入力順に結果を返します。"""
    tasks: list[Task[R]] = []
    semaphore = Semaphore(limit)

    for item in items:
        tasks.append(create_task(_run_with_semaphore(semaphore, func, item)))
    return list(await gather(*tasks))


def run_all(func: Callable[[T], R], items: Sequence[T], limit: int = 1) -> list[R]:
    """`gather_all()`の同期版です。`limit <= 1`のときはスレッドを使わずに順番に実行します。"""
    if limit <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    logger.debug(f"run_all({func.__name__}, {len(items)} items, {limit=})")
    return run(gather_all(func, items, limit))
