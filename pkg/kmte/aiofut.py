from typing import (
    AsyncIterable,
    Callable,
    Iterable,
    Coroutine,
    List,
    Optional,
    Any,
    Tuple,
)
import asyncio
from asyncio import Task
from concurrent.futures import ThreadPoolExecutor

__all__ = ["as_completed", "run_ordered"]


async def as_completed(
    aws: Iterable[Coroutine], timeout: Optional[int] = None
) -> AsyncIterable[Task]:
    """
    This async generator is used to "mimic" the behavior of the
    concurrent.futures.as_completed functionality.  The builtin
    asyncio.as_completed yields futures such that the originating coroutine
    can not be retrieved; here each coroutine is wrapped so that the completed
    Task is yielded and `task.get_coro()` identifies the job.

    Parameters
    ----------
    aws:
        An interable of coroutines that will be wrapped into futures and
        executed through the asyncio on_completed builtin.

    timeout: int
        (same as asyncio.as_completed):
        If provided an asyncio.TimeoutError will be raised if all of the
        coroutines have not completed within the timeout value.

    Yields
    ------
    asyncio.Task
    """
    loop = asyncio.get_running_loop()

    # wrap as [futureW[futureO[coroutine]]]; futureO completing sets the
    # result of futureW, which is what the builtin as_completed watches.

    def wrap_coro(coro):
        fut = asyncio.ensure_future(coro)
        wrapper = loop.create_future()
        fut.add_done_callback(wrapper.set_result)
        return wrapper

    for next_completed in asyncio.as_completed(
        [wrap_coro(coro) for coro in aws], timeout=timeout
    ):
        yield await next_completed


def run_ordered(
    jobs: Iterable[Callable[[], Any]],
    max_workers: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> List[Any]:
    """
    Execute the zero-argument callables in `jobs` on a thread pool of
    `max_workers` and return their results in submission order.

    Completion order varies with the worker count; the returned list does
    not.  The first job exception is raised once all jobs have finished.

    Parameters
    ----------
    jobs:
        The work units.

    max_workers:
        Thread pool size; 1 runs the jobs inline without an event loop.

    progress:
        Optional callback receiving (done, total) after each job completes.
    """
    jobs = list(jobs)
    total = len(jobs)

    if max_workers <= 1 or total <= 1:
        results = []
        for done, job in enumerate(jobs, start=1):
            results.append(job())
            if progress:
                progress(done, total)
        return results

    results: List[Any] = [None] * total
    failures: List[Tuple[int, BaseException]] = []

    async def process_batch(executor):
        loop = asyncio.get_running_loop()

        async def run_job(job):
            return await loop.run_in_executor(executor, job)

        tasks = {run_job(job): index for index, job in enumerate(jobs)}
        done = 0

        async for task in as_completed(tasks):
            done += 1
            index = tasks[task.get_coro()]
            try:
                results[index] = task.result()
            except Exception as exc:
                failures.append((index, exc))

            if progress:
                progress(done, total)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        asyncio.run(process_batch(executor))

    if failures:
        raise min(failures, key=lambda item: item[0])[1]

    return results
