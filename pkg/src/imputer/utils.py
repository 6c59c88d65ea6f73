import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence, TypeVar

from imputer.errors import InvalidInput

T = TypeVar("T")
R = TypeVar("R")


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    with open(path) as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as err:
                raise InvalidInput(
                    f"Malformed record on line {line_number} of {path}: {err}"
                ) from None


def write_jsonl(path: Path, records: Iterable[dict[str, Any]], mode: str = "w") -> int:
    count = 0
    with open(path, mode) as f:
        for record in records:
            # Sorted keys and fixed separators keep reruns byte-identical
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    return count


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply fn to every item, at most `workers` at a time, returning results in input order"""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    async def run_all():
        semaphore = asyncio.Semaphore(workers)

        async def limited(item):
            async with semaphore:
                return await asyncio.to_thread(fn, item)

        return await asyncio.gather(*[limited(item) for item in items])

    logging.debug(f"Evaluating {len(items)} items with {workers} workers")
    return list(asyncio.run(run_all()))
