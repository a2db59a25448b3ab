"""
pf-regen random streams
Counter-based generators keyed by (seed, stream, block) so that serial and
threaded runs draw identical numbers for the same work item
"""

from concurrent.futures import ThreadPoolExecutor
from enum import IntEnum
from typing import Callable, List, Sequence, TypeVar

from numpy.random import Generator, Philox, SeedSequence

T = TypeVar("T")

BLOCK_SIZE = 1024


class Stream(IntEnum):
    """Independent stream families; the value is the first spawn-key word"""

    CYCLES = 0
    U_ESTIMATE = 1
    BOOTSTRAP = 2
    SPLIT_CYCLES = 3
    KERNEL_CYCLES = 4
    KERNEL_U = 5
    UNIQUENESS = 6


def fresh_seed() -> int:
    """Entropy seed that fits a signed 64-bit field in reports"""
    return int(SeedSequence().entropy % (2**63))


def block_generator(seed: int, stream: int, block: int, *extra: int) -> Generator:
    key = (int(stream), *(int(k) for k in extra), int(block))
    return Generator(Philox(SeedSequence(int(seed), spawn_key=key)))


def block_ranges(n_items: int, block_size: int = BLOCK_SIZE) -> List[range]:
    return [range(start, min(start + block_size, n_items)) for start in range(0, n_items, block_size)]


def run_blocks(
    worker: Callable[[int, range], Sequence[T]],
    n_items: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> List[T]:
    """Run worker(block_index, item_range) over fixed blocks and concatenate in block order"""
    blocks = block_ranges(n_items, block_size)
    if threads <= 1 or len(blocks) <= 1:
        chunks = [worker(index, items) for index, items in enumerate(blocks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(worker, range(len(blocks)), blocks))
    merged: List[T] = []
    for chunk in chunks:
        merged.extend(chunk)
    return merged

