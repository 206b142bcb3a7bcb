"""Set-partition combinatorics over small particle-label sets.

Everything downstream (cumulant expansions, moment/cumulant transforms,
collision-term sums) is a signed sum over one of three families enumerated
here: partitions of a label set, partitions of the blocks of a partition,
and per-block nonempty-subset selections.  Enumeration is exhaustive,
deterministic, and guarded by a hard size cap because the counts grow like
Bell numbers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial
from typing import Iterable, Iterator, Sequence

from .errors import ContractError, SizeLimitError

#: Default upper bound on the size of any enumerated ground set (B_8 = 4140).
DEFAULT_CAP = 8

IndexSet = tuple[int, ...]


def as_index_set(indices: Iterable[int]) -> IndexSet:
    """Validate and canonicalize a collection of particle labels.

    Labels must be distinct nonnegative integers; the result is sorted
    ascending.
    """
    labels = tuple(int(i) for i in indices)
    if not labels:
        raise ContractError("index set must be nonempty")
    if any(i < 0 for i in labels):
        raise ContractError(f"labels must be nonnegative, got {labels}")
    if len(set(labels)) != len(labels):
        raise ContractError(f"duplicate labels in {labels}")
    return tuple(sorted(labels))


@dataclass(frozen=True)
class Partition:
    """A decomposition of a label set into nonempty disjoint blocks.

    Blocks are kept in canonical order (sorted by their minimum element,
    elements ascending inside each block) so partitions compare and hash
    stably across runs.
    """

    blocks: tuple[IndexSet, ...]

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ContractError("partition must have at least one block")
        seen: set[int] = set()
        for block in self.blocks:
            if not block:
                raise ContractError("blocks must be nonempty")
            if tuple(sorted(block)) != block:
                raise ContractError(f"block {block} is not sorted")
            if seen & set(block):
                raise ContractError(f"blocks overlap at {seen & set(block)}")
            seen.update(block)
        mins = [b[0] for b in self.blocks]
        if mins != sorted(mins):
            raise ContractError("blocks are not in canonical (min-element) order")

    @property
    def ground(self) -> IndexSet:
        return tuple(sorted(itertools.chain.from_iterable(self.blocks)))

    def __len__(self) -> int:
        return len(self.blocks)

    @classmethod
    def of(cls, *blocks: Iterable[int]) -> "Partition":
        """Build a partition from raw blocks, canonicalizing order."""
        canonical = tuple(sorted((as_index_set(b) for b in blocks), key=lambda b: b[0]))
        return cls(canonical)


@dataclass(frozen=True)
class BlockPartition:
    """A partition of the blocks of an owning :class:`Partition`.

    ``groups`` holds indices into the owning partition's block tuple; each
    group is the index set of blocks that merge into one jointly-evolving
    cluster.
    """

    groups: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class SubsetSelection:
    """One nonempty subset chosen from each block of a partition."""

    chosen: tuple[IndexSet, ...]

    @property
    def union(self) -> IndexSet:
        return tuple(sorted(itertools.chain.from_iterable(self.chosen)))


def _check_cap(size: int, cap: int, what: str) -> None:
    if size > cap:
        raise SizeLimitError(
            f"{what} of {size} elements exceeds the cap {cap}; "
            "raise the cap explicitly if the blowup is intended"
        )


def _rgs_partitions(items: Sequence[int]) -> Iterator[tuple[tuple[int, ...], ...]]:
    # Restricted-growth assignment: item 0 opens block 0, item i may join any
    # open block or open the next one.  Blocks inherit min-element order from
    # the assignment, so no re-sorting is needed.
    n = len(items)
    assignment = [0] * n

    def rec(i: int, n_blocks: int) -> Iterator[tuple[tuple[int, ...], ...]]:
        if i == n:
            blocks: list[list[int]] = [[] for _ in range(n_blocks)]
            for item, b in zip(items, assignment):
                blocks[b].append(item)
            yield tuple(tuple(b) for b in blocks)
            return
        for b in range(n_blocks + 1):
            assignment[i] = b
            yield from rec(i + 1, max(n_blocks, b + 1))

    return rec(0, 0) if n else iter(())


def enumerate_partitions(ground: Iterable[int], cap: int = DEFAULT_CAP) -> list[Partition]:
    """All partitions of a label set, in deterministic canonical order.

    The output is ordered by the restricted-growth enumeration (the one-block
    partition first, all-singletons last) and its length equals the Bell
    number of ``len(ground)``.
    """
    labels = as_index_set(ground)
    _check_cap(len(labels), cap, "partition enumeration")
    return [Partition(blocks) for blocks in _rgs_partitions(labels)]


def enumerate_block_partitions(partition: Partition, cap: int = DEFAULT_CAP) -> list[BlockPartition]:
    """All ways to merge the blocks of ``partition`` into groups of clusters."""
    k = len(partition.blocks)
    _check_cap(k, cap, "block-partition enumeration")
    return [BlockPartition(groups) for groups in _rgs_partitions(range(k))]


def enumerate_subset_selections(partition: Partition, cap: int = DEFAULT_CAP) -> list[SubsetSelection]:
    """All choices of one nonempty subset from each block.

    The count is the product over blocks of (2^|block| - 1).
    """
    _check_cap(len(partition.ground), cap, "subset-selection enumeration")
    per_block: list[list[IndexSet]] = []
    for block in partition.blocks:
        subsets = [
            tuple(c)
            for size in range(1, len(block) + 1)
            for c in itertools.combinations(block, size)
        ]
        per_block.append(subsets)
    return [SubsetSelection(tuple(choice)) for choice in itertools.product(*per_block)]


def mobius_coefficient(num_blocks: int) -> int:
    """Signed coefficient (-1)^(k-1) * (k-1)! attached to a k-group merge.

    This is the Moebius function of the partition lattice between the
    all-singletons partition and the one-block partition; it drives every
    signed expansion in the package.
    """
    if num_blocks < 1:
        raise ContractError(f"num_blocks must be >= 1, got {num_blocks}")
    return (-1) ** (num_blocks - 1) * factorial(num_blocks - 1)


def merged_labels(partition: Partition, group: Sequence[int]) -> IndexSet:
    """Union of the labels of the blocks named by ``group`` (a cluster argument)."""
    labels: list[int] = []
    for block_index in group:
        try:
            labels.extend(partition.blocks[block_index])
        except IndexError:
            raise ContractError(
                f"group references block {block_index} of a {len(partition)}-block partition"
            ) from None
    return tuple(sorted(labels))
