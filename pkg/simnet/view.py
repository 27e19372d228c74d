from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

from chain.txmodel import Transaction, txid


@dataclass(frozen=True)
class Block:
    height: int
    txids: Tuple[bytes, ...]
    miner: int
    tick: float
    transactions: Tuple[Transaction, ...] = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class ChainView:
    """Sicht eines Knotens: gemeinsame Blockchain plus eigener Mempool."""

    blocks: Tuple[Block, ...]
    mempool: Tuple[Transaction, ...] = ()

    def transactions(self, include_mempool: bool = True) -> Iterator[Transaction]:
        for block in self.blocks:
            yield from block.transactions
        if include_mempool:
            yield from self.mempool

    def __iter__(self) -> Iterator[Transaction]:
        return self.transactions()

    @property
    def tip_height(self) -> int:
        return len(self.blocks) - 1

    def height_of(self, tx_id: bytes) -> Optional[int]:
        for block in self.blocks:
            if tx_id in block.txids:
                return block.height
        return None

    def heights(self) -> dict[bytes, int]:
        return {tid: block.height for block in self.blocks for tid in block.txids}

    def get(self, tx_id: bytes) -> Optional[Transaction]:
        for tx in self.transactions():
            if txid(tx) == tx_id:
                return tx
        return None
