"""
Transport-Schicht: swift (Mindestgebühr, Konsum aus dem Mempool) oder
on-chain (Standardgebühr, Konsum nach dem Mining).
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional

from chain.config import FeePolicy
from chain.errors import RejectedNonstandard
from chain.txmodel import Transaction, validate_standard
from simnet.network import SimNetwork

logger = logging.getLogger(__name__)


class Intent(str, Enum):
    INTERACTIVE = "interactive"
    ASYNCHRONOUS = "asynchronous"


class Mode(str, Enum):
    SWIFT = "swift"
    ON_CHAIN = "on_chain"


@dataclass(frozen=True)
class TransportMode:
    mode: Mode
    fee_rate: float


@dataclass(frozen=True)
class SubmissionReceipt:
    txid: bytes
    mode: TransportMode
    injected_at: float
    confirmed_at: Optional[float] = None


def choose_mode(intent: Intent | str, policy: FeePolicy) -> TransportMode:
    if Intent(intent) == Intent.INTERACTIVE:
        return TransportMode(Mode.SWIFT, policy.min_fee_rate)
    return TransportMode(Mode.ON_CHAIN, policy.standard_fee_rate)


class Transport:
    """Sendet Transaktionen über einen Knoten; submit ist pro Knoten serialisiert."""

    def __init__(self, net: SimNetwork, node_id: int, policy: FeePolicy) -> None:
        net.node(node_id)
        self.net = net
        self.node_id = node_id
        self.policy = policy
        self._lock = threading.Lock()
        self._receipts: dict[bytes, SubmissionReceipt] = {}

    def submit(self, tx: Transaction, mode: TransportMode) -> SubmissionReceipt:
        report = validate_standard(tx, self.net.resolve_output, self.policy.with_min_fee_rate(mode.fee_rate))
        if not report.passed:
            raise RejectedNonstandard(
                f"Tx verletzt Relay-Regeln bei {mode.fee_rate} sat/B: {report.failures}"
            )
        with self._lock:
            tx_id = self.net.inject(self.node_id, tx)
            receipt = SubmissionReceipt(tx_id, mode, self.net.now)
            self._receipts[tx_id] = receipt
        logger.debug("[Transport] %s %s via Knoten %d", mode.mode.value, tx_id[::-1].hex()[:16], self.node_id)
        return receipt

    def submit_all(self, transactions: Iterable[Transaction], mode: TransportMode) -> list[SubmissionReceipt]:
        return [self.submit(tx, mode) for tx in transactions]

    def refresh(self, receipt: SubmissionReceipt) -> SubmissionReceipt:
        """Neuer Snapshot mit confirmed_at, sobald ein Block die Tx enthält."""
        if receipt.confirmed_at is not None:
            return receipt
        height = self.net.confirmed_height(receipt.txid)
        if height is None:
            return receipt
        updated = replace(receipt, confirmed_at=max(self.net.block_tick(height), receipt.injected_at))
        with self._lock:
            self._receipts[receipt.txid] = updated
        return updated

    def receipts(self) -> list[SubmissionReceipt]:
        with self._lock:
            current = list(self._receipts.values())
        return [self.refresh(r) for r in current]


def submit(tx: Transaction, mode: TransportMode, transport: Transport) -> SubmissionReceipt:
    return transport.submit(tx, mode)
