"""
Diskretes Gossip-Netz auf Basis von simpy.

Nachrichtenfluss wie im Bitcoin-Netz: inv → getdata → tx, dazu mempool und
ping. Jede Zustellung dauert einen Tick. Konforme Knoten leiten weiter, was
ihre Relay-Policy erfüllt; nicht-konforme Knoten nehmen an, leiten aber nie
weiter. Blöcke werden sofort an alle Knoten synchronisiert.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import pandas as pd
import simpy

from chain.config import FeePolicy
from chain.errors import BadConfig, DoubleInclusion, RejectedAtOrigin, UnknownNode
from chain.script import Script
from chain.txmodel import (
    NULL_TXID,
    OutPoint,
    Transaction,
    TxInput,
    TxOutput,
    txid,
    validate_standard,
)
from simnet.view import Block, ChainView

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["txid", "node_id", "region", "kind", "arrival_tick", "hops"]


class Region(str, Enum):
    CENSORED = "censored"
    FREE = "free"


class NodeKind(str, Enum):
    CONFORMANT = "conformant"
    NON_CONFORMANT = "non_conformant"


@dataclass(frozen=True)
class NetworkConfig:
    censored_conformant: int = 20
    censored_non_conformant: int = 0
    free_conformant: int = 30
    free_non_conformant: int = 0
    out_degree: int = 8
    seed: int = 0
    # Zensierte Knoten verbinden sich nur innerhalb der Region, außer c-Nodes
    filter_cross_border: bool = False
    # Grenzüberschreitende Links leiten keine unbestätigten Transaktionen weiter
    filter_swift: bool = False
    cnode_count: int = 2
    snooping_count: int = 0
    mining_every: Optional[int] = None
    policy: FeePolicy = field(default_factory=FeePolicy)

    @property
    def total(self) -> int:
        return (
            self.censored_conformant
            + self.censored_non_conformant
            + self.free_conformant
            + self.free_non_conformant
        )

    def validate(self) -> None:
        counts = [
            self.censored_conformant,
            self.censored_non_conformant,
            self.free_conformant,
            self.free_non_conformant,
        ]
        if any(c < 0 for c in counts):
            raise BadConfig(f"Negative Knotenzahl: {counts}")
        if self.free_conformant < 1:
            raise BadConfig("Die freie Region braucht mindestens einen konformen Knoten (Miner)")
        if self.censored_conformant + self.censored_non_conformant > 0 and self.censored_conformant < 1:
            raise BadConfig("Die zensierte Region braucht mindestens einen konformen Knoten")
        if not 1 <= self.out_degree <= self.total - 1:
            raise BadConfig(f"out_degree {self.out_degree} nicht in [1, {self.total - 1}]")
        if self.mining_every is not None and self.mining_every < 1:
            raise BadConfig(f"mining_every muss >= 1 sein: {self.mining_every}")


@dataclass
class SimNode:
    id: int
    region: Region
    kind: NodeKind
    relay_policy: FeePolicy
    is_cnode: bool = False
    is_miner: bool = False
    snooping: bool = False
    outbound: list[int] = field(default_factory=list)
    inbound: set[int] = field(default_factory=set)
    mempool: dict[bytes, Transaction] = field(default_factory=dict)
    arrivals: dict[bytes, tuple[float, int]] = field(default_factory=dict)
    requested: set[bytes] = field(default_factory=set)

    @property
    def peers(self) -> list[int]:
        return sorted(set(self.outbound) | self.inbound)

    @property
    def relays(self) -> bool:
        return self.kind == NodeKind.CONFORMANT


class SimNetwork:
    def __init__(self, config: NetworkConfig) -> None:
        config.validate()
        self.config = config
        self.env = simpy.Environment()
        self.rng = random.Random(config.seed)
        self.nodes: list[SimNode] = []
        self.chain: list[Block] = []
        self.event_log: list[tuple] = []
        self._tx_index: dict[bytes, Transaction] = {}
        self._confirmed: dict[bytes, int] = {}
        self._pending_report: list[bytes] = []
        self._events = 0
        self._coinbase_counter = 0
        self._build_nodes()
        self._build_topology()

    # ---------- Aufbau ----------

    def _build_nodes(self) -> None:
        cfg = self.config
        layout = [
            (Region.CENSORED, NodeKind.CONFORMANT, cfg.censored_conformant),
            (Region.CENSORED, NodeKind.NON_CONFORMANT, cfg.censored_non_conformant),
            (Region.FREE, NodeKind.CONFORMANT, cfg.free_conformant),
            (Region.FREE, NodeKind.NON_CONFORMANT, cfg.free_non_conformant),
        ]
        for region, kind, count in layout:
            for _ in range(count):
                self.nodes.append(SimNode(len(self.nodes), region, kind, cfg.policy))

        censored = [n.id for n in self.nodes if n.region == Region.CENSORED and n.relays]
        for node_id in self.rng.sample(censored, min(cfg.cnode_count, len(censored))):
            self.nodes[node_id].is_cnode = True
        free = [n.id for n in self.nodes if n.region == Region.FREE and n.relays]
        self.nodes[free[0]].is_miner = True
        for node_id in self.rng.sample(free[1:], min(cfg.snooping_count, len(free) - 1)):
            self.nodes[node_id].snooping = True

    def _may_connect(self, a: SimNode, b: SimNode) -> bool:
        if not self.config.filter_cross_border or a.region == b.region:
            return True
        censored = a if a.region == Region.CENSORED else b
        return censored.is_cnode

    def _build_topology(self) -> None:
        for node in self.nodes:
            candidates = [
                other.id
                for other in self.nodes
                if other.id != node.id and self._may_connect(node, other)
            ]
            chosen = self.rng.sample(candidates, min(self.config.out_degree, len(candidates)))
            node.outbound = sorted(chosen)
            for peer in chosen:
                self.nodes[peer].inbound.add(node.id)
        logger.debug("[Sim] %d Knoten, Grad %d aufgebaut", len(self.nodes), self.config.out_degree)

    def adjacency(self) -> dict[int, list[int]]:
        return {n.id: list(n.outbound) for n in self.nodes}

    def node(self, node_id: int) -> SimNode:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNode(f"Knoten {node_id} existiert nicht")
        return self.nodes[node_id]

    @property
    def miner(self) -> SimNode:
        return next(n for n in self.nodes if n.is_miner)

    @property
    def now(self) -> float:
        return self.env.now

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    # ---------- Auflösung von Outputs ----------

    def resolve_output(self, outpoint: OutPoint) -> Optional[TxOutput]:
        tx = self._tx_index.get(outpoint.txid)
        if tx is None or outpoint.vout >= len(tx.outputs):
            return None
        return tx.outputs[outpoint.vout]

    def known_transaction(self, tx_id: bytes) -> Optional[Transaction]:
        return self._tx_index.get(tx_id)

    def confirmed_height(self, tx_id: bytes) -> Optional[int]:
        return self._confirmed.get(tx_id)

    def block_tick(self, height: int) -> float:
        return self.chain[height].tick

    # ---------- Nachrichten ----------

    def _blocked(self, a: SimNode, b: SimNode) -> bool:
        return self.config.filter_swift and a.region != b.region

    def _send(self, kind: str, src: int, dst: int, payload=None) -> None:
        self.env.process(self._deliver(kind, src, dst, payload))

    def _deliver(self, kind: str, src: int, dst: int, payload):
        yield self.env.timeout(1)
        self._handle(kind, src, dst, payload)

    def _log(self, kind: str, src: int, dst: int, tx_id: Optional[bytes]) -> None:
        self.event_log.append((self.env.now, kind, src, dst, tx_id[::-1].hex()[:16] if tx_id else ""))

    def _handle(self, kind: str, src: int, dst: int, payload) -> None:
        node = self.nodes[dst]
        sender = self.nodes[src]
        if kind == "inv":
            for tx_id in payload:
                self._log(kind, src, dst, tx_id)
                if self._blocked(sender, node):
                    continue
                if tx_id in node.mempool or tx_id in node.requested or tx_id in self._confirmed:
                    continue
                node.requested.add(tx_id)
                self._send("getdata", dst, src, tx_id)
        elif kind == "getdata":
            self._log(kind, src, dst, payload)
            tx = node.mempool.get(payload)
            if tx is not None:
                hops = node.arrivals.get(payload, (0, 0))[1]
                self._send("tx", dst, src, (tx, hops + 1))
        elif kind == "tx":
            tx, hops = payload
            tx_id = txid(tx)
            self._log(kind, src, dst, tx_id)
            node.requested.discard(tx_id)
            self._accept(node, tx, tx_id, hops, src)
        elif kind == "mempool":
            self._log(kind, src, dst, None)
            if node.mempool:
                self._send("inv", dst, src, list(node.mempool))
        elif kind == "ping":
            self._log(kind, src, dst, None)
            self._send("pong", dst, src, payload)
        elif kind == "pong":
            self._log(kind, src, dst, None)
        self._count_event()

    def _count_event(self) -> None:
        self._events += 1
        every = self.config.mining_every
        if every and self._events % every == 0:
            self.mine()

    def _accept(self, node: SimNode, tx: Transaction, tx_id: bytes, hops: int, src: Optional[int]) -> bool:
        if tx_id in node.mempool or tx_id in self._confirmed:
            return False
        report = validate_standard(tx, self.resolve_output, node.relay_policy)
        if not report.passed:
            logger.debug("[Sim] Knoten %d verwirft Tx %s: %s", node.id, tx_id[::-1].hex()[:16], report.failures)
            return False
        node.mempool[tx_id] = tx
        node.arrivals[tx_id] = (self.env.now, hops)
        if node.relays:
            for peer_id in node.peers:
                if peer_id == src or self._blocked(node, self.nodes[peer_id]):
                    continue
                self._send("inv", node.id, peer_id, [tx_id])
        return True

    def inject(self, node_id: int, tx: Transaction) -> bytes:
        node = self.node(node_id)
        tx_id = txid(tx)
        report = validate_standard(tx, self.resolve_output, node.relay_policy)
        if not report.passed:
            raise RejectedAtOrigin(
                f"Knoten {node_id} lehnt Tx {tx_id[::-1].hex()} ab: {report.failures}"
            )
        self._tx_index.setdefault(tx_id, tx)
        self._log("inject", node_id, node_id, tx_id)
        if self._accept(node, tx, tx_id, 0, None):
            self._pending_report.append(tx_id)
        return tx_id

    def request_mempool(self, requester: int, peer: int) -> None:
        self.node(requester)
        self.node(peer)
        self._send("mempool", requester, peer)

    def ping(self, a: int, b: int) -> None:
        self.node(a)
        self.node(b)
        self._send("ping", a, b, self._events)

    def run_to_quiescence(self) -> pd.DataFrame:
        self.env.run()
        report = self.propagation_report(self._pending_report)
        self._pending_report = []
        return report

    def mempool_query(self, node_id: int) -> set[bytes]:
        return set(self.node(node_id).mempool)

    def propagation_report(self, tx_ids: Optional[Iterable[bytes]] = None) -> pd.DataFrame:
        """Je Transaktion und empfangendem Knoten: Ankunftstick und Hop-Anzahl."""
        wanted = list(tx_ids) if tx_ids is not None else list(self._tx_index)
        rows = []
        for tx_id in wanted:
            for node in self.nodes:
                arrival = node.arrivals.get(tx_id)
                if arrival is None:
                    continue
                rows.append(
                    {
                        "txid": tx_id[::-1].hex(),
                        "node_id": node.id,
                        "region": node.region.value,
                        "kind": node.kind.value,
                        "arrival_tick": arrival[0],
                        "hops": arrival[1],
                    }
                )
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def snoop_log(self, node_id: int) -> list[tuple]:
        node = self.node(node_id)
        if not node.snooping:
            return []
        return [e for e in self.event_log if e[3] == node_id]

    # ---------- Blöcke ----------

    def append_block(self, transactions: list[Transaction], miner: int) -> Block:
        tx_ids = tuple(txid(tx) for tx in transactions)
        seen = set()
        for tx_id in tx_ids:
            if tx_id in self._confirmed or tx_id in seen:
                raise DoubleInclusion(f"Tx {tx_id[::-1].hex()} ist bereits in einem Block")
            seen.add(tx_id)
        block = Block(len(self.chain), tx_ids, miner, self.env.now, tuple(transactions))
        self.chain.append(block)
        for tx, tx_id in zip(transactions, tx_ids):
            self._tx_index.setdefault(tx_id, tx)
            self._confirmed[tx_id] = block.height
        for node in self.nodes:
            for tx_id in tx_ids:
                node.mempool.pop(tx_id, None)
        self._log("block", miner, -1, None)
        return block

    def mine(self) -> Block:
        """Leert den Mempool des Miners in einen neuen Block (Eltern vor Kindern)."""
        miner = self.miner
        pending = [(tx_id, tx) for tx_id, tx in miner.mempool.items() if tx_id not in self._confirmed]
        included: list[Transaction] = []
        included_ids: set[bytes] = set()
        progress = True
        while progress:
            progress = False
            for tx_id, tx in pending:
                if tx_id in included_ids:
                    continue
                parents = {i.prevout.txid for i in tx.inputs}
                if all(p in self._confirmed or p in included_ids for p in parents):
                    included.append(tx)
                    included_ids.add(tx_id)
                    progress = True
        block = self.append_block(included, miner.id)
        logger.info("[Sim] Block %d mit %d Tx gemined (Tick %s)", block.height, len(included), self.env.now)
        return block

    def fund(self, script_pubkey: Script, value: int) -> tuple[OutPoint, TxOutput]:
        """Faucet: Coinbase-artige Transaktion in einem eigenen Block."""
        self._coinbase_counter += 1
        coinbase = Transaction(
            (TxInput(OutPoint(NULL_TXID, 0xFFFFFFFF), Script(self._coinbase_counter.to_bytes(4, "little"))),),
            (TxOutput(value, script_pubkey),),
        )
        self.append_block([coinbase], self.miner.id)
        return OutPoint(txid(coinbase), 0), coinbase.outputs[0]

    def load_blocks(self, blocks: Iterable[tuple[int, list[Transaction]]]) -> None:
        """Stellt eine gespeicherte Kette wieder her (Workspace der CLI)."""
        for miner, transactions in blocks:
            self.append_block(transactions, miner)
            self._coinbase_counter += sum(1 for tx in transactions if tx.is_coinbase())

    def view(self, node_id: int) -> ChainView:
        node = self.node(node_id)
        return ChainView(tuple(self.chain), tuple(node.mempool.values()))


def build_network(config: NetworkConfig) -> SimNetwork:
    return SimNetwork(config)


def inject(net: SimNetwork, node_id: int, tx: Transaction) -> bytes:
    return net.inject(node_id, tx)


def run_to_quiescence(net: SimNetwork) -> pd.DataFrame:
    return net.run_to_quiescence()


def mine(net: SimNetwork) -> Block:
    return net.mine()


def mempool_query(net: SimNetwork, node_id: int) -> set[bytes]:
    return net.mempool_query(node_id)
