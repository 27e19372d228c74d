"""
Chaining-Schicht: zerlegt Inhalte in typisierte, nummerierte Data Units und
setzt sie aus beliebig sortierten Transaktionsströmen wieder zusammen.

Header: type(1) ‖ seq(4) ‖ [len(4)] ‖ body, big-endian. Das oberste Bit des
Typbytes markiert die erste Unit eines Stroms, nur sie trägt len.
"""

from __future__ import annotations

import logging
import math
import struct
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Optional

from chain.embedding import carrier_payloads
from chain.errors import (
    DeserializationError,
    EmptyContent,
    IncompleteStream,
    MissingLeadingTx,
    SequenceConflict,
)
from chain.txmodel import Transaction, txid
from tithonus.rijndael import Rijndael, ctr_transform

logger = logging.getLogger(__name__)

FIRST_FLAG = 0x80
FIRST_HEADER = 9
NEXT_HEADER = 5
MAX_SEQ = 0xFFFFFFFF


class UnitType(IntEnum):
    DATA = 0x01
    DIR = 0x02
    CERT = 0x03
    CREG = 0x04
    REQ = 0x05
    RESP = 0x06


@dataclass(frozen=True)
class DataUnit:
    unit_type: UnitType
    seq: int
    body: bytes
    length: Optional[int] = None

    @property
    def is_first(self) -> bool:
        return self.length is not None

    def encode(self) -> bytes:
        if self.is_first:
            header = struct.pack(">BII", self.unit_type | FIRST_FLAG, self.seq, self.length)
        else:
            header = struct.pack(">BI", self.unit_type, self.seq)
        return header + self.body

    @classmethod
    def decode(cls, raw: bytes) -> "DataUnit":
        if len(raw) < NEXT_HEADER:
            raise DeserializationError(f"Unit zu kurz: {len(raw)} Bytes")
        type_byte, seq = struct.unpack_from(">BI", raw)
        try:
            unit_type = UnitType(type_byte & 0x7F)
        except ValueError as exc:
            raise DeserializationError(f"Unbekannter Unit-Typ 0x{type_byte:02x}") from exc
        if not type_byte & FIRST_FLAG:
            return cls(unit_type, seq, raw[NEXT_HEADER:])
        if len(raw) < FIRST_HEADER + 1:
            raise DeserializationError("Erste Unit ohne len oder Body")
        (length,) = struct.unpack_from(">I", raw, NEXT_HEADER)
        if length < 1 or seq + length - 1 > MAX_SEQ:
            raise DeserializationError(f"Ungültiges len {length} für seq {seq}")
        return cls(unit_type, seq, raw[FIRST_HEADER:], length)


class SeqAllocator:
    """Global monotoner Zähler; reserve(n) vergibt zusammenhängende Blöcke atomar."""

    def __init__(self, start: int = 1) -> None:
        self._next = start
        self._lock = threading.Lock()

    @property
    def next_value(self) -> int:
        with self._lock:
            return self._next

    def reserve(self, count: int) -> int:
        with self._lock:
            first = self._next
            if first + count - 1 > MAX_SEQ:
                raise SequenceConflict("Sequenzraum erschöpft")
            self._next += count
            return first


def unit_count(size: int, carrier_capacity: int) -> int:
    first = carrier_capacity - FIRST_HEADER
    if size <= first:
        return 1
    return 1 + math.ceil((size - first) / (carrier_capacity - NEXT_HEADER))


@lru_cache(maxsize=256)
def _stream_cipher(key: bytes) -> Rijndael:
    return Rijndael(key, block_size=28)


def crypt_body(key: Optional[bytes], seq: int, body: bytes) -> bytes:
    if key is None:
        return body
    return ctr_transform(_stream_cipher(key), seq, body)


def fragment(
    content: bytes,
    unit_type: UnitType,
    carrier_capacity: int,
    seq_allocator: SeqAllocator,
    key: Optional[bytes] = None,
) -> list[DataUnit]:
    if not content:
        raise EmptyContent("Leerer Inhalt kann nicht fragmentiert werden")
    if carrier_capacity <= FIRST_HEADER:
        raise ValueError(f"Trägerkapazität {carrier_capacity} muss größer als {FIRST_HEADER} sein")

    first_size = carrier_capacity - FIRST_HEADER
    next_size = carrier_capacity - NEXT_HEADER
    chunks = [content[:first_size]]
    chunks += [content[i : i + next_size] for i in range(first_size, len(content), next_size)]
    first_seq = seq_allocator.reserve(len(chunks))

    units = []
    for offset, chunk in enumerate(chunks):
        seq = first_seq + offset
        units.append(
            DataUnit(
                UnitType(unit_type),
                seq,
                crypt_body(key, seq, chunk),
                len(chunks) if offset == 0 else None,
            )
        )
    logger.debug("[Chaining] %d Bytes in %d Units (seq %d..)", len(content), len(units), first_seq)
    return units


@dataclass
class StreamCursor:
    first_seq: int
    length: int
    unit_type: UnitType
    key: Optional[bytes] = None
    collected: dict[int, bytes] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.collected) == self.length

    def accepts(self, unit: DataUnit) -> bool:
        return (
            unit.unit_type == self.unit_type
            and self.first_seq <= unit.seq < self.first_seq + self.length
        )

    def content(self) -> bytes:
        if not self.complete:
            missing = self.length - len(self.collected)
            raise IncompleteStream(f"{missing} von {self.length} Units fehlen (seq ab {self.first_seq})")
        return b"".join(
            crypt_body(self.key, seq, self.collected[seq])
            for seq in range(self.first_seq, self.first_seq + self.length)
        )


def open_cursor(first: DataUnit, key: Optional[bytes] = None) -> StreamCursor:
    if not first.is_first:
        raise DeserializationError(f"Unit seq {first.seq} ist keine erste Unit")
    cursor = StreamCursor(first.seq, first.length, first.unit_type, key)
    cursor.collected[first.seq] = first.body
    return cursor


def assemble(cursor: StreamCursor, candidate: DataUnit) -> StreamCursor:
    """Nimmt candidate auf, falls seq im Bereich liegt; Duplikate sind idempotent."""
    if not cursor.accepts(candidate):
        return cursor
    known = cursor.collected.get(candidate.seq)
    if known is not None:
        if known != candidate.body:
            raise SequenceConflict(f"seq {candidate.seq} mit abweichendem Body")
        return cursor
    cursor.collected[candidate.seq] = candidate.body
    return cursor


PayloadFilter = Callable[[bytes], Optional[bytes]]


def iter_units(source: Iterable[Transaction], payload_filter: Optional[PayloadFilter] = None) -> Iterator[DataUnit]:
    for tx in source:
        for payload in carrier_payloads(tx):
            if payload_filter is not None:
                payload = payload_filter(payload)
                if payload is None:
                    continue
            try:
                yield DataUnit.decode(payload)
            except DeserializationError:
                continue


def drain(cursor: StreamCursor, units: Iterable[DataUnit]) -> bytes:
    """
    Füttert cursor mit der ganzen Quelle. Abweichende Bodies für dieselbe seq
    sind SequenceConflict, auch wenn der Strom schon vollständig ist.
    """
    for unit in units:
        try:
            assemble(cursor, unit)
        except SequenceConflict:
            logger.warning("[Chaining] Konflikt in Strom ab seq %d", cursor.first_seq)
            raise
    return cursor.content()


def scan(
    leading_txid: bytes,
    source: Iterable[Transaction],
    key: Optional[bytes] = None,
    payload_filter: Optional[PayloadFilter] = None,
) -> bytes:
    transactions = list(source)
    leading = next((tx for tx in transactions if txid(tx) == leading_txid), None)
    if leading is None:
        raise MissingLeadingTx(f"Leading-Tx {leading_txid[::-1].hex()} nicht im Strom")
    first = next((u for u in iter_units([leading], payload_filter) if u.is_first), None)
    if first is None:
        raise MissingLeadingTx(f"Leading-Tx {leading_txid[::-1].hex()} trägt keine erste Unit")
    cursor = open_cursor(first, key)
    return drain(cursor, iter_units(transactions, payload_filter))
