"""
Transaktionsmodell im Legacy-Format (ohne SegWit).

Alle Typen sind unveränderlich; Änderungen erzeugen neue Objekte über
dataclasses.replace.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Callable, Mapping, Optional, Tuple, Union

from chain.config import FeePolicy
from chain.errors import DeserializationError, NegativeFee, UnknownInput, WrongPayloadLength
from chain.hashing import sha256d
from chain.script import (
    MAX_PUSH_SIZE,
    Script,
    op_return_script,
    p2pk_script,
    p2pkh_script,
    p2sh_script,
)

MAX_P2SH_SCRIPT_SIG = 1_650
SEQUENCE_FINAL = 0xFFFFFFFF
NULL_TXID = bytes(32)


# ---------- Varint ----------


def encode_varint(n: int) -> bytes:
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + struct.pack("<I", n)
    return b"\xff" + struct.pack("<Q", n)


def varint_size(n: int) -> int:
    return len(encode_varint(n))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise DeserializationError(f"Erwartet {n} Bytes, nur {len(data)} vorhanden")
    return data


def read_varint(stream: BinaryIO) -> int:
    prefix = _read_exact(stream, 1)[0]
    if prefix < 0xFD:
        return prefix
    width = {0xFD: 2, 0xFE: 4, 0xFF: 8}[prefix]
    return int.from_bytes(_read_exact(stream, width), "little")


# ---------- Typen ----------


@dataclass(frozen=True)
class OutPoint:
    txid: bytes  # interne Byte-Reihenfolge wie serialisiert
    vout: int

    def __post_init__(self) -> None:
        if len(self.txid) != 32:
            raise ValueError(f"txid muss 32 Bytes haben, hat {len(self.txid)}")
        if not 0 <= self.vout <= 0xFFFFFFFF:
            raise ValueError(f"vout außerhalb uint32: {self.vout}")

    def is_null(self) -> bool:
        return self.txid == NULL_TXID and self.vout == 0xFFFFFFFF

    def __str__(self) -> str:
        return f"{self.txid[::-1].hex()}:{self.vout}"


@dataclass(frozen=True)
class TxInput:
    prevout: OutPoint
    script_sig: Script = field(default_factory=Script)
    sequence: int = SEQUENCE_FINAL


@dataclass(frozen=True)
class TxOutput:
    value: int
    script_pubkey: Script

    def __post_init__(self) -> None:
        if not 0 <= self.value < 2**64:
            raise ValueError(f"Output-Wert außerhalb uint64: {self.value}")

    @property
    def kind(self) -> str:
        return self.script_pubkey.script_type()


@dataclass(frozen=True)
class Transaction:
    inputs: Tuple[TxInput, ...]
    outputs: Tuple[TxOutput, ...]
    version: int = 1
    locktime: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def with_script_sig(self, index: int, script: Script) -> "Transaction":
        inputs = list(self.inputs)
        inputs[index] = replace(inputs[index], script_sig=script)
        return replace(self, inputs=tuple(inputs))

    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].prevout.is_null()

    @property
    def size(self) -> int:
        return len(serialize(self))


Resolver = Union[Callable[[OutPoint], Optional[TxOutput]], Mapping[OutPoint, TxOutput]]


# ---------- Serialisierung ----------


def serialize(tx: Transaction) -> bytes:
    out = bytearray(struct.pack("<I", tx.version))
    out += encode_varint(len(tx.inputs))
    for txin in tx.inputs:
        out += txin.prevout.txid
        out += struct.pack("<I", txin.prevout.vout)
        out += encode_varint(len(txin.script_sig.raw))
        out += txin.script_sig.raw
        out += struct.pack("<I", txin.sequence)
    out += encode_varint(len(tx.outputs))
    for txout in tx.outputs:
        out += struct.pack("<Q", txout.value)
        out += encode_varint(len(txout.script_pubkey.raw))
        out += txout.script_pubkey.raw
    out += struct.pack("<I", tx.locktime)
    return bytes(out)


def read_transaction(stream: BinaryIO) -> Transaction:
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    inputs = []
    for _ in range(read_varint(stream)):
        prev_txid = _read_exact(stream, 32)
        (vout,) = struct.unpack("<I", _read_exact(stream, 4))
        script = Script(_read_exact(stream, read_varint(stream)))
        (sequence,) = struct.unpack("<I", _read_exact(stream, 4))
        inputs.append(TxInput(OutPoint(prev_txid, vout), script, sequence))
    outputs = []
    for _ in range(read_varint(stream)):
        (value,) = struct.unpack("<Q", _read_exact(stream, 8))
        outputs.append(TxOutput(value, Script(_read_exact(stream, read_varint(stream)))))
    (locktime,) = struct.unpack("<I", _read_exact(stream, 4))
    return Transaction(tuple(inputs), tuple(outputs), version, locktime)


def deserialize(data: bytes) -> Transaction:
    stream = io.BytesIO(data)
    tx = read_transaction(stream)
    if stream.read(1):
        raise DeserializationError("Überzählige Bytes nach locktime")
    return tx


def to_hex(tx: Transaction) -> str:
    return serialize(tx).hex()


def from_hex(text: str) -> Transaction:
    try:
        return deserialize(bytes.fromhex(text.strip()))
    except ValueError as exc:
        raise DeserializationError(f"Kein gültiges Hex: {exc}") from exc


def txid(tx: Transaction) -> bytes:
    """Double-SHA-256 der Serialisierung in interner Byte-Reihenfolge."""
    return sha256d(serialize(tx))


def txid_hex(tx: Transaction) -> str:
    """Anzeigeform: byte-reversed Hex wie in Block-Explorern."""
    return txid(tx)[::-1].hex()


def display_to_txid(text: str) -> bytes:
    raw = bytes.fromhex(text)
    if len(raw) != 32:
        raise ValueError(f"txid muss 32 Bytes haben: {text}")
    return raw[::-1]


# ---------- Outputs und Gebühren ----------


def build_output(kind: str, payload: bytes, value: int) -> TxOutput:
    builders = {
        "p2pkh": p2pkh_script,
        "p2sh": p2sh_script,
        "op_return": op_return_script,
        "p2pk": p2pk_script,
    }
    if kind not in builders:
        raise WrongPayloadLength(f"Unbekannter Output-Typ: {kind}")
    return TxOutput(value, builders[kind](payload))


def resolve(resolver: Resolver, outpoint: OutPoint) -> TxOutput:
    if isinstance(resolver, Mapping):
        found = resolver.get(outpoint)
    else:
        found = resolver(outpoint)
    if found is None:
        raise UnknownInput(f"Input {outpoint} nicht auflösbar")
    return found


def compute_fee(tx: Transaction, resolver: Resolver) -> int:
    total_in = sum(resolve(resolver, txin.prevout).value for txin in tx.inputs)
    total_out = sum(o.value for o in tx.outputs)
    fee = total_in - total_out
    if fee < 0:
        raise NegativeFee(f"Outputs ({total_out}) übersteigen Inputs ({total_in})")
    return fee


def fee_for(size: int, fee_rate: float) -> int:
    """Gebühr in Satoshi für size Bytes, aufgerundet."""
    return math.ceil(round(size * fee_rate, 9))


@dataclass(frozen=True)
class ValidationReport:
    rules: dict
    size: int
    fee: Optional[int]

    @property
    def passed(self) -> bool:
        return all(self.rules.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, ok in self.rules.items() if not ok]

    @property
    def fee_rate(self) -> float:
        return (self.fee or 0) / self.size


def validate_standard(tx: Transaction, resolver: Resolver, policy: FeePolicy) -> ValidationReport:
    """
    Prüft die Relay-Regeln:
      - fee_rate:       fee / size >= min_fee_rate
      - dust:           jeder Output außer op_return > dust_multiplier × fee
      - push_size:      kein Push größer als 520 Bytes
      - p2sh_script_sig: scriptSig eines p2sh-Inputs höchstens 1.650 Bytes
      - standard_outputs: alle Outputs folgen einem Standard-Template
    """
    size = len(serialize(tx))
    fee: Optional[int]
    prevouts: list[Optional[TxOutput]] = []
    try:
        fee = compute_fee(tx, resolver)
        prevouts = [resolve(resolver, i.prevout) for i in tx.inputs]
    except (UnknownInput, NegativeFee):
        fee = None
        prevouts = [None] * len(tx.inputs)

    rules = {}
    rules["fee_rate"] = fee is not None and fee >= policy.min_fee_rate * size - 1e-9
    rules["dust"] = fee is not None and all(
        o.value > policy.dust_multiplier * fee for o in tx.outputs if o.kind != "op_return"
    )
    scripts = [i.script_sig for i in tx.inputs] + [o.script_pubkey for o in tx.outputs]
    rules["push_size"] = all(s.max_push() <= MAX_PUSH_SIZE for s in scripts)
    rules["p2sh_script_sig"] = all(
        prev is None or prev.kind != "p2sh" or len(txin.script_sig) <= MAX_P2SH_SCRIPT_SIG
        for txin, prev in zip(tx.inputs, prevouts)
    )
    rules["standard_outputs"] = (
        len(tx.inputs) >= 1
        and len(tx.outputs) >= 1
        and all(o.kind != "nonstandard" for o in tx.outputs)
    )
    return ValidationReport(rules=rules, size=size, fee=fee)
