"""
Bitcoin-Skripte: Opcodes, minimale Push-Kodierung, Parser und Output-Templates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple

from chain.errors import DeserializationError, WrongPayloadLength

OP_0 = 0x00
OP_PUSHDATA1 = 0x4C
OP_PUSHDATA2 = 0x4D
OP_PUSHDATA4 = 0x4E
OP_1NEGATE = 0x4F
OP_1 = 0x51
OP_TRUE = OP_1
OP_2 = 0x52
OP_3 = 0x53
OP_16 = 0x60
OP_RETURN = 0x6A
OP_2DROP = 0x6D
OP_DROP = 0x75
OP_DUP = 0x76
OP_EQUAL = 0x87
OP_EQUALVERIFY = 0x88
OP_HASH160 = 0xA9
OP_CHECKSIG = 0xAC
OP_CHECKMULTISIG = 0xAE

MAX_PUSH_SIZE = 520
MAX_SCRIPT_SIZE = 10_000
MAX_OP_RETURN_DATA = 80

# (opcode, gepushte Daten oder None)
ScriptOp = Tuple[int, Optional[bytes]]


def push_opcode(data: bytes) -> bytes:
    """Minimaler Push-Header für data (direkter Push, PUSHDATA1/2/4)."""
    n = len(data)
    if n < OP_PUSHDATA1:
        return bytes([n])
    if n <= 0xFF:
        return bytes([OP_PUSHDATA1, n])
    if n <= 0xFFFF:
        return bytes([OP_PUSHDATA2]) + struct.pack("<H", n)
    return bytes([OP_PUSHDATA4]) + struct.pack("<I", n)


def encode_push(data: bytes) -> bytes:
    return push_opcode(data) + data


def small_int_opcode(n: int) -> int:
    if not 1 <= n <= 16:
        raise ValueError(f"OP_N nur für 1..16 definiert, nicht für {n}")
    return OP_1 + n - 1


def decode_small_int(opcode: int) -> Optional[int]:
    if OP_1 <= opcode <= OP_16:
        return opcode - OP_1 + 1
    return None


def parse_ops(raw: bytes) -> list[ScriptOp]:
    ops: list[ScriptOp] = []
    i = 0
    n = len(raw)
    while i < n:
        op = raw[i]
        i += 1
        if op < OP_PUSHDATA1:
            size = op
        elif op == OP_PUSHDATA1:
            if i + 1 > n:
                raise DeserializationError("PUSHDATA1 ohne Längenbyte")
            size = raw[i]
            i += 1
        elif op == OP_PUSHDATA2:
            if i + 2 > n:
                raise DeserializationError("PUSHDATA2 ohne Längenfeld")
            (size,) = struct.unpack_from("<H", raw, i)
            i += 2
        elif op == OP_PUSHDATA4:
            if i + 4 > n:
                raise DeserializationError("PUSHDATA4 ohne Längenfeld")
            (size,) = struct.unpack_from("<I", raw, i)
            i += 4
        else:
            ops.append((op, None))
            continue
        if i + size > n:
            raise DeserializationError(
                f"Push von {size} Bytes an Offset {i} überschreitet Skriptlänge {n}"
            )
        ops.append((op, raw[i : i + size]))
        i += size
    return ops


def emit_ops(ops: Iterable[ScriptOp]) -> bytes:
    """Serialisiert (opcode, data) Paare; der Push-Opcode wird übernommen, nicht neu gewählt."""
    out = bytearray()
    for op, data in ops:
        if data is None:
            out.append(op)
            continue
        out.append(op)
        if op == OP_PUSHDATA1:
            out.append(len(data))
        elif op == OP_PUSHDATA2:
            out += struct.pack("<H", len(data))
        elif op == OP_PUSHDATA4:
            out += struct.pack("<I", len(data))
        out += data
    return bytes(out)


@dataclass(frozen=True)
class Script:
    raw: bytes = b""

    @classmethod
    def from_ops(cls, items: Sequence[int | bytes]) -> "Script":
        """
        Baut ein Skript aus Opcodes (int) und Daten (bytes, minimal gepusht).
        Prüft Push-Grenze und Gesamtlänge.
        """
        out = bytearray()
        for item in items:
            if isinstance(item, int):
                out.append(item)
                continue
            if len(item) > MAX_PUSH_SIZE:
                raise ValueError(f"Push von {len(item)} Bytes überschreitet {MAX_PUSH_SIZE}")
            out += encode_push(item)
        if len(out) > MAX_SCRIPT_SIZE:
            raise ValueError(f"Skriptlänge {len(out)} überschreitet {MAX_SCRIPT_SIZE}")
        return cls(bytes(out))

    @cached_property
    def ops(self) -> list[ScriptOp]:
        return parse_ops(self.raw)

    def pushes(self) -> list[bytes]:
        """Alle gepushten Daten; DeserializationError falls ein Nicht-Push-Opcode auftaucht."""
        out = []
        for op, data in self.ops:
            if data is None:
                raise DeserializationError(f"Opcode 0x{op:02x} ist kein Push")
            out.append(data)
        return out

    def max_push(self) -> int:
        try:
            return max((len(d) for _, d in self.ops if d is not None), default=0)
        except DeserializationError:
            return len(self.raw)

    def __len__(self) -> int:
        return len(self.raw)

    def hex(self) -> str:
        return self.raw.hex()

    # ---------- Templates ----------

    def script_type(self) -> str:
        """p2pkh, p2sh, op_return, p2pk, multisig oder nonstandard."""
        r = self.raw
        if len(r) == 25 and r[:3] == bytes([OP_DUP, OP_HASH160, 20]) and r[23:] == bytes(
            [OP_EQUALVERIFY, OP_CHECKSIG]
        ):
            return "p2pkh"
        if len(r) == 23 and r[:2] == bytes([OP_HASH160, 20]) and r[22] == OP_EQUAL:
            return "p2sh"
        try:
            ops = self.ops
        except DeserializationError:
            return "nonstandard"
        if ops and ops[0] == (OP_RETURN, None):
            rest = ops[1:]
            if not rest or (
                len(rest) == 1
                and rest[0][1] is not None
                and len(rest[0][1]) <= MAX_OP_RETURN_DATA
            ):
                return "op_return"
            return "nonstandard"
        if len(ops) == 2 and ops[1] == (OP_CHECKSIG, None) and ops[0][1] is not None:
            if len(ops[0][1]) in (33, 65):
                return "p2pk"
        if _is_multisig(ops):
            return "multisig"
        return "nonstandard"

    def hash20(self) -> Optional[bytes]:
        kind = self.script_type()
        if kind == "p2pkh":
            return self.raw[3:23]
        if kind == "p2sh":
            return self.raw[2:22]
        return None


def _is_multisig(ops: list[ScriptOp]) -> bool:
    if len(ops) < 4 or ops[-1] != (OP_CHECKMULTISIG, None):
        return False
    m = decode_small_int(ops[0][0]) if ops[0][1] is None else None
    n = decode_small_int(ops[-2][0]) if ops[-2][1] is None else None
    keys = ops[1:-2]
    if m is None or n is None or n != len(keys) or not 1 <= m <= n <= 3:
        return False
    return all(d is not None and len(d) in (33, 65) for _, d in keys)


def p2pkh_script(hash20: bytes) -> Script:
    if len(hash20) != 20:
        raise WrongPayloadLength(f"p2pkh braucht 20 Bytes, nicht {len(hash20)}")
    return Script(bytes([OP_DUP, OP_HASH160, 20]) + hash20 + bytes([OP_EQUALVERIFY, OP_CHECKSIG]))


def p2sh_script(hash20: bytes) -> Script:
    if len(hash20) != 20:
        raise WrongPayloadLength(f"p2sh braucht 20 Bytes, nicht {len(hash20)}")
    return Script(bytes([OP_HASH160, 20]) + hash20 + bytes([OP_EQUAL]))


def op_return_script(data: bytes) -> Script:
    if len(data) > MAX_OP_RETURN_DATA:
        raise WrongPayloadLength(
            f"OP_RETURN trägt höchstens {MAX_OP_RETURN_DATA} Bytes, nicht {len(data)}"
        )
    return Script(bytes([OP_RETURN]) + encode_push(data))


def p2pk_script(pubkey: bytes) -> Script:
    if len(pubkey) not in (33, 65):
        raise WrongPayloadLength(f"p2pk braucht 33 oder 65 Bytes, nicht {len(pubkey)}")
    return Script(encode_push(pubkey) + bytes([OP_CHECKSIG]))


def multisig_script(m: int, keys: Sequence[bytes]) -> Script:
    return Script.from_ops(
        [small_int_opcode(m), *keys, small_int_opcode(len(keys)), OP_CHECKMULTISIG]
    )
