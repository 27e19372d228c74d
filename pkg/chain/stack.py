"""
Minimale Stack-Maschine für Push/Drop-Skripte.

Reicht aus, um den Redeem-Pfad eines Staged-Writes nachzuspielen; alles
andere (Signaturen, Hashes, Flusskontrolle) wird abgelehnt.
"""

from __future__ import annotations

from chain.errors import NotAStagedWrite
from chain.script import OP_1NEGATE, OP_2DROP, OP_DROP, Script, decode_small_int

TRUE = b"\x01"


def execute(script: Script, stack: list[bytes] | None = None) -> list[bytes]:
    stack = list(stack or [])
    for op, data in script.ops:
        if data is not None:
            stack.append(data)
            continue
        small = decode_small_int(op)
        if small is not None:
            stack.append(bytes([small]))
        elif op == OP_1NEGATE:
            stack.append(b"\x81")
        elif op == OP_DROP:
            if not stack:
                raise NotAStagedWrite("OP_DROP auf leerem Stack")
            stack.pop()
        elif op == OP_2DROP:
            if len(stack) < 2:
                raise NotAStagedWrite("OP_2DROP mit weniger als zwei Elementen")
            del stack[-2:]
        else:
            raise NotAStagedWrite(f"Opcode 0x{op:02x} wird nicht unterstützt")
    return stack


def run_p2sh_redeem(script_sig: Script) -> list[bytes]:
    """Führt scriptSig aus, nimmt das oberste Element als redeemScript und führt es aus."""
    stack = execute(script_sig)
    if not stack:
        raise NotAStagedWrite("scriptSig hinterlässt keinen redeemScript")
    redeem = Script(stack.pop())
    return execute(redeem, stack)
