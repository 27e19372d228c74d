"""
Unit-Schicht: schreibt Nutzdaten in gültig aussehende Transaktionen.

Drei Konstrukte:
  - Staged Writes: Staging-Tx committet auf einen redeemScript, die Writing-Tx
    überlädt den scriptSig ihres p2sh-Inputs mit bis zu 1.635 Bytes.
  - 1-of-3 Multisig: zwei der drei Schlüssel-Slots tragen je 28 Bytes,
    getarnt als komprimierte secp256k1-Schlüssel.
  - OP_RETURN: 80 Bytes in einem unspendable Output (Vergleichsmethode).
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from chain.config import FeePolicy
from chain.errors import (
    DeserializationError,
    ForbiddenCiphertext,
    InsufficientFunds,
    MalformedKey,
    NotAStagedWrite,
    NotMultisig,
    PayloadTooLarge,
)
from chain.hashing import hash160
from chain.script import (
    OP_2DROP,
    OP_CHECKMULTISIG,
    OP_DROP,
    OP_TRUE,
    Script,
    decode_small_int,
    encode_push,
    multisig_script,
    op_return_script,
    p2pkh_script,
    p2sh_script,
)
from chain.secp256k1 import P, FieldElement, PrivateKey, curve_rhs
from chain.signing import (
    DUMMY_SIGNATURE,
    p2pkh_script_sig,
    p2sh_multisig_script_sig,
    placeholder_p2pkh,
    sign_input,
    sign_p2pkh,
)
from chain.stack import TRUE, run_p2sh_redeem
from chain.txmodel import OutPoint, Transaction, TxInput, TxOutput, fee_for, serialize, txid
from chain.wallet import Funding

logger = logging.getLogger(__name__)

STAGED_CHUNK = 520
STAGED_CHUNKS = 3
STAGED_TAIL = 75
STAGED_CAPACITY = STAGED_CHUNK * STAGED_CHUNKS + STAGED_TAIL  # 1.635

SLOT_DATA = 28
MULTISIG_CAPACITY = 2 * SLOT_DATA
FORBIDDEN_DATA = b"\xff" * SLOT_DATA
R_LIMIT = 0xFFFFFC2F
MIN_OUTPUT_VALUE = 546


class WritingMethod(str, Enum):
    STAGED = "staged"
    MULTISIG = "multisig"
    OP_RETURN = "op_return"
    P2PKH_OVERWRITE = "p2pkh_overwrite"
    P2SH_OVERWRITE = "p2sh_overwrite"
    P2PK_COMPRESSED = "p2pk_compressed"
    P2PK_UNCOMPRESSED = "p2pk_uncompressed"


_CAPACITY = {
    WritingMethod.STAGED: STAGED_CAPACITY,
    WritingMethod.MULTISIG: MULTISIG_CAPACITY,
    WritingMethod.OP_RETURN: 80,
    WritingMethod.P2PKH_OVERWRITE: 20,
    WritingMethod.P2SH_OVERWRITE: 20,
    WritingMethod.P2PK_COMPRESSED: 33,
    WritingMethod.P2PK_UNCOMPRESSED: 65,
}


def capacity(method: WritingMethod | str) -> int:
    return _CAPACITY[WritingMethod(method)]


# ---------- Getarnte Schlüssel ----------


@dataclass(frozen=True)
class CamouflagedKey:
    prefix: int
    data: bytes
    randomizer: bytes
    trials: int = field(default=1, compare=False)

    def __post_init__(self) -> None:
        if self.prefix not in (2, 3):
            raise MalformedKey(f"Präfix 0x{self.prefix:02x} nicht erlaubt")
        if len(self.data) != SLOT_DATA or len(self.randomizer) != 4:
            raise MalformedKey("Getarnter Schlüssel braucht 28 Datenbytes und 4 Bytes R")
        if self.data == FORBIDDEN_DATA:
            raise ForbiddenCiphertext("D = 2^224-1 ist nicht einbettbar")
        if int.from_bytes(self.randomizer, "big") >= R_LIMIT:
            raise MalformedKey("R muss kleiner als 0xFFFFFC2F sein")

    @property
    def x(self) -> int:
        return int.from_bytes(self.data + self.randomizer, "big")

    def to_bytes(self) -> bytes:
        return bytes([self.prefix]) + self.data + self.randomizer


def embed_pubkey(data: bytes, rng: random.Random, sequential: bool = False) -> CamouflagedKey:
    """
    Bettet 28 Bytes als x-Koordinate D‖R ein; R wird gezogen, bis x³+7 ein
    quadratischer Rest ist (im Mittel zwei Versuche).

    sequential=True probiert R = 0, 1, 2, … (Testmodus).
    """
    if len(data) != SLOT_DATA:
        raise MalformedKey(f"Einbettung braucht {SLOT_DATA} Bytes, nicht {len(data)}")
    if data == FORBIDDEN_DATA:
        raise ForbiddenCiphertext("D = 2^224-1 ist nicht einbettbar")
    prefix = rng.choice((2, 3))
    trials = 0
    r = -1
    while True:
        trials += 1
        r = r + 1 if sequential else rng.randrange(R_LIMIT)
        x = int.from_bytes(data, "big") << 32 | r
        if x < P and curve_rhs(x).is_square():
            return CamouflagedKey(prefix, data, r.to_bytes(4, "big"), trials)


def extract_pubkey(key: bytes) -> bytes:
    if len(key) != 33 or key[0] not in (2, 3):
        raise MalformedKey(f"Kein komprimierter Schlüssel ({len(key)} Bytes, Präfix {key[:1].hex()})")
    return key[1 : 1 + SLOT_DATA]


def lifts_to_curve(key: bytes) -> bool:
    x = FieldElement(int.from_bytes(key[1:], "big"))
    return curve_rhs(x).sqrt() is not None


# ---------- Staged Writes ----------


@dataclass(frozen=True)
class MultisigSlots:
    real_key: bytes
    slot_a: "CamouflagedKey | bytes"
    slot_b: "CamouflagedKey | bytes"
    real_position: int = 0

    def keys(self) -> list[bytes]:
        data = [_slot_bytes(self.slot_a), _slot_bytes(self.slot_b)]
        data.insert(self.real_position, self.real_key)
        return data


def _slot_bytes(slot: "CamouflagedKey | bytes") -> bytes:
    return slot.to_bytes() if isinstance(slot, CamouflagedKey) else slot


@dataclass(frozen=True)
class StagedPair:
    staging: Transaction
    writing: Transaction
    redeem_script: Script
    slots: Optional[MultisigSlots] = None

    @property
    def staging_txid(self) -> bytes:
        return txid(self.staging)

    @property
    def writing_txid(self) -> bytes:
        return txid(self.writing)

    def output_funding(self, index: int, key: PrivateKey) -> Funding:
        """Output index der Staging-Tx als Funding für die nächste Transaktion."""
        return Funding(OutPoint(self.staging_txid, index), self.staging.outputs[index].value, key)


def staged_chunks(payload: bytes) -> tuple[list[bytes], Optional[bytes]]:
    """Füllt drei 520-Byte Chunks von links, der Rest (≤75) geht in den redeemScript."""
    if len(payload) > STAGED_CAPACITY:
        raise PayloadTooLarge(f"Payload {len(payload)} Bytes > {STAGED_CAPACITY}")
    outer = [
        payload[i * STAGED_CHUNK : (i + 1) * STAGED_CHUNK]
        for i in range(STAGED_CHUNKS)
        if len(payload) > i * STAGED_CHUNK
    ]
    tail_start = STAGED_CHUNK * STAGED_CHUNKS
    inner = payload[tail_start:] if len(payload) > tail_start else None
    return outer, inner


def staged_redeem_script(inner: Optional[bytes], items: int) -> Script:
    ops: list[int | bytes] = [inner] if inner is not None else []
    ops += [OP_2DROP] * (items // 2) + [OP_DROP] * (items % 2) + [OP_TRUE]
    return Script.from_ops(ops)


def staged_script_sig(payload: bytes) -> tuple[Script, Script]:
    outer, inner = staged_chunks(payload)
    redeem = staged_redeem_script(inner, len(outer) + (inner is not None))
    raw = b"".join(encode_push(chunk) for chunk in outer) + encode_push(redeem.raw)
    return Script(raw), redeem


def _writing_template(prevout: OutPoint, script_sig: Script, out_script: Script, value: int) -> Transaction:
    return Transaction((TxInput(prevout, script_sig),), (TxOutput(value, out_script),))


def staged_writing_size(payload_len: int) -> int:
    """Exakte Größe einer Writing-Tx (ein p2sh-Input, ein p2pkh-Output)."""
    script_sig, _ = staged_script_sig(bytes(payload_len))
    tx = _writing_template(OutPoint(bytes(32), 0), script_sig, p2pkh_script(bytes(20)), 0)
    return len(serialize(tx))


def spend_floor(fee: int, policy: FeePolicy) -> int:
    """Kleinster Output-Wert, der die Dust-Regel bei Gebühr fee erfüllt."""
    return max(MIN_OUTPUT_VALUE, int(policy.dust_multiplier * fee) + 1)


def staging_fee(funding: Funding, fee_rate: float) -> int:
    """Gebühr einer Staging-Tx (ein p2pkh-Input, zwei Outputs) mit Platzhalter-Signatur."""
    draft = Transaction(
        (TxInput(funding.outpoint),),
        (TxOutput(0, p2sh_script(bytes(20))), TxOutput(0, p2pkh_script(bytes(20)))),
    )
    return fee_for(len(serialize(placeholder_p2pkh(draft, 0, funding.key))), fee_rate)


def _finish_staging(
    funding: Funding,
    outputs: list[TxOutput],
    remainder_index: int,
    fixed_total: int,
    policy: FeePolicy,
    fee_rate: float,
) -> Transaction:
    """Setzt den Restbetrag in outputs[remainder_index] und signiert den Funding-Input."""
    draft = Transaction((TxInput(funding.outpoint),), tuple(outputs))
    draft = placeholder_p2pkh(draft, 0, funding.key)
    fee = fee_for(len(serialize(draft)), fee_rate)
    remainder = funding.value - fixed_total - fee
    floor = spend_floor(fee, policy)
    if remainder < floor:
        raise InsufficientFunds(
            f"Funding {funding.value} sat reicht nicht: benötigt {fixed_total + fee + floor} sat"
        )
    outputs = list(outputs)
    outputs[remainder_index] = TxOutput(remainder, outputs[remainder_index].script_pubkey)
    for i, out in enumerate(outputs):
        if i != remainder_index and out.kind != "op_return" and out.value <= policy.dust_multiplier * fee:
            raise InsufficientFunds(f"Output {i} ({out.value} sat) verletzt die Dust-Regel")
    unsigned = Transaction((TxInput(funding.outpoint),), tuple(outputs))
    return sign_p2pkh(unsigned, 0, funding.key)


def build_staged_pair(
    payload: bytes,
    funding: Funding,
    policy: FeePolicy,
    *,
    fee_rate: Optional[float] = None,
    writing_script: Optional[Script] = None,
    change_script: Optional[Script] = None,
) -> StagedPair:
    """
    Staging-Tx: Outputs (p2sh auf den redeemScript, p2pkh-Wechselgeld).
    Writing-Tx: ein p2sh-Input mit Payload im scriptSig, ein p2pkh-Output.
    """
    fee_rate = policy.min_fee_rate if fee_rate is None else fee_rate
    script_sig, redeem = staged_script_sig(payload)
    if run_p2sh_redeem(script_sig) != [TRUE]:
        raise NotAStagedWrite("Redeem-Pfad endet nicht mit genau TRUE")

    writing_script = writing_script or funding.script_pubkey
    change_script = change_script or funding.script_pubkey
    placeholder_prevout = OutPoint(bytes(32), 0)
    w_fee = fee_for(len(serialize(_writing_template(placeholder_prevout, script_sig, writing_script, 0))), fee_rate)
    p2sh_value = max(w_fee + spend_floor(w_fee, policy), spend_floor(staging_fee(funding, fee_rate), policy))
    w_value = p2sh_value - w_fee

    staging = _finish_staging(
        funding,
        [TxOutput(p2sh_value, p2sh_script(hash160(redeem.raw))), TxOutput(0, change_script)],
        remainder_index=1,
        fixed_total=p2sh_value,
        policy=policy,
        fee_rate=fee_rate,
    )
    writing = _writing_template(OutPoint(txid(staging), 0), script_sig, writing_script, w_value)
    return StagedPair(staging, writing, redeem)


def extract_staged_payload(writing: Transaction, index: int = 0) -> bytes:
    if index >= len(writing.inputs):
        raise NotAStagedWrite("Transaktion hat keinen passenden Input")
    try:
        ops = writing.inputs[index].script_sig.ops
        if not ops or any(data is None for _, data in ops):
            raise NotAStagedWrite("scriptSig besteht nicht nur aus Pushes")
        redeem_ops = Script(ops[-1][1]).ops
    except DeserializationError as exc:
        raise NotAStagedWrite(f"scriptSig nicht parsebar: {exc}") from exc

    outer = [data for _, data in ops[:-1]]
    if not redeem_ops or redeem_ops[-1] != (OP_TRUE, None):
        raise NotAStagedWrite("redeemScript endet nicht mit OP_TRUE")
    body = redeem_ops[:-1]
    inner = None
    if body and body[0][1] is not None:
        inner = body[0][1]
        body = body[1:]
    dropped = 0
    for op, data in body:
        if (op, data) == (OP_2DROP, None):
            dropped += 2
        elif (op, data) == (OP_DROP, None):
            dropped += 1
        else:
            raise NotAStagedWrite(f"Unerwarteter Opcode 0x{op:02x} im redeemScript")
    if dropped != len(outer) + (inner is not None):
        raise NotAStagedWrite("Drops balancieren den Stack nicht")
    return b"".join(outer) + (inner or b"")


# ---------- Multisig ----------


def _split_slots(payload: bytes, rng: random.Random) -> list[CamouflagedKey]:
    if len(payload) > MULTISIG_CAPACITY:
        raise PayloadTooLarge(f"Multisig-Payload {len(payload)} Bytes > {MULTISIG_CAPACITY}")
    padded = payload + rng.randbytes(MULTISIG_CAPACITY - len(payload))
    return [embed_pubkey(padded[i : i + SLOT_DATA], rng) for i in (0, SLOT_DATA)]


def build_multisig_pair(
    slots_payload: bytes,
    real_key: PrivateKey,
    funding: Funding,
    outputs_template: Sequence[str],
    rng: random.Random,
    *,
    policy: FeePolicy,
    fee_rate: Optional[float] = None,
    slots: Optional[Sequence["CamouflagedKey | bytes"]] = None,
    real_position: Optional[int] = None,
    link_script: Optional[Script] = None,
    p2pkh_value: Optional[int] = None,
    writing_script: Optional[Script] = None,
) -> StagedPair:
    """
    Staging-Tx mit genau zwei Outputs in Template-Reihenfolge ("p2pkh","p2sh")
    oder ("p2sh","p2pkh"); Writing-Tx gibt den p2sh-Output über einen
    1-of-3 redeemScript aus, signiert mit real_key.

    slots ersetzt die Einbettung von slots_payload durch fertige 33-Byte Einträge.
    Ohne p2pkh_value erhält der p2pkh-Output den Restbetrag, sonst der p2sh-Output.
    """
    template = tuple(outputs_template)
    if template not in (("p2pkh", "p2sh"), ("p2sh", "p2pkh")):
        raise ValueError(f"Unbekanntes Output-Template: {template}")
    fee_rate = policy.min_fee_rate if fee_rate is None else fee_rate
    slot_items = list(slots) if slots is not None else _split_slots(slots_payload, rng)
    if len(slot_items) != 2:
        raise PayloadTooLarge("Genau zwei Daten-Slots pro Writing-Tx")
    position = rng.randrange(3) if real_position is None else real_position
    multisig = MultisigSlots(real_key.public_key, slot_items[0], slot_items[1], position)
    redeem = multisig_script(1, multisig.keys())

    writing_script = writing_script or funding.script_pubkey
    link_script = link_script or funding.script_pubkey
    sizing = _writing_template(
        OutPoint(bytes(32), 0), p2sh_multisig_script_sig(DUMMY_SIGNATURE, redeem), writing_script, 0
    )
    w_fee = fee_for(len(serialize(sizing)), fee_rate)
    p2sh_value = max(w_fee + spend_floor(w_fee, policy), spend_floor(staging_fee(funding, fee_rate), policy))
    p2sh_out = TxOutput(p2sh_value, p2sh_script(hash160(redeem.raw)))
    p2pkh_out = TxOutput(p2pkh_value or 0, link_script)
    p2sh_index = template.index("p2sh")
    p2pkh_index = 1 - p2sh_index
    outputs = [p2pkh_out, p2sh_out] if p2sh_index == 1 else [p2sh_out, p2pkh_out]

    if p2pkh_value is None:
        staging = _finish_staging(funding, outputs, p2pkh_index, p2sh_out.value, policy, fee_rate)
    else:
        staging = _finish_staging(funding, outputs, p2sh_index, p2pkh_value, policy, fee_rate)
        if staging.outputs[p2sh_index].value < p2sh_out.value:
            raise InsufficientFunds("p2sh-Output deckt die Writing-Tx nicht")

    p2sh_value = staging.outputs[p2sh_index].value
    unsigned = _writing_template(OutPoint(txid(staging), p2sh_index), Script(), writing_script, p2sh_value - w_fee)
    signature = sign_input(unsigned, 0, real_key, redeem)
    writing = unsigned.with_script_sig(0, p2sh_multisig_script_sig(signature, redeem))
    return StagedPair(staging, writing, redeem, multisig)


def extract_multisig_slots(writing: Transaction, strict: bool = True, index: int = 0) -> list[bytes]:
    """Schlüssel-Slots des redeemScripts in Skriptreihenfolge."""
    if index >= len(writing.inputs):
        raise NotMultisig("Transaktion hat keinen passenden Input")
    try:
        ops = writing.inputs[index].script_sig.ops
        if not ops or ops[-1][1] is None:
            raise NotMultisig("scriptSig endet nicht mit einem Push")
        redeem = Script(ops[-1][1]).ops
    except DeserializationError as exc:
        raise NotMultisig(f"scriptSig nicht parsebar: {exc}") from exc
    if len(redeem) < 4 or redeem[-1] != (OP_CHECKMULTISIG, None):
        raise NotMultisig("redeemScript endet nicht mit OP_CHECKMULTISIG")
    m = decode_small_int(redeem[0][0]) if redeem[0][1] is None else None
    n = decode_small_int(redeem[-2][0]) if redeem[-2][1] is None else None
    keys = [data for _, data in redeem[1:-2]]
    if m is None or n is None or n != len(keys) or any(k is None for k in keys):
        raise NotMultisig("Kein m-of-n CHECKMULTISIG")
    if strict and (m, n) != (1, 3):
        raise NotMultisig(f"{m}-of-{n} im strikten Modus nicht erlaubt")
    if any(len(k) not in (33, 65) for k in keys):
        raise NotMultisig("Schlüssel-Slot mit ungültiger Länge")
    return keys


# ---------- OP_RETURN ----------


def build_op_return_write(
    payload: bytes,
    funding: Funding,
    policy: FeePolicy,
    *,
    fee_rate: Optional[float] = None,
    change_script: Optional[Script] = None,
) -> Transaction:
    """Ein p2pkh-Input, ein OP_RETURN-Output mit payload, ein Wechselgeld-Output."""
    fee_rate = policy.min_fee_rate if fee_rate is None else fee_rate
    outputs = [TxOutput(0, op_return_script(payload)), TxOutput(0, change_script or funding.script_pubkey)]
    return _finish_staging(funding, outputs, 1, 0, policy, fee_rate)


def op_return_write_size(payload_len: int) -> int:
    """Größe einer OP_RETURN-Writing-Tx mit Platzhalter-Signatur (72 Bytes)."""
    tx = Transaction(
        (TxInput(OutPoint(bytes(32), 0), p2pkh_script_sig(DUMMY_SIGNATURE, bytes(33))),),
        (TxOutput(0, op_return_script(bytes(payload_len))), TxOutput(0, p2pkh_script(bytes(20)))),
    )
    return len(serialize(tx))


def extract_op_return_payload(tx: Transaction) -> Optional[bytes]:
    for output in tx.outputs:
        if output.kind == "op_return":
            ops = output.script_pubkey.ops
            return ops[1][1] if len(ops) > 1 else b""
    return None


def carrier_payloads(tx: Transaction) -> list[bytes]:
    """Alle Payloads einer Transaktion: Staged-Inputs und OP_RETURN-Outputs."""
    found = []
    for index in range(len(tx.inputs)):
        try:
            found.append(extract_staged_payload(tx, index))
        except NotAStagedWrite:
            continue
    data = extract_op_return_payload(tx)
    if data:
        found.append(data)
    return found
