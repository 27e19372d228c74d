"""
Geschlossenes Kostenmodell für die Schreibmethoden.

Transaktionsgrößen werden nicht von Hand hergeleitet, sondern aus den
Vorlagen der Builder in chain.embedding gemessen. Gezählt werden nur die
Writing-Transaktionen; Staging-Bytes stehen separat im Report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence

import pandas as pd

from chain.embedding import MULTISIG_CAPACITY, STAGED_CAPACITY, op_return_write_size, staged_writing_size
from chain.script import MAX_OP_RETURN_DATA, multisig_script, p2pkh_script, p2sh_script
from chain.signing import DUMMY_SIGNATURE, p2pkh_script_sig, p2sh_multisig_script_sig
from chain.txmodel import OutPoint, Transaction, TxInput, TxOutput, fee_for, serialize
from tithonus.chaining import FIRST_HEADER, NEXT_HEADER

FEE_TABLE_RATES = (1, 4, 9, 16)

# Größe einer In-to-out Multisig-Transaktion in der Gebührentabelle
MULTISIG_TX_BYTES = 395
IN_TO_OUT_TXS = 4


class CostMethod(str, Enum):
    STAGED = "staged"
    CATENA_OPRETURN = "catena_opreturn"
    MULTISIG = "multisig"


@dataclass(frozen=True)
class CostReport:
    method: CostMethod
    content_bytes: int
    tx_count: int
    total_bytes: int
    total_fee: int
    fee_rate: float
    staging_bytes: int = 0

    @property
    def efficiency(self) -> float:
        return self.content_bytes / self.total_bytes

    def to_row(self) -> dict:
        return {
            "method": self.method.value,
            "content_bytes": self.content_bytes,
            "tx_count": self.tx_count,
            "total_bytes": self.total_bytes,
            "staging_bytes": self.staging_bytes,
            "total_fee": self.total_fee,
            "fee_rate": self.fee_rate,
            "efficiency": round(self.efficiency, 4),
        }


@dataclass(frozen=True)
class FeeProfile:
    """Zeile der Gebührentabelle: entweder Inhalt + Methode oder feste Byte-Anzahl."""

    name: str
    content_bytes: int = 0
    method: CostMethod = CostMethod.STAGED
    fixed_bytes: Optional[int] = None


DEFAULT_PROFILES = (
    FeeProfile("Out-to-in (14 KB Datei)", 13_804),
    FeeProfile("Out-to-in (Nachrichtenartikel)", 1_200 * 6),
    FeeProfile("In-to-out (Reg)", fixed_bytes=IN_TO_OUT_TXS * MULTISIG_TX_BYTES),
    FeeProfile("In-to-out (Req)", fixed_bytes=IN_TO_OUT_TXS * MULTISIG_TX_BYTES),
)


# ---------- gemessene Vorlagen ----------


@lru_cache(maxsize=1)
def staging_tx_size() -> int:
    """Staging-Tx: ein p2pkh-Input, p2sh- und p2pkh-Output."""
    tx = Transaction(
        (TxInput(OutPoint(bytes(32), 0), p2pkh_script_sig(DUMMY_SIGNATURE, bytes(33))),),
        (TxOutput(0, p2sh_script(bytes(20))), TxOutput(0, p2pkh_script(bytes(20)))),
    )
    return len(serialize(tx))


@lru_cache(maxsize=1)
def multisig_writing_size() -> int:
    """Writing-Tx mit einem 1-of-3 p2sh-Input und einem p2pkh-Output."""
    redeem = multisig_script(1, [bytes(33)] * 3)
    tx = Transaction(
        (TxInput(OutPoint(bytes(32), 0), p2sh_multisig_script_sig(DUMMY_SIGNATURE, redeem)),),
        (TxOutput(0, p2pkh_script(bytes(20))),),
    )
    return len(serialize(tx))


def unit_payload_sizes(content_bytes: int, carrier_capacity: int) -> list[int]:
    """Längen der kodierten Units (Header + Body) wie tithonus.chaining.fragment sie erzeugt."""
    first = min(content_bytes, carrier_capacity - FIRST_HEADER)
    sizes = [FIRST_HEADER + first]
    rest = content_bytes - first
    step = carrier_capacity - NEXT_HEADER
    while rest > 0:
        body = min(rest, step)
        sizes.append(NEXT_HEADER + body)
        rest -= body
    return sizes


def writing_sizes(content_bytes: int, method: CostMethod | str) -> list[int]:
    method = CostMethod(method)
    if method is CostMethod.STAGED:
        return [staged_writing_size(n) for n in unit_payload_sizes(content_bytes, STAGED_CAPACITY)]
    if method is CostMethod.MULTISIG:
        count = len(unit_payload_sizes(content_bytes, MULTISIG_CAPACITY))
        return [multisig_writing_size()] * count
    full, rest = divmod(content_bytes, MAX_OP_RETURN_DATA)
    sizes = [op_return_write_size(MAX_OP_RETURN_DATA)] * full
    if rest:
        sizes.append(op_return_write_size(rest))
    return sizes


# ---------- Schätzung ----------


def estimate(content_bytes: int, method: CostMethod | str, fee_rate: float) -> CostReport:
    if content_bytes < 1:
        raise ValueError(f"content_bytes muss >= 1 sein, ist {content_bytes}")
    if fee_rate < 1:
        raise ValueError(f"fee_rate muss >= 1 sein, ist {fee_rate}")
    method = CostMethod(method)
    sizes = writing_sizes(content_bytes, method)
    staging = 0 if method is CostMethod.CATENA_OPRETURN else staging_tx_size() * len(sizes)
    return CostReport(
        method=method,
        content_bytes=content_bytes,
        tx_count=len(sizes),
        total_bytes=sum(sizes),
        total_fee=sum(fee_for(size, fee_rate) for size in sizes),
        fee_rate=fee_rate,
        staging_bytes=staging,
    )


def profile_fee(profile: FeeProfile, fee_rate: float) -> int:
    if profile.fixed_bytes is not None:
        return math.ceil(profile.fixed_bytes * fee_rate)
    return estimate(profile.content_bytes, profile.method, fee_rate).total_fee


def fee_table(
    profiles: Sequence[FeeProfile] = DEFAULT_PROFILES,
    rates: Sequence[float] = FEE_TABLE_RATES,
) -> pd.DataFrame:
    """Eine Zeile pro Profil, eine Spalte pro Gebührenrate (Satoshi)."""
    rows = []
    for profile in profiles:
        row = {"profile": profile.name}
        for rate in rates:
            row[f"{rate:g} sat/B"] = profile_fee(profile, rate)
        rows.append(row)
    return pd.DataFrame(rows, columns=["profile"] + [f"{r:g} sat/B" for r in rates])


def cost_ratio(cheap: CostReport, expensive: CostReport) -> float:
    return expensive.total_fee / cheap.total_fee
