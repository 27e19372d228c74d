"""
Einfache Wallet: deterministische Schlüssel pro Rolle, UTXO-Verwaltung, Coin-Selection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

from chain.errors import InsufficientFunds
from chain.hashing import hash160
from chain.script import Script, p2pkh_script
from chain.secp256k1 import PrivateKey
from chain.txmodel import OutPoint, Transaction, TxOutput, txid

logger = logging.getLogger(__name__)

GAP_LIMIT = 20


@dataclass(frozen=True)
class Funding:
    """Ein ausgebbarer p2pkh-Output samt Schlüssel."""

    outpoint: OutPoint
    value: int
    key: PrivateKey

    @property
    def script_pubkey(self) -> Script:
        return p2pkh_script(hash160(self.key.public_key))


class Wallet:
    def __init__(self, seed: object, role: str) -> None:
        self.seed = seed
        self.role = role
        self._keys: list[PrivateKey] = []
        self._by_hash: dict[bytes, PrivateKey] = {}
        self._utxos: dict[OutPoint, Funding] = {}
        self._spent: set[OutPoint] = set()
        self._used: set[bytes] = set()
        self._derive(GAP_LIMIT)

    def _derive(self, count: int) -> None:
        for _ in range(count):
            key = PrivateKey.from_seed(self.seed, self.role, len(self._keys))
            self._keys.append(key)
            self._by_hash[hash160(key.public_key)] = key

    def new_key(self) -> PrivateKey:
        """Nächster unbenutzter Schlüssel; hält immer GAP_LIMIT Reserve-Schlüssel vor."""
        for key in self._keys:
            h = hash160(key.public_key)
            if h not in self._used:
                self._used.add(h)
                if len(self._keys) - len(self._used) < GAP_LIMIT:
                    self._derive(GAP_LIMIT)
                return key
        raise AssertionError("Schlüsselvorrat erschöpft")

    def receive_script(self) -> Script:
        return p2pkh_script(hash160(self.new_key().public_key))

    def key_for(self, script: Script) -> Optional[PrivateKey]:
        h = script.hash20()
        if h is None or script.script_type() != "p2pkh":
            return None
        return self._by_hash.get(h)

    # ---------- UTXOs ----------

    @property
    def balance(self) -> int:
        return sum(f.value for f in self._utxos.values())

    def utxos(self) -> list[Funding]:
        return list(self._utxos.values())

    def add(self, outpoint: OutPoint, output: TxOutput) -> bool:
        key = self.key_for(output.script_pubkey)
        if key is None or outpoint in self._spent:
            return False
        self._used.add(hash160(key.public_key))
        if len(self._keys) - len(self._used) < GAP_LIMIT:
            self._derive(GAP_LIMIT)
        self._utxos[outpoint] = Funding(outpoint, output.value, key)
        return True

    def absorb(self, tx: Transaction) -> None:
        """Übernimmt eigene Outputs und entfernt ausgegebene Inputs."""
        for txin in tx.inputs:
            self._spent.add(txin.prevout)
            self._utxos.pop(txin.prevout, None)
        tid = txid(tx)
        for vout, output in enumerate(tx.outputs):
            self.add(OutPoint(tid, vout), output)

    def rescan(self, transactions: Iterable[Transaction]) -> None:
        for tx in transactions:
            self.absorb(tx)
        logger.debug("[Wallet] %s: %d UTXOs, Saldo %d sat", self.role, len(self._utxos), self.balance)

    def take(self, amount: int) -> Funding:
        """Größter UTXO mit Wert >= amount; wird als ausgegeben markiert."""
        candidates = [f for f in self._utxos.values() if f.value >= amount]
        if not candidates:
            raise InsufficientFunds(
                f"Wallet {self.role}: kein UTXO >= {amount} sat (Saldo {self.balance} sat)"
            )
        best = max(candidates, key=lambda f: (f.value, f.outpoint.txid, f.outpoint.vout))
        self._utxos.pop(best.outpoint)
        self._spent.add(best.outpoint)
        return best
