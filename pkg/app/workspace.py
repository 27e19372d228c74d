"""
Workspace der CLI: ein Verzeichnis mit persistierter Simnet-Kette, Server-
und Client-Zustand. Jeder Befehl lädt den Workspace, arbeitet auf einem frisch
aufgebauten SimNetwork und schreibt neue Blöcke zurück.

Dateien:
  workspace.env         SEED, NEXT_SEQ (python-dotenv)
  chain.csv             height, miner, tx (Roh-Hex, leer bei leeren Blöcken)
  certificates.txt      ein Zertifikat (hex) pro Zeile, Root zuerst
  server_records.jsonl  Record-Store des Servers
  client_records.jsonl  Record-Store des Clients
  subscriptions.csv     Abos des Servers
  corpus/               Inhalts-Korpus (falls corpus_dir nicht gesetzt)
"""

from __future__ import annotations

import logging
import random
from pathlib import Path
from typing import Optional

import pandas as pd
from dotenv import dotenv_values, set_key

from chain.errors import ConfigError
from chain.txmodel import from_hex, to_hex
from simnet.network import SimNetwork
from simnet.scenario import load_scenario, resolve_roles
from tithonus.chaining import SeqAllocator
from tithonus.config import Settings
from tithonus.corpus import CorpusResolver
from tithonus.fetch import SubscriptionHub
from tithonus.records import RecordStore
from tithonus.security import Certificate
from tithonus.service import TithonusClient, TithonusServer

logger = logging.getLogger(__name__)

CHAIN_COLUMNS = ["height", "miner", "tx"]
SUBSCRIPTION_COLUMNS = ["record_id", "uri", "mode", "active"]


class Workspace:
    def __init__(self, settings: Settings, seed: Optional[int] = None, scenario_path: Optional[Path] = None) -> None:
        self.settings = settings
        self.root = Path(settings.workspace)
        self.root.mkdir(parents=True, exist_ok=True)
        self.env_path = self.root / "workspace.env"
        stored = dotenv_values(self.env_path) if self.env_path.exists() else {}
        try:
            self.seed = seed if seed is not None else int(stored.get("SEED") or 0)
            self.next_seq = int(stored.get("NEXT_SEQ") or 1)
        except ValueError as exc:
            raise ConfigError(f"Ungültige Werte in {self.env_path}: {exc}") from exc
        set_key(str(self.env_path), "SEED", str(self.seed))

        scenario = load_scenario(scenario_path or settings.scenario_path, settings.fee_policy)
        self.scenario = scenario.with_seed(self.seed)
        self.net = SimNetwork(self.scenario.network)
        self.client_node, self.server_node = resolve_roles(self.scenario, self.net)
        self.net.load_blocks(self._load_chain())
        self._saved_height = self.net.height
        self._server: Optional[TithonusServer] = None
        self._client: Optional[TithonusClient] = None

    # ---------- Pfade ----------

    @property
    def chain_path(self) -> Path:
        return self.root / "chain.csv"

    @property
    def certificates_path(self) -> Path:
        return self.root / "certificates.txt"

    @property
    def subscriptions_path(self) -> Path:
        return self.root / "subscriptions.csv"

    @property
    def corpus_dir(self) -> Path:
        return Path(self.settings.corpus_dir) if self.settings.corpus_dir else self.root / "corpus"

    def rng(self, label: str) -> random.Random:
        """Pro Rolle und Kettenhöhe eigener Zufall: gleiche Befehlsfolge, gleiche Ausgabe."""
        return random.Random(f"{self.seed}/{label}/{self.net.height}")

    # ---------- Kette ----------

    def _load_chain(self) -> list[tuple[int, list]]:
        if not self.chain_path.exists():
            return []
        df = pd.read_csv(self.chain_path, dtype={"tx": str}, keep_default_na=False)
        missing = set(CHAIN_COLUMNS) - set(df.columns)
        if missing:
            raise KeyError(f"Fehlende Spalten in {self.chain_path}: {missing}")
        blocks = []
        for (height, miner), group in df.groupby(["height", "miner"], sort=True):
            blocks.append((int(miner), [from_hex(raw) for raw in group["tx"] if raw]))
        return blocks

    def _save_chain(self) -> None:
        rows = []
        for block in self.net.chain[self._saved_height + 1 :]:
            raws = [to_hex(tx) for tx in block.transactions] or [""]
            rows += [{"height": block.height, "miner": block.miner, "tx": raw} for raw in raws]
        if not rows:
            return
        header = not self.chain_path.exists()
        pd.DataFrame(rows, columns=CHAIN_COLUMNS).to_csv(self.chain_path, mode="a", header=header, index=False)
        self._saved_height = self.net.height

    # ---------- Rollen ----------

    def load_certificates(self) -> list[Certificate]:
        if not self.certificates_path.exists():
            return []
        lines = self.certificates_path.read_text(encoding="utf-8").split()
        return [Certificate.from_bytes(bytes.fromhex(line)) for line in lines]

    def server(self) -> TithonusServer:
        if self._server is None:
            hub = SubscriptionHub()
            if self.subscriptions_path.exists():
                hub = SubscriptionHub.from_rows(pd.read_csv(self.subscriptions_path).to_dict(orient="records"))
            server = TithonusServer(
                self.net,
                self.server_node,
                self.seed,
                RecordStore(self.root / "server_records.jsonl"),
                self.settings,
                resolver=CorpusResolver(self.corpus_dir),
                allocator=SeqAllocator(self.next_seq),
                hub=hub,
                rng=self.rng("server"),
            )
            server.wallet.rescan(self.net.view(self.server_node).transactions())
            certificates = self.load_certificates()
            if certificates:
                server.adopt(certificates)
            self._server = server
        return self._server

    def client(self) -> TithonusClient:
        if self._client is None:
            client = TithonusClient(
                self.net,
                self.client_node,
                self.seed,
                self.settings.fee_policy,
                records=RecordStore(self.root / "client_records.jsonl"),
                rng=self.rng("client"),
            )
            client.wallet.rescan(self.net.view(self.client_node).transactions())
            self._client = client
        return self._client

    def ensure_funds(self, actor: TithonusServer | TithonusClient, minimum: Optional[int] = None) -> None:
        """Faucet, falls kein einzelner UTXO minimum deckt."""
        minimum = minimum or self.settings.faucet_amount // 2
        if any(f.value >= minimum for f in actor.wallet.utxos()):
            return
        actor.fund(max(minimum, self.settings.faucet_amount))

    # ---------- Abschluss ----------

    def commit(self) -> pd.DataFrame:
        """Lässt das Netz ruhen, mined offene Transaktionen und schreibt den Zustand zurück."""
        report = self.net.run_to_quiescence()
        if self.net.miner.mempool:
            self.net.mine()
        stranded = sum(len(n.mempool) for n in self.net.nodes)
        if stranded:
            logger.warning("[Workspace] %d Mempool-Einträge ohne Block gehen verloren", stranded)
        self._save_chain()
        if self._server is not None:
            self.next_seq = self._server.allocator.next_value
            set_key(str(self.env_path), "NEXT_SEQ", str(self.next_seq))
            if self._server.certificates:
                self.certificates_path.write_text(
                    "\n".join(c.to_bytes().hex() for c in self._server.certificates) + "\n", encoding="utf-8"
                )
            rows = self._server.hub.to_rows()
            if rows:
                pd.DataFrame(rows, columns=SUBSCRIPTION_COLUMNS).to_csv(self.subscriptions_path, index=False)
        return report
