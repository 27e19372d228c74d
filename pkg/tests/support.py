"""Gemeinsame Helfer für die Tests: erfundene Fundings, Resolver, Mini-Deployments."""

import random
from dataclasses import dataclass
from pathlib import Path

from chain.secp256k1 import PrivateKey
from chain.txmodel import OutPoint, Transaction, TxOutput, txid
from chain.wallet import Funding
from simnet.network import NetworkConfig, SimNetwork
from simnet.scenario import Scenario, resolve_roles
from tithonus.config import Settings
from tithonus.corpus import MemoryResolver
from tithonus.records import RecordStore
from tithonus.security import Certificate, ClientRecord
from tithonus.service import TithonusClient, TithonusServer

SMALL_NET = NetworkConfig(censored_conformant=6, free_conformant=8, out_degree=3, seed=11)


def make_funding(rng: random.Random, value: int = 5_000_000, key: PrivateKey | None = None) -> Funding:
    """Ausgebbarer Output mit erfundenem Outpoint (für Builder-Tests ohne Netz)."""
    return Funding(OutPoint(rng.randbytes(32), 0), value, key or PrivateKey.random(rng))


def resolver_for(funding: Funding, *transactions: Transaction) -> dict[OutPoint, TxOutput]:
    """Mapping-Resolver mit dem Funding-Output und allen Outputs der gegebenen Transaktionen."""
    outputs = {funding.outpoint: TxOutput(funding.value, funding.script_pubkey)}
    for tx in transactions:
        tid = txid(tx)
        for vout, out in enumerate(tx.outputs):
            outputs[OutPoint(tid, vout)] = out
    return outputs


def settle(net: SimNetwork) -> None:
    net.run_to_quiescence()
    net.mine()


@dataclass
class Deployment:
    net: SimNetwork
    server: TithonusServer
    client: TithonusClient
    cert: Certificate
    record: ClientRecord
    deposit: int

    def serve(self):
        result = self.server.process(self.net.view(self.server.node_id).transactions())
        settle(self.net)
        return result


def deploy(
    tmp_path: Path,
    config: NetworkConfig = SMALL_NET,
    corpus: dict[str, bytes] | None = None,
    deposit: int = 50_000,
    seed: str = "test",
) -> Deployment:
    """Server mit Root-Zertifikat, Client mit verarbeiteter Registrierung."""
    net = SimNetwork(config)
    client_node, server_node = resolve_roles(Scenario(network=config), net)
    server = TithonusServer(
        net,
        server_node,
        f"{seed}-server",
        RecordStore(tmp_path / "server_records.jsonl"),
        Settings(workspace=tmp_path),
        resolver=MemoryResolver(corpus or {}),
    )
    server.fund(5_000_000)
    server.create_root()
    settle(net)

    client = TithonusClient(
        net, client_node, f"{seed}-client", config.policy, records=RecordStore(tmp_path / "client_records.jsonl")
    )
    client.fund(5_000_000)
    cert = client.discover()
    record = client.register(cert, deposit)
    settle(net)
    deployment = Deployment(net, server, client, cert, record, deposit)
    deployment.serve()
    return deployment
