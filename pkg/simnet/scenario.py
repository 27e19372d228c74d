"""
Szenario-Dateien (key=value) für simnet und Report-Ausgabe.

Beispiel:
    CENSORED_CONFORMANT=18
    CENSORED_NON_CONFORMANT=12
    FREE_CONFORMANT=18
    FREE_NON_CONFORMANT=12
    OUT_DEGREE=8
    FILTER_SWIFT=false
    MINING_EVERY=
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import pandas as pd
from dotenv import dotenv_values

from chain.config import FeePolicy, get_fee_policy
from chain.embedding import STAGED_CAPACITY, build_staged_pair
from chain.errors import BadConfig, ConfigError
from chain.wallet import Wallet
from simnet.network import NetworkConfig, Region, SimNetwork

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "ja", "on"}


def _int(values: Mapping[str, Optional[str]], name: str, default: Optional[int]) -> Optional[int]:
    raw = values.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} ist keine ganze Zahl: {raw!r}") from exc


def _bool(values: Mapping[str, Optional[str]], name: str, default: bool) -> bool:
    raw = values.get(name)
    if raw is None or raw.strip() == "":
        return default
    return raw.strip().lower() in _TRUE


@dataclass(frozen=True)
class Scenario:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    client_node: Optional[int] = None
    server_node: Optional[int] = None
    inject_node: Optional[int] = None
    inject_count: int = 1
    inject_bytes: int = STAGED_CAPACITY

    def with_seed(self, seed: Optional[int]) -> "Scenario":
        if seed is None:
            return self
        return replace(self, network=replace(self.network, seed=seed))


def scenario_from_mapping(values: Mapping[str, Optional[str]], policy: Optional[FeePolicy] = None) -> Scenario:
    defaults = NetworkConfig()
    network = NetworkConfig(
        censored_conformant=_int(values, "CENSORED_CONFORMANT", defaults.censored_conformant),
        censored_non_conformant=_int(values, "CENSORED_NON_CONFORMANT", defaults.censored_non_conformant),
        free_conformant=_int(values, "FREE_CONFORMANT", defaults.free_conformant),
        free_non_conformant=_int(values, "FREE_NON_CONFORMANT", defaults.free_non_conformant),
        out_degree=_int(values, "OUT_DEGREE", defaults.out_degree),
        seed=_int(values, "SEED", defaults.seed),
        filter_cross_border=_bool(values, "FILTER_CROSS_BORDER", False),
        filter_swift=_bool(values, "FILTER_SWIFT", False),
        cnode_count=_int(values, "CNODE_COUNT", defaults.cnode_count),
        snooping_count=_int(values, "SNOOPING_COUNT", 0),
        mining_every=_int(values, "MINING_EVERY", None),
        policy=policy or get_fee_policy(),
    )
    return Scenario(
        network=network,
        client_node=_int(values, "CLIENT_NODE", None),
        server_node=_int(values, "SERVER_NODE", None),
        inject_node=_int(values, "INJECT_NODE", None),
        inject_count=_int(values, "INJECT_COUNT", 1),
        inject_bytes=_int(values, "INJECT_BYTES", STAGED_CAPACITY),
    )


def load_scenario(path: Optional[Path], policy: Optional[FeePolicy] = None) -> Scenario:
    if path is None:
        return Scenario(network=NetworkConfig(policy=policy or get_fee_policy()))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Szenario-Datei nicht gefunden: {path}")
    return scenario_from_mapping(dotenv_values(path), policy)


def first_node(net: SimNetwork, region: Region, exclude_miner: bool = False) -> int:
    for node in net.nodes:
        if node.region == region and node.relays and not (exclude_miner and node.is_miner):
            return node.id
    raise BadConfig(f"Kein konformer Knoten in Region {region.value}")


def resolve_roles(scenario: Scenario, net: SimNetwork) -> tuple[int, int]:
    """(client_node, server_node); Default: erster konformer zensierter bzw. freier Knoten."""
    has_censored = any(n.region == Region.CENSORED for n in net.nodes)
    client = scenario.client_node
    if client is None:
        client = first_node(net, Region.CENSORED if has_censored else Region.FREE)
    server = scenario.server_node
    if server is None:
        server = first_node(net, Region.FREE)
    net.node(client)
    net.node(server)
    return client, server


def run_scenario(scenario: Scenario) -> tuple[SimNetwork, pd.DataFrame]:
    """Baut das Netz, injiziert inject_count Staged-Writes am Server-Knoten und liefert den Report."""
    net = SimNetwork(scenario.network)
    _, server = resolve_roles(scenario, net)
    origin = scenario.inject_node if scenario.inject_node is not None else server
    rng = random.Random(scenario.network.seed)
    wallet = Wallet(scenario.network.seed, "sim")
    outpoint, output = net.fund(wallet.receive_script(), 50_000_000)
    wallet.add(outpoint, output)

    for _ in range(scenario.inject_count):
        payload = rng.randbytes(scenario.inject_bytes)
        pair = build_staged_pair(payload, wallet.take(10_000), scenario.network.policy)
        wallet.absorb(pair.staging)
        net.inject(origin, pair.staging)
        net.inject(origin, pair.writing)
    report = net.run_to_quiescence()
    if scenario.network.mining_every:
        net.mine()
    logger.info("[Sim] %d Zeilen im Propagation-Report", len(report))
    return net, report


def write_report(df: pd.DataFrame, path: Path) -> Path:
    """CSV, oder Parquet bei Endung .parquet."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".parquet":
        df.to_parquet(path, index=False)
    else:
        df.to_csv(path, index=False)
    return path
