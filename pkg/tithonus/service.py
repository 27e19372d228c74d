"""
Server- und Client-Objekte: verbinden Wallet, Transport, Zertifikate und die
Protokoll-Schichten über einen SimNetwork-Knoten.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from chain.config import FeePolicy
from chain.embedding import MIN_OUTPUT_VALUE, STAGED_CAPACITY, StagedPair, build_staged_pair, staged_writing_size
from chain.errors import IncompleteStream, TithonusError
from chain.hashing import hash160
from chain.script import Script
from chain.secp256k1 import PrivateKey
from chain.signing import sign_p2pkh
from chain.txmodel import Transaction, TxInput, TxOutput, fee_for
from chain.wallet import Funding, Wallet
from simnet.network import SimNetwork
from simnet.view import ChainView
from tithonus.chaining import SeqAllocator, UnitType, fragment
from tithonus.config import Settings
from tithonus.corpus import CorpusResolver
from tithonus.fetch import (
    DirectoryEntry,
    MatchedResponse,
    Pricing,
    RequestLimiter,
    ResponseEnvelope,
    Selector,
    SubscriptionHub,
    SubscriptionMode,
    UpdateResult,
    build_request,
    client_match_response,
    publish_free,
    publish_update,
    server_handle_request,
    subscribe,
)
from tithonus.records import RecordStore
from tithonus.security import (
    Certificate,
    ClientRecord,
    PublishedCertificate,
    certificate_body,
    client_register,
    discover_certificates,
    gen_certificate,
    obfuscate_payment,
    resolve_certificate_chain,
    scan_registrations,
    verify_chain,
)
from tithonus.transport import Intent, Transport, choose_mode

logger = logging.getLogger(__name__)

# Sicherheitszuschlag für Coin-Selection: vier Multisig-Transaktionen à ~400 Bytes
REQUEST_BUDGET_BYTES = 2_000


def funding_budget(size: int, fee_rate: float, policy: FeePolicy) -> int:
    """Obergrenze für Gebühren und Dust-Outputs eines Staged-Paars mit size Bytes Payload."""
    return fee_for(size + 250, fee_rate) * int(policy.dust_multiplier + 2) + 2 * MIN_OUTPUT_VALUE


@dataclass(frozen=True)
class ProcessResult:
    registrations: list[ClientRecord] = field(default_factory=list)
    responses: list[ResponseEnvelope] = field(default_factory=list)
    sweeps: list[bytes] = field(default_factory=list)


class TithonusServer:
    def __init__(
        self,
        net: SimNetwork,
        node_id: int,
        seed: object,
        records: RecordStore,
        settings: Settings,
        *,
        resolver: Optional[CorpusResolver] = None,
        allocator: Optional[SeqAllocator] = None,
        hub: Optional[SubscriptionHub] = None,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.net = net
        self.node_id = node_id
        self.seed = seed
        self.settings = settings
        self.policy = settings.fee_policy
        self.rng = rng or random.Random(f"{seed}/server")
        self.wallet = Wallet(seed, "server")
        self.transport = Transport(net, node_id, self.policy)
        self.records = records
        self.allocator = allocator or SeqAllocator()
        self.hub = hub or SubscriptionHub()
        self.limiter = RequestLimiter(settings.request_limit)
        self.resolver = resolver or CorpusResolver(settings.corpus_dir or Path(settings.workspace) / "corpus")
        self.certificates: list[Certificate] = []

    # ---------- Schlüssel und Zertifikate ----------

    def cert_key(self, seq: int) -> PrivateKey:
        return PrivateKey.from_seed(self.seed, "tithonus-cert", seq)

    @property
    def certificate(self) -> Certificate:
        if not self.certificates:
            raise TithonusError("Server hat noch kein Zertifikat")
        return self.certificates[-1]

    @property
    def current_key(self) -> PrivateKey:
        return self.cert_key(self.certificate.seq)

    @property
    def pricing(self) -> Pricing:
        return Pricing(self.certificate.fee_rate, self.settings.cached_discount)

    def create_root(self, fee_rate: Optional[int] = None) -> Certificate:
        marker = hash160(self.wallet.new_key().public_key)
        cert = gen_certificate(
            self.cert_key(0),
            self.rng.randbytes(16),
            fee_rate or self.settings.cert_fee_rate,
            dir_marker=marker,
        )
        self.certificates = [cert]
        self.publish_certificate(cert)
        return cert

    def rotate(self) -> Certificate:
        prev = self.certificate
        cert = gen_certificate(
            self.cert_key(prev.seq + 1),
            prev.ttag,
            prev.fee_rate,
            (prev, self.cert_key(prev.seq)),
            suite=prev.suite,
            dir_marker=prev.dir_marker,
        )
        self.certificates.append(cert)
        self.publish_certificate(cert)
        logger.info("[Cert] Rotation auf seq %d", cert.seq)
        return cert

    def adopt(self, certificates: Sequence[Certificate]) -> None:
        """Übernimmt eine gespeicherte Kette (CLI-Workspace)."""
        ok, _ = verify_chain(certificates)
        if not ok:
            raise TithonusError("Gespeicherte Zertifikatskette ist ungültig")
        self.certificates = list(certificates)

    def publish_certificate(self, cert: Certificate) -> list[StagedPair]:
        units = fragment(certificate_body(cert), UnitType.CERT, STAGED_CAPACITY, self.allocator)
        return self.write_payloads([u.encode() for u in units], Intent.ASYNCHRONOUS)

    # ---------- Schreiben ----------

    def fund(self, amount: int) -> Funding:
        outpoint, output = self.net.fund(self.wallet.receive_script(), amount)
        self.wallet.add(outpoint, output)
        return Funding(outpoint, output.value, self.wallet.key_for(output.script_pubkey))

    def write_payloads(
        self, payloads: Sequence[bytes], intent: Intent, writing_script: Optional[Script] = None
    ) -> list[StagedPair]:
        mode = choose_mode(intent, self.policy)
        pairs = []
        for payload in payloads:
            funding = self.wallet.take(funding_budget(staged_writing_size(len(payload)), mode.fee_rate, self.policy))
            pair = build_staged_pair(
                payload,
                funding,
                self.policy,
                fee_rate=mode.fee_rate,
                writing_script=writing_script or self.wallet.receive_script(),
                change_script=self.wallet.receive_script(),
            )
            self.transport.submit(pair.staging, mode)
            self.transport.submit(pair.writing, mode)
            self.wallet.absorb(pair.staging)
            self.wallet.absorb(pair.writing)
            pairs.append(pair)
        return pairs

    def sweep_deposit(self, deposit: Funding) -> Optional[bytes]:
        """Löst das Deposit mit sk_fee in die Server-Wallet ein."""
        deposit = obfuscate_payment(deposit)
        mode = choose_mode(Intent.INTERACTIVE, self.policy)
        target = self.wallet.receive_script()
        draft = sign_p2pkh(Transaction((TxInput(deposit.outpoint),), (TxOutput(0, target),)), 0, deposit.key)
        fee = fee_for(draft.size, mode.fee_rate)
        value = deposit.value - fee
        if value <= self.policy.dust_multiplier * fee:
            logger.info("[CREG] Deposit %d sat zu klein zum Einlösen", deposit.value)
            return None
        tx = sign_p2pkh(Transaction((TxInput(deposit.outpoint),), (TxOutput(value, target),)), 0, deposit.key)
        receipt = self.transport.submit(tx, mode)
        self.wallet.absorb(tx)
        return receipt.txid

    # ---------- Verarbeitung ----------

    def process(self, transactions: Iterable[Transaction]) -> ProcessResult:
        transactions = list(transactions)
        known = {bytes.fromhex(pk) for pk in self.records.load()}
        result = ProcessResult()
        for seq in range(self.certificate.seq + 1):
            for match in scan_registrations(
                transactions, self.cert_key(seq), self.certificate.ttag, suite=self.certificate.suite, known=known
            ):
                self.records.save(match.record)
                result.registrations.append(match.record)
                swept = self.sweep_deposit(match.deposit)
                if swept is not None:
                    result.sweeps.append(swept)
        result.responses.extend(
            server_handle_request(
                transactions,
                self.records,
                self.pricing,
                self,
                cert=self.certificate,
                resolver=self.resolver,
                hub=self.hub,
                limiter=self.limiter,
                height=self.net.height,
            )
        )
        if result.registrations or result.responses:
            logger.info(
                "[Server] %d Registrierungen, %d Antworten", len(result.registrations), len(result.responses)
            )
        return result

    def publish_free(self, content: bytes, description: str | bytes) -> DirectoryEntry:
        return publish_free(content, description, self, self.certificate, self.current_key)

    def publish_update(self, uri: str, content: bytes) -> UpdateResult:
        return publish_update(self.hub, uri, content, self, self.records, self.pricing, self.certificate, self.rng)


class TithonusClient:
    def __init__(
        self,
        net: SimNetwork,
        node_id: int,
        seed: object,
        policy: FeePolicy,
        *,
        records: Optional[RecordStore] = None,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.net = net
        self.node_id = node_id
        self.policy = policy
        self.rng = rng or random.Random(f"{seed}/client")
        self.wallet = Wallet(seed, "client")
        self.transport = Transport(net, node_id, policy)
        self.records = records
        self.mode = choose_mode(Intent.INTERACTIVE, policy)

    def view(self) -> ChainView:
        return self.net.view(self.node_id)

    def fund(self, amount: int) -> Funding:
        outpoint, output = self.net.fund(self.wallet.receive_script(), amount)
        self.wallet.add(outpoint, output)
        return Funding(outpoint, output.value, self.wallet.key_for(output.script_pubkey))

    def certificate_chain(self) -> list[PublishedCertificate]:
        return resolve_certificate_chain(discover_certificates(self.view()))

    def discover(self) -> Certificate:
        chain = self.certificate_chain()
        if not chain:
            raise IncompleteStream("Kein gültiges Root-Zertifikat in der Kette")
        return chain[-1].certificate

    def _submit(self, pairs: Sequence[StagedPair]) -> None:
        ordered = [p.staging for p in pairs] + [p.writing for p in pairs]
        for tx in ordered:
            self.transport.submit(tx, self.mode)
            self.wallet.absorb(tx)

    def _budget(self, extra: int = 0) -> Funding:
        return self.wallet.take(extra + funding_budget(REQUEST_BUDGET_BYTES, self.mode.fee_rate, self.policy))

    def _save(self, record: ClientRecord) -> ClientRecord:
        if self.records is not None:
            self.records.save(record)
        return record

    def register(self, cert: Certificate, deposit: int) -> ClientRecord:
        _, pairs, record = client_register(
            cert,
            self._budget(deposit),
            deposit,
            self.rng,
            policy=self.policy,
            fee_rate=self.mode.fee_rate,
            change_script=self.wallet.receive_script(),
        )
        self._submit(pairs)
        return self._save(record)

    def request(self, record: ClientRecord, cert: Certificate, uri: str, selector: Selector = Selector()) -> ClientRecord:
        _, pairs, updated = build_request(
            record,
            cert,
            uri,
            selector,
            self._budget(),
            self.rng,
            policy=self.policy,
            fee_rate=self.mode.fee_rate,
            change_script=self.wallet.receive_script(),
        )
        self._submit(pairs)
        return self._save(updated)

    def subscribe(self, record: ClientRecord, cert: Certificate, uri: str, mode: SubscriptionMode) -> ClientRecord:
        _, pairs, updated = subscribe(
            record,
            cert,
            uri,
            mode,
            self._budget(),
            self.rng,
            policy=self.policy,
            fee_rate=self.mode.fee_rate,
            change_script=self.wallet.receive_script(),
        )
        self._submit(pairs)
        return self._save(updated)

    def receive(self, record: ClientRecord, cert: Certificate) -> MatchedResponse:
        matched = client_match_response(record, cert.ttag, self.view().transactions())
        self._save(matched.record)
        return matched
