"""
Content-Fetch-Schicht: altruistisches Verzeichnis (DIR), bezahlte Abrufe
(REQ/RESP) und Abonnements mit rotierenden Inhaltsschlüsseln.
"""

from __future__ import annotations

import logging
import math
import random
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Optional, Protocol, Sequence

from chain.config import FeePolicy
from chain.embedding import (
    FORBIDDEN_DATA,
    STAGED_CAPACITY,
    StagedPair,
    build_multisig_pair,
    carrier_payloads,
    embed_pubkey,
    extract_multisig_slots,
    extract_pubkey,
)
from chain.errors import (
    DeserializationError,
    EmptyContent,
    InactiveSubscription,
    MalformedKey,
    NotMultisig,
    IncompleteStream,
    TagMismatch,
    TithonusError,
    UriTooLong,
)
from chain.hashing import hash160, sha256
from chain.script import Script, p2pkh_script
from chain.secp256k1 import PrivateKey, verify_compact
from chain.txmodel import Transaction, txid
from chain.wallet import Funding
from simnet.view import ChainView
from tithonus.chaining import (
    DataUnit,
    SeqAllocator,
    UnitType,
    drain,
    fragment,
    iter_units,
    open_cursor,
    scan,
)
from tithonus.corpus import CorpusResolver
from tithonus.records import RecordStore
from tithonus.security import (
    BLOCK,
    REQ_TEMPLATE,
    TAG_LEN,
    TTAG_LEN,
    Certificate,
    ClientRecord,
    LinkedPair,
    PublishedCertificate,
    certificate_at,
    cipher_decrypt,
    cipher_encrypt,
    data_slots,
    encrypt_blocks,
    find_linked_pairs,
    signer_position,
)
from tithonus.transport import Intent

logger = logging.getLogger(__name__)

URI_MAX = 59
SEL_ALL = 0xFFFFFFFF
SUBSCRIBE_OFFSET = 0xFFFFFFFF
DESCRIPTION_MAX = 256
TAG_PAD = BLOCK - TAG_LEN  # 8
ENVELOPE_HEAD = TTAG_LEN + TAG_LEN + BLOCK  # 64
RESP_CAPACITY = STAGED_CAPACITY - ENVELOPE_HEAD - TTAG_LEN  # 1.555


class ResponseKind(IntEnum):
    CONTENT = 0
    KEY = 1


class SubscriptionMode(IntEnum):
    PER_UPDATE = 0
    PER_TIME = 1


class PayloadWriter(Protocol):
    """Schreibt fertige Payloads als Staged-Paare (Server-Seite)."""

    allocator: SeqAllocator

    def write_payloads(
        self, payloads: Sequence[bytes], intent: Intent, writing_script: Optional[Script] = None
    ) -> list[StagedPair]: ...


# ---------- Verzeichnis ----------


@dataclass(frozen=True)
class DirectoryEntry:
    """Layout: u16 len | description | leading_txid 32 | signature 64."""

    description: bytes
    leading_txid: bytes
    signature: bytes = field(default=b"", repr=False)

    def __post_init__(self) -> None:
        if len(self.description) > DESCRIPTION_MAX:
            raise ValueError(f"Beschreibung zu lang: {len(self.description)} > {DESCRIPTION_MAX} Bytes")
        if len(self.leading_txid) != 32:
            raise ValueError("leading_txid braucht 32 Bytes")

    @property
    def digest(self) -> bytes:
        return sha256(self.description + self.leading_txid)

    def to_bytes(self) -> bytes:
        return struct.pack(">H", len(self.description)) + self.description + self.leading_txid + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DirectoryEntry":
        if len(raw) < 2:
            raise DeserializationError("DIR-Eintrag zu kurz")
        (n,) = struct.unpack_from(">H", raw)
        if n > DESCRIPTION_MAX or len(raw) != 2 + n + 32 + 64:
            raise DeserializationError(f"DIR-Eintrag mit ungültiger Länge ({len(raw)} Bytes, desc {n})")
        return cls(raw[2 : 2 + n], raw[2 + n : 34 + n], raw[34 + n :])

    def sign(self, key: PrivateKey) -> "DirectoryEntry":
        return replace(self, signature=key.sign_compact(self.digest))

    def verify(self, public_key: bytes) -> bool:
        return verify_compact(public_key, self.digest, self.signature)


@dataclass(frozen=True)
class ListedEntry:
    entry: DirectoryEntry
    height: int
    dir_txid: bytes


@dataclass(frozen=True)
class DirectoryListing:
    entries: list[ListedEntry]
    rejected: list[ListedEntry]


def _description_bytes(description: str | bytes) -> bytes:
    return description.encode("utf-8") if isinstance(description, str) else description


def publish_free(
    content: bytes,
    description: str | bytes,
    writer: PayloadWriter,
    cert: Certificate,
    key: PrivateKey,
) -> DirectoryEntry:
    """Inhalt als Klartext-DATA-Units, danach der signierte DIR-Eintrag über dir_marker-Transaktionen."""
    if not content:
        raise EmptyContent("Leerer Inhalt kann nicht publiziert werden")
    if key.public_key != cert.public_key:
        raise MalformedKey("Signaturschlüssel gehört nicht zum aktuellen Zertifikat")
    units = fragment(content, UnitType.DATA, STAGED_CAPACITY, writer.allocator)
    pairs = writer.write_payloads([u.encode() for u in units], Intent.ASYNCHRONOUS)
    entry = DirectoryEntry(_description_bytes(description), pairs[0].writing_txid).sign(key)

    dir_units = fragment(entry.to_bytes(), UnitType.DIR, STAGED_CAPACITY, writer.allocator)
    writer.write_payloads([u.encode() for u in dir_units], Intent.ASYNCHRONOUS, cert.marker_script())
    logger.info(
        "[DIR] %d Bytes in %d Units publiziert, Leading-Tx %s",
        len(content),
        len(units),
        pairs[0].writing_txid[::-1].hex(),
    )
    return entry


def read_directory(view: ChainView, chain: Sequence[PublishedCertificate]) -> DirectoryListing:
    """Nur geminte Einträge; Signatur gegen das bei der Blockhöhe gültige Zertifikat."""
    markers = {p.certificate.marker_script() for p in chain if p.certificate.dir_marker}
    heights = view.heights()
    transactions = list(view.transactions(include_mempool=False))
    entries, rejected = [], []
    for tx in transactions:
        if not tx.outputs or tx.outputs[0].script_pubkey not in markers:
            continue
        tx_id = txid(tx)
        for unit in iter_units([tx]):
            if unit.unit_type != UnitType.DIR or not unit.is_first:
                continue
            try:
                body = unit.body if unit.length == 1 else drain(open_cursor(unit), iter_units(transactions))
                entry = DirectoryEntry.from_bytes(body)
            except (TithonusError, ValueError) as exc:
                logger.debug("[DIR] Eintrag nicht lesbar: %s", exc)
                continue
            listed = ListedEntry(entry, heights[tx_id], tx_id)
            cert = certificate_at(chain, heights[tx_id])
            if cert is not None and entry.verify(cert.public_key):
                entries.append(listed)
            else:
                rejected.append(listed)
    if rejected:
        logger.warning("[DIR] %d Einträge mit ungültiger Signatur verworfen", len(rejected))
    return DirectoryListing(entries, rejected)


def fetch_free(entry: DirectoryEntry, view: ChainView) -> bytes:
    return scan(entry.leading_txid, view.transactions())


# ---------- Preise und Limits ----------


@dataclass(frozen=True)
class Pricing:
    fee_rate: float
    cached_discount: float = 0.5

    def price(self, size: int, cached: bool = False) -> int:
        factor = self.cached_discount if cached else 1.0
        return math.ceil(round(size * self.fee_rate * factor, 9))

    def affordable(self, credit: int, cached: bool = False) -> int:
        """Größte Byte-Anzahl, deren Preis das Guthaben nicht übersteigt."""
        if credit <= 0:
            return 0
        per_byte = self.fee_rate * (self.cached_discount if cached else 1.0)
        n = int(credit / per_byte) if per_byte > 0 else credit
        while n > 0 and self.price(n, cached) > credit:
            n -= 1
        while self.price(n + 1, cached) <= credit:
            n += 1
        return n

    @staticmethod
    def split(cost: int, subscribers: int) -> int:
        return math.ceil(cost / subscribers) if subscribers else cost


class RequestLimiter:
    """Höchstens limit Anfragen pro Client und Blockhöhe; None = unbegrenzt."""

    def __init__(self, limit: Optional[int] = None) -> None:
        self.limit = limit
        self._counts: dict[tuple[str, int], int] = defaultdict(int)
        self._lock = threading.Lock()

    def allow(self, record_id: str, height: int) -> bool:
        if self.limit is None:
            return True
        with self._lock:
            if self._counts[(record_id, height)] >= self.limit:
                return False
            self._counts[(record_id, height)] += 1
            return True


# ---------- Anfragen ----------


@dataclass(frozen=True)
class Selector:
    offset: int = 0
    length: int = SEL_ALL

    def encode(self) -> bytes:
        return struct.pack(">II", self.offset, self.length)

    @classmethod
    def decode(cls, raw: bytes) -> "Selector":
        return cls(*struct.unpack(">II", raw))

    @property
    def is_subscription(self) -> bool:
        return self.offset == SUBSCRIBE_OFFSET

    def apply(self, content: bytes) -> bytes:
        end = len(content) if self.length == SEL_ALL else self.offset + self.length
        return content[self.offset : end]


@dataclass(frozen=True)
class RequestMessage:
    session_tag: bytes
    pad: bytes
    ciphertext: bytes

    @property
    def first_slot(self) -> bytes:
        return self.session_tag + self.pad

    @property
    def slot_bytes(self) -> int:
        return len(self.first_slot) + len(self.ciphertext)


def _uri_bytes(uri: str | bytes) -> bytes:
    raw = uri.encode("utf-8") if isinstance(uri, str) else uri
    if len(raw) > URI_MAX:
        raise UriTooLong(f"URI hat {len(raw)} Bytes, erlaubt sind {URI_MAX}")
    return raw


def request_plaintext(ttag: bytes, selector: Selector, uri: str | bytes) -> bytes:
    return ttag + bytes([UnitType.REQ]) + selector.encode() + _uri_bytes(uri).ljust(URI_MAX, b"\x00")


def build_request(
    record: ClientRecord,
    cert: Certificate,
    uri: str | bytes,
    selector: Selector,
    funding: Funding,
    rng: random.Random,
    *,
    policy: FeePolicy,
    fee_rate: Optional[float] = None,
    change_script: Optional[Script] = None,
) -> tuple[RequestMessage, list[StagedPair], ClientRecord]:
    """
    Zwei verkettete Multisig-Paare mit Staging-Outputs (p2sh, p2pkh).
    Slots: tag‖pad, dann drei getarnte Chiffrat-Blöcke. Der Zähler steigt nach dem Bau.
    """
    plaintext = request_plaintext(cert.ttag, selector, uri)
    iv_source = record.pk_c
    _, ciphertext = encrypt_blocks(record.k1, iv_source, lambda _: plaintext, rng, tries=1)
    session_tag = record.current_tag
    pad = rng.randbytes(TAG_PAD)
    while session_tag + pad == FORBIDDEN_DATA:
        pad = rng.randbytes(TAG_PAD)
    message = RequestMessage(session_tag, pad, ciphertext)

    blocks = [message.first_slot] + [ciphertext[i : i + BLOCK] for i in range(0, len(ciphertext), BLOCK)]
    camouflaged = [embed_pubkey(block, rng) for block in blocks]
    link_key = PrivateKey.random(rng)
    link_index = REQ_TEMPLATE.index("p2pkh")
    first = build_multisig_pair(
        b"",
        PrivateKey.random(rng),
        funding,
        REQ_TEMPLATE,
        rng,
        policy=policy,
        fee_rate=fee_rate,
        slots=camouflaged[:2],
        link_script=p2pkh_script(hash160(link_key.public_key)),
        writing_script=change_script,
    )
    second = build_multisig_pair(
        b"",
        PrivateKey.random(rng),
        first.output_funding(link_index, link_key),
        REQ_TEMPLATE,
        rng,
        policy=policy,
        fee_rate=fee_rate,
        slots=camouflaged[2:],
        link_script=change_script,
        writing_script=change_script,
    )
    return message, [first, second], record.advanced()


def subscribe(
    record: ClientRecord,
    cert: Certificate,
    uri: str | bytes,
    mode: SubscriptionMode,
    funding: Funding,
    rng: random.Random,
    *,
    policy: FeePolicy,
    fee_rate: Optional[float] = None,
    change_script: Optional[Script] = None,
) -> tuple[RequestMessage, list[StagedPair], ClientRecord]:
    """Abo-Anfrage: REQ mit offset = 0xFFFFFFFF und length = Modus."""
    selector = Selector(SUBSCRIBE_OFFSET, int(SubscriptionMode(mode)))
    return build_request(
        record, cert, uri, selector, funding, rng, policy=policy, fee_rate=fee_rate, change_script=change_script
    )


@dataclass(frozen=True)
class OpenedRequest:
    record: ClientRecord
    selector: Selector
    uri: str


def _match_tag(pair: LinkedPair, by_tag: dict[bytes, ClientRecord]) -> Optional[tuple[ClientRecord, bytes]]:
    try:
        keys1 = extract_multisig_slots(pair.writing1)
    except NotMultisig:
        return None
    for signer in range(3):
        slot0, slot1 = data_slots(keys1, signer)
        try:
            session_tag = extract_pubkey(slot0)[:TAG_LEN]
        except MalformedKey:
            continue
        record = by_tag.get(session_tag)
        if record is not None:
            return record, slot1
    return None


def _open_request(pair: LinkedPair, record: ClientRecord, slot1: bytes, ttag: bytes) -> Optional[OpenedRequest]:
    signer2 = signer_position(pair.writing2)
    if signer2 is None:
        return None
    try:
        slot2, slot3 = data_slots(extract_multisig_slots(pair.writing2), signer2)
        ciphertext = extract_pubkey(slot1) + extract_pubkey(slot2) + extract_pubkey(slot3)
    except (NotMultisig, MalformedKey):
        return None
    plaintext = cipher_decrypt(record.k1, record.pk_c, ciphertext)
    if plaintext[: TTAG_LEN + 1] != ttag + bytes([UnitType.REQ]):
        return None
    selector = Selector.decode(plaintext[TTAG_LEN + 1 : TTAG_LEN + 9])
    uri = plaintext[TTAG_LEN + 9 :].rstrip(b"\x00").decode("utf-8", errors="replace")
    return OpenedRequest(record, selector, uri)


# ---------- Antworten ----------


@dataclass(frozen=True)
class ResponseEnvelope:
    ttag: bytes
    session_tag: bytes
    header_ciphertext: bytes
    fee: int
    kind: ResponseKind
    units: tuple[DataUnit, ...]
    leading_txid: Optional[bytes] = None

    @property
    def trailer(self) -> bytes:
        return self.ttag[::-1]

    def payloads(self) -> list[bytes]:
        """ttag‖session_tag‖header vor der ersten Unit, rev(ttag) hinter der letzten."""
        out = [u.encode() for u in self.units]
        out[0] = self.ttag + self.session_tag + self.header_ciphertext + out[0]
        out[-1] = out[-1] + self.trailer
        return out


def response_header(fee: int, kind: ResponseKind) -> bytes:
    return fee.to_bytes(8, "big") + bytes([UnitType.RESP, int(kind)]) + bytes(BLOCK - 10)


def build_response(
    record: ClientRecord,
    ttag: bytes,
    content: bytes,
    fee: int,
    kind: ResponseKind,
    allocator: SeqAllocator,
) -> ResponseEnvelope:
    """Antwort unter dem Tag des aktuellen Zählerstands von record."""
    header = cipher_encrypt(record.k1, record.pk_c, response_header(fee, kind))
    units = fragment(content, UnitType.RESP, RESP_CAPACITY, allocator, key=record.k1)
    return ResponseEnvelope(ttag, record.current_tag, header, fee, kind, tuple(units))


def envelope_filter(ttag: bytes):
    rev = ttag[::-1]

    def strip(payload: bytes) -> Optional[bytes]:
        if payload.startswith(ttag) and len(payload) > ENVELOPE_HEAD:
            payload = payload[ENVELOPE_HEAD:]
        if payload.endswith(rev):
            payload = payload[: -len(rev)]
        return payload

    return strip


def server_handle_request(
    transactions: Iterable[Transaction],
    records: RecordStore,
    pricing: Pricing,
    writer: PayloadWriter,
    *,
    cert: Certificate,
    resolver: CorpusResolver,
    hub: Optional["SubscriptionHub"] = None,
    limiter: Optional[RequestLimiter] = None,
    height: int = 0,
) -> list[ResponseEnvelope]:
    """
    Pro Tag-Treffer: Zähler erhöhen, entschlüsseln, Guthaben prüfen, Antwort
    (ggf. nur der bezahlte Präfix) per swift-Transport senden.
    """
    by_tag = {r.current_tag: r for r in records.load().values()}
    envelopes = []
    for pair in find_linked_pairs(transactions, REQ_TEMPLATE):
        matched = _match_tag(pair, by_tag)
        if matched is None:
            continue
        record, slot1 = matched
        with records.lock_for(record.record_id):
            del by_tag[record.current_tag]
            request = _open_request(pair, record, slot1, cert.ttag)
            record = records.save(record.advanced())
            by_tag[record.current_tag] = record
            if request is None:
                logger.info("[REQ] Tag-Treffer ohne gültigen REQ-Präfix (%s…)", record.record_id[:16])
                continue
            if request.selector.is_subscription:
                if hub is not None:
                    hub.subscribe(record, request.uri, SubscriptionMode(request.selector.length))
                continue
            if limiter is not None and not limiter.allow(record.record_id, height):
                logger.info("[REQ] Limit erreicht für %s…", record.record_id[:16])
                continue
            if record.credit <= 0:
                logger.info("[REQ] Kein Guthaben für %s…, Anfrage ignoriert", record.record_id[:16])
                continue
            content = resolver.resolve(request.uri)
            if content is None:
                continue
            cached = resolver.is_cached(request.uri)
            answer = request.selector.apply(content)
            fee = pricing.price(len(answer), cached)
            if fee > record.credit:
                answer = answer[: pricing.affordable(record.credit, cached)]
                fee = pricing.price(len(answer), cached)
            if not answer:
                continue

            record = record.charged(fee)
            envelope = build_response(record, cert.ttag, answer, fee, ResponseKind.CONTENT, writer.allocator)
            pairs = writer.write_payloads(envelope.payloads(), Intent.INTERACTIVE)
            envelopes.append(replace(envelope, leading_txid=pairs[0].writing_txid))
            resolver.mark_served(request.uri)
            del by_tag[record.current_tag]
            record = records.save(record.advanced())
            by_tag[record.current_tag] = record
            logger.info("[RESP] %d Bytes an %s…, Gebühr %d sat", len(answer), record.record_id[:16], fee)
    return envelopes


@dataclass(frozen=True)
class MatchedResponse:
    content: bytes
    fee: int
    kind: ResponseKind
    record: ClientRecord


def client_match_response(record: ClientRecord, ttag: bytes, transactions: Iterable[Transaction]) -> MatchedResponse:
    transactions = list(transactions)
    expected = record.current_tag
    first_payload, seen_tags = None, set()
    for tx in transactions:
        for payload in carrier_payloads(tx):
            if not payload.startswith(ttag) or len(payload) <= ENVELOPE_HEAD:
                continue
            session_tag = payload[TTAG_LEN : TTAG_LEN + TAG_LEN]
            if session_tag == expected:
                first_payload = payload
                break
            seen_tags.add(session_tag)
        if first_payload is not None:
            break

    if first_payload is None:
        nearby = {record.tag_at(c) for c in range(max(1, record.counter - 2), record.counter + 3)} - {expected}
        if seen_tags & nearby:
            raise TagMismatch(f"Antwort für anderen Zählerstand als {record.counter} gefunden")
        raise IncompleteStream(f"Keine Antwort für Zählerstand {record.counter}")

    header = cipher_decrypt(record.k1, record.pk_c, first_payload[TTAG_LEN + TAG_LEN : ENVELOPE_HEAD])
    if header[8] != UnitType.RESP:
        raise TagMismatch("Antwort-Header entschlüsselt nicht zu RESP")
    fee = int.from_bytes(header[:8], "big")
    strip = envelope_filter(ttag)
    cursor = open_cursor(DataUnit.decode(strip(first_payload)), key=record.k1)
    content = drain(cursor, iter_units(transactions, strip))
    return MatchedResponse(content, fee, ResponseKind(header[9]), record.charged(fee).advanced())


# ---------- Abonnements ----------


@dataclass
class Subscription:
    record_id: str
    uri: str
    mode: SubscriptionMode
    content_key: bytes = b""
    active: bool = True


@dataclass(frozen=True)
class UpdateResult:
    leading_txid: bytes
    content_key: bytes
    charges: dict[str, int]
    deliveries: dict[str, bytes]


class SubscriptionHub:
    def __init__(self) -> None:
        self._subs: dict[str, dict[str, Subscription]] = defaultdict(dict)
        self._lock = threading.Lock()

    def subscribe(self, record: ClientRecord, uri: str, mode: SubscriptionMode) -> Subscription:
        with self._lock:
            sub = Subscription(record.record_id, uri, SubscriptionMode(mode))
            self._subs[uri][record.record_id] = sub
        logger.info("[SUB] %s… abonniert %s (%s)", record.record_id[:16], uri, sub.mode.name.lower())
        return sub

    def for_uri(self, uri: str) -> list[Subscription]:
        with self._lock:
            return list(self._subs.get(uri, {}).values())

    def all(self) -> list[Subscription]:
        with self._lock:
            return [s for subs in self._subs.values() for s in subs.values()]

    def to_rows(self) -> list[dict]:
        return [
            {"record_id": s.record_id, "uri": s.uri, "mode": int(s.mode), "active": s.active}
            for s in self.all()
        ]

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "SubscriptionHub":
        hub = cls()
        for row in rows:
            sub = Subscription(row["record_id"], row["uri"], SubscriptionMode(int(row["mode"])), active=bool(row["active"]))
            hub._subs[sub.uri][sub.record_id] = sub
        return hub


def _refresh_activity(subs: Sequence[Subscription], current: dict[str, ClientRecord]) -> list[Subscription]:
    for sub in subs:
        record = current.get(sub.record_id)
        if record is None or record.credit <= 0:
            sub.active = False
    return [s for s in subs if s.active]


def publish_update(
    hub: SubscriptionHub,
    uri: str,
    content: bytes,
    writer: PayloadWriter,
    records: RecordStore,
    pricing: Pricing,
    cert: Certificate,
    rng: random.Random,
) -> UpdateResult:
    """
    Inhalt einmal unter neuem content_key publizieren, Kosten auf aktive
    per_update-Abonnenten aufteilen, Schlüssel pro Abonnent ausliefern.
    """
    current = records.load()
    active = _refresh_activity(hub.for_uri(uri), current)
    if not active:
        raise InactiveSubscription(f"Kein aktives Abo für {uri}")

    content_key = rng.randbytes(32)
    units = fragment(content, UnitType.DATA, STAGED_CAPACITY, writer.allocator, key=content_key)
    pairs = writer.write_payloads([u.encode() for u in units], Intent.ASYNCHRONOUS)
    leading = pairs[0].writing_txid

    paying = [s for s in active if s.mode == SubscriptionMode.PER_UPDATE]
    share = pricing.split(pricing.price(len(content)), len(paying))
    charges, deliveries = {}, {}
    for sub in active:
        with records.lock_for(sub.record_id):
            record = records.get(sub.record_id) or current[sub.record_id]
            fee = min(share, record.credit) if sub.mode == SubscriptionMode.PER_UPDATE else 0
            record = record.charged(fee)
            sub.content_key = content_key
            envelope = build_response(record, cert.ttag, content_key + leading, fee, ResponseKind.KEY, writer.allocator)
            delivered = writer.write_payloads(envelope.payloads(), Intent.ASYNCHRONOUS)
            records.save(record.advanced())
        charges[sub.record_id] = fee
        deliveries[sub.record_id] = delivered[0].writing_txid
    logger.info("[SUB] Update für %s an %d Abonnenten, Anteil %d sat", uri, len(active), share)
    return UpdateResult(leading, content_key, charges, deliveries)


def charge_period(hub: SubscriptionHub, records: RecordStore, period_fee: int) -> dict[str, int]:
    """Periodische Abbuchung für per_time-Abos; Abos ohne Guthaben werden inaktiv."""
    charges = {}
    for sub in hub.all():
        if not sub.active or sub.mode != SubscriptionMode.PER_TIME:
            continue
        with records.lock_for(sub.record_id):
            record = records.get(sub.record_id)
            if record is None or record.credit <= 0:
                sub.active = False
                continue
            fee = min(period_fee, record.credit)
            records.save(record.charged(fee))
        charges[sub.record_id] = fee
    return charges


def read_subscription_update(matched: MatchedResponse, transactions: Iterable[Transaction]) -> bytes:
    """Entschlüsselt das Update, dessen Schlüssel eine KEY-Antwort geliefert hat."""
    if matched.kind != ResponseKind.KEY or len(matched.content) != 64:
        raise TagMismatch("Antwort ist keine Schlüssel-Auslieferung")
    content_key, leading = matched.content[:32], matched.content[32:]
    return scan(leading, transactions, key=content_key)
