import random

import pytest

from chain.embedding import STAGED_CAPACITY
from chain.errors import InactiveSubscription, IncompleteStream, TagMismatch, UriTooLong
from chain.secp256k1 import PrivateKey
from simnet.network import NetworkConfig
from tithonus.chaining import SeqAllocator, UnitType, fragment
from tithonus.fetch import (
    SEL_ALL,
    DirectoryEntry,
    Pricing,
    RequestLimiter,
    ResponseKind,
    Selector,
    SubscriptionHub,
    SubscriptionMode,
    build_request,
    build_response,
    charge_period,
    fetch_free,
    read_directory,
    read_subscription_update,
    request_plaintext,
    response_header,
)
from tithonus.records import RecordStore
from tithonus.security import ClientRecord, gen_certificate
from tithonus.transport import Intent
from tests import oracles
from tests.support import deploy, make_funding, settle

NEWS = "https://example.org/news"
FEED = "https://example.org/feed"


def _request(deployment, uri, selector=Selector()):
    record = deployment.client.request(deployment.record, deployment.cert, uri, selector)
    settle(deployment.net)
    deployment.serve()
    matched = deployment.client.receive(record, deployment.cert)
    deployment.record = matched.record
    return matched


def _server_record(deployment):
    return deployment.server.records.get(deployment.record.record_id)


# ---------- Anfragen ----------


def test_registration_is_processed(deployment):
    """Der Server kennt den Client mit vollem Deposit und Zähler 1."""
    record = _server_record(deployment)
    assert record is not None, "Registrierung nicht gefunden"
    assert record.credit == deployment.deposit == 50_000
    assert record.counter == 1 and record.k1 == deployment.record.k1


def test_end_to_end_request(deployment):
    """Anfrage, Antwort, Abrechnung: Guthaben + Gebühr = Deposit, Zähler synchron."""
    expected = random.Random(7).randbytes(3_000)
    matched = _request(deployment, NEWS)
    assert matched.content == expected
    assert matched.kind == ResponseKind.CONTENT
    assert matched.fee == 3_000

    server = _server_record(deployment)
    assert matched.record.credit + matched.fee == deployment.deposit
    assert server.credit == matched.record.credit
    assert server.counter == matched.record.counter == 3
    assert server.current_tag == matched.record.current_tag


def test_cached_content_is_discounted(deployment):
    """Zweite Anfrage nach derselben URI kostet den halben Preis."""
    first = _request(deployment, NEWS)
    second = _request(deployment, NEWS)
    assert second.content == first.content
    assert second.fee == 1_500
    assert _server_record(deployment).credit == 50_000 - 3_000 - 1_500


def test_selector_range(deployment):
    matched = _request(deployment, FEED, Selector(8, 16))
    assert matched.content == (b"feed-v1 " * 100)[8:24]
    assert matched.fee == 16


def test_partial_prefix_when_credit_is_short(tmp_path):
    """Bei knappem Guthaben liefert der Server nur den bezahlten Präfix."""
    content = random.Random(3).randbytes(3_000)
    deployment = deploy(tmp_path, corpus={NEWS: content}, deposit=2_000)
    matched = _request(deployment, NEWS)
    assert matched.content == content[:2_000]
    assert matched.fee == 2_000 and matched.record.credit == 0
    assert _server_record(deployment).credit == 0


def test_request_without_credit_gets_no_answer(tmp_path):
    content = random.Random(3).randbytes(2_000)
    deployment = deploy(tmp_path, corpus={NEWS: content}, deposit=2_000)
    _request(deployment, NEWS)
    before = _server_record(deployment)
    assert before.credit == 0

    record = deployment.client.request(deployment.record, deployment.cert, NEWS)
    settle(deployment.net)
    result = deployment.serve()
    assert result.responses == []
    assert _server_record(deployment).counter == before.counter + 1
    with pytest.raises((IncompleteStream, TagMismatch)):
        deployment.client.receive(record, deployment.cert)


def test_unknown_uri_is_ignored(deployment):
    deployment.client.request(deployment.record, deployment.cert, "https://example.org/missing")
    settle(deployment.net)
    assert deployment.serve().responses == []
    assert _server_record(deployment).credit == deployment.deposit


def test_uri_too_long():
    with pytest.raises(UriTooLong):
        request_plaintext(bytes(16), Selector(), "https://example.org/" + "x" * 40)
    assert len(request_plaintext(bytes(16), Selector(), "https://e.org")) == 84


def test_response_for_other_counter_is_tag_mismatch(deployment):
    """Wer mit einem veralteten Zählerstand sucht, bekommt TagMismatch statt stiller Fehler."""
    stale = deployment.record
    record = deployment.client.request(stale, deployment.cert, FEED)
    settle(deployment.net)
    deployment.serve()
    deployment.client.receive(record, deployment.cert)
    with pytest.raises(TagMismatch):
        deployment.client.receive(stale.advanced().advanced().advanced(), deployment.cert)


def test_larger_network_request(tmp_path):
    """60 Knoten mit nicht-konformen Peers: 10.240-Byte Ressource kommt vollständig an."""
    content = random.Random(60).randbytes(10_240)
    config = NetworkConfig(
        censored_conformant=18,
        censored_non_conformant=12,
        free_conformant=18,
        free_non_conformant=12,
        out_degree=8,
        seed=60,
    )
    deployment = deploy(tmp_path, config=config, corpus={NEWS: content}, deposit=20_000)
    matched = _request(deployment, NEWS)
    assert matched.content == content
    assert matched.fee == 10_240

    server = _server_record(deployment)
    assert matched.record.credit + matched.fee == deployment.deposit
    assert server.credit == matched.record.credit == 20_000 - 10_240
    assert server.counter == matched.record.counter == 3


def test_cipher_iv_comes_from_pk_c(rng, policy):
    """REQ-Chiffrat und RESP-Header: CBC mit IV = sha256(pk_c)[:28], unabhängig vom Zähler."""
    cert = gen_certificate(PrivateKey.random(rng), bytes(range(16)), 1)
    record = ClientRecord(
        PrivateKey.random(rng).public_key, rng.randbytes(32), rng.randbytes(32), rng.randbytes(16), credit=10_000
    )
    header = response_header(6, ResponseKind.CONTENT)
    for current in (record, record.advanced().advanced()):
        message, _, _ = build_request(current, cert, NEWS, Selector(), make_funding(rng), rng, policy=policy)
        plaintext = request_plaintext(cert.ttag, Selector(), NEWS)
        expected = oracles.cbc_first_block(current.k1, current.pk_c, plaintext)
        assert message.ciphertext[:28] == expected, f"REQ-IV bei Zähler {current.counter} nicht aus pk_c"

        envelope = build_response(current, cert.ttag, b"inhalt", 6, ResponseKind.CONTENT, SeqAllocator())
        expected = oracles.cbc_first_block(current.k1, current.pk_c, header)
        assert envelope.header_ciphertext == expected, f"RESP-IV bei Zähler {current.counter} nicht aus pk_c"


# ---------- Verzeichnis ----------


def test_directory_publish_and_fetch(deployment):
    """Freier Inhalt über den DIR-Eintrag auffindbar und byte-identisch abrufbar."""
    content = random.Random(11).randbytes(4_000)
    entry = deployment.server.publish_free(content, "Bericht 2024")
    settle(deployment.net)

    view = deployment.client.view()
    listing = read_directory(view, deployment.client.certificate_chain())
    assert [e.entry for e in listing.entries] == [entry]
    assert listing.rejected == []
    assert listing.entries[0].entry.description == "Bericht 2024".encode()
    assert fetch_free(entry, view) == content


def test_directory_rejects_forged_entry(deployment):
    """Ein DIR-Eintrag mit fremder Signatur landet in rejected."""
    server = deployment.server
    pairs = server.write_payloads([b"x" * 10], Intent.ASYNCHRONOUS)
    forged = DirectoryEntry(b"gefaelscht", pairs[0].writing_txid).sign(PrivateKey.random(random.Random(1)))
    units = fragment(forged.to_bytes(), UnitType.DIR, STAGED_CAPACITY, server.allocator)
    server.write_payloads([u.encode() for u in units], Intent.ASYNCHRONOUS, server.certificate.marker_script())
    settle(deployment.net)

    listing = read_directory(deployment.client.view(), deployment.client.certificate_chain())
    assert listing.entries == []
    assert [e.entry for e in listing.rejected] == [forged]


def test_directory_entry_bytes():
    entry = DirectoryEntry(b"abc", bytes(32)).sign(PrivateKey.from_seed("dir"))
    assert DirectoryEntry.from_bytes(entry.to_bytes()) == entry
    assert entry.verify(PrivateKey.from_seed("dir").public_key)
    with pytest.raises(ValueError):
        DirectoryEntry(b"x" * 300, bytes(32))


# ---------- Abonnements ----------


def test_subscription_update_delivers_key(deployment):
    """Abo pro Update: Server publiziert einmal, Client entschlüsselt mit dem gelieferten Schlüssel."""
    record = deployment.client.subscribe(deployment.record, deployment.cert, FEED, SubscriptionMode.PER_UPDATE)
    settle(deployment.net)
    assert deployment.serve().responses == []
    assert [s.uri for s in deployment.server.hub.all()] == [FEED]

    update = b"feed-v2 " * 120
    result = deployment.server.publish_update(FEED, update)
    settle(deployment.net)
    assert result.charges == {record.record_id: len(update)}

    matched = deployment.client.receive(record, deployment.cert)
    assert matched.kind == ResponseKind.KEY and matched.fee == len(update)
    assert read_subscription_update(matched, deployment.client.view().transactions()) == update
    assert _server_record(deployment).credit == matched.record.credit == deployment.deposit - len(update)


def test_publish_update_without_subscribers(deployment):
    with pytest.raises(InactiveSubscription):
        deployment.server.publish_update(FEED, b"niemand")


def test_read_subscription_update_rejects_content_response(deployment):
    matched = _request(deployment, FEED)
    with pytest.raises(TagMismatch):
        read_subscription_update(matched, [])


def _record(rng, credit):
    return ClientRecord(rng.randbytes(33), rng.randbytes(32), rng.randbytes(32), rng.randbytes(16), credit=credit)


def test_charge_period(tmp_path, rng):
    """Periodische Abbuchung nur für per_time-Abos; leere Konten werden inaktiv."""
    store = RecordStore(tmp_path / "records.jsonl")
    rich, poor, per_update = _record(rng, 5_000), _record(rng, 300), _record(rng, 5_000)
    store.save_all([rich, poor, per_update])
    hub = SubscriptionHub()
    hub.subscribe(rich, FEED, SubscriptionMode.PER_TIME)
    hub.subscribe(poor, FEED, SubscriptionMode.PER_TIME)
    hub.subscribe(per_update, FEED, SubscriptionMode.PER_UPDATE)

    assert charge_period(hub, store, 1_000) == {rich.record_id: 1_000, poor.record_id: 300}
    assert charge_period(hub, store, 1_000) == {rich.record_id: 1_000}
    assert store.get(rich.record_id).credit == 3_000
    assert store.get(per_update.record_id).credit == 5_000
    inactive = [s.record_id for s in hub.all() if not s.active]
    assert inactive == [poor.record_id]

    restored = SubscriptionHub.from_rows(hub.to_rows())
    assert restored.to_rows() == hub.to_rows()


# ---------- Preise und Limits ----------


def test_pricing():
    pricing = Pricing(2)
    assert pricing.price(100) == 200 and pricing.price(100, cached=True) == 100
    assert pricing.affordable(201) == 100
    assert pricing.affordable(0) == 0
    assert Pricing(1.5).affordable(10) == 6
    assert Pricing.split(1_000, 3) == 334 and Pricing.split(1_000, 0) == 1_000


def test_request_limiter():
    limiter = RequestLimiter(2)
    assert [limiter.allow("a", 5) for _ in range(3)] == [True, True, False]
    assert limiter.allow("a", 6) and limiter.allow("b", 5)
    assert all(RequestLimiter().allow("a", 1) for _ in range(10))


def test_selector():
    content = bytes(range(100))
    assert Selector().apply(content) == content
    assert Selector(10, 5).apply(content) == content[10:15]
    assert Selector(0xFFFFFFFF, 0).is_subscription
    assert Selector.decode(Selector(3, SEL_ALL).encode()) == Selector(3, SEL_ALL)
