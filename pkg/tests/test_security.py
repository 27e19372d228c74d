import logging
import os
import random
from dataclasses import replace

import numpy as np
import pytest

from chain.config import FeePolicy
from chain.embedding import STAGED_CAPACITY, build_multisig_pair, build_staged_pair, staged_writing_size
from chain.errors import BadPrevKey, DeserializationError
from chain.hashing import hash160
from chain.script import p2pkh_script
from chain.secp256k1 import PrivateKey, random_pubkey
from chain.txmodel import fee_for, serialize, to_hex, validate_standard
from tithonus.chaining import SeqAllocator, UnitType, fragment
from tithonus.fetch import SEL_ALL, Selector, build_request
from tithonus.security import (
    CERT_ARCHIVE_SIZE,
    CIPHERTEXT_LEN,
    CREG_PAD,
    CREG_TEMPLATE,
    REQ_TEMPLATE,
    Certificate,
    ClientRecord,
    PublishedCertificate,
    archive_certificate,
    certificate_at,
    certificate_body,
    client_register,
    derive_session,
    find_linked_pairs,
    gen_certificate,
    kdf_x963,
    min_reply_cost,
    obfuscate_payment,
    open_registration,
    resolve_certificate_chain,
    scan_registrations,
    server_scan_creg,
    signer_position,
    tag,
    unarchive_certificate,
    verify_chain,
)
from tests import oracles
from tests.support import make_funding, resolver_for

TTAG = bytes(range(16))
POLICY = FeePolicy()


@pytest.fixture
def server_key():
    return PrivateKey.from_seed("server", "root")


@pytest.fixture
def root_cert(server_key):
    return gen_certificate(server_key, TTAG, 1)


# ---------- Session ----------


def test_kdf_and_tag_match_reference(rng):
    """X9.63-KDF und HMAC-Tag stimmen mit der hashlib-Referenz überein."""
    for _ in range(10):
        shared = rng.randbytes(32)
        assert kdf_x963(shared) == oracles.x963_kdf(shared, 64)
        k2, r_ct, counter = rng.randbytes(32), rng.randbytes(16), rng.randrange(1, 10_000)
        assert tag(k2, r_ct, counter) == oracles.session_tag(k2, r_ct, counter)


def test_session_is_symmetric(rng):
    """Client und Server leiten aus ECDH dieselben k1, k2 ab."""
    a, b = PrivateKey.random(rng), PrivateKey.random(rng)
    left, right = derive_session(a, b.public_key), derive_session(b, a.public_key)
    assert (left.k1, left.k2) == (right.k1, right.k2)
    assert len(left.k1) == len(left.k2) == 32 and left.k1 != left.k2


def test_client_record_invariants(rng):
    """Tag folgt dem Zähler, Guthaben bleibt nicht-negativ, Zeilenformat ist umkehrbar."""
    record = ClientRecord(rng.randbytes(33), rng.randbytes(32), rng.randbytes(32), rng.randbytes(16), credit=500)
    assert record.current_tag == tag(record.k2, record.r_ct, 1)
    advanced = record.advanced()
    assert advanced.counter == 2 and advanced.current_tag == record.tag_at(2)
    assert record.charged(200).credit == 300
    with pytest.raises(ValueError):
        record.charged(501)
    with pytest.raises(ValueError):
        replace(record, counter=5)
    assert ClientRecord.from_row(record.to_row()) == record


# ---------- Zertifikate ----------


def test_certificate_chain(server_key, root_cert, rng):
    """Root ist selbst signiert, Rotation signiert der Vorgänger; Manipulation bricht die Kette."""
    next_key = PrivateKey.random(rng)
    rotated = gen_certificate(next_key, rng.randbytes(16), 2, prev=(root_cert, server_key))
    ok, last = verify_chain([root_cert, rotated])
    assert ok and last == rotated and rotated.seq == 1

    assert not verify_chain([replace(root_cert, fee_rate=5)])[0]
    assert not verify_chain([root_cert, replace(rotated, public_key=root_cert.public_key)])[0]
    assert not verify_chain([rotated])[0]
    assert verify_chain([]) == (False, None)

    with pytest.raises(BadPrevKey):
        gen_certificate(next_key, TTAG, 1, prev=(root_cert, next_key))


def test_certificate_bytes_and_archive(root_cert):
    """Binärformat ist umkehrbar, das Archiv hat exakt 714 Bytes."""
    assert Certificate.from_bytes(root_cert.to_bytes()) == root_cert
    archive = archive_certificate(root_cert)
    assert len(archive) == CERT_ARCHIVE_SIZE
    assert unarchive_certificate(archive) == root_cert
    with pytest.raises(DeserializationError):
        unarchive_certificate(b"PK" + bytes(100))
    with pytest.raises(DeserializationError):
        Certificate.from_bytes(root_cert.to_bytes()[:-10])


def test_certificate_fits_single_staged_write(root_cert, rng, policy):
    """Zertifikat + Rezept in einer Unit: 892-Byte Writing-Tx, Rezept extrahiert das Archiv."""
    body = certificate_body(root_cert)
    archive, recipe = body[:CERT_ARCHIVE_SIZE], body[CERT_ARCHIVE_SIZE:].decode("ascii")
    assert len(recipe) == 73, f"Rezept hat {len(recipe)} Zeichen: {recipe}"
    assert "skip=56" in recipe and "count=717" in recipe

    units = fragment(body, UnitType.CERT, STAGED_CAPACITY, SeqAllocator())
    assert len(units) == 1
    payload = units[0].encode()
    assert len(payload) == 796

    funding = make_funding(rng)
    pair = build_staged_pair(payload, funding, policy, fee_rate=1.117)
    assert len(pair.writing.inputs[0].script_sig) == 805
    assert pair.writing.size == oracles.tx_size([805], [25]) == 892

    writing_fee = pair.staging.outputs[0].value - pair.writing.outputs[0].value
    assert writing_fee == fee_for(892, 1.117) == 997
    assert 995 <= writing_fee <= 1_005

    extracted = oracles.run_recipe(recipe, to_hex(pair.writing))
    assert extracted == archive, "Rezept liefert nicht das Archiv"
    assert unarchive_certificate(extracted) == root_cert


def _published(cert, height, rng):
    return PublishedCertificate(cert, height, rng.randbytes(32))


def test_resolve_chain_prefers_oldest_root(server_key, root_cert, rng):
    """Später publizierte fremde Roots und unsignierte Nachfolger werden ignoriert."""
    next_key = PrivateKey.random(rng)
    rotated = gen_certificate(next_key, TTAG, 3, prev=(root_cert, server_key))
    attacker = PrivateKey.random(rng)
    forged_root = gen_certificate(attacker, TTAG, 1)
    forged_next = gen_certificate(PrivateKey.random(rng), TTAG, 1, prev=(forged_root, attacker))
    bogus_successor = replace(
        gen_certificate(attacker, TTAG, 1), seq=1, signature=attacker.sign_compact(rotated.digest)
    )

    published = [
        _published(forged_next, 7, rng),
        _published(rotated, 4, rng),
        _published(forged_root, 6, rng),
        _published(bogus_successor, 2, rng),
        _published(root_cert, 1, rng),
    ]
    chain = resolve_certificate_chain(published)
    assert [p.certificate for p in chain] == [root_cert, rotated]
    assert certificate_at(chain, 1) == root_cert
    assert certificate_at(chain, 3) == root_cert
    assert certificate_at(chain, 9) == rotated
    assert certificate_at(chain, 0) is None and certificate_at(chain, None) is None
    assert resolve_certificate_chain([_published(rotated, 1, rng)]) == []


# ---------- Registrierung ----------


def test_registration_layout(root_cert, rng, policy):
    """CREG: vier Slots à 33 Bytes, 84 Bytes Chiffrat, 19 Bytes Padding, logische Länge 98."""
    funding = make_funding(rng)
    message, pairs, record = client_register(root_cert, funding, 50_000, rng, policy=policy)

    assert len(message.ciphertext) == CIPHERTEXT_LEN == 84
    assert CREG_PAD == 19 and message.logical_length == 98
    assert len(message.blocks()) == 3 and len(message.pk_c) == 33

    slots = []
    for pair in pairs:
        assert [o.kind for o in pair.staging.outputs] == list(CREG_TEMPLATE)
        raw = pair.redeem_script.raw
        assert len(raw) == 105 and raw[-1] == 0xAE
        position = signer_position(pair.writing)
        assert position == pair.slots.real_position
        slots += [k for i, k in enumerate(pair.slots.keys()) if i != position]
    assert len(slots) == 4 and sum(len(s) for s in slots) == 132
    assert slots[0] == message.pk_c

    deposit_out = pairs[1].staging.outputs[CREG_TEMPLATE.index("p2pkh")]
    assert deposit_out.value == 50_000 == record.credit
    assert pairs[1].staging.inputs[0].prevout.txid == pairs[0].staging_txid

    resolver = resolver_for(funding, pairs[0].staging, pairs[1].staging)
    for pair in pairs:
        for tx in (pair.staging, pair.writing):
            report = validate_standard(tx, resolver, policy)
            assert report.passed, f"Relay-Regeln verletzt: {report.failures}"


def test_client_register_rejects_non_positive_deposit(root_cert, rng, policy):
    with pytest.raises(ValueError):
        client_register(root_cert, make_funding(rng), 0, rng, policy=policy)


def test_client_register_warns_on_small_deposit(root_cert, rng, policy, caplog):
    """Deposit unter einer vollen Writing-Tx bei cert.fee_rate wird gemeldet, aber gebaut."""
    reply_cost = min_reply_cost(root_cert)
    assert reply_cost == staged_writing_size(STAGED_CAPACITY) * root_cert.fee_rate

    with caplog.at_level(logging.WARNING, logger="tithonus.security"):
        _, _, record = client_register(root_cert, make_funding(rng), reply_cost - 1, rng, policy=policy)
    assert record.credit == reply_cost - 1
    assert any("Deposit" in r.getMessage() for r in caplog.records), "keine Warnung für zu kleines Deposit"

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="tithonus.security"):
        client_register(root_cert, make_funding(rng), reply_cost, rng, policy=policy)
    assert not [r for r in caplog.records if "Deposit" in r.getMessage()]


def test_server_recovers_registration(server_key, root_cert, rng, policy):
    """Server findet Record und Deposit; bekannte pk_c werden übersprungen."""
    _, pairs, record = client_register(root_cert, make_funding(rng), 50_000, rng, policy=policy)
    txs = [tx for p in pairs for tx in (p.staging, p.writing)]
    rng.shuffle(txs)

    matches = scan_registrations(txs, server_key, TTAG)
    assert len(matches) == 1
    match = matches[0]
    assert match.record == record
    assert match.deposit.value == 50_000
    assert match.deposit.script_pubkey == p2pkh_script(hash160(match.sk_fee.public_key))
    assert obfuscate_payment(match.deposit) == match.deposit

    assert scan_registrations(txs, server_key, TTAG, known={record.pk_c}) == []
    assert server_scan_creg(txs, PrivateKey.random(rng), TTAG) == []
    assert server_scan_creg(txs, server_key, bytes(16)) == []


def test_bit_flips_never_open_a_registration(root_cert, policy):
    """Jedes einzeln gekippte Chiffrat-Bit lässt Präfix- oder Deposit-Prüfung scheitern."""
    rng = random.Random(1010)
    false_accepts = flips = 0
    for _ in range(15):
        message, pairs, record = client_register(root_cert, make_funding(rng), 10_000, rng, policy=policy)
        deposit_hash = pairs[1].staging.outputs[CREG_TEMPLATE.index("p2pkh")].script_pubkey.hash20()
        assert open_registration(record.k1, message.pk_c, message.ciphertext, TTAG, deposit_hash) is not None
        for bit in range(8 * CIPHERTEXT_LEN):
            flipped = bytearray(message.ciphertext)
            flipped[bit // 8] ^= 1 << (bit % 8)
            flips += 1
            if open_registration(record.k1, message.pk_c, bytes(flipped), TTAG, deposit_hash) is not None:
                false_accepts += 1
    assert flips == 10_080
    assert false_accepts == 0, f"{false_accepts} gekippte Chiffrate akzeptiert"


def test_re_registration_yields_independent_records(server_key, root_cert, rng, policy):
    """Zwei Registrierungen desselben Nutzers ergeben unabhängige Sessions."""
    first = client_register(root_cert, make_funding(rng), 20_000, rng, policy=policy)
    second = client_register(root_cert, make_funding(rng), 30_000, rng, policy=policy)
    txs = [tx for reg in (first, second) for p in reg[1] for tx in (p.staging, p.writing)]
    records = {r.pk_c: r for r in server_scan_creg(txs, server_key, TTAG)}
    assert set(records) == {first[2].pk_c, second[2].pk_c}
    assert records[first[2].pk_c].k1 != records[second[2].pk_c].k1
    assert records[second[2].pk_c].credit == 30_000


def _honest_linked_pair(rng, template, real_keys, slots=None):
    funding = make_funding(rng, value=rng.randrange(200_000, 2_000_000))
    link_key = rng.choice(real_keys)
    first = build_multisig_pair(
        rng.randbytes(56),
        rng.choice(real_keys),
        funding,
        template,
        rng,
        slots=slots() if slots else None,
        link_script=p2pkh_script(hash160(link_key.public_key)),
        policy=POLICY,
    )
    second = build_multisig_pair(
        rng.randbytes(56),
        rng.choice(real_keys),
        first.output_funding(template.index("p2pkh"), link_key),
        template,
        rng,
        slots=slots() if slots else None,
        policy=POLICY,
    )
    return [first.staging, first.writing, second.staging, second.writing]


def test_scan_has_no_false_positives_in_honest_corpus(server_key, root_cert, policy):
    """Zehn Registrierungen zwischen vielen ehrlichen verketteten Multisig-Paaren: genau zehn Treffer."""
    rng = random.Random(5150)
    count = int(os.getenv("TITHONUS_HONEST_PAIRS", "5000"))
    real_keys = [PrivateKey.random(rng) for _ in range(16)]
    corpus = []
    for _ in range(count):
        corpus += _honest_linked_pair(rng, CREG_TEMPLATE, real_keys)

    expected = set()
    for _ in range(10):
        _, pairs, record = client_register(root_cert, make_funding(rng), 10_000, rng, policy=policy)
        corpus += [tx for p in pairs for tx in (p.staging, p.writing)]
        expected.add(record.pk_c)
    rng.shuffle(corpus)

    assert len(find_linked_pairs(corpus, CREG_TEMPLATE)) == count + 10
    found = {m.record.pk_c for m in scan_registrations(corpus, server_key, TTAG)}
    assert found == expected, f"{len(found - expected)} Fehltreffer, {len(expected - found)} übersehen"


def _sig_free_size(tx):
    raw = serialize(tx)
    signatures = sum(
        len(data) + 1
        for txin in tx.inputs
        for _, data in txin.script_sig.ops
        if data and oracles.is_der_signature(data)
    )
    return len(raw) - signatures


def test_protocol_transactions_look_like_honest_multisig(root_cert, rng, policy):
    """CREG und REQ sind strukturell nicht von ehrlichen 1-of-3 Paaren zu unterscheiden."""
    protocol = []
    _, _, record = client_register(root_cert, make_funding(rng), 50_000, rng, policy=policy)
    for _ in range(125):
        _, pairs, _ = client_register(root_cert, make_funding(rng), 50_000, rng, policy=policy)
        protocol += [tx for p in pairs for tx in (p.staging, p.writing)]
    for i in range(125):
        _, pairs, record = build_request(
            record, root_cert, f"https://example.org/{i}", Selector(0, SEL_ALL), make_funding(rng), rng, policy=policy
        )
        protocol += [tx for p in pairs for tx in (p.staging, p.writing)]

    real_keys = [PrivateKey.random(rng) for _ in range(8)]
    honest = []
    for i in range(250):
        template = CREG_TEMPLATE if i % 2 else REQ_TEMPLATE
        honest += _honest_linked_pair(rng, template, real_keys, slots=lambda: [random_pubkey(rng), random_pubkey(rng)])

    assert len(protocol) == len(honest) == 1_000
    protocol_shapes = {oracles.tx_skeleton(serialize(tx)) for tx in protocol}
    honest_shapes = {oracles.tx_skeleton(serialize(tx)) for tx in honest}
    assert protocol_shapes == honest_shapes, "Strukturklassen unterscheiden sich"

    protocol_sizes = np.unique([_sig_free_size(tx) for tx in protocol])
    honest_sizes = np.unique([_sig_free_size(tx) for tx in honest])
    assert np.array_equal(protocol_sizes, honest_sizes), f"{protocol_sizes} vs {honest_sizes}"
