import random

import numpy as np
import pytest
from ecdsa import SECP256k1, VerifyingKey

from chain.embedding import (
    FORBIDDEN_DATA,
    MULTISIG_CAPACITY,
    SLOT_DATA,
    STAGED_CAPACITY,
    CamouflagedKey,
    WritingMethod,
    build_multisig_pair,
    build_op_return_write,
    build_staged_pair,
    capacity,
    carrier_payloads,
    embed_pubkey,
    extract_multisig_slots,
    extract_op_return_payload,
    extract_pubkey,
    extract_staged_payload,
    lifts_to_curve,
    op_return_write_size,
    staged_chunks,
    staged_writing_size,
)
from chain.errors import (
    ForbiddenCiphertext,
    InsufficientFunds,
    MalformedKey,
    NotAStagedWrite,
    NotMultisig,
    PayloadTooLarge,
)
from chain.secp256k1 import PrivateKey
from chain.signing import verify_input
from chain.txmodel import validate_standard
from tests import oracles
from tests.support import make_funding, resolver_for


# ---------- Staged Writes ----------


def test_staged_write_at_full_capacity(rng, policy):
    """1.635 Bytes ergeben einen scriptSig von genau 1.650 Bytes, die Writing-Tx ist relayfähig."""
    payload = rng.randbytes(STAGED_CAPACITY)
    funding = make_funding(rng)
    pair = build_staged_pair(payload, funding, policy)

    script_sig = pair.writing.inputs[0].script_sig
    assert len(script_sig) == 1_650, f"scriptSig hat {len(script_sig)} Bytes statt 1.650"
    assert pair.writing.size == 1_737 == staged_writing_size(STAGED_CAPACITY)
    assert pair.writing.size == oracles.tx_size([1_650], [25])
    assert extract_staged_payload(pair.writing) == payload

    resolver = resolver_for(funding, pair.staging)
    for tx in (pair.staging, pair.writing):
        report = validate_standard(tx, resolver, policy)
        assert report.passed, f"Relay-Regeln verletzt: {report.failures}"


def test_staged_write_one_byte_over_capacity(rng, policy):
    """1.636 Bytes passen in keinen Staged Write."""
    with pytest.raises(PayloadTooLarge):
        build_staged_pair(rng.randbytes(STAGED_CAPACITY + 1), make_funding(rng), policy)


@pytest.mark.parametrize("size", [1, 75, 519, 520, 521, 1_040, 1_559, 1_560, 1_561, 1_600])
def test_staged_roundtrip_for_chunk_boundaries(rng, policy, size):
    """Extraktion liefert die Payload an allen Chunk-Grenzen unverändert zurück."""
    payload = rng.randbytes(size)
    pair = build_staged_pair(payload, make_funding(rng), policy)
    assert extract_staged_payload(pair.writing) == payload, f"Payload mit {size} Bytes verändert"
    assert carrier_payloads(pair.writing) == [payload]
    assert pair.writing.size == staged_writing_size(size)


def test_staged_chunks_fill_from_left():
    """Drei 520-Byte-Chunks von links, Rest in den redeemScript."""
    outer, inner = staged_chunks(bytes(1_600))
    assert [len(c) for c in outer] == [520, 520, 520]
    assert len(inner) == 40
    outer, inner = staged_chunks(bytes(600))
    assert [len(c) for c in outer] == [520, 80] and inner is None


def test_staged_pair_links_writing_to_staging(rng, policy):
    """Die Writing-Tx gibt Output 0 der Staging-Tx aus."""
    pair = build_staged_pair(rng.randbytes(300), make_funding(rng), policy)
    prevout = pair.writing.inputs[0].prevout
    assert prevout.txid == pair.staging_txid and prevout.vout == 0
    assert pair.staging.outputs[0].kind == "p2sh"


def test_staged_pair_with_small_funding_fails(rng, policy):
    """Zu kleines Funding führt zu InsufficientFunds statt zu Dust-Outputs."""
    with pytest.raises(InsufficientFunds):
        build_staged_pair(rng.randbytes(1_000), make_funding(rng, value=2_000), policy)


def test_non_staged_inputs_are_rejected(rng, policy):
    """Ein normaler p2pkh-Input ist kein Staged Write."""
    pair = build_staged_pair(rng.randbytes(50), make_funding(rng), policy)
    with pytest.raises(NotAStagedWrite):
        extract_staged_payload(pair.staging)
    with pytest.raises(NotAStagedWrite):
        extract_staged_payload(pair.writing, index=3)
    assert carrier_payloads(pair.staging) == []


# ---------- Getarnte Schlüssel ----------


def test_embedding_mean_trials_and_validity():
    """10.000 Einbettungen: im Mittel etwa zwei Versuche, gleichverteilte Präfixe, jeder Schlüssel liegt auf der Kurve."""
    rng = random.Random(4242)
    trials, prefixes = [], []
    for _ in range(10_000):
        data = rng.randbytes(SLOT_DATA)
        key = embed_pubkey(data, rng)
        raw = key.to_bytes()
        assert len(raw) == 33 and raw[0] in (2, 3)
        assert oracles.lifts(raw), f"Schlüssel {raw.hex()} liegt nicht auf der Kurve"
        assert extract_pubkey(raw) == data
        trials.append(key.trials)
        prefixes.append(raw[0])
    mean = float(np.mean(trials))
    assert 1.9 <= mean <= 2.1, f"Mittlere Versuchszahl {mean:.3f} außerhalb [1.9, 2.1]"
    evens = int(np.sum(np.array(prefixes) == 2))
    assert abs(evens - 5_000) <= 3 * 50, f"Präfix 0x02 {evens}-mal, erwartet 5.000 ± 150"


def test_sequential_randomizer_matches_brute_force():
    """Im sequentiellen Modus ist R das kleinste passende R der unabhängigen Suche."""
    rng = random.Random(99)
    for _ in range(50):
        data = rng.randbytes(SLOT_DATA)
        key = embed_pubkey(data, rng, sequential=True)
        expected_r, expected_trials = oracles.brute_force_r(data)
        assert int.from_bytes(key.randomizer, "big") == expected_r
        assert key.trials == expected_trials


def test_embedded_keys_parse_as_secp256k1_points(rng):
    """Fremde Bibliothek akzeptiert die getarnten Schlüssel als Punkte."""
    for _ in range(20):
        raw = embed_pubkey(rng.randbytes(SLOT_DATA), rng).to_bytes()
        point = VerifyingKey.from_string(raw, curve=SECP256k1)
        assert point.to_string("compressed") == raw
        assert lifts_to_curve(raw)


def test_forbidden_and_malformed_slot_data(rng):
    """D = 2^224-1 ist verboten, falsche Längen und Präfixe sind MalformedKey."""
    with pytest.raises(ForbiddenCiphertext):
        embed_pubkey(FORBIDDEN_DATA, rng)
    with pytest.raises(MalformedKey):
        embed_pubkey(bytes(27), rng)
    with pytest.raises(MalformedKey):
        CamouflagedKey(4, bytes(SLOT_DATA), bytes(4))
    with pytest.raises(MalformedKey):
        CamouflagedKey(2, bytes(SLOT_DATA), b"\xff\xff\xff\xff")
    with pytest.raises(MalformedKey):
        extract_pubkey(b"\x04" + bytes(64))


# ---------- Multisig ----------


@pytest.mark.parametrize("template", [("p2pkh", "p2sh"), ("p2sh", "p2pkh")])
@pytest.mark.parametrize("position", [0, 1, 2])
def test_multisig_pair_carries_two_slots(rng, policy, template, position):
    """Zwei Slots tragen 56 Bytes, der echte Schlüssel signiert an seiner Position."""
    payload = rng.randbytes(MULTISIG_CAPACITY)
    real_key = PrivateKey.random(rng)
    funding = make_funding(rng)
    pair = build_multisig_pair(
        payload, real_key, funding, template, rng, policy=policy, real_position=position
    )

    p2sh_index = template.index("p2sh")
    assert [o.kind for o in pair.staging.outputs] == list(template)
    assert pair.writing.inputs[0].prevout.vout == p2sh_index

    keys = extract_multisig_slots(pair.writing)
    assert keys[position] == real_key.public_key
    data = b"".join(extract_pubkey(k) for i, k in enumerate(keys) if i != position)
    assert data == payload, "Slot-Daten weichen von der Payload ab"

    signature = pair.writing.inputs[0].script_sig.pushes()[1]
    assert verify_input(pair.writing, 0, real_key.public_key, signature, pair.redeem_script)

    resolver = resolver_for(funding, pair.staging)
    for tx in (pair.staging, pair.writing):
        report = validate_standard(tx, resolver, policy)
        assert report.passed, f"Relay-Regeln verletzt: {report.failures}"


def test_multisig_redeem_script_shape(rng, policy):
    """1-of-3 redeemScript: 105 Bytes, endet mit OP_CHECKMULTISIG."""
    pair = build_multisig_pair(
        rng.randbytes(40), PrivateKey.random(rng), make_funding(rng), ("p2pkh", "p2sh"), rng, policy=policy
    )
    raw = pair.redeem_script.raw
    assert len(raw) == 105 and raw[0] == 0x51 and raw[-2:] == b"\x53\xae"


def test_multisig_rejects_oversized_payload_and_unknown_template(rng, policy):
    """Mehr als 56 Bytes oder ein unbekanntes Template werden abgelehnt."""
    with pytest.raises(PayloadTooLarge):
        build_multisig_pair(
            bytes(57), PrivateKey.random(rng), make_funding(rng), ("p2pkh", "p2sh"), rng, policy=policy
        )
    with pytest.raises(ValueError):
        build_multisig_pair(
            bytes(10), PrivateKey.random(rng), make_funding(rng), ("p2sh", "p2sh"), rng, policy=policy
        )


def test_extract_multisig_slots_on_other_inputs(rng, policy):
    """Staged Writes und p2pkh-Inputs sind kein Multisig."""
    pair = build_staged_pair(rng.randbytes(100), make_funding(rng), policy)
    with pytest.raises(NotMultisig):
        extract_multisig_slots(pair.writing)
    with pytest.raises(NotMultisig):
        extract_multisig_slots(pair.staging)


# ---------- OP_RETURN ----------


def test_op_return_write_sizes(rng, policy):
    """80 Bytes ergeben 284 Bytes Tx, 44 Bytes 247 Bytes (mit Platzhalter-Signatur)."""
    assert op_return_write_size(80) == 284
    assert op_return_write_size(44) == 247
    tx = build_op_return_write(rng.randbytes(80), make_funding(rng), policy)
    assert extract_op_return_payload(tx) is not None and len(extract_op_return_payload(tx)) == 80
    assert abs(tx.size - 284) <= 2, f"Signierte Tx hat {tx.size} Bytes"


def test_capacities():
    assert capacity(WritingMethod.STAGED) == 1_635
    assert capacity("multisig") == 56
    assert capacity(WritingMethod.OP_RETURN) == 80
