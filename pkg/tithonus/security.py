"""
Sicherheits-Schicht: Zertifikatskette, ECIES-artige Registrierung (CREG) über
getarnte Multisig-Paare, Session-Schlüssel, Session-Tags und Server-Scan.
"""

from __future__ import annotations

import io
import logging
import math
import random
import struct
import zipfile
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.kdf.x963kdf import X963KDF

from chain.config import FeePolicy
from chain.embedding import (
    FORBIDDEN_DATA,
    STAGED_CAPACITY,
    StagedPair,
    build_multisig_pair,
    embed_pubkey,
    extract_multisig_slots,
    extract_pubkey,
    staged_chunks,
    staged_script_sig,
    staged_writing_size,
)
from chain.errors import (
    BadLength,
    TithonusError,
    BadPrevKey,
    DeserializationError,
    ForbiddenCiphertext,
    MalformedKey,
    NotMultisig,
    PointAtInfinity,
)
from chain.hashing import hash160, sha256
from chain.script import Script, p2pkh_script, push_opcode
from chain.secp256k1 import PrivateKey, ecdh_x, verify_compact
from chain.signing import verify_input
from chain.txmodel import OutPoint, Transaction, TxOutput, txid, varint_size
from chain.wallet import Funding
from simnet.view import ChainView
from tithonus.chaining import FIRST_HEADER, UnitType, drain, iter_units, open_cursor
from tithonus.rijndael import Rijndael, cbc_decrypt, cbc_encrypt

logger = logging.getLogger(__name__)

TTAG_LEN = 16
RCT_LEN = 16
TAG_LEN = 20
BLOCK = 28
CREG_PAD = 19
CIPHERTEXT_LEN = 3 * BLOCK  # 84
CERT_VERSION = 1
CERT_ARCHIVE_SIZE = 714
CERT_MEMBER = "tithonus.cert"

CREG_TEMPLATE = ("p2pkh", "p2sh")
REQ_TEMPLATE = ("p2sh", "p2pkh")


# ---------- Zertifikate ----------


@dataclass(frozen=True)
class CipherSuite:
    key_agreement: str = "ecdh-secp256k1"
    kdf: str = "x963-sha256"
    hash: str = "sha256"
    cipher: str = "rijndael-224-256-cbc"
    mac: str = "hmac-sha256-160"

    def names(self) -> tuple[str, ...]:
        return (self.key_agreement, self.kdf, self.hash, self.cipher, self.mac)


DEFAULT_SUITE = CipherSuite()


@dataclass(frozen=True)
class Certificate:
    """
    Binärformat (big-endian, versioniert):
      version u8 | seq u32 | public_key 33 | ttag 16 | fee_rate u32 |
      5 × (u8 len | ascii) | u8 len | dir_marker | signature 64
    Die Signatur deckt alle vorherigen Felder (sha256).
    """

    seq: int
    public_key: bytes
    ttag: bytes
    fee_rate: int
    suite: CipherSuite = DEFAULT_SUITE
    dir_marker: Optional[bytes] = None
    signature: bytes = field(default=b"", repr=False)

    def __post_init__(self) -> None:
        if len(self.public_key) != 33:
            raise MalformedKey(f"Zertifikatsschlüssel braucht 33 Bytes, nicht {len(self.public_key)}")
        if len(self.ttag) != TTAG_LEN:
            raise BadLength(f"ttag braucht {TTAG_LEN} Bytes, nicht {len(self.ttag)}")
        if self.dir_marker is not None and len(self.dir_marker) != 20:
            raise BadLength("dir_marker muss ein 20-Byte Hash sein")

    def signed_bytes(self) -> bytes:
        out = struct.pack(">BI", CERT_VERSION, self.seq) + self.public_key + self.ttag
        out += struct.pack(">I", self.fee_rate)
        for name in self.suite.names():
            raw = name.encode("ascii")
            out += bytes([len(raw)]) + raw
        marker = self.dir_marker or b""
        return out + bytes([len(marker)]) + marker

    @property
    def digest(self) -> bytes:
        return sha256(self.signed_bytes())

    def to_bytes(self) -> bytes:
        return self.signed_bytes() + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Certificate":
        try:
            version, seq = struct.unpack_from(">BI", raw)
            if version != CERT_VERSION:
                raise DeserializationError(f"Unbekannte Zertifikatsversion {version}")
            pos = 5
            public_key, ttag = raw[pos : pos + 33], raw[pos + 33 : pos + 49]
            (fee_rate,) = struct.unpack_from(">I", raw, pos + 49)
            pos += 53
            names = []
            for _ in range(5):
                n = raw[pos]
                names.append(raw[pos + 1 : pos + 1 + n].decode("ascii"))
                pos += 1 + n
            n = raw[pos]
            marker = raw[pos + 1 : pos + 1 + n] or None
            pos += 1 + n
            signature = raw[pos : pos + 64]
        except (struct.error, IndexError, UnicodeDecodeError) as exc:
            raise DeserializationError(f"Zertifikat nicht lesbar: {exc}") from exc
        if len(signature) != 64:
            raise DeserializationError("Zertifikat ohne vollständige Signatur")
        return cls(seq, public_key, ttag, fee_rate, CipherSuite(*names), marker, signature)

    def marker_script(self) -> Optional[Script]:
        return p2pkh_script(self.dir_marker) if self.dir_marker else None


def gen_certificate(
    key: PrivateKey,
    ttag: bytes,
    fee_rate: int,
    prev: Optional[tuple[Certificate, PrivateKey]] = None,
    *,
    suite: CipherSuite = DEFAULT_SUITE,
    dir_marker: Optional[bytes] = None,
) -> Certificate:
    """Root (seq 0) ist selbst signiert; jedes weitere Zertifikat signiert der Vorgänger-Schlüssel."""
    if prev is None:
        signer, seq = key, 0
    else:
        prev_cert, signer = prev
        if signer.public_key != prev_cert.public_key:
            raise BadPrevKey(f"Schlüssel passt nicht zu Zertifikat seq {prev_cert.seq}")
        seq = prev_cert.seq + 1
    unsigned = Certificate(seq, key.public_key, ttag, fee_rate, suite, dir_marker)
    return replace(unsigned, signature=signer.sign_compact(unsigned.digest))


def verify_chain(certs: Sequence[Certificate]) -> tuple[bool, Optional[Certificate]]:
    if not certs:
        return False, None
    root = certs[0]
    if root.seq != 0 or not verify_compact(root.public_key, root.digest, root.signature):
        return False, None
    for prev, cert in zip(certs, certs[1:]):
        if cert.seq != prev.seq + 1 or not verify_compact(prev.public_key, cert.digest, cert.signature):
            return False, None
    return True, certs[-1]


def archive_certificate(cert: Certificate, target_size: int = CERT_ARCHIVE_SIZE) -> bytes:
    """Deterministisches ZIP mit dem Zertifikat, über den Archiv-Kommentar auf target_size aufgefüllt."""

    def build(comment: bytes) -> bytes:
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as archive:
            info = zipfile.ZipInfo(CERT_MEMBER, date_time=(1980, 1, 1, 0, 0, 0))
            info.create_system = 3
            info.external_attr = 0o644 << 16
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, cert.to_bytes())
            archive.comment = comment
        return buffer.getvalue()

    bare = build(b"")
    if len(bare) > target_size:
        raise BadLength(f"Archiv ({len(bare)} Bytes) größer als Zielgröße {target_size}")
    return build(b" " * (target_size - len(bare)))


def unarchive_certificate(data: bytes) -> Certificate:
    """Liest das Zertifikat aus einem Archiv; nachfolgende Bytes (Rezept) werden ignoriert."""
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as archive:
            return Certificate.from_bytes(archive.read(CERT_MEMBER))
    except (zipfile.BadZipFile, KeyError) as exc:
        raise DeserializationError(f"Kein Zertifikatsarchiv: {exc}") from exc


def _archive_layout(archive_len: int, payload_len: int) -> tuple[int, int, list[str]]:
    """(Byte-Offset in der Writing-Tx, Länge inkl. Trenner, Trenner-Hex) für das Archiv."""
    outer, _ = staged_chunks(bytes(payload_len))
    script_sig_len = len(staged_script_sig(bytes(payload_len))[0])
    start = 4 + 1 + 36 + varint_size(script_sig_len) + len(push_opcode(outer[0])) + FIRST_HEADER
    end = FIRST_HEADER + archive_len
    separators, boundary = [], 0
    for chunk in outer:
        if 0 < boundary < end:
            separators.append(push_opcode(chunk).hex())
        boundary += len(chunk)
    count = archive_len + sum(len(s) // 2 for s in separators)
    return start, count, separators


def certificate_recipe(archive_len: int, payload_len: int) -> str:
    skip, count, separators = _archive_layout(archive_len, payload_len)
    recipe = f"echo rawTxn|dd skip={skip} bs=2 count={count}"
    if separators:
        recipe += "|sed '" + ";".join(f"s/{s}//" for s in separators) + "'"
    return recipe + "|xxd -r -p>cert.zip"


def certificate_body(cert: Certificate, target_size: int = CERT_ARCHIVE_SIZE) -> bytes:
    """Archiv plus Shell-Rezept zur Extraktion aus der rohen Writing-Tx."""
    archive = archive_certificate(cert, target_size)
    recipe = b""
    for _ in range(4):
        payload_len = FIRST_HEADER + len(archive) + len(recipe)
        updated = certificate_recipe(len(archive), payload_len).encode("ascii")
        if updated == recipe:
            break
        recipe = updated
    return archive + recipe


# ---------- Session ----------


@dataclass(frozen=True)
class SessionKeys:
    k1: bytes
    k2: bytes
    shared_x: bytes = field(repr=False)


def kdf_x963(shared_x: bytes, length: int = 64) -> bytes:
    return X963KDF(algorithm=hashes.SHA256(), length=length, sharedinfo=None).derive(shared_x)


def derive_session(local_key: PrivateKey, remote_pub: bytes, suite: CipherSuite = DEFAULT_SUITE) -> SessionKeys:
    if suite.kdf != DEFAULT_SUITE.kdf or suite.key_agreement != DEFAULT_SUITE.key_agreement:
        raise MalformedKey(f"Nicht unterstützte Suite: {suite}")
    shared_x = ecdh_x(local_key, remote_pub)
    material = kdf_x963(shared_x)
    return SessionKeys(material[:32], material[32:], shared_x)


@lru_cache(maxsize=1024)
def block_cipher(k1: bytes) -> Rijndael:
    return Rijndael(k1, block_size=BLOCK)


def cipher_iv(iv_source: bytes) -> bytes:
    return sha256(iv_source)[:BLOCK]


def cipher_encrypt(k1: bytes, iv_source: bytes, plaintext: bytes) -> bytes:
    return cbc_encrypt(block_cipher(k1), cipher_iv(iv_source), plaintext)


def cipher_decrypt(k1: bytes, iv_source: bytes, ciphertext: bytes) -> bytes:
    return cbc_decrypt(block_cipher(k1), cipher_iv(iv_source), ciphertext)


def counter_bytes(c: int) -> bytes:
    return c.to_bytes(8, "big")


def tag(k2: bytes, r_ct: bytes, c: int) -> bytes:
    mac = hmac.HMAC(k2, hashes.SHA256())
    mac.update(r_ct + counter_bytes(c))
    return mac.finalize()[:TAG_LEN]


# ---------- Client-Record ----------


@dataclass(frozen=True)
class ClientRecord:
    pk_c: bytes
    k1: bytes = field(repr=False)
    k2: bytes = field(repr=False)
    r_ct: bytes = field(repr=False)
    counter: int = 1
    credit: int = 0
    current_tag: bytes = b""

    def __post_init__(self) -> None:
        expected = tag(self.k2, self.r_ct, self.counter)
        if not self.current_tag:
            object.__setattr__(self, "current_tag", expected)
        elif self.current_tag != expected:
            raise ValueError("current_tag passt nicht zu Zähler und Schlüssel")
        if self.credit < 0:
            raise ValueError(f"Guthaben darf nicht negativ werden: {self.credit}")

    @property
    def record_id(self) -> str:
        return self.pk_c.hex()

    def tag_at(self, c: int) -> bytes:
        return tag(self.k2, self.r_ct, c)

    def advanced(self) -> "ClientRecord":
        return replace(self, counter=self.counter + 1, current_tag=b"")

    def charged(self, fee: int) -> "ClientRecord":
        return replace(self, credit=self.credit - fee)

    def to_row(self) -> dict:
        return {
            "pk_c": self.pk_c.hex(),
            "k1": self.k1.hex(),
            "k2": self.k2.hex(),
            "r_ct": self.r_ct.hex(),
            "counter": self.counter,
            "credit": self.credit,
            "current_tag": self.current_tag.hex(),
        }

    @classmethod
    def from_row(cls, row: dict) -> "ClientRecord":
        return cls(
            bytes.fromhex(row["pk_c"]),
            bytes.fromhex(row["k1"]),
            bytes.fromhex(row["k2"]),
            bytes.fromhex(row["r_ct"]),
            int(row["counter"]),
            int(row["credit"]),
            bytes.fromhex(row["current_tag"]),
        )


# ---------- Registrierung ----------


@dataclass(frozen=True)
class RegistrationMessage:
    pk_c: bytes
    ciphertext: bytes

    def __post_init__(self) -> None:
        if len(self.pk_c) != 33 or len(self.ciphertext) != CIPHERTEXT_LEN:
            raise BadLength("CREG braucht 33 Bytes pk_c und 84 Bytes Chiffrat")

    @property
    def logical_length(self) -> int:
        """pk_c plus die 65 Bytes ttag, CREG, r_ct, sk_fee (ohne Padding)."""
        return len(self.pk_c) + TTAG_LEN + 1 + RCT_LEN + 32

    def blocks(self) -> list[bytes]:
        return [self.ciphertext[i : i + BLOCK] for i in range(0, CIPHERTEXT_LEN, BLOCK)]


def creg_plaintext(ttag: bytes, r_ct: bytes, sk_fee: PrivateKey, padding: bytes) -> bytes:
    return ttag + bytes([UnitType.CREG]) + r_ct + sk_fee.to_bytes() + padding


def min_reply_cost(cert: Certificate) -> int:
    """Gebühr für eine volle Writing-Tx beim fee_rate des Zertifikats."""
    return math.ceil(staged_writing_size(STAGED_CAPACITY) * cert.fee_rate)


def encrypt_blocks(
    k1: bytes,
    iv_source: bytes,
    build: Callable[[random.Random], bytes],
    rng: random.Random,
    tries: int = 8,
) -> tuple[bytes, bytes]:
    """Verschlüsselt build(padding) neu, bis kein 28-Byte Block den verbotenen Wert trifft."""
    for _ in range(tries):
        plaintext = build(rng)
        ciphertext = cipher_encrypt(k1, iv_source, plaintext)
        if all(ciphertext[i : i + BLOCK] != FORBIDDEN_DATA for i in range(0, len(ciphertext), BLOCK)):
            return plaintext, ciphertext
    raise ForbiddenCiphertext("Chiffrat trifft wiederholt den verbotenen Block")


def client_register(
    cert: Certificate,
    funding: Funding,
    fee_deposit: int,
    rng: random.Random,
    *,
    policy: FeePolicy,
    fee_rate: Optional[float] = None,
    change_script: Optional[Script] = None,
) -> tuple[RegistrationMessage, list[StagedPair], ClientRecord]:
    """
    Zwei verkettete Multisig-Paare mit Staging-Outputs (p2pkh, p2sh).
    Slots: pk_c, dann drei getarnte Schlüssel mit je 28 Bytes Chiffrat.
    Das zweite Staging zahlt fee_deposit an hash160(pk_fee).
    """
    if fee_deposit <= 0:
        raise ValueError(f"fee_deposit muss positiv sein: {fee_deposit}")
    reply_cost = min_reply_cost(cert)
    if fee_deposit < reply_cost:
        logger.warning(
            "[Register] Deposit %d sat deckt keine Antwort bei %d sat/B (mind. %d sat)",
            fee_deposit,
            cert.fee_rate,
            reply_cost,
        )
    sk_c = PrivateKey.random(rng)
    pk_c = sk_c.public_key
    session = derive_session(sk_c, cert.public_key, cert.suite)
    r_ct = rng.randbytes(RCT_LEN)
    sk_fee = PrivateKey.random(rng)

    _, ciphertext = encrypt_blocks(
        session.k1, pk_c, lambda r: creg_plaintext(cert.ttag, r_ct, sk_fee, r.randbytes(CREG_PAD)), rng
    )
    message = RegistrationMessage(pk_c, ciphertext)
    camouflaged = [embed_pubkey(block, rng) for block in message.blocks()]

    link_key = PrivateKey.random(rng)
    first = build_multisig_pair(
        b"",
        PrivateKey.random(rng),
        funding,
        CREG_TEMPLATE,
        rng,
        policy=policy,
        fee_rate=fee_rate,
        slots=[pk_c, camouflaged[0]],
        link_script=p2pkh_script(hash160(link_key.public_key)),
        writing_script=change_script,
    )
    second = build_multisig_pair(
        b"",
        PrivateKey.random(rng),
        first.output_funding(CREG_TEMPLATE.index("p2pkh"), link_key),
        CREG_TEMPLATE,
        rng,
        policy=policy,
        fee_rate=fee_rate,
        slots=camouflaged[1:],
        link_script=p2pkh_script(hash160(sk_fee.public_key)),
        p2pkh_value=fee_deposit,
        writing_script=change_script,
    )
    record = ClientRecord(pk_c, session.k1, session.k2, r_ct, counter=1, credit=fee_deposit)
    logger.info("[CREG] Registrierung für %s… gebaut (Deposit %d sat)", pk_c.hex()[:16], fee_deposit)
    return message, [first, second], record


# ---------- Server-Scan ----------


@dataclass(frozen=True)
class LinkedPair:
    """Zwei verkettete Staging/Writing-Paare: staging2 gibt den p2pkh-Output von staging1 aus."""

    staging1: Transaction
    writing1: Transaction
    staging2: Transaction
    writing2: Transaction


def find_linked_pairs(transactions: Iterable[Transaction], template: Sequence[str]) -> list[LinkedPair]:
    template = tuple(template)
    p2sh_index, link_index = template.index("p2sh"), template.index("p2pkh")
    spender: dict[OutPoint, Transaction] = {}
    candidates: list[tuple[bytes, Transaction]] = []
    for tx in transactions:
        for txin in tx.inputs:
            spender.setdefault(txin.prevout, tx)
        if len(tx.outputs) == 2 and tuple(o.kind for o in tx.outputs) == template:
            candidates.append((txid(tx), tx))

    templated = {tid for tid, _ in candidates}
    pairs = []
    for tid, staging1 in candidates:
        staging2 = spender.get(OutPoint(tid, link_index))
        if staging2 is None or txid(staging2) not in templated:
            continue
        writing1 = spender.get(OutPoint(tid, p2sh_index))
        writing2 = spender.get(OutPoint(txid(staging2), p2sh_index))
        if writing1 is None or writing2 is None:
            continue
        pairs.append(LinkedPair(staging1, writing1, staging2, writing2))
    return pairs


def signer_position(writing: Transaction) -> Optional[int]:
    """Slot, dessen Schlüssel die Multisig-Signatur trägt; None, falls keiner passt."""
    try:
        keys = extract_multisig_slots(writing)
    except NotMultisig:
        return None
    ops = writing.inputs[0].script_sig.ops
    if len(ops) != 3 or ops[1][1] is None:
        return None
    signature, redeem = ops[1][1], Script(ops[2][1])
    for position, key in enumerate(keys):
        if verify_input(writing, 0, key, signature, redeem):
            return position
    return None


def data_slots(keys: Sequence[bytes], signer: int) -> list[bytes]:
    return [k for i, k in enumerate(keys) if i != signer]


@dataclass(frozen=True)
class RegistrationMatch:
    record: ClientRecord
    sk_fee: PrivateKey
    deposit: Funding


class _SessionCache:
    """ECDH pro Kandidat pk_c nur einmal ausrechnen."""

    def __init__(self, server_key: PrivateKey, suite: CipherSuite) -> None:
        self.server_key = server_key
        self.suite = suite
        self._cache: dict[bytes, Optional[SessionKeys]] = {}

    def get(self, pk_c: bytes) -> Optional[SessionKeys]:
        if pk_c not in self._cache:
            try:
                self._cache[pk_c] = derive_session(self.server_key, pk_c, self.suite)
            except (MalformedKey, PointAtInfinity):
                self._cache[pk_c] = None
        return self._cache[pk_c]


def open_registration(
    k1: bytes, pk_c: bytes, ciphertext: bytes, ttag: bytes, deposit_hash: bytes
) -> Optional[tuple[bytes, PrivateKey]]:
    """(r_ct, sk_fee), falls Präfix (ttag, CREG) und Deposit-Hash passen."""
    plaintext = cipher_decrypt(k1, pk_c, ciphertext)
    if plaintext[: TTAG_LEN + 1] != ttag + bytes([UnitType.CREG]):
        return None
    r_ct = plaintext[TTAG_LEN + 1 : TTAG_LEN + 1 + RCT_LEN]
    try:
        sk_fee = PrivateKey.from_bytes(plaintext[TTAG_LEN + 1 + RCT_LEN : TTAG_LEN + 1 + RCT_LEN + 32])
    except MalformedKey:
        return None
    if hash160(sk_fee.public_key) != deposit_hash:
        return None
    return r_ct, sk_fee


def _first_block_matches(session: SessionKeys, pk_c: bytes, block: bytes, prefix: bytes) -> bool:
    cipher = block_cipher(session.k1)
    first = bytes(a ^ b for a, b in zip(cipher.decrypt_block(block), cipher_iv(pk_c)))
    return first.startswith(prefix)


def scan_registrations(
    transactions: Iterable[Transaction],
    server_key: PrivateKey,
    ttag: bytes,
    *,
    suite: CipherSuite = DEFAULT_SUITE,
    known: Optional[set[bytes]] = None,
) -> list[RegistrationMatch]:
    prefix = ttag + bytes([UnitType.CREG])
    sessions = _SessionCache(server_key, suite)
    known = known or set()
    matches, candidates, dropped = [], 0, 0
    for pair in find_linked_pairs(transactions, CREG_TEMPLATE):
        try:
            keys1 = extract_multisig_slots(pair.writing1)
            keys2 = extract_multisig_slots(pair.writing2)
        except NotMultisig:
            continue
        candidates += 1
        for signer1 in range(3):
            pk_c, slot1 = data_slots(keys1, signer1)
            session = sessions.get(pk_c)
            if session is None:
                continue
            try:
                block0 = extract_pubkey(slot1)
            except MalformedKey:
                continue
            if not _first_block_matches(session, pk_c, block0, prefix):
                continue
            signer2 = signer_position(pair.writing2)
            if signer2 is None:
                dropped += 1
                break
            slot2, slot3 = data_slots(keys2, signer2)
            deposit_out: TxOutput = pair.staging2.outputs[CREG_TEMPLATE.index("p2pkh")]
            opened = open_registration(
                session.k1,
                pk_c,
                block0 + extract_pubkey(slot2) + extract_pubkey(slot3),
                ttag,
                deposit_out.script_pubkey.hash20() or b"",
            )
            if opened is None:
                dropped += 1
                logger.info("[Scan] CREG verworfen: Deposit-Hash passt nicht (%s…)", pk_c.hex()[:16])
                break
            if pk_c in known:
                break
            r_ct, sk_fee = opened
            record = ClientRecord(pk_c, session.k1, session.k2, r_ct, counter=1, credit=deposit_out.value)
            deposit = Funding(OutPoint(txid(pair.staging2), CREG_TEMPLATE.index("p2pkh")), deposit_out.value, sk_fee)
            matches.append(RegistrationMatch(record, sk_fee, deposit))
            known.add(pk_c)
            break
    logger.debug("[Scan] %d CREG-Kandidaten, %d Registrierungen, %d verworfen", candidates, len(matches), dropped)
    return matches


def server_scan_creg(
    transactions: Iterable[Transaction], server_key: PrivateKey, ttag: bytes, suite: CipherSuite = DEFAULT_SUITE
) -> list[ClientRecord]:
    return [m.record for m in scan_registrations(transactions, server_key, ttag, suite=suite)]


def obfuscate_payment(funding: Funding) -> Funding:
    """Hook für Zahlungsverschleierung beim Einlösen des Deposits; absichtlich ohne Wirkung."""
    return funding


# ---------- Zertifikats-Discovery ----------


@dataclass(frozen=True)
class PublishedCertificate:
    certificate: Certificate
    height: Optional[int]
    leading_txid: bytes


def discover_certificates(view: ChainView) -> list[PublishedCertificate]:
    """Alle lesbaren CERT-Ströme in Kettenreihenfolge (Mempool zuletzt, height None)."""
    heights = view.heights()
    transactions = list(view.transactions())
    found = []
    for tx in transactions:
        for unit in iter_units([tx]):
            if unit.unit_type != UnitType.CERT or not unit.is_first:
                continue
            try:
                body = unit.body if unit.length == 1 else drain(open_cursor(unit), iter_units(transactions))
                cert = unarchive_certificate(body)
            except TithonusError as exc:
                logger.debug("[Cert] CERT-Unit übersprungen: %s", exc)
                continue
            tx_id = txid(tx)
            found.append(PublishedCertificate(cert, heights.get(tx_id), tx_id))
    return found


def resolve_certificate_chain(published: Sequence[PublishedCertificate]) -> list[PublishedCertificate]:
    """Ältester gültiger Root, danach jeweils das erste Zertifikat, das der Vorgänger signiert hat."""
    ordered = sorted(
        enumerate(published), key=lambda item: (item[1].height is None, item[1].height or 0, item[0])
    )
    candidates = [p for _, p in ordered]
    root = next(
        (
            p
            for p in candidates
            if p.certificate.seq == 0 and verify_chain([p.certificate])[0]
        ),
        None,
    )
    if root is None:
        return []
    chain = [root]
    while True:
        last = chain[-1].certificate
        successor = next(
            (
                p
                for p in candidates
                if p.certificate.seq == last.seq + 1
                and verify_compact(last.public_key, p.certificate.digest, p.certificate.signature)
            ),
            None,
        )
        if successor is None:
            return chain
        chain.append(successor)


def certificate_at(chain: Sequence[PublishedCertificate], height: Optional[int]) -> Optional[Certificate]:
    """Neuestes Zertifikat, das bei height bereits gemined war."""
    if height is None:
        return None
    valid = [p.certificate for p in chain if p.height is not None and p.height <= height]
    return valid[-1] if valid else None
