from __future__ import annotations

import struct
from dataclasses import replace

from chain.hashing import hash160, sha256d
from chain.script import OP_0, Script, encode_push, p2pkh_script
from chain.secp256k1 import PrivateKey, verify_der
from chain.txmodel import Transaction, serialize

SIGHASH_ALL = 0x01

# Platzhalter für Größenschätzungen: längste übliche DER-Signatur (71 Bytes) plus Sighash-Byte
DUMMY_SIGNATURE = b"\x30" + bytes(70) + bytes([SIGHASH_ALL])


def legacy_sighash(tx: Transaction, index: int, script_code: Script, hashtype: int = SIGHASH_ALL) -> bytes:
    inputs = tuple(
        replace(txin, script_sig=script_code if i == index else Script())
        for i, txin in enumerate(tx.inputs)
    )
    stripped = replace(tx, inputs=inputs)
    return sha256d(serialize(stripped) + struct.pack("<I", hashtype))


def sign_input(tx: Transaction, index: int, key: PrivateKey, script_code: Script) -> bytes:
    """DER-Signatur mit angehängtem SIGHASH_ALL."""
    digest = legacy_sighash(tx, index, script_code)
    return key.sign_der(digest) + bytes([SIGHASH_ALL])


def verify_input(tx: Transaction, index: int, pubkey: bytes, signature: bytes, script_code: Script) -> bool:
    if not signature or signature[-1] != SIGHASH_ALL:
        return False
    return verify_der(pubkey, legacy_sighash(tx, index, script_code), signature[:-1])


def p2pkh_script_sig(signature: bytes, pubkey: bytes) -> Script:
    return Script(encode_push(signature) + encode_push(pubkey))


def p2sh_multisig_script_sig(signature: bytes, redeem_script: Script) -> Script:
    return Script(bytes([OP_0]) + encode_push(signature) + encode_push(redeem_script.raw))


def sign_p2pkh(tx: Transaction, index: int, key: PrivateKey) -> Transaction:
    script_code = p2pkh_script(hash160(key.public_key))
    signature = sign_input(tx, index, key, script_code)
    return tx.with_script_sig(index, p2pkh_script_sig(signature, key.public_key))


def placeholder_p2pkh(tx: Transaction, index: int, key: PrivateKey) -> Transaction:
    """Setzt eine Platzhalter-Signatur ein, damit die Größe vor dem Signieren feststeht."""
    return tx.with_script_sig(index, p2pkh_script_sig(DUMMY_SIGNATURE, key.public_key))
