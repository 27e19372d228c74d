import random

import pytest
from Crypto.Cipher import AES

from chain.errors import BadLength
from tithonus.rijndael import Rijndael, cbc_decrypt, cbc_encrypt, ctr_transform
from tests import oracles


@pytest.mark.parametrize("key_size", [16, 24, 32])
def test_16_byte_blocks_equal_aes(key_size):
    """Mit 16-Byte-Blöcken ist Rijndael exakt AES."""
    rng = random.Random(key_size)
    for _ in range(20):
        key, block = rng.randbytes(key_size), rng.randbytes(16)
        expected = AES.new(key, AES.MODE_ECB).encrypt(block)
        assert Rijndael(key, block_size=16).encrypt_block(block) == expected


def test_reference_implementation_agrees_with_aes():
    """Die Lehrbuch-Referenz der Tests stimmt selbst mit AES überein."""
    rng = random.Random(3)
    for _ in range(5):
        key, block = rng.randbytes(32), rng.randbytes(16)
        assert oracles.reference_rijndael_encrypt(key, block) == AES.new(key, AES.MODE_ECB).encrypt(block)


@pytest.mark.parametrize("block_size", [20, 24, 28, 32])
def test_wide_blocks_match_reference(block_size):
    """Breite Blöcke (inkl. 28 Bytes) gegen die Referenz mit Zustandsmatrix."""
    rng = random.Random(block_size)
    for _ in range(10):
        key, block = rng.randbytes(32), rng.randbytes(block_size)
        got = Rijndael(key, block_size=block_size).encrypt_block(block)
        assert got == oracles.reference_rijndael_encrypt(key, block), f"Abweichung bei Blockgröße {block_size}"


def test_decrypt_inverts_encrypt(rng):
    cipher = Rijndael(rng.randbytes(32))
    for _ in range(50):
        block = rng.randbytes(28)
        assert cipher.decrypt_block(cipher.encrypt_block(block)) == block


def test_cbc_and_ctr_modes(rng):
    """CBC ist umkehrbar und verkettet; CTR ist selbstinvers und längentreu."""
    cipher = Rijndael(rng.randbytes(32))
    iv = rng.randbytes(28)
    plaintext = rng.randbytes(84)
    ciphertext = cbc_encrypt(cipher, iv, plaintext)
    assert len(ciphertext) == 84
    assert cbc_decrypt(cipher, iv, ciphertext) == plaintext
    assert ciphertext[28:56] != cipher.encrypt_block(plaintext[28:56]), "CBC verkettet die Blöcke nicht"

    data = rng.randbytes(101)
    stream = ctr_transform(cipher, 7, data)
    assert len(stream) == 101 and stream != data
    assert ctr_transform(cipher, 7, stream) == data
    assert ctr_transform(cipher, 8, data) != stream


def test_bad_lengths():
    """Ungültige Schlüssel-, Block- und Klartextlängen sind BadLength."""
    with pytest.raises(BadLength):
        Rijndael(bytes(15))
    with pytest.raises(BadLength):
        Rijndael(bytes(32), block_size=18)
    cipher = Rijndael(bytes(32))
    with pytest.raises(BadLength):
        cipher.encrypt_block(bytes(16))
    with pytest.raises(BadLength):
        cbc_encrypt(cipher, bytes(28), bytes(30))
    with pytest.raises(BadLength):
        cbc_decrypt(cipher, bytes(16), bytes(28))
