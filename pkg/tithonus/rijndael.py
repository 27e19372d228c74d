"""
Rijndael mit wählbarer Blockgröße (16–32 Bytes in 4-Byte-Schritten).

Tithonus nutzt Blöcke zu 28 Bytes und 256-Bit-Schlüssel; die 16-Byte
Variante ist AES und dient in den Tests als Abgleich.
"""

from __future__ import annotations

from chain.errors import BadLength

# ---------- Tabellen über GF(2^8) ----------

# Exponential-/Logarithmentafel zum Generator 3
_ALOG = [1]
for _ in range(255):
    _j = (_ALOG[-1] << 1) ^ _ALOG[-1]
    if _j & 0x100:
        _j ^= 0x11B
    _ALOG.append(_j)
_LOG = [0] * 256
for _i in range(255):
    _LOG[_ALOG[_i]] = _i


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _ALOG[(_LOG[a] + _LOG[b]) % 255]


def _affine(x: int) -> int:
    inv = 0 if x == 0 else _ALOG[255 - _LOG[x]]
    out = 0x63
    for shift in range(5):
        out ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
    return out


SBOX = [_affine(x) for x in range(256)]
INV_SBOX = [0] * 256
for _i, _s in enumerate(SBOX):
    INV_SBOX[_s] = _i

_M2 = [gf_mul(2, x) for x in range(256)]
_M3 = [gf_mul(3, x) for x in range(256)]
_M9 = [gf_mul(9, x) for x in range(256)]
_M11 = [gf_mul(11, x) for x in range(256)]
_M13 = [gf_mul(13, x) for x in range(256)]
_M14 = [gf_mul(14, x) for x in range(256)]

# Zeilenverschiebung C1, C2, C3 je Spaltenanzahl Nb
SHIFT_OFFSETS = {4: (1, 2, 3), 5: (1, 2, 3), 6: (1, 2, 3), 7: (1, 2, 4), 8: (1, 3, 4)}


class Rijndael:
    def __init__(self, key: bytes, block_size: int = 28) -> None:
        if len(key) not in (16, 20, 24, 28, 32):
            raise BadLength(f"Schlüssellänge {len(key)} nicht unterstützt")
        if block_size not in (16, 20, 24, 28, 32):
            raise BadLength(f"Blockgröße {block_size} nicht unterstützt")
        self.block_size = block_size
        self.nb = block_size // 4
        self.nk = len(key) // 4
        self.rounds = max(self.nb, self.nk) + 6

        offsets = (0,) + SHIFT_OFFSETS[self.nb]
        self._shift = [r + 4 * ((c + offsets[r]) % self.nb) for c in range(self.nb) for r in range(4)]
        self._inv_shift = [0] * block_size
        for dst, src in enumerate(self._shift):
            self._inv_shift[src] = dst
        self._round_keys = self._expand_key(key)

    def _expand_key(self, key: bytes) -> list[list[int]]:
        nb, nk = self.nb, self.nk
        total = nb * (self.rounds + 1)
        words = [list(key[4 * i : 4 * i + 4]) for i in range(nk)]
        rcon = 1
        for i in range(nk, total):
            temp = list(words[i - 1])
            if i % nk == 0:
                temp = temp[1:] + temp[:1]
                temp = [SBOX[b] for b in temp]
                temp[0] ^= rcon
                rcon = _M2[rcon]
            elif nk > 6 and i % nk == 4:
                temp = [SBOX[b] for b in temp]
            words.append([a ^ b for a, b in zip(words[i - nk], temp)])
        return [
            [b for w in words[r * nb : (r + 1) * nb] for b in w] for r in range(self.rounds + 1)
        ]

    def encrypt_block(self, block: bytes) -> bytes:
        if len(block) != self.block_size:
            raise BadLength(f"Block muss {self.block_size} Bytes haben, hat {len(block)}")
        keys = self._round_keys
        s = [b ^ k for b, k in zip(block, keys[0])]
        for rnd in range(1, self.rounds):
            t = [SBOX[s[i]] for i in self._shift]
            rk = keys[rnd]
            s = [0] * self.block_size
            for c in range(0, self.block_size, 4):
                a0, a1, a2, a3 = t[c], t[c + 1], t[c + 2], t[c + 3]
                s[c] = _M2[a0] ^ _M3[a1] ^ a2 ^ a3 ^ rk[c]
                s[c + 1] = a0 ^ _M2[a1] ^ _M3[a2] ^ a3 ^ rk[c + 1]
                s[c + 2] = a0 ^ a1 ^ _M2[a2] ^ _M3[a3] ^ rk[c + 2]
                s[c + 3] = _M3[a0] ^ a1 ^ a2 ^ _M2[a3] ^ rk[c + 3]
        last = keys[self.rounds]
        return bytes(SBOX[s[i]] ^ k for i, k in zip(self._shift, last))

    def decrypt_block(self, block: bytes) -> bytes:
        if len(block) != self.block_size:
            raise BadLength(f"Block muss {self.block_size} Bytes haben, hat {len(block)}")
        keys = self._round_keys
        s = [b ^ k for b, k in zip(block, keys[self.rounds])]
        for rnd in range(self.rounds - 1, 0, -1):
            rk = keys[rnd]
            t = [INV_SBOX[s[i]] ^ k for i, k in zip(self._inv_shift, rk)]
            s = [0] * self.block_size
            for c in range(0, self.block_size, 4):
                a0, a1, a2, a3 = t[c], t[c + 1], t[c + 2], t[c + 3]
                s[c] = _M14[a0] ^ _M11[a1] ^ _M13[a2] ^ _M9[a3]
                s[c + 1] = _M9[a0] ^ _M14[a1] ^ _M11[a2] ^ _M13[a3]
                s[c + 2] = _M13[a0] ^ _M9[a1] ^ _M14[a2] ^ _M11[a3]
                s[c + 3] = _M11[a0] ^ _M13[a1] ^ _M9[a2] ^ _M14[a3]
        return bytes(INV_SBOX[s[i]] ^ k for i, k in zip(self._inv_shift, keys[0]))


# ---------- Betriebsarten ----------


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def cbc_encrypt(cipher: Rijndael, iv: bytes, plaintext: bytes) -> bytes:
    bs = cipher.block_size
    if len(plaintext) % bs or len(iv) != bs:
        raise BadLength(f"CBC braucht Vielfache von {bs} Bytes (Klartext {len(plaintext)}, IV {len(iv)})")
    out = bytearray()
    prev = iv
    for i in range(0, len(plaintext), bs):
        prev = cipher.encrypt_block(_xor(plaintext[i : i + bs], prev))
        out += prev
    return bytes(out)


def cbc_decrypt(cipher: Rijndael, iv: bytes, ciphertext: bytes) -> bytes:
    bs = cipher.block_size
    if len(ciphertext) % bs or len(iv) != bs:
        raise BadLength(f"CBC braucht Vielfache von {bs} Bytes (Chiffrat {len(ciphertext)}, IV {len(iv)})")
    out = bytearray()
    prev = iv
    for i in range(0, len(ciphertext), bs):
        block = ciphertext[i : i + bs]
        out += _xor(cipher.decrypt_block(block), prev)
        prev = block
    return bytes(out)


def ctr_transform(cipher: Rijndael, nonce: int, data: bytes) -> bytes:
    """
    Zählermodus: Zählerblock = nonce (4 Bytes) ‖ Blockindex (8 Bytes) ‖ Nullen.
    Ver- und Entschlüsselung sind identisch.
    """
    bs = cipher.block_size
    out = bytearray()
    for counter, i in enumerate(range(0, len(data), bs)):
        block = nonce.to_bytes(4, "big") + counter.to_bytes(8, "big")
        stream = cipher.encrypt_block(block.ljust(bs, b"\x00"))
        out += _xor(data[i : i + bs], stream)
    return bytes(out)
