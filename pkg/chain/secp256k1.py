"""
secp256k1: Körperarithmetik über F_p, Kurvenpunkte und Schlüssel.

Punktmultiplikation, Signaturen und ECDH laufen über python-ecdsa; hier liegen
nur die Körperoperationen, die die Einbettung braucht (Euler-Kriterium,
Quadratwurzel, Kurvengleichung).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Optional

from ecdsa import SECP256k1, SigningKey, VerifyingKey
from ecdsa.ecdh import ECDH, InvalidSharedSecretError
from ecdsa.ellipticcurve import INFINITY, PointJacobi
from ecdsa.errors import MalformedPointError
from ecdsa.keys import BadSignatureError
from ecdsa.util import sigdecode_der, sigdecode_string, sigencode_der_canonize, sigencode_string_canonize

from chain.errors import MalformedKey, PointAtInfinity

P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = SECP256k1.order
B = 7
GX = SECP256k1.generator.x()
GY = SECP256k1.generator.y()


@dataclass(frozen=True)
class FieldElement:
    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value < P:
            object.__setattr__(self, "value", self.value % P)

    def __add__(self, other: "FieldElement | int") -> "FieldElement":
        return FieldElement((self.value + int(other)) % P)

    def __sub__(self, other: "FieldElement | int") -> "FieldElement":
        return FieldElement((self.value - int(other)) % P)

    def __mul__(self, other: "FieldElement | int") -> "FieldElement":
        return FieldElement((self.value * int(other)) % P)

    def __pow__(self, exponent: int) -> "FieldElement":
        return FieldElement(pow(self.value, exponent, P))

    def __int__(self) -> int:
        return self.value

    def __index__(self) -> int:
        return self.value

    def is_square(self) -> bool:
        """Euler-Kriterium: w^((p-1)/2) ∈ {0, 1}."""
        return pow(self.value, (P - 1) // 2, P) in (0, 1)

    def sqrt(self) -> Optional["FieldElement"]:
        # p ≡ 3 mod 4
        root = pow(self.value, (P + 1) // 4, P)
        if root * root % P != self.value:
            return None
        return FieldElement(root)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(32, "big")


def is_quadratic_residue(w: FieldElement | int) -> bool:
    return FieldElement(int(w)).is_square()


def curve_rhs(x: FieldElement | int) -> FieldElement:
    """w = x³ + 7"""
    fx = FieldElement(int(x))
    return fx**3 + B


@dataclass(frozen=True)
class CurvePoint:
    x: Optional[FieldElement]
    y: Optional[FieldElement]
    at_infinity: bool = False

    def __post_init__(self) -> None:
        if self.at_infinity:
            return
        if self.x is None or self.y is None:
            raise MalformedKey("Endlicher Punkt braucht x und y")
        if self.y * self.y != curve_rhs(self.x):
            raise MalformedKey(f"Punkt liegt nicht auf secp256k1: x={self.x.value:064x}")

    @classmethod
    def infinity(cls) -> "CurvePoint":
        return cls(None, None, True)

    @classmethod
    def lift_x(cls, x: FieldElement | int, odd: bool = False) -> "CurvePoint":
        root = curve_rhs(x).sqrt()
        if root is None:
            raise MalformedKey(f"x={int(x):064x} hat keinen Punkt auf der Kurve")
        y = root if (root.value & 1) == odd else FieldElement(P - root.value)
        return cls(FieldElement(int(x)), y)

    @classmethod
    def decompress(cls, key: bytes) -> "CurvePoint":
        if len(key) != 33 or key[0] not in (2, 3):
            raise MalformedKey(f"Kein komprimierter Schlüssel: {key[:1].hex()}… ({len(key)} Bytes)")
        x = int.from_bytes(key[1:], "big")
        if x >= P:
            raise MalformedKey("x-Koordinate >= p")
        return cls.lift_x(x, odd=key[0] == 3)

    def compress(self) -> bytes:
        if self.at_infinity:
            raise PointAtInfinity("Punkt im Unendlichen hat keine Kodierung")
        return bytes([2 + (self.y.value & 1)]) + self.x.to_bytes()

    def _jacobian(self) -> PointJacobi:
        return PointJacobi(SECP256k1.curve, self.x.value, self.y.value, 1, N)

    @classmethod
    def _from_ecdsa(cls, point) -> "CurvePoint":
        if point == INFINITY:
            return cls.infinity()
        return cls(FieldElement(point.x()), FieldElement(point.y()))

    def __mul__(self, scalar: int) -> "CurvePoint":
        if self.at_infinity or scalar % N == 0:
            return CurvePoint.infinity()
        return CurvePoint._from_ecdsa(self._jacobian() * (scalar % N))

    __rmul__ = __mul__

    def __add__(self, other: "CurvePoint") -> "CurvePoint":
        if self.at_infinity:
            return other
        if other.at_infinity:
            return self
        return CurvePoint._from_ecdsa(self._jacobian() + other._jacobian())


G = CurvePoint(FieldElement(GX), FieldElement(GY))


# ---------- Schlüssel ----------


class PrivateKey:
    """secp256k1-Schlüssel mit deterministischer (RFC 6979) Low-S-Signatur."""

    __slots__ = ("secret", "_signing_key", "_public_key")

    def __init__(self, secret: int) -> None:
        if not 1 <= secret < N:
            raise MalformedKey("Geheimer Skalar außerhalb [1, n-1]")
        self.secret = secret
        self._signing_key: Optional[SigningKey] = None
        self._public_key: Optional[bytes] = None

    @classmethod
    def random(cls, rng: random.Random) -> "PrivateKey":
        return cls(rng.randrange(1, N))

    @classmethod
    def from_seed(cls, *parts: object) -> "PrivateKey":
        """Deterministische Ableitung aus beliebigen Labels (Wallets, Tests)."""
        label = "/".join(str(p) for p in parts).encode()
        secret = int.from_bytes(hashlib.sha256(label).digest(), "big") % (N - 1) + 1
        return cls(secret)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PrivateKey":
        if len(raw) != 32:
            raise MalformedKey(f"Privater Schlüssel braucht 32 Bytes, nicht {len(raw)}")
        return cls(int.from_bytes(raw, "big"))

    def to_bytes(self) -> bytes:
        return self.secret.to_bytes(32, "big")

    @property
    def signing_key(self) -> SigningKey:
        if self._signing_key is None:
            self._signing_key = SigningKey.from_secret_exponent(
                self.secret, curve=SECP256k1, hashfunc=hashlib.sha256
            )
        return self._signing_key

    @property
    def public_key(self) -> bytes:
        """Komprimierter öffentlicher Schlüssel (33 Bytes)."""
        if self._public_key is None:
            self._public_key = self.signing_key.get_verifying_key().to_string("compressed")
        return self._public_key

    def sign_der(self, digest: bytes) -> bytes:
        return self.signing_key.sign_digest_deterministic(
            digest, hashfunc=hashlib.sha256, sigencode=sigencode_der_canonize
        )

    def sign_compact(self, digest: bytes) -> bytes:
        """64-Byte r‖s Signatur für Zertifikate und Verzeichniseinträge."""
        return self.signing_key.sign_digest_deterministic(
            digest, hashfunc=hashlib.sha256, sigencode=sigencode_string_canonize
        )

    def __repr__(self) -> str:
        return f"PrivateKey(pub={self.public_key.hex()})"


def _verifying_key(pubkey: bytes) -> VerifyingKey:
    try:
        return VerifyingKey.from_string(pubkey, curve=SECP256k1, hashfunc=hashlib.sha256)
    except (MalformedPointError, ValueError) as exc:
        raise MalformedKey(f"Ungültiger öffentlicher Schlüssel {pubkey.hex()}: {exc}") from exc


def verify_der(pubkey: bytes, digest: bytes, signature: bytes) -> bool:
    try:
        return _verifying_key(pubkey).verify_digest(signature, digest, sigdecode=sigdecode_der)
    except (BadSignatureError, MalformedKey, ValueError):
        return False


def verify_compact(pubkey: bytes, digest: bytes, signature: bytes) -> bool:
    if len(signature) != 64:
        return False
    try:
        return _verifying_key(pubkey).verify_digest(signature, digest, sigdecode=sigdecode_string)
    except (BadSignatureError, MalformedKey, ValueError):
        return False


def ecdh_x(key: "PrivateKey | int", pubkey: bytes) -> bytes:
    """x-Koordinate von key · pubkey (32 Bytes, big-endian)."""
    if isinstance(key, int):
        key = PrivateKey(key)
    ecdh = ECDH(curve=SECP256k1)
    ecdh.load_private_key(key.signing_key)
    ecdh.load_received_public_key(_verifying_key(pubkey))
    try:
        shared = ecdh.generate_sharedsecret_bytes()
    except InvalidSharedSecretError as exc:
        raise PointAtInfinity("ECDH ergibt den Punkt im Unendlichen") from exc
    return shared.rjust(32, b"\x00")


def random_pubkey(rng: random.Random) -> bytes:
    """Gültiger komprimierter Schlüssel ohne bekannten privaten Schlüssel (x zufällig, geliftet)."""
    while True:
        x = rng.randrange(1, P)
        if curve_rhs(x).is_square():
            return CurvePoint.lift_x(x, odd=bool(rng.getrandbits(1))).compress()
