"""
Fehlerhierarchie für alle Schichten.

Jede Operation wirft nur Unterklassen von TithonusError, damit die CLI
sie auf Exit-Codes abbilden kann.
"""


class TithonusError(Exception):
    """Basisklasse aller fachlichen Fehler."""


class DeserializationError(TithonusError):
    pass


class WrongPayloadLength(TithonusError):
    pass


class UnknownInput(TithonusError):
    pass


class NegativeFee(TithonusError):
    pass


class ForbiddenCiphertext(TithonusError):
    pass


class MalformedKey(TithonusError):
    pass


class PayloadTooLarge(TithonusError):
    pass


class InsufficientFunds(TithonusError):
    pass


class NotAStagedWrite(TithonusError):
    pass


class NotMultisig(TithonusError):
    pass


class RejectedNonstandard(TithonusError):
    pass


class EmptyContent(TithonusError):
    pass


class SequenceConflict(TithonusError):
    pass


class MissingLeadingTx(TithonusError):
    pass


class IncompleteStream(TithonusError):
    pass


class BadPrevKey(TithonusError):
    pass


class PointAtInfinity(TithonusError):
    pass


class BadLength(TithonusError):
    pass


class UriTooLong(TithonusError):
    pass


class TagMismatch(TithonusError):
    pass


class InactiveSubscription(TithonusError):
    pass


class BadConfig(TithonusError):
    pass


class ConfigError(TithonusError):
    pass


class RejectedAtOrigin(TithonusError):
    pass


class UnknownNode(TithonusError):
    pass


class DoubleInclusion(TithonusError):
    pass
