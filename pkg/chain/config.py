from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from chain.errors import ConfigError

load_dotenv()  # liest .env und übernimmt die Werte als Umgebungsvariablen


def _get_env(name: str, default: Optional[str] = None) -> str:
    value = os.getenv(name, default)
    if value is None:
        raise RuntimeError(f"Required env var {name} is not set")
    return value


@dataclass(frozen=True)
class FeePolicy:
    """
    Relay-Regeln eines Knotens.

    min_fee_rate      – Mindestgebühr in Satoshi pro Byte
    dust_multiplier   – jeder Output muss mehr als dust_multiplier × fee wert sein
    standard_fee_rate – Gebührenrate für on-chain Transaktionen
    """

    min_fee_rate: float = 1.0
    dust_multiplier: float = 3.0
    standard_fee_rate: float = 9.0

    def __post_init__(self) -> None:
        if self.min_fee_rate < 1:
            raise ConfigError(f"min_fee_rate muss >= 1 sein, ist {self.min_fee_rate}")
        if self.dust_multiplier < 0:
            raise ConfigError(f"dust_multiplier darf nicht negativ sein: {self.dust_multiplier}")
        if self.standard_fee_rate < self.min_fee_rate:
            raise ConfigError(
                f"standard_fee_rate ({self.standard_fee_rate}) liegt unter "
                f"min_fee_rate ({self.min_fee_rate})"
            )

    def with_min_fee_rate(self, rate: float) -> "FeePolicy":
        return FeePolicy(
            min_fee_rate=rate,
            dust_multiplier=self.dust_multiplier,
            standard_fee_rate=max(rate, self.standard_fee_rate),
        )


def _get_float(name: str, default: str) -> float:
    raw = _get_env(name, default)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} ist keine Zahl: {raw!r}") from exc


def get_fee_policy() -> FeePolicy:
    """Liefert die Gebühren-Policy aus TITHONUS_* Umgebungsvariablen (Defaults 1 / 3 / 9)."""
    return FeePolicy(
        min_fee_rate=_get_float("TITHONUS_MIN_FEE_RATE", "1"),
        dust_multiplier=_get_float("TITHONUS_DUST_MULTIPLIER", "3"),
        standard_fee_rate=_get_float("TITHONUS_STANDARD_FEE_RATE", "9"),
    )
