"""
Protokoll-Einstellungen.

Reihenfolge (später gewinnt): Defaults < Umgebung (TITHONUS_*) < Config-Datei
(key=value) < Overrides der Kommandozeile.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from chain.config import FeePolicy
from chain.errors import ConfigError

load_dotenv()


def get_project_root() -> Path:
    """Projekt-Root relativ zu diesem File (tithonus/ liegt direkt darunter)."""
    return Path(__file__).resolve().parent.parent


@dataclass(frozen=True)
class Settings:
    workspace: Path
    corpus_dir: Optional[Path] = None
    scenario_path: Optional[Path] = None
    min_fee_rate: float = 1.0
    dust_multiplier: float = 3.0
    standard_fee_rate: float = 9.0
    cached_discount: float = 0.5
    subscription_period_fee: int = 1_000
    request_limit: Optional[int] = None
    default_deposit: int = 50_000
    faucet_amount: int = 5_000_000
    cert_fee_rate: int = 1
    output_format: str = "table"

    @property
    def fee_policy(self) -> FeePolicy:
        return FeePolicy(self.min_fee_rate, self.dust_multiplier, self.standard_fee_rate)


_PATHS = {"workspace", "corpus_dir", "scenario_path"}


def _convert(name: str, raw: str, kind: type | str) -> object:
    if raw is None or str(raw).strip() == "":
        return None
    raw = str(raw).strip()
    if name in _PATHS:
        return Path(raw).expanduser()
    try:
        if name in ("min_fee_rate", "dust_multiplier", "standard_fee_rate", "cached_discount"):
            return float(raw)
        if name in ("subscription_period_fee", "request_limit", "default_deposit", "faucet_amount", "cert_fee_rate"):
            return int(raw)
    except ValueError as exc:
        raise ConfigError(f"Ungültiger Wert für {name}: {raw!r}") from exc
    return raw


def _collect(source: Mapping[str, Optional[str]], prefix: str = "") -> dict:
    values = {}
    for f in fields(Settings):
        key = prefix + f.name.upper()
        if key in source and source[key] not in (None, ""):
            values[f.name] = _convert(f.name, source[key], f.type)
    return values


def get_settings(path: Optional[Path] = None, overrides: Optional[Mapping[str, object]] = None) -> Settings:
    values: dict = {"workspace": get_project_root() / "workspace"}
    values.update(_collect(os.environ, prefix="TITHONUS_"))
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config-Datei nicht gefunden: {path}")
        values.update(_collect(dotenv_values(path)))
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = _convert(name, value, str) if isinstance(value, str) else value

    settings = Settings(**values)
    for name in ("corpus_dir", "scenario_path"):
        target = getattr(settings, name)
        if target is not None and not Path(target).exists():
            raise ConfigError(f"{name} verweist auf einen fehlenden Pfad: {target}")
    if not Path(settings.workspace).parent.exists():
        raise ConfigError(f"Elternverzeichnis des Workspace fehlt: {settings.workspace}")
    if settings.output_format not in ("table", "csv"):
        raise ConfigError(f"output_format muss table oder csv sein, nicht {settings.output_format!r}")
    settings.fee_policy  # validiert die Gebührenwerte
    return settings
