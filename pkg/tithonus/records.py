"""
Append-only Record-Store für ClientRecords (JSON Lines, hex-kodierte Felder).

Ein Schreiber, viele Leser: append/compact laufen unter einem Lock, load liest
die Datei komplett und nimmt pro pk_c die letzte Zeile.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

from tithonus.security import ClientRecord

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["pk_c", "k1", "k2", "r_ct", "counter", "credit", "current_tag"]


class RecordStore:
    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self._lock = threading.RLock()
        self._record_locks: dict[str, threading.Lock] = {}

    def lock_for(self, record_id: str) -> threading.Lock:
        """Serialisiert Zählerstände pro Client."""
        with self._lock:
            return self._record_locks.setdefault(record_id, threading.Lock())

    def _append_rows(self, rows: list[dict]) -> None:
        if not rows:
            return
        lines = pd.DataFrame(rows, columns=RECORD_COLUMNS).to_json(orient="records", lines=True)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(lines.rstrip("\n") + "\n")

    def save(self, record: ClientRecord) -> ClientRecord:
        self._append_rows([record.to_row()])
        return record

    def save_all(self, records: Iterable[ClientRecord]) -> None:
        self._append_rows([r.to_row() for r in records])

    def snapshot(self) -> pd.DataFrame:
        """Aktueller Stand als DataFrame (eine Zeile pro pk_c)."""
        if not self.path.exists() or self.path.stat().st_size == 0:
            return pd.DataFrame(columns=RECORD_COLUMNS)
        df = pd.read_json(self.path, lines=True, dtype=False, convert_dates=False)
        missing = set(RECORD_COLUMNS) - set(df.columns)
        if missing:
            raise KeyError(f"Fehlende Spalten im Record-Store {self.path}: {missing}")
        return df.drop_duplicates(subset="pk_c", keep="last").reset_index(drop=True)

    def load(self) -> dict[str, ClientRecord]:
        df = self.snapshot()
        return {row["pk_c"]: ClientRecord.from_row(row) for row in df.to_dict(orient="records")}

    def get(self, record_id: str) -> Optional[ClientRecord]:
        return self.load().get(record_id)

    def compact(self) -> int:
        """Schreibt nur noch die letzte Zeile pro Client; liefert die Anzahl Records."""
        with self._lock:
            df = self.snapshot()
            if df.empty:
                return 0
            lines = df[RECORD_COLUMNS].to_json(orient="records", lines=True)
            self.path.write_text(lines.rstrip("\n") + "\n", encoding="utf-8")
        logger.info("[Records] %s kompaktiert: %d Records", self.path.name, len(df))
        return len(df)
