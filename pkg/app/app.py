"""
Kommandozeile: tithonus <gruppe> <aktion> [optionen].

Exit-Codes: 0 Erfolg, 1 Bedienfehler/Konfiguration, 2 Protokollfehler,
3 unvollständiger Datenstrom.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.commands import register_all_commands
from chain.errors import ConfigError, IncompleteStream, TithonusError
from tithonus.config import get_settings

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROTOCOL = 2
EXIT_INCOMPLETE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tithonus",
        description="Zensurresistente Kommunikation über Bitcoin-Transaktionen (Simnet).",
    )
    parser.add_argument("--config", type=Path, help="key=value Config-Datei")
    parser.add_argument("--workspace", type=Path, help="Workspace-Verzeichnis")
    parser.add_argument("--seed", type=int, help="Seed für alle Zufallsquellen")
    parser.add_argument("--format", dest="output_format", choices=["table", "csv"], help="Tabellenformat")
    parser.add_argument("--verbose", action="store_true", help="Debug-Logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_all_commands(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = get_settings(
            args.config,
            {"workspace": args.workspace, "output_format": args.output_format},
        )
        return args.handler(args, settings) or EXIT_OK
    except IncompleteStream as exc:
        print(f"Unvollständig: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except ConfigError as exc:
        print(f"Konfigurationsfehler: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TithonusError as exc:
        print(f"Protokollfehler: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValueError, OSError) as exc:
        print(f"Fehler: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
