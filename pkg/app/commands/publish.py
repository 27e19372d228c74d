from __future__ import annotations

from pathlib import Path

from app.workspace import Workspace


def register_commands(subparsers):
    parser = subparsers.add_parser("publish", help="Inhalt frei publizieren und im Verzeichnis eintragen")
    parser.add_argument("--file", type=Path, required=True)
    parser.add_argument("--description", required=True)
    parser.set_defaults(handler=publish)


def publish(args, settings) -> int:
    content = args.file.read_bytes()
    ws = Workspace(settings, args.seed)
    server = ws.server()
    ws.ensure_funds(server)
    entry = server.publish_free(content, args.description)
    ws.commit()
    print(f"leading_txid: {entry.leading_txid[::-1].hex()}")
    print(f"dir_entry:    {entry.to_bytes().hex()}")
    return 0
