from __future__ import annotations

from pathlib import Path

import pandas as pd

from app.output import emit
from app.workspace import Workspace
from chain.txmodel import display_to_txid
from tithonus.chaining import scan
from tithonus.fetch import fetch_free, read_directory


def register_commands(subparsers):
    parser = subparsers.add_parser("dir", help="Altruistisches Verzeichnis lesen")
    actions = parser.add_subparsers(dest="action", required=True)

    listing = actions.add_parser("list", help="Signierte Einträge auflisten")
    listing.add_argument("--rejected", action="store_true", help="auch verworfene Einträge zeigen")
    listing.set_defaults(handler=dir_list)

    fetch = actions.add_parser("fetch", help="Inhalt eines Eintrags oder einer Leading-Tx holen")
    target = fetch.add_mutually_exclusive_group(required=True)
    target.add_argument("--entry", type=int, help="Index aus dir list")
    target.add_argument("--txid", help="Leading-Tx (Anzeige-Hex)")
    fetch.add_argument("--out", type=Path, required=True)
    fetch.set_defaults(handler=dir_fetch)


def _listing(ws: Workspace):
    client = ws.client()
    return read_directory(client.view(), client.certificate_chain())


def dir_list(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    listing = _listing(ws)
    rows = [
        {
            "index": i,
            "status": "ok",
            "description": item.entry.description.decode("utf-8", errors="replace"),
            "leading_txid": item.entry.leading_txid[::-1].hex(),
            "height": item.height,
        }
        for i, item in enumerate(listing.entries)
    ]
    if args.rejected:
        rows += [
            {
                "index": None,
                "status": "rejected",
                "description": item.entry.description.decode("utf-8", errors="replace"),
                "leading_txid": item.entry.leading_txid[::-1].hex(),
                "height": item.height,
            }
            for item in listing.rejected
        ]
    columns = ["index", "status", "description", "leading_txid", "height"]
    emit(pd.DataFrame(rows, columns=columns), settings.output_format)
    return 0


def dir_fetch(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    if args.txid:
        content = scan(display_to_txid(args.txid), ws.client().view().transactions())
    else:
        entries = _listing(ws).entries
        if not 0 <= args.entry < len(entries):
            raise ValueError(f"Eintrag {args.entry} existiert nicht ({len(entries)} Einträge)")
        content = fetch_free(entries[args.entry].entry, ws.client().view())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(content)
    print(f"{len(content)} Bytes nach {args.out}")
    return 0
