from __future__ import annotations

from pathlib import Path

import pandas as pd

from app.output import emit
from app.workspace import Workspace
from tithonus.corpus import CorpusResolver
from tithonus.fetch import charge_period


def register_commands(subparsers):
    parser = subparsers.add_parser("server", help="Server außerhalb des Zensurgebiets")
    actions = parser.add_subparsers(dest="action", required=True)

    run = actions.add_parser("run", help="CREG/REQ-Scan über den Simnet-Verkehr")
    run.add_argument("--scenario", type=Path, help="Szenario-Datei (key=value)")
    run.add_argument("--rounds", type=int, default=1)
    run.set_defaults(handler=server_run)

    add = actions.add_parser("add", help="Ressource in den Korpus legen")
    add.add_argument("--uri", required=True)
    add.add_argument("--file", type=Path, required=True)
    add.set_defaults(handler=server_add)

    update = actions.add_parser("update", help="Abo-Update publizieren")
    update.add_argument("--uri", required=True)
    update.add_argument("--file", type=Path, required=True)
    update.set_defaults(handler=server_update)

    charge = actions.add_parser("charge", help="Periodengebühr für per_time-Abos abbuchen")
    charge.set_defaults(handler=server_charge)


def server_run(args, settings) -> int:
    ws = Workspace(settings, args.seed, scenario_path=args.scenario)
    server = ws.server()
    rows = []
    for round_no in range(args.rounds):
        ws.ensure_funds(server)
        result = server.process(ws.net.view(ws.server_node).transactions())
        ws.commit()
        rows += [
            {"round": round_no, "event": "registration", "client": r.record_id[:16], "detail": r.credit}
            for r in result.registrations
        ]
        rows += [
            {"round": round_no, "event": "response", "client": e.session_tag.hex()[:16], "detail": e.fee}
            for e in result.responses
        ]
    emit(pd.DataFrame(rows, columns=["round", "event", "client", "detail"]), settings.output_format)
    return 0


def server_add(args, settings) -> int:
    corpus_dir = Path(settings.corpus_dir) if settings.corpus_dir else Path(settings.workspace) / "corpus"
    path = CorpusResolver(corpus_dir).add(args.uri, args.file.read_bytes())
    print(f"{args.uri} -> {path}")
    return 0


def server_update(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    server = ws.server()
    ws.ensure_funds(server)
    result = server.publish_update(args.uri, args.file.read_bytes())
    ws.commit()
    print(f"leading_txid: {result.leading_txid[::-1].hex()}")
    rows = [{"client": rid[:16], "fee": fee} for rid, fee in result.charges.items()]
    emit(pd.DataFrame(rows, columns=["client", "fee"]), settings.output_format)
    return 0


def server_charge(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    server = ws.server()
    charges = charge_period(server.hub, server.records, settings.subscription_period_fee)
    ws.commit()
    rows = [{"client": rid[:16], "fee": fee} for rid, fee in charges.items()]
    emit(pd.DataFrame(rows, columns=["client", "fee"]), settings.output_format)
    return 0
