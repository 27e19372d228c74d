from __future__ import annotations

from pathlib import Path
from typing import Optional

from app.workspace import Workspace
from chain.errors import IncompleteStream, TithonusError
from tithonus.fetch import SEL_ALL, MatchedResponse, ResponseKind, Selector, SubscriptionMode, read_subscription_update
from tithonus.security import ClientRecord


def register_commands(subparsers):
    parser = subparsers.add_parser("client", help="Client im zensierten Netz")
    actions = parser.add_subparsers(dest="action", required=True)

    register = actions.add_parser("register", help="CREG-Registrierung mit Deposit")
    register.add_argument("--deposit", type=int, help="Deposit in Satoshi")
    register.set_defaults(handler=client_register)

    request = actions.add_parser("request", help="Ressource anfragen und auf die Antwort warten")
    request.add_argument("--uri", required=True)
    request.add_argument("--offset", type=int, default=0)
    request.add_argument("--length", type=int, default=SEL_ALL)
    request.add_argument("--out", type=Path)
    request.add_argument("--record", help="pk_c (hex-Präfix), Default: jüngste Registrierung")
    request.add_argument("--rounds", type=int, default=1, help="Server-Durchläufe, bis die Antwort da ist")
    request.set_defaults(handler=client_request)

    sub = actions.add_parser("subscribe", help="URI abonnieren")
    sub.add_argument("--uri", required=True)
    sub.add_argument("--mode", choices=[m.name.lower() for m in SubscriptionMode], default="per_update")
    sub.add_argument("--record")
    sub.set_defaults(handler=client_subscribe)

    receive = actions.add_parser("receive", help="Nächste Antwort für den aktuellen Zählerstand lesen")
    receive.add_argument("--out", type=Path)
    receive.add_argument("--record")
    receive.set_defaults(handler=client_receive)


def select_record(records: dict[str, ClientRecord], prefix: Optional[str]) -> ClientRecord:
    if not records:
        raise TithonusError("Keine Registrierung im Workspace, zuerst client register")
    if prefix is None:
        return list(records.values())[-1]
    matches = [r for rid, r in records.items() if rid.startswith(prefix.lower())]
    if len(matches) != 1:
        raise TithonusError(f"Präfix {prefix} passt auf {len(matches)} Registrierungen")
    return matches[0]


def _print_record(record: ClientRecord) -> None:
    print(f"pk_c:    {record.pk_c.hex()}")
    print(f"counter: {record.counter}")
    print(f"credit:  {record.credit}")


def _deliver(matched: MatchedResponse, content: bytes, out: Optional[Path]) -> None:
    print(f"fee:     {matched.fee}")
    print(f"bytes:   {len(content)}")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(content)
        print(f"out:     {out}")
    _print_record(matched.record)


def client_register(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    client = ws.client()
    cert = client.discover()
    deposit = args.deposit or settings.default_deposit
    ws.ensure_funds(client, deposit + settings.faucet_amount // 10)
    record = client.register(cert, deposit)
    ws.commit()
    _print_record(record)
    return 0


def _serve_once(ws: Workspace) -> None:
    server = ws.server()
    ws.ensure_funds(server)
    server.process(ws.net.view(ws.server_node).transactions())
    ws.commit()


def client_request(args, settings) -> int:
    if args.rounds < 0:
        raise ValueError(f"--rounds darf nicht negativ sein: {args.rounds}")
    ws = Workspace(settings, args.seed)
    client = ws.client()
    cert = client.discover()
    record = select_record(client.records.load(), args.record)
    ws.ensure_funds(client, settings.faucet_amount // 10)
    record = client.request(record, cert, args.uri, Selector(args.offset, args.length))
    ws.commit()

    serve = bool(ws.load_certificates())
    for attempt in range(args.rounds + 1):
        try:
            matched = client.receive(record, cert)
            break
        except IncompleteStream:
            if attempt == args.rounds or not serve:
                raise
            _serve_once(ws)
    _deliver(matched, matched.content, args.out)
    return 0


def client_subscribe(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    client = ws.client()
    cert = client.discover()
    record = select_record(client.records.load(), args.record)
    ws.ensure_funds(client, settings.faucet_amount // 10)
    record = client.subscribe(record, cert, args.uri, SubscriptionMode[args.mode.upper()])
    ws.commit()
    _print_record(record)
    return 0


def client_receive(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    client = ws.client()
    cert = client.discover()
    record = select_record(client.records.load(), args.record)
    matched = client.receive(record, cert)
    content = matched.content
    if matched.kind == ResponseKind.KEY:
        content = read_subscription_update(matched, client.view().transactions())
    _deliver(matched, content, args.out)
    return 0
