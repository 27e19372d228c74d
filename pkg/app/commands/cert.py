from __future__ import annotations

import pandas as pd

from app.output import emit
from app.workspace import Workspace
from chain.errors import TithonusError


def register_commands(subparsers):
    parser = subparsers.add_parser("cert", help="Zertifikatskette verwalten")
    actions = parser.add_subparsers(dest="action", required=True)

    init = actions.add_parser("init", help="Root-Zertifikat erzeugen und publizieren")
    init.add_argument("--fee-rate", type=int, help="Preis in Satoshi pro Antwort-Byte")
    init.set_defaults(handler=cert_init)

    rotate = actions.add_parser("rotate", help="Neues Zertifikat, signiert mit dem vorherigen Schlüssel")
    rotate.set_defaults(handler=cert_rotate)

    show = actions.add_parser("show", help="Publizierte Kette aus Client-Sicht")
    show.set_defaults(handler=cert_show)


def _print_certificate(cert) -> None:
    print(f"seq:        {cert.seq}")
    print(f"public_key: {cert.public_key.hex()}")
    print(f"ttag:       {cert.ttag.hex()}")
    print(f"fee_rate:   {cert.fee_rate}")
    print(f"dir_marker: {cert.dir_marker.hex() if cert.dir_marker else '-'}")


def cert_init(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    server = ws.server()
    if server.certificates:
        raise TithonusError("Workspace hat bereits ein Root-Zertifikat, stattdessen cert rotate verwenden")
    ws.ensure_funds(server)
    cert = server.create_root(args.fee_rate)
    ws.commit()
    _print_certificate(cert)
    return 0


def cert_rotate(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    server = ws.server()
    ws.ensure_funds(server)
    cert = server.rotate()
    ws.commit()
    _print_certificate(cert)
    return 0


def cert_show(args, settings) -> int:
    ws = Workspace(settings, args.seed)
    chain = ws.client().certificate_chain()
    rows = [
        {
            "seq": p.certificate.seq,
            "height": p.height,
            "public_key": p.certificate.public_key.hex(),
            "ttag": p.certificate.ttag.hex(),
            "fee_rate": p.certificate.fee_rate,
            "leading_txid": p.leading_txid[::-1].hex(),
        }
        for p in chain
    ]
    columns = ["seq", "height", "public_key", "ttag", "fee_rate", "leading_txid"]
    emit(pd.DataFrame(rows, columns=columns), settings.output_format)
    return 0
