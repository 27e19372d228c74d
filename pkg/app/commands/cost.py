from __future__ import annotations

from typing import Optional

import pandas as pd

from app.output import emit
from models.cost_model import FEE_TABLE_RATES, CostMethod, estimate, fee_table


def register_commands(subparsers):
    parser = subparsers.add_parser("cost", help="Kostenmodell")
    actions = parser.add_subparsers(dest="action", required=True)

    est = actions.add_parser("estimate", help="Größe, Gebühr und Effizienz einer Schreibmethode")
    est.add_argument("--bytes", dest="content_bytes", type=int, required=True)
    est.add_argument("--method", choices=[m.value for m in CostMethod], default=CostMethod.STAGED.value)
    est.add_argument("--rate", type=float, default=1.0)
    est.add_argument("--btc-price", type=float, help="Fiat-Umrechnung (Preis pro BTC)")
    est.set_defaults(handler=cost_estimate)

    table = actions.add_parser("table", help="Gebührentabelle über mehrere Raten")
    table.add_argument("--rates", default=",".join(str(r) for r in FEE_TABLE_RATES))
    table.add_argument("--btc-price", type=float)
    table.set_defaults(handler=cost_table)


def _fiat(satoshi: int, btc_price: Optional[float]) -> Optional[float]:
    return None if btc_price is None else round(satoshi / 1e8 * btc_price, 2)


def cost_estimate(args, settings) -> int:
    report = estimate(args.content_bytes, args.method, args.rate)
    row = report.to_row()
    if args.btc_price is not None:
        row["fiat"] = _fiat(report.total_fee, args.btc_price)
    emit(pd.DataFrame([row]), settings.output_format)
    print(f"total_fee: {report.total_fee} sat")
    return 0


def cost_table(args, settings) -> int:
    rates = [float(r) for r in args.rates.split(",") if r.strip()]
    df = fee_table(rates=rates)
    if args.btc_price is not None:
        for column in df.columns[1:]:
            df[column] = df[column].map(lambda sat: _fiat(sat, args.btc_price))
    emit(df, settings.output_format)
    return 0
