from __future__ import annotations

import pandas as pd


def render(df: pd.DataFrame, output_format: str = "table") -> str:
    """Ausgerichtete Textspalten oder CSV."""
    if output_format == "csv":
        return df.to_csv(index=False).rstrip("\n")
    if df.empty:
        return "(keine Einträge)"
    return df.to_string(index=False)


def emit(df: pd.DataFrame, output_format: str = "table") -> None:
    print(render(df, output_format))
