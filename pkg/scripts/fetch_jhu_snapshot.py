#!/usr/bin/env python3
"""
Download JHU CSSE global time series and trim them to a fixed snapshot
Загрузка временных рядов JHU CSSE и обрезка до даты снимка
"""

import argparse
import io
import sys
from datetime import date, datetime
from pathlib import Path

import pandas as pd
import requests

BASE_URL = (
    "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/"
    "csse_covid_19_data/csse_covid_19_time_series/"
)
FEATURES = ("confirmed", "deaths", "recovered")
META_COLUMNS = ["Province/State", "Country/Region", "Lat", "Long"]


def fetch(feature: str, timeout: float = 60.0) -> pd.DataFrame:
    url = f"{BASE_URL}time_series_covid19_{feature}_global.csv"
    response = requests.get(url, timeout=timeout)
    response.raise_for_status()
    return pd.read_csv(io.StringIO(response.text))


def trim(frame: pd.DataFrame, until: date) -> pd.DataFrame:
    """Оставить даты не позже until"""
    keep = [
        column for column in frame.columns
        if column in META_COLUMNS or datetime.strptime(column, "%m/%d/%y").date() <= until
    ]
    return frame[keep]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--dest", type=Path, default=Path("data"))
    parser.add_argument("--until", type=date.fromisoformat, default=date(2020, 5, 1))
    args = parser.parse_args()

    args.dest.mkdir(parents=True, exist_ok=True)
    for feature in FEATURES:
        try:
            frame = trim(fetch(feature), args.until)
        except requests.RequestException as error:
            print(f"❌ {feature}: download failed: {error}", file=sys.stderr)
            return 1
        path = args.dest / f"time_series_covid19_{feature}_global.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        print(f"✅ {feature}: {len(frame)} rows -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
