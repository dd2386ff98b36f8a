#!/usr/bin/env python3
"""Regenerate the synthetic intraday OHLCV fixture and its expected samples.

Six trading days of 5-minute bars from 09:30 to 15:55 (78 bars per day).
Each day has its own volatility level so that per-day models differ.
The expected file lists (day, slot, d, g) for every bar after the first of
each day, computed with the same floating-point operation order as the
library.
"""

import csv
import math
import random
from datetime import datetime, timedelta
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "fixtures"
DAYS = ["2021-01-25", "2021-01-26", "2021-01-27", "2021-01-28", "2021-01-29", "2021-02-01"]
VOLS = [0.004, 0.007, 0.013, 0.006, 0.020, 0.009]
BARS = 78


def sign(x):
    return 0.0 if x == 0 else math.copysign(1.0, x)


def decision(o, h, l, c, v):
    direction = sign(c - o)
    if h == l or direction == 0.0:
        return 0.0
    flow = v * h * (h - o) / (h - l)
    return 0.0 if flow == 0.0 else direction * flow


def main():
    rng = random.Random(20210125)
    rows, expected = [], []
    price = 25.0
    for day, vol in zip(DAYS, VOLS):
        start = datetime.fromisoformat(day + "T09:30:00")
        for slot in range(BARS):
            o = round(price * math.exp(rng.gauss(0.0, vol / 4)), 2)
            c = round(o * math.exp(rng.gauss(0.0, vol)), 2)
            h = round(max(o, c) * (1 + abs(rng.gauss(0.0, vol / 2))), 2)
            l = round(min(o, c) * (1 - abs(rng.gauss(0.0, vol / 2))), 2)
            h, l = max(h, o, c), min(l, o, c)
            v = float(int(20_000 * (1 + 4 * abs(rng.gauss(0.0, 1.0))) * (1 + 50 * vol)))
            ts = (start + timedelta(minutes=5 * slot)).strftime("%Y-%m-%dT%H:%M:%S")
            rows.append([ts, repr(o), repr(h), repr(l), repr(c), repr(v)])
            if slot > 0:
                expected.append([day, slot, repr(decision(o, h, l, c, v)), repr(c / o - 1.0)])
            price = c
    with open(ROOT / "ohlcv_6x78.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["timestamp", "open", "high", "low", "close", "volume"])
        w.writerows(rows)
    with open(ROOT / "ohlcv_6x78_samples.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["day", "slot", "d", "g"])
        w.writerows(expected)


if __name__ == "__main__":
    main()
