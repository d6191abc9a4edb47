"""
Utilities
"""

import os, sys
import json
import logging
from decimal import Decimal, ROUND_HALF_EVEN

logger = logging.getLogger(__name__)

PENNY = Decimal("0.01")


def to_decimal(value):
    """Decimal from str, int, float, or Decimal. Floats go through repr"""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    if isinstance(value, str):
        value = value.strip().replace(",", ".")
    return Decimal(value)


def round_pennies(value):
    """Round a Decimal amount of *pennies* half-to-even to an integer"""
    return int(to_decimal(value).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


def to_pennies(pounds):
    """'2.65' -> 265. Rounded half-to-even"""
    return round_pennies(to_decimal(pounds) * 100)


def from_pennies(pennies):
    return (Decimal(int(pennies)) * PENNY).quantize(PENNY)


def fmt_money(pennies):
    """265 -> '2.65'; -28 -> '-0.28'"""
    return str(from_pennies(pennies))


def fmt_price(price):
    """Normalized decimal odds text. 4.60 -> '4.6', 5 -> '5'"""
    price = to_decimal(price)
    if price == price.to_integral():
        return str(price.quantize(Decimal(1)))
    return str(price.normalize())


def tabulate(table, indent=2, sep="  "):
    """Fancy printing of data"""
    tabulated = []
    nc = [len(c) for c in table[0]]
    for row in table[1:]:
        for ic, c in enumerate(row):
            nc[ic] = max(nc[ic], len(c))

    for row in table:
        r = [f"{c:>{n}s}" for c, n in zip(row[:-1], nc[:-1])]
        r.append(f"{row[-1]:<{nc[-1]}s}")
        r = " " * indent + sep.join(r).rstrip()
        tabulated.append(r)
    return "\n".join(tabulated)


def smart_open(filename, mode="rb"):
    filename = str(filename)
    if filename.endswith(".gz"):
        import gzip as gz

        return gz.open(filename, mode)
    elif filename.endswith(".xz"):
        import lzma as xz

        return xz.open(filename, mode)
    else:
        return open(filename, mode)


def dumps_line(item):
    """Compact, key-order-preserving JSON line"""
    return json.dumps(item, ensure_ascii=False, separators=(",", ":"))


def open_output(dest, mode="wt"):
    """Open `dest` for writing. '-' is stdout (and is not closed)"""
    if dest == "-":
        return _NoClose(sys.stdout)
    os.makedirs(os.path.dirname(os.path.abspath(dest)), exist_ok=True)
    return smart_open(dest, mode)


class _NoClose:
    def __init__(self, fp):
        self.fp = fp

    def __enter__(self):
        return self.fp

    def __exit__(self, *args):
        self.fp.flush()

    def write(self, txt):
        return self.fp.write(txt)

    def close(self):
        self.fp.flush()


def time_format(dt, upper=False):
    """Format time into days (D), hours (H), minutes (M), and seconds (S)"""
    labels = [  # Label, # of sec
        ("D", 60 * 60 * 24),
        ("H", 60 * 60),
        ("M", 60),
        ("S", 1),
    ]
    res = []
    for label, sec in labels:
        val, dt = divmod(dt, sec)
        if not val and not res and label != "S":  # Do not skip if already done
            continue
        if label == "S" and dt > 0:  # Need to handle leftover
            res.append(f"{val+dt:0.2f}")
        elif label in "HMS":  # these get zero padded
            res.append(f"{int(val):02d}")
        else:  # Do not zero pad dats
            res.append(f"{int(val):d}")
        res.append(label if upper else label.lower())
    return "".join(res)


def listify(items):
    """Turn argument into a list. None or False-like become empty list"""
    if isinstance(items, list):
        return items
    items = items or []
    if isinstance(items, (str, bytes)):
        items = [items]
    return list(items)
