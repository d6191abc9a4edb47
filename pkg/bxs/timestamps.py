"""
Market clock parsing. Frames carry integer epoch milliseconds; race metadata and
CLI inputs may carry ISO-8601 text instead.
"""

import datetime
import string
import re
import logging

logger = logging.getLogger(__name__)

UTC = datetime.timezone.utc


def to_millis(timestamp):
    """
    Parse a market timestamp into integer epoch milliseconds.

    Accepts:
        int / float      : already milliseconds
        "u<seconds>"     : unix seconds (e.g. "u1409666400")
        "m<millis>"      : unix milliseconds
        ISO-8601 text    : "2014-09-02T14:00:00Z", "20140902 140000+0100", ...
        datetime         : naive is taken as UTC

    Naive ISO timestamps are UTC. Market data is recorded on the exchange clock
    and local time has no meaning for a replay.
    """
    if isinstance(timestamp, bool):
        raise TypeError("bool is not a timestamp")
    if isinstance(timestamp, (int, float)):
        return int(round(timestamp))
    if isinstance(timestamp, datetime.datetime):
        dt = timestamp if timestamp.tzinfo else timestamp.replace(tzinfo=UTC)
        return int(round(dt.timestamp() * 1000))

    text = str(timestamp).strip().lower()
    if match := re.match(r"^u(-?[\d\.]+)$", text):
        return int(round(float(match.group(1)) * 1000))
    if match := re.match(r"^m?(-?\d+)$", text):
        return int(match.group(1))

    return to_millis(iso8601_parser(text))


def iso8601_parser(timestamp):
    """
    Parse variants of YYYY-MM-DD HH:MM:SS[.ffffff][Z|+HH:MM]. Returns an aware
    datetime (UTC when no zone is given). Four digit years are required.
    """
    timestamp0 = timestamp
    timestamp = timestamp.strip()

    n = sum(c in string.digits for c in timestamp)
    if n <= 6:
        raise ValueError(
            "MUST at least a FOUR digit year, two digit month, and two digit day. "
            f"Specified: {timestamp0!r}"
        )
    if n == 8:
        timestamp = f"{timestamp} 00:00:00"

    timestamp = timestamp.lower().replace(":", "").replace("t", "").replace("_", "")

    if timestamp.endswith("z"):
        tz = "+0000"
        timestamp = timestamp[:-1]
    elif timestamp[-5] in "-+":
        tz = timestamp[-5:]
        timestamp = timestamp[:-5]
    elif timestamp[-3] in "-+":
        tz = timestamp[-3:] + "00"
        timestamp = timestamp[:-3]
    else:
        tz = "+0000"

    timestamp = "".join(c for c in timestamp if c in string.digits + ".")

    parts = timestamp.split(".")
    if len(parts) == 1:
        whole, frac = parts[0].ljust(14, "0"), ""
    else:
        whole, frac = "".join(parts[:-1]), parts[-1]

    us = round(float(f".{frac}0") * 1e6)
    return datetime.datetime.strptime(f"{whole}.{us:06d}{tz}", "%Y%m%d%H%M%S.%f%z")


def iso_format(millis):
    """Epoch milliseconds to an ISO-8601 UTC string"""
    dt = datetime.datetime.fromtimestamp(millis / 1000, UTC)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")
