"""
Frame files.

A frame file is JSON Lines (optionally .gz or .xz). Keys are always written in
the order shown and every record has a "type":

    {"type":"market","race":RACE,"start":ISO-8601,"runners":{ID:NAME,...}}
    {"type":"status","ts":MILLIS,"status":"OPEN"|"SUSPENDED"|"INPLAY"|"CLOSED"}
    {"type":"frame","ts":MILLIS,"runner":ID,"ltp":PRICE,
     "bid":[[PRICE,AMOUNT],...],"ask":[[PRICE,AMOUNT],...],"vol":[[PRICE,AMOUNT],...]}

PRICE is decimal odds text on the ladder ("4.6"), AMOUNT is pounds with two
decimals ("8.00"). Bids are written best (highest) first, asks and volume lowest
price first. One frame record per runner per snapshot. "ltp" may be null before
the first trade. A frame record may carry "race" when a file mixes races.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .ladder import Rdf, RunnerBook, TickLadder
from .timestamps import to_millis, iso_format
from .utils import smart_open, dumps_line, to_pennies, fmt_money, fmt_price

logger = logging.getLogger(__name__)

STATUSES = {"OPEN", "SUSPENDED", "INPLAY", "CLOSED"}


class FrameFileError(ValueError):
    pass


@dataclass
class Race:
    race_id: str
    start: int  # scheduled start, epoch ms
    runners: dict = field(default_factory=dict)  # runner_id -> RunnerBook
    statuses: list = field(default_factory=list)  # (ts, status), time ordered

    @property
    def n_runners(self):
        return len(self.runners)

    def status_at(self, timestamp):
        status = "OPEN"
        for ts, st in self.statuses:
            if ts > timestamp:
                break
            status = st
        return status

    def inplay_at(self):
        """Timestamp the market turned in-play, or the scheduled start"""
        for ts, st in self.statuses:
            if st in {"INPLAY", "CLOSED"}:
                return min(ts, self.start)
        return self.start


def format_frame(runner_id, frame, ladder):
    def pairs(book, reverse=False):
        return [
            [fmt_price(ladder.price_at(t)), fmt_money(a)]
            for t, a in sorted(book.items(), reverse=reverse)
        ]

    rec = {
        "type": "frame",
        "ts": frame.timestamp,
        "runner": str(runner_id),
        "ltp": (
            None
            if frame.last_traded is None
            else fmt_price(ladder.price_at(frame.last_traded))
        ),
        "bid": pairs(frame.bids, reverse=True),
        "ask": pairs(frame.asks),
        "vol": pairs(frame.volume),
    }
    return dumps_line(rec)


def parse_frame(rec, ladder):
    """frame record (dict) -> (runner_id, Rdf)"""

    def conv(pairs):
        out = {}
        for price, amount in pairs or []:
            tick = ladder.tick_index(price)
            out[tick] = out.get(tick, 0) + to_pennies(amount)
        return out

    try:
        ltp = rec.get("ltp")
        frame = Rdf(
            timestamp=to_millis(rec["ts"]),
            last_traded=None if ltp in (None, "") else ladder.tick_index(ltp),
            bids=conv(rec.get("bid")),
            asks=conv(rec.get("ask")),
            volume=conv(rec.get("vol")),
        )
        return str(rec["runner"]), frame
    except (KeyError, TypeError) as E:
        raise FrameFileError(f"Bad frame record {rec!r}: {E!r}")


def iter_records(path):
    with smart_open(path, "rt") as fp:
        for ii, line in enumerate(fp, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as E:
                raise FrameFileError(f"{path}:{ii}: {E}")


def read_races(paths, ladder=None):
    """
    Read one or more frame files into Races keyed by race id. Records are
    grouped, then frames are time-sorted per runner with duplicates (same ts)
    keeping the last one seen.
    """
    ladder = ladder or TickLadder()
    races = {}
    frames = {}  # (race,runner) -> {ts: Rdf}
    for path in paths:
        current = None
        for rec in iter_records(path):
            kind = rec.get("type", "frame")
            if kind == "market":
                rid = str(rec["race"])
                race = races.get(rid)
                if race is None:
                    race = races[rid] = Race(race_id=rid, start=to_millis(rec["start"]))
                for runner_id, name in (rec.get("runners") or {}).items():
                    book = race.runners.setdefault(
                        str(runner_id), RunnerBook(runner_id=str(runner_id))
                    )
                    book.name = name
                current = rid
                continue

            rid = str(rec.get("race", current))
            if rid not in races:
                raise FrameFileError(f"{path}: record before its market header: {rec!r}")
            race = races[rid]

            if kind == "status":
                status = str(rec["status"]).upper()
                if status not in STATUSES:
                    raise FrameFileError(f"Unknown status {status!r}")
                race.statuses.append((to_millis(rec["ts"]), status))
            elif kind == "frame":
                runner_id, frame = parse_frame(rec, ladder)
                race.runners.setdefault(runner_id, RunnerBook(runner_id=runner_id))
                frames.setdefault((rid, runner_id), {})[frame.timestamp] = frame
            else:
                raise FrameFileError(f"Unknown record type {kind!r}")

    for (rid, runner_id), byts in frames.items():
        races[rid].runners[runner_id].frames = [byts[ts] for ts in sorted(byts)]
    for race in races.values():
        race.statuses.sort(key=lambda s: s[0])
    return races


def read_race(path, ladder=None):
    races = read_races([path], ladder=ladder)
    if len(races) != 1:
        raise FrameFileError(f"{path} holds {len(races)} races. Expected 1")
    return next(iter(races.values()))


def race_lines(race, ladder):
    """Canonical text lines for a race; frames interleaved by time then runner"""
    header = {
        "type": "market",
        "race": race.race_id,
        "start": iso_format(race.start),
        "runners": {rid: race.runners[rid].name for rid in sorted(race.runners)},
    }
    yield dumps_line(header)

    events = []
    for ts, status in race.statuses:
        events.append((ts, 0, "", dumps_line({"type": "status", "ts": ts, "status": status})))
    for rid in sorted(race.runners):
        for frame in race.runners[rid].frames:
            events.append((frame.timestamp, 1, rid, format_frame(rid, frame, ladder)))
    for *_, line in sorted(events, key=lambda e: e[:3]):
        yield line


def write_race(race, path, ladder=None):
    ladder = ladder or TickLadder()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with smart_open(path, "wt") as fp:
        for line in race_lines(race, ladder):
            fp.write(line + "\n")
    return path


def race_files(frames_dir):
    """Frame files in a directory (or a single file), sorted"""
    frames_dir = Path(frames_dir)
    if frames_dir.is_file():
        return [frames_dir]
    exts = (".jsonl", ".jsonl.gz", ".jsonl.xz")
    return sorted(p for p in frames_dir.iterdir() if p.name.endswith(exts))
