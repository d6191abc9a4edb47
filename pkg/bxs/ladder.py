"""
Price ladder arithmetic and the market-depth frame (Rdf) model.

Prices live on a banded tick ladder. Internally every price is an integer tick
index; decimal odds only show up at I/O boundaries. Money is integer pennies.
"""

import bisect
import logging
from collections import namedtuple
from dataclasses import dataclass, field

from .utils import to_decimal, to_pennies, fmt_price

logger = logging.getLogger(__name__)

# (low, high, step). Band 0 is [low, high]; later bands are (low, high]
DEFAULT_BANDS = (
    ("1.01", "2.00", "0.01"),
    ("2.00", "3.00", "0.02"),
    ("3.00", "4.00", "0.05"),
    ("4.00", "6.00", "0.10"),
    ("6.00", "10.0", "0.20"),
    ("10.0", "20.0", "0.50"),
    ("20.0", "30.0", "1"),
    ("30.0", "50.0", "2"),
    ("50.0", "100", "5"),
    ("100", "1000", "10"),
)


class LadderError(ValueError):
    pass


class OffLadderPrice(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class TickLadder:
    """
    Banded odds ladder. Adjacent on-ladder prices differ by exactly one in
    tick index.

        >>> lad = TickLadder()
        >>> lad.price_at(lad.tick_index("4.6") + 6)
        Decimal('5.20')
    """

    def __init__(self, bands=None):
        bands = bands or DEFAULT_BANDS
        self.bands = tuple(
            (to_decimal(lo), to_decimal(hi), to_decimal(step)) for lo, hi, step in bands
        )
        if not self.bands:
            raise LadderError("Must have at least one band")

        self._offsets = []
        offset = 0
        for ii, (lo, hi, step) in enumerate(self.bands):
            if step <= 0 or hi <= lo:
                raise LadderError(f"Band {ii} {bands[ii]!r} is not increasing")
            if ii and lo != self.bands[ii - 1][1]:
                raise LadderError(f"Band {ii} does not start where band {ii-1} ends")
            nsteps = (hi - lo) / step
            if nsteps != nsteps.to_integral_value():
                raise LadderError(f"Band {ii} width is not a multiple of {step}")
            self._offsets.append(offset)
            offset += int(nsteps)

        self.min_index = 0
        self.max_index = offset
        self.min_price = self.bands[0][0]
        self.max_price = self.bands[-1][1]

    def __len__(self):
        return self.max_index + 1

    def __repr__(self):
        return f"TickLadder({self.min_price}..{self.max_price}, {len(self)} ticks)"

    def tick_index(self, price):
        p = to_decimal(price)
        if p < self.min_price or p > self.max_price:
            raise OffLadderPrice(f"{price!r} is outside [{self.min_price}, {self.max_price}]")

        for (lo, hi, step), offset in zip(self.bands, self._offsets):
            if p <= hi:
                n = (p - lo) / step
                if n != n.to_integral_value():
                    raise OffLadderPrice(f"{price!r} is not a multiple of {step} above {lo}")
                return offset + int(n)
        raise OffLadderPrice(repr(price))  # pragma: no cover

    def price_at(self, index):
        if isinstance(index, bool) or int(index) != index:
            raise IndexOutOfRange(f"Tick index must be an integer. Got {index!r}")
        index = int(index)
        if not self.min_index <= index <= self.max_index:
            raise IndexOutOfRange(f"{index} not in [{self.min_index}, {self.max_index}]")

        ib = bisect.bisect_right(self._offsets, index) - 1
        lo, hi, step = self.bands[ib]
        return lo + (index - self._offsets[ib]) * step

    def move(self, price, nticks):
        """Price `nticks` away from `price`"""
        return self.price_at(self.tick_index(price) + nticks)

    def ticks_between(self, a, b):
        """Signed tick count from a to b"""
        return self.tick_index(b) - self.tick_index(a)

    def nearest_tick(self, price):
        """Tick of the on-ladder price closest to `price` (lower one on ties)"""
        p = to_decimal(price)
        if p <= self.min_price:
            return self.min_index
        if p >= self.max_price:
            return self.max_index
        lo, hi = self.min_index, self.max_index
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.price_at(mid) <= p:
                lo = mid
            else:
                hi = mid
        return lo if p - self.price_at(lo) <= self.price_at(hi) - p else hi

    def clamp(self, index):
        return min(self.max_index, max(self.min_index, index))

    def is_on_ladder(self, price):
        try:
            self.tick_index(price)
        except OffLadderPrice:
            return False
        return True


Violation = namedtuple("Violation", ("kind", "detail"))


@dataclass(frozen=True)
class Rdf:
    """
    One market-depth snapshot for one runner.

    bids
        tick -> pennies of unmatched Lay-side money (backers match it)
    asks
        tick -> pennies of unmatched Back-side money (layers match it)
    volume
        tick -> pennies matched so far at that price (cumulative)

    Treat the maps as read-only.
    """

    timestamp: int
    last_traded: int = None
    bids: dict = field(default_factory=dict)
    asks: dict = field(default_factory=dict)
    volume: dict = field(default_factory=dict)

    @classmethod
    def from_prices(cls, ladder, timestamp, ltp=None, bids=None, asks=None, volume=None):
        """Build from decimal odds and pound amounts, e.g. bids={"4.5": 8}"""

        def conv(mapping):
            return {
                ladder.tick_index(p): to_pennies(a) for p, a in (mapping or {}).items()
            }

        return cls(
            timestamp=int(timestamp),
            last_traded=None if ltp is None else ladder.tick_index(ltp),
            bids=conv(bids),
            asks=conv(asks),
            volume=conv(volume),
        )

    def best_bid(self):
        ticks = [t for t, a in self.bids.items() if a > 0]
        return max(ticks) if ticks else None

    def best_ask(self):
        ticks = [t for t, a in self.asks.items() if a > 0]
        return min(ticks) if ticks else None

    def side(self, side):
        return self.bids if side == "bid" else self.asks

    def depth_levels(self, side, depth):
        """The `depth` best non-empty price levels on a side, best first"""
        book = self.side(side)
        ticks = sorted((t for t, a in book.items() if a > 0), reverse=side == "bid")
        return ticks[:depth]

    def total(self, side, ticks):
        book = self.side(side)
        return sum(book.get(t, 0) for t in ticks)

    def total_volume(self):
        return sum(self.volume.values())

    def replace(self, **kwargs):
        params = dict(
            timestamp=self.timestamp,
            last_traded=self.last_traded,
            bids=self.bids,
            asks=self.asks,
            volume=self.volume,
        )
        params.update(kwargs)
        return Rdf(**params)


def validate_frame(frame, previous=None, ladder=None):
    """
    Return a list of Violations. Empty iff the frame is settled and sane.
    `previous` enables the cumulative-volume check, `ladder` the range check.
    """
    violations = []
    for name in ("bids", "asks", "volume"):
        for tick, amount in getattr(frame, name).items():
            if amount < 0:
                violations.append(Violation("NegativeAmount", f"{name}[{tick}] = {amount}"))
            if ladder and not ladder.min_index <= tick <= ladder.max_index:
                violations.append(Violation("OffLadderTick", f"{name}[{tick}]"))

    bb, ba = frame.best_bid(), frame.best_ask()
    if bb is not None and ba is not None and bb >= ba:
        violations.append(Violation("CrossedBook", f"best bid {bb} >= best ask {ba}"))

    if previous is not None:
        if frame.timestamp <= previous.timestamp:
            violations.append(
                Violation(
                    "NonIncreasingTimestamp", f"{frame.timestamp} <= {previous.timestamp}"
                )
            )
        for tick, amount in previous.volume.items():
            if frame.volume.get(tick, 0) < amount:
                violations.append(Violation("VolumeDecreased", f"volume[{tick}]"))

    return violations


@dataclass
class RunnerBook:
    runner_id: str
    frames: list = field(default_factory=list)
    name: str = None

    def validate(self, ladder=None):
        """All violations as (frame index, Violation)"""
        out = []
        prev = None
        for ii, frame in enumerate(self.frames):
            out.extend((ii, v) for v in validate_frame(frame, prev, ladder=ladder))
            prev = frame
        return out

    def index_at(self, timestamp):
        """Index of the last frame at or before timestamp, or -1"""
        return bisect.bisect_right([f.timestamp for f in self.frames], timestamp) - 1


def describe_tick(ladder, tick):
    return "-" if tick is None else fmt_price(ladder.price_at(tick))
