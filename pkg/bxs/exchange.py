"""
Simulated exchange: bet lifecycle, settlement and hedging math, and a
price-time priority order book for a single runner.

Money is integer pennies. Odds are Decimals (or anything `to_decimal` accepts).
Back bets rest on the ask side; Lay bets rest on the bid side. A Back matches
bid-side money at its price or higher, best (highest) first. A Lay matches
ask-side money at its price or lower, best (lowest) first.
"""

import itertools
import logging
from collections import namedtuple, deque
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .ladder import OffLadderPrice, Rdf
from .utils import to_decimal, round_pennies

logger = logging.getLogger(__name__)

MARKET = "market"  # owner of anonymous replay depth


class EmptyFills(ValueError):
    pass


class NonPositiveAmount(ValueError):
    pass


class MarketSuspended(ValueError):
    pass


class AlreadyTerminal(ValueError):
    pass


class Side(str, Enum):
    BACK = "Back"
    LAY = "Lay"

    @property
    def opposite(self):
        return Side.LAY if self is Side.BACK else Side.BACK

    @property
    def rests_on(self):
        """Book side where an unmatched bet of this side waits"""
        return "ask" if self is Side.BACK else "bid"


class BetState(str, Enum):
    IN_PROGRESS = "InProgress"
    UNMATCHED = "Unmatched"
    PARTIALLY_MATCHED = "PartiallyMatched"
    MATCHED = "Matched"
    CANCELLED = "Cancelled"


Fill = namedtuple("Fill", ("tick", "amount", "maker", "taker"))


#################################################
## Settlement math
#################################################


def matched_price_average(fills):
    """
    Global matched price of a bet: sum(price*amount)/sum(amount).
    `fills` is an iterable of (price, amount).
    """
    fills = list(fills)
    if not fills:
        raise EmptyFills("No fills to average")
    num = Decimal(0)
    den = Decimal(0)
    for price, amount in fills:
        amount = to_decimal(amount)
        if amount <= 0:
            raise NonPositiveAmount(f"Fill amount must be > 0. Got {amount}")
        num += to_decimal(price) * amount
        den += amount
    return num / den


def profit_back(amount, price):
    """Back winnings, amount*(price-1), in pennies"""
    return round_pennies(to_decimal(amount) * (to_decimal(price) - 1))


def liability_lay(amount, price):
    """Lay liability, amount*(price-1), in pennies"""
    return round_pennies(to_decimal(amount) * (to_decimal(price) - 1))


def hedge_amount(open_price, open_amount, close_price):
    """Unrounded close stake (pennies, Decimal) that greens a position"""
    return to_decimal(open_price) * to_decimal(open_amount) / to_decimal(close_price)


def close_amount_lay(open_back_price, open_back_amount, lay_close_price):
    """Lay stake closing a Back, rounded half-to-even to the penny"""
    return round_pennies(hedge_amount(open_back_price, open_back_amount, lay_close_price))


def close_amount_back(open_lay_price, open_lay_amount, back_close_price):
    """Back stake closing a Lay, rounded half-to-even to the penny"""
    return round_pennies(hedge_amount(open_lay_price, open_lay_amount, back_close_price))


def pl_outcomes(legs, rounded=True):
    """
    (PL if the runner wins, PL if the runner loses) for matched legs of
    (side, amount_pennies, price).
    """
    wins = Decimal(0)
    loses = Decimal(0)
    for side, amount, price in legs:
        amount = to_decimal(amount)
        win = amount * (to_decimal(price) - 1)
        if Side(side) is Side.BACK:
            wins += win
            loses -= amount
        else:
            wins -= win
            loses += amount
    if rounded:
        return round_pennies(wins), round_pennies(loses)
    return wins, loses


def greened_pl(open_side, open_amount, open_price, close_price):
    """
    PL of a position closed with the exact hedge stake. Both outcomes are equal
    before rounding; the result is rounded half-to-even.
    """
    close = hedge_amount(open_price, open_amount, close_price)
    _, loses = pl_outcomes(
        [(open_side, open_amount, open_price), (Side(open_side).opposite, close, close_price)],
        rounded=False,
    )
    return round_pennies(loses)


def settled_pl(open_side, open_amount, close_amount):
    """
    Logged PL of a closed trade from its stakes: the runner-loses branch.
    Back-open: close - open. Lay-open: open - close.
    """
    if Side(open_side) is Side.BACK:
        return int(close_amount) - int(open_amount)
    return int(open_amount) - int(close_amount)


#################################################
## Bets and positions
#################################################


@dataclass(eq=False)
class Bet:
    id: int
    side: Side
    tick: int
    requested: int
    owner: str
    matched: int = 0
    cancelled: int = 0
    state: BetState = BetState.IN_PROGRESS
    queue_ahead: int = 0
    fills: list = field(default_factory=list)  # (tick, amount)
    rest_base: int = 0  # matched amount when it started resting
    placed_volume: int = 0  # traded volume at `tick` when it started resting

    @property
    def unmatched(self):
        return self.requested - self.matched - self.cancelled

    @property
    def is_terminal(self):
        return self.state in {BetState.MATCHED, BetState.CANCELLED}

    def average_price(self, ladder):
        return matched_price_average(
            (ladder.price_at(t), a) for t, a in self.fills if a > 0
        )

    def _fill(self, tick, amount):
        if amount <= 0:
            return
        if amount > self.unmatched:
            raise ValueError(f"Overfill of bet {self.id}")
        self.matched += amount
        self.fills.append((tick, amount))
        self._settle_state()

    def _settle_state(self):
        if self.state is BetState.CANCELLED:
            return
        if self.matched == self.requested:
            self.state = BetState.MATCHED
        elif self.matched:
            self.state = BetState.PARTIALLY_MATCHED
        else:
            self.state = BetState.UNMATCHED


def step_replay_fill(bet, traded_since_placement):
    """
    Worst-case fill rule for replayed data: the resting part of a bet only
    starts matching after `queue_ahead` has traded at its price, then fills one
    for one with further volume. Matched amounts never decrease.
    """
    if bet.is_terminal:
        return bet
    resting = bet.requested - bet.rest_base - bet.cancelled
    through = min(max(0, int(traded_since_placement) - bet.queue_ahead), resting)
    new = bet.rest_base + through - bet.matched
    if new > 0:
        bet._fill(bet.tick, new)
    return bet


class Position:
    """
    One owner's exposure on one runner. The first matched side is the open side;
    the opposite side closes it. Exposure is tracked as remaining hedge value
    (open stake x open price minus close stakes x close prices).
    """

    def __init__(self, runner_id=None):
        self.runner_id = runner_id
        self.open_legs = []
        self.close_legs = []

    @property
    def open_side_enum(self):
        return Side(self.open_legs[0][0]) if self.open_legs else None

    def add_fill(self, side, amount, price):
        side = Side(side)
        if not self.open_legs or side is self.open_side_enum:
            self.open_legs.append((side, int(amount), to_decimal(price)))
        else:
            self.close_legs.append((side, int(amount), to_decimal(price)))

    @property
    def opened(self):
        return sum(a for _, a, _ in self.open_legs)

    @property
    def closed(self):
        return sum(a for _, a, _ in self.close_legs)

    @property
    def open_price(self):
        return matched_price_average((p, a) for _, a, p in self.open_legs)

    @property
    def close_price(self):
        return matched_price_average((p, a) for _, a, p in self.close_legs)

    def hedge_remaining(self):
        """open stake*price - sum(close stake*price). Decimal penny-odds"""
        value = sum((a * p for _, a, p in self.open_legs), Decimal(0))
        value -= sum((a * p for _, a, p in self.close_legs), Decimal(0))
        return value

    def close_amount_at(self, price):
        """Stake that completes the hedge at `price` (pennies, >= 0)"""
        return max(0, round_pennies(self.hedge_remaining() / to_decimal(price)))

    @property
    def open_amount(self):
        if not self.open_legs:
            return 0
        return max(0, round_pennies(self.hedge_remaining() / self.open_price))

    @property
    def open_side(self):
        return "Flat" if self.open_amount == 0 else self.open_side_enum.value

    def outcomes(self):
        return pl_outcomes(self.open_legs + self.close_legs)

    @property
    def realized_pl(self):
        """Runner-loses PL of the matched legs"""
        if not self.open_legs:
            return 0
        return settled_pl(self.open_side_enum, self.opened, self.closed)


#################################################
## Order book
#################################################


class OrderBook:
    """
    Price-time priority book for one runner.

    Liquidity comes from resting Bets (FIFO per price) and, in replay mode,
    from anonymous market depth loaded from frames. Market depth at a price is
    ahead of any bet resting there. Owners never match their own resting bets.

    The book is a single-owner mutable object. `snapshot()` hands out an
    immutable Rdf view.
    """

    def __init__(self, ladder, runner_id=None, replay=False):
        self.ladder = ladder
        self.runner_id = runner_id
        self.replay = replay
        self.queues = {"bid": {}, "ask": {}}  # tick -> deque[Bet]
        self.depth = {"bid": {}, "ask": {}}  # tick -> pennies (anonymous)
        self.volume = {}
        self.last_traded = None
        self.timestamp = 0
        self.suspended = False
        self.bets = {}
        self.fills = []
        self._ids = itertools.count(1)

    #################################################
    ## Orders

    def place_bet(self, side, tick, amount, owner):
        side = Side(side)
        if self.suspended:
            raise MarketSuspended(f"Market for runner {self.runner_id} is suspended")
        if isinstance(amount, bool) or int(amount) != amount or amount <= 0:
            raise NonPositiveAmount(f"Amount must be a positive number of pennies: {amount!r}")
        if isinstance(tick, bool) or int(tick) != tick:
            raise OffLadderPrice(f"Tick must be an integer: {tick!r}")
        if not self.ladder.min_index <= tick <= self.ladder.max_index:
            raise OffLadderPrice(f"Tick {tick} is off the ladder")

        bet = Bet(id=next(self._ids), side=side, tick=int(tick), requested=int(amount), owner=owner)
        self.bets[bet.id] = bet

        self._cross(bet)

        bet.rest_base = bet.matched
        if bet.unmatched:
            rest = side.rests_on
            bet.queue_ahead = self.depth[rest].get(bet.tick, 0) + sum(
                b.unmatched for b in self.queues[rest].get(bet.tick, ())
            )
            bet.placed_volume = self.volume.get(bet.tick, 0)
            self.queues[rest].setdefault(bet.tick, deque()).append(bet)

        bet._settle_state()
        logger.debug(
            f"place {side.value} {bet.requested}p @{bet.tick} owner={owner} "
            f"-> {bet.state.value} matched={bet.matched}"
        )
        return bet

    def _cross(self, bet):
        """Consume opposing liquidity best-price-first"""
        if bet.side is Side.BACK:
            opp = "bid"
            ticks = sorted(
                (t for t in self._ticks(opp) if t >= bet.tick), reverse=True
            )
        else:
            opp = "ask"
            ticks = sorted(t for t in self._ticks(opp) if t <= bet.tick)

        for tick in ticks:
            if not bet.unmatched:
                break
            # Anonymous depth first; it was there before any resting bet
            avail = self.depth[opp].get(tick, 0)
            if avail:
                take = min(avail, bet.unmatched)
                self.depth[opp][tick] = avail - take
                self._match(tick, take, None, bet)

            queue = self.queues[opp].get(tick, deque())
            for maker in list(queue):
                if not bet.unmatched:
                    break
                if maker.owner == bet.owner or maker.is_terminal:
                    continue
                take = min(maker.unmatched, bet.unmatched)
                self._match(tick, take, maker, bet)
                if maker.is_terminal:
                    queue.remove(maker)

    def _ticks(self, side):
        ticks = set(t for t, a in self.depth[side].items() if a > 0)
        ticks.update(t for t, q in self.queues[side].items() if q)
        return ticks

    def _match(self, tick, amount, maker, taker):
        taker._fill(tick, amount)
        if maker is not None:
            maker._fill(tick, amount)
        self.fills.append(Fill(tick, amount, maker.id if maker else MARKET, taker.id))
        if not self.replay:
            self.volume[tick] = self.volume.get(tick, 0) + amount
            self.last_traded = tick

    def cancel_bet(self, bet):
        if bet.is_terminal:
            raise AlreadyTerminal(f"Bet {bet.id} is {bet.state.value}")
        bet.cancelled = bet.unmatched
        bet.state = BetState.CANCELLED
        queue = self.queues[bet.side.rests_on].get(bet.tick)
        if queue and bet in queue:
            queue.remove(bet)
        logger.debug(f"cancel bet {bet.id}: matched={bet.matched} cancelled={bet.cancelled}")
        return bet

    #################################################
    ## Replay

    def load_frame(self, frame, status="OPEN"):
        """
        Replace anonymous depth with the frame's and advance resting bets with
        the worst-case fill rule.
        """
        self.timestamp = frame.timestamp
        self.suspended = status == "SUSPENDED"
        self.depth = {"bid": dict(frame.bids), "ask": dict(frame.asks)}
        self.volume = dict(frame.volume)
        self.last_traded = frame.last_traded

        for side in ("bid", "ask"):
            for tick, queue in self.queues[side].items():
                for bet in list(queue):
                    before = bet.matched
                    step_replay_fill(bet, self.volume.get(tick, 0) - bet.placed_volume)
                    if bet.matched > before:
                        self.fills.append(Fill(tick, bet.matched - before, bet.id, MARKET))
                    if bet.is_terminal:
                        queue.remove(bet)

    #################################################
    ## Views

    def best_bid(self):
        ticks = self._ticks("bid")
        return max(ticks) if ticks else None

    def best_ask(self):
        ticks = self._ticks("ask")
        return min(ticks) if ticks else None

    def available(self, side, tick, owner=None):
        """Money at `tick` on `side` that `owner` could match"""
        amount = self.depth[side].get(tick, 0)
        amount += sum(
            b.unmatched for b in self.queues[side].get(tick, ()) if b.owner != owner
        )
        return amount

    def best_available(self, side, owner=None):
        """Best tick on a book side with money `owner` could match"""
        ticks = [t for t in self._ticks(side) if self.available(side, t, owner) > 0]
        if not ticks:
            return None
        return max(ticks) if side == "bid" else min(ticks)

    def snapshot(self):
        def merged(side):
            out = dict((t, a) for t, a in self.depth[side].items() if a > 0)
            for tick, queue in self.queues[side].items():
                amt = sum(b.unmatched for b in queue)
                if amt:
                    out[tick] = out.get(tick, 0) + amt
            return out

        return Rdf(
            timestamp=self.timestamp,
            last_traded=self.last_traded,
            bids=merged("bid"),
            asks=merged("ask"),
            volume=dict(self.volume),
        )
