#!/usr/bin/env python
"""
Order book matching, the replay fill rule, settlement and hedging math
"""

import os, sys
from decimal import Decimal

import numpy as np
import pytest

from testutils import LADDER, tick, sample_frame

from bxs.exchange import (
    OrderBook,
    Side,
    BetState,
    Position,
    EmptyFills,
    NonPositiveAmount,
    MarketSuspended,
    AlreadyTerminal,
    MARKET,
    matched_price_average,
    profit_back,
    liability_lay,
    hedge_amount,
    close_amount_back,
    close_amount_lay,
    pl_outcomes,
    greened_pl,
    settled_pl,
    Bet,
    step_replay_fill,
)
from bxs.ladder import OffLadderPrice


def replay_book():
    book = OrderBook(LADDER, runner_id="1", replay=True)
    book.load_frame(sample_frame(0))
    return book


def test_back_walks_the_bids():
    book = replay_book()
    bet = book.place_bet(Side.BACK, tick("4.4"), 1500, "agent")

    assert bet.fills == [(tick("4.5"), 800), (tick("4.4"), 200)]
    assert bet.matched == 1000
    assert bet.unmatched == 500
    assert bet.state is BetState.PARTIALLY_MATCHED
    assert bet.average_price(LADDER) == Decimal("4.48")

    # The rest waits on the ask side at 4.4; the bid side is used up there
    snap = book.snapshot()
    assert snap.asks[tick("4.4")] == 500
    assert snap.best_bid() == tick("4.3")
    assert tick("4.5") not in snap.bids
    assert [f.maker for f in book.fills] == [MARKET, MARKET]

    # Replay mode leaves the recorded volume and LTP alone
    assert book.volume == sample_frame().volume
    assert book.last_traded == tick("4.6")


def test_lay_rests_behind_the_queue():
    book = replay_book()
    bet = book.place_bet(Side.LAY, tick("4.3"), 1000, "agent")
    assert bet.matched == 0
    assert bet.state is BetState.UNMATCHED
    assert bet.queue_ahead == 1000  # the 10 pounds already waiting at 4.3

    def traded(amount):
        frame = sample_frame(len(book.fills) + 1)
        vol = dict(frame.volume)
        vol[tick("4.3")] = amount
        book.load_frame(frame.replace(volume=vol))

    traded(1000)  # only the queue ahead traded
    assert bet.matched == 0
    traded(1500)
    assert bet.matched == 500
    assert bet.state is BetState.PARTIALLY_MATCHED
    traded(9000)
    assert bet.matched == 1000
    assert bet.state is BetState.MATCHED
    assert not book.queues["bid"][tick("4.3")]

    # Matched amounts never go down
    traded(0)
    assert bet.matched == 1000


def test_replay_fill_after_partial_cross():
    book = replay_book()
    bet = book.place_bet(Side.BACK, tick("4.4"), 1500, "agent")
    assert bet.queue_ahead == 0

    frame = sample_frame(500)
    vol = dict(frame.volume)
    vol[tick("4.4")] += 300
    book.load_frame(frame.replace(volume=vol))
    assert bet.matched == 1300

    vol[tick("4.4")] += 10_000
    book.load_frame(frame.replace(timestamp=1000, volume=vol))
    assert bet.matched == 1500
    assert bet.state is BetState.MATCHED


def test_back_then_lay_outcomes():
    book = OrderBook(LADDER)
    book.place_bet(Side.LAY, tick("2.12"), 200, "maker")
    back = book.place_bet(Side.BACK, tick("2.12"), 200, "agent")
    assert back.state is BetState.MATCHED

    book.place_bet(Side.BACK, tick("2.10"), 200, "maker")
    lay = book.place_bet(Side.LAY, tick("2.10"), 200, "agent")
    assert lay.state is BetState.MATCHED

    # Live matching moves the LTP and volume
    assert book.last_traded == tick("2.10")
    assert book.volume == {tick("2.12"): 200, tick("2.10"): 200}

    legs = [(Side.BACK, 200, Decimal("2.12")), (Side.LAY, 200, Decimal("2.10"))]
    assert pl_outcomes(legs) == (4, 0)

    pos = Position("1")
    pos.add_fill(Side.BACK, 200, "2.12")
    pos.add_fill(Side.LAY, 200, "2.10")
    assert pos.outcomes() == (4, 0)
    assert pos.realized_pl == 0


def test_no_self_matching():
    book = OrderBook(LADDER)
    mine = book.place_bet(Side.LAY, tick("3.0"), 500, "agent")
    again = book.place_bet(Side.BACK, tick("3.0"), 500, "agent")
    assert mine.matched == again.matched == 0

    assert book.available("bid", tick("3.0"), owner="agent") == 0
    assert book.available("bid", tick("3.0"), owner="other") == 500
    assert book.best_available("bid", owner="agent") is None

    other = book.place_bet(Side.BACK, tick("3.0"), 300, "other")
    assert other.state is BetState.MATCHED
    assert mine.matched == 300


def test_price_time_priority():
    book = OrderBook(LADDER)
    first = book.place_bet(Side.LAY, tick("3.0"), 300, "a")
    second = book.place_bet(Side.LAY, tick("3.0"), 300, "b")
    better = book.place_bet(Side.LAY, tick("3.05"), 100, "c")

    taker = book.place_bet(Side.BACK, tick("3.0"), 500, "d")
    assert taker.fills == [(tick("3.05"), 100), (tick("3.0"), 300), (tick("3.0"), 100)]
    assert better.state is BetState.MATCHED
    assert first.state is BetState.MATCHED
    assert second.matched == 100


def test_cancel_and_errors():
    book = replay_book()
    bet = book.place_bet(Side.BACK, tick("4.4"), 1500, "agent")
    book.cancel_bet(bet)
    assert bet.state is BetState.CANCELLED
    assert bet.cancelled == 500
    assert bet.unmatched == 0
    assert bet.matched == 1000
    assert tick("4.4") not in book.snapshot().asks

    with pytest.raises(AlreadyTerminal):
        book.cancel_bet(bet)

    for amount in (0, -100, 2.5, True):
        with pytest.raises(NonPositiveAmount):
            book.place_bet(Side.BACK, tick("4.4"), amount, "agent")
    with pytest.raises(OffLadderPrice):
        book.place_bet(Side.BACK, 400, 100, "agent")

    book.load_frame(sample_frame(500), status="SUSPENDED")
    with pytest.raises(MarketSuspended):
        book.place_bet(Side.BACK, tick("4.4"), 100, "agent")
    book.load_frame(sample_frame(1000))
    book.place_bet(Side.BACK, tick("4.4"), 100, "agent")


def test_settlement_math():
    assert matched_price_average([("4.5", 800), ("4.4", 200)]) == Decimal("4.48")
    with pytest.raises(EmptyFills):
        matched_price_average([])
    with pytest.raises(NonPositiveAmount):
        matched_price_average([("4.5", 0)])

    assert profit_back(10000, "4.9") == 39000
    assert liability_lay(300, "4.6") == 1080

    # Lay 3.00 at 4.6 closed by a Back at 5.2 (target) or 4.2 (stop)
    assert close_amount_back("4.6", 300, "5.2") == 265
    assert settled_pl(Side.LAY, 300, 265) == 35
    assert close_amount_back("4.6", 300, "4.2") == 329
    assert settled_pl(Side.LAY, 300, 329) == -29
    assert greened_pl(Side.LAY, 300, "4.6", "5.2") == 35

    # Back 100.00 at 4.9 closed by a Lay at 4.6
    assert close_amount_lay("4.9", 10000, "4.6") == 10652
    assert settled_pl(Side.BACK, 10000, 10652) == 652

    # Both outcomes of an exact hedge are equal
    close = hedge_amount("4.9", 10000, "4.6")
    wins, loses = pl_outcomes(
        [(Side.BACK, 10000, Decimal("4.9")), (Side.LAY, close, Decimal("4.6"))], rounded=False
    )
    assert abs(wins - loses) < Decimal("1e-20")

    # Half-to-even rounding: 69.27 at 4.3 closed at 4 is 74.46525
    assert close_amount_lay("4.3", 6927, "4") == 7447


def test_position():
    pos = Position("1")
    assert pos.open_side == "Flat"
    assert pos.realized_pl == 0

    pos.add_fill(Side.LAY, 200, "4.6")
    pos.add_fill(Side.LAY, 100, "4.6")
    assert pos.open_side == "Lay"
    assert pos.opened == 300
    assert pos.open_amount == 300
    assert pos.close_amount_at("5.2") == 265

    pos.add_fill(Side.BACK, 100, "5.2")
    assert pos.open_side == "Lay"
    assert pos.close_amount_at("5.2") == 165
    pos.add_fill(Side.BACK, 165, "5.2")
    assert pos.open_side == "Flat"
    assert pos.close_price == Decimal("5.2")
    assert pos.realized_pl == 35


def test_step_replay_fill():
    bet = Bet(1, Side.LAY, tick("4.3"), 1000, "agent", state=BetState.UNMATCHED, queue_ahead=400)
    step_replay_fill(bet, 300)
    assert bet.matched == 0
    step_replay_fill(bet, 600)
    assert bet.matched == 200
    step_replay_fill(bet, 500)  # cumulative volume can be re-reported lower
    assert bet.matched == 200
    step_replay_fill(bet, 5000)
    assert bet.matched == 1000
    assert bet.state is BetState.MATCHED
    assert step_replay_fill(bet, 9000).matched == 1000

    # Part of it crossed on placement. Only the rest waits for traded volume
    bet = Bet(2, Side.BACK, tick("4.4"), 1000, "agent", queue_ahead=0, rest_base=200)
    bet._fill(tick("4.4"), 200)
    step_replay_fill(bet, 300)
    assert bet.matched == 500
    assert bet.state is BetState.PARTIALLY_MATCHED


class ListBook:
    """Brute-force matcher over a flat list of resting orders"""

    def __init__(self):
        self.resting = []  # [id, side, tick, remaining, owner]
        self.matched = {}
        self.fills = {}
        self.trades = []

    def place(self, bet_id, side, tick_, amount, owner):
        self.matched[bet_id] = 0
        self.fills[bet_id] = []
        remaining = amount
        while remaining:
            if side is Side.BACK:
                crossing = [r for r in self.resting if r[1] is Side.LAY and r[2] >= tick_]
                crossing.sort(key=lambda r: -r[2])  # stable: earlier orders first
            else:
                crossing = [r for r in self.resting if r[1] is Side.BACK and r[2] <= tick_]
                crossing.sort(key=lambda r: r[2])
            crossing = [r for r in crossing if r[3] and r[4] != owner]
            if not crossing:
                break
            maker = crossing[0]
            take = min(maker[3], remaining)
            maker[3] -= take
            remaining -= take
            self.matched[maker[0]] += take
            self.matched[bet_id] += take
            self.fills[maker[0]].append((maker[2], take))
            self.fills[bet_id].append((maker[2], take))
            self.trades.append((maker[2], take, maker[0], bet_id))
        if remaining:
            self.resting.append([bet_id, side, tick_, remaining, owner])

    def cancel(self, bet_id):
        self.resting = [r for r in self.resting if r[0] != bet_id]


def test_fifo_matches_brute_force():
    rng = np.random.default_rng(7)
    center = tick("3.0")
    for _ in range(50):
        book = OrderBook(LADDER, runner_id="1")
        model = ListBook()
        for _ in range(int(rng.integers(5, 40))):
            live = [b for b in book.bets.values() if not b.is_terminal]
            if live and rng.random() < 0.2:
                bet = live[int(rng.integers(len(live)))]
                book.cancel_bet(bet)
                model.cancel(bet.id)
                continue
            side = Side.BACK if rng.random() < 0.5 else Side.LAY
            tick_ = int(center + rng.integers(-3, 4))
            amount = int(rng.integers(1, 20)) * 100
            owner = str(rng.choice(["a", "b", "c"]))
            bet = book.place_bet(side, tick_, amount, owner)
            model.place(bet.id, side, tick_, amount, owner)

        for bet_id, bet in book.bets.items():
            assert bet.matched == model.matched[bet_id]
            assert bet.fills == model.fills[bet_id]
        assert [tuple(f) for f in book.fills] == model.trades
        assert book.volume == {
            t: sum(a for tt, a, _, _ in model.trades if tt == t)
            for t in {tt for tt, _, _, _ in model.trades}
        }


def test_green_mirror_symmetry():
    rng = np.random.default_rng(5)
    for _ in range(500):
        t1, t2 = (int(t) for t in rng.integers(LADDER.min_index, LADDER.max_index + 1, size=2))
        p1, p2 = LADDER.price_at(t1), LADDER.price_at(t2)
        amount = int(rng.integers(1000, 100000))

        back = greened_pl(Side.BACK, amount, p1, p2)
        lay = greened_pl(Side.LAY, amount, p1, p2)
        assert back == -lay
        if t1 > t2:
            assert back > 0  # backed high, laid off lower
        elif t1 < t2:
            assert back < 0
        else:
            assert back == lay == 0

        # The exact hedge equalizes both outcomes
        for side in (Side.BACK, Side.LAY):
            close = hedge_amount(p1, amount, p2)
            wins, loses = pl_outcomes([(side, amount, p1), (side.opposite, close, p2)], rounded=False)
            assert abs(wins - loses) < Decimal("1e-12")

        close = close_amount_lay(p1, amount, p2)
        assert close == close_amount_back(p1, amount, p2)
        assert settled_pl(Side.BACK, amount, close) == -settled_pl(Side.LAY, amount, close)
        assert abs(settled_pl(Side.BACK, amount, close) - back) <= 1


if __name__ == "__main__":
    test_back_walks_the_bids()
    test_lay_rests_behind_the_queue()
    test_replay_fill_after_partial_cross()
    test_step_replay_fill()
    test_back_then_lay_outcomes()
    test_no_self_matching()
    test_price_time_priority()
    test_cancel_and_errors()
    test_settlement_math()
    test_position()
    test_fifo_matches_brute_force()
    test_green_mirror_symmetry()

    print("=" * 50)
    print(" All Passed ".center(50, "="))
    print("=" * 50)
