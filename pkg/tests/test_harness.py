#!/usr/bin/env python
"""
Trade log lines, category models and the trading loop
"""

import os, sys
import csv
import json
from decimal import Decimal
from types import SimpleNamespace

import pytest

from testutils import (
    LADDER,
    START,
    CLASS_MEANS,
    STRONG_UP_PROBABILITIES,
    NEUTRAL_PROBABILITIES,
    scripted_race,
    stub_archive,
    testconfig,
)

from bxs.harness import (
    HEADER,
    TradeLogLine,
    CategoryModel,
    ModelSet,
    MissingCategoryModel,
    potential_pl,
    inconsistent_lines,
    read_trade_log,
    trade_race,
    trading_loop,
    outcome,
    summary,
    pl_curve,
    write_outputs,
    session_line,
)
from bxs.exchange import Position, Side, settled_pl
from bxs.mechanisms import SessionReport, MechanismKind, Direction, TradeState
from bxs.nnkit.models import FixedModel

# Live trades of the best model in its first week, written the way the
# exchange reports money ("£" and comma decimals)
TRADES = """\
£0,00 2 NOT_OPEN Ham_2nd_Sep 38189,27 8 5.5 6.2 5.1 LB 6 4 £11,29 -£7,84 0 0 £0,00 £0,00
£0,00 2 NOT_OPEN Ham_2nd_Sep 18415,76 8 4.5 3.95 4.9 BL 6 4 £13,92 -£8,16 0 0 £0,00 £0,00
£6,52 1 CLOSED FfosL_2nd_Sep 23465,96 6 4.9 4.6 5.2 BL 3 3 £6,52 -£5,77 4.9 4.6 £100,00 £106,52
-£2,00 1 CLOSED Ham_2nd_Sep 15501,31 6 5.1 5.5 4.7 LB 4 4 £7,27 -£8,51 5.1 5 £100,00 £102,00
£0,00 1 NOT_OPEN FfosL_2nd_Sep 22716,31 7 4.4 4.1 4.7 BL 3 3 £7,32 -£6,38 0 0 £0,00 £0,00
£0,00 1 CLOSED FfosL_2nd_Sep 24814,14 7 4.5 4.9 4.1 LB 4 4 £8,16 -£9,76 4.5 4.5 £100,00 £100,00
£0,00 2 NOT_OPEN Ham_2nd_Sep 20976,69 9 4.9 4.3 5.3 BL 6 4 £13,95 -£7,55 0 0 £0,00 £0,00
£6,00 1 CLOSED Brig_2nd_Sep 20249,86 9 5.3 5 5.6 BL 3 3 £6,00 -£5,36 5.3 5 £100,00 £106,00
£0,00 1 CLOSED Muss_3rd_Sep 21280,96 9 5 4.7 5.3 BL 3 3 £6,38 -£5,66 5 5 £100,00 £100,00
£11,11 2 CLOSED Good_3rd_Sep 21824,36 6 6 5.4 6.8 BL 6 4 £11,11 -£11,76 6 5.4 £100,00 £111,11
£0,00 1 CLOSED Good_3rd_Sep 45269,49 9 5.6 5.3 5.9 BL 3 3 £5,66 -£5,08 5.6 5.6 £100,00 £100,00
-£5,77 2 CLOSED Good_3rd_Sep 15054,53 10 4.9 4.3 5.3 BL 6 4 £13,95 -£7,55 4.9 5.2 £100,00 £94,23
£5,66 2 CLOSED Good_3rd_Sep 19614,89 10 5.6 5 6 BL 6 4 £12,00 -£6,67 5.6 5.3 £100,00 £105,66
£0,00 2 NOT_OPEN Ling_3rd_Sep 30635,19 7 4.8 5.4 4.4 LB 6 4 £11,11 -£9,09 0 0 £0,00 £0,00
£10,71 2 CLOSED Ling_3rd_Sep 29429,46 7 5 5.6 4.6 LB 6 4 £10,71 -£8,70 5 5.6 £100,00 £89,29
£2,27 2 CLOSED Bath_4th_Sep 31543,94 7 4.5 3.95 4.9 BL 6 4 £13,92 -£8,16 4.5 4.4 £100,00 £102,27
£2,04 2 CLOSED Bath_4th_Sep 31036,05 7 4.8 5.4 4.4 LB 6 4 £11,11 -£9,09 4.8 4.9 £100,00 £97,96
£5,20 2 CLOSED Bath_4th_Sep 6343,06 6 4.3 3.85 4.7 BL 6 4 £11,69 -£8,51 4.3 4 £69,27 £74,47
£0,00 2 CLOSED Kemp_4th_Sep 17928,36 8 4.6 4 5 BL 6 4 £15,00 -£8,00 4.6 4.6 £100,00 £100,00
£0,00 2 NOT_OPEN Salis_5th_Sep 29961,6 6 4.2 3.8 4.6 BL 6 4 £10,53 -£8,70 0 0 £0,00 £0,00
£0,00 2 NOT_OPEN Salis_5th_Sep 14194,09 6 4.2 3.8 4.6 BL 6 4 £10,53 -£8,70 0 0 £0,00 £0,00
£0,00 1 NOT_OPEN Salis_5th_Sep 19254,96 7 4.2 3.95 4.5 BL 3 3 £6,33 -£6,67 0 0 £0,00 £0,00
£3,74 1 CLOSED Salis_5th_Sep 17128,67 7 4.3 4.7 3.95 LB 4 4 £8,51 -£8,86 4.3 4.47 £100,00 £96,26
-£0,00 1 CLOSED Newc_6th_Sep 17883,92 10 4.3 4.7 3.95 LB 4 4 £8,51 -£8,86 4.3 4.3 £100,00 £100,00
"""

RUNNERS = (
    "Nightster Tectonic Mccool_Bannanas King_Of_Paradise Cabuchon Men_Dont_Cry "
    "George_Fenton Admiralofthesea Mishaal Deeds_Not_Words Argent_Knight "
    "Minority_Interest Swift_Blade Prospera Rock_God Kakapuka Dreams_Of_Glory "
    "Devon_Diva For_Posterity Mysterious_Man New_Rich Catchanova South_Cape Red_Pike"
).split()


def trade_lines():
    out = []
    for runner, text in zip(RUNNERS, TRADES.splitlines()):
        cols = text.split()
        cols.insert(4, runner)
        out.append(TradeLogLine.from_row("\t".join(cols)))
    return out


def test_trade_log_consistency():
    lines = trade_lines()
    assert len(lines) == 24
    mccool = lines[2]
    assert (mccool.pl, mccool.o_am, mccool.cat_am) == (652, 10000, 10652)
    assert mccool.volume == 2346596
    assert lines[-1].pl == 0  # "-£0,00"

    # Every closed trade recomputes from its odds and amounts except one,
    # whose logged close odds are an average
    bad = inconsistent_lines(lines)
    assert [b.runner for b in bad] == ["South_Cape"]
    assert bad[0].recompute_pl() == 380
    assert bad[0].pl == 374

    assert all(line.recompute_pl() is None for line in lines if line.end_state == "NOT_OPEN")


def test_trade_log_targets():
    for line in trade_lines():
        sign = 1 if line.dir == "LB" else -1
        assert LADDER.move(line.entr, sign * line.t_p) == line.targ, line.runner
        assert LADDER.move(line.entr, -sign * line.t_l) == line.sto, line.runner
        # Potential PLs are for a 100.00 stake
        assert potential_pl(line.dir, 10000, line.entr, line.targ) == line.pt_p, line.runner
        assert potential_pl(line.dir, 10000, line.entr, line.sto) == line.pt_l, line.runner


def test_trade_log_text(tmp_path):
    lines = trade_lines()
    assert TradeLogLine.from_row(lines[2].to_line()) == lines[2]
    assert lines[2].to_row()[:5] == ["6.52", "1", "CLOSED", "FfosL_2nd_Sep", "Mccool_Bannanas"]
    assert lines[17].to_row()[-4:] == ["4.3", "4", "69.27", "74.47"]

    path = tmp_path / "trades.tsv"
    path.write_text(
        "\t".join(HEADER) + "\n" + "\n".join(line.to_line() for line in lines) + "\n"
    )
    assert read_trade_log(path) == lines

    with pytest.raises(ValueError):
        TradeLogLine.from_row("1\t2\t3")
    with pytest.raises(ValueError):
        row = lines[0].to_row()
        row[0] = "1.00"
        TradeLogLine.from_row(row)  # NOT_OPEN with a PL


#################################################
## Trading
#################################################


def models(probabilities=STRONG_UP_PROBABILITIES):
    means = {int(k): v for k, v in CLASS_MEANS.items()}
    return ModelSet(default=CategoryModel(FixedModel(probabilities), class_means=means))


def race(race_id="R1", post=("4.7", "4.8", "4.9", "5.0", "5.1", "5.2"), start=START):
    return scripted_race(race_id, {"1": (["4.6"] * 8, list(post))}, start=start, names={"1": "Horse"})


def trading_setup():
    config = testconfig(input_frames=8, segment_frames=4, concurrency=1)
    return config, config.category_rules((1.0, 2.0))


def test_trade_race_target():
    config, rules = trading_setup()
    result = trade_race(race(), models(), config, rules)
    assert len(result.lines) == 1
    line = result.lines[0]
    assert line.to_row() == [
        "0.35", "2", "CLOSED", "R1", "Horse", "80.00", "1",
        "4.6", "5.2", "4.2", "LB", "6", "4", "0.35", "-0.29",
        "4.6", "5.2", "3.00", "2.65",
    ]
    assert line.is_consistent()
    assert outcome(line, LADDER) == "target"

    (record,) = result.records
    assert record["state"] == "ClosedProfit"
    assert record["event"] == "TARGET"
    assert record["mechanism"] == "trailing"
    assert record["predicted"] == "SU"
    assert (record["target_ticks"], record["stop_ticks"]) == (6, 4)


def test_trade_race_stop():
    config, rules = trading_setup()
    result = trade_race(race(post=("4.5", "4.4", "4.3", "4.2", "4.1")), models(), config, rules)
    (line,) = result.lines
    assert line.pl == -29
    assert line.c_odd == Decimal("4.2")
    assert outcome(line, LADDER) == "stop"


def finished_session(close_fills):
    """A Lay 3.00 at 4.6 swing session closed by Back fills of (amount, price)"""
    pos = Position("1")
    pos.add_fill(Side.LAY, 300, "4.6")
    for amount, price in close_fills:
        pos.add_fill(Side.BACK, amount, price)
    closed = pos.closed
    pl = settled_pl(Side.LAY, 300, closed)
    rep = SessionReport(
        kind=MechanismKind.SWING,
        direction=Direction.UP,
        state=TradeState.CLOSED_PROFIT if pl > 0 else TradeState.CLOSED_LOSS,
        event="TARGET",
        entry_tick=LADDER.tick_index("4.6"),
        target_ticks=4,
        stop_ticks=3,
        stake=300,
        open_amount=300,
        close_amount=closed,
        open_price=Decimal("4.6"),
        close_price=pos.close_price if closed else None,
        close_tick=None,
        pl=pl,
        moved_ticks=0,
        frames=1,
    )
    return SimpleNamespace(report=lambda: rep, params=SimpleNamespace(entry_amount=300), position=pos)


def test_session_line_close_odds():
    r = race()
    book = r.runners["1"]

    line = session_line(r, book, 8000, finished_session([(265, "5.2")]), LADDER)
    assert (line.pl, line.c_odd, line.cat_am) == (35, Decimal("5.2"), 265)
    assert line.is_consistent()

    # Hedged at two prices: C_ODD is the amount-weighted average and still recomputes
    line = session_line(r, book, 8000, finished_session([(100, "5.2"), (159, "5.4")]), LADDER)
    assert line.c_odd == Decimal("5.322780")
    assert (line.pl, line.cat_am) == (41, 259)
    assert line.is_consistent()

    # Left partly open: C_ODD is the real close price and the line is reported
    line = session_line(r, book, 8000, finished_session([(100, "5.2")]), LADDER)
    assert (line.pl, line.c_odd, line.cat_am) == (200, Decimal("5.2"), 100)
    assert line.pl == settled_pl(line.open_side, line.o_am, line.cat_am)
    assert inconsistent_lines([line]) == [line]
    assert line.recompute_pl() == 35


def test_neutral_and_missing_models():
    config, rules = trading_setup()
    result = trade_race(race(), models(NEUTRAL_PROBABILITIES), config, rules)
    assert result.lines == [] and result.records == []

    result = trade_race(race(), ModelSet(), config, rules)
    (line,) = result.lines
    assert line.to_row() == [
        "0.00", "-", "NOT_OPEN", "R1", "Horse", "80.00", "1",
        "-", "-", "-", "-", "-", "-", "-", "-",
        "0", "0", "0.00", "0.00",
    ]
    assert result.records[0]["event"] == "MISSING_MODEL"
    assert outcome(line, LADDER) == "not_open"

    # Another category only
    config.category = 0
    assert trade_race(race(), models(), config, rules).lines == []


def test_model_set_load(tmp_path):
    stub_archive(tmp_path / "model_default.json", STRONG_UP_PROBABILITIES)
    stub_archive(tmp_path / "model_41.json", NEUTRAL_PROBABILITIES, category=41)
    ms = ModelSet.load(tmp_path)
    assert set(ms.models) == {41}
    assert ms.get(41).predict_proba([[0.0]]).argmax() == 2
    assert ms.get(5).predict_proba([[0.0]]).argmax() == 4
    assert ms.get(5).class_mean(4) == CLASS_MEANS["4"]
    assert ms.liquidity_thresholds == (1.0, 2.0)

    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(MissingCategoryModel):
        ModelSet.load(empty)
    with pytest.raises(MissingCategoryModel):
        ModelSet().get(3)


def test_loop_and_outputs(tmp_path):
    config, rules = trading_setup()
    races = [
        race("R2", post=("4.5", "4.4", "4.3", "4.2", "4.1"), start=START + 3_600_000),
        race("R1"),
    ]
    results = trading_loop(races, models(), config, rules)
    assert [r.race_id for r in results] == ["R1", "R2"]

    lines = [line for r in results for line in r.lines]
    assert [line.pl for line in lines] == [35, -29]
    assert pl_curve(lines, 300) == [
        (1, "R1", "Horse", "0.35", "0.35", "0.116667"),
        (2, "R2", "Horse", "-0.29", "0.06", "0.020000"),
    ]

    summ = summary(lines, 300, LADDER)
    assert summ["trades"] == 2
    assert summ["greens"]["target"] == 1
    assert summ["reds"]["stop"] == 1
    assert summ["total_pl"] == "0.06"
    assert summ["ticks"]["trailing"] == {"positive": 6, "negative": -4}

    out = tmp_path / "out"
    write_outputs(results, out, 300, LADDER)
    assert read_trade_log(out / "trades.tsv") == lines
    with open(out / "pl.csv") as fp:
        rows = list(csv.reader(fp))
    assert rows[0] == ["n", "race", "runner", "pl", "cum_pl", "cum_pl_relative"]
    assert rows[-1][-2:] == ["0.06", "0.020000"]
    assert json.loads((out / "summary.json").read_text()) == summ
    records = [json.loads(t) for t in (out / "sessions.jsonl").read_text().splitlines()]
    assert [r["race"] for r in records] == ["R1", "R2"]


if __name__ == "__main__":
    test_trade_log_consistency()
    test_trade_log_targets()
    test_trade_race_target()
    test_trade_race_stop()
    test_session_line_close_odds()
    test_neutral_and_missing_models()

    print("=" * 50)
    print(" All Passed ".center(50, "="))
    print("=" * 50)
