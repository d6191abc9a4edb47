"""
Trading simulation: predict each runner's trend before the start, run the
selected mechanism over the rest of the pre-live window and log the outcome.

Outputs (see `write_outputs`):

    trades.tsv      One TradeLogLine per runner that was traded or attempted
    pl.csv          Cumulative PL of the CLOSED trades, absolute and per stake
    summary.json    Trade statistics
    sessions.jsonl  One record per session (prediction, exit reason, frames)
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np

from .exchange import OrderBook, hedge_amount, settled_pl, Side
from .features import (
    CLASS_NAMES,
    InsufficientFrames,
    NormalizationSpec,
    runner_inputs,
    ltp_at,
)
from .mechanisms import (
    Direction,
    MechanismKind,
    MissingClassStats,
    DegenerateTarget,
    TrendClass,
    build_session,
    params_from_class,
    run_session,
    select_mechanism,
)
from .threadmapper import thread_map
from .utils import (
    dumps_line,
    fmt_money,
    fmt_price,
    from_pennies,
    round_pennies,
    to_decimal,
    to_pennies,
)

logger = logging.getLogger(__name__)

HEADER = (
    "P&L",
    "TM",
    "END_STATE",
    "EVENT",
    "RUNNER",
    "VOLUME",
    "N_R",
    "ENTR",
    "TARG",
    "STO",
    "DIR",
    "T_P",
    "T_L",
    "PT_P",
    "PT_L",
    "O_ODD",
    "C_ODD",
    "O_AM",
    "CAT_AM",
)

ODD_PLACES = Decimal("0.000001")
MISSING = "-"


class MissingCategoryModel(ValueError):
    pass


#################################################
## Trade log
#################################################


def potential_pl(direction, stake, entry_price, close_price):
    """Greened PL of `stake` opened at entry and closed at `close_price`"""
    direction = Direction(direction)
    close = round_pennies(hedge_amount(entry_price, stake, close_price))
    return settled_pl(direction.open_side, stake, close)


def log_odd(legs):
    """
    Odds written for a set of (side, amount, price) legs: the price itself when
    all legs share it, otherwise the amount-weighted average to 6 places.
    """
    if not legs:
        return Decimal(0)
    prices = {p for _, _, p in legs}
    if len(prices) == 1:
        return prices.pop()
    num = sum((a * p for _, a, p in legs), Decimal(0))
    den = sum(a for _, a, _ in legs)
    return (num / den).quantize(ODD_PLACES)


def _parse_money(text):
    text = str(text).strip().replace("£", "").replace("\\pounds", "")
    return to_pennies(text)


def _parse_opt(text, conv):
    text = str(text).strip()
    return None if text in ("", MISSING) else conv(text)


@dataclass
class TradeLogLine:
    pl: int
    tm: int
    end_state: str
    event: str
    runner: str
    volume: int
    n_r: int
    entr: Decimal
    targ: Decimal
    sto: Decimal
    dir: str
    t_p: int
    t_l: int
    pt_p: int
    pt_l: int
    o_odd: Decimal
    c_odd: Decimal
    o_am: int
    cat_am: int

    def __post_init__(self):
        if self.end_state == "NOT_OPEN" and (self.pl or self.o_am):
            raise ValueError(f"NOT_OPEN line with PL {self.pl} and O_AM {self.o_am}")

    def to_row(self):
        def opt(value, fmt=str):
            return MISSING if value is None else fmt(value)

        return [
            fmt_money(self.pl),
            opt(self.tm),
            self.end_state,
            self.event,
            self.runner,
            fmt_money(self.volume),
            str(self.n_r),
            opt(self.entr, fmt_price),
            opt(self.targ, fmt_price),
            opt(self.sto, fmt_price),
            opt(self.dir),
            opt(self.t_p),
            opt(self.t_l),
            opt(self.pt_p, fmt_money),
            opt(self.pt_l, fmt_money),
            fmt_price(self.o_odd),
            fmt_price(self.c_odd),
            fmt_money(self.o_am),
            fmt_money(self.cat_am),
        ]

    def to_line(self):
        return "\t".join(self.to_row())

    @classmethod
    def from_row(cls, row):
        if isinstance(row, str):
            row = row.rstrip("\n").split("\t")
        row = [str(c).strip() for c in row]
        if len(row) != len(HEADER):
            raise ValueError(f"Expected {len(HEADER)} columns. Got {len(row)}")
        return cls(
            pl=_parse_money(row[0]),
            tm=_parse_opt(row[1], int),
            end_state=row[2],
            event=row[3],
            runner=row[4],
            volume=_parse_money(row[5]),
            n_r=int(row[6]),
            entr=_parse_opt(row[7], to_decimal),
            targ=_parse_opt(row[8], to_decimal),
            sto=_parse_opt(row[9], to_decimal),
            dir=_parse_opt(row[10], str),
            t_p=_parse_opt(row[11], int),
            t_l=_parse_opt(row[12], int),
            pt_p=_parse_opt(row[13], _parse_money),
            pt_l=_parse_opt(row[14], _parse_money),
            o_odd=to_decimal(row[15]),
            c_odd=to_decimal(row[16]),
            o_am=_parse_money(row[17]),
            cat_am=_parse_money(row[18]),
        )

    @property
    def open_side(self):
        return Side.LAY if self.dir == "LB" else Side.BACK

    def recompute_pl(self):
        """PL from O_ODD, C_ODD, O_AM and DIR alone (None for NOT_OPEN)"""
        if self.end_state != "CLOSED":
            return None
        close = 0
        if self.c_odd:
            close = round_pennies(hedge_amount(self.o_odd, self.o_am, self.c_odd))
        return settled_pl(self.open_side, self.o_am, close)

    def is_consistent(self):
        pl = self.recompute_pl()
        return pl is None or pl == self.pl


def read_trade_log(path):
    lines = []
    with open(path) as fp:
        for ii, text in enumerate(fp):
            if not text.strip():
                continue
            if ii == 0 and text.startswith(HEADER[0]):
                continue
            lines.append(TradeLogLine.from_row(text))
    return lines


def inconsistent_lines(lines):
    """CLOSED lines whose PL does not recompute. Each is logged"""
    bad = []
    for line in lines:
        if not line.is_consistent():
            logger.warning(
                f"{line.event}/{line.runner}: logged PL {fmt_money(line.pl)} "
                f"recomputes to {fmt_money(line.recompute_pl())}"
            )
            bad.append(line)
    return bad


#################################################
## Models
#################################################


@dataclass
class CategoryModel:
    model: object
    category: int = None
    normalization: NormalizationSpec = None
    boundaries: list = None
    class_means: dict = field(default_factory=dict)
    liquidity_thresholds: tuple = None

    @classmethod
    def from_archive(cls, model, meta):
        norm = meta.get("normalization")
        means = {int(k): v for k, v in (meta.get("class_means") or {}).items()}
        liq = meta.get("liquidity_thresholds")
        return cls(
            model=model,
            category=meta.get("category"),
            normalization=NormalizationSpec.from_dict(norm) if norm else None,
            boundaries=meta.get("boundaries"),
            class_means=means,
            liquidity_thresholds=tuple(liq) if liq else None,
        )

    def predict_proba(self, inputs):
        x = self.normalization.apply(inputs) if self.normalization else np.asarray(inputs, dtype=float)
        return np.asarray(self.model.predict_proba(x), dtype=float)

    def class_mean(self, predicted):
        return self.class_means.get(int(predicted))


class ModelSet:
    """
    Category models keyed by index. An archive with no category is the
    default for every category without its own model.
    """

    def __init__(self, models=None, default=None):
        self.models = dict(models or {})
        self.default = default

    @classmethod
    def load(cls, path):
        from .nnkit import archive

        path = Path(path)
        files = sorted(path.glob("model_*.json*")) if path.is_dir() else [path]
        if not files:
            raise MissingCategoryModel(f"No model archives in {path}")

        models, default = {}, None
        for file in files:
            cm = CategoryModel.from_archive(*archive.load(file))
            if cm.category is None:
                default = cm
            else:
                models[int(cm.category)] = cm
            logger.debug(f"Loaded {file.name} category={cm.category}")
        return cls(models, default)

    def get(self, index):
        cm = self.models.get(int(index), self.default)
        if cm is None:
            raise MissingCategoryModel(f"No model for category {index}")
        return cm

    @property
    def liquidity_thresholds(self):
        for cm in list(self.models.values()) + [self.default]:
            if cm is not None and cm.liquidity_thresholds:
                return cm.liquidity_thresholds
        return None


#################################################
## Trading loop
#################################################


@dataclass
class RaceResult:
    race_id: str
    lines: list = field(default_factory=list)
    records: list = field(default_factory=list)


def _volume_at(book, timestamp):
    ii = book.index_at(timestamp)
    return book.frames[ii].total_volume() if ii >= 0 else 0


def _not_open_line(race, book, volume):
    return TradeLogLine(
        pl=0,
        tm=None,
        end_state="NOT_OPEN",
        event=race.race_id,
        runner=book.name or book.runner_id,
        volume=volume,
        n_r=race.n_runners,
        entr=None,
        targ=None,
        sto=None,
        dir=None,
        t_p=None,
        t_l=None,
        pt_p=None,
        pt_l=None,
        o_odd=Decimal(0),
        c_odd=Decimal(0),
        o_am=0,
        cat_am=0,
    )


def session_line(race, book, volume, session, ladder):
    """TradeLogLine for a finished session"""
    rep = session.report()
    p = session.params
    entry_price = ladder.price_at(rep.entry_tick)
    sign = rep.direction.sign
    targ = ladder.price_at(ladder.clamp(rep.entry_tick + sign * rep.target_ticks))
    sto = ladder.price_at(ladder.clamp(rep.entry_tick - sign * rep.stop_ticks))

    pos = session.position
    o_odd = log_odd(pos.open_legs)
    c_odd = log_odd(pos.close_legs)
    return TradeLogLine(
        pl=rep.pl,
        tm=int(rep.kind),
        end_state=rep.end_state,
        event=race.race_id,
        runner=book.name or book.runner_id,
        volume=volume,
        n_r=race.n_runners,
        entr=entry_price,
        targ=targ,
        sto=sto,
        dir=rep.direction.code,
        t_p=rep.target_ticks,
        t_l=rep.stop_ticks,
        pt_p=potential_pl(rep.direction, p.entry_amount, entry_price, targ),
        pt_l=potential_pl(rep.direction, p.entry_amount, entry_price, sto),
        o_odd=o_odd,
        c_odd=c_odd,
        o_am=rep.open_amount,
        cat_am=rep.close_amount,
    )


def trade_runner(race, runner_id, instant, models, config, rules, ladder):
    """
    (TradeLogLine or None, session record or None) for one runner. None lines
    are runners that were not traded (no data, Neutral, no parameters).
    """
    book = race.runners[runner_id]
    record = {"race": race.race_id, "runner": runner_id}
    try:
        key, inputs, end = runner_inputs(
            race, runner_id, instant, rules, config.input_frames, config.segment_frames
        )
    except InsufficientFrames as E:
        logger.debug(str(E))
        return None, None

    if config.category is not None and key.index != int(config.category):
        return None, None

    record["category"] = key.index
    volume = _volume_at(book, instant)

    try:
        cm = models.get(key.index)
    except MissingCategoryModel as E:
        logger.info(f"{race.race_id}/{runner_id}: {E}")
        record.update(state="NotOpen", event="MISSING_MODEL")
        return _not_open_line(race, book, volume), record

    probs = cm.predict_proba(inputs)
    predicted = TrendClass(int(np.argmax(probs)))
    record["probabilities"] = [round(float(p), 6) for p in probs]
    record["predicted"] = CLASS_NAMES[predicted]

    selected = select_mechanism(predicted)
    if selected is None:
        return None, record
    kind, direction = selected

    fractions = dict(
        swing_fraction=config.swing_stop_fraction,
        trailing_fraction=config.trailing_stop_fraction,
    )
    try:
        target, stop = params_from_class(cm.class_mean(predicted), kind, **fractions)
    except (MissingClassStats, DegenerateTarget) as E:
        logger.warning(f"{race.race_id}/{runner_id} category {key.index}: {E}")
        record["event"] = type(E).__name__
        return None, record

    entry = ltp_at(book, instant)
    if entry is None:
        logger.debug(f"{race.race_id}/{runner_id}: no traded price at {instant}")
        return None, record

    exchange = OrderBook(ladder, runner_id=runner_id, replay=True)
    session = build_session(
        kind, direction, entry, config.stake_pennies, target, stop, exchange, config
    )

    end_ts = race.inplay_at()
    frames = [f for f in book.frames[end:] if f.timestamp < end_ts]
    statuses = [race.status_at(f.timestamp) for f in frames]
    run_session(session, frames, statuses)

    line = session_line(race, book, volume, session, ladder)
    rep = session.report()
    record.update(
        mechanism=MechanismKind(kind).name.lower(),
        direction=Direction(direction).value,
        target_ticks=target,
        stop_ticks=stop,
        state=rep.state.value,
        event=rep.event,
        moved_ticks=rep.moved_ticks,
        frames=rep.frames,
        pl=rep.pl,
        close_prices=sorted({str(p) for _, _, p in session.position.close_legs}, key=Decimal),
        hedged=bool(rep.open_amount) and session.position.open_amount == 0,
    )
    return line, record


def trade_race(race, models, config, rules, ladder=None):
    ladder = ladder or config.ladder()
    instant = race.start - 1000 * config.predict_before_start
    result = RaceResult(race.race_id)
    for rid in sorted(race.runners):
        line, record = trade_runner(race, rid, instant, models, config, rules, ladder)
        if line is not None:
            result.lines.append(line)
        if record is not None and "state" in record:
            result.records.append(record)
    return result


def trading_loop(races, models, config, rules):
    """
    Trade every race. Races run in parallel; results come back ordered by
    (scheduled start, race id) so outputs do not depend on thread timing.
    """
    ordered = sorted(races, key=lambda r: (r.start, r.race_id))
    ladder = config.ladder()
    return list(
        thread_map(
            lambda race: trade_race(race, models, config, rules, ladder),
            ordered,
            Nt=config.concurrency,
        )
    )


#################################################
## Reports
#################################################


def pl_curve(lines, stake):
    """(n, race, runner, pl, cum_pl, cum_pl_relative) rows for CLOSED lines"""
    rows = []
    cum = 0
    for line in lines:
        if line.end_state != "CLOSED":
            continue
        cum += line.pl
        rows.append(
            (
                len(rows) + 1,
                line.event,
                line.runner,
                fmt_money(line.pl),
                fmt_money(cum),
                f"{Decimal(cum) / Decimal(stake):.6f}",
            )
        )
    return rows


def moved_ticks(line, ladder):
    """Ticks from open to close in the traded direction. Averages use the nearest tick"""
    if not line.c_odd or not line.o_odd:
        return 0
    sign = 1 if line.dir == "LB" else -1
    return sign * (ladder.nearest_tick(line.c_odd) - ladder.nearest_tick(line.o_odd))


def outcome(line, ladder):
    """Summary bucket of a line"""
    if line.end_state != "CLOSED":
        return "not_open"
    moved = moved_ticks(line, ladder)
    if line.pl > 0:
        return "target" if line.t_p is not None and moved >= line.t_p else "between_null_and_target"
    if line.pl < 0:
        if line.t_l is not None and moved == -line.t_l:
            return "stop"
        if line.t_l is not None and moved < -line.t_l:
            return "breaks_stop"
        return "between_null_and_stop"
    return "null"


def summary(lines, stake, ladder):
    buckets = dict.fromkeys(
        (
            "target",
            "between_null_and_target",
            "stop",
            "breaks_stop",
            "between_null_and_stop",
            "null",
            "not_open",
        ),
        0,
    )
    ticks = {
        name: {"positive": 0, "negative": 0}
        for name in ("scalp", "swing", "trailing")
    }
    total = 0
    for line in lines:
        buckets[outcome(line, ladder)] += 1
        if line.end_state != "CLOSED":
            continue
        total += line.pl
        if line.tm is None:
            continue
        moved = moved_ticks(line, ladder)
        name = MechanismKind(line.tm).name.lower()
        if moved > 0:
            ticks[name]["positive"] += moved
        elif moved < 0:
            ticks[name]["negative"] += moved

    closed = len(lines) - buckets["not_open"]
    return {
        "trades": closed,
        "not_open": buckets["not_open"],
        "greens": {
            "target": buckets["target"],
            "between_null_and_target": buckets["between_null_and_target"],
        },
        "reds": {
            "stop": buckets["stop"],
            "breaks_stop": buckets["breaks_stop"],
            "between_null_and_stop": buckets["between_null_and_stop"],
        },
        "nulls": buckets["null"],
        "ticks": ticks,
        "total_pl": str(from_pennies(total)),
        "total_pl_relative": f"{Decimal(total) / Decimal(stake):.6f}",
        "stake": str(from_pennies(stake)),
    }


def write_outputs(results, out, stake, ladder):
    """Write trades.tsv, pl.csv, summary.json and sessions.jsonl into `out`"""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [line for r in results for line in r.lines]

    with open(out / "trades.tsv", "wt") as fp:
        fp.write("\t".join(HEADER) + "\n")
        for line in lines:
            fp.write(line.to_line() + "\n")

    with open(out / "pl.csv", "wt", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(("n", "race", "runner", "pl", "cum_pl", "cum_pl_relative"))
        writer.writerows(pl_curve(lines, stake))

    summ = summary(lines, stake, ladder)
    with open(out / "summary.json", "wt") as fp:
        json.dump(summ, fp, indent=1)

    with open(out / "sessions.jsonl", "wt") as fp:
        for r in results:
            for rec in r.records:
                fp.write(dumps_line(rec) + "\n")

    bad = inconsistent_lines(lines)
    logger.info(
        f"{summ['trades']} trades, {summ['not_open']} not open, "
        f"PL {summ['total_pl']} ({len(bad)} inconsistent lines)"
    )
    return lines, summ
