"""
Trading mechanisms: scalp, swing and trailing-stop state machines.

A session owns one position on one runner and is stepped one frame at a time.
The caller loads each frame into the session's OrderBook first (see
`run_session`). Directions are price directions: Up opens with a Lay and closes
with a Back higher up; Down opens with a Back and closes with a Lay lower down.
"""

import logging
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from enum import Enum, IntEnum

from .exchange import Side, Position, MarketSuspended, settled_pl

logger = logging.getLogger(__name__)


class MissingClassStats(ValueError):
    pass


class DegenerateTarget(ValueError):
    pass


class MechanismParamError(ValueError):
    pass


class TrendClass(IntEnum):
    STRONG_DOWN = 0
    WEAK_DOWN = 1
    NEUTRAL = 2
    WEAK_UP = 3
    STRONG_UP = 4


class Direction(str, Enum):
    UP = "Up"
    DOWN = "Down"

    @classmethod
    def _missing_(cls, value):
        # Trade-log codes
        return {"LB": cls.UP, "BL": cls.DOWN}.get(str(value).upper())

    @property
    def sign(self):
        return 1 if self is Direction.UP else -1

    @property
    def open_side(self):
        return Side.LAY if self is Direction.UP else Side.BACK

    @property
    def code(self):
        """Trade-log DIR column: LB opened with a Lay, BL with a Back"""
        return "LB" if self is Direction.UP else "BL"


class MechanismKind(IntEnum):
    """Values are the trade-log TM codes"""

    SCALP = 0
    SWING = 1
    TRAILING = 2


class TradeState(str, Enum):
    STARTING = "Starting"
    OPEN_PLACED = "OpenPlaced"
    OPEN = "Open"
    CLOSE_PLACED = "ClosePlaced"
    CLOSED_PROFIT = "ClosedProfit"
    CLOSED_NULL = "ClosedNull"
    CLOSED_LOSS = "ClosedLoss"
    NOT_OPEN = "NotOpen"

    @property
    def terminal(self):
        return self in TERMINAL

    @property
    def end_state(self):
        if self is TradeState.NOT_OPEN:
            return "NOT_OPEN"
        if self.terminal:
            return "CLOSED"
        return None


TERMINAL = {
    TradeState.CLOSED_PROFIT,
    TradeState.CLOSED_NULL,
    TradeState.CLOSED_LOSS,
    TradeState.NOT_OPEN,
}


def _check_positive(**values):
    for name, value in values.items():
        if value is None or value <= 0:
            raise MechanismParamError(f"{name} must be > 0. Got {value!r}")


@dataclass(frozen=True)
class ScalpParams:
    entry_amount: int
    entry_tick: int
    wait_frames_normal: int = 80
    wait_frames_emergency: int = 20
    direction: Direction = Direction.DOWN

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        _check_positive(
            entry_amount=self.entry_amount,
            wait_frames_normal=self.wait_frames_normal,
            wait_frames_emergency=self.wait_frames_emergency,
        )


@dataclass(frozen=True)
class SwingParams(ScalpParams):
    ticks_up: int = 1
    ticks_down: int = 1
    front_line: bool = True
    wait_frames_open: int = 20

    def __post_init__(self):
        super().__post_init__()
        _check_positive(
            ticks_up=self.ticks_up,
            ticks_down=self.ticks_down,
            wait_frames_open=self.wait_frames_open,
        )

    @property
    def target_ticks(self):
        return self.ticks_up if self.direction is Direction.UP else self.ticks_down

    @property
    def stop_ticks(self):
        return self.ticks_down if self.direction is Direction.UP else self.ticks_up


@dataclass(frozen=True)
class TrailingParams:
    stake_size: int
    entry_tick: int
    offset: int
    front_line: bool = True
    wait_frames_open: int = 20
    wait_frames_normal: int = 80
    wait_frames_emergency: int = 20
    direction: Direction = Direction.DOWN
    target: int = None  # optional take-profit, ticks

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        _check_positive(
            stake_size=self.stake_size,
            offset=self.offset,
            wait_frames_open=self.wait_frames_open,
            wait_frames_normal=self.wait_frames_normal,
            wait_frames_emergency=self.wait_frames_emergency,
        )
        if self.target is not None:
            _check_positive(target=self.target)

    @property
    def entry_amount(self):
        return self.stake_size

    @property
    def target_ticks(self):
        return self.target

    @property
    def stop_ticks(self):
        return self.offset


@dataclass
class TrailingVars:
    PBN: int = None  # current market tick
    PBR: int = None  # requested entry tick
    PLC: int = None  # dynamic close tick
    MAL: int = 0  # matched close amount
    CAL: int = 0  # requested close amount
    history: list = field(default_factory=list)  # PLC after every Open frame


@dataclass
class SessionReport:
    kind: MechanismKind
    direction: Direction
    state: TradeState
    event: str
    entry_tick: int
    target_ticks: int
    stop_ticks: int
    stake: int
    open_amount: int
    close_amount: int
    open_price: Decimal
    close_price: Decimal
    close_tick: int
    pl: int
    moved_ticks: int
    frames: int

    @property
    def end_state(self):
        return self.state.end_state


class TradeSession:
    """
    Shared engine. Subclasses pick what happens once the open is matched
    (`_on_open`) and how an Open / ClosePlaced frame is handled.
    """

    kind = None

    def __init__(self, params, book, owner="agent", ladder=None):
        self.params = params
        self.book = book
        self.ladder = ladder or book.ladder
        self.owner = owner
        self.state = TradeState.STARTING
        self.event = ""
        self.transcript = []
        self.open_bets = []
        self.close_bets = []
        self.frame_no = -1
        self.frames_in_state = 0
        self.phase = None
        self.pbn = None
        self.pbp = None
        self.close_tick = None

    #################################################
    ## Helpers

    @property
    def direction(self):
        return self.params.direction

    @property
    def sign(self):
        return self.params.direction.sign

    @property
    def entry(self):
        return self.params.entry_tick

    @property
    def amount(self):
        return self.params.entry_amount

    @property
    def terminal(self):
        return self.state.terminal

    @property
    def position(self):
        pos = Position(self.book.runner_id)
        for bet in self.open_bets + self.close_bets:
            for tick, amount in bet.fills:
                pos.add_fill(bet.side, amount, self.ladder.price_at(tick))
        return pos

    def favorable(self, tick=None):
        """Signed ticks from entry, positive in the predicted direction"""
        tick = self.pbn if tick is None else tick
        return self.sign * (tick - self.entry)

    def _log(self, what):
        self.transcript.append((self.frame_no, what))

    def _set_state(self, state, event=None):
        if event is not None:
            self.event = event
        if state is not self.state:
            self.state = state
            self.frames_in_state = 0
            self._log(f"state {state.value}")
            if state.terminal:
                logger.debug(
                    f"{self.owner}: {state.value} ({self.event}) at frame {self.frame_no}"
                )

    def _place(self, side, tick, amount, bucket):
        try:
            bet = self.book.place_bet(side, tick, amount, self.owner)
        except MarketSuspended:
            self._log("suspended")
            return None
        bucket.append(bet)
        self._log(f"place {side.value} {amount}@{tick} -> {bet.matched}")
        return bet

    def _cancel_unmatched(self, bets):
        for bet in bets:
            if not bet.is_terminal:
                self.book.cancel_bet(bet)
                self._log(f"cancel {bet.id}")

    def _hedged(self):
        pos = self.position
        return bool(pos.open_legs) and pos.open_amount == 0

    def _place_close(self, tick):
        """Close the whole remaining hedge at one tick"""
        self._cancel_unmatched(self.close_bets)
        amount = self.position.close_amount_at(self.ladder.price_at(tick))
        if amount <= 0:
            return None
        self.close_tick = tick
        return self._place(self.direction.open_side.opposite, tick, amount, self.close_bets)

    def _emergency_close(self):
        """Take the best available opposing prices, walking the book"""
        self._cancel_unmatched(self.close_bets)
        close_side = self.direction.open_side.opposite
        consume = "bid" if close_side is Side.BACK else "ask"
        while True:
            pos = self.position
            if pos.open_amount == 0:
                return
            tick = self.book.best_available(consume, owner=self.owner)
            if tick is None:
                return
            amount = pos.close_amount_at(self.ladder.price_at(tick))
            amount = min(amount, self.book.available(consume, tick, owner=self.owner))
            if amount <= 0:
                return
            self.close_tick = tick
            if self._place(close_side, tick, amount, self.close_bets) is None:
                return

    def _finish(self, event=None):
        pl = self.position.realized_pl
        if pl > 0:
            state = TradeState.CLOSED_PROFIT
        elif pl < 0:
            state = TradeState.CLOSED_LOSS
        else:
            state = TradeState.CLOSED_NULL
        self._set_state(state, event or self.phase or "CLOSED")

    #################################################
    ## Stepping

    def step(self, frame):
        if self.terminal:
            return self
        self.frame_no += 1
        self.frames_in_state += 1
        if frame.last_traded is not None:
            self.pbp, self.pbn = self.pbn, frame.last_traded
        else:
            self.pbp = self.pbn
        if self.pbn is None:
            return self

        handler = {
            TradeState.STARTING: self._starting,
            TradeState.OPEN_PLACED: self._open_placed,
            TradeState.OPEN: self._open,
            TradeState.CLOSE_PLACED: self._close_placed,
        }[self.state]
        handler()
        return self

    def _starting(self):
        p = self.params
        if self.pbn != self.entry:
            if p.front_line:
                return self._set_state(TradeState.NOT_OPEN, "MOVED")
            if self.frames_in_state >= p.wait_frames_open:
                return self._set_state(TradeState.NOT_OPEN, "NOT_REACHED")
            return

        if self._place(self.direction.open_side, self.entry, self.amount, self.open_bets):
            self._set_state(TradeState.OPEN_PLACED)
            self._open_placed(fresh=True)

    def _open_placed(self, fresh=False):
        bet = self.open_bets[-1]
        if bet.matched == bet.requested:
            return self._on_open()
        if not fresh and self.frames_in_state >= self.params.wait_frames_normal:
            self._cancel_unmatched(self.open_bets)
            if bet.matched:
                return self._on_open()
            return self._set_state(TradeState.NOT_OPEN, "NOT_FILLED")

    def _on_open(self):
        raise NotImplementedError

    def _open(self):
        raise NotImplementedError

    def _close_placed(self):
        raise NotImplementedError

    #################################################
    ## Expiry and reporting

    def expire(self):
        """End of the pre-live window: cancel what is left and settle"""
        if self.terminal:
            return self
        self._cancel_unmatched(self.open_bets + self.close_bets)
        if not self.position.open_legs:
            return self._set_state(TradeState.NOT_OPEN, "EXPIRED")
        self._finish("EXPIRED")
        return self

    def report(self):
        pos = self.position
        opened = pos.opened
        closed = pos.closed
        target = getattr(self.params, "target_ticks", None)
        stop = getattr(self.params, "stop_ticks", None)
        return SessionReport(
            kind=self.kind,
            direction=self.direction,
            state=self.state,
            event=self.event,
            entry_tick=self.entry,
            target_ticks=target,
            stop_ticks=stop,
            stake=self.amount,
            open_amount=opened,
            close_amount=closed,
            open_price=pos.open_price if opened else None,
            close_price=pos.close_price if closed else None,
            close_tick=self.close_tick if closed else None,
            pl=settled_pl(self.direction.open_side, opened, closed) if opened else 0,
            moved_ticks=self.favorable(self.close_tick) if closed else 0,
            frames=self.frame_no + 1,
        )


class SwingSession(TradeSession):
    """
    Fixed profit target and stop-loss around the entry. Inside the band no
    action is taken. The close goes target -> entry (null) -> emergency.
    """

    kind = MechanismKind.SWING

    def _on_open(self):
        self._set_state(TradeState.OPEN)
        self._place_target()

    def _place_target(self):
        target = self.entry + self.sign * self.params.target_ticks
        self.phase = "TARGET"
        self._place_close(self.ladder.clamp(target))
        self._set_state(TradeState.CLOSE_PLACED)
        self._check_closed()

    def _open(self):
        self._place_target()

    def _check_closed(self):
        if self._hedged():
            self._finish()
            return True
        return False

    def _close_placed(self):
        p = self.params
        if self._check_closed():
            return
        if self.phase != "EMERGENCY" and self.favorable() <= -p.stop_ticks:
            self.phase = "EMERGENCY"
            self.frames_in_state = 0
            self._log("stop reached")

        if self.phase == "TARGET" and self.frames_in_state >= p.wait_frames_normal:
            self.phase = "NULL"
            self.frames_in_state = 0
            self._place_close(self.entry)
        elif self.phase == "NULL" and self.frames_in_state >= p.wait_frames_emergency:
            self.phase = "EMERGENCY"
            self.frames_in_state = 0

        if self.phase == "EMERGENCY":
            self._emergency_close()
        self._check_closed()


class ScalpSession(SwingSession):
    """A swing with one tick of profit and one of loss, entering at the front line"""

    kind = MechanismKind.SCALP

    def __init__(self, params, book, owner="agent", ladder=None):
        if not isinstance(params, SwingParams):
            params = SwingParams(
                entry_amount=params.entry_amount,
                entry_tick=params.entry_tick,
                wait_frames_normal=params.wait_frames_normal,
                wait_frames_emergency=params.wait_frames_emergency,
                direction=params.direction,
                ticks_up=1,
                ticks_down=1,
                front_line=True,
                wait_frames_open=1,
            )
        super().__init__(params, book, owner=owner, ladder=ladder)


class TrailingSession(TradeSession):
    """
    Trailing stop. After the open, PLC sits `offset` ticks against the price and
    ratchets only when the price moves in the predicted direction. The close is
    placed when the price comes back to PLC, when the optional target is
    reached, or when waitFramesNormal runs out.
    """

    kind = MechanismKind.TRAILING

    def __init__(self, params, book, owner="agent", ladder=None):
        super().__init__(params, book, owner=owner, ladder=ladder)
        self.vars = TrailingVars(PBR=params.entry_tick)

    def _sync_vars(self):
        self.vars.PBN = self.pbn
        self.vars.MAL = sum(b.matched for b in self.close_bets)
        self.vars.CAL = sum(b.requested - b.cancelled for b in self.close_bets)

    def step(self, frame):
        super().step(frame)
        self._sync_vars()
        return self

    def _on_open(self):
        self._set_state(TradeState.OPEN)
        self.vars.PLC = self.ladder.clamp(self.pbn - self.sign * self.params.offset)
        self.vars.history.append(self.vars.PLC)
        self._open(fresh=True)

    def _open(self, fresh=False):
        p = self.params
        v = self.vars
        if not fresh and self.pbp is not None and self.sign * (self.pbn - self.pbp) > 0:
            cand = self.ladder.clamp(self.pbn - self.sign * p.offset)
            v.PLC = max(v.PLC, cand) if self.sign > 0 else min(v.PLC, cand)
        if not fresh:
            v.history.append(v.PLC)

        if p.target is not None and self.favorable() >= p.target:
            self.phase = "TARGET"
            tick = self.ladder.clamp(self.entry + self.sign * p.target)
        elif self.sign * (self.pbn - v.PLC) <= 0:
            self.phase = "STOP"
            tick = v.PLC
        elif self.frames_in_state >= p.wait_frames_normal:
            self.phase = "TIMEOUT"
            tick = self.pbn
        else:
            return

        self._place_close(tick)
        self._set_state(TradeState.CLOSE_PLACED)
        if self._hedged():
            self._finish()

    def _close_placed(self):
        if self._hedged():
            return self._finish()
        if self.phase != "EMERGENCY" and self.frames_in_state >= self.params.wait_frames_emergency:
            self.phase = "EMERGENCY"
            self._log("emergency")
        if self.phase == "EMERGENCY":
            self._emergency_close()
        if self._hedged():
            self._finish()


def scalp_step(session, frame):
    return session.step(frame)


def swing_step(session, frame):
    return session.step(frame)


def trailing_step(session, frame):
    return session.step(frame)


def run_session(session, frames, statuses=None):
    """
    Drive a session over frames, loading each one into its book first.
    `statuses` is an optional parallel list of market statuses.
    """
    for ii, frame in enumerate(frames):
        if session.terminal:
            break
        status = statuses[ii] if statuses else "OPEN"
        session.book.load_frame(frame, status=status)
        session.step(frame)
    if not session.terminal:
        session.expire()
    return session


#################################################
## Selection and parameterization
#################################################


def _round_half_up(value):
    return int(Decimal(repr(float(value))).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def params_from_class(class_mean, kind, swing_fraction=0.8, trailing_fraction=0.6):
    """
    (target ticks, stop ticks) from the class's mean maximum tick variation.
    target = round(|mean|); stop = round(fraction * target), at least 1.
    """
    if class_mean is None:
        raise MissingClassStats("No class statistics for this category")
    kind = MechanismKind(kind)
    target = _round_half_up(abs(class_mean))
    if target <= 0:
        raise DegenerateTarget(f"Mean {class_mean!r} rounds to a zero-tick target")
    fraction = trailing_fraction if kind is MechanismKind.TRAILING else swing_fraction
    stop = max(1, _round_half_up(fraction * target))
    return target, stop


def select_mechanism(predicted):
    """
    Strong moves trail, weak moves swing, Neutral does not trade.
    Returns (MechanismKind, Direction) or None.
    """
    predicted = TrendClass(predicted)
    if predicted is TrendClass.NEUTRAL:
        return None
    direction = (
        Direction.UP
        if predicted in {TrendClass.WEAK_UP, TrendClass.STRONG_UP}
        else Direction.DOWN
    )
    if predicted in {TrendClass.STRONG_UP, TrendClass.STRONG_DOWN}:
        return MechanismKind.TRAILING, direction
    return MechanismKind.SWING, direction


def build_session(kind, direction, entry_tick, stake, target, stop, book, config, owner="agent"):
    """Session for a selected mechanism with config time parameters"""
    kind = MechanismKind(kind)
    direction = Direction(direction)
    common = dict(
        entry_tick=entry_tick,
        wait_frames_normal=config.wait_frames_normal,
        wait_frames_emergency=config.wait_frames_emergency,
        direction=direction,
    )
    if kind is MechanismKind.TRAILING:
        params = TrailingParams(
            stake_size=stake,
            offset=stop,
            target=target,
            front_line=config.front_line,
            wait_frames_open=config.wait_frames_open,
            **common,
        )
        return TrailingSession(params, book, owner=owner)

    up, down = (target, stop) if direction is Direction.UP else (stop, target)
    params = SwingParams(
        entry_amount=stake,
        ticks_up=up,
        ticks_down=down,
        front_line=config.front_line,
        wait_frames_open=config.wait_frames_open,
        **common,
    )
    if kind is MechanismKind.SCALP:
        return ScalpSession(params, book, owner=owner)
    return SwingSession(params, book, owner=owner)
