"""
Feature engineering: indicators over compressed segments, normalization,
quintile labels and the rule-based market categories.

Indicator columns, in order:

    0  price integral of the runner in trade
    1  price integral of the competitor (closest price)
    2  ask-side liquidity change
    3  bid-side liquidity change
    4  volume direction ("market strength")
    5  runner ticks moved since the start of the example
    6  competitor ticks moved since the start of the example
    7  weight of money of the runner
    8  weight of money of all other runners combined
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ladder import TickLadder
from .mechanisms import TrendClass

logger = logging.getLogger(__name__)

N_VARIABLES = 9
N_CLASSES = 5
CLASS_NAMES = ("SD", "WD", "N", "WU", "SU")


class InsufficientFrames(ValueError):
    pass


class TooFewValues(ValueError):
    pass


class DegenerateTargets(ValueError):
    pass


#################################################
## Segments
#################################################


def pad_segment(frames, size=4):
    """Fill a short segment by repeating its oldest frame"""
    frames = list(frames)
    if not frames:
        raise InsufficientFrames("Empty segment")
    return [frames[0]] * (size - len(frames)) + frames


def segments(frames, size=4):
    """Consecutive segments of `size` frames. A short leading one is padded"""
    frames = list(frames)
    lead = len(frames) % size
    out = []
    if lead:
        out.append(pad_segment(frames[:lead], size))
    out.extend(frames[i : i + size] for i in range(lead, len(frames), size))
    return out


def _ltp_ticks(frames):
    """LTP ticks with gaps carried forward (and back-filled at the start)"""
    ticks = []
    last = None
    for frame in frames:
        if frame.last_traded is not None:
            last = frame.last_traded
        ticks.append(last)
    first = next((t for t in ticks if t is not None), None)
    return [first if t is None else t for t in ticks]


def align_frames(frames, timestamps):
    """Frames at or before each timestamp (earliest frame when none is)"""
    stamps = [f.timestamp for f in frames]
    out = []
    for ts in timestamps:
        ii = max(0, int(np.searchsorted(stamps, ts, side="right")) - 1)
        out.append(frames[ii])
    return out


#################################################
## Indicators
#################################################


def indicator_price_integral(segment):
    ticks = _ltp_ticks(segment)
    if ticks[0] is None:
        return 0.0
    return float(sum(t - ticks[0] for t in ticks[1:]))


def _tracked_ticks(frame, side, depth):
    if side == "bid":
        best = frame.best_bid()
        return [] if best is None else [best - i for i in range(depth)]
    best = frame.best_ask()
    return [] if best is None else [best + i for i in range(depth)]


def indicator_liquidity_delta(segment, side, depth=3):
    """
    Change in unmatched money over the segment at the `depth` price levels
    anchored on the first frame's best price. Matches and cancellations both
    count as negative.
    """
    ticks = _tracked_ticks(segment[0], side, depth)
    totals = [frame.total(side, ticks) for frame in segment]
    return float(sum(b - a for a, b in zip(totals, totals[1:])))


def _volume_sign(tick, prev):
    bb, ba = prev.best_bid(), prev.best_ask()
    if bb is not None and tick <= bb:
        return -1
    if ba is not None and tick >= ba:
        return 1
    if prev.last_traded is None:
        return 0
    return int(np.sign(tick - prev.last_traded))


def indicator_volume_direction(segment):
    """
    Signed matched volume. Money matched at or below the previous best bid
    pressed the price down (negative); at or above the best ask, up.
    """
    total = 0
    for prev, frame in zip(segment, segment[1:]):
        for tick, amount in frame.volume.items():
            delta = amount - prev.volume.get(tick, 0)
            if delta > 0:
                total += _volume_sign(tick, prev) * delta
    return float(total)


def indicator_price_diff_from_start(start_frame, segment):
    ticks = _ltp_ticks([start_frame] + list(segment))
    if ticks[0] is None:
        return 0.0
    return float(ticks[-1] - ticks[0])


def wom(bid, ask):
    if bid + ask == 0:
        return 0.5
    return bid / (bid + ask)


def frame_wom(frame, depth=3):
    bid = frame.total("bid", frame.depth_levels("bid", depth))
    ask = frame.total("ask", frame.depth_levels("ask", depth))
    return wom(bid, ask)


def indicator_wom(segment, depth=3):
    return float(np.mean([frame_wom(f, depth) for f in segment]))


def indicator_wom_combined(segments_by_runner, depth=3):
    """Weight of money pooled across several runners' aligned segments"""
    if not segments_by_runner:
        return 0.5
    values = []
    for frames in zip(*segments_by_runner):
        bid = sum(f.total("bid", f.depth_levels("bid", depth)) for f in frames)
        ask = sum(f.total("ask", f.depth_levels("ask", depth)) for f in frames)
        values.append(wom(bid, ask))
    return float(np.mean(values))


def competitor_of(race, runner_id, timestamp):
    """Runner holding the LTP closest (in ticks) to `runner_id` at timestamp"""
    own = ltp_at(race.runners[runner_id], timestamp)
    best = None
    for rid in sorted(race.runners):
        if rid == runner_id:
            continue
        other = ltp_at(race.runners[rid], timestamp)
        if other is None:
            continue
        dist = abs(other - own) if own is not None else other
        if best is None or dist < best[0]:
            best = (dist, rid)
    return None if best is None else best[1]


def ltp_at(book, timestamp):
    ii = book.index_at(timestamp)
    for frame in reversed(book.frames[: ii + 1]):
        if frame.last_traded is not None:
            return frame.last_traded
    return None


def build_example(frames, competitor=None, others=(), depth=3, segment_frames=4, input_frames=512):
    """
    (input_frames // segment_frames) x 9 indicator matrix.

    frames
        Rdf list of the runner in trade. The last `input_frames` are used.
    competitor
        Aligned frames of the competitor. None gives zero columns.
    others
        Aligned frame lists for every other runner (competitor included)
    """
    frames = list(frames)
    if len(frames) < input_frames:
        raise InsufficientFrames(f"Need {input_frames} frames. Got {len(frames)}")
    frames = frames[-input_frames:]
    competitor = list(competitor)[-input_frames:] if competitor is not None else None
    others = [list(o)[-input_frames:] for o in others]

    start = frames[0]
    comp_start = competitor[0] if competitor else None
    segs = segments(frames, segment_frames)
    comp_segs = segments(competitor, segment_frames) if competitor else None
    other_segs = [segments(o, segment_frames) for o in others]

    out = np.zeros((len(segs), N_VARIABLES))
    for ii, seg in enumerate(segs):
        row = out[ii]
        row[0] = indicator_price_integral(seg)
        row[2] = indicator_liquidity_delta(seg, "ask", depth)
        row[3] = indicator_liquidity_delta(seg, "bid", depth)
        row[4] = indicator_volume_direction(seg)
        row[5] = indicator_price_diff_from_start(start, seg)
        row[7] = indicator_wom(seg, depth)
        if comp_segs:
            row[1] = indicator_price_integral(comp_segs[ii])
            row[6] = indicator_price_diff_from_start(comp_start, comp_segs[ii])
        row[8] = indicator_wom_combined([o[ii] for o in other_segs], depth)
    return out


#################################################
## Targets and labels
#################################################


def target_integral(frames, target_frames=240):
    frames = list(frames)
    if len(frames) < target_frames:
        raise InsufficientFrames(f"Need {target_frames} target frames. Got {len(frames)}")
    return indicator_price_integral(frames[:target_frames])


def max_tick_variation(frames):
    """(max rise, max fall) in ticks relative to the first frame"""
    ticks = _ltp_ticks(frames)
    if not ticks or ticks[0] is None:
        return 0, 0
    moves = [t - ticks[0] for t in ticks]
    return max(moves), min(moves)


def truncated_minmax(values, tail_fraction=0.10):
    """
    (min, max) after dropping floor(tail_fraction * N) values from each tail.
    A zero-width range is widened by a relative machine epsilon.
    """
    values = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(values)
    if n < 10:
        raise TooFewValues(f"Need at least 10 values. Got {n}")
    k = int(math.floor(tail_fraction * n))
    lo, hi = float(values[k]), float(values[n - 1 - k])
    if lo >= hi:
        eps = np.finfo(float).eps * max(1.0, abs(lo))
        logger.warning(f"Degenerate normalization range at {lo!r}; widening by {eps!r}")
        lo, hi = lo - eps, hi + eps
    return lo, hi


def normalize(value, lo, hi):
    """Clamp to [lo, hi] then map affinely onto [-1, 1]"""
    value = np.clip(np.asarray(value, dtype=float), lo, hi)
    out = 2.0 * (value - lo) / (hi - lo) - 1.0
    return float(out) if out.ndim == 0 else out


@dataclass
class NormalizationSpec:
    mins: list
    maxs: list
    tail_fraction: float = 0.10

    @classmethod
    def fit(cls, inputs, tail_fraction=0.10):
        """inputs: (N, T, V). One (min, max) per variable"""
        inputs = np.asarray(inputs, dtype=float)
        mins, maxs = [], []
        for v in range(inputs.shape[-1]):
            lo, hi = truncated_minmax(inputs[..., v], tail_fraction)
            mins.append(lo)
            maxs.append(hi)
        return cls(mins=mins, maxs=maxs, tail_fraction=tail_fraction)

    def apply(self, inputs):
        inputs = np.asarray(inputs, dtype=float)
        lo = np.asarray(self.mins)
        hi = np.asarray(self.maxs)
        return 2.0 * (np.clip(inputs, lo, hi) - lo) / (hi - lo) - 1.0

    def to_dict(self):
        return {"mins": list(self.mins), "maxs": list(self.maxs), "tail_fraction": self.tail_fraction}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def label_by_quintiles(targets):
    """
    Rank-based quintile labels and the four class boundaries.

    The label of the r-th smallest value (0-based) is r * 5 // N so every class
    holds N/5 examples up to one. Boundary k is the largest value of class k.
    Returns (boundaries, labels).
    """
    targets = np.asarray(targets, dtype=float)
    n = len(targets)
    if n < N_CLASSES:
        raise TooFewValues(f"Need at least {N_CLASSES} targets. Got {n}")
    if np.all(targets == targets[0]):
        raise DegenerateTargets("All targets are equal")

    order = np.argsort(targets, kind="stable")
    labels = np.empty(n, dtype=int)
    labels[order] = np.arange(n) * N_CLASSES // n
    ordered = targets[order]
    boundaries = [float(ordered[math.ceil(k * n / N_CLASSES) - 1]) for k in range(1, N_CLASSES)]
    return boundaries, labels


def classify(value, boundaries):
    """Class of a new target under fitted boundaries"""
    return TrendClass(int(np.searchsorted(boundaries, value, side="left")))


def class_means(labels, rises, falls):
    """
    Per-class mean of the maximum tick variation in the class's direction:
    rises for Up classes, falls (negative) for Down classes. Neutral is None.
    """
    labels = np.asarray(labels)
    rises = np.asarray(rises, dtype=float)
    falls = np.asarray(falls, dtype=float)
    means = {}
    for cls in TrendClass:
        mask = labels == int(cls)
        if cls is TrendClass.NEUTRAL or not mask.any():
            means[int(cls)] = None
        elif cls in {TrendClass.WEAK_UP, TrendClass.STRONG_UP}:
            means[int(cls)] = float(rises[mask].mean())
        else:
            means[int(cls)] = float(falls[mask].mean())
    return means


#################################################
## Categories
#################################################

FAVORITE = ("Yes", "No")
RUNNERS = ("Few", "Medium", "Many")
PRICE = ("High", "Medium", "Low")
LIQUIDITY = ("Low", "Medium", "High")
N_CATEGORIES = len(FAVORITE) * len(RUNNERS) * len(PRICE) * len(LIQUIDITY)

WOM_DEPTH = {"High": 2, "Medium": 3, "Low": 4}


@dataclass(frozen=True)
class CategoryKey:
    favorite: str
    runners: str
    price: str
    liquidity: str

    def __post_init__(self):
        for name, allowed in (
            ("favorite", FAVORITE),
            ("runners", RUNNERS),
            ("price", PRICE),
            ("liquidity", LIQUIDITY),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}. Got {getattr(self, name)!r}")

    @property
    def index(self):
        return (
            27 * FAVORITE.index(self.favorite)
            + 9 * RUNNERS.index(self.runners)
            + 3 * PRICE.index(self.price)
            + LIQUIDITY.index(self.liquidity)
        )

    @classmethod
    def from_index(cls, index):
        if not 0 <= index < N_CATEGORIES:
            raise ValueError(f"Category index {index} not in [0, {N_CATEGORIES})")
        fav, rest = divmod(index, 27)
        run, rest = divmod(rest, 9)
        price, liq = divmod(rest, 3)
        return cls(FAVORITE[fav], RUNNERS[run], PRICE[price], LIQUIDITY[liq])

    @property
    def wom_depth(self):
        return WOM_DEPTH[self.price]

    @property
    def path(self):
        fav = "favorite" if self.favorite == "Yes" else "nofavorite"
        return f"root/{fav}/{self.runners.lower()}Runners/{self.price.lower()}Odd/{self.liquidity.lower()}Liquidity"


def _bucket(value, thresholds, names):
    lo, hi = thresholds
    if value <= lo:
        return names[0]
    if value <= hi:
        return names[1]
    return names[2]


def frame_liquidity(frame):
    return sum(frame.bids.values()) + sum(frame.asks.values())


def liquidity_terciles(values):
    """Tercile thresholds of a corpus of liquidity totals"""
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        raise TooFewValues(f"Need at least 3 liquidity values. Got {len(values)}")
    return tuple(float(v) for v in np.quantile(values, [1 / 3, 2 / 3]))


@dataclass
class CategoryRules:
    runner_thresholds: tuple = (5, 11)
    price_thresholds: tuple = (4.0, 6.0)
    liquidity_thresholds: tuple = None
    ladder: object = field(default=None, repr=False)

    def categorize(self, race, runner_id, timestamp):
        """CategoryKey of a runner at a timestamp"""
        if self.liquidity_thresholds is None:
            raise ValueError("liquidity_thresholds must be set (see liquidity_terciles)")

        ltps = {rid: ltp_at(book, timestamp) for rid, book in race.runners.items()}
        own = ltps.get(runner_id)
        traded = [t for t in ltps.values() if t is not None]
        favorite = "Yes" if own is not None and own == min(traded) else "No"

        runners = _bucket(race.n_runners, self.runner_thresholds, RUNNERS)

        ladder = self.ladder or TickLadder()
        price_value = float(ladder.price_at(own)) if own is not None else math.inf
        price = _bucket(price_value, self.price_thresholds, ("Low", "Medium", "High"))

        book = race.runners[runner_id]
        ii = max(book.index_at(timestamp), 0)
        liquidity = _bucket(frame_liquidity(book.frames[ii]), self.liquidity_thresholds, LIQUIDITY)

        return CategoryKey(favorite, runners, price, liquidity)


def categorize(race, runner_id, timestamp, rules):
    return rules.categorize(race, runner_id, timestamp)


#################################################
## Examples
#################################################


@dataclass
class Example:
    race_id: str
    runner_id: str
    start: int
    category_index: int
    inputs: np.ndarray
    target: float
    rise: int = 0
    fall: int = 0
    label: int = None

    def to_record(self):
        return {
            "race": self.race_id,
            "runner": self.runner_id,
            "start": self.start,
            "category": self.category_index,
            "shape": list(self.inputs.shape),
            "inputs": [round(float(x), 9) for x in self.inputs.ravel()],
            "target": self.target,
            "rise": self.rise,
            "fall": self.fall,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            race_id=rec["race"],
            runner_id=rec["runner"],
            start=rec["start"],
            category_index=rec["category"],
            inputs=np.asarray(rec["inputs"], dtype=float).reshape(rec["shape"]),
            target=rec["target"],
            rise=rec.get("rise", 0),
            fall=rec.get("fall", 0),
            label=rec.get("label"),
        )


def runner_inputs(race, runner_id, instant, rules, input_frames=512, segment_frames=4):
    """
    (CategoryKey, inputs, end index) for one runner at a prediction instant.
    Inputs end at the last frame at or before `instant`.
    """
    book = race.runners[runner_id]
    end = book.index_at(instant)
    if end + 1 < input_frames:
        raise InsufficientFrames(
            f"{race.race_id}/{runner_id}: need {input_frames} frames before {instant}. Got {end + 1}"
        )
    frames = book.frames[end + 1 - input_frames : end + 1]
    stamps = [f.timestamp for f in frames]
    comp_id = competitor_of(race, runner_id, instant)
    comp = align_frames(race.runners[comp_id].frames, stamps) if comp_id else None
    others = [
        align_frames(race.runners[o].frames, stamps)
        for o in sorted(race.runners)
        if o != runner_id and race.runners[o].frames
    ]
    key = rules.categorize(race, runner_id, instant)
    inputs = build_example(
        frames,
        competitor=comp,
        others=others,
        depth=key.wom_depth,
        segment_frames=segment_frames,
        input_frames=input_frames,
    )
    return key, inputs, end


def race_examples(race, rules, input_frames=512, target_frames=240, segment_frames=4,
                  predict_before_start=120):
    """
    One Example per runner with enough history. The prediction instant is
    `predict_before_start` seconds before the scheduled start; inputs end at the
    last frame at or before it and the target window starts there.
    Runners without enough frames are skipped with a debug message.
    """
    instant = race.start - 1000 * predict_before_start
    out = []
    for rid in sorted(race.runners):
        book = race.runners[rid]
        end = book.index_at(instant)
        if end + 1 < input_frames or len(book.frames) - end < target_frames:
            logger.debug(f"{race.race_id}/{rid}: not enough frames around {instant}")
            continue

        key, inputs, end = runner_inputs(race, rid, instant, rules, input_frames, segment_frames)
        window = book.frames[end : end + target_frames]
        rise, fall = max_tick_variation(window)
        out.append(
            Example(
                race_id=race.race_id,
                runner_id=rid,
                start=race.start,
                category_index=key.index,
                inputs=inputs,
                target=target_integral(window, target_frames),
                rise=rise,
                fall=fall,
            )
        )
    return out


def chronological_split(examples, validation_fraction=0.2):
    """(train, validation) with the latest races held out"""
    ordered = sorted(examples, key=lambda e: (e.start, e.race_id, e.runner_id))
    n_val = int(round(validation_fraction * len(ordered)))
    cut = len(ordered) - n_val
    return ordered[:cut], ordered[cut:]
