"""
Command workers: ingest, featurize, train, evaluate, simulate and replay.

Each takes the parsed Config (with `config.cliconfig` attached by the CLI) and
returns what it produced so tests can inspect it.
"""

import csv
import json
import time
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from .features import (
    Example,
    NormalizationSpec,
    TooFewValues,
    DegenerateTargets,
    CategoryKey,
    chronological_split,
    class_means,
    classify,
    frame_liquidity,
    label_by_quintiles,
    liquidity_terciles,
    race_examples,
)
from .frames import read_races, race_files, write_race
from .ladder import describe_tick
from .threadmapper import thread_map
from .utils import dumps_line, fmt_money, listify, open_output, smart_open, tabulate, time_format

logger = logging.getLogger(__name__)

DATASET = "dataset.jsonl"
CATEGORIES = "categories.json"


class MissingInput(ValueError):
    pass


def _require(value, flag):
    if not value:
        raise MissingInput(f"Must specify {flag}")
    return value


def load_races(config):
    """Races from --frames, ordered by (scheduled start, race id)"""
    path = Path(_require(config.cliconfig.frames, "--frames"))
    files = race_files(path)
    if not files:
        raise MissingInput(f"No frame files in {path}")
    races = read_races(files, ladder=config.ladder())
    logger.info(f"Read {len(races)} races from {len(files)} file(s)")
    return sorted(races.values(), key=lambda r: (r.start, r.race_id))


def corpus_liquidity_thresholds(races, predict_before_start):
    """Liquidity terciles over every runner's frame at the prediction instant"""
    values = []
    for race in races:
        instant = race.start - 1000 * predict_before_start
        for book in race.runners.values():
            ii = book.index_at(instant)
            if ii >= 0:
                values.append(frame_liquidity(book.frames[ii]))
    thresholds = liquidity_terciles(values)
    logger.info(f"Liquidity terciles: {thresholds[0] / 100:.2f} {thresholds[1] / 100:.2f}")
    return thresholds


#################################################
## Ingest
#################################################


def ingest(config):
    """Validate frame files and rewrite them canonically under <out>/frames"""
    races = load_races(config)
    ladder = config.ladder()
    out = Path(_require(config.out, "--out")) / "frames"

    stats = {"races": 0, "frames": 0, "violations": 0}
    for race in races:
        for rid in sorted(race.runners):
            book = race.runners[rid]
            stats["frames"] += len(book.frames)
            for ii, violation in book.validate(ladder=ladder):
                stats["violations"] += 1
                logger.warning(
                    f"{race.race_id}/{rid} frame {ii}: {violation.kind} {violation.detail}"
                )
        write_race(race, out / f"{race.race_id}.jsonl", ladder=ladder)
        stats["races"] += 1

    logger.info(
        f"Ingested {stats['races']} races, {stats['frames']} frames, "
        f"{stats['violations']} violations"
    )
    return stats


#################################################
## Featurize
#################################################


def _category_stats(examples, config):
    """Split, label and fit normalization for one category in place"""
    train, validation = chronological_split(examples, config.validation_fraction)
    stats = {
        "n_train": len(train),
        "n_validation": len(validation),
        "trainable": len(examples) >= config.min_examples,
    }
    try:
        boundaries, labels = label_by_quintiles([e.target for e in train])
        norm = NormalizationSpec.fit(
            np.stack([e.inputs for e in train]), config.tail_fraction
        )
    except (TooFewValues, DegenerateTargets) as E:
        logger.warning(f"cannot label: {E}")
        stats["trainable"] = False
        return train, validation, stats

    for ex, label in zip(train, labels):
        ex.label = int(label)
    for ex in validation:
        ex.label = int(classify(ex.target, boundaries))

    stats.update(
        boundaries=boundaries,
        class_means=class_means(labels, [e.rise for e in train], [e.fall for e in train]),
        normalization=norm.to_dict(),
    )
    return train, validation, stats


def featurize(config):
    races = load_races(config)
    out = Path(_require(config.out, "--out"))
    corpus = None
    if not config.liquidity_thresholds:
        corpus = corpus_liquidity_thresholds(races, config.predict_before_start)
    rules = config.category_rules(corpus)
    thresholds = rules.liquidity_thresholds

    def _examples(race):
        return race_examples(
            race,
            rules,
            input_frames=config.input_frames,
            target_frames=config.target_frames,
            segment_frames=config.segment_frames,
            predict_before_start=config.predict_before_start,
        )

    bycat = defaultdict(list)
    for examples in thread_map(_examples, races, Nt=config.concurrency):
        for ex in examples:
            if config.category is None or ex.category_index == int(config.category):
                bycat[ex.category_index].append(ex)

    categories = {}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / DATASET, "wt") as fp:
        for index in sorted(bycat):
            key = CategoryKey.from_index(index)
            logger.info(f"category {index} ({key.path}): {len(bycat[index])} examples")
            train, validation, stats = _category_stats(bycat[index], config)
            if len(bycat[index]) < config.min_examples:
                logger.warning(
                    f"category {index} has {len(bycat[index])} examples "
                    f"(< {config.min_examples}). Not trainable"
                )
            stats.update(path=key.path, liquidity_thresholds=list(thresholds))
            categories[str(index)] = stats
            for split, part in (("train", train), ("validation", validation)):
                for ex in part:
                    fp.write(dumps_line(dict(ex.to_record(), split=split)) + "\n")

    with open(out / CATEGORIES, "wt") as fp:
        json.dump(categories, fp, indent=1)

    n = sum(len(v) for v in bycat.values())
    logger.info(f"Wrote {n} examples in {len(categories)} categories to {out}")
    return categories


def load_dataset(path, category=None):
    """(categories dict, {index: {"train": [...], "validation": [...]}})"""
    path = Path(_require(path, "--dataset"))
    with open(path / CATEGORIES) as fp:
        categories = json.load(fp)
    data = defaultdict(lambda: {"train": [], "validation": []})
    with smart_open(path / DATASET, "rt") as fp:
        for line in fp:
            if not line.strip():
                continue
            rec = json.loads(line)
            if category is not None and rec["category"] != int(category):
                continue
            data[rec["category"]][rec.get("split", "train")].append(Example.from_record(rec))
    return categories, dict(data)


def _xy(examples, norm):
    x = norm.apply(np.stack([e.inputs for e in examples]))
    y = np.array([e.label for e in examples], dtype=int)
    return x, y


#################################################
## Train
#################################################


def train(config):
    from .nnkit import archive
    from .nnkit.models import build
    from .nnkit.train import fit, make_optimizer

    categories, data = load_dataset(config.cliconfig.dataset, config.category)
    out = Path(_require(config.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)

    trained = {}
    for index in sorted(data):
        stats = categories[str(index)]
        if not stats.get("trainable") and config.category is None:
            logger.info(f"category {index}: not trainable. Skipping")
            continue
        if "normalization" not in stats:
            logger.warning(f"category {index}: no labels. Skipping")
            continue

        norm = NormalizationSpec.from_dict(stats["normalization"])
        x, y = _xy(data[index]["train"], norm)
        validation = _xy(data[index]["validation"], norm) if data[index]["validation"] else None

        model = build(
            config.architecture,
            input_shape=x.shape[1:],
            seed=config.seed,
            **config.arch_options,
        )
        logger.info(f"category {index}: training {model.name} on {len(x)} examples")
        t0 = time.time()
        history = fit(
            model,
            x,
            y,
            epochs=config.epochs,
            batch_size=config.batch_size,
            optimizer=make_optimizer(config.optimizer, config.learning_rate, config.momentum),
            seed=config.seed,
            validation=validation,
        )
        logger.info(f"category {index}: trained in {time_format(time.time() - t0)}")

        meta = {
            "category": index,
            "normalization": stats["normalization"],
            "boundaries": stats["boundaries"],
            "class_means": stats["class_means"],
            "liquidity_thresholds": stats.get("liquidity_thresholds"),
            "architecture": config.architecture,
            "seed": config.seed,
        }
        archive.save(out / f"model_{index}.json", model, meta)

        with open(out / f"loss_{index}.csv", "wt", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(("epoch", "loss", "accuracy", "val_loss", "val_accuracy"))
            h = history.to_dict()
            for ii, loss in enumerate(h["loss"]):
                val = (
                    (f"{h['val_loss'][ii]:.6f}", f"{h['val_accuracy'][ii]:.6f}")
                    if h["val_loss"]
                    else ("", "")
                )
                writer.writerow((ii + 1, f"{loss:.6f}", f"{h['accuracy'][ii]:.6f}", *val))
        trained[index] = history

    if not trained:
        logger.warning("No category was trained")
    return trained


#################################################
## Evaluate
#################################################


def evaluate(config):
    from .evaluation import ConfusionMatrix, build_report, format_report
    from .harness import ModelSet, MissingCategoryModel

    args = config.cliconfig
    if args.matrix:
        matrix = ConfusionMatrix.load(args.matrix)
    else:
        categories, data = load_dataset(args.dataset, config.category)
        models = ModelSet.load(_require(args.model, "--model"))
        real, predicted = [], []
        for index in sorted(data):
            examples = data[index]["validation"]
            if not examples:
                continue
            try:
                cm = models.get(index)
            except MissingCategoryModel as E:
                logger.info(f"category {index}: {E}. Skipping {len(examples)} validation examples")
                continue
            for ex in examples:
                real.append(ex.label)
                predicted.append(int(np.argmax(cm.predict_proba(ex.inputs))))
        if not real:
            raise MissingInput("No validation examples with a model to evaluate")
        matrix = ConfusionMatrix.from_labels(real, predicted)

    reference = args.reference_accuracy
    if reference is None:
        reference = config.reference_accuracy
    report = build_report(
        matrix,
        reference_accuracy=reference,
        reference_green=args.reference_green,
    )
    print(format_report(report))

    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "wt") as fp:
            json.dump(report, fp, indent=1)
    return report


#################################################
## Simulate
#################################################


def simulate(config):
    from .harness import ModelSet, trading_loop, write_outputs

    races = load_races(config)
    models = ModelSet.load(_require(config.cliconfig.model, "--model"))
    out = _require(config.out, "--out")

    corpus = None
    if not config.liquidity_thresholds:
        corpus = models.liquidity_thresholds or corpus_liquidity_thresholds(
            races, config.predict_before_start
        )
    rules = config.category_rules(corpus)
    results = trading_loop(races, models, config, rules)
    return write_outputs(results, out, config.stake_pennies, config.ladder())


#################################################
## Replay
#################################################


def ladder_table(frame, ladder, width=5):
    """Aligned text of the ladder `width` ticks either side of the LTP"""
    center = frame.last_traded
    if center is None:
        center = frame.best_bid() if frame.best_bid() is not None else frame.best_ask()
    if center is None:
        return "  (empty book)"

    table = [["bid", "price", "ask", "volume"]]
    lo = ladder.clamp(center - width)
    hi = ladder.clamp(center + width)
    for tick in range(hi, lo - 1, -1):

        def amt(book):
            return fmt_money(book[tick]) if book.get(tick) else ""

        price = describe_tick(ladder, tick)
        if tick == frame.last_traded:
            price = f"*{price}"
        table.append([amt(frame.bids), price, amt(frame.asks), amt(frame.volume)])
    return tabulate(table)


def replay(config):
    from .ladder import validate_frame

    args = config.cliconfig
    races = load_races(config)
    ladder = config.ladder()
    only = set(listify(args.runner))
    count = 0
    with open_output("-") as fp:
        for race in races:
            for rid in sorted(race.runners):
                if only and rid not in only:
                    continue
                book = race.runners[rid]
                prev = None
                for frame in book.frames:
                    violations = validate_frame(frame, prev, ladder=ladder)
                    prev = frame
                    count += 1
                    if args.jsonl:
                        rec = {
                            "race": race.race_id,
                            "runner": rid,
                            "ts": frame.timestamp,
                            "status": race.status_at(frame.timestamp),
                            "ltp": describe_tick(ladder, frame.last_traded),
                            "best_bid": describe_tick(ladder, frame.best_bid()),
                            "best_ask": describe_tick(ladder, frame.best_ask()),
                            "violations": [v.kind for v in violations],
                        }
                        fp.write(dumps_line(rec) + "\n")
                        continue
                    fp.write(
                        f"{race.race_id} {book.name or rid} ts={frame.timestamp} "
                        f"status={race.status_at(frame.timestamp)}\n"
                    )
                    fp.write(ladder_table(frame, ladder, args.width) + "\n")
                    for v in violations:
                        fp.write(f"  ! {v.kind}: {v.detail}\n")
                    fp.write("\n")
    return count
