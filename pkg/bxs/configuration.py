import sys, os
import copy
import logging
from pathlib import Path

logger = logging.getLogger(__name__)


class BxsFilter(logging.Filter):
    def filter(self, record):
        return record.name == "bxs" or record.name.startswith("bxs.")


def init_logging(logfile, verbosity):
    """
    Start logging to stderr and, when logfile is set, to that file.
    verbosity 0 is WARNING, 1 INFO and 2+ DEBUG.
    """
    levels = [logging.WARN, logging.INFO, logging.DEBUG]
    verbosity = min([len(levels) - 1, max([0, verbosity])])
    level = levels[verbosity]

    formatter = logging.Formatter(
        fmt="%(asctime)s:%(levelname)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    handlers = []
    if logfile:
        Path(logfile).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(logfile))
    handlers.append(logging.StreamHandler(stream=sys.stderr))

    root_logger = logging.getLogger()
    root_logger.handlers.clear()  # Need to clear them for testing
    root_logger.setLevel(level)
    for handler in handlers:
        handler.setFormatter(formatter)
        handler.setLevel(level)
        handler.addFilter(BxsFilter())
        root_logger.addHandler(handler)


class ConfigError(ValueError):
    pass


class Config:
    """
    Run configuration. The TEMPLATE is executed first for defaults, then the
    user file (if any) with the override text executed before and after it.
    Values passed in `add_params` (from CLI flags) are applied last and win.
    """

    def __init__(self, configpath=None, out=None, verbosity=1, add_params=None):
        from . import __version__, __git_version__

        self._config = {"verbosity": verbosity}
        self.configpath = Path(configpath).resolve() if configpath else None
        self.add_params = {k: v for k, v in (add_params or {}).items() if v is not None}
        self.out = Path(out) if out else None

        self.logfile = self.out / "log.log" if self.out else None
        init_logging(self.logfile, verbosity)

        logger.info(f"bxs ({__version__})")
        if __git_version__:
            logger.info(f" {__git_version__['version']} {__git_version__['origin']}")
        logger.debug(f"config path: '{self.configpath}'")
        logger.debug(f"out: '{self.out}'")

    def _write_template(self, force=False):
        from . import __version__

        txt = TEMPLATE.replace("__VERSION__", __version__)

        if self.configpath.exists() and not force:
            raise ValueError(
                f"Path '{self.configpath}' exists. "
                "Specify a different path, move the existing file "
                "or use --force-overwrite"
            )
        self.configpath.parent.mkdir(parents=True, exist_ok=True)
        self.configpath.write_text(txt)
        logger.debug(f"Wrote template config to {self.configpath}")

    def parse(self, override_txt=""):
        # Passed to the config file
        self._config["os"] = os
        self._config["Path"] = Path
        self._config["log"] = lambda x: logger.info(f"config: {x}")
        self._config["print"] = lambda x: logger.info(f"config: {x}")
        if self.configpath:
            self._config["__file__"] = self.configpath
            self._config["__dir__"] = self.configpath.parent

        self._hidden_keys = set(self._config)
        self._hidden_keys.discard("verbosity")

        junk = {}
        exec("", junk)

        exec(TEMPLATE, self._config)  # Defaults
        self._config_keys = [
            k
            for k in self._config
            if (k not in junk and k not in self._hidden_keys and not k.startswith("_"))
        ]

        config_txt = ""
        if self.configpath:
            try:
                config_txt = self.configpath.read_text()
            except FileNotFoundError:
                raise FileNotFoundError(f"Couldn't find '{self.configpath}'")

        # Set the override_txt before AND after so that you can set other things
        cfg = [
            "pre,post = True,False",
            override_txt,
            config_txt,
            "pre,post = False,True",
            override_txt,
        ]
        exec("\n".join(cfg), self._config)

        for key in junk:
            self._config.pop(key, 0)

        self._config.update(self.add_params)
        self._validate()

        for k in self._config_keys:
            logger.debug(f"   {k} = {self._config.get(k)!r}")

        return self

    def _validate(self):
        from .nnkit.models import ARCHITECTURES
        from .nnkit.train import OPTIMIZERS

        allowed = {
            "architecture": set(ARCHITECTURES),
            "optimizer": set(OPTIMIZERS),
            "front_line": {True, False},
        }
        for key, values in allowed.items():
            val = self._config[key]
            if val not in values:
                msg = f"Allowed values for '{key}' are {sorted(values, key=str)}. Specified {val!r}"
                raise ConfigError(msg)

        positive = (
            "stake",
            "wait_frames_open",
            "wait_frames_normal",
            "wait_frames_emergency",
            "input_frames",
            "target_frames",
            "segment_frames",
            "epochs",
            "batch_size",
            "min_examples",
        )
        for key in positive:
            if not self._config[key] > 0:
                raise ConfigError(f"'{key}' must be > 0. Specified {self._config[key]!r}")

        if self.input_frames % self.segment_frames:
            raise ConfigError(
                f"'input_frames' ({self.input_frames}) must be a multiple of "
                f"'segment_frames' ({self.segment_frames})"
            )
        for key in ("tail_fraction", "validation_fraction"):
            if not 0 <= self._config[key] < 0.5:
                raise ConfigError(f"'{key}' must be in [0, 0.5). Specified {self._config[key]!r}")
        for key in ("runner_thresholds", "price_thresholds", "liquidity_thresholds"):
            val = self._config[key]
            if val is None and key == "liquidity_thresholds":
                continue
            if len(val) != 2 or not val[0] < val[1]:
                raise ConfigError(f"'{key}' must be two increasing values. Specified {val!r}")
        if self.category is not None and not 0 <= int(self.category) < 54:
            raise ConfigError(f"'category' must be in [0, 54). Specified {self.category!r}")

        self._config["concurrency"] = self._config["concurrency"] or os.cpu_count()

    @property
    def stake_pennies(self):
        from .utils import to_pennies

        return to_pennies(self.stake)

    def ladder(self):
        from .ladder import TickLadder

        return TickLadder(self.ladder_bands)

    def category_rules(self, liquidity_thresholds=None):
        """
        CategoryRules from the config. The configured liquidity thresholds are
        pounds; `liquidity_thresholds` (used when those are None) are pennies.
        """
        from .features import CategoryRules

        if self.liquidity_thresholds:
            liquidity_thresholds = tuple(100 * float(v) for v in self.liquidity_thresholds)
        return CategoryRules(
            runner_thresholds=tuple(self.runner_thresholds),
            price_thresholds=tuple(self.price_thresholds),
            liquidity_thresholds=liquidity_thresholds,
            ladder=self.ladder(),
        )

    def __getattr__(self, attr):
        try:
            return self._config[attr]
        except KeyError:
            raise AttributeError(attr)

    def __setattr__(self, attr, value):
        if attr.startswith("_"):
            return super(Config, self).__setattr__(attr, value)

        self._config[attr] = value

    def __repr__(self):
        cfg = copy.copy(self._config)
        contents = ", ".join(f"{k}={cfg[k]!r}" for k in self._config_keys if k in cfg)
        return f"Config({contents})"


TEMPLATE = r'''"""
bxs Config File (__VERSION__)

This configuration file is read as Python. Anything not set here keeps the
default shown. `os` and `Path = pathlib.Path` are loaded along with `log()`.

Also defines:
    __file__ : Absolute path of the config file. pathlib.Path
    __dir__ : Absolute path of the config file parent. pathlib.Path
    pre, post : True before / after the file when --override text is run

CLI flags (--category, --stake, --seed) take precedence over this file.
"""
##############################################
##                 Trading                  ##
##############################################

# Stake per session in pounds
stake = 3.00

# Frames (2 per second) to wait for the market to reach the entry price,
# before re-placing the close at the entry price, and before forcing the close
wait_frames_open = 20
wait_frames_normal = 80
wait_frames_emergency = 20

# If True, a session only opens when the market is at the entry on the first
# frame. Otherwise it waits up to wait_frames_open frames
front_line = False

# Stop as a fraction of the target (ticks) for each mechanism
swing_stop_fraction = 0.8
trailing_stop_fraction = 0.6

# Restrict simulate/train/evaluate to one category index (0-53). None is all
category = None

# Odds ladder bands as (low, high, step) strings. None is the Betfair table
ladder_bands = None

##############################################
##          Features and Categories         ##
##############################################

# Runner-count buckets: <= a Few, <= b Medium, else Many
runner_thresholds = (5, 11)

# Odds buckets: <= a Low, <= b Medium, else High
price_thresholds = (4.0, 6.0)

# Unmatched-money buckets (pounds). None computes terciles from the corpus
liquidity_thresholds = None

# Categories with fewer examples are not trained
min_examples = 1200

# Frames per example input, target window and segment
input_frames = 512
target_frames = 240
segment_frames = 4

# Seconds before the scheduled start to predict
predict_before_start = 120

# Fraction of each histogram tail truncated for normalization
tail_fraction = 0.10

# Latest fraction of examples (by race start) held out for validation
validation_fraction = 0.2

##############################################
##                 Training                 ##
##############################################

# One of: cnn, cnn-roll, lstm, lstm-att, lstm-convatt, convlstm2d,
#         convlstm2d-att, wavenet, wavenet2d-roll
architecture = "lstm-convatt"

# Keyword options passed to the architecture builder. Examples:
#   {"units": (50, 20, 5)}  {"hidden": (4,), "att_kernel": 3}
# lstm-att and lstm-convatt also take {"attention": "after"} to attend the
# recurrent sequences instead of the raw variables ("before", the default).
arch_options = {}

# "sgd" (with momentum) or "adam"
optimizer = "sgd"
learning_rate = 0.01
momentum = 0.9
epochs = 50
batch_size = 32

seed = 1

##############################################
##               Evaluation                 ##
##############################################

# Reference accuracy (percent) to compare against. None skips the check
reference_accuracy = None

##############################################
##                  Misc                    ##
##############################################

# Races processed in parallel. None is os.cpu_count()
concurrency = None
'''
