import os, sys
import argparse
import json
import logging

from . import __version__, __git_version__

logger = logging.getLogger(__name__)

_TESTMODE = False

BXS_CONFIG = os.environ.get("BXS_CONFIG", None)

# Commands that log at INFO unless told otherwise
PIPELINE_COMMANDS = {"ingest", "featurize", "train", "evaluate", "simulate"}


# This lets me control how argparse exits.
# https://stackoverflow.com/a/14728477
class ThrowingArgumentParserError(Exception):
    pass


class ThrowingArgumentParser(argparse.ArgumentParser):
    """Like regular argument parser but throws an exception"""

    def error(self, message):
        self.print_usage(sys.stderr)
        args = {"prog": self.prog, "message": message}
        msg = ("%(prog)s: error: %(message)s\n") % args
        raise ThrowingArgumentParserError(msg)


def parse(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    # Hacked commands
    if argv and argv[0] == "help":
        argv[0] = "--help"
    if argv and argv[0] == "version":
        argv[0] = "--version"

    config_global = argparse.ArgumentParser(add_help=False)
    config_global_group = config_global.add_argument_group(title="Config Settings")
    config_global_group.add_argument(
        "--config",
        metavar="file",
        default=BXS_CONFIG,
        help=f"""
            Config file. Can also be set with $BXS_CONFIG, which is currently
            {('set to ' + repr(BXS_CONFIG)) if BXS_CONFIG else 'not set'}.
            Without one, every option keeps its default.
            """,
    )
    config_global_group.add_argument(
        "-o",
        "--override",
        action="append",
        default=list(),
        metavar="'OPTION = VALUE'",
        help=(
            "Override any config option for this call only. Must be specified as "
            "'OPTION = VALUE', where VALUE should be proper Python. "
            """Example: --override "architecture = 'lstm'". """
            "Override text is evaluated before *and* after the config file. The "
            "variables 'pre' and 'post' are True or False accordingly. "
            "Can specify multiple times. There is no input validation so do not specify "
            "untrusted inputs."
        ),
    )
    config_global_group.add_argument(
        "--category",
        type=int,
        metavar="INDEX",
        help="Restrict to one category index (0-53)",
    )
    config_global_group.add_argument(
        "--seed", type=int, help="Random seed. Overrides the config"
    )
    config_global_group.add_argument(
        "--out", metavar="DIR", help="Output directory. The log file goes here too"
    )

    global_parent = argparse.ArgumentParser(add_help=False)
    global_group = global_parent.add_argument_group(
        title="Global Settings",
        description="Default verbosity is 1 for pipeline commands and 0 for replay",
    )
    global_group.add_argument(
        "-v", "--verbose", "--debug", action="count", help="+1 verbosity", default=0
    )
    global_group.add_argument(
        "-q", "--quiet", action="count", help="-1 verbosity", default=0
    )

    frames_parent = argparse.ArgumentParser(add_help=False)
    frames_parent.add_argument(
        "--frames",
        metavar="DIR",
        help="Frame file or directory of frame files (.jsonl, .jsonl.gz, .jsonl.xz)",
    )

    dataset_parent = argparse.ArgumentParser(add_help=False)
    dataset_parent.add_argument(
        "--dataset",
        metavar="DIR",
        help="Output directory of 'featurize'",
    )

    model_parent = argparse.ArgumentParser(add_help=False)
    model_parent.add_argument(
        "--model",
        metavar="PATH",
        help="""
            Model archive or a directory of 'model_<index>.json' archives. An
            archive without a category serves every category.
            """,
    )

    #### Main

    parser = ThrowingArgumentParser(
        description="bxs -- Betting eXchange Simulator",
        prog="bxs",
        parents=[global_parent],
    )

    version = "%(prog)s-" + __version__
    if __git_version__:
        version += f"|{__git_version__['version']}"
    parser.add_argument("--version", action="version", version=version)

    subparsers = {}
    subparsers["main"] = subpar = parser.add_subparsers(
        dest="command",
        title="Commands",
        required=True,
        metavar="command",
        description="Run `%(prog)s <command> -h` for help",
    )

    #################################################
    ## Init
    #################################################

    init = subparsers["init"] = subpar.add_parser(
        "init",
        parents=[global_parent],
        help="write a new config file.",
    )
    init.add_argument(
        "--force-overwrite",
        action="store_true",
        help="Force %(prog)s to overwrite an existing config file",
    )
    init.add_argument(
        "config",
        metavar="config-file",
        help="Specify a config file destination",
    )

    #################################################
    ## Pipeline
    #################################################

    subparsers["ingest"] = subpar.add_parser(
        "ingest",
        parents=[global_parent, config_global, frames_parent],
        help="Validate frame files and write canonical copies to <out>/frames",
    )

    subparsers["featurize"] = subpar.add_parser(
        "featurize",
        parents=[global_parent, config_global, frames_parent],
        help="Build the labeled, categorized example dataset",
    )

    subparsers["train"] = subpar.add_parser(
        "train",
        parents=[global_parent, config_global, dataset_parent],
        help="Train one model per trainable category",
    )

    evaluate = subparsers["evaluate"] = subpar.add_parser(
        "evaluate",
        parents=[global_parent, config_global, dataset_parent, model_parent],
        help="Confusion matrix and metrics on the validation split",
    )
    evaluate.add_argument(
        "--matrix",
        metavar="FILE",
        help="""
            Evaluate a supplied confusion matrix (JSON list of rows, or an object
            with "matrix") instead of models
            """,
    )
    evaluate.add_argument(
        "--reference-accuracy",
        type=float,
        metavar="PCT",
        help="Flag a discrepancy if the recomputed accuracy differs",
    )
    evaluate.add_argument(
        "--reference-green",
        type=int,
        metavar="N",
        help="Flag a discrepancy if the expected positive trade count differs",
    )

    simulate = subparsers["simulate"] = subpar.add_parser(
        "simulate",
        parents=[global_parent, config_global, frames_parent, model_parent],
        help="Trade the pre-live window of every race and write the trade log",
    )
    simulate.add_argument(
        "--stake",
        type=float,
        metavar="POUNDS",
        help="Stake per session. Overrides the config",
    )

    replay = subparsers["replay"] = subpar.add_parser(
        "replay",
        parents=[global_parent, config_global, frames_parent],
        help="Print the book frame by frame",
    )
    replay.add_argument(
        "--runner",
        action="append",
        metavar="ID",
        help="Only this runner. Can specify multiple times",
    )
    replay.add_argument(
        "--width",
        type=int,
        default=5,
        help="Ticks shown either side of the last traded price. Default %(default)s",
    )
    replay.add_argument(
        "--jsonl",
        action="store_true",
        help="One JSON record per frame instead of tables",
    )

    args = parser.parse_args(argv)
    args._argv0 = argv
    return args


def cli(argv=None):
    try:
        cliconfig = parse(argv)
    except ThrowingArgumentParserError as E:
        print(*E.args, file=sys.stderr)
        sys.exit(2)
    r = _cli(cliconfig)
    if _TESTMODE:
        return r


def _error_record(E, command):
    rec = {"error": type(E).__name__, "message": str(E), "command": command}
    print(json.dumps(rec), file=sys.stderr)
    return rec


def _cli(cliconfig):
    from .configuration import Config

    verbosity = 1 if cliconfig.command in PIPELINE_COMMANDS else 0
    verbosity += getattr(cliconfig, "verbose", 0) - getattr(cliconfig, "quiet", 0)
    verbosity = max([0, verbosity])

    add_params = {
        "category": getattr(cliconfig, "category", None),
        "seed": getattr(cliconfig, "seed", None),
        "stake": getattr(cliconfig, "stake", None),
    }

    try:
        # config also sets logging
        config = Config(
            cliconfig.config,
            out=getattr(cliconfig, "out", None),
            verbosity=verbosity,
            add_params=add_params,
        )
    except Exception as E:
        logger.error(f"parse: {E}")
        _error_record(E, cliconfig.command)
        sys.exit(2)

    try:
        config.cliconfig = cliconfig
        logger.debug(f"argv = {cliconfig._argv0}")

        if cliconfig.command == "init":
            config._write_template(force=cliconfig.force_overwrite)
            print(f"New config in {cliconfig.config!r}")
            return

        config.parse(override_txt="\n".join(cliconfig.override))
        logger.debug(f"{cliconfig = }")

        ###########################################
        ## Call out to the actual workers
        ###########################################
        from . import pipeline

        if cliconfig.command == "ingest":
            return pipeline.ingest(config)
        elif cliconfig.command == "featurize":
            return pipeline.featurize(config)
        elif cliconfig.command == "train":
            return pipeline.train(config)
        elif cliconfig.command == "evaluate":
            return pipeline.evaluate(config)
        elif cliconfig.command == "simulate":
            return pipeline.simulate(config)
        elif cliconfig.command == "replay":
            return pipeline.replay(config)
        else:
            logger.error(f"Unrecognized command {cliconfig.command!r}")
            return config

    except Exception as E:
        logger.error("")
        logger.error(str(E))
        logger.error("")
        rec = _error_record(E, cliconfig.command)

        if config.verbosity > 1:
            raise

        if not _TESTMODE:
            sys.exit(1)
        return rec
