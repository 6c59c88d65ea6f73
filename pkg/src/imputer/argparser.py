"""
imputer: train and decode alignment-based iterative imputation models on
synthetic sequence-transduction data.
"""

import argparse
import logging
import os
from pathlib import Path

from imputer.decoder import STRATEGIES
from imputer.experiments import EXPERIMENTS
from imputer.selfcheck import SUITES


class Parser:
    @classmethod
    def arg_parser(cls, vargs=None):
        parser = argparse.ArgumentParser(
            prog="imputer",
            description=__doc__,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        parser.add_argument(
            "-v",
            "--verbosity",
            action="count",
            default=1,
            help="Use the option multiple times to increase output verbosity",
        )
        parser.add_argument(
            "--workers",
            type=cls.validate_positive,
            help="Number of examples evaluated concurrently (train default: config value)",
        )
        commands = parser.add_subparsers(dest="command", required=True)

        gen_data = commands.add_parser(
            "gen-data",
            help="Generate a synthetic dataset",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        gen_data.add_argument("task", choices=["unimodal", "multimodal"])
        gen_data.add_argument(
            "-o",
            "--out",
            required=True,
            type=cls.validate_output_file,
            help="Dataset file to write",
        )
        gen_data.add_argument("--seed", default=0, type=cls.validate_nonnegative)
        gen_data.add_argument(
            "-n", "--num-examples", default=2000, type=cls.validate_nonnegative
        )
        gen_data.add_argument("--vocab-size", default=4, type=cls.validate_positive)
        gen_data.add_argument("--min-length", default=4, type=cls.validate_nonnegative)
        gen_data.add_argument("--max-length", default=8, type=cls.validate_nonnegative)
        gen_data.add_argument(
            "--min-frames-per-token", default=1, type=cls.validate_positive
        )
        gen_data.add_argument(
            "--max-frames-per-token", default=3, type=cls.validate_positive
        )
        gen_data.add_argument("--feature-dim", default=16, type=cls.validate_positive)
        gen_data.add_argument("--noise", default=0.1, type=cls.validate_nonnegative_float)

        train = commands.add_parser(
            "train",
            help="Train a model from a run configuration file",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        train.add_argument("config", type=cls.validate_input, help="Run configuration (INI)")
        train.add_argument(
            "--resume",
            type=cls.validate_input,
            help="Checkpoint to continue training from",
        )

        align = commands.add_parser(
            "align",
            help="Replace expert alignments with a CTC model's best alignments",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        align.add_argument("--checkpoint", required=True, type=cls.validate_input)
        align.add_argument("--dataset", required=True, type=cls.validate_input)
        align.add_argument("-o", "--out", required=True, type=cls.validate_output_file)
        align.add_argument(
            "--refine",
            action="store_true",
            help="Keep the slots where an existing alignment agrees with the model's argmax",
        )

        decode = commands.add_parser(
            "decode",
            help="Decode a dataset with a trained model",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        decode.add_argument("--checkpoint", required=True, type=cls.validate_input)
        decode.add_argument("--dataset", required=True, type=cls.validate_input)
        decode.add_argument("--block-size", default=8, type=cls.validate_positive)
        decode.add_argument("--strategy", default="plain", choices=STRATEGIES)
        decode.add_argument(
            "-k",
            "--k",
            type=cls.validate_positive,
            help="Slots committed per top-k iteration (default: ceil(T / block size))",
        )
        decode.add_argument(
            "-o",
            "--output-dir",
            default=os.getcwd(),
            type=cls.validate_dir,
            help="Directory in which to write hypotheses and traces",
        )

        evaluate = commands.add_parser(
            "eval",
            help="Score hypotheses against a reference dataset",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        evaluate.add_argument("hypotheses", type=cls.validate_input)
        evaluate.add_argument("references", type=cls.validate_input)
        evaluate.add_argument(
            "-o", "--out", type=cls.validate_output_file, help="Also write the report here"
        )

        selfcheck = commands.add_parser(
            "selfcheck",
            help="Run the self-verification suites",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        selfcheck.add_argument("--seed", default=0, type=cls.validate_nonnegative)
        selfcheck.add_argument(
            "--suite",
            dest="suites",
            action="append",
            choices=list(SUITES),
            help="Suite to run; repeat for several (default: all)",
        )
        for name in SUITES:
            selfcheck.add_argument(
                f"--{name.replace('_', '-')}-count",
                dest=f"{name}_count",
                type=cls.validate_positive,
                help=f"Instances checked by the {name} suite",
            )

        experiment = commands.add_parser(
            "experiment",
            help="Train small models on synthetic data and compare objectives and decoders",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        experiment.add_argument(
            "--name",
            dest="experiments",
            action="append",
            choices=list(EXPERIMENTS),
            help="Experiment to run; repeat for several (default: all)",
        )
        experiment.add_argument("--seeds", default=3, type=cls.validate_positive)
        experiment.add_argument("--steps", default=500, type=cls.validate_positive)
        experiment.add_argument("--num-examples", default=2000, type=cls.validate_positive)
        experiment.add_argument("--eval-examples", default=200, type=cls.validate_positive)
        experiment.add_argument("--block-size", default=8, type=cls.validate_positive)

        args = parser.parse_args(vargs)

        # Set log_level arg
        if args.verbosity >= 2:
            args.log_level = logging.DEBUG
        elif args.verbosity >= 1:
            args.log_level = logging.INFO
        else:
            args.log_level = logging.WARN

        return args

    @staticmethod
    def validate_input(filepath: str):
        filepath = Path(filepath)
        if not filepath.is_file():
            raise argparse.ArgumentTypeError(
                f"input file does not exist or is not a file: {filepath}"
            )
        return filepath.resolve()

    @staticmethod
    def validate_output_file(filepath: str):
        filepath = Path(filepath)
        try:
            filepath.parent.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise argparse.ArgumentTypeError(f"cannot create dir: {str(err)}")
        return filepath.resolve()

    @staticmethod
    def validate_dir(path: str):
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as err:
            raise argparse.ArgumentTypeError(f"cannot create dir: {str(err)}")
        return Path(path).resolve()

    @staticmethod
    def validate_nonnegative(value: str):
        try:
            value = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid int value: {value!r}")
        if value >= 0:
            return value
        else:
            raise argparse.ArgumentTypeError(
                f"invalid int value (must be nonnegative): {value!r}"
            )

    @staticmethod
    def validate_positive(value: str):
        try:
            value = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid int value: {value!r}")
        if value > 0:
            return value
        else:
            raise argparse.ArgumentTypeError(
                f"invalid int value (must be positive): {value!r}"
            )

    @staticmethod
    def validate_nonnegative_float(value: str):
        try:
            value = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid float value: {value!r}")
        if value >= 0:
            return value
        else:
            raise argparse.ArgumentTypeError(
                f"invalid float value (must be nonnegative): {value!r}"
            )
