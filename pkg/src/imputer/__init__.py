import json
import logging
import os
import sys
from dataclasses import replace
from os.path import join

import numpy as np

from imputer.argparser import Parser
from imputer.checkpoint import Checkpoint
from imputer.config import VERSION, RunConfig, load_run_config, write_resolved_config
from imputer.dataset import SyntheticSpec, gen_synthetic, read_dataset, write_dataset
from imputer.decoder import DecodeConfig, decode
from imputer.errors import ConfigurationError, ImputerError
from imputer.experiments import SweepSettings, run_experiments
from imputer.metrics import evaluate
from imputer.selfcheck import SUITES, run_selfcheck
from imputer.trainer import extract_alignments, train
from imputer.utils import ordered_map, read_jsonl, write_jsonl

__version__ = VERSION


def cmd_gen_data(args):
    spec = SyntheticSpec(
        num_examples=args.num_examples,
        vocab_size=args.vocab_size,
        min_length=args.min_length,
        max_length=args.max_length,
        min_frames_per_token=args.min_frames_per_token,
        max_frames_per_token=args.max_frames_per_token,
        feature_dim=args.feature_dim,
        noise=args.noise,
    )
    examples = gen_synthetic(args.task, spec, np.random.default_rng(args.seed))
    write_dataset(args.out, examples)

    feasible = sum(example.feasible for example in examples)
    print(f"Wrote {len(examples)} {args.task} examples to {args.out}")
    if examples:
        frames = np.mean([example.features.T for example in examples])
        labels = np.mean([len(example.labels) for example in examples])
        print(
            f"Feasible (|y| <= T): {feasible}/{len(examples)}; "
            f"mean frames {frames:.2f}, mean labels {labels:.2f}"
        )


def cmd_train(args):
    config = load_run_config(args.config)
    if config.train_data is None:
        raise ConfigurationError("Config has no [data] train path")
    if args.workers:
        config = replace(config, train=replace(config.train, workers=args.workers))

    resume = None
    if args.resume:
        resume = Checkpoint.load(args.resume)
        if resume.params.config != config.model:
            logging.warning(
                "Checkpoint model config differs from the run config; using the checkpoint's"
            )
            config = replace(config, model=resume.params.config)

    vocab = config.model.vocab
    dataset = read_dataset(config.train_data, vocab)
    eval_set = None
    if config.eval_data is not None:
        eval_set = read_dataset(config.eval_data, vocab)[: config.train.eval_size]

    write_resolved_config(config, config.output_dir)
    result = train(
        config.train,
        dataset,
        config.model,
        decode_cfg=config.decode,
        eval_set=eval_set,
        output_dir=config.output_dir,
        resume=resume,
    )
    last = result.metrics[-1] if result.metrics else None
    print(f"Trained to step {result.checkpoint.step}; outputs in {config.output_dir}")
    if last is not None:
        print(f"Final {last['objective']} loss: {last['objective_value']:.6f}")


def cmd_align(args):
    params = Checkpoint.load(args.checkpoint).params
    examples = read_dataset(args.dataset, params.config.vocab)
    aligned = extract_alignments(params, examples, args.workers or 1, refine=args.refine)
    write_dataset(args.out, aligned)
    print(f"Wrote {len(aligned)} realigned examples to {args.out}")


def cmd_decode(args):
    checkpoint = Checkpoint.load(args.checkpoint)
    params = checkpoint.params
    decode_cfg = DecodeConfig(block_size=args.block_size, strategy=args.strategy, k=args.k)
    examples = read_dataset(args.dataset, params.config.vocab)

    write_resolved_config(
        RunConfig(
            model=params.config,
            decode=decode_cfg,
            eval_data=args.dataset,
            output_dir=args.output_dir,
            seed=params.config.seed,
        ),
        args.output_dir,
    )

    results = ordered_map(
        lambda example: decode(params, example.features, decode_cfg), examples, args.workers or 1
    )
    hypotheses = []
    traces = []
    for example, (hypothesis, trace) in zip(examples, results):
        hypotheses.append(
            {
                "id": example.id,
                "hypothesis": list(hypothesis.ids),
                "iterations": trace.iterations,
            }
        )
        traces.extend({"id": example.id, **record.to_record()} for record in trace.records)
    write_jsonl(args.output_dir / "hypotheses.jsonl", hypotheses)
    write_jsonl(args.output_dir / "traces.jsonl", traces)
    print(f"Decoded {len(hypotheses)} examples into {args.output_dir}")


def cmd_eval(args):
    hypotheses = {str(r["id"]): r["hypothesis"] for r in read_jsonl(args.hypotheses)}
    references = {}
    modes = {}
    for record in read_jsonl(args.references):
        references[str(record["id"])] = record["labels"]
        if record.get("modes"):
            modes[str(record["id"])] = tuple(record["modes"])
    if modes and len(modes) != len(references):
        logging.warning("Only some references carry modes; skipping mode consistency")
        modes = {}

    unknown = set(hypotheses) - set(references)
    if unknown:
        logging.warning(f"Ignoring {len(unknown)} hypotheses with no reference")

    report = evaluate(hypotheses, references, modes or None).to_record()
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out:
        args.out.write_text(text + "\n")


def cmd_selfcheck(args):
    counts = {
        name: getattr(args, f"{name}_count")
        for name in SUITES
        if getattr(args, f"{name}_count") is not None
    }
    results = run_selfcheck(args.seed, args.suites, **counts)
    for result in results:
        print(result)
    failed = [result.name for result in results if not result.passed]
    if failed:
        logging.error(f"Failed suites: {', '.join(failed)}")
        sys.exit(1)



def cmd_experiment(args):
    defaults = SweepSettings()
    settings = SweepSettings(
        seeds=tuple(range(args.seeds)),
        data=replace(defaults.data, num_examples=args.num_examples),
        eval_examples=args.eval_examples,
        train=replace(defaults.train, steps=args.steps),
        block_size=args.block_size,
        workers=args.workers or 1,
    )
    results = run_experiments(settings, args.experiments)
    for result in results:
        print(result)
    failed = [result.name for result in results if not result.passed]
    if failed:
        logging.error(f"Failed experiments: {', '.join(failed)}")
        sys.exit(1)

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "align": cmd_align,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "selfcheck": cmd_selfcheck,
    "experiment": cmd_experiment,
}


def main(args=None):
    logfile = join(os.getcwd(), "imputer.log")

    # Set up logging
    fh = logging.FileHandler(logfile, mode="w")
    fh.setLevel(logging.DEBUG)
    sh = logging.StreamHandler()

    args = Parser.arg_parser(args)
    sh.setLevel(args.log_level)

    # noinspection PyArgumentList
    logging.basicConfig(
        level=logging.DEBUG,
        format="%(asctime)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[fh, sh],
        force=True,
    )
    logging.debug(f"imputer {VERSION}: {args.command}")

    try:
        COMMANDS[args.command](args)
    except ImputerError as err:
        logging.error(f"{err.__class__.__name__}: {err}")
        sys.exit(err.exit_code)
