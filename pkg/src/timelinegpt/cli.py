"""
Command line entry point. Every subcommand reads its inputs, writes its outputs and a JSON run manifest
describing the resolved configuration, the seed and the hashes of the files it produced.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 on any other failure.
"""
import argparse
import dataclasses
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd

from timelinegpt import __version__
from timelinegpt.util import (atomic_write, atomic_write_text, config_from_dict, derive_seed, load_config, load_yaml,
                              plain_values, resolve_option, sha256_file)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

LOG_FORMAT = "%(asctime)s level=%(levelname)s %(message)s"

COMMANDS: Dict[str, "Command"] = {}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclasses.dataclass
class Command:
    name: str
    help: str
    run: Callable
    arguments: List[tuple]


def arg(*flags, **options) -> tuple:
    return flags, options


def command(name: str, help: str, arguments: List[tuple] = ()):
    """
    Registers a subcommand. The decorated function receives the parsed arguments and the RunManifest to fill.
    """

    def wrapper(fn):
        COMMANDS[name] = Command(name, help, fn, list(arguments))
        return fn

    return wrapper


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    seed: int
    threads: Optional[int]
    version: str = __version__
    config: Dict = dataclasses.field(default_factory=dict)
    inputs: Dict[str, str] = dataclasses.field(default_factory=dict)
    outputs: Dict[str, str] = dataclasses.field(default_factory=dict)
    artifacts: Dict[str, str] = dataclasses.field(default_factory=dict)
    started_at: str = ""
    wall_clock_seconds: float = 0.0
    status: str = "running"

    def input(self, name: str, path) -> Path:
        if path is not None:
            self.inputs[name] = str(path)
        return None if path is None else Path(path)

    def output(self, name: str, path) -> Path:
        self.outputs[name] = str(path)
        return Path(path)

    def record_config(self, name: str, value):
        self.config[name] = plain_values(value)

    def hash_outputs(self):
        for path in map(Path, self.outputs.values()):
            files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
            for f in files:
                if f.is_file() and not f.name.endswith(".manifest.json"):
                    self.artifacts[str(f)] = sha256_file(f)

    def write(self, path):
        atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        logging.info("Wrote run manifest path=%s", path)


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        return out / "run.manifest.json"
    return out.with_name(f"{out.stem}.manifest.json")


# shared argument groups

TABLE_ARGUMENTS = [
    arg("--data-dir", help="directory holding persons.csv, visits.csv, events.csv and ancestry.csv"),
    arg("--persons", help="persons table, overrides the data directory"),
    arg("--visits", help="visits table, overrides the data directory"),
    arg("--events", help="events table, overrides the data directory"),
    arg("--ancestry", help="concept ancestry table, overrides the data directory"),
]
CODEC_ARGUMENT = arg("--codec", help="codec options file")
MODEL_ARGUMENTS = [
    arg("--checkpoint", "--model", dest="checkpoint", required=True, help="model checkpoint"),
    arg("--vocab", required=True, help="vocabulary file the model was trained with"),
]


def _tables(args, run: RunManifest, data_dir=None, name="tables"):
    from timelinegpt.tables import read_tables
    if data_dir is not None:
        run.input(name, data_dir)
        return read_tables(data_dir=data_dir)
    for option in ("data_dir", "persons", "visits", "events", "ancestry"):
        run.input(f"{name}.{option}", getattr(args, option, None))
    return read_tables(args.data_dir, args.persons, args.visits, args.events, args.ancestry)


def _codec(args, run: RunManifest):
    from timelinegpt.codec import CodecConfig
    cfg = load_config(CodecConfig, run.input("codec", args.codec)) if args.codec else CodecConfig()
    run.record_config("codec", cfg)
    return cfg


def _model(args, run: RunManifest):
    from timelinegpt.codec import Vocabulary
    from timelinegpt.nn import load_checkpoint
    vocab = Vocabulary.load(run.input("vocab", args.vocab))
    model = load_checkpoint(run.input("checkpoint", args.checkpoint), expected_vocab_sha256=vocab.sha256()).model
    return model, vocab


def _write_csv(frame: pd.DataFrame, path):
    atomic_write(path, lambda p: frame.to_csv(p, index=False))


def _cohort(args, run: RunManifest, tables):
    """A precomputed cohort CSV, or a CohortSpec file built against the tables."""
    from timelinegpt.evaluation import CohortSpec, labeled_cohort, read_cohort
    path = run.input("cohort", args.cohort)
    if path.suffix.lower() == ".csv":
        return read_cohort(tables, path)
    spec = load_config(CohortSpec, path)
    run.record_config("cohort", spec)
    return labeled_cohort(tables, spec)


@command("encode", "encode event tables into a sequence file",
         TABLE_ARGUMENTS + [CODEC_ARGUMENT, arg("--out", required=True, help="sequence file")])
def cmd_encode(args, run: RunManifest):
    from timelinegpt.codec import encode_patients, records_from_tables, write_sequences
    cfg = _codec(args, run)
    sequences = encode_patients(records_from_tables(_tables(args, run)), cfg)
    write_sequences(sequences, run.output("sequences", args.out))


@command("decode", "decode a sequence file back into event tables",
         [arg("--sequences", required=True), CODEC_ARGUMENT, arg("--out", required=True, help="output directory")])
def cmd_decode(args, run: RunManifest):
    from timelinegpt.codec import decode_sequences, read_sequences, tables_from_records
    from timelinegpt.tables import write_tables
    cfg = _codec(args, run)
    report = decode_sequences(read_sequences(run.input("sequences", args.sequences), cfg.long_term_days), cfg)
    out = run.output("tables", args.out)
    write_tables(tables_from_records(report.records), out)
    failures = pd.DataFrame(sorted(report.failures.items()), columns=["reason", "count"])
    _write_csv(failures, out / "decode_failures.csv")


@command("vocab", "build the vocabulary of a sequence file",
         [arg("--sequences", required=True), arg("--out", required=True, help="vocabulary file")])
def cmd_vocab(args, run: RunManifest):
    from timelinegpt.codec import build_vocabulary, read_sequences
    vocab = build_vocabulary(read_sequences(run.input("sequences", args.sequences)))
    vocab.save(run.output("vocab", args.out))


@command("train", "train a model on event tables",
         TABLE_ARGUMENTS + [CODEC_ARGUMENT,
                            arg("--model-config", help="model hyperparameters file, vocab_size is set from the data"),
                            arg("--train-config", help="optimization settings file"),
                            arg("--resume", help="checkpoint written by an interrupted run"),
                            arg("--out", required=True, help="output directory")])
def cmd_train(args, run: RunManifest):
    from timelinegpt.codec import build_vocabulary, records_from_tables
    from timelinegpt.nn import ModelConfig, TimelineGPT
    from timelinegpt.training import TrainConfig, Trainer, prepare_corpus
    codec = _codec(args, run)
    train_cfg = load_config(TrainConfig, run.input("train_config", args.train_config)) if args.train_config \
        else TrainConfig()
    if args.seed_given:
        train_cfg = dataclasses.replace(train_cfg, seed=run.seed)
    model_values = load_yaml(run.input("model_config", args.model_config)) if args.model_config else {}
    if not isinstance(model_values, dict):
        raise ValueError("Model configuration must be a key-value mapping.")
    context_window = int(model_values.get("context_window", ModelConfig.context_window))
    split = prepare_corpus(records_from_tables(_tables(args, run)), codec, train_cfg.min_seq_tokens, context_window,
                           train_cfg.eval_fraction, train_cfg.seed)
    vocab = build_vocabulary(split.train + split.eval)
    model_cfg = config_from_dict(ModelConfig, {**model_values, "vocab_size": len(vocab)})
    run.record_config("model", model_cfg)
    run.record_config("train", train_cfg)

    out = run.output("model_dir", args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    trainer = Trainer(TimelineGPT.from_config(model_cfg, seed=train_cfg.seed), vocab, train_cfg, out)
    if args.resume:
        trainer.resume(run.input("resume", args.resume))
    result = trainer.train(split.train, split.eval)
    logging.info("Training finished steps=%d best_eval_loss=%.6f stopped_early=%s", result.steps,
                 result.best_eval_loss, result.stopped_early)


@command("generate", "sample a synthetic sequence pool from a mixture of experts",
         MODEL_ARGUMENTS + [arg("--experts", required=True, help="expert blocks file"),
                            arg("--prompts", required=True, help="sequence file of the demographic prompts"),
                            arg("--out", required=True, help="synthetic sequence file")])
def cmd_generate(args, run: RunManifest):
    from timelinegpt.codec import read_sequences, write_sequences
    from timelinegpt.generation import DemographicPromptSampler, generate_pool, load_experts
    from timelinegpt.nn import load_checkpoint
    model, vocab = _model(args, run)
    experts = load_experts(load_yaml(run.input("experts", args.experts)))
    if args.seed_given:
        experts = [(dataclasses.replace(cfg, seed=derive_seed(run.seed, e)), count)
                   for e, (cfg, count) in enumerate(experts)]
    run.record_config("experts", [dict(plain_values(cfg), count=count) for cfg, count in experts])
    models = {cfg.checkpoint: load_checkpoint(cfg.checkpoint, vocab.sha256()).model
              for cfg, _ in experts if cfg.checkpoint}
    for name in models:
        run.input(f"checkpoint.{name}", name)
    prompts = DemographicPromptSampler.from_sequences(read_sequences(run.input("prompts", args.prompts)))
    corpus = generate_pool(model, vocab, experts, prompts, threads=run.threads, models=models)
    out = run.output("sequences", args.out)
    write_sequences(corpus.token_sequences(), out)
    _write_csv(corpus.provenance(), run.output("provenance", out.with_name(f"{out.stem}.provenance.csv")))
    _write_csv(corpus.counts_frame(), run.output("expert_counts", out.with_name(f"{out.stem}.experts.csv")))


@command("convert", "convert generated sequences to event tables with a conversion report",
         [arg("--sequences", required=True),
          arg("--provenance", help="provenance file of the pool, marks sequences cut by max_tokens"),
          CODEC_ARGUMENT, arg("--out", required=True, help="output directory")])
def cmd_convert(args, run: RunManifest):
    from timelinegpt.codec import read_sequences
    from timelinegpt.generation import convert_to_tables, summary_stats
    from timelinegpt.generation.sampler import SampledSequence
    from timelinegpt.tables import write_tables
    cfg = _codec(args, run)
    corpus = read_sequences(run.input("sequences", args.sequences), cfg.long_term_days)
    if args.provenance:
        provenance = pd.read_csv(run.input("provenance", args.provenance), dtype={"person_id": str})
        rows = provenance.set_index("person_id")
        corpus = [SampledSequence(s, int(rows.at[s.person_id, "expert"]), int(rows.at[s.person_id, "index"]),
                                  int(rows.at[s.person_id, "seed"]), bool(rows.at[s.person_id, "hit_max_tokens"]))
                  if s.person_id in rows.index else s for s in corpus]
    tables, report = convert_to_tables(corpus, cfg)
    out = run.output("tables", args.out)
    write_tables(tables, out)
    report.write(out / "conversion_report.csv")
    if tables.n_persons:
        _write_csv(summary_stats(tables, cfg).to_frame(), out / "summary_stats.csv")


@command("zeroshot", "estimate outcome probabilities by simulating trajectories",
         TABLE_ARGUMENTS + MODEL_ARGUMENTS + [
             CODEC_ARGUMENT,
             arg("--task", required=True, help="task file"),
             arg("--cohort", required=True, help="cohort CSV (person_id,label,index_date) or cohort definition"),
             arg("--n-bootstrap", type=int, default=1000),
             arg("--out", required=True, help="output directory")])
def cmd_zeroshot(args, run: RunManifest):
    from timelinegpt.zeroshot import evaluate_task, expand_outcomes, load_task
    task = load_task(run.input("task", args.task))
    run.record_config("task", task)
    codec = _codec(args, run)
    tables = _tables(args, run)
    cohort = _cohort(args, run, tables)
    model, vocab = _model(args, run)
    outcomes = expand_outcomes(task, tables.ancestry)
    estimate = evaluate_task(model, vocab, cohort, task, outcomes, seed=run.seed, n_bootstrap=args.n_bootstrap,
                             threads=run.threads, cfg=codec)
    estimate.write(run.output("results", args.out))


@command("probe", "score a cohort with a linear probe and a bag-of-words baseline",
         TABLE_ARGUMENTS + [
             CODEC_ARGUMENT,
             arg("--checkpoint", "--model", dest="checkpoint", help="model checkpoint, the probe is skipped without"),
             arg("--vocab", help="vocabulary file the model was trained with"),
             arg("--cohort", required=True, help="cohort CSV (person_id,label,index_date) or cohort definition"),
             arg("--train-data-dir", help="train on the cohort built from these tables, test on the main tables"),
             arg("--test-fraction", type=float, default=0.2),
             arg("--l2", type=float, default=1.0),
             arg("--n-bootstrap", type=int, default=1000),
             arg("--out", required=True, help="metrics file")])
def cmd_probe(args, run: RunManifest):
    from timelinegpt.evaluation import bow_baseline, linear_probe, report_frame, split_examples
    codec = _codec(args, run)
    examples = _cohort(args, run, _tables(args, run))
    if args.train_data_dir:
        train = _cohort(args, run, _tables(args, run, args.train_data_dir, "train_tables"))
        test = examples
    else:
        train, test = split_examples(examples, args.test_fraction, run.seed)
    frames = [report_frame(bow_baseline(train, test, l2=args.l2, n_bootstrap=args.n_bootstrap, seed=run.seed).metrics,
                           method="bow")]
    if args.checkpoint:
        if not args.vocab:
            raise ValueError("Option [--vocab] is required with [--checkpoint].")
        model, vocab = _model(args, run)
        result = linear_probe(model, vocab, train, test, codec, l2=args.l2, n_bootstrap=args.n_bootstrap,
                              seed=run.seed)
        frames.append(report_frame(result.metrics, method="linear_probe"))
    _write_csv(pd.concat(frames, ignore_index=True), run.output("metrics", args.out))


@command("prevalence", "compare concept prevalence between real and synthetic populations",
         [arg("--real-dir", help="real event tables, TIMELINEGPT_DATA_DIR by default"),
          arg("--synthetic-dir", required=True, help="synthetic event tables"),
          arg("--populations", nargs="+", default=["full", "female", "hospitalized"]),
          arg("--out", required=True, help="prevalence file")])
def cmd_prevalence(args, run: RunManifest):
    from timelinegpt.evaluation import prevalence_report
    from timelinegpt.tables import read_tables
    real = read_tables(run.input("real", args.real_dir))
    synthetic = read_tables(run.input("synthetic", args.synthetic_dir))
    run.record_config("populations", args.populations)
    _write_csv(prevalence_report(real, synthetic, tuple(args.populations)), run.output("prevalence", args.out))


@command("pathway", "extract a treatment pathway cohort",
         TABLE_ARGUMENTS + [arg("--cohort", required=True, help="cohort definition file"),
                            arg("--out", required=True, help="member list file")])
def cmd_pathway(args, run: RunManifest):
    from timelinegpt.evaluation import CohortSpec, pathway_cohort
    spec = load_config(CohortSpec, run.input("cohort", args.cohort))
    run.record_config("cohort", spec)
    result = pathway_cohort(_tables(args, run), spec)
    _write_csv(pd.DataFrame({"person_id": result.person_ids}), run.output("members", args.out))
    logging.info("Pathway cohort name=%s members=%d persons=%d prevalence=%.6f", spec.name, len(result.person_ids),
                 result.n_persons, result.prevalence)


@command("privacy", "run the privacy attacks against a synthetic population",
         [arg("--train-dir", required=True, help="event tables the generator was trained on"),
          arg("--eval-dir", required=True, help="held-out event tables"),
          arg("--synthetic-dir", required=True, help="synthetic event tables"),
          arg("--config", help="attack options file"),
          arg("--out", required=True, help="report file")])
def cmd_privacy(args, run: RunManifest):
    from timelinegpt.privacy import PrivacyConfig, evaluate_privacy
    from timelinegpt.tables import read_tables
    cfg = load_config(PrivacyConfig, run.input("config", args.config)) if args.config else PrivacyConfig()
    if args.seed_given:
        cfg = dataclasses.replace(cfg, seed=run.seed)
    run.record_config("privacy", cfg)
    report = evaluate_privacy(read_tables(run.input("train", args.train_dir)),
                              read_tables(run.input("eval", args.eval_dir)),
                              read_tables(run.input("synthetic", args.synthetic_dir)), cfg, threads=run.threads)
    report.write(run.output("report", args.out))
    logging.info("Privacy result passed=%s", report.passed)


@command("simstudy", "compare time-token and summation encoders on the interval logic task",
         [arg("--config", help="encoder settings file"),
          arg("--seeds", type=int, default=1, help="number of seeds, starting at --seed"),
          arg("--out", required=True, help="output directory")])
def cmd_simstudy(args, run: RunManifest):
    from timelinegpt.simstudy import EncoderConfig, run_comparison
    cfg = load_config(EncoderConfig, run.input("config", args.config)) if args.config else EncoderConfig()
    run.record_config("encoder", cfg)
    if args.seeds <= 0:
        raise ValueError("Option [--seeds] must be positive.")
    out = run.output("results", args.out)
    rows = []
    for seed in range(run.seed, run.seed + args.seeds):
        result = run_comparison(cfg, seed, run.threads)
        result.write(out / f"seed-{seed}")
        rows.append({"seed": seed, "convergence_step": result.convergence_step(),
                     "final_timetoken": result.curve["acc_timetoken"].iloc[-1],
                     "final_sum": result.curve["acc_sum"].iloc[-1]})
    _write_csv(pd.DataFrame(rows), out / "summary.csv")


@command("gradcheck", "check the training loss gradients against finite differences",
         [arg("--config", required=True, help="toy model hyperparameters file"),
          arg("--repeats", type=int, default=3, help="number of random models checked"),
          arg("--tolerance", type=float, default=1e-4),
          arg("--out", required=True, help="errors file")])
def cmd_gradcheck(args, run: RunManifest):
    from timelinegpt.nn import ModelConfig
    from timelinegpt.nn.losses import loss_gradient_error
    cfg = load_config(ModelConfig, run.input("config", args.config))
    run.record_config("model", cfg)
    errors = [loss_gradient_error(cfg, seed=derive_seed(run.seed, i)) for i in range(args.repeats)]
    _write_csv(pd.DataFrame({"repeat": range(args.repeats), "max_relative_error": errors}),
               run.output("errors", args.out))
    worst = max(errors, default=0.0)
    if worst >= args.tolerance:
        raise RuntimeError(f"Gradient check failed: max relative error {worst:.3e} >= {args.tolerance:.1e}.")
    logging.info("Gradient check passed max_error=%.3e", worst)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="timelinegpt", description="Generative patient timeline models with time tokens.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, help="base seed, TIMELINEGPT_SEED or 0 by default")
    parser.add_argument("--threads", type=int, help="worker threads, TIMELINEGPT_THREADS or all cores by default")
    parser.add_argument("--log-level", help="log level, TIMELINEGPT_LOG_LEVEL or INFO by default")
    parser.add_argument("--manifest", help="run manifest path, next to the output by default")
    subparsers = parser.add_subparsers(dest="subcommand", metavar="subcommand", parser_class=_Parser)
    subparsers.required = True
    for cmd in COMMANDS.values():
        sub = subparsers.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        for flags, options in cmd.arguments:
            sub.add_argument(*flags, **options)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        return int(e.code or 0)

    try:
        level = resolve_option(args.log_level, "TIMELINEGPT_LOG_LEVEL", "INFO").upper()
        logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
        seed = resolve_option(args.seed, "TIMELINEGPT_SEED", 0, int)
        threads = resolve_option(args.threads, "TIMELINEGPT_THREADS", None, int)
        if threads is not None and threads <= 0:
            raise ValueError("Option [--threads] must be positive.")
    except ValueError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    args.seed_given = args.seed is not None or resolve_option(None, "TIMELINEGPT_SEED") is not None

    run = RunManifest(subcommand=args.subcommand, seed=seed, threads=threads,
                      started_at=datetime.now(timezone.utc).isoformat())
    run.record_config("arguments", {k: v for k, v in vars(args).items() if k != "seed_given"})
    started = time.monotonic()
    logging.info("Starting run subcommand=%s seed=%d threads=%s version=%s", args.subcommand, seed, threads,
                 __version__)
    try:
        COMMANDS[args.subcommand].run(args, run)
        run.status = "ok"
        code = EXIT_OK
    except (ValueError, KeyError, FileNotFoundError) as e:
        logging.error("Invalid input subcommand=%s error=%s", args.subcommand, e)
        run.status = f"invalid: {e}"
        code = EXIT_INVALID
    except Exception as e:
        logging.exception("Run failed subcommand=%s error=%s", args.subcommand, e)
        run.status = f"failed: {e}"
        code = EXIT_FAILURE
    run.wall_clock_seconds = round(time.monotonic() - started, 3)
    run.hash_outputs()
    try:
        run.write(_manifest_path(args))
    except OSError as e:
        logging.error("Could not write the run manifest error=%s", e)
    return code


if __name__ == "__main__":
    sys.exit(main())
