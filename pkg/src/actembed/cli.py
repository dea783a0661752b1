"""Command-line front door: synth, train, export, eval, probe.

Every run writes a manifest recording the resolved configuration, seeds and
paths, so any output can be reproduced bit-exactly from its manifest. Exit
codes: 0 success, 2 usage or flag validation, 3 numerical failure, 4
inconsistent inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

import actembed
from actembed.corpus import (GRANULARITIES, TASKS, CorpusError, build_vocabulary,
                             corpus_fingerprint, encode_corpus, load_corpus,
                             save_corpus, segment)
from actembed.downstream import (EvalError, evaluate_task, subject_features,
                                 subject_probe)
from actembed.model import (ModelFormatError, init_params, load_model,
                            save_model)
from actembed.synth import SynthConfig, TaskEffect, generate_cohort, write_manifest
from actembed.trainer import ConfigError, NumericalError, TrainConfig, train

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_INPUT = 4


class InputMismatchError(RuntimeError):
    """Model and corpus do not belong together."""


def _write_run_manifest(path, command: str, config: dict, inputs: dict,
                        outputs: dict, started: float) -> None:
    manifest = {
        "command": command,
        "version": actembed.__version__,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - started, 3),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_effect(spec: str) -> tuple[str, TaskEffect]:
    try:
        task, rest = spec.split("=", 1)
        lo, hi, amp = rest.split(":")
        return task, TaskEffect((float(lo), float(hi)), float(amp))
    except ValueError as exc:
        raise ValueError(
            f"effect must look like TASK=START:END:AMPLITUDE, got {spec!r}"
        ) from exc


def cmd_synth(args) -> int:
    started = time.time()
    effects = dict(SynthConfig().effects)
    for spec in args.effect or []:
        task, effect = _parse_effect(spec)
        effects[task] = effect
    config = SynthConfig(
        n_subjects=args.n_subjects,
        labeled_fraction=args.labeled_fraction,
        length=args.length,
        v_max=args.v_max,
        base_amplitude=args.base_amplitude,
        effects=effects,
        gain_range=(args.gain_min, args.gain_max),
        phase_hours=args.phase_hours,
        noise_rate=args.noise_rate,
        missing_rate=args.missing_rate,
        seed=args.seed,
    )
    config.validate()
    corpus = generate_cohort(config)
    save_corpus(corpus, args.out)
    effects_path = args.effects_out or args.out + ".effects.json"
    write_manifest(config, effects_path)
    manifest_path = args.manifest or args.out + ".run.json"
    config_dict = {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(config).items() if k != "effects"}
    config_dict["effects"] = {
        t: {"band": list(e.band), "amplitude": e.amplitude}
        for t, e in config.effects.items()}
    _write_run_manifest(manifest_path, "synth", config_dict, {},
                        {"corpus": args.out, "effects": effects_path}, started)
    print(f"wrote {len(corpus)} subjects x {corpus.length} samples to {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        granularity=args.granularity,
        d=args.d,
        m_negatives=args.m_neg,
        window=args.window,
        eta=args.eta,
        beta=args.beta,
        lambda_max=args.lambda_max,
        disc_prob=args.disc_prob,
        learning_rate=args.lr,
        lr_floor=args.lr_floor,
        epochs=args.epochs,
        seed=args.seed,
        half_width=args.half_width,
        noise_exponent=args.noise_exponent,
        use_ordinal=not args.no_ordinal,
        use_context=not args.no_context,
        use_smoothing=not args.no_smoothing,
        use_adversarial=not args.no_adversarial,
        verbose=not args.quiet,
    )


def cmd_train(args) -> int:
    started = time.time()
    config = _train_config(args)
    if config.eta_forced_zero:
        print("warning: smoothing is not applicable at week granularity; "
              "eta forced to 0", file=sys.stderr)
    corpus = load_corpus(args.corpus)
    vocab = build_vocabulary(corpus)
    index = segment(corpus, config.granularity, half_width=config.half_width)
    hyper = {k: v for k, v in vars(config).items() if k != "verbose"}
    params = init_params(vocab, index, corpus.subjects, d=config.d,
                         seed=config.seed, hyperparams=hyper)
    params, report = train(corpus, vocab, index, params, config)
    save_model(params, args.out)
    report_path = args.report or args.out + ".train.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    manifest_path = args.manifest or args.out + ".run.json"
    _write_run_manifest(manifest_path, "train", hyper,
                        {"corpus": args.corpus},
                        {"model": args.out, "report": report_path}, started)
    print(f"trained {config.granularity} model "
          f"({report.epochs_run} epochs) -> {args.out}")
    return 0


def _load_pair(model_path, corpus_path):
    params = load_model(model_path)
    corpus = load_corpus(corpus_path)
    vocab = build_vocabulary(corpus)
    half_width = int(params.hyperparams.get("half_width", 1))
    index = segment(corpus, params.granularity, half_width=half_width)
    fingerprint = corpus_fingerprint(vocab, corpus.subjects,
                                     index.n_sequences, corpus.length)
    if fingerprint != params.vocab_hash:
        raise InputMismatchError(
            "model was trained on a different corpus (vocabulary hash mismatch)")
    encoded = encode_corpus(corpus, vocab) if params.granularity == "sample" \
        else None
    return params, corpus, vocab, index, encoded


def cmd_export(args) -> int:
    started = time.time()
    params, corpus, _, index, encoded = _load_pair(args.model, args.corpus)
    features, subjects = subject_features(params, corpus, index, encoded=encoded)
    task_order = sorted(TASKS)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject"] + task_order
                        + [f"e{i}" for i in range(features.shape[1])])
        for i, subject in enumerate(subjects):
            labels = corpus.labels_of_subject(subject)
            row = [subject]
            row += ["" if labels.get(t) is None else labels[t]
                    for t in task_order]
            row += [repr(float(x)) for x in features[i]]
            writer.writerow(row)
    manifest_path = args.manifest or args.out + ".run.json"
    _write_run_manifest(manifest_path, "export", {},
                        {"model": args.model, "corpus": args.corpus},
                        {"embeddings": args.out}, started)
    print(f"exported {features.shape[0]} subjects x {features.shape[1]} dims "
          f"to {args.out}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    params, corpus, vocab, index, encoded = _load_pair(args.model, args.corpus)
    tasks = sorted(TASKS) if args.task == "all" else [args.task]
    reports = {}
    for task in tasks:
        reports[task] = evaluate_task(
            params, corpus, vocab, index, task, splits=args.splits,
            base_seed=args.seed, encoded=encoded)
    payload = {
        "model": args.model,
        "seed": args.seed,
        "splits": args.splits,
        "tasks": {task: rep.to_dict() for task, rep in reports.items()},
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "task", "split", "l2", "val_metric",
                             "f1", "macro_f1", "micro_f1"])
            for task, rep in reports.items():
                for s in rep.splits:
                    writer.writerow([
                        args.model, task, s.seed, s.l2, s.val_metric,
                        s.test_metrics.get("f1", ""),
                        s.test_metrics.get("macro_f1", ""),
                        s.test_metrics.get("micro_f1", ""),
                    ])
    print(f"{'task':<14}{'metric':<10}{'mean':>8}{'std':>8}")
    for task, rep in reports.items():
        for key in sorted(rep.splits[0].test_metrics):
            print(f"{task:<14}{key:<10}{rep.mean(key):>8.3f}{rep.std(key):>8.3f}")
    manifest_path = args.manifest or args.out + ".run.json"
    _write_run_manifest(manifest_path, "eval",
                        {"task": args.task, "splits": args.splits,
                         "seed": args.seed},
                        {"model": args.model, "corpus": args.corpus},
                        {"report": args.out, "csv": args.csv or ""}, started)
    return 0


def cmd_probe(args) -> int:
    started = time.time()
    params, _, _, index, encoded = _load_pair(args.model, args.corpus)
    report = subject_probe(params, index, held_out_fraction=args.held_out,
                           seed=args.seed, encoded=encoded)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"subject probe accuracy {report.accuracy:.3f} "
          f"(chance {report.chance:.3f}, {report.n_test} held-out segments)")
    manifest_path = args.manifest or args.out + ".run.json"
    _write_run_manifest(manifest_path, "probe",
                        {"held_out": args.held_out, "seed": args.seed},
                        {"model": args.model, "corpus": args.corpus},
                        {"report": args.out}, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actembed",
        description="Subject-invariant embeddings for activity time-series.")
    parser.add_argument("--version", action="version",
                        version=f"actembed {actembed.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--n-subjects", type=int, default=120)
    p.add_argument("--labeled-fraction", type=float, default=0.5)
    p.add_argument("--length", type=int, default=20160)
    p.add_argument("--v-max", type=int, default=200)
    p.add_argument("--base-amplitude", type=float, default=60.0)
    p.add_argument("--gain-min", type=float, default=0.6)
    p.add_argument("--gain-max", type=float, default=1.4)
    p.add_argument("--phase-hours", type=float, default=2.0)
    p.add_argument("--noise-rate", type=float, default=0.15)
    p.add_argument("--missing-rate", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--effect", action="append",
                   help="override one task effect: TASK=START:END:AMPLITUDE")
    p.add_argument("--effects-out", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an embedding model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--granularity", choices=GRANULARITIES, default="day")
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--m-neg", type=int, default=12)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--lambda-max", type=float, default=0.05)
    p.add_argument("--disc-prob", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--lr-floor", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--half-width", type=int, default=1)
    p.add_argument("--noise-exponent", type=float, default=1.0)
    p.add_argument("--no-ordinal", action="store_true")
    p.add_argument("--no-context", action="store_true")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--no-adversarial", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--report", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="export subject representations as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="linear-probe evaluation on disorder tasks")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=sorted(TASKS) + ["all"], default="all")
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="subject-identifiability probe")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--held-out", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CorpusError, ModelFormatError, EvalError, InputMismatchError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
