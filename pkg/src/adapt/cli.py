"""Command-line entry point: ``adapt <subcommand> ...``.

Exit codes: 0 success, 1 validation error or bad usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _validation_errors() -> tuple[type, ...]:
    from .data import DatasetError
    from .tensor_io import TensorFormatError
    from .video import ConfigError
    return (ConfigError, DatasetError, TensorFormatError, FileNotFoundError, NotADirectoryError,
            json.JSONDecodeError)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adapt", description="Driving caption and control-signal model toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON training config; unknown keys are rejected")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write the metrics JSON here instead of stdout")

    p = sub.add_parser("infer", help="caption a single clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True, help="ADPT clip tensor (N, H, W, 3)")
    p.add_argument("--signals", help="JSON [[speed, course], ...] per frame; needed for single_plus")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="train and score every row of an ablation table")
    p.add_argument("--suite", default="all", help="mtl, signals, mask, frames, a comma list, or all")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base JSON training config")
    return parser


def _config(path):
    from .model import TrainConfig
    return TrainConfig.from_json(path) if path else TrainConfig()


def cmd_gen_data(args) -> int:
    from .data import gen_synthetic
    episodes = gen_synthetic(args.out, args.clips, args.seed, args.frames, args.size)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import read_dataset
    from .train import Trainer, prepare
    config = _config(args.config)
    episodes = read_dataset(args.data)
    trainer = Trainer.from_episodes(config, episodes)
    trainer.fit(prepare(episodes, args.data, config, trainer.vocab))
    trainer.save(args.out)
    last = trainer.history[-1]
    print(f"saved checkpoint to {args.out}; final " + " ".join(
        f"{k}={v:.4f}" for k, v in last.items() if k != "epoch"))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import read_dataset
    from .train import Trainer, prepare
    trainer = Trainer.load(args.ckpt)
    episodes = read_dataset(args.data)
    report = trainer.evaluate(prepare(episodes, args.data, trainer.config, trainer.vocab))
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .data import read_clip
    from .train import Trainer
    trainer = Trainer.load(args.ckpt)
    frames = read_clip(args.clip)
    signals = None
    if args.signals:
        signals = np.asarray(json.loads(Path(args.signals).read_text(encoding="utf-8")), dtype=np.float64)
        if signals.shape != (frames.shape[0], 2):
            from .video import ConfigError
            raise ConfigError(f"signals must have shape ({frames.shape[0]}, 2), got {signals.shape}")
    narration, reasoning = trainer.infer(frames, signals)
    print(f"Narration: {narration}\nReasoning: {reasoning}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    results = run_suite(args.seed, echo=print)
    return EXIT_OK if all(r.passed for r in results.values()) else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    from .ablation import format_table, resolve_suites, run_ablation, write_report
    from .video import ConfigError
    try:
        resolve_suites(args.suite)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = run_ablation(args.suite, args.data, _config(args.config))
    write_report(report, args.out)
    print(format_table(report))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except _validation_errors() as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
