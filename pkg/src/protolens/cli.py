"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data/config/checkpoint error.
PROTOLENS_SEED, when set, overrides the seed from any config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .data import generate_synthetic, load_corpus, save_corpus
from .encoder import load_cache
from .errors import ConfigError, ProtoLensError
from .experiments import DEFAULT_PLANTED_PHRASES, run_ablation, run_sweep
from .kernels import backend_name
from .losses import grad_check
from .model import ProtoLensModel
from .reporting import explain_instance, prototype_table, render
from .training import evaluate, load_checkpoint, save_checkpoint, train

# small dims so central differences over every scalar stay fast; the seed
# keeps all true gradients clear of the finite-difference roundoff floor
GRADCHECK_DEFAULTS = dict(
    K=3, M=4, n_gram=3, d=16, hash_dim=64, T_max=16, batch_size=4, seed=19
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; this CLI reserves 2 for data
    errors, so usage failures raise and main() maps them to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _load_train_config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    env_seed = os.environ.get("PROTOLENS_SEED")
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError:
            raise ConfigError(
                f"PROTOLENS_SEED must be an integer, got {env_seed!r}"
            ) from None
    return config


def _write(data: bytes) -> None:
    sys.stdout.buffer.write(data)
    sys.stdout.buffer.flush()


def _cmd_train(args) -> int:
    config = _load_train_config(args)
    train_corpus = load_corpus(args.train)
    val_corpus = load_corpus(args.val) if args.val else None
    cache = load_cache(args.cache, config.d) if args.cache else None
    log = None if args.quiet else print
    if not args.quiet:
        print(f"backend: {backend_name()}")
    model, history = train(config, train_corpus, val_corpus, cache=cache, log=log)
    save_checkpoint(model, args.out)
    final = history[-1] if history else None
    if final is not None:
        line = f"final total loss {final['total']:.4f}"
        if final["val_accuracy"] is not None:
            line += f", val accuracy {final['val_accuracy']:.4f}"
        print(line)
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    corpus = load_corpus(args.data)
    result = evaluate(model, corpus)
    print(f"accuracy {result.accuracy:.4f} ({result.count} instances)")
    for row in result.per_class:
        print(
            f"class {row['label']}: {row['correct']}/{row['total']} correct"
        )
    return 0


def _texts_for_explain(args) -> list[str]:
    if args.text is not None:
        return [args.text]
    lines = Path(args.file).read_text(encoding="utf-8").splitlines()
    return [line for line in lines if line.strip()]


def _cmd_explain(args) -> int:
    model = load_checkpoint(args.ckpt)
    reports = [explain_instance(model, text) for text in _texts_for_explain(args)]
    for i, report in enumerate(reports):
        if args.format == "text" and i:
            _write(b"\n")
        _write(render(report, args.format, top=args.top))
    return 0


def _cmd_prototypes(args) -> int:
    model = load_checkpoint(args.ckpt)
    _write(render(prototype_table(model), args.format, top=args.top))
    return 0


def _cmd_ablate(args) -> int:
    config = _load_train_config(args)
    train_corpus = load_corpus(args.train)
    val_corpus = load_corpus(args.val) if args.val else None
    test_corpus = load_corpus(args.test)
    rows = run_ablation(
        config, train_corpus, val_corpus, test_corpus, log=print
    )
    print(f"{'variant':>13}  {'accuracy':>8}  {'proto cosine':>12}")
    for row in rows:
        print(
            f"{row.variant:>13}  {row.accuracy:>8.4f}  "
            f"{row.mean_prototype_cosine:>12.4f}"
        )
    return 0


def _cmd_sweep(args) -> int:
    config = _load_train_config(args)
    train_corpus = load_corpus(args.train)
    val_corpus = load_corpus(args.val) if args.val else None
    test_corpus = load_corpus(args.test)
    parameter = {"K": "K", "ngram": "n_gram"}[args.param]
    points = run_sweep(
        config, train_corpus, val_corpus, test_corpus, parameter, args.values
    )
    for point in points:
        print(f"{args.param}={point.value} accuracy {point.accuracy:.4f}")
    return 0


def _cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, test_set, annotations = generate_synthetic(
        num_train=args.num_train,
        num_test=args.num_test,
        vocab_size=args.vocab_size,
        planted_phrases=DEFAULT_PLANTED_PHRASES,
        noise_length=args.noise_length,
        seed=args.seed,
    )
    save_corpus(train_set, out_dir / "train.jsonl")
    save_corpus(test_set, out_dir / "test.jsonl")
    ann_payload = {
        split: [
            {"start_token": a.start_token, "end_token": a.end_token, "phrase": a.phrase}
            for a in anns
        ]
        for split, anns in annotations.items()
    }
    (out_dir / "annotations.json").write_text(
        json.dumps(ann_payload, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"wrote {len(train_set)} train / {len(test_set)} test instances to {out_dir}"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    import numpy as np

    if args.config:
        config = load_config(args.config)
    else:
        config = TrainConfig(**GRADCHECK_DEFAULTS)
    if args.seed is not None:
        config.seed = args.seed
    env_seed = os.environ.get("PROTOLENS_SEED")
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError:
            raise ConfigError(
                f"PROTOLENS_SEED must be an integer, got {env_seed!r}"
            ) from None

    # noise_length is chosen so every document fills all T_max curve positions;
    # padded positions would otherwise leave some w1 columns with gradients far
    # below the finite-difference resolution.
    corpus, _, _ = generate_synthetic(
        num_train=max(8, config.batch_size),
        num_test=2,
        vocab_size=50,
        planted_phrases=DEFAULT_PLANTED_PHRASES,
        noise_length=2 * config.T_max,
        seed=config.seed,
    )
    rng = np.random.default_rng([config.seed, 0])
    model = ProtoLensModel.init(config, num_classes=2, rng=rng)
    features = [model.featurize(inst) for inst in corpus[: config.batch_size]]
    report = grad_check(model, features)
    for name in sorted(report.per_param):
        print(f"{name:>18}: {report.per_param[name]:.3e}")
    print(
        f"max relative error {report.max_rel_err:.3e} "
        f"(worst group: {report.worst_param}, step {report.step:g})"
    )
    if report.passed():
        print("gradcheck passed")
        return 0
    print("gradcheck FAILED (tolerance 1e-04)")
    return 2


def build_parser() -> _Parser:
    parser = _Parser(prog="protolens", description="prototype span classifier")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--train", required=True, help="training corpus (JSONL)")
    p.add_argument("--val", help="validation corpus (JSONL)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--cache", help="precomputed sentence-embedding cache")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="per-instance prototype span report")
    p.add_argument("--ckpt", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="single input text")
    group.add_argument("--file", help="file with one text per line")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--top", type=int, help="show only the top-N prototypes")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("prototypes", help="prototype interpretation table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--top", type=int)
    p.set_defaults(func=_cmd_prototypes)

    p = sub.add_parser("ablate", help="full vs single-component-removed runs")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="retrain across one hyperparameter")
    p.add_argument("--config")
    p.add_argument("--param", choices=("K", "ngram"), required=True)
    p.add_argument("--values", type=int, nargs="+", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate the planted-phrase corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-train", type=int, default=400)
    p.add_argument("--num-test", type=int, default=100)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--noise-length", type=int, default=30)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProtoLensError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
