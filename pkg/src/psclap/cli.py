"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, config, inputs),
2 runtime failure (divergence, unexpected errors).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
import types
import typing
from pathlib import Path

from .corpus import ParaphraseBank, PlantedSpec, generate_planted_corpus, load_corpus, read_features
from .errors import ConfigurationError, PsclapError, TrainingDivergedError
from .eval import evaluate_classification, evaluate_retrieval, write_report
from .gradcheck import objective_gradient_errors
from .guidance import CandidateSet, best_of_n, guidance_experiment
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, write_trace

log = logging.getLogger("psclap")

DEFAULT_CHECKPOINT = "checkpoint.psc"
DEFAULT_TRACE = "trace.tsv"


class UsageError(ConfigurationError):
    module = "cli"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coerce(raw: str, hint, field_name: str):
    optional = typing.get_origin(hint) in (typing.Union, types.UnionType)
    base = next((a for a in typing.get_args(hint) if a is not type(None)), str) if optional else hint
    text = str(raw).strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if base is bool:
            lowered = text.lower()
            if lowered not in configparser.RawConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.RawConfigParser.BOOLEAN_STATES[lowered]
        return base(text)
    except ValueError:
        raise ConfigurationError(f"{field_name}: cannot parse {raw!r} as {base.__name__}") from None


def resolve(cls, config_path: Path | None, section: str, overrides: dict[str, str | None]):
    """Build a dataclass from an INI section plus CLI overrides (flags win)."""
    hints = typing.get_type_hints(cls)
    values: dict[str, object] = {}
    if config_path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(config_path):
            raise ConfigurationError(f"config file {config_path} not found")
        if section not in parser:
            raise ConfigurationError(f"{config_path}: missing [{section}] section")
        for key, raw in parser[section].items():
            if key not in hints:
                raise ConfigurationError(f"{config_path}: unknown field {key!r} in [{section}]")
            values[key] = _coerce(raw, hints[key], key)
    for key, raw in overrides.items():
        if raw is not None:
            values[key] = _coerce(raw, hints[key], key)
    return cls(**values)


def _add_field_flags(p: argparse.ArgumentParser, names: list[str], skip=()) -> None:
    for name in names:
        if name not in skip:
            p.add_argument(f"--{name.replace('_', '-')}", dest=f"set_{name}", metavar="VALUE")


def _overrides(args, names) -> dict[str, str | None]:
    return {n: getattr(args, f"set_{n}", None) for n in names}


def _echo(title: str, payload: dict) -> None:
    print(f"# {title}")
    print(json.dumps(payload, indent=2, sort_keys=True))


def _path(workdir: Path, p: str | None) -> Path | None:
    if p is None or p == "":
        return None
    path = Path(p)
    return path if path.is_absolute() else workdir / path


def _bank_for(corpus_dir: Path, explicit: Path | None) -> ParaphraseBank | None:
    path = explicit or corpus_dir / "paraphrases.json"
    return ParaphraseBank.load(path) if path.exists() else None


# -- subcommands ---------------------------------------------------------------


def cmd_gen_corpus(args, workdir: Path) -> int:
    spec = resolve(PlantedSpec, _path(workdir, args.spec), "planted", _overrides(args, PlantedSpec.field_names()))
    _echo("planted corpus spec", spec.to_dict())
    out = _path(workdir, args.out)
    corpus = generate_planted_corpus(spec, out)
    print(f"wrote {len(corpus.train)} train / {len(corpus.eval)} eval clips, {len(corpus.prompts)} prompts to {out}")
    return 0


def _train_config(args, workdir: Path) -> TrainConfig:
    cfg = resolve(TrainConfig, _path(workdir, args.config), "train", _overrides(args, TrainConfig.field_names()))
    cfg.validate()
    if not cfg.corpus:
        raise ConfigurationError("corpus: no corpus directory configured")
    return cfg


def cmd_train(args, workdir: Path) -> int:
    cfg = _train_config(args, workdir)
    _echo("train config", cfg.to_dict())
    corpus_dir = _path(workdir, cfg.corpus)
    corpus = load_corpus(corpus_dir)
    bank = _bank_for(corpus_dir, _path(workdir, cfg.paraphrases))
    if bank is not None:
        bank.validate(corpus.vocab)
    resume = load_checkpoint(_path(workdir, args.resume)) if args.resume else None
    ckpt_path = _path(workdir, cfg.checkpoint_path or DEFAULT_CHECKPOINT)
    trace_path = _path(workdir, cfg.trace_path or DEFAULT_TRACE)
    result = train(cfg, corpus, bank, resume=resume)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, ckpt_path)
    write_trace(result.trace, trace_path, append=resume is not None)
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"step {last.step}: loss {last.total:.6f} tau {last.tau:.6f}")
    print(f"checkpoint: {ckpt_path}\ntrace: {trace_path}")
    return 0


def _load_model(args, workdir: Path):
    path = _path(workdir, args.checkpoint or DEFAULT_CHECKPOINT)
    ckpt = load_checkpoint(path)
    _echo(f"checkpoint {path} (step {ckpt.step})", ckpt.config)
    return ckpt


def _model_and_corpus(args, workdir: Path):
    ckpt = _load_model(args, workdir)
    corpus_ref = args.corpus or ckpt.config.get("corpus")
    if not corpus_ref:
        raise ConfigurationError("corpus: pass --corpus (checkpoint does not name one)")
    print(f"corpus: {_path(workdir, corpus_ref)}")
    return ckpt, load_corpus(_path(workdir, corpus_ref))


def cmd_eval_retrieval(args, workdir: Path) -> int:
    start = time.perf_counter()
    ckpt, corpus = _model_and_corpus(args, workdir)
    result = evaluate_retrieval(ckpt.model(), corpus)
    body = {"config": ckpt.config, "step": ckpt.step, "seed": ckpt.config.get("seed"), "retrieval": result.to_dict()}
    out = write_report(_path(workdir, args.out), "retrieval", body, time.perf_counter() - start)
    _echo("retrieval", result.to_dict())
    print(f"report: {out}")
    return 0


def cmd_eval_classify(args, workdir: Path) -> int:
    start = time.perf_counter()
    ckpt, corpus = _model_and_corpus(args, workdir)
    result = evaluate_classification(ckpt.model(), corpus)
    body = {
        "config": ckpt.config,
        "step": ckpt.step,
        "seed": ckpt.config.get("seed"),
        "classes": corpus.vocab.names,
        "classification": result.to_dict(),
    }
    out = write_report(_path(workdir, args.out), "classification", body, time.perf_counter() - start)
    _echo("classification", {"UAR": result.uar, "macro_F1": result.macro_f1})
    print(f"report: {out}")
    return 0


def cmd_select(args, workdir: Path) -> int:
    ckpt = _load_model(args, workdir)
    _, clips = read_features(_path(workdir, args.candidates))
    result = best_of_n(CandidateSet(prompt=args.prompt, candidates=clips), ckpt.model())
    print(f"chosen: {result.index}")
    for i, s in enumerate(result.scores):
        print(f"{i}\t{s:.6f}")
    return 0


def cmd_guide_experiment(args, workdir: Path) -> int:
    start = time.perf_counter()
    ckpt, corpus = _model_and_corpus(args, workdir)
    report = guidance_experiment(ckpt.model(), corpus, trials_per_tag=args.trials, n=args.n, seed=args.seed)
    body = {"config": ckpt.config, "step": ckpt.step, "guidance": report.to_dict()}
    out = write_report(_path(workdir, args.out), "guidance", body, time.perf_counter() - start)
    _echo(
        "guidance",
        {
            "selected_mean": report.selected_mean,
            "baseline_mean": report.baseline_mean,
            "paired_difference_tags": report.tag_level.to_dict(),
            "paired_difference_trials": report.trial_level.to_dict(),
        },
    )
    print(f"report: {out}")
    return 0


def cmd_grad_check(args, workdir: Path) -> int:
    cfg = _train_config(args, workdir)
    _echo("train config", cfg.to_dict())
    corpus_dir = _path(workdir, cfg.corpus)
    corpus = load_corpus(corpus_dir)
    bank = _bank_for(corpus_dir, _path(workdir, cfg.paraphrases))
    errors = objective_gradient_errors(cfg, corpus, bank, batch_size=args.batch, h=args.step)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name}: max relative error {err:.3e}")
    print(f"max relative error: {worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 2


# -- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psclap", description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=".", help="root for all relative paths")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write a planted synthetic corpus")
    p.add_argument("--spec", help="INI file with a [planted] section")
    p.add_argument("--out", required=True)
    _add_field_flags(p, PlantedSpec.field_names())
    p.set_defaults(func=cmd_gen_corpus)

    for name, func, help_text in (
        ("train", cmd_train, "train a dual encoder"),
        ("grad-check", cmd_grad_check, "compare analytic gradients with finite differences"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file with a [train] section")
        _add_field_flags(p, TrainConfig.field_names())
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
        else:
            p.add_argument("--batch", type=int, default=4)
            p.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
            p.add_argument("--tolerance", type=float, default=1e-4)
        p.set_defaults(func=func)

    for name, func, default_out in (
        ("eval-retrieval", cmd_eval_retrieval, "reports/retrieval.json"),
        ("eval-classify", cmd_eval_classify, "reports/classification.json"),
    ):
        p = sub.add_parser(name, help=f"{name.split('-')[1]} metrics on the eval split")
        p.add_argument("--checkpoint")
        p.add_argument("--corpus", help="defaults to the corpus named in the checkpoint")
        p.add_argument("--out", default=default_out)
        p.set_defaults(func=func)

    p = sub.add_parser("select", help="best-of-N selection for one prompt")
    p.add_argument("--checkpoint")
    p.add_argument("--prompt", required=True)
    p.add_argument("--candidates", required=True, help="feature file holding the N candidates")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("guide-experiment", help="best-of-N vs first-candidate on planted candidates")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--trials", type=int, default=100, help="trials per tag")
    p.add_argument("--n", type=int, default=10, help="candidates per trial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="reports/guidance.json")
    p.set_defaults(func=cmd_guide_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args, Path(args.workdir))
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PsclapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
