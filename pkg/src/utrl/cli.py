"""Command-line entry point: train, evaluate, augment, convert-tests, ablate.

One config file (JSON) plus flag overrides, flags win.  Every RunConfig
field is exposed as a flag of the same name, generated from the schema so
help text cannot drift.  Exit codes: 0 success, 1 validation error,
2 runtime abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import shlex
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import augment as augment_mod
from . import dataset as dataset_mod
from .buffer import ReplayBuffer
from .critic import CriticModel
from .dataset import DatasetSplit, Problem
from .evaluator import evaluate, greedy_solve_rate
from .policy.base import DecodingParams
from .policy.external import ExternalPolicy
from .policy.toy import DEFAULT_VOCABULARY, ToyPolicy, derive_vocabulary
from .reward import RewardConfig
from .sandbox import ExecutionLimits, Sandbox, SandboxConfigError
from .seeding import substream
from .trainer import TrainConfig, Trainer, TrainerAbort, select_checkpoint

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

KL_TARGET_SWEEP = [math.inf, 0.1, 0.08, 0.07, 0.05, 0.02]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat union of every knob a run needs; serializable and re-executable."""

    # dataset paths ("builtin:toy" resolves to the packaged arithmetic suite)
    dataset_path: str | None = None
    mbpp_path: str | None = None
    validation_path: str | None = None
    test_path: str | None = None
    augmented_path: str | None = None
    # policy backend: "toy", "tcp:HOST:PORT", or "cmd:<command>"
    policy_backend: str = "toy"
    policy_vocab: str = "derive"  # "derive" | "printable" | literal characters
    policy_context_len: int = 24
    policy_rows: int = 65536
    # critic
    critic_hidden_dim: int = 256
    critic_activation: str = "relu"
    # training
    max_epochs: int = 100
    samples_per_problem: int = 8
    minibatch_size: int = 32
    policy_lr: float = 5e-7
    critic_lr: float = 1e-6
    seed: int = 0
    buffer_enabled: bool = True
    validate_every: int = 1
    execution_workers: int = 4
    keep_all_checkpoints: bool = False
    # decoding
    top_p: float = 0.8
    temperature: float = 0.95
    max_len: int = 512
    # reward
    reward_scale: float = 50.0
    pass_exponent: float = 0.5
    compile_penalty: float = -10.0
    kl_target: float = 0.07
    kl_coef_init: float = 1.0
    controller_gain: float = 0.1
    controller_clip: float = 0.2
    # execution limits
    wall_time_s: float = 5.0
    memory_bytes: int = 256 * 1024 * 1024
    output_bytes: int = 64 * 1024
    # evaluation
    eval_samples: int = 200
    eval_ks: list[int] = field(default_factory=lambda: [1, 10, 100])
    # output
    out_dir: str = "runs/run"

    def decoding(self) -> DecodingParams:
        return DecodingParams(top_p=self.top_p, temperature=self.temperature, max_len=self.max_len)

    def reward(self) -> RewardConfig:
        return RewardConfig(
            reward_scale=self.reward_scale,
            pass_exponent=self.pass_exponent,
            compile_penalty=self.compile_penalty,
            kl_target=self.kl_target,
            kl_coef_init=self.kl_coef_init,
            controller_gain=self.controller_gain,
            controller_clip=self.controller_clip,
        )

    def limits(self) -> ExecutionLimits:
        return ExecutionLimits(
            wall_time_s=self.wall_time_s,
            memory_bytes=self.memory_bytes,
            output_bytes=self.output_bytes,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            samples_per_problem=self.samples_per_problem,
            minibatch_size=self.minibatch_size,
            policy_lr=self.policy_lr,
            critic_lr=self.critic_lr,
            decoding=self.decoding(),
            reward=self.reward(),
            limits=self.limits(),
            seed=self.seed,
            buffer_enabled=self.buffer_enabled,
            validate_every=self.validate_every,
            execution_workers=self.execution_workers,
            keep_all_checkpoints=self.keep_all_checkpoints,
        )

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        if math.isinf(payload["kl_target"]):
            payload["kl_target"] = "inf"
        return json.dumps(payload, indent=2)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if payload.get("kl_target") == "inf":
            payload["kl_target"] = math.inf
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_flag_value(field_obj, raw: str):
    if field_obj.type in ("int", int):
        return int(raw)
    if field_obj.type in ("float", float):
        return math.inf if raw == "inf" else float(raw)
    if field_obj.name == "eval_ks":
        return [int(x) for x in raw.split(",") if x]
    return raw


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field; values land in ``overrides``."""
    group = parser.add_argument_group("run configuration (overrides the config file)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(
                flag,
                dest=f.name,
                action=argparse.BooleanOptionalAction,
                default=None,
                help=f"override {f.name}",
            )
        else:
            group.add_argument(
                flag, dest=f.name, default=None, metavar="V", help=f"override {f.name}"
            )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        value = raw if not isinstance(raw, str) else _parse_flag_value(f, raw)
        config = dataclasses.replace(config, **{f.name: value})
    return config


# -- component wiring ---------------------------------------------------------


def _resolve_dataset_path(path: str) -> Path:
    if path == "builtin:toy":
        return dataset_mod.toy_suite_path()
    return Path(path)


def load_split(config: RunConfig) -> DatasetSplit:
    if config.mbpp_path:
        split = dataset_mod.load_mbpp(config.mbpp_path)
    elif config.dataset_path:
        train = dataset_mod.load_problems(_resolve_dataset_path(config.dataset_path))
        validation = (
            dataset_mod.load_problems(_resolve_dataset_path(config.validation_path))
            if config.validation_path
            else []
        )
        test = (
            dataset_mod.load_problems(_resolve_dataset_path(config.test_path))
            if config.test_path
            else []
        )
        split = DatasetSplit(train=train, validation=validation, test=test)
    else:
        raise ConfigError("one of --dataset-path or --mbpp-path is required")
    if config.augmented_path:
        split.train.extend(dataset_mod.load_augmented(config.augmented_path))
    return split


def build_policy(config: RunConfig, problems: list[Problem]):
    if config.policy_backend == "toy":
        if config.policy_vocab == "printable":
            vocabulary = DEFAULT_VOCABULARY
        elif config.policy_vocab == "derive":
            texts = [dataset_mod.make_prompt(p) for p in problems]
            texts += [s for p in problems for s in p.seed_solutions]
            vocabulary = derive_vocabulary(texts + ["\n "])
        else:
            vocabulary = config.policy_vocab
        seed = int(substream(config.seed, "policy-init").integers(2**62))
        return ToyPolicy(
            vocabulary=vocabulary,
            context_len=config.policy_context_len,
            rows=config.policy_rows,
            seed=seed,
        )
    if config.policy_backend.startswith(("tcp:", "cmd:")):
        return ExternalPolicy(config.policy_backend)
    raise ConfigError(f"unknown policy backend {config.policy_backend!r}")


def build_critic(config: RunConfig) -> CriticModel:
    hidden = config.critic_hidden_dim if config.critic_hidden_dim > 0 else None
    seed = int(substream(config.seed, "critic-init").integers(2**62))
    return CriticModel(
        hidden_dim=hidden, activation=config.critic_activation, init="random", seed=seed
    )


def make_verifier(sandbox: Sandbox):
    def verifier(problem: Problem, canonical: str) -> bool:
        return sandbox.run_tests(canonical, problem.unit_tests).all_passed()

    return verifier


# -- subcommands ---------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    split = load_split(config)
    train_config = config.train_config()  # validates numeric ranges
    sandbox = Sandbox(config.limits())
    issues = dataset_mod.validate_problems(split.train + split.validation, sandbox)
    if issues:
        preview = "\n  ".join(issues[:10])
        raise ConfigError(f"dataset failed ingestion validation:\n  {preview}")
    policy = build_policy(config, split.train)
    critic = build_critic(config)

    run_dir = Path(config.out_dir)
    buffer = ReplayBuffer(verifier=make_verifier(sandbox))
    trainer = Trainer(split, policy, critic, buffer, train_config, sandbox, run_dir)
    if args.resume:
        ckpt = Path(args.resume)
        trainer.policy = type(policy).load(ckpt / "policy") if config.policy_backend == "toy" else policy
        trainer.critic = CriticModel.load(ckpt / "critic")
        trainer.buffer = ReplayBuffer.load(ckpt / "buffer.jsonl", verifier=make_verifier(sandbox))
        trainer.resume_from(ckpt)
    else:
        policy.freeze_reference()

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config.to_json(), encoding="utf-8")
    record = trainer.train()
    if record.epochs:
        best = select_checkpoint(record)
        print(f"trained {len(record.epochs)} epochs; best validation at epoch {best}")
    else:
        print("trained 0 epochs")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    split = load_split(config)
    problems = {"train": split.train, "validation": split.validation, "test": split.test}[
        args.split
    ]
    if not problems:
        raise ConfigError(f"split {args.split!r} is empty")
    if any(k > config.eval_samples for k in config.eval_ks):
        raise ConfigError(f"every k in {config.eval_ks} must be <= eval_samples")
    sandbox = Sandbox(config.limits())
    if args.checkpoint:
        policy = ToyPolicy.load(Path(args.checkpoint) / "policy")
    else:
        policy = build_policy(config, problems)
        policy.freeze_reference()
    report = evaluate(
        problems,
        policy,
        sandbox,
        n_samples=config.eval_samples,
        ks=config.eval_ks,
        params=config.decoding(),
    )
    out_dir = Path(config.out_dir)
    report.write(out_dir)
    print(f"greedy {report.greedy_rate:.3f} " + " ".join(
        f"pass@{k} {v:.3f}" for k, v in report.pass_rates.items()
    ))
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    sandbox = Sandbox(config.limits())
    generator = shlex.split(args.generator) if args.generator else None
    result = augment_mod.run_pipeline(
        args.corpus,
        sandbox,
        generator_command=generator,
        time_budget_s=args.time_budget,
        float_tolerance=args.float_tolerance,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    augment_mod.write_instances(result, out_path, loss_weight=args.loss_weight)
    print(json.dumps(result.counters, sort_keys=True))
    return EXIT_OK


def cmd_convert_tests(args: argparse.Namespace) -> int:
    """Conversion-only mode for externally generated suites."""
    config = resolve_config(args)
    sandbox = Sandbox(config.limits())
    result = augment_mod.PipelineResult()
    from .augment.extract import SourceFunction
    from .augment.pipeline import convert_suite
    from .augment.testgen import GeneratedSuite, filter_suite

    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            fn = SourceFunction(
                description=record["description"],
                signature=record["signature"],
                code=record.get("code", record["signature"] + " { }"),
                origin=record.get("origin", args.input),
            )
            suite = filter_suite(GeneratedSuite(function=fn, tests=record["tests"]))
            if suite is None:
                result.bump("dropped_suite_filter")
                continue
            instance = convert_suite(suite, sandbox, result, args.float_tolerance)
            if instance is not None:
                result.instances.append(instance)
    result.counters["emitted"] = len(result.instances)
    augment_mod.write_instances(result, args.out, loss_weight=args.loss_weight)
    print(json.dumps(result.counters, sort_keys=True))
    return EXIT_OK


def _ablate_cells(args: argparse.Namespace) -> list[tuple[str, dict]]:
    if args.sweep == "kl-target":
        values = (
            [math.inf if v == "inf" else float(v) for v in args.values.split(",")]
            if args.values
            else KL_TARGET_SWEEP
        )
        return [
            (f"kl-target-{'inf' if math.isinf(v) else v}", {"kl_target": v}) for v in values
        ]
    if args.sweep == "buffer":
        return [("buffer-on", {"buffer_enabled": True}), ("buffer-off", {"buffer_enabled": False})]
    raise ConfigError(f"unknown sweep {args.sweep!r}")


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    split = load_split(config)
    cells = _ablate_cells(args)
    base_dir = Path(config.out_dir)
    rows = []
    for name, patch in cells:
        cell_config = dataclasses.replace(config, out_dir=str(base_dir / name), **patch)
        sandbox = Sandbox(cell_config.limits())
        policy = build_policy(cell_config, split.train)
        policy.freeze_reference()
        critic = build_critic(cell_config)
        buffer = ReplayBuffer(verifier=make_verifier(sandbox))
        trainer = Trainer(
            split, policy, critic, buffer, cell_config.train_config(), sandbox, Path(cell_config.out_dir)
        )
        record = trainer.train()
        (Path(cell_config.out_dir) / "config.json").write_text(
            cell_config.to_json(), encoding="utf-8"
        )
        last = record.epochs[-1] if record.epochs else {}
        row = {
            "cell": name,
            "best_validation_greedy": max(
                (r["validation_greedy"] for r in record.epochs if r["validation_greedy"] is not None),
                default=0.0,
            ),
            "final_mean_kl": last.get("mean_kl", 0.0),
            "buffer_size": last.get("buffer_size", 0),
        }
        if split.test and config.eval_samples > 0:
            ks = [k for k in config.eval_ks if k <= config.eval_samples]
            report = evaluate(
                split.test,
                policy,
                sandbox,
                n_samples=config.eval_samples,
                ks=ks,
                params=cell_config.decoding(),
            )
            row["test_greedy"] = report.greedy_rate
            for k, v in report.pass_rates.items():
                row[f"test_pass@{k}"] = v
        rows.append(row)

    base_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for row in rows for k in row}, key=lambda k: (k != "cell", k))
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(str(row.get(k, "")) for k in keys))
    (base_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    md = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    for row in rows:
        md.append("| " + " | ".join(str(row.get(k, "")) for k in keys) + " |")
    (base_dir / "ablation.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="utrl", description="Unit-test-driven RL harness for code synthesis"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the training loop")
    train.add_argument("--config", help="JSON config file")
    train.add_argument("--resume", help="checkpoint directory to resume from")
    add_config_flags(train)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="greedy + pass@k evaluation")
    ev.add_argument("--config", help="JSON config file")
    ev.add_argument("--checkpoint", help="checkpoint directory (toy backend)")
    ev.add_argument("--split", choices=["train", "validation", "test"], default="test")
    add_config_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    aug = sub.add_parser("augment", help="run the unit-test augmentation pipeline")
    aug.add_argument("--config", help="JSON config file")
    aug.add_argument("--corpus", required=True, help="source-language corpus root")
    aug.add_argument("--out", required=True, help="output instance file (jsonl)")
    aug.add_argument("--generator", help="generator command template (shell-quoted)")
    aug.add_argument("--time-budget", type=int, default=60)
    aug.add_argument("--loss-weight", type=float, default=0.2)
    aug.add_argument("--float-tolerance", type=float, default=None)
    add_config_flags(aug)
    aug.set_defaults(func=cmd_augment)

    conv = sub.add_parser("convert-tests", help="convert externally generated suites")
    conv.add_argument("--config", help="JSON config file")
    conv.add_argument("--input", required=True, help="jsonl of {description, signature, tests}")
    conv.add_argument("--out", required=True)
    conv.add_argument("--loss-weight", type=float, default=0.2)
    conv.add_argument("--float-tolerance", type=float, default=None)
    add_config_flags(conv)
    conv.set_defaults(func=cmd_convert_tests)

    abl = sub.add_parser("ablate", help="run an experiment grid and emit a table")
    abl.add_argument("--config", help="JSON config file")
    abl.add_argument("--sweep", choices=["kl-target", "buffer"], required=True)
    abl.add_argument("--values", help="comma-separated sweep values (kl-target)")
    add_config_flags(abl)
    abl.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dataset_mod.DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainerAbort, SandboxConfigError) as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
