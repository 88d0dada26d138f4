"""Command-line entry point: config-driven training, benchmark sweeps,
evaluation, and Gram-matrix export.

One JSON document drives a run; ``--set dot.path=value`` overrides individual
keys and unknown keys are rejected outright. Every command writes into an
output directory: ``train`` produces metrics.csv, checkpoint.bin and
resolved-config.json (a fully materialized config that reproduces the run
bitwise, timing aside); ``bench`` produces bench.csv; ``eval`` produces
eval.json; ``export-gram`` produces gram.csv plus gram_meta.json.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import classifier, coding_rate, featurizer, trainer, variational
from .data import Dataset, SynthConfig, load_idx, one_hot_membership, synth_subspaces
from .numerics import NumericalError
from .trainer import EpochMetrics, TrainerConfig, substream

METRICS_COLUMNS = (
    "epoch", "objective", "delta_r", "rate", "rate_c", "var_objective",
    "m_penalty", "ce_loss", "wall_ms", "latched",
)


class ConfigError(ValueError):
    """The run configuration is malformed."""


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        # plain builtin float repr round-trips and keeps numpy scalars out
        return repr(float(value))
    return str(value)


def write_metrics_csv(path, objective: str, metrics: list[EpochMetrics]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in metrics:
            fields = (
                row.epoch, objective, row.delta_r, row.rate, row.rate_c,
                row.var_objective, row.m_penalty, row.ce_loss, row.wall_ms,
                row.latched,
            )
            fh.write(",".join(_fmt(f) for f in fields) + "\n")


# ----------------------------------------------------------------------------
# config schema
# ----------------------------------------------------------------------------

_VARIATIONAL_KEYS = {
    "q": int, "mu": float, "nu_gamma": float, "nu_a": float,
    "latch_freq": int, "lipschitz_floor": float, "latch_on_full": bool,
}
_TRAINER_KEYS = {
    "objective": str, "epochs": int, "batch_size": int, "feature_dim": int,
    "hidden_sizes": list, "nu_theta": float, "epsilon_sq": float,
    "variational": dict,
}
_SYNTH_KEYS = {
    "type": str, "ambient_dim": int, "classes": int, "subspace_dim": int,
    "samples_per_class": int, "noise_sigma": float, "orthogonal": bool,
}
_IDX_KEYS = {"type": str, "images": str, "labels": str}
_BENCH_KEYS = {
    "k_values": list, "objectives": list, "timed_epochs": int,
    "warmup_epochs": int, "ambient_dim": int, "subspace_dim": int,
    "samples_per_class": int, "noise_sigma": float, "feature_dim": int,
    "hidden_sizes": list, "batch_size": int, "q_per_k": int,
    "epsilon_sq": float,
}
_EXPORT_KEYS = {"gram": bool, "class_subset": int}
_TOP_KEYS = {
    "seed": int, "out_dir": str, "dataset": dict, "trainer": dict,
    "bench": dict, "export": dict,
}


def _check_keys(obj, allowed: dict, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must be a JSON object")
    for key, value in obj.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}.{key}")
        want = allowed[key]
        if want is float:
            if value is not None and not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key} must be a number")
        elif want is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{path}.{key} must be an integer")
        elif not isinstance(value, want):
            raise ConfigError(f"{path}.{key} must be of type {want.__name__}")


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"missing config key {path}.{key}")
    return obj[key]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a JSON object")
    return raw


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply repeatable --set dot.path=value entries; values parse as JSON."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw_value = item.partition("=")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object")
        node[parts[-1]] = value
    return config


def parse_trainer(block: dict, seed: int) -> TrainerConfig:
    _check_keys(block, _TRAINER_KEYS, "trainer")
    var_block = dict(_require(block, "variational", "trainer"))
    _check_keys(var_block, _VARIATIONAL_KEYS, "trainer.variational")
    try:
        var = variational.VariationalConfig(
            q=_require(var_block, "q", "trainer.variational"),
            **{k: v for k, v in var_block.items() if k != "q"},
        )
        return TrainerConfig(
            objective=_require(block, "objective", "trainer"),
            epochs=_require(block, "epochs", "trainer"),
            batch_size=_require(block, "batch_size", "trainer"),
            feature_dim=_require(block, "feature_dim", "trainer"),
            hidden_sizes=tuple(block.get("hidden_sizes", ())),
            nu_theta=block.get("nu_theta"),
            epsilon_sq=block.get("epsilon_sq", 0.5),
            variational=var,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_dataset(block: dict, seed: int) -> Dataset:
    kind = _require(block, "type", "dataset")
    if kind == "synthetic":
        _check_keys(block, _SYNTH_KEYS, "dataset")
        data_seed = int(np.random.SeedSequence([seed, 0]).generate_state(1)[0])
        try:
            cfg = SynthConfig(
                ambient_dim=_require(block, "ambient_dim", "dataset"),
                classes=_require(block, "classes", "dataset"),
                subspace_dim=_require(block, "subspace_dim", "dataset"),
                samples_per_class=_require(block, "samples_per_class", "dataset"),
                noise_sigma=block.get("noise_sigma", 0.0),
                orthogonal=block.get("orthogonal", True),
                seed=data_seed,
            )
            return synth_subspaces(cfg)[0]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if kind == "idx":
        _check_keys(block, _IDX_KEYS, "dataset")
        try:
            return load_idx(
                _require(block, "images", "dataset"),
                _require(block, "labels", "dataset"),
            )
        except (OSError, ValueError) as exc:
            raise ConfigError(f"failed to load IDX dataset: {exc}") from exc
    raise ConfigError(f"dataset.type must be 'synthetic' or 'idx', got {kind!r}")


def _resolved_config(config: dict, tc: TrainerConfig, seed: int, out_dir: str) -> dict:
    resolved = {
        "seed": seed,
        "out_dir": out_dir,
        "dataset": dict(config["dataset"]),
        "trainer": {
            "objective": tc.objective,
            "epochs": tc.epochs,
            "batch_size": tc.batch_size,
            "feature_dim": tc.feature_dim,
            "hidden_sizes": list(tc.hidden_sizes),
            "nu_theta": tc.resolved_nu_theta(),
            "epsilon_sq": tc.epsilon_sq,
            "variational": dataclasses.asdict(tc.variational),
        },
    }
    if "export" in config:
        resolved["export"] = dict(config["export"])
    return resolved


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_train(config: dict, out_dir: Path) -> int:
    _check_keys(config, _TOP_KEYS, "config")
    seed = config.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    dataset_block = _require(config, "dataset", "config")
    tc = parse_trainer(_require(config, "trainer", "config"), seed)
    export_block = dict(config.get("export", {}))
    _check_keys(export_block, _EXPORT_KEYS, "export")
    data = build_dataset(dataset_block, seed)
    Pi = one_hot_membership(data.labels, data.k)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved-config.json", "w") as fh:
        json.dump(_resolved_config(config, tc, seed, str(out_dir)), fh, indent=2)
        fh.write("\n")

    if tc.objective == "vmcr2":
        params, _, metrics = trainer.train_vmcr2(data, Pi, tc)
    elif tc.objective == "mcr2":
        params, metrics = trainer.train_mcr2(data, Pi, tc)
    else:
        model, metrics = trainer.train_ce(data, data.labels, tc)
        params = model.featurizer
    write_metrics_csv(out_dir / "metrics.csv", tc.objective, metrics)
    featurizer.save_checkpoint(params, out_dir / "checkpoint.bin")
    if export_block.get("gram"):
        _export_gram(params, data, out_dir, export_block.get("class_subset"), seed)
    return 0


def cmd_bench(config: dict, out_dir: Path) -> int:
    _check_keys(config, _TOP_KEYS, "config")
    seed = config.get("seed", 0)
    block = dict(_require(config, "bench", "config"))
    _check_keys(block, _BENCH_KEYS, "bench")
    k_values = _require(block, "k_values", "bench")
    objectives = block.get("objectives", ["mcr2", "vmcr2"])
    if not k_values or not all(isinstance(k, int) and k >= 1 for k in k_values):
        raise ConfigError("bench.k_values must be a nonempty list of positive ints")
    for objective in objectives:
        if objective not in ("mcr2", "vmcr2"):
            raise ConfigError(f"bench objective {objective!r} not supported")
    timed = block.get("timed_epochs", 3)
    warmup = block.get("warmup_epochs", 1)
    if timed < 3:
        raise ConfigError("bench.timed_epochs must be >= 3")

    rows = []
    for k in k_values:
        dataset_block = {
            "type": "synthetic",
            "ambient_dim": block.get("ambient_dim", 64),
            "classes": k,
            "subspace_dim": block.get("subspace_dim", 4),
            "samples_per_class": block.get("samples_per_class", 16),
            "noise_sigma": block.get("noise_sigma", 0.05),
            "orthogonal": False,
        }
        data = build_dataset(dataset_block, seed)
        Pi = one_hot_membership(data.labels, data.k)
        for objective in objectives:
            tc = TrainerConfig(
                objective=objective,
                epochs=warmup + timed,
                batch_size=block.get("batch_size", data.num_samples),
                feature_dim=block.get("feature_dim", 32),
                hidden_sizes=tuple(block.get("hidden_sizes", [64])),
                epsilon_sq=block.get("epsilon_sq", 0.5),
                variational=variational.VariationalConfig(
                    q=block.get("q_per_k", 8) * k
                ),
                seed=seed,
            )
            if objective == "vmcr2":
                _, _, metrics = trainer.train_vmcr2(data, Pi, tc)
            else:
                _, metrics = trainer.train_mcr2(data, Pi, tc)
            walls = np.array([row.wall_ms for row in metrics[warmup:]])
            rows.append((k, objective, float(walls.mean()), float(walls.std())))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench.csv", "w") as fh:
        fh.write("k,objective,mean_epoch_ms,std_epoch_ms\n")
        for k, objective, mean_ms, std_ms in rows:
            fh.write(f"{k},{objective},{_fmt(mean_ms)},{_fmt(std_ms)}\n")
    return 0


def cmd_eval(config: dict, checkpoint: Path, out_dir: Path) -> int:
    _check_keys(config, _TOP_KEYS, "config")
    seed = config.get("seed", 0)
    data = build_dataset(_require(config, "dataset", "config"), seed)
    trainer_block = config.get("trainer", {})
    epsilon_sq = trainer_block.get("epsilon_sq", 0.5) if isinstance(trainer_block, dict) else 0.5
    try:
        params = featurizer.load_checkpoint(checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"failed to load checkpoint: {exc}") from exc
    Z, _ = featurizer.forward(params, data.X)
    Pi = one_hot_membership(data.labels, data.k)
    p = coding_rate.params_from(Pi, Z.shape[0], epsilon_sq)
    model = classifier.fit(Z, Pi, data.k)
    result = {
        "delta_r": coding_rate.delta_r(Z, Pi, p),
        "accuracy": classifier.evaluate(model, Z, data.labels),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval.json", "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    return 0


def _export_gram(
    params, data: Dataset, out_dir: Path, class_subset: int | None, seed: int
) -> None:
    Z, _ = featurizer.forward(params, data.X)
    labels = data.labels
    classes = np.arange(data.k)
    if class_subset is not None:
        if not 1 <= class_subset <= data.k:
            raise ConfigError(
                f"class_subset must be in [1, {data.k}], got {class_subset}"
            )
        rng = substream(seed, "subset")
        classes = np.sort(rng.choice(data.k, size=class_subset, replace=False))
        keep = np.isin(labels, classes)
        Z, labels = Z[:, keep], labels[keep]
    order = np.argsort(labels, kind="stable")
    Z, labels = Z[:, order], labels[order]
    gram = np.clip(np.abs(Z.T @ Z), 0.0, 1.0)
    np.savetxt(out_dir / "gram.csv", gram, fmt="%.17g", delimiter=",")
    counts = [int(np.sum(labels == c)) for c in classes]
    boundaries = [0] + np.cumsum(counts).astype(int).tolist()
    with open(out_dir / "gram_meta.json", "w") as fh:
        json.dump(
            {
                "classes": [int(c) for c in classes],
                "boundaries": boundaries,
                "samples": int(labels.size),
            },
            fh, indent=2,
        )
        fh.write("\n")


def cmd_export_gram(
    config: dict, checkpoint: Path, out_dir: Path, class_subset: int | None
) -> int:
    _check_keys(config, _TOP_KEYS, "config")
    seed = config.get("seed", 0)
    data = build_dataset(_require(config, "dataset", "config"), seed)
    try:
        params = featurizer.load_checkpoint(checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"failed to load checkpoint: {exc}") from exc
    out_dir.mkdir(parents=True, exist_ok=True)
    if class_subset is None:
        export_block = dict(config.get("export", {}))
        _check_keys(export_block, _EXPORT_KEYS, "export")
        class_subset = export_block.get("class_subset")
    _export_gram(params, data, out_dir, class_subset, seed)
    return 0


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcrkit",
        description="Coding-rate-reduction training and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_checkpoint=False):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dot path (repeatable)")
        p.add_argument("--seed", type=int, help="override the run seed")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="featurizer checkpoint")

    p_train = sub.add_parser("train", help="run one training job")
    common(p_train)
    p_train.add_argument("--objective", choices=trainer.OBJECTIVES)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--latch-freq", type=int)

    common(sub.add_parser("bench", help="wall-clock sweep over class counts"))
    common(sub.add_parser("eval", help="evaluate a checkpoint"), needs_checkpoint=True)
    p_gram = sub.add_parser("export-gram", help="export |Z^T Z| sorted by class")
    common(p_gram, needs_checkpoint=True)
    p_gram.add_argument("--class-subset", type=int,
                        help="export only this many randomly chosen classes")
    return parser


def _resolve_out_dir(args, config: dict) -> Path:
    out = args.out if args.out else config.get("out_dir")
    if not out:
        raise ConfigError("no output directory: pass --out or set out_dir")
    return Path(out)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.command == "train":
            for flag, key in (
                ("objective", "trainer.objective"),
                ("epochs", "trainer.epochs"),
                ("batch_size", "trainer.batch_size"),
                ("latch_freq", "trainer.variational.latch_freq"),
            ):
                value = getattr(args, flag)
                if value is not None:
                    overrides.append(f"{key}={json.dumps(value)}")
        config = apply_overrides(config, overrides)
        out_dir = _resolve_out_dir(args, config)
        if args.command == "train":
            return cmd_train(config, out_dir)
        if args.command == "bench":
            return cmd_bench(config, out_dir)
        if args.command == "eval":
            return cmd_eval(config, Path(args.checkpoint), out_dir)
        return cmd_export_gram(
            config, Path(args.checkpoint), out_dir, args.class_subset
        )
    except ConfigError as exc:
        print(f"mcrkit: config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"mcrkit: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
