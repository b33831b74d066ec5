"""Command-line surface for the whole pipeline.

Commands: ``prepare`` (filter, split, validate features), ``train``,
``evaluate``, ``sweep`` (retrain per alpha/beta value), ``ablate`` (the fixed
six-variant grid), ``analyze`` (interacted vs. non-interacted similarity), and
``synthesize`` (planted-preference data for trend checks).

Configuration is a flat UTF-8 ``key = value`` file with ``#`` comments.
Precedence, lowest to highest: built-in defaults, ``--config`` file,
``--seed``/``--out`` flags, ``--variant``, then repeated ``--set key=value``
overrides.  All randomness derives from the single ``seed`` value.  Commands
exit 0 on success and 1 with ``error: <category>: <message>`` on stderr
otherwise.
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass, replace

from . import figures
from .datasets import (
    MODALITIES,
    kcore_filter,
    load_features,
    load_interactions,
    read_prepared,
    split_dataset,
    write_prepared,
)
from .errors import CheckpointError, ConfigError, MonetError
from .evaluation import avg_diff_report, evaluate, interaction_similarity
from .graph import build_graph
from .model import HyperParams, encode, load_checkpoint, save_checkpoint
from .synthetic import generate, write_synthetic
from .training import TrainConfig, train

_PATH_KEYS = ("interactions", "textual_features", "visual_features", "out_dir")
_HP_KEYS = ("embedding_dim", "num_layers", "alpha", "beta", "reg_lambda",
            "propagation", "self_connection", "layer_aggregation", "attention")
_TC_KEYS = ("learning_rate", "batch_size", "max_epochs", "patience",
            "eval_every", "mask_target_in_history")

_CASTS = {
    "interactions": str, "textual_features": str, "visual_features": str, "out_dir": str,
    "embedding_dim": int, "num_layers": int, "alpha": float, "beta": float,
    "reg_lambda": float, "propagation": str, "self_connection": str,
    "layer_aggregation": str, "attention": str,
    "learning_rate": float, "batch_size": int, "max_epochs": int, "patience": int,
    "eval_every": int, "mask_target_in_history": bool,
    "k_core": int, "cutoff": int, "seed": int,
    "avg_diff_mode": str, "avg_diff_samples": int,
    "similarity_mode": str, "similarity_samples": int,
}

# named hyperparameter presets; ablate runs the first six in this exact order
VARIANT_GRID = (
    ("default", {}),
    ("nonlinear-prop", {"propagation": "nonlinear"}),
    ("no-self-connection", {"self_connection": "off"}),
    ("layer-combination", {"layer_aggregation": "mean_combination"}),
    ("lightgcn-style", {"propagation": "linear", "self_connection": "off",
                        "layer_aggregation": "mean_combination"}),
    ("attention-off", {"attention": "off"}),
)
VARIANTS = dict(VARIANT_GRID)
VARIANTS["monet-megcn"] = VARIANTS["lightgcn-style"]
VARIANTS["monet-ta"] = VARIANTS["attention-off"]

SWEEP_DEFAULTS = {
    "alpha": (0.0, 0.5, 1.0, 1.5, 2.0),
    "beta": (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0),
}


def _cast_value(key: str, raw: str, where: str):
    if key not in _CASTS:
        raise ConfigError(f"{where}: unknown configuration key {key!r}")
    cast = _CASTS[key]
    raw = raw.strip()
    if cast is bool:
        if raw not in ("true", "false"):
            raise ConfigError(f"{where}: {key} must be true or false, got {raw!r}")
        return raw == "true"
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"{where}: bad value for {key}: {raw!r}") from None


def parse_config_file(path: str) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
            values[key.strip()] = _cast_value(key.strip(), raw, f"{path}:{line_no}")
    return values


@dataclass
class RunConfig:
    interactions: str | None
    textual_features: str | None
    visual_features: str | None
    out_dir: str
    hp: HyperParams
    tc: TrainConfig
    k_core: int
    cutoff: int
    seed: int
    avg_diff_mode: str
    avg_diff_samples: int
    similarity_mode: str
    similarity_samples: int


def build_run_config(args) -> RunConfig:
    values = {}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(parse_config_file(config_path))
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        values["out_dir"] = args.out
    variant = getattr(args, "variant", None)
    if variant is not None:
        values.update(VARIANTS[variant])
    for item in getattr(args, "overrides", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _cast_value(key.strip(), raw, "--set")

    seed = values.get("seed", 0)
    cutoff = values.get("cutoff", 20)
    for mode_key in ("avg_diff_mode", "similarity_mode"):
        if values.get(mode_key, "exact") not in ("exact", "sampled"):
            raise ConfigError(f"{mode_key} must be exact or sampled, got {values[mode_key]!r}")
    hp = HyperParams(**{k: values[k] for k in _HP_KEYS if k in values})
    tc = TrainConfig(seed=seed, eval_cutoff=cutoff,
                     **{k: values[k] for k in _TC_KEYS if k in values})
    return RunConfig(
        interactions=values.get("interactions"),
        textual_features=values.get("textual_features"),
        visual_features=values.get("visual_features"),
        out_dir=values.get("out_dir", "run"),
        hp=hp,
        tc=tc,
        k_core=values.get("k_core", 5),
        cutoff=cutoff,
        seed=seed,
        avg_diff_mode=values.get("avg_diff_mode", "exact"),
        avg_diff_samples=values.get("avg_diff_samples", 100_000),
        similarity_mode=values.get("similarity_mode", "exact"),
        similarity_samples=values.get("similarity_samples", 200),
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def _write_tsv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(c) for c in row) + "\n")


def _load_feature_set(cfg: RunConfig, num_items: int) -> dict:
    paths = {"textual": cfg.textual_features, "visual": cfg.visual_features}
    feats = {}
    for m in MODALITIES:
        if paths[m] is None:
            raise ConfigError(f"{m}_features path not set")
        feats[m] = load_features(paths[m], expected_items=num_items, modality=m)
    return feats


def cmd_prepare(cfg: RunConfig) -> None:
    if cfg.interactions is None:
        raise ConfigError("interactions path not set")
    interactions = load_interactions(cfg.interactions)
    kept = kcore_filter(interactions, cfg.k_core)
    dataset = split_dataset(kept, seed=cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_prepared(cfg.out_dir, dataset)
    for m, path in (("textual", cfg.textual_features), ("visual", cfg.visual_features)):
        if path and os.path.exists(path):
            load_features(path, expected_items=dataset.num_items, modality=m)
        else:
            print(f"note: {m} feature file not available yet; skipped validation", file=sys.stderr)
    total = dataset.train.shape[0] + dataset.validation.shape[0] + dataset.test.shape[0]
    sparsity = 1.0 - total / (dataset.num_users * dataset.num_items)
    print(f"users={dataset.num_users} items={dataset.num_items} "
          f"interactions={total} sparsity={sparsity:.6f}")


def cmd_train(cfg: RunConfig) -> None:
    dataset = read_prepared(cfg.out_dir)
    feats = _load_feature_set(cfg, dataset.num_items)
    result = train(dataset, feats, cfg.hp, cfg.tc)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt = os.path.join(cfg.out_dir, "checkpoint.bin")
    save_checkpoint(ckpt, result.params, cfg.hp, cfg.seed)
    n = cfg.tc.eval_cutoff
    _write_tsv(os.path.join(cfg.out_dir, "training_log.tsv"),
               ("epoch", "loss", f"val_recall@{n}", f"val_ndcg@{n}"),
               result.log)
    figures.save_training_curves(result.log, os.path.join(cfg.out_dir, "training.png"))
    best = "" if result.best_val_recall is None else f" best_val_recall@{n}={result.best_val_recall:.6f}"
    print(f"epochs={len(result.log)} best_epoch={result.best_epoch}{best} checkpoint={ckpt}")


def _checked_load(cfg: RunConfig):
    dataset = read_prepared(cfg.out_dir)
    params, hp, _seed = load_checkpoint(os.path.join(cfg.out_dir, "checkpoint.bin"))
    feats = _load_feature_set(cfg, dataset.num_items)
    users = params.user_emb0[MODALITIES[0]].shape[0]
    if users != dataset.num_users:
        raise CheckpointError(
            f"user_emb0_textual has {users} rows but the dataset has {dataset.num_users} users"
        )
    for m in MODALITIES:
        cols = params.proj_weight[m].shape[1]
        if cols != feats[m].dim:
            raise CheckpointError(
                f"proj_weight_{m} has {cols} columns but {m} features have dim {feats[m].dim}"
            )
    return dataset, params, hp, feats


def cmd_evaluate(cfg: RunConfig, phase: str) -> None:
    dataset, params, hp, feats = _checked_load(cfg)
    graph = build_graph(dataset)
    enc = encode(graph, params, feats, hp)
    report = evaluate(enc, graph, dataset, hp, n=cfg.cutoff, phase=phase)
    diffs = avg_diff_report(feats, enc.item_final, cfg.avg_diff_mode,
                            cfg.avg_diff_samples, cfg.seed)
    n = report.n
    _write_tsv(os.path.join(cfg.out_dir, f"metrics_{phase}.tsv"),
               ("metric", "value"),
               [(f"precision@{n}", report.precision),
                (f"recall@{n}", report.recall),
                (f"ndcg@{n}", report.ndcg),
                ("num_users_evaluated", report.num_users_evaluated)])
    _write_tsv(os.path.join(cfg.out_dir, "avg_diff.tsv"),
               ("metric", "value"),
               [(f"avg_diff_{m}", diffs[m].value) for m in MODALITIES])
    with open(os.path.join(cfg.out_dir, f"report_{phase}.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"phase = {phase}\ncutoff = {n}\n")
        fh.write(f"num_users_evaluated = {report.num_users_evaluated}\n")
        fh.write(f"precision = {_fmt(report.precision)}\n")
        fh.write(f"recall = {_fmt(report.recall)}\n")
        fh.write(f"ndcg = {_fmt(report.ndcg)}\n")
        for m in MODALITIES:
            entry = diffs[m]
            fh.write(f"avg_diff_{m} = {_fmt(entry.value)} "
                     f"(mode={entry.mode}, pairs={entry.num_pairs})\n")
    print(f"{phase}: precision@{n}={report.precision:.6f} "
          f"recall@{n}={report.recall:.6f} ndcg@{n}={report.ndcg:.6f}")


def train_and_evaluate(dataset, feats, hp, tc, cutoff, avg_mode="exact",
                       avg_samples=100_000, seed=0):
    """Train one configuration and measure test accuracy plus both
    modality-preservation gaps; the shared engine behind sweep and ablate."""
    result = train(dataset, feats, hp, tc)
    graph = build_graph(dataset)
    enc = encode(graph, result.params, feats, hp)
    report = evaluate(enc, graph, dataset, hp, n=cutoff, phase="test")
    diffs = avg_diff_report(feats, enc.item_final, avg_mode, avg_samples, seed)
    return result, report, diffs


def cmd_sweep(cfg: RunConfig, param: str, values_arg: str | None) -> None:
    if values_arg is None:
        sweep_values = list(SWEEP_DEFAULTS[param])
    else:
        try:
            sweep_values = [float(v) for v in values_arg.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--values must be a comma-separated number list, got {values_arg!r}") from None
    if not sweep_values:
        raise ConfigError("empty sweep value list")
    for v in sweep_values:
        if param == "alpha" and v < 0:
            raise ConfigError(f"alpha values must be >= 0, got {v}")
        if param == "beta" and not 0.0 <= v <= 1.0:
            raise ConfigError(f"beta values must lie in [0, 1], got {v}")
    dataset = read_prepared(cfg.out_dir)
    feats = _load_feature_set(cfg, dataset.num_items)
    rows = []
    for v in sweep_values:
        hp = replace(cfg.hp, **{param: v})
        try:
            _, report, diffs = train_and_evaluate(
                dataset, feats, hp, cfg.tc, cfg.cutoff,
                cfg.avg_diff_mode, cfg.avg_diff_samples, cfg.seed)
            rows.append((v, report.precision, report.recall, report.ndcg,
                         diffs["textual"].value, diffs["visual"].value))
        except MonetError as exc:
            print(f"note: {param}={v} failed ({exc.category}: {exc}); recorded as NaN",
                  file=sys.stderr)
            rows.append((v, math.nan, math.nan, math.nan, math.nan, math.nan))
    _write_tsv(os.path.join(cfg.out_dir, f"sweep_{param}.tsv"),
               ("param_value", "precision", "recall", "ndcg", "avg_diff_t", "avg_diff_v"),
               rows)
    figures.save_sweep_figure(param, rows, os.path.join(cfg.out_dir, f"sweep_{param}.png"))
    print(f"swept {param} over {len(rows)} values")


def cmd_ablate(cfg: RunConfig) -> None:
    dataset = read_prepared(cfg.out_dir)
    feats = _load_feature_set(cfg, dataset.num_items)
    rows = []
    for name, overrides in VARIANT_GRID:
        hp = replace(cfg.hp, **overrides)
        try:
            _, report, diffs = train_and_evaluate(
                dataset, feats, hp, cfg.tc, cfg.cutoff,
                cfg.avg_diff_mode, cfg.avg_diff_samples, cfg.seed)
            rows.append((name, report.precision, report.recall, report.ndcg,
                         diffs["textual"].value, diffs["visual"].value))
        except MonetError as exc:
            print(f"note: variant {name} failed ({exc.category}: {exc}); recorded as NaN",
                  file=sys.stderr)
            rows.append((name, math.nan, math.nan, math.nan, math.nan, math.nan))
    _write_tsv(os.path.join(cfg.out_dir, "ablation.tsv"),
               ("variant", "precision", "recall", "ndcg", "avg_diff_t", "avg_diff_v"),
               rows)
    figures.save_ablation_figure(rows, os.path.join(cfg.out_dir, "ablation.png"))
    print(f"ablation grid: {len(rows)} variants")


def cmd_analyze(cfg: RunConfig) -> None:
    dataset = read_prepared(cfg.out_dir)
    feats = _load_feature_set(cfg, dataset.num_items)
    report = interaction_similarity(feats, dataset, cfg.similarity_mode,
                                    cfg.similarity_samples, cfg.seed)
    rows = []
    for m in MODALITIES:
        rows.append((f"mean_ii_{m}", report.mean_ii[m]))
        rows.append((f"mean_in_{m}", report.mean_in[m]))
    rows.append(("num_users_ii", report.num_users_ii))
    rows.append(("num_users_in", report.num_users_in))
    rows.append(("mode", report.mode))
    _write_tsv(os.path.join(cfg.out_dir, "similarity.tsv"), ("metric", "value"), rows)
    figures.save_similarity_figure(report, os.path.join(cfg.out_dir, "similarity.png"))
    gaps = " ".join(
        f"{m}: ii={report.mean_ii[m]:.4f} in={report.mean_in[m]:.4f}" for m in MODALITIES
    )
    print(gaps)


def cmd_synthesize(cfg: RunConfig, args) -> None:
    synth = generate(num_users=args.users, num_items=args.items,
                     feature_dim=args.dim, seed=cfg.seed, null=args.null,
                     num_clusters=args.clusters)
    paths = write_synthetic(cfg.out_dir, synth)
    print(f"interactions={len(synth.interactions)} "
          f"files={paths['interactions']},{paths['textual']},{paths['visual']}")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", default=argparse.SUPPRESS, metavar="PATH",
                        help="flat key = value configuration file")
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS, metavar="N",
                        help="master seed for every random choice")
    shared.add_argument("--out", default=argparse.SUPPRESS, metavar="DIR",
                        help="output directory (default: run)")
    shared.add_argument("--set", action="append", dest="overrides",
                        default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override one configuration value; repeatable")
    parser = argparse.ArgumentParser(prog="monet", parents=[shared],
                                     description="multimedia recommender pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[shared],
                   help="filter, split, and index the raw interaction log")
    tp = sub.add_parser("train", parents=[shared], help="train and checkpoint")
    tp.add_argument("--variant", choices=sorted(VARIANTS), default=argparse.SUPPRESS,
                    help="named hyperparameter preset")
    ep = sub.add_parser("evaluate", parents=[shared], help="rank and report metrics")
    ep.add_argument("--phase", choices=("validation", "test"), default="test")
    wp = sub.add_parser("sweep", parents=[shared],
                        help="retrain per value of alpha or beta")
    wp.add_argument("--param", choices=("alpha", "beta"), required=True)
    wp.add_argument("--values", default=None, metavar="V1,V2,...",
                    help="comma-separated values (defaults per parameter)")
    sub.add_parser("ablate", parents=[shared], help="run the six-variant grid")
    sub.add_parser("analyze", parents=[shared],
                   help="interacted vs non-interacted similarity report")
    sy = sub.add_parser("synthesize", parents=[shared],
                        help="generate planted-preference data")
    sy.add_argument("--users", type=int, default=200)
    sy.add_argument("--items", type=int, default=100)
    sy.add_argument("--dim", type=int, default=16)
    sy.add_argument("--clusters", type=int, default=None)
    sy.add_argument("--null", action="store_true",
                    help="remove cluster structure (uniform interactions, noise features)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_run_config(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.phase)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.param, args.values)
        elif args.command == "ablate":
            cmd_ablate(cfg)
        elif args.command == "analyze":
            cmd_analyze(cfg)
        elif args.command == "synthesize":
            cmd_synthesize(cfg, args)
        return 0
    except MonetError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
