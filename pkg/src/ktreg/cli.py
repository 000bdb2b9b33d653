"""Command-line surface.

Every command reads/writes documented file formats and is byte-for-byte
reproducible from (inputs, config, seed); no timestamps are written. Exit
status is 0 on success, nonzero with a one-line diagnostic on failure.

Config files are INI-style key = value sections ([model], [train], [eval],
[grid], and one [augment.<name>] section per augmentation); any value can
be overridden with --set section.key=value, and --seed overrides train.seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation, ingest as ingest_mod, synth as synth_mod, train as train_mod
from .augment import AugmentConfig, derive_seed, insert, delete, replace
from .core import Dataset
from .losses import LossWeights
from .model import load_checkpoint, save_checkpoint
from .train import AugSpec, TrainConfig


class CliError(ValueError):
    pass


DEFAULTS = {
    "model": {"d_emb": "32", "d_hidden": "32"},
    "train": {
        "epochs": "20",
        "batch_size": "64",
        "base_lr": "0.001",
        "warmup_steps": "4000",
        "max_seq_len": "100",
        "seed": "0",
        "eval_every": "0",
        "early_stop_patience": "0",
    },
    "eval": {"holdout": "0.2"},
    "grid": {
        "alphas": "0.1, 0.3, 0.5",
        "lambda_regs": "1, 10, 50, 100",
        "lambda_augs": "0, 1",
        "folds": "5",
    },
}


def load_config(
    path: Optional[str], overrides: list[str], seed: Optional[int]
) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).exists():
            raise CliError(f"config file not found: {path}")
        cp.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise CliError(f"--set expects section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = (part.strip() for part in target.split(".", 1))
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value.strip())
    if seed is not None:
        cp.set("train", "seed", str(seed))
    return cp


def _aug_specs(cp: configparser.ConfigParser, default_seed: int) -> tuple[AugSpec, ...]:
    specs = []
    for section in cp.sections():
        if not section.startswith("augment."):
            continue
        name = section.split(".", 1)[1]
        get = cp[section].get
        kind = get("kind")
        if kind not in ("replacement", "insertion", "deletion"):
            raise CliError(f"[{section}] needs kind = replacement|insertion|deletion")
        target = get("target", "correct")
        if target not in ("correct", "incorrect"):
            raise CliError(f"[{section}] target must be correct or incorrect")
        cfg = AugmentConfig(
            alpha=cp[section].getfloat("alpha", 0.3),
            flavor=get("flavor", "question_random"),
            target_response=1 if target == "correct" else 0,
            seed=cp[section].getint("seed", default_seed),
        )
        specs.append(
            AugSpec(
                kind=kind,
                config=cfg,
                weights=LossWeights(
                    lambda_aug=cp[section].getfloat("lambda_aug", 1.0),
                    lambda_reg=cp[section].getfloat("lambda_reg", 1.0),
                ),
                reversed_reg=cp[section].getboolean("reversed", False),
                variant=get("variant", "remaining"),
                label=name,
            )
        )
    return tuple(specs)


def build_train_config(cp: configparser.ConfigParser) -> TrainConfig:
    t = cp["train"]
    seed = t.getint("seed")
    return TrainConfig(
        epochs=t.getint("epochs"),
        batch_size=t.getint("batch_size"),
        base_lr=t.getfloat("base_lr"),
        warmup_steps=t.getint("warmup_steps"),
        max_seq_len=t.getint("max_seq_len"),
        seed=seed,
        d_emb=cp["model"].getint("d_emb"),
        d_hidden=cp["model"].getint("d_hidden"),
        augmentations=_aug_specs(cp, seed),
        eval_every=t.getint("eval_every"),
        early_stop_patience=t.getint("early_stop_patience"),
    )


def load_data(data_dir) -> ingest_mod.IngestResult:
    data_dir = Path(data_dir)
    interactions = data_dir / "interactions.csv"
    if not interactions.exists():
        raise CliError(f"no interactions.csv in {data_dir}")
    skills = data_dir / "skills.csv"
    return ingest_mod.ingest(interactions, skills if skills.exists() else None)


def holdout_split(dataset: Dataset, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic student-level split; identical for train and eval commands."""
    students = dataset.student_ids()
    n_test = int(round(fraction * len(students)))
    if fraction > 0:
        n_test = max(n_test, 1)
    if n_test >= len(students):
        raise CliError("holdout fraction leaves no training students")
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(len(students))
    test = [students[i] for i in order[:n_test]]
    train = [students[i] for i in order[n_test:]]
    return train, test


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_config(path, cp: configparser.ConfigParser) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, skills = synth_mod.generate(
        n_students=args.students,
        n_questions=args.questions,
        n_skills=args.skills,
        seq_len_range=(args.min_len, args.max_len),
        seed=args.seed,
        learn_increment=args.increment,
        within_skill_noise=args.noise,
    )
    ingest_mod.export_interactions(out / "interactions.csv", dataset)
    ingest_mod.export_skills(out / "skills.csv", skills)
    _write_json(out / "stats.json", synth_mod.dataset_stats(dataset))
    print(f"synth: wrote {len(dataset)} students to {out}")
    return 0


def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = ingest_mod.ingest(args.interactions, args.skills)
    ingest_mod.export_interactions(out / "interactions.csv", result.dataset)
    ingest_mod.export_id_map(out / "question_map.csv", result.question_map,
                             "original_question_id")
    if result.skills is not None:
        ingest_mod.export_skills(out / "skills.csv", result.skills)
        ingest_mod.export_id_map(out / "skill_map.csv", result.skill_map,
                                 "original_skill_id")
    _write_json(
        out / "ingest.json",
        {
            "n_students": len(result.dataset),
            "n_questions": result.dataset.n_questions,
            "n_dropped": result.n_dropped,
        },
    )
    print(f"ingest: {len(result.dataset)} students, "
          f"{result.n_dropped} rows dropped, wrote {out}")
    return 0


def cmd_train(args) -> int:
    cp = load_config(args.config, args.set or [], args.seed)
    cfg = build_train_config(cp)
    data = load_data(args.data)
    train_students, test_students = holdout_split(
        data.dataset, cp["eval"].getfloat("holdout"), cfg.seed
    )
    train_data = train_mod.subset_by_students(data.dataset, train_students)
    test_data = train_mod.subset_by_students(data.dataset, test_students)

    result = train_mod.train_run(
        train_data, data.skills, cfg,
        val_data=test_data if cfg.eval_every else None,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "config.ini", cp)
    _write_json(out / "split.json",
                {"train": sorted(map(str, train_students)),
                 "test": sorted(map(str, test_students))})
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in result.metrics:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    save_checkpoint(out / "checkpoint.npz", result.params)
    final_auc = evaluation.evaluate_dataset(result.params, test_data, cfg.max_seq_len)
    _write_json(
        out / "result.json",
        {
            "final_auc": final_auc,
            "steps": len(result.metrics),
            "n_train_sequences": len(train_data),
            "n_dropped_short": result.n_dropped_short,
        },
    )
    print(f"train: final test auc {final_auc:.6f} ({out})")
    return 0


def _load_run(run_dir) -> tuple[configparser.ConfigParser, TrainConfig]:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.ini"
    if not config_path.exists():
        raise CliError(f"no config.ini in run dir {run_dir}")
    cp = load_config(config_path, [], None)
    return cp, build_train_config(cp)


def cmd_eval(args) -> int:
    cp, cfg = _load_run(args.run)
    data = load_data(args.data)
    train_students, test_students = holdout_split(
        data.dataset, cp["eval"].getfloat("holdout"), cfg.seed
    )
    students = {"test": test_students, "train": train_students}[args.split]
    subset = train_mod.subset_by_students(data.dataset, students)
    params = load_checkpoint(Path(args.run) / "checkpoint.npz")
    value = evaluation.evaluate_dataset(params, subset, cfg.max_seq_len)
    _write_json(Path(args.run) / f"eval_{args.split}.json",
                {"auc": value, "split": args.split, "n_sequences": len(subset)})
    print(f"eval: {args.split} auc {value:.6f}")
    return 0


def cmd_grid(args) -> int:
    cp = load_config(args.config, args.set or [], args.seed)
    cfg = build_train_config(cp)
    if not cfg.augmentations:
        raise CliError("grid needs at least one [augment.*] section")
    data = load_data(args.data)
    g = cp["grid"]
    parse_floats = lambda text: tuple(float(x) for x in text.split(","))  # noqa: E731
    rows = train_mod.grid_run(
        data.dataset,
        data.skills,
        cfg,
        alphas=parse_floats(g.get("alphas")),
        lambda_regs=parse_floats(g.get("lambda_regs")),
        lambda_augs=parse_floats(g.get("lambda_augs")),
        k_folds=g.getint("folds"),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "config.ini", cp)
    with open(out / "grid_results.csv", "w", encoding="utf-8") as fh:
        fh.write("label,kind,alpha,lambda_reg,lambda_aug,mean_auc,std_auc,"
                 "fold_aucs,best\n")
        for row in rows:
            folds = ";".join(repr(a) for a in row["fold_aucs"])
            fh.write(
                f"{row['label']},{row['kind']},{row['alpha']!r},"
                f"{row['lambda_reg']!r},{row['lambda_aug']!r},"
                f"{row['mean_auc']!r},{row['std_auc']!r},{folds},"
                f"{int(row['best'])}\n"
            )
    best = {row["label"]: row for row in rows if row["best"]}
    _write_json(out / "best.json", {
        label: {k: row[k] for k in ("alpha", "lambda_reg", "lambda_aug", "mean_auc")}
        for label, row in best.items()
    })
    for label, row in sorted(best.items()):
        print(f"grid: best {label}: alpha={row['alpha']} "
              f"lambda_reg={row['lambda_reg']} lambda_aug={row['lambda_aug']} "
              f"auc={row['mean_auc']:.6f}")
    return 0


def cmd_analyze_monotonicity(args) -> int:
    data = load_data(args.data)
    analysis = evaluation.dataset_monotonicity_analysis(data.dataset.sequences,
                                                        bins=args.bins)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("bin_lo\tbin_hi\tcurrent_correct\tcurrent_incorrect\n")
        for i in range(args.bins):
            fh.write(
                f"{analysis.bin_edges[i]:.4f}\t{analysis.bin_edges[i + 1]:.4f}\t"
                f"{analysis.hist_correct[i]}\t{analysis.hist_incorrect[i]}\n"
            )
        fh.write(
            f"# mean_when_correct={analysis.mean_correct!r} "
            f"mean_when_incorrect={analysis.mean_incorrect!r} "
            f"n={analysis.n_contributing}\n"
        )
    print(
        f"analyze-monotonicity: mean past rate {analysis.mean_correct:.4f} (correct) "
        f"vs {analysis.mean_incorrect:.4f} (incorrect), wrote {args.out}"
    )
    return 0


def cmd_analyze_consistency(args) -> int:
    cp, cfg = _load_run(args.run)
    data = load_data(args.data)
    if data.skills is None:
        raise CliError("analyze-consistency requires a skills.csv in the data dir")
    params = load_checkpoint(Path(args.run) / "checkpoint.npz")
    _, test_students = holdout_split(data.dataset, cp["eval"].getfloat("holdout"),
                                     cfg.seed)
    subset = train_mod.subset_by_students(data.dataset, test_students)
    analysis = evaluation.consistency_loss_analysis(
        params, subset, data.skills,
        alpha=args.alpha, seed=args.seed if args.seed is not None else cfg.seed,
        max_seq_len=cfg.max_seq_len,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("bucket\tmean_consistency_loss\tn\n")
        fh.write(f"correct\t{analysis.mean_when_correct!r}\t{analysis.n_correct}\n")
        fh.write(f"incorrect\t{analysis.mean_when_incorrect!r}\t"
                 f"{analysis.n_incorrect}\n")
    print(
        f"analyze-consistency: correct {analysis.mean_when_correct:.6f}, "
        f"incorrect {analysis.mean_when_incorrect:.6f}, wrote {args.out}"
    )
    return 0


def cmd_report_heatmap(args) -> int:
    data = load_data(args.data)
    if args.sequence >= len(data.dataset.sequences):
        raise CliError(f"sequence index {args.sequence} out of range")
    runs = [Path(r) for r in args.run]
    cp, cfg = _load_run(runs[0])

    from .core import window

    seq = window(data.dataset.sequences[args.sequence], cfg.max_seq_len)[0]
    aug_cfg = AugmentConfig(
        alpha=args.alpha,
        flavor=args.flavor,
        target_response=1 if args.target == "correct" else 0,
        seed=args.seed,
    )
    if args.kind == "insertion":
        aug = insert(seq, data.dataset.n_questions, aug_cfg)
    elif args.kind == "deletion":
        aug = delete(seq, aug_cfg)
    else:
        aug = replace(seq, data.skills, data.dataset.n_questions, aug_cfg)

    columns = []
    for run_dir in runs:
        params = load_checkpoint(run_dir / "checkpoint.npz")
        report = evaluation.monotonicity_report(params, seq, aug)
        label = run_dir.name
        columns.append((f"{label}:original",
                        [row.p_original for row in report.rows]))
        columns.append((f"{label}:augmented",
                        [row.p_augmented for row in report.rows]))
        print(f"report-heatmap: {label} violation fraction "
              f"{report.violation_fraction:.4f}")

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("position\t" + "\t".join(name for name, _ in columns) + "\n")
        for t in range(len(seq)):
            cells = [
                "nan" if values[t] is None else repr(values[t])
                for _, values in columns
            ]
            fh.write(f"{t + 1}\t" + "\t".join(cells) + "\n")
    print(f"report-heatmap: wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ktreg",
        description="Knowledge-tracing training toolkit with sequence "
                    "augmentation and consistency/monotonicity regularization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--students", type=int, default=500)
    p.add_argument("--questions", type=int, default=50)
    p.add_argument("--skills", type=int, default=10)
    p.add_argument("--min-len", type=int, default=20)
    p.add_argument("--max-len", type=int, default=60)
    p.add_argument("--increment", type=float, default=0.4)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest delimited interaction logs")
    p.add_argument("--interactions", required=True)
    p.add_argument("--skills", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    for name, func in (("train", cmd_train), ("grid", cmd_grid)):
        p = sub.add_parser(name, help=f"{name} per the config file")
        p.add_argument("--data", required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override train.seed")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a run's checkpoint")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-monotonicity",
                       help="past-correctness-rate distributions")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_analyze_monotonicity)

    p = sub.add_parser("analyze-consistency",
                       help="mean consistency loss by prediction correctness")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_analyze_consistency)

    p = sub.add_parser("report-heatmap",
                       help="aligned original/augmented prediction grid")
    p.add_argument("--run", action="append", required=True,
                   help="run dir; repeat to compare models")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sequence", type=int, default=0)
    p.add_argument("--kind", choices=("insertion", "deletion", "replacement"),
                   default="insertion")
    p.add_argument("--target", choices=("correct", "incorrect"), default="correct")
    p.add_argument("--flavor", default="skill")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report_heatmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ingest_mod.IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
