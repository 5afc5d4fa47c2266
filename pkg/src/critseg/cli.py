"""Operator surface: dataset generation, training, ablations, labeling, reports.

Exit codes: 0 success, 2 usage/validation error, 3 numeric failure during
training (diagnostics dumped into the run directory).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import pseudolabel, synthdata
from .checkpoint import CheckpointError, load_params
from .config import (
    apply_overrides,
    config_from_dict,
    config_hash,
    config_to_dict,
    default_config,
    load_config,
    resolve_config,
    serialize_config,
)
from .gridrun import run_grid
from .trainer import ConfigError, NumericsError, Trainer, run

ABLATION_VARIANTS = {
    "full": {},
    "wo_tc": {"use_critic": False},
    "wo_cg": {"use_pseudo": False},
    "wo_sd": {"use_div": False},
    "source_only": {
        "use_critic": False,
        "use_pseudo": False,
        "use_div": False,
        "adv_weight": 0.0,
    },
}


def _resolve(args):
    return resolve_config(args.config, args.set or [])


def _resolved_tree(args):
    tree = load_config(args.config) if args.config else default_config()
    from .config import _merge

    return apply_overrides(_merge(default_config(), tree), args.set or [])


def _write_manifest(out_dir: Path, tree: dict, started: str, extra=None):
    manifest = {
        "config_hash": config_hash(tree),
        "seed": tree.get("seed", 0),
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
        "outputs": sorted(str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file()),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def cmd_dataset_gen(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    domains = ["source", "target"] if args.domain == "both" else [args.domain]
    count = args.count or cfg.data.train_scenes
    for domain in domains:
        scenes, labels = synthdata.generate_domain(cfg.data, count, domain)
        ddir = out / domain
        for i in range(count):
            synthdata.export_scene(scenes[i], labels[i], ddir / f"scene-{i:03d}")
        counts = np.bincount(labels.reshape(-1), minlength=cfg.data.classes)
        report = {
            "domain": domain,
            "scenes": count,
            "pixels_per_class": [int(c) for c in counts],
        }
        (ddir / "frequencies.json").write_text(json.dumps(report, indent=2))
        print(f"{domain}: {count} scenes -> {ddir}")
    (out / "config.yaml").write_text(serialize_config(_resolved_tree(args)))
    return 0


def _print_iou_table(rows, n_classes):
    header = ["variant"] + [f"class_{k}" for k in range(n_classes)] + ["mIoU"]
    widths = [max(len(h), 12) for h in header]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for name, per_class, miou in rows:
        cells = [name.ljust(widths[0])]
        for k in range(n_classes):
            v = per_class[k]
            cells.append(("nan" if np.isnan(v) else f"{v:.4f}").ljust(widths[k + 1]))
        cells.append(f"{miou:.4f}".ljust(widths[-1]))
        print("  ".join(cells))


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out_dir = Path(args.out) if args.out else Path("runs") / f"train-seed{cfg.seed}"
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    _, history, summary = run(cfg, out_dir=out_dir)
    last = history[-1]
    k = cfg.data.classes
    per_class = np.array([last[f"iou_{i}"] for i in range(k)])
    print(f"run directory: {out_dir}")
    _print_iou_table([("train", per_class, last["miou"])], k)
    print(f"final target mIoU: {last['miou']:.4f}  (source {last['miou_source']:.4f})")
    _write_manifest(out_dir, _resolved_tree(args), started, {"summary": summary})
    return 0


def cmd_ablate(args) -> int:
    tree = _resolved_tree(args)
    out_dir = Path(args.out) if args.out else Path("runs") / "ablation"
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    jobs = []
    for variant, toggles in ABLATION_VARIANTS.items():
        vtree = json.loads(json.dumps(tree))
        vtree.update(toggles)
        config_from_dict(vtree)  # validate before launching workers
        jobs.append((variant, vtree, out_dir / variant))
    grid = run_grid(jobs, workers=args.workers)
    results = {variant: grid[variant]["last"]["miou"] for variant in ABLATION_VARIANTS}
    for variant, miou in results.items():
        print(f"{variant}: mIoU {miou:.4f}")
    base = results["source_only"]
    table_path = out_dir / "ablation.csv"
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "miou", "delta_vs_source_only"])
        for variant, miou in results.items():
            writer.writerow([variant, repr(miou), repr(miou - base)])
    print(f"\n{'variant':<14}{'mIoU':>10}{'delta':>10}")
    for variant, miou in results.items():
        print(f"{variant:<14}{miou:>10.4f}{miou - base:>10.4f}")
    _write_manifest(out_dir, tree, started)
    return 0


def cmd_label(args) -> int:
    cfg = _resolve(args)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        print(f"checkpoint not found: {ckpt_path}", file=sys.stderr)
        return 2
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    amount = args.select_amount if args.select_amount is not None else cfg.select_start
    trainer = Trainer(cfg)
    trainer.model.load_state_dict(load_params(ckpt_path))
    scenes, _ = synthdata.generate_domain(cfg.data, cfg.data.train_scenes, "target")
    probs = trainer.predict_proba(scenes)
    thresholds = pseudolabel.determine_thresholds(list(probs), amount)
    label_maps = [pseudolabel.generate(pm, thresholds, gamma) for pm in probs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, lm in enumerate(label_maps):
        pseudolabel.save_soft_labels(lm, out / f"scene-{i:03d}.txt")
    frac = pseudolabel.selection_report(list(probs), label_maps)
    with open(out / "selection_report.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "selected_fraction", "threshold"])
        for k in range(cfg.data.classes):
            writer.writerow([k, repr(float(frac[k])), repr(float(thresholds.values[k]))])
    total = float(np.mean([lm.selected.mean() for lm in label_maps]))
    print(f"labeled {len(label_maps)} scenes -> {out}")
    print(f"selection amount {amount:.2f}, gamma {gamma}, overall selected {total:.3f}")
    return 0


def _read_metrics(path: Path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    ablation = run_dir / "ablation.csv"
    rows = []
    if ablation.exists():
        variants = [r["variant"] for r in csv.DictReader(open(ablation, newline=""))]
        for variant in variants:
            metrics_path = run_dir / variant / "metrics.csv"
            if not metrics_path.exists():
                print(f"missing {metrics_path}", file=sys.stderr)
                return 2
            last = _read_metrics(metrics_path)[-1]
            n_classes = sum(1 for c in last if c.startswith("iou_"))
            per_class = np.array([float(last[f"iou_{k}"]) for k in range(n_classes)])
            rows.append((variant, per_class, float(last["miou"])))
    else:
        metrics_path = run_dir / "metrics.csv"
        if not metrics_path.exists():
            print(f"no metrics.csv under {run_dir}", file=sys.stderr)
            return 2
        last = _read_metrics(metrics_path)[-1]
        n_classes = sum(1 for c in last if c.startswith("iou_"))
        per_class = np.array([float(last[f"iou_{k}"]) for k in range(n_classes)])
        rows.append((run_dir.name, per_class, float(last["miou"])))
    _print_iou_table(rows, len(rows[0][1]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="critseg",
        description="Critic-guided domain adaptation for synthetic segmentation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults apply if omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override, repeatable")

    dataset = sub.add_parser("dataset", help="dataset utilities")
    dsub = dataset.add_subparsers(dest="dataset_command", required=True)
    gen = dsub.add_parser("gen", help="materialize scenes to disk")
    common(gen)
    gen.add_argument("--out", required=True)
    gen.add_argument("--domain", choices=["source", "target", "both"], default="both")
    gen.add_argument("--count", type=int, help="scenes per domain (default: config)")
    gen.set_defaults(func=cmd_dataset_gen)

    train = sub.add_parser("train", help="run the full training procedure")
    common(train)
    train.add_argument("--out", help="run directory (default runs/train-seedN)")
    train.set_defaults(func=cmd_train)

    ablate = sub.add_parser("ablate", help="run the ablation grid on one seed")
    common(ablate)
    ablate.add_argument("--out", help="output directory (default runs/ablation)")
    ablate.add_argument("--workers", type=int,
                        help="parallel variant processes (default: core count)")
    ablate.set_defaults(func=cmd_ablate)

    label = sub.add_parser("label", help="standalone soft pseudo-label generation")
    common(label)
    label.add_argument("--checkpoint", required=True)
    label.add_argument("--out", required=True)
    label.add_argument("--gamma", type=float)
    label.add_argument("--select-amount", type=float)
    label.set_defaults(func=cmd_label)

    report = sub.add_parser("report", help="render tables from metrics.csv")
    report.add_argument("--run", required=True)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
