"""Batch command line for the full pipeline and the experiment harnesses.

Commands: gen-data, pretrain, tune, ablate-prompts, ablate-modalities,
compare-strategies. All are non-interactive. Exit codes: 0 success,
1 validation error, 2 runtime failure.

Every report embeds the sha256 digest of the resolved run configuration;
reruns under an identical configuration and seed are byte-identical. Files
are staged and atomically renamed, never partially overwritten.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .autodiff import ValidationError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_override
from .data import generate_synthetic, load_dataset, save_dataset
from .metrics import format_metric_row
from .pipeline import (
    MODALITY_SUBSETS,
    run_ablate_modalities,
    run_ablate_prompts,
    run_compare_strategies,
    run_pretrain,
    run_tune,
)
from .prompt import snapshot_to_doc

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise ValidationError(f"output path {out} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _report_dict(report) -> dict:
    return report.as_dict()


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key] = parse_override(key, raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    if getattr(args, "checkpoint", None):
        overrides["checkpoint"] = args.checkpoint
    return load_config(args.config, overrides)


def _load_inputs(cfg: RunConfig, need_checkpoint=True):
    if not cfg.data_dir:
        raise ValidationError("no dataset directory given (--data)")
    dataset = load_dataset(cfg.data_dir)
    if not need_checkpoint:
        return dataset, None
    if not cfg.checkpoint:
        raise ValidationError("no checkpoint given (--checkpoint)")
    encoder, _info = load_checkpoint(cfg.checkpoint)
    if not encoder.frozen:
        encoder.freeze()
    return dataset, encoder


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args.out, args.force)
    dataset = generate_synthetic(
        cfg.n, cfg.m, cfg.dims, cfg.class_sep, cfg.missing_rate,
        noise_std=cfg.noise_std, seed=cfg.seed, name=cfg.dataset_name,
    )
    save_dataset(dataset, out, extra_meta={"config_digest": cfg.digest()})
    positives = int(dataset.labels.sum())
    print(f"wrote dataset {dataset.name!r} to {out}")
    print(f"subjects: {dataset.num_subjects}  modalities: {dataset.num_modalities}  dims: {list(dataset.dims)}")
    print(f"positives: {positives}  negatives: {dataset.num_subjects - positives}")
    for i, mod in enumerate(dataset.modalities):
        print(f"modality_{i}: present {int(mod.present.sum())}/{dataset.num_subjects}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    dataset, _ = _load_inputs(cfg, need_checkpoint=False)
    out = _prepare_out(args.out, args.force)
    result, G, X = run_pretrain(dataset, cfg)
    result.encoder.freeze()
    save_checkpoint(
        out / "encoder.json", result.encoder, cfg.seed, cfg.digest(),
        meta={"fused_dim": X.shape[1], "num_nodes": G.num_nodes, "num_edges": G.num_edges},
    )
    _write_atomic(
        out / "loss_curve.txt",
        "".join(f"{i} {loss!r}\n" for i, loss in enumerate(result.losses)),
    )
    run_record = {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "epochs": cfg.pretrain_epochs,
        "final_loss": result.losses[-1] if result.losses else None,
        "fused_dim": X.shape[1],
        "num_edges": G.num_edges,
        "num_nodes": G.num_nodes,
    }
    _write_atomic(out / "run.json", _dump_json(run_record))
    last = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(f"pretrained {cfg.pretrain_epochs} epochs on {G.num_nodes} nodes; final loss {last}")
    print(f"checkpoint: {out / 'encoder.json'}")
    return 0


def _fold_record(r, cfg) -> dict:
    return {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "strategy": r.strategy,
        "best_epoch": r.best_epoch,
        "best_metrics": _report_dict(r.best_metrics),
        "param_counts": r.param_counts,
        "tunable_total": r.tunable_total,
        "train_losses": r.train_losses,
        "val_bacc": r.val_bacc,
    }


def cmd_tune(args) -> int:
    cfg = _resolve_config(args)
    dataset, encoder = _load_inputs(cfg)
    out = _prepare_out(args.out, args.force)
    res = run_tune(dataset, encoder, cfg)
    for f, fold_result in enumerate(res["fold_results"]):
        _write_atomic(out / f"fold_{f}.json", _dump_json(_fold_record(fold_result, cfg)))
        snapshot = snapshot_to_doc(fold_result)
        snapshot["config_digest"] = cfg.digest()
        _write_atomic(out / f"fold_{f}_snapshot.json", _dump_json(snapshot))
    row = format_metric_row(res["strategy"], res["aggregate"])
    text = (
        f"# config_digest: {cfg.digest()}\n"
        "# positive class: label 1; cells are percent, mean±std over folds\n"
        f"{row}\n"
        f"tunable_params: {res['tunable_total']}\n"
    )
    _write_atomic(out / "summary.txt", text)
    summary = {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "strategy": res["strategy"],
        "aggregate": _report_dict(res["aggregate"]),
        "param_counts": res["param_counts"],
        "tunable_total": res["tunable_total"],
    }
    _write_atomic(out / "summary.json", _dump_json(summary))
    print(row)
    print(f"tunable_params: {res['tunable_total']}")
    return 0


def cmd_ablate_prompts(args) -> int:
    cfg = _resolve_config(args)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    if not sizes:
        raise ValidationError("--sizes must list at least one prompt-set size")
    dataset, encoder = _load_inputs(cfg)
    out = _prepare_out(args.out, args.force)
    rows = run_ablate_prompts(dataset, encoder, cfg, sizes)
    header = "|P|  " + "  ".join(str(r["num_prompts"]) for r in rows)
    auc_line = "AUC  " + "  ".join(f"{r['aggregate'].auc * 100:.1f}" for r in rows)
    params_line = "params  " + "  ".join(str(r["tunable_total"]) for r in rows)
    text = f"# config_digest: {cfg.digest()}\n{header}\n{auc_line}\n{params_line}\n"
    _write_atomic(out / "prompt_ablation.txt", text)
    record = {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "rows": [
            {
                "num_prompts": r["num_prompts"],
                "aggregate": _report_dict(r["aggregate"]),
                "tunable_total": r["tunable_total"],
            }
            for r in rows
        ],
    }
    _write_atomic(out / "prompt_ablation.json", _dump_json(record))
    print(header)
    print(auc_line)
    print(params_line)
    return 0


def cmd_ablate_modalities(args) -> int:
    cfg = _resolve_config(args)
    dataset, _ = _load_inputs(cfg, need_checkpoint=False)
    out = _prepare_out(args.out, args.force)
    rows = run_ablate_modalities(dataset, cfg)
    marks = []
    for subset, row in zip(MODALITY_SUBSETS, rows):
        flags = ["x" if i in subset else "." for i in range(3)]
        marks.append("  ".join([" ".join(flags), format_metric_row("", row["aggregate"]).strip()]))
    text = (
        f"# config_digest: {cfg.digest()}\n"
        "m0 m1 m2  BACC  SEN  SPE  AUC\n" + "\n".join(marks) + "\n"
    )
    _write_atomic(out / "modality_ablation.txt", text)
    record = {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "rows": [
            {
                "modalities": r["modalities"],
                "aggregate": _report_dict(r["aggregate"]),
                "num_hyperedges": r["num_hyperedges"],
                "fused_dim": r["fused_dim"],
            }
            for r in rows
        ],
    }
    _write_atomic(out / "modality_ablation.json", _dump_json(record))
    print(text, end="")
    return 0


def cmd_compare_strategies(args) -> int:
    cfg = _resolve_config(args)
    dataset, encoder = _load_inputs(cfg)
    out = _prepare_out(args.out, args.force)
    rows = run_compare_strategies(dataset, encoder, cfg)
    lines = [f"# config_digest: {cfg.digest()}"]
    for r in rows:
        lines.append(format_metric_row(r["strategy"], r["aggregate"]) + f"  {r['tunable_total']}")
    lines.append("")
    lines.append("# tunable parameter counts per component")
    for r in rows:
        parts = ", ".join(f"{k}={v}" for k, v in sorted(r["param_counts"].items()))
        lines.append(f"{r['strategy']}: total={r['tunable_total']} ({parts})")
    text = "\n".join(lines) + "\n"
    _write_atomic(out / "strategy_comparison.txt", text)
    record = {
        "config": cfg.as_dict(),
        "config_digest": cfg.digest(),
        "rows": [
            {
                "strategy": r["strategy"],
                "aggregate": _report_dict(r["aggregate"]),
                "param_counts": r["param_counts"],
                "tunable_total": r["tunable_total"],
            }
            for r in rows
        ],
    }
    _write_atomic(out / "strategy_comparison.json", _dump_json(record))
    print(text, end="")
    return 0


def _add_common(sub, data=False, checkpoint=False):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config field (repeatable)")
    if data:
        sub.add_argument("--data", default=None, help="dataset directory")
    if checkpoint:
        sub.add_argument("--checkpoint", default=None, help="encoder checkpoint file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hglearn", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-data", help="generate a synthetic multimodal dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser("pretrain", help="masked-autoencoder pretraining")
    _add_common(p, data=True)
    p.set_defaults(func=cmd_pretrain)

    p = commands.add_parser("tune", help="tune one strategy over all folds")
    _add_common(p, data=True, checkpoint=True)
    p.set_defaults(func=cmd_tune)

    p = commands.add_parser("ablate-prompts", help="sweep the prompt-set size")
    _add_common(p, data=True, checkpoint=True)
    p.add_argument("--sizes", default="8,16,32,64", help="comma-separated prompt counts")
    p.set_defaults(func=cmd_ablate_prompts)

    p = commands.add_parser("ablate-modalities", help="pipeline per modality subset")
    _add_common(p, data=True)
    p.set_defaults(func=cmd_ablate_modalities)

    p = commands.add_parser("compare-strategies", help="all tuning strategies, one table")
    _add_common(p, data=True, checkpoint=True)
    p.set_defaults(func=cmd_compare_strategies)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
