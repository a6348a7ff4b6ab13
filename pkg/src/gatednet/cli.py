"""Command line: ``gatednet {train,eval,compare,report}``.

Exit codes: 0 ok, 2 configuration error (including missing data files),
3 collapse abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .budget import relmac, relmac_fuse
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import VARIANTS, ConfigError, RunConfig, from_dict, load_config, with_overrides
from .data import IDXParseError, load_dataset
from .report import (
    FORMATS,
    RunSummary,
    comparison_report,
    emit_report,
    jsonl_line,
    pareto_csv,
    read_jsonl,
    summarize_run,
)
from .train import CollapseAbort, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_COLLAPSE, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    over: dict = {}
    if getattr(args, "variant", None):
        over["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        over["train"] = {"seed": args.seed}
    if getattr(args, "data_dir", None):
        over["data"] = {"data_dir": args.data_dir}
    if getattr(args, "out_dir", None):
        over["output"] = {"out_dir": args.out_dir}
    return with_overrides(cfg, **over) if over else cfg


def _load_data(cfg: RunConfig):
    try:
        return load_dataset(cfg.data)
    except FileNotFoundError as exc:
        raise CliError(f"data: {exc}", EXIT_CONFIG) from exc
    except IDXParseError as exc:
        raise CliError(f"data: {exc}", EXIT_CONFIG) from exc


def checkpoint_meta(cfg: RunConfig) -> dict:
    """Run identity stored in checkpoints; output paths are left out so the
    same run written to two directories yields identical bytes."""
    doc = cfg.to_dict()
    doc.pop("output")
    return {"config": doc}


def run_training(cfg: RunConfig, data=None) -> dict:
    """Train one config and write its artifacts.  Returns the summary dict."""
    out = Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = _load_data(cfg)
    dims = cfg.model.dims
    if dims[0] != data[0].dim or dims[-1] != data[0].n_classes:
        raise CliError(f"model.dims: {dims} does not fit data with {data[0].dim} features "
                       f"and {data[0].n_classes} classes", EXIT_CONFIG)
    metrics_path = out / cfg.output.metrics
    t0 = time.perf_counter()
    with open(metrics_path, "w") as sink:
        def on_record(rec):
            sink.write(jsonl_line(rec) + "\n")
            sink.flush()
        try:
            model, records = train(cfg, data, on_record)
        except CollapseAbort as exc:
            summary = {"status": "collapse_abort", "message": str(exc),
                       "epochs_logged": len(exc.records), "variant": cfg.variant}
            (out / cfg.output.summary).write_text(json.dumps(summary, indent=2, sort_keys=True))
            raise CliError(str(exc), EXIT_COLLAPSE) from exc
    wall = time.perf_counter() - t0
    save_checkpoint(out / cfg.output.checkpoint, model, checkpoint_meta(cfg))
    final = records[-1].as_dict()
    summary = {
        "status": "ok",
        "variant": cfg.variant,
        "seed": cfg.train.seed,
        "dims": list(model.dims),
        "params": model.param_count(),
        "gate_params": model.gate_param_count(),
        "final": final,
        "wall_time_s_nonnormative": wall,
    }
    (out / cfg.output.summary).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# ------------------------------------------------------------------ verbs


def cmd_train(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    s = run_training(cfg)
    f = s["final"]
    print(f"{cfg.variant}: val_acc={f['val_acc']:.6f} relmac_g={f['relmac_g']:.6f} "
          f"relmac_fuse_g={f['relmac_fuse_g']:.6f} -> {cfg.output.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(f"{args.checkpoint}: {exc}", EXIT_CONFIG) from exc
    if args.config:
        cfg = load_config(args.config)
    elif "config" in meta:
        cfg = from_dict(meta["config"])
    else:
        raise CliError("eval needs --config (checkpoint carries no config)", EXIT_CONFIG)
    cfg = _apply_flags(cfg, args)
    _, test = _load_data(cfg)
    gated = model.is_gated()
    topk = cfg.model.gate_policy == "topk" and gated
    ev = evaluate(model, test, args.theta, r_min=cfg.schedule.r_min,
                  topk_floor=cfg.schedule.topk_floor,
                  mode="topk" if topk else "hard", topk=cfg.model.topk_k)
    row = {"accuracy": ev.accuracy,
           "alpha_p": [u.alpha_p for u in ev.usages],
           "alpha_g": [u.alpha_g for u in ev.usages],
           "rho": [u.rho for u in ev.usages]}
    row["relmac_g"] = relmac(ev.usages, "g")
    row["relmac_fuse_g"] = relmac_fuse(ev.usages, "g")
    cols = ("accuracy", "alpha_p", "alpha_g", "rho", "relmac_g", "relmac_fuse_g")
    sys.stdout.write(emit_report([row], args.format, columns=cols))
    return EXIT_OK


def _variant_config(config_dir: Path, variant: str) -> RunConfig:
    own = config_dir / f"{variant}.json"
    if own.exists():
        cfg = load_config(own)
        if cfg.variant != variant:
            raise ConfigError(f"{own}: variant is {cfg.variant!r}, expected {variant!r}")
        return cfg
    base = config_dir / "base.json"
    if base.exists():
        return with_overrides(load_config(base), variant=variant)
    raise ConfigError(f"no {own.name} or base.json in {config_dir}")


def cmd_compare(args) -> int:
    config_dir = Path(args.config_dir)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise CliError(f"--variants: unknown variant(s) {', '.join(bad)}", EXIT_CONFIG)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out_root = Path(args.out_dir or "runs/compare")
    runs: list[RunSummary] = []
    data_cache: dict[str, tuple] = {}
    for variant in variants:
        try:
            cfg = _variant_config(config_dir, variant)
        except ConfigError as exc:
            print(f"[{variant}] config error: {exc}", file=sys.stderr)
            runs.append(RunSummary(variant, -1, [], 0, float("nan"), float("nan"),
                                   float("nan"), float("nan"), [], status="config error"))
            continue
        for seed in seeds or [cfg.train.seed]:
            run_cfg = with_overrides(
                cfg, train={"seed": seed},
                output={"out_dir": str(out_root / variant / f"seed{seed}")},
                **({"data": {"data_dir": args.data_dir}} if args.data_dir else {}))
            key = json.dumps(run_cfg.to_dict()["data"], sort_keys=True)
            try:
                if key not in data_cache:
                    data_cache[key] = _load_data(run_cfg)
                s = run_training(run_cfg, data_cache[key])
                runs.append(summarize_run(variant, seed, s["dims"], s["gate_params"],
                                          s["final"], s["wall_time_s_nonnormative"]))
            except CliError as exc:
                # one failed variant does not stop the others
                print(f"[{variant} seed {seed}] {exc}", file=sys.stderr)
                status = "collapse abort" if exc.code == EXIT_COLLAPSE else "failed"
                runs.append(RunSummary(variant, seed, list(run_cfg.model.dims), 0,
                                       float("nan"), float("nan"), float("nan"),
                                       float("nan"), [], status=status))
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "comparison.csv").write_text(comparison_report(runs, "csv"))
    (out_root / "pareto.csv").write_text(pareto_csv(runs))
    sys.stdout.write(comparison_report(runs, args.format))
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_jsonl(args.metrics)
    if not records:
        raise CliError(f"{args.metrics}: no records", EXIT_CONFIG)
    text = emit_report(records, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gatednet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one variant from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", help="MNIST directory (else config, else $GATEDNET_DATA_DIR)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="hard-gate evaluation of a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="defaults to the config stored in the checkpoint")
    p.add_argument("--data-dir")
    p.add_argument("--theta", type=float, help="override every gate threshold")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train several variants and tabulate them")
    p.add_argument("--config-dir", required=True,
                   help="holds <variant>.json files, or a base.json shared by all variants")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--seeds", help="comma-separated seeds; rows report mean and std")
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render a metrics.jsonl file")
    p.add_argument("--metrics", required=True)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
