"""Metrics sinks and comparison tables.

Per-epoch metrics go to JSONL (full float precision, sorted keys, one object
per line).  Human-facing reports use fixed 6-decimal formatting.  Wall time
is carried along for information only and never enters a comparison.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path

from .budget import count_params_flops

# Column order for per-epoch record reports (csv and table formats).
RECORD_COLUMNS = (
    "epoch", "phase", "lambda_g", "tau", "theta", "keep_target",
    "task_loss", "gate_penalty", "objective",
    "alpha_p", "alpha_g", "rho",
    "relmac_p", "relmac_g", "relmac_fuse_p", "relmac_fuse_g",
    "compute_proxy_p", "compute_proxy_g",
    "train_acc", "val_acc", "rewires", "steps", "collapse_a", "collapse_b",
)
RECORD_CSV_HEADER = ",".join(RECORD_COLUMNS)

COMPARISON_COLUMNS = (
    "model", "seeds", "accuracy", "accuracy_std",
    "param_reduction", "flops_reduction", "flops_reduction_fuse",
    "params", "gate_params", "flops",
    "relmac_p", "relmac_g", "relmac_fuse_g", "rho_mean",
    "wall_time_s_nonnormative", "status",
)
COMPARISON_CSV_HEADER = ",".join(COMPARISON_COLUMNS)

PARETO_COLUMNS = ("model", "seed", "accuracy", "compute_saving", "relmac_g", "relmac_fuse_g")
PARETO_CSV_HEADER = ",".join(PARETO_COLUMNS)

FORMATS = ("csv", "jsonl", "table")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _as_row(rec) -> dict:
    if is_dataclass(rec):
        return asdict(rec)
    if isinstance(rec, dict):
        return rec
    raise TypeError(f"cannot report a {type(rec).__name__}")


def jsonl_line(rec) -> str:
    """Full-precision JSON line; ``repr`` round-trips floats so lines are byte-stable."""
    return json.dumps(_as_row(rec), sort_keys=True, allow_nan=True)


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _table(rows: list[dict], columns) -> str:
    cells = [list(columns)] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if n else c.ljust(w) for c, w in zip(row, widths)))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _round(value):
    if isinstance(value, float) and math.isfinite(value):
        return round(value, 6)
    if isinstance(value, list):
        return [_round(v) for v in value]
    return value


def render(rows: list[dict], fmt: str, columns) -> str:
    if fmt == "csv":
        return _csv(rows, columns)
    if fmt == "table":
        return _table(rows, columns)
    if fmt == "jsonl":
        return "".join(json.dumps({c: _round(r.get(c)) for c in columns}, sort_keys=True) + "\n"
                       for r in rows)
    raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")


def emit_report(records, fmt: str = "csv", path=None, columns=RECORD_COLUMNS) -> str:
    """Render per-epoch records; write to ``path`` when given (OSError propagates)."""
    records = list(records)
    if not records:
        raise ValueError("emit_report needs at least one record")
    text = render([_as_row(r) for r in records], fmt, columns)
    if path is not None:
        Path(path).write_text(text)
    return text


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------------ comparison


@dataclass
class RunSummary:
    """Final-epoch numbers for one (variant, seed) run."""
    model: str
    seed: int
    dims: list[int]
    gate_params: int
    accuracy: float
    relmac_p: float
    relmac_g: float
    relmac_fuse_g: float
    rho: list[float]
    wall_time_s: float = float("nan")
    status: str = "ok"


def summarize_run(variant: str, seed: int, dims, gate_params: int, final: dict,
                  wall_time_s: float = float("nan")) -> RunSummary:
    return RunSummary(variant, seed, list(dims), int(gate_params), float(final["val_acc"]),
                      float(final["relmac_p"]), float(final["relmac_g"]),
                      float(final["relmac_fuse_g"]), list(final["rho"]), wall_time_s)


def _mean_std(xs: list[float]) -> tuple[float, float]:
    m = sum(xs) / len(xs)
    if len(xs) < 2:
        return m, 0.0
    return m, math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def comparison_row(runs: list[RunSummary]) -> dict:
    """Aggregate one variant over seeds.  Accuracy is in percent (mean, sample std)."""
    ok = [r for r in runs if r.status == "ok"]
    head = runs[0]
    if not ok:
        return {"model": head.model, "seeds": ";".join(str(r.seed) for r in runs),
                "status": head.status}
    dense_params, dense_flops, _ = count_params_flops(head.dims)
    params = dense_params + head.gate_params
    acc, acc_std = _mean_std([100.0 * r.accuracy for r in ok])
    rp = _mean_std([r.relmac_p for r in ok])[0]
    rg = _mean_std([r.relmac_g for r in ok])[0]
    rf = _mean_std([r.relmac_fuse_g for r in ok])[0]
    rho = [sum(r.rho) / len(r.rho) for r in ok]
    wall = [r.wall_time_s for r in ok if not math.isnan(r.wall_time_s)]
    return {
        "model": head.model,
        "seeds": ";".join(str(r.seed) for r in ok),
        "accuracy": acc,
        "accuracy_std": acc_std,
        # masks zero weights but keep them stored, so only removed storage would count
        "param_reduction": 100.0 * max(0.0, 1.0 - params / dense_params),
        "flops_reduction": 100.0 * (1.0 - rg),
        "flops_reduction_fuse": 100.0 * (1.0 - rf),
        "params": params,
        "gate_params": head.gate_params,
        "flops": int(round(dense_flops * rf)),
        "relmac_p": rp,
        "relmac_g": rg,
        "relmac_fuse_g": rf,
        "rho_mean": sum(rho) / len(rho),
        "wall_time_s_nonnormative": sum(wall) / len(wall) if wall else None,
        "status": "ok" if len(ok) == len(runs) else f"{len(runs) - len(ok)} failed",
    }


def comparison_report(runs: list[RunSummary], fmt: str = "csv") -> str:
    if not runs:
        raise ValueError("comparison needs at least one run")
    order: list[str] = []
    groups: dict[str, list[RunSummary]] = {}
    for r in runs:
        if r.model not in groups:
            order.append(r.model)
            groups[r.model] = []
        groups[r.model].append(r)
    rows = [comparison_row(groups[m]) for m in order]
    return render(rows, fmt, COMPARISON_COLUMNS)


def pareto_csv(runs: list[RunSummary]) -> str:
    """Accuracy against compute saving ``1 - RelMAC``, one row per run."""
    rows = [{"model": r.model, "seed": r.seed, "accuracy": r.accuracy,
             "compute_saving": 1.0 - r.relmac_fuse_g, "relmac_g": r.relmac_g,
             "relmac_fuse_g": r.relmac_fuse_g}
            for r in runs if r.status == "ok"]
    return _csv(rows, PARETO_COLUMNS)
