"""Ablation harness: train one config per table row and tabulate the metrics."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .data import Episode, read_dataset
from .model import TrainConfig
from .train import Trainer, prepare

SUITES: dict[str, list[tuple[str, dict]]] = {
    # joint training vs. captioning alone vs. signals as input tokens
    "mtl": [("single", {"mode": "single"}), ("single_plus", {"mode": "single_plus"}),
            ("joint", {"mode": "joint"})],
    "signals": [("speed", {"channels": ["speed"]}), ("course", {"channels": ["course"]}),
                ("speed+course", {"channels": ["speed", "course"]})],
    "mask": [("no_cross", {"mask_variant": "no_cross"}), ("swapped_cross", {"mask_variant": "swapped_cross"}),
             ("default", {"mask_variant": "default"}), ("narration_only", {"mode": "narration_only"}),
             ("reasoning_only", {"mode": "reasoning_only"})],
    "frames": [(f"T={t}", {"frames": t}) for t in (2, 4, 8, 16, 32)],
}

# pairs (row, baseline row) whose CIDEr difference is reported, never asserted
CLAIMS = {
    "mtl": [("joint", "single"), ("joint", "single_plus")],
    "signals": [("speed+course", "speed"), ("speed+course", "course")],
    "mask": [("default", "no_cross"), ("default", "swapped_cross")],
    "frames": [("T=32", "T=2")],
}


def split_episodes(episodes: Sequence[Episode], eval_fraction: float = 0.25) -> tuple[list, list]:
    n_eval = max(1, int(round(len(episodes) * eval_fraction))) if len(episodes) > 1 else 0
    cut = len(episodes) - n_eval
    return list(episodes[:cut]), list(episodes[cut:] or episodes)


def resolve_suites(suite: str) -> list[str]:
    if suite == "all":
        return list(SUITES)
    names = [s.strip() for s in suite.split(",")]
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown ablation suite(s) {unknown}; choose from {sorted(SUITES)} or 'all'")
    return names


def run_ablation(suite: str, data_root, base: TrainConfig | None = None, eval_fraction: float = 0.25) -> dict:
    base = base or TrainConfig()
    episodes = read_dataset(data_root)
    train_eps, eval_eps = split_episodes(episodes, eval_fraction)
    report: dict = {"base_config": base.to_dict(), "n_train": len(train_eps), "n_eval": len(eval_eps),
                    "suites": {}}
    for name in resolve_suites(suite):
        rows = []
        for row_name, overrides in SUITES[name]:
            cfg = base.replace(**overrides)
            trainer = Trainer.from_episodes(cfg, train_eps)
            trainer.fit(prepare(train_eps, data_root, cfg, trainer.vocab))
            metrics = trainer.evaluate(prepare(eval_eps, data_root, cfg, trainer.vocab))
            metrics.pop("note", None)
            rows.append({"name": row_name, "overrides": overrides, "metrics": metrics,
                         "final_loss": trainer.history[-1]})
        report["suites"][name] = {"rows": rows, "claims": _claims(name, rows)}
    return report


def _cider(row: dict, segment: str):
    return row["metrics"].get(segment, {}).get("C")


def _claims(suite: str, rows: list[dict]) -> list[dict]:
    by_name = {r["name"]: r for r in rows}
    out = []
    for a, b in CLAIMS.get(suite, []):
        entry = {"row": a, "baseline": b}
        for seg in ("narration", "reasoning"):
            ca, cb = _cider(by_name[a], seg), _cider(by_name[b], seg)
            entry[f"delta_C_{seg}"] = None if ca is None or cb is None else round(ca - cb, 4)
        out.append(entry)
    return out


def format_table(report: dict) -> str:
    """Markdown tables, one per suite: rows are configs, columns are metrics."""
    lines = []
    for name, body in report["suites"].items():
        cols: list[tuple[str, str]] = []
        for row in body["rows"]:
            for group, vals in row["metrics"].items():
                for key in vals:
                    if (group, key) not in cols:
                        cols.append((group, key))
        lines.append(f"### {name}")
        lines.append("| config | " + " | ".join(f"{g[:4]}.{k}" for g, k in cols) + " |")
        lines.append("|---" * (len(cols) + 1) + "|")
        for row in body["rows"]:
            cells = []
            for g, k in cols:
                v = row["metrics"].get(g, {}).get(k)
                cells.append("-" if v is None else f"{v:.4f}")
            lines.append(f"| {row['name']} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def write_report(report: dict, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    (out / "ablation.md").write_text(format_table(report), encoding="utf-8")
