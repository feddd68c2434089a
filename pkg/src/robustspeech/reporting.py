"""Loss-curve plots from metrics logs and a plain-text ablation table."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError

logger = logging.getLogger(__name__)

CURVE_KEYS = ("L_c", "L_d", "L_r", "total", "ctc")


def read_metrics(path) -> list:
    """Parse a metrics JSONL file, skipping malformed lines with a warning."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"metrics log not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict) or "step" not in record:
                raise ValueError("record has no step")
            records.append(record)
        except (json.JSONDecodeError, ValueError) as exc:
            logger.warning("%s line %d malformed, skipped: %s", path, lineno, exc)
    if not records:
        raise DataError(f"metrics log {path} contains no readable records")
    return records


def plot_metrics(metrics_path, out_dir) -> list:
    records = read_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in records]
    written = []
    present = [k for k in CURVE_KEYS if any(k in r for r in records)]
    if not present:
        raise DataError("no plottable keys in the metrics log")
    fig, axes = plt.subplots(len(present), 1, figsize=(7, 2.2 * len(present)),
                             sharex=True, squeeze=False)
    for ax, key in zip(axes[:, 0], present):
        values = [r.get(key) for r in records]
        pairs = [(s, v) for s, v in zip(steps, values) if v is not None]
        ax.plot([p[0] for p in pairs], [p[1] for p in pairs], linewidth=1.0)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("step")
    fig.tight_layout()
    target = out_dir / "losses.png"
    fig.savefig(target, dpi=110)
    plt.close(fig)
    written.append(target)
    return written


def render_ablation_table(rows: list) -> str:
    header = ["cell", "attach", "bottleneck", "WER", "recon grad vs transformer"]
    body = []
    for row in rows:
        if "error" in row:
            wer_text, grad_text = "failed", row["error"][:40]
        else:
            wer_text = f"{row['wer']:.4f}"
            grad_text = f"{row['recon_grad_vs_transformer']:.3e}"
        body.append([row["cell"], row["recon_attach"], row["recon_bottleneck"],
                     wer_text, grad_text])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_ablation_table(report_path, out_dir) -> Path:
    report_path = Path(report_path)
    if not report_path.exists():
        raise DataError(f"ablation report not found: {report_path}")
    rows = json.loads(report_path.read_text())
    if not rows:
        raise DataError("ablation report is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "ablation_table.txt"
    target.write_text(render_ablation_table(rows))
    return target
