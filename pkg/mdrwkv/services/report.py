"""Plain-text and JSON renderings of metrics and ablation results."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from jinja2 import Environment, StrictUndefined

from mdrwkv.models.schemas import AblationRow, MetricsReport

logger = logging.getLogger(__name__)

_env = Environment(undefined=StrictUndefined, trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
_env.filters["num"] = lambda value, digits=2: "n/a" if value is None else f"{value:.{digits}f}"


METRICS_TEMPLATE = _env.from_string(
    """\
{{ "%-16s" | format("Class") }} {{ "%8s" | format("DSC") }} {{ "%8s" | format("HD95") }}
{{ "-" * 34 }}
{% for c in report.classes %}
{{ "%-16s" | format(c.name or ("class " ~ c.cls)) }} {{ "%8s" | format((c.dice * 100) | num) }} {{ "%8s" | format(c.hd95 | num) }}
{% endfor %}
{{ "-" * 34 }}
{{ "%-16s" | format("Mean") }} {{ "%8s" | format((report.mean_dice * 100) | num) }} {{ "%8s" | format(report.mean_hd95 | num) }}
samples: {{ report.num_samples }}  tta: {{ "on" if report.tta else "off" }}
"""
)

ABLATION_TEMPLATE = _env.from_string(
    """\
{{ "%-6s" | format("Ver") }} {{ "%-4s" | format("SK") }} {{ "%-6s" | format("Shift") }} {{ "%-6s" | format("Fusion") }} {{ "%10s" | format("Params") }} {{ "%8s" | format("DSC") }} {{ "%8s" | format("HD95") }}
{{ "-" * 54 }}
{% for r in rows %}
{{ "%-6s" | format(r.variant) }} {{ "%-4s" | format(mark(r.use_sk_attention)) }} {{ "%-6s" | format(mark(r.use_deformable_shift)) }} {{ "%-6s" | format(mark(r.use_cross_stage_fusion)) }} {{ "%10d" | format(r.param_count) }} {{ "%8s" | format(dice(r.mean_dice)) }} {{ "%8s" | format(r.mean_hd95 | num) }}
{% endfor %}
"""
)


def _mark(flag: bool) -> str:
    return "x" if flag else "-"


def _dice_percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value * 100:.2f}"


def render_metrics_text(report: MetricsReport) -> str:
    return METRICS_TEMPLATE.render(report=report)


def render_ablation_text(rows: Sequence[AblationRow]) -> str:
    return ABLATION_TEMPLATE.render(rows=rows, mark=_mark, dice=_dice_percent)


def write_metrics(report: MetricsReport, directory: Path, stem: str = "metrics") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{stem}.json"
    text_path = directory / f"{stem}.txt"
    json_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    text_path.write_text(render_metrics_text(report), encoding="utf-8")
    logger.info(f"Metrics written: {json_path}, {text_path}")
    return json_path, text_path


def write_ablation(rows: Sequence[AblationRow], directory: Path) -> tuple[Path, Path]:
    directory = Path(directory)
    json_path = directory / "ablation.json"
    text_path = directory / "ablation.txt"
    payload = [row.model_dump(mode="json") for row in rows]
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    text_path.write_text(render_ablation_text(rows), encoding="utf-8")
    logger.info(f"Ablation table written: {text_path}")
    return json_path, text_path
