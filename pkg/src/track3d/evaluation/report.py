"""Evaluation reports: ``[section]`` text blocks plus one JSON line per section."""

from collections.abc import Mapping
from pathlib import Path

from ..errors import DataError
from ..utils.files import atomic_write_text, read_jsonl, write_jsonl

AGGREGATE = "aggregate"
REPORT_TEXT = "report.txt"
REPORT_JSONL = "report.jsonl"


def format_report(
    per_sequence: Mapping[str, Mapping[str, float]], aggregate: Mapping[str, float]
) -> str:
    sections = {**per_sequence, AGGREGATE: aggregate}
    blocks = []
    for name, metrics in sections.items():
        lines = [f"[{name}]"]
        lines.extend(f"{key} = {value:.6f}" for key, value in sorted(metrics.items()))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_report(
    out_dir: str | Path,
    per_sequence: Mapping[str, Mapping[str, float]],
    aggregate: Mapping[str, float],
) -> tuple[Path, Path]:
    """Write ``report.txt`` and ``report.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    text_path = out_dir / REPORT_TEXT
    jsonl_path = out_dir / REPORT_JSONL
    atomic_write_text(text_path, format_report(per_sequence, aggregate))
    records = [{"sequence": name, "metrics": dict(m)} for name, m in per_sequence.items()]
    records.append({"sequence": AGGREGATE, "metrics": dict(aggregate)})
    write_jsonl(jsonl_path, records)
    return text_path, jsonl_path


def read_report(path: str | Path) -> dict[str, dict[str, float]]:
    """Parse ``report.jsonl`` back into ``{section: {metric: value}}``.

    Raises:
        DataError: If a record lacks its section name or metrics
    """
    report: dict[str, dict[str, float]] = {}
    for record in read_jsonl(path):
        if "sequence" not in record or not isinstance(record.get("metrics"), dict):
            raise DataError(f"Malformed report record in {path}: {record}")
        report[str(record["sequence"])] = {k: float(v) for k, v in record["metrics"].items()}
    return report
