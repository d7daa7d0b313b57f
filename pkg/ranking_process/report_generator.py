"""
Report generator: writes stage tables as CSV/JSON and renders a Markdown run summary.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from jinja2 import Template

from . import __version__
from .schemas import ExperimentReport

SUMMARY_TEMPLATE = """# {{ name }}: {{ stage }}

- seed: {{ seed }}
- version: {{ version }}
{% if passed is not none %}- verdict: {{ "PASS" if passed else "FAIL" }}
{% endif %}
{% if scalars %}
## Scalars

| quantity | value |
|---|---|
{% for key, value in scalars.items() %}| {{ key }} | {{ value }} |
{% endfor %}
{% endif %}
## Tables

{% for table in tables %}- `{{ table.file }}` ({{ table.rows }} rows): {{ table.columns | join(", ") }}
{% endfor %}
{% if failures %}
## Failed records

| quantity | n | t | x | analytic | empirical | threshold |
|---|---|---|---|---|---|---|
{% for r in failures %}| {{ r.quantity }} | {{ r.n }} | {{ r.t }} | {{ r.x }} | {{ r.analytic }} | {{ r.empirical }} | {{ r.threshold }} |
{% endfor %}
{% endif %}
"""


def format_cell(value) -> str:
    """Floats with 17 significant digits; missing values as ``n/a``."""
    if value is None:
        return "n/a"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, float):
        if value != value:
            return "n/a"
        return f"{value:.17g}"
    return str(value)


def _json_cell(value):
    if isinstance(value, float) and value != value:
        return None
    if hasattr(value, "item"):
        return value.item()
    return value


class ReportGenerator:
    """
    Writes experiment outputs into one directory.

    Args:
        out_dir (str or Path): Output directory, created if missing.
        fmt (str): ``csv`` writes CSV tables plus JSON mirrors; ``json`` writes JSON only.
    """

    def __init__(self, out_dir, fmt: str = "csv"):
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def _metadata(self, name, stage, seed, extra=None):
        meta = {"experiment": name, "stage": stage, "seed": seed, "version": __version__}
        meta.update(extra or {})
        return meta

    def write_table(self, table: str, frame: pd.DataFrame, metadata: Dict) -> List[Path]:
        """
        Write one table.

        The CSV starts with ``# key: value`` metadata lines followed by a
        header row; the JSON mirror carries the same metadata and rows.
        """
        written = []
        if self.fmt == "csv":
            path = self.out_dir / f"{table}.csv"
            header = "".join(f"# {k}: {format_cell(v)}\n" for k, v in metadata.items())
            body = frame.map(format_cell).to_csv(index=False, lineterminator="\n")
            path.write_text(header + body, encoding="utf-8")
            written.append(path)
        path = self.out_dir / f"{table}.json"
        rows = [{k: _json_cell(v) for k, v in row.items()} for row in frame.to_dict(orient="records")]
        path.write_text(json.dumps({"metadata": metadata, "rows": rows}, indent=2) + "\n", encoding="utf-8")
        written.append(path)
        logging.info(f"Wrote table {table} ({len(frame)} rows)")
        return written

    def write_stage(self, name: str, stage: str, seed: int, result: Dict) -> List[Path]:
        """Write every table of a stage result, plus its samples and summary."""
        written = []
        metadata = self._metadata(name, stage, seed)
        for table, frame in result.get("tables", {}).items():
            written += self.write_table(table, frame, metadata)
        for n, samples in result.get("samples", {}).items():
            extra = {"n": n, "mode": samples.mode.value, "sample_seed": samples.seed}
            written += self.write_table(f"samples_n{n}", samples.to_frame(), self._metadata(name, stage, seed, extra))
        report: Optional[ExperimentReport] = result.get("report")
        if report is not None:
            written.append(self.write_report(report))
        written.append(self.write_summary(name, stage, seed, result))
        return written

    def write_report(self, report: ExperimentReport) -> Path:
        path = self.out_dir / "report.json"
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logging.info(f"Report written to {path}")
        return path

    def write_summary(self, name: str, stage: str, seed: int, result: Dict) -> Path:
        """Render ``summary_<stage>.md`` with jinja2."""
        ext = "csv" if self.fmt == "csv" else "json"
        tables = [
            {"file": f"{table}.{ext}", "rows": len(frame), "columns": list(frame.columns)}
            for table, frame in result.get("tables", {}).items()
        ]
        report: Optional[ExperimentReport] = result.get("report")
        failures = []
        if report is not None:
            failures = [
                {k: format_cell(v) for k, v in r.model_dump().items()}
                for r in report.records if not r.passed
            ]
        content = Template(SUMMARY_TEMPLATE).render(
            name=name,
            stage=stage,
            seed=seed,
            version=__version__,
            passed=None if report is None else report.passed,
            scalars={k: format_cell(v) for k, v in result.get("scalars", {}).items()},
            tables=tables,
            failures=failures,
        )
        path = self.out_dir / f"summary_{stage}.md"
        path.write_text(content, encoding="utf-8")
        return path
