"""
Report writers: reports.json (sorted by check name) and summary.csv
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from models import CheckReport
from utils.helpers import format_float

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["name", "reference", "kind", "passed", "lhs", "rhs", "slack", "tolerance", "inputs_digest"]


def _clean(value: Any) -> Any:
    """Replace non-finite floats by strings so the JSON stays standard"""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def sort_reports(reports: Iterable[CheckReport]) -> List[CheckReport]:
    return sorted(reports, key=lambda r: r.name)


def report_payload(report: CheckReport, config_digest: str = "") -> Dict[str, Any]:
    payload = report.model_dump(mode="json")
    payload["config_digest"] = config_digest
    return _clean(payload)


def write_reports(
    reports: Iterable[CheckReport],
    output_dir: Path,
    config_digest: str = "",
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write reports.json and summary.csv into output_dir

    Args:
        reports: Check reports of one run
        output_dir: Target directory (created if missing)
        config_digest: Digest of the resolved run configuration
        extra: Additional top-level results (e.g. the W2 value of a ``w2`` run)

    Returns:
        Path of reports.json
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ordered = sort_reports(reports)

    document = {
        "config_digest": config_digest,
        "passed": all(r.passed for r in ordered),
        "reports": [report_payload(r, config_digest) for r in ordered],
    }
    if extra:
        document["results"] = _clean(extra)
    json_path = output_dir / "reports.json"
    json_path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")

    with open(output_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in ordered:
            writer.writerow([
                r.name, r.reference, r.kind.value, "PASS" if r.passed else "FAIL",
                format_float(r.lhs), format_float(r.rhs), format_float(r.slack), format_float(r.tolerance),
                r.inputs_digest,
            ])
    logger.info(f"Wrote {len(ordered)} reports to {output_dir}")
    return json_path


def print_summary(reports: Iterable[CheckReport]) -> None:
    """One PASS/FAIL line per check on stdout"""
    for r in sort_reports(reports):
        print(r.summary_line())
