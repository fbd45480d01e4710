"""
Evaluation report files: the baseline comparison CSV and the per-sequence
JSONL detail written next to it.
"""
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

from teleop.metrics import MetricsReport
from teleop.schemas import ReportRow

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "method", "state_dim", "sim2real", "succ", "g_mpjpe", "mpjpe", "acc", "vel",
    "succ_g_mpjpe", "succ_mpjpe", "succ_acc", "succ_vel", "num_sequences", "config_hash",
]
OPTIONAL_COLUMNS = ["fraction"]


class ReportValidationError(Exception):
    """Custom exception for report CSV validation errors"""
    pass


def _optional(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else round(float(value), 6)


def report_row(report: MetricsReport, state_dim: int, sim2real: bool, config_hash: str = "",
               fraction: Optional[float] = None) -> Dict:
    """One CSV row for a metrics report; the successful split is empty when nothing succeeded"""
    everything = report.split("all")
    successful = report.split("successful")
    row = ReportRow(
        method=report.method,
        state_dim=state_dim,
        sim2real=sim2real,
        succ=round(everything.succ, 6),
        g_mpjpe=_optional(everything.g_mpjpe) or 0.0,
        mpjpe=_optional(everything.mpjpe) or 0.0,
        acc=_optional(everything.acc) or 0.0,
        vel=_optional(everything.vel) or 0.0,
        succ_g_mpjpe=_optional(successful.g_mpjpe),
        succ_mpjpe=_optional(successful.mpjpe),
        succ_acc=_optional(successful.acc),
        succ_vel=_optional(successful.vel),
        num_sequences=everything.num_sequences,
        config_hash=config_hash,
        fraction=fraction,
    )
    return row.model_dump()


class ReportHandler:
    REQUIRED_COLUMNS = set(REPORT_COLUMNS)
    ALL_COLUMNS = REQUIRED_COLUMNS | set(OPTIONAL_COLUMNS)

    @staticmethod
    def parse_and_validate(content: str) -> Tuple[List[Dict], List[str]]:
        """
        Parse and validate report CSV content.

        Returns:
            Tuple of (parsed_rows, warnings)

        Raises:
            ReportValidationError: If the CSV is empty or any row is invalid
        """
        warnings = []
        reader = csv.DictReader(io.StringIO(content))

        if not reader.fieldnames:
            raise ReportValidationError("Report CSV is empty or has no headers")

        headers = set(reader.fieldnames)
        missing_required = ReportHandler.REQUIRED_COLUMNS - headers
        if missing_required:
            raise ReportValidationError(f"Missing required columns: {', '.join(sorted(missing_required))}")

        unknown_columns = headers - ReportHandler.ALL_COLUMNS
        if unknown_columns:
            warnings.append(f"Unknown columns will be ignored: {', '.join(sorted(unknown_columns))}")

        parsed_rows = []
        row_num = 1
        for row_dict in reader:
            row_num += 1

            if not any(row_dict.values()):
                warnings.append(f"Row {row_num}: Empty row skipped")
                continue

            try:
                filtered_row = {k: v for k, v in row_dict.items() if k in ReportHandler.ALL_COLUMNS}
                # Blank optional cells mean "not available"
                filtered_row = {k: (None if v == "" else v) for k, v in filtered_row.items()}
                if filtered_row.get("config_hash") is None:
                    filtered_row["config_hash"] = ""
                row = ReportRow(**filtered_row)
                parsed_rows.append(row.model_dump())
            except ValidationError as e:
                errors = "; ".join([f"{err['loc'][0] if err['loc'] else 'row'}: {err['msg']}" for err in e.errors()])
                raise ReportValidationError(f"Row {row_num}: {errors}")

        if not parsed_rows:
            raise ReportValidationError("No report rows found in CSV")

        return parsed_rows, warnings

    @staticmethod
    def to_csv_string(rows: List[Dict]) -> str:
        """Rows back to CSV; the fraction column is written only when some row has one"""
        if not rows:
            return ""

        fieldnames = list(REPORT_COLUMNS)
        if any(row.get("fraction") is not None for row in rows):
            fieldnames += OPTIONAL_COLUMNS

        output = io.StringIO()
        writer = csv.DictWriter(output, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in fieldnames})
        return output.getvalue()


def read_report(path) -> List[Dict]:
    path = Path(path)
    try:
        content = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ReportValidationError(f"Report not found: {path}")
    except UnicodeDecodeError:
        raise ReportValidationError(f"Report must be UTF-8 encoded: {path}")
    rows, warnings = ReportHandler.parse_and_validate(content)
    for warning in warnings:
        logger.warning(f"{path}: {warning}")
    return rows


def write_report(rows: List[Dict], path, append: bool = False) -> List[Dict]:
    """
    Write report rows to path. With append, rows of an existing report are
    kept in front of the new ones.

    Returns:
        All rows now in the file
    """
    path = Path(path)
    if append and path.exists():
        rows = read_report(path) + list(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ReportHandler.to_csv_string(rows))
    logger.info(f"Wrote {len(rows)} report rows to {path}")
    return rows


def write_sequence_detail(report: MetricsReport, path) -> None:
    """JSON lines, one per sequence in id order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for row in sorted(report.rows, key=lambda r: r.id):
        data = row.as_dict()
        data["method"] = report.method
        lines.append(json.dumps(data, sort_keys=True, separators=(",", ":")))
    path.write_text("".join(line + "\n" for line in lines))
