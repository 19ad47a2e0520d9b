"""
Report files: the error table and the best-of-k curve as CSV, the full report as JSON.
"""
import io
import json
import logging
from pathlib import Path
from typing import Union

import pandas as pd

from sceneintent.constants import METRICS, SELECTIONS
from sceneintent.exceptions import DataFormatError
from sceneintent.utils import canonical_json

from .harness import BASELINE, FUSED, MetricReport, MinKCurve

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TABLE_NAME = 'table.csv'
REPORT_NAME = 'report.json'
CURVE_NAME = 'curve.csv'

CURVE_COLUMNS = ['k', 'ade_baseline', 'ade_fused', 'fde_baseline', 'fde_fused']
_FLOAT_FORMAT = '%.6f'


def _to_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=_FLOAT_FORMAT, lineterminator='\n')
    return buffer.getvalue()


def table_frame(report: MetricReport) -> pd.DataFrame:
    """
    One row per selection strategy; per metric the baseline, fused and improvement columns.
    """
    improvements = report.improvements()
    rows = []
    for selection in SELECTIONS:
        row = {'selection': selection}
        for metric in METRICS:
            row[f'{metric}_{BASELINE}'] = report.mean(BASELINE, selection, metric)
            row[f'{metric}_{FUSED}'] = report.mean(FUSED, selection, metric)
            row[f'{metric}_improvement_pct'] = improvements[selection][metric]
        rows.append(row)
    return pd.DataFrame(rows)


def render_table_csv(report: MetricReport) -> str:
    return _to_csv(table_frame(report))


def render_curve_csv(curve: MinKCurve) -> str:
    return _to_csv(pd.DataFrame(list(curve.rows()), columns=CURVE_COLUMNS))


def parse_curve_csv(text: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(io.StringIO(text))
    except (ValueError, pd.errors.ParserError) as e:
        raise DataFormatError(f'Cannot parse curve CSV: {e}') from e
    if list(frame.columns) != CURVE_COLUMNS:
        raise DataFormatError(f'Curve CSV has columns {list(frame.columns)}, expected {CURVE_COLUMNS}.')
    return frame


def render_report_json(report: MetricReport) -> str:
    return canonical_json(report.to_dict()) + '\n'


def parse_report_json(text: str, source: str = '<string>') -> MetricReport:
    try:
        return MetricReport.from_dict(json.loads(text))
    except (ValueError, KeyError, TypeError, AttributeError) as e:
        raise DataFormatError(f'Report {source} is not a valid report: {e}') from e


def write_reports(directory: PathLike, report: MetricReport, curve: MinKCurve) -> None:
    base = Path(directory)
    base.mkdir(parents=True, exist_ok=True)
    (base / TABLE_NAME).write_text(render_table_csv(report), encoding='utf-8')
    (base / REPORT_NAME).write_text(render_report_json(report), encoding='utf-8')
    (base / CURVE_NAME).write_text(render_curve_csv(curve), encoding='utf-8')
    logger.info(f"Wrote {TABLE_NAME}, {REPORT_NAME} and {CURVE_NAME} to {base}")


def read_report(path: PathLike) -> MetricReport:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise DataFormatError(f'Cannot read report {path}: {e}') from e
    return parse_report_json(text, str(path))
