"""
Turning external data into profiles: metric tables (one ranking per numeric
column) and PrefLib strict-order-complete (soc) files.
"""
import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.exceptions import IngestionError, InvalidInputError, UnsupportedFormatError
from rankings.kernels import Profile

logger = logging.getLogger(__name__)

DIRECTIONS = {'asc': 'ascending', 'ascending': 'ascending', 'desc': 'descending', 'descending': 'descending'}


@dataclass(frozen=True)
class MetricTable:
    labels: tuple
    columns: tuple
    values: np.ndarray

    @property
    def n(self):
        return len(self.labels)

    @property
    def m(self):
        return len(self.columns)


def _parse_cell(raw, row, column):
    text = (raw or '').strip()
    if not text:
        raise IngestionError('missing value', row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise IngestionError(f"non-numeric value {text!r}", row=row, column=column) from None
    if math.isnan(value):
        raise IngestionError('missing value', row=row, column=column)
    return value


def read_metric_table(path) -> MetricTable:
    """CSV with a header row; first column is the item label, the rest numeric."""
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError('empty metric table') from None
        if len(header) < 2:
            raise IngestionError('metric table needs a label column and at least one metric', row=1)
        columns = tuple(name.strip() for name in header[1:])
        labels, rows = [], []
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} cells, found {len(row)}", row=row_number)
            labels.append(row[0].strip())
            rows.append([_parse_cell(cell, row_number, columns[k]) for k, cell in enumerate(row[1:])])
    if not rows:
        raise IngestionError('metric table has no item rows')
    return MetricTable(labels=tuple(labels), columns=columns, values=np.array(rows, dtype=np.float64))


def normalize_directions(directions, count):
    if isinstance(directions, str):
        directions = [part for part in directions.split(',') if part.strip()]
    resolved = []
    for raw in directions:
        key = str(raw).strip().lower()
        if key not in DIRECTIONS:
            raise InvalidInputError(f"direction must be asc or desc, got {raw!r}")
        resolved.append(DIRECTIONS[key])
    if len(resolved) != count:
        raise InvalidInputError(f"{len(resolved)} directions given for {count} metric columns")
    return resolved


def rankings_from_metric_table(table: MetricTable, directions) -> Profile:
    """One ranking per column; ties keep ascending row order."""
    directions = normalize_directions(directions, table.m)
    values = np.asarray(table.values, dtype=np.float64)
    if np.isnan(values).any():
        row, column = np.argwhere(np.isnan(values))[0]
        raise IngestionError('missing value', row=int(row) + 2, column=table.columns[column])
    rankings = []
    for column, direction in enumerate(directions):
        sign = -1.0 if direction == 'descending' else 1.0
        keyed = values[:, column] * sign
        rankings.append(tuple(sorted(range(table.n), key=lambda item: (keyed[item], item))))
    return Profile(rankings=tuple(rankings), item_labels=table.labels,
                   provenance={'source': 'features-csv', 'columns': list(table.columns),
                               'directions': directions})


_SOC_LINE = re.compile(r'^\s*(\d+)\s*:\s*(.+?)\s*$')
_ALTERNATIVE_NAME = re.compile(r'^#\s*ALTERNATIVE NAME\s+(\d+)\s*:\s*(.*)$', re.IGNORECASE)
_ALTERNATIVE_COUNT = re.compile(r'^#\s*NUMBER ALTERNATIVES\s*:\s*(\d+)\s*$', re.IGNORECASE)


def parse_soc(text, source='<soc>') -> Profile:
    """Parse PrefLib soc data: `count: a,b,c` lines with 1-based alternatives."""
    names, declared_n = {}, None
    orders = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            if match := _ALTERNATIVE_NAME.match(line):
                names[int(match.group(1))] = match.group(2).strip()
            elif match := _ALTERNATIVE_COUNT.match(line):
                declared_n = int(match.group(1))
            continue
        match = _SOC_LINE.match(line)
        if not match:
            raise IngestionError(f"malformed preference line {line!r}", row=line_number)
        if '{' in match.group(2) or '}' in match.group(2):
            raise UnsupportedFormatError('tied alternatives are not supported', row=line_number)
        try:
            order = [int(token) - 1 for token in match.group(2).split(',')]
        except ValueError:
            raise IngestionError(f"non-integer alternative in {line!r}", row=line_number) from None
        orders.append((line_number, int(match.group(1)), order))
    if not orders:
        raise IngestionError(f"no preference lines in {source}")
    n = declared_n if declared_n is not None else max(max(order) for _, _, order in orders) + 1
    rankings = []
    for line_number, count, order in orders:
        if sorted(order) != list(range(n)):
            raise UnsupportedFormatError(f"order does not rank all {n} alternatives exactly once", row=line_number)
        rankings.extend([tuple(order)] * count)
    if not rankings:
        raise IngestionError(f"all preference counts are zero in {source}")
    labels = tuple(names.get(k + 1, str(k + 1)) for k in range(n)) if names else None
    logger.info('parsed %d voters over %d alternatives from %s', len(rankings), n, source)
    return Profile(rankings=tuple(rankings), item_labels=labels,
                   provenance={'source': 'preflib-soc', 'path': str(source)})


def read_soc(path) -> Profile:
    return parse_soc(Path(path).read_text(encoding='utf-8'), source=str(path))
