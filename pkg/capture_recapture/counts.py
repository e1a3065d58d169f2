"""
Triple record system (TRS) counts: the seven observable cells of the
incomplete 2x2x2 table, their margins, ingestion of user tables and the
built-in surveillance datasets.
"""
import io
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd

from .exceptions import CountsValidationError

logger = logging.getLogger(__name__)

# Column order used for every export of a table
CELL_NAMES = ('x111', 'x110', 'x101', 'x011', 'x100', 'x010', 'x001')

_INTEGER = re.compile(r'^[+-]?\d+$')


@dataclass(frozen=True)
class TrsCounts:
    """
    Observed cells x_ijk of a triple record system; i, j, k flag presence
    in lists 1, 2 and 3. The (0,0,0) cell is unobserved by construction.
    """
    x111: int
    x110: int
    x101: int
    x011: int
    x100: int
    x010: int
    x001: int

    def __post_init__(self):
        for name in CELL_NAMES:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise CountsValidationError(f"Cell {name} must be an integer, got {value!r}")
            if value < 0:
                raise CountsValidationError(f"Cell {name} must be non-negative, got {value}")
        if self.x0 < 1:
            raise CountsValidationError("At least one individual must be observed (x0 must be >= 1)")

    @classmethod
    def from_sequence(cls, values):
        """Build from seven values in CELL_NAMES order"""
        values = [int(v) for v in values]
        if len(values) != len(CELL_NAMES):
            raise CountsValidationError(f"Expected {len(CELL_NAMES)} cells, got {len(values)}")
        return cls(*values)

    @property
    def x0(self):
        """Number of distinct individuals observed on at least one list"""
        return sum(self.as_tuple())

    def as_tuple(self):
        return tuple(getattr(self, name) for name in CELL_NAMES)

    def as_dict(self):
        return {name: getattr(self, name) for name in CELL_NAMES}

    def cell(self, i, j, k):
        if i == j == k == 0:
            raise KeyError("The (0,0,0) cell is not observed")
        return getattr(self, f'x{i}{j}{k}')

    def __str__(self):
        return f"TRS({', '.join(str(v) for v in self.as_tuple())}; x0={self.x0})"


@dataclass(frozen=True)
class MtbSufficientStats:
    """First captures u_l, recaptures m_l and prior distinct captures M_l"""
    u1: int
    u2: int
    u3: int
    m2: int
    m3: int
    M2: int
    M3: int


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    stratum: str = 'all'
    inhabitants: Optional[int] = None
    description: str = ''

    def __post_init__(self):
        if self.inhabitants is not None and self.inhabitants <= 0:
            raise CountsValidationError(f"Inhabitants must be positive, got {self.inhabitants}")


@dataclass(frozen=True)
class Margins:
    """
    List totals and dot-margins of a TRS table. A dot stands for summation
    over that index, e.g. x_1.0 = x110 + x100.
    """
    n1: int
    n2: int
    n3: int
    x0: int
    dot_sums: dict
    mtb: MtbSufficientStats


# Legionnaires' disease (Netherlands, 1999) and hepatitis A (northern Taiwan, 1995)
_BUILTIN = {
    'ld_all': (
        (155, 31, 131, 45, 56, 30, 332),
        DatasetMeta('ld_all', 'all', None, "Legionnaires' disease, national"),
    ),
    'ld_north': (
        (13, 2, 6, 8, 3, 2, 35),
        DatasetMeta('ld_north', 'north', 1_671_534, "Legionnaires' disease, North region"),
    ),
    'ld_east': (
        (45, 3, 42, 7, 13, 13, 62),
        DatasetMeta('ld_east', 'east', 4_467_527, "Legionnaires' disease, East region"),
    ),
    'ld_west': (
        (46, 7, 55, 14, 23, 5, 136),
        DatasetMeta('ld_west', 'west', 5_955_299, "Legionnaires' disease, West region"),
    ),
    'ld_south': (
        (51, 19, 28, 15, 13, 9, 99),
        DatasetMeta('ld_south', 'south', 3_892_715, "Legionnaires' disease, South region"),
    ),
    'hav': (
        (28, 21, 17, 18, 69, 55, 63),
        DatasetMeta('hav', 'all', None, "Hepatitis A virus outbreak"),
    ),
}


def builtin_names():
    return tuple(_BUILTIN)


def builtin_dataset(name):
    """Return (counts, metadata) for one of the bundled surveillance datasets"""
    try:
        cells, meta = _BUILTIN[name]
    except KeyError:
        raise CountsValidationError(
            f"Unknown dataset '{name}'. Available: {', '.join(_BUILTIN)}"
        ) from None
    return TrsCounts.from_sequence(cells), meta


def _to_int(name, raw):
    text = str(raw).strip()
    if not _INTEGER.match(text):
        raise CountsValidationError(f"Cell {name} must be an integer, got {text!r}")
    value = int(text)
    if value < 0:
        raise CountsValidationError(f"Cell {name} must be non-negative, got {value}")
    return value


def _from_mapping(mapping):
    missing = [name for name in CELL_NAMES if name not in mapping]
    if missing:
        raise CountsValidationError(f"Missing cell(s): {', '.join(missing)}")
    unknown = [key for key in mapping if key not in CELL_NAMES]
    if unknown:
        raise CountsValidationError(f"Unknown column(s): {', '.join(unknown)}")
    return TrsCounts(**{name: _to_int(name, mapping[name]) for name in CELL_NAMES})


def parse_counts(text):
    """
    Parse a TRS table from a single-row delimited table (CSV or TSV, header
    naming the seven cells in any order) or a JSON object with the same keys.
    """
    if text is None or not text.strip():
        raise CountsValidationError("Empty table")

    stripped = text.strip()
    if stripped.startswith('{'):
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise CountsValidationError(f"Invalid JSON counts: {e}") from e
        if not isinstance(payload, dict):
            raise CountsValidationError("JSON counts must be an object")
        return _from_mapping(payload)

    sep = '\t' if '\t' in stripped.splitlines()[0] else ','
    try:
        frame = pd.read_csv(io.StringIO(stripped), sep=sep, header=None, dtype=str,
                            skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CountsValidationError(f"Could not parse table: {e}") from e

    header = [str(h).strip() for h in frame.iloc[0].tolist()]
    rows = frame.iloc[1:]
    duplicates = sorted({h for h in header if header.count(h) > 1})
    if duplicates:
        raise CountsValidationError(f"Duplicate cell name(s): {', '.join(duplicates)}")
    if len(rows) != 1:
        raise CountsValidationError(f"Expected exactly one data row, got {len(rows)}")

    return _from_mapping(dict(zip(header, rows.iloc[0].tolist())))


def emit_counts(counts, fmt='csv'):
    """Serialize counts in a form parse_counts reads back unchanged"""
    if fmt == 'json':
        return json.dumps(counts.as_dict())
    sep = '\t' if fmt == 'tsv' else ','
    frame = pd.DataFrame([counts.as_tuple()], columns=list(CELL_NAMES))
    return frame.to_csv(sep=sep, index=False)


def load_counts(source):
    """
    Resolve a --data argument: a built-in dataset name or a path to a
    CSV/TSV/JSON table. Returns (counts, meta).
    """
    if source in _BUILTIN:
        return builtin_dataset(source)
    path = Path(source)
    if not path.exists():
        raise CountsValidationError(
            f"'{source}' is neither a built-in dataset ({', '.join(_BUILTIN)}) nor a file"
        )
    logger.info(f"Reading counts from {path}")
    counts = parse_counts(path.read_text())
    return counts, DatasetMeta(name=path.stem)


def margins(counts):
    """All list totals, dot-margins and the M_tb sufficient statistics"""
    c = counts
    dot_sums = {
        'x1..': c.x111 + c.x110 + c.x101 + c.x100,
        'x.1.': c.x111 + c.x110 + c.x011 + c.x010,
        'x..1': c.x111 + c.x101 + c.x011 + c.x001,
        'x11.': c.x111 + c.x110,
        'x1.1': c.x111 + c.x101,
        'x.11': c.x111 + c.x011,
        'x10.': c.x101 + c.x100,
        'x1.0': c.x110 + c.x100,
        'x.10': c.x110 + c.x010,
        'x01.': c.x011 + c.x010,
        'x0.1': c.x011 + c.x001,
        'x.01': c.x101 + c.x001,
    }
    n1, n2, n3 = dot_sums['x1..'], dot_sums['x.1.'], dot_sums['x..1']
    u1 = n1
    u2 = c.x011 + c.x010
    mtb = MtbSufficientStats(
        u1=u1,
        u2=u2,
        u3=c.x001,
        m2=c.x111 + c.x110,
        m3=c.x111 + c.x101 + c.x011,
        M2=u1,
        M3=u1 + u2,
    )
    return Margins(n1=n1, n2=n2, n3=n3, x0=c.x0, dot_sums=dot_sums, mtb=mtb)