"""CSV/Excel parsers for label sheets, lexicons, mood-tag lists and tag files."""
import csv
import logging
from pathlib import Path
from typing import Optional, Union

from openpyxl import load_workbook

from .errors import DuplicateIdError, MissingColumnError, NonNumericLabelError
from .models import LexiconEntry, MoodLabel, TrackRecord

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ['msd_id', 'artist', 'title', 'valence', 'arousal']
REQUIRED_LABEL_COLUMNS = ['msd_id', 'artist', 'valence', 'arousal']

# More specific aliases first so 'track id' does not match 'track'.
LABEL_ALIASES = {
    'msd_id': ['msd_id', 'msd id', 'msdid', 'track id', 'track_id'],
    'artist': ['artist name', 'artist'],
    'title': ['track name', 'title', 'song'],
    'valence': ['valence'],
    'arousal': ['arousal'],
    'audio_path': ['audio_path', 'audio path', 'audio'],
    'lyrics_path': ['lyrics_path', 'lyrics path', 'lyrics'],
}

LEXICON_ALIASES = {
    'word': ['word'],
    'valence': ['v.mean.sum', 'valence'],
    'arousal': ['a.mean.sum', 'arousal'],
}

_MISSING = ('—', '-', '--', '', 'nan', 'none')


def clean_text(value) -> str:
    """Strip whitespace and non-breaking spaces."""
    if value is None:
        return ""
    return str(value).replace('\xa0', ' ').strip()


def parse_number(value) -> Optional[float]:
    """Parse a float from a cell; None for blanks and dashes or unparseable text."""
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    s = clean_text(value).replace('−', '-')
    if s.lower() in _MISSING:
        return None
    try:
        return float(s)
    except ValueError:
        return None


def _label_value(value, msd_id: str, column: str) -> float:
    number = parse_number(value)
    if number is None or number != number or number in (float('inf'), float('-inf')):
        raise NonNumericLabelError(f"Track {msd_id}: {column} value {value!r} is not a number")
    return number


def _match_header(cells: list[str], aliases: dict[str, list[str]]) -> dict[str, int]:
    """Map fields to column indices, preferring the longest alias found in a cell."""
    column_map: dict[str, int] = {}
    for col_idx, raw in enumerate(cells):
        val = clean_text(raw).lower()
        best, best_len = None, 0
        for name, names in aliases.items():
            if name in column_map:
                continue
            for alias in names:
                if alias in val and len(alias) > best_len:
                    best, best_len = name, len(alias)
        if best:
            column_map[best] = col_idx
    return column_map


def _check_required(columns, path: Path) -> None:
    missing = [c for c in REQUIRED_LABEL_COLUMNS if c not in columns]
    if missing:
        raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")


def _record_from_row(row: dict, path: Path, seen: set[str]) -> TrackRecord:
    msd_id = clean_text(row.get('msd_id'))
    if not msd_id:
        raise MissingColumnError(f"{path}: row without msd_id")
    if msd_id in seen:
        raise DuplicateIdError(msd_id)
    seen.add(msd_id)
    data = {k: ('' if v is None else str(v)) for k, v in row.items() if k is not None}
    data['msd_id'] = msd_id
    data['artist'] = clean_text(row.get('artist'))
    if not data['artist']:
        raise MissingColumnError(f"{path}: track {msd_id} has no artist")
    data['valence'] = _label_value(row.get('valence'), msd_id, 'valence')
    data['arousal'] = _label_value(row.get('arousal'), msd_id, 'arousal')
    return TrackRecord.from_dict(data)


def parse_label_csv(file_path: Union[str, Path]) -> list[TrackRecord]:
    """Strict reader for the label CSV; unknown columns ride along in ``TrackRecord.extra``."""
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")
    records, seen = [], set()
    with open(file_path, 'r', newline='', encoding='utf-8-sig') as f:
        reader = csv.DictReader(f)
        _check_required(reader.fieldnames or [], file_path)
        for row in reader:
            records.append(_record_from_row(row, file_path, seen))
    return records


def parse_label_excel(file_path: Union[str, Path]) -> list[TrackRecord]:
    """Label sheet from a workbook; the header row is searched in the first 10 rows."""
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")

    wb = load_workbook(file_path, data_only=True, read_only=True)
    ws = wb.active
    rows = ws.iter_rows(values_only=True)
    header_row, column_map = None, {}
    for row_idx, row in enumerate(rows, 1):
        if row_idx > 10:
            break
        candidate = _match_header([clean_text(v) for v in row], LABEL_ALIASES)
        if len(candidate) >= 3:
            header_row, column_map = row_idx, candidate
            break
    if header_row is None:
        wb.close()
        raise MissingColumnError(f"{file_path}: could not find a header row")
    _check_required(column_map, file_path)

    records, seen = [], set()
    for row in ws.iter_rows(min_row=header_row + 1, values_only=True):
        values = {name: (row[idx] if idx < len(row) else None) for name, idx in column_map.items()}
        if not clean_text(values.get('msd_id')):
            continue
        try:
            records.append(_record_from_row(values, file_path, seen))
        except NonNumericLabelError as e:
            logger.warning("Skipping row: %s", e)
    wb.close()
    return records


def parse_label_file(file_path: Union[str, Path]) -> list[TrackRecord]:
    """Parse a label sheet (CSV or Excel)."""
    file_path = Path(file_path)
    suffix = file_path.suffix.lower()
    if suffix in ('.xlsx', '.xlsm'):
        return parse_label_excel(file_path)
    if suffix in ('.csv', '.txt'):
        return parse_label_csv(file_path)
    raise ValueError(f"Unsupported file format: {suffix}")


def load_lexicon(file_path: Union[str, Path]) -> dict[str, LexiconEntry]:
    """Read ``word,valence,arousal`` rows (Warriner-style headers accepted); bad rows are skipped."""
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")
    lexicon: dict[str, LexiconEntry] = {}
    with open(file_path, 'r', newline='', encoding='utf-8-sig') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return lexicon
        column_map = _match_header(header, LEXICON_ALIASES)
        if len(column_map) < 3:
            raise MissingColumnError(f"{file_path}: lexicon needs word, valence and arousal columns")
        for lineno, row in enumerate(reader, 2):
            if not row or not any(cell.strip() for cell in row):
                continue
            try:
                word = clean_text(row[column_map['word']]).lower()
                valence = parse_number(row[column_map['valence']])
                arousal = parse_number(row[column_map['arousal']])
                if valence is None or arousal is None:
                    raise ValueError("non-numeric rating")
                lexicon[word] = LexiconEntry(word, valence, arousal)
            except (IndexError, ValueError) as e:
                logger.warning("%s:%d: skipping lexicon row (%s)", file_path, lineno, e)
    return lexicon


def load_mood_tags(file_path: Union[str, Path]) -> set[str]:
    """One tag per line; blank lines and ``#`` comments ignored."""
    tags = set()
    with open(file_path, 'r', encoding='utf-8') as f:
        for line in f:
            tag = line.split('#', 1)[0].strip().lower()
            if tag:
                tags.add(tag)
    return tags


def load_tag_file(file_path: Union[str, Path]) -> dict[str, list[str]]:
    """``msd_id,tag1|tag2|...`` lines, optional header."""
    tags: dict[str, list[str]] = {}
    with open(file_path, 'r', newline='', encoding='utf-8-sig') as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or not row[0].strip():
                continue
            msd_id = row[0].strip()
            if lineno == 1 and msd_id.lower() == 'msd_id':
                continue
            joined = ','.join(row[1:])
            tags[msd_id] = [t.strip().lower() for t in joined.split('|') if t.strip()]
    return tags


def parse_track_list(file_path: Union[str, Path]) -> list[dict[str, str]]:
    """Unlabelled track rows (``msd_id,artist,title,audio_path,lyrics_path``) for label construction."""
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")
    rows, seen = [], set()
    with open(file_path, 'r', newline='', encoding='utf-8-sig') as f:
        reader = csv.DictReader(f)
        missing = [c for c in ('msd_id', 'artist') if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumnError(f"{file_path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            msd_id = clean_text(row.get('msd_id'))
            if not msd_id:
                continue
            if msd_id in seen:
                raise DuplicateIdError(msd_id)
            seen.add(msd_id)
            rows.append({k: clean_text(v) for k, v in row.items() if k is not None})
    return rows
