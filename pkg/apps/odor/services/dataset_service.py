"""
Dataset ingestion, label vocabulary, seeded splitting and label statistics
"""
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import DatasetError, SmilesParseError, VocabularyError
from .smiles_service import MolecularGraph, parse_smiles

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ('smiles', 'labels')
LABEL_SEPARATOR = ';'
OVERFLOW_MARK = '\x00overflow'


@dataclass
class DatasetRecord:
    smiles: str
    labels: Tuple[str, ...]
    row: int
    graph: Optional[MolecularGraph] = field(default=None, repr=False, compare=False)


@dataclass
class Rejection:
    row: int
    smiles: str
    reason: str


@dataclass
class LoadResult:
    records: List[DatasetRecord]
    rejections: List[Rejection]
    total_rows: int

    def __len__(self) -> int:
        return len(self.records)


def split_labels(raw: str) -> Tuple[str, ...]:
    """Descriptor names from a ``;``-separated field, order kept, duplicates dropped"""
    seen = []
    for part in (raw or '').split(LABEL_SEPARATOR):
        name = part.strip()
        if name and name not in seen:
            seen.append(name)
    return tuple(seen)


def load_dataset(path: Union[str, Path], require_labels: bool = True) -> LoadResult:
    """Read a ``smiles,labels`` CSV.

    Row numbers count the header as row 1. Every row ends up either as a
    record or as a logged rejection.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset file not found: {path}")
    try:
        header = pd.read_csv(path, nrows=0, dtype=str, encoding='utf-8').columns
        overflow: List[List[str]] = []

        def flag_overflow(fields: List[str]) -> List[str]:
            # Keep the row in place so later row numbers hold
            overflow.append(fields)
            return [OVERFLOW_MARK] * len(header)

        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding='utf-8',
            engine='python', index_col=False, on_bad_lines=flag_overflow,
        ).fillna('')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"Could not read dataset {path}: {e}") from e

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"Malformed header in {path}: expected columns {', '.join(REQUIRED_COLUMNS)}, missing {', '.join(missing)}")

    smiles_column = list(frame.columns).index('smiles')
    overflow_rows = iter(overflow)
    records, rejections = [], []
    for position, (smiles, raw_labels) in enumerate(zip(frame['smiles'], frame['labels'])):
        row = position + 2
        graph = None
        if smiles == OVERFLOW_MARK:
            fields = next(overflow_rows)
            smiles = fields[smiles_column].strip() if smiles_column < len(fields) else ''
            reason = "wrong field count"
        else:
            smiles = smiles.strip()
            labels = split_labels(raw_labels)
            reason = None
            if not smiles:
                reason = "empty SMILES"
            elif require_labels and not labels:
                reason = "empty label field"
            else:
                try:
                    graph = parse_smiles(smiles)
                except SmilesParseError as e:
                    reason = f"{e.kind.replace('_', ' ')}: {e}"
        if reason:
            logger.warning(f"Rejected row {row} ({smiles!r}): {reason}")
            rejections.append(Rejection(row, smiles, reason))
        else:
            records.append(DatasetRecord(smiles, labels, row, graph))

    logger.info(f"Loaded {len(records)} records from {path} ({len(rejections)} rejected of {len(frame)} rows)")
    return LoadResult(records, rejections, len(frame))


def read_smiles_lines(source: str) -> List[str]:
    """SMILES inputs from a file, or from stdin when ``source`` is ``-``"""
    if source == '-':
        text = sys.stdin.read()
    else:
        path = Path(source)
        if not path.exists():
            raise DatasetError(f"Input file not found: {path}")
        text = path.read_text(encoding='utf-8')
    return [line.strip() for line in text.splitlines()]


class LabelVocabulary:
    """Ordered descriptor names with a name -> column index map"""

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise DatasetError("Label vocabulary contains duplicate names")
        self.names = names
        self.index = {name: i for i, name in enumerate(names)}

    @classmethod
    def build(cls, records: Iterable[DatasetRecord]) -> 'LabelVocabulary':
        return cls(sorted({label for record in records for label in record.labels}))

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelVocabulary) and self.names == other.names

    def unknown(self, records: Iterable[DatasetRecord]) -> List[str]:
        return sorted({label for record in records for label in record.labels if label not in self.index})

    def check(self, records: Iterable[DatasetRecord]) -> None:
        unknown = self.unknown(records)
        if unknown:
            raise VocabularyError(unknown)

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        vector = np.zeros(len(self.names), dtype=np.float64)
        for label in labels:
            if label not in self.index:
                raise VocabularyError([label])
            vector[self.index[label]] = 1.0
        return vector

    def encode_all(self, records: Sequence[DatasetRecord]) -> np.ndarray:
        if not records:
            return np.zeros((0, len(self.names)), dtype=np.float64)
        return np.stack([self.encode(r.labels) for r in records])


def split_dataset(
    records: Sequence[DatasetRecord],
    fraction: float = 0.8,
    seed: Union[int, np.random.Generator] = 0,
) -> Tuple[List[DatasetRecord], List[DatasetRecord]]:
    """Seeded shuffle then prefix split into (train, test).

    The train share is round(fraction * n), kept within [1, n - 1] so
    neither side is empty.
    """
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"Split fraction must lie in (0, 1), got {fraction}")
    n = len(records)
    if n < 2:
        raise DatasetError(f"Need at least 2 records to split, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    return [records[i] for i in order[:n_train]], [records[i] for i in order[n_train:]]


def label_statistics(records: Sequence[DatasetRecord]) -> Dict:
    """Labels-per-molecule histogram and per-descriptor support"""
    if not records:
        return {
            'num_molecules': 0,
            'num_descriptors': 0,
            'labels_per_molecule': {},
            'descriptor_counts': {},
            'fraction_1_to_6': 0.0,
            'mean_labels': 0.0,
        }
    frame = pd.DataFrame({'smiles': [r.smiles for r in records], 'labels': [list(r.labels) for r in records]})
    per_molecule = frame['labels'].str.len()
    histogram = per_molecule.value_counts().sort_index()
    descriptors = frame.explode('labels')['labels'].dropna().value_counts()
    descriptors = descriptors.sort_index(kind='mergesort').sort_values(ascending=False, kind='mergesort')
    return {
        'num_molecules': int(len(frame)),
        'num_descriptors': int(descriptors.size),
        'labels_per_molecule': {int(k): int(v) for k, v in histogram.items()},
        'descriptor_counts': {str(k): int(v) for k, v in descriptors.items()},
        'fraction_1_to_6': float(per_molecule.between(1, 6).mean()),
        'mean_labels': float(per_molecule.mean()),
    }


def statistics_tables(stats: Dict) -> str:
    """Aligned text rendering of :func:`label_statistics` output"""
    lines = [
        f"molecules: {stats['num_molecules']}",
        f"descriptors: {stats['num_descriptors']}",
        f"mean labels per molecule: {stats['mean_labels']:.3f}",
        f"fraction with 1-6 labels: {stats['fraction_1_to_6']:.3f}",
        '',
    ]
    histogram = pd.DataFrame(
        sorted(stats['labels_per_molecule'].items()), columns=['labels', 'molecules']
    )
    counts = pd.DataFrame(list(stats['descriptor_counts'].items()), columns=['descriptor', 'support'])
    lines.append(histogram.to_string(index=False) if len(histogram) else '(no molecules)')
    lines.append('')
    lines.append(counts.to_string(index=False) if len(counts) else '(no descriptors)')
    return '\n'.join(lines)
