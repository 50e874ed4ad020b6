"""
Element property table used by the SMILES parser and atom featurizer
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

from django.conf import settings

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

# Lowest and highest charge-adjusted valence rules per element family.
# Elements right of carbon gain one bonding slot per positive charge
# (N+ -> 4, O+ -> 3) and lose one per negative charge (O- -> 1).
# Carbon and hydrogen lose a slot for either sign.
_ACCEPTOR_LIKE = {'B'}
_CARBON_LIKE = {'C', 'H'}


@dataclass(frozen=True)
class ElementRecord:
    """One row of the element property table.

    Attributes:
        symbol: Element symbol with SMILES capitalisation ("C", "Cl").
        atomic_number: Proton count.
        electronegativity: Pauling electronegativity.
        atomic_volume: Molar atomic volume in cm3/mol.
        electron_affinity: Electron affinity in kJ/mol.
        default_valences: Permitted neutral valences, ascending.
    """
    symbol: str
    atomic_number: int
    electronegativity: float
    atomic_volume: float
    electron_affinity: float
    default_valences: Tuple[int, ...]

    def permitted_valences(self, charge: int = 0) -> Tuple[int, ...]:
        """Valences allowed for this element carrying ``charge``"""
        if charge == 0:
            return self.default_valences
        if self.symbol in _CARBON_LIKE:
            shift = -abs(charge)
        elif self.symbol in _ACCEPTOR_LIKE:
            shift = -charge
        else:
            shift = charge
        return tuple(v + shift for v in self.default_valences if v + shift >= 0)


class ElementTable:
    """Symbol and atomic-number index over the shipped element records"""

    def __init__(self, records: Dict[str, ElementRecord], version: str = ''):
        self.records = records
        self.version = version
        self._by_number = {r.atomic_number: r for r in records.values()}

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.records

    def __iter__(self):
        return iter(self.records.values())

    def __len__(self) -> int:
        return len(self.records)

    def get(self, symbol: str) -> Optional[ElementRecord]:
        return self.records.get(symbol)

    def by_number(self, atomic_number: int) -> Optional[ElementRecord]:
        return self._by_number.get(atomic_number)

    @property
    def symbols(self) -> Tuple[str, ...]:
        """Symbols ordered by atomic number, the one-hot layout order"""
        return tuple(r.symbol for r in sorted(self.records.values(), key=lambda r: r.atomic_number))


def _parse_record(line: str, line_number: int) -> ElementRecord:
    columns = line.split('\t')
    if len(columns) != 6:
        raise ConfigError(f"Element table line {line_number}: expected 6 columns, got {len(columns)}")
    symbol, number, en, volume, affinity, valences = (c.strip() for c in columns)
    try:
        return ElementRecord(
            symbol=symbol,
            atomic_number=int(number),
            electronegativity=float(en),
            atomic_volume=float(volume),
            electron_affinity=float(affinity),
            default_valences=tuple(sorted(int(v) for v in valences.split(','))),
        )
    except ValueError as e:
        raise ConfigError(f"Element table line {line_number}: {e}") from e


@lru_cache(maxsize=8)
def load_element_table(path: Optional[str] = None) -> ElementTable:
    """Load the element table from ``path`` or the configured default"""
    path = Path(path or settings.ODOR_ELEMENT_TABLE)
    if not path.exists():
        raise ConfigError(f"Element table not found: {path}")

    records: Dict[str, ElementRecord] = {}
    version = ''
    for line_number, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            if 'version' in line and not version:
                version = line.split('version', 1)[1].strip(' :.')
            continue
        record = _parse_record(raw, line_number)
        if record.symbol in records:
            raise ConfigError(f"Element table line {line_number}: duplicate symbol {record.symbol}")
        records[record.symbol] = record

    logger.debug(f"Loaded {len(records)} element records from {path} (version {version or 'unknown'})")
    return ElementTable(records, version)
