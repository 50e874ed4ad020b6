"""
Molecule-level fingerprints: Morgan (circular), MACCS-style keys and
topological atom-pair bits
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from django.conf import settings

from .exceptions import ConfigError, SmartsParseError
from .smarts_service import SmartsPattern, match_pattern, parse_smarts, read_pattern_records, unique_atom_sets
from .smiles_service import MolecularGraph, shortest_paths

logger = logging.getLogger(__name__)

MACCS_BITS = 166
HASH_KEY = b'odor-gat-fp-v1'


def stable_hash(*values) -> int:
    """64-bit keyed BLAKE2b digest of JSON-encoded ``values``.

    Independent of PYTHONHASHSEED and platform, so fingerprints are
    reproducible across runs and machines.
    """
    payload = json.dumps(values, separators=(',', ':'), sort_keys=True).encode('utf-8')
    digest = hashlib.blake2b(payload, digest_size=8, key=HASH_KEY).digest()
    return int.from_bytes(digest, 'little')


def check_bits(bits: int, name: str = 'bits') -> int:
    if bits < 1 or bits & (bits - 1):
        raise ConfigError(f"{name} must be a power of two, got {bits}")
    return bits


def morgan_fingerprint(graph: MolecularGraph, radius: int = 2, bits: int = 2048) -> np.ndarray:
    """ECFP-style circular fingerprint.

    Round 0 hashes (atomic number, degree, charge, implicit H, ring flag,
    aromatic flag) per atom. Each later round rehashes an atom's invariant
    together with the sorted (bond order, neighbour invariant) pairs.
    Every invariant of every round sets bit ``invariant % bits``.
    """
    if radius < 0:
        raise ConfigError(f"Morgan radius must be >= 0, got {radius}")
    check_bits(bits, 'morgan_bits')
    vector = np.zeros(bits, dtype=np.float64)

    invariants = [
        stable_hash(
            'atom',
            atom.atomic_number,
            graph.degree(i),
            atom.formal_charge,
            atom.implicit_h_count,
            atom.in_ring,
            atom.aromatic,
        )
        for i, atom in enumerate(graph.atoms)
    ]
    for value in invariants:
        vector[value % bits] = 1.0

    for _ in range(radius):
        invariants = [
            stable_hash(
                invariants[i],
                sorted((int(graph.bonds[b].order), invariants[j]) for j, b in graph.neighbors(i)),
            )
            for i in range(graph.num_atoms)
        ]
        for value in invariants:
            vector[value % bits] = 1.0
    return vector


def topological_fingerprint(graph: MolecularGraph, bits: int = 2048, distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Atom-pair bits over (sorted element pair, bond distance)"""
    check_bits(bits, 'topo_bits')
    vector = np.zeros(bits, dtype=np.float64)
    if distances is None:
        distances = shortest_paths(graph)
    rows, cols = np.nonzero(np.triu(distances >= 1, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        pair = sorted((graph.atoms[i].symbol, graph.atoms[j].symbol))
        vector[stable_hash('pair', pair, int(distances[i, j])) % bits] = 1.0
    return vector


@dataclass(frozen=True)
class MaccsKey:
    number: int
    pattern: SmartsPattern
    more_than: int = 0

    def test(self, graph: MolecularGraph) -> bool:
        if self.more_than == 0:
            return bool(match_pattern(self.pattern, graph))
        return len(unique_atom_sets(match_pattern(self.pattern, graph))) > self.more_than


@lru_cache(maxsize=8)
def load_maccs_keys(path: Optional[str] = None) -> Tuple[MaccsKey, ...]:
    """Load ``key<N><TAB>SMARTS[<TAB>more_than]`` definitions"""
    path = Path(path or settings.ODOR_MACCS_KEYS)
    keys = {}
    for line_number, columns in read_pattern_records(path, min_columns=2, max_columns=3):
        name, text = columns[0], columns[1]
        where = f"{path.name} line {line_number}"
        if not name.startswith('key') or not name[3:].isdigit():
            raise ConfigError(f"{where}: key name must look like key<N>, got {name!r}")
        number = int(name[3:])
        if not 1 <= number <= MACCS_BITS:
            raise ConfigError(f"{where}: key number {number} outside 1..{MACCS_BITS}")
        if number in keys:
            raise ConfigError(f"{where}: duplicate key {number}")
        try:
            more_than = int(columns[2]) if len(columns) == 3 else 0
            pattern = parse_smarts(text, name)
        except (ValueError, SmartsParseError) as e:
            raise ConfigError(f"{where}: {e}") from e
        keys[number] = MaccsKey(number, pattern, more_than)

    missing = sorted(set(range(1, MACCS_BITS + 1)) - set(keys))
    logger.debug(f"Loaded {len(keys)} MACCS keys from {path}; {len(missing)} keys undefined")
    return tuple(keys[n] for n in sorted(keys))


def maccs_fingerprint(graph: MolecularGraph, keys: Optional[Sequence[MaccsKey]] = None) -> np.ndarray:
    """166-bit structural key vector; key N sets bit N-1"""
    if keys is None:
        keys = load_maccs_keys()
    vector = np.zeros(MACCS_BITS, dtype=np.float64)
    for key in keys:
        if key.test(graph):
            vector[key.number - 1] = 1.0
    return vector
