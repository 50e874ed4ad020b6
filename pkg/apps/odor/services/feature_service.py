"""
Multi-level molecular featurization: atom vectors, directed bond vectors,
functional-group indicators and the concatenated global fingerprint
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .elements import ElementTable, load_element_table
from .exceptions import ConfigError
from .fingerprint_service import MACCS_BITS, load_maccs_keys, maccs_fingerprint, morgan_fingerprint, topological_fingerprint
from .smarts_service import PatternGroup, SmartsPattern, load_pattern_groups, match_pattern
from .smiles_service import BondOrder, MolecularGraph, parse_smiles, shortest_paths

logger = logging.getLogger(__name__)

DEFAULT_BOUNDS = {
    'electronegativity': (0.8, 4.0),
    'atomic_volume': (4.0, 46.0),
    'electron_affinity': (-70.0, 350.0),
}
FEATURE_GROUPS = ('atomic', 'edge', 'fingerprint')
GROUP_LEVELS = ('atom', 'molecule')

MAX_DEGREE = 5
MAX_IMPLICIT_H = 4
MAX_CHARGE = 2
MAX_RADICALS = 2
DEGREE_SCALE = 6.0
BOND_ORDERS = (BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.TRIPLE, BondOrder.AROMATIC)
BOND_FEATURE_DIM = len(BOND_ORDERS) + 2 + 2 + 3


def _power_of_two(value: int) -> bool:
    return value >= 1 and not value & (value - 1)


@dataclass
class FeatureConfig:
    """Featurization settings; JSON-serialisable via :meth:`to_dict`"""
    normalization_bounds: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    morgan_radius: int = 2
    morgan_bits: int = 2048
    maccs_bits: int = MACCS_BITS
    topo_bits: int = 2048
    enabled_groups: Dict[str, bool] = field(default_factory=lambda: {g: True for g in FEATURE_GROUPS})
    functional_group_level: str = 'atom'
    pattern_file: Optional[str] = None
    maccs_file: Optional[str] = None
    element_table: Optional[str] = None

    def __post_init__(self):
        self.normalization_bounds = {k: tuple(v) for k, v in self.normalization_bounds.items()}
        self.enabled_groups = {**{g: True for g in FEATURE_GROUPS}, **self.enabled_groups}
        self.validate()

    def validate(self) -> None:
        for name, bounds in self.normalization_bounds.items():
            if name not in DEFAULT_BOUNDS:
                raise ConfigError(f"Unknown normalization property: {name}")
            if len(bounds) != 2 or not bounds[0] < bounds[1]:
                raise ConfigError(f"Bounds for {name} must be (min, max) with min < max, got {bounds}")
        for name in ('morgan_bits', 'topo_bits'):
            value = getattr(self, name)
            if value < 64 or not _power_of_two(value):
                raise ConfigError(f"{name} must be a power of two >= 64, got {value}")
        if self.maccs_bits != MACCS_BITS:
            raise ConfigError(f"maccs_bits is fixed at {MACCS_BITS}, got {self.maccs_bits}")
        if self.morgan_radius < 0:
            raise ConfigError(f"morgan_radius must be >= 0, got {self.morgan_radius}")
        unknown = set(self.enabled_groups) - set(FEATURE_GROUPS)
        if unknown:
            raise ConfigError(f"Unknown feature groups: {', '.join(sorted(unknown))}")
        if self.functional_group_level not in GROUP_LEVELS:
            raise ConfigError(f"functional_group_level must be one of {GROUP_LEVELS}, got {self.functional_group_level!r}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'FeatureConfig':
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown feature config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['normalization_bounds'] = {k: list(v) for k, v in self.normalization_bounds.items()}
        return data

    def bounds(self, name: str) -> Tuple[float, float]:
        if name in self.normalization_bounds:
            return self.normalization_bounds[name]
        if name in DEFAULT_BOUNDS:
            return DEFAULT_BOUNDS[name]
        raise ConfigError(f"Unknown normalization property: {name}")

    def enabled(self, group: str) -> bool:
        return self.enabled_groups.get(group, True)

    def elements(self) -> ElementTable:
        return load_element_table(self.element_table)

    def patterns(self) -> Tuple[PatternGroup, ...]:
        return load_pattern_groups(self.pattern_file)

    @property
    def global_dim(self) -> int:
        return self.morgan_bits + self.maccs_bits + self.topo_bits

    @property
    def edge_dim(self) -> int:
        return BOND_FEATURE_DIM

    @property
    def atom_dim(self) -> int:
        return atomic_block_dim(self.elements()) + len(self.patterns())


def atomic_block_dim(elements: ElementTable) -> int:
    """Width of the atom vector before the functional-group bits"""
    return len(elements) + (MAX_DEGREE + 1) + 1 + 1 + 1 + 1 + (MAX_IMPLICIT_H + 1) + len(DEFAULT_BOUNDS)


@dataclass
class FeatureSet:
    """Feature matrices for one molecule.

    Directed edge ``2k`` runs along bond k from its first to its second
    endpoint and edge ``2k + 1`` runs back.
    """
    node_matrix: np.ndarray
    edge_matrix: np.ndarray
    edge_index: np.ndarray
    global_vector: np.ndarray
    functional_groups: np.ndarray
    smiles: str = ''
    label_vector: Optional[np.ndarray] = None

    @property
    def num_atoms(self) -> int:
        return self.node_matrix.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_matrix.shape[0]

    def to_record(self, num_bonds: Optional[int] = None) -> Dict[str, Any]:
        return {
            'smiles': self.smiles,
            'num_atoms': self.num_atoms,
            'num_bonds': num_bonds if num_bonds is not None else self.num_edges // 2,
            'node_features': self.node_matrix.tolist(),
            'edge_index': self.edge_index.tolist(),
            'edge_features': self.edge_matrix.tolist(),
            'global_features': self.global_vector.tolist(),
            'functional_groups': self.functional_groups.astype(int).tolist(),
        }


def normalize_property(value: float, name: str, config: Optional[FeatureConfig] = None) -> float:
    """Min-max normalise ``value`` with the bounds of property ``name``, clamped to [0, 1]"""
    if config is not None:
        low, high = config.bounds(name)
    elif name in DEFAULT_BOUNDS:
        low, high = DEFAULT_BOUNDS[name]
    else:
        raise ConfigError(f"Unknown normalization property: {name}")
    return float(np.clip((value - low) / (high - low), 0.0, 1.0))


def _one_hot(index: int, size: int) -> np.ndarray:
    vector = np.zeros(size, dtype=np.float64)
    vector[min(max(index, 0), size - 1)] = 1.0
    return vector


PatternLike = Union[SmartsPattern, PatternGroup]


def _pattern_matches(pattern: PatternLike, graph: MolecularGraph) -> List[Tuple[int, ...]]:
    if isinstance(pattern, PatternGroup):
        return pattern.matches(graph)
    return match_pattern(pattern, graph)


def group_atom_sets(graph: MolecularGraph, patterns: Sequence[PatternLike]) -> List[Set[int]]:
    """Atoms participating in any embedding of each pattern"""
    return [{i for match in _pattern_matches(p, graph) for i in match} for p in patterns]


def functional_group_vector(graph: MolecularGraph, patterns: Sequence[PatternLike]) -> np.ndarray:
    """Bit g is 1 when pattern g has at least one embedding in the molecule"""
    return np.array([1.0 if _pattern_matches(p, graph) else 0.0 for p in patterns], dtype=np.float64)


def atom_features(
    graph: MolecularGraph,
    atom_index: int,
    matches: Sequence[Set[int]],
    config: Optional[FeatureConfig] = None,
) -> np.ndarray:
    """Fixed-layout atom vector.

    Layout: element one-hot, degree one-hot (0-5), scaled charge, scaled
    radical count, aromatic flag, ring flag, implicit-H one-hot (0-4),
    normalised electronegativity, volume and electron affinity, then one
    participation bit per functional group in ``matches``.
    """
    config = config or FeatureConfig()
    elements = config.elements()
    atom = graph.atoms[atom_index]
    symbols = elements.symbols
    record = elements.get(atom.symbol) or atom.element

    charge = (min(max(atom.formal_charge, -MAX_CHARGE), MAX_CHARGE) + MAX_CHARGE) / (2 * MAX_CHARGE)
    radicals = min(atom.radical_electrons, MAX_RADICALS) / MAX_RADICALS
    parts = [
        _one_hot(symbols.index(atom.symbol), len(symbols)),
        _one_hot(graph.degree(atom_index), MAX_DEGREE + 1),
        [charge, radicals, float(atom.aromatic), float(atom.in_ring)],
        _one_hot(atom.implicit_h_count, MAX_IMPLICIT_H + 1),
        [
            normalize_property(record.electronegativity, 'electronegativity', config),
            normalize_property(record.atomic_volume, 'atomic_volume', config),
            normalize_property(record.electron_affinity, 'electron_affinity', config),
        ],
        [1.0 if atom_index in atoms else 0.0 for atoms in matches],
    ]
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def bond_fractions(graph: MolecularGraph) -> np.ndarray:
    """Single, double and triple bond shares; aromatic bonds count only in the total"""
    if graph.num_bonds == 0:
        return np.zeros(3, dtype=np.float64)
    counts = np.zeros(3, dtype=np.float64)
    for bond in graph.bonds:
        if bond.order != BondOrder.AROMATIC:
            counts[int(bond.order) - 1] += 1
    return counts / graph.num_bonds


def bond_features(
    graph: MolecularGraph,
    bond_index: int,
    fractions: Optional[np.ndarray] = None,
    reverse: bool = False,
) -> np.ndarray:
    """Bond vector: order one-hot, conjugated, ring, endpoint degrees / 6, bond fractions.

    ``reverse`` swaps the two degree entries for the j -> i direction.
    """
    bond = graph.bonds[bond_index]
    if fractions is None:
        fractions = bond_fractions(graph)
    i, j = bond.endpoints
    if reverse:
        i, j = j, i
    delta = [min(graph.degree(i) / DEGREE_SCALE, 1.0), min(graph.degree(j) / DEGREE_SCALE, 1.0)]
    return np.concatenate([
        _one_hot(BOND_ORDERS.index(bond.order), len(BOND_ORDERS)),
        [float(bond.conjugated), float(bond.in_ring)],
        delta,
        fractions,
    ]).astype(np.float64)


def global_features(graph: MolecularGraph, config: Optional[FeatureConfig] = None, distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Morgan, MACCS and topological fingerprints concatenated in that order"""
    config = config or FeatureConfig()
    keys = load_maccs_keys(config.maccs_file)
    return np.concatenate([
        morgan_fingerprint(graph, config.morgan_radius, config.morgan_bits),
        maccs_fingerprint(graph, keys),
        topological_fingerprint(graph, config.topo_bits, distances),
    ])


def featurize_molecule(graph: MolecularGraph, config: Optional[FeatureConfig] = None) -> FeatureSet:
    """Build the :class:`FeatureSet` for one parsed molecule.

    Disabled feature groups are replaced with zeros of the same width. With
    the atomic group off, only the functional-group bits of each atom row
    stay populated.
    """
    config = config or FeatureConfig()
    patterns = config.patterns()
    atom_sets = group_atom_sets(graph, patterns)
    molecule_groups = np.array([1.0 if atoms else 0.0 for atoms in atom_sets], dtype=np.float64)

    if config.functional_group_level == 'molecule':
        every_atom = set(range(graph.num_atoms))
        node_sets = [every_atom if hit else set() for hit in molecule_groups]
    else:
        node_sets = atom_sets

    nodes = np.stack([atom_features(graph, i, node_sets, config) for i in range(graph.num_atoms)])
    if not config.enabled('atomic'):
        nodes[:, :atomic_block_dim(config.elements())] = 0.0

    fractions = bond_fractions(graph)
    edges = np.zeros((2 * graph.num_bonds, BOND_FEATURE_DIM), dtype=np.float64)
    edge_index = np.zeros((2, 2 * graph.num_bonds), dtype=np.int64)
    for k, bond in enumerate(graph.bonds):
        i, j = bond.endpoints
        edge_index[:, 2 * k] = (i, j)
        edge_index[:, 2 * k + 1] = (j, i)
        if config.enabled('edge'):
            edges[2 * k] = bond_features(graph, k, fractions)
            edges[2 * k + 1] = bond_features(graph, k, fractions, reverse=True)

    if config.enabled('fingerprint'):
        global_vector = global_features(graph, config, shortest_paths(graph))
    else:
        global_vector = np.zeros(config.global_dim, dtype=np.float64)

    return FeatureSet(
        node_matrix=nodes,
        edge_matrix=edges,
        edge_index=edge_index,
        global_vector=global_vector,
        functional_groups=molecule_groups,
        smiles=graph.smiles,
    )


class Featurizer:
    """SMILES to :class:`FeatureSet` with a fixed :class:`FeatureConfig`"""

    def __init__(self, config: Optional[FeatureConfig] = None):
        self.config = config or FeatureConfig()
        self.elements = self.config.elements()
        self.group_names = [g.name for g in self.config.patterns()]

    @property
    def atom_dim(self) -> int:
        return self.config.atom_dim

    @property
    def edge_dim(self) -> int:
        return self.config.edge_dim

    @property
    def global_dim(self) -> int:
        return self.config.global_dim

    def parse(self, smiles: str) -> MolecularGraph:
        return parse_smiles(smiles, self.elements if self.config.element_table else None)

    def featurize(self, smiles: str) -> FeatureSet:
        return featurize_molecule(self.parse(smiles), self.config)
