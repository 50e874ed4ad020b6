"""
SMARTS subset parser and subgraph matcher for functional-group detection
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
from networkx.algorithms import isomorphism

from django.conf import settings

from .elements import ElementTable, load_element_table
from .exceptions import ConfigError, SmartsParseError
from .smiles_service import BondOrder, MolecularGraph, is_ascii_digit

logger = logging.getLogger(__name__)

AROMATIC_SYMBOLS = {'b', 'c', 'n', 'o', 'p', 's'}
UNSUPPORTED_PRIMITIVES = {'r', 'v', 'x', '^', 'h'}


@dataclass(frozen=True)
class AtomPrimitive:
    kind: str
    value: int = 0
    negate: bool = False

    def test(self, graph: MolecularGraph, index: int) -> bool:
        atom = graph.atoms[index]
        kind = self.kind
        if kind == 'any':
            result = True
        elif kind == 'atomic_number':
            result = atom.atomic_number == self.value
        elif kind == 'aliphatic_element':
            result = atom.atomic_number == self.value and not atom.aromatic
        elif kind == 'aromatic_element':
            result = atom.atomic_number == self.value and atom.aromatic
        elif kind == 'aliphatic':
            result = not atom.aromatic
        elif kind == 'aromatic':
            result = atom.aromatic
        elif kind == 'degree':
            result = graph.degree(index) == self.value
        elif kind == 'total_h':
            result = graph.total_h(index) == self.value
        elif kind == 'connectivity':
            result = graph.degree(index) + atom.implicit_h_count == self.value
        elif kind == 'charge':
            result = atom.formal_charge == self.value
        elif kind == 'in_ring':
            result = atom.in_ring
        elif kind == 'ring_count':
            result = graph.ring_count(index) == self.value
        else:
            raise SmartsParseError(f"Unsupported SMARTS primitive '{kind}'")
        return result != self.negate


@dataclass(frozen=True)
class AtomPredicate:
    """Conjunction of atom primitives"""
    primitives: Tuple[AtomPrimitive, ...]

    def __call__(self, graph: MolecularGraph, index: int) -> bool:
        return all(p.test(graph, index) for p in self.primitives)


@dataclass(frozen=True)
class BondPrimitive:
    kind: str
    negate: bool = False

    def test(self, graph: MolecularGraph, index: int) -> bool:
        bond = graph.bonds[index]
        if self.kind == 'any':
            result = True
        elif self.kind == 'ring':
            result = bond.in_ring
        elif self.kind == 'default':
            result = bond.order in (BondOrder.SINGLE, BondOrder.AROMATIC)
        else:
            result = bond.order == BondOrder[self.kind.upper()]
        return result != self.negate


@dataclass(frozen=True)
class BondPredicate:
    primitives: Tuple[BondPrimitive, ...]

    def __call__(self, graph: MolecularGraph, index: int) -> bool:
        return all(p.test(graph, index) for p in self.primitives)


DEFAULT_BOND = BondPredicate((BondPrimitive('default'),))
_BOND_KINDS = {'-': 'single', '=': 'double', '#': 'triple', ':': 'aromatic', '~': 'any', '@': 'ring',
               '/': 'single', '\\': 'single'}


@dataclass(frozen=True)
class SmartsPattern:
    """Connected pattern graph with one predicate per atom and bond"""
    atoms: Tuple[AtomPredicate, ...]
    bonds: Tuple[Tuple[int, int, BondPredicate], ...]
    name: str = ''
    text: str = field(default='', compare=False)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def nx_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from((i, {'index': i}) for i in range(len(self.atoms)))
        for begin, end, predicate in self.bonds:
            graph.add_edge(begin, end, predicate=predicate)
        return graph


class SmartsParser:
    """Reader for the supported SMARTS subset.

    Atom primitives: element symbols (uppercase aliphatic, lowercase
    aromatic), #n, *, A, a, D<n>, H<n>, X<n>, charges, R, R0, R<n>. Bond
    primitives: - = # : ~ @. Primitives combine with '!' (not) and with
    '&', ';' or juxtaposition (and). OR lists and recursion are rejected.
    """

    def __init__(self, elements: Optional[ElementTable] = None):
        self.elements = elements or load_element_table()

    def parse(self, text: str, name: str = '') -> SmartsPattern:
        if text is None or not text.strip():
            raise SmartsParseError("Empty SMARTS pattern", offset=0)
        text = text.strip()
        self._text = text
        atoms: List[AtomPredicate] = []
        bonds: Dict[frozenset, Tuple[int, int, BondPredicate]] = {}
        branches: List[int] = []
        rings: Dict[int, Tuple[int, Optional[BondPredicate]]] = {}
        prev: Optional[int] = None
        bond: Optional[BondPredicate] = None
        i = 0

        def connect(a: int, b: int, predicate: Optional[BondPredicate], offset: int) -> None:
            key = frozenset((a, b))
            if a == b or key in bonds:
                raise SmartsParseError("Duplicate or self bond in pattern", offset=offset)
            bonds[key] = (a, b, predicate or DEFAULT_BOND)

        while i < len(text):
            ch = text[i]
            if ch == '(':
                if prev is None:
                    raise SmartsParseError("Branch opened before any atom", offset=i)
                branches.append(prev)
                i += 1
            elif ch == ')':
                if not branches:
                    raise SmartsParseError("Unbalanced parentheses", offset=i)
                prev = branches.pop()
                i += 1
            elif ch == '.':
                raise SmartsParseError("Disconnected patterns are unsupported", offset=i)
            elif ch in _BOND_KINDS or ch == '!':
                bond, i = self._read_bond(i)
            elif is_ascii_digit(ch) or ch == '%':
                if prev is None:
                    raise SmartsParseError("Ring closure before any atom", offset=i)
                if ch == '%':
                    digits = text[i + 1:i + 3]
                    if len(digits) != 2 or not is_ascii_digit(digits):
                        raise SmartsParseError("'%' must be followed by two digits", offset=i)
                    label, width = int(digits), 3
                else:
                    label, width = int(ch), 1
                if label in rings:
                    partner, open_bond = rings.pop(label)
                    connect(partner, prev, bond or open_bond, i)
                else:
                    rings[label] = (prev, bond)
                bond = None
                i += width
            else:
                predicate, i = self._read_atom(i)
                atoms.append(predicate)
                current = len(atoms) - 1
                if prev is not None:
                    connect(prev, current, bond, i)
                elif bond is not None:
                    raise SmartsParseError("Bond without a preceding atom", offset=i)
                prev, bond = current, None

        if branches:
            raise SmartsParseError("Unbalanced parentheses", offset=len(text))
        if rings:
            raise SmartsParseError(f"Unclosed ring bond {min(rings)}", offset=len(text))
        if bond is not None:
            raise SmartsParseError("Trailing bond", offset=len(text))

        pattern = SmartsPattern(tuple(atoms), tuple(bonds.values()), name, text)
        if not nx.is_connected(pattern.nx_graph):
            raise SmartsParseError("Disconnected patterns are unsupported")
        return pattern

    def _read_bond(self, i: int) -> Tuple[BondPredicate, int]:
        text = self._text
        primitives = []
        negate = False
        while i < len(text):
            ch = text[i]
            if ch == '!':
                negate = not negate
            elif ch in '&;':
                pass
            elif ch == ',':
                raise SmartsParseError("OR lists (',') are unsupported", offset=i)
            elif ch in _BOND_KINDS:
                primitives.append(BondPrimitive(_BOND_KINDS[ch], negate))
                negate = False
            else:
                break
            i += 1
        if negate or not primitives:
            raise SmartsParseError("Incomplete bond expression", offset=i)
        return BondPredicate(tuple(primitives)), i

    def _read_atom(self, i: int) -> Tuple[AtomPredicate, int]:
        text = self._text
        if text[i] == '[':
            close = text.find(']', i)
            if close < 0:
                raise SmartsParseError("Unterminated bracket atom", offset=i)
            primitives = self._read_bracket(text[i + 1:close], i + 1)
            return AtomPredicate(tuple(primitives)), close + 1
        if text[i] == '*':
            return AtomPredicate((AtomPrimitive('any'),)), i + 1
        if text[i] == 'A':
            return AtomPredicate((AtomPrimitive('aliphatic'),)), i + 1
        if text[i] == 'a':
            return AtomPredicate((AtomPrimitive('aromatic'),)), i + 1
        for symbol in ('Cl', 'Br', 'B', 'C', 'N', 'O', 'P', 'S', 'F', 'I'):
            if text.startswith(symbol, i):
                return AtomPredicate((self._element_primitive(symbol, i),)), i + len(symbol)
        if text[i] in AROMATIC_SYMBOLS:
            return AtomPredicate((self._element_primitive(text[i], i),)), i + 1
        raise SmartsParseError(f"Unexpected character '{text[i]}'", offset=i)

    def _element_primitive(self, symbol: str, offset: int, negate: bool = False) -> AtomPrimitive:
        record = self.elements.get(symbol.capitalize())
        if record is None:
            raise SmartsParseError(f"Unknown element symbol '{symbol}'", offset=offset)
        kind = 'aromatic_element' if symbol[0].islower() else 'aliphatic_element'
        return AtomPrimitive(kind, record.atomic_number, negate)

    def _read_bracket(self, body: str, base: int) -> List[AtomPrimitive]:
        if body.startswith('$('):
            raise SmartsParseError("Recursive SMARTS ('$(') is unsupported", offset=base)
        if body in ('H', 'H+', 'H-'):
            primitives = [AtomPrimitive('atomic_number', 1)]
            if len(body) == 2:
                primitives.append(AtomPrimitive('charge', 1 if body[1] == '+' else -1))
            return primitives

        primitives: List[AtomPrimitive] = []
        negate = False
        j = 0
        while j < len(body):
            ch = body[j]
            offset = base + j
            if ch == '!':
                negate = not negate
                j += 1
                continue
            if ch in '&;':
                if negate:
                    raise SmartsParseError("Dangling '!'", offset=offset)
                j += 1
                continue
            if ch == ',':
                raise SmartsParseError("OR lists (',') are unsupported", offset=offset)
            if ch == '$':
                raise SmartsParseError("Recursive SMARTS ('$(') is unsupported", offset=offset)
            if ch == '@':
                raise SmartsParseError("Unsupported SMARTS primitive '@' (chirality)", offset=offset)

            if ch == '#':
                value, j = self._read_number(body, j + 1, None)
                if value is None:
                    raise SmartsParseError("'#' requires an atomic number", offset=offset)
                primitive = AtomPrimitive('atomic_number', value, negate)
            elif ch == '*':
                primitive, j = AtomPrimitive('any', 0, negate), j + 1
            elif ch in 'DHX':
                value, j = self._read_number(body, j + 1, 1)
                kind = {'D': 'degree', 'H': 'total_h', 'X': 'connectivity'}[ch]
                primitive = AtomPrimitive(kind, value, negate)
            elif ch == 'R':
                value, j = self._read_number(body, j + 1, None)
                if value is None:
                    primitive = AtomPrimitive('in_ring', 0, negate)
                elif value == 0:
                    primitive = AtomPrimitive('in_ring', 0, not negate)
                else:
                    primitive = AtomPrimitive('ring_count', value, negate)
            elif ch in '+-':
                sign = 1 if ch == '+' else -1
                value, k = self._read_number(body, j + 1, None)
                if value is None:
                    count = 1
                    k = j + 1
                    while k < len(body) and body[k] == ch:
                        count += 1
                        k += 1
                    value = count
                primitive, j = AtomPrimitive('charge', sign * value, negate), k
            elif ch == 'A' and not body[j + 1:j + 2].islower():
                primitive, j = AtomPrimitive('aliphatic', 0, negate), j + 1
            elif ch == 'a':
                primitive, j = AtomPrimitive('aromatic', 0, negate), j + 1
            elif ch.isupper():
                pair = body[j:j + 2]
                if len(pair) == 2 and pair[1].islower() and pair in self.elements:
                    symbol = pair
                else:
                    symbol = ch
                primitive = self._element_primitive(symbol, offset, negate)
                j += len(symbol)
            elif ch in AROMATIC_SYMBOLS:
                primitive, j = self._element_primitive(ch, offset, negate), j + 1
            elif ch in UNSUPPORTED_PRIMITIVES:
                raise SmartsParseError(f"Unsupported SMARTS primitive '{ch}'", offset=offset)
            else:
                raise SmartsParseError(f"Unexpected character '{ch}' in bracket atom", offset=offset)
            primitives.append(primitive)
            negate = False

        if negate:
            raise SmartsParseError("Dangling '!'", offset=base + len(body))
        if not primitives:
            raise SmartsParseError("Empty bracket atom", offset=base)
        return primitives

    @staticmethod
    def _read_number(body: str, j: int, default: Optional[int]) -> Tuple[Optional[int], int]:
        digits = ''
        while j < len(body) and is_ascii_digit(body[j]):
            digits += body[j]
            j += 1
        return (int(digits) if digits else default), j


def parse_smarts(text: str, name: str = '', elements: Optional[ElementTable] = None) -> SmartsPattern:
    """Parse SMARTS text into a :class:`SmartsPattern`"""
    return SmartsParser(elements).parse(text, name)


def match_pattern(pattern: SmartsPattern, graph: MolecularGraph) -> List[Tuple[int, ...]]:
    """All injective embeddings of ``pattern`` into ``graph``.

    Each embedding is a tuple whose k-th entry is the molecule atom bound
    to pattern atom k. Automorphic embeddings are reported separately.
    """
    if graph.num_atoms < pattern.num_atoms or graph.num_bonds < len(pattern.bonds):
        return []

    def node_match(mol_attrs: dict, pattern_attrs: dict) -> bool:
        return pattern.atoms[pattern_attrs['index']](graph, mol_attrs['index'])

    def edge_match(mol_attrs: dict, pattern_attrs: dict) -> bool:
        return pattern_attrs['predicate'](graph, mol_attrs['index'])

    matcher = isomorphism.GraphMatcher(graph.nx_graph, pattern.nx_graph, node_match=node_match, edge_match=edge_match)
    matches = []
    for mapping in matcher.subgraph_monomorphisms_iter():
        inverse = {p: m for m, p in mapping.items()}
        matches.append(tuple(inverse[k] for k in range(pattern.num_atoms)))
    return sorted(matches)


def unique_atom_sets(matches: Iterable[Sequence[int]]) -> Set[frozenset]:
    return {frozenset(m) for m in matches}


@dataclass(frozen=True)
class PatternGroup:
    """Named functional group; matches when any alternative pattern matches"""
    name: str
    patterns: Tuple[SmartsPattern, ...]

    def matches(self, graph: MolecularGraph) -> List[Tuple[int, ...]]:
        found: List[Tuple[int, ...]] = []
        for pattern in self.patterns:
            found.extend(match_pattern(pattern, graph))
        return found

    def atoms(self, graph: MolecularGraph) -> Set[int]:
        return {i for match in self.matches(graph) for i in match}


def read_pattern_records(path: Path, min_columns: int = 2, max_columns: int = 2) -> List[Tuple[int, List[str]]]:
    """Tab-separated ``name<TAB>SMARTS...`` records, skipping blanks and ``#`` comments"""
    if not path.exists():
        raise ConfigError(f"Pattern file not found: {path}")
    records = []
    for line_number, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        columns = [c.strip() for c in raw.split('\t') if c.strip()]
        if not min_columns <= len(columns) <= max_columns:
            raise ConfigError(
                f"{path.name} line {line_number}: expected {min_columns}-{max_columns} tab-separated columns, got {len(columns)}"
            )
        records.append((line_number, columns))
    return records


@lru_cache(maxsize=8)
def load_pattern_groups(path: Optional[str] = None) -> Tuple[PatternGroup, ...]:
    """Load functional-group patterns, grouping alternatives that share a name.

    Group order follows first appearance in the file and defines the bit
    order of functional-group features.
    """
    path = Path(path or settings.ODOR_FUNCTIONAL_GROUPS)
    grouped: Dict[str, List[SmartsPattern]] = {}
    for line_number, (name, text) in read_pattern_records(path):
        try:
            grouped.setdefault(name, []).append(parse_smarts(text, name))
        except SmartsParseError as e:
            raise ConfigError(f"{path.name} line {line_number}: {e}") from e
    groups = tuple(PatternGroup(name, tuple(patterns)) for name, patterns in grouped.items())
    logger.debug(f"Loaded {len(groups)} functional groups from {path}")
    return groups
