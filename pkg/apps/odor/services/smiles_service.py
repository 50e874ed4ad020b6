"""
SMILES parsing into immutable molecular graphs, plus ring perception,
aromaticity, conjugation and all-pairs shortest paths
"""
import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .elements import ElementRecord, ElementTable, load_element_table
from .exceptions import SmilesParseError

logger = logging.getLogger(__name__)

ORGANIC_SUBSET = ('Cl', 'Br', 'B', 'C', 'N', 'O', 'P', 'S', 'F', 'I')
AROMATIC_SUBSET = ('b', 'c', 'n', 'o', 'p', 's')
BOND_SYMBOLS = {'-': 1, '=': 2, '#': 3, ':': 4, '/': 1, '\\': 1}
LONE_PAIR_ELEMENTS = {'N', 'O', 'S', 'P'}
DISCONNECTED = -1


def is_ascii_digit(text: str) -> bool:
    # str.isdigit also accepts superscripts and other non-ASCII digits
    return text.isascii() and text.isdigit()


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> int:
        """Bonding slots consumed on each endpoint, aromatic counted as one"""
        return 1 if self is BondOrder.AROMATIC else int(self)

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class AtomNode:
    element: ElementRecord
    formal_charge: int = 0
    implicit_h_count: int = 0
    aromatic: bool = False
    radical_electrons: int = 0
    in_ring: bool = False

    @property
    def symbol(self) -> str:
        return self.element.symbol

    @property
    def atomic_number(self) -> int:
        return self.element.atomic_number


@dataclass(frozen=True)
class BondEdge:
    endpoints: Tuple[int, int]
    order: BondOrder = BondOrder.SINGLE
    conjugated: bool = False
    in_ring: bool = False

    def other(self, atom_index: int) -> int:
        begin, end = self.endpoints
        if atom_index == begin:
            return end
        if atom_index == end:
            return begin
        raise ValueError(f"Atom {atom_index} is not an endpoint of bond {self.endpoints}")


@dataclass(frozen=True)
class MolecularGraph:
    """Atoms as nodes and bonds as edges.

    Instances are immutable; use :meth:`build` to assemble one from atoms
    and bonds so that adjacency, ring and conjugation data stay consistent.
    """
    atoms: Tuple[AtomNode, ...]
    bonds: Tuple[BondEdge, ...]
    adjacency: Tuple[Tuple[int, ...], ...]
    rings: Tuple[Tuple[int, ...], ...] = ()
    smiles: str = field(default='', compare=False)

    @classmethod
    def build(cls, atoms: Sequence[AtomNode], bonds: Sequence[BondEdge], smiles: str = '') -> 'MolecularGraph':
        adjacency: List[List[int]] = [[] for _ in atoms]
        for index, bond in enumerate(bonds):
            for endpoint in bond.endpoints:
                adjacency[endpoint].append(index)
        skeleton = cls(tuple(atoms), tuple(bonds), tuple(tuple(a) for a in adjacency), (), smiles)
        rings = tuple(tuple(r) for r in find_rings(skeleton))
        ring_atoms = {i for ring in rings for i in ring}
        ring_bonds = {frozenset(pair) for ring in rings for pair in _cycle_pairs(ring)}
        atoms = tuple(replace(a, in_ring=i in ring_atoms) for i, a in enumerate(atoms))
        bonds = tuple(replace(b, in_ring=frozenset(b.endpoints) in ring_bonds) for b in bonds)
        graph = cls(atoms, bonds, skeleton.adjacency, rings, smiles)
        return _with_conjugation(graph)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def degree(self, atom_index: int) -> int:
        return len(self.adjacency[atom_index])

    def neighbors(self, atom_index: int) -> List[Tuple[int, int]]:
        """(neighbor atom, bond index) pairs of an atom"""
        return [(self.bonds[b].other(atom_index), b) for b in self.adjacency[atom_index]]

    def bond_between(self, i: int, j: int) -> Optional[int]:
        for b in self.adjacency[i]:
            if self.bonds[b].other(i) == j:
                return b
        return None

    def total_h(self, atom_index: int) -> int:
        """Implicit hydrogens plus explicit hydrogen neighbours"""
        explicit = sum(1 for j, _ in self.neighbors(atom_index) if self.atoms[j].atomic_number == 1)
        return self.atoms[atom_index].implicit_h_count + explicit

    def ring_count(self, atom_index: int) -> int:
        return sum(1 for ring in self.rings if atom_index in ring)

    @property
    def num_components(self) -> int:
        return nx.number_connected_components(self.nx_graph) if self.atoms else 0

    @cached_property
    def nx_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from((i, {'index': i}) for i in range(len(self.atoms)))
        for index, bond in enumerate(self.bonds):
            graph.add_edge(*bond.endpoints, index=index)
        return graph

    def relabel(self, permutation: Sequence[int]) -> 'MolecularGraph':
        """Copy of the graph where old atom ``i`` becomes ``permutation[i]``"""
        if sorted(permutation) != list(range(self.num_atoms)):
            raise ValueError("permutation must be a rearrangement of the atom indices")
        atoms: List[Optional[AtomNode]] = [None] * self.num_atoms
        for old, new in enumerate(permutation):
            atoms[new] = self.atoms[old]
        bonds = [
            replace(b, endpoints=(permutation[b.endpoints[0]], permutation[b.endpoints[1]]))
            for b in self.bonds
        ]
        return MolecularGraph.build(atoms, bonds, self.smiles)


def _cycle_pairs(ring: Sequence[int]) -> List[Tuple[int, int]]:
    return [(ring[k], ring[(k + 1) % len(ring)]) for k in range(len(ring))]


def _order_cycle(nodes: Sequence[int], graph: nx.Graph) -> Tuple[int, ...]:
    """Walk a cycle's node set in bond order starting from its lowest index"""
    members = set(nodes)
    start = min(members)
    sub = graph.subgraph(members)
    if any(d != 2 for _, d in sub.degree()):
        return tuple(sorted(members))
    first, last = sorted(sub.neighbors(start))
    ordered = [start, first]
    while len(ordered) < len(members):
        prev, here = ordered[-2], ordered[-1]
        ordered.append(next(n for n in sub.neighbors(here) if n != prev))
    return tuple(ordered)


def find_rings(graph: MolecularGraph) -> List[Tuple[int, ...]]:
    """Minimum cycle basis of the molecule, each ring as an ordered atom walk.

    The basis size equals bonds - atoms + connected components. Rings are
    sorted by size and then by their atom indices so the result does not
    depend on networkx iteration order.
    """
    if graph.num_bonds == 0:
        return []
    basis = nx.minimum_cycle_basis(graph.nx_graph)
    rings = [_order_cycle(cycle, graph.nx_graph) for cycle in basis]
    return sorted(rings, key=lambda r: (len(r), sorted(r)))


def shortest_paths(graph: MolecularGraph) -> np.ndarray:
    """Symmetric hop-count matrix, ``DISCONNECTED`` (-1) between fragments"""
    n = graph.num_atoms
    distances = np.full((n, n), DISCONNECTED, dtype=np.int64)
    for source, lengths in nx.all_pairs_shortest_path_length(graph.nx_graph):
        for target, hops in lengths.items():
            distances[source, target] = hops
    return distances


def _with_conjugation(graph: MolecularGraph) -> MolecularGraph:
    """Flag conjugated bonds.

    Aromatic bonds are conjugated. A single bond is conjugated when both
    ends are unsaturated, or one end is unsaturated and the other is N, O,
    S or P. A double or triple bond is conjugated when it touches an
    aromatic bond or a conjugated single bond.
    """
    def unsaturated(atom: int, skip: int) -> bool:
        return any(graph.bonds[b].order != BondOrder.SINGLE for b in graph.adjacency[atom] if b != skip)

    single_conj = set()
    for index, bond in enumerate(graph.bonds):
        if bond.order != BondOrder.SINGLE:
            continue
        a, b = bond.endpoints
        ua, ub = unsaturated(a, index), unsaturated(b, index)
        lone_a = graph.atoms[a].symbol in LONE_PAIR_ELEMENTS
        lone_b = graph.atoms[b].symbol in LONE_PAIR_ELEMENTS
        if (ua and ub) or (ua and lone_b) or (ub and lone_a):
            single_conj.add(index)

    bonds = []
    for index, bond in enumerate(graph.bonds):
        if bond.order == BondOrder.AROMATIC:
            conjugated = True
        elif bond.order == BondOrder.SINGLE:
            conjugated = index in single_conj
        else:
            conjugated = any(
                other in single_conj or graph.bonds[other].order == BondOrder.AROMATIC
                for atom in bond.endpoints
                for other in graph.adjacency[atom]
                if other != index
            )
        bonds.append(replace(bond, conjugated=conjugated))
    return replace(graph, bonds=tuple(bonds))


@dataclass
class _PendingAtom:
    element: ElementRecord
    aromatic: bool
    bracket: bool
    offset: int
    charge: int = 0
    h_count: int = 0


class SmilesParser:
    """Single-pass SMILES reader for the supported dialect.

    Supported: organic-subset and bracket atoms with charge and explicit H,
    lowercase aromatic atoms, branches, ring closures 1-9 and %nn, bond
    symbols - = # : and the '.' fragment separator. Stereo markers and
    isotopes are accepted and ignored with a warning.
    """

    def __init__(self, elements: Optional[ElementTable] = None):
        self.elements = elements or load_element_table()

    def parse(self, text: str) -> MolecularGraph:
        if text is None or not text.strip():
            raise SmilesParseError("Empty SMILES input", offset=0, kind='empty')
        text = text.strip()
        self._text = text
        self._atoms: List[_PendingAtom] = []
        self._bonds: Dict[frozenset, Tuple[int, int, Optional[int]]] = {}
        self._ignored: List[str] = []

        self._scan()
        graph = self._finish()
        if self._ignored:
            message = f"Ignored {', '.join(sorted(set(self._ignored)))} in SMILES {text!r}"
            warnings.warn(message, stacklevel=3)
            logger.debug(message)
        return graph

    # -- scanning ---------------------------------------------------------

    def _scan(self) -> None:
        text = self._text
        i = 0
        prev: Optional[int] = None
        branches: List[Tuple[Optional[int], int]] = []
        rings: Dict[int, Tuple[int, Optional[int], int]] = {}
        bond: Optional[int] = None
        bond_offset = 0

        while i < len(text):
            ch = text[i]
            if ch == '(':
                if prev is None:
                    raise SmilesParseError("Branch opened before any atom", offset=i, kind='unbalanced_parentheses')
                branches.append((prev, i))
                i += 1
            elif ch == ')':
                if not branches:
                    raise SmilesParseError("Unbalanced parentheses: unmatched ')'", offset=i, kind='unbalanced_parentheses')
                if bond is not None:
                    raise SmilesParseError("Bond symbol not followed by an atom", offset=bond_offset)
                prev, _ = branches.pop()
                i += 1
            elif ch in BOND_SYMBOLS:
                if bond is not None:
                    raise SmilesParseError("Two consecutive bond symbols", offset=i)
                if ch in '/\\':
                    self._ignored.append('stereo bond markers')
                bond, bond_offset = BOND_SYMBOLS[ch], i
                i += 1
            elif ch == '.':
                if bond is not None:
                    raise SmilesParseError("Bond symbol before fragment separator", offset=bond_offset)
                prev = None
                i += 1
            elif is_ascii_digit(ch) or ch == '%':
                if prev is None:
                    raise SmilesParseError("Ring closure before any atom", offset=i, kind='unbalanced_ring_closure')
                if ch == '%':
                    digits = text[i + 1:i + 3]
                    if len(digits) != 2 or not is_ascii_digit(digits):
                        raise SmilesParseError("'%' must be followed by two digits", offset=i)
                    label, width = int(digits), 3
                else:
                    label, width = int(ch), 1
                if label in rings:
                    partner, open_bond, open_offset = rings.pop(label)
                    if partner == prev:
                        raise SmilesParseError(f"Ring closure {label} bonds an atom to itself", offset=i, kind='unbalanced_ring_closure')
                    if open_bond is not None and bond is not None and open_bond != bond:
                        raise SmilesParseError(f"Conflicting bond symbols on ring closure {label}", offset=i)
                    self._add_bond(partner, prev, bond if bond is not None else open_bond, i)
                else:
                    rings[label] = (prev, bond, i)
                bond = None
                i += width
            else:
                atom, i = self._read_atom(i)
                if prev is not None:
                    self._add_bond(prev, atom, bond, bond_offset if bond is not None else i)
                elif bond is not None:
                    raise SmilesParseError("Bond symbol without a preceding atom", offset=bond_offset)
                bond = None
                prev = atom

        if bond is not None:
            raise SmilesParseError("Trailing bond symbol", offset=bond_offset)
        if branches:
            raise SmilesParseError("Unbalanced parentheses: unclosed '('", offset=branches[-1][1], kind='unbalanced_parentheses')
        if rings:
            label, (_, _, offset) = min(rings.items(), key=lambda item: item[1][2])
            raise SmilesParseError(f"Unbalanced ring closure {label}", offset=offset, kind='unbalanced_ring_closure')

    def _add_bond(self, a: int, b: int, order: Optional[int], offset: int) -> None:
        key = frozenset((a, b))
        if key in self._bonds:
            raise SmilesParseError(f"Duplicate bond between atoms {a} and {b}", offset=offset)
        self._bonds[key] = (a, b, order)

    def _read_atom(self, i: int) -> Tuple[int, int]:
        text = self._text
        if text[i] == '[':
            return self._read_bracket_atom(i)
        for symbol in ORGANIC_SUBSET:
            if text.startswith(symbol, i):
                self._atoms.append(_PendingAtom(self._element(symbol, i), False, False, i))
                return len(self._atoms) - 1, i + len(symbol)
        if text[i] in AROMATIC_SUBSET:
            self._atoms.append(_PendingAtom(self._element(text[i].upper(), i), True, False, i))
            return len(self._atoms) - 1, i + 1
        if text[i].isalpha():
            symbol = text[i:i + 2] if i + 1 < len(text) and text[i + 1].islower() else text[i]
            raise SmilesParseError(f"Unknown element symbol '{symbol}'", offset=i, kind='unknown_element')
        raise SmilesParseError(f"Unexpected character '{text[i]}'", offset=i)

    def _read_bracket_atom(self, start: int) -> Tuple[int, int]:
        text = self._text
        close = text.find(']', start)
        if close < 0:
            raise SmilesParseError("Unterminated bracket atom", offset=start)
        body = text[start + 1:close]
        j = 0

        if j < len(body) and is_ascii_digit(body[j]):
            while j < len(body) and is_ascii_digit(body[j]):
                j += 1
            self._ignored.append('isotopes')

        if j >= len(body) or not body[j].isalpha():
            raise SmilesParseError("Bracket atom without an element symbol", offset=start + 1 + j)
        if body[j].islower():
            aromatic = True
            symbol = body[j:j + 2] if j + 1 < len(body) and body[j + 1].islower() else body[j]
            if symbol not in AROMATIC_SUBSET:
                raise SmilesParseError(f"Unknown aromatic element '{symbol}'", offset=start + 1 + j, kind='unknown_element')
            element = self._element(symbol.upper(), start + 1 + j)
        else:
            aromatic = False
            symbol = body[j:j + 2] if j + 1 < len(body) and body[j + 1].islower() else body[j]
            element = self._element(symbol, start + 1 + j)
        j += len(symbol)

        if j < len(body) and body[j] == '@':
            while j < len(body) and (body[j] == '@' or body[j].isupper() or is_ascii_digit(body[j])) and body[j] != 'H':
                j += 1
            self._ignored.append('chirality')

        h_count = 0
        if j < len(body) and body[j] == 'H':
            j += 1
            digits = ''
            while j < len(body) and is_ascii_digit(body[j]):
                digits += body[j]
                j += 1
            h_count = int(digits) if digits else 1

        charge = 0
        if j < len(body) and body[j] in '+-':
            sign = 1 if body[j] == '+' else -1
            j += 1
            digits = ''
            while j < len(body) and is_ascii_digit(body[j]):
                digits += body[j]
                j += 1
            if digits:
                charge = sign * int(digits)
            else:
                charge = sign
                while j < len(body) and body[j] == body[j - 1]:
                    charge += sign
                    j += 1

        if j < len(body) and body[j] == ':':
            j += 1
            while j < len(body) and is_ascii_digit(body[j]):
                j += 1

        if j != len(body):
            raise SmilesParseError(f"Unexpected '{body[j]}' in bracket atom", offset=start + 1 + j)

        self._atoms.append(_PendingAtom(element, aromatic, True, start, charge, h_count))
        return len(self._atoms) - 1, close + 1

    def _element(self, symbol: str, offset: int) -> ElementRecord:
        record = self.elements.get(symbol)
        if record is None:
            raise SmilesParseError(f"Unknown element symbol '{symbol}'", offset=offset, kind='unknown_element')
        return record

    # -- graph assembly ---------------------------------------------------

    def _finish(self) -> MolecularGraph:
        pending = self._atoms
        kekule: List[Tuple[int, int, BondOrder]] = []
        for a, b, order in self._bonds.values():
            if order is None:
                order = BondOrder.AROMATIC if pending[a].aromatic and pending[b].aromatic else BondOrder.SINGLE
            order = BondOrder(order)
            if order == BondOrder.AROMATIC and not (pending[a].aromatic and pending[b].aromatic):
                raise SmilesParseError(
                    "Aromatic bond between atoms not both aromatic",
                    offset=pending[b].offset, kind='aromaticity',
                )
            kekule.append((a, b, order))

        hydrogens, radicals = self._assign_hydrogens(kekule)
        atoms = [
            AtomNode(
                element=p.element,
                formal_charge=p.charge,
                implicit_h_count=hydrogens[k],
                aromatic=p.aromatic,
                radical_electrons=radicals[k],
            )
            for k, p in enumerate(pending)
        ]
        bonds = [BondEdge(endpoints=(a, b), order=order) for a, b, order in kekule]
        skeleton = MolecularGraph.build(atoms, bonds, self._text)
        return self._perceive_aromaticity(skeleton)

    def _assign_hydrogens(self, bonds: List[Tuple[int, int, BondOrder]]) -> Tuple[List[int], List[int]]:
        """Fill implicit hydrogens to the lowest permitted valence and check valences"""
        used = [0] * len(self._atoms)
        for a, b, order in bonds:
            used[a] += order.valence
            used[b] += order.valence

        hydrogens, radicals = [], []
        for k, atom in enumerate(self._atoms):
            permitted = atom.element.permitted_valences(atom.charge)
            if not permitted:
                raise SmilesParseError(
                    f"No valid valence for {atom.element.symbol} with charge {atom.charge:+d}",
                    offset=atom.offset, kind='valence',
                )
            if atom.bracket:
                total = used[k] + atom.h_count
                if total > max(permitted):
                    raise SmilesParseError(
                        f"Valence violation on {atom.element.symbol}: {total} exceeds {max(permitted)}",
                        offset=atom.offset, kind='valence',
                    )
                hydrogens.append(atom.h_count)
                if atom.aromatic:
                    radicals.append(0)
                else:
                    radicals.append(min(v for v in permitted if v >= total) - total)
                continue

            if used[k] > max(permitted):
                raise SmilesParseError(
                    f"Valence violation on {atom.element.symbol}: {used[k]} bonds exceed {max(permitted)}",
                    offset=atom.offset, kind='valence',
                )
            if atom.aromatic:
                hydrogens.append(max(0, min(permitted) - used[k] - 1))
            else:
                hydrogens.append(min(v for v in permitted if v >= used[k]) - used[k])
            radicals.append(0)
        return hydrogens, radicals

    def _perceive_aromaticity(self, graph: MolecularGraph) -> MolecularGraph:
        """Mark aromatic rings and demote aromatic bonds outside them.

        A basis ring is aromatic when every member was written lowercase,
        or when its pi-electron count (see :func:`pi_electrons`) is 4n+2.
        """
        aromatic_atoms = set()
        aromatic_pairs = set()
        for ring in graph.rings:
            written = all(graph.atoms[i].aromatic for i in ring)
            if written or _huckel(graph, ring):
                aromatic_atoms.update(ring)
                aromatic_pairs.update(frozenset(p) for p in _cycle_pairs(ring))

        for index, atom in enumerate(graph.atoms):
            if atom.aromatic and index not in aromatic_atoms:
                raise SmilesParseError(
                    f"Aromatic atom {atom.symbol.lower()} is not part of an aromatic ring",
                    offset=self._atoms[index].offset, kind='aromaticity',
                )

        atoms = [replace(a, aromatic=i in aromatic_atoms) for i, a in enumerate(graph.atoms)]
        bonds = []
        for bond in graph.bonds:
            key = frozenset(bond.endpoints)
            if key in aromatic_pairs:
                bonds.append(replace(bond, order=BondOrder.AROMATIC))
            elif bond.order == BondOrder.AROMATIC:
                bonds.append(replace(bond, order=BondOrder.SINGLE))
            else:
                bonds.append(bond)
        return MolecularGraph.build(atoms, bonds, graph.smiles)


def pi_electrons(graph: MolecularGraph, atom_index: int) -> Optional[int]:
    """Pi electrons an atom donates to a ring, None when it breaks aromaticity.

    Written-aromatic atoms: c -> 1, n/p -> 1 or 2 (2 with H or three
    connections), o/s -> 2, b -> 0. Kekule atoms: a double bond to a ring
    atom -> 1, an exocyclic double bond to a non-ring atom -> 0, a triple
    bond -> None. Saturated atoms: neutral three-connected N/P, two-connected
    O/S and carbanions -> 2, carbocations and boron -> 0, anything else None.
    """
    atom = graph.atoms[atom_index]
    symbol = atom.symbol
    connections = graph.degree(atom_index) + atom.implicit_h_count
    if atom.aromatic:
        if symbol == 'C':
            return 2 if atom.formal_charge < 0 else (0 if atom.formal_charge > 0 else 1)
        if symbol in ('N', 'P'):
            return 2 if (atom.implicit_h_count > 0 or graph.degree(atom_index) == 3) and atom.formal_charge == 0 else 1
        if symbol in ('O', 'S'):
            return 2 if atom.formal_charge == 0 else 1
        if symbol == 'B':
            return 0
        return None

    orders = {graph.bonds[b].order for b in graph.adjacency[atom_index]}
    if BondOrder.TRIPLE in orders:
        return None
    for neighbor, b in graph.neighbors(atom_index):
        if graph.bonds[b].order == BondOrder.DOUBLE:
            return 1 if graph.atoms[neighbor].in_ring else 0
    if symbol in ('N', 'P') and connections == 3 and atom.formal_charge == 0:
        return 2
    if symbol in ('O', 'S') and connections == 2 and atom.formal_charge == 0:
        return 2
    if symbol == 'C' and atom.formal_charge < 0:
        return 2
    if (symbol == 'C' and atom.formal_charge > 0) or symbol == 'B':
        return 0
    return None


def _huckel(graph: MolecularGraph, ring: Sequence[int]) -> bool:
    counts = [pi_electrons(graph, i) for i in ring]
    if any(c is None for c in counts):
        return False
    total = sum(counts)
    return total >= 2 and total % 4 == 2


def parse_smiles(text: str, elements: Optional[ElementTable] = None) -> MolecularGraph:
    """Parse SMILES text into a :class:`MolecularGraph`.

    Parsers keep per-call scan state, so each call gets its own.
    """
    return SmilesParser(elements).parse(text)
