import warnings

import numpy as np
from django.test import SimpleTestCase

from odor.services.elements import load_element_table
from odor.services.exceptions import SmilesParseError
from odor.services.smiles_service import (
    DISCONNECTED,
    BondOrder,
    find_rings,
    parse_smiles,
    pi_electrons,
    shortest_paths,
)

# smiles, heavy atoms, bonds, basis rings
CORPUS = [
    ('C', 1, 0, 0),
    ('CC', 2, 1, 0),
    ('CCO', 3, 2, 0),
    ('CC(C)C', 4, 3, 0),
    ('CC(C)(C)C', 5, 4, 0),
    ('C=C', 2, 1, 0),
    ('C#C', 2, 1, 0),
    ('C=O', 2, 1, 0),
    ('CC#N', 3, 2, 0),
    ('C1CC1', 3, 3, 1),
    ('C1CCC1', 4, 4, 1),
    ('C1CCCC1', 5, 5, 1),
    ('C1CCCCC1', 6, 6, 1),
    ('c1ccccc1', 6, 6, 1),
    ('C1=CC=CC=C1', 6, 6, 1),
    ('c1ccncc1', 6, 6, 1),
    ('c1cc[nH]c1', 5, 5, 1),
    ('c1ccoc1', 5, 5, 1),
    ('c1ccsc1', 5, 5, 1),
    ('c1ccc2ccccc2c1', 10, 11, 2),
    ('CC(=O)O', 4, 3, 0),
    ('CC(=O)OCC', 6, 5, 0),
    ('CCOCC', 5, 4, 0),
    ('CCN', 3, 2, 0),
    ('CN(C)C', 4, 3, 0),
    ('CC(=O)N', 4, 3, 0),
    ('ClCCl', 3, 2, 0),
    ('BrC(Br)Br', 4, 3, 0),
    ('FC(F)(F)F', 5, 4, 0),
    ('CI', 2, 1, 0),
    ('CS', 2, 1, 0),
    ('CSC', 3, 2, 0),
    ('CCS(=O)(=O)O', 6, 5, 0),
    ('OP(=O)(O)O', 5, 4, 0),
    ('B(O)(O)O', 4, 3, 0),
    ('C[N+](=O)[O-]', 4, 3, 0),
    ('[NH4+]', 1, 0, 0),
    ('[CH3-]', 1, 0, 0),
    ('CC(=O)Oc1ccccc1C(=O)O', 13, 13, 1),
    ('c1ccc(cc1)O', 7, 7, 1),
    ('OCC(O)CO', 6, 5, 0),
    ('C1CC2CCC1C2', 7, 8, 2),
    ('C1CC1.CC', 5, 4, 1),
    ('CC=CC', 4, 3, 0),
    ('C=CC=C', 4, 3, 0),
    ('CC(C)=O', 4, 3, 0),
    ('O=C1CCCCC1', 7, 7, 1),
    ('c1ccc2[nH]ccc2c1', 9, 10, 2),
    ('N#N', 2, 1, 0),
    ('O=C=O', 3, 2, 0),
    ('CC(C)(C)O', 5, 4, 0),
    ('C1CC2CCCCC2CC1', 10, 11, 2),
    ('c1ccc(cc1)-c1ccccc1', 12, 13, 2),
]

MALFORMED = [
    ('', 'empty'),
    ('   ', 'empty'),
    ('C1CC', 'unbalanced_ring_closure'),
    ('C1CC1C1', 'unbalanced_ring_closure'),
    ('CC(C', 'unbalanced_parentheses'),
    ('CC)C', 'unbalanced_parentheses'),
    ('(C)C', 'unbalanced_parentheses'),
    ('CXC', 'unknown_element'),
    ('[Xe]', 'unknown_element'),
    ('C(C)(C)(C)(C)C', 'valence'),
    ('O=O=O', 'valence'),
    ('cC', 'aromaticity'),
    ('C==C', 'syntax'),
]


class ParseCorpusTest(SimpleTestCase):

    def test_corpus_counts(self):
        for smiles, atoms, bonds, rings in CORPUS:
            with self.subTest(smiles=smiles):
                graph = parse_smiles(smiles)
                self.assertEqual(graph.num_atoms, atoms)
                self.assertEqual(graph.num_bonds, bonds)
                self.assertEqual(len(graph.rings), rings)

    def test_cycle_rank_matches_ring_count(self):
        for smiles, *_ in CORPUS:
            with self.subTest(smiles=smiles):
                graph = parse_smiles(smiles)
                self.assertEqual(graph.num_bonds - graph.num_atoms + graph.num_components, len(graph.rings))

    def test_malformed_inputs_raise_documented_kind(self):
        for smiles, kind in MALFORMED:
            with self.subTest(smiles=smiles):
                with self.assertRaises(SmilesParseError) as cm:
                    parse_smiles(smiles)
                self.assertEqual(cm.exception.kind, kind)

    def test_non_ascii_digits_are_syntax_errors(self):
        cases = [('C²CC²', 1), ('C%²³CC%²³', 1), ('[¹³C]', 1), ('[CH²]', 3), ('[NH4+²]', 5)]
        for smiles, offset in cases:
            with self.subTest(smiles=smiles):
                with self.assertRaises(SmilesParseError) as cm:
                    parse_smiles(smiles)
                self.assertEqual(cm.exception.kind, 'syntax')
                self.assertEqual(cm.exception.offset, offset)

    def test_unknown_element_reports_offset(self):
        with self.assertRaises(SmilesParseError) as cm:
            parse_smiles('CCXC')
        self.assertEqual(cm.exception.offset, 2)
        self.assertIn('offset 2', str(cm.exception))

    def test_parsing_is_deterministic(self):
        for smiles, *_ in CORPUS:
            self.assertEqual(parse_smiles(smiles), parse_smiles(smiles))

    def test_valences_are_permitted(self):
        elements = load_element_table()
        for smiles, *_ in CORPUS:
            graph = parse_smiles(smiles)
            for index, atom in enumerate(graph.atoms):
                used = sum(graph.bonds[b].order.valence for b in graph.adjacency[index])
                if atom.aromatic:
                    continue
                total = used + atom.implicit_h_count + atom.radical_electrons
                with self.subTest(smiles=smiles, atom=index):
                    self.assertIn(total, elements.get(atom.symbol).permitted_valences(atom.formal_charge))


class AtomDetailTest(SimpleTestCase):

    def test_ethanol(self):
        graph = parse_smiles('CCO')
        self.assertEqual([a.symbol for a in graph.atoms], ['C', 'C', 'O'])
        self.assertEqual([a.implicit_h_count for a in graph.atoms], [3, 2, 1])
        self.assertTrue(all(b.order == BondOrder.SINGLE for b in graph.bonds))
        self.assertFalse(any(a.in_ring for a in graph.atoms))

    def test_benzene_is_aromatic(self):
        graph = parse_smiles('c1ccccc1')
        self.assertTrue(all(a.aromatic for a in graph.atoms))
        self.assertTrue(all(b.order == BondOrder.AROMATIC for b in graph.bonds))
        self.assertEqual([a.implicit_h_count for a in graph.atoms], [1] * 6)
        self.assertEqual(len(graph.rings), 1)
        self.assertEqual(len(graph.rings[0]), 6)

    def test_kekule_benzene_is_perceived_aromatic(self):
        kekule = parse_smiles('C1=CC=CC=C1')
        self.assertTrue(all(a.aromatic for a in kekule.atoms))
        self.assertTrue(all(b.order == BondOrder.AROMATIC for b in kekule.bonds))
        self.assertEqual([a.implicit_h_count for a in kekule.atoms], [1] * 6)

    def test_antiaromatic_and_saturated_rings_stay_kekule(self):
        for smiles in ('C1=CC=C1', 'C1=CCC=C1', 'C1=CCCCC1'):
            with self.subTest(smiles=smiles):
                graph = parse_smiles(smiles)
                self.assertFalse(any(a.aromatic for a in graph.atoms))
                self.assertIn(BondOrder.DOUBLE, {b.order for b in graph.bonds})

    def test_heteroaromatic_hydrogens(self):
        pyridine = parse_smiles('c1ccncc1')
        nitrogen = next(a for a in pyridine.atoms if a.symbol == 'N')
        self.assertEqual(nitrogen.implicit_h_count, 0)

        pyrrole = parse_smiles('c1cc[nH]c1')
        nitrogen_index = next(i for i, a in enumerate(pyrrole.atoms) if a.symbol == 'N')
        self.assertEqual(pyrrole.total_h(nitrogen_index), 1)
        self.assertEqual(pi_electrons(pyrrole, nitrogen_index), 2)

    def test_bracket_charges(self):
        graph = parse_smiles('C[N+](=O)[O-]')
        self.assertEqual([a.formal_charge for a in graph.atoms], [0, 1, 0, -1])
        self.assertEqual(graph.atoms[3].implicit_h_count, 0)

    def test_ring_flags(self):
        graph = parse_smiles('CC1CC1')
        self.assertEqual([a.in_ring for a in graph.atoms], [False, True, True, True])
        ring_bonds = [b.in_ring for b in graph.bonds]
        self.assertEqual(ring_bonds.count(True), 3)
        self.assertFalse(graph.bonds[0].in_ring)

    def test_conjugation(self):
        butadiene = parse_smiles('C=CC=C')
        self.assertTrue(all(b.conjugated for b in butadiene.bonds))
        propane = parse_smiles('CCC')
        self.assertFalse(any(b.conjugated for b in propane.bonds))
        benzene = parse_smiles('c1ccccc1')
        self.assertTrue(all(b.conjugated for b in benzene.bonds))

    def test_double_percent_ring_closure(self):
        graph = parse_smiles('C%10CC%10')
        self.assertEqual(len(graph.rings), 1)

    def test_stereo_and_isotopes_warn(self):
        with self.assertWarns(UserWarning):
            graph = parse_smiles('F/C=C/F')
        self.assertEqual(graph.num_atoms, 4)
        with self.assertWarns(UserWarning):
            graph = parse_smiles('[13CH4]')
        self.assertEqual(graph.atoms[0].implicit_h_count, 4)
        with self.assertWarns(UserWarning):
            parse_smiles('N[C@@H](C)C(=O)O')

    def test_plain_input_does_not_warn(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            parse_smiles('CC(=O)OCC')
        self.assertFalse([w for w in caught if 'Ignored' in str(w.message)])


class RingAndPathTest(SimpleTestCase):

    def test_find_rings(self):
        self.assertEqual(len(find_rings(parse_smiles('C1CC1'))), 1)
        self.assertEqual(find_rings(parse_smiles('CCO')), [])
        naphthalene = find_rings(parse_smiles('c1ccc2ccccc2c1'))
        self.assertEqual([len(r) for r in naphthalene], [6, 6])

    def test_shortest_paths_examples(self):
        self.assertEqual(shortest_paths(parse_smiles('CCO'))[0, 2], 2)
        self.assertEqual(shortest_paths(parse_smiles('c1ccccc1')).max(), 3)
        np.testing.assert_array_equal(shortest_paths(parse_smiles('C')), np.zeros((1, 1)))

    def test_disconnected_pairs_use_sentinel(self):
        distances = shortest_paths(parse_smiles('CC.O'))
        self.assertEqual(distances[0, 2], DISCONNECTED)
        self.assertEqual(distances[2, 2], 0)

    def test_symmetry_and_triangle_inequality(self):
        for smiles in ('CC(C)(C)O', 'c1ccc2ccccc2c1', 'C1CC2CCC1C2', 'CC(=O)Oc1ccccc1C(=O)O'):
            distances = shortest_paths(parse_smiles(smiles))
            np.testing.assert_array_equal(distances, distances.T)
            np.testing.assert_array_equal(np.diag(distances), 0)
            n = len(distances)
            for k in range(n):
                bound = distances[:, [k]] + distances[[k], :]
                self.assertTrue(np.all(distances <= bound))

    def test_relabel_preserves_structure(self):
        graph = parse_smiles('CC(=O)Oc1ccccc1C(=O)O')
        permutation = [int(i) for i in np.random.default_rng(4).permutation(graph.num_atoms)]
        relabeled = graph.relabel(permutation)
        self.assertEqual(len(relabeled.rings), len(graph.rings))
        self.assertEqual(sorted(a.symbol for a in relabeled.atoms), sorted(a.symbol for a in graph.atoms))
        for old, new in enumerate(permutation):
            self.assertEqual(relabeled.degree(new), graph.degree(old))
            self.assertEqual(relabeled.atoms[new].aromatic, graph.atoms[old].aromatic)
