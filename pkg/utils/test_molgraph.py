from collections import defaultdict
import itertools
import unittest
from io import StringIO
import os

import numpy as np

from molgraph import (AROMATIC, DOUBLE, RING_LIMIT, SINGLE, DEFAULT_VOCAB, GenerationError,
                      InvalidInputError, MolecularGraph, UnsupportedSizeError, build_line_graph,
                      canonical_key, check_valence, extract_motifs, format_formula,
                      matrix_from_pairs, molecule_from_record, pair_values, parse_formula,
                      random_molecule, read_molecules, write_molecule)


SLOW = os.environ.get('DUALLGD_SLOW') == '1'


def butane():
    return MolecularGraph.from_bond_list([0, 0, 0, 0], [(0, 1, SINGLE), (1, 2, SINGLE),
                                                        (2, 3, SINGLE)])


def butadiene():
    return MolecularGraph.from_bond_list([0, 0, 0, 0], [(0, 1, DOUBLE), (1, 2, SINGLE),
                                                        (2, 3, DOUBLE)])


def benzene():
    return MolecularGraph.from_bond_list([0] * 6, [(k, (k + 1) % 6, AROMATIC) for k in range(6)])


def propenylbenzene():
    ring = [(k, (k + 1) % 6, AROMATIC) for k in range(6)]
    return MolecularGraph.from_bond_list([0] * 9, ring + [(0, 6, SINGLE), (6, 7, DOUBLE),
                                                         (7, 8, SINGLE)])


def motif_oracle(g):
    """Motifs read straight off atom sequences, for comparison with
    extract_motifs."""
    n = g.n_atoms
    index = build_line_graph(n).pair_index

    def bonded(path):
        return all(g.bonds[a, b] for a, b in zip(path, path[1:]))

    angles = {tuple(sorted((int(index[a, b]), int(index[b, c]))))
              for a, b, c in itertools.permutations(range(n), 3) if bonded((a, b, c))}
    dihedrals = set()
    for a, b, c, d in itertools.permutations(range(n), 4):
        if bonded((a, b, c, d)):
            u, v, w = int(index[a, b]), int(index[b, c]), int(index[c, d])
            dihedrals.add((min(u, w), v, max(u, w)))
    rings = set()
    for size in range(3, min(n, RING_LIMIT) + 1):
        for cycle in itertools.permutations(range(n), size):
            if cycle[0] == min(cycle) and cycle[1] < cycle[-1] and bonded(cycle + cycle[:1]):
                edges = [int(index[a, b]) for a, b in zip(cycle, cycle[1:] + cycle[:1])]
                rings.add((tuple(sorted(edges)), size))

    unsaturated = {a for a, b, bond in g.bond_list() if bond != SINGLE}
    unsaturated |= {b for a, b, bond in g.bond_list() if bond != SINGLE}
    members = [(a, b) for a, b, bond in g.bond_list()
               if bond != SINGLE or {a, b} <= unsaturated]
    owner = {bond: bond for bond in members}

    def root(bond):
        while owner[bond] != bond:
            bond = owner[bond]
        return bond
    for first, second in itertools.combinations(members, 2):
        if set(first) & set(second):
            owner[root(first)] = root(second)
    groups = defaultdict(list)
    for bond in members:
        groups[root(bond)].append(int(index[bond]))
    systems = sorted(tuple(sorted(group)) for group in groups.values() if len(group) >= 2)
    return (sorted(angles), sorted(dihedrals), sorted(rings, key=lambda ring: (ring[1], ring[0])),
            systems)


def graphs_with_bonds(n, rng):
    """Every pattern of present bonds on n atoms, each bond of a random class."""
    pairs = list(itertools.combinations(range(n), 2))
    for present in itertools.product((False, True), repeat=len(pairs)):
        bonds = [(i, j, int(rng.integers(SINGLE, AROMATIC + 1)))
                 for (i, j), keep in zip(pairs, present) if keep]
        yield MolecularGraph.from_bond_list(rng.integers(0, 3, size=n), bonds)


def brute_force_form(g):
    """Lexicographically least (atom types, upper bond triangle) over all
    relabellings."""
    n = g.n_atoms
    pairs = list(itertools.combinations(range(n), 2))
    best = None
    for perm in itertools.permutations(range(n)):
        form = (tuple(int(g.atom_types[p]) for p in perm),
                tuple(int(g.bonds[perm[a], perm[b]]) for a, b in pairs))
        if best is None or form < best:
            best = form
    return best

class LineGraphTest(unittest.TestCase):
    def test_pair_count(self):
        for n in range(2, 9):
            self.assertEqual(build_line_graph(n).n_pairs, n * (n - 1) // 2)

    def test_pairs_are_lexicographic(self):
        lg = build_line_graph(4)
        self.assertEqual(lg.pairs.tolist(), [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])

    def test_adjacency_degree(self):
        for n in range(3, 8):
            lg = build_line_graph(n)
            self.assertTrue(np.all(lg.adjacency.sum(axis=1) == 2 * (n - 2)))
            self.assertTrue(np.array_equal(lg.adjacency, lg.adjacency.T))
            self.assertFalse(np.any(np.diag(lg.adjacency)))

    def test_incidence_has_two_endpoints(self):
        lg = build_line_graph(5)
        self.assertTrue(np.all(lg.incidence.sum(axis=0) == 2))
        self.assertTrue(np.all(lg.incidence.sum(axis=1) == 4))

    def test_pair_index_inverts_pairs(self):
        lg = build_line_graph(6)
        for p, (i, j) in enumerate(lg.pairs):
            self.assertEqual(lg.pair_index[i, j], p)
            self.assertEqual(lg.pair_index[j, i], p)
        self.assertTrue(np.all(np.diag(lg.pair_index) == -1))

    def test_single_atom_raises(self):
        with self.assertRaises(InvalidInputError):
            build_line_graph(1)

    def test_result_is_read_only(self):
        lg = build_line_graph(3)
        with self.assertRaises(ValueError):
            lg.pairs[0, 0] = 5

    def test_matrix_from_pairs_inverts_pair_values(self):
        g = benzene()
        lg = build_line_graph(6)
        self.assertTrue(np.array_equal(matrix_from_pairs(pair_values(g.bonds, lg), lg), g.bonds))


class MolecularGraphTest(unittest.TestCase):
    def test_asymmetric_bonds_raise(self):
        bonds = np.zeros((2, 2), dtype=int)
        bonds[0, 1] = SINGLE
        with self.assertRaises(InvalidInputError):
            MolecularGraph([0, 0], bonds)

    def test_nonzero_diagonal_raises(self):
        with self.assertRaises(InvalidInputError):
            MolecularGraph([0, 0], [[1, 0], [0, 0]])

    def test_bond_class_out_of_range_raises(self):
        with self.assertRaises(InvalidInputError):
            MolecularGraph([0, 0], [[0, 5], [5, 0]])

    def test_empty_raises(self):
        with self.assertRaises(InvalidInputError):
            MolecularGraph([], np.zeros((0, 0)))

    def test_self_bond_raises(self):
        with self.assertRaises(InvalidInputError):
            MolecularGraph.from_bond_list([0, 0], [(1, 1, SINGLE)])

    def test_bond_list_and_counts(self):
        g = butane()
        self.assertEqual(g.n_atoms, 4)
        self.assertEqual(g.n_bonds, 3)
        self.assertEqual(g.bond_list(), [(0, 1, 1), (1, 2, 1), (2, 3, 1)])

    def test_permuted_moves_atoms(self):
        g = MolecularGraph.from_bond_list([0, 1, 2], [(0, 1, SINGLE), (1, 2, DOUBLE)])
        h = g.permuted([2, 0, 1])
        self.assertEqual(h.atom_types.tolist(), [1, 2, 0])
        self.assertEqual(h.bonds[2, 0], SINGLE)
        self.assertEqual(h.bonds[0, 1], DOUBLE)

    def test_permuted_rejects_non_permutation(self):
        with self.assertRaises(InvalidInputError):
            butane().permuted([0, 0, 1, 2])

    def test_formula(self):
        g = MolecularGraph.from_bond_list([0, 0, 2], [(0, 1, SINGLE), (1, 2, SINGLE)])
        self.assertEqual(format_formula(g.formula()), 'C2O1')

    def test_is_connected(self):
        self.assertTrue(butane().is_connected())
        self.assertFalse(MolecularGraph.from_bond_list([0, 0, 0], [(0, 1, SINGLE)]).is_connected())

    def test_equality_and_hash(self):
        self.assertEqual(butane(), butane())
        self.assertEqual(hash(butane()), hash(butane()))
        self.assertNotEqual(butane(), butadiene())


class MotifTest(unittest.TestCase):
    def test_chain(self):
        # line nodes for 4 atoms: (0,1)=0 (1,2)=3 (2,3)=5
        motifs = extract_motifs(butane(), build_line_graph(4))
        self.assertEqual(motifs.angle_pairs, [(0, 3), (3, 5)])
        self.assertEqual(motifs.dihedral_triples, [(0, 3, 5)])
        self.assertEqual(motifs.rings, [])
        self.assertEqual(motifs.conjugated_systems, [])

    def test_triangle_has_no_dihedrals(self):
        g = MolecularGraph.from_bond_list([0, 0, 0], [(0, 1, SINGLE), (0, 2, SINGLE),
                                                      (1, 2, SINGLE)])
        motifs = extract_motifs(g, build_line_graph(3))
        self.assertEqual(motifs.dihedral_triples, [])
        self.assertEqual(len(motifs.angle_pairs), 3)
        self.assertEqual(motifs.rings, [((0, 1, 2), 3)])

    def test_benzene_ring(self):
        motifs = extract_motifs(benzene(), build_line_graph(6))
        self.assertEqual(len(motifs.rings), 1)
        self.assertEqual(motifs.rings[0][1], 6)
        self.assertEqual(len(motifs.conjugated_systems), 1)
        self.assertEqual(len(motifs.conjugated_systems[0]), 6)

    def test_alternating_bonds_are_conjugated(self):
        motifs = extract_motifs(butadiene(), build_line_graph(4))
        self.assertEqual(motifs.conjugated_systems, [(0, 3, 5)])

    def test_isolated_double_bond_is_not_a_system(self):
        g = MolecularGraph.from_bond_list([0, 0, 0], [(0, 1, DOUBLE), (1, 2, SINGLE)])
        self.assertEqual(extract_motifs(g, build_line_graph(3)).conjugated_systems, [])

    def test_wrong_line_graph_raises(self):
        with self.assertRaises(InvalidInputError):
            extract_motifs(butane(), build_line_graph(5))

    def assert_matches_oracle(self, g):
        motifs = extract_motifs(g, build_line_graph(g.n_atoms))
        self.assertEqual(tuple(motifs), motif_oracle(g), repr(g))

    def test_every_bond_pattern_up_to_five_atoms(self):
        rng = np.random.default_rng(3)
        for n in range(2, 6):
            for g in graphs_with_bonds(n, rng):
                self.assert_matches_oracle(g)

    def test_random_six_atom_graphs(self):
        rng = np.random.default_rng(4)
        pairs = list(itertools.combinations(range(6), 2))
        for _ in range(300):
            bonds = [(i, j, int(rng.integers(SINGLE, AROMATIC + 1)))
                     for i, j in pairs if rng.random() < 0.4]
            self.assert_matches_oracle(MolecularGraph.from_bond_list([0] * 6, bonds))

    @unittest.skipUnless(SLOW, 'set DUALLGD_SLOW=1 to run')
    def test_every_bond_pattern_on_six_atoms(self):
        for g in graphs_with_bonds(6, np.random.default_rng(5)):
            self.assert_matches_oracle(g)

    def test_propenylbenzene(self):
        g = propenylbenzene()
        lg = build_line_graph(9)
        index = lg.pair_index
        motifs = extract_motifs(g, lg)
        self.assertEqual(len(motifs.rings), 1)
        self.assertEqual(motifs.rings[0][1], 6)
        double = index[6, 7]
        across = [triple for triple in motifs.dihedral_triples if triple[1] == double]
        self.assertEqual(across, [(index[0, 6], double, index[7, 8])])
        ring = [index[k, (k + 1) % 6] for k in range(6)]
        self.assertEqual(motifs.conjugated_systems,
                         [tuple(sorted(ring + [index[0, 6], double]))])
        self.assertEqual(tuple(motifs), motif_oracle(g))


class ValenceTest(unittest.TestCase):
    def test_valid(self):
        ok, report = check_valence(benzene())
        self.assertTrue(ok)
        self.assertEqual(report[0].order_sum, 3.0)

    def test_pentavalent_carbon(self):
        g = MolecularGraph.from_bond_list([0] * 6, [(0, k, SINGLE) for k in range(1, 6)])
        ok, report = check_valence(g)
        self.assertFalse(ok)
        self.assertFalse(report[0].ok)
        self.assertTrue(all(entry.ok for entry in report[1:]))

    def test_overbonded_fluorine(self):
        g = MolecularGraph.from_bond_list([3, 0], [(0, 1, DOUBLE)])
        self.assertFalse(check_valence(g)[0])


class CanonicalKeyTest(unittest.TestCase):
    def test_invariant_under_permutation(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            g = random_molecule(parse_formula('C5N1O2'), seed)
            key = canonical_key(g)
            for _ in range(4):
                self.assertEqual(canonical_key(g.permuted(rng.permutation(g.n_atoms))), key)

    def test_distinguishes_bond_types(self):
        self.assertNotEqual(canonical_key(butane()), canonical_key(butadiene()))

    def test_distinguishes_atom_types(self):
        ether = MolecularGraph.from_bond_list([0, 2, 0], [(0, 1, SINGLE), (1, 2, SINGLE)])
        alcohol = MolecularGraph.from_bond_list([0, 0, 2], [(0, 1, SINGLE), (1, 2, SINGLE)])
        self.assertNotEqual(canonical_key(ether), canonical_key(alcohol))

    def test_regular_graphs_of_same_size(self):
        # hexagon and two triangles are both 2-regular on 6 atoms
        hexagon = MolecularGraph.from_bond_list([0] * 6, [(k, (k + 1) % 6, SINGLE)
                                                          for k in range(6)])
        triangles = MolecularGraph.from_bond_list([0] * 6, [(0, 1, SINGLE), (1, 2, SINGLE),
                                                            (0, 2, SINGLE), (3, 4, SINGLE),
                                                            (4, 5, SINGLE), (3, 5, SINGLE)])
        self.assertNotEqual(canonical_key(hexagon), canonical_key(triangles))

    def assert_partitions_agree(self, bond_classes):
        forms_by_key = defaultdict(set)
        keys_by_form = defaultdict(set)
        pairs = list(itertools.combinations(range(4), 2))
        for atoms in itertools.product((0, 1), repeat=4):
            for classes in itertools.product(bond_classes, repeat=len(pairs)):
                g = MolecularGraph.from_bond_list(atoms, [(i, j, c) for (i, j), c
                                                          in zip(pairs, classes) if c])
                key, form = canonical_key(g), brute_force_form(g)
                forms_by_key[key].add(form)
                keys_by_form[form].add(key)
        self.assertTrue(all(len(forms) == 1 for forms in forms_by_key.values()))
        self.assertTrue(all(len(keys) == 1 for keys in keys_by_form.values()))

    def test_four_atoms_agree_with_relabelling_search(self):
        self.assert_partitions_agree((0, SINGLE, DOUBLE))

    @unittest.skipUnless(SLOW, 'set DUALLGD_SLOW=1 to run')
    def test_four_atoms_every_bond_class(self):
        self.assert_partitions_agree(range(5))

    def test_size_limit(self):
        g = MolecularGraph([0] * 17, np.zeros((17, 17), dtype=int))
        with self.assertRaises(UnsupportedSizeError):
            canonical_key(g)


class FormulaTest(unittest.TestCase):
    def test_parse(self):
        self.assertEqual(parse_formula('C6N1O2'), {'C': 6, 'N': 1, 'O': 2})

    def test_parse_default_count(self):
        self.assertEqual(parse_formula('CO'), {'C': 1, 'O': 1})

    def test_parse_unknown_symbol(self):
        with self.assertRaises(InvalidInputError):
            parse_formula('C2Cl1')

    def test_parse_garbage(self):
        for text in ('', 'c2', '2C', 'C2 O'):
            with self.assertRaises(InvalidInputError):
                parse_formula(text)

    def test_format(self):
        self.assertEqual(format_formula({'O': 1, 'C': 3}), 'C3O1')


class RandomMoleculeTest(unittest.TestCase):
    def test_matches_formula_and_is_valid(self):
        for seed in range(10):
            formula = parse_formula('C4N1O1')
            g = random_molecule(formula, seed)
            self.assertEqual(g.formula(), formula)
            self.assertTrue(g.is_connected())
            self.assertTrue(check_valence(g)[0])

    def test_deterministic(self):
        formula = parse_formula('C6O1')
        self.assertEqual(random_molecule(formula, 3), random_molecule(formula, 3))

    def test_impossible_formula(self):
        # three fluorines cannot be connected
        with self.assertRaises(GenerationError):
            random_molecule({'F': 3}, 0, max_retries=10)

    def test_too_many_atoms(self):
        with self.assertRaises(InvalidInputError):
            random_molecule({'C': 20}, 0)


class RecordTest(unittest.TestCase):
    def test_write_then_read(self):
        stream = StringIO()
        write_molecule(benzene(), stream, id=4)
        write_molecule(butane(), stream)
        stream.write('\n')
        stream.seek(0)
        self.assertIn('"id": 4', stream.getvalue())
        self.assertEqual(list(read_molecules(stream)), [benzene(), butane()])

    def test_unordered_bond_raises(self):
        with self.assertRaises(InvalidInputError):
            molecule_from_record({'atoms': ['C', 'C'], 'bonds': [[1, 0, 1]]})

    def test_no_bond_class_in_record_raises(self):
        with self.assertRaises(InvalidInputError):
            molecule_from_record({'atoms': ['C', 'C'], 'bonds': [[0, 1, 0]]})

    def test_missing_field_raises(self):
        with self.assertRaises(InvalidInputError):
            molecule_from_record({'atoms': ['C']})

    def test_vocab_symbols(self):
        record = {'atoms': ['S', 'F'], 'bonds': [[0, 1, 1]]}
        self.assertEqual(molecule_from_record(record).atom_types.tolist(),
                         [DEFAULT_VOCAB.index('S'), DEFAULT_VOCAB.index('F')])
