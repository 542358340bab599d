"""Heavy-atom molecular graphs and the line-graph machinery built on them.

A molecule is a vector of atom types (indices into an AtomVocab) plus a
symmetric matrix of bond classes.  Bond class 0 means "no bond"; 1..4 are
single, double, triple and aromatic.  Every potential bond (i, j) with i < j
is a node of the line graph; pairs are always enumerated in lexicographic
order and every matrix in this package indexes line nodes that way.

"""

from collections import Counter, namedtuple
from dataclasses import dataclass
from functools import lru_cache
import json
import logging
import re

import networkx as nx
import numpy as np

NO_BOND, SINGLE, DOUBLE, TRIPLE, AROMATIC = range(5)
N_BOND_CLASSES = 5
BOND_NAMES = ('none', 'single', 'double', 'triple', 'aromatic')

# Aromatic bonds count 1.5 towards valence.
BOND_ORDERS = (0.0, 1.0, 2.0, 3.0, 1.5)

CANONICAL_LIMIT = 16
RING_LIMIT = 8

FORMULA_PATTERN = re.compile(r'([A-Z][a-z]?)(\d*)')

logger = logging.getLogger('molgraph')


class InvalidInputError(ValueError):
    "Malformed graph, vocabulary or formula."


class UnsupportedSizeError(ValueError):
    "A graph is larger than an exact algorithm is configured to handle."


class GenerationError(ValueError):
    "No valid molecule could be generated within the retry budget."


@dataclass(frozen=True)
class AtomVocab:
    """Ordered element labels with their valence capacity and Pauling
    electronegativity.

    """
    symbols: tuple
    max_valence: tuple
    electronegativity: tuple

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidInputError('duplicate symbols in vocab: %r' % (self.symbols,))
        if not len(self.symbols) == len(self.max_valence) == len(self.electronegativity):
            raise InvalidInputError('vocab field lengths differ')
        if any(v < 1 for v in self.max_valence):
            raise InvalidInputError('max_valence must be >= 1')
        if any(en <= 0 for en in self.electronegativity):
            raise InvalidInputError('electronegativity must be > 0')

    def __len__(self):
        return len(self.symbols)

    def index(self, symbol):
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise InvalidInputError('unknown atom symbol: %s' % symbol) from None

    def to_dict(self):
        return {'symbols': list(self.symbols),
                'max_valence': list(self.max_valence),
                'electronegativity': list(self.electronegativity)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data['symbols']),
                   tuple(data['max_valence']),
                   tuple(data['electronegativity']))


DEFAULT_VOCAB = AtomVocab(symbols=('C', 'N', 'O', 'F', 'S'),
                          max_valence=(4, 3, 2, 1, 6),
                          electronegativity=(2.55, 3.04, 3.44, 3.98, 2.58))


def _frozen(array):
    array.setflags(write=False)
    return array


class MolecularGraph:
    """Atom types plus a symmetric bond-class matrix.

    Instances are immutable; the arrays are marked read-only.

    """
    def __init__(self, atom_types, bonds):
        atom_types = np.array(atom_types, dtype=np.int64).reshape(-1)
        bonds = np.array(bonds, dtype=np.int64)
        n = len(atom_types)
        if n < 1:
            raise InvalidInputError('a molecule needs at least one atom')
        if bonds.shape != (n, n):
            raise InvalidInputError('bond matrix shape %s does not match %d atoms'
                                    % (bonds.shape, n))
        if not np.array_equal(bonds, bonds.T):
            raise InvalidInputError('bond matrix is not symmetric')
        if np.any(np.diag(bonds) != 0):
            raise InvalidInputError('bond matrix has a nonzero diagonal')
        if bonds.min() < 0 or bonds.max() >= N_BOND_CLASSES:
            raise InvalidInputError('bond class out of range 0..%d' % (N_BOND_CLASSES - 1))
        if atom_types.min() < 0:
            raise InvalidInputError('negative atom type')
        self.atom_types = _frozen(atom_types)
        self.bonds = _frozen(bonds)

    @classmethod
    def from_bond_list(cls, atom_types, bond_list):
        """Build a graph from atom types and (i, j, type) triples."""
        n = len(atom_types)
        bonds = np.zeros((n, n), dtype=np.int64)
        for i, j, bond_type in bond_list:
            if not 0 <= i < n or not 0 <= j < n or i == j:
                raise InvalidInputError('bad bond endpoints (%d, %d)' % (i, j))
            bonds[i, j] = bonds[j, i] = bond_type
        return cls(atom_types, bonds)

    @property
    def n_atoms(self):
        return len(self.atom_types)

    @property
    def n_bonds(self):
        return int(np.count_nonzero(np.triu(self.bonds)))

    def bond_list(self):
        """Actual bonds as (i, j, type) with i < j, in lexicographic order."""
        rows, cols = np.nonzero(np.triu(self.bonds))
        return [(int(i), int(j), int(self.bonds[i, j])) for i, j in zip(rows, cols)]

    def permuted(self, perm):
        """Relabel atoms: old atom i becomes new atom perm[i]."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.n_atoms)):
            raise InvalidInputError('not a permutation of %d atoms' % self.n_atoms)
        inverse = np.argsort(perm)
        return MolecularGraph(self.atom_types[inverse],
                              self.bonds[np.ix_(inverse, inverse)])

    def to_networkx(self):
        graph = nx.Graph()
        for i, atom_type in enumerate(self.atom_types):
            graph.add_node(i, atom=int(atom_type))
        for i, j, bond_type in self.bond_list():
            graph.add_edge(i, j, bond=bond_type)
        return graph

    def is_connected(self):
        return nx.is_connected(self.to_networkx())

    def formula(self, vocab=DEFAULT_VOCAB):
        return Counter(vocab.symbols[t] for t in self.atom_types)

    def __eq__(self, other):
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return (np.array_equal(self.atom_types, other.atom_types)
                and np.array_equal(self.bonds, other.bonds))

    def __hash__(self):
        return hash((self.atom_types.tobytes(), self.bonds.tobytes()))

    def __repr__(self):
        return 'MolecularGraph(atoms=%s, bonds=%s)' % (self.atom_types.tolist(),
                                                       self.bond_list())


@dataclass(frozen=True)
class LineGraphIndex:
    """All atom pairs of an N-atom molecule as line-graph nodes.

    pairs: M x 2 array of (i, j), i < j, lexicographic.
    adjacency: M x M boolean, true iff two pairs share an atom.
    incidence: N x M boolean, true iff the atom is an endpoint of the pair.
    pair_index: N x N array mapping (i, j) to its line node, -1 on the diagonal.

    """
    n_atoms: int
    pairs: np.ndarray
    adjacency: np.ndarray
    incidence: np.ndarray
    pair_index: np.ndarray

    @property
    def n_pairs(self):
        return len(self.pairs)


@lru_cache(maxsize=64)
def build_line_graph(n_atoms):
    """Enumerate the line graph of the complete graph on n_atoms atoms.

    Results are cached and read-only, so callers share them freely.

    """
    if n_atoms < 2:
        raise InvalidInputError('a line graph needs at least 2 atoms, got %d' % n_atoms)
    rows, cols = np.triu_indices(n_atoms, k=1)
    pairs = np.stack([rows, cols], axis=1)
    m = len(pairs)
    incidence = np.zeros((n_atoms, m), dtype=bool)
    incidence[rows, np.arange(m)] = True
    incidence[cols, np.arange(m)] = True
    shared = incidence.T.astype(np.int64) @ incidence.astype(np.int64)
    adjacency = shared > 0
    np.fill_diagonal(adjacency, False)
    pair_index = -np.ones((n_atoms, n_atoms), dtype=np.int64)
    pair_index[rows, cols] = np.arange(m)
    pair_index[cols, rows] = np.arange(m)
    return LineGraphIndex(n_atoms=n_atoms,
                          pairs=_frozen(pairs),
                          adjacency=_frozen(adjacency),
                          incidence=_frozen(incidence),
                          pair_index=_frozen(pair_index))


def pair_values(matrix, lg):
    """Upper-triangle entries of an N x N (x ...) array in line-node order."""
    return matrix[lg.pairs[:, 0], lg.pairs[:, 1]]


def matrix_from_pairs(values, lg):
    """Inverse of pair_values for integer bond classes: a symmetric N x N
    matrix with zero diagonal.

    """
    bonds = np.zeros((lg.n_atoms, lg.n_atoms), dtype=np.int64)
    bonds[lg.pairs[:, 0], lg.pairs[:, 1]] = values
    bonds[lg.pairs[:, 1], lg.pairs[:, 0]] = values
    return bonds


MotifSummary = namedtuple('MotifSummary',
                          ['angle_pairs', 'dihedral_triples', 'rings', 'conjugated_systems'])


def extract_motifs(g, lg):
    """Bond-level motifs of g, expressed over line-graph node indices.

    angle_pairs: (u, v), u < v, two actual bonds sharing an atom.
    dihedral_triples: (u, v, w), u < w, a path u-v-w of actual bonds in the
      line graph whose end bonds share no atom (four distinct atoms).
    rings: (line nodes, length) for every simple ring of up to RING_LIMIT atoms.
    conjugated_systems: sorted line-node tuples; connected groups of bonds
      that are multiple/aromatic, or single between two such bonds.

    """
    if lg.n_atoms != g.n_atoms:
        raise InvalidInputError('line graph built for %d atoms, molecule has %d'
                                % (lg.n_atoms, g.n_atoms))
    present = pair_values(g.bonds, lg) > 0
    actual = np.flatnonzero(present)
    adjacency = lg.adjacency

    angle_pairs = [(int(u), int(v)) for a, u in enumerate(actual)
                   for v in actual[a + 1:] if adjacency[u, v]]

    dihedral_triples = []
    for v in actual:
        neighbours = [u for u in actual if adjacency[u, v]]
        for a, u in enumerate(neighbours):
            for w in neighbours[a + 1:]:
                if not adjacency[u, w]:
                    dihedral_triples.append((int(u), int(v), int(w)))
    dihedral_triples.sort()

    rings = []
    for cycle in nx.simple_cycles(g.to_networkx(), length_bound=RING_LIMIT):
        edges = [lg.pair_index[cycle[k], cycle[(k + 1) % len(cycle)]]
                 for k in range(len(cycle))]
        rings.append((tuple(sorted(int(u) for u in edges)), len(cycle)))
    rings.sort(key=lambda ring: (ring[1], ring[0]))

    return MotifSummary(angle_pairs, dihedral_triples, rings,
                        _conjugated_systems(g, lg, actual))


def _conjugated_systems(g, lg, actual):
    bond_types = pair_values(g.bonds, lg)
    unsaturated = np.zeros(g.n_atoms, dtype=bool)
    for u in actual:
        if bond_types[u] != SINGLE:
            unsaturated[lg.pairs[u]] = True
    members = [u for u in actual
               if bond_types[u] != SINGLE or unsaturated[lg.pairs[u]].all()]
    graph = nx.Graph()
    graph.add_nodes_from(members)
    graph.add_edges_from((u, v) for a, u in enumerate(members)
                         for v in members[a + 1:] if lg.adjacency[u, v])
    systems = []
    for component in nx.connected_components(graph):
        if len(component) >= 2:
            systems.append(tuple(sorted(int(u) for u in component)))
    systems.sort()
    return systems


AtomValence = namedtuple('AtomValence', ['atom', 'symbol', 'order_sum', 'max_valence', 'ok'])


def check_valence(g, vocab=DEFAULT_VOCAB):
    """Check every atom's bond-order sum against its capacity.

    Returns (ok, report) where report is a list of AtomValence, one per atom.

    """
    if g.atom_types.max() >= len(vocab):
        raise InvalidInputError('atom type %d is not in the vocab' % g.atom_types.max())
    orders = np.asarray(BOND_ORDERS)[g.bonds].sum(axis=1)
    report = []
    for i, atom_type in enumerate(g.atom_types):
        capacity = vocab.max_valence[atom_type]
        report.append(AtomValence(i, vocab.symbols[atom_type], float(orders[i]),
                                  capacity, bool(orders[i] <= capacity)))
    return all(entry.ok for entry in report), report


def canonical_key(g, limit=CANONICAL_LIMIT):
    """An opaque string equal for two graphs iff they are isomorphic with
    atom and bond types respected.

    Connected components are canonicalized separately by colour refinement
    plus individualization search, and their forms are sorted.

    """
    if g.n_atoms > limit:
        raise UnsupportedSizeError('canonical_key supports at most %d atoms, got %d'
                                   % (limit, g.n_atoms))
    graph = g.to_networkx()
    forms = []
    for component in nx.connected_components(graph):
        nodes = sorted(component)
        types = g.atom_types[nodes]
        bonds = g.bonds[np.ix_(nodes, nodes)]
        forms.append(_component_form(types, bonds))
    forms.sort()
    return '|'.join(forms)


def _refine(colors, bonds):
    """Iterated neighbourhood refinement.  Colours are ranks of sorted
    signatures, so the result is independent of atom order.

    """
    n = len(colors)
    while True:
        signatures = []
        for v in range(n):
            neighbours = sorted((int(bonds[v, w]), colors[w])
                                for w in range(n) if bonds[v, w])
            signatures.append((colors[v], tuple(neighbours)))
        ranks = {sig: rank for rank, sig in enumerate(sorted(set(signatures)))}
        refined = [ranks[sig] for sig in signatures]
        if len(set(refined)) == len(set(colors)):
            return refined
        colors = refined


def _twin_classes(cell, bonds):
    classes = []
    for v in cell:
        for group in classes:
            u = group[0]
            rest = [w for w in range(len(bonds)) if w not in (u, v)]
            if np.array_equal(bonds[u, rest], bonds[v, rest]):
                group.append(v)
                break
        else:
            classes.append([v])
    return classes


def _component_form(types, bonds):
    best = None
    stack = [_refine([int(t) for t in types], bonds)]
    while stack:
        colors = stack.pop()
        counts = Counter(colors)
        target = min((c for c, k in counts.items() if k > 1), default=None)
        if target is None:
            order = sorted(range(len(colors)), key=colors.__getitem__)
            leaf = (tuple(int(types[v]) for v in order),
                    tuple(int(bonds[order[a], order[b]])
                          for a in range(len(order)) for b in range(a + 1, len(order))))
            if best is None or leaf < best:
                best = leaf
            continue
        cell = [v for v, c in enumerate(colors) if c == target]
        # swapping twins is an automorphism, so one representative suffices
        for group in _twin_classes(cell, bonds):
            individualized = [2 * c + 1 for c in colors]
            individualized[group[0]] = 2 * target
            stack.append(_refine(individualized, bonds))
    atoms, edges = best
    return 'a%s/b%s' % (','.join(map(str, atoms)), ''.join(map(str, edges)))


def parse_formula(text, vocab=DEFAULT_VOCAB):
    """Parse a heavy-atom formula like 'C6N1O2' (counts default to 1)."""
    counts = Counter()
    position = 0
    for match in FORMULA_PATTERN.finditer(text):
        if match.start() != position:
            break
        symbol, count = match.group(1), match.group(2)
        vocab.index(symbol)
        counts[symbol] += int(count) if count else 1
        position = match.end()
    if position != len(text) or not counts:
        raise InvalidInputError('cannot parse formula %r' % text)
    return counts


def format_formula(counts, vocab=DEFAULT_VOCAB):
    return ''.join('%s%d' % (s, counts[s]) for s in vocab.symbols if counts.get(s))


def random_molecule(formula, rng_seed, vocab=DEFAULT_VOCAB, max_atoms=CANONICAL_LIMIT,
                    max_retries=200, aromatic_probability=0.3):
    """Generate a connected, valence-valid molecule with exactly the atom
    multiset in formula (a mapping symbol -> count).

    The same formula and seed always give the same graph.  Raises
    GenerationError if no valid graph turns up within max_retries attempts.

    """
    symbols = []
    for symbol in vocab.symbols:
        symbols.extend([symbol] * int(formula.get(symbol, 0)))
    unknown = set(formula) - set(vocab.symbols)
    if unknown:
        raise InvalidInputError('unknown atom symbols: %s' % sorted(unknown))
    if not symbols:
        raise InvalidInputError('empty formula')
    if len(symbols) > max_atoms:
        raise InvalidInputError('formula has %d atoms, limit is %d' % (len(symbols), max_atoms))

    rng = np.random.default_rng(rng_seed)
    types = np.array([vocab.index(s) for s in symbols])
    capacity = np.array(vocab.max_valence, dtype=float)[types]
    carbon = vocab.symbols.index('C') if 'C' in vocab.symbols else -1
    for attempt in range(max_retries):
        graph = _attempt_molecule(types, capacity, carbon, rng, aromatic_probability)
        if graph is not None:
            logger.debug('generated %s on attempt %d', format_formula(formula, vocab), attempt + 1)
            return graph
    raise GenerationError('no valid molecule for %s after %d attempts'
                          % (format_formula(formula, vocab), max_retries))


def _attempt_molecule(types, capacity, carbon, rng, aromatic_probability):
    n = len(types)
    order = rng.permutation(n)
    bonds = np.zeros((n, n), dtype=np.int64)
    used = np.zeros(n)

    def add_bond(i, j, bond_type):
        bonds[i, j] = bonds[j, i] = bond_type
        used[i] += BOND_ORDERS[bond_type]
        used[j] += BOND_ORDERS[bond_type]

    placed = []
    carbons = [v for v in order if types[v] == carbon]
    if len(carbons) >= 6 and rng.random() < aromatic_probability:
        ring = carbons[:6]
        for k in range(6):
            add_bond(ring[k], ring[(k + 1) % 6], AROMATIC)
        placed.extend(ring)
    rest = [v for v in order if v not in placed]
    # start from the most capable atom so terminal atoms have somewhere to go
    if not placed:
        rest.sort(key=lambda v: -capacity[v])
        placed.append(rest.pop(0))
        rest = list(rng.permutation(rest))
    for v in rest:
        free = [u for u in placed if capacity[u] - used[u] >= 1]
        if not free:
            return None
        add_bond(int(rng.choice(free)), v, SINGLE)
        placed.append(v)

    for _ in range(int(rng.integers(0, 3))):
        candidates = [(i, j) for i in range(n) for j in range(i + 1, n)
                      if not bonds[i, j] and capacity[i] - used[i] >= 1
                      and capacity[j] - used[j] >= 1]
        if candidates:
            i, j = candidates[int(rng.integers(len(candidates)))]
            add_bond(i, j, SINGLE)

    for i, j in zip(*np.nonzero(np.triu(bonds))):
        if bonds[i, j] in (SINGLE, DOUBLE) and rng.random() < 0.3:
            if min(capacity[i] - used[i], capacity[j] - used[j]) >= 1:
                used[i] -= BOND_ORDERS[bonds[i, j]]
                used[j] -= BOND_ORDERS[bonds[i, j]]
                add_bond(i, j, bonds[i, j] + 1)

    graph = MolecularGraph(types, bonds)
    if np.any(used > capacity + 1e-9) or not graph.is_connected():
        return None
    return graph


def molecule_to_record(g, vocab=DEFAULT_VOCAB):
    return {'atoms': [vocab.symbols[t] for t in g.atom_types],
            'bonds': [[i, j, t] for i, j, t in g.bond_list()]}


def molecule_from_record(record, vocab=DEFAULT_VOCAB):
    try:
        atoms = [vocab.index(s) for s in record['atoms']]
        bond_list = [tuple(int(x) for x in b) for b in record['bonds']]
    except (KeyError, TypeError) as ex:
        raise InvalidInputError('malformed molecule record: %s' % ex) from ex
    for i, j, bond_type in bond_list:
        if not i < j:
            raise InvalidInputError('bond (%d, %d) is not ordered i < j' % (i, j))
        if not SINGLE <= bond_type <= AROMATIC:
            raise InvalidInputError('bond type %d out of range 1..4' % bond_type)
    return MolecularGraph.from_bond_list(atoms, bond_list)


def write_molecule(g, stream, vocab=DEFAULT_VOCAB, **extra):
    record = molecule_to_record(g, vocab)
    record.update(extra)
    print(json.dumps(record), file=stream)


def read_molecules(stream, vocab=DEFAULT_VOCAB):
    """Iterate over molecules in a JSONL stream, skipping blank lines."""
    for line in stream:
        if line.strip():
            yield molecule_from_record(json.loads(line), vocab)
