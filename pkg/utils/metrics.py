"""Evaluation of generated molecules against ground truth.

Circular fingerprints and Tanimoto similarity, exact MCES distance for
small graphs, top-K accuracy by canonical key, and the bond-to-atom
attention asymmetry analysis.

"""

from collections import defaultdict, namedtuple
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math

from joblib import Parallel, delayed
import numpy as np

import denoiser
from molgraph import BOND_NAMES, DEFAULT_VOCAB, InvalidInputError, UnsupportedSizeError, \
    build_line_graph, canonical_key
import tensorcore as tc

DEFAULT_BITS = 2048
DEFAULT_RADIUS = 2
MCES_BOND_LIMIT = 12

logger = logging.getLogger('metrics')


def stable_hash(*items):
    """Seedless 64-bit hash of JSON-serializable items (BLAKE2b, 8-byte digest)."""
    data = json.dumps(items, separators=(',', ':')).encode('utf-8')
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), 'little')


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray
    radius: int

    @property
    def n_bits(self):
        return len(self.bits)

    def on_bits(self):
        return np.flatnonzero(self.bits)

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.radius == other.radius and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.radius, self.bits.tobytes()))


def circular_fingerprint(g, radius=DEFAULT_RADIUS, n_bits=DEFAULT_BITS, vocab=DEFAULT_VOCAB):
    """Morgan-style circular fingerprint.

    Each atom starts from a hash of its symbol, degree and sorted bond
    classes.  Each of radius rounds rehashes an atom's identifier with the
    sorted (bond class, neighbour identifier) list.  Every identifier seen
    sets bit identifier mod n_bits.

    """
    bits = np.zeros(n_bits, dtype=bool)
    neighbours = [[(int(g.bonds[v, w]), w) for w in np.flatnonzero(g.bonds[v])]
                  for v in range(g.n_atoms)]
    identifiers = [stable_hash('atom', vocab.symbols[g.atom_types[v]], len(neighbours[v]),
                               sorted(bond for bond, _ in neighbours[v]))
                   for v in range(g.n_atoms)]
    for round_number in range(radius + 1):
        if round_number:
            identifiers = [stable_hash(round_number, identifiers[v],
                                       sorted((bond, identifiers[w]) for bond, w in neighbours[v]))
                           for v in range(g.n_atoms)]
        for identifier in identifiers:
            bits[identifier % n_bits] = True
    bits.setflags(write=False)
    return Fingerprint(bits, radius)


def tanimoto(a, b):
    """|a and b| / |a or b|, and 1 when both are empty."""
    if a.n_bits != b.n_bits:
        raise InvalidInputError('fingerprint sizes differ: %d and %d' % (a.n_bits, b.n_bits))
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union


def mces_distance(g1, g2, max_bonds=MCES_BOND_LIMIT):
    """|E1| + |E2| - 2 |MCES| for the maximum common edge subgraph.

    Atoms may only map to atoms of the same type and a bond is shared only
    if both graphs have the same bond class there.  Exact, by branch and
    bound over partial atom mappings.

    """
    for g in (g1, g2):
        if g.n_bonds > max_bonds:
            raise UnsupportedSizeError('MCES supports at most %d bonds, got %d'
                                       % (max_bonds, g.n_bonds))
    if g1.n_atoms > g2.n_atoms:
        g1, g2 = g2, g1
    return g1.n_bonds + g2.n_bonds - 2 * _max_common_bonds(g1, g2)


def _max_common_bonds(g1, g2):
    order = sorted(range(g1.n_atoms), key=lambda v: -np.count_nonzero(g1.bonds[v]))
    position = {v: k for k, v in enumerate(order)}
    # bonds of g1 whose later endpoint (in search order) is order[k]
    closing = [[] for _ in order]
    for i, j, bond_type in g1.bond_list():
        later, earlier = (i, j) if position[i] > position[j] else (j, i)
        closing[position[later]].append((earlier, bond_type))
    remaining = np.cumsum([len(c) for c in closing][::-1])[::-1].tolist() + [0]
    candidates = [[w for w in range(g2.n_atoms) if g2.atom_types[w] == g1.atom_types[v]]
                  for v in order]
    total2 = g2.n_bonds
    mapping = {}
    used = set()
    best = 0

    def search(k, score):
        nonlocal best
        if score > best:
            best = score
        if k == len(order) or score + min(remaining[k], total2 - score) <= best:
            return
        v = order[k]
        for w in candidates[k]:
            if w in used:
                continue
            gained = sum(1 for u, bond_type in closing[k]
                         if u in mapping and g2.bonds[w, mapping[u]] == bond_type)
            mapping[v] = w
            used.add(w)
            search(k + 1, score + gained)
            used.discard(w)
            del mapping[v]
        search(k + 1, score)

    search(0, 0)
    return best


QueryScore = namedtuple('QueryScore', ['hit', 'tanimoto', 'mces', 'empty', 'mces_skipped'])


def _score_query(truth, candidates, ks, radius, n_bits, mces_cap):
    truth_key = canonical_key(truth)
    if not candidates:
        return QueryScore({k: False for k in ks}, {k: 0.0 for k in ks},
                          {k: float(truth.n_bonds) for k in ks}, True, 0)
    truth_fp = circular_fingerprint(truth, radius, n_bits)
    top = candidates[:max(ks)]
    keys = [canonical_key(c) for c in top]
    similarities = [tanimoto(truth_fp, circular_fingerprint(c, radius, n_bits)) for c in top]
    distances = []
    skipped = 0
    for candidate in top:
        try:
            distances.append(mces_distance(truth, candidate, mces_cap))
        except UnsupportedSizeError:
            distances.append(None)
            skipped += 1
    hit, best_similarity, best_distance = {}, {}, {}
    for k in ks:
        hit[k] = truth_key in keys[:k]
        best_similarity[k] = max(similarities[:k])
        known = [d for d in distances[:k] if d is not None]
        best_distance[k] = float(min(known)) if known else None
    return QueryScore(hit, best_similarity, best_distance, False, skipped)


@dataclass
class EvalReport:
    """Top-K accuracy and mean MCES / Tanimoto over a batch of queries.

    MCES means leave out queries whose top-K distances were all over the
    size cap; mces_skipped counts individual skipped distances.

    """
    n_queries: int
    ks: tuple
    accuracy: dict
    mces: dict
    tanimoto: dict
    empty_queries: list = field(default_factory=list)
    mces_skipped: int = 0

    def to_json(self, **extra):
        """JSON form; extra keys (such as the config_hash) are added at the top level."""
        data = asdict(self)
        for key in ('accuracy', 'mces', 'tanimoto'):
            data[key] = {str(k): v for k, v in data[key].items()}
        data['ks'] = list(self.ks)
        data.update(extra)
        return json.dumps(data, indent=2, sort_keys=True)

    def format_table(self):
        """Plain-text table: accuracy, MCES and Tanimoto for each K."""
        width = 30
        header = ''.join(('Top-%d' % k).center(width) for k in self.ks)
        columns = ''.join('%10s%10s%10s' % ('Accuracy', 'MCES', 'Tanimoto') for _ in self.ks)
        values = ''
        for k in self.ks:
            mces = '-' if self.mces[k] is None else '%.2f' % self.mces[k]
            values += '%9.2f%%%10s%10.2f' % (100 * self.accuracy[k], mces, self.tanimoto[k])
        lines = [header, columns, values,
                 'queries: %d, empty candidate lists: %d, MCES skipped over cap: %d'
                 % (self.n_queries, len(self.empty_queries), self.mces_skipped)]
        return '\n'.join(lines)


def evaluate(truths, candidate_lists, ks=(1, 10), radius=DEFAULT_RADIUS, n_bits=DEFAULT_BITS,
             mces_cap=MCES_BOND_LIMIT, n_jobs=1):
    """Score ranked candidate lists (best first) against ground-truth graphs.

    A query with no candidates counts as a miss with Tanimoto 0 and MCES
    equal to the truth's bond count, and is listed in empty_queries.

    """
    if len(truths) != len(candidate_lists):
        raise InvalidInputError('%d truths but %d candidate lists'
                                % (len(truths), len(candidate_lists)))
    if not truths:
        raise InvalidInputError('nothing to evaluate')
    ks = tuple(sorted(ks))
    scores = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_score_query)(truth, list(candidates), ks, radius, n_bits, mces_cap)
        for truth, candidates in zip(truths, candidate_lists))
    accuracy, similarity, distance = {}, {}, {}
    for k in ks:
        accuracy[k] = float(np.mean([s.hit[k] for s in scores]))
        similarity[k] = float(np.mean([s.tanimoto[k] for s in scores]))
        known = [s.mces[k] for s in scores if s.mces[k] is not None]
        distance[k] = float(np.mean(known)) if known else None
    empty = [index for index, s in enumerate(scores) if s.empty]
    skipped = sum(s.mces_skipped for s in scores)
    if empty:
        logger.warning('%d queries had no candidates', len(empty))
    if skipped:
        logger.warning('%d MCES computations skipped over the %d-bond cap', skipped, mces_cap)
    return EvalReport(len(truths), ks, accuracy, distance, similarity, empty, skipped)


AsymmetryRecord = namedtuple('AsymmetryRecord', ['bond', 'bond_class', 'low_atom', 'high_atom',
                                                 'alpha_low', 'alpha_high', 'log2_ratio',
                                                 'homonuclear'])


def log2_ratio(alpha_low, alpha_high):
    return math.log2(alpha_low / alpha_high)


def attention_asymmetry(params, config, graph, T, vocab=DEFAULT_VOCAB, rng=None,
                        radius=DEFAULT_RADIUS):
    """Per-bond log2 of the bonds-from-atoms attention ratio.

    Runs the network at t = 1 on the graph itself, conditioned on its own
    fingerprint, and takes the last layer's weights averaged over heads.
    r is the weight on the less electronegative endpoint over the weight on
    the more electronegative one; bonds between atoms of equal
    electronegativity are oriented at random with rng.

    """
    if not config.bonds_from_atoms:
        raise InvalidInputError('the network has no bonds-from-atoms attention')
    if rng is None:
        rng = np.random.default_rng(0)
    records = []
    if graph.n_bonds == 0:
        return records
    y_cond = circular_fingerprint(graph, radius, config.d_cond, vocab).bits.astype(np.float64)
    with tc.no_grad():
        output = denoiser.forward(graph.atom_types, graph.bonds, y_cond, 1, T, config, params,
                                  capture_attention=True)
    alphas = output.attention.mean(axis=1)
    pair_index = build_line_graph(graph.n_atoms).pair_index
    electronegativity = np.asarray(vocab.electronegativity)[graph.atom_types]
    for i, j, bond_type in graph.bond_list():
        alpha_i, alpha_j = alphas[pair_index[i, j]]
        homonuclear = electronegativity[i] == electronegativity[j]
        if homonuclear:
            low_first = bool(rng.random() < 0.5)
        else:
            low_first = electronegativity[i] < electronegativity[j]
        if low_first:
            low, high, alpha_low, alpha_high = i, j, alpha_i, alpha_j
        else:
            low, high, alpha_low, alpha_high = j, i, alpha_j, alpha_i
        records.append(AsymmetryRecord((i, j), BOND_NAMES[bond_type], low, high,
                                       float(alpha_low), float(alpha_high),
                                       log2_ratio(alpha_low, alpha_high), bool(homonuclear)))
    return records


def summarize_asymmetry(records):
    """Count, mean, std and standard error of log2 r per bond class, plus
    the homonuclear and heteronuclear groups.

    """
    groups = defaultdict(list)
    for record in records:
        groups[record.bond_class].append(record.log2_ratio)
        groups['homonuclear' if record.homonuclear else 'heteronuclear'].append(record.log2_ratio)
    summary = {}
    for name, values in sorted(groups.items()):
        values = np.asarray(values)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        summary[name] = {'count': len(values),
                         'mean': float(values.mean()),
                         'std': std,
                         'stderr': std / math.sqrt(len(values))}
    return summary
