"""Reverse sampling with the long-range jump sampler.

The reverse chain visits a decreasing subsequence T = tau_0 > ... > tau_J = 0
of diffusion steps and calls the denoiser once per visit.  Between visits
each pair moves by the model posterior over the whole gap; with J = T this
is the ordinary unit-step sampler.

A predictor is any callable (bonds_t, t) -> M x classes clean-bond
probabilities; DenoiserPredictor wraps a trained network, tests use frozen
oracles.

"""

from collections import namedtuple
from dataclasses import asdict, dataclass
import logging
import math
import threading
import time

from joblib import Parallel, delayed
import numpy as np

import denoiser
import diffusion
from molgraph import DEFAULT_VOCAB, InvalidInputError, MolecularGraph, \
    UnsupportedSizeError, build_line_graph, canonical_key, check_valence, matrix_from_pairs, \
    write_molecule
import tensorcore as tc

SPACINGS = ('uniform', 'cosine')
RANKINGS = ('likelihood', 'sample_order')

logger = logging.getLogger('sampler')


@dataclass(frozen=True)
class JumpSchedule:
    """Strictly decreasing visit steps from T down to 0; J = len(taus) - 1."""
    taus: tuple

    def __post_init__(self):
        taus = self.taus
        if len(taus) < 2 or taus[-1] != 0 or any(a <= b for a, b in zip(taus, taus[1:])):
            raise InvalidInputError('jump schedule must decrease strictly to 0: %s' % (taus,))

    @property
    def T(self):
        return self.taus[0]

    @property
    def J(self):
        return len(self.taus) - 1


def make_jump_schedule(T, J, spacing='uniform'):
    """J jumps from T to 0, evenly spaced or cosine-spaced (denser near 0)."""
    if not 1 <= J <= T:
        raise InvalidInputError('need 1 <= J <= T, got J=%d T=%d' % (J, T))
    if spacing == 'uniform':
        taus = [(T * (J - j) + J // 2) // J for j in range(J + 1)]
    elif spacing == 'cosine':
        taus = [int(round(T * (1 - math.cos(math.pi / 2 * (J - j) / J)))) for j in range(J + 1)]
        taus[0], taus[-1] = T, 0
        for j in range(J - 1, 0, -1):
            taus[j] = max(taus[j], taus[j + 1] + 1)
        for j in range(1, J):
            taus[j] = min(taus[j], taus[j - 1] - 1)
    else:
        raise InvalidInputError('spacing must be one of %s' % (SPACINGS,))
    return JumpSchedule(tuple(taus))


@dataclass(frozen=True)
class SampleConfig:
    """Candidate generation settings.  steps=None samples with all T steps."""
    n_candidates: int = 100
    steps: int = None
    spacing: str = 'uniform'
    seed: int = 0
    ranking: str = 'likelihood'
    filter_valence: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_candidates < 1:
            raise InvalidInputError('n_candidates must be >= 1')
        if self.spacing not in SPACINGS:
            raise InvalidInputError('spacing must be one of %s' % (SPACINGS,))
        if self.ranking not in RANKINGS:
            raise InvalidInputError('ranking must be one of %s' % (RANKINGS,))

    def schedule(self, T):
        return make_jump_schedule(T, self.steps or T, self.spacing)

    def to_dict(self):
        return asdict(self)


class DenoiserPredictor:
    """Clean-bond probabilities from a trained network for one query
    (atoms and conditioning vector fixed).  Counts its evaluations.

    """
    def __init__(self, params, config, atom_types, y_cond, T, feature_seed=0):
        self.params = params
        self.config = config
        self.atom_types = np.asarray(atom_types)
        self.y_cond = y_cond
        self.T = T
        self.feature_seed = feature_seed
        self.evaluations = 0
        self._lock = threading.Lock()

    def __call__(self, bonds_t, t):
        with self._lock:
            self.evaluations += 1
        with tc.no_grad():
            output = denoiser.forward(self.atom_types, bonds_t, self.y_cond, t, self.T,
                                      self.config, self.params, feature_seed=self.feature_seed)
        logits = output.pair_logits.data
        probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return probs / probs.sum(axis=-1, keepdims=True)


def unit_step_distribution(clean_probs, e_t, t, model):
    """The standard sampler's step: sum over e0 of q(E_{t-1} | e_t, e0) p(e0),
    pair by pair from the unit-step posterior.

    """
    result = np.zeros_like(np.asarray(clean_probs, dtype=np.float64))
    for p, (probs, observed) in enumerate(zip(clean_probs, e_t)):
        mass = 0.0
        for e0, weight in enumerate(probs):
            try:
                posterior = diffusion.unit_step_posterior(int(observed), e0, t, model)
            except diffusion.ImpossibleTransitionError:
                continue
            result[p] += weight * posterior
            mass += weight
        result[p] /= mass
    return result / result.sum(axis=-1, keepdims=True)


SampleResult = namedtuple('SampleResult', ['graph', 'score', 'evaluations'])


def reverse_sample(atom_types, predictor, model, schedule, rng):
    """Draw one graph for fixed atoms.

    E_T starts from the marginals; each visit calls the predictor once and
    samples every pair from the model posterior at the next visit step.
    The last visit takes the per-pair argmax of the clean prediction, and
    the score is the mean log-probability of those argmax classes.

    """
    atom_types = np.asarray(atom_types, dtype=np.int64)
    n = len(atom_types)
    if schedule.T != model.T:
        raise InvalidInputError('jump schedule starts at %d, model has T=%d'
                                % (schedule.T, model.T))
    if n == 1:
        return SampleResult(MolecularGraph(atom_types, np.zeros((1, 1))), 0.0, 0)
    lg = build_line_graph(n)
    state = diffusion.sample_categorical(np.tile(model.marginals, (lg.n_pairs, 1)), rng)
    score = 0.0
    for tau, following in zip(schedule.taus, schedule.taus[1:]):
        probs = predictor(matrix_from_pairs(state, lg), tau)
        if following == 0:
            state = np.argmax(probs, axis=-1)
            chosen = probs[np.arange(lg.n_pairs), state]
            score = float(np.mean(np.log(np.maximum(chosen, 1e-300))))
        else:
            posterior = diffusion.model_posterior(probs, state, following, tau, model,
                                                  from_logits=False)
            state = diffusion.sample_categorical(posterior, rng)
    return SampleResult(MolecularGraph(atom_types, matrix_from_pairs(state, lg)), score,
                        schedule.J)


Candidate = namedtuple('Candidate', ['graph', 'score', 'sample_score', 'seed', 'steps',
                                     'seconds', 'key'])


def _candidate_key(graph):
    try:
        return canonical_key(graph)
    except UnsupportedSizeError:
        return 'raw:' + graph.atom_types.tobytes().hex() + graph.bonds.tobytes().hex()


def _one_candidate(atom_types, predictor, model, schedule, seed_sequence):
    start = time.perf_counter()
    result = reverse_sample(atom_types, predictor, model, schedule,
                            np.random.default_rng(seed_sequence))
    return Candidate(result.graph, result.score, result.score,
                     int(seed_sequence.generate_state(1)[0]), schedule.J,
                     time.perf_counter() - start, _candidate_key(result.graph))


def rank_candidates(candidates, ranking='likelihood', filter_valence=False, vocab=DEFAULT_VOCAB):
    """Order candidates best first.

    Copies of the same graph (by canonical key) all take the best score
    among them.  Likelihood ranking sorts by score, descending, then by
    key; sample_order keeps the input order.

    """
    if filter_valence:
        kept = [c for c in candidates if check_valence(c.graph, vocab)[0]]
        logger.debug('valence filter kept %d of %d candidates', len(kept), len(candidates))
        candidates = kept
    best = {}
    for candidate in candidates:
        best[candidate.key] = max(best.get(candidate.key, -math.inf), candidate.sample_score)
    merged = [c._replace(score=best[c.key]) for c in candidates]
    if ranking == 'likelihood':
        merged.sort(key=lambda c: (-c.score, c.key))
    return merged


def generate_candidates(atom_types, predictor, model, sample_config, vocab=DEFAULT_VOCAB):
    """n_candidates independent reverse samples, ranked.

    Each candidate has its own seed spawned from sample_config.seed, so the
    result does not depend on n_jobs.

    """
    schedule = sample_config.schedule(model.T)
    seeds = np.random.SeedSequence(sample_config.seed).spawn(sample_config.n_candidates)
    candidates = Parallel(n_jobs=sample_config.n_jobs, prefer='threads')(
        delayed(_one_candidate)(atom_types, predictor, model, schedule, seed) for seed in seeds)
    return rank_candidates(candidates, sample_config.ranking, sample_config.filter_valence, vocab)


def sample_marginal_baseline(atom_types, marginals, n_candidates, seed, vocab=DEFAULT_VOCAB,
                             filter_valence=False):
    """Candidates whose pairs are drawn independently from the marginals,
    with no network.  Scored by mean log marginal probability.

    """
    atom_types = np.asarray(atom_types, dtype=np.int64)
    marginals = np.asarray(marginals, dtype=np.float64)
    n = len(atom_types)
    candidates = []
    for seed_sequence in np.random.SeedSequence(seed).spawn(n_candidates):
        start = time.perf_counter()
        rng = np.random.default_rng(seed_sequence)
        if n == 1:
            graph, score = MolecularGraph(atom_types, np.zeros((1, 1))), 0.0
        else:
            lg = build_line_graph(n)
            state = diffusion.sample_categorical(np.tile(marginals, (lg.n_pairs, 1)), rng)
            graph = MolecularGraph(atom_types, matrix_from_pairs(state, lg))
            score = float(np.mean(np.log(marginals[state])))
        candidates.append(Candidate(graph, score, score, int(seed_sequence.generate_state(1)[0]),
                                    0, time.perf_counter() - start, _candidate_key(graph)))
    return rank_candidates(candidates, 'likelihood', filter_valence, vocab)


def write_candidates(candidates, stream, query, vocab=DEFAULT_VOCAB, **extra):
    """One JSONL record per candidate: graph, rank, score, seed, steps,
    timing, plus any extra fields (the run's config_hash, for one)."""
    for rank, candidate in enumerate(candidates, 1):
        write_molecule(candidate.graph, stream, vocab, query=query, rank=rank,
                       score=candidate.score, seed=candidate.seed, steps=candidate.steps,
                       seconds=round(candidate.seconds, 6), **extra)
