#!/usr/bin/env python3

"""Generate ranked candidate molecules from a trained checkpoint.

Queries are either a bare formula (--formula, no fingerprint
conditioning) or the molecules of a JSONL file (--target, as written by
gen_data.py), each of which contributes its formula and its fingerprint.
Target records must carry the checkpoint's config_hash.

Output is candidate JSONL in the run directory (by default the
checkpoint's): one record per candidate with the graph, query index, rank,
score, seed, number of network evaluations, wall-clock seconds, the run's
config_hash and the SHA-256 prefix of the target file.

"""

from collections import namedtuple
import argparse
import datetime
import logging
from pathlib import Path

import numpy as np

import config
from molgraph import DEFAULT_VOCAB, parse_formula
import sampler
import train

CANDIDATES_NAME = 'candidates.jsonl'
BASELINE_NAME = 'baseline.jsonl'

logger = logging.getLogger('sample')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli(), config.config_cli()])
    parser.add_argument('--checkpoint',
                        help='Checkpoint written by train.py',
                        type=Path,
                        required=True)
    query_group = parser.add_mutually_exclusive_group(required=True)
    query_group.add_argument('--formula',
                             help='Heavy-atom formula to sample for, e.g. C4N1O1')
    query_group.add_argument('--target',
                             help='JSONL molecules; each supplies formula and fingerprint',
                             type=Path)
    parser.add_argument('--n-candidates',
                        help='Candidates per query (default: sample.n_candidates)',
                        type=int)
    parser.add_argument('--steps',
                        help='Network evaluations per candidate, J (default: all T steps)',
                        type=int)
    parser.add_argument('--spacing',
                        choices=sampler.SPACINGS)
    parser.add_argument('--seed',
                        help='Sampling seed (default: sample.seed)',
                        type=int)
    parser.add_argument('--filter-valence',
                        help='Drop valence-invalid candidates before ranking',
                        action='store_true')
    parser.add_argument('--n-jobs',
                        help='Parallel candidates (threads)',
                        type=int)
    parser.add_argument('--baseline',
                        help='Draw bonds from the corpus marginals instead of the network',
                        action='store_true')
    parser.add_argument('--run-dir',
                        help='Run directory to write into (default: the checkpoint\'s)',
                        type=Path)
    parser.add_argument('--name',
                        help='Output file name in the run directory (default: %s, or %s with '
                        '--baseline)' % (CANDIDATES_NAME, BASELINE_NAME))
    parser.add_argument('--progress',
                        help='log progress every N queries',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)
    config.run_guarded(lambda: run(args), logger)


def load_checked(args):
    """Load --checkpoint; a --config, if given, must have the same hash."""
    expected_hash = None
    if args.config:
        expected_hash = config.config_hash(config.load_config(args.config))
    return train.load_trained(args.checkpoint, expected_hash)


def run(args):
    trained = load_checked(args)
    config.dump_if_asked(args, trained.run_config)
    logger.info("Starting work, job-name = %s", args.job_name)
    start_time = datetime.datetime.now()

    run_dir = config.RunDirectory(args.run_dir or args.checkpoint.parent, trained.run_config)
    overrides = {key: value for key, value in (('n_candidates', args.n_candidates),
                                               ('steps', args.steps),
                                               ('spacing', args.spacing),
                                               ('seed', args.seed),
                                               ('n_jobs', args.n_jobs))
                 if value is not None}
    if args.filter_valence:
        overrides['filter_valence'] = True
    sample_config = trained.run_config.replace('sample', **overrides).sample

    targets_sha256 = None
    if args.formula:
        queries = [query_from_formula(args.formula)]
    else:
        with open(args.target) as stream:
            graphs = list(config.read_stamped_molecules(stream, run_dir.config_hash))
        queries = queries_from_targets(graphs, trained.run_config)
        targets_sha256 = config.file_digest(args.target)

    name = args.name or (BASELINE_NAME if args.baseline else CANDIDATES_NAME)
    evaluations = 0
    with open(run_dir / name, 'w') as out:
        for index, query in enumerate(queries):
            candidates, count = sample_query(trained, query, sample_config, args.baseline)
            evaluations += count
            sampler.write_candidates(candidates, out, index, config_hash=run_dir.config_hash,
                                     targets_sha256=targets_sha256)
            if args.progress and (index + 1) % args.progress == 0:
                logger.info("Sampled %d queries", index + 1)
    run_dir.record(name, 'baseline' if args.baseline else 'candidates',
                   steps=sample_config.steps, n_queries=len(queries),
                   targets_sha256=targets_sha256)

    finish_time = datetime.datetime.now()
    logger.info("Done with %d queries, %d network evaluations, in %s",
                len(queries), evaluations, finish_time - start_time)


Query = namedtuple('Query', ['atom_types', 'y_cond'])


def query_from_formula(formula, vocab=DEFAULT_VOCAB):
    counts = parse_formula(formula, vocab)
    atom_types = [k for k, symbol in enumerate(vocab.symbols) for _ in range(counts[symbol])]
    return Query(np.asarray(atom_types), None)


def queries_from_targets(graphs, run_config):
    return [Query(g.atom_types, train.conditioning_vector(g, run_config.fingerprint))
            for g in graphs]


def sample_query(trained, query, sample_config, baseline=False):
    """Ranked candidates for one query and the number of network calls made."""
    if baseline:
        candidates = sampler.sample_marginal_baseline(query.atom_types, trained.model.marginals,
                                                      sample_config.n_candidates,
                                                      sample_config.seed,
                                                      filter_valence=sample_config.filter_valence)
        return candidates, 0
    predictor = sampler.DenoiserPredictor(trained.params, trained.run_config.denoiser,
                                          query.atom_types, query.y_cond, trained.model.T,
                                          feature_seed=sample_config.seed)
    candidates = sampler.generate_candidates(query.atom_types, predictor, trained.model,
                                             sample_config)
    return candidates, predictor.evaluations


if __name__ == '__main__':
    main()
