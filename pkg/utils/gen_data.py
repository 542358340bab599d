#!/usr/bin/env python3

"""Generate a synthetic corpus of small molecules as JSONL.

Each record has the atom symbols, the bonds as [i, j, type] with i < j,
an id, the heavy-atom formula, the split and the run's config_hash.
Atom counts are drawn uniformly between min-atoms and max-atoms and
elements from a carbon-heavy distribution.  Molecule k of a split depends
only on (seed, split, k), so the corpus is reproducible and any prefix of
it is the same at every --n.

The training split goes to corpus.jsonl and the holdout split (queries
for sample.py and evaluate.py) to holdout.jsonl, both in the run
directory.

"""

import argparse
import datetime
import logging

import numpy as np

import config
from molgraph import DEFAULT_VOCAB, GenerationError, format_formula, random_molecule, \
    write_molecule

# Element draw weights, in DEFAULT_VOCAB order (C, N, O, F, S).
ELEMENT_WEIGHTS = (0.64, 0.14, 0.14, 0.04, 0.04)
FORMULA_ATTEMPTS = 5
SPLITS = {'train': 'corpus.jsonl', 'holdout': 'holdout.jsonl'}
# Seed prefix separating the holdout stream from the training one.
HOLDOUT_KEY = 2 ** 32 - 1

logger = logging.getLogger('gen_data')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli(), config.config_cli()])
    parser.add_argument('--run-dir',
                        help='Run directory to write the split into',
                        required=True)
    parser.add_argument('--split',
                        help='Which split to generate',
                        choices=sorted(SPLITS),
                        default='train')
    parser.add_argument('--n',
                        help='Number of molecules (default: data.n_molecules or data.n_holdout)',
                        type=int)
    parser.add_argument('--min-atoms',
                        help='Smallest heavy-atom count (default: data.min_atoms)',
                        type=int)
    parser.add_argument('--max-atoms',
                        help='Largest heavy-atom count (default: data.max_atoms)',
                        type=int)
    parser.add_argument('--seed',
                        help='Corpus seed (default: data.seed)',
                        type=int)
    parser.add_argument('--progress',
                        help='log progress every N molecules',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)

    def body():
        run_config = data_overrides(config.directory_config(args, args.run_dir), args)
        config.dump_if_asked(args, run_config)
        logger.info("Starting work, job-name = %s", args.job_name)
        start_time = datetime.datetime.now()
        run_dir = config.RunDirectory(args.run_dir, run_config)
        name = SPLITS[args.split]
        count = 0
        with open(run_dir / name, 'w') as out:
            for index, graph in generate_corpus(run_config.data, split=args.split):
                write_molecule(graph, out, id=index, formula=format_formula(graph.formula()),
                               split=args.split, config_hash=run_dir.config_hash)
                count += 1
                if args.progress and count % args.progress == 0:
                    logger.info("Generated %d molecules", count)
        run_dir.record(name, args.split, n_records=count)
        finish_time = datetime.datetime.now()
        logger.info("Done with %d of %d molecules in %s", count,
                    split_size(run_config.data, args.split), finish_time - start_time)

    config.run_guarded(body, logger)


def data_overrides(run_config, args):
    """Apply the data flags.  They are part of the configuration, so they
    change its hash."""
    size_key = 'n_molecules' if args.split == 'train' else 'n_holdout'
    overrides = {key: value for key, value in ((size_key, args.n),
                                               ('min_atoms', args.min_atoms),
                                               ('max_atoms', args.max_atoms),
                                               ('seed', args.seed))
                 if value is not None}
    return run_config.replace('data', **overrides) if overrides else run_config


def split_size(data_config, split):
    return data_config.n_molecules if split == 'train' else data_config.n_holdout


def random_formula(n_atoms, rng, vocab=DEFAULT_VOCAB):
    weights = np.asarray(ELEMENT_WEIGHTS[:len(vocab)])
    draws = rng.choice(len(vocab), size=n_atoms, p=weights / weights.sum())
    return {vocab.symbols[k]: int(c) for k, c in enumerate(np.bincount(draws, minlength=len(vocab)))
            if c}


def generate_corpus(data_config, vocab=DEFAULT_VOCAB, split='train'):
    """Yield (index, graph) for every molecule of a split that could be
    generated.

    A record whose formulas all fail is logged and skipped.

    """
    if split not in SPLITS:
        raise ValueError('unknown split %r' % split)
    prefix = [data_config.seed] if split == 'train' else [data_config.seed, HOLDOUT_KEY]
    for index in range(split_size(data_config, split)):
        rng = np.random.default_rng(prefix + [index])
        n_atoms = int(rng.integers(data_config.min_atoms, data_config.max_atoms + 1))
        for attempt in range(FORMULA_ATTEMPTS):
            formula = random_formula(n_atoms, rng, vocab)
            try:
                graph = random_molecule(formula, prefix + [index, attempt], vocab,
                                        max_atoms=data_config.max_atoms,
                                        aromatic_probability=data_config.aromatic_probability)
            except GenerationError as ex:
                logger.debug("molecule %d: %s", index, ex)
                continue
            yield index, graph
            break
        else:
            logger.warning("No valid molecule for record %d after %d formulas",
                           index, FORMULA_ATTEMPTS)


if __name__ == '__main__':
    main()
