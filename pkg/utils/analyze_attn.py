#!/usr/bin/env python3

"""Measure how each bond splits its attention between its two atoms.

For every bond of every molecule in --data, records log2 of the ratio of
the bonds-from-atoms attention on the less electronegative atom to that on
the more electronegative one (random orientation for equal
electronegativity).  Writes asymmetry.jsonl (one record per bond) and
asymmetry-summary.json (one entry per bond class) into the run directory.
Both carry the run's config_hash, and --data records must carry it too.

"""

import argparse
import datetime
import json
import logging
from pathlib import Path

import numpy as np

import config
import metrics
import train

RECORDS_NAME = 'asymmetry.jsonl'
SUMMARY_NAME = 'asymmetry-summary.json'

logger = logging.getLogger('analyze_attn')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli()])
    parser.add_argument('--checkpoint',
                        help='Checkpoint written by train.py',
                        type=Path,
                        required=True)
    parser.add_argument('--data',
                        help='Molecules to analyze (JSONL, as written by gen_data.py)',
                        type=Path,
                        required=True)
    parser.add_argument('--run-dir',
                        help='Run directory to write into (default: the checkpoint\'s)',
                        type=Path)
    parser.add_argument('--seed',
                        help='Seed for orienting bonds between equal atoms',
                        type=int,
                        default=0)
    parser.add_argument('--limit',
                        help='Analyze at most this many molecules',
                        type=int)
    parser.add_argument('--progress',
                        help='log progress every N molecules',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)

    def body():
        logger.info("Starting work, job-name = %s", args.job_name)
        start_time = datetime.datetime.now()
        trained = train.load_trained(args.checkpoint)
        run_dir = config.RunDirectory(args.run_dir or args.checkpoint.parent, trained.run_config)
        with open(args.data) as stream:
            graphs = list(config.read_stamped_molecules(stream, run_dir.config_hash))
        if args.limit is not None:
            graphs = graphs[:args.limit]
        rng = np.random.default_rng(args.seed)
        records = []
        with open(run_dir / RECORDS_NAME, 'w') as out:
            for index, graph in enumerate(graphs):
                for record in metrics.attention_asymmetry(
                        trained.params, trained.run_config.denoiser, graph, trained.model.T,
                        rng=rng, radius=trained.run_config.fingerprint.radius):
                    records.append(record)
                    print(json.dumps(dict(record._asdict(), molecule=index,
                                          config_hash=run_dir.config_hash)), file=out)
                if args.progress and (index + 1) % args.progress == 0:
                    logger.info("Analyzed %d molecules", index + 1)
        run_dir.record(RECORDS_NAME, 'asymmetry', n_records=len(records), seed=args.seed)
        summary = metrics.summarize_asymmetry(records)
        with open(run_dir / SUMMARY_NAME, 'w') as out:
            print(json.dumps({'config_hash': run_dir.config_hash, 'classes': summary},
                             indent=2, sort_keys=True), file=out)
        run_dir.record(SUMMARY_NAME, 'asymmetry-summary')
        for name, stats in summary.items():
            logger.info("%s: n=%d mean log2 r %.4f (stderr %.4f)", name, stats['count'],
                        stats['mean'], stats['stderr'])
        finish_time = datetime.datetime.now()
        logger.info("Done with %d bonds in %s", len(records), finish_time - start_time)

    config.run_guarded(body, logger)


if __name__ == '__main__':
    main()
