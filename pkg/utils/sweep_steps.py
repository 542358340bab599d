#!/usr/bin/env python3

"""Speed/quality sweep of the jump sampler.

Samples every truth molecule's query with the full T-step chain and then
with each requested J, evaluates each run, and writes sweep.csv into the
run directory (by default the checkpoint's):

    steps,seconds,speedup,top1,top10,tanimoto1,retention

speedup is the full chain's time over this run's; retention is this run's
Tanimoto@1 over the full chain's.  Truth records must carry the
checkpoint's config_hash.

"""

from collections import namedtuple
import argparse
import datetime
import logging
from pathlib import Path
import time

import config
import metrics
import sample
import train

SWEEP_NAME = 'sweep.csv'

logger = logging.getLogger('sweep_steps')

SweepRow = namedtuple('SweepRow', ['steps', 'seconds', 'speedup', 'top1', 'top10', 'tanimoto1',
                                   'retention'])


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli()])
    parser.add_argument('--checkpoint',
                        help='Checkpoint written by train.py',
                        type=Path,
                        required=True)
    parser.add_argument('--truth',
                        help='Query molecules (JSONL); each is also the ground truth',
                        type=Path,
                        required=True)
    parser.add_argument('--run-dir',
                        help='Run directory to write into (default: the checkpoint\'s)',
                        type=Path)
    parser.add_argument('--steps',
                        help='Comma-separated J values to compare with the full chain',
                        default='25,10,5,2')
    parser.add_argument('--n-candidates',
                        type=int,
                        default=10)
    parser.add_argument('--seed',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)

    def body():
        logger.info("Starting work, job-name = %s", args.job_name)
        start_time = datetime.datetime.now()
        trained = train.load_trained(args.checkpoint)
        run_dir = config.RunDirectory(args.run_dir or args.checkpoint.parent, trained.run_config)
        with open(args.truth) as stream:
            truths = list(config.read_stamped_molecules(stream, run_dir.config_hash))
        steps = [int(j) for j in args.steps.split(',')]
        rows = sweep(trained, truths, steps, args.n_candidates, args.seed)
        with open(run_dir / SWEEP_NAME, 'w') as out:
            write_sweep_csv(rows, out)
        run_dir.record(SWEEP_NAME, 'step-sweep', n_candidates=args.n_candidates, seed=args.seed,
                       truth_sha256=config.file_digest(args.truth))
        finish_time = datetime.datetime.now()
        logger.info("Done with %d settings in %s", len(rows), finish_time - start_time)

    config.run_guarded(body, logger)


def run_setting(trained, truths, steps, n_candidates, seed):
    """Sample and evaluate every truth's query with J = steps.

    Returns (seconds, EvalReport).

    """
    sample_config = trained.run_config.replace('sample', n_candidates=n_candidates,
                                               steps=steps, seed=seed).sample
    queries = sample.queries_from_targets(truths, trained.run_config)
    start = time.perf_counter()
    candidate_lists = []
    for query in queries:
        candidates, _ = sample.sample_query(trained, query, sample_config)
        candidate_lists.append([c.graph for c in candidates])
    seconds = time.perf_counter() - start
    report = metrics.evaluate(truths, candidate_lists, (1, 10),
                              radius=trained.run_config.fingerprint.radius,
                              n_bits=trained.run_config.fingerprint.n_bits)
    return seconds, report


def sweep(trained, truths, steps, n_candidates, seed):
    """The full chain first, then each J in steps."""
    T = trained.model.T
    full_seconds, full_report = run_setting(trained, truths, T, n_candidates, seed)
    rows = []
    for j in [T] + [j for j in steps if j != T]:
        if j == T:
            seconds, report = full_seconds, full_report
        else:
            seconds, report = run_setting(trained, truths, j, n_candidates, seed)
        baseline = full_report.tanimoto[1]
        retention = report.tanimoto[1] / baseline if baseline > 0 else float('nan')
        rows.append(SweepRow(j, seconds, full_seconds / seconds, report.accuracy[1],
                             report.accuracy[10], report.tanimoto[1], retention))
        logger.info("J=%d: %.2fs, top-1 %.3f, Tanimoto@1 %.3f, retention %.3f",
                    j, seconds, report.accuracy[1], report.tanimoto[1], retention)
    return rows


def write_sweep_csv(rows, stream):
    print(','.join(SweepRow._fields), file=stream)
    for row in rows:
        print('%d,%.4f,%.3f,%.4f,%.4f,%.4f,%.4f' % row, file=stream)


if __name__ == '__main__':
    main()
