#!/usr/bin/env python3

"""Score candidate molecules against the ground truth.

Candidates come from sample.py (records carry 'query' and 'rank'); query
k is the k-th molecule of the truth file.  Every candidate and truth
record must carry the run directory's config_hash, and the candidates must
have been sampled from this very truth file (their targets_sha256).

Writes <candidates>-report.json (which embeds the config_hash) and
<candidates>-report.txt, a plain-text table of accuracy, MCES and
Tanimoto at each K, into the run directory, and prints the table.

"""

from collections import defaultdict
import argparse
import datetime
import json
import logging
from pathlib import Path

import config
import metrics
from molgraph import InvalidInputError, molecule_from_record

logger = logging.getLogger('evaluate')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli(), config.config_cli()])
    parser.add_argument('--candidates',
                        help='Candidate JSONL written by sample.py',
                        type=Path,
                        required=True)
    parser.add_argument('--truth',
                        help='Ground-truth molecules, one per query, in query order',
                        type=Path,
                        required=True)
    parser.add_argument('--run-dir',
                        help='Run directory (default: the one holding --candidates)',
                        type=Path)
    parser.add_argument('--k',
                        help='Comma-separated K values',
                        default='1,10')
    parser.add_argument('--n-jobs',
                        help='Parallel queries (threads)',
                        type=int,
                        default=1)
    args = parser.parse_args()
    config.configure_logging(args)

    def body():
        run_path = args.run_dir or args.candidates.parent
        run_config = config.directory_config(args, run_path)
        config.dump_if_asked(args, run_config)
        logger.info("Starting work, job-name = %s", args.job_name)
        start_time = datetime.datetime.now()
        run_dir = config.RunDirectory(run_path, run_config)
        ks = [int(k) for k in args.k.split(',')]
        with open(args.truth) as stream:
            truths = list(config.read_stamped_molecules(stream, run_dir.config_hash))
        with open(args.candidates) as stream:
            candidate_lists = read_candidate_lists(stream, len(truths), run_dir.config_hash,
                                                   config.file_digest(args.truth))
        report = metrics.evaluate(truths, candidate_lists, ks,
                                  radius=run_config.fingerprint.radius,
                                  n_bits=run_config.fingerprint.n_bits,
                                  n_jobs=args.n_jobs)
        write_report(report, run_dir, args.candidates.stem)
        print(report.format_table())
        finish_time = datetime.datetime.now()
        logger.info("Done with %d queries in %s", len(truths), finish_time - start_time)

    config.run_guarded(body, logger)


def write_report(report, run_dir, stem):
    """Write and record <stem>-report.json and <stem>-report.txt."""
    json_name = '%s-report.json' % stem
    text_name = '%s-report.txt' % stem
    with open(run_dir / json_name, 'w') as stream:
        print(report.to_json(config_hash=run_dir.config_hash), file=stream)
    run_dir.record(json_name, 'report')
    with open(run_dir / text_name, 'w') as stream:
        print(report.format_table(), file=stream)
    run_dir.record(text_name, 'report-table')
    return json_name, text_name


def read_candidate_lists(stream, n_queries, expected_hash=None, targets_sha256=None):
    """Group candidate records by query, each list ordered by rank.

    If expected_hash is given every record's config_hash must equal it;
    if targets_sha256 is given every record must name that target file.
    Raises InvalidInputError on a malformed record.

    """
    grouped = defaultdict(list)
    for line_number, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            query = int(record['query'])
            rank = int(record.get('rank', len(grouped[query]) + 1))
        except (KeyError, TypeError, ValueError, AttributeError) as ex:
            raise InvalidInputError('malformed candidate record on line %d: %r'
                                    % (line_number, ex)) from ex
        if not 0 <= query < n_queries:
            raise InvalidInputError('candidate for query %d, but only %d truth molecules'
                                    % (query, n_queries))
        if expected_hash is not None:
            config.check_hash(record.get('config_hash'), expected_hash,
                              'candidate line %d' % line_number)
        if targets_sha256 is not None and record.get('targets_sha256') != targets_sha256:
            raise config.ConfigMismatchError('candidate line %d was sampled from targets %s, '
                                             'not %s' % (line_number,
                                                         record.get('targets_sha256'),
                                                         targets_sha256))
        grouped[query].append((rank, molecule_from_record(record)))
    return [[graph for _, graph in sorted(grouped[k], key=lambda item: item[0])]
            for k in range(n_queries)]


if __name__ == '__main__':
    main()
