#!/usr/bin/env python3

"""Benchmark line-graph self-attention: exact softmax against the linear
random-feature kernel, over a range of atom counts.

Writes bench.csv (kernel,n_atoms,m_nodes,median_ms,peak_bytes) into the
run directory and records it in the manifest, with the run's config_hash.
The head width and feature count default to the run's line-stream
settings.  Sizes a kernel cannot fit in --memory-limit are written as
'failed' rows.

"""

import argparse
import datetime
import logging

import config
import fastattn

BENCH_NAME = 'bench.csv'

logger = logging.getLogger('bench_attn')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli(), config.config_cli()])
    parser.add_argument('--run-dir',
                        help='Run directory to write bench.csv into',
                        required=True)
    parser.add_argument('--sizes',
                        help='Comma-separated atom counts',
                        default='10,20,30,40,50,60,70,80,90,100')
    parser.add_argument('--kernels',
                        help='Comma-separated kernels',
                        default='softmax,linear')
    parser.add_argument('--repeats',
                        help='Timed runs per kernel and size',
                        type=int,
                        default=5)
    parser.add_argument('--features',
                        help='Random features R for the linear kernel (default: '
                        'denoiser.n_features)',
                        type=int)
    parser.add_argument('--head-dim',
                        help='Per-head width (default: denoiser.d_e / denoiser.n_heads_line)',
                        type=int)
    parser.add_argument('--memory-limit',
                        help='Skip exact attention whose score matrices exceed this many bytes',
                        type=int,
                        default=2 * 1024 ** 3)
    parser.add_argument('--seed',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)

    def body():
        run_config = config.directory_config(args, args.run_dir)
        config.dump_if_asked(args, run_config)
        logger.info("Starting work, job-name = %s", args.job_name)
        start_time = datetime.datetime.now()
        run_dir = config.RunDirectory(args.run_dir, run_config)
        denoiser_config = run_config.denoiser
        head_dim = args.head_dim or denoiser_config.d_e // denoiser_config.n_heads_line
        n_features = args.features or denoiser_config.n_features
        sizes = [int(n) for n in args.sizes.split(',')]
        rows = fastattn.bench_attention(sizes, args.kernels.split(','), args.repeats,
                                        head_dim, n_features, args.seed, args.memory_limit)
        with open(run_dir / BENCH_NAME, 'w') as out:
            fastattn.write_bench_csv(rows, out)
        run_dir.record(BENCH_NAME, 'benchmark', head_dim=head_dim, n_features=n_features,
                       seed=args.seed)
        finish_time = datetime.datetime.now()
        logger.info("Done with %d rows (%d failed) in %s", len(rows),
                    sum(1 for row in rows if not row.ok), finish_time - start_time)

    config.run_guarded(body, logger)


if __name__ == '__main__':
    main()
