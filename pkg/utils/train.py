#!/usr/bin/env python3

"""Train the denoiser on a molecule corpus.

Each step draws a corpus molecule, a diffusion step t uniformly from
1..T, corrupts the bonds to E_t, and asks the network to recover the clean
bonds, conditioned on the clean molecule's fingerprint.  The loss is the
mean cross-entropy over atom pairs.

All randomness for a step is derived from (seed, epoch, step), so a run
resumed from an epoch checkpoint produces the same losses as an
uninterrupted one.

Reads the run directory's corpus.jsonl (or --data), whose records must
carry the run's config_hash.  Writes checkpoint.dlgd (or the
--out-checkpoint name) after every epoch, and losses.csv, into the run
directory.

"""

from collections import namedtuple
import argparse
import datetime
import logging
import math
from pathlib import Path

import numpy as np

import checkpoint
import config
import denoiser
import diffusion
import metrics
from molgraph import build_line_graph, pair_values
import tensorcore as tc

CHECKPOINT_NAME = 'checkpoint.dlgd'
CORPUS_NAME = 'corpus.jsonl'
LOSSES_NAME = 'losses.csv'

logger = logging.getLogger('train')


def main():
    "Main program"
    parser = argparse.ArgumentParser(parents=[config.logging_cli(), config.config_cli()])
    parser.add_argument('--data',
                        help='Molecule corpus written by gen_data.py (default: the run\'s '
                        'corpus.jsonl)',
                        type=Path)
    parser.add_argument('--run-dir',
                        help='Run directory for the checkpoint, loss curve and manifest')
    parser.add_argument('--out-checkpoint',
                        help='Checkpoint path; its directory is the run directory',
                        type=Path)
    parser.add_argument('--resume',
                        help='Continue from the run directory\'s checkpoint',
                        action='store_true')
    parser.add_argument('--epochs',
                        help='Override optimizer.epochs; does not change the config hash, so '
                        'a resumed run can be extended',
                        type=int)
    parser.add_argument('--progress',
                        help='log progress every N steps',
                        type=int,
                        default=0)
    args = parser.parse_args()
    config.configure_logging(args)
    try:
        run_path, checkpoint_name = output_location(args.run_dir, args.out_checkpoint)
    except ValueError as ex:
        parser.error(str(ex))

    def body():
        run_config = config.directory_config(args, run_path)
        if args.epochs:
            run_config = run_config.replace('optimizer', epochs=args.epochs)
        config.dump_if_asked(args, run_config)
        run(args, config.RunDirectory(run_path, run_config), checkpoint_name)

    config.run_guarded(body, logger)


def output_location(run_dir, out_checkpoint):
    """(run directory, checkpoint file name) from --run-dir and
    --out-checkpoint."""
    if out_checkpoint is None:
        if run_dir is None:
            raise ValueError('one of --run-dir and --out-checkpoint is required')
        return Path(run_dir), CHECKPOINT_NAME
    parent = out_checkpoint.parent
    if run_dir is not None and Path(run_dir).resolve() != parent.resolve():
        raise ValueError('--out-checkpoint %s is not inside --run-dir %s'
                         % (out_checkpoint, run_dir))
    return parent, out_checkpoint.name


def run(args, run_dir, checkpoint_name=CHECKPOINT_NAME):
    logger.info("Starting work, job-name = %s", args.job_name)
    start_time = datetime.datetime.now()

    data_path = args.data or run_dir / CORPUS_NAME
    with open(data_path) as stream:
        graphs = list(config.read_stamped_molecules(stream, run_dir.config_hash))
    logger.info("Read %d molecules from %s", len(graphs), data_path)

    resume_from = None
    if args.resume:
        resume_from = checkpoint.load_checkpoint(run_dir / checkpoint_name, run_dir.config_hash)

    def save(state):
        checkpoint.save_checkpoint(run_dir / checkpoint_name, state.header, state.arrays)
        run_dir.record(checkpoint_name, 'checkpoint', epoch=state.header['epoch'])
        with open(run_dir / LOSSES_NAME, 'w') as stream:
            write_losses(state.losses, stream)
        run_dir.record(LOSSES_NAME, 'loss-curve')

    try:
        result = train_model(run_dir.config, graphs, resume_from=resume_from, on_epoch=save,
                             progress=args.progress)
    except FloatingPointError:
        logger.error("Training aborted; %s holds the last good epoch", run_dir / checkpoint_name)
        raise

    finish_time = datetime.datetime.now()
    elapsed_time = finish_time - start_time
    if not result.epoch_losses:
        logger.info("Nothing to do; finished in %s", elapsed_time)
        return
    logger.info("Done with %d epochs, final loss %.4f, in %s",
                len(result.epoch_losses), result.epoch_losses[-1], elapsed_time)


def conditioning_vector(graph, fingerprint_config):
    fp = metrics.circular_fingerprint(graph, fingerprint_config.radius, fingerprint_config.n_bits)
    return fp.bits.astype(np.float64)


def build_transition_model(run_config, graphs):
    schedule = diffusion.build_schedule(run_config.diffusion.T, run_config.diffusion.s_offset)
    marginals = diffusion.estimate_marginals(graphs, run_config.denoiser.n_bond_classes)
    return diffusion.TransitionModel(schedule, marginals)


def molecule_loss(graph, y_cond, model, run_config, params, rng):
    """Loss for one molecule at a random step, or None if it has no pairs."""
    if graph.n_atoms < 2:
        return None
    t = int(rng.integers(1, model.T + 1))
    noisy = diffusion.forward_corrupt(graph.bonds, t, model, rng)
    output = denoiser.forward(graph.atom_types, noisy, y_cond, t, model.T, run_config.denoiser,
                              params, rng=rng, feature_seed=int(rng.integers(2 ** 31)))
    clean = pair_values(graph.bonds, build_line_graph(graph.n_atoms))
    return diffusion.training_loss(output.pair_logits, clean)


TrainState = namedtuple('TrainState', ['header', 'arrays', 'losses'])
TrainResult = namedtuple('TrainResult', ['params', 'model', 'epoch_losses', 'step_losses'])


def make_header(run_config, model, epoch, step, optimizer_steps):
    return {'config': run_config.to_dict(),
            'config_hash': config.config_hash(run_config),
            'diffusion': model.to_dict(),
            'epoch': epoch,
            'step': step,
            'optimizer_steps': optimizer_steps}


def train_model(run_config, graphs, resume_from=None, on_epoch=None, progress=0):
    """Train from scratch, or from a (header, arrays) checkpoint.

    on_epoch, if given, is called with a TrainState after every epoch.
    Raises tensorcore.OptimizerAbortError or NonFiniteError on non-finite
    gradients or losses.

    Returns a TrainResult.

    """
    opt = run_config.optimizer
    fingerprints = [conditioning_vector(g, run_config.fingerprint) for g in graphs]
    params = denoiser.init_params(run_config.denoiser, np.random.default_rng(opt.seed))
    optimizer = tc.AdamW(params, opt.lr, opt.betas, opt.eps, opt.weight_decay)
    model = build_transition_model(run_config, graphs)
    logger.info("Network has %d parameters: %s", params.numel(),
                denoiser.parameter_breakdown(params))
    first_epoch, step, epoch_losses, step_losses = 0, 0, [], []
    if resume_from is not None:
        header, arrays = resume_from
        param_arrays, moments = checkpoint.split_arrays(arrays)
        params.load_state_dict(param_arrays)
        optimizer.load_state_arrays(moments, header['optimizer_steps'])
        model = diffusion.TransitionModel.from_dict(header['diffusion'])
        first_epoch, step = header['epoch'] + 1, header['step']
        epoch_losses = list(header.get('epoch_losses', []))
        logger.info("Resuming after epoch %d, step %d", header['epoch'], step)

    previous_flag = tc.deterministic_eval()
    tc.set_deterministic_eval(False)
    try:
        for epoch in range(first_epoch, opt.epochs):
            order = np.random.default_rng([opt.seed, epoch]).permutation(len(graphs))
            total, count = 0.0, 0
            for start in range(0, len(order), opt.batch_size):
                batch = order[start:start + opt.batch_size]
                loss = train_step(batch, graphs, fingerprints, model, run_config, params,
                                  optimizer, np.random.default_rng([opt.seed, epoch, step]))
                step += 1
                if loss is None:
                    continue
                step_losses.append(loss)
                total += loss * len(batch)
                count += len(batch)
                if progress and step % progress == 0:
                    logger.info("epoch %d step %d loss %.4f", epoch, step, loss)
            epoch_losses.append(total / max(count, 1))
            logger.info("epoch %d: mean loss %.4f", epoch, epoch_losses[-1])
            if on_epoch:
                header = make_header(run_config, model, epoch, step, optimizer.step_count)
                header['epoch_losses'] = epoch_losses
                arrays = params.state_dict()
                arrays.update(optimizer.state_arrays())
                on_epoch(TrainState(header, arrays, list(epoch_losses)))
    finally:
        tc.set_deterministic_eval(previous_flag)
    return TrainResult(params, model, epoch_losses, step_losses)


def train_step(batch, graphs, fingerprints, model, run_config, params, optimizer, rng):
    """One optimizer step on the mean loss of a batch of corpus indices.

    Returns the batch loss, or None if no molecule in the batch has pairs.

    """
    params.zero_grad()
    losses = []
    for index in batch:
        loss = molecule_loss(graphs[index], fingerprints[index], model, run_config, params, rng)
        if loss is not None:
            losses.append(loss)
    if not losses:
        return None
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    mean_loss = total * (1.0 / len(losses))
    if not math.isfinite(mean_loss.item()):
        raise tc.NonFiniteError('non-finite training loss')
    tc.backward(mean_loss)
    tc.clip_grad_norm(params, run_config.optimizer.grad_clip)
    optimizer.step()
    return mean_loss.item()


def write_losses(epoch_losses, stream):
    print('epoch,loss', file=stream)
    for epoch, loss in enumerate(epoch_losses):
        print('%d,%.8f' % (epoch, loss), file=stream)


TrainedModel = namedtuple('TrainedModel', ['run_config', 'model', 'params', 'header'])


def load_trained(path, expected_hash=None):
    """Rebuild the config, transition model and parameters from a checkpoint."""
    header, arrays = checkpoint.load_checkpoint(path, expected_hash)
    run_config = config.RunConfig.from_dict(header['config'])
    if config.config_hash(run_config) != header['config_hash']:
        raise config.ConfigMismatchError('checkpoint %s header hash does not match its config'
                                         % path)
    params = denoiser.init_params(run_config.denoiser, np.random.default_rng(0))
    params.load_state_dict(checkpoint.split_arrays(arrays)[0])
    return TrainedModel(run_config, diffusion.TransitionModel.from_dict(header['diffusion']),
                        params, header)


if __name__ == '__main__':
    main()
