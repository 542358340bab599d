import unittest
from unittest import mock
from io import BytesIO, StringIO, SEEK_SET
import json
import os
from pathlib import Path
import tempfile

import numpy as np

import analyze_attn
import bench_attn
import checkpoint
import config
import evaluate
import gen_data
import metrics
from molgraph import DEFAULT_VOCAB, InvalidInputError, MolecularGraph, SINGLE, check_valence, \
    read_molecules, write_molecule
import sample
import sampler
import sweep_steps
import tensorcore as tc
import train

SLOW = os.environ.get('DUALLGD_SLOW') == '1'

TINY_RUN = {'denoiser': {'n_layers': 1, 'd_x': 8, 'd_e': 8, 'd_y': 8, 'n_heads_primal': 2,
                         'n_heads_line': 2, 'n_heads_cross': 2, 'd_cond': 32, 'd_time': 4,
                         'n_features': 16},
            'fingerprint': {'n_bits': 32},
            'diffusion': {'T': 6},
            'optimizer': {'epochs': 2, 'batch_size': 4, 'seed': 3},
            'data': {'n_molecules': 8, 'min_atoms': 2, 'max_atoms': 4, 'seed': 1,
                     'n_holdout': 3},
            'sample': {'n_candidates': 3, 'steps': 2}}

# Same shapes, different identity.
OTHER_RUN = dict(TINY_RUN, optimizer=dict(TINY_RUN['optimizer'], seed=4))


def tiny_config():
    return config.RunConfig.from_dict(TINY_RUN)


def tiny_corpus(run_config):
    return [graph for _, graph in gen_data.generate_corpus(run_config.data)]


def propane():
    return MolecularGraph.from_bond_list([0, 0, 0], [(0, 1, SINGLE), (1, 2, SINGLE)])


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def read_manifest(run_dir):
    return json.loads((Path(run_dir) / config.RunDirectory.MANIFEST).read_text())


def run_main(module, *argv):
    """Run a script's main() with the given arguments; returns what it
    printed.  A non-zero exit propagates as SystemExit."""
    out = StringIO()
    argv = [module.__name__ + '.py', '--log-level=warning'] + [str(arg) for arg in argv]
    with mock.patch('sys.argv', argv), mock.patch('sys.stdout', out):
        try:
            module.main()
        except SystemExit as ex:
            if ex.code:
                raise
    return out.getvalue()


class GenDataTest(unittest.TestCase):
    def test_reproducible(self):
        data_config = tiny_config().data
        a = list(gen_data.generate_corpus(data_config))
        b = list(gen_data.generate_corpus(data_config))
        self.assertEqual(a, b)

    def test_prefix_is_stable(self):
        run_config = tiny_config()
        small = list(gen_data.generate_corpus(run_config.replace('data', n_molecules=3).data))
        self.assertEqual(small, list(gen_data.generate_corpus(run_config.data))[:len(small)])

    def test_sizes_connectivity_and_valence(self):
        data_config = tiny_config().replace('data', n_molecules=30).data
        for _, graph in gen_data.generate_corpus(data_config):
            self.assertTrue(2 <= graph.n_atoms <= 4)
            self.assertTrue(graph.is_connected())
            self.assertTrue(check_valence(graph)[0])

    def test_random_formula(self):
        formula = gen_data.random_formula(6, np.random.default_rng(0))
        self.assertEqual(sum(formula.values()), 6)
        self.assertTrue(set(formula) <= set(DEFAULT_VOCAB.symbols))

    def test_holdout_is_its_own_stream(self):
        data_config = tiny_config().data
        holdout = list(gen_data.generate_corpus(data_config, split='holdout'))
        self.assertEqual(holdout, list(gen_data.generate_corpus(data_config, split='holdout')))
        self.assertLessEqual(len(holdout), data_config.n_holdout)
        train_split = list(gen_data.generate_corpus(data_config))[:len(holdout)]
        self.assertNotEqual(holdout, train_split)

    def test_unknown_split(self):
        with self.assertRaises(ValueError):
            list(gen_data.generate_corpus(tiny_config().data, split='test'))


class TrainTest(unittest.TestCase):
    def tearDown(self):
        tc.set_deterministic_eval(True)

    def test_losses_are_finite(self):
        run_config = tiny_config()
        result = train.train_model(run_config, tiny_corpus(run_config))
        self.assertEqual(len(result.epoch_losses), 2)
        self.assertTrue(all(np.isfinite(loss) for loss in result.epoch_losses))
        self.assertTrue(tc.deterministic_eval())

    def test_resume_matches_uninterrupted_run(self):
        run_config = tiny_config()
        graphs = tiny_corpus(run_config)
        saved = []

        def save(state):
            if not saved:
                stream = BytesIO()
                checkpoint.write_checkpoint(stream, state.header, state.arrays)
                saved.append(stream.getvalue())
        full = train.train_model(run_config, graphs, on_epoch=save)
        resumed = train.train_model(run_config, graphs,
                                    resume_from=checkpoint.read_checkpoint(BytesIO(saved[0])))
        np.testing.assert_allclose(resumed.epoch_losses, full.epoch_losses, rtol=1e-12)
        for name, array in full.params.state_dict().items():
            np.testing.assert_allclose(resumed.params[name].data, array, rtol=1e-12, atol=1e-15)

    def test_write_losses(self):
        stream = StringIO()
        train.write_losses([1.5, 0.25], stream)
        self.assertEqual(stream.getvalue().splitlines(),
                         ['epoch,loss', '0,1.50000000', '1,0.25000000'])

    def test_conditioning_vector(self):
        vector = train.conditioning_vector(propane(), tiny_config().fingerprint)
        self.assertEqual(vector.shape, (32,))
        self.assertTrue(set(np.unique(vector)) <= {0.0, 1.0})

    def test_output_location(self):
        self.assertEqual(train.output_location('runs/a', None),
                         (Path('runs/a'), train.CHECKPOINT_NAME))
        self.assertEqual(train.output_location(None, Path('runs/b/model.dlgd')),
                         (Path('runs/b'), 'model.dlgd'))
        self.assertEqual(train.output_location('runs/b', Path('runs/b/model.dlgd')),
                         (Path('runs/b'), 'model.dlgd'))

    def test_output_location_conflicts(self):
        with self.assertRaises(ValueError):
            train.output_location(None, None)
        with self.assertRaises(ValueError):
            train.output_location('runs/a', Path('runs/b/model.dlgd'))


class SampleTest(unittest.TestCase):
    def test_query_from_formula(self):
        query = sample.query_from_formula('C2O1')
        self.assertEqual(query.atom_types.tolist(), [0, 0, 2])
        self.assertIsNone(query.y_cond)

    def test_baseline_uses_no_network(self):
        run_config = tiny_config()
        model = train.build_transition_model(run_config, [propane()])
        trained = train.TrainedModel(run_config, model, None, {})
        query = sample.query_from_formula('C4')
        candidates, evaluations = sample.sample_query(trained, query,
                                                      trained.run_config.sample, baseline=True)
        self.assertEqual(evaluations, 0)
        self.assertTrue(0 < len(candidates) <= 3)


class EvaluateScriptTest(unittest.TestCase):
    def test_read_candidate_lists(self):
        stream = StringIO()
        candidates = [sampler.Candidate(propane(), -0.1, -0.1, 7, 2, 0.0, 'a'),
                      sampler.Candidate(MolecularGraph([0, 0, 0], np.zeros((3, 3))), -0.5, -0.5,
                                        8, 2, 0.0, 'b')]
        sampler.write_candidates(candidates, stream, 1)
        lines = stream.getvalue().splitlines()
        shuffled = StringIO('\n'.join([lines[1], '', lines[0]]) + '\n')
        lists = evaluate.read_candidate_lists(shuffled, 3)
        self.assertEqual(lists[0], [])
        self.assertEqual(lists[1], [c.graph for c in candidates])
        self.assertEqual(lists[2], [])

    def test_query_out_of_range(self):
        stream = StringIO()
        write_molecule(propane(), stream, query=4, rank=1)
        stream.seek(0, SEEK_SET)
        with self.assertRaises(ValueError):
            evaluate.read_candidate_lists(stream, 2)

    def test_malformed_records(self):
        for line in ('{"atoms": ["C"], "bonds": []}', '[1, 2]', '{"query": "first"}',
                     'not json'):
            with self.assertRaises(InvalidInputError, msg=line):
                evaluate.read_candidate_lists(StringIO(line + '\n'), 2)

    def test_hash_and_targets_checked(self):
        stream = StringIO()
        sampler.write_candidates([sampler.Candidate(propane(), -0.1, -0.1, 7, 2, 0.0, 'a')],
                                 stream, 0, config_hash='aaaa', targets_sha256='1111')
        lines = stream.getvalue()
        self.assertEqual(len(evaluate.read_candidate_lists(StringIO(lines), 1, 'aaaa',
                                                           '1111')[0]), 1)
        with self.assertRaises(config.ConfigMismatchError):
            evaluate.read_candidate_lists(StringIO(lines), 1, 'bbbb')
        with self.assertRaises(config.ConfigMismatchError):
            evaluate.read_candidate_lists(StringIO(lines), 1, 'aaaa', '2222')


class SweepTest(unittest.TestCase):
    def test_write_sweep_csv(self):
        stream = StringIO()
        sweep_steps.write_sweep_csv([sweep_steps.SweepRow(50, 2.0, 1.0, 0.5, 0.75, 0.8, 1.0),
                                     sweep_steps.SweepRow(10, 0.5, 4.0, 0.25, 0.5, 0.6, 0.75)],
                                    stream)
        self.assertEqual(stream.getvalue().splitlines(),
                         ['steps,seconds,speedup,top1,top10,tanimoto1,retention',
                          '50,2.0000,1.000,0.5000,0.7500,0.8000,1.0000',
                          '10,0.5000,4.000,0.2500,0.5000,0.6000,0.7500'])


class ArtifactHashTest(unittest.TestCase):
    """Two runs, a and b, with different configurations; a is trained and
    sampled."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config_a = write_json(cls.root / 'a.json', TINY_RUN)
        cls.config_b = write_json(cls.root / 'b.json', OTHER_RUN)
        cls.run_a, cls.run_b = cls.root / 'a', cls.root / 'b'
        for run_dir, path in ((cls.run_a, cls.config_a), (cls.run_b, cls.config_b)):
            for split in ('train', 'holdout'):
                run_main(gen_data, '--config', path, '--run-dir', run_dir, '--split', split)
        run_main(train, '--run-dir', cls.run_a)
        cls.checkpoint_a = cls.run_a / train.CHECKPOINT_NAME
        run_main(sample, '--checkpoint', cls.checkpoint_a, '--target', cls.run_a / 'holdout.jsonl')
        cls.candidates_a = cls.run_a / sample.CANDIDATES_NAME
        cls.hash_a = config.config_hash(config.load_config(cls.config_a))
        tc.set_deterministic_eval(True)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def tearDown(self):
        tc.set_deterministic_eval(True)

    def assert_refused(self, module, *argv):
        with self.assertLogs(module.logger, level='ERROR'):
            with self.assertRaises(SystemExit) as cm:
                run_main(module, *argv)
        self.assertEqual(cm.exception.code, config.EXIT_INVALID)

    def test_hashes_differ(self):
        self.assertNotEqual(self.hash_a, config.config_hash(config.load_config(self.config_b)))

    def test_every_artifact_is_stamped(self):
        table = run_main(evaluate, '--candidates', self.candidates_a,
                         '--truth', self.run_a / 'holdout.jsonl')
        self.assertIn('Top-1', table)
        for name in ('corpus.jsonl', 'holdout.jsonl', sample.CANDIDATES_NAME):
            with open(self.run_a / name) as stream:
                records = [json.loads(line) for line in stream]
            self.assertTrue(records, name)
            self.assertTrue(all(r['config_hash'] == self.hash_a for r in records), name)
        report = json.loads((self.run_a / 'candidates-report.json').read_text())
        self.assertEqual(report['config_hash'], self.hash_a)
        manifest = read_manifest(self.run_a)
        self.assertEqual(manifest['config_hash'], self.hash_a)
        names = {entry['name'] for entry in manifest['artifacts']}
        self.assertTrue({'corpus.jsonl', 'holdout.jsonl', train.CHECKPOINT_NAME,
                         train.LOSSES_NAME, sample.CANDIDATES_NAME, 'candidates-report.json',
                         'candidates-report.txt'} <= names)
        for entry in manifest['artifacts']:
            self.assertEqual(entry['config_hash'], self.hash_a, entry['name'])
            self.assertEqual(entry['sha256'], config.file_digest(self.run_a / entry['name']))

    def test_evaluate_refuses_truth_from_other_run(self):
        self.assert_refused(evaluate, '--candidates', self.candidates_a,
                            '--truth', self.run_b / 'holdout.jsonl')
        self.assert_refused(evaluate, '--candidates', self.candidates_a,
                            '--truth', self.run_b / 'holdout.jsonl', '--run-dir', self.run_b)
        self.assertFalse((self.run_b / 'candidates-report.json').exists())

    def test_evaluate_refuses_other_target_file(self):
        self.assert_refused(evaluate, '--candidates', self.candidates_a,
                            '--truth', self.run_a / 'corpus.jsonl')

    def test_evaluate_refuses_other_config(self):
        self.assert_refused(evaluate, '--candidates', self.candidates_a,
                            '--truth', self.run_a / 'holdout.jsonl', '--config', self.config_b)

    def test_sample_refuses_targets_from_other_run(self):
        self.assert_refused(sample, '--checkpoint', self.checkpoint_a,
                            '--target', self.run_b / 'holdout.jsonl', '--name', 'never.jsonl')

    def test_sample_refuses_other_config(self):
        self.assert_refused(sample, '--checkpoint', self.checkpoint_a, '--formula', 'C3',
                            '--config', self.config_b, '--name', 'never.jsonl')

    def test_sample_refuses_other_run_dir(self):
        self.assert_refused(sample, '--checkpoint', self.checkpoint_a, '--formula', 'C3',
                            '--run-dir', self.run_b, '--name', 'never.jsonl')
        self.assertFalse((self.run_b / 'never.jsonl').exists())

    def test_sample_dump_config_reads_checkpoint(self):
        printed = run_main(sample, '--checkpoint', self.checkpoint_a, '--formula', 'C3',
                           '--dump-config')
        self.assertEqual(config.RunConfig.from_dict(json.loads(printed)),
                         config.load_config(self.config_a))

    def test_sample_dump_config_missing_checkpoint(self):
        self.assert_refused(sample, '--checkpoint', self.root / 'missing.dlgd', '--formula', 'C3',
                            '--dump-config')

    def test_formula_candidates_have_no_targets(self):
        run_main(sample, '--checkpoint', self.checkpoint_a, '--formula', 'C3', '--baseline')
        with open(self.run_a / sample.BASELINE_NAME) as stream:
            records = [json.loads(line) for line in stream]
        self.assertTrue(records)
        self.assertTrue(all(r['targets_sha256'] is None for r in records))
        self.assertEqual(read_manifest(self.run_a)['artifacts'][-1]['kind'], 'baseline')

    def test_train_refuses_corpus_from_other_run(self):
        self.assert_refused(train, '--run-dir', self.root / 'c', '--config', self.config_a,
                            '--data', self.run_b / 'corpus.jsonl')

    def test_train_refuses_unstamped_corpus(self):
        path = self.root / 'unstamped.jsonl'
        with open(path, 'w') as stream:
            write_molecule(propane(), stream, id=0)
        self.assert_refused(train, '--run-dir', self.root / 'd', '--config', self.config_a,
                            '--data', path)

    def test_train_refuses_run_dir_of_other_config(self):
        self.assert_refused(train, '--run-dir', self.run_b, '--config', self.config_a,
                            '--data', self.run_a / 'corpus.jsonl')

    def test_bench_writes_into_run_dir(self):
        run_main(bench_attn, '--run-dir', self.run_b, '--sizes', '3,4', '--repeats', '1')
        lines = (self.run_b / bench_attn.BENCH_NAME).read_text().splitlines()
        self.assertEqual(lines[0], 'kernel,n_atoms,m_nodes,median_ms,peak_bytes')
        self.assertEqual(len(lines), 5)
        entry = [e for e in read_manifest(self.run_b)['artifacts']
                 if e['name'] == bench_attn.BENCH_NAME][0]
        self.assertEqual(entry['config_hash'], config.config_hash(config.load_config(
            self.config_b)))
        self.assertEqual((entry['head_dim'], entry['n_features']), (4, 16))

    def test_bench_refuses_other_config(self):
        self.assert_refused(bench_attn, '--run-dir', self.run_b, '--config', self.config_a,
                            '--sizes', '3', '--repeats', '1')

    def test_analyze_writes_into_run_dir(self):
        run_main(analyze_attn, '--checkpoint', self.checkpoint_a,
                 '--data', self.run_a / 'holdout.jsonl', '--limit', '2')
        summary = json.loads((self.run_a / analyze_attn.SUMMARY_NAME).read_text())
        self.assertEqual(summary['config_hash'], self.hash_a)
        with open(self.run_a / analyze_attn.RECORDS_NAME) as stream:
            for line in stream:
                self.assertEqual(json.loads(line)['config_hash'], self.hash_a)
        names = {entry['name'] for entry in read_manifest(self.run_a)['artifacts']}
        self.assertTrue({analyze_attn.RECORDS_NAME, analyze_attn.SUMMARY_NAME} <= names)

    def test_analyze_refuses_other_data(self):
        self.assert_refused(analyze_attn, '--checkpoint', self.checkpoint_a,
                            '--data', self.run_b / 'holdout.jsonl')

    def test_sweep_writes_into_run_dir(self):
        run_main(sweep_steps, '--checkpoint', self.checkpoint_a,
                 '--truth', self.run_a / 'holdout.jsonl', '--steps', '2', '--n-candidates', '2')
        lines = (self.run_a / sweep_steps.SWEEP_NAME).read_text().splitlines()
        self.assertEqual(lines[0], ','.join(sweep_steps.SweepRow._fields))
        self.assertEqual([line.split(',')[0] for line in lines[1:]], ['6', '2'])
        self.assertIn(sweep_steps.SWEEP_NAME,
                      {entry['name'] for entry in read_manifest(self.run_a)['artifacts']})

    def test_sweep_refuses_other_truth(self):
        self.assert_refused(sweep_steps, '--checkpoint', self.checkpoint_a,
                            '--truth', self.run_b / 'holdout.jsonl', '--steps', '2')


class TrainScriptTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config_path = write_json(self.root / 'run.json', TINY_RUN)

    def tearDown(self):
        self.tmp.cleanup()
        tc.set_deterministic_eval(True)

    def test_out_checkpoint_names_run_directory(self):
        run_dir = self.root / 'x'
        run_main(gen_data, '--config', self.config_path, '--run-dir', run_dir)
        run_main(train, '--out-checkpoint', run_dir / 'model.dlgd')
        self.assertTrue((run_dir / 'model.dlgd').exists())
        self.assertFalse((run_dir / train.CHECKPOINT_NAME).exists())
        names = {entry['name'] for entry in read_manifest(run_dir)['artifacts']}
        self.assertTrue({'model.dlgd', train.LOSSES_NAME} <= names)
        trained = train.load_trained(run_dir / 'model.dlgd')
        self.assertEqual(trained.run_config, config.load_config(self.config_path))

    def test_resume_extends_epochs(self):
        run_dir = self.root / 'y'
        run_main(gen_data, '--config', self.config_path, '--run-dir', run_dir)
        run_main(train, '--run-dir', run_dir)
        before = read_manifest(run_dir)['config_hash']
        run_main(train, '--run-dir', run_dir, '--resume', '--epochs', '3')
        header, _ = checkpoint.load_checkpoint(run_dir / train.CHECKPOINT_NAME, before)
        self.assertEqual(header['epoch'], 2)
        self.assertEqual(len(header['epoch_losses']), 3)
        self.assertEqual(len((run_dir / train.LOSSES_NAME).read_text().splitlines()), 4)
        manifest = read_manifest(run_dir)
        self.assertEqual(manifest['config_hash'], before)
        self.assertEqual(manifest['config']['optimizer']['epochs'], 3)

    def test_gen_data_flags_change_identity(self):
        run_dir = self.root / 'z'
        run_main(gen_data, '--config', self.config_path, '--run-dir', run_dir)
        with self.assertLogs(gen_data.logger, level='ERROR'):
            with self.assertRaises(SystemExit) as cm:
                run_main(gen_data, '--run-dir', run_dir, '--split', 'holdout', '--n', '7')
        self.assertEqual(cm.exception.code, config.EXIT_INVALID)
        run_main(gen_data, '--run-dir', run_dir, '--split', 'holdout')
        with open(run_dir / 'holdout.jsonl') as stream:
            records = [json.loads(line) for line in stream]
        self.assertTrue(all(r['split'] == 'holdout' for r in records))
        self.assertLessEqual(len(records), 3)


@unittest.skipUnless(SLOW, 'set DUALLGD_SLOW=1 to run')
class EndToEndTest(unittest.TestCase):
    def tearDown(self):
        tc.set_deterministic_eval(True)

    def test_generate_train_sample_evaluate(self):
        run_config = tiny_config()
        corpus = StringIO()
        for index, graph in gen_data.generate_corpus(run_config.data):
            write_molecule(graph, corpus, id=index)
        corpus.seek(0, SEEK_SET)
        graphs = list(read_molecules(corpus))
        result = train.train_model(run_config, graphs)
        trained = train.TrainedModel(run_config, result.model, result.params, {})

        truths = graphs[:3]
        queries = sample.queries_from_targets(truths, run_config)
        candidate_lists = []
        for query in queries:
            candidates, evaluations = sample.sample_query(trained, query, run_config.sample)
            self.assertEqual(evaluations, 3 * 2)
            for c in candidates:
                self.assertEqual(sorted(c.graph.atom_types), sorted(query.atom_types))
            candidate_lists.append([c.graph for c in candidates])

        report = metrics.evaluate(truths, candidate_lists, (1, 10),
                                  n_bits=run_config.fingerprint.n_bits)
        self.assertEqual(report.empty_queries, [])
        self.assertLessEqual(report.accuracy[1], report.accuracy[10])
        self.assertTrue(0.0 <= report.tanimoto[1] <= 1.0)

        rows = sweep_steps.sweep(trained, truths, [2, 3], 3, 0)
        self.assertEqual([row.steps for row in rows], [6, 2, 3])
        self.assertEqual(rows[0].speedup, 1.0)
        for row in rows:
            self.assertTrue(0.0 <= row.top1 <= row.top10 <= 1.0)


@unittest.skipUnless(SLOW, 'set DUALLGD_SLOW=1 to run')
class DeskScaleTest(unittest.TestCase):
    """The default configuration: 500 molecules of at most 7 heavy atoms,
    T=50, 20 epochs.  Takes tens of minutes."""

    @classmethod
    def setUpClass(cls):
        cls.run_config = config.RunConfig().replace('sample', n_candidates=10)
        graphs = [graph for _, graph in gen_data.generate_corpus(cls.run_config.data)]
        cls.result = train.train_model(cls.run_config, graphs)
        cls.trained = train.TrainedModel(cls.run_config, cls.result.model, cls.result.params, {})
        cls.truths = graphs[:50]
        tc.set_deterministic_eval(True)

    def test_corpus_shape(self):
        data = self.run_config.data
        self.assertEqual((data.n_molecules, data.max_atoms), (500, 7))
        self.assertEqual(self.trained.model.T, 50)
        self.assertEqual(len(self.result.epoch_losses), 20)

    def test_loss_halves(self):
        initial = float(np.mean(self.result.step_losses[:10]))
        self.assertLess(self.result.epoch_losses[-1], 0.5 * initial)

    def test_beats_marginal_baseline_and_jumps_keep_quality(self):
        rows = sweep_steps.sweep(self.trained, self.truths, [10], 10, 0)
        full, jumped = rows
        self.assertEqual((full.steps, jumped.steps), (50, 10))
        baseline_lists = []
        for query in sample.queries_from_targets(self.truths, self.run_config):
            candidates, _ = sample.sample_query(self.trained, query, self.run_config.sample,
                                                baseline=True)
            baseline_lists.append([c.graph for c in candidates])
        baseline = metrics.evaluate(self.truths, baseline_lists, (1, 10),
                                    radius=self.run_config.fingerprint.radius,
                                    n_bits=self.run_config.fingerprint.n_bits)
        self.assertGreater(full.top10, 0.0)
        self.assertGreaterEqual(full.top10, 5 * baseline.accuracy[10])
        self.assertGreater(full.tanimoto1, baseline.tanimoto[1])
        self.assertGreaterEqual(jumped.retention, 0.8)
