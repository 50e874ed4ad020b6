import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings, tag

from odor.services.checkpoint_service import load_checkpoint
from odor.services.exceptions import ConfigError, DatasetError, VocabularyError
from odor.services.gat_model import ModelParams
from odor.services.training_service import TrainConfig, evaluate, predict, train

from .factories import labelled_rows, small_config, write_csv


class TrainConfigTest(SimpleTestCase):

    def test_defaults(self):
        config = TrainConfig.from_dict({'seed': 0})
        self.assertEqual((config.epochs, config.batch_size, config.learning_rate), (100, 32, 1e-3))
        self.assertEqual(config.split_fraction, 0.8)
        self.assertEqual(config.model.heads, 4)
        self.assertEqual(config.features.global_dim, 4262)

    @override_settings(ODOR_DEFAULT_SEED=9)
    def test_seed_defaults_to_setting(self):
        self.assertEqual(TrainConfig.from_dict({}).seed, 9)
        self.assertEqual(TrainConfig.from_dict({'seed': 2}).seed, 2)

    def test_round_trip(self):
        config = TrainConfig.from_dict(small_config(loss={'lambda': 0.0, 'mode': 'focal'}))
        self.assertEqual(TrainConfig.from_dict(config.to_dict()), config)

    def test_invalid(self):
        for bad in ({'epochs': -1}, {'batch_size': 0}, {'learning_rate': 0}, {'split_fraction': 1.0},
                    {'eval_every': 0}, {'threshold': 1.0}, {'optimizer': 'sgd'}, {'model': {'heads': 0}},
                    {'features': {'morgan_bits': 10}}, {'loss': {'gamma': -2}}):
            with self.subTest(config=bad):
                with self.assertRaises(ConfigError):
                    TrainConfig.from_dict(bad)

    def test_wrongly_typed_values(self):
        for bad in ({'epochs': '10'}, {'epochs': 2.5}, {'batch_size': True}, {'learning_rate': '1e-3'},
                    {'seed': None}, {'model': [1, 2]}, {'loss': 'focal'}, {'model': {'heads': 'two'}},
                    {'loss': {'gamma': 'high'}}):
            with self.subTest(config=bad):
                with self.assertRaises(ConfigError):
                    TrainConfig.from_dict(bad)
        self.assertEqual(TrainConfig.from_dict({'learning_rate': 1}).learning_rate, 1)

    def test_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text(json.dumps(small_config()))
            self.assertEqual(TrainConfig.from_file(path).epochs, 2)
            path.write_text('{"epochs": ')
            with self.assertRaises(ConfigError):
                TrainConfig.from_file(path)
            path.write_text('[1, 2]')
            with self.assertRaises(ConfigError):
                TrainConfig.from_file(path)
            path.write_text('{"epochs": "10"}')
            with self.assertRaises(ConfigError):
                TrainConfig.from_file(path)
            with self.assertRaises(ConfigError):
                TrainConfig.from_file(Path(tmp) / 'absent.json')


class TrainingRunMixin:

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.rows = labelled_rows(20, seed=0)
        self.data = write_csv(self.dir / 'train.csv', self.rows)

    def run_training(self, name='run', **overrides):
        config = TrainConfig.from_dict(small_config(**overrides))
        return train(config, self.data, self.dir / name)


class TrainPipelineTest(TrainingRunMixin, SimpleTestCase):

    def test_outputs(self):
        seen = []
        config = TrainConfig.from_dict(small_config())
        result = train(config, self.data, self.dir / 'run', on_epoch=seen.append)
        out = self.dir / 'run'
        for name in ('config.json', 'epochs.jsonl', 'best.ckpt', 'final.ckpt', 'metrics.json'):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual((result.num_train, result.num_test), (16, 4))
        self.assertEqual([entry['epoch'] for entry in seen], [1, 2])
        self.assertEqual(result.history, seen)
        self.assertIn('test_mean_auroc', seen[0])
        self.assertLessEqual(seen[0]['alpha1'], seen[1]['alpha1'])

        written = json.loads((out / 'config.json').read_text())
        self.assertEqual(written['model']['node_dim'], config.features.atom_dim)
        self.assertEqual(written['seed'], 3)
        metrics = json.loads((out / 'metrics.json').read_text())
        self.assertEqual(metrics['num_train'], 16)
        self.assertIn('mean_auroc', metrics['test'])

        checkpoint = load_checkpoint(result.final_checkpoint)
        self.assertEqual(checkpoint.epoch, 2)
        self.assertEqual(checkpoint.vocabulary.names, sorted({l for _, labels in self.rows for l in labels}))

    def test_deterministic(self):
        self.run_training('first')
        self.run_training('second')
        for name in ('epochs.jsonl', 'final.ckpt', 'best.ckpt'):
            self.assertEqual(
                (self.dir / 'first' / name).read_bytes(), (self.dir / 'second' / name).read_bytes(), name
            )

    def test_seed_changes_run(self):
        self.run_training('first')
        self.run_training('second', seed=4)
        self.assertNotEqual(
            (self.dir / 'first' / 'final.ckpt').read_bytes(), (self.dir / 'second' / 'final.ckpt').read_bytes()
        )

    def test_zero_epochs_saves_initialisation(self):
        result = self.run_training(epochs=0)
        self.assertEqual(result.history, [])
        self.assertEqual((self.dir / 'run' / 'epochs.jsonl').read_text(), '')
        checkpoint = load_checkpoint(result.final_checkpoint)
        init_seq = np.random.SeedSequence(3).spawn(4)[1]
        expected = ModelParams.initialize(checkpoint.model_config, np.random.default_rng(init_seq))
        for name, values in expected.arrays().items():
            np.testing.assert_array_equal(checkpoint.params.arrays()[name], values, err_msg=name)
        self.assertEqual(result.best_epoch, 0)
        self.assertEqual(result.test_report.num_molecules, 4)

    def test_dropout_run(self):
        result = self.run_training(model={'heads': 2, 'hidden_dim': 4, 'hidden_layers': 1, 'final_dim': 4,
                                          'global_hidden': 4, 'fusion_hidden': 4, 'dropout': 0.3})
        self.assertTrue(all(np.isfinite(entry['train_loss']) for entry in result.history))

    def test_empty_dataset(self):
        empty = write_csv(self.dir / 'empty.csv', [])
        with self.assertRaises(DatasetError):
            train(TrainConfig.from_dict(small_config()), empty, self.dir / 'run')


class EvaluateAndPredictTest(TrainingRunMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.result = self.run_training()
        self.checkpoint = self.result.best_checkpoint

    def test_evaluate(self):
        report = evaluate(self.checkpoint, self.data)
        self.assertEqual(report.num_molecules, 20)
        self.assertIsNotNone(report.mean_auroc)
        self.assertTrue(0.0 <= report.macro_f1 <= 1.0)

    def test_evaluate_empty_dataset(self):
        empty = write_csv(self.dir / 'empty.csv', [])
        with self.assertRaises(DatasetError):
            evaluate(self.checkpoint, empty)

    def test_evaluate_unknown_label(self):
        other = write_csv(self.dir / 'other.csv', [('CCO', [self.rows[0][1][0], 'smoky'])])
        with self.assertRaises(VocabularyError) as cm:
            evaluate(self.checkpoint, other)
        self.assertEqual(cm.exception.unknown, ['smoky'])

    def test_predict(self):
        predictions = predict(self.checkpoint, ['CCO', 'OCC', '', 'C1CC', 'CCO'], top_k=None)
        self.assertEqual([p.line for p in predictions], [1, 2, 3, 4, 5])
        first = predictions[0].probabilities
        self.assertEqual(len(first), len(load_checkpoint(self.checkpoint).vocabulary))
        self.assertTrue(all(0.0 <= p <= 1.0 for _, p in first))
        self.assertEqual([p for _, p in first], sorted((p for _, p in first), reverse=True))
        self.assertEqual(predictions[1].probabilities, first)
        self.assertEqual(predictions[4].probabilities, first)
        self.assertEqual(predictions[2].error, 'empty input line')
        self.assertIn('ring closure', predictions[3].error)
        self.assertEqual(predictions[3].to_dict(), {'line': 4, 'smiles': 'C1CC', 'error': predictions[3].error})

    def test_predict_top_k(self):
        (prediction,) = predict(self.checkpoint, ['c1ccccc1O'], top_k=2)
        self.assertEqual(len(prediction.probabilities), 2)
        self.assertEqual(set(prediction.to_dict()), {'line', 'smiles', 'predictions'})


@tag('slow')
class LearningTest(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def config(self, **overrides):
        return TrainConfig.from_dict({
            'batch_size': 8,
            'seed': 1,
            'learning_rate': 5e-3,
            'eval_every': 50,
            'loss': {'lambda': 0.0},
            'features': {'morgan_bits': 256, 'topo_bits': 256},
            'model': {'heads': 2, 'hidden_dim': 16, 'hidden_layers': 1, 'final_dim': 32,
                      'global_hidden': 32, 'fusion_hidden': 64},
            **overrides,
        })

    def test_overfits_small_synthetic_set(self):
        data = write_csv(self.dir / 'small.csv', labelled_rows(32, seed=5))
        result = train(self.config(epochs=500), data, self.dir / 'overfit')
        self.assertGreaterEqual(result.train_report.macro_f1, 0.95)
        self.assertLess(result.history[-1]['train_loss'], result.history[0]['train_loss'])

    def test_generalises_rule_labels(self):
        data = write_csv(self.dir / 'rules.csv', labelled_rows(200, seed=6))
        result = train(self.config(epochs=200, batch_size=16), data, self.dir / 'rules')
        self.assertGreaterEqual(result.test_report.mean_auroc, 0.95)
        self.assertGreaterEqual(result.test_report.macro_f1, 0.8)
