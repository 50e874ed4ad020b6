import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from odor.management.commands._base import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, exit_code_for
from odor.management.commands.eval import Command as EvalCommand
from odor.management.commands.predict import Command as PredictCommand
from odor.services.exceptions import (
    CheckpointError,
    ConfigError,
    GradientError,
    NumericError,
    OdorError,
    ShapeError,
    SmilesParseError,
    VocabularyError,
)

from .factories import labelled_rows, small_config, write_csv


def run(name, *args, **options):
    stdout, stderr = StringIO(), StringIO()
    call_command(name, *args, stdout=stdout, stderr=stderr, **options)
    return stdout.getvalue(), stderr.getvalue()


class ExitCodeTest(SimpleTestCase):

    def test_mapping(self):
        self.assertEqual(exit_code_for(ConfigError('bad')), EXIT_USAGE)
        self.assertEqual(exit_code_for(VocabularyError(['musk'])), EXIT_DATA)
        self.assertEqual(exit_code_for(SmilesParseError('bad')), EXIT_DATA)
        self.assertEqual(exit_code_for(CheckpointError('bad')), EXIT_DATA)
        self.assertEqual(exit_code_for(NumericError('nan')), EXIT_NUMERIC)
        self.assertEqual(exit_code_for(GradientError('tape')), EXIT_NUMERIC)
        self.assertEqual(exit_code_for(ShapeError('matmul', (1, 2), (3, 4))), EXIT_NUMERIC)
        self.assertEqual(exit_code_for(OdorError('other')), EXIT_USAGE)


class CommandTestCase(SimpleTestCase):
    """One tiny training run shared by every command test"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dir = Path(tempfile.mkdtemp())
        cls.rows = labelled_rows(12, seed=3)
        cls.data = write_csv(cls.dir / 'train.csv', cls.rows)
        cls.config = cls.dir / 'run.json'
        cls.config.write_text(json.dumps(small_config()))
        cls.out = cls.dir / 'run'
        cls.train_stdout, _ = run('train', data=str(cls.data), config=str(cls.config), out=str(cls.out), verbosity=2)
        cls.checkpoint = str(cls.out / 'best.ckpt')

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.dir, ignore_errors=True)
        super().tearDownClass()


class TrainCommandTest(CommandTestCase):

    def test_outputs_and_summary(self):
        self.assertIn('✓ Training finished', self.train_stdout)
        self.assertIn('epoch    2', self.train_stdout)
        self.assertIn('Mean AUROC', self.train_stdout)
        for name in ('config.json', 'epochs.jsonl', 'best.ckpt', 'final.ckpt', 'metrics.json'):
            self.assertTrue((self.out / name).exists(), name)

    def test_overrides(self):
        out = self.dir / 'override'
        stdout, _ = run('train', data=str(self.data), config=str(self.config), out=str(out), epochs=1, seed=8)
        self.assertIn('seed 8 for 1 epochs', stdout)
        self.assertEqual(json.loads((out / 'config.json').read_text())['epochs'], 1)
        self.assertNotIn('epoch    1', stdout)

    def test_invalid_config_is_usage_error(self):
        bad = self.dir / 'bad.json'
        bad.write_text(json.dumps({'epochs': 2, 'optimizer': 'sgd'}))
        with self.assertRaises(CommandError) as cm:
            run('train', data=str(self.data), config=str(bad), out=str(self.dir / 'bad'))
        self.assertEqual(cm.exception.returncode, EXIT_USAGE)

    def test_wrongly_typed_config_is_usage_error(self):
        bad = self.dir / 'typed.json'
        bad.write_text(json.dumps({'epochs': '10'}))
        with self.assertRaises(CommandError) as cm:
            run('train', data=str(self.data), config=str(bad), out=str(self.dir / 'typed'))
        self.assertEqual(cm.exception.returncode, EXIT_USAGE)

    def test_missing_dataset_is_data_error(self):
        with self.assertRaises(CommandError) as cm:
            run('train', data=str(self.dir / 'absent.csv'), config=str(self.config), out=str(self.dir / 'x'))
        self.assertEqual(cm.exception.returncode, EXIT_DATA)

    def test_missing_required_option(self):
        with self.assertRaises(CommandError):
            run('train', data=str(self.data))


class EvalCommandTest(CommandTestCase):

    def test_report(self):
        stdout, _ = run('eval', checkpoint=self.checkpoint, data=str(self.data))
        report = json.loads(stdout)
        self.assertEqual(report['num_molecules'], 12)
        self.assertIn('per_label_auroc', report)

    def test_missing_checkpoint(self):
        with self.assertRaises(CommandError) as cm:
            run('eval', checkpoint=str(self.dir / 'absent.ckpt'), data=str(self.data))
        self.assertEqual(cm.exception.returncode, EXIT_DATA)

    def test_exit_status_from_command_line(self):
        argv = ['manage.py', 'eval', '--checkpoint', str(self.dir / 'absent.ckpt'), '--data', str(self.data)]
        with patch('sys.stderr', new_callable=StringIO), self.assertRaises(SystemExit) as cm:
            EvalCommand().run_from_argv(argv)
        self.assertEqual(cm.exception.code, EXIT_DATA)


class PredictCommandTest(CommandTestCase):

    def write_input(self, text):
        path = self.dir / 'input.smi'
        path.write_text(text)
        return str(path)

    def test_json_output(self):
        stdout, stderr = run('predict', checkpoint=self.checkpoint, input=self.write_input('CCO\nC1CC\nOCC\n'))
        results = json.loads(stdout)
        self.assertEqual([r['line'] for r in results], [1, 2, 3])
        self.assertEqual(results[0]['predictions'], results[2]['predictions'])
        self.assertIn('error', results[1])
        self.assertIn('line 2:', stderr)

    def test_text_output_with_top_k(self):
        stdout, _ = run('predict', checkpoint=self.checkpoint, input=self.write_input('CCO\n'),
                        top_k=2, format='text')
        lines = stdout.splitlines()
        self.assertEqual(lines[0], 'CCO')
        self.assertEqual(len(lines), 3)
        self.assertRegex(lines[1], r'^  \S+\s+0\.\d{4}$|^  \S+\s+1\.0000$')

    def test_stdin(self):
        with patch('sys.stdin', StringIO('c1ccccc1O\n')):
            stdout, _ = run('predict', checkpoint=self.checkpoint, input='-', top_k=1)
        (result,) = json.loads(stdout)
        self.assertEqual(result['smiles'], 'c1ccccc1O')
        self.assertEqual(len(result['predictions']), 1)

    def test_invalid_top_k(self):
        with self.assertRaises(CommandError) as cm:
            run('predict', checkpoint=self.checkpoint, input=self.write_input('CCO\n'), top_k=0)
        self.assertEqual(cm.exception.returncode, EXIT_USAGE)

    def test_usage_error_from_command_line(self):
        argv = ['manage.py', 'predict', '--checkpoint', self.checkpoint, '--input', '-', '--top-k', 'many']
        with patch('sys.stderr', new_callable=StringIO) as stderr, self.assertRaises(SystemExit) as cm:
            PredictCommand().run_from_argv(argv)
        self.assertEqual(cm.exception.code, EXIT_USAGE)
        self.assertIn('--top-k', stderr.getvalue())


class FeaturizeCommandTest(CommandTestCase):

    def test_json(self):
        out = self.dir / 'features.json'
        stdout, _ = run('featurize', data=str(self.data), out=str(out), config=str(self.config))
        self.assertIn('✓ Featurized 12 molecules', stdout)
        records = json.loads(out.read_text())
        self.assertEqual(len(records), 12)
        first = records[0]
        self.assertEqual(len(first['node_features']), first['num_atoms'])
        self.assertEqual(len(first['edge_features']), 2 * first['num_bonds'])
        self.assertEqual(len(first['global_features']), 64 + 166 + 64)
        self.assertEqual(first['labels'], list(self.rows[0][1]))

    def test_csv(self):
        out = self.dir / 'features.csv'
        run('featurize', data=str(self.data), out=str(out), format='csv', config=str(self.config))
        frame = pd.read_csv(out)
        self.assertEqual(len(frame), 12)
        self.assertEqual(len(json.loads(frame.loc[0, 'global_features'])), 64 + 166 + 64)
        self.assertEqual(json.loads(frame.loc[0, 'labels']), list(self.rows[0][1]))


class StatsCommandTest(CommandTestCase):

    def test_json_and_text(self):
        data = self.dir / 'stats.csv'
        data.write_text('smiles,labels\nCCO,sweet;alcoholic\nCC=O,pungent;sweet;fruity\nC1CC,green\n')
        stdout, _ = run('stats', data=str(data), format='json')
        stats = json.loads(stdout)
        self.assertEqual(stats['labels_per_molecule'], {'2': 1, '3': 1})
        self.assertEqual(stats['rejected_rows'], 1)

        stdout, _ = run('stats', data=str(data), format='text')
        self.assertIn('molecules: 2', stdout)
        self.assertIn('descriptor', stdout)
