from odor.services.dataset_service import read_smiles_lines
from odor.services.exceptions import ConfigError
from odor.services.training_service import predict

from ._base import OdorCommand


class Command(OdorCommand):
    help = 'Predict odor descriptor probabilities for SMILES read from a file or stdin'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint file written by train')
        parser.add_argument('--input', required=True, help='File with one SMILES per line, or - for stdin')
        parser.add_argument('--top-k', type=int, help='Keep only the K most probable descriptors')
        parser.add_argument('--format', choices=['json', 'text'], default='json')
        parser.add_argument('--batch-size', type=int, default=32)

    def run(self, **options):
        top_k = options['top_k']
        if top_k is not None and top_k < 1:
            raise ConfigError(f"--top-k must be a positive integer, got {top_k}")

        lines = read_smiles_lines(options['input'])
        predictions = predict(options['checkpoint'], lines, top_k=top_k, batch_size=options['batch_size'])

        # Failed lines go to stderr; the rest still print
        for prediction in predictions:
            if prediction.error:
                self.stderr.write(f"line {prediction.line}: {prediction.error}")

        if options['format'] == 'json':
            self.write_json([p.to_dict() for p in predictions])
            return

        for prediction in predictions:
            if prediction.error:
                continue
            self.stdout.write(prediction.smiles)
            for name, probability in prediction.probabilities:
                self.stdout.write(f"  {name:<24} {probability:.4f}")
