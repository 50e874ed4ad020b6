from odor.services.training_service import evaluate

from ._base import OdorCommand


class Command(OdorCommand):
    help = 'Evaluate a checkpoint on a labelled smiles,labels CSV'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint file written by train')
        parser.add_argument('--data', required=True, help='CSV with smiles,labels columns')
        parser.add_argument('--threshold', type=float, default=0.5, help='Decision threshold for F1')
        parser.add_argument('--batch-size', type=int, default=32)

    def run(self, **options):
        report = evaluate(
            options['checkpoint'],
            options['data'],
            batch_size=options['batch_size'],
            threshold=options['threshold'],
        )
        self.write_json(report.to_dict())
