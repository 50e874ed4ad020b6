from odor.services.dataset_service import label_statistics, load_dataset, statistics_tables

from ._base import OdorCommand


class Command(OdorCommand):
    help = 'Labels-per-molecule histogram and per-descriptor support of a dataset'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='CSV with smiles,labels columns')
        parser.add_argument('--format', choices=['json', 'text', 'both'], default='both')

    def run(self, **options):
        dataset = load_dataset(options['data'], require_labels=False)
        stats = label_statistics(dataset.records)
        stats['rejected_rows'] = len(dataset.rejections)

        if options['format'] in ('json', 'both'):
            self.write_json(stats)
        if options['format'] in ('text', 'both'):
            if options['format'] == 'both':
                self.stdout.write('')
            self.stdout.write(statistics_tables(stats))
