import json
from pathlib import Path

import pandas as pd

from odor.services.dataset_service import load_dataset
from odor.services.feature_service import FeatureConfig, featurize_molecule
from odor.services.training_service import TrainConfig

from ._base import OdorCommand

# Array-valued columns are stored as JSON text in CSV output
ARRAY_COLUMNS = ('node_features', 'edge_index', 'edge_features', 'global_features', 'functional_groups')


class Command(OdorCommand):
    help = 'Write per-molecule feature matrices for every valid row of a CSV'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='CSV with smiles,labels columns')
        parser.add_argument('--out', required=True, help='Output file')
        parser.add_argument('--format', choices=['csv', 'json'], default='json')
        parser.add_argument('--config', help='JSON feature configuration (the "features" block of a run config)')

    def run(self, **options):
        config = FeatureConfig()
        if options['config']:
            config = TrainConfig.from_file(options['config']).features

        dataset = load_dataset(options['data'], require_labels=False)
        records = []
        for record in dataset.records:
            entry = featurize_molecule(record.graph, config).to_record(record.graph.num_bonds)
            entry['labels'] = list(record.labels)
            records.append(entry)

        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        if options['format'] == 'json':
            out.write_text(json.dumps(records), encoding='utf-8')
        else:
            frame = pd.DataFrame(records, columns=['smiles', 'num_atoms', 'num_bonds', *ARRAY_COLUMNS, 'labels'])
            for column in (*ARRAY_COLUMNS, 'labels'):
                frame[column] = frame[column].map(json.dumps)
            frame.to_csv(out, index=False)

        self.stdout.write(self.style.SUCCESS(
            f"✓ Featurized {len(records)} molecules to {out} ({len(dataset.rejections)} rows rejected)"
        ))
