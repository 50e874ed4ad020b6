from odor.services.training_service import TrainConfig, train

from ._base import OdorCommand


class Command(OdorCommand):
    help = 'Train the odor model on a smiles,labels CSV'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='Training CSV with smiles,labels columns')
        parser.add_argument('--config', help='JSON run configuration (defaults used when omitted)')
        parser.add_argument('--out', required=True, help='Output directory for checkpoints and logs')
        parser.add_argument('--seed', type=int, help='Override the configured seed')
        parser.add_argument('--epochs', type=int, help='Override the configured number of epochs')

    def run(self, **options):
        config = TrainConfig.from_file(options['config']) if options['config'] else TrainConfig.from_dict({})
        overrides = {key: options[key] for key in ('seed', 'epochs') if options.get(key) is not None}
        if overrides:
            config = TrainConfig.from_dict({**config.to_dict(), **overrides})

        verbosity = options.get('verbosity', 1)

        def report_epoch(entry):
            if verbosity >= 2:
                self.stdout.write(
                    f"epoch {entry['epoch']:>4}  alpha1 {entry['alpha1']:.4f}  loss {entry['train_loss']:.6f}"
                )

        self.stdout.write(f"Training with seed {config.seed} for {config.epochs} epochs...")
        result = train(config, options['data'], options['out'], on_epoch=report_epoch)

        test = result.test_report
        auroc = f"{test.mean_auroc:.4f}" if test.mean_auroc is not None else 'n/a'
        self.stdout.write(self.style.SUCCESS(
            f"\n✓ Training finished: {result.num_train} train / {result.num_test} test molecules"
        ))
        self.stdout.write(f"  Mean AUROC: {auroc}")
        self.stdout.write(f"  Macro F1:   {test.macro_f1:.4f}")
        self.stdout.write(f"  Best epoch: {result.best_epoch}")
        self.stdout.write(f"  Checkpoint: {result.best_checkpoint}")
