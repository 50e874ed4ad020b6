"""
Training, evaluation and prediction pipelines over featurized datasets
"""
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from django.conf import settings

from . import autodiff as ad
from .checkpoint_service import Checkpoint, load_checkpoint, save_checkpoint
from .dataset_service import DatasetRecord, LabelVocabulary, load_dataset, split_dataset
from .exceptions import ConfigError, DatasetError, NumericError, SmilesParseError
from .feature_service import FeatureConfig, FeatureSet, Featurizer, featurize_molecule
from .gat_model import ModelConfig, ModelParams, collate, forward, predict_proba
from .loss_service import LossConfig, MetricReport, alpha1, evaluate_scores, total_loss

logger = logging.getLogger(__name__)

EpochCallback = Callable[[Dict[str, Any]], None]
INTEGER_FIELDS = {'epochs', 'batch_size', 'seed', 'eval_every'}
NUMBER_FIELDS = {'learning_rate', 'split_fraction', 'threshold'}
SECTION_FIELDS = {'loss', 'features', 'model'}


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    split_fraction: float = 0.8
    eval_every: int = 10
    threshold: float = 0.5
    loss: LossConfig = field(default_factory=LossConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'TrainConfig':
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        for name, value in data.items():
            if name in INTEGER_FIELDS and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if name in NUMBER_FIELDS and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"{name} must be a number, got {value!r}")
            if name in SECTION_FIELDS and value is not None and not isinstance(value, dict):
                raise ConfigError(f"{name} must be an object, got {value!r}")
        try:
            data['loss'] = LossConfig.from_dict(data.get('loss'))
            data['features'] = FeatureConfig.from_dict(data.get('features'))
            data['model'] = ModelConfig.from_dict(data.get('model'))
            if 'seed' not in data:
                data['seed'] = settings.ODOR_DEFAULT_SEED
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config value: {e}") from e

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'TrainConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'seed': self.seed,
            'learning_rate': self.learning_rate,
            'split_fraction': self.split_fraction,
            'eval_every': self.eval_every,
            'threshold': self.threshold,
            'loss': self.loss.to_dict(),
            'features': self.features.to_dict(),
            'model': self.model.to_dict(),
        }


@dataclass
class TrainingResult:
    output_dir: Path
    final_checkpoint: Path
    best_checkpoint: Path
    history: List[Dict[str, Any]]
    train_report: MetricReport
    test_report: MetricReport
    best_epoch: int
    num_train: int
    num_test: int

    def summary(self) -> Dict[str, Any]:
        return {
            'output_dir': str(self.output_dir),
            'final_checkpoint': str(self.final_checkpoint),
            'best_checkpoint': str(self.best_checkpoint),
            'best_epoch': self.best_epoch,
            'num_train': self.num_train,
            'num_test': self.num_test,
            'train': self.train_report.to_dict(),
            'test': self.test_report.to_dict(),
        }


def featurize_records(records: Sequence[DatasetRecord], config: FeatureConfig) -> List[FeatureSet]:
    return [featurize_molecule(r.graph, config) for r in records]


def score_features(feature_sets: Sequence[FeatureSet], params: ModelParams, batch_size: int = 32) -> np.ndarray:
    """Inference-mode probabilities for already featurized molecules"""
    if not feature_sets:
        return np.zeros((0, params.config.num_labels))
    chunks = [
        predict_proba(collate(feature_sets[start:start + batch_size]), params)
        for start in range(0, len(feature_sets), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


class Trainer:
    """Minibatch training of one model on one dataset split.

    Four independent random streams derive from the run seed: split,
    initialisation, epoch shuffling and dropout.
    """

    def __init__(self, config: TrainConfig, output_dir: Union[str, Path], on_epoch: Optional[EpochCallback] = None):
        self.config = config
        self.output_dir = Path(output_dir)
        self.on_epoch = on_epoch
        split_seq, init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(4)
        self.split_rng = np.random.default_rng(split_seq)
        self.init_rng = np.random.default_rng(init_seq)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.dropout_rng = np.random.default_rng(dropout_seq)

    def run(self, records: Sequence[DatasetRecord]) -> TrainingResult:
        config = self.config
        if not records:
            raise DatasetError("No valid records to train on")
        vocabulary = LabelVocabulary.build(records)
        train_records, test_records = split_dataset(records, config.split_fraction, self.split_rng)
        logger.info(
            f"Training on {len(train_records)} molecules, testing on {len(test_records)}, "
            f"{len(vocabulary)} labels, seed {config.seed}"
        )

        featurizer = Featurizer(config.features)
        train_features = featurize_records(train_records, config.features)
        test_features = featurize_records(test_records, config.features)
        train_labels = vocabulary.encode_all(train_records)
        test_labels = vocabulary.encode_all(test_records)

        model_config = replace(
            config.model,
            node_dim=featurizer.atom_dim,
            edge_dim=featurizer.edge_dim,
            global_dim=featurizer.global_dim,
            num_labels=len(vocabulary),
        )
        params = ModelParams.initialize(model_config, self.init_rng)
        optimizer = ad.Adam(dict(params.items()), lr=config.learning_rate)

        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / 'config.json').write_text(
            json.dumps({**config.to_dict(), 'model': model_config.to_dict()}, indent=2, sort_keys=True)
        )
        final_path = self.output_dir / 'final.ckpt'
        best_path = self.output_dir / 'best.ckpt'

        def snapshot(epoch: int, metrics: Optional[Dict[str, Any]] = None) -> Checkpoint:
            return Checkpoint(model_config, config.features, vocabulary, params, epoch, optimizer.state, metrics or {})

        history: List[Dict[str, Any]] = []
        best_auroc: Optional[float] = None
        best_epoch = 0
        with open(self.output_dir / 'epochs.jsonl', 'w', encoding='utf-8') as log_file:
            for epoch in range(config.epochs):
                entry = self._train_epoch(epoch, params, optimizer, train_features, train_labels)
                if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
                    report = evaluate_scores(
                        score_features(test_features, params, config.batch_size), test_labels,
                        vocabulary.names, config.threshold,
                    )
                    entry['test_mean_auroc'] = report.mean_auroc
                    entry['test_macro_f1'] = report.macro_f1
                    if report.mean_auroc is not None and (best_auroc is None or report.mean_auroc > best_auroc):
                        best_auroc, best_epoch = report.mean_auroc, epoch + 1
                        save_checkpoint(snapshot(epoch + 1, report.to_dict()), best_path)
                log_file.write(json.dumps(entry, sort_keys=True) + '\n')
                log_file.flush()
                history.append(entry)
                logger.info(
                    f"epoch {entry['epoch']}/{config.epochs} alpha1={entry['alpha1']:.4f} "
                    f"train_loss={entry['train_loss']:.6f}"
                    + (f" test_mean_auroc={entry['test_mean_auroc']}" if 'test_mean_auroc' in entry else '')
                )
                if self.on_epoch:
                    self.on_epoch(entry)

        train_report = evaluate_scores(
            score_features(train_features, params, config.batch_size), train_labels, vocabulary.names, config.threshold
        )
        test_report = evaluate_scores(
            score_features(test_features, params, config.batch_size), test_labels, vocabulary.names, config.threshold
        )
        save_checkpoint(snapshot(config.epochs, test_report.to_dict()), final_path)
        if best_auroc is None:
            save_checkpoint(snapshot(config.epochs, test_report.to_dict()), best_path)
            best_epoch = config.epochs

        result = TrainingResult(
            output_dir=self.output_dir,
            final_checkpoint=final_path,
            best_checkpoint=best_path,
            history=history,
            train_report=train_report,
            test_report=test_report,
            best_epoch=best_epoch,
            num_train=len(train_records),
            num_test=len(test_records),
        )
        (self.output_dir / 'metrics.json').write_text(json.dumps(result.summary(), indent=2, sort_keys=True))
        return result

    def _train_epoch(
        self,
        epoch: int,
        params: ModelParams,
        optimizer: ad.Adam,
        features: Sequence[FeatureSet],
        labels: np.ndarray,
    ) -> Dict[str, Any]:
        config = self.config
        order = self.shuffle_rng.permutation(len(features))
        total, count = 0.0, 0
        for batch_number, start in enumerate(range(0, len(order), config.batch_size)):
            members = order[start:start + config.batch_size]
            batch = collate([features[i] for i in members], labels[members])
            with ad.Tape():
                logits = forward(batch, params, training=True, rng=self.dropout_rng)
                loss = total_loss(logits, batch.labels, params, epoch, config.loss, config.epochs)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"Non-finite loss at epoch {epoch + 1}, batch {batch_number} "
                        f"(molecules: {', '.join(batch.smiles)})"
                    )
                ad.backward(loss, params)
            optimizer.step()
            total += value * len(members)
            count += len(members)
        return {
            'epoch': epoch + 1,
            'alpha1': alpha1(epoch, config.loss, config.epochs),
            'train_loss': total / max(count, 1),
        }


def train(
    config: TrainConfig,
    data_path: Union[str, Path],
    output_dir: Union[str, Path],
    on_epoch: Optional[EpochCallback] = None,
) -> TrainingResult:
    """Load ``data_path``, train with ``config`` and write checkpoints and logs to ``output_dir``"""
    dataset = load_dataset(data_path, require_labels=True)
    return Trainer(config, output_dir, on_epoch).run(dataset.records)


def evaluate(checkpoint_path: Union[str, Path], data_path: Union[str, Path], batch_size: int = 32,
             threshold: float = 0.5) -> MetricReport:
    """Inference-mode metrics of a checkpoint on a labelled CSV"""
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = load_dataset(data_path, require_labels=False)
    if not dataset.records:
        raise DatasetError(f"No valid records to evaluate in {data_path}")
    checkpoint.vocabulary.check(dataset.records)
    features = featurize_records(dataset.records, checkpoint.feature_config)
    scores = score_features(features, checkpoint.params, batch_size)
    labels = checkpoint.vocabulary.encode_all(dataset.records)
    return evaluate_scores(scores, labels, checkpoint.vocabulary.names, threshold)


@dataclass
class Prediction:
    line: int
    smiles: str
    probabilities: List[Tuple[str, float]] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {'line': self.line, 'smiles': self.smiles}
        if self.error:
            data['error'] = self.error
        else:
            data['predictions'] = [{'label': name, 'probability': p} for name, p in self.probabilities]
        return data


def predict(
    checkpoint: Union[Checkpoint, str, Path],
    smiles: Sequence[str],
    top_k: Optional[int] = None,
    batch_size: int = 32,
) -> List[Prediction]:
    """Descending label probabilities per input line; unparsable lines carry an error"""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    featurizer = Featurizer(checkpoint.feature_config)
    predictions: List[Prediction] = []
    pending: List[Tuple[Prediction, FeatureSet]] = []
    for line, text in enumerate(smiles, 1):
        text = text.strip()
        prediction = Prediction(line, text)
        predictions.append(prediction)
        if not text:
            prediction.error = "empty input line"
            continue
        try:
            pending.append((prediction, featurizer.featurize(text)))
        except SmilesParseError as e:
            prediction.error = str(e)
            logger.warning(f"Line {line} ({text!r}) skipped: {e}")

    scores = score_features([fs for _, fs in pending], checkpoint.params, batch_size)
    names = checkpoint.vocabulary.names
    for (prediction, _), row in zip(pending, scores):
        order = sorted(range(len(names)), key=lambda k: (-row[k], names[k]))
        if top_k is not None:
            order = order[:top_k]
        prediction.probabilities = [(names[k], float(row[k])) for k in order]
    return predictions
