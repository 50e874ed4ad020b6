"""
Training losses (stable BCE, focal, epoch-scheduled blend, L2) and
evaluation metrics (per-label AUROC, F1 variants)
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import f1_score

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

LOSS_MODES = ('adaptive', 'bce', 'focal')
FOCAL_FLOOR = 1e-12


@dataclass
class LossConfig:
    """Loss hyperparameters.

    ``alpha1_schedule`` is (start, end, ramp_epochs); a ramp of None spans
    the whole training run.
    """
    alpha: float = 0.5
    gamma: float = 2.0
    l2_lambda: float = 1e-5
    alpha1_schedule: tuple = (0.1, 0.9, None)
    mode: str = 'adaptive'

    def __post_init__(self):
        self.alpha1_schedule = tuple(self.alpha1_schedule)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.l2_lambda < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.l2_lambda}")
        if len(self.alpha1_schedule) != 3:
            raise ConfigError("alpha1_schedule must be [start, end, ramp_epochs]")
        start, end, ramp = self.alpha1_schedule
        if not (0.0 <= start <= 1.0 and 0.0 <= end <= 1.0):
            raise ConfigError(f"alpha1_schedule endpoints must lie in [0, 1], got {start}, {end}")
        if end < start:
            raise ConfigError("alpha1_schedule must be nondecreasing (end >= start)")
        if ramp is not None and ramp < 0:
            raise ConfigError(f"alpha1_schedule ramp must be >= 0, got {ramp}")
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'LossConfig':
        data = dict(data or {})
        if 'lambda' in data:
            data['l2_lambda'] = data.pop('lambda')
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown loss config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['lambda'] = data.pop('l2_lambda')
        data['alpha1_schedule'] = list(self.alpha1_schedule)
        return data


def alpha1(epoch: int, config: LossConfig, total_epochs: Optional[int] = None) -> float:
    """Focal-term weight at ``epoch``: linear ramp from start to end, then held"""
    start, end, ramp = config.alpha1_schedule
    if ramp is None:
        ramp = total_epochs
    if not ramp:
        return float(end)
    return float(start + (end - start) * min(max(epoch, 0) / ramp, 1.0))


def bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy in the stable logit form"""
    return ad.bce_with_logits(logits, targets)


def _focal_from_bce(ce: Tensor, alpha: float, gamma: float) -> Tensor:
    # 1 - p_t underflows to 0 at saturated logits, where 0 ** (gamma - 1) is inf for gamma < 1
    one_minus_pt = ad.clamp_min(-ad.expm1(-ce), FOCAL_FLOOR)
    return alpha * ad.power(one_minus_pt, gamma) * ce


def focal(logits: Tensor, targets: np.ndarray, alpha: float = 0.5, gamma: float = 2.0) -> Tensor:
    """alpha * (1 - p_t)^gamma * bce, with p_t = exp(-bce)"""
    return _focal_from_bce(bce(logits, targets), alpha, gamma)


def adaptive_loss(
    logits: Tensor,
    targets: np.ndarray,
    epoch: int,
    config: Optional[LossConfig] = None,
    total_epochs: Optional[int] = None,
) -> Tensor:
    """Mean over all (molecule, label) elements of the configured loss"""
    config = config or LossConfig()
    if config.mode == 'bce':
        return ad.mean(bce(logits, targets))
    if config.mode == 'focal':
        return ad.mean(focal(logits, targets, config.alpha, config.gamma))
    weight = alpha1(epoch, config, total_epochs)
    ce = bce(logits, targets)
    fl = _focal_from_bce(ce, config.alpha, config.gamma)
    return ad.mean(weight * fl + (1.0 - weight) * ce)


def l2_penalty(params: Union[Iterable[Tensor], Any], l2_lambda: float = 1e-5) -> Tensor:
    """lambda * sum of squared weight entries; accepts ModelParams or tensors"""
    tensors = params.decayed() if hasattr(params, 'decayed') else list(params)
    total = ad.as_tensor(0.0)
    for tensor in tensors:
        total = total + ad.sum(tensor * tensor)
    return l2_lambda * total


def total_loss(logits: Tensor, targets: np.ndarray, params, epoch: int,
               config: Optional[LossConfig] = None, total_epochs: Optional[int] = None) -> Tensor:
    config = config or LossConfig()
    return adaptive_loss(logits, targets, epoch, config, total_epochs) + l2_penalty(params, config.l2_lambda)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Rank-statistic AUROC with ties counted as one half.

    Returns None when the labels hold no positives or no negatives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        return None
    ranks = rankdata(scores)
    rank_sum = ranks[labels].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def _per_label_f1(labels: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    # sklearn reads a single column as a binary target, not a multilabel one
    if labels.shape[1] == 1:
        return np.array([f1_score(labels[:, 0], predictions[:, 0], zero_division=0)])
    return np.asarray(f1_score(labels, predictions, average=None, zero_division=0))


def f1_macro(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Mean per-label F1 over labels with at least one positive"""
    scores, labels = np.atleast_2d(scores), np.atleast_2d(labels).astype(int)
    present = labels.sum(axis=0) > 0
    if not present.any():
        return 0.0
    predictions = (scores >= threshold).astype(int)
    return float(np.mean(_per_label_f1(labels, predictions)[present]))


def f1_samples(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Per-molecule F1 averaged over molecules"""
    if labels.shape[1] == 1:
        hits = (labels[:, 0] == 1) & (predictions[:, 0] == 1)
        return float(hits.mean()) if labels.shape[0] else 0.0
    return float(f1_score(labels, predictions, average='samples', zero_division=0))


@dataclass
class MetricReport:
    per_label_auroc: Dict[str, float] = field(default_factory=dict)
    mean_auroc: Optional[float] = None
    macro_f1: float = 0.0
    micro_f1: float = 0.0
    samples_f1: float = 0.0
    support: Dict[str, int] = field(default_factory=dict)
    skipped_labels: List[str] = field(default_factory=list)
    num_molecules: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def evaluate_scores(
    scores: np.ndarray,
    labels: np.ndarray,
    label_names: Sequence[str],
    threshold: float = 0.5,
) -> MetricReport:
    """AUROC and F1 summary of predicted probabilities against multi-hot labels"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    report = MetricReport(num_molecules=int(labels.shape[0]))
    for k, name in enumerate(label_names):
        report.support[name] = int(labels[:, k].sum())
        value = auroc(scores[:, k], labels[:, k])
        if value is None:
            report.skipped_labels.append(name)
        else:
            report.per_label_auroc[name] = value
    if report.per_label_auroc:
        report.mean_auroc = float(np.mean(list(report.per_label_auroc.values())))

    predictions = (scores >= threshold).astype(int)
    report.macro_f1 = f1_macro(scores, labels, threshold)
    if labels.shape[1] == 1:
        report.micro_f1 = float(_per_label_f1(labels, predictions)[0])
    else:
        report.micro_f1 = float(f1_score(labels, predictions, average='micro', zero_division=0))
    report.samples_f1 = f1_samples(labels, predictions)
    if report.skipped_labels:
        logger.debug(f"AUROC skipped for {len(report.skipped_labels)} labels without both classes")
    return report
