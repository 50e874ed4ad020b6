"""
Single-file checkpoints: magic, JSON header, raw little-endian float64 arrays
"""
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .autodiff import AdamState
from .dataset_service import LabelVocabulary
from .exceptions import CheckpointError, ConfigError, ShapeError
from .feature_service import FeatureConfig
from .gat_model import ModelConfig, ModelParams

logger = logging.getLogger(__name__)

MAGIC = b'ODORGAT\x00'
FORMAT_VERSION = 1
ARRAY_DTYPE = '<f8'


@dataclass
class Checkpoint:
    model_config: ModelConfig
    feature_config: FeatureConfig
    vocabulary: LabelVocabulary
    params: ModelParams
    epoch: int = 0
    optimizer: Optional[AdamState] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _arrays(checkpoint: Checkpoint) -> Dict[str, np.ndarray]:
    arrays = dict(checkpoint.params.arrays())
    if checkpoint.optimizer is not None:
        for name, values in checkpoint.optimizer.m.items():
            arrays[f"adam_m:{name}"] = values
        for name, values in checkpoint.optimizer.v.items():
            arrays[f"adam_v:{name}"] = values
    return arrays


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write ``checkpoint`` to ``path`` atomically; identical inputs give identical bytes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    manifest: List[Dict[str, Any]] = []
    blobs: List[bytes] = []
    offset = 0
    for name, values in _arrays(checkpoint).items():
        blob = np.ascontiguousarray(values, dtype=ARRAY_DTYPE).tobytes()
        manifest.append({'name': name, 'shape': list(values.shape), 'offset': offset, 'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)

    optimizer = None
    if checkpoint.optimizer is not None:
        state = checkpoint.optimizer
        optimizer = {'lr': state.lr, 'beta1': state.beta1, 'beta2': state.beta2, 'eps': state.eps, 'step': state.step}

    header = {
        'format_version': checkpoint.version,
        'epoch': checkpoint.epoch,
        'model_config': checkpoint.model_config.to_dict(),
        'feature_config': checkpoint.feature_config.to_dict(),
        'vocabulary': list(checkpoint.vocabulary.names),
        'optimizer': optimizer,
        'metrics': checkpoint.metrics,
        'arrays': manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')

    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'wb') as fh:
        fh.write(MAGIC)
        fh.write(struct.pack('<Q', len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path} (epoch {checkpoint.epoch}, {len(manifest)} arrays)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    prefix = len(MAGIC) + 8
    if len(data) < prefix:
        raise CheckpointError(f"{path} is truncated")
    (header_length,) = struct.unpack('<Q', data[len(MAGIC):prefix])
    try:
        header = json.loads(data[prefix:prefix + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header: {e}") from e
    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {header.get('format_version')}")

    body = memoryview(data)[prefix + header_length:]
    arrays: Dict[str, np.ndarray] = {}
    for entry in header['arrays']:
        start, size = entry['offset'], entry['nbytes']
        if start + size > len(body):
            raise CheckpointError(f"{path} is truncated (array {entry['name']})")
        values = np.frombuffer(body[start:start + size], dtype=ARRAY_DTYPE).astype(np.float64)
        arrays[entry['name']] = values.reshape(entry['shape'])

    try:
        model_config = ModelConfig.from_dict(header['model_config'])
        feature_config = FeatureConfig.from_dict(header['feature_config'])
        params = ModelParams.initialize(model_config, np.random.default_rng(0))
        params.load_arrays({k: v for k, v in arrays.items() if k.startswith(('param:', 'buffer:'))})
    except (ConfigError, ShapeError) as e:
        raise CheckpointError(f"{path} does not match the model layout: {e}") from e

    optimizer = None
    if header.get('optimizer'):
        optimizer = AdamState(**header['optimizer'])
        optimizer.m = {k.split(':', 1)[1]: v for k, v in arrays.items() if k.startswith('adam_m:')}
        optimizer.v = {k.split(':', 1)[1]: v for k, v in arrays.items() if k.startswith('adam_v:')}

    return Checkpoint(
        model_config=model_config,
        feature_config=feature_config,
        vocabulary=LabelVocabulary(header['vocabulary']),
        params=params,
        epoch=header.get('epoch', 0),
        optimizer=optimizer,
        metrics=header.get('metrics') or {},
        version=header['format_version'],
    )
